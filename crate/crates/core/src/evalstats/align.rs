//! Before/after feature alignment report.
//!
//! Before harmonization, features whose distributions differ between two
//! source groups (`p < alpha`) form the set `R`. After harmonization, each
//! feature in `R` is compared between harmonized images and real images of
//! the target group; those no longer significantly different form `Z ⊆ R`.
//! The headline number is `|Z| / |R| · 100`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::evalstats::table::FeatureTable;
use crate::evalstats::welch::{welch_test, WelchResult};
use crate::io::fmt_sci;

const MODULE: &str = "evalstats";

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureComparison {
    pub feature: String,
    pub before: WelchResult,
    /// Present only for features in `R`.
    pub after: Option<WelchResult>,
    pub significant_before: bool,
    pub aligned_after: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentReport {
    pub alpha: f64,
    pub comparisons: Vec<FeatureComparison>,
    /// `R`, in column order of the first before-table.
    pub significant: Vec<String>,
    /// `Z ⊆ R`.
    pub aligned: Vec<String>,
    /// `None` when `R` is empty.
    pub percentage: Option<f64>,
}

impl AlignmentReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "feature,t_before,dof_before,p_before,in_r,t_after,dof_after,p_after,in_z\n",
        );
        for c in &self.comparisons {
            let after = match &c.after {
                Some(w) => format!(
                    "{},{},{}",
                    fmt_sci(w.t_stat),
                    fmt_sci(w.dof),
                    fmt_sci(w.p_value)
                ),
                None => ",,".to_string(),
            };
            writeln!(
                s,
                "{},{},{},{},{},{},{}",
                c.feature,
                fmt_sci(c.before.t_stat),
                fmt_sci(c.before.dof),
                fmt_sci(c.before.p_value),
                c.significant_before as u8,
                after,
                c.aligned_after as u8
            )
            .unwrap();
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        writeln!(s, "alpha: {}", self.alpha).unwrap();
        writeln!(s, "features compared: {}", self.comparisons.len()).unwrap();
        writeln!(
            s,
            "significant before (R): {} [{}]",
            self.significant.len(),
            self.significant.join(", ")
        )
        .unwrap();
        writeln!(
            s,
            "aligned after (Z): {} [{}]",
            self.aligned.len(),
            self.aligned.join(", ")
        )
        .unwrap();
        match self.percentage {
            Some(p) => writeln!(s, "aligned percentage: {p:.2}%").unwrap(),
            None => writeln!(s, "aligned percentage: undefined (R is empty)").unwrap(),
        }
        s
    }
}

fn column(table: &FeatureTable, name: &str, which: &str) -> Result<Vec<f64>> {
    table
        .column(name)
        .ok_or_else(|| Error::argument(MODULE, format!("{which} table has no feature `{name}`")))
}

/// Runs the workflow.
///
/// * `before_a`, `before_b`: features of the two source groups before
///   harmonization.
/// * `after`, `target`: harmonized images and real target-group images.
pub fn alignment_workflow(
    before_a: &FeatureTable,
    before_b: &FeatureTable,
    after: &FeatureTable,
    target: &FeatureTable,
    alpha: f64,
) -> Result<AlignmentReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::argument(
            MODULE,
            format!("alpha must be in (0, 1), got {alpha}"),
        ));
    }
    let mut comparisons = Vec::with_capacity(before_a.features().len());
    for name in before_a.features() {
        let before = welch_test(
            &column(before_a, name, "before-a")?,
            &column(before_b, name, "before-b")?,
        )?;
        let significant_before = before.p_value < alpha;
        let after_result = if significant_before {
            Some(welch_test(
                &column(after, name, "after")?,
                &column(target, name, "target")?,
            )?)
        } else {
            None
        };
        let aligned_after = after_result.is_some_and(|w| w.p_value >= alpha);
        comparisons.push(FeatureComparison {
            feature: name.clone(),
            before,
            after: after_result,
            significant_before,
            aligned_after,
        });
    }
    if let Some(extra) = before_b
        .features()
        .iter()
        .find(|f| !before_a.features().contains(f))
    {
        return Err(Error::argument(
            MODULE,
            format!("feature `{extra}` missing from before-a table"),
        ));
    }
    let significant: Vec<String> = comparisons
        .iter()
        .filter(|c| c.significant_before)
        .map(|c| c.feature.clone())
        .collect();
    let aligned: Vec<String> = comparisons
        .iter()
        .filter(|c| c.aligned_after)
        .map(|c| c.feature.clone())
        .collect();
    let percentage = if significant.is_empty() {
        None
    } else {
        Some(aligned.len() as f64 / significant.len() as f64 * 100.0)
    };
    Ok(AlignmentReport {
        alpha,
        comparisons,
        significant,
        aligned,
        percentage,
    })
}
