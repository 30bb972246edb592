//! Feature tables: one row per image, one column per named feature.
//!
//! CSV layout: header `id,<feature>,...`, then `image-id,value,...`.

use crate::error::{Error, Result};
use crate::evalstats::features::{FeatureVector, FEATURE_NAMES};

const MODULE: &str = "evalstats";

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    features: Vec<String>,
    ids: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl FeatureTable {
    pub fn new(features: Vec<String>, ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::argument(
                MODULE,
                format!("{} ids for {} rows", ids.len(), rows.len()),
            ));
        }
        if let Some((k, r)) = rows
            .iter()
            .enumerate()
            .find(|(_, r)| r.len() != features.len())
        {
            return Err(Error::argument(
                MODULE,
                format!(
                    "row {k} has {} values, expected {}",
                    r.len(),
                    features.len()
                ),
            ));
        }
        for (k, f) in features.iter().enumerate() {
            if features[..k].contains(f) {
                return Err(Error::argument(
                    MODULE,
                    format!("duplicate feature column `{f}`"),
                ));
            }
        }
        Ok(FeatureTable {
            features,
            ids,
            rows,
        })
    }

    pub fn from_vectors(ids: Vec<String>, vectors: &[FeatureVector]) -> Result<Self> {
        let features = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
        FeatureTable::new(
            features,
            ids,
            vectors.iter().map(|v| v.values().to_vec()).collect(),
        )
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.features.iter().position(|f| f == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| Error::format(MODULE, format!("feature table header: {e}")))?;
        if header.get(0) != Some("id") {
            return Err(Error::format(
                MODULE,
                "feature table must start with an `id` column",
            ));
        }
        let features: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let (mut ids, mut rows) = (Vec::new(), Vec::new());
        for (k, rec) in reader.records().enumerate() {
            let rec = rec
                .map_err(|e| Error::format(MODULE, format!("feature table row {}: {e}", k + 1)))?;
            ids.push(rec[0].to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|s| {
                    s.parse::<f64>().map_err(|_| {
                        Error::format(MODULE, format!("row {}: bad number {s:?}", k + 1))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        FeatureTable::new(features, ids, rows)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(MODULE, path.display().to_string(), e))?;
        FeatureTable::parse_csv(&text)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("id");
        for f in &self.features {
            s.push(',');
            s.push_str(f);
        }
        s.push('\n');
        for (id, row) in self.ids.iter().zip(&self.rows) {
            s.push_str(id);
            for v in row {
                s.push(',');
                s.push_str(&crate::io::fmt_sci(*v));
            }
            s.push('\n');
        }
        s
    }
}
