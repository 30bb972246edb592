//! Flat `key = value` run configuration.
//!
//! Grammar: one `key = value` per line, `#` starts a comment, blank lines are
//! ignored, keys are unique. Lists are comma-separated. Every default lives
//! here so that a run is fully described by its config file plus overrides.
//!
//! | key | default |
//! |-----|---------|
//! | `bins.n` | 32 |
//! | `bins.sigma` | half the bin spacing |
//! | `bins.centers` | uniform over `[-1, 1]` |
//! | `grid.distances` | `1, 3, 5, 7` |
//! | `grid.angles` | `0, 45, 90, 135` |
//! | `attention.c` | 4 |
//! | `attention.seed` | 0 |
//! | `attention.gamma` | 0 |
//! | `attention.params` | unset (path to a parameter file; overrides c/seed/gamma) |
//! | `optimize.iterations` | 500 |
//! | `optimize.step_size` | 0.05 |
//! | `optimize.momentum` | 0.9 |
//! | `optimize.learn_attention` | false |
//! | `optimize.backtracking` | true |
//! | `optimize.seed` | 0 |
//! | `optimize.log_every` | 0 |
//! | `preprocess.slope` | 1 |
//! | `preprocess.intercept` | 0 |
//! | `preprocess.target_spacing` | 1 |
//! | `preprocess.canvas_size` | 512 |
//! | `preprocess.background` | -1024 |
//! | `preprocess.window_min` / `preprocess.window_max` | -1024 / 3071 |
//! | `features.distance` | 1 |
//! | `align.alpha` | 0.01 |
//! | `threads` | unset (all cores) |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::attnloss::AttentionParams;
use crate::error::{Error, Result};
use crate::imaging::PreprocessConfig;
use crate::mste::OffsetGrid;
use crate::softglcm::{Angle, BinningConfig};
use crate::texopt::OptimizeConfig;

const MODULE: &str = "config";

pub const KEYS: &[&str] = &[
    "bins.n",
    "bins.sigma",
    "bins.centers",
    "grid.distances",
    "grid.angles",
    "attention.c",
    "attention.seed",
    "attention.gamma",
    "attention.params",
    "optimize.iterations",
    "optimize.step_size",
    "optimize.momentum",
    "optimize.learn_attention",
    "optimize.backtracking",
    "optimize.seed",
    "optimize.log_every",
    "preprocess.slope",
    "preprocess.intercept",
    "preprocess.target_spacing",
    "preprocess.canvas_size",
    "preprocess.background",
    "preprocess.window_min",
    "preprocess.window_max",
    "features.distance",
    "align.alpha",
    "threads",
];

/// Parses the key-value grammar without interpreting keys.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::config(
                MODULE,
                format!("line {}: expected `key = value`, got {raw:?}", lineno + 1),
            )
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::config(
                MODULE,
                format!("line {}: empty key", lineno + 1),
            ));
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::config(
                MODULE,
                format!("line {}: duplicate key `{k}`", lineno + 1),
            ));
        }
    }
    Ok(map)
}

/// Validated-on-access run configuration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    base_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let values = parse_kv(text)?;
        if let Some(k) = values.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::config(MODULE, format!("unknown key `{k}`")));
        }
        Ok(RunConfig {
            values,
            base_dir: None,
        })
    }

    /// Loads a file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(MODULE, format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = RunConfig::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    /// Overrides one key; used for command-line flags.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(Error::config(MODULE, format!("unknown key `{key}`")));
        }
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parsed<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| Error::config(MODULE, format!("`{key}`: cannot parse {s:?}"))),
        }
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        self.get(key)
            .map(|s| {
                s.split(',')
                    .map(|t| {
                        t.trim()
                            .parse()
                            .map_err(|_| Error::config(MODULE, format!("`{key}`: bad entry {t:?}")))
                    })
                    .collect()
            })
            .transpose()
    }

    fn bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some("false") | Some("0") | Some("no") => Ok(false),
            Some(s) => Err(Error::config(
                MODULE,
                format!("`{key}`: expected true/false, got {s:?}"),
            )),
        }
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(|s| {
            let p = PathBuf::from(s);
            match (&self.base_dir, p.is_relative()) {
                (Some(base), true) => base.join(p),
                _ => p,
            }
        })
    }

    pub fn binning(&self) -> Result<BinningConfig> {
        let bins = match self.list::<f64>("bins.centers")? {
            Some(centers) => {
                if let Some(n) = self.get("bins.n") {
                    if n.parse::<usize>().ok() != Some(centers.len()) {
                        return Err(Error::config(
                            MODULE,
                            "`bins.n` disagrees with the number of `bins.centers`",
                        ));
                    }
                }
                let gap = centers
                    .windows(2)
                    .map(|w| w[1] - w[0])
                    .fold(f64::INFINITY, f64::min);
                BinningConfig::new(centers, gap / 2.0)?
            }
            None => BinningConfig::uniform(self.parsed("bins.n", BinningConfig::DEFAULT_BINS)?)?,
        };
        match self.get("bins.sigma") {
            Some(_) => bins.with_sigma(self.parsed("bins.sigma", 0.0)?),
            None => Ok(bins),
        }
    }

    pub fn grid(&self) -> Result<OffsetGrid> {
        let def = OffsetGrid::default();
        let distances = self
            .list::<usize>("grid.distances")?
            .unwrap_or_else(|| def.distances().to_vec());
        let angles = match self.list::<u32>("grid.angles")? {
            Some(a) => a
                .into_iter()
                .map(Angle::from_degrees)
                .collect::<Result<Vec<_>>>()?,
            None => def.angles().to_vec(),
        };
        OffsetGrid::new(distances, angles)
    }

    pub fn attention_params(&self) -> Result<AttentionParams> {
        if let Some(path) = self.path("attention.params") {
            return AttentionParams::load(&path);
        }
        let mut p = AttentionParams::init(
            self.parsed("attention.c", AttentionParams::DEFAULT_CHANNELS)?,
            self.parsed("attention.seed", 0u64)?,
        )?;
        p.gamma = self.parsed("attention.gamma", 0.0)?;
        p.validate()?;
        Ok(p)
    }

    pub fn optimize(&self) -> Result<OptimizeConfig> {
        let d = OptimizeConfig::default();
        let cfg = OptimizeConfig {
            iterations: self.parsed("optimize.iterations", d.iterations)?,
            step_size: self.parsed("optimize.step_size", d.step_size)?,
            momentum: self.parsed("optimize.momentum", d.momentum)?,
            learn_attention: self.bool("optimize.learn_attention", d.learn_attention)?,
            backtracking: self.bool("optimize.backtracking", d.backtracking)?,
            seed: self.parsed("optimize.seed", d.seed)?,
            log_every: self.parsed("optimize.log_every", d.log_every)?,
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn preprocess(&self) -> Result<PreprocessConfig> {
        let d = PreprocessConfig::default();
        let cfg = PreprocessConfig {
            rescale_slope: self.parsed("preprocess.slope", d.rescale_slope)?,
            rescale_intercept: self.parsed("preprocess.intercept", d.rescale_intercept)?,
            target_spacing: self.parsed("preprocess.target_spacing", d.target_spacing)?,
            canvas_size: self.parsed("preprocess.canvas_size", d.canvas_size)?,
            background: self.parsed("preprocess.background", d.background)?,
            clamp_window: (
                self.parsed("preprocess.window_min", d.clamp_window.0)?,
                self.parsed("preprocess.window_max", d.clamp_window.1)?,
            ),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn feature_distance(&self) -> Result<usize> {
        let d = self.parsed("features.distance", 1usize)?;
        if d == 0 {
            return Err(Error::config(
                MODULE,
                "`features.distance` must be positive",
            ));
        }
        Ok(d)
    }

    pub fn alpha(&self) -> Result<f64> {
        let a = self.parsed("align.alpha", 0.01)?;
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::config(
                MODULE,
                format!("`align.alpha` must be in (0, 1), got {a}"),
            ));
        }
        Ok(a)
    }

    pub fn threads(&self) -> Result<Option<usize>> {
        match self.get("threads") {
            None => Ok(None),
            Some(_) => {
                let n = self.parsed("threads", 0usize)?;
                if n == 0 {
                    return Err(Error::config(MODULE, "`threads` must be positive"));
                }
                Ok(Some(n))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar() {
        let kv = parse_kv("# header\n a = 1 \n\nb=x, y # trailing\n").unwrap();
        assert_eq!(kv["a"], "1");
        assert_eq!(kv["b"], "x, y");
        assert!(parse_kv("a = 1\na = 2").is_err());
        assert!(parse_kv("novalue").is_err());
        assert!(parse_kv(" = 3").is_err());
    }

    #[test]
    fn defaults() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.binning().unwrap(), BinningConfig::default());
        assert_eq!(cfg.grid().unwrap(), OffsetGrid::default());
        assert_eq!(
            cfg.attention_params().unwrap(),
            AttentionParams::init(4, 0).unwrap()
        );
        assert_eq!(cfg.optimize().unwrap(), OptimizeConfig::default());
        assert_eq!(cfg.preprocess().unwrap(), PreprocessConfig::default());
        assert_eq!(cfg.alpha().unwrap(), 0.01);
        assert_eq!(cfg.threads().unwrap(), None);
    }

    #[test]
    fn custom_centers_and_overrides() {
        let mut cfg = RunConfig::parse(
            "bins.centers = -0.5, 0.5\nbins.sigma = 0.01\ngrid.distances = 1, 2\n",
        )
        .unwrap();
        let b = cfg.binning().unwrap();
        assert_eq!(b.centers(), &[-0.5, 0.5]);
        assert_eq!(b.sigma(), 0.01);
        assert_eq!(cfg.grid().unwrap().distances(), &[1, 2]);
        cfg.set("grid.distances", "3").unwrap();
        assert_eq!(cfg.grid().unwrap().distances(), &[3]);
        assert!(cfg.set("nope", "1").is_err());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::parse("unknown.key = 1").is_err());
        assert!(RunConfig::parse("bins.n = x").unwrap().binning().is_err());
        assert!(RunConfig::parse("grid.angles = 30")
            .unwrap()
            .grid()
            .is_err());
        assert!(RunConfig::parse("optimize.learn_attention = maybe")
            .unwrap()
            .optimize()
            .is_err());
        assert!(RunConfig::parse("align.alpha = 2")
            .unwrap()
            .alpha()
            .is_err());
        assert!(RunConfig::parse("bins.n = 3\nbins.centers = 0, 1")
            .unwrap()
            .binning()
            .is_err());
    }
}
