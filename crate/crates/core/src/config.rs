//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; omitted keys take the defaults below.
//!
//! | key             | default                   | meaning                                      |
//! |-----------------|---------------------------|----------------------------------------------|
//! | `dataset`       | `ml-100k/u.data`          | ratings file; relative paths that do not exist are retried under `$HDPMF_DATA_DIR` |
//! | `format`        | `ml100k`                  | `ml100k`, `ml1m` or `csv`                    |
//! | `scale_min`     | `1`                       | rating scale (csv only; MovieLens is 1..5)   |
//! | `scale_max`     | `5`                       |                                              |
//! | `method`        | `hdpmf`                   | comma list of `mf dpmf pdpmf hdpmf hdpmf_r`  |
//! | `k`             | `10`                      | latent dimension                             |
//! | `epochs`        | `100`                     |                                              |
//! | `learning_rate` | per method                | initial learning rate                        |
//! | `lambda`        | per method                | regularization                               |
//! | `epsilon`       | `1`                       | maximum privacy budget                       |
//! | `f_uc` `f_um`   | `0.54` `0.37`             | conservative / moderate user ratios          |
//! | `f_ic` `f_im`   | `0.33` `0.33`             | conservative / moderate item ratios          |
//! | `eps_uc` `eps_um` | `0.1` `0.5`             | user weight range floors                     |
//! | `eps_ic` `eps_im` | `0.1` `0.5`             | item weight range floors                     |
//! | `split`         | `leave_n_out`             | `leave_n_out` or `leave_one_out`             |
//! | `n_test`        | `10`                      | ratings per user held out by `leave_n_out`   |
//! | `fraction`      | `1`                       | per-user share of training ratings kept      |
//! | `seeds`         | `1,2,3,4,5`               | one run per seed                             |
//! | `output`        | `results.csv`             | results file                                 |
//! | `rescale`       | `true`                    | divide predictions by `W_ij` (HDPMF only)    |
//! | `clamp`         | `true`                    | clamp predictions onto the rating scale      |
//! | `trace`         | unset                     | per-update protocol trace file               |
//!
//! `method = hdpmf_r` alone forces `rescale = false`.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::baselines::Method;
use crate::data::DatasetFormat;
use crate::model::RatingScale;
use crate::privacy::{GroupSpec, PrivacySpec};

pub const DATA_DIR_ENV: &str = "HDPMF_DATA_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: `{key}` set twice")]
    DuplicateKey { line: usize, key: String },
    #[error("`{key}`: cannot parse {value:?} as {expected}")]
    Type {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("`{key}`: {message}")]
    Constraint { key: String, message: String },
    #[error("dataset file not found: {}", path.display())]
    MissingDataset { path: PathBuf },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitChoice {
    LeaveNOut,
    LeaveOneOut,
}

impl SplitChoice {
    pub fn name(self) -> &'static str {
        match self {
            SplitChoice::LeaveNOut => "leave_n_out",
            SplitChoice::LeaveOneOut => "leave_one_out",
        }
    }
}

/// Initial learning rate and regularization used when a config leaves them
/// unset. Best test MSE on the ML-100K leave-10-out split over
/// `λ ∈ {0.01, 0.001}` and the method's learning-rate grid (see
/// [`crate::eval::learning_rate_grid`]); `k` is currently ignored.
pub fn tuned_defaults(method: Method, k: usize) -> (f64, f64) {
    let _ = k;
    match method {
        Method::Mf => (0.001, 0.01),
        Method::Dpmf => (0.0005, 0.01),
        Method::Pdpmf => (0.001, 0.01),
        Method::Hdpmf | Method::HdpmfR => (0.001, 0.01),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub format: DatasetFormat,
    pub scale: RatingScale,
    pub methods: Vec<Method>,
    pub k: usize,
    pub epochs: usize,
    pub learning_rate: Option<f64>,
    pub lambda: Option<f64>,
    pub privacy: PrivacySpec,
    pub split: SplitChoice,
    pub n_test: usize,
    pub fraction: f64,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    pub rescale: bool,
    pub clamp: bool,
    pub trace: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("ml-100k/u.data"),
            format: DatasetFormat::MovieLens100k,
            scale: RatingScale { min: 1.0, max: 5.0 },
            methods: vec![Method::Hdpmf],
            k: 10,
            epochs: 100,
            learning_rate: None,
            lambda: None,
            privacy: PrivacySpec::default(),
            split: SplitChoice::LeaveNOut,
            n_test: 10,
            fraction: 1.0,
            seeds: vec![1, 2, 3, 4, 5],
            output: PathBuf::from("results.csv"),
            rescale: true,
            clamp: true,
            trace: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, expected: &'static str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Type {
        key: key.into(),
        value: value.into(),
        expected,
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(ConfigError::Type {
            key: key.into(),
            value: value.into(),
            expected: "boolean",
        }),
    }
}

fn constraint(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Constraint {
        key: key.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    /// Applies one `key = value` pair.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let f = |v: &str| parse_num::<f64>(key, v, "number");
        match key {
            "dataset" => self.dataset = PathBuf::from(value),
            "format" => {
                self.format = DatasetFormat::parse(value).ok_or_else(|| ConfigError::Type {
                    key: key.into(),
                    value: value.into(),
                    expected: "ml100k, ml1m or csv",
                })?
            }
            "scale_min" => self.scale.min = f(value)?,
            "scale_max" => self.scale.max = f(value)?,
            "method" => {
                self.methods = value
                    .split(',')
                    .map(|m| {
                        m.trim().parse::<Method>().map_err(|_| ConfigError::Type {
                            key: key.into(),
                            value: m.trim().into(),
                            expected: "mf, dpmf, pdpmf, hdpmf or hdpmf_r",
                        })
                    })
                    .collect::<Result<_, _>>()?
            }
            "k" => self.k = parse_num(key, value, "positive integer")?,
            "epochs" => self.epochs = parse_num(key, value, "positive integer")?,
            "learning_rate" => self.learning_rate = Some(f(value)?),
            "lambda" => self.lambda = Some(f(value)?),
            "epsilon" => self.privacy.epsilon = f(value)?,
            "f_uc" => self.privacy.users.conservative_ratio = f(value)?,
            "f_um" => self.privacy.users.moderate_ratio = f(value)?,
            "f_ic" => self.privacy.items.conservative_ratio = f(value)?,
            "f_im" => self.privacy.items.moderate_ratio = f(value)?,
            "eps_uc" => self.privacy.users.conservative_floor = f(value)?,
            "eps_um" => self.privacy.users.moderate_floor = f(value)?,
            "eps_ic" => self.privacy.items.conservative_floor = f(value)?,
            "eps_im" => self.privacy.items.moderate_floor = f(value)?,
            "split" => {
                self.split = match value {
                    "leave_n_out" => SplitChoice::LeaveNOut,
                    "leave_one_out" => SplitChoice::LeaveOneOut,
                    _ => {
                        return Err(ConfigError::Type {
                            key: key.into(),
                            value: value.into(),
                            expected: "leave_n_out or leave_one_out",
                        })
                    }
                }
            }
            "n_test" => self.n_test = parse_num(key, value, "positive integer")?,
            "fraction" => self.fraction = f(value)?,
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .map(|s| parse_num(key, s.trim(), "comma-separated integers"))
                    .collect::<Result<_, _>>()?
            }
            "output" => self.output = PathBuf::from(value),
            "rescale" => self.rescale = parse_bool(key, value)?,
            "clamp" => self.clamp = parse_bool(key, value)?,
            "trace" => self.trace = Some(PathBuf::from(value)),
            _ => {
                return Err(ConfigError::UnknownKey {
                    line: 0,
                    key: key.into(),
                })
            }
        }
        Ok(())
    }

    /// Range checks; does not touch the filesystem.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.scale.min.is_finite() && self.scale.max.is_finite() && self.scale.max > self.scale.min) {
            return Err(constraint("scale_max", "rating scale needs scale_max > scale_min"));
        }
        if self.methods.is_empty() {
            return Err(constraint("method", "at least one method required"));
        }
        if self.k == 0 {
            return Err(constraint("k", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(constraint("epochs", "must be at least 1"));
        }
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(constraint("learning_rate", "must be positive"));
            }
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(constraint("lambda", "must be non-negative"));
            }
        }
        if !(self.privacy.epsilon > 0.0 && self.privacy.epsilon.is_finite()) {
            return Err(constraint("epsilon", "must be positive"));
        }
        for (side, g, keys) in [
            ("user", &self.privacy.users, ["f_uc", "f_um", "eps_uc", "eps_um"]),
            ("item", &self.privacy.items, ["f_ic", "f_im", "eps_ic", "eps_im"]),
        ] {
            check_group(side, g, keys)?;
        }
        if self.n_test == 0 {
            return Err(constraint("n_test", "must be at least 1"));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(constraint("fraction", "must lie in (0, 1]"));
        }
        if self.seeds.is_empty() {
            return Err(constraint("seeds", "at least one seed required"));
        }
        Ok(())
    }

    /// Resolves the dataset path, retrying relative paths under
    /// `$HDPMF_DATA_DIR`.
    pub fn resolve_dataset(&self) -> Result<PathBuf, ConfigError> {
        if self.dataset.exists() {
            return Ok(self.dataset.clone());
        }
        if self.dataset.is_relative() {
            if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
                let candidate = Path::new(&dir).join(&self.dataset);
                if candidate.exists() {
                    return Ok(candidate);
                }
            }
        }
        Err(ConfigError::MissingDataset {
            path: self.dataset.clone(),
        })
    }

    /// Learning rate and λ for `method`: explicit config values, else the
    /// tuned defaults.
    pub fn hyperparameters(&self, method: Method) -> (f64, f64) {
        let (lr, lambda) = tuned_defaults(method, self.k);
        (self.learning_rate.unwrap_or(lr), self.lambda.unwrap_or(lambda))
    }

    /// Dataset label used in results files.
    pub fn dataset_label(&self) -> String {
        match self.format {
            DatasetFormat::Csv => self
                .dataset
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "csv".into()),
            other => other.name().to_string(),
        }
    }

    /// The effective configuration as `(key, value)` pairs, in documented
    /// order. Parsing these back yields an equal config.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let p = &self.privacy;
        let mut out = vec![
            ("dataset", self.dataset.display().to_string()),
            ("format", self.format.name().to_string()),
            ("scale_min", self.scale.min.to_string()),
            ("scale_max", self.scale.max.to_string()),
            (
                "method",
                self.methods.iter().map(|m| m.name()).collect::<Vec<_>>().join(","),
            ),
            ("k", self.k.to_string()),
            ("epochs", self.epochs.to_string()),
        ];
        if let Some(lr) = self.learning_rate {
            out.push(("learning_rate", lr.to_string()));
        }
        if let Some(l) = self.lambda {
            out.push(("lambda", l.to_string()));
        }
        out.extend([
            ("epsilon", p.epsilon.to_string()),
            ("f_uc", p.users.conservative_ratio.to_string()),
            ("f_um", p.users.moderate_ratio.to_string()),
            ("f_ic", p.items.conservative_ratio.to_string()),
            ("f_im", p.items.moderate_ratio.to_string()),
            ("eps_uc", p.users.conservative_floor.to_string()),
            ("eps_um", p.users.moderate_floor.to_string()),
            ("eps_ic", p.items.conservative_floor.to_string()),
            ("eps_im", p.items.moderate_floor.to_string()),
            ("split", self.split.name().to_string()),
            ("n_test", self.n_test.to_string()),
            ("fraction", self.fraction.to_string()),
            (
                "seeds",
                self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
            ),
            ("output", self.output.display().to_string()),
            ("rescale", self.rescale.to_string()),
            ("clamp", self.clamp.to_string()),
        ]);
        if let Some(t) = &self.trace {
            out.push(("trace", t.display().to_string()));
        }
        out
    }
}

fn check_group(side: &str, g: &GroupSpec, keys: [&str; 4]) -> Result<(), ConfigError> {
    let ratio = |key: &str, r: f64| {
        if (0.0..=1.0).contains(&r) {
            Ok(())
        } else {
            Err(constraint(key, "ratio must lie in [0, 1]"))
        }
    };
    ratio(keys[0], g.conservative_ratio)?;
    ratio(keys[1], g.moderate_ratio)?;
    if g.conservative_ratio + g.moderate_ratio > 1.0 + 1e-12 {
        return Err(constraint(keys[1], format!("{side} ratios sum above 1")));
    }
    if !(g.conservative_floor > 0.0 && g.conservative_floor <= g.moderate_floor) {
        return Err(constraint(keys[2], format!("{side} weights need 0 < {} <= {}", keys[2], keys[3])));
    }
    if g.moderate_floor > 1.0 {
        return Err(constraint(keys[3], "weights must not exceed 1"));
    }
    Ok(())
}

/// Parses config text and applies defaults; see the module docs for keys.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::default();
    let mut seen = std::collections::HashSet::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or(ConfigError::Syntax { line: n + 1 })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(ConfigError::Syntax { line: n + 1 });
        }
        if !seen.insert(key.to_string()) {
            return Err(ConfigError::DuplicateKey {
                line: n + 1,
                key: key.into(),
            });
        }
        cfg.set(key, value).map_err(|e| match e {
            ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey { line: n + 1, key },
            other => other,
        })?;
    }
    if cfg.methods == [Method::HdpmfR] {
        cfg.rescale = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text)
}
