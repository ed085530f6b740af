//! Experiment configuration files.
//!
//! Configs are TOML with three sections; only `[dims]` is required.
//!
//! ```toml
//! [dims]
//! m_bs = 4
//! m_ue = 2
//! k = 2
//! m_s1 = 30
//! m_s2 = 20
//! i = 30
//! j = 20
//!
//! [experiment]
//! snr_db = "0:5:30"          # or a list, e.g. [0, 10, 20]
//! trials = 200
//! estimators = ["ckraft", "cals_random", "cals_ckraft_init", "baseline_uncoupled"]
//! seed = 0
//! output = "results/fig6"    # optional
//! average_ris_frames = false
//!
//! [als]
//! t_max = 10
//! rel_change_tol = 1e-12
//! extrapolate = true
//! ```
//!
//! Unknown keys are rejected. A `[run]` table, written into run manifests,
//! is accepted and ignored.

use std::fs;
use std::path::{Path, PathBuf};

use dris_core::estimators::AlsConfig;
use dris_core::evaluation::EstimatorKind;
use dris_core::protocol::{ProtocolOptions, SystemDims};
use serde::{Deserialize, Serialize};

pub const DEFAULT_TRIALS: usize = 200;
pub const DEFAULT_SNR_GRID: &str = "0:5:30";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{origin}: line {line}, column {column}: {message}")]
    Parse {
        origin: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{flag}: {message}")]
    Flag { flag: String, message: String },
    #[error("invalid config: {0}")]
    Validation(String),
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dims: SystemDims,
    pub snr_grid_db: Vec<f64>,
    pub trials: usize,
    pub estimators: Vec<EstimatorKind>,
    pub als: AlsConfig,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub protocol: ProtocolOptions,
}

impl ExperimentConfig {
    /// Defaults for everything except the dims.
    pub fn with_dims(dims: SystemDims) -> Self {
        Self {
            dims,
            snr_grid_db: parse_snr_grid(DEFAULT_SNR_GRID).expect("default grid parses"),
            trials: DEFAULT_TRIALS,
            estimators: EstimatorKind::ALL.to_vec(),
            als: AlsConfig::default(),
            seed: 0,
            output: None,
            protocol: ProtocolOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Validation(m));
        if let Err(e) = self.dims.validate() {
            return invalid(e.to_string().trim_start_matches("invalid dimensions: ").to_string());
        }
        if self.snr_grid_db.is_empty() {
            return invalid("snr_db must list at least one point".into());
        }
        if let Some(s) = self.snr_grid_db.iter().find(|s| !s.is_finite()) {
            return invalid(format!("snr_db value {s} is not finite"));
        }
        if self.trials == 0 {
            return invalid("trials must be ≥ 1".into());
        }
        if self.estimators.is_empty() {
            return invalid("estimators must name at least one estimator".into());
        }
        for (n, e) in self.estimators.iter().enumerate() {
            if self.estimators[..n].contains(e) {
                return invalid(format!("estimator {e} is listed twice"));
            }
        }
        if self.als.t_max == 0 {
            return invalid("t_max must be ≥ 1".into());
        }
        if self.als.rel_change_tol.is_nan() || self.als.rel_change_tol < 0.0 {
            return invalid("rel_change_tol must be ≥ 0".into());
        }
        Ok(())
    }

    /// Renders the config as TOML that parses back to the same value.
    pub fn to_toml(&self) -> String {
        let d = &self.dims;
        let raw = RawConfig {
            dims: RawDims {
                m_bs: d.m_bs,
                m_ue: d.m_ue,
                k: d.k_pilots,
                m_s1: d.m_s1,
                m_s2: d.m_s2,
                i: d.i_frames,
                j: d.j_frames,
            },
            experiment: Some(RawExperiment {
                snr_db: Some(SnrGrid::List(self.snr_grid_db.clone())),
                trials: Some(self.trials),
                estimators: Some(self.estimators.iter().map(|e| e.name().to_string()).collect()),
                seed: Some(self.seed),
                output: self.output.as_ref().map(|p| p.display().to_string()),
                average_ris_frames: Some(self.protocol.average_ris_frames),
            }),
            als: Some(RawAls {
                t_max: Some(self.als.t_max),
                rel_change_tol: Some(self.als.rel_change_tol),
                extrapolate: Some(self.als.extrapolate),
            }),
            _run: None,
        };
        toml::to_string(&raw).expect("config serializes")
    }
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    dims: RawDims,
    #[serde(skip_serializing_if = "Option::is_none")]
    experiment: Option<RawExperiment>,
    #[serde(skip_serializing_if = "Option::is_none")]
    als: Option<RawAls>,
    #[serde(rename = "run", skip_serializing)]
    _run: Option<toml::Table>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawDims {
    m_bs: usize,
    m_ue: usize,
    k: usize,
    m_s1: usize,
    m_s2: usize,
    i: usize,
    j: usize,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(untagged)]
enum SnrGrid {
    List(Vec<f64>),
    Range(String),
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    snr_db: Option<SnrGrid>,
    trials: Option<usize>,
    estimators: Option<Vec<String>>,
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    output: Option<String>,
    average_ris_frames: Option<bool>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawAls {
    t_max: Option<usize>,
    rel_change_tol: Option<f64>,
    extrapolate: Option<bool>,
}

/// Parses `start:step:stop` (inclusive) or a comma-separated list.
pub fn parse_snr_grid(s: &str) -> Result<Vec<f64>, String> {
    let num = |p: &str| {
        p.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("{p:?} is not a finite number"))
    };
    let parts: Vec<&str> = s.split(':').collect();
    match parts[..] {
        [start, step, stop] => {
            let (start, step, stop) = (num(start)?, num(step)?, num(stop)?);
            if step <= 0.0 || stop < start {
                return Err(format!("{s:?} needs a positive step and stop ≥ start"));
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
            if n > 10_000 {
                return Err(format!("{s:?} has more than 10000 points"));
            }
            Ok((0..n).map(|k| start + step * k as f64).collect())
        }
        [_] => s.split(',').map(num).collect(),
        _ => Err(format!("{s:?} is neither start:step:stop nor a list")),
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |p| p + 1) + 1;
    (line, column)
}

/// Parses and validates a config held in memory. `origin` names the source
/// in error messages.
pub fn parse_config_str(text: &str, origin: &str) -> Result<ExperimentConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        ConfigError::Parse {
            origin: origin.to_string(),
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    let d = raw.dims;
    let mut cfg = ExperimentConfig::with_dims(SystemDims {
        m_bs: d.m_bs,
        m_ue: d.m_ue,
        m_s1: d.m_s1,
        m_s2: d.m_s2,
        i_frames: d.i,
        j_frames: d.j,
        k_pilots: d.k,
    });
    let exp = raw.experiment.unwrap_or_default();
    match exp.snr_db {
        Some(SnrGrid::List(v)) => cfg.snr_grid_db = v,
        Some(SnrGrid::Range(s)) => {
            cfg.snr_grid_db = parse_snr_grid(&s).map_err(|m| ConfigError::Validation(format!("snr_db: {m}")))?
        }
        None => {}
    }
    if let Some(t) = exp.trials {
        cfg.trials = t;
    }
    if let Some(names) = exp.estimators {
        cfg.estimators = parse_estimators(&names).map_err(ConfigError::Validation)?;
    }
    if let Some(seed) = exp.seed {
        cfg.seed = seed;
    }
    cfg.output = exp.output.map(PathBuf::from);
    if let Some(avg) = exp.average_ris_frames {
        cfg.protocol.average_ris_frames = avg;
    }
    let als = raw.als.unwrap_or_default();
    if let Some(t) = als.t_max {
        cfg.als.t_max = t;
    }
    if let Some(tol) = als.rel_change_tol {
        cfg.als.rel_change_tol = tol;
    }
    if let Some(x) = als.extrapolate {
        cfg.als.extrapolate = x;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config_file(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text, &path.display().to_string())
}

pub fn parse_estimators<S: AsRef<str>>(names: &[S]) -> Result<Vec<EstimatorKind>, String> {
    names
        .iter()
        .map(|n| n.as_ref().trim().parse().map_err(|e: dris_core::Error| e.to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_grid_is_inclusive() {
        assert_eq!(parse_snr_grid("0:5:30").unwrap(), [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0]);
        assert_eq!(parse_snr_grid("-10:10:5").unwrap(), [-10.0, 0.0]);
        assert_eq!(parse_snr_grid("20, 30").unwrap(), [20.0, 30.0]);
        assert_eq!(parse_snr_grid("7").unwrap(), [7.0]);
        for bad in ["0:0:10", "10:1:0", "a:1:2", "1:2", "", "1,,2", "0:1e-9:1e9", "inf"] {
            assert!(parse_snr_grid(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn line_col_counts_from_one() {
        assert_eq!(line_col("ab\ncd", 0), (1, 1));
        assert_eq!(line_col("ab\ncd", 4), (2, 2));
    }
}
