//! Run artifacts: results CSV, run manifest and per-estimator plot data.
//!
//! Layout of an output directory:
//!
//! * `results.csv`: columns `estimator, snr_db, component, statistic, value,
//!   trials, failures`; `component` is `p1`, `p2` or `p3` (the cascades
//!   `H1 G1`, `H2 G2`, `H2 T G1`) and `statistic` is `mean` (ratio of summed
//!   squared errors to summed truth energies) or `median` (of per-trial
//!   NMSEs). Failed trials are excluded from both and counted in `failures`.
//! * `run.toml`: the full config plus a `[run]` table with the tool version.
//!   Passing it back to `dris-sim run` reproduces `results.csv` exactly.
//! * `plot/<estimator>.csv`: one row per SNR with `snr_db` and
//!   `<component>_median`, `<component>_mean` columns.

use std::fs;
use std::path::{Path, PathBuf};

use dris_core::evaluation::{run_monte_carlo_multi, write_csv, MonteCarloConfig, NmseReport, COMPONENTS};
use dris_core::io::write_atomic;

use crate::config::ExperimentConfig;

pub const RESULTS_FILE: &str = "results.csv";
pub const MANIFEST_FILE: &str = "run.toml";
pub const PLOT_DIR: &str = "plot";

pub struct RunSummary {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub reports: Vec<NmseReport>,
}

pub fn manifest_text(cfg: &ExperimentConfig) -> String {
    format!(
        "{}\n[run]\ntool = \"{}\"\nversion = \"{}\"\n",
        cfg.to_toml(),
        env!("CARGO_PKG_NAME"),
        env!("CARGO_PKG_VERSION")
    )
}

pub fn plot_text(report: &NmseReport) -> String {
    let mut s = String::from("snr_db");
    for c in COMPONENTS {
        s += &format!(",{c}_median,{c}_mean");
    }
    s.push('\n');
    for p in &report.points {
        let (median, mean) = (p.median(), p.mean());
        s += &p.snr_db.to_string();
        for c in 0..3 {
            s += &format!(",{},{}", median[c], mean[c]);
        }
        s.push('\n');
    }
    s
}

/// Runs the sweep and writes every artifact into `dir`.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path) -> dris_core::Result<RunSummary> {
    let mc = MonteCarloConfig {
        trials: cfg.trials,
        als: cfg.als,
        protocol: cfg.protocol,
    };
    let reports = run_monte_carlo_multi(&cfg.dims, &cfg.snr_grid_db, &cfg.estimators, &mc, cfg.seed)?;

    fs::create_dir_all(dir.join(PLOT_DIR))?;
    let mut files = Vec::new();
    let mut put = |path: PathBuf, bytes: &[u8]| -> dris_core::Result<()> {
        write_atomic(&path, bytes)?;
        files.push(path);
        Ok(())
    };
    let mut csv = Vec::new();
    write_csv(&reports, &mut csv)?;
    put(dir.join(RESULTS_FILE), &csv)?;
    put(dir.join(MANIFEST_FILE), manifest_text(cfg).as_bytes())?;
    for r in &reports {
        let path = dir.join(PLOT_DIR).join(format!("{}.csv", r.estimator.name()));
        put(path, plot_text(r).as_bytes())?;
    }
    Ok(RunSummary {
        dir: dir.to_path_buf(),
        files,
        reports,
    })
}
