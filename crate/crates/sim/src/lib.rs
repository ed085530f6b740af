//! Experiment driver behind the `dris-sim` binary.

pub mod config;
pub mod output;
pub mod presets;

use std::path::{Path, PathBuf};

pub use config::{parse_config_file, parse_config_str, ConfigError, ExperimentConfig};
pub use output::{run_experiment, RunSummary};

/// Environment variable naming the directory runs write into when neither
/// the flags nor the config choose one.
pub const OUT_DIR_ENV: &str = "DRIS_OUT_DIR";

/// Output directory for a run: the flag, else the config's `output`, else
/// `<$DRIS_OUT_DIR or ./dris-out>/<name>`.
pub fn resolve_output(
    flag: Option<&Path>,
    cfg: &ExperimentConfig,
    env_dir: Option<&Path>,
    name: &str,
) -> PathBuf {
    if let Some(p) = flag.or(cfg.output.as_deref()) {
        return p.to_path_buf();
    }
    env_dir.unwrap_or(Path::new("dris-out")).join(name)
}
