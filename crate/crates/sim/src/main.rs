use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dris_core::evaluation::{check_identifiability, Method};
use dris_core::io::{write_channels, write_measurements};
use dris_core::protocol::{gen_channels, gen_training, run_protocol_with, NoiseModel, SystemDims};
use dris_sim::config::{parse_estimators, parse_snr_grid, ConfigError, ExperimentConfig};
use dris_sim::{parse_config_file, presets, resolve_output, run_experiment, OUT_DIR_ENV};
use serde_json::json;

#[derive(Parser)]
#[command(name = "dris-sim", version, about = "Coupled tensor channel estimation for double-RIS MIMO")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo sweep and write results, a run manifest and plot data.
    Run(RunArgs),
    /// Print the identifiability verdict of every estimator for given dims.
    Identify(IdentifyArgs),
    /// List the built-in presets.
    Presets {
        /// Print the config of this preset instead.
        #[arg(long)]
        show: Option<String>,
    },
    /// Simulate one channel draw and write channel and measurement archives.
    Export(ExportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Config file (TOML).
    #[arg(required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Use a built-in preset instead of a config file.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Output directory; defaults to the config's `output`, then $DRIS_OUT_DIR/<name>.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// SNR grid in dB, `start:step:stop` or a comma-separated list.
    #[arg(long, allow_hyphen_values = true)]
    snr_db: Option<String>,
    /// Comma-separated estimator names.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    #[arg(long)]
    t_max: Option<usize>,
    /// Relative residual change below which ALS stops.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    average_ris_frames: bool,
    /// Run plain ALS sweeps without the extrapolation step.
    #[arg(long)]
    no_extrapolate: bool,
    /// Print the summary as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Clone, Copy)]
struct DimsArgs {
    #[arg(long, default_value_t = 4)]
    m_bs: usize,
    #[arg(long, default_value_t = 2)]
    m_ue: usize,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 30)]
    m_s1: usize,
    #[arg(long, default_value_t = 20)]
    m_s2: usize,
    #[arg(long, default_value_t = 30)]
    i: usize,
    #[arg(long, default_value_t = 20)]
    j: usize,
}

impl DimsArgs {
    fn dims(self) -> SystemDims {
        SystemDims {
            m_bs: self.m_bs,
            m_ue: self.m_ue,
            m_s1: self.m_s1,
            m_s2: self.m_s2,
            i_frames: self.i,
            j_frames: self.j,
            k_pilots: self.k,
        }
    }
}

#[derive(Args)]
struct IdentifyArgs {
    #[command(flatten)]
    dims: DimsArgs,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    dims: DimsArgs,
    #[arg(long, default_value_t = 20.0, allow_hyphen_values = true)]
    snr_db: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    average_ris_frames: bool,
    /// Directory receiving `channels/` and `measurements/`.
    #[arg(short, long)]
    out: PathBuf,
}

enum Failure {
    Config(ConfigError),
    Run(dris_core::Error),
}

impl Failure {
    fn report(&self) -> (serde_json::Value, u8) {
        match self {
            Failure::Config(e) => {
                let mut v = json!({ "status": "error", "message": e.to_string() });
                match e {
                    ConfigError::Parse { origin, line, column, message } => {
                        v["kind"] = json!("parse");
                        v["origin"] = json!(origin);
                        v["line"] = json!(line);
                        v["column"] = json!(column);
                        v["detail"] = json!(message);
                    }
                    ConfigError::Flag { flag, .. } => {
                        v["kind"] = json!("flag");
                        v["flag"] = json!(flag);
                    }
                    ConfigError::Validation(_) => v["kind"] = json!("validation"),
                    ConfigError::Read { path, .. } => {
                        v["kind"] = json!("io");
                        v["path"] = json!(path.display().to_string());
                    }
                }
                (v, 2)
            }
            Failure::Run(e) => {
                let kind = if matches!(e, dris_core::Error::Io(_)) { "io" } else { "run" };
                (json!({ "status": "error", "kind": kind, "message": e.to_string() }), 1)
            }
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<dris_core::Error> for Failure {
    fn from(e: dris_core::Error) -> Self {
        Failure::Run(e)
    }
}

fn flag_err(flag: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Flag {
        flag: flag.to_string(),
        message: message.into(),
    }
}

fn load(args: &RunArgs) -> Result<(ExperimentConfig, String), ConfigError> {
    let (mut cfg, name) = match (&args.config, &args.preset) {
        (Some(path), _) => {
            let name = path.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
            (parse_config_file(path)?, name)
        }
        (None, Some(p)) => {
            let preset = presets::find(p).ok_or_else(|| flag_err("--preset", format!("unknown preset {p:?}")))?;
            (preset.config(), preset.name.to_string())
        }
        (None, None) => unreachable!("clap requires a config or a preset"),
    };
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(g) = &args.snr_db {
        cfg.snr_grid_db = parse_snr_grid(g).map_err(|m| flag_err("--snr-db", m))?;
    }
    if let Some(e) = &args.estimators {
        cfg.estimators = parse_estimators(e).map_err(|m| flag_err("--estimators", m))?;
    }
    if let Some(t) = args.t_max {
        cfg.als.t_max = t;
    }
    if let Some(t) = args.tol {
        cfg.als.rel_change_tol = t;
    }
    if args.average_ris_frames {
        cfg.protocol.average_ris_frames = true;
    }
    if args.no_extrapolate {
        cfg.als.extrapolate = false;
    }
    cfg.validate()?;
    Ok((cfg, name))
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let (cfg, name) = load(&args)?;
    let env_dir = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from);
    let dir = resolve_output(args.output.as_deref(), &cfg, env_dir.as_deref(), &name);
    let summary = run_experiment(&cfg, &dir)?;
    if args.json {
        let files: Vec<String> = summary.files.iter().map(|f| f.display().to_string()).collect();
        println!("{}", json!({ "status": "ok", "dir": dir.display().to_string(), "files": files }));
        return Ok(());
    }
    println!("{:<20} {:>7} {:>12} {:>12} {:>12} {:>8}", "estimator", "snr_db", "p1", "p2", "p3", "failures");
    for r in &summary.reports {
        for p in &r.points {
            let m = p.median();
            println!(
                "{:<20} {:>7} {:>12.4e} {:>12.4e} {:>12.4e} {:>8}",
                r.estimator.name(),
                p.snr_db,
                m[0],
                m[1],
                m[2],
                p.failures
            );
        }
    }
    println!("median NMSE per cascade; artifacts in {}", dir.display());
    Ok(())
}

fn identify(args: IdentifyArgs) {
    let dims = args.dims.dims();
    let verdicts: Vec<_> = Method::ALL.iter().map(|&m| check_identifiability(&dims, m)).collect();
    if args.json {
        let v: Vec<_> = verdicts
            .iter()
            .map(|v| {
                json!({
                    "method": v.method.name(),
                    "satisfied": v.satisfied(),
                    "failed": v.failed().map(|c| c.to_string()).collect::<Vec<_>>(),
                })
            })
            .collect();
        println!("{}", serde_json::Value::Array(v));
    } else {
        for v in verdicts {
            println!("{v}");
        }
    }
}

fn list_presets(show: Option<String>) -> Result<(), Failure> {
    match show {
        Some(name) => {
            let p = presets::find(&name).ok_or_else(|| flag_err("--show", format!("unknown preset {name:?}")))?;
            print!("{}", p.toml);
        }
        None => {
            for p in &presets::PRESETS {
                println!("{:<6} {}", p.name, p.description);
            }
        }
    }
    Ok(())
}

fn export(args: ExportArgs) -> Result<(), Failure> {
    let dims = args.dims.dims();
    dims.validate()?;
    let ch = gen_channels(&dims, args.seed);
    let tr = gen_training(&dims)?;
    let noise = NoiseModel::from_snr_db(args.snr_db, args.seed);
    let opts = dris_core::protocol::ProtocolOptions {
        average_ris_frames: args.average_ris_frames,
    };
    let bundle = run_protocol_with(&ch, &tr, &noise, opts)?;
    let out: &Path = &args.out;
    write_channels(&out.join("channels"), &ch, &dims, Some(args.seed))?;
    write_measurements(&out.join("measurements"), &bundle, &dims, Some(args.seed), Some(noise.sigma2))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let result = match Cli::parse().command {
        Command::Run(a) => run(a),
        Command::Identify(a) => {
            identify(a);
            Ok(())
        }
        Command::Presets { show } => list_presets(show),
        Command::Export(a) => export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (v, code) = f.report();
            eprintln!("{v}");
            ExitCode::from(code)
        }
    }
}
