//! Command-line front end: synthetic data, training, the evaluation protocol
//! and attack sweeps.
//!
//! Exit codes: 0 on success, 2 for usage or configuration errors, 1 for
//! runtime failures.

pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use recourse_core::data::{load_dataset_dir, moons_spec, moons_tables, write_dataset_dir, MoonsConfig, RawTable, ShiftedDataset, Split};
use recourse_core::evaluation::{attack_sweep, loo_protocol_with, sweep_to_csv, train_subset_predictors, Method, ProtocolConfig, SweepConfig};
use recourse_core::model::{load_checkpoint, save_checkpoint};
use recourse_core::training::{log_to_jsonl, train, Mode};
use recourse_core::vds::Norm;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "recourse", version, about = "Counterfactual explanations robust to data-induced model shift")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic shifted two-moons dataset directory.
    SynthData(SynthArgs),
    /// Train one model and write its checkpoint and JSON-lines log.
    Train(TrainArgs),
    /// Run the leave-one-subset-out protocol and write a JSON report.
    Evaluate(EvaluateArgs),
    /// Sweep attacker settings against a checkpoint and write a CSV.
    Attack(AttackArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 400)]
    pub n: usize,
    /// Degrees of rotation per subset index.
    #[arg(long, default_value_t = 30.0)]
    pub rotation: f64,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Overrides the config's mode.
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub out: PathBuf,
    /// Log path; defaults to `<out>.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Train on one subset's train split instead of all of them.
    #[arg(long)]
    pub subset: Option<usize>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "rocoursenet,counternet,vanillacf")]
    pub methods: Vec<Method>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Supplies K, the unrolling rate (lr), batch size and test fraction.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "T-grid", value_delimiter = ',', default_value = "0,5,10,20")]
    pub t_grid: Vec<usize>,
    #[arg(long = "E-grid", value_delimiter = ',', default_value = "0.1,0.3,0.5")]
    pub e_grid: Vec<f64>,
    #[arg(long, default_value = "linf")]
    pub norm: Norm,
    #[arg(long)]
    pub out: PathBuf,
    /// Attack one subset's test split instead of all of them.
    #[arg(long)]
    pub subset: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| runtime(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.train_config().validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn load_data(dir: &Path, cfg: &RunConfig) -> Result<ShiftedDataset, CliError> {
    load_dataset_dir(dir, cfg.test_fraction, cfg.seed).map_err(runtime)
}

fn pick<'a>(ds: &'a ShiftedDataset, subset: Option<usize>, part: impl Fn(usize) -> &'a Split) -> Result<Split, CliError> {
    match subset {
        Some(i) if i >= ds.k() => Err(CliError::Usage(format!("--subset {i} out of range (k = {})", ds.k()))),
        Some(i) => Ok(part(i).clone()),
        None => Ok(Split::concat(&(0..ds.k()).map(part).collect::<Vec<_>>())),
    }
}

fn synth(args: &SynthArgs) -> Result<(), CliError> {
    if args.k < 2 {
        return Err(CliError::Usage(format!("--k must be at least 2, got {}", args.k)));
    }
    let cfg = MoonsConfig {
        k: args.k,
        n: args.n,
        rotation_deg: args.rotation,
        noise: args.noise,
        seed: args.seed,
        ..Default::default()
    };
    let tables = moons_tables(&cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    let width = (args.k - 1).to_string().len();
    let keyed: Vec<(String, RawTable)> = tables
        .into_iter()
        .enumerate()
        .map(|(i, t)| (format!("subset_{i:0width$}"), t))
        .collect();
    write_dataset_dir(&args.out, &moons_spec(), &keyed).map_err(runtime)
}

fn train_cmd(args: &TrainArgs) -> Result<(), CliError> {
    let mut cfg = load_config(Some(&args.config), args.seed)?;
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    let ds = load_data(&args.data, &cfg)?;
    let data = pick(&ds, args.subset, |i| &ds.subsets[i].train)?;
    let dims = cfg.dims_for(ds.schema.encoded_dim);
    dims.validate(ds.schema.encoded_dim).map_err(|e| CliError::Usage(e.to_string()))?;
    let (model, log) = train(&data, &ds.schema, &dims, &cfg.train_config()).map_err(runtime)?;
    save_checkpoint(&model, &args.out).map_err(runtime)?;
    let log_path = args.log.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".log.jsonl");
        PathBuf::from(p)
    });
    write_file(&log_path, log_to_jsonl(&log).as_bytes())
}

fn evaluate_cmd(args: &EvaluateArgs) -> Result<(), CliError> {
    let cfg = load_config(Some(&args.config), args.seed)?;
    if args.methods.is_empty() {
        return Err(CliError::Usage("--methods must name at least one method".into()));
    }
    let ds = load_data(&args.data, &cfg)?;
    let dims = cfg.dims_for(ds.schema.encoded_dim);
    dims.validate(ds.schema.encoded_dim).map_err(|e| CliError::Usage(e.to_string()))?;
    let protocol = ProtocolConfig {
        train: cfg.train_config(),
        dims,
        vanilla: cfg.vanillacf.clone(),
    };
    let name = args
        .data
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| args.data.display().to_string());
    let predictors = train_subset_predictors(&ds, &protocol).map_err(runtime)?;
    let reports = args
        .methods
        .iter()
        .map(|&m| loo_protocol_with(&ds, &protocol, m, &predictors, &name))
        .collect::<Result<Vec<_>, _>>()
        .map_err(runtime)?;
    let mut json = serde_json::to_string_pretty(&reports).map_err(runtime)?;
    json.push('\n');
    write_file(&args.out, json.as_bytes())
}

fn attack_cmd(args: &AttackArgs) -> Result<(), CliError> {
    let cfg = load_config(args.config.as_deref(), args.seed)?;
    if args.e_grid.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
        return Err(CliError::Usage("--E-grid values must be >= 0".into()));
    }
    let model = load_checkpoint(&args.ckpt).map_err(runtime)?;
    if !model.has_generator() {
        return Err(CliError::Usage("checkpoint has no generator; attack needs a full model".into()));
    }
    let ds = load_data(&args.data, &cfg)?;
    if ds.schema.fingerprint() != model.schema.fingerprint() {
        return Err(CliError::Runtime(
            "dataset encoding does not match the checkpoint; use the seed and test_fraction it was trained with".into(),
        ));
    }
    let test = pick(&ds, args.subset, |i| &ds.subsets[i].test)?;
    let sweep = SweepConfig {
        steps_grid: args.t_grid.clone(),
        epsilon_grid: args.e_grid.clone(),
        norm: args.norm,
        unroll: cfg.unroll,
        eta: cfg.lr,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        hard_target: cfg.hard_validity_target,
    };
    let rows = attack_sweep(&model, &test, &sweep).map_err(runtime)?;
    write_file(&args.out, sweep_to_csv(&rows).as_bytes())
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::SynthData(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Attack(a) => attack_cmd(a),
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
