use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use helm_cli::commands::{self, Overrides};
use helm_cli::{report, RunConfig};
use helm_core::training::Variant;
use helm_core::{Error, LabelHierarchy, Result};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "helm", version, about = "Hierarchical multi-label training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone, Debug, Default)]
struct RunFlags {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl From<RunFlags> for Overrides {
    fn from(f: RunFlags) -> Self {
        Overrides {
            seed: f.seed,
            epochs: f.epochs,
            variant: f.variant,
            ratio: f.ratio,
            out: f.out,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse and check a hierarchy file, printing a JSON summary.
    ValidateHierarchy { path: PathBuf },
    /// Render the synthetic dataset of a config to image files and manifests.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one variant and write checkpoint, logs and summary.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Score a checkpoint on the config's test split or on a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, required_unless_present = "config")]
        hierarchy: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        dump_embeddings: Option<PathBuf>,
        /// Also write the metrics JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every loss on a tiny model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Aggregate finished runs into CSV tables.
    Report {
        /// Glob patterns of run directories.
        #[arg(required = true)]
        runs: Vec<String>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn print_json<S: Serialize>(value: &S) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn configure_threads() {
    let threads = std::env::var("HELM_THREADS").ok().and_then(|v| v.parse::<usize>().ok());
    if let Some(n) = threads.filter(|&n| n > 0) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
}

fn load_config(path: &Path, overrides: Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::ValidateHierarchy { path } => match commands::validate_hierarchy(&path) {
            Ok(summary) => print_json(&summary)?,
            Err(e @ Error::Io(_)) => return Err(e),
            Err(e) => {
                print_json(&serde_json::json!({ "valid": false, "errors": [e.to_string()] }))?;
                return Ok(ExitCode::from(2));
            }
        },
        Command::GenData { config, seed, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if let (Some(s), helm_cli::DatasetSource::Synthetic(src)) = (seed, &mut cfg.dataset) {
                src.seed = s;
            }
            print_json(&commands::gen_data(&cfg, &out)?)?;
        }
        Command::Train { config, flags } => {
            let cfg = load_config(&config, flags.into())?;
            print_json(&commands::train(&cfg)?)?;
        }
        Command::Eval {
            checkpoint,
            config,
            hierarchy,
            manifest,
            dump_embeddings,
            out,
        } => {
            let cfg = config.map(|c| load_config(&c, Overrides::default())).transpose()?;
            let h = match (&hierarchy, &cfg) {
                (Some(p), _) => LabelHierarchy::from_file(p)?,
                (None, Some(c)) => c.load_hierarchy()?,
                (None, None) => return Err(Error::InvalidConfig("eval needs --config or --hierarchy".into())),
            };
            let model = commands::load_checkpoint(&checkpoint, &h)?;
            let samples = commands::eval_samples(cfg.as_ref(), manifest.as_deref(), &h)?;
            let report = commands::eval(&model, &h, &samples, dump_embeddings.as_deref())?;
            if let Some(out) = out {
                helm_core::io::write_atomic(&out, serde_json::to_string_pretty(&report)?.as_bytes())?;
            }
            print_json(&report)?;
        }
        Command::Gradcheck { seed } => {
            let report = commands::gradcheck(seed)?;
            print_json(&report)?;
            if !report.passed {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Report { runs, out } => {
            let dirs = report::find_runs(&runs)?;
            let summaries = report::load_summaries(&dirs)?;
            let written = report::write(&report::build(&summaries)?, &out)?;
            print_json(&serde_json::json!({ "runs": dirs.len(), "written": written }))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    configure_threads();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
