//! Command-line front end. Each subcommand loads its inputs, runs one stage
//! and leaves a run directory under `--out`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
//! Failures print a single `error[<kind>]: <message>` line on stderr.

use super::run::{self, RunDir, StageError};
use super::{load_database, Database, RunConfig};
use crate::assembly::read_labeling_csv;
use crate::latentmodel::{read_weights, ModelParameters};
use crate::macroopt::{read_field_csv, PropertyField};
use clap::{Parser, Subcommand};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "metadesign", version, about = "Data-driven metamaterial and multiscale design")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory that receives the run directory.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// Overrides `rng_seed` from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `threads` from the configuration.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Grow a labelled database from the seed catalogue.
    GenDb,
    /// Train the autoencoder and property regressor.
    Train {
        #[arg(long)]
        db: PathBuf,
    },
    /// Latent PCA, semantic arrows and optional candidate sets.
    Analyze {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        weights: PathBuf,
    },
    /// Graded families along the built-in curve.
    Family {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        weights: PathBuf,
    },
    /// Optimize the macro property field.
    DesignMacro {
        #[arg(long)]
        db: PathBuf,
        /// Needed in family mode.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Select and stitch microstructures for an optimized field.
    Assemble {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        field: PathBuf,
    },
    /// Re-evaluate a stored labeling.
    Evaluate {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        labeling: PathBuf,
        /// Continuous field to compare against.
        #[arg(long)]
        field: Option<PathBuf>,
    },
    /// Draw records or a stored labeling.
    Render {
        #[arg(long)]
        db: PathBuf,
        /// Comma-separated record ids.
        #[arg(long, value_delimiter = ',')]
        ids: Vec<u64>,
        #[arg(long)]
        labeling: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenDb => "gen-db",
            Command::Train { .. } => "train",
            Command::Analyze { .. } => "analyze",
            Command::Family { .. } => "family",
            Command::DesignMacro { .. } => "design-macro",
            Command::Assemble { .. } => "assemble",
            Command::Evaluate { .. } => "evaluate",
            Command::Render { .. } => "render",
        }
    }
}

fn load_config(cli: &Cli) -> Result<(RunConfig, PathBuf), StageError> {
    let path = cli.config.clone().ok_or_else(|| StageError::Usage("--config <path> is required".into()))?;
    let text = std::fs::read_to_string(&path).map_err(|e| StageError::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = RunConfig::from_toml(&text)?;
    if let Some(s) = cli.seed {
        cfg.rng_seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    cfg.validate()?;
    Ok((cfg, path))
}

fn db_input(run: &mut RunDir, path: &Path) -> Result<Database, StageError> {
    run.input("db", path)?;
    Ok(load_database(path)?)
}

fn weights_input(run: &mut RunDir, path: &Path) -> Result<ModelParameters, StageError> {
    run.input("weights", path)?;
    Ok(read_weights(path)?)
}

fn field_input(run: &mut RunDir, path: &Path) -> Result<PropertyField, StageError> {
    run.input("field", path)?;
    Ok(read_field_csv(&std::fs::read_to_string(path)?)?)
}

fn labeling_input(run: &mut RunDir, path: &Path, cfg: &RunConfig) -> Result<Vec<u64>, StageError> {
    run.input("labeling", path)?;
    let problem = run::design_problem(cfg)?;
    read_labeling_csv(&std::fs::read_to_string(path)?, problem.nx, problem.ny).map_err(StageError::Usage)
}

fn execute(cli: Cli) -> Result<PathBuf, StageError> {
    let (cfg, config_path) = load_config(&cli)?;
    let mut run = RunDir::create(&cli.out, cli.command.name(), cfg.rng_seed)?;
    run.input("config", &config_path)?;
    let outcome = dispatch(&cli.command, &cfg, &mut run);
    match outcome {
        Ok(()) => run.finish(),
        Err(e) => {
            // keep partial outputs for inspection, still with a manifest
            let _ = run.finish();
            Err(e)
        }
    }
}

fn dispatch(command: &Command, cfg: &RunConfig, run: &mut RunDir) -> Result<(), StageError> {
    match command {
        Command::GenDb => {
            let db = run::gen_db(cfg, run)?;
            log::info!("{} records", db.len());
        }
        Command::Train { db } => {
            let db = db_input(run, db)?;
            let t = run::train_stage(cfg, &db, run)?;
            log::info!(
                "pixel agreement {:.4}, property error {:.4}, KL {:.3}",
                t.report.median_pixel_agreement,
                t.report.median_relative_error,
                t.report.mean_kl
            );
        }
        Command::Analyze { db, weights } => {
            let mut db = db_input(run, db)?;
            let model = weights_input(run, weights)?;
            run::analyze(cfg, &mut db, &model, run)?;
        }
        Command::Family { db, weights } => {
            let mut db = db_input(run, db)?;
            let model = weights_input(run, weights)?;
            let f = run::family_stage(cfg, &mut db, &model, run)?;
            log::info!("{} families", f.families.len());
        }
        Command::DesignMacro { db, weights } => {
            let mut db = db_input(run, db)?;
            let model = weights.as_deref().map(|w| weights_input(run, w)).transpose()?;
            let d = run::design_macro(cfg, &mut db, model.as_ref(), run)?;
            log::info!("objective {:.4e} -> {:.4e}", d.initial_objective(), d.final_objective());
        }
        Command::Assemble { db, weights, field } => {
            let mut db = db_input(run, db)?;
            let model = weights_input(run, weights)?;
            let field = field_input(run, field)?;
            let a = run::assemble(cfg, &mut db, &model, &field, run)?;
            log::info!("assembled RRMSE {:.4} against {:.4}", a.report.rrmse, a.field_rrmse);
        }
        Command::Evaluate { db, labeling, field } => {
            let db = db_input(run, db)?;
            let ids = labeling_input(run, labeling, cfg)?;
            let field = field.as_deref().map(|f| field_input(run, f)).transpose()?;
            run::evaluate(cfg, &db, &ids, field.as_ref(), run)?;
        }
        Command::Render { db, ids, labeling } => {
            let db = db_input(run, db)?;
            let lab = labeling.as_deref().map(|l| labeling_input(run, l, cfg)).transpose()?;
            run::render(cfg, &db, ids, lab.as_deref(), run)?;
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code. Prints the run directory on success.
pub fn main_with_args<I, T>(args: I) -> i32
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
    match execute(cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            0
        }
        Err(e) => {
            let kind = match &e {
                StageError::Usage(_) => "usage",
                StageError::Config(_) => "config",
                StageError::Runtime { kind, .. } => kind,
            };
            let msg = match &e {
                StageError::Usage(m) | StageError::Config(m) => m.clone(),
                StageError::Runtime { message, .. } => message.clone(),
            };
            eprintln!("error[{kind}]: {}", msg.replace('\n', " "));
            e.exit_code()
        }
    }
}
