//! `iurkit` command line: supervision, query templates, training, rewriting,
//! evaluation and matrix inspection over JSONL/TSV dialogue files.
//!
//! Exit codes: 0 success, 1 user error (bad input, missing files, nothing to
//! train on), 2 internal invariant violation.

pub mod commands;
pub mod config;
pub mod pipeline;

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use commands::TrainArgs;
use config::{Format, Overrides, QueryMode, RunConfig, ThetaPreset};

#[derive(Debug, Parser)]
#[command(name = "iurkit", version, about = "Incomplete utterance rewriting with edit-operation matrices")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML configuration file; flags take precedence over its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dataset (JSONL or TSV).
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Model file to write (train) or read (rewrite, inspect-matrix).
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Pronoun lexicon, one entry per line; replaces the built-in list.
    #[arg(long, global = true)]
    pub lexicon: Option<PathBuf>,
    /// Verb list for the fallback parser; replaces the built-in list.
    #[arg(long, global = true)]
    pub verbs: Option<PathBuf>,
    /// CoNLL-U parses of the incomplete utterances keyed by `# sent_id`.
    #[arg(long, global = true)]
    pub parses: Option<PathBuf>,
    /// `.ctxvec` file for imported-vector models.
    #[arg(long, global = true)]
    pub vectors: Option<PathBuf>,
    /// Decoding threshold.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub theta: Option<f64>,
    /// Dataset threshold preset (rewrite/task 0.1, restoration/canard 0.05).
    #[arg(long, global = true, value_enum)]
    pub preset: Option<ThetaPreset>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Render every marker as [UNK].
    #[arg(long, global = true, overrides_with = "no_unify")]
    pub unify: bool,
    /// Keep distinct [COREF]/[ELLIP] markers.
    #[arg(long, global = true, overrides_with = "unify")]
    pub no_unify: bool,
    #[arg(long, global = true, value_enum)]
    pub query_mode: Option<QueryMode>,
    /// Worker threads for per-example stages.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            data: self.data.clone(),
            format: self.format,
            lexicon: self.lexicon.clone(),
            verbs: self.verbs.clone(),
            parses: self.parses.clone(),
            model: self.model.clone(),
            vectors: self.vectors.clone(),
            unify: match (self.unify, self.no_unify) {
                (true, _) => Some(true),
                (_, true) => Some(false),
                _ => None,
            },
            query_mode: self.query_mode,
            theta: self.theta,
            preset: self.preset,
            seed: self.seed,
            workers: self.workers,
            ..Overrides::default()
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Derive gold edit matrices and an expressibility report.
    BuildSupervision {
        /// Output directory for `<id>.matrix.json` files and `report.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the query template of every example as JSON lines.
    MakeQuery {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a scoring model.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Checkpoint written after every epoch.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Dev set scored for exact match after every epoch.
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Training log (default `<model>.log.json`).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Rewrite every example of `--data`.
    Rewrite {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score hypotheses against gold rewrites.
    Evaluate {
        /// JSON lines with `id` and `rewrite`.
        #[arg(long)]
        hyp: PathBuf,
        /// Reference dataset (defaults to `--data`).
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        /// Also write the scores as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump scores, labels, spans and output for one example.
    InspectMatrix {
        #[arg(long)]
        id: String,
        /// Grid values as 16-significant-digit strings.
        #[arg(long)]
        grid_strings: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn run(cli: Cli) -> Result<()> {
    let mut overrides = cli.common.overrides();
    if let Command::Train {
        epochs,
        lr,
        batch_size,
        ..
    } = &cli.command
    {
        overrides.epochs = *epochs;
        overrides.learning_rate = *lr;
        overrides.batch_size = *batch_size;
    }
    let cfg = RunConfig::load(cli.common.config.as_deref(), &overrides)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.unwrap_or(0))
        .build()
        .context("cannot start worker pool")?;
    pool.install(|| dispatch(&cfg, cli.command))
}

fn dispatch(cfg: &RunConfig, command: Command) -> Result<()> {
    match command {
        Command::BuildSupervision { out } => {
            let report = commands::cmd_build_supervision(cfg, &out)?;
            println!(
                "full {} partial {} failed {} (report: {})",
                report.full,
                report.partial,
                report.failed,
                out.join("report.json").display()
            );
            if report.full == 0 {
                anyhow::bail!("no fully-expressible examples");
            }
        }
        Command::MakeQuery { out } => {
            let mut w = output(&out)?;
            commands::cmd_make_query(cfg, &mut w)?;
            w.flush()?;
        }
        Command::Train {
            checkpoint,
            resume,
            dev,
            log,
            ..
        } => {
            let args = TrainArgs {
                checkpoint,
                resume,
                dev,
                log,
            };
            let log = commands::cmd_train(cfg, &args)?;
            if let Some(last) = log.epochs.last() {
                println!("epoch {} loss {:.6}", last.epoch, last.mean_loss);
            }
        }
        Command::Rewrite { out } => {
            let mut w = output(&out)?;
            commands::cmd_rewrite(cfg, &mut w)?;
        }
        Command::Evaluate { hyp, reference, out } => {
            let reference = match reference {
                Some(r) => r,
                None => cfg.data_path()?.to_owned(),
            };
            let result = commands::cmd_evaluate(cfg, &hyp, &reference)?;
            print!("{}", result.table());
            if let Some(p) = out {
                let mut text = serde_json::to_string_pretty(&result)?;
                text.push('\n');
                std::fs::write(&p, text).with_context(|| format!("cannot write {}", p.display()))?;
            }
        }
        Command::InspectMatrix { id, grid_strings, out } => {
            let value = commands::cmd_inspect_matrix(cfg, &id, grid_strings)?;
            let mut w = output(&out)?;
            serde_json::to_writer_pretty(&mut w, &value)?;
            writeln!(w)?;
            w.flush()?;
        }
    }
    Ok(())
}

/// Exit code for an error: 2 for internal invariant violations, else 1.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<iurkit::Error>() {
            use iurkit::Error as E;
            if matches!(e, E::Shape(_) | E::RowOutOfRange { .. } | E::ColOutOfRange { .. }) {
                return 2;
            }
        }
    }
    1
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("IURKIT_LOG", "warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
        Err(_) => 2,
    }
}
