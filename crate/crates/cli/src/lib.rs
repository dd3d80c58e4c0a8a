//! Operator surface for the reporting engine: case runs, batch runs,
//! template derivation, evaluation, judge prompt export, and an HTTP service.

pub mod commands;
pub mod output;
pub mod service;

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use commands::{CaseSpec, Overrides};

#[derive(Debug, Parser)]
#[command(name = "copilot", version, about = "Agentic CT report generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct EngineFlags {
    /// Engine config file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub time_budget_s: Option<f64>,
    #[arg(long)]
    pub qc_max_rounds: Option<usize>,
    /// Output directory; per-case results go to `<out>/<case_id>/`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl EngineFlags {
    fn overrides(&self) -> Overrides {
        Overrides {
            max_steps: self.max_steps,
            time_budget_s: self.time_budget_s,
            qc_max_rounds: self.qc_max_rounds,
            out: self.out.clone(),
            ..Overrides::default()
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a report for one case, or for every case in a manifest.
    Report {
        #[command(flatten)]
        engine: EngineFlags,
        #[arg(long, required_unless_present = "batch", conflicts_with = "batch")]
        volume: Option<PathBuf>,
        #[arg(long, required_unless_present = "batch")]
        case_id: Option<String>,
        #[arg(long, required_unless_present = "batch")]
        query: Option<String>,
        #[arg(long, default_value = "liver")]
        organ: String,
        /// JSON-lines manifest of `{case_id, volume, query, organ}`.
        #[arg(long)]
        batch: Option<PathBuf>,
        /// Cases run at once in batch mode; defaults to the number of cores.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Cluster a report corpus into templates and summarize analysis items.
    DeriveTemplates {
        #[arg(long)]
        config: PathBuf,
        /// JSON lines of `{case_id, report_text}`.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "liver")]
        organ: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score predictions against references.
    Evaluate {
        /// JSON lines of `{case_id, text}`, or an output directory of reports.
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        references: PathBuf,
        /// Where to write the metric report JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write judge prompts for finished traces, or tally judge replies.
    JudgeExport {
        /// Trace files or output directories.
        #[arg(long, num_args = 1.., required_unless_present = "responses")]
        traces: Vec<PathBuf>,
        /// JSON lines of `{case_id, reply}` to aggregate instead of exporting.
        #[arg(long, conflicts_with = "traces")]
        responses: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve `POST /v1/report` and `GET /healthz`.
    Serve {
        #[command(flatten)]
        engine: EngineFlags,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
    /// Write the synthetic sample case with scripted backends.
    SampleCase {
        #[arg(long)]
        dir: PathBuf,
    },
}

/// Runs a parsed command and returns the process exit code.
pub async fn run(cli: Cli) -> u8 {
    match dispatch(cli.command).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

/// Parses `args` (program name first) and runs the command.
pub async fn run_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli).await,
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                1
            } else {
                0
            }
        }
    }
}

async fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::Report { engine, volume, case_id, query, organ, batch, jobs } => {
            let e = commands::load_engine(&engine.config, &engine.overrides())?;
            if let Some(manifest) = batch {
                let cases = commands::read_manifest(&manifest)?;
                let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
                let out = e.config.output.dir.clone();
                let entries = commands::report_batch(Arc::new(e), cases, jobs).await;
                for entry in entries.iter().filter(|x| x.error.is_some()) {
                    eprintln!("case {}: {}", entry.case_id, entry.error.as_deref().unwrap_or_default());
                }
                let summary = commands::write_batch_summary(&out, &entries)?;
                println!("{}", summary.display());
                return Ok(commands::batch_exit_code(&entries));
            }
            let case = CaseSpec {
                case_id: case_id.expect("required by clap"),
                volume: volume.expect("required by clap"),
                query: query.expect("required by clap"),
                organ,
            };
            let written = commands::report_case(&e, &case).await?;
            if let Some(p) = &written.report {
                println!("{}", p.display());
            }
            Ok(written.exit_code())
        }
        Command::DeriveTemplates { config, corpus, organ, out, k, seed } => {
            let e = commands::load_engine(&config, &Overrides { out, k, seed, ..Overrides::default() })?;
            let files = commands::derive(&e, &corpus, &organ).await?;
            println!("{} templates -> {}", files.template_count, files.templates.display());
            println!("catalog -> {}", files.catalog.display());
            Ok(0)
        }
        Command::Evaluate { predictions, references, out } => {
            let report = commands::evaluate(&predictions, &references)?;
            print!("{}", report.to_table());
            if let Some(out) = out {
                std::fs::write(&out, report.to_json() + "\n")?;
            }
            Ok(0)
        }
        Command::JudgeExport { traces, responses, out } => {
            let n = match responses {
                Some(r) => commands::judge_aggregate(&r, &out)?,
                None => commands::judge_export(&traces, &out)?,
            };
            println!("{n} cases -> {}", out.display());
            Ok(0)
        }
        Command::Serve { engine, bind } => {
            let e = commands::load_engine(&engine.config, &engine.overrides())?;
            service::serve(Arc::new(e), &bind).await?;
            Ok(0)
        }
        Command::SampleCase { dir } => {
            let paths = copilot_core::sample::write_sample(&dir)?;
            println!("{}", paths.config.display());
            Ok(0)
        }
    }
}
