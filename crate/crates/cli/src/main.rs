use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use normalign_cli::commands::{self, PromptSource, RunOverrides};
use normalign_cli::{CliError, RunConfig};
use normalign_core::prompting::PromptVariant;
use normalign_core::report::OutputFormat;
use normalign_core::synthetic::{synthetic_corpus, write_corpus_files, SyntheticConfig};
use normalign_gateway::stub::{scripted, StubServer};
use normalign_gateway::Mode;

/// Measures how well language models anticipate human agreement with
/// social norms.
///
/// Exit codes: 0 success, 1 validation failure, 2 partial inference
/// failure, 3 I/O error.
#[derive(Debug, Parser)]
#[command(name = "normalign", version)]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the corpus, binning and cache without sending any request.
    Validate {
        #[arg(short, long)]
        config: PathBuf,
        /// Check as if running in this mode.
        #[arg(long)]
        mode: Option<Mode>,
    },
    /// Print a rendered prompt.
    Prompt {
        /// zero-shot, description or table.
        #[arg(long)]
        variant: PromptVariant,
        /// Rule-of-thumb text to fill in.
        #[arg(long, conflicts_with_all = ["config", "rot_id"])]
        text: Option<String>,
        #[arg(short, long, requires = "rot_id")]
        config: Option<PathBuf>,
        /// RoT to render from the configured corpus.
        #[arg(long, requires = "config")]
        rot_id: Option<String>,
        /// Custom template containing `{RoT}` once. Output from a custom
        /// template is not one of the built-in prompt formats.
        #[arg(long)]
        template_file: Option<PathBuf>,
    },
    /// Query every model with every variant, then extract and score.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        /// live, record or replay.
        #[arg(long)]
        mode: Option<Mode>,
        /// Requests in flight per batch.
        #[arg(long)]
        parallelism: Option<usize>,
        /// Stop at the first failed request.
        #[arg(long)]
        fail_fast: bool,
    },
    /// Recompute scores from stored extractions.
    Score {
        #[arg(short, long)]
        config: PathBuf,
        /// Re-extract answers from stored responses first.
        #[arg(long)]
        re_extract: bool,
    },
    /// Write report.md, tables/*.csv and report.json from stored scores.
    Report {
        #[arg(short, long)]
        config: PathBuf,
        /// Formats to write: markdown, csv, json (comma-separated).
        #[arg(long, value_delimiter = ',', default_value = "markdown,csv,json")]
        format: Vec<OutputFormat>,
        /// Output directory (default: <output_dir>/report).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve scripted chat completions locally, for offline trials.
    StubServer {
        #[arg(long, default_value = "127.0.0.1:8089")]
        addr: SocketAddr,
    },
    /// Write a seeded synthetic corpus with the study's shape.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        rots_per_source: usize,
        #[arg(long, default_value_t = 50)]
        annotators_per_rot: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Leave out profiles.tsv, as with public annotation releases.
        #[arg(long)]
        no_profiles: bool,
    },
}

fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    RunConfig::load(path)
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::io_msg(format!("cannot start async runtime: {e}")))
}

fn execute(command: Command) -> Result<ExitCode, CliError> {
    match command {
        Command::Validate { config, mode } => {
            let mut cfg = load_config(&config)?;
            RunOverrides {
                mode,
                ..Default::default()
            }
            .apply(&mut cfg)?;
            let report = commands::validate(&cfg)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            for n in &report.notes {
                eprintln!("note: {n}");
            }
            if report.ok() {
                println!("OK");
                Ok(ExitCode::SUCCESS)
            } else {
                for f in &report.failures {
                    println!("FAIL: {f}");
                }
                Err(CliError::validation(format!("{} check(s) failed", report.failures.len())))
            }
        }
        Command::Prompt {
            variant,
            text,
            config,
            rot_id,
            template_file,
        } => {
            let template = match &template_file {
                Some(p) => Some(std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?),
                None => None,
            };
            let cfg;
            let source = match (&text, &config, &rot_id) {
                (Some(t), _, _) => PromptSource::Text(t),
                (None, Some(c), Some(id)) => {
                    cfg = load_config(c)?;
                    PromptSource::Rot { cfg: &cfg, rot_id: id }
                }
                _ => return Err(CliError::validation("give --text, or --config with --rot-id")),
            };
            let rendered = commands::prompt(source, variant, template.as_deref())?;
            if template.is_some() {
                eprintln!("note: custom template, not one of the built-in prompt formats");
            }
            print!("{}", rendered.text);
            Ok(ExitCode::SUCCESS)
        }
        Command::Run {
            config,
            mode,
            parallelism,
            fail_fast,
        } => {
            let mut cfg = load_config(&config)?;
            RunOverrides {
                mode,
                parallelism,
                fail_fast,
            }
            .apply(&mut cfg)?;
            let summary = runtime()?.block_on(commands::run(&cfg))?;
            println!(
                "{} responses ({} from cache, {} network calls), {} extractions, {} scores",
                summary.responses, summary.from_cache, summary.network_calls, summary.extractions, summary.scores
            );
            if summary.is_complete() {
                return Ok(ExitCode::SUCCESS);
            }
            for f in &summary.failures {
                eprintln!("failed: {} {} {}: {}", f.model_id, f.variant, f.rot_id, f.message);
            }
            Err(CliError::partial(format!(
                "{} request(s) failed, {} skipped",
                summary.failures.len(),
                summary.skipped
            )))
        }
        Command::Score { config, re_extract } => {
            let cfg = load_config(&config)?;
            let (extractions, scores) = commands::score(&cfg, re_extract)?;
            println!("{extractions} extractions, {scores} scores");
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { config, format, out } => {
            let cfg = load_config(&config)?;
            for path in commands::report(&cfg, &format, out.as_deref())? {
                println!("{}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::StubServer { addr } => {
            let rt = runtime()?;
            rt.block_on(async {
                let server = StubServer::bind(addr, scripted())
                    .await
                    .map_err(|e| CliError::io_msg(format!("cannot bind {addr}: {e}")))?;
                println!("listening on {}", server.url());
                server.wait().await;
                Ok(ExitCode::SUCCESS)
            })
        }
        Command::Synth {
            out,
            rots_per_source,
            annotators_per_rot,
            seed,
            no_profiles,
        } => {
            let corpus = synthetic_corpus(&SyntheticConfig {
                rots_per_source,
                annotators_per_rot,
                seed,
            });
            let files = write_corpus_files(&corpus, &out).map_err(|e| CliError::io(&out, e))?;
            if no_profiles {
                std::fs::remove_file(&files.profiles).map_err(|e| CliError::io(&files.profiles, e))?;
            }
            println!("{}", files.rots.display());
            println!("{}", files.annotations.display());
            if !no_profiles {
                println!("{}", files.profiles.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
