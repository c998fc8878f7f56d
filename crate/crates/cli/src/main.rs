use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kpl::manifest::load_runnable;
use kpl::output::ReportDocument;
use kpl::registry::{default_config, registry};
use kpl::{plot, run_to_dir, CliError, EXIT_CHECK_FAILED, EXIT_ERROR, EXIT_PASS};

#[derive(Parser)]
#[command(name = "kpl", version, about = "Monte Carlo checks for the stochastic heat equation and its directed polymer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a config or manifest file.
    Run {
        /// Experiment config (JSON) or a manifest.json from an earlier run.
        config: PathBuf,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; results do not depend on it.
        #[arg(long, env = "KPL_WORKERS")]
        workers: Option<usize>,
        /// Output directory (default: the config's `output`, else runs/<experiment>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List registered experiments.
    List,
    /// Print a default config for an experiment.
    Config { experiment: String },
    /// Draw the standard figures from a report.json.
    Plot {
        report: PathBuf,
        /// Directory for the SVG files (default: plots/ next to the report).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Run { config, seed, workers, out } => {
            let mut config = load_runnable(&config)?;
            if let Some(seed) = seed {
                config.master_seed = seed;
            }
            if let Some(workers) = workers {
                config.workers = Some(workers);
            }
            let out_dir = out
                .or_else(|| config.output.clone())
                .unwrap_or_else(|| PathBuf::from("runs").join(&config.experiment));
            let outcome = run_to_dir(&config, &out_dir)?;
            for r in &outcome.document.reports {
                println!(
                    "{:<4} {:<26} lhs = {:>12.6} ± {:<10.3e} rhs = {:>12.6} ± {:<10.3e}",
                    if r.pass { "ok" } else { "FAIL" },
                    r.name,
                    r.lhs.mean,
                    r.lhs.stderr,
                    r.rhs.mean,
                    r.rhs.stderr
                );
            }
            println!("wrote {} ({:.1} s)", out_dir.display(), outcome.wall_seconds);
            Ok(outcome.exit_code())
        }
        Command::List => {
            let mut stdout = std::io::stdout().lock();
            for d in registry() {
                // A closed pipe (`kpl list | head`) is not an error.
                if writeln!(stdout, "{:<24} {}\n{:<24} {}", d.name, d.summary, "", d.anchor).is_err() {
                    break;
                }
            }
            Ok(EXIT_PASS)
        }
        Command::Config { experiment } => {
            println!("{}", serde_json::to_string_pretty(&default_config(&experiment)?)?);
            Ok(EXIT_PASS)
        }
        Command::Plot { report, out } => {
            let doc = ReportDocument::load(&report)?;
            let dir = out.unwrap_or_else(|| report.parent().unwrap_or(std::path::Path::new(".")).join("plots"));
            let written = plot::write_plots(&doc, &dir)?;
            if written.is_empty() {
                eprintln!("warning: {} has nothing to plot", report.display());
            }
            for p in written {
                println!("{}", p.display());
            }
            Ok(EXIT_PASS)
        }
    }
}

fn main() -> ExitCode {
    let code = match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    };
    debug_assert!([EXIT_PASS, EXIT_ERROR, EXIT_CHECK_FAILED].contains(&code));
    ExitCode::from(code as u8)
}
