use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use willmore_lab::verify::{render_table, run_suite, Suite};
use willmore_lab::{campaign, driver, inspect, load_config, LabError};
use willmore_lab::{EXIT_SUITE_FAILURE, EXIT_VALIDATION};

#[derive(Parser)]
#[command(
    name = "willmore-lab",
    about = "Willmore flow runs, verification suites, and lifespan campaigns",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Flow a configured surface and record snapshots with diagnostics.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the [output] dir of the config.
        #[arg(long)]
        outdir: Option<PathBuf>,
    },
    /// Check discrete operators against their continuum behavior.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
    },
    /// Flow a family of dumbbells to termination and fit the lifespan law.
    Lifespan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        outdir: Option<PathBuf>,
    },
    /// Summarize a run directory without touching it.
    Inspect {
        #[arg(long)]
        outdir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(EXIT_VALIDATION as u8);
        }
    };

    if let Err(e) = init_threads() {
        return fail(e);
    }

    match cli.cmd {
        Cmd::Run { config, outdir } => match load_config(&config) {
            Ok(cfg) => {
                let dir = outdir.unwrap_or_else(|| cfg.output_dir.clone());
                match driver::execute_run(&cfg, &dir) {
                    Ok(outcome) => {
                        println!("{}", driver::summarize(&outcome));
                        ExitCode::SUCCESS
                    }
                    Err(e) => fail(e),
                }
            }
            Err(e) => fail(e),
        },
        Cmd::Verify { suite } => {
            let suite: Suite = match suite.parse() {
                Ok(s) => s,
                Err(msg) => return fail(LabError::Validation(msg)),
            };
            match run_suite(suite) {
                Ok(checks) => {
                    print!("{}", render_table(&checks));
                    if checks.iter().all(|c| c.pass) {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(EXIT_SUITE_FAILURE as u8)
                    }
                }
                Err(e) => fail(e),
            }
        }
        Cmd::Lifespan { config, outdir } => match load_config(&config) {
            Ok(cfg) => {
                let dir = outdir.unwrap_or_else(|| cfg.output_dir.clone());
                match campaign::run_campaign(&cfg, &dir) {
                    Ok(report) => {
                        print!("{}", campaign::summarize(&report));
                        ExitCode::SUCCESS
                    }
                    Err(e) => fail(e),
                }
            }
            Err(e) => fail(e),
        },
        Cmd::Inspect { outdir } => match inspect::inspect_dir(&outdir) {
            Ok(report) => {
                print!("{}", inspect::summarize(&report, &outdir));
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
    }
}

fn fail(e: LabError) -> ExitCode {
    eprintln!("{e}");
    ExitCode::from(e.exit_code() as u8)
}

/// WILLMORE_THREADS caps the rayon pool; unset means the rayon default.
fn init_threads() -> Result<(), LabError> {
    let Some(raw) = std::env::var_os("WILLMORE_THREADS") else {
        return Ok(());
    };
    let text = raw.to_string_lossy();
    let n: usize = text
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| {
            LabError::Validation(format!(
                "WILLMORE_THREADS must be a positive integer, got '{text}'"
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| LabError::Runtime(format!("cannot size the thread pool: {e}")))
}
