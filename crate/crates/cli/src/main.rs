use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kal_core::pipeline::{cli_oracle, cli_plotdata, cli_run, cli_sweep, PipelineError};
use kal_core::verify::{run_all, VerifyConfig};
use kal_core::{ConfigError, RunConfig};

const EXIT_CONFIG: u8 = 1;
const EXIT_VERIFY: u8 = 2;

/// Kinetic annihilation particle simulator.
#[derive(Parser, Debug)]
#[command(name = "kal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate an ensemble and write moments, correlations, residuals and self-similar diagnostics.
    Run { config: PathBuf },
    /// Repeat a run at several N0 (with lambda = N0) and join against the limit oracles.
    Sweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        n0: Vec<usize>,
    },
    /// Run the acceptance criteria and write verify.csv.
    Verify { config: Option<PathBuf> },
    /// Tabulate the Maxwell moment ODE and the death chain for a config.
    Oracle { config: PathBuf },
    /// Collect every CSV below a directory into one long-format table.
    Plotdata { dir: PathBuf },
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("KAL_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("KAL_THREADS: expected a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("KAL_THREADS: {e}"))
}

fn load(path: &Path) -> Result<RunConfig, PipelineError> {
    Ok(RunConfig::from_path(path)?)
}

fn load_verify(path: Option<&Path>) -> Result<VerifyConfig, ConfigError> {
    path.map_or_else(|| Ok(VerifyConfig::default()), VerifyConfig::from_path)
}

fn report(result: Result<PathBuf, PipelineError>) -> ExitCode {
    match result {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn fail(e: &PipelineError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(EXIT_CONFIG);
    }
    match cli.command {
        Command::Run { config } => report(load(&config).and_then(|cfg| {
            let art = cli_run(&cfg)?;
            for w in &art.warnings {
                eprintln!("warning: {w}");
            }
            Ok(art.dir)
        })),
        Command::Sweep { config, n0 } => report(load(&config).and_then(|cfg| cli_sweep(&cfg, &n0))),
        Command::Oracle { config } => report(load(&config).and_then(|cfg| cli_oracle(&cfg))),
        Command::Plotdata { dir } => report(cli_plotdata(&dir)),
        Command::Verify { config } => {
            let cfg = match load_verify(config.as_deref()) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            match run_all(&cfg, |r| println!("{}", r.summary())) {
                Ok(reports) => {
                    let failed = reports.iter().filter(|r| !r.passed).count();
                    println!(
                        "{} of {} criteria passed",
                        reports.len() - failed,
                        reports.len()
                    );
                    if failed == 0 {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(EXIT_VERIFY)
                    }
                }
                Err(e) => fail(&e),
            }
        }
    }
}
