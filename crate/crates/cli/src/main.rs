use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use car_core::simlab::{redesign_from_csv, run_diagnostics, run_experiment, DiagnoseMode, ExperimentResult, RunOptions};
use car_core::{CarError, ExperimentConfig, TrialConfig};
use car_service::{ServiceConfig, ServiceError};
use clap::{Parser, Subcommand, ValueEnum};

mod allocate;

#[derive(Parser)]
#[command(name = "car", version, about = "Covariate-adaptive randomization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment and write the summary table.
    Simulate {
        config: PathBuf,
        /// CSV destination; defaults to `output.csv` of the config, then stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSON destination; defaults to `output.json` of the config.
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        reps_override: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Chain diagnostics for every policy of an experiment config.
    Diagnose {
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        reps_override: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Allocate units read as JSON lines from stdin.
    Allocate {
        trial_config: PathBuf,
        /// Event log; replayed first when it already exists.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Re-randomize the rows of a CSV file under every policy.
    Redesign {
        config: PathBuf,
        /// Replaces the path given in the config.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        reps_override: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value = "car-data")]
        data_dir: PathBuf,
        #[arg(long, env = "CAR_TOKEN", hide_env_values = true)]
        token: Option<String>,
        #[arg(long)]
        cors_origin: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Drift,
    Rhotilde,
    Normality,
}

impl From<Mode> for DiagnoseMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Drift => DiagnoseMode::Drift,
            Mode::Rhotilde => DiagnoseMode::Rhotilde,
            Mode::Normality => DiagnoseMode::Normality,
        }
    }
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("CAR_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("CAR_THREADS must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

fn write_csv(result: &ExperimentResult, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => {
            let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            result.write_csv(BufWriter::new(f))?;
        }
        None => result.write_csv(io::stdout().lock())?,
    }
    Ok(())
}

fn write_json(value: &serde_json::Value, path: &Path) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

fn emit(result: &ExperimentResult, config: &ExperimentConfig, out: Option<PathBuf>, json: Option<PathBuf>) -> Result<()> {
    write_csv(result, out.or_else(|| config.output.csv.clone()).as_deref())?;
    if let Some(path) = json.or_else(|| config.output.json.clone()) {
        write_json(&result.to_json(), &path)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            out,
            json,
            reps_override,
            seed,
        } => {
            init_threads()?;
            let config = ExperimentConfig::from_path(&config)?;
            let opts = RunOptions {
                replications: reps_override,
                base_seed: seed,
            };
            emit(&run_experiment(&config, opts)?, &config, out, json)
        }
        Command::Diagnose {
            config,
            mode,
            reps_override,
            seed,
        } => {
            init_threads()?;
            let config = ExperimentConfig::from_path(&config)?;
            let opts = RunOptions {
                replications: reps_override,
                base_seed: seed,
            };
            let report = run_diagnostics(&config, mode.into(), opts)?;
            let mut stdout = io::stdout().lock();
            serde_json::to_writer_pretty(&mut stdout, &report)?;
            writeln!(stdout)?;
            Ok(())
        }
        Command::Allocate { trial_config, log } => {
            let config = TrialConfig::from_path(&trial_config)?;
            allocate::run(config, log.as_deref(), io::stdin().lock(), io::stdout().lock())
        }
        Command::Redesign {
            config,
            csv,
            out,
            reps_override,
            seed,
        } => {
            init_threads()?;
            let config = ExperimentConfig::from_path(&config)?;
            let opts = RunOptions {
                replications: reps_override,
                base_seed: seed,
            };
            let result = redesign_from_csv(&config, csv.as_deref(), opts)?;
            emit(&result, &config, out, None)
        }
        Command::Serve {
            port,
            host,
            data_dir,
            token,
            cors_origin,
        } => serve(&host, port, ServiceConfig {
            data_dir,
            token,
            cors_origin,
        }),
    }
}

fn serve(host: &str, port: u16, config: ServiceConfig) -> Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let addr: SocketAddr = format!("{host}:{port}").parse().with_context(|| format!("bad listen address {host}:{port}"))?;
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        car_service::serve(listener, &config, shutdown_signal()).await?;
        eprintln!("shut down");
        Ok(())
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

/// Config problems exit with 2, everything else with 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    let config = err.chain().any(|e| match e.downcast_ref::<CarError>() {
        Some(CarError::Config { .. } | CarError::Json(_)) => true,
        _ => matches!(
            e.downcast_ref::<ServiceError>(),
            Some(ServiceError::Core(CarError::Config { .. } | CarError::Json(_)))
        ),
    });
    if config {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
