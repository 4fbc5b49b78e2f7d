use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use hitl_conformal::agents::{
    resolve_policies, run_cohort, simulate, truth_oracle, CohortOptions, HttpApi,
};
use hitl_conformal::analysis::report;
use hitl_conformal::conformal::Treatment;
use hitl_conformal::service::{read_export, spawn, write_export, ExperimentConfig, TrialService};
use hitl_conformal::{Error, Result};

#[derive(Parser)]
#[command(
    name = "hitl",
    version,
    about = "Conformal prediction sets for human-in-the-loop experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the trial API for one experiment config.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Simulated participants.
    Agents {
        #[command(subcommand)]
        command: AgentsCommand,
    },
    /// Statistics over exported records.
    Analyze {
        #[command(subcommand)]
        command: AnalyzeCommand,
    },
    /// Write the coverage-matched calibration for a config.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum AgentsCommand {
    /// Run a cohort and write the exported records as NDJSON.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Arms to enroll; defaults to the config's treatments.
    #[arg(long, value_delimiter = ',')]
    arms: Option<Vec<Treatment>>,
    /// Participants per arm; defaults to the config's participants_per_arm.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Drive an already running service instead of an embedded one.
    #[arg(long)]
    url: Option<String>,
    /// Log directory of the embedded service; must not already hold events.
    #[arg(long)]
    log_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Build the JSON report and CSV tables.
    Report {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csv_dir: Option<PathBuf>,
    },
}

async fn serve(config: PathBuf, addr: SocketAddr) -> Result<()> {
    let exp = ExperimentConfig::load(config)?.resolve()?;
    let svc = Arc::new(TrialService::open(exp)?);
    let server = spawn(svc, addr).await?;
    println!("listening on {}", server.base_url());
    std::io::stdout().flush()?;
    shutdown_signal().await;
    server.shutdown().await
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate()).expect("signal handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    let _ = tokio::signal::ctrl_c().await;
}

async fn agents_run(args: RunArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(arms) = args.arms {
        cfg.treatments = arms;
    }
    if let Some(n) = args.n {
        cfg.participants_per_arm = n;
    }
    let mut opts = CohortOptions::new(cfg.task_id.clone());
    opts.concurrency = cfg.agents.concurrency;
    let lines = match args.url {
        Some(url) => {
            let exp = cfg.resolve()?;
            let policies = resolve_policies(&exp, &exp.config.treatments)?;
            run_cohort(&HttpApi::new(url), &policies, truth_oracle(&exp), &opts).await?
        }
        None => {
            if let Some(dir) = args.log_dir {
                cfg.service.log_dir = dir;
            }
            let events = cfg.service.log_dir.join("events.ndjson");
            if std::fs::metadata(&events).is_ok_and(|m| m.len() > 0) {
                return Err(Error::Config(format!(
                    "{} already holds events; pass an empty --log-dir",
                    events.display()
                )));
            }
            cfg.service.enforce_timing = false;
            simulate(cfg.resolve()?, &opts).await?
        }
    };
    let mut out = BufWriter::new(File::create(&args.out)?);
    write_export(&mut out, &lines)?;
    eprintln!("wrote {} lines to {}", lines.len(), args.out.display());
    Ok(())
}

fn analyze(
    records: PathBuf,
    config: PathBuf,
    out: PathBuf,
    csv_dir: Option<PathBuf>,
) -> Result<()> {
    let exp = ExperimentConfig::load(config)?.resolve()?;
    let lines = read_export(BufReader::new(File::open(&records)?))?;
    let report = report(&lines, &exp)?;
    std::fs::write(&out, report.to_json()?)?;
    if let Some(dir) = csv_dir {
        report.write_csvs(dir)?;
    }
    for notice in &report.notices {
        eprintln!("notice: {notice}");
    }
    Ok(())
}

fn calibrate(config: PathBuf, out: PathBuf) -> Result<()> {
    let exp = ExperimentConfig::load(config)?.resolve()?;
    exp.calibration.write(&out)?;
    eprintln!(
        "alpha_hat = {} (q_hat = {}, n = {})",
        exp.alpha_hat, exp.calibration.q_hat, exp.calibration.n
    );
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let result = match Cli::parse().command {
        Command::Serve { config, addr } => serve(config, addr).await,
        Command::Agents {
            command: AgentsCommand::Run(args),
        } => agents_run(args).await,
        Command::Analyze {
            command:
                AnalyzeCommand::Report {
                    records,
                    config,
                    out,
                    csv_dir,
                },
        } => analyze(records, config, out, csv_dir),
        Command::Calibrate { config, out } => calibrate(config, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
