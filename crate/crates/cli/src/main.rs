use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dualgp_cli::harness::{self, SliceRequest};
use dualgp_cli::{config, HarnessError};
use log::{info, LevelFilter};

#[derive(Parser)]
#[command(
    name = "dualgp",
    version,
    about = "Gaussian-process dual control experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and write its per-step trace.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "trace.csv")]
        out: PathBuf,
    },
    /// Rerun an episode and export the learned map along one coordinate.
    Slice {
        config: PathBuf,
        #[arg(long = "at-u", allow_negative_numbers = true)]
        at_u: f64,
        #[arg(long, default_value_t = 0)]
        coord: usize,
        #[arg(long, allow_negative_numbers = true)]
        min: f64,
        #[arg(long, allow_negative_numbers = true)]
        max: f64,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "slice.csv")]
        out: PathBuf,
    },
    /// Run seeds 0..N and summarize each.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        seeds: u64,
        #[arg(long, default_value = "summary.csv")]
        out: PathBuf,
    },
    /// Check a config and print it with all defaults expanded.
    Validate { config: PathBuf },
}

fn init_logging() {
    let level = match std::env::var("DUALGP_LOG").as_deref() {
        Ok("quiet") => LevelFilter::Off,
        Ok("debug") => LevelFilter::Debug,
        _ => LevelFilter::Info,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
}

fn execute(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run { config, out } => {
            let cfg = config::load(&config)?;
            info!(
                "running {} for {} steps (seed {})",
                cfg.scenario.name(),
                cfg.steps,
                cfg.seed
            );
            let outcome = harness::run(&cfg)?;
            harness::write_atomically(&out, |f| harness::write_trace(&outcome.records, f))?;
            if let Some(model) = &outcome.model {
                info!("training set fingerprint {}", model.fingerprint());
            }
            info!("wrote {}", out.display());
            println!("{}", outcome.summary());
        }
        Command::Slice {
            config,
            at_u,
            coord,
            min,
            max,
            n,
            out,
        } => {
            let cfg = config::load(&config)?;
            let request = SliceRequest {
                fixed_control: vec![at_u],
                coord,
                min,
                max,
                n,
            };
            request.validate()?;
            let (rows, model) = harness::slice(&cfg, &request)?;
            info!("training set fingerprint {}", model.fingerprint());
            harness::write_atomically(&out, |f| harness::write_slice(&rows, f))?;
            info!("wrote {}", out.display());
        }
        Command::Sweep { config, seeds, out } => {
            let cfg = config::load(&config)?;
            let rows = harness::sweep(&cfg, seeds)?;
            harness::write_atomically(&out, |f| harness::write_sweep(&rows, f))?;
            let ok = rows.iter().filter(|r| r.success).count();
            println!(
                "success fraction: {}/{} = {}",
                ok,
                rows.len(),
                ok as f64 / rows.len() as f64
            );
        }
        Command::Validate { config } => {
            let cfg = config::load(&config)?;
            println!("{}", cfg.to_json_pretty());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
