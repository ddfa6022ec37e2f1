use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use pwm_inject::cli::{run, Outcome};
use pwm_inject::config::{parse_config, Mode, RunConfig};

/// Switched PWM simulations, ripple demodulation and averaging checks.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    /// Flat TOML configuration; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Add band-limited measurement noise.
    #[arg(long)]
    noise: bool,
}

fn load(args: &Args) -> Result<RunConfig, String> {
    let mut cfg = match &args.config {
        Some(p) => {
            let doc = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            parse_config(&doc).map_err(|e| format!("{}: {e}", p.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    if let Some(o) = &args.out {
        cfg.out_dir = o.clone();
    }
    if let Some(s) = args.seed {
        cfg.rng_seed = s;
    }
    cfg.noise_enabled |= args.noise;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let cfg = match load(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let outcome = match run(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {:?} run failed: {e}", cfg.mode);
            return ExitCode::FAILURE;
        }
    };
    match &outcome {
        Outcome::Trace { csv, rows, plots } => {
            println!("{} ({rows} rows)", csv.display());
            for p in plots {
                println!("{}", p.display());
            }
        }
        Outcome::Sweep { report, orders } => {
            for c in &orders.channels {
                let flag = if c.flagged { "  FLAGGED" } else { "" };
                println!(
                    "{:<12} order {:>6.3} (expected {}){flag}",
                    c.name, c.fitted_order, c.expected_order
                );
            }
            println!("{}", report.display());
        }
        Outcome::Validate { checks } => {
            for c in checks {
                println!(
                    "{} {}: {}",
                    if c.passed { "ok  " } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
        }
    }
    ExitCode::from(outcome.exit_code() as u8)
}
