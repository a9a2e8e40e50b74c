//! `gtdd run|study|sweep <config>`.
//!
//! Exit status: 0 when every solve converged, 2 when one did not, 1 on
//! configuration errors and solver failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gtdd::bench::config::RunConfig;
use gtdd::bench::driver::{self, Axis};
use gtdd::Error;

#[derive(Parser)]
#[command(name = "gtdd", version, about = "Space-time domain decomposition for advection-diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory (default: `out/<name>`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed of randomized initial guesses; overrides the config value.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one configuration.
    Run { config: PathBuf },
    /// Refine in space or time and report errors and rates.
    Study {
        #[arg(long, value_enum)]
        axis: AxisArg,
        config: PathBuf,
    },
    /// Jacobi residual over a grid of Robin parameters.
    Sweep { config: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Space,
    Time,
}

fn load(path: &Path, seed: Option<u64>) -> gtdd::Result<RunConfig> {
    let mut cfg = RunConfig::from_path(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> gtdd::Result<bool> {
    let config = match &cli.command {
        Command::Run { config } | Command::Study { config, .. } | Command::Sweep { config } => config,
    };
    let cfg = load(config, cli.seed)?;
    let out = cli.out.clone().unwrap_or_else(|| Path::new("out").join(&cfg.name));
    match &cli.command {
        Command::Run { .. } => {
            let r = driver::run(&cfg, Some(&out))?;
            let s = &r.summary;
            println!(
                "{}: {:?} converged={} iterations={} subdomain_solves={} final_residual={:.3e}",
                s.name, s.method, s.converged, s.iterations, s.subdomain_solves, s.final_residual
            );
            if let Some(e) = &s.errors {
                println!("errors ({}): c={:.4e} phi={:.4e}", s.error_reference.as_deref().unwrap_or("-"), e.c, e.phi);
            }
            println!("outputs in {}", out.display());
            Ok(s.converged)
        }
        Command::Study { axis, .. } => {
            let axis = match axis {
                AxisArg::Space => Axis::Space,
                AxisArg::Time => Axis::Time,
            };
            let r = driver::convergence_study(&cfg, axis, Some(&out))?;
            let rate = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}"));
            for row in &r.rows {
                println!(
                    "{:<14} h={:.4e} steps={:?} c={:.4e} [{}] phi={:.4e} [{}]",
                    row.label,
                    row.h,
                    row.steps,
                    row.c_error,
                    rate(row.c_rate),
                    row.phi_error,
                    rate(row.phi_rate)
                );
            }
            println!("outputs in {}", out.display());
            Ok(r.converged())
        }
        Command::Sweep { .. } => {
            let r = driver::sweep(&cfg, Some(&out))?;
            println!(
                "configured ({:.4e}, {:.4e}) -> {:.3e}; best ({:.4e}, {:.4e}) -> {:.3e}",
                r.configured.alpha12,
                r.configured.alpha21,
                r.configured.relative_residual,
                r.best.alpha12,
                r.best.alpha21,
                r.best.relative_residual
            );
            println!("outputs in {}", out.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("not converged");
            ExitCode::from(2)
        }
        Err(e @ Error::Config { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(1)
        }
    }
}
