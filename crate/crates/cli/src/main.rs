use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mchks_cli::commands::{self, CliError};
use mchks_cli::{parse_config, RunConfig};

#[derive(Parser)]
#[command(name = "mchks", version, about = "Multiphase Cahn-Hilliard-Keller-Segel tumour growth simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation and write diagnostics, snapshots and a manifest.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        /// Overrides `[output] dir`.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run the property suite over potentials, truncations, sources and operators.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare the finite-difference solver against the spectral Galerkin solver.
    Compare {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Twin runs from perturbed initial data.
    Twin {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        perturb: f64,
    },
}

fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(parse_config(&text)?)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let threads = commands::thread_budget();
    match cli.command {
        Command::Run { config, output } => {
            let mut cfg = load(&config)?;
            if let Some(dir) = output {
                cfg.output.dir = dir;
            }
            let out = commands::run(&cfg)?;
            let r = &out.final_record;
            println!(
                "steps={} rows={} snapshots={} t={} energy={:e} wall={:.2}s",
                out.steps,
                out.rows,
                out.snapshots,
                r.t,
                r.energy,
                out.wall_time.as_secs_f64()
            );
        }
        Command::Verify { seed } => {
            let results = commands::verify(seed)?;
            for r in &results {
                println!("{r}");
            }
            let failed = results.iter().filter(|r| !r.passed()).count();
            let samples: usize = results.iter().map(|r| r.checked).sum();
            println!("properties={} samples={samples} failed={failed}", results.len());
            if failed > 0 {
                return Err(CliError::Verification {
                    failed,
                    total: results.len(),
                });
            }
        }
        Command::Compare { config } => {
            let cfg = load(&config)?;
            let rep = commands::compare(&cfg, threads)?;
            let [phi, pa, n, c] = rep.error.fields;
            println!(
                "k={} fd_steps={} galerkin_steps={} err_phi={phi:e} err_phi_a={pa:e} err_n={n:e} err_c={c:e} cross_error={:e}",
                rep.k,
                rep.fd_steps,
                rep.galerkin_steps,
                rep.error.rms()
            );
        }
        Command::Twin { config, perturb } => {
            let cfg = load(&config)?;
            let rep = commands::twin(&cfg, perturb, threads)?;
            let d = rep.distance;
            println!(
                "perturb={:e} steps={} lhs={:e} rhs={:e} ratio={:e}",
                rep.amplitude,
                rep.steps,
                d.lhs(),
                d.rhs,
                d.ratio()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
