//! Subcommand implementations, independent of argument parsing.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use mchks::diagnostics::{DiagnosticsError, DiagnosticsRecord, Monitor, TwinDistance, TwinTracker};
use mchks::fields::{read_snapshot, write_snapshot, FieldError, ScalarField, State};
use mchks::galerkin::{cross_error, CrossError, EigenBasis, GalerkinError, GalerkinSystem, IntegratorOptions};
use mchks::scenario::{perturb, with_chemical_potential};
use mchks::solver::{Solver, SolverError};
use mchks::verify::{run_property_suite, PropertyResult, SuiteSize};
use mchks::RegularizedPotential;
use thiserror::Error;

use crate::config::{ConfigError, InitialSpec, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Galerkin(#[from] GalerkinError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Snapshot {
        path: PathBuf,
        #[source]
        source: FieldError,
    },
    #[error("{failed} of {total} properties failed")]
    Verification { failed: usize, total: usize },
    #[error("{count} diagnostics rows flagged invariant violations (first at t = {first_t:e})")]
    Invariant { count: usize, first_t: f64 },
}

impl CliError {
    /// Machine-readable category printed on failure.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(ConfigError::Parse { .. }) => "parse",
            CliError::Config(ConfigError::Validation { .. }) => "validation",
            CliError::Solver(SolverError::InitialData { .. }) => "validation",
            CliError::Solver(_) => "solver",
            CliError::Diagnostics(_) => "diagnostics",
            CliError::Galerkin(_) => "galerkin",
            CliError::Io { .. } | CliError::Snapshot { .. } => "io",
            CliError::Verification { .. } => "verification",
            CliError::Invariant { .. } => "invariant",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "parse" => 2,
            "validation" => 3,
            "solver" => 4,
            "io" => 5,
            "verification" => 6,
            "invariant" => 7,
            _ => 8,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Thread budget from `MCHKS_THREADS`, at least 1.
pub fn thread_budget() -> usize {
    std::env::var("MCHKS_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Runs `a` and `b`, concurrently when two threads are allowed.
fn both<A, B, RA, RB>(threads: usize, a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    if threads < 2 {
        return (a(), b());
    }
    thread::scope(|s| {
        let hb = s.spawn(b);
        let ra = a();
        (ra, hb.join().expect("worker thread panicked"))
    })
}

/// Builds the initial state with `μ = -Δφ + F_ε'(φ)`.
pub fn initial_state(cfg: &RunConfig) -> Result<State, CliError> {
    let state = match &cfg.initial {
        InitialSpec::Preset(p) => p.build(cfg.grid, cfg.seed),
        InitialSpec::Files { phi, phi_a, n, c } => {
            let load = |path: &PathBuf| -> Result<ScalarField, CliError> {
                let file = File::open(path).map_err(io_err(path))?;
                let snap = read_snapshot(&mut BufReader::new(file)).map_err(|source| CliError::Snapshot {
                    path: path.clone(),
                    source,
                })?;
                if !snap.field.grid().same_as(&cfg.grid) {
                    return Err(CliError::Snapshot {
                        path: path.clone(),
                        source: FieldError::GridMismatch("snapshot grid differs from [grid]".into()),
                    });
                }
                Ok(snap.field)
            };
            State::new(0.0, load(phi)?, ScalarField::zeros(cfg.grid), load(phi_a)?, load(n)?, load(c)?)
                .map_err(SolverError::from)?
        }
    };
    let potential = RegularizedPotential::new(cfg.params.potential, cfg.params.eps).map_err(SolverError::from)?;
    Ok(with_chemical_potential(state, &potential).map_err(SolverError::from)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub steps: usize,
    pub rows: usize,
    pub snapshots: usize,
    pub violations: usize,
    pub final_record: DiagnosticsRecord,
    pub wall_time: Duration,
}

fn write_manifest(cfg: &RunConfig, extra: &str) -> Result<(), CliError> {
    let path = cfg.output.dir.join("manifest.txt");
    let mut text = format!("# mchks {}\n", env!("CARGO_PKG_VERSION"));
    text.push_str(&cfg.to_config_text());
    text.push_str(extra);
    fs::write(&path, text).map_err(io_err(&path))
}

/// `run`: steps the configured scenario and writes the CSV, snapshots and
/// manifest. Invariant violations are reported after all outputs exist.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let out = &cfg.output;
    let snap_dir = out.dir.join("snapshots");
    fs::create_dir_all(&snap_dir).map_err(io_err(&snap_dir))?;
    write_manifest(cfg, "")?;
    let csv_path = out.dir.join("diagnostics.csv");
    let mut csv = BufWriter::new(File::create(&csv_path).map_err(io_err(&csv_path))?);
    writeln!(csv, "{}", DiagnosticsRecord::CSV_HEADER).map_err(io_err(&csv_path))?;

    let solver = Solver::new(cfg.grid, cfg.params, cfg.solver)?;
    let mut monitor = Monitor::new(cfg.params, cfg.solver.dt, out.separation_t0)?;
    let initial = initial_state(cfg)?;
    let total = cfg.solver.steps_from(initial.t);
    let mut step = 0usize;
    let mut rows = 0usize;
    let mut snapshots = 0usize;
    let mut violations = 0usize;
    let mut first_violation = None;
    let mut last = None;
    let mut pending: Option<CliError> = None;
    let summary = solver.run(initial, |state, report| {
        let result = (|| -> Result<(), CliError> {
            let rec = monitor.record(state, report)?;
            if rec.violations() {
                violations += 1;
                first_violation.get_or_insert(rec.t);
            }
            let is_last = step == total;
            if step % out.diagnostics_every == 0 || is_last {
                rec.write_csv_row(&mut csv).map_err(io_err(&csv_path))?;
                rows += 1;
            }
            let snap_due = if out.snapshot_every == 0 {
                step == 0 || is_last
            } else {
                step % out.snapshot_every == 0 || is_last
            };
            if snap_due {
                for (name, field) in state.fields() {
                    let path = snap_dir.join(format!("step{step:07}_{name}.bin"));
                    let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
                    write_snapshot(&mut w, field, name, state.t).map_err(io_err(&path))?;
                    w.flush().map_err(io_err(&path))?;
                }
                snapshots += 1;
            }
            last = Some(rec);
            step += 1;
            Ok(())
        })();
        result.map_err(|e| {
            let msg = e.to_string();
            pending = Some(e);
            SolverError::Stopped(msg)
        })
    });
    let summary = match summary {
        Ok(s) => s,
        Err(e) => return Err(pending.take().unwrap_or(CliError::Solver(e))),
    };
    csv.flush().map_err(io_err(&csv_path))?;
    write_manifest(
        cfg,
        &format!(
            "\n# steps = {}\n# csv_rows = {rows}\n# snapshots = {snapshots}\n# flagged_rows = {violations}\n",
            summary.steps
        ),
    )?;
    if violations > 0 {
        return Err(CliError::Invariant {
            count: violations,
            first_t: first_violation.unwrap_or(f64::NAN),
        });
    }
    Ok(RunOutcome {
        steps: summary.steps,
        rows,
        snapshots,
        violations,
        final_record: last.expect("the observer sees the initial state"),
        wall_time: summary.wall_time,
    })
}

/// `verify`: the property suite with default sample counts.
pub fn verify(seed: u64) -> Result<Vec<PropertyResult>, CliError> {
    verify_with(SuiteSize::default(), seed)
}

pub fn verify_with(size: SuiteSize, seed: u64) -> Result<Vec<PropertyResult>, CliError> {
    Ok(run_property_suite(size, seed))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub k: usize,
    pub error: CrossError,
    pub fd_steps: usize,
    pub galerkin_steps: usize,
    pub wall_time: Duration,
}

/// `compare`: FD and Galerkin from the same initial data to `t_end`.
pub fn compare(cfg: &RunConfig, threads: usize) -> Result<CompareReport, CliError> {
    let start = Instant::now();
    let initial = initial_state(cfg)?;
    let basis = EigenBasis::new(cfg.grid.lx(), cfg.grid.ly(), cfg.galerkin_k)?;
    let system = GalerkinSystem::new(basis.clone(), cfg.params)?;
    let g0 = system.project_state(&initial)?;
    let solver = Solver::new(cfg.grid, cfg.params, cfg.solver)?;
    let t_end = cfg.solver.t_end;
    let (fd, gk) = both(
        threads,
        || solver.run(initial.clone(), |_, _| Ok(())),
        || system.integrate(&g0, t_end, IntegratorOptions::default(), |_| {}),
    );
    let fd = fd?;
    let (g, stats) = gk?;
    Ok(CompareReport {
        k: cfg.galerkin_k,
        error: cross_error(&fd.final_state, &basis, &g),
        fd_steps: fd.steps,
        galerkin_steps: stats.accepted,
        wall_time: start.elapsed(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwinReport {
    pub amplitude: f64,
    pub steps: usize,
    pub distance: TwinDistance,
}

/// `twin`: base and perturbed runs advanced in lockstep.
pub fn twin(cfg: &RunConfig, amplitude: f64, threads: usize) -> Result<TwinReport, CliError> {
    let base = initial_state(cfg)?;
    let other = perturb(&base, amplitude);
    let solver = Solver::new(cfg.grid, cfg.params, cfg.solver)?;
    solver.validate_initial(&other)?;
    let mut tracker = TwinTracker::new();
    tracker.push(&base, &other)?;
    let steps = cfg.solver.steps_from(base.t);
    let t0 = base.t;
    let (mut a, mut b) = (base, other);
    for k in 1..=steps {
        let (ra, rb) = both(threads, || solver.step(&a), || solver.step(&b));
        let t = t0 + k as f64 * cfg.solver.dt;
        a = ra?.0;
        b = rb?.0;
        a.t = t;
        b.t = t;
        tracker.push(&a, &b)?;
    }
    Ok(TwinReport {
        amplitude,
        steps,
        distance: tracker.distance(),
    })
}
