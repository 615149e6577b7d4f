//! Semi-implicit, operator-decoupled time stepping of the regularized
//! system on a cell-centered grid.
//!
//! One step advances, in order,
//!
//! ```text
//! (1) n:    (I - dtΔ) n'  = n + dt (χ_φ p(φ) + S_n(φ, φ_a, n))
//! (2) c:    (I - dtΔ) c'  = c + dt (χ_a (φ_a)_+ + S_c(φ, φ_a, n', c))
//! (3) φ_a:  [1 - dt θ(κ₀ - κ_∞(φ_a)_+)] φ_a' - dt div(𝕟∇φ_a')
//!                         = φ_a - dt χ_a div(T(φ_a) 𝕟 ∇c')
//! (4) φ:    φ' - φ = dt div(𝕞∇(μ' - χ_φ n')) + dt (𝓗(φ, n') - m φ')
//!           μ' = -Δφ' + β(φ') + s(φ' - φ) + π(φ)
//! ```
//!
//! where coefficients without a prime are frozen at the start of the step.
//! Step (4) is solved by Newton's method in `φ'` with `μ'` eliminated.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::fields::{
    apply_div_flux, apply_laplacian, CosineTransform, FaceAverage, FaceCoefficients, FieldError, Grid2D, ScalarField,
    State,
};
use crate::krylov::{self, KrylovError};
use crate::potentials::{PotentialError, PotentialMode, RegularizedPotential};
use crate::sources::{positive_part, ModelParams, ParamError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialAssumption {
    /// `F(φ⁰)` finite everywhere and `mean(φ⁰) ∈ D(β)`.
    PhiEnergy,
    /// `φ_a⁰ ≥ 0`.
    PhiANonnegative,
    /// `0 ≤ c⁰ ≤ 1`.
    CUnitBounds,
}

impl std::fmt::Display for InitialAssumption {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitialAssumption::PhiEnergy => "phi0 has finite energy and admissible mean",
            InitialAssumption::PhiANonnegative => "phi_a0 >= 0",
            InitialAssumption::CUnitBounds => "0 <= c0 <= 1",
        })
    }
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("newton iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NewtonDivergence { iterations: usize, residual: f64 },
    #[error("non-finite value in {field} at index {index}")]
    NonFiniteField { field: &'static str, index: usize },
    #[error("linear solve for {substep} failed: {source}")]
    LinearSolve {
        substep: &'static str,
        #[source]
        source: KrylovError,
    },
    #[error("initial data violate `{assumption}`: {detail}")]
    InitialData {
        assumption: InitialAssumption,
        detail: String,
    },
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("run stopped: {0}")]
    Stopped(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    pub newton_tol: f64,
    pub newton_max: usize,
    pub linear_tol: f64,
    pub linear_max: usize,
    /// Stabilization `s ≥ 0` added to the implicit convex part.
    pub stabilization: f64,
    /// Zeroes `𝓗 - mφ`, `S_a`, `S_n` and `S_c`.
    pub sources_off: bool,
    pub face_average: FaceAverage,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 1.0,
            newton_tol: 1e-10,
            newton_max: 50,
            linear_tol: 1e-10,
            linear_max: 2000,
            stabilization: 0.0,
            sources_off: false,
            face_average: FaceAverage::Arithmetic,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |msg: String| Err(SolverError::Config(msg));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end must be nonnegative, got {}", self.t_end));
        }
        if !(self.newton_tol > 0.0 && self.linear_tol > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if self.newton_max == 0 || self.linear_max == 0 {
            return bad("iteration limits must be positive".into());
        }
        if !(self.stabilization >= 0.0 && self.stabilization.is_finite()) {
            return bad(format!("stabilization must be nonnegative, got {}", self.stabilization));
        }
        Ok(())
    }

    /// Number of fixed-size steps needed to reach `t_end` from `t0`.
    pub fn steps_from(&self, t0: f64) -> usize {
        let span = (self.t_end - t0).max(0.0) / self.dt;
        (span * (1.0 - 1e-12)).ceil() as usize
    }
}

/// Additive forcing of the four evolution equations, evaluated at the new
/// time level.
#[derive(Debug, Clone, PartialEq)]
pub struct Forcing {
    pub phi: ScalarField,
    pub phi_a: ScalarField,
    pub n: ScalarField,
    pub c: ScalarField,
}

pub type ForcingFn = dyn Fn(f64) -> Forcing + Send + Sync;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepReport {
    /// Time reached by the step.
    pub t: f64,
    pub newton_iterations: usize,
    pub newton_residual: f64,
    pub newton_linear_iterations: usize,
    pub phi_a_linear_iterations: usize,
    pub phi_a_linear_residual: f64,
    /// `max |𝓗(φⁿ, n')|` used by the step.
    pub max_proliferation: f64,
    /// `∫φ' - ∫φ` and `dt ∫(𝓗 - mφ' + f_φ)`.
    pub phi_mass_change: f64,
    pub phi_source_integral: f64,
    /// `∫φ_a' - ∫φ_a` and `dt ∫(S_a + f_a)`.
    pub phi_a_mass_change: f64,
    pub phi_a_source_integral: f64,
    /// `dt` times the Lipschitz constant of the explicitly treated terms.
    pub explicit_lipschitz: f64,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub steps: usize,
    pub final_state: State,
    pub max_newton_iterations: usize,
    pub total_newton_iterations: usize,
    pub wall_time: Duration,
}

pub struct Solver {
    params: ModelParams,
    cfg: SolverConfig,
    potential: RegularizedPotential,
    grid: Grid2D,
    dct: CosineTransform,
    forcing: Option<Box<ForcingFn>>,
}

impl std::fmt::Debug for Solver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Solver")
            .field("params", &self.params)
            .field("cfg", &self.cfg)
            .field("grid", &self.grid)
            .field("forced", &self.forcing.is_some())
            .finish()
    }
}

fn finite_or(field: &'static str, v: &[f64]) -> Result<(), SolverError> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(SolverError::NonFiniteField { field, index }),
        None => Ok(()),
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

impl Solver {
    pub fn new(grid: Grid2D, params: ModelParams, cfg: SolverConfig) -> Result<Self, SolverError> {
        params.validate()?;
        cfg.validate()?;
        let potential = RegularizedPotential::new(params.potential, params.eps)?;
        Ok(Self {
            params,
            cfg,
            potential,
            grid,
            dct: CosineTransform::new(grid),
            forcing: None,
        })
    }

    pub fn with_forcing(mut self, forcing: Box<ForcingFn>) -> Self {
        self.forcing = Some(forcing);
        self
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn potential(&self) -> &RegularizedPotential {
        &self.potential
    }

    /// Checks the admissibility of initial data.
    pub fn validate_initial(&self, state: &State) -> Result<(), SolverError> {
        if !state.grid().same_as(&self.grid) {
            return Err(FieldError::GridMismatch("initial state is not on the solver grid".into()).into());
        }
        if let Err((name, _)) = state.check_finite() {
            let values = state.fields().into_iter().find(|(n, _)| *n == name).map(|(_, f)| f.values()).unwrap_or(&[]);
            finite_or(name, values)?;
        }
        let spec = &self.params.potential;
        if let Some(bad) = state.phi.values().iter().find(|&&v| !spec.eval_f(v).is_finite()) {
            return Err(SolverError::InitialData {
                assumption: InitialAssumption::PhiEnergy,
                detail: format!("F({bad}) is infinite for the {} potential", spec.name()),
            });
        }
        let mean = state.phi.mean();
        if !spec.beta_domain().contains(mean) {
            return Err(SolverError::InitialData {
                assumption: InitialAssumption::PhiEnergy,
                detail: format!("mean of phi0 is {mean}, outside the domain of the convex part"),
            });
        }
        if let Some(bad) = state.phi_a.values().iter().find(|&&v| v < 0.0) {
            return Err(SolverError::InitialData {
                assumption: InitialAssumption::PhiANonnegative,
                detail: format!("phi_a0 takes the value {bad}"),
            });
        }
        if let Some(bad) = state.c.values().iter().find(|&&v| !(0.0..=1.0).contains(&v)) {
            return Err(SolverError::InitialData {
                assumption: InitialAssumption::CUnitBounds,
                detail: format!("c0 takes the value {bad}"),
            });
        }
        Ok(())
    }

    /// `(I - dtΔ)⁻¹ rhs`, exact through the cosine transform.
    fn helmholtz(&self, rhs: &[f64]) -> Vec<f64> {
        let dt = self.cfg.dt;
        let mut out = vec![0.0; rhs.len()];
        self.dct.apply_function(rhs, |lam| 1.0 / (1.0 - dt * lam), &mut out);
        out
    }

    /// Chemical potential `-Δφ' + β(φ') + s(φ' - φ) + π(φ)` for the state
    /// pair `(φ, φ')`.
    pub fn chemical_potential(&self, phi_old: &[f64], phi_new: &[f64]) -> Result<Vec<f64>, SolverError> {
        let s = self.cfg.stabilization;
        let mut mu = vec![0.0; phi_new.len()];
        apply_laplacian(&self.grid, phi_new, &mut mu);
        for i in 0..mu.len() {
            let w = phi_new[i];
            let p = phi_old[i];
            mu[i] = -mu[i] + self.potential.convex_derivative(w)? + s * (w - p) + self.params.potential.pi(p);
        }
        Ok(mu)
    }

    /// Advances `state` by one step of size `dt`.
    pub fn step(&self, state: &State) -> Result<(State, StepReport), SolverError> {
        let start = Instant::now();
        let p = &self.params;
        let cfg = &self.cfg;
        let grid = self.grid;
        let dt = cfg.dt;
        let t1 = state.t + dt;
        let off = cfg.sources_off;
        let len = grid.len();
        let phi = state.phi.values();
        let pa = state.phi_a.values();
        let n = state.n.values();
        let c = state.c.values();
        let forcing = self.forcing.as_ref().map(|f| f(t1));
        let cell = grid.cell_area();

        // (1) nutrient
        let mut rhs: Vec<f64> = (0..len)
            .map(|i| {
                let src = if off { 0.0 } else { p.s_n(phi[i], pa[i], n[i]) };
                n[i] + dt * (p.chi_phi * p.p(phi[i]) + src)
            })
            .collect();
        if let Some(f) = &forcing {
            rhs.iter_mut().zip(f.n.values()).for_each(|(r, v)| *r += dt * v);
        }
        let n1 = self.helmholtz(&rhs);
        finite_or("n", &n1)?;

        // (2) angiogenic factor
        let mut rhs: Vec<f64> = (0..len)
            .map(|i| {
                let src = if off { 0.0 } else { p.s_c(phi[i], pa[i], n1[i], c[i]) };
                c[i] + dt * (p.chi_a * positive_part(pa[i]) + src)
            })
            .collect();
        if let Some(f) = &forcing {
            rhs.iter_mut().zip(f.c.values()).for_each(|(r, v)| *r += dt * v);
        }
        let c1 = self.helmholtz(&rhs);
        finite_or("c", &c1)?;

        // (3) angiogenic phase
        let ent = p.entropy_truncation();
        let mob_n: Vec<f64> = (0..len).map(|i| p.mobility_n(pa[i], c[i])).collect();
        let k_n = FaceCoefficients::from_cells(&grid, &mob_n, cfg.face_average);
        let trunc: Vec<f64> = pa.iter().map(|&v| ent.truncate(v)).collect();
        let k_chem = FaceCoefficients::from_cells(&grid, &trunc, FaceAverage::Arithmetic).times(&k_n);
        let mut chem = vec![0.0; len];
        apply_div_flux(&grid, &k_chem, &c1, &mut chem);
        let growth: Vec<f64> = (0..len)
            .map(|i| {
                if off {
                    0.0
                } else {
                    p.theta(phi[i], c[i]) * (p.kappa0 - p.kappa_inf * positive_part(pa[i]))
                }
            })
            .collect();
        let diag: Vec<f64> = growth.iter().map(|g| 1.0 - dt * g).collect();
        if let Some(i) = diag.iter().position(|&d| d <= 0.0) {
            return Err(SolverError::Config(format!(
                "dt = {dt} too large for the logistic growth rate {} at cell {i}",
                growth[i]
            )));
        }
        let mut rhs: Vec<f64> = (0..len).map(|i| pa[i] - dt * p.chi_a * chem[i]).collect();
        if let Some(f) = &forcing {
            rhs.iter_mut().zip(f.phi_a.values()).for_each(|(r, v)| *r += dt * v);
        }
        let d_bar = diag.iter().sum::<f64>() / len as f64;
        let k_bar = k_n.mean();
        let apply_a = |x: &[f64], y: &mut [f64]| {
            apply_div_flux(&grid, &k_n, x, y);
            for i in 0..x.len() {
                y[i] = diag[i] * x[i] - dt * y[i];
            }
        };
        let pre_a = |r: &[f64], z: &mut [f64]| self.dct.apply_function(r, |lam| 1.0 / (d_bar - dt * k_bar * lam), z);
        let mut pa1 = pa.to_vec();
        let out_a = krylov::pcg(apply_a, pre_a, &rhs, &mut pa1, cfg.linear_tol, cfg.linear_max)
            .map_err(|source| SolverError::LinearSolve { substep: "phi_a", source })?;
        finite_or("phi_a", &pa1)?;
        let mut phi_a_source = 0.0;
        for i in 0..len {
            phi_a_source += growth[i] * pa1[i];
        }
        if let Some(f) = &forcing {
            phi_a_source += f.phi_a.values().iter().sum::<f64>();
        }

        // (4) Cahn–Hilliard pair
        let s = cfg.stabilization;
        let mob_m: Vec<f64> = (0..len).map(|i| p.mobility_m(phi[i], pa[i], n[i])).collect();
        let k_m = FaceCoefficients::from_cells(&grid, &mob_m, cfg.face_average);
        let km_bar = k_m.mean();
        let decay = if off { 0.0 } else { p.m };
        let prolif: Vec<f64> = (0..len).map(|i| if off { 0.0 } else { p.proliferation(phi[i], n1[i]) }).collect();
        let mut base: Vec<f64> = (0..len).map(|i| phi[i] + dt * prolif[i]).collect();
        if let Some(f) = &forcing {
            base.iter_mut().zip(f.phi.values()).for_each(|(b, v)| *b += dt * v);
        }
        let residual = |w: &[f64]| -> Result<Vec<f64>, SolverError> {
            let mut chem = self.chemical_potential(phi, w)?;
            for (m, nv) in chem.iter_mut().zip(&n1) {
                *m -= p.chi_phi * nv;
            }
            let mut flux = vec![0.0; len];
            apply_div_flux(&grid, &k_m, &chem, &mut flux);
            Ok((0..len).map(|i| (1.0 + dt * decay) * w[i] - base[i] - dt * flux[i]).collect())
        };

        let mut w = phi.to_vec();
        let mut r = residual(&w)?;
        let mut rnorm = max_abs(&r);
        let mut newton_iterations = 0;
        let mut newton_linear = 0;
        while rnorm > cfg.newton_tol {
            if newton_iterations == cfg.newton_max || !rnorm.is_finite() {
                return Err(SolverError::NewtonDivergence {
                    iterations: newton_iterations,
                    residual: rnorm,
                });
            }
            let slope: Vec<f64> = w
                .iter()
                .map(|&v| self.potential.convex_derivative_slope(v).map(|d| d + s))
                .collect::<Result<_, _>>()?;
            let slope_bar = slope.iter().sum::<f64>() / len as f64;
            let apply_j = |x: &[f64], y: &mut [f64]| {
                let mut lap = vec![0.0; x.len()];
                apply_laplacian(&grid, x, &mut lap);
                let inner: Vec<f64> = (0..x.len()).map(|i| -lap[i] + slope[i] * x[i]).collect();
                apply_div_flux(&grid, &k_m, &inner, y);
                for i in 0..x.len() {
                    y[i] = (1.0 + dt * decay) * x[i] - dt * y[i];
                }
            };
            let pre_j = |r: &[f64], z: &mut [f64]| {
                self.dct.apply_function(
                    r,
                    |lam| 1.0 / (1.0 + dt * decay + dt * km_bar * (lam * lam - slope_bar * lam)),
                    z,
                )
            };
            let neg_r: Vec<f64> = r.iter().map(|v| -v).collect();
            let mut delta = vec![0.0; len];
            let out = krylov::bicgstab(apply_j, pre_j, &neg_r, &mut delta, cfg.linear_tol, cfg.linear_max)
                .map_err(|source| SolverError::LinearSolve { substep: "newton", source })?;
            newton_linear += out.iterations;
            for (wi, di) in w.iter_mut().zip(&delta) {
                *wi += di;
            }
            newton_iterations += 1;
            r = residual(&w)?;
            rnorm = max_abs(&r);
        }
        // remove the mean of the residual; only the reaction part carries mass
        let defect = r.iter().sum::<f64>() / len as f64 / (1.0 + dt * decay);
        w.iter_mut().for_each(|v| *v -= defect);
        finite_or("phi", &w)?;
        let mu1 = self.chemical_potential(phi, &w)?;
        finite_or("mu", &mu1)?;

        let mut phi_source = 0.0;
        for i in 0..len {
            phi_source += prolif[i] - decay * w[i];
        }
        if let Some(f) = &forcing {
            phi_source += f.phi.values().iter().sum::<f64>();
        }
        let phi_mass_change = (w.iter().sum::<f64>() - phi.iter().sum::<f64>()) * cell;
        let phi_a_mass_change = (pa1.iter().sum::<f64>() - pa.iter().sum::<f64>()) * cell;

        let report = StepReport {
            t: t1,
            newton_iterations,
            newton_residual: rnorm,
            newton_linear_iterations: newton_linear,
            phi_a_linear_iterations: out_a.iterations,
            phi_a_linear_residual: out_a.relative_residual,
            max_proliferation: max_abs(&prolif),
            phi_mass_change,
            phi_source_integral: dt * phi_source * cell,
            phi_a_mass_change,
            phi_a_source_integral: dt * phi_a_source * cell,
            explicit_lipschitz: dt * self.explicit_lipschitz(),
            wall_time: start.elapsed(),
        };
        let next = State {
            t: t1,
            phi: ScalarField::from_raw(grid, w),
            mu: ScalarField::from_raw(grid, mu1),
            phi_a: ScalarField::from_raw(grid, pa1),
            n: ScalarField::from_raw(grid, n1),
            c: ScalarField::from_raw(grid, c1),
        };
        Ok((next, report))
    }

    /// Lipschitz constant of the terms frozen at the old time level: the
    /// concave force, the sources and the logistic growth.
    pub fn explicit_lipschitz(&self) -> f64 {
        let p = &self.params;
        let pi = (self.params.potential.pi_lipschitz() - self.cfg.stabilization).abs();
        let sources = 2.0 + p.chi_phi + p.chi_a + (1.0 + p.zeta) * (p.kappa0 + p.kappa_inf);
        pi.max(sources)
    }

    /// Steps from `initial` to `t_end`. The observer sees the initial state
    /// (with no report) and every subsequent state; returning an error stops
    /// the run.
    pub fn run(
        &self,
        initial: State,
        mut observer: impl FnMut(&State, Option<&StepReport>) -> Result<(), SolverError>,
    ) -> Result<RunSummary, SolverError> {
        let start = Instant::now();
        self.validate_initial(&initial)?;
        let t0 = initial.t;
        let steps = self.cfg.steps_from(t0);
        observer(&initial, None)?;
        let mut state = initial;
        let mut max_newton = 0;
        let mut total_newton = 0;
        for k in 1..=steps {
            let (mut next, report) = self.step(&state)?;
            // pin the clock to the grid of time levels
            next.t = t0 + k as f64 * self.cfg.dt;
            max_newton = max_newton.max(report.newton_iterations);
            total_newton += report.newton_iterations;
            observer(&next, Some(&report))?;
            state = next;
        }
        Ok(RunSummary {
            steps,
            final_state: state,
            max_newton_iterations: max_newton,
            total_newton_iterations: total_newton,
            wall_time: start.elapsed(),
        })
    }
}

/// One step with a freshly built solver.
pub fn step(state: &State, params: &ModelParams, cfg: &SolverConfig) -> Result<(State, StepReport), SolverError> {
    Solver::new(*state.grid(), *params, *cfg)?.step(state)
}

/// Mode the solver runs in for the given parameters.
pub fn mode(params: &ModelParams) -> PotentialMode {
    params.mode()
}
