//! Energy, masses, extrema, corridor and separation monitors, weak-form
//! residuals and the twin-run stability metric.

use std::f64::consts::PI;
use std::io::{self, Write};

use thiserror::Error;

use crate::fields::{dual_norm, face_inner, FaceAverage, FaceCoefficients, FieldError, Grid2D, ScalarField, State};
use crate::potentials::{PotentialError, PotentialMode, PotentialSpec, RegularizedPotential};
use crate::solver::StepReport;
use crate::sources::{positive_part, ModelParams};

/// Tolerance of the `c` and `n` min–max checks.
pub const MINMAX_TOL: f64 = 1e-10;

/// `φ_a` may dip below zero by this multiple of `ε`.
pub const PHI_A_TOL_PER_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("{name} must be positive, got {value}")]
    Range { name: &'static str, value: f64 },
    #[error("trajectories differ in length: {0} vs {1}")]
    Length(usize, usize),
    #[error("need at least {needed} states, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
}

/// Terms of the free energy.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyParts {
    /// `∫F_ε(φ)`.
    pub bulk: f64,
    /// `∫E_{ε,1/ε}(φ_a)`.
    pub entropy: f64,
    /// `½∫|∇φ|² + ½∫|∇n|² + ½∫|∇c|²`.
    pub gradients: f64,
    /// `-χ_φ∫nφ - χ_a∫φ_a c`.
    pub coupling: f64,
}

impl EnergyParts {
    pub fn total(&self) -> f64 {
        self.bulk + self.entropy + self.gradients + self.coupling
    }
}

pub fn energy_parts(state: &State, params: &ModelParams) -> Result<EnergyParts, DiagnosticsError> {
    let pot = RegularizedPotential::new(params.potential, params.eps)?;
    let ent = params.entropy_truncation();
    let cell = state.grid().cell_area();
    let mut bulk = 0.0;
    let mut entropy = 0.0;
    let mut coupling = 0.0;
    let (phi, pa, n, c) = (state.phi.values(), state.phi_a.values(), state.n.values(), state.c.values());
    for i in 0..phi.len() {
        bulk += pot.f_eps(phi[i])?;
        entropy += ent.entropy(pa[i]);
        coupling -= params.chi_phi * n[i] * phi[i] + params.chi_a * pa[i] * c[i];
    }
    let gradients = 0.5 * (state.phi.gradient_energy() + state.n.gradient_energy() + state.c.gradient_energy());
    Ok(EnergyParts {
        bulk: bulk * cell,
        entropy: entropy * cell,
        gradients,
        coupling: coupling * cell,
    })
}

/// Discrete free energy with midpoint quadrature and face-centered
/// gradients.
pub fn energy(state: &State, params: &ModelParams) -> Result<f64, DiagnosticsError> {
    Ok(energy_parts(state, params)?.total())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MinMaxFlags {
    pub c_below_zero: bool,
    pub c_above_one: bool,
    /// Only checked with a singular potential.
    pub n_below_zero: bool,
    pub n_above_one: bool,
    pub phi_a_negative: bool,
}

impl MinMaxFlags {
    pub fn any(&self) -> bool {
        self.c_below_zero || self.c_above_one || self.n_below_zero || self.n_above_one || self.phi_a_negative
    }
}

pub fn check_minmax(state: &State, params: &ModelParams) -> MinMaxFlags {
    let singular = params.mode() == PotentialMode::Singular;
    MinMaxFlags {
        c_below_zero: state.c.min() < -MINMAX_TOL,
        c_above_one: state.c.max() > 1.0 + MINMAX_TOL,
        n_below_zero: singular && state.n.min() < -MINMAX_TOL,
        n_above_one: singular && state.n.max() > 1.0 + MINMAX_TOL,
        phi_a_negative: state.phi_a.min() < -PHI_A_TOL_PER_EPS * params.eps,
    }
}

/// Gronwall corridor for the mean of `φ`:
/// `y₀e^{-mt} ∓ (1 - e^{-mt}) H/m`.
pub fn mass_corridor(y0: f64, h: f64, m: f64, t: f64) -> Result<(f64, f64), DiagnosticsError> {
    if !(m > 0.0) {
        return Err(DiagnosticsError::Range { name: "m", value: m });
    }
    let decay = (-m * t).exp();
    let spread = (1.0 - decay) * h / m;
    Ok((y0 * decay - spread, y0 * decay + spread))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallnessReport {
    pub cbar: f64,
    pub threshold: f64,
    pub chi_a: f64,
    /// `threshold - χ_a`; positive when the condition holds.
    pub margin: f64,
    pub passes: bool,
}

/// `((√(1 + C̄) - 1)/2)^{1/4}`, zero for `C̄ ≤ 0`.
pub fn smallness_threshold(cbar: f64) -> f64 {
    if cbar <= 0.0 {
        0.0
    } else {
        (((1.0 + cbar).sqrt() - 1.0) / 2.0).powf(0.25)
    }
}

/// Advisory check of the chemotactic smallness condition. `c_omega`,
/// `c0`, `iota` and `eps0` are analysis constants the user must supply.
pub fn smallness_advisory(
    params: &ModelParams,
    c_omega: f64,
    c0: f64,
    iota: f64,
    eps0: f64,
) -> Result<SmallnessReport, DiagnosticsError> {
    for (name, value) in [("C_Omega", c_omega), ("C0", c0), ("iota", iota), ("eps0", eps0)] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(DiagnosticsError::Range { name, value });
        }
    }
    if iota >= 1.0 {
        return Err(DiagnosticsError::Range { name: "1 - iota", value: 1.0 - iota });
    }
    let m0 = params.mobility_m.lower.min(params.mobility_n.lower);
    let cbar = (params.kappa_inf - eps0) * m0.powi(3) * iota.powi(3) / (27.0 * c0.powi(3) * c_omega.powi(4));
    let threshold = smallness_threshold(cbar);
    let margin = threshold - params.chi_a;
    Ok(SmallnessReport {
        cbar,
        threshold,
        chi_a: params.chi_a,
        margin,
        passes: margin > 0.0,
    })
}

/// One row of the per-step diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub energy: f64,
    /// Means of `φ`, `φ_a`, `n`, `c`.
    pub means: [f64; 4],
    /// `(min, max)` of `φ`, `μ`, `φ_a`, `n`, `c`.
    pub extrema: [(f64, f64); 5],
    pub entropy: f64,
    pub f_integral: f64,
    /// `‖φ - φ_Ω‖_*`.
    pub phi_dual_norm: f64,
    pub corridor: (f64, f64),
    /// Running `H = max |𝓗|`.
    pub h_max: f64,
    /// Running min and max of `φ` since the separation transient.
    pub separation: Option<(f64, f64)>,
    pub minmax: MinMaxFlags,
    pub corridor_violation: bool,
    pub separation_violation: bool,
}

impl DiagnosticsRecord {
    pub fn violations(&self) -> bool {
        self.minmax.any() || self.corridor_violation || self.separation_violation
    }

    /// `min(δ_*, 1 - δ^*)`, or `1 - δ^*` alone for a single-well potential.
    pub fn separation_margin(&self, potential: &PotentialSpec) -> Option<f64> {
        self.separation.map(|(lo, hi)| match potential {
            PotentialSpec::SingleWellLJ { .. } => 1.0 - hi,
            _ => lo.min(1.0 - hi),
        })
    }

    pub const CSV_HEADER: &'static str = "t,E,phi_mean,phi_a_mean,n_mean,c_mean,\
phi_min,phi_max,mu_min,mu_max,phi_a_min,phi_a_max,n_min,n_max,c_min,c_max,\
corridor_lo,corridor_hi,entropy,\
flag_c_min,flag_c_max,flag_n_min,flag_n_max,flag_phi_a,flag_corridor,flag_separation";

    pub fn write_csv_row(&self, w: &mut impl Write) -> io::Result<()> {
        let b = |f: bool| u8::from(f);
        write!(w, "{:e},{:e}", self.t, self.energy)?;
        for m in self.means {
            write!(w, ",{m:e}")?;
        }
        for (lo, hi) in self.extrema {
            write!(w, ",{lo:e},{hi:e}")?;
        }
        writeln!(
            w,
            ",{:e},{:e},{:e},{},{},{},{},{},{},{}",
            self.corridor.0,
            self.corridor.1,
            self.entropy,
            b(self.minmax.c_below_zero),
            b(self.minmax.c_above_one),
            b(self.minmax.n_below_zero),
            b(self.minmax.n_above_one),
            b(self.minmax.phi_a_negative),
            b(self.corridor_violation),
            b(self.separation_violation),
        )
    }
}

/// Stateful producer of [`DiagnosticsRecord`]s along one trajectory.
#[derive(Debug, Clone)]
pub struct Monitor {
    params: ModelParams,
    potential: RegularizedPotential,
    dt: f64,
    separation_t0: f64,
    y0: Option<f64>,
    t_start: f64,
    h_max: f64,
    separation: Option<(f64, f64)>,
    compute_dual_norm: bool,
}

impl Monitor {
    pub fn new(params: ModelParams, dt: f64, separation_t0: f64) -> Result<Self, DiagnosticsError> {
        Ok(Self {
            params,
            potential: RegularizedPotential::new(params.potential, params.eps)?,
            dt,
            separation_t0,
            y0: None,
            t_start: 0.0,
            h_max: 0.0,
            separation: None,
            compute_dual_norm: true,
        })
    }

    /// Skips the inverse-Laplacian solve for `‖φ - φ_Ω‖_*`.
    pub fn without_dual_norm(mut self) -> Self {
        self.compute_dual_norm = false;
        self
    }

    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    pub fn record(&mut self, state: &State, report: Option<&StepReport>) -> Result<DiagnosticsRecord, DiagnosticsError> {
        let p = &self.params;
        if self.y0.is_none() {
            self.y0 = Some(state.phi.mean());
            self.t_start = state.t;
        }
        let y0 = self.y0.unwrap_or_default();
        if let Some(r) = report {
            self.h_max = self.h_max.max(r.max_proliferation);
        }
        let parts = energy_parts(state, p)?;
        let f_integral = {
            let mut acc = 0.0;
            for &v in state.phi.values() {
                acc += self.potential.f_eps(v)?;
            }
            acc * state.grid().cell_area()
        };
        let phi_mean = state.phi.mean();
        let corridor = mass_corridor(y0, self.h_max, p.m, state.t - self.t_start)?;
        let slack = self.dt * self.h_max + 1e-12;
        let corridor_violation = phi_mean < corridor.0 - slack || phi_mean > corridor.1 + slack;

        let singular = p.mode() == PotentialMode::Singular;
        if singular && state.t >= self.separation_t0 - 1e-12 {
            let (lo, hi) = (state.phi.min(), state.phi.max());
            self.separation = Some(match self.separation {
                None => (lo, hi),
                Some((a, b)) => (a.min(lo), b.max(hi)),
            });
        }
        let separation_violation = match self.separation {
            None => false,
            Some((lo, hi)) => match p.potential {
                PotentialSpec::SingleWellLJ { .. } => hi >= 1.0,
                _ => lo <= 0.0 || hi >= 1.0,
            },
        };
        let phi_dual_norm = if self.compute_dual_norm {
            dual_norm(&state.phi.zero_mean())?
        } else {
            f64::NAN
        };
        let extrema = state.fields().map(|(_, f)| (f.min(), f.max()));
        Ok(DiagnosticsRecord {
            t: state.t,
            energy: parts.total(),
            means: [phi_mean, state.phi_a.mean(), state.n.mean(), state.c.mean()],
            extrema,
            entropy: parts.entropy,
            f_integral,
            phi_dual_norm,
            corridor,
            h_max: self.h_max,
            separation: self.separation,
            minmax: check_minmax(state, p),
            corridor_violation,
            separation_violation,
        })
    }
}

/// Orthonormal Neumann cosine `ψ_{ij}` sampled at cell centers.
pub fn cosine_mode(grid: Grid2D, i: usize, j: usize) -> ScalarField {
    let (lx, ly) = (grid.lx(), grid.ly());
    let nx = if i == 0 { (1.0 / lx).sqrt() } else { (2.0 / lx).sqrt() };
    let ny = if j == 0 { (1.0 / ly).sqrt() } else { (2.0 / ly).sqrt() };
    ScalarField::from_fn(grid, |x, y| nx * ny * (i as f64 * PI * x / lx).cos() * (j as f64 * PI * y / ly).cos())
}

/// The constant plus the six lowest nonconstant cosine modes.
pub fn test_battery(grid: Grid2D) -> Vec<ScalarField> {
    let (lx, ly) = (grid.lx(), grid.ly());
    let mut modes: Vec<(usize, usize)> = (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).collect();
    modes.sort_by(|a, b| {
        let ea = (a.0 as f64 / lx).powi(2) + (a.1 as f64 / ly).powi(2);
        let eb = (b.0 as f64 / lx).powi(2) + (b.1 as f64 / ly).powi(2);
        ea.total_cmp(&eb).then(a.cmp(b))
    });
    modes.into_iter().take(7).map(|(i, j)| cosine_mode(grid, i, j)).collect()
}

/// Largest weak-form residual over the test battery for each equation:
/// `φ`, `μ`, `φ_a`, `n`, `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakResidual {
    pub equations: [f64; 5],
}

impl WeakResidual {
    pub fn max(&self) -> f64 {
        self.equations.iter().copied().fold(0.0, f64::max)
    }
}

/// Weak residuals of the regularized system between two consecutive
/// states, using a backward difference quotient and the new state for all
/// other terms.
pub fn weak_residual(
    old: &State,
    new: &State,
    params: &ModelParams,
    tests: &[ScalarField],
) -> Result<WeakResidual, DiagnosticsError> {
    let dt = new.t - old.t;
    if !(dt > 0.0) {
        return Err(DiagnosticsError::Range { name: "dt", value: dt });
    }
    let grid = *new.grid();
    let p = params;
    let pot = RegularizedPotential::new(p.potential, p.eps)?;
    let ent = p.entropy_truncation();
    let len = grid.len();
    let (phi, mu, pa, n, c) = (
        new.phi.values(),
        new.mu.values(),
        new.phi_a.values(),
        new.n.values(),
        new.c.values(),
    );
    let mob_m: Vec<f64> = (0..len).map(|i| p.mobility_m(phi[i], pa[i], n[i])).collect();
    let mob_n: Vec<f64> = (0..len).map(|i| p.mobility_n(pa[i], c[i])).collect();
    let k_m = FaceCoefficients::from_cells(&grid, &mob_m, FaceAverage::Arithmetic);
    let k_n = FaceCoefficients::from_cells(&grid, &mob_n, FaceAverage::Arithmetic);
    let trunc: Vec<f64> = pa.iter().map(|&v| ent.truncate(v)).collect();
    let k_chem = FaceCoefficients::from_cells(&grid, &trunc, FaceAverage::Arithmetic).times(&k_n);
    let chem_pot: Vec<f64> = (0..len).map(|i| mu[i] - p.chi_phi * n[i]).collect();

    // pointwise parts (time derivative minus zeroth-order terms)
    let mut pw = [vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]];
    for i in 0..len {
        pw[0][i] = (phi[i] - old.phi.values()[i]) / dt - p.s_phi(phi[i], n[i]);
        pw[1][i] = mu[i] - pot.f_eps_prime(phi[i])?;
        pw[2][i] = (pa[i] - old.phi_a.values()[i]) / dt - p.s_a(phi[i], pa[i], c[i]);
        pw[3][i] = (n[i] - old.n.values()[i]) / dt - p.chi_phi * p.p(phi[i]) - p.s_n(phi[i], pa[i], n[i]);
        pw[4][i] = (c[i] - old.c.values()[i]) / dt - p.chi_a * positive_part(pa[i]) - p.s_c(phi[i], pa[i], n[i], c[i]);
    }
    let cell = grid.cell_area();
    let mut equations = [0.0f64; 5];
    for v in tests {
        let v = v.values();
        let dot = |a: &[f64]| a.iter().zip(v).map(|(x, y)| x * y).sum::<f64>() * cell;
        let r = [
            dot(&pw[0]) + face_inner(&grid, Some(&k_m), &chem_pot, v),
            dot(&pw[1]) - face_inner(&grid, None, phi, v),
            dot(&pw[2]) + face_inner(&grid, Some(&k_n), pa, v) - p.chi_a * face_inner(&grid, Some(&k_chem), c, v),
            dot(&pw[3]) + face_inner(&grid, None, n, v),
            dot(&pw[4]) + face_inner(&grid, None, c, v),
        ];
        for (e, ri) in equations.iter_mut().zip(r) {
            *e = e.max(ri.abs());
        }
    }
    Ok(WeakResidual { equations })
}

/// `∫(c' - c)/dt - ∫(χ_a (φ_a)_+ + S_c)` at the new state.
pub fn c_mass_balance(old: &State, new: &State, params: &ModelParams) -> f64 {
    let dt = new.t - old.t;
    let (phi, pa, n, c) = (new.phi.values(), new.phi_a.values(), new.n.values(), new.c.values());
    let mut src = 0.0;
    for i in 0..phi.len() {
        src += params.chi_a * positive_part(pa[i]) + params.s_c(phi[i], pa[i], n[i], c[i]);
    }
    let cell = new.grid().cell_area();
    (new.c.integrate() - old.c.integrate()) / dt - src * cell
}

/// Left-hand-side norms of the continuous-dependence estimate along a pair
/// of trajectories, and the initial-data norms on the right-hand side.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TwinDistance {
    /// `sup ‖δφ - δφ_Ω‖_*`.
    pub phi_dual: f64,
    /// `sup |δφ_Ω|`.
    pub phi_mean: f64,
    /// `sup ‖δφ_a - δφ_{a,Ω}‖_*`.
    pub phi_a_dual: f64,
    /// `(∫‖δφ_a - δφ_{a,Ω}‖²)^{1/2}`.
    pub phi_a_l2: f64,
    /// `sup |δφ_{a,Ω}|`.
    pub phi_a_mean: f64,
    /// `sup ‖δn‖` and `(∫‖δn‖²_V)^{1/2}`.
    pub n_sup: f64,
    pub n_l2v: f64,
    pub c_sup: f64,
    pub c_l2v: f64,
    /// Initial-data norms.
    pub rhs: f64,
}

impl TwinDistance {
    pub fn lhs(&self) -> f64 {
        self.phi_dual
            + self.phi_mean
            + self.phi_a_dual
            + self.phi_a_l2
            + self.phi_a_mean
            + self.n_sup
            + self.n_l2v
            + self.c_sup
            + self.c_l2v
    }

    /// Empirical stability ratio `K̂ = LHS/RHS`.
    pub fn ratio(&self) -> f64 {
        self.lhs() / self.rhs
    }
}

/// Streaming accumulator for [`TwinDistance`]; feed matching state pairs in
/// time order, starting with the initial pair.
#[derive(Debug, Clone, Default)]
pub struct TwinTracker {
    dist: TwinDistance,
    phi_a_l2_sq: f64,
    n_l2v_sq: f64,
    c_l2v_sq: f64,
    last_t: Option<f64>,
}

impl TwinTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, a: &State, b: &State) -> Result<(), DiagnosticsError> {
        if !a.grid().same_as(b.grid()) {
            return Err(FieldError::GridMismatch("twin states live on different grids".into()).into());
        }
        let dphi = &a.phi - &b.phi;
        let dpa = &a.phi_a - &b.phi_a;
        let dn = &a.n - &b.n;
        let dc = &a.c - &b.c;
        let phi_dual = dual_norm(&dphi.zero_mean())?;
        let pa_zero = dpa.zero_mean();
        let pa_dual = dual_norm(&pa_zero)?;
        let d = &mut self.dist;
        match self.last_t {
            None => {
                d.rhs = phi_dual + dphi.mean().abs() + pa_dual + dpa.mean().abs() + dn.l2_norm() + dc.l2_norm();
            }
            Some(t0) => {
                let dt = a.t - t0;
                self.phi_a_l2_sq += dt * pa_zero.inner(&pa_zero);
                self.n_l2v_sq += dt * (dn.inner(&dn) + dn.gradient_energy());
                self.c_l2v_sq += dt * (dc.inner(&dc) + dc.gradient_energy());
            }
        }
        self.last_t = Some(a.t);
        d.phi_dual = d.phi_dual.max(phi_dual);
        d.phi_mean = d.phi_mean.max(dphi.mean().abs());
        d.phi_a_dual = d.phi_a_dual.max(pa_dual);
        d.phi_a_mean = d.phi_a_mean.max(dpa.mean().abs());
        d.n_sup = d.n_sup.max(dn.l2_norm());
        d.c_sup = d.c_sup.max(dc.l2_norm());
        d.phi_a_l2 = self.phi_a_l2_sq.sqrt();
        d.n_l2v = self.n_l2v_sq.sqrt();
        d.c_l2v = self.c_l2v_sq.sqrt();
        Ok(())
    }

    pub fn distance(&self) -> TwinDistance {
        self.dist
    }
}

/// [`TwinDistance`] of two stored trajectories with matching time levels.
pub fn twin_run_distance(run1: &[State], run2: &[State]) -> Result<TwinDistance, DiagnosticsError> {
    if run1.len() != run2.len() {
        return Err(DiagnosticsError::Length(run1.len(), run2.len()));
    }
    if run1.is_empty() {
        return Err(DiagnosticsError::TooShort { needed: 1, got: 0 });
    }
    let mut tracker = TwinTracker::new();
    for (a, b) in run1.iter().zip(run2) {
        tracker.push(a, b)?;
    }
    Ok(tracker.distance())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Preset;
    use crate::solver::{Solver, SolverConfig};

    fn grid() -> Grid2D {
        Grid2D::new(16, 16, 2.0, 2.0).unwrap()
    }

    fn uniform(phi: f64, pa: f64, n: f64, c: f64) -> State {
        Preset::Uniform { phi, phi_a: pa, n, c }.build(grid(), 0)
    }

    #[test]
    fn energy_of_uniform_state() {
        let p = ModelParams::default();
        let s = uniform(0.4, 1.0, 0.7, 0.3);
        let pot = RegularizedPotential::new(p.potential, p.eps).unwrap();
        let area = 4.0;
        let expected = area * (pot.f_eps(0.4).unwrap() - p.chi_phi * 0.7 * 0.4 - p.chi_a * 0.3);
        assert!((energy(&s, &p).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn energy_of_zero_state_and_constant_shift() {
        let p = ModelParams {
            potential: PotentialSpec::RegularQuartic { c3: 1.0 },
            ..ModelParams::default()
        };
        // E_{ε,1/ε}(0) = 1 - ε/2 per unit area, every other term vanishes
        let s = uniform(0.0, 0.0, 0.0, 0.0);
        assert!((energy(&s, &p).unwrap() - 4.0 * (1.0 - p.eps / 2.0)).abs() < 1e-12);
        let s = Preset::Spheroid {
            radius: 0.3,
            width: 0.05,
            inside: 0.8,
            outside: 0.2,
            phi_a: 0.3,
        }
        .build(grid(), 0);
        let mut shifted = s.clone();
        shifted.c = s.c.map(|v| v + 0.25);
        let de = energy(&shifted, &p).unwrap() - energy(&s, &p).unwrap();
        assert!((de + p.chi_a * s.phi_a.integrate() * 0.25).abs() < 1e-12);
    }

    #[test]
    fn minmax_flags() {
        let p = ModelParams::default();
        assert!(!check_minmax(&uniform(0.5, 0.1, 0.5, 0.5), &p).any());
        let f = check_minmax(&uniform(0.5, 0.1, 0.5, 1.2), &p);
        assert!(f.c_above_one && !f.c_below_zero);
        let smooth = ModelParams {
            potential: PotentialSpec::RegularQuartic { c3: 1.0 },
            ..p
        };
        assert!(!check_minmax(&uniform(0.5, 0.1, 1.5, 0.5), &smooth).n_above_one);
        assert!(check_minmax(&uniform(0.5, 0.1, 1.5, 0.5), &p).n_above_one);
        assert!(check_minmax(&uniform(0.5, -1e-6, 0.5, 0.5), &p).phi_a_negative);
        assert!(!check_minmax(&uniform(0.5, -1e-9, 0.5, 0.5), &p).phi_a_negative);
    }

    #[test]
    fn corridor_examples() {
        assert_eq!(mass_corridor(0.3, 0.8, 1.0, 0.0).unwrap(), (0.3, 0.3));
        let (lo, hi) = mass_corridor(0.3, 0.8, 1.0, 1.0).unwrap();
        let e = (-1.0f64).exp();
        assert!((lo - (0.3 * e - 0.8 * (1.0 - e))).abs() < 1e-15);
        assert!((hi - (0.3 * e + 0.8 * (1.0 - e))).abs() < 1e-15);
        assert!((lo + 0.3953).abs() < 1e-4 && (hi - 0.6160).abs() < 1e-4);
        let (lo, hi) = mass_corridor(0.3, 0.8, 2.0, 1e3).unwrap();
        assert!((lo + 0.4).abs() < 1e-12 && (hi - 0.4).abs() < 1e-12);
        assert!(mass_corridor(0.3, 0.8, 0.0, 1.0).is_err());
    }

    #[test]
    fn smallness_examples() {
        assert!((smallness_threshold(3.0) - 0.5f64.powf(0.25)).abs() < 1e-15);
        assert!((smallness_threshold(3.0) - 0.8409).abs() < 1e-4);
        let p = ModelParams {
            kappa_inf: 0.1,
            ..ModelParams::default()
        };
        let r = smallness_advisory(&p, 1.0, 1.0, 0.5, 0.2).unwrap();
        assert_eq!(r.threshold, 0.0);
        assert!(!r.passes);
        assert!(smallness_advisory(&p, 0.0, 1.0, 0.5, 0.01).is_err());
        assert!(smallness_advisory(&p, 1.0, 1.0, 1.5, 0.01).is_err());
        let r = smallness_advisory(&ModelParams::default(), 0.5, 0.5, 0.9, 0.01).unwrap();
        assert!(r.cbar > 0.0 && r.passes && r.margin > 0.0);
    }

    #[test]
    fn battery_is_orthonormal() {
        let g = Grid2D::new(32, 16, 2.0, 1.0).unwrap();
        let b = test_battery(g);
        assert_eq!(b.len(), 7);
        for (i, u) in b.iter().enumerate() {
            for (j, v) in b.iter().enumerate() {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((u.inner(v) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn equilibrium_has_zero_weak_residual() {
        let p = ModelParams {
            potential: PotentialSpec::RegularQuartic { c3: 1.0 },
            delta_n: 1.0,
            ..ModelParams::default()
        };
        let mut a = uniform(0.0, 0.0, 1.0, 0.0);
        let mut b = a.clone();
        b.t = 0.1;
        a.mu = ScalarField::zeros(grid());
        let r = weak_residual(&a, &b, &p, &test_battery(grid())).unwrap();
        assert!(r.max() < 1e-14, "{r:?}");
    }

    #[test]
    fn c_residual_with_constant_test_is_mass_balance() {
        let g = grid();
        let p = ModelParams::default();
        let solver = Solver::new(g, p, SolverConfig::default()).unwrap();
        let s0 = Preset::spheroid_default().build(g, 0);
        let (s1, _) = solver.step(&s0).unwrap();
        let one = vec![ScalarField::constant(g, 1.0)];
        let r = weak_residual(&s0, &s1, &p, &one).unwrap();
        assert!((r.equations[4] - c_mass_balance(&s0, &s1, &p).abs()).abs() < 1e-12);
    }

    #[test]
    fn identical_twins_have_zero_distance() {
        let s = Preset::spheroid_default().build(grid(), 0);
        let mut t = s.clone();
        t.t = 0.1;
        let d = twin_run_distance(&[s.clone(), t.clone()], &[s, t]).unwrap();
        assert_eq!(d.lhs(), 0.0);
        assert_eq!(d.rhs, 0.0);
    }

    #[test]
    fn monitor_tracks_corridor_and_separation() {
        let g = grid();
        let p = ModelParams::default();
        let mut mon = Monitor::new(p, 1e-3, 0.0).unwrap();
        let s = Preset::spheroid_default().build(g, 0);
        let rec = mon.record(&s, None).unwrap();
        assert_eq!(rec.corridor, (s.phi.mean(), s.phi.mean()));
        assert!(!rec.violations());
        assert_eq!(rec.separation_margin(&p.potential), Some(s.phi.min().min(1.0 - s.phi.max())));
        let mut buf = Vec::new();
        rec.write_csv_row(&mut buf).unwrap();
        let line = String::from_utf8(buf).unwrap();
        assert_eq!(line.trim().split(',').count(), DiagnosticsRecord::CSV_HEADER.split(',').count());
    }
}
