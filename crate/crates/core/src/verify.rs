//! Randomized property suite over potentials, truncations, sources and
//! discrete operators. No time stepping.

use std::f64::consts::{E, PI};
use std::fmt;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fields::{integrate, inv_neumann_laplacian, laplacian, Grid2D, ScalarField};
use crate::potentials::{BetaDomain, PotentialSpec, RegularizedPotential};
use crate::regularize::TruncationPair;
use crate::sources::{ModelParams, MobilitySpec};

/// Outcome of one property over its sampled inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub name: String,
    pub checked: usize,
    pub failed: usize,
    /// Largest observed violation measure (0 when every sample passed with
    /// room to spare).
    pub worst: f64,
}

impl PropertyResult {
    fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            checked: 0,
            failed: 0,
            worst: 0.0,
        }
    }

    /// Records a sample whose defect is `defect`; the sample fails when the
    /// defect exceeds `tol`.
    fn check(&mut self, defect: f64, tol: f64) {
        self.checked += 1;
        if !(defect <= tol) {
            self.failed += 1;
        }
        if defect.is_nan() {
            self.worst = f64::NAN;
        } else if !self.worst.is_nan() {
            self.worst = self.worst.max(defect);
        }
    }

    fn check_bool(&mut self, ok: bool) {
        self.check(if ok { 0.0 } else { 1.0 }, 0.0);
    }

    pub fn passed(&self) -> bool {
        self.failed == 0 && self.checked > 0
    }
}

impl fmt::Display for PropertyResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<4} {:<52} checked={:<7} failed={:<5} worst={:.3e}",
            if self.passed() { "ok" } else { "FAIL" },
            self.name,
            self.checked,
            self.failed,
            self.worst
        )
    }
}

/// Sample counts of the suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuiteSize {
    pub entropy: usize,
    pub envelope: usize,
    pub sources: usize,
    pub fields: usize,
}

impl Default for SuiteSize {
    fn default() -> Self {
        Self {
            entropy: 10_000,
            envelope: 1_000,
            sources: 100_000,
            fields: 20,
        }
    }
}

/// The four potential variants with the default constants.
pub fn potential_variants() -> [PotentialSpec; 4] {
    [
        PotentialSpec::RegularQuartic { c3: 4.0 },
        PotentialSpec::FloryHuggins { c1: 1.0, c2: 2.0 },
        PotentialSpec::DoubleObstacle { c3: 1.0 },
        PotentialSpec::SingleWellLJ { r_star: 0.6, kappa: 0.0 },
    ]
}

/// Point where `β` vanishes: 0 if it belongs to `D(β)`, else 1/2.
pub fn beta_zero(spec: &PotentialSpec) -> f64 {
    if spec.beta_domain().contains(0.0) {
        0.0
    } else {
        0.5
    }
}

/// `min_t |t - r|²/(2ε) + β̂(t)` by a uniform grid scan followed by
/// golden-section refinement of the bracketing cell.
pub fn brute_force_envelope(spec: &PotentialSpec, eps: f64, r: f64) -> f64 {
    let (lo, hi) = match spec.beta_domain() {
        BetaDomain::WholeLine => (r.min(0.0) - 0.5, r.max(0.0) + 0.5),
        _ => (0.0, 1.0),
    };
    let obj = |t: f64| match spec.beta_hat(t).finite() {
        Some(b) => (t - r) * (t - r) / (2.0 * eps) + b,
        None => f64::INFINITY,
    };
    let n = 4000;
    let h = (hi - lo) / n as f64;
    let mut best = (0usize, f64::INFINITY);
    for i in 0..=n {
        let v = obj(lo + i as f64 * h);
        if v < best.1 {
            best = (i, v);
        }
    }
    let mut a = lo + best.0.saturating_sub(1) as f64 * h;
    let mut b = (lo + (best.0 + 1) as f64 * h).min(hi);
    if spec.beta_domain() == BetaDomain::UnitClosedOpen {
        b = b.min(1.0 - f64::EPSILON);
    }
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (obj(x1), obj(x2));
    for _ in 0..200 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = obj(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = obj(x2);
        }
    }
    best.1.min(f1).min(f2).min(obj(a)).min(obj(b))
}

fn entropy_properties(rng: &mut ChaCha8Rng, samples: usize) -> Vec<PropertyResult> {
    let mut elm = PropertyResult::new("entropy: E''*T = 1");
    let mut convex = PropertyResult::new("entropy: E >= 0 and E'' > 0");
    let mut ineq = PropertyResult::new("entropy: pointwise inequalities");
    let mut control = PropertyResult::new("entropy: quadratic control (Cbar 0.5,1,3)");
    let mut deriv = PropertyResult::new("entropy: derivatives match differences");
    let mut tgrad = PropertyResult::new("entropy: T * d/ds E'(r(s)) = r'(s)");
    for _ in 0..samples {
        let l = rng.random_range(1e-6..E.recip());
        let r = rng.random_range(-20.0..20.0) * if rng.random_range(0.0..1.0) < 0.5 { 1.0 } else { l.recip() / 20.0 };
        let tp = TruncationPair::entropy_pair(l).expect("L < 1/e < 1/L");
        elm.check((tp.entropy_second(r) * tp.truncate(r) - 1.0).abs(), 1e-14);
        convex.check_bool(tp.entropy(r) >= -1e-12 * (1.0 + r.abs()) && tp.entropy_second(r) > 0.0);
        match tp.entropy_inequalities(r, None) {
            Ok(rep) => ineq.check((-rep.min_slack()).max(0.0), 0.0),
            Err(_) => ineq.check(f64::INFINITY, 0.0),
        }
        for cbar in [0.5f64, 1.0, 3.0] {
            let hi = (-(1.0 + cbar) / cbar).exp();
            let lc = l.min(hi * 0.999);
            let tpc = TruncationPair::entropy_pair(lc).expect("valid pair");
            match tpc.entropy_inequalities(r, Some(cbar)) {
                Ok(rep) => control.check((-rep.quadratic_control.unwrap_or(-1.0)).max(0.0), 0.0),
                Err(_) => control.check(f64::INFINITY, 0.0),
            }
        }
        // smooth-branch derivative checks away from the kinks
        let hstep = 1e-5 * r.abs().max(l);
        let near_kink = (r - l).abs() < 4.0 * hstep || (r - 1.0 / l).abs() < 4.0 * hstep;
        if !near_kink {
            let fd1 = (tp.entropy(r + hstep) - tp.entropy(r - hstep)) / (2.0 * hstep);
            let fd2 = (tp.entropy_prime(r + hstep) - tp.entropy_prime(r - hstep)) / (2.0 * hstep);
            deriv.check((fd1 - tp.entropy_prime(r)).abs() / (1.0 + tp.entropy_prime(r).abs()), 1e-6);
            deriv.check((fd2 - tp.entropy_second(r)).abs() / (1.0 + tp.entropy_second(r).abs()), 1e-6);
            // path r(s) = r + s·v
            let v = rng.random_range(-2.0..2.0);
            let d = (tp.entropy_prime(r + hstep * v) - tp.entropy_prime(r - hstep * v)) / (2.0 * hstep);
            tgrad.check((tp.truncate(r) * d - v).abs() / (1.0 + v.abs()), 1e-6);
        }
    }
    vec![elm, convex, ineq, control, deriv, tgrad]
}

fn sample_in_domain(rng: &mut ChaCha8Rng, spec: &PotentialSpec) -> f64 {
    match spec.beta_domain() {
        BetaDomain::WholeLine => rng.random_range(-3.0..3.0),
        _ => rng.random_range(1e-6..1.0 - 1e-6),
    }
}

fn potential_properties(rng: &mut ChaCha8Rng, samples: usize) -> Vec<PropertyResult> {
    let mut out = Vec::new();
    for spec in potential_variants() {
        let name = spec.name();
        let mut decomposition = PropertyResult::new(format!("{name}: F = convex + perturbation"));
        let mut fprime = PropertyResult::new(format!("{name}: F' matches differences"));
        let mut mono = PropertyResult::new(format!("{name}: beta_eps monotone, 1/eps-Lipschitz"));
        let mut zero = PropertyResult::new(format!("{name}: beta_eps vanishes where beta does"));
        let mut bound = PropertyResult::new(format!("{name}: |beta_eps| <= |beta_min|"));
        let mut envelope = PropertyResult::new(format!("{name}: envelope vs brute force"));
        let mut consistency = PropertyResult::new(format!("{name}: eps-consistency"));
        for _ in 0..samples {
            let r = sample_in_domain(rng, &spec);
            let f = spec.eval_f(r).to_f64();
            let split = spec.beta_hat(r).to_f64() + spec.pi_hat(r);
            decomposition.check((f - split).abs() / (1.0 + f.abs()), 1e-13);
            let h = 1e-5 * r.min(1.0 - r).clamp(1e-3, 1.0);
            let h = if spec.beta_domain() == BetaDomain::WholeLine { 1e-5 } else { h };
            let fd = (spec.eval_f(r + h).to_f64() - spec.eval_f(r - h).to_f64()) / (2.0 * h);
            if let Ok(fp) = spec.eval_f_prime(r) {
                fprime.check((fd - fp).abs() / (1.0 + fp.abs()), 1e-6);
            }
        }
        for eps in [1e-1, 1e-2, 1e-3] {
            let reg = RegularizedPotential::new(spec, eps).expect("valid potential");
            zero.check(reg.beta_eps(beta_zero(&spec)).map(f64::abs).unwrap_or(f64::INFINITY), 1e-12);
            for _ in 0..samples {
                let r1 = rng.random_range(-3.0..4.0);
                let r2 = r1 + rng.random_range(0.0..1.0) * 10f64.powi(-rng.random_range(0..6));
                let (b1, b2) = match (reg.beta_eps(r1), reg.beta_eps(r2)) {
                    (Ok(a), Ok(b)) => (a, b),
                    _ => {
                        mono.check(f64::INFINITY, 0.0);
                        continue;
                    }
                };
                let slack = 1e-9 * (1.0 + b1.abs().max(b2.abs()));
                mono.check((b1 - b2).max(0.0).max((b2 - b1) - (r2 - r1) / eps), slack);
                let ri = sample_in_domain(rng, &spec);
                if let (Ok(be), Ok(b0)) = (reg.beta_eps(ri), spec.beta_min_section(ri)) {
                    bound.check(be.abs() - b0.abs(), 1e-9 * (1.0 + b0.abs()));
                }
            }
        }
        let reg = RegularizedPotential::new(spec, 1e-2).expect("valid potential");
        for _ in 0..samples {
            let r = rng.random_range(-1.0..2.0);
            let exact = reg.envelope(r).unwrap_or(f64::NAN);
            envelope.check((exact - brute_force_envelope(&spec, 1e-2, r)).abs(), 1e-8);
        }
        let interior: Vec<f64> = (1..100).map(|i| i as f64 / 100.0).collect();
        let errs: Vec<f64> = [1e-1, 1e-2, 1e-3]
            .iter()
            .map(|&eps| {
                let reg = RegularizedPotential::new(spec, eps).expect("valid potential");
                interior
                    .iter()
                    .map(|&r| (reg.beta_eps(r).unwrap_or(f64::NAN) - spec.beta_min_section(r).unwrap_or(f64::NAN)).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        for w in errs.windows(2) {
            consistency.check_bool(w[1] < w[0] || (w[0] == 0.0 && w[1] == 0.0));
        }
        out.extend([decomposition, fprime, mono, zero, bound, envelope, consistency]);
    }
    let quartic = PotentialSpec::RegularQuartic { c3: 4.0 };
    let mut growth = PropertyResult::new("quartic: finite growth constant on [-10,10]");
    let ca = quartic.fitted_growth_constant(-10.0, 10.0, 20_001);
    growth.check_bool(ca.is_finite() && ca > 0.0);
    let lj = PotentialSpec::SingleWellLJ { r_star: 0.6, kappa: 0.0 };
    let mut lj_c1 = PropertyResult::new("single-well: truncated perturbation is C1");
    for x in [0.0, 1.0] {
        let d = 1e-9;
        lj_c1.check((lj.pi_hat(x + d) - lj.pi_hat(x - d)).abs(), 1e-8);
        lj_c1.check((lj.pi(x + d) - lj.pi(x - d)).abs(), 1e-7);
    }
    out.extend([growth, lj_c1]);
    out
}

fn source_properties(rng: &mut ChaCha8Rng, samples: usize) -> Vec<PropertyResult> {
    let singular = ModelParams::default();
    let smooth = ModelParams {
        potential: PotentialSpec::RegularQuartic { c3: 4.0 },
        ..singular
    };
    let mut bounded = PropertyResult::new("sources: proliferation bounded");
    let mut theta = PropertyResult::new("sources: zeta <= theta <= 1 + zeta");
    let mut modes = PropertyResult::new("sources: modes agree on physical range");
    let mut mob = PropertyResult::new("sources: constant mobilities within bounds");
    for _ in 0..samples {
        let phi = rng.random_range(-2.0..3.0);
        let n = rng.random_range(-2.0..3.0);
        for (p, qmax) in [(&smooth, 1.0), (&singular, 1.0 + 1.0 / singular.eps)] {
            bounded.check(p.proliferation(phi, n).abs() - (qmax - p.delta_n).max(0.0), 1e-12);
        }
        let c = rng.random_range(0.0..1.0);
        let th = singular.theta(phi, c);
        theta.check((singular.zeta - th).max(th - 1.0 - singular.zeta), 1e-14);
        let (ph, nn, pa, cc) = (
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..2.0),
            rng.random_range(0.0..1.0),
        );
        let d = [
            smooth.q(nn) - singular.q(nn),
            smooth.p(ph) - singular.p(ph),
            smooth.s_phi(ph, nn) - singular.s_phi(ph, nn),
            smooth.s_n(ph, pa, nn) - singular.s_n(ph, pa, nn),
            smooth.s_c(ph, pa, nn, cc) - singular.s_c(ph, pa, nn, cc),
            smooth.s_a(ph, pa, cc) - singular.s_a(ph, pa, cc),
        ]
        .into_iter()
        .fold(0.0f64, |a, v| a.max(v.abs()));
        modes.check(d, 0.0);
        let spec = MobilitySpec::constant(1.0);
        mob.check_bool(spec.check(singular.mobility_m(ph, pa, nn)).is_ok() && spec.check(singular.mobility_n(pa, cc)).is_ok());
    }
    vec![bounded, theta, modes, mob]
}

fn random_field(rng: &mut ChaCha8Rng, grid: Grid2D) -> ScalarField {
    let v = (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    ScalarField::from_values(grid, v).expect("finite random values")
}

fn field_properties(rng: &mut ChaCha8Rng, samples: usize) -> Vec<PropertyResult> {
    let grid = Grid2D::new(16, 12, 1.3, 0.9).expect("valid grid");
    let mut mean = PropertyResult::new("fields: laplacian has zero mean");
    let mut sym = PropertyResult::new("fields: laplacian self-adjoint");
    let mut inv = PropertyResult::new("fields: inverse laplacian identity");
    let mut eig = PropertyResult::new("fields: cosine modes are eigenvectors");
    let mut kernel = PropertyResult::new("fields: constants in the kernel");
    for _ in 0..samples {
        let f = random_field(rng, grid);
        let g = random_field(rng, grid);
        let lf = laplacian(&f);
        mean.check(integrate(&lf).abs(), 1e-10);
        let a = integrate(&g.zip_map(&lf, |x, y| x * y));
        let b = integrate(&f.zip_map(&laplacian(&g), |x, y| x * y));
        sym.check((a - b).abs() / (1.0 + a.abs()), 1e-12);
        let v = f.zero_mean();
        let back = inv_neumann_laplacian(&laplacian(&v).map(|x| -x)).map(|u| (&u - &v).l2_norm());
        inv.check(back.unwrap_or(f64::INFINITY) / v.l2_norm(), 1e-8);
        let c = rng.random_range(-5.0..5.0);
        kernel.check(laplacian(&ScalarField::constant(grid, c)).values().iter().fold(0.0f64, |m, x| m.max(x.abs())), 1e-12);
    }
    for (kx, ky) in [(1, 0), (0, 1), (2, 3), (5, 4)] {
        let (dx, dy) = (grid.dx(), grid.dy());
        let lam = (2.0 - 2.0 * (kx as f64 * PI / grid.nx() as f64).cos()) / (dx * dx)
            + (2.0 - 2.0 * (ky as f64 * PI / grid.ny() as f64).cos()) / (dy * dy);
        let mode = ScalarField::from_fn(grid, |x, y| (kx as f64 * PI * x / grid.lx()).cos() * (ky as f64 * PI * y / grid.ly()).cos());
        let resid = (&laplacian(&mode) + &mode.map(|v| lam * v)).l2_norm();
        eig.check(resid / (lam * mode.l2_norm()), 1e-12);
    }
    vec![mean, sym, inv, eig, kernel]
}

/// Runs the full suite with a fixed seed.
pub fn run_property_suite(size: SuiteSize, seed: u64) -> Vec<PropertyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = entropy_properties(&mut rng, size.entropy);
    out.extend(potential_properties(&mut rng, size.envelope));
    out.extend(source_properties(&mut rng, size.sources));
    out.extend(field_properties(&mut rng, size.fields));
    out
}
