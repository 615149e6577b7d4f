//! Interaction potentials `F = β̂ + π̂` and the Moreau–Yosida regularization of
//! their convex part.
//!
//! Four variants are supported:
//!
//! ```text
//! RegularQuartic   F(r) = c3/4 r² (r-1)²                          r ∈ ℝ
//! FloryHuggins     F(r) = c1/2 (r ln r + (1-r) ln(1-r)) + c2/2 r(1-r)   r ∈ [0,1]
//! DoubleObstacle   F(r) = c3 r (1-r)                              r ∈ [0,1]
//! SingleWellLJ     F(r) = -(1-r*) ln(1-r) - r³/3 - (1-r*) r²/2 - (1-r*) r + κ   r ∈ [0,1)
//! ```
//!
//! Every variant is split into a proper convex `β̂ ≥ 0` with `0 ∈ β(0)`
//! whenever `0 ∈ D(β)` and a smooth concave-ish perturbation `π̂` whose
//! derivative `π` is globally Lipschitz. The split used for each variant:
//!
//! | variant        | β̂                                            | π̂                               |
//! |----------------|-----------------------------------------------|----------------------------------|
//! | RegularQuartic | F + c3/8 r²                                   | -c3/8 r²                         |
//! | FloryHuggins   | c1/2 (r ln r + (1-r) ln(1-r)) + c1/2 ln 2     | c2/2 r(1-r) - c1/2 ln 2          |
//! | DoubleObstacle | indicator of [0,1]                            | c3 r(1-r)                        |
//! | SingleWellLJ   | -k ln(1-r) - k r,  k = 1-r*                   | quadratic truncation of -r³/3 - k r²/2 + κ |
//!
//! The single-well perturbation is extended outside `[0,1]` by its second
//! order Taylor polynomials at 0 and 1, which keeps it `C¹` with a
//! Lipschitz derivative and leaves `F` unchanged where it is finite.

use std::f64::consts::LN_2;
use std::fmt;

use thiserror::Error;

/// Absolute tolerance of the scalar resolvent solve.
pub const RESOLVENT_TOL: f64 = 1e-12;
/// Iteration cap of the scalar resolvent solve.
pub const RESOLVENT_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PotentialError {
    #[error("{potential}: r = {r} is outside the interior of the domain of β")]
    Domain { potential: &'static str, r: f64 },
    #[error("resolvent solve for r = {r} did not reach tolerance after {iterations} iterations")]
    Convergence { r: f64, iterations: usize },
    #[error("invalid potential parameter: {0}")]
    InvalidParameter(String),
}

/// Extended real value: a finite number or `+∞`.
///
/// `+∞` marks points outside the proper domain of a potential. It is never
/// produced by arithmetic overflow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtReal {
    Finite(f64),
    PosInf,
}

impl ExtReal {
    pub fn is_finite(self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(v) => Some(v),
            ExtReal::PosInf => None,
        }
    }

    /// Lossy conversion, mapping `PosInf` to `f64::INFINITY`.
    pub fn to_f64(self) -> f64 {
        match self {
            ExtReal::Finite(v) => v,
            ExtReal::PosInf => f64::INFINITY,
        }
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::Finite(v) => write!(f, "{v}"),
            ExtReal::PosInf => write!(f, "+inf"),
        }
    }
}

/// Whether the potential confines its argument (singular) or not (smooth).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PotentialMode {
    Smooth,
    Singular,
}

/// Domain `D(β)` of the subdifferential of the convex part.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BetaDomain {
    /// ℝ
    WholeLine,
    /// [0, 1]
    UnitClosed,
    /// [0, 1)
    UnitClosedOpen,
    /// (0, 1)
    UnitOpen,
}

impl BetaDomain {
    pub fn contains(self, r: f64) -> bool {
        match self {
            BetaDomain::WholeLine => r.is_finite(),
            BetaDomain::UnitClosed => (0.0..=1.0).contains(&r),
            BetaDomain::UnitClosedOpen => (0.0..1.0).contains(&r),
            BetaDomain::UnitOpen => r > 0.0 && r < 1.0,
        }
    }

    pub fn contains_interior(self, r: f64) -> bool {
        match self {
            BetaDomain::WholeLine => r.is_finite(),
            _ => r > 0.0 && r < 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PotentialSpec {
    RegularQuartic { c3: f64 },
    FloryHuggins { c1: f64, c2: f64 },
    DoubleObstacle { c3: f64 },
    SingleWellLJ { r_star: f64, kappa: f64 },
}

impl PotentialSpec {
    pub fn name(&self) -> &'static str {
        match self {
            PotentialSpec::RegularQuartic { .. } => "regular-quartic",
            PotentialSpec::FloryHuggins { .. } => "flory-huggins",
            PotentialSpec::DoubleObstacle { .. } => "double-obstacle",
            PotentialSpec::SingleWellLJ { .. } => "single-well",
        }
    }

    pub fn validate(&self) -> Result<(), PotentialError> {
        let bad = |msg: String| Err(PotentialError::InvalidParameter(msg));
        match *self {
            PotentialSpec::RegularQuartic { c3 } | PotentialSpec::DoubleObstacle { c3 } => {
                if !(c3 > 0.0 && c3.is_finite()) {
                    return bad(format!("c3 must be positive, got {c3}"));
                }
            }
            PotentialSpec::FloryHuggins { c1, c2 } => {
                if !(c1 > 0.0 && c1.is_finite()) {
                    return bad(format!("c1 must be positive, got {c1}"));
                }
                if !(c2 > c1 && c2.is_finite()) {
                    return bad(format!("c2 must exceed c1, got c1 = {c1}, c2 = {c2}"));
                }
            }
            PotentialSpec::SingleWellLJ { r_star, kappa } => {
                if !(r_star > 0.0 && r_star < 1.0) {
                    return bad(format!("r_star must lie in (0,1), got {r_star}"));
                }
                if !(kappa >= 0.0 && kappa.is_finite()) {
                    return bad(format!("kappa must be nonnegative, got {kappa}"));
                }
            }
        }
        Ok(())
    }

    pub fn mode(&self) -> PotentialMode {
        match self {
            PotentialSpec::RegularQuartic { .. } => PotentialMode::Smooth,
            _ => PotentialMode::Singular,
        }
    }

    pub fn beta_domain(&self) -> BetaDomain {
        match self {
            PotentialSpec::RegularQuartic { .. } => BetaDomain::WholeLine,
            PotentialSpec::FloryHuggins { .. } => BetaDomain::UnitOpen,
            PotentialSpec::DoubleObstacle { .. } => BetaDomain::UnitClosed,
            PotentialSpec::SingleWellLJ { .. } => BetaDomain::UnitClosedOpen,
        }
    }

    /// Whether `F` is finite at `r`.
    pub fn in_proper_domain(&self, r: f64) -> bool {
        self.beta_hat(r).is_finite()
    }

    /// `F(r)`, `+∞` outside the proper domain. The single-well variant
    /// returns its truncated form.
    pub fn eval_f(&self, r: f64) -> ExtReal {
        match self.beta_hat(r) {
            ExtReal::Finite(b) => ExtReal::Finite(b + self.pi_hat(r)),
            ExtReal::PosInf => ExtReal::PosInf,
        }
    }

    /// `F'(r) = β°(r) + π(r)` on the interior of the domain.
    pub fn eval_f_prime(&self, r: f64) -> Result<f64, PotentialError> {
        if !self.beta_domain().contains_interior(r) {
            return Err(self.domain_error(r));
        }
        Ok(self.beta_min_section(r)? + self.pi(r))
    }

    /// Convex part `β̂`.
    pub fn beta_hat(&self, r: f64) -> ExtReal {
        if r.is_nan() {
            return ExtReal::PosInf;
        }
        match *self {
            PotentialSpec::RegularQuartic { c3 } => {
                ExtReal::Finite(0.25 * c3 * r * r * (r - 1.0) * (r - 1.0) + 0.125 * c3 * r * r)
            }
            PotentialSpec::FloryHuggins { c1, .. } => {
                if !(0.0..=1.0).contains(&r) {
                    return ExtReal::PosInf;
                }
                ExtReal::Finite(0.5 * c1 * (xlogx(r) + xlogx(1.0 - r)) + 0.5 * c1 * LN_2)
            }
            PotentialSpec::DoubleObstacle { .. } => {
                if (0.0..=1.0).contains(&r) {
                    ExtReal::Finite(0.0)
                } else {
                    ExtReal::PosInf
                }
            }
            PotentialSpec::SingleWellLJ { r_star, .. } => {
                if !(0.0..1.0).contains(&r) {
                    return ExtReal::PosInf;
                }
                let k = 1.0 - r_star;
                ExtReal::Finite(-k * (-r).ln_1p() - k * r)
            }
        }
    }

    /// Derivative of `β̂` on the interior of `D(β)`.
    pub fn beta(&self, r: f64) -> Result<f64, PotentialError> {
        if !self.beta_domain().contains_interior(r) {
            return Err(self.domain_error(r));
        }
        Ok(match *self {
            PotentialSpec::RegularQuartic { c3 } => c3 * r * (r * r - 1.5 * r + 0.75),
            PotentialSpec::FloryHuggins { c1, .. } => 0.5 * c1 * (r / (1.0 - r)).ln(),
            PotentialSpec::DoubleObstacle { .. } => 0.0,
            PotentialSpec::SingleWellLJ { r_star, .. } => (1.0 - r_star) * r / (1.0 - r),
        })
    }

    /// Second derivative of `β̂` on the interior of `D(β)`.
    pub fn beta_prime(&self, r: f64) -> Result<f64, PotentialError> {
        if !self.beta_domain().contains_interior(r) {
            return Err(self.domain_error(r));
        }
        Ok(match *self {
            PotentialSpec::RegularQuartic { c3 } => 3.0 * c3 * (r - 0.5) * (r - 0.5),
            PotentialSpec::FloryHuggins { c1, .. } => 0.5 * c1 / (r * (1.0 - r)),
            PotentialSpec::DoubleObstacle { .. } => 0.0,
            PotentialSpec::SingleWellLJ { r_star, .. } => (1.0 - r_star) / ((1.0 - r) * (1.0 - r)),
        })
    }

    /// Minimal-modulus element `β°(r)` of the section `β(r)`.
    pub fn beta_min_section(&self, r: f64) -> Result<f64, PotentialError> {
        let dom = self.beta_domain();
        if !dom.contains(r) {
            return Err(self.domain_error(r));
        }
        if dom.contains_interior(r) {
            return self.beta(r);
        }
        // boundary points: 0 and (for the obstacle) 1, where the section
        // is a half line containing 0
        Ok(0.0)
    }

    /// Perturbation `π̂` (the truncated `π̄` for the single-well variant).
    pub fn pi_hat(&self, r: f64) -> f64 {
        match *self {
            PotentialSpec::RegularQuartic { c3 } => -0.125 * c3 * r * r,
            PotentialSpec::FloryHuggins { c1, c2 } => 0.5 * c2 * r * (1.0 - r) - 0.5 * c1 * LN_2,
            PotentialSpec::DoubleObstacle { c3 } => c3 * r * (1.0 - r),
            PotentialSpec::SingleWellLJ { r_star, kappa } => {
                let k = 1.0 - r_star;
                let core = |s: f64| -s * s * s / 3.0 - 0.5 * k * s * s + kappa;
                if r <= 0.0 {
                    core(0.0) - 0.5 * k * r * r
                } else if r < 1.0 {
                    core(r)
                } else {
                    let d = r - 1.0;
                    core(1.0) + d * (-1.0 - k) + 0.5 * d * d * (-2.0 - k)
                }
            }
        }
    }

    /// `π = π̂'`.
    pub fn pi(&self, r: f64) -> f64 {
        match *self {
            PotentialSpec::RegularQuartic { c3 } => -0.25 * c3 * r,
            PotentialSpec::FloryHuggins { c2, .. } => 0.5 * c2 * (1.0 - 2.0 * r),
            PotentialSpec::DoubleObstacle { c3 } => c3 * (1.0 - 2.0 * r),
            PotentialSpec::SingleWellLJ { r_star, .. } => {
                let k = 1.0 - r_star;
                if r <= 0.0 {
                    -k * r
                } else if r < 1.0 {
                    -r * r - k * r
                } else {
                    (-1.0 - k) + (r - 1.0) * (-2.0 - k)
                }
            }
        }
    }

    /// `π'` (a.e.).
    pub fn pi_prime(&self, r: f64) -> f64 {
        match *self {
            PotentialSpec::RegularQuartic { c3 } => -0.25 * c3,
            PotentialSpec::FloryHuggins { c2, .. } => -c2,
            PotentialSpec::DoubleObstacle { c3 } => -2.0 * c3,
            PotentialSpec::SingleWellLJ { r_star, .. } => {
                let k = 1.0 - r_star;
                -2.0 * r.clamp(0.0, 1.0) - k
            }
        }
    }

    /// Global Lipschitz constant of `π`.
    pub fn pi_lipschitz(&self) -> f64 {
        match *self {
            PotentialSpec::RegularQuartic { c3 } => 0.25 * c3,
            PotentialSpec::FloryHuggins { c2, .. } => c2,
            PotentialSpec::DoubleObstacle { c3 } => 2.0 * c3,
            PotentialSpec::SingleWellLJ { r_star, .. } => 2.0 + (1.0 - r_star),
        }
    }

    /// Sampled estimate of the smallest `c_a` with `|F'(r)| ≤ c_a (F(r) + 1)`
    /// on `[lo, hi]`. Only meaningful for the quartic, whose domain is ℝ.
    pub fn fitted_growth_constant(&self, lo: f64, hi: f64, samples: usize) -> f64 {
        let mut sup: f64 = 0.0;
        for i in 0..samples {
            let r = lo + (hi - lo) * i as f64 / (samples - 1).max(1) as f64;
            if let (Ok(fp), ExtReal::Finite(f)) = (self.eval_f_prime(r), self.eval_f(r)) {
                sup = sup.max(fp.abs() / (f + 1.0));
            }
        }
        sup
    }

    fn domain_error(&self, r: f64) -> PotentialError {
        PotentialError::Domain {
            potential: self.name(),
            r,
        }
    }
}

fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(y: f64) -> f64 {
    if y >= 0.0 {
        1.0 / (1.0 + (-y).exp())
    } else {
        let e = y.exp();
        e / (1.0 + e)
    }
}

/// Root of an increasing scalar function on a bracket by Newton steps,
/// falling back to bisection whenever a step leaves the bracket or stalls.
///
/// `g` returns `(value, derivative)`; `g(lo) ≤ 0 ≤ g(hi)` is assumed.
/// Converges when the step or the bracket is below `x_tol` or the residual
/// is below `g_tol`.
pub(crate) fn safeguarded_newton(
    g: impl Fn(f64) -> (f64, f64),
    mut lo: f64,
    mut hi: f64,
    x0: f64,
    x_tol: f64,
    g_tol: f64,
    max_iter: usize,
) -> Option<(f64, usize)> {
    let mut x = x0.clamp(lo, hi);
    let mut prev_step = hi - lo;
    for it in 1..=max_iter {
        let (gx, dg) = g(x);
        if !gx.is_finite() {
            return None;
        }
        if gx.abs() <= g_tol {
            return Some((x, it));
        }
        if gx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = if dg > 0.0 { x - gx / dg } else { f64::NAN };
        let step;
        if newton.is_finite() && newton > lo && newton < hi && (newton - x).abs() < 0.5 * prev_step {
            step = newton - x;
            x = newton;
        } else {
            let mid = 0.5 * (lo + hi);
            step = mid - x;
            x = mid;
        }
        prev_step = step.abs().max(f64::MIN_POSITIVE);
        if step.abs() <= x_tol || (hi - lo) <= x_tol {
            return Some((x, it));
        }
    }
    None
}

/// Moreau–Yosida regularization of the convex part of a potential:
///
/// ```text
/// J_ε = (I + εβ)⁻¹,   β_ε = (I - J_ε)/ε,
/// B̂_ε(r) = min_t { |t - r|²/(2ε) + β̂(t) } = ε/2 |β_ε(r)|² + β̂(J_ε(r))
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizedPotential {
    pub spec: PotentialSpec,
    pub eps: f64,
}

impl RegularizedPotential {
    pub fn new(spec: PotentialSpec, eps: f64) -> Result<Self, PotentialError> {
        spec.validate()?;
        if !(eps > 0.0 && eps < 1.0) {
            return Err(PotentialError::InvalidParameter(format!(
                "regularization eps must lie in (0,1), got {eps}"
            )));
        }
        Ok(Self { spec, eps })
    }

    /// `J_ε(r)`, the unique `x ∈ D(β)` with `r ∈ x + εβ(x)`.
    pub fn resolvent(&self, r: f64) -> Result<f64, PotentialError> {
        Ok(self.resolve(r)?.0)
    }

    /// `β_ε(r) = (r - J_ε(r))/ε`.
    pub fn beta_eps(&self, r: f64) -> Result<f64, PotentialError> {
        Ok(self.resolve(r)?.1)
    }

    /// Derivative of `β_ε` (a.e.), in `[0, 1/ε]`.
    pub fn beta_eps_prime(&self, r: f64) -> Result<f64, PotentialError> {
        let eps = self.eps;
        let (x, _) = self.resolve(r)?;
        Ok(match self.spec {
            PotentialSpec::DoubleObstacle { .. } => {
                if (0.0..=1.0).contains(&r) {
                    0.0
                } else {
                    1.0 / eps
                }
            }
            PotentialSpec::SingleWellLJ { .. } if r <= 0.0 => 1.0 / eps,
            _ => {
                let bp = self.spec.beta_prime(x)?;
                bp / (1.0 + eps * bp)
            }
        })
    }

    /// Moreau envelope `B̂_ε(r)` via `ε/2 |β_ε|² + β̂(J_ε)`.
    pub fn envelope(&self, r: f64) -> Result<f64, PotentialError> {
        let eps = self.eps;
        match self.spec {
            PotentialSpec::FloryHuggins { c1, .. } => {
                // evaluate β̂(J) through the logit of J for accuracy near 0 and 1
                let y = self.fh_logit(r, c1)?;
                let b = 0.5 * c1 * y;
                let ent = -(sigmoid(y) * softplus(-y) + sigmoid(-y) * softplus(y));
                Ok(0.5 * eps * b * b + 0.5 * c1 * (ent + LN_2))
            }
            _ => {
                let (x, b) = self.resolve(r)?;
                let bh = self
                    .spec
                    .beta_hat(x)
                    .finite()
                    .ok_or(PotentialError::Convergence { r, iterations: 0 })?;
                Ok(0.5 * eps * b * b + bh)
            }
        }
    }

    /// `F_ε = B̂_ε + π̂` for singular potentials, `F` itself for smooth ones.
    pub fn f_eps(&self, r: f64) -> Result<f64, PotentialError> {
        match self.spec.mode() {
            PotentialMode::Smooth => Ok(self.spec.eval_f(r).to_f64()),
            PotentialMode::Singular => Ok(self.envelope(r)? + self.spec.pi_hat(r)),
        }
    }

    /// Derivative of the convex part used by the scheme: `β` for smooth
    /// potentials, `β_ε` for singular ones.
    pub fn convex_derivative(&self, r: f64) -> Result<f64, PotentialError> {
        match self.spec.mode() {
            PotentialMode::Smooth => self.spec.beta(r),
            PotentialMode::Singular => self.beta_eps(r),
        }
    }

    pub fn convex_derivative_slope(&self, r: f64) -> Result<f64, PotentialError> {
        match self.spec.mode() {
            PotentialMode::Smooth => self.spec.beta_prime(r),
            PotentialMode::Singular => self.beta_eps_prime(r),
        }
    }

    /// `F_ε'(r)`.
    pub fn f_eps_prime(&self, r: f64) -> Result<f64, PotentialError> {
        Ok(self.convex_derivative(r)? + self.spec.pi(r))
    }

    /// Returns `(J_ε(r), β_ε(r))`.
    fn resolve(&self, r: f64) -> Result<(f64, f64), PotentialError> {
        let eps = self.eps;
        if !r.is_finite() {
            return Err(PotentialError::Convergence { r, iterations: 0 });
        }
        match self.spec {
            PotentialSpec::DoubleObstacle { .. } => {
                let x = r.clamp(0.0, 1.0);
                Ok((x, (r - x) / eps))
            }
            PotentialSpec::SingleWellLJ { r_star, .. } => {
                if r <= 0.0 {
                    return Ok((0.0, r / eps));
                }
                // x + ε k x/(1-x) = r  ⇔  x² - (1 + εk + r) x + r = 0, smaller root
                let k = 1.0 - r_star;
                let b = 1.0 + eps * k + r;
                let disc = (1.0 - r) * (1.0 - r) + 2.0 * eps * k * (1.0 + r) + eps * eps * k * k;
                let x = 2.0 * r / (b + disc.sqrt());
                Ok((x, k * x / (1.0 - x)))
            }
            PotentialSpec::FloryHuggins { c1, .. } => {
                let y = self.fh_logit(r, c1)?;
                Ok((sigmoid(y), 0.5 * c1 * y))
            }
            PotentialSpec::RegularQuartic { .. } => {
                let spec = self.spec;
                let g = |x: f64| {
                    let b = spec.beta(x).unwrap_or(f64::NAN);
                    let bp = spec.beta_prime(x).unwrap_or(f64::NAN);
                    (x + eps * b - r, 1.0 + eps * bp)
                };
                let (lo, hi) = if r >= 0.0 { (0.0, r) } else { (r, 0.0) };
                let (x, _) = safeguarded_newton(
                    g,
                    lo,
                    hi,
                    r,
                    RESOLVENT_TOL,
                    0.0,
                    RESOLVENT_MAX_ITER,
                )
                .ok_or(PotentialError::Convergence {
                    r,
                    iterations: RESOLVENT_MAX_ITER,
                })?;
                Ok((x, (r - x) / eps))
            }
        }
    }

    /// Logit `y = ln(x/(1-x))` of the Flory–Huggins resolvent, from
    /// `σ(y) + ε c1/2 y = r`, which is smooth and increasing in `y`.
    fn fh_logit(&self, r: f64, c1: f64) -> Result<f64, PotentialError> {
        let a = 0.5 * c1 * self.eps;
        let g = |y: f64| {
            let s = sigmoid(y);
            (s + a * y - r, s * (1.0 - s) + a)
        };
        let lo = (r - 1.0) / a;
        let hi = r / a;
        let g_tol = RESOLVENT_TOL * r.abs().max(1.0);
        // x error ≤ |Δy| σ'(y) ≤ |Δy|/4
        safeguarded_newton(g, lo, hi, 0.5 * (lo + hi).clamp(-40.0, 40.0), RESOLVENT_TOL, g_tol, RESOLVENT_MAX_ITER)
            .map(|(y, _)| y)
            .ok_or(PotentialError::Convergence {
                r,
                iterations: RESOLVENT_MAX_ITER,
            })
    }
}
