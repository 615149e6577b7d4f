//! Right-hand-side ingredients: model constants, the interpolation function
//! `h`, the mode switches `q_ε` and `p`, the biological source terms and the
//! two mobilities.

use thiserror::Error;

use crate::potentials::{PotentialMode, PotentialSpec};
use crate::regularize::TruncationPair;

/// Hypothesis groups a parameter set is validated against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hypothesis {
    Potential,
    Interpolation,
    Sources,
    Mobility,
    Chemotaxis,
}

impl std::fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Hypothesis::Potential => "potential splitting",
            Hypothesis::Interpolation => "interpolation function",
            Hypothesis::Sources => "source terms",
            Hypothesis::Mobility => "mobility bounds",
            Hypothesis::Chemotaxis => "chemotaxis sensitivities",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{hypothesis}: {message}")]
pub struct ParamError {
    pub hypothesis: Hypothesis,
    pub message: String,
}

impl ParamError {
    fn new(hypothesis: Hypothesis, message: impl Into<String>) -> Self {
        Self {
            hypothesis,
            message: message.into(),
        }
    }
}

/// Shape of a mobility function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MobilityKind {
    Constant(f64),
    /// `B_φ ξ φ^{2-2λ} (1-φ)² (1-φ-φ_a)^{2λ} / (1+φ_a)²` with constant `ξ`.
    KozenyCarman { b_phi: f64, lambda: f64, xi: f64 },
    /// `A / (M_al ν_l + M_av ν_φ)` with constant geometric factor `A`.
    EndothelialProduct { area: f64, friction: f64 },
}

/// A mobility together with its reported bounds `m0 ≤ value ≤ upper`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilitySpec {
    pub kind: MobilityKind,
    pub lower: f64,
    pub upper: f64,
}

impl MobilitySpec {
    pub fn constant(value: f64) -> Self {
        Self {
            kind: MobilityKind::Constant(value),
            lower: value,
            upper: value,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, MobilityKind::Constant(_))
    }

    pub fn check(&self, value: f64) -> Result<f64, BoundsViolation> {
        if value >= self.lower && value <= self.upper {
            Ok(value)
        } else {
            Err(BoundsViolation {
                value,
                lower: self.lower,
                upper: self.upper,
            })
        }
    }
}

/// A mobility left its reported bounds. Non-fatal: the solver keeps the
/// value and the diagnostics report it.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("mobility value {value} outside [{lower}, {upper}]")]
pub struct BoundsViolation {
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

/// All adimensional model constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub chi_phi: f64,
    pub chi_a: f64,
    /// apoptosis rate
    pub m: f64,
    pub kappa0: f64,
    pub kappa_inf: f64,
    pub zeta: f64,
    /// hypoxia threshold
    pub delta_n: f64,
    /// angiogenesis threshold
    pub delta_a: f64,
    /// regularization parameter
    pub eps: f64,
    pub potential: PotentialSpec,
    pub mobility_m: MobilitySpec,
    pub mobility_n: MobilitySpec,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            chi_phi: 0.01,
            chi_a: 0.001,
            m: 0.5,
            kappa0: 1.0,
            kappa_inf: 1.0,
            zeta: 0.1,
            delta_n: 0.2,
            delta_a: 0.2,
            eps: 1e-3,
            potential: PotentialSpec::FloryHuggins { c1: 1.0, c2: 3.0 },
            mobility_m: MobilitySpec::constant(1.0),
            mobility_n: MobilitySpec::constant(1.0),
        }
    }
}

/// `h(r)`: 0 below 0, identity on (0,1), 1 above 1.
pub fn h(r: f64) -> f64 {
    r.clamp(0.0, 1.0)
}

pub fn positive_part(r: f64) -> f64 {
    r.max(0.0)
}

impl ModelParams {
    pub fn mode(&self) -> PotentialMode {
        self.potential.mode()
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        use Hypothesis::*;
        self.potential
            .validate()
            .map_err(|e| ParamError::new(Potential, e.to_string()))?;
        let positive = |name: &str, v: f64, hyp| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ParamError::new(hyp, format!("{name} must be positive, got {v}")))
            }
        };
        positive("m", self.m, Sources)?;
        positive("kappa0", self.kappa0, Sources)?;
        positive("kappa_inf", self.kappa_inf, Sources)?;
        positive("zeta", self.zeta, Sources)?;
        for (name, v) in [("delta_n", self.delta_n), ("delta_a", self.delta_a)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ParamError::new(Sources, format!("{name} must lie in [0,1], got {v}")));
            }
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(ParamError::new(
                Potential,
                format!("eps must lie in (0,1), got {}", self.eps),
            ));
        }
        for (name, mob) in [("mobility_m", self.mobility_m), ("mobility_n", self.mobility_n)] {
            if !(mob.lower > 0.0 && mob.upper >= mob.lower && mob.upper.is_finite()) {
                return Err(ParamError::new(
                    Mobility,
                    format!("{name} bounds must satisfy 0 < m0 <= M < inf, got [{}, {}]", mob.lower, mob.upper),
                ));
            }
        }
        if !matches!(self.mobility_m.kind, MobilityKind::Constant(_) | MobilityKind::KozenyCarman { .. }) {
            return Err(ParamError::new(Mobility, "mobility_m must be constant or kozeny-carman"));
        }
        if !matches!(self.mobility_n.kind, MobilityKind::Constant(_) | MobilityKind::EndothelialProduct { .. }) {
            return Err(ParamError::new(Mobility, "mobility_n must be constant or endothelial"));
        }
        if !(self.chi_a > 0.0 && self.chi_a < 1.0) {
            return Err(ParamError::new(
                Chemotaxis,
                format!("chi_a must lie in (0,1), got {}", self.chi_a),
            ));
        }
        match self.mode() {
            PotentialMode::Smooth => {
                if !(self.chi_phi >= 0.0 && self.chi_phi.is_finite()) {
                    return Err(ParamError::new(
                        Chemotaxis,
                        format!("chi_phi must be nonnegative with a smooth potential, got {}", self.chi_phi),
                    ));
                }
            }
            PotentialMode::Singular => {
                if !(self.chi_phi > 0.0 && self.chi_phi < 1.0) {
                    return Err(ParamError::new(
                        Chemotaxis,
                        format!("chi_phi must lie in (0,1) with a singular potential, got {}", self.chi_phi),
                    ));
                }
            }
        }
        Ok(())
    }

    /// `T_{-1/ε, 1+1/ε}`, the wide truncation applied to `n` and `c`.
    pub fn wide_truncation(&self) -> TruncationPair {
        TruncationPair::new(-1.0 / self.eps, 1.0 + 1.0 / self.eps).expect("eps in (0,1)")
    }

    /// `T_{ε, 1/ε}`, the truncation of `φ_a` in the chemotactic flux.
    pub fn entropy_truncation(&self) -> TruncationPair {
        TruncationPair::entropy_pair(self.eps).expect("eps in (0,1)")
    }

    /// `q_ε(n)`: `h(n)` with a smooth potential, `T_{-1/ε,1+1/ε}(n)` otherwise.
    pub fn q(&self, n: f64) -> f64 {
        match self.mode() {
            PotentialMode::Smooth => h(n),
            PotentialMode::Singular => self.wide_truncation().truncate(n),
        }
    }

    /// `p(φ)`: `φ` with a smooth potential, `(φ)_+` otherwise.
    pub fn p(&self, phi: f64) -> f64 {
        match self.mode() {
            PotentialMode::Smooth => phi,
            PotentialMode::Singular => positive_part(phi),
        }
    }

    /// Proliferation `𝓗(φ, n) = (q_ε(n) - δ_n)_+ h(φ)`.
    pub fn proliferation(&self, phi: f64, n: f64) -> f64 {
        positive_part(self.q(n) - self.delta_n) * h(phi)
    }

    /// Tumor source `S = 𝓗(φ, n) - mφ`.
    pub fn s_phi(&self, phi: f64, n: f64) -> f64 {
        self.proliferation(phi, n) - self.m * phi
    }

    /// `θ(φ, c) = (T(c) - δ_a)_+ (1 - h(φ)) + ζ`.
    pub fn theta(&self, phi: f64, c: f64) -> f64 {
        let tc = self.wide_truncation().truncate(c);
        positive_part(tc - self.delta_a) * (1.0 - h(phi)) + self.zeta
    }

    /// Logistic angiogenic source `θ(φ,c) (κ₀ φ_a - κ_∞ (φ_a)_+²)`.
    pub fn s_a(&self, phi: f64, phi_a: f64, c: f64) -> f64 {
        let pa = positive_part(phi_a);
        self.theta(phi, c) * (self.kappa0 * phi_a - self.kappa_inf * pa * pa)
    }

    /// Nutrient source `(1 - q(n))(1 - h(φ) + (φ_a)_+) - p(φ) q(n)`.
    pub fn s_n(&self, phi: f64, phi_a: f64, n: f64) -> f64 {
        let q = self.q(n);
        (1.0 - q) * (1.0 - h(phi) + positive_part(phi_a)) - self.p(phi) * q
    }

    /// Angiogenic-factor source `h(φ)(δ_n - n)_+ (1 - T(c)) - (φ_a)_+ T(c)`.
    pub fn s_c(&self, phi: f64, phi_a: f64, n: f64, c: f64) -> f64 {
        let tc = self.wide_truncation().truncate(c);
        h(phi) * positive_part(self.delta_n - n) * (1.0 - tc) - positive_part(phi_a) * tc
    }

    /// Tumor mobility `𝕞(φ, φ_a, n)`.
    pub fn mobility_m(&self, phi: f64, phi_a: f64, n: f64) -> f64 {
        let _ = n; // ξ is taken constant
        match self.mobility_m.kind {
            MobilityKind::Constant(v) => v,
            MobilityKind::KozenyCarman { b_phi, lambda, xi } => {
                let liquid = (1.0 - phi - phi_a).max(0.0);
                b_phi * xi * phi.max(0.0).powf(2.0 - 2.0 * lambda) * (1.0 - phi).powi(2) * liquid.powf(2.0 * lambda)
                    / (1.0 + phi_a).powi(2)
            }
            MobilityKind::EndothelialProduct { area, friction } => area / friction,
        }
    }

    /// Endothelial mobility `𝕟(φ_a, c)`; the `φ_a` factor of the full
    /// mobility `φ_a 𝕟` is applied by the solver.
    pub fn mobility_n(&self, phi_a: f64, c: f64) -> f64 {
        let _ = (phi_a, c);
        match self.mobility_n.kind {
            MobilityKind::Constant(v) => v,
            MobilityKind::EndothelialProduct { area, friction } => area / friction,
            MobilityKind::KozenyCarman { .. } => self.mobility_m(0.0, phi_a, 0.0),
        }
    }
}
