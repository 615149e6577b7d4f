//! Truncation `T_{L,M}` and the regularized entropy `E_{L,M}` used for the
//! angiogenic phase, with the pointwise inequalities the energy estimates
//! rely on.
//!
//! `E_{L,M}` is the `C²` convex function with `E''·T = 1`, normalized by
//! `E(1) = E'(1) = 0`:
//!
//! ```text
//!            ⎧ (r² - L²)/(2L) + (ln L - 1) r + 1    r ≤ L
//! E_{L,M}(r) ⎨ (ln r - 1) r + 1                     L < r < M
//!            ⎩ (r² - M²)/(2M) + (ln M - 1) r + 1    r ≥ M
//! ```

use std::f64::consts::E;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegularizeError {
    #[error("invalid truncation pair: L = {lower} must be below M = {upper}")]
    InvalidPair { lower: f64, upper: f64 },
    #[error("L = {lower} outside the admissible range ({range_lo}, {range_hi}) for {inequality}")]
    Range {
        inequality: &'static str,
        lower: f64,
        range_lo: f64,
        range_hi: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationPair {
    lower: f64,
    upper: f64,
}

impl TruncationPair {
    pub fn new(lower: f64, upper: f64) -> Result<Self, RegularizeError> {
        if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
            return Err(RegularizeError::InvalidPair { lower, upper });
        }
        Ok(Self { lower, upper })
    }

    /// The symmetric entropy pair `(L, 1/L)`.
    pub fn entropy_pair(lower: f64) -> Result<Self, RegularizeError> {
        Self::new(lower, 1.0 / lower)
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    /// `max(L, min(r, M))`.
    pub fn truncate(&self, r: f64) -> f64 {
        r.clamp(self.lower, self.upper)
    }

    pub fn entropy(&self, r: f64) -> f64 {
        let (l, m) = (self.lower, self.upper);
        if r <= l {
            (r * r - l * l) / (2.0 * l) + (l.ln() - 1.0) * r + 1.0
        } else if r < m {
            (r.ln() - 1.0) * r + 1.0
        } else {
            (r * r - m * m) / (2.0 * m) + (m.ln() - 1.0) * r + 1.0
        }
    }

    pub fn entropy_prime(&self, r: f64) -> f64 {
        let (l, m) = (self.lower, self.upper);
        if r <= l {
            r / l + l.ln() - 1.0
        } else if r < m {
            r.ln()
        } else {
            r / m + m.ln() - 1.0
        }
    }

    /// `1/T_{L,M}(r)`.
    pub fn entropy_second(&self, r: f64) -> f64 {
        1.0 / self.truncate(r)
    }

    /// Checks the entropy inequalities at `r` for the pair `(L, 1/L)` built
    /// from this pair's lower bound. `cbar` enables the last inequality.
    pub fn entropy_inequalities(
        &self,
        r: f64,
        cbar: Option<f64>,
    ) -> Result<InequalityReport, RegularizeError> {
        let l = self.lower;
        let inv_e = E.recip();
        if !(l > 0.0 && l < inv_e) {
            return Err(RegularizeError::Range {
                inequality: "entropy inequalities",
                lower: l,
                range_lo: 0.0,
                range_hi: inv_e,
            });
        }
        let sym = TruncationPair::entropy_pair(l)?;
        let e_lm = self.entropy(r);
        let ep_lm = self.entropy_prime(r);
        let e_sym = sym.entropy(r);
        let ep_sym = sym.entropy_prime(r);
        let rp = r.max(0.0);

        let quadratic_lower = if r <= 0.0 {
            Some(e_lm - r * r / (2.0 * l))
        } else {
            None
        };
        let derivative_growth = 2.0 * e_lm + 1.0 - r * ep_lm;
        let linear_lower = e_sym + E - 1.0 - r.abs();
        let positive_part = rp * rp * ep_sym + 0.5 * inv_e;
        let quadratic_control = match cbar {
            None => None,
            Some(c) => {
                let hi = (-(1.0 + c) / c).exp();
                if !(c > 0.0) || !(l < hi) {
                    return Err(RegularizeError::Range {
                        inequality: "quadratic control of the positive part",
                        lower: l,
                        range_lo: 0.0,
                        range_hi: hi,
                    });
                }
                let tail = ((-2.0 * (1.0 + c) / c).exp() * (c + 4.0 / (27.0 * c * c))).max((2.0 / c).exp());
                Some(c * positive_part + tail - rp * rp)
            }
        };
        Ok(InequalityReport {
            quadratic_lower,
            derivative_growth,
            linear_lower,
            positive_part,
            quadratic_control,
        })
    }
}

/// Slack (right side minus left side) of each entropy inequality at one
/// point. Nonnegative slack means the inequality holds; `None` means the
/// inequality does not apply at that point or was not requested.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InequalityReport {
    /// `E(r) ≥ r²/(2L)` for `r ≤ 0`.
    pub quadratic_lower: Option<f64>,
    /// `r E'(r) ≤ 2E(r) + 1`.
    pub derivative_growth: f64,
    /// `|r| ≤ E_{L,1/L}(r) + e - 1`.
    pub linear_lower: f64,
    /// `(r)_+² E'_{L,1/L}(r) + 1/(2e) ≥ 0`.
    pub positive_part: f64,
    /// `(r)_+² ≤ C̄ ((r)_+² E'_{L,1/L}(r) + 1/(2e)) + max(...)`.
    pub quadratic_control: Option<f64>,
}

impl InequalityReport {
    pub fn all_hold(&self) -> bool {
        self.min_slack() >= 0.0
    }

    pub fn min_slack(&self) -> f64 {
        [
            self.quadratic_lower,
            Some(self.derivative_growth),
            Some(self.linear_lower),
            Some(self.positive_part),
            self.quadratic_control,
        ]
        .into_iter()
        .flatten()
        .fold(f64::INFINITY, f64::min)
    }
}
