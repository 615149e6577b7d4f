//! Spectral Faedo–Galerkin reference solver in the Neumann cosine basis.
//!
//! Unknowns are the coefficients of `φ`, `φ_a`, `n`, `c` on the tensor
//! modes `ψ_{ij}(x,y) = N_i(x) N_j(y)` with `N_0 = 1/√L`,
//! `N_i = √(2/L) cos(iπx/L)`. The coefficients of `μ` are eliminated at each
//! evaluation. Nonlinear integrals are evaluated pseudo-spectrally on a
//! midpoint grid with at least `2(k+1)` points per direction, which
//! integrates products of two basis functions exactly.

use std::f64::consts::PI;

use thiserror::Error;

use crate::fields::{Grid2D, ScalarField};
use crate::potentials::{PotentialError, RegularizedPotential};
use crate::sources::{positive_part, ModelParams, ParamError};

/// Largest supported mode index per direction.
pub const MAX_MODE: usize = 16;

#[derive(Debug, Error)]
pub enum GalerkinError {
    #[error("step size underflow at t = {t:e} (h = {h:e}); the system is too stiff for the explicit integrator, reduce k or increase eps")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("step limit {0} reached")]
    StepLimit(usize),
    #[error("invalid basis: {0}")]
    InvalidBasis(String),
    #[error("coefficient length {actual} does not match basis size {expected}")]
    Length { expected: usize, actual: usize },
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Params(#[from] ParamError),
}

/// One-dimensional cosine basis sampled at midpoint quadrature nodes.
#[derive(Debug, Clone)]
struct Basis1d {
    len: f64,
    q: usize,
    weight: f64,
    /// `val[i * q + p] = N_i(x_p)`
    val: Vec<f64>,
    /// `der[i * q + p] = N_i'(x_p)`
    der: Vec<f64>,
}

impl Basis1d {
    fn new(len: f64, k: usize, q: usize) -> Self {
        let mut val = vec![0.0; (k + 1) * q];
        let mut der = vec![0.0; (k + 1) * q];
        let h = len / q as f64;
        for i in 0..=k {
            let norm = if i == 0 { (1.0 / len).sqrt() } else { (2.0 / len).sqrt() };
            let w = i as f64 * PI / len;
            for p in 0..q {
                let x = (p as f64 + 0.5) * h;
                val[i * q + p] = norm * (w * x).cos();
                der[i * q + p] = -norm * w * (w * x).sin();
            }
        }
        Self {
            len,
            q,
            weight: h,
            val,
            der,
        }
    }

    fn eval(&self, i: usize, x: f64) -> f64 {
        let norm = if i == 0 { (1.0 / self.len).sqrt() } else { (2.0 / self.len).sqrt() };
        norm * (i as f64 * PI * x / self.len).cos()
    }
}

/// Tensor cosine eigenbasis of the Neumann Laplacian on `[0,Lx]×[0,Ly]`.
#[derive(Debug, Clone)]
pub struct EigenBasis {
    k: usize,
    bx: Basis1d,
    by: Basis1d,
    alpha: Vec<f64>,
}

impl EigenBasis {
    /// Basis with modes `0..=k` per direction and `2(k+1)` quadrature
    /// points per direction.
    pub fn new(lx: f64, ly: f64, k: usize) -> Result<Self, GalerkinError> {
        Self::with_quadrature(lx, ly, k, 2 * (k + 1))
    }

    pub fn with_quadrature(lx: f64, ly: f64, k: usize, q: usize) -> Result<Self, GalerkinError> {
        if k > MAX_MODE {
            return Err(GalerkinError::InvalidBasis(format!("k = {k} exceeds {MAX_MODE}")));
        }
        if q < 2 * (k + 1) {
            return Err(GalerkinError::InvalidBasis(format!(
                "{q} quadrature points per direction, need at least {}",
                2 * (k + 1)
            )));
        }
        if !(lx > 0.0 && ly > 0.0) {
            return Err(GalerkinError::InvalidBasis("side lengths must be positive".into()));
        }
        let mut alpha = Vec::with_capacity((k + 1) * (k + 1));
        for j in 0..=k {
            for i in 0..=k {
                alpha.push((i as f64 * PI / lx).powi(2) + (j as f64 * PI / ly).powi(2));
            }
        }
        Ok(Self {
            k,
            bx: Basis1d::new(lx, k, q),
            by: Basis1d::new(ly, k, q),
            alpha,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of modes, `(k+1)²`.
    pub fn len(&self) -> usize {
        (self.k + 1) * (self.k + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Eigenvalue `α_{ij}` of `-Δ` at flat index `j(k+1) + i`.
    pub fn alpha(&self, idx: usize) -> f64 {
        self.alpha[idx]
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * (self.k + 1) + i
    }

    pub fn lx(&self) -> f64 {
        self.bx.len
    }

    pub fn ly(&self) -> f64 {
        self.by.len
    }

    fn quad_len(&self) -> usize {
        self.bx.q * self.by.q
    }

    /// Values on the quadrature grid, `out[r * qx + p]`, of
    /// `Σ c_{ij} X_i(x_p) Y_j(y_r)` with `X`, `Y` either values or
    /// derivatives.
    fn synth(&self, coeffs: &[f64], dx: bool, dy: bool) -> Vec<f64> {
        let k1 = self.k + 1;
        let (qx, qy) = (self.bx.q, self.by.q);
        let tx = if dx { &self.bx.der } else { &self.bx.val };
        let ty = if dy { &self.by.der } else { &self.by.val };
        // t[j * qx + p] = Σ_i c_ij X_i(x_p)
        let mut t = vec![0.0; k1 * qx];
        for j in 0..k1 {
            for i in 0..k1 {
                let cij = coeffs[j * k1 + i];
                if cij == 0.0 {
                    continue;
                }
                let row = &tx[i * qx..(i + 1) * qx];
                for (tp, xp) in t[j * qx..(j + 1) * qx].iter_mut().zip(row) {
                    *tp += cij * xp;
                }
            }
        }
        let mut out = vec![0.0; qx * qy];
        for r in 0..qy {
            let dst = &mut out[r * qx..(r + 1) * qx];
            for j in 0..k1 {
                let y = ty[j * qy + r];
                for (d, s) in dst.iter_mut().zip(&t[j * qx..(j + 1) * qx]) {
                    *d += y * s;
                }
            }
        }
        out
    }

    /// `Σ_{p,r} w f(x_p, y_r) X_i(x_p) Y_j(y_r)` for every mode.
    fn analyze(&self, f: &[f64], dx: bool, dy: bool) -> Vec<f64> {
        let k1 = self.k + 1;
        let (qx, qy) = (self.bx.q, self.by.q);
        let tx = if dx { &self.bx.der } else { &self.bx.val };
        let ty = if dy { &self.by.der } else { &self.by.val };
        // t[r * k1 + i] = Σ_p f(p, r) X_i(x_p)
        let mut t = vec![0.0; qy * k1];
        for r in 0..qy {
            let row = &f[r * qx..(r + 1) * qx];
            for i in 0..k1 {
                let xi = &tx[i * qx..(i + 1) * qx];
                t[r * k1 + i] = row.iter().zip(xi).map(|(a, b)| a * b).sum();
            }
        }
        let w = self.bx.weight * self.by.weight;
        let mut out = vec![0.0; k1 * k1];
        for j in 0..k1 {
            for r in 0..qy {
                let y = ty[j * qy + r] * w;
                for i in 0..k1 {
                    out[j * k1 + i] += y * t[r * k1 + i];
                }
            }
        }
        out
    }

    /// Values of the expansion on the quadrature grid.
    pub fn reconstruct_quadrature(&self, coeffs: &[f64]) -> Vec<f64> {
        self.synth(coeffs, false, false)
    }

    /// `P_k f` for `f` sampled on the quadrature grid.
    pub fn project_quadrature(&self, values: &[f64]) -> Vec<f64> {
        self.analyze(values, false, false)
    }

    /// `P_k f` for a function of `(x, y)`.
    pub fn project_fn(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (qx, qy) = (self.bx.q, self.by.q);
        let mut vals = Vec::with_capacity(qx * qy);
        for r in 0..qy {
            for p in 0..qx {
                vals.push(f((p as f64 + 0.5) * self.bx.weight, (r as f64 + 0.5) * self.by.weight));
            }
        }
        self.analyze(&vals, false, false)
    }

    /// `P_k f` for a cell-centered field on the same rectangle, using the
    /// field's own midpoint quadrature.
    pub fn project_field(&self, f: &ScalarField) -> Result<Vec<f64>, GalerkinError> {
        let g = f.grid();
        if (g.lx() - self.lx()).abs() > 1e-12 * self.lx() || (g.ly() - self.ly()).abs() > 1e-12 * self.ly() {
            return Err(GalerkinError::InvalidBasis("field lives on a different rectangle".into()));
        }
        let k1 = self.k + 1;
        let (nx, ny) = (g.nx(), g.ny());
        let xs: Vec<Vec<f64>> = (0..k1)
            .map(|i| (0..nx).map(|p| self.bx.eval(i, (p as f64 + 0.5) * g.dx())).collect())
            .collect();
        let ys: Vec<Vec<f64>> = (0..k1)
            .map(|j| (0..ny).map(|r| self.by.eval(j, (r as f64 + 0.5) * g.dy())).collect())
            .collect();
        let v = f.values();
        let mut t = vec![0.0; ny * k1];
        for r in 0..ny {
            for i in 0..k1 {
                t[r * k1 + i] = (0..nx).map(|p| v[r * nx + p] * xs[i][p]).sum();
            }
        }
        let mut out = vec![0.0; k1 * k1];
        for j in 0..k1 {
            for i in 0..k1 {
                out[j * k1 + i] = (0..ny).map(|r| t[r * k1 + i] * ys[j][r]).sum::<f64>() * g.cell_area();
            }
        }
        Ok(out)
    }

    /// Evaluates the expansion at the cell centers of `grid`.
    pub fn reconstruct_on(&self, coeffs: &[f64], grid: Grid2D) -> ScalarField {
        let k1 = self.k + 1;
        let xs: Vec<Vec<f64>> = (0..k1)
            .map(|i| (0..grid.nx()).map(|p| self.bx.eval(i, (p as f64 + 0.5) * grid.dx())).collect())
            .collect();
        let ys: Vec<Vec<f64>> = (0..k1)
            .map(|j| (0..grid.ny()).map(|r| self.by.eval(j, (r as f64 + 0.5) * grid.dy())).collect())
            .collect();
        ScalarField::from_fn(grid, |x, y| {
            let p = (x / grid.dx() - 0.5).round() as usize;
            let r = (y / grid.dy() - 0.5).round() as usize;
            let mut acc = 0.0;
            for j in 0..k1 {
                for i in 0..k1 {
                    acc += coeffs[j * k1 + i] * xs[i][p] * ys[j][r];
                }
            }
            acc
        })
    }
}

/// Coefficients of `φ`, `μ`, `φ_a`, `n`, `c` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct GalerkinState {
    pub t: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub e: Vec<f64>,
}

impl GalerkinState {
    pub fn zeros(basis: &EigenBasis) -> Self {
        let z = vec![0.0; basis.len()];
        Self {
            t: 0.0,
            a: z.clone(),
            b: z.clone(),
            c: z.clone(),
            d: z.clone(),
            e: z,
        }
    }

    fn pack(&self) -> Vec<f64> {
        [&self.a[..], &self.c[..], &self.d[..], &self.e[..]].concat()
    }

    fn unpack(t: f64, y: &[f64], m: usize) -> Self {
        Self {
            t,
            a: y[..m].to_vec(),
            b: vec![0.0; m],
            c: y[m..2 * m].to_vec(),
            d: y[2 * m..3 * m].to_vec(),
            e: y[3 * m..4 * m].to_vec(),
        }
    }
}

/// Time derivatives of the `φ`, `φ_a`, `n`, `c` coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct GalerkinRhs {
    pub a: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub e: Vec<f64>,
}

/// The projected system for one parameter set and basis.
#[derive(Debug, Clone)]
pub struct GalerkinSystem {
    basis: EigenBasis,
    params: ModelParams,
    potential: RegularizedPotential,
}

impl GalerkinSystem {
    pub fn new(basis: EigenBasis, params: ModelParams) -> Result<Self, GalerkinError> {
        params.validate()?;
        let potential = RegularizedPotential::new(params.potential, params.eps)?;
        Ok(Self {
            basis,
            params,
            potential,
        })
    }

    pub fn basis(&self) -> &EigenBasis {
        &self.basis
    }

    /// Initial state `P_k` of the given cell fields.
    pub fn project_state(&self, state: &crate::fields::State) -> Result<GalerkinState, GalerkinError> {
        let b = &self.basis;
        let mut g = GalerkinState {
            t: state.t,
            a: b.project_field(&state.phi)?,
            b: vec![],
            c: b.project_field(&state.phi_a)?,
            d: b.project_field(&state.n)?,
            e: b.project_field(&state.c)?,
        };
        g.b = self.chemical_potential(&g.a)?;
        Ok(g)
    }

    /// `b_{ij} = α_{ij} a_{ij} + ⟨F_ε'(φ_k), ψ_{ij}⟩`.
    pub fn chemical_potential(&self, a: &[f64]) -> Result<Vec<f64>, GalerkinError> {
        let phi = self.basis.reconstruct_quadrature(a);
        let fp: Vec<f64> = phi
            .iter()
            .map(|&v| self.potential.f_eps_prime(v))
            .collect::<Result<_, _>>()?;
        let proj = self.basis.project_quadrature(&fp);
        Ok(a.iter()
            .zip(&proj)
            .enumerate()
            .map(|(idx, (ai, pi))| self.basis.alpha(idx) * ai + pi)
            .collect())
    }

    pub fn rhs(&self, g: &GalerkinState) -> Result<GalerkinRhs, GalerkinError> {
        let basis = &self.basis;
        let p = &self.params;
        let b = self.chemical_potential(&g.a)?;
        let phi = basis.synth(&g.a, false, false);
        let pa = basis.synth(&g.c, false, false);
        let n = basis.synth(&g.d, false, false);
        let c = basis.synth(&g.e, false, false);
        let q = basis.quad_len();

        // ∇(μ - χ_φ n), ∇φ_a, ∇c on the quadrature grid
        let chem: Vec<f64> = b.iter().zip(&g.d).map(|(bi, di)| bi - p.chi_phi * di).collect();
        let (gx, gy) = (basis.synth(&chem, true, false), basis.synth(&chem, false, true));
        let (ax, ay) = (basis.synth(&g.c, true, false), basis.synth(&g.c, false, true));
        let (cx, cy) = (basis.synth(&g.e, true, false), basis.synth(&g.e, false, true));
        let ent = p.entropy_truncation();

        let mut flux_phi = (vec![0.0; q], vec![0.0; q]);
        let mut flux_a = (vec![0.0; q], vec![0.0; q]);
        let mut src = [vec![0.0; q], vec![0.0; q], vec![0.0; q], vec![0.0; q]];
        for i in 0..q {
            let mm = p.mobility_m(phi[i], pa[i], n[i]);
            let mn = p.mobility_n(pa[i], c[i]);
            flux_phi.0[i] = mm * gx[i];
            flux_phi.1[i] = mm * gy[i];
            let t = ent.truncate(pa[i]);
            flux_a.0[i] = mn * (ax[i] - p.chi_a * t * cx[i]);
            flux_a.1[i] = mn * (ay[i] - p.chi_a * t * cy[i]);
            src[0][i] = p.s_phi(phi[i], n[i]);
            src[1][i] = p.s_a(phi[i], pa[i], c[i]);
            src[2][i] = p.chi_phi * p.p(phi[i]) + p.s_n(phi[i], pa[i], n[i]);
            src[3][i] = p.chi_a * positive_part(pa[i]) + p.s_c(phi[i], pa[i], n[i], c[i]);
        }
        let grad_proj = |f: &(Vec<f64>, Vec<f64>)| -> Vec<f64> {
            let x = basis.analyze(&f.0, true, false);
            let y = basis.analyze(&f.1, false, true);
            x.iter().zip(&y).map(|(a, b)| a + b).collect()
        };
        let dphi = grad_proj(&flux_phi);
        let dpa = grad_proj(&flux_a);
        let s: Vec<Vec<f64>> = src.iter().map(|f| basis.analyze(f, false, false)).collect();
        let m = basis.len();
        Ok(GalerkinRhs {
            a: (0..m).map(|i| -dphi[i] + s[0][i]).collect(),
            c: (0..m).map(|i| -dpa[i] + s[1][i]).collect(),
            d: (0..m).map(|i| -basis.alpha(i) * g.d[i] + s[2][i]).collect(),
            e: (0..m).map(|i| -basis.alpha(i) * g.e[i] + s[3][i]).collect(),
        })
    }

    fn rhs_packed(&self, t: f64, y: &[f64]) -> Result<Vec<f64>, GalerkinError> {
        let g = GalerkinState::unpack(t, y, self.basis.len());
        let r = self.rhs(&g)?;
        Ok([r.a, r.c, r.d, r.e].concat())
    }

    /// Free energy assembled on the quadrature grid.
    pub fn energy(&self, g: &GalerkinState) -> Result<f64, GalerkinError> {
        let basis = &self.basis;
        let p = &self.params;
        let phi = basis.synth(&g.a, false, false);
        let pa = basis.synth(&g.c, false, false);
        let n = basis.synth(&g.d, false, false);
        let c = basis.synth(&g.e, false, false);
        let ent = p.entropy_truncation();
        let mut acc = 0.0;
        for i in 0..phi.len() {
            acc += self.potential.f_eps(phi[i])? + ent.entropy(pa[i]) - p.chi_phi * n[i] * phi[i] - p.chi_a * pa[i] * c[i];
        }
        let w = basis.bx.weight * basis.by.weight;
        let grad: f64 = [&g.a, &g.d, &g.e]
            .iter()
            .map(|v| v.iter().enumerate().map(|(i, x)| basis.alpha(i) * x * x).sum::<f64>())
            .sum();
        Ok(acc * w + 0.5 * grad)
    }

    /// Mean of the reconstructed `φ`, `a_{00}/√|Ω|`.
    pub fn phi_mean(&self, g: &GalerkinState) -> f64 {
        g.a[0] / (self.basis.lx() * self.basis.ly()).sqrt()
    }

    /// Integrates from `g0` to `t_end` with the Dormand–Prince 5(4) pair.
    /// `observer` sees every accepted state, including the initial one.
    pub fn integrate(
        &self,
        g0: &GalerkinState,
        t_end: f64,
        opts: IntegratorOptions,
        mut observer: impl FnMut(&GalerkinState),
    ) -> Result<(GalerkinState, IntegratorStats), GalerkinError> {
        let m = self.basis.len();
        let mut g = g0.clone();
        g.b = self.chemical_potential(&g.a)?;
        observer(&g);
        let mut y = g.pack();
        let mut t = g0.t;
        let mut stats = IntegratorStats::default();
        let mut k1 = self.rhs_packed(t, &y)?;
        let mut h = opts.initial_step.unwrap_or_else(|| {
            let scale = y.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
            let rate = k1.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
            (0.01 * scale / rate).min(t_end - t).max(1e-12)
        });
        while t < t_end - 1e-14 * t_end.abs().max(1.0) {
            if stats.accepted + stats.rejected >= opts.max_steps {
                return Err(GalerkinError::StepLimit(opts.max_steps));
            }
            h = h.min(t_end - t);
            if h < opts.min_step * t.abs().max(1.0) {
                return Err(GalerkinError::StepSizeUnderflow { t, h });
            }
            let (y5, err, k7) = self.dopri_step(t, &y, &k1, h)?;
            let norm = error_norm(&y, &y5, &err, opts.rtol, opts.atol);
            if norm <= 1.0 && norm.is_finite() {
                t += h;
                y = y5;
                k1 = k7;
                stats.accepted += 1;
                let mut out = GalerkinState::unpack(t, &y, m);
                out.b = self.chemical_potential(&out.a)?;
                observer(&out);
                g = out;
            } else {
                stats.rejected += 1;
            }
            let factor = if norm.is_finite() {
                (0.9 * norm.max(1e-10).powf(-0.2)).clamp(0.2, 5.0)
            } else {
                0.2
            };
            h *= factor;
        }
        g.t = t;
        Ok((g, stats))
    }

    #[allow(clippy::type_complexity)]
    fn dopri_step(&self, t: f64, y: &[f64], k1: &[f64], h: f64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), GalerkinError> {
        const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
        const A: [[f64; 6]; 7] = [
            [0.0; 6],
            [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
            [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
            [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
            [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
            [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
        ];
        const E: [f64; 7] = [
            71.0 / 57600.0,
            0.0,
            -71.0 / 16695.0,
            71.0 / 1920.0,
            -17253.0 / 339200.0,
            22.0 / 525.0,
            -1.0 / 40.0,
        ];
        let n = y.len();
        let mut ks: Vec<Vec<f64>> = Vec::with_capacity(7);
        ks.push(k1.to_vec());
        for s in 1..7 {
            let mut ys = y.to_vec();
            for (j, kj) in ks.iter().enumerate() {
                let a = A[s][j];
                if a != 0.0 {
                    for i in 0..n {
                        ys[i] += h * a * kj[i];
                    }
                }
            }
            ks.push(self.rhs_packed(t + C[s] * h, &ys)?);
        }
        // the stage-7 abscissa equals the 5th-order solution (FSAL)
        let mut y5 = y.to_vec();
        for (j, kj) in ks.iter().enumerate().take(6) {
            let a = A[6][j];
            if a != 0.0 {
                for i in 0..n {
                    y5[i] += h * a * kj[i];
                }
            }
        }
        let mut err = vec![0.0; n];
        for (j, kj) in ks.iter().enumerate() {
            if E[j] != 0.0 {
                for i in 0..n {
                    err[i] += h * E[j] * kj[i];
                }
            }
        }
        let k7 = ks.pop().unwrap_or_default();
        Ok((y5, err, k7))
    }
}

fn error_norm(y0: &[f64], y1: &[f64], err: &[f64], rtol: f64, atol: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..y0.len() {
        let sc = atol + rtol * y0[i].abs().max(y1[i].abs());
        acc += (err[i] / sc).powi(2);
    }
    (acc / y0.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    pub initial_step: Option<f64>,
    /// Relative lower bound on the step size.
    pub min_step: f64,
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            initial_step: None,
            min_step: 1e-14,
            max_steps: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IntegratorStats {
    pub accepted: usize,
    pub rejected: usize,
}

/// Integrates and returns every accepted state.
pub fn integrate_galerkin(
    system: &GalerkinSystem,
    g0: &GalerkinState,
    t_end: f64,
    rtol: f64,
    atol: f64,
) -> Result<Vec<GalerkinState>, GalerkinError> {
    let mut traj = Vec::new();
    system.integrate(
        g0,
        t_end,
        IntegratorOptions {
            rtol,
            atol,
            ..IntegratorOptions::default()
        },
        |g| traj.push(g.clone()),
    )?;
    Ok(traj)
}

/// `‖f - g‖_{L²}` of a cell field against a Galerkin expansion, using the
/// field's midpoint quadrature.
pub fn l2_distance(field: &ScalarField, basis: &EigenBasis, coeffs: &[f64]) -> f64 {
    let rec = basis.reconstruct_on(coeffs, *field.grid());
    (field - &rec).l2_norm()
}

/// Distance between a cell-centered state and a Galerkin state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossError {
    /// `‖u_FD - u_k‖_{L²}/√|Ω|` for `φ`, `φ_a`, `n`, `c`.
    pub fields: [f64; 4],
}

impl CrossError {
    /// Root mean square over the four fields.
    pub fn rms(&self) -> f64 {
        (self.fields.iter().map(|e| e * e).sum::<f64>() / 4.0).sqrt()
    }

    pub fn max(&self) -> f64 {
        self.fields.iter().copied().fold(0.0, f64::max)
    }
}

pub fn cross_error(state: &crate::fields::State, basis: &EigenBasis, g: &GalerkinState) -> CrossError {
    let scale = state.grid().area().sqrt();
    CrossError {
        fields: [
            l2_distance(&state.phi, basis, &g.a) / scale,
            l2_distance(&state.phi_a, basis, &g.c) / scale,
            l2_distance(&state.n, basis, &g.d) / scale,
            l2_distance(&state.c, basis, &g.e) / scale,
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::PotentialSpec;

    fn smooth_params() -> ModelParams {
        ModelParams {
            potential: PotentialSpec::RegularQuartic { c3: 1.0 },
            ..ModelParams::default()
        }
    }

    #[test]
    fn projection_examples() {
        let b = EigenBasis::new(2.0, 3.0, 4).unwrap();
        let one = b.project_fn(|_, _| 1.0);
        assert!((one[0] - 6.0f64.sqrt()).abs() < 1e-12);
        assert!(one[1..].iter().all(|v| v.abs() < 1e-12));
        let psi10 = b.project_fn(|x, _| (2.0 / 2.0f64).sqrt() * (1.0 / 3.0f64).sqrt() * (PI * x / 2.0).cos());
        assert!((psi10[b.index(1, 0)] - 1.0).abs() < 1e-12);
        for (idx, v) in psi10.iter().enumerate() {
            if idx != b.index(1, 0) {
                assert!(v.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn project_reconstruct_is_identity_for_band_limited() {
        let b = EigenBasis::new(1.0, 1.0, 5).unwrap();
        let coeffs: Vec<f64> = (0..b.len()).map(|i| ((i * 7 % 11) as f64 - 5.0) / 10.0).collect();
        let vals = b.reconstruct_quadrature(&coeffs);
        let back = b.project_quadrature(&vals);
        for (x, y) in coeffs.iter().zip(&back) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn field_projection_matches_function_projection() {
        let b = EigenBasis::new(1.0, 1.0, 3).unwrap();
        let g = Grid2D::new(64, 64, 1.0, 1.0).unwrap();
        let f = |x: f64, y: f64| 1.0 + (PI * x).cos() * (2.0 * PI * y).cos();
        let a = b.project_field(&ScalarField::from_fn(g, f)).unwrap();
        let c = b.project_fn(f);
        for (x, y) in a.iter().zip(&c) {
            assert!((x - y).abs() < 1e-12);
        }
        let rec = b.reconstruct_on(&c, g);
        assert!((&rec - &ScalarField::from_fn(g, f)).l2_norm() < 1e-12);
    }

    #[test]
    fn zero_source_zero_state_has_zero_derivative() {
        let p = ModelParams {
            delta_n: 1.0,
            kappa0: 1e-300,
            ..smooth_params()
        };
        let b = EigenBasis::new(1.0, 1.0, 3).unwrap();
        let sys = GalerkinSystem::new(b, p).unwrap();
        // φ = 0, φ_a = 0, n = 1, c = 0
        let mut g = GalerkinState::zeros(sys.basis());
        g.d[0] = 1.0;
        let r = sys.rhs(&g).unwrap();
        for v in r.a.iter().chain(&r.c).chain(&r.d).chain(&r.e) {
            assert!(v.abs() < 1e-14);
        }
    }

    #[test]
    fn single_mode_reduces_to_scalar_odes() {
        let p = ModelParams::default();
        let b = EigenBasis::new(2.0, 2.0, 0).unwrap();
        let sys = GalerkinSystem::new(b, p).unwrap();
        let s = 2.0; // √|Ω|
        let (phi, pa, n, c) = (0.4, 0.3, 0.6, 0.2);
        let g = GalerkinState {
            t: 0.0,
            a: vec![phi * s],
            b: vec![0.0],
            c: vec![pa * s],
            d: vec![n * s],
            e: vec![c * s],
        };
        let r = sys.rhs(&g).unwrap();
        assert!((r.a[0] / s - p.s_phi(phi, n)).abs() < 1e-14);
        assert!((r.c[0] / s - p.s_a(phi, pa, c)).abs() < 1e-14);
        assert!((r.d[0] / s - p.chi_phi * phi - p.s_n(phi, pa, n)).abs() < 1e-14);
        assert!((r.e[0] / s - p.chi_a * pa - p.s_c(phi, pa, n, c)).abs() < 1e-14);
    }

    #[test]
    fn mean_channel_matches_mean_source() {
        let p = ModelParams::default();
        let b = EigenBasis::new(1.0, 1.0, 4).unwrap();
        let sys = GalerkinSystem::new(b.clone(), p).unwrap();
        let mut g = GalerkinState::zeros(&b);
        g.a = b.project_fn(|x, y| 0.5 + 0.2 * (PI * x).cos() * (PI * y).cos());
        g.c = b.project_fn(|_, _| 0.2);
        g.d = b.project_fn(|x, _| 0.7 + 0.1 * (PI * x).cos());
        let r = sys.rhs(&g).unwrap();
        // ⟨S, ψ_00⟩ from the reconstructed fields on the quadrature grid
        let phi = b.reconstruct_quadrature(&g.a);
        let n = b.reconstruct_quadrature(&g.d);
        let s: Vec<f64> = phi.iter().zip(&n).map(|(f, nn)| p.s_phi(*f, *nn)).collect();
        assert!((r.a[0] - b.project_quadrature(&s)[0]).abs() < 1e-13);
    }

    #[test]
    fn dopri_integrates_a_linear_decay() {
        // with φ_a = n = c = 0 and a single mode, a' = -m a + (q(0) - δ_n)_+ h(φ) = -m a
        let p = ModelParams {
            delta_n: 1.0,
            ..ModelParams::default()
        };
        let b = EigenBasis::new(1.0, 1.0, 0).unwrap();
        let sys = GalerkinSystem::new(b, p).unwrap();
        let mut g = GalerkinState::zeros(sys.basis());
        g.a[0] = 0.5;
        g.e[0] = 0.0;
        let (end, stats) = sys.integrate(&g, 1.0, IntegratorOptions::default(), |_| {}).unwrap();
        assert!((end.a[0] - 0.5 * (-p.m).exp()).abs() < 1e-8, "{}", end.a[0]);
        assert!(stats.accepted > 0);
        assert!((end.t - 1.0).abs() < 1e-12);
    }

    #[test]
    fn step_size_underflow_is_reported() {
        let b = EigenBasis::new(1.0, 1.0, 2).unwrap();
        let sys = GalerkinSystem::new(b, ModelParams::default()).unwrap();
        let mut g = GalerkinState::zeros(sys.basis());
        g.a[0] = 0.5;
        let opts = IntegratorOptions {
            min_step: 0.5,
            initial_step: Some(1e-3),
            ..IntegratorOptions::default()
        };
        assert!(matches!(
            sys.integrate(&g, 1.0, opts, |_| {}),
            Err(GalerkinError::StepSizeUnderflow { .. })
        ));
    }

    #[test]
    fn basis_validation() {
        assert!(EigenBasis::new(1.0, 1.0, 17).is_err());
        assert!(EigenBasis::with_quadrature(1.0, 1.0, 4, 9).is_err());
        let b = EigenBasis::new(1.0, 2.0, 2).unwrap();
        assert_eq!(b.alpha(0), 0.0);
        assert!((b.alpha(b.index(0, 1)) - (PI / 2.0).powi(2)).abs() < 1e-14);
    }
}
