//! Matrix-free Krylov solvers: preconditioned conjugate gradients for the
//! symmetric blocks and right-preconditioned BiCGStab for the nonsymmetric
//! Newton systems.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KrylovError {
    #[error("{method} stalled after {iterations} iterations at relative residual {residual:e}")]
    Stall {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KrylovOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Preconditioned conjugate gradients for SPD `A`, starting from the
/// content of `x`. `precond` applies an SPD approximation of `A⁻¹`.
pub fn pcg(
    apply: impl Fn(&[f64], &mut [f64]),
    precond: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    rtol: f64,
    max_iter: usize,
) -> Result<KrylovOutcome, KrylovError> {
    let n = b.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(KrylovOutcome::default());
    }
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut rel = norm(&r) / bnorm;
    if rel <= rtol {
        return Ok(KrylovOutcome {
            iterations: 0,
            relative_residual: rel,
        });
    }
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(KrylovError::Stall {
                method: "cg",
                iterations: it,
                residual: rel,
            });
        }
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        rel = norm(&r) / bnorm;
        if rel <= rtol {
            return Ok(KrylovOutcome {
                iterations: it,
                relative_residual: rel,
            });
        }
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    Err(KrylovError::Stall {
        method: "cg",
        iterations: max_iter,
        residual: rel,
    })
}

/// Right-preconditioned BiCGStab, starting from the content of `x`.
pub fn bicgstab(
    apply: impl Fn(&[f64], &mut [f64]),
    precond: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    rtol: f64,
    max_iter: usize,
) -> Result<KrylovOutcome, KrylovError> {
    let n = b.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(KrylovOutcome::default());
    }
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut rel = norm(&r) / bnorm;
    if rel <= rtol {
        return Ok(KrylovOutcome {
            iterations: 0,
            relative_residual: rel,
        });
    }
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut p_hat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut s_hat = vec![0.0; n];
    let mut t = vec![0.0; n];
    let stall = |it, residual| KrylovError::Stall {
        method: "bicgstab",
        iterations: it,
        residual,
    };
    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || !rho_new.is_finite() {
            return Err(stall(it, rel));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        precond(&p, &mut p_hat);
        apply(&p_hat, &mut v);
        let rv = dot(&r_hat, &v);
        if rv == 0.0 || !rv.is_finite() {
            return Err(stall(it, rel));
        }
        alpha = rho / rv;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        let snorm = norm(&s) / bnorm;
        if snorm <= rtol {
            axpy(alpha, &p_hat, x);
            return Ok(KrylovOutcome {
                iterations: it,
                relative_residual: snorm,
            });
        }
        precond(&s, &mut s_hat);
        apply(&s_hat, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            return Err(stall(it, rel));
        }
        omega = dot(&t, &s) / tt;
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] = s[i] - omega * t[i];
        }
        rel = norm(&r) / bnorm;
        if rel <= rtol {
            return Ok(KrylovOutcome {
                iterations: it,
                relative_residual: rel,
            });
        }
        if omega == 0.0 {
            return Err(stall(it, rel));
        }
    }
    Err(stall(max_iter, rel))
}
