//! Initial-data presets.

use std::f64::consts::PI;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fields::{laplacian, Grid2D, ScalarField, State};
use crate::potentials::{PotentialError, RegularizedPotential};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Preset {
    /// Tumor disk centered in the domain with a tanh interface, small
    /// uniform angiogenic phase, `n ≡ 1`, `c ≡ 0`.
    Spheroid {
        radius: f64,
        width: f64,
        inside: f64,
        outside: f64,
        phi_a: f64,
    },
    Uniform { phi: f64, phi_a: f64, n: f64, c: f64 },
    /// `φ = mean + amplitude·U(-1, 1)` cell by cell, other fields uniform.
    RandomPerturbation {
        mean: f64,
        amplitude: f64,
        phi_a: f64,
        n: f64,
        c: f64,
    },
}

impl Preset {
    pub fn spheroid_default() -> Self {
        Preset::Spheroid {
            radius: 0.25,
            width: 0.02,
            inside: 0.9,
            outside: 0.1,
            phi_a: 0.05,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Spheroid { .. } => "spheroid",
            Preset::Uniform { .. } => "uniform",
            Preset::RandomPerturbation { .. } => "random-perturbation",
        }
    }

    /// Builds the state at `t = 0` with `μ ≡ 0`. Lengths in `Spheroid` are
    /// relative to the shorter side of the domain.
    pub fn build(&self, grid: Grid2D, seed: u64) -> State {
        let c = |v: f64| ScalarField::constant(grid, v);
        match *self {
            Preset::Spheroid {
                radius,
                width,
                inside,
                outside,
                phi_a,
            } => {
                let scale = grid.lx().min(grid.ly());
                let (cx, cy) = (grid.lx() / 2.0, grid.ly() / 2.0);
                let phi = ScalarField::from_fn(grid, |x, y| {
                    let r = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
                    let s = 0.5 * (1.0 - ((r - radius * scale) / (width * scale)).tanh());
                    outside + (inside - outside) * s
                });
                State {
                    t: 0.0,
                    phi,
                    mu: c(0.0),
                    phi_a: c(phi_a),
                    n: c(1.0),
                    c: c(0.0),
                }
            }
            Preset::Uniform { phi, phi_a, n, c: cv } => State {
                t: 0.0,
                phi: c(phi),
                mu: c(0.0),
                phi_a: c(phi_a),
                n: c(n),
                c: c(cv),
            },
            Preset::RandomPerturbation {
                mean,
                amplitude,
                phi_a,
                n,
                c: cv,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let values = (0..grid.len())
                    .map(|_| mean + amplitude * rng.random_range(-1.0..1.0))
                    .collect();
                State {
                    t: 0.0,
                    phi: ScalarField::from_raw(grid, values),
                    mu: c(0.0),
                    phi_a: c(phi_a),
                    n: c(n),
                    c: c(cv),
                }
            }
        }
    }
}

/// Replaces `μ` by `-Δφ + F_ε'(φ)`.
pub fn with_chemical_potential(mut state: State, potential: &RegularizedPotential) -> Result<State, PotentialError> {
    let lap = laplacian(&state.phi);
    let mut mu = Vec::with_capacity(lap.values().len());
    for (l, &p) in lap.values().iter().zip(state.phi.values()) {
        mu.push(-l + potential.f_eps_prime(p)?);
    }
    state.mu = ScalarField::from_raw(*state.phi.grid(), mu);
    Ok(state)
}

/// Twin-run perturbation with `ψ = cos(πx/Lx) cos(πy/Ly)`:
/// `φ + pψ`, `φ_a + p(1+ψ)/2`, `n - p(1+ψ)/2`, `c + p(1+ψ)/2`.
/// The signs keep `φ_a ≥ 0`, `n ≤ 1` and `c ≥ 0` when the base state
/// satisfies them. `μ` is left unchanged.
pub fn perturb(state: &State, amplitude: f64) -> State {
    let grid = *state.grid();
    let psi = ScalarField::from_fn(grid, |x, y| (PI * x / grid.lx()).cos() * (PI * y / grid.ly()).cos());
    let bump = psi.map(|v| 0.5 * amplitude * (1.0 + v));
    State {
        t: state.t,
        phi: state.phi.zip_map(&psi, |f, v| f + amplitude * v),
        mu: state.mu.clone(),
        phi_a: &state.phi_a + &bump,
        n: &state.n - &bump,
        c: &state.c + &bump,
    }
}
