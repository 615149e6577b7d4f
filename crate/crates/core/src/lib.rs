//! Numerical core for a multiphase Cahn–Hilliard–Keller–Segel tumour growth
//! model with angiogenesis: potentials and their Yosida regularizations,
//! source terms, a finite-difference time stepper, a spectral Galerkin
//! oracle and energy/mass diagnostics.

pub mod krylov;
pub mod potentials;
pub mod regularize;
pub mod sources;
pub mod diagnostics;
pub mod fields;
pub mod galerkin;
pub mod scenario;
pub mod solver;
pub mod verify;

pub use fields::{Grid2D, ScalarField, State};
pub use potentials::{PotentialSpec, RegularizedPotential};
pub use regularize::TruncationPair;
pub use sources::ModelParams;
