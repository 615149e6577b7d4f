//! Cell-centered fields on a rectangle with homogeneous Neumann boundary
//! conditions.
//!
//! Values are stored row-major, `index = j * nx + i`, with cell centers at
//! `((i + ½) dx, (j + ½) dy)`. Boundary closure uses mirror ghosts, so
//! boundary faces carry exactly zero flux and every operator below is
//! conservative and symmetric with respect to the midpoint inner product.

use std::io::{self, Read, Write};
use std::sync::Arc;

use rustdct::{DctPlanner, TransformType2And3};

use thiserror::Error;

use crate::krylov::{self, KrylovError};

/// Magic bytes of the field snapshot format.
pub const SNAPSHOT_MAGIC: &[u8; 6] = b"MCHKS1";

/// Relative residual target of the inverse Laplacian solve.
pub const INVERSE_LAPLACIAN_RTOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("field has {actual} values, grid needs {expected}")]
    Length { expected: usize, actual: usize },
    #[error("non-finite value in field at index {index}")]
    NonFinite { index: usize },
    #[error("field mean {mean:e} is not zero (tolerance {tol:e})")]
    Mean { mean: f64, tol: f64 },
    #[error(transparent)]
    Convergence(#[from] KrylovError),
    #[error("snapshot format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self, FieldError> {
        if nx < 4 || ny < 4 {
            return Err(FieldError::InvalidGrid(format!("need at least 4 cells per side, got {nx}x{ny}")));
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(FieldError::InvalidGrid(format!("side lengths must be positive, got {lx}x{ly}")));
        }
        Ok(Self { nx, ny, lx, ly })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn lx(&self) -> f64 {
        self.lx
    }
    pub fn ly(&self) -> f64 {
        self.ly
    }
    pub fn dx(&self) -> f64 {
        self.lx / self.nx as f64
    }
    pub fn dy(&self) -> f64 {
        self.ly / self.ny as f64
    }
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }
    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }
    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.dx(), (j as f64 + 0.5) * self.dy())
    }

    pub fn same_as(&self, other: &Grid2D) -> bool {
        self == other
    }
}

/// Face average of a cell coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FaceAverage {
    #[default]
    Arithmetic,
    Harmonic,
}

impl FaceAverage {
    #[inline]
    fn combine(self, a: f64, b: f64) -> f64 {
        match self {
            FaceAverage::Arithmetic => 0.5 * (a + b),
            FaceAverage::Harmonic => {
                if a + b == 0.0 {
                    0.0
                } else {
                    2.0 * a * b / (a + b)
                }
            }
        }
    }
}

/// Coefficients on interior faces. `x[j * (nx-1) + i]` sits between cells
/// `(i, j)` and `(i+1, j)`; `y[j * nx + i]` between `(i, j)` and `(i, j+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceCoefficients {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl FaceCoefficients {
    pub fn uniform(grid: &Grid2D, value: f64) -> Self {
        Self {
            x: vec![value; (grid.nx - 1) * grid.ny],
            y: vec![value; grid.nx * (grid.ny - 1)],
        }
    }

    pub fn from_cells(grid: &Grid2D, cells: &[f64], avg: FaceAverage) -> Self {
        let (nx, ny) = (grid.nx, grid.ny);
        let mut x = Vec::with_capacity((nx - 1) * ny);
        for j in 0..ny {
            for i in 0..nx - 1 {
                x.push(avg.combine(cells[j * nx + i], cells[j * nx + i + 1]));
            }
        }
        let mut y = Vec::with_capacity(nx * (ny - 1));
        for j in 0..ny - 1 {
            for i in 0..nx {
                y.push(avg.combine(cells[j * nx + i], cells[(j + 1) * nx + i]));
            }
        }
        Self { x, y }
    }

    /// Pointwise product with another set of face coefficients.
    pub fn times(&self, other: &FaceCoefficients) -> FaceCoefficients {
        FaceCoefficients {
            x: self.x.iter().zip(&other.x).map(|(a, b)| a * b).collect(),
            y: self.y.iter().zip(&other.y).map(|(a, b)| a * b).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        let total: f64 = self.x.iter().chain(&self.y).sum();
        total / (self.x.len() + self.y.len()) as f64
    }
}

/// `out = div(k ∇f)` with face coefficients `k` and zero boundary flux.
pub fn apply_div_flux(grid: &Grid2D, k: &FaceCoefficients, f: &[f64], out: &mut [f64]) {
    let (nx, ny) = (grid.nx, grid.ny);
    let idx2 = 1.0 / (grid.dx() * grid.dx());
    let idy2 = 1.0 / (grid.dy() * grid.dy());
    out.iter_mut().for_each(|v| *v = 0.0);
    for j in 0..ny {
        let row = j * nx;
        for i in 0..nx - 1 {
            let flux = k.x[j * (nx - 1) + i] * (f[row + i + 1] - f[row + i]) * idx2;
            out[row + i] += flux;
            out[row + i + 1] -= flux;
        }
    }
    for j in 0..ny - 1 {
        for i in 0..nx {
            let a = j * nx + i;
            let b = a + nx;
            let flux = k.y[a] * (f[b] - f[a]) * idy2;
            out[a] += flux;
            out[b] -= flux;
        }
    }
}

/// `out = Δf` (five-point stencil, mirror ghosts).
pub fn apply_laplacian(grid: &Grid2D, f: &[f64], out: &mut [f64]) {
    let (nx, ny) = (grid.nx, grid.ny);
    let idx2 = 1.0 / (grid.dx() * grid.dx());
    let idy2 = 1.0 / (grid.dy() * grid.dy());
    for j in 0..ny {
        for i in 0..nx {
            let c = j * nx + i;
            let v = f[c];
            let w = if i > 0 { f[c - 1] } else { v };
            let e = if i + 1 < nx { f[c + 1] } else { v };
            let s = if j > 0 { f[c - nx] } else { v };
            let n = if j + 1 < ny { f[c + nx] } else { v };
            out[c] = (w - 2.0 * v + e) * idx2 + (s - 2.0 * v + n) * idy2;
        }
    }
}

/// `∑ over interior faces of k (Δf)(Δg)/h² · cell area`, the discrete
/// `∫ k ∇f·∇g`.
pub fn face_inner(grid: &Grid2D, k: Option<&FaceCoefficients>, f: &[f64], g: &[f64]) -> f64 {
    let (nx, ny) = (grid.nx, grid.ny);
    let idx2 = 1.0 / (grid.dx() * grid.dx());
    let idy2 = 1.0 / (grid.dy() * grid.dy());
    let mut acc = 0.0;
    for j in 0..ny {
        for i in 0..nx - 1 {
            let a = j * nx + i;
            let w = k.map_or(1.0, |k| k.x[j * (nx - 1) + i]);
            acc += w * (f[a + 1] - f[a]) * (g[a + 1] - g[a]) * idx2;
        }
    }
    for j in 0..ny - 1 {
        for i in 0..nx {
            let a = j * nx + i;
            let w = k.map_or(1.0, |k| k.y[a]);
            acc += w * (f[a + nx] - f[a]) * (g[a + nx] - g[a]) * idy2;
        }
    }
    acc * grid.cell_area()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid2D,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid2D) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid2D, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    /// Samples `f(x, y)` at cell centers.
    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (x, y) = grid.center(i, j);
                values.push(f(x, y));
            }
        }
        Self { grid, values }
    }

    pub fn from_values(grid: Grid2D, values: Vec<f64>) -> Result<Self, FieldError> {
        if values.len() != grid.len() {
            return Err(FieldError::Length {
                expected: grid.len(),
                actual: values.len(),
            });
        }
        let field = Self { grid, values };
        field.check_finite()?;
        Ok(field)
    }

    /// Wraps values without checking finiteness.
    pub(crate) fn from_raw(grid: Grid2D, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn check_finite(&self) -> Result<(), FieldError> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(FieldError::NonFinite { index }),
            None => Ok(()),
        }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        Self::from_raw(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        debug_assert!(self.grid.same_as(&other.grid));
        Self::from_raw(
            self.grid,
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Midpoint quadrature of the field over the rectangle.
    pub fn integrate(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_area()
    }

    pub fn mean(&self) -> f64 {
        self.integrate() / self.grid.area()
    }

    /// `∫ f g`.
    pub fn inner(&self, other: &ScalarField) -> f64 {
        krylov::dot(&self.values, &other.values) * self.grid.cell_area()
    }

    /// `‖f‖_{L²}`.
    pub fn l2_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// `∫ |∇f|²` on interior faces.
    pub fn gradient_energy(&self) -> f64 {
        face_inner(&self.grid, None, &self.values, &self.values)
    }

    /// `f - mean(f)`, with a second pass to remove the rounding residue.
    pub fn zero_mean(&self) -> ScalarField {
        let m = self.mean();
        let once = self.map(|v| v - m);
        let r = once.mean();
        once.map(|v| v - r)
    }
}

impl std::ops::Sub for &ScalarField {
    type Output = ScalarField;
    fn sub(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl std::ops::Add for &ScalarField {
    type Output = ScalarField;
    fn add(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a + b)
    }
}

/// `Δf`.
pub fn laplacian(f: &ScalarField) -> ScalarField {
    let mut out = vec![0.0; f.grid.len()];
    apply_laplacian(&f.grid, &f.values, &mut out);
    ScalarField::from_raw(f.grid, out)
}

/// `div(mob ∇f)` with face mobilities averaged from cell values.
pub fn div_mob_grad(mob: &ScalarField, f: &ScalarField, avg: FaceAverage) -> Result<ScalarField, FieldError> {
    if !mob.grid.same_as(&f.grid) {
        return Err(FieldError::GridMismatch("mobility and field grids differ".into()));
    }
    let k = FaceCoefficients::from_cells(&f.grid, &mob.values, avg);
    let mut out = vec![0.0; f.grid.len()];
    apply_div_flux(&f.grid, &k, &f.values, &mut out);
    Ok(ScalarField::from_raw(f.grid, out))
}

pub fn mean(f: &ScalarField) -> f64 {
    f.mean()
}

pub fn integrate(f: &ScalarField) -> f64 {
    f.integrate()
}

/// Zero-mean solution `u` of `-Δu = f` for zero-mean `f`, by conjugate
/// gradients on `-Δ + P₀` where `P₀` is the projection onto constants.
pub fn inv_neumann_laplacian(f: &ScalarField) -> Result<ScalarField, FieldError> {
    let grid = f.grid;
    let scale = f.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let m = f.mean();
    let tol = 1e-12 * scale + 1e-14;
    if m.abs() > tol {
        return Err(FieldError::Mean { mean: m, tol });
    }
    let b: Vec<f64> = f.values.iter().map(|v| v - m).collect();
    let n = grid.len() as f64;
    let apply = |x: &[f64], y: &mut [f64]| {
        apply_laplacian(&grid, x, y);
        let avg = x.iter().sum::<f64>() / n;
        for v in y.iter_mut() {
            *v = -*v + avg;
        }
    };
    let mut u = vec![0.0; grid.len()];
    krylov::pcg(apply, |r, z| z.copy_from_slice(r), &b, &mut u, INVERSE_LAPLACIAN_RTOL, 20 * grid.len())?;
    let um = u.iter().sum::<f64>() / n;
    u.iter_mut().for_each(|v| *v -= um);
    Ok(ScalarField::from_raw(grid, u))
}

/// `‖f‖_* = (∫ f 𝒩f)^{1/2}` for zero-mean `f`.
pub fn dual_norm(f: &ScalarField) -> Result<f64, FieldError> {
    let u = inv_neumann_laplacian(f)?;
    Ok(f.inner(&u).max(0.0).sqrt())
}

/// Exact eigendecomposition of the discrete Neumann Laplacian through
/// separable fast cosine transforms.
#[derive(Clone)]
pub struct CosineTransform {
    grid: Grid2D,
    dct_x: Arc<dyn TransformType2And3<f64>>,
    dct_y: Arc<dyn TransformType2And3<f64>>,
    lam_x: Vec<f64>,
    lam_y: Vec<f64>,
}

impl std::fmt::Debug for CosineTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CosineTransform").field("grid", &self.grid).finish()
    }
}

fn eigenvalues_1d(n: usize, h: f64) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let s = (std::f64::consts::PI * k as f64 / (2.0 * n as f64)).sin();
            -4.0 * s * s / (h * h)
        })
        .collect()
}

// orthonormal DCT-II along contiguous runs of length n
fn forward_1d(dct: &dyn TransformType2And3<f64>, buf: &mut [f64], scratch: &mut [f64]) {
    let n = buf.len();
    dct.process_dct2_with_scratch(buf, scratch);
    let w0 = (1.0 / n as f64).sqrt();
    let w = (2.0 / n as f64).sqrt();
    buf[0] *= w0;
    buf[1..].iter_mut().for_each(|v| *v *= w);
}

fn inverse_1d(dct: &dyn TransformType2And3<f64>, buf: &mut [f64], scratch: &mut [f64]) {
    let n = buf.len();
    let w0 = (1.0 / n as f64).sqrt();
    let w = (2.0 / n as f64).sqrt();
    buf[0] *= 2.0 * w0;
    buf[1..].iter_mut().for_each(|v| *v *= w);
    dct.process_dct3_with_scratch(buf, scratch);
}

impl CosineTransform {
    pub fn new(grid: Grid2D) -> Self {
        let mut planner = DctPlanner::new();
        Self {
            grid,
            dct_x: planner.plan_dct2(grid.nx),
            dct_y: planner.plan_dct2(grid.ny),
            lam_x: eigenvalues_1d(grid.nx, grid.dx()),
            lam_y: eigenvalues_1d(grid.ny, grid.dy()),
        }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    /// Eigenvalue of `Δ` (nonpositive) for mode `(kx, ky)`.
    pub fn eigenvalue(&self, kx: usize, ky: usize) -> f64 {
        self.lam_x[kx] + self.lam_y[ky]
    }

    /// Orthonormal mode coefficients, `coeff[ky * nx + kx]`.
    pub fn forward(&self, f: &[f64]) -> Vec<f64> {
        let mut out = f.to_vec();
        self.transform_in_place(&mut out, false);
        out
    }

    pub fn inverse(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = coeffs.to_vec();
        self.transform_in_place(&mut out, true);
        out
    }

    /// Applies `g(Δ)` to `f`, where `g` acts on eigenvalues.
    pub fn apply_function(&self, f: &[f64], g: impl Fn(f64) -> f64, out: &mut [f64]) {
        out.copy_from_slice(f);
        self.transform_in_place(out, false);
        let nx = self.grid.nx;
        for (idx, v) in out.iter_mut().enumerate() {
            *v *= g(self.eigenvalue(idx % nx, idx / nx));
        }
        self.transform_in_place(out, true);
    }

    fn transform_in_place(&self, data: &mut [f64], inverse: bool) {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        let one_d = if inverse { inverse_1d } else { forward_1d };
        let mut scratch = vec![0.0; self.dct_x.get_scratch_len().max(self.dct_y.get_scratch_len())];
        for row in data.chunks_exact_mut(nx) {
            one_d(self.dct_x.as_ref(), row, &mut scratch);
        }
        let mut col = vec![0.0; ny];
        for i in 0..nx {
            for j in 0..ny {
                col[j] = data[j * nx + i];
            }
            one_d(self.dct_y.as_ref(), &mut col, &mut scratch);
            for j in 0..ny {
                data[j * nx + i] = col[j];
            }
        }
    }
}

/// Shared-grid quintuple of unknowns at one time instant.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub phi: ScalarField,
    pub mu: ScalarField,
    pub phi_a: ScalarField,
    pub n: ScalarField,
    pub c: ScalarField,
}

impl State {
    pub fn new(
        t: f64,
        phi: ScalarField,
        mu: ScalarField,
        phi_a: ScalarField,
        n: ScalarField,
        c: ScalarField,
    ) -> Result<Self, FieldError> {
        let g = *phi.grid();
        for (name, f) in [("mu", &mu), ("phi_a", &phi_a), ("n", &n), ("c", &c)] {
            if !f.grid().same_as(&g) {
                return Err(FieldError::GridMismatch(format!("{name} is not on the phi grid")));
            }
        }
        Ok(Self { t, phi, mu, phi_a, n, c })
    }

    pub fn grid(&self) -> &Grid2D {
        self.phi.grid()
    }

    pub fn fields(&self) -> [(&'static str, &ScalarField); 5] {
        [
            ("phi", &self.phi),
            ("mu", &self.mu),
            ("phi_a", &self.phi_a),
            ("n", &self.n),
            ("c", &self.c),
        ]
    }

    pub fn check_finite(&self) -> Result<(), (&'static str, FieldError)> {
        for (name, f) in self.fields() {
            f.check_finite().map_err(|e| (name, e))?;
        }
        Ok(())
    }
}

/// Writes one field in the snapshot format: magic, `nx`, `ny` (u64),
/// `Lx`, `Ly` (f64), name length (u64) and bytes, time (f64), then the
/// row-major values (f64), all little-endian.
pub fn write_snapshot(w: &mut impl Write, field: &ScalarField, name: &str, t: f64) -> io::Result<()> {
    let g = field.grid();
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&(g.nx as u64).to_le_bytes())?;
    w.write_all(&(g.ny as u64).to_le_bytes())?;
    w.write_all(&g.lx.to_le_bytes())?;
    w.write_all(&g.ly.to_le_bytes())?;
    w.write_all(&(name.len() as u64).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&t.to_le_bytes())?;
    for v in field.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub name: String,
    pub t: f64,
    pub field: ScalarField,
}

pub fn read_snapshot(r: &mut impl Read) -> Result<Snapshot, FieldError> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(FieldError::Format("bad magic".into()));
    }
    let mut b8 = [0u8; 8];
    let mut u64_le = |r: &mut dyn Read| -> io::Result<u64> {
        r.read_exact(&mut b8)?;
        Ok(u64::from_le_bytes(b8))
    };
    let nx = u64_le(r)? as usize;
    let ny = u64_le(r)? as usize;
    let lx = f64::from_bits(u64_le(r)?);
    let ly = f64::from_bits(u64_le(r)?);
    let name_len = u64_le(r)? as usize;
    if name_len > 4096 {
        return Err(FieldError::Format(format!("field name length {name_len} too large")));
    }
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name).map_err(|_| FieldError::Format("field name is not UTF-8".into()))?;
    let t = f64::from_bits(u64_le(r)?);
    let grid = Grid2D::new(nx, ny, lx, ly)?;
    let mut values = Vec::with_capacity(grid.len());
    for _ in 0..grid.len() {
        values.push(f64::from_bits(u64_le(r)?));
    }
    Ok(Snapshot {
        name,
        t,
        field: ScalarField::from_values(grid, values)?,
    })
}
