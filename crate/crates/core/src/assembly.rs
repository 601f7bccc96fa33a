//! Global sparse forms on the free DOFs of a space.
//!
//! Every matrix of a space shares one symbolic pattern. Element matrices are
//! computed in parallel over blocks of cells, then scattered serially in cell
//! order, so the floating-point result does not depend on the worker count.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::elements::FeSpace;
use crate::error::{invalid, Result};
pub use crate::field::DiscreteField;

const BLOCK: usize = 512;
const GROUP: usize = 64 * BLOCK;
const UNUSED: u32 = u32::MAX;

/// Compressed-row pattern of a symmetric matrix, columns sorted per row.
#[derive(Debug, PartialEq, Eq)]
pub struct SparsityPattern {
    n: usize,
    row_ptr: Vec<u32>,
    cols: Vec<u32>,
}

impl SparsityPattern {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row_ptr(&self) -> &[u32] {
        &self.row_ptr
    }

    pub fn cols(&self) -> &[u32] {
        &self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i] as usize..self.row_ptr[i + 1] as usize
    }

    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let r = self.row(i);
        self.cols[r.clone()]
            .binary_search(&(j as u32))
            .ok()
            .map(|k| r.start + k)
    }

    /// Diagonal pattern of dimension `n`.
    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_ptr: (0..=n as u32).collect(),
            cols: (0..n as u32).collect(),
        }
    }
}

/// Symmetric sparse matrix in compressed row storage.
#[derive(Clone)]
pub struct SparseMatrix {
    pattern: Arc<SparsityPattern>,
    values: Vec<f64>,
}

impl fmt::Debug for SparseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SparseMatrix")
            .field("dim", &self.dim())
            .field("nnz", &self.nnz())
            .finish()
    }
}

impl SparseMatrix {
    pub fn zeros(pattern: Arc<SparsityPattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        Self { pattern, values }
    }

    pub fn from_parts(pattern: Arc<SparsityPattern>, values: Vec<f64>) -> Result<Self> {
        if values.len() != pattern.nnz() {
            return Err(invalid("value array does not match the pattern"));
        }
        Ok(Self { pattern, values })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            pattern: Arc::new(SparsityPattern::identity(n)),
            values: vec![1.0; n],
        }
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn dim(&self) -> usize {
        self.pattern.n
    }

    pub fn nnz(&self) -> usize {
        self.pattern.nnz()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.position(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.get(i, i)).collect()
    }

    pub fn shares_pattern(&self, other: &SparseMatrix) -> bool {
        Arc::ptr_eq(&self.pattern, &other.pattern) || self.pattern == other.pattern
    }

    /// `y = A x`.
    pub fn mul_into(&self, x: &[f64], y: &mut [f64]) {
        let p = &*self.pattern;
        y.par_iter_mut()
            .enumerate()
            .with_min_len(4096)
            .for_each(|(i, yi)| {
                let mut acc = 0.0;
                for k in p.row(i) {
                    acc += self.values[k] * x[p.cols[k] as usize];
                }
                *yi = acc;
            });
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.mul_into(x, &mut y);
        y
    }

    /// `xᵀ A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.mul(x))
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.mul(y))
    }

    /// `self += c * other`; both must share a pattern.
    pub fn add_scaled(&mut self, c: f64, other: &SparseMatrix) -> Result<()> {
        if !self.shares_pattern(other) {
            return Err(invalid("matrices have different sparsity patterns"));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> SparseMatrix {
        SparseMatrix {
            pattern: self.pattern.clone(),
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    /// `max |A_ij - A_ji| / max |A_ij|`.
    pub fn symmetry_defect(&self) -> f64 {
        let p = &*self.pattern;
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for i in 0..p.n {
            for k in p.row(i) {
                let j = p.cols[k] as usize;
                worst = worst.max((self.values[k] - self.get(j, i)).abs());
            }
        }
        worst / scale
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Deterministic (sequential) dot product.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Trapping potentials. All presets are nonnegative.
#[derive(Clone)]
pub enum Potential {
    Zero,
    Constant(f64),
    /// `gamma_x x² + gamma_y y²`.
    Harmonic {
        gamma_x: f64,
        gamma_y: f64,
    },
    /// `1 - sin²(π(x+1)/2) sin²(π(y+1)/2)`.
    SinWell,
    /// `x² + y² + amplitude · exp(-(x-cx)² - (y-cy)²)`.
    HarmonicStirrer {
        amplitude: f64,
        center: [f64; 2],
    },
    Custom(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Potential::Zero => write!(f, "Zero"),
            Potential::Constant(c) => write!(f, "Constant({c})"),
            Potential::Harmonic { gamma_x, gamma_y } => {
                write!(f, "Harmonic {{ gamma_x: {gamma_x}, gamma_y: {gamma_y} }}")
            }
            Potential::SinWell => write!(f, "SinWell"),
            Potential::HarmonicStirrer { amplitude, center } => {
                write!(
                    f,
                    "HarmonicStirrer {{ amplitude: {amplitude}, center: {center:?} }}"
                )
            }
            Potential::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Potential {
    /// `16 x² + y²`.
    pub fn harmonic_aniso() -> Self {
        Potential::Harmonic {
            gamma_x: 16.0,
            gamma_y: 1.0,
        }
    }

    /// `x² + y² + 8 exp(-(x-1)² - y²)`.
    pub fn harmonic_stirrer() -> Self {
        Potential::HarmonicStirrer {
            amplitude: 8.0,
            center: [1.0, 0.0],
        }
    }

    pub fn custom(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Potential::Custom(Arc::new(f))
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        use std::f64::consts::FRAC_PI_2;
        match self {
            Potential::Zero => 0.0,
            Potential::Constant(c) => *c,
            Potential::Harmonic { gamma_x, gamma_y } => gamma_x * x * x + gamma_y * y * y,
            Potential::SinWell => {
                let sx = (FRAC_PI_2 * (x + 1.0)).sin();
                let sy = (FRAC_PI_2 * (y + 1.0)).sin();
                1.0 - sx * sx * sy * sy
            }
            Potential::HarmonicStirrer { amplitude, center } => {
                let (dx, dy) = (x - center[0], y - center[1]);
                x * x + y * y + amplitude * (-dx * dx - dy * dy).exp()
            }
            Potential::Custom(f) => f(x, y),
        }
    }

    /// Presets with nonnegative parameters are nonnegative everywhere;
    /// custom hooks are trusted.
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Potential::Constant(c) => *c >= 0.0,
            Potential::Harmonic { gamma_x, gamma_y } => *gamma_x >= 0.0 && *gamma_y >= 0.0,
            Potential::HarmonicStirrer { amplitude, center } => {
                *amplitude >= 0.0 && center.iter().all(|c| c.is_finite())
            }
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("potential {self:?} can become negative")))
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Potential::Zero) || matches!(self, Potential::Constant(c) if *c == 0.0)
    }
}

/// Shared symbolic data of one space: the pattern and, for every cell, the
/// position of each local entry in the value array.
pub struct Assembler {
    pattern: Arc<SparsityPattern>,
    scatter: Vec<u32>,
    n_local: usize,
}

impl fmt::Debug for Assembler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Assembler")
            .field("pattern", &self.pattern)
            .finish()
    }
}

impl Assembler {
    pub fn new(space: &FeSpace) -> Self {
        let n = space.n_free();
        let nl = space.n_local();
        let nc = space.mesh().n_cells();
        let mut free = vec![None; nl];

        let mut rows: Vec<Vec<u32>> = vec![Vec::new(); n];
        for cell in 0..nc {
            space.cell_free_dofs(cell, &mut free);
            for a in free.iter().flatten() {
                for b in free.iter().flatten() {
                    rows[*a].push(*b as u32);
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0u32);
        let mut cols = Vec::new();
        for r in &mut rows {
            r.sort_unstable();
            r.dedup();
            cols.extend_from_slice(r);
            row_ptr.push(cols.len() as u32);
            *r = Vec::new();
        }
        let pattern = SparsityPattern { n, row_ptr, cols };

        let mut scatter = vec![UNUSED; nc * nl * nl];
        for cell in 0..nc {
            space.cell_free_dofs(cell, &mut free);
            let base = cell * nl * nl;
            for (a, fa) in free.iter().enumerate() {
                let Some(i) = fa else { continue };
                for (b, fb) in free.iter().enumerate() {
                    let Some(j) = fb else { continue };
                    scatter[base + a * nl + b] =
                        pattern.position(*i, *j).expect("entry in pattern") as u32;
                }
            }
        }
        Self {
            pattern: Arc::new(pattern),
            scatter,
            n_local: nl,
        }
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    fn scatter_cell(&self, values: &mut [f64], cell: usize, local: &[f64]) {
        let m = self.n_local * self.n_local;
        for (pos, v) in self.scatter[cell * m..(cell + 1) * m].iter().zip(local) {
            if *pos != UNUSED {
                values[*pos as usize] += v;
            }
        }
    }

    /// Same element matrix on every cell.
    fn assemble_uniform(&self, n_cells: usize, local: &[f64]) -> SparseMatrix {
        let mut m = SparseMatrix::zeros(self.pattern.clone());
        for cell in 0..n_cells {
            self.scatter_cell(&mut m.values, cell, local);
        }
        m
    }

    /// Cell-dependent element matrices from `local(cell, out)`.
    pub fn assemble_cells<F>(&self, n_cells: usize, local: F) -> SparseMatrix
    where
        F: Fn(usize, &mut [f64]) + Sync,
    {
        let m2 = self.n_local * self.n_local;
        let mut out = SparseMatrix::zeros(self.pattern.clone());
        let mut start = 0;
        while start < n_cells {
            let end = (start + GROUP).min(n_cells);
            let blocks: Vec<Vec<f64>> = (start..end)
                .step_by(BLOCK)
                .collect::<Vec<_>>()
                .into_par_iter()
                .map(|b0| {
                    let b1 = (b0 + BLOCK).min(end);
                    let mut buf = vec![0.0; (b1 - b0) * m2];
                    for (k, cell) in (b0..b1).enumerate() {
                        local(cell, &mut buf[k * m2..(k + 1) * m2]);
                    }
                    buf
                })
                .collect();
            for (bi, buf) in blocks.iter().enumerate() {
                let b0 = start + bi * BLOCK;
                for (k, chunk) in buf.chunks_exact(m2).enumerate() {
                    self.scatter_cell(&mut out.values, b0 + k, chunk);
                }
            }
            start = end;
        }
        out
    }
}

fn stiffness_local(space: &FeSpace) -> Vec<f64> {
    let nl = space.n_local();
    let [sx, sy] = space.gradient_scale();
    let jac = space.jacobian();
    let quad = space.quadrature();
    let mut local = vec![0.0; nl * nl];
    for (q, w) in quad.weights.iter().enumerate() {
        let d = space.dphi_ref(q);
        for a in 0..nl {
            for b in 0..nl {
                local[a * nl + b] +=
                    w * jac * (sx * sx * d[a][0] * d[b][0] + sy * sy * d[a][1] * d[b][1]);
            }
        }
    }
    local
}

fn weighted_mass_local(space: &FeSpace, weights_at_q: &[f64], out: &mut [f64]) {
    let nl = space.n_local();
    let jac = space.jacobian();
    let quad = space.quadrature();
    out.fill(0.0);
    for (q, w) in quad.weights.iter().enumerate() {
        let s = w * jac * weights_at_q[q];
        if s == 0.0 {
            continue;
        }
        let phi = space.phi(q);
        for a in 0..nl {
            let sa = s * phi[a];
            for b in 0..nl {
                out[a * nl + b] += sa * phi[b];
            }
        }
    }
}

/// `∫ ∇_h φ_i · ∇_h φ_j`.
pub fn assemble_stiffness(space: &FeSpace) -> SparseMatrix {
    space
        .assembler()
        .assemble_uniform(space.mesh().n_cells(), &stiffness_local(space))
}

/// `∫ φ_i φ_j`.
pub fn assemble_mass(space: &FeSpace) -> SparseMatrix {
    let nq = space.quadrature().len();
    let mut local = vec![0.0; space.n_local().pow(2)];
    weighted_mass_local(space, &vec![1.0; nq], &mut local);
    space
        .assembler()
        .assemble_uniform(space.mesh().n_cells(), &local)
}

/// `∫ ω φ_i φ_j` for a pointwise weight `ω(x, y)`.
pub fn assemble_weighted_mass<W>(space: &FeSpace, weight: W) -> SparseMatrix
where
    W: Fn(f64, f64) -> f64 + Sync,
{
    let quad = space.quadrature();
    let mesh = space.mesh();
    space
        .assembler()
        .assemble_cells(mesh.n_cells(), |cell, out| {
            let w: Vec<f64> = quad
                .points
                .iter()
                .map(|p| {
                    let x = mesh.map_to_physical(cell, p[0], p[1]);
                    weight(x[0], x[1])
                })
                .collect();
            weighted_mass_local(space, &w, out);
        })
}

/// `∫ V φ_i φ_j`.
pub fn assemble_potential(space: &FeSpace, potential: &Potential) -> SparseMatrix {
    if potential.is_zero() {
        return SparseMatrix::zeros(space.assembler().pattern().clone());
    }
    assemble_weighted_mass(space, |x, y| potential.eval(x, y))
}

/// `∫ w² φ_i φ_j`; the caller applies the interaction strength.
pub fn assemble_density(space: &FeSpace, w: &DiscreteField) -> Result<SparseMatrix> {
    space.check_field(w)?;
    let nq = space.quadrature().len();
    let nl = space.n_local();
    let field = w.values();
    Ok(space
        .assembler()
        .assemble_cells(space.mesh().n_cells(), |cell, out| {
            let mut local = [0.0; 9];
            space.gather(field, cell, &mut local[..nl]);
            let rho: Vec<f64> = (0..nq)
                .map(|q| {
                    let phi = space.phi(q);
                    let v: f64 = (0..nl).map(|i| local[i] * phi[i]).sum();
                    v * v
                })
                .collect();
            weighted_mass_local(space, &rho, out);
        }))
}
