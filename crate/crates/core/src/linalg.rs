//! Symmetric positive definite sparse solves.
//!
//! The direct route is a supernodal sparse Cholesky (faer) run sequentially so
//! results are bitwise reproducible; the iterative route is Jacobi
//! preconditioned conjugate gradients with sequential reductions.

use std::sync::Arc;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, LltRef, SymbolicCholesky, SymmetricOrdering,
};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Conj, MatMut, Par, Side};
use serde::{Deserialize, Serialize};

use crate::assembly::{dot, SparseMatrix, SparsityPattern};
use crate::error::{invalid, Error, Result};

/// Residual bound asserted after a direct solve, relative to `‖b‖`.
pub const DIRECT_RESIDUAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStrategy {
    /// Direct below `direct_threshold` free DOFs, PCG above.
    Auto,
    DirectCholesky,
    PcgJacobi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpdSolver {
    pub strategy: SolverStrategy,
    /// Relative residual target of PCG.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub direct_threshold: usize,
}

impl Default for SpdSolver {
    fn default() -> Self {
        Self {
            strategy: SolverStrategy::Auto,
            tolerance: 1e-13,
            max_iterations: 50_000,
            direct_threshold: 4_000_000,
        }
    }
}

impl SpdSolver {
    pub fn direct() -> Self {
        Self {
            strategy: SolverStrategy::DirectCholesky,
            ..Self::default()
        }
    }

    pub fn pcg(tolerance: f64) -> Self {
        Self {
            strategy: SolverStrategy::PcgJacobi,
            tolerance,
            ..Self::default()
        }
    }

    pub fn resolve(&self, n: usize) -> SolverStrategy {
        match self.strategy {
            SolverStrategy::Auto if n <= self.direct_threshold => SolverStrategy::DirectCholesky,
            SolverStrategy::Auto => SolverStrategy::PcgJacobi,
            s => s,
        }
    }

    /// Symbolic analysis for repeated solves with matrices on `pattern`.
    pub fn prepare(&self, pattern: &Arc<SparsityPattern>) -> Result<SolverContext> {
        let strategy = self.resolve(pattern.dim());
        let symbolic = match strategy {
            SolverStrategy::DirectCholesky => Some(Arc::new(symbolic_cholesky(pattern)?)),
            _ => None,
        };
        Ok(SolverContext {
            cfg: self.clone(),
            strategy,
            pattern: pattern.clone(),
            symbolic,
        })
    }

    pub fn solve(&self, a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
        self.prepare(a.pattern())?.factor(a)?.solve(b)
    }
}

fn symbolic_cholesky(pattern: &SparsityPattern) -> Result<SymbolicCholesky<u32>> {
    let n = pattern.dim();
    // a symmetric CSR pattern is also its own CSC pattern
    let sym = SymbolicSparseColMatRef::new_checked(n, n, pattern.row_ptr(), None, pattern.cols());
    factorize_symbolic_cholesky(sym, Side::Lower, SymmetricOrdering::Amd, Default::default())
        .map_err(|e| invalid(format!("symbolic factorization failed: {e:?}")))
}

/// Strategy plus cached symbolic analysis for one sparsity pattern.
pub struct SolverContext {
    cfg: SpdSolver,
    strategy: SolverStrategy,
    pattern: Arc<SparsityPattern>,
    symbolic: Option<Arc<SymbolicCholesky<u32>>>,
}

impl SolverContext {
    pub fn strategy(&self) -> SolverStrategy {
        self.strategy
    }

    pub fn factor<'a>(&self, a: &'a SparseMatrix) -> Result<Factor<'a>> {
        if !(Arc::ptr_eq(&self.pattern, a.pattern()) || *self.pattern == **a.pattern()) {
            return Err(invalid("matrix pattern differs from the analysed pattern"));
        }
        let kind = match &self.symbolic {
            Some(symbolic) => {
                let n = a.dim();
                let p = a.pattern();
                let sym = SymbolicSparseColMatRef::new_checked(n, n, p.row_ptr(), None, p.cols());
                let mat = SparseColMatRef::new(sym, a.values());
                let mut values = vec![0.0; symbolic.len_val()];
                let mut buf = MemBuffer::new(
                    symbolic.factorize_numeric_llt_scratch::<f64>(Par::Seq, Default::default()),
                );
                symbolic
                    .factorize_numeric_llt(
                        &mut values,
                        mat,
                        Side::Lower,
                        Default::default(),
                        Par::Seq,
                        MemStack::new(&mut buf),
                        Default::default(),
                    )
                    .map_err(|_| Error::NotPositiveDefinite)?;
                FactorKind::Cholesky {
                    symbolic: symbolic.clone(),
                    values,
                }
            }
            None => FactorKind::Pcg {
                inv_diag: a
                    .diagonal()
                    .iter()
                    .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
                    .collect(),
            },
        };
        Ok(Factor {
            a,
            cfg: self.cfg.clone(),
            kind,
        })
    }
}

enum FactorKind {
    Cholesky {
        symbolic: Arc<SymbolicCholesky<u32>>,
        values: Vec<f64>,
    },
    Pcg {
        inv_diag: Vec<f64>,
    },
}

/// A matrix ready for solves.
pub struct Factor<'a> {
    a: &'a SparseMatrix,
    cfg: SpdSolver,
    kind: FactorKind,
}

impl Factor<'_> {
    pub fn is_direct(&self) -> bool {
        matches!(self.kind, FactorKind::Cholesky { .. })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.a.dim() {
            return Err(invalid("right-hand side has the wrong length"));
        }
        match &self.kind {
            FactorKind::Cholesky { symbolic, values } => {
                let mut x = cholesky_solve(symbolic, values, b);
                let bnorm = norm(b);
                let mut r = residual(self.a, &x, b);
                if norm(&r) > DIRECT_RESIDUAL_TOL * bnorm {
                    // one step of iterative refinement
                    let dx = cholesky_solve(symbolic, values, &r);
                    for (xi, di) in x.iter_mut().zip(&dx) {
                        *xi += di;
                    }
                    r = residual(self.a, &x, b);
                }
                // rounding in the residual itself grows like cond(A) · eps
                if norm(&r) > 1e-7 * bnorm {
                    return Err(Error::NotPositiveDefinite);
                }
                Ok(x)
            }
            FactorKind::Pcg { inv_diag } => {
                pcg(self.a, inv_diag, b, &self.cfg, |_, _| {}).map(|r| r.solution)
            }
        }
    }
}

fn cholesky_solve(symbolic: &SymbolicCholesky<u32>, values: &[f64], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut x = b.to_vec();
    let mut buf = MemBuffer::new(symbolic.solve_in_place_scratch::<f64>(1, Par::Seq));
    LltRef::<u32, f64>::new(symbolic, values).solve_in_place_with_conj(
        Conj::No,
        MatMut::from_column_major_slice_mut(&mut x, n, 1),
        Par::Seq,
        MemStack::new(&mut buf),
    );
    x
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// `b - A x`.
pub fn residual(a: &SparseMatrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    let ax = a.mul(x);
    b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect()
}

#[derive(Debug, Clone)]
pub struct PcgReport {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned CG from a zero initial guess. `monitor` sees every
/// iterate.
pub fn pcg<M>(
    a: &SparseMatrix,
    inv_diag: &[f64],
    b: &[f64],
    cfg: &SpdSolver,
    mut monitor: M,
) -> Result<PcgReport>
where
    M: FnMut(usize, &[f64]),
{
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(PcgReport {
            solution: x,
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let target = cfg.tolerance * bnorm;
    for it in 1..=cfg.max_iterations {
        a.mul_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        monitor(it, &x);
        let rnorm = norm(&r);
        if rnorm <= target {
            return Ok(PcgReport {
                solution: x,
                iterations: it,
                relative_residual: rnorm / bnorm,
            });
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverFailure {
        iterations: cfg.max_iterations,
        residual: norm(&r) / bnorm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_mass, assemble_stiffness};
    use crate::elements::{ElementKind, FeSpace};
    use crate::mesh::{Domain, Mesh};
    use rand::{Rng, SeedableRng};

    fn eq1rot(n: usize) -> FeSpace {
        let mesh = Mesh::uniform(Domain::square(-1.0, 1.0).unwrap(), n).unwrap();
        FeSpace::new(mesh, ElementKind::Eq1Rot, 5).unwrap()
    }

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn identity_solves_trivially() {
        let a = SparseMatrix::identity(7);
        let b = random_vec(7, 1);
        for cfg in [SpdSolver::direct(), SpdSolver::pcg(1e-13)] {
            let x = cfg.solve(&a, &b).unwrap();
            assert!(x.iter().zip(&b).all(|(x, b)| (x - b).abs() < 1e-15));
        }
    }

    #[test]
    fn mass_matrix_recovers_ones() {
        let s = eq1rot(8);
        let m = assemble_mass(&s);
        let ones = vec![1.0; m.dim()];
        let b = m.mul(&ones);
        for cfg in [SpdSolver::direct(), SpdSolver::pcg(1e-14)] {
            let x = cfg.solve(&m, &b).unwrap();
            assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-12), "{cfg:?}");
        }
    }

    #[test]
    fn strategies_agree() {
        let s = eq1rot(64);
        let mut a = assemble_stiffness(&s);
        a.add_scaled(1.0, &assemble_mass(&s)).unwrap();
        let b = random_vec(a.dim(), 3);
        let direct = SpdSolver::direct().solve(&a, &b).unwrap();
        let iterative = SpdSolver::pcg(1e-13).solve(&a, &b).unwrap();
        let scale = norm(&direct);
        let diff: Vec<f64> = direct.iter().zip(&iterative).map(|(x, y)| x - y).collect();
        assert!(norm(&diff) <= 1e-10 * scale);
        assert!(norm(&residual(&a, &direct, &b)) <= DIRECT_RESIDUAL_TOL * norm(&b));
    }

    #[test]
    fn solves_are_bitwise_reproducible() {
        let s = eq1rot(16);
        let mut a = assemble_stiffness(&s);
        a.add_scaled(2.0, &assemble_mass(&s)).unwrap();
        let b = random_vec(a.dim(), 5);
        for cfg in [SpdSolver::direct(), SpdSolver::pcg(1e-13)] {
            assert_eq!(cfg.solve(&a, &b).unwrap(), cfg.solve(&a, &b).unwrap());
        }
    }

    #[test]
    fn pcg_energy_error_decreases() {
        let s = eq1rot(16);
        let mut a = assemble_stiffness(&s);
        a.add_scaled(1.0, &assemble_mass(&s)).unwrap();
        let exact = random_vec(a.dim(), 9);
        let b = a.mul(&exact);
        let mut errs = Vec::new();
        let inv: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
        pcg(&a, &inv, &b, &SpdSolver::pcg(1e-13), |_, x| {
            let e: Vec<f64> = x.iter().zip(&exact).map(|(x, y)| x - y).collect();
            errs.push(a.quad_form(&e).sqrt());
        })
        .unwrap();
        assert!(errs.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }

    #[test]
    fn indefinite_input_is_reported() {
        let s = eq1rot(4);
        let a = assemble_stiffness(&s).scaled(-1.0);
        let b = random_vec(a.dim(), 2);
        assert!(matches!(
            SpdSolver::direct().solve(&a, &b),
            Err(Error::NotPositiveDefinite)
        ));
        assert!(matches!(
            SpdSolver::pcg(1e-10).solve(&a, &b),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn pcg_iteration_budget() {
        let s = eq1rot(32);
        let a = assemble_stiffness(&s);
        let b = random_vec(a.dim(), 4);
        let cfg = SpdSolver {
            max_iterations: 3,
            ..SpdSolver::pcg(1e-13)
        };
        assert!(matches!(
            cfg.solve(&a, &b),
            Err(Error::SolverFailure { iterations: 3, .. })
        ));
    }

    #[test]
    fn mass_matrices_admit_cholesky() {
        for n in [4, 8, 16] {
            let s = eq1rot(n);
            let m = assemble_mass(&s);
            let ctx = SpdSolver::direct().prepare(m.pattern()).unwrap();
            assert!(ctx.factor(&m).is_ok());
        }
    }
}
