use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};

use super::basis::{ElementKind, ReferenceBasis};
use super::quadrature::{gauss_legendre, Quadrature};
use crate::assembly::Assembler;
use crate::error::{invalid, Result};
use crate::field::DiscreteField;
use crate::mesh::Mesh;

static NEXT_SPACE_ID: AtomicU64 = AtomicU64::new(1);

/// Default points per axis for all volume integrals.
pub const DEFAULT_QUAD_ORDER: usize = 5;

/// Points per axis used for edge and cell averages in interpolation.
pub const AVERAGE_QUAD_ORDER: usize = 5;

const NOT_FREE: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryMode {
    /// Homogeneous Dirichlet conditions: boundary DOFs are eliminated.
    Dirichlet,
    /// No constraints; every DOF is free. Used for consistency checks.
    Unconstrained,
}

/// Anything that can be averaged over edges and rectangles and sampled at
/// points: analytic functions, or discrete fields on other meshes.
pub trait InterpolationSource {
    fn point(&self, x: f64, y: f64) -> f64;

    /// Mean over the segment `a -> b`.
    fn segment_average(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        let (t, w) = gauss_legendre(AVERAGE_QUAD_ORDER);
        t.iter()
            .zip(&w)
            .map(|(&t, &w)| {
                let s = 0.5 * (t + 1.0);
                0.5 * w * self.point(a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1]))
            })
            .sum()
    }

    /// Mean over the axis-aligned rectangle `[lo, hi]`.
    fn rect_average(&self, lo: [f64; 2], hi: [f64; 2]) -> f64 {
        let (t, w) = gauss_legendre(AVERAGE_QUAD_ORDER);
        let mut acc = 0.0;
        for j in 0..t.len() {
            let y = lo[1] + 0.5 * (t[j] + 1.0) * (hi[1] - lo[1]);
            for i in 0..t.len() {
                let x = lo[0] + 0.5 * (t[i] + 1.0) * (hi[0] - lo[0]);
                acc += 0.25 * w[i] * w[j] * self.point(x, y);
            }
        }
        acc
    }
}

impl<F: Fn(f64, f64) -> f64> InterpolationSource for F {
    fn point(&self, x: f64, y: f64) -> f64 {
        self(x, y)
    }
}

/// A finite element space on a uniform rectangle mesh.
#[derive(Debug, Clone)]
pub struct FeSpace {
    id: u64,
    mesh: Mesh,
    basis: ReferenceBasis,
    quad: Quadrature,
    boundary: BoundaryMode,
    n_dofs: usize,
    cell_dofs: Vec<usize>,
    free_index: Vec<usize>,
    n_free: usize,
    phi: Vec<f64>,
    dphi: Vec<[f64; 2]>,
    assembler: OnceLock<Arc<Assembler>>,
}

impl FeSpace {
    /// Space with Dirichlet conditions and the given quadrature order.
    pub fn new(mesh: Mesh, kind: ElementKind, quad_order: usize) -> Result<Self> {
        Self::with_options(
            mesh,
            ReferenceBasis::new(kind),
            quad_order,
            BoundaryMode::Dirichlet,
        )
    }

    pub fn with_options(
        mesh: Mesh,
        basis: ReferenceBasis,
        quad_order: usize,
        boundary: BoundaryMode,
    ) -> Result<Self> {
        if quad_order == 0 {
            return Err(invalid("quadrature order must be at least 1"));
        }
        let kind = basis.kind();
        let nl = kind.n_local();
        let (n_dofs, cell_dofs, on_boundary) = match kind {
            ElementKind::Eq1Rot => eq1rot_numbering(&mesh),
            ElementKind::Q2 => q2_numbering(&mesh),
        };
        let mut free_index = vec![NOT_FREE; n_dofs];
        let mut n_free = 0;
        for (dof, slot) in free_index.iter_mut().enumerate() {
            if boundary == BoundaryMode::Unconstrained || !on_boundary[dof] {
                *slot = n_free;
                n_free += 1;
            }
        }

        let quad = Quadrature::tensor_gauss(quad_order);
        let mut phi = vec![0.0; quad.len() * nl];
        let mut dphi = vec![[0.0; 2]; quad.len() * nl];
        for (q, p) in quad.points.iter().enumerate() {
            basis.values(p[0], p[1], &mut phi[q * nl..(q + 1) * nl]);
            basis.gradients(p[0], p[1], &mut dphi[q * nl..(q + 1) * nl]);
        }

        Ok(Self {
            id: NEXT_SPACE_ID.fetch_add(1, Ordering::Relaxed),
            mesh,
            basis,
            quad,
            boundary,
            n_dofs,
            cell_dofs,
            free_index,
            n_free,
            phi,
            dphi,
            assembler: OnceLock::new(),
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn kind(&self) -> ElementKind {
        self.basis.kind()
    }

    pub fn basis(&self) -> &ReferenceBasis {
        &self.basis
    }

    pub fn quadrature(&self) -> &Quadrature {
        &self.quad
    }

    /// Sparsity pattern and scatter map shared by every form on this space.
    pub fn assembler(&self) -> &Arc<Assembler> {
        self.assembler
            .get_or_init(|| Arc::new(Assembler::new(self)))
    }

    pub fn boundary_mode(&self) -> BoundaryMode {
        self.boundary
    }

    pub fn n_local(&self) -> usize {
        self.basis.n_local()
    }

    /// Total DOF count, constrained DOFs included.
    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn n_constrained(&self) -> usize {
        self.n_dofs - self.n_free
    }

    /// Global DOF ids of a cell in local basis order.
    #[inline]
    pub fn cell_dofs(&self, cell: usize) -> &[usize] {
        let nl = self.n_local();
        &self.cell_dofs[cell * nl..(cell + 1) * nl]
    }

    /// Position of a global DOF in the free numbering.
    #[inline]
    pub fn free_index(&self, dof: usize) -> Option<usize> {
        let k = self.free_index[dof];
        (k != NOT_FREE).then_some(k)
    }

    pub fn is_constrained(&self, dof: usize) -> bool {
        self.free_index[dof] == NOT_FREE
    }

    /// Free-index of every local DOF of a cell, `None` when constrained.
    #[inline]
    pub fn cell_free_dofs(&self, cell: usize, out: &mut [Option<usize>]) {
        for (o, &d) in out.iter_mut().zip(self.cell_dofs(cell)) {
            *o = self.free_index(d);
        }
    }

    /// Shape values at quadrature point `q`.
    #[inline]
    pub fn phi(&self, q: usize) -> &[f64] {
        let nl = self.n_local();
        &self.phi[q * nl..(q + 1) * nl]
    }

    /// Reference shape gradients at quadrature point `q`.
    #[inline]
    pub fn dphi_ref(&self, q: usize) -> &[[f64; 2]] {
        let nl = self.n_local();
        &self.dphi[q * nl..(q + 1) * nl]
    }

    /// Factors turning reference derivatives into physical ones.
    #[inline]
    pub fn gradient_scale(&self) -> [f64; 2] {
        [2.0 / self.mesh.hx, 2.0 / self.mesh.hy]
    }

    /// Jacobian determinant of the reference-to-cell map.
    #[inline]
    pub fn jacobian(&self) -> f64 {
        0.25 * self.mesh.hx * self.mesh.hy
    }

    pub fn zero_field(&self) -> DiscreteField {
        DiscreteField::new_unchecked(self.id, vec![0.0; self.n_free])
    }

    pub fn field_from_values(&self, values: Vec<f64>) -> Result<DiscreteField> {
        if values.len() != self.n_free {
            return Err(invalid(format!(
                "expected {} free coefficients, got {}",
                self.n_free,
                values.len()
            )));
        }
        Ok(DiscreteField::new_unchecked(self.id, values))
    }

    /// Field from coefficients over all DOFs; constrained entries are dropped.
    pub fn field_from_all_dofs(&self, all: &[f64]) -> Result<DiscreteField> {
        if all.len() != self.n_dofs {
            return Err(invalid(format!(
                "expected {} coefficients, got {}",
                self.n_dofs,
                all.len()
            )));
        }
        let mut values = vec![0.0; self.n_free];
        for (d, &v) in all.iter().enumerate() {
            if let Some(k) = self.free_index(d) {
                values[k] = v;
            }
        }
        Ok(DiscreteField::new_unchecked(self.id, values))
    }

    pub fn check_field(&self, field: &DiscreteField) -> Result<()> {
        if field.space_id() != self.id || field.len() != self.n_free {
            return Err(invalid("field does not belong to this space"));
        }
        Ok(())
    }

    /// Local coefficients of `field` on `cell`.
    #[inline]
    pub fn gather(&self, field: &[f64], cell: usize, out: &mut [f64]) {
        for (o, &d) in out.iter_mut().zip(self.cell_dofs(cell)) {
            *o = self.free_index(d).map_or(0.0, |k| field[k]);
        }
    }

    /// Value and physical gradient of `field` at the quadrature points of `cell`.
    pub fn eval_at_quadrature(
        &self,
        field: &[f64],
        cell: usize,
        local: &mut [f64],
        out: &mut [(f64, [f64; 2])],
    ) {
        self.gather(field, cell, local);
        let [sx, sy] = self.gradient_scale();
        for (q, o) in out.iter_mut().enumerate() {
            let phi = self.phi(q);
            let dphi = self.dphi_ref(q);
            let mut v = 0.0;
            let mut g = [0.0; 2];
            for i in 0..local.len() {
                v += local[i] * phi[i];
                g[0] += local[i] * dphi[i][0];
                g[1] += local[i] * dphi[i][1];
            }
            *o = (v, [g[0] * sx, g[1] * sy]);
        }
    }

    /// Values and broken gradients of `field` at reference points of `cell`.
    pub fn eval_field(
        &self,
        field: &DiscreteField,
        cell: usize,
        points: &[[f64; 2]],
    ) -> Result<Vec<(f64, [f64; 2])>> {
        self.check_field(field)?;
        if cell >= self.mesh.n_cells() {
            return Err(invalid(format!("cell {cell} out of range")));
        }
        let nl = self.n_local();
        let mut local = vec![0.0; nl];
        self.gather(field.values(), cell, &mut local);
        let [sx, sy] = self.gradient_scale();
        let mut phi = vec![0.0; nl];
        let mut dphi = vec![[0.0; 2]; nl];
        Ok(points
            .iter()
            .map(|p| {
                self.basis.values(p[0], p[1], &mut phi);
                self.basis.gradients(p[0], p[1], &mut dphi);
                let mut v = 0.0;
                let mut g = [0.0; 2];
                for i in 0..nl {
                    v += local[i] * phi[i];
                    g[0] += local[i] * dphi[i][0];
                    g[1] += local[i] * dphi[i][1];
                }
                (v, [g[0] * sx, g[1] * sy])
            })
            .collect())
    }

    /// Value of `field` at a physical point.
    pub fn eval_point(&self, field: &[f64], x: f64, y: f64) -> f64 {
        let cell = self.mesh.locate(x, y);
        let [xi, eta] = self.mesh.map_to_reference(cell, x, y);
        let nl = self.n_local();
        let mut local = [0.0; 9];
        let mut phi = [0.0; 9];
        self.gather(field, cell, &mut local[..nl]);
        self.basis.values(xi, eta, &mut phi[..nl]);
        (0..nl).map(|i| local[i] * phi[i]).sum()
    }

    /// Canonical interpolant: edge and cell averages for EQ1rot, nodal values
    /// for Q2. Returns coefficients over all DOFs.
    pub fn interpolate_all_dofs(&self, source: &dyn InterpolationSource) -> Vec<f64> {
        let mesh = &self.mesh;
        let mut out = vec![0.0; self.n_dofs];
        match self.kind() {
            ElementKind::Eq1Rot => {
                for (f, face) in mesh.faces().iter().enumerate() {
                    out[f] = source.segment_average(face.start, face.end);
                }
                let nf = mesh.n_faces();
                for c in 0..mesh.n_cells() {
                    let lo = mesh.cell_origin(c);
                    out[nf + c] = source.rect_average(lo, [lo[0] + mesh.hx, lo[1] + mesh.hy]);
                }
            }
            ElementKind::Q2 => {
                let px = 2 * mesh.nx + 1;
                for (d, o) in out.iter_mut().enumerate() {
                    let (p, q) = (d % px, d / px);
                    let x = mesh.domain.xmin + p as f64 * 0.5 * mesh.hx;
                    let y = mesh.domain.ymin + q as f64 * 0.5 * mesh.hy;
                    *o = source.point(x, y);
                }
            }
        }
        out
    }

    /// Canonical interpolant restricted to the free DOFs.
    pub fn interpolate(&self, source: &dyn InterpolationSource) -> DiscreteField {
        let all = self.interpolate_all_dofs(source);
        self.field_from_all_dofs(&all)
            .expect("length matches by construction")
    }

    /// `∫ field` by quadrature.
    pub fn integral(&self, field: &DiscreteField) -> f64 {
        self.integrate_cells(field.values(), |v, _, _| v)
    }

    /// `Σ_K Σ_q w_q |J| f(u(x_q), ∇u(x_q), x_q)`.
    pub fn integrate_cells<F>(&self, field: &[f64], f: F) -> f64
    where
        F: Fn(f64, [f64; 2], [f64; 2]) -> f64,
    {
        let nq = self.quad.len();
        let mut local = vec![0.0; self.n_local()];
        let mut at_q = vec![(0.0, [0.0; 2]); nq];
        let jac = self.jacobian();
        let mut acc = 0.0;
        for cell in 0..self.mesh.n_cells() {
            self.eval_at_quadrature(field, cell, &mut local, &mut at_q);
            let mut cell_acc = 0.0;
            for (q, &(v, g)) in at_q.iter().enumerate() {
                let p = self.quad.points[q];
                let x = self.mesh.map_to_physical(cell, p[0], p[1]);
                cell_acc += self.quad.weights[q] * f(v, g, x);
            }
            acc += jac * cell_acc;
        }
        acc
    }
}

fn eq1rot_numbering(mesh: &Mesh) -> (usize, Vec<usize>, Vec<bool>) {
    let nf = mesh.n_faces();
    let nc = mesh.n_cells();
    let mut cell_dofs = Vec::with_capacity(5 * nc);
    for c in 0..nc {
        cell_dofs.extend_from_slice(&mesh.cell_faces(c));
        cell_dofs.push(nf + c);
    }
    let mut on_boundary = vec![false; nf + nc];
    for (f, face) in mesh.faces().iter().enumerate() {
        on_boundary[f] = face.is_boundary();
    }
    (nf + nc, cell_dofs, on_boundary)
}

fn q2_numbering(mesh: &Mesh) -> (usize, Vec<usize>, Vec<bool>) {
    let px = 2 * mesh.nx + 1;
    let py = 2 * mesh.ny + 1;
    let mut cell_dofs = Vec::with_capacity(9 * mesh.n_cells());
    for c in 0..mesh.n_cells() {
        let (i, j) = mesh.cell_coords(c);
        for b in 0..3 {
            for a in 0..3 {
                cell_dofs.push((2 * j + b) * px + 2 * i + a);
            }
        }
    }
    let on_boundary = (0..px * py)
        .map(|d| {
            let (p, q) = (d % px, d / px);
            p == 0 || q == 0 || p == px - 1 || q == py - 1
        })
        .collect();
    (px * py, cell_dofs, on_boundary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Domain;

    fn square(n: usize) -> Mesh {
        Mesh::uniform(Domain::square(-1.0, 1.0).unwrap(), n).unwrap()
    }

    #[test]
    fn eq1rot_dof_counts() {
        for (n, want) in [(8, 208), (16, 800), (32, 3136), (64, 12416), (128, 49408)] {
            let s = FeSpace::new(square(n), ElementKind::Eq1Rot, 5).unwrap();
            assert_eq!(s.n_dofs(), want);
            assert_eq!(s.n_dofs(), s.mesh().n_faces() + s.mesh().n_cells());
            assert_eq!(s.n_constrained(), 4 * n);
            assert_eq!(s.n_free(), s.n_dofs() - s.n_constrained());
        }
        let s = FeSpace::new(square(1), ElementKind::Eq1Rot, 5).unwrap();
        assert_eq!((s.n_dofs(), s.n_constrained(), s.n_free()), (5, 4, 1));
    }

    #[test]
    fn q2_dof_counts() {
        let s = FeSpace::new(square(4), ElementKind::Q2, 5).unwrap();
        assert_eq!(s.n_dofs(), 81);
        assert_eq!(s.n_free(), 49);
    }

    #[test]
    fn rejects_zero_quadrature() {
        assert!(FeSpace::new(square(2), ElementKind::Q2, 0).is_err());
    }

    #[test]
    fn shared_dofs_agree_between_neighbours() {
        let s = FeSpace::new(square(3), ElementKind::Q2, 3).unwrap();
        // right column of cell 0 equals left column of cell 1
        let a = s.cell_dofs(0);
        let b = s.cell_dofs(1);
        for r in 0..3 {
            assert_eq!(a[3 * r + 2], b[3 * r]);
        }
        let e = FeSpace::new(square(3), ElementKind::Eq1Rot, 3).unwrap();
        assert_eq!(e.cell_dofs(0)[1], e.cell_dofs(1)[3]);
        assert_eq!(e.cell_dofs(0)[2], e.cell_dofs(3)[0]);
    }

    fn unconstrained(n: usize, kind: ElementKind) -> FeSpace {
        FeSpace::with_options(
            square(n),
            ReferenceBasis::new(kind),
            5,
            BoundaryMode::Unconstrained,
        )
        .unwrap()
    }

    #[test]
    fn affine_functions_are_reproduced() {
        for kind in [ElementKind::Eq1Rot, ElementKind::Q2] {
            let s = unconstrained(5, kind);
            let f = |x: f64, y: f64| 0.3 + 2.0 * x - 1.5 * y;
            let u = s.interpolate(&f);
            let pts: Vec<[f64; 2]> = s.quadrature().points.clone();
            for cell in 0..s.mesh().n_cells() {
                for (p, (v, g)) in pts.iter().zip(s.eval_field(&u, cell, &pts).unwrap()) {
                    let x = s.mesh().map_to_physical(cell, p[0], p[1]);
                    assert!((v - f(x[0], x[1])).abs() < 1e-13);
                    assert!((g[0] - 2.0).abs() < 1e-12 && (g[1] + 1.5).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_cell_quadratic() {
        let s = unconstrained(1, ElementKind::Eq1Rot);
        let u = s.interpolate(&|x: f64, _: f64| x * x);
        let out = s
            .eval_field(&u, 0, &[[0.0, 0.0], [0.5, 0.2], [-0.5, -0.7]])
            .unwrap();
        assert!(out[0].1[0].abs() < 1e-14 && out[0].1[1].abs() < 1e-14);
        // x^2 lies in the local space, so the interpolant is exact
        assert!((out[1].1[0] - 1.0).abs() < 1e-13);
        assert!((out[2].1[0] + 1.0).abs() < 1e-13);
        assert!((s.integral(&u) / 4.0 - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn zero_field_evaluates_to_zero() {
        let s = FeSpace::new(square(3), ElementKind::Eq1Rot, 5).unwrap();
        let out = s.eval_field(&s.zero_field(), 4, &[[0.1, -0.3]]).unwrap();
        assert_eq!(out[0], (0.0, [0.0, 0.0]));
        assert!(s.eval_field(&s.zero_field(), 9, &[[0.0, 0.0]]).is_err());
    }

    #[test]
    fn biquadratics_are_reproduced_by_q2() {
        let s = unconstrained(3, ElementKind::Q2);
        let f = |x: f64, y: f64| (1.0 + x - x * x) * (0.5 - y + 2.0 * y * y);
        let u = s.interpolate(&f);
        for &(x, y) in &[(0.13, -0.77), (-0.9, 0.4), (0.5, 0.5)] {
            assert!((s.eval_point(u.values(), x, y) - f(x, y)).abs() < 1e-12);
        }
    }

    #[test]
    fn field_from_foreign_space_is_rejected() {
        let a = FeSpace::new(square(2), ElementKind::Eq1Rot, 5).unwrap();
        let b = FeSpace::new(square(2), ElementKind::Eq1Rot, 5).unwrap();
        assert!(a.check_field(&b.zero_field()).is_err());
        assert!(a.field_from_values(vec![0.0; 3]).is_err());
    }
}
