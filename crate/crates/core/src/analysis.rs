//! Error measurement, convergence orders, interpolation operators and the
//! nonconformity diagnostics (jumps, consistency functional).

use rayon::prelude::*;

use crate::elements::quadrature::gauss_legendre;
use crate::elements::{ElementKind, FeSpace, InterpolationSource};
use crate::error::{invalid, Result};
use crate::field::DiscreteField;
use crate::mesh::{refine_map, Mesh};

/// Fine cells per parallel work item; the partial sums are combined in block
/// order, so results do not depend on the thread count.
const CELL_BLOCK: usize = 2048;

/// Quadrature points per direction for the consistency functional.
pub const CONSISTENCY_QUAD_POINTS: usize = 8;

/// One row of a convergence study.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRecord {
    pub n: usize,
    pub dofs: usize,
    pub l2_error: Option<f64>,
    pub h1_error: Option<f64>,
    pub energy: f64,
    pub eigenvalue: f64,
    pub energy_error: Option<f64>,
    pub eigenvalue_error: Option<f64>,
    pub iterations: usize,
    pub cpu_s: Option<f64>,
}

/// Errors between a discrete field and a nested reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorNorms {
    pub l2: f64,
    /// Broken H¹ seminorm of the error.
    pub h1_semi: f64,
    /// Full broken H¹ norm of the error.
    pub h1: f64,
}

/// Experimental order `log₂(e_coarse / e_fine)`; absent unless both errors
/// are positive and finite.
pub fn eoc(coarse: f64, fine: f64) -> Option<f64> {
    let ok = |e: f64| e > 0.0 && e.is_finite();
    (ok(coarse) && ok(fine)).then(|| (coarse / fine).log2())
}

/// Orders for a sequence on dyadic levels; the first entry is always absent.
pub fn eoc_sequence(errors: &[f64]) -> Vec<Option<f64>> {
    let mut out = vec![None; errors.len()];
    for i in 1..errors.len() {
        out[i] = eoc(errors[i - 1], errors[i]);
    }
    out
}

/// A discrete field used as an interpolation source. Edge and cell averages
/// are split along the field's own mesh lines so that they are exact for
/// piecewise polynomial fields on nested meshes.
pub struct FieldSource<'a> {
    space: &'a FeSpace,
    values: &'a [f64],
}

impl<'a> FieldSource<'a> {
    pub fn new(space: &'a FeSpace, field: &'a DiscreteField) -> Result<Self> {
        space.check_field(field)?;
        Ok(Self {
            space,
            values: field.values(),
        })
    }
}

fn pieces(length: f64, h: f64) -> usize {
    ((length / h).round() as usize).max(1)
}

impl InterpolationSource for FieldSource<'_> {
    fn point(&self, x: f64, y: f64) -> f64 {
        self.space.eval_point(self.values, x, y)
    }

    fn segment_average(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        let mesh = self.space.mesh();
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let n = if dx.abs() >= dy.abs() {
            pieces(dx.abs(), mesh.hx)
        } else {
            pieces(dy.abs(), mesh.hy)
        };
        let (t, w) = gauss_legendre(5);
        let mut acc = 0.0;
        for k in 0..n {
            for (&t, &w) in t.iter().zip(&w) {
                let s = (k as f64 + 0.5 * (t + 1.0)) / n as f64;
                acc += 0.5 * w * self.point(a[0] + s * dx, a[1] + s * dy);
            }
        }
        acc / n as f64
    }

    fn rect_average(&self, lo: [f64; 2], hi: [f64; 2]) -> f64 {
        let mesh = self.space.mesh();
        let nx = pieces(hi[0] - lo[0], mesh.hx);
        let ny = pieces(hi[1] - lo[1], mesh.hy);
        let (t, w) = gauss_legendre(5);
        let mut acc = 0.0;
        for pj in 0..ny {
            for (&tj, &wj) in t.iter().zip(&w) {
                let sy = (pj as f64 + 0.5 * (tj + 1.0)) / ny as f64;
                let y = lo[1] + sy * (hi[1] - lo[1]);
                for pi in 0..nx {
                    for (&ti, &wi) in t.iter().zip(&w) {
                        let sx = (pi as f64 + 0.5 * (ti + 1.0)) / nx as f64;
                        acc += 0.25 * wi * wj * self.point(lo[0] + sx * (hi[0] - lo[0]), y);
                    }
                }
            }
        }
        acc / (nx * ny) as f64
    }
}

/// EQ1rot interpolant preserving edge and cell averages.
pub fn interpolate_pi_h(
    space: &FeSpace,
    source: &dyn InterpolationSource,
) -> Result<DiscreteField> {
    if space.kind() != ElementKind::Eq1Rot {
        return Err(invalid(format!(
            "average-preserving interpolation needs eq1rot, got {}",
            space.kind()
        )));
    }
    Ok(space.interpolate(source))
}

/// Moves a field onto another space by its canonical interpolant, with
/// averages taken piecewise on the source mesh.
pub fn transfer(from: &FeSpace, field: &DiscreteField, to: &FeSpace) -> Result<DiscreteField> {
    let source = FieldSource::new(from, field)?;
    Ok(to.interpolate(&source))
}

/// Cell means of `v`.
pub fn project_pi0(space: &FeSpace, v: &DiscreteField) -> Result<Vec<f64>> {
    space.check_field(v)?;
    let quad = space.quadrature();
    let mut local = vec![0.0; space.n_local()];
    let mut at_q = vec![(0.0, [0.0; 2]); quad.len()];
    Ok((0..space.mesh().n_cells())
        .map(|cell| {
            space.eval_at_quadrature(v.values(), cell, &mut local, &mut at_q);
            0.25 * at_q
                .iter()
                .zip(&quad.weights)
                .map(|(&(u, _), w)| w * u)
                .sum::<f64>()
        })
        .collect())
}

/// `‖v - Π₀v‖_{L²}`.
pub fn pi0_defect(space: &FeSpace, v: &DiscreteField) -> Result<f64> {
    let means = project_pi0(space, v)?;
    let quad = space.quadrature();
    let mut local = vec![0.0; space.n_local()];
    let mut at_q = vec![(0.0, [0.0; 2]); quad.len()];
    let mut acc = 0.0;
    for (cell, &mean) in means.iter().enumerate() {
        space.eval_at_quadrature(v.values(), cell, &mut local, &mut at_q);
        for (&(u, _), w) in at_q.iter().zip(&quad.weights) {
            acc += w * (u - mean).powi(2);
        }
    }
    Ok((acc * space.jacobian()).sqrt())
}

pub fn l2_norm(space: &FeSpace, v: &DiscreteField) -> Result<f64> {
    space.check_field(v)?;
    Ok(space.integrate_cells(v.values(), |u, _, _| u * u).sqrt())
}

/// `‖∇_h v‖_{L²}`.
pub fn h1_seminorm(space: &FeSpace, v: &DiscreteField) -> Result<f64> {
    space.check_field(v)?;
    Ok(space
        .integrate_cells(v.values(), |_, g, _| g[0] * g[0] + g[1] * g[1])
        .sqrt())
}

/// Full broken H¹ norm.
pub fn h1_norm(space: &FeSpace, v: &DiscreteField) -> Result<f64> {
    Ok(l2_norm(space, v)?.hypot(h1_seminorm(space, v)?))
}

/// Value of `field` inside `cell` at a physical point, using that cell's
/// polynomial even on the cell boundary.
fn eval_in_cell(space: &FeSpace, field: &[f64], cell: usize, x: f64, y: f64) -> f64 {
    let [xi, eta] = space.mesh().map_to_reference(cell, x, y);
    let nl = space.n_local();
    let mut local = [0.0; 9];
    let mut phi = [0.0; 9];
    space.gather(field, cell, &mut local[..nl]);
    space.basis().values(xi, eta, &mut phi[..nl]);
    (0..nl).map(|i| local[i] * phi[i]).sum()
}

/// Jump `v_first - v_second` (or the trace on the boundary) at a point of
/// face `f`.
fn jump_at(space: &FeSpace, field: &[f64], f: usize, x: f64, y: f64) -> f64 {
    let face = space.mesh().face(f);
    let inner = eval_in_cell(space, field, face.first, x, y);
    match face.second {
        Some(c) => inner - eval_in_cell(space, field, c, x, y),
        None => inner,
    }
}

/// `(Σ_e h⁻¹ ‖[v]‖²_{L²(e)})^{1/2}` with 5-point Gauss on each face.
pub fn jump_seminorm(space: &FeSpace, v: &DiscreteField) -> Result<f64> {
    space.check_field(v)?;
    let mesh = space.mesh();
    let (t, w) = gauss_legendre(5);
    let mut acc = 0.0;
    for (f, face) in mesh.faces().iter().enumerate() {
        let half = 0.5 * face.length();
        let mut e = 0.0;
        for (&t, &w) in t.iter().zip(&w) {
            let s = 0.5 * (t + 1.0);
            let x = face.start[0] + s * (face.end[0] - face.start[0]);
            let y = face.start[1] + s * (face.end[1] - face.start[1]);
            e += w * jump_at(space, v.values(), f, x, y).powi(2);
        }
        acc += half * e;
    }
    Ok((acc / mesh.h()).sqrt())
}

/// A vector field together with its divergence.
pub trait VectorField: Sync {
    fn value(&self, x: f64, y: f64) -> [f64; 2];
    fn divergence(&self, x: f64, y: f64) -> f64;
}

/// Closure-backed [`VectorField`].
pub struct FnVectorField<G, D> {
    pub value: G,
    pub divergence: D,
}

impl<G, D> VectorField for FnVectorField<G, D>
where
    G: Fn(f64, f64) -> [f64; 2] + Sync,
    D: Fn(f64, f64) -> f64 + Sync,
{
    fn value(&self, x: f64, y: f64) -> [f64; 2] {
        (self.value)(x, y)
    }

    fn divergence(&self, x: f64, y: f64) -> f64 {
        (self.divergence)(x, y)
    }
}

/// `∫ v ∇·g + g·∇_h v`, summed cell by cell.
pub fn consistency_functional(
    space: &FeSpace,
    v: &DiscreteField,
    g: &dyn VectorField,
) -> Result<f64> {
    space.check_field(v)?;
    let mesh = space.mesh();
    let (t, w) = gauss_legendre(CONSISTENCY_QUAD_POINTS);
    let nl = space.n_local();
    let [sx, sy] = space.gradient_scale();
    let mut local = vec![0.0; nl];
    let mut phi = vec![0.0; nl];
    let mut dphi = vec![[0.0; 2]; nl];
    let mut acc = 0.0;
    for cell in 0..mesh.n_cells() {
        space.gather(v.values(), cell, &mut local);
        let mut cell_acc = 0.0;
        for j in 0..t.len() {
            for i in 0..t.len() {
                space.basis().values(t[i], t[j], &mut phi);
                space.basis().gradients(t[i], t[j], &mut dphi);
                let mut u = 0.0;
                let mut du = [0.0; 2];
                for k in 0..nl {
                    u += local[k] * phi[k];
                    du[0] += local[k] * dphi[k][0] * sx;
                    du[1] += local[k] * dphi[k][1] * sy;
                }
                let [x, y] = mesh.map_to_physical(cell, t[i], t[j]);
                let gv = g.value(x, y);
                cell_acc += w[i] * w[j] * (u * g.divergence(x, y) + gv[0] * du[0] + gv[1] * du[1]);
            }
        }
        acc += cell_acc;
    }
    Ok(acc * space.jacobian())
}

/// The same functional as `Σ_e ∫_e [v] g·n_e`.
pub fn consistency_functional_faces(
    space: &FeSpace,
    v: &DiscreteField,
    g: &dyn VectorField,
) -> Result<f64> {
    space.check_field(v)?;
    let mesh = space.mesh();
    let (t, w) = gauss_legendre(CONSISTENCY_QUAD_POINTS);
    let mut acc = 0.0;
    for (f, face) in mesh.faces().iter().enumerate() {
        let n = face.normal(mesh);
        let mut e = 0.0;
        for (&t, &w) in t.iter().zip(&w) {
            let s = 0.5 * (t + 1.0);
            let x = face.start[0] + s * (face.end[0] - face.start[0]);
            let y = face.start[1] + s * (face.end[1] - face.start[1]);
            let gv = g.value(x, y);
            e += w * jump_at(space, v.values(), f, x, y) * (gv[0] * n[0] + gv[1] * n[1]);
        }
        acc += 0.5 * face.length() * e;
    }
    Ok(acc)
}

/// The functional tested against every basis function: entry `i` is
/// `ℰ(φ_i, g)` for the free DOF `i`.
pub fn consistency_vector(space: &FeSpace, g: &dyn VectorField) -> Vec<f64> {
    let mesh = space.mesh();
    let (t, w) = gauss_legendre(CONSISTENCY_QUAD_POINTS);
    let nl = space.n_local();
    let [sx, sy] = space.gradient_scale();
    let jac = space.jacobian();
    let mut phi = vec![0.0; nl];
    let mut dphi = vec![[0.0; 2]; nl];
    let mut free = vec![None; nl];
    let mut out = vec![0.0; space.n_free()];
    let mut local = vec![0.0; nl];
    for cell in 0..mesh.n_cells() {
        local.iter_mut().for_each(|l| *l = 0.0);
        for j in 0..t.len() {
            for i in 0..t.len() {
                space.basis().values(t[i], t[j], &mut phi);
                space.basis().gradients(t[i], t[j], &mut dphi);
                let [x, y] = mesh.map_to_physical(cell, t[i], t[j]);
                let gv = g.value(x, y);
                let div = g.divergence(x, y);
                for k in 0..nl {
                    local[k] += w[i]
                        * w[j]
                        * (phi[k] * div + gv[0] * dphi[k][0] * sx + gv[1] * dphi[k][1] * sy);
                }
            }
        }
        space.cell_free_dofs(cell, &mut free);
        for k in 0..nl {
            if let Some(d) = free[k] {
                out[d] += jac * local[k];
            }
        }
    }
    out
}

/// `max |∂²v/∂x∂y|` over all cells' quadrature points.
pub fn mixed_derivative_check(space: &FeSpace, v: &DiscreteField) -> Result<f64> {
    space.check_field(v)?;
    let nl = space.n_local();
    let [sx, sy] = space.gradient_scale();
    let mut local = vec![0.0; nl];
    let mut dxy = vec![0.0; nl];
    let mut worst = 0.0f64;
    for cell in 0..space.mesh().n_cells() {
        space.gather(v.values(), cell, &mut local);
        for p in &space.quadrature().points {
            space.basis().mixed_derivatives(p[0], p[1], &mut dxy);
            let m: f64 = local.iter().zip(&dxy).map(|(a, b)| a * b).sum();
            worst = worst.max((m * sx * sy).abs());
        }
    }
    Ok(worst)
}

/// `‖∂²v/∂x∂y‖_{L²}` with the broken second derivative.
pub fn mixed_derivative_l2(space: &FeSpace, v: &DiscreteField) -> Result<f64> {
    space.check_field(v)?;
    let nl = space.n_local();
    let [sx, sy] = space.gradient_scale();
    let quad = space.quadrature();
    let mut local = vec![0.0; nl];
    let mut dxy = vec![0.0; nl];
    let mut acc = 0.0;
    for cell in 0..space.mesh().n_cells() {
        space.gather(v.values(), cell, &mut local);
        for (p, w) in quad.points.iter().zip(&quad.weights) {
            space.basis().mixed_derivatives(p[0], p[1], &mut dxy);
            let m: f64 = local.iter().zip(&dxy).map(|(a, b)| a * b).sum::<f64>() * sx * sy;
            acc += w * m * m;
        }
    }
    Ok((acc * space.jacobian()).sqrt())
}

/// Coarse basis tables at the fine quadrature points, one table per
/// position of a fine cell inside its parent.
struct NestedTables {
    ratio: [usize; 2],
    phi: Vec<Vec<f64>>,
    dphi: Vec<Vec<[f64; 2]>>,
}

impl NestedTables {
    fn new(coarse: &FeSpace, fine: &FeSpace, ratio: [usize; 2]) -> Self {
        let nl = coarse.n_local();
        let quad = fine.quadrature();
        let mut phi = Vec::new();
        let mut dphi = Vec::new();
        for b in 0..ratio[1] {
            for a in 0..ratio[0] {
                let mut p = vec![0.0; nl * quad.len()];
                let mut d = vec![[0.0; 2]; nl * quad.len()];
                for (q, pt) in quad.points.iter().enumerate() {
                    // fine reference point -> parent reference point
                    let xi = -1.0 + (2.0 * a as f64 + pt[0] + 1.0) / ratio[0] as f64;
                    let eta = -1.0 + (2.0 * b as f64 + pt[1] + 1.0) / ratio[1] as f64;
                    coarse.basis().values(xi, eta, &mut p[q * nl..(q + 1) * nl]);
                    coarse
                        .basis()
                        .gradients(xi, eta, &mut d[q * nl..(q + 1) * nl]);
                }
                phi.push(p);
                dphi.push(d);
            }
        }
        Self { ratio, phi, dphi }
    }
}

/// `∫ f(coarse(x), fine(x))` over the fine mesh, with both fields given as
/// value and broken gradient at each fine quadrature point.
fn nested_integral<F>(
    coarse: &FeSpace,
    coarse_field: &[f64],
    fine: &FeSpace,
    fine_field: &[f64],
    f: F,
) -> Result<[f64; 2]>
where
    F: Fn((f64, [f64; 2]), (f64, [f64; 2])) -> [f64; 2] + Sync,
{
    let map = refine_map(coarse.mesh(), fine.mesh())?;
    let ratio = [map.ratio_x, map.ratio_y];
    let tables = NestedTables::new(coarse, fine, ratio);
    let fmesh: &Mesh = fine.mesh();
    let quad = fine.quadrature();
    let nq = quad.len();
    let nlc = coarse.n_local();
    let [csx, csy] = coarse.gradient_scale();
    let n_cells = fmesh.n_cells();
    let partial: Vec<[f64; 2]> = (0..n_cells.div_ceil(CELL_BLOCK))
        .into_par_iter()
        .map(|block| {
            let mut local_f = vec![0.0; fine.n_local()];
            let mut at_q = vec![(0.0, [0.0; 2]); nq];
            let mut local_c = vec![0.0; nlc];
            let mut acc = [0.0; 2];
            for cell in block * CELL_BLOCK..((block + 1) * CELL_BLOCK).min(n_cells) {
                fine.eval_at_quadrature(fine_field, cell, &mut local_f, &mut at_q);
                coarse.gather(coarse_field, map.parent(cell), &mut local_c);
                let (i, j) = fmesh.cell_coords(cell);
                let pos = (j % tables.ratio[1]) * tables.ratio[0] + i % tables.ratio[0];
                let (phi, dphi) = (&tables.phi[pos], &tables.dphi[pos]);
                let mut cell_acc = [0.0; 2];
                for q in 0..nq {
                    let mut u = 0.0;
                    let mut g = [0.0; 2];
                    for k in 0..nlc {
                        let c = local_c[k];
                        u += c * phi[q * nlc + k];
                        g[0] += c * dphi[q * nlc + k][0];
                        g[1] += c * dphi[q * nlc + k][1];
                    }
                    let r = f((u, [g[0] * csx, g[1] * csy]), at_q[q]);
                    cell_acc[0] += quad.weights[q] * r[0];
                    cell_acc[1] += quad.weights[q] * r[1];
                }
                acc[0] += cell_acc[0];
                acc[1] += cell_acc[1];
            }
            acc
        })
        .collect();
    let jac = fine.jacobian();
    Ok(partial
        .iter()
        .fold([0.0; 2], |a, p| [a[0] + p[0], a[1] + p[1]])
        .map(|v| v * jac))
}

/// Errors of `u_h` against a reference on a nested finer mesh, evaluated by
/// quadrature on the fine cells. The sign of `u_h` is aligned first so that
/// `(u_h, u_ref) ≥ 0`.
pub fn compute_errors(
    coarse: &FeSpace,
    u_h: &DiscreteField,
    fine: &FeSpace,
    u_ref: &DiscreteField,
) -> Result<ErrorNorms> {
    coarse.check_field(u_h)?;
    fine.check_field(u_ref)?;
    let [overlap, _] = nested_integral(coarse, u_h.values(), fine, u_ref.values(), |c, f| {
        [c.0 * f.0, 0.0]
    })?;
    let s = if overlap < 0.0 { -1.0 } else { 1.0 };
    let [l2, semi] = nested_integral(coarse, u_h.values(), fine, u_ref.values(), |c, f| {
        let e = s * c.0 - f.0;
        let gx = s * c.1[0] - f.1[0];
        let gy = s * c.1[1] - f.1[1];
        [e * e, gx * gx + gy * gy]
    })?;
    let l2 = l2.max(0.0).sqrt();
    let h1_semi = semi.max(0.0).sqrt();
    Ok(ErrorNorms {
        l2,
        h1_semi,
        h1: l2.hypot(h1_semi),
    })
}

/// `(∇_h(f - Π_h f), ∇_h v)` for a field `f` on a nested finer space and
/// coarse fields `pi_f`, `v`.
pub fn gradient_defect_pairing(
    coarse: &FeSpace,
    pi_f: &DiscreteField,
    v: &DiscreteField,
    fine: &FeSpace,
    f: &DiscreteField,
) -> Result<f64> {
    coarse.check_field(pi_f)?;
    coarse.check_field(v)?;
    fine.check_field(f)?;
    // ∇(f - Π_h f)·∇v = ∇f·∇v - ∇Π_h f·∇v
    let [fv, _] = nested_integral(coarse, v.values(), fine, f.values(), |c, f| {
        [c.1[0] * f.1[0] + c.1[1] * f.1[1], 0.0]
    })?;
    let k = crate::assembly::assemble_stiffness(coarse);
    Ok(fv - k.bilinear(pi_f.values(), v.values()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowerBoundLevel {
    pub n: usize,
    pub energy: f64,
    /// `upper - energy`; positive when the level sits below.
    pub margin: f64,
    pub below: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowerBoundReport {
    pub upper: f64,
    pub levels: Vec<LowerBoundLevel>,
    /// Energies nondecreasing in `n`, up to `tolerance`.
    pub monotone: bool,
    /// Smallest level from which every finer level lies below `upper`.
    pub threshold: Option<usize>,
}

impl LowerBoundReport {
    pub fn all_below(&self) -> bool {
        self.levels.iter().all(|l| l.below)
    }
}

/// Compares energies by level against a conforming energy from a finer mesh.
pub fn lower_bound_check(
    energies: &[(usize, f64)],
    upper: f64,
    tolerance: f64,
) -> LowerBoundReport {
    let levels: Vec<LowerBoundLevel> = energies
        .iter()
        .map(|&(n, energy)| LowerBoundLevel {
            n,
            energy,
            margin: upper - energy,
            below: energy < upper,
        })
        .collect();
    let monotone = energies.windows(2).all(|w| w[1].1 - w[0].1 >= -tolerance);
    let threshold = levels
        .iter()
        .rposition(|l| !l.below)
        .map_or(levels.first().map(|l| l.n), |k| {
            levels.get(k + 1).map(|l| l.n)
        });
    LowerBoundReport {
        upper,
        levels,
        monotone,
        threshold,
    }
}
