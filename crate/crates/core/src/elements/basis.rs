//! Shape functions on the reference cell `[-1, 1]^2`.

use nalgebra::Matrix5;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    /// Enriched rotated Q1: `P1 + span{x^2, y^2}` with four edge averages and
    /// the cell average as degrees of freedom.
    #[serde(rename = "eq1rot")]
    Eq1Rot,
    /// Conforming biquadratic Lagrange element.
    Q2,
}

impl ElementKind {
    pub fn n_local(self) -> usize {
        match self {
            ElementKind::Eq1Rot => 5,
            ElementKind::Q2 => 9,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ElementKind::Eq1Rot => "eq1rot",
            ElementKind::Q2 => "q2",
        }
    }
}

impl std::fmt::Display for ElementKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ElementKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "eq1rot" => Ok(ElementKind::Eq1Rot),
            "q2" => Ok(ElementKind::Q2),
            other => Err(format!("unknown element kind `{other}`")),
        }
    }
}

/// Monomials `1, x, y, x^2, y^2` spanning the EQ1rot space.
#[inline]
fn eq1rot_monomials(x: f64, y: f64) -> [f64; 5] {
    [1.0, x, y, x * x, y * y]
}

/// Averages of the monomials over the four edges (bottom, right, top, left)
/// and over the cell.
pub fn eq1rot_moment_matrix() -> Matrix5<f64> {
    let third = 1.0 / 3.0;
    Matrix5::from_row_slice(&[
        1.0, 0.0, -1.0, third, 1.0, //
        1.0, 1.0, 0.0, 1.0, third, //
        1.0, 0.0, 1.0, third, 1.0, //
        1.0, -1.0, 0.0, 1.0, third, //
        1.0, 0.0, 0.0, third, third,
    ])
}

/// Reference nodes of the Q2 element, lexicographic with x fastest.
pub const Q2_NODES: [f64; 3] = [-1.0, 0.0, 1.0];

#[inline]
fn lagrange3(t: f64) -> ([f64; 3], [f64; 3]) {
    (
        [0.5 * t * (t - 1.0), 1.0 - t * t, 0.5 * t * (t + 1.0)],
        [t - 0.5, -2.0 * t, t + 0.5],
    )
}

#[derive(Debug, Clone)]
pub struct ReferenceBasis {
    kind: ElementKind,
    /// Column `i` holds the monomial coefficients of EQ1rot shape `i`.
    coeffs: Matrix5<f64>,
}

impl ReferenceBasis {
    pub fn new(kind: ElementKind) -> Self {
        let coeffs = eq1rot_moment_matrix()
            .try_inverse()
            .expect("EQ1rot moment matrix is invertible");
        Self { kind, coeffs }
    }

    /// A deliberately broken EQ1rot basis whose shape functions are no longer
    /// dual to the average functionals. Used to check that the property
    /// suites detect a faulty element.
    pub fn corrupted(eps: f64) -> Self {
        let mut basis = Self::new(ElementKind::Eq1Rot);
        basis.coeffs[(3, 0)] += eps;
        basis.coeffs[(1, 4)] += eps;
        basis
    }

    pub fn kind(&self) -> ElementKind {
        self.kind
    }

    pub fn n_local(&self) -> usize {
        self.kind.n_local()
    }

    /// Monomial coefficients of the EQ1rot shape functions.
    pub fn coefficient_matrix(&self) -> &Matrix5<f64> {
        &self.coeffs
    }

    pub fn values(&self, x: f64, y: f64, out: &mut [f64]) {
        match self.kind {
            ElementKind::Eq1Rot => {
                let m = eq1rot_monomials(x, y);
                for (i, o) in out.iter_mut().enumerate().take(5) {
                    *o = (0..5).map(|k| self.coeffs[(k, i)] * m[k]).sum();
                }
            }
            ElementKind::Q2 => {
                let (lx, _) = lagrange3(x);
                let (ly, _) = lagrange3(y);
                for b in 0..3 {
                    for a in 0..3 {
                        out[3 * b + a] = lx[a] * ly[b];
                    }
                }
            }
        }
    }

    /// Reference gradients `(d/dx, d/dy)`.
    pub fn gradients(&self, x: f64, y: f64, out: &mut [[f64; 2]]) {
        match self.kind {
            ElementKind::Eq1Rot => {
                for (i, o) in out.iter_mut().enumerate().take(5) {
                    let c = self.coeffs.column(i);
                    *o = [c[1] + 2.0 * c[3] * x, c[2] + 2.0 * c[4] * y];
                }
            }
            ElementKind::Q2 => {
                let (lx, dx) = lagrange3(x);
                let (ly, dy) = lagrange3(y);
                for b in 0..3 {
                    for a in 0..3 {
                        out[3 * b + a] = [dx[a] * ly[b], lx[a] * dy[b]];
                    }
                }
            }
        }
    }

    /// Reference mixed derivatives `d^2/dxdy`.
    pub fn mixed_derivatives(&self, x: f64, y: f64, out: &mut [f64]) {
        match self.kind {
            // the span has no xy monomial
            ElementKind::Eq1Rot => out[..5].fill(0.0),
            ElementKind::Q2 => {
                let (_, dx) = lagrange3(x);
                let (_, dy) = lagrange3(y);
                for b in 0..3 {
                    for a in 0..3 {
                        out[3 * b + a] = dx[a] * dy[b];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elements::quadrature::gauss_legendre;
    use rand::{Rng, SeedableRng};

    /// Dual functionals of EQ1rot evaluated with a 5-point Gauss rule
    /// (exact for quadratics).
    fn eq1rot_functionals(basis: &ReferenceBasis, i: usize) -> [f64; 5] {
        let (x, w) = gauss_legendre(5);
        let mut v = [0.0; 5];
        let eval = |px: f64, py: f64| {
            let mut buf = [0.0; 5];
            basis.values(px, py, &mut buf);
            buf[i]
        };
        let mut out = [0.0; 5];
        for k in 0..5 {
            out[0] += 0.5 * w[k] * eval(x[k], -1.0);
            out[1] += 0.5 * w[k] * eval(1.0, x[k]);
            out[2] += 0.5 * w[k] * eval(x[k], 1.0);
            out[3] += 0.5 * w[k] * eval(-1.0, x[k]);
            for l in 0..5 {
                v[0] += 0.25 * w[k] * w[l] * eval(x[k], x[l]);
            }
        }
        out[4] = v[0];
        out
    }

    #[test]
    fn eq1rot_duality() {
        let basis = ReferenceBasis::new(ElementKind::Eq1Rot);
        for i in 0..5 {
            let f = eq1rot_functionals(&basis, i);
            for (j, fj) in f.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((fj - want).abs() < 1e-13, "shape {i} functional {j}: {fj}");
            }
        }
    }

    #[test]
    fn eq1rot_coefficients_invert_moments() {
        let basis = ReferenceBasis::new(ElementKind::Eq1Rot);
        let g = eq1rot_moment_matrix();
        // edge average of x^2 over x = -1 is 1, over y = -1 it is 1/3
        assert_eq!(g[(3, 3)], 1.0);
        assert!((g[(0, 3)] - 1.0 / 3.0).abs() < 1e-16);
        let back = basis.coefficient_matrix().try_inverse().unwrap();
        assert!((back - g).abs().max() < 1e-13);
        // cell shape function: 1 + ... with known closed form 2 - 3/2 (x^2 + y^2)
        let c = basis.coefficient_matrix().column(4);
        let want = [2.0, 0.0, 0.0, -1.5, -1.5];
        for k in 0..5 {
            assert!((c[k] - want[k]).abs() < 1e-13);
        }
    }

    #[test]
    fn eq1rot_has_no_mixed_derivative() {
        let basis = ReferenceBasis::new(ElementKind::Eq1Rot);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut out = [1.0; 5];
        let h = 1e-4;
        for _ in 0..25 {
            let (x, y): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            basis.mixed_derivatives(x, y, &mut out);
            assert!(out.iter().all(|&d| d == 0.0));
            // independent check with a finite-difference stencil on the gradients
            let mut gp = [[0.0; 2]; 5];
            let mut gm = [[0.0; 2]; 5];
            basis.gradients(x, y + h, &mut gp);
            basis.gradients(x, y - h, &mut gm);
            for i in 0..5 {
                assert!(((gp[i][0] - gm[i][0]) / (2.0 * h)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn q2_is_nodal() {
        let basis = ReferenceBasis::new(ElementKind::Q2);
        let mut out = [0.0; 9];
        for (b, &y) in Q2_NODES.iter().enumerate() {
            for (a, &x) in Q2_NODES.iter().enumerate() {
                basis.values(x, y, &mut out);
                for (i, v) in out.iter().enumerate() {
                    let want = if i == 3 * b + a { 1.0 } else { 0.0 };
                    assert!((v - want).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for kind in [ElementKind::Eq1Rot, ElementKind::Q2] {
            let basis = ReferenceBasis::new(kind);
            let n = kind.n_local();
            let (mut vp, mut vm) = (vec![0.0; n], vec![0.0; n]);
            let mut g = vec![[0.0; 2]; n];
            let h = 1e-6;
            for _ in 0..10 {
                let (x, y): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                basis.gradients(x, y, &mut g);
                basis.values(x + h, y, &mut vp);
                basis.values(x - h, y, &mut vm);
                for i in 0..n {
                    assert!(((vp[i] - vm[i]) / (2.0 * h) - g[i][0]).abs() < 1e-8);
                }
                basis.values(x, y + h, &mut vp);
                basis.values(x, y - h, &mut vm);
                for i in 0..n {
                    assert!(((vp[i] - vm[i]) / (2.0 * h) - g[i][1]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn corrupted_basis_breaks_duality() {
        let basis = ReferenceBasis::corrupted(0.1);
        let f = eq1rot_functionals(&basis, 0);
        assert!((f[0] - 1.0).abs() > 1e-3 || f[1..].iter().any(|v| v.abs() > 1e-3));
    }

    #[test]
    fn kind_parsing() {
        assert_eq!(
            "EQ1ROT".parse::<ElementKind>().unwrap(),
            ElementKind::Eq1Rot
        );
        assert_eq!("q2".parse::<ElementKind>().unwrap(), ElementKind::Q2);
        assert!("p1".parse::<ElementKind>().is_err());
    }
}
