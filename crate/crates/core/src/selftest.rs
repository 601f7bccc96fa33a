//! Randomized property suites behind the `selftest` command.

use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{self, FnVectorField};
use crate::assembly::{assemble_mass, assemble_stiffness, dot, Potential};
use crate::elements::quadrature::gauss_legendre;
use crate::elements::{BoundaryMode, ElementKind, FeSpace, Quadrature, ReferenceBasis};
use crate::error::Result;
use crate::field::DiscreteField;
use crate::gpe::{FlowConfig, GpeProblem};
use crate::linalg::SpdSolver;
use crate::mesh::{Domain, Mesh};

pub const ORTHOGONALITY_TOL: f64 = 1e-10;
pub const MIXED_DERIVATIVE_TOL: f64 = 1e-13;
pub const CONFORMING_TOL: f64 = 1e-11;
/// Largest accepted ratio between successive levels of a bounded quantity.
pub const GROWTH_LIMIT: f64 = 1.3;
pub const QUADRATURE_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Default)]
pub struct SelftestOptions {
    pub seed: u64,
    /// Perturb the EQ1rot shape functions by this amount (negative test).
    pub corrupt_basis: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{mark} {:<18} {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone)]
pub struct SelftestReport {
    pub seed: u64,
    pub suites: Vec<SuiteResult>,
}

impl SelftestReport {
    pub fn all_passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }

    pub fn suite(&self, name: &str) -> Option<&SuiteResult> {
        self.suites.iter().find(|s| s.name == name)
    }
}

fn square(n: usize) -> Mesh {
    Mesh::uniform(Domain::square(-1.0, 1.0).expect("valid"), n).expect("valid")
}

fn eq1rot(n: usize, opts: &SelftestOptions) -> Result<FeSpace> {
    let basis = match opts.corrupt_basis {
        Some(eps) => ReferenceBasis::corrupted(eps),
        None => ReferenceBasis::new(ElementKind::Eq1Rot),
    };
    FeSpace::with_options(square(n), basis, 5, BoundaryMode::Dirichlet)
}

fn random_field(space: &FeSpace, rng: &mut ChaCha8Rng) -> Result<DiscreteField> {
    space.field_from_values(
        (0..space.n_free())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
}

/// Interpolant of the bubble times a random quadratic polynomial.
fn random_smooth_field(space: &FeSpace, rng: &mut ChaCha8Rng) -> DiscreteField {
    let c: [f64; 6] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    space.interpolate(&move |x: f64, y: f64| {
        (1.0 - x * x)
            * (1.0 - y * y)
            * (c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y)
    })
}

/// `(∇_h(f - Π_h f), ∇_h v) = 0` for a Q2 ground state `f` and random `v`.
pub fn orthogonality(opts: &SelftestOptions) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let fine = FeSpace::new(square(16), ElementKind::Q2, 5)?;
    let f = GpeProblem::new(&fine, Potential::SinWell, 1.0)?
        .solve_ground_state(&FlowConfig::default())?
        .u;
    let grad_f = analysis::h1_seminorm(&fine, &f)?;
    let mut worst = 0.0f64;
    for n in [4, 8] {
        let coarse = eq1rot(n, opts)?;
        let pi = analysis::transfer(&fine, &f, &coarse)?;
        for _ in 0..20 {
            let v = random_field(&coarse, &mut rng)?;
            let ip = analysis::gradient_defect_pairing(&coarse, &pi, &v, &fine, &f)?;
            worst = worst.max(ip.abs() / (grad_f * analysis::h1_seminorm(&coarse, &v)?));
        }
    }
    Ok(SuiteResult {
        name: "orthogonality",
        passed: worst <= ORTHOGONALITY_TOL,
        detail: format!("max relative pairing {worst:.3e} (limit {ORTHOGONALITY_TOL:e})"),
    })
}

fn ratio_growth(ratios: &[f64]) -> f64 {
    ratios.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max)
}

/// Largest `|ℰ(v, ∇u)| / ‖v‖_{H¹h}` over the space: `sqrt(ℓᵀ(K + M)⁻¹ℓ)`.
fn dual_norm(space: &FeSpace, functional: &[f64]) -> Result<f64> {
    let mut gram = assemble_stiffness(space);
    gram.add_scaled(1.0, &assemble_mass(space))?;
    let x = SpdSolver::direct().solve(&gram, functional)?;
    Ok(dot(functional, &x).max(0.0).sqrt())
}

/// Generalized patch test: the consistency error stays of order `h`.
pub fn patch_test(opts: &SelftestOptions) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37);
    let k = 0.5 * PI;
    // u = cos(kx) cos(ky), g = ∇u, ∇·g = -2k² u; ‖u‖²_{H²} = 1 + 2k² + 4k⁴
    let g = FnVectorField {
        value: move |x: f64, y: f64| {
            [
                -k * (k * x).sin() * (k * y).cos(),
                -k * (k * x).cos() * (k * y).sin(),
            ]
        },
        divergence: move |x: f64, y: f64| -2.0 * k * k * (k * x).cos() * (k * y).cos(),
    };
    let u_h2 = (1.0 + 2.0 * k * k + 4.0 * k.powi(4)).sqrt();
    let constant = FnVectorField {
        value: |_: f64, _: f64| [1.0, -0.5],
        divergence: |_: f64, _: f64| 0.0,
    };

    let mut sup = Vec::new();
    let mut random_ok = true;
    let mut routes_ok = true;
    let mut constant_worst = 0.0f64;
    for n in [8, 16, 32, 64] {
        let space = eq1rot(n, opts)?;
        let h = space.mesh().h();
        let ell = analysis::consistency_vector(&space, &g);
        let s = dual_norm(&space, &ell)? / (h * u_h2);
        for _ in 0..5 {
            let v = random_field(&space, &mut rng)?;
            let vol = analysis::consistency_functional(&space, &v, &g)?;
            let faces = analysis::consistency_functional_faces(&space, &v, &g)?;
            let v_norm = analysis::h1_norm(&space, &v)?;
            // relative to the size of the summed volume terms
            routes_ok &= (vol - faces).abs() <= 1e-10 * u_h2 * v_norm;
            let r = vol.abs() / (h * u_h2 * v_norm);
            random_ok &= r <= s * (1.0 + 1e-8);
            constant_worst =
                constant_worst.max(analysis::consistency_functional(&space, &v, &constant)?.abs());
        }
        sup.push(s);
    }
    let q2 = FeSpace::new(square(8), ElementKind::Q2, 5)?;
    let conforming = q2.interpolate(&|x: f64, y: f64| (1.0 - x * x) * (1.0 - y * y) * (x + 2.0));
    let conforming_value = analysis::consistency_functional(&q2, &conforming, &g)?.abs();

    let growth = ratio_growth(&sup);
    let passed = growth <= GROWTH_LIMIT
        && random_ok
        && routes_ok
        && constant_worst <= CONFORMING_TOL
        && conforming_value <= CONFORMING_TOL;
    Ok(SuiteResult {
        name: "patch_test",
        passed,
        detail: format!(
            "sup ratios {:?}, growth {growth:.3}, routes agree {routes_ok}, constant flux {constant_worst:.1e}, conforming {conforming_value:.1e}",
            sup.iter().map(|s| (s * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    })
}

/// `|v|_jump / ‖v‖_{H¹h}` bounded under refinement; zero for conforming fields.
pub fn jump_bound(opts: &SelftestOptions) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x51ed);
    let mut worst = Vec::new();
    for n in [8, 16, 32, 64] {
        let space = eq1rot(n, opts)?;
        let mut m = 0.0f64;
        for _ in 0..20 {
            let v = random_field(&space, &mut rng)?;
            m = m.max(analysis::jump_seminorm(&space, &v)? / analysis::h1_norm(&space, &v)?);
        }
        worst.push(m);
    }
    let q2 = FeSpace::new(square(8), ElementKind::Q2, 5)?;
    let conforming =
        q2.interpolate(&|x: f64, y: f64| (1.0 - x * x) * (1.0 - y * y) * (x * y).exp());
    let zero = analysis::jump_seminorm(&q2, &conforming)?;
    let growth = ratio_growth(&worst);
    Ok(SuiteResult {
        name: "jump_bound",
        passed: growth <= GROWTH_LIMIT && zero <= CONFORMING_TOL,
        detail: format!(
            "max ratios {:?}, growth {growth:.3}, conforming {zero:.1e}",
            worst
                .iter()
                .map(|s| (s * 1e4).round() / 1e4)
                .collect::<Vec<_>>()
        ),
    })
}

/// Central differences of the energy against `wᵀ A_u u` along tangent
/// directions; the mismatch must shrink at second order.
pub fn gradient_check(opts: &SelftestOptions) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x7f4a);
    let space = eq1rot(8, opts)?;
    let problem = GpeProblem::new(&space, Potential::SinWell, 1.0)?;
    let mass = problem.mass();
    let mut orders = Vec::new();
    for _ in 0..3 {
        let u = problem.normalize(&random_smooth_field(&space, &mut rng))?;
        let w = random_smooth_field(&space, &mut rng);
        let along = mass.bilinear(u.values(), w.values());
        let w = problem.normalize(&w.axpy(-along, &u)?)?;
        let exact = problem.operator(&u)?.bilinear(w.values(), u.values());
        let mismatch = |eps: f64| -> Result<f64> {
            let plus = problem.energy(&u.axpy(eps, &w)?)?;
            let minus = problem.energy(&u.axpy(-eps, &w)?)?;
            Ok(((plus - minus) / (2.0 * eps) - exact).abs())
        };
        orders.push((mismatch(1e-3)? / mismatch(1e-4)?).log10());
    }
    let passed = orders.iter().all(|o| (o - 2.0).abs() <= 0.2);
    Ok(SuiteResult {
        name: "gradient_check",
        passed,
        detail: format!(
            "observed orders {:?}",
            orders
                .iter()
                .map(|o| (o * 1e3).round() / 1e3)
                .collect::<Vec<_>>()
        ),
    })
}

/// EQ1rot functions have no `xy` term; Q2 functions do.
pub fn mixed_derivative(opts: &SelftestOptions) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x3c6e);
    let mut worst = 0.0f64;
    for n in [4, 16] {
        let space = eq1rot(n, opts)?;
        for _ in 0..20 {
            worst = worst.max(analysis::mixed_derivative_check(
                &space,
                &random_field(&space, &mut rng)?,
            )?);
        }
    }
    let q2 = FeSpace::new(square(4), ElementKind::Q2, 5)?;
    let control = analysis::mixed_derivative_check(
        &q2,
        &q2.interpolate(&|x: f64, y: f64| (1.0 - x * x) * (1.0 - y * y) * x * y),
    )?;
    Ok(SuiteResult {
        name: "mixed_derivative",
        passed: worst <= MIXED_DERIVATIVE_TOL && control > 1e-2,
        detail: format!("eq1rot max {worst:.1e}, q2 control {control:.3}"),
    })
}

/// Tensor Gauss rules integrate `x^a y^b` exactly for `a, b < 2·order`.
pub fn quadrature(_opts: &SelftestOptions) -> Result<SuiteResult> {
    let exact = |p: usize| {
        if p % 2 == 1 {
            0.0
        } else {
            2.0 / (p as f64 + 1.0)
        }
    };
    let mut worst = 0.0f64;
    for order in 1..=8 {
        let q = Quadrature::tensor_gauss(order);
        for a in 0..2 * order {
            for b in 0..2 * order {
                let s: f64 = q
                    .points
                    .iter()
                    .zip(&q.weights)
                    .map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32))
                    .sum();
                worst = worst.max((s - exact(a) * exact(b)).abs());
            }
        }
        let (t, w) = gauss_legendre(order);
        let s: f64 = t
            .iter()
            .zip(&w)
            .map(|(t, w)| w * t.powi(2 * order as i32 - 2))
            .sum();
        worst = worst.max((s - exact(2 * order - 2)).abs());
    }
    Ok(SuiteResult {
        name: "quadrature",
        passed: worst <= QUADRATURE_TOL,
        detail: format!("max monomial error {worst:.1e}"),
    })
}

pub type Suite = fn(&SelftestOptions) -> Result<SuiteResult>;

pub const SUITES: [(&str, Suite); 6] = [
    ("orthogonality", orthogonality),
    ("patch_test", patch_test),
    ("jump_bound", jump_bound),
    ("gradient_check", gradient_check),
    ("mixed_derivative", mixed_derivative),
    ("quadrature", quadrature),
];

/// Runs every suite; an internal error counts as a failed suite.
pub fn run_selftest(opts: &SelftestOptions) -> SelftestReport {
    let suites = SUITES
        .iter()
        .map(|(name, suite)| {
            suite(opts).unwrap_or_else(|e| SuiteResult {
                name,
                passed: false,
                detail: format!("error: {e}"),
            })
        })
        .collect();
    SelftestReport {
        seed: opts.seed,
        suites,
    }
}
