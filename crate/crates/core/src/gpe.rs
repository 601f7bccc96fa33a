//! Discrete Gross-Pitaevskii ground states by the energy-adaptive Sobolev
//! gradient flow.
//!
//! With the metric `a_u(v, w) = <A_u v, w>` the flow step reads
//! `u⁺ = normalize((1 - τ) u + τ z / (uᵀ M z))` with `z = A_u⁻¹ M u`; at
//! `τ = 1` this is `u⁺ = normalize(A_u⁻¹ M u)`.

use crate::assembly::{
    assemble_density, assemble_mass, assemble_potential, assemble_stiffness, dot, Potential,
    SparseMatrix,
};
use crate::elements::FeSpace;
use crate::error::{invalid, Error, FlowRecord, Result};
use crate::field::DiscreteField;
use crate::linalg::{SolverContext, SpdSolver};

#[derive(Debug, Clone)]
pub enum InitialGuess {
    /// Normalized interpolant of `(1 - x̂²)(1 - ŷ²)` with `x̂, ŷ` the domain
    /// coordinates mapped to `[-1, 1]`.
    Bubble,
    Given(DiscreteField),
}

#[derive(Debug, Clone)]
pub struct FlowConfig {
    pub step: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub initial: InitialGuess,
    pub solver: SpdSolver,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            step: 1.0,
            tolerance: 1e-12,
            max_iterations: 2000,
            initial: InitialGuess::Bubble,
            solver: SpdSolver::default(),
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step <= 1.0) {
            return Err(invalid(format!("step {} outside (0, 1]", self.step)));
        }
        if !(self.tolerance > 0.0) {
            return Err(invalid("residual tolerance must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(invalid("max_iterations must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GroundState {
    pub u: DiscreteField,
    pub energy: f64,
    pub eigenvalue: f64,
    pub iterations: usize,
    pub residual: f64,
    pub trajectory: Vec<FlowRecord>,
}

/// Outcome of one flow step taken from `u_n`.
#[derive(Debug, Clone)]
pub struct FlowStep {
    pub next: DiscreteField,
    /// Observables of `u_n`.
    pub energy: f64,
    pub eigenvalue: f64,
    pub residual: f64,
}

/// A discretized problem: space, trapping potential and interaction strength,
/// with the state-independent matrices assembled once.
pub struct GpeProblem<'a> {
    space: &'a FeSpace,
    potential: Potential,
    beta: f64,
    mass: SparseMatrix,
    /// `K + A_V`
    linear: SparseMatrix,
}

impl<'a> GpeProblem<'a> {
    pub fn new(space: &'a FeSpace, potential: Potential, beta: f64) -> Result<Self> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(invalid(format!(
                "interaction strength must be >= 0, got {beta}"
            )));
        }
        potential.validate()?;
        let mut linear = assemble_stiffness(space);
        linear.add_scaled(1.0, &assemble_potential(space, &potential))?;
        Ok(Self {
            space,
            potential,
            beta,
            mass: assemble_mass(space),
            linear,
        })
    }

    pub fn space(&self) -> &'a FeSpace {
        self.space
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mass(&self) -> &SparseMatrix {
        &self.mass
    }

    /// `K + A_V`.
    pub fn linear_part(&self) -> &SparseMatrix {
        &self.linear
    }

    /// `∫ v⁴` by direct quadrature.
    pub fn quartic(&self, v: &DiscreteField) -> Result<f64> {
        self.space.check_field(v)?;
        Ok(self
            .space
            .integrate_cells(v.values(), |u, _, _| u * u * u * u))
    }

    /// `E(v) = ½ vᵀ(K + A_V)v + β/4 ∫ v⁴`.
    pub fn energy(&self, v: &DiscreteField) -> Result<f64> {
        let quartic = self.quartic(v)?;
        Ok(0.5 * self.linear.quad_form(v.values()) + 0.25 * self.beta * quartic)
    }

    /// Rayleigh-type quotient `vᵀ(K + A_V + βA_ρ(v))v / vᵀMv`.
    pub fn eigenvalue(&self, v: &DiscreteField) -> Result<f64> {
        self.space.check_field(v)?;
        let mass = self.mass.quad_form(v.values());
        if !(mass > 0.0) {
            return Err(invalid("eigenvalue of the zero field is undefined"));
        }
        let quartic = self.quartic(v)?;
        Ok((self.linear.quad_form(v.values()) + self.beta * quartic) / mass)
    }

    pub fn l2_norm_squared(&self, v: &DiscreteField) -> f64 {
        self.mass.quad_form(v.values())
    }

    /// `v / ‖v‖_{L²}`.
    pub fn normalize(&self, v: &DiscreteField) -> Result<DiscreteField> {
        self.space.check_field(v)?;
        let m = self.mass.quad_form(v.values());
        if !(m > 0.0) {
            return Err(invalid("cannot normalize the zero field"));
        }
        Ok(v.scaled(1.0 / m.sqrt()))
    }

    /// `A_u = K + A_V + β A_ρ(u)`.
    pub fn operator(&self, u: &DiscreteField) -> Result<SparseMatrix> {
        let mut a = self.linear.clone();
        if self.beta != 0.0 {
            a.add_scaled(self.beta, &assemble_density(self.space, u)?)?;
        }
        Ok(a)
    }

    /// Unnormalized bubble interpolant.
    pub fn bubble(&self) -> DiscreteField {
        let d = self.space.mesh().domain;
        self.space.interpolate(&move |x: f64, y: f64| {
            let (s, t) = d.to_unit_square(x, y);
            (1.0 - s * s) * (1.0 - t * t)
        })
    }

    pub fn solver_context(&self, solver: &SpdSolver) -> Result<SolverContext> {
        solver.prepare(self.linear.pattern())
    }

    /// One flow step from a normalized `u`.
    pub fn flow_step(&self, u: &DiscreteField, step: f64, ctx: &SolverContext) -> Result<FlowStep> {
        self.space.check_field(u)?;
        let uv = u.values();
        let a = self.operator(u)?;
        let factor = ctx.factor(&a)?;

        let mu = self.mass.mul(uv);
        let au = a.mul(uv);
        let umu = dot(uv, &mu);
        let uau = dot(uv, &au);
        let eigenvalue = uau / umu;
        let quartic = if self.beta != 0.0 {
            // uᵀ A_ρ(u) u = ∫ u⁴ with the same quadrature
            (uau - self.linear.quad_form(uv)) / self.beta
        } else {
            0.0
        };
        let energy = 0.5 * (uau - self.beta * quartic) + 0.25 * self.beta * quartic;

        let z = factor.solve(&mu)?;
        let r: Vec<f64> = au
            .iter()
            .zip(&mu)
            .map(|(a, m)| a - eigenvalue * m)
            .collect();
        let w = factor.solve(&r)?;
        let residual = dot(&r, &w).max(0.0).sqrt();

        let scale = 1.0 / dot(&mu, &z);
        let next: Vec<f64> = uv
            .iter()
            .zip(&z)
            .map(|(u, z)| (1.0 - step) * u + step * scale * z)
            .collect();
        let next = self.normalize(&self.space.field_from_values(next)?)?;
        Ok(FlowStep {
            next,
            energy,
            eigenvalue,
            residual,
        })
    }

    /// Iterates the flow until the residual drops below the tolerance.
    pub fn solve_ground_state(&self, cfg: &FlowConfig) -> Result<GroundState> {
        cfg.validate()?;
        let ctx = self.solver_context(&cfg.solver)?;
        let mut u = match &cfg.initial {
            InitialGuess::Bubble => self.normalize(&self.bubble())?,
            InitialGuess::Given(v) => self.normalize(v)?,
        };
        let mut trajectory = Vec::new();
        for iteration in 0..cfg.max_iterations {
            let step = self.flow_step(&u, cfg.step, &ctx)?;
            trajectory.push(FlowRecord {
                iteration,
                energy: step.energy,
                eigenvalue: step.eigenvalue,
                residual: step.residual,
            });
            if step.residual < cfg.tolerance {
                if self.space.integral(&u) < 0.0 {
                    u = u.scaled(-1.0);
                }
                let energy = self.energy(&u)?;
                let eigenvalue = self.eigenvalue(&u)?;
                return Ok(GroundState {
                    u,
                    energy,
                    eigenvalue,
                    iterations: iteration,
                    residual: step.residual,
                    trajectory,
                });
            }
            u = step.next;
        }
        Err(Error::NotConverged { trajectory })
    }
}
