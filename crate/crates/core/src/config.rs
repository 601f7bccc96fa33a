//! Declarative experiment descriptions (TOML).
//!
//! ```toml
//! example = "TABLE_CONV"
//! elements = ["eq1rot"]
//! levels = [8, 16, 32, 64, 128]
//! output = "out/table1"
//!
//! [reference]
//! level = 512
//! element = "q2"
//!
//! [flow]
//! tolerance = 1e-12
//! ```
//!
//! Instead of `example`, a `[problem]` table gives the domain
//! `[xmin, xmax, ymin, ymax]`, `beta`, `aspect` (`ny = aspect · N`) and a
//! `[problem.potential]` table with a `kind` of `zero`, `constant`,
//! `harmonic`, `sin_well` or `harmonic_stirrer`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::assembly::Potential;
use crate::elements::ElementKind;
use crate::error::{Error, Result};
use crate::gpe::FlowConfig;
use crate::linalg::{SolverStrategy, SpdSolver};
use crate::mesh::{Domain, Mesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExampleId {
    /// Anisotropic harmonic trap, β = 400, on [-4,4]×[-8,8].
    GsMorphology,
    /// Sine well, β = 1, on [-1,1]².
    TableConv,
    /// Sine well, β = 10, on [-1,1]².
    ElementCompare,
    /// Harmonic trap with a Gaussian stirrer, β = 400, on [-8,8]².
    Stirrer,
}

impl ExampleId {
    pub const ALL: [ExampleId; 4] = [
        ExampleId::GsMorphology,
        ExampleId::TableConv,
        ExampleId::ElementCompare,
        ExampleId::Stirrer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExampleId::GsMorphology => "GS_MORPHOLOGY",
            ExampleId::TableConv => "TABLE_CONV",
            ExampleId::ElementCompare => "ELEMENT_COMPARE",
            ExampleId::Stirrer => "STIRRER",
        }
    }

    pub fn problem(self) -> ProblemSpec {
        match self {
            ExampleId::GsMorphology => ProblemSpec {
                domain: [-4.0, 4.0, -8.0, 8.0],
                beta: 400.0,
                aspect: 2,
                potential: PotentialSpec::Harmonic {
                    gamma_x: 16.0,
                    gamma_y: 1.0,
                },
            },
            ExampleId::TableConv => ProblemSpec {
                domain: [-1.0, 1.0, -1.0, 1.0],
                beta: 1.0,
                aspect: 1,
                potential: PotentialSpec::SinWell,
            },
            ExampleId::ElementCompare => ProblemSpec {
                domain: [-1.0, 1.0, -1.0, 1.0],
                beta: 10.0,
                aspect: 1,
                potential: PotentialSpec::SinWell,
            },
            ExampleId::Stirrer => ProblemSpec {
                domain: [-8.0, 8.0, -8.0, 8.0],
                beta: 400.0,
                aspect: 1,
                potential: PotentialSpec::HarmonicStirrer {
                    amplitude: 8.0,
                    center: [1.0, 0.0],
                },
            },
        }
    }
}

impl fmt::Display for ExampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExampleId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExampleId::ALL
            .into_iter()
            .find(|e| e.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(vec![format!("unknown example `{s}`")]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    Zero,
    Constant { value: f64 },
    Harmonic { gamma_x: f64, gamma_y: f64 },
    SinWell,
    HarmonicStirrer { amplitude: f64, center: [f64; 2] },
}

impl PotentialSpec {
    pub fn build(&self) -> Potential {
        match *self {
            PotentialSpec::Zero => Potential::Zero,
            PotentialSpec::Constant { value } => Potential::Constant(value),
            PotentialSpec::Harmonic { gamma_x, gamma_y } => {
                Potential::Harmonic { gamma_x, gamma_y }
            }
            PotentialSpec::SinWell => Potential::SinWell,
            PotentialSpec::HarmonicStirrer { amplitude, center } => {
                Potential::HarmonicStirrer { amplitude, center }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    /// `[xmin, xmax, ymin, ymax]`
    pub domain: [f64; 4],
    pub beta: f64,
    #[serde(default = "one")]
    pub aspect: usize,
    pub potential: PotentialSpec,
}

fn one() -> usize {
    1
}

impl ProblemSpec {
    pub fn domain(&self) -> Result<Domain> {
        let [a, b, c, d] = self.domain;
        Domain::new(a, b, c, d)
    }

    /// Mesh with `n` cells in x and `aspect · n` in y.
    pub fn mesh(&self, n: usize) -> Result<Mesh> {
        Mesh::build(self.domain()?, n, self.aspect * n)
    }

    fn check(&self, errors: &mut Vec<String>) {
        if let Err(e) = self.domain() {
            errors.push(format!("problem.domain: {e}"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            errors.push(format!(
                "problem.beta: must be finite and >= 0, got {}",
                self.beta
            ));
        }
        if self.aspect == 0 {
            errors.push("problem.aspect: must be positive".into());
        }
        if let Err(e) = self.potential.build().validate() {
            errors.push(format!("problem.potential: {e}"));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    pub level: usize,
    #[serde(default = "q2")]
    pub element: ElementKind,
}

fn q2() -> ElementKind {
    ElementKind::Q2
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverStrategy>,
}

impl FlowOverrides {
    pub fn flow_config(&self) -> FlowConfig {
        let mut cfg = FlowConfig::default();
        if let Some(s) = self.step {
            cfg.step = s;
        }
        if let Some(t) = self.tolerance {
            cfg.tolerance = t;
        }
        if let Some(m) = self.max_iterations {
            cfg.max_iterations = m;
        }
        if let Some(strategy) = self.solver {
            cfg.solver = SpdSolver {
                strategy,
                ..SpdSolver::default()
            };
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example: Option<ExampleId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemSpec>,
    #[serde(default = "default_elements")]
    pub elements: Vec<ElementKind>,
    pub levels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceSpec>,
    #[serde(default)]
    pub flow: FlowOverrides,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Seed for randomized checks.
    #[serde(default)]
    pub seed: u64,
    /// Fill the `cpu_s` column; off gives byte-identical tables across runs.
    #[serde(default = "yes")]
    pub timings: bool,
    /// Write cell-center samples `field_N<k>.csv`.
    #[serde(default)]
    pub fields: bool,
}

fn default_elements() -> Vec<ElementKind> {
    vec![ElementKind::Eq1Rot]
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn yes() -> bool {
    true
}

fn dyadic(from: usize, to: usize) -> Vec<usize> {
    std::iter::successors(Some(from), |n| Some(n * 2))
        .take_while(|&n| n <= to)
        .collect()
}

impl ExperimentConfig {
    pub fn for_example(example: ExampleId, levels: Vec<usize>) -> Self {
        Self {
            example: Some(example),
            problem: None,
            elements: default_elements(),
            levels,
            reference: None,
            flow: FlowOverrides::default(),
            output: default_output(),
            seed: 0,
            timings: true,
            fields: false,
        }
    }

    /// L² and H¹ errors on the sine-well problem against a Q2 reference.
    pub fn table1(max_level: usize, reference_level: usize) -> Self {
        Self {
            reference: Some(ReferenceSpec {
                level: reference_level,
                element: ElementKind::Q2,
            }),
            output: PathBuf::from("out/table1"),
            ..Self::for_example(ExampleId::TableConv, dyadic(8, max_level))
        }
    }

    /// Energies and eigenvalues on the sine-well problem.
    pub fn table2(max_level: usize) -> Self {
        Self {
            output: PathBuf::from("out/table2"),
            ..Self::for_example(ExampleId::TableConv, dyadic(8, max_level))
        }
    }

    /// EQ1rot energies from below against a Q2 reference energy.
    pub fn lower_bound(example: ExampleId, max_level: usize, reference_level: usize) -> Self {
        Self {
            reference: Some(ReferenceSpec {
                level: reference_level,
                element: ElementKind::Q2,
            }),
            output: PathBuf::from(format!("out/lowerbound_{}", example.name().to_lowercase())),
            ..Self::for_example(example, dyadic(8, max_level))
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::Config(vec![e.message().to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text)?;
        if cfg.output.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.output = dir.join(&cfg.output);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config values are always representable")
    }

    pub fn problem(&self) -> ProblemSpec {
        match (&self.problem, self.example) {
            (Some(p), _) => p.clone(),
            (None, Some(e)) => e.problem(),
            (None, None) => ExampleId::TableConv.problem(),
        }
    }

    pub fn label(&self) -> String {
        self.example
            .map_or_else(|| "custom".to_string(), |e| e.name().to_string())
    }

    pub fn flow_config(&self) -> FlowConfig {
        self.flow.flow_config()
    }

    /// Collects every violated constraint.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        match (&self.example, &self.problem) {
            (None, None) => errors.push("either `example` or `[problem]` is required".into()),
            (Some(_), Some(_)) => {
                errors.push("`example` and `[problem]` are mutually exclusive".into())
            }
            (None, Some(p)) => p.check(&mut errors),
            (Some(_), None) => {}
        }
        if self.elements.is_empty() {
            errors.push("elements: at least one element kind is required".into());
        }
        for (i, e) in self.elements.iter().enumerate() {
            if self.elements[..i].contains(e) {
                errors.push(format!("elements: `{e}` listed twice"));
            }
        }
        if self.levels.is_empty() {
            errors.push("levels: at least one level is required".into());
        }
        if let Some(&n) = self.levels.iter().find(|n| !n.is_power_of_two()) {
            errors.push(format!("levels: {n} is not a power of two"));
        }
        if self.levels.windows(2).any(|w| w[1] <= w[0]) {
            errors.push("levels: must be strictly increasing".into());
        }
        if let Some(r) = &self.reference {
            if !r.level.is_power_of_two() {
                errors.push(format!(
                    "reference.level: {} is not a power of two",
                    r.level
                ));
            }
            if let Some(&max) = self.levels.iter().max() {
                if r.level <= max {
                    errors.push(format!(
                        "reference.level: {} must exceed the finest level {max}",
                        r.level
                    ));
                }
            }
        }
        let flow = self.flow_config();
        if !(flow.step > 0.0 && flow.step <= 1.0) {
            errors.push(format!("flow.step: {} outside (0, 1]", flow.step));
        }
        if !(flow.tolerance > 0.0) {
            errors.push(format!(
                "flow.tolerance: must be positive, got {}",
                flow.tolerance
            ));
        }
        if flow.max_iterations == 0 {
            errors.push("flow.max_iterations: must be positive".into());
        }
        if self.output.as_os_str().is_empty() {
            errors.push("output: empty path".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }
}
