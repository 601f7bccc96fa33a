//! Convergence studies driven by an [`ExperimentConfig`], written as CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use crate::analysis::{self, eoc_sequence, ErrorRecord, LowerBoundReport};
use crate::config::{ExperimentConfig, ProblemSpec, ReferenceSpec};
use crate::elements::{ElementKind, FeSpace, DEFAULT_QUAD_ORDER};
use crate::error::{Error, FlowRecord, Result};
use crate::gpe::{FlowConfig, GpeProblem, GroundState, InitialGuess};

/// Worker-thread count; unset or `0` means available parallelism.
pub const THREADS_ENV: &str = "BEC_FEM_THREADS";

/// Coarsest level of the warm-started reference sequence.
const WARM_START_LEVEL: usize = 16;

/// Monotonicity slack for energies across levels.
pub const MONOTONE_TOLERANCE: f64 = 1e-10;

pub fn configured_threads() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(s) if !s.trim().is_empty() => s.trim().parse().map_err(|_| {
            Error::Config(vec![format!("{THREADS_ENV}: `{s}` is not a thread count")])
        }),
        _ => Ok(0),
    }
}

/// Runs `f` on a pool sized by [`THREADS_ENV`].
pub fn with_thread_pool<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R> {
    with_threads(configured_threads()?, f)
}

/// Runs `f` on a pool of `threads` workers (`0`: available parallelism).
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(vec![format!("{THREADS_ENV}: {e}")]))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Ok,
    NotConverged,
    SolverFailure,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::NotConverged => "not_converged",
            RunStatus::SolverFailure => "solver_failure",
        }
    }
}

#[derive(Debug, Clone)]
pub struct LevelRun {
    pub element: ElementKind,
    pub record: ErrorRecord,
    pub status: RunStatus,
    pub trajectory: Vec<FlowRecord>,
    /// `(x, y, u)` at cell centers, when requested.
    pub samples: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Clone)]
pub struct ReferenceRun {
    pub element: ElementKind,
    pub n: usize,
    pub dofs: usize,
    pub energy: f64,
    pub eigenvalue: f64,
    pub iterations: usize,
    pub mixed_derivative_l2: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub reference: Option<ReferenceRun>,
    pub runs: Vec<LevelRun>,
    pub lower_bounds: Vec<(ElementKind, LowerBoundReport)>,
}

impl ExperimentReport {
    pub fn rows(&self, element: ElementKind) -> impl Iterator<Item = &LevelRun> {
        self.runs.iter().filter(move |r| r.element == element)
    }

    pub fn has_failures(&self) -> bool {
        self.runs.iter().any(|r| r.status != RunStatus::Ok)
    }

    pub fn lower_bound(&self, element: ElementKind) -> Option<&LowerBoundReport> {
        self.lower_bounds
            .iter()
            .find(|(e, _)| *e == element)
            .map(|(_, r)| r)
    }
}

pub fn build_space(problem: &ProblemSpec, kind: ElementKind, n: usize) -> Result<FeSpace> {
    FeSpace::new(problem.mesh(n)?, kind, DEFAULT_QUAD_ORDER)
}

/// Reference ground state, solved level by level from a coarse bubble
/// start, each level warm-started from the previous one.
pub fn solve_reference(
    problem: &ProblemSpec,
    spec: &ReferenceSpec,
    flow: &FlowConfig,
) -> Result<(FeSpace, GroundState)> {
    let potential = problem.potential.build();
    let mut n = WARM_START_LEVEL.min(spec.level);
    let mut space = build_space(problem, spec.element, n)?;
    let mut state =
        GpeProblem::new(&space, potential.clone(), problem.beta)?.solve_ground_state(flow)?;
    while n < spec.level {
        n *= 2;
        let finer = build_space(problem, spec.element, n)?;
        let start = analysis::transfer(&space, &state.u, &finer)?;
        let cfg = FlowConfig {
            initial: InitialGuess::Given(start),
            ..flow.clone()
        };
        state =
            GpeProblem::new(&finer, potential.clone(), problem.beta)?.solve_ground_state(&cfg)?;
        space = finer;
    }
    Ok((space, state))
}

fn cell_samples(space: &FeSpace, u: &crate::field::DiscreteField) -> Vec<[f64; 3]> {
    let mesh = space.mesh();
    (0..mesh.n_cells())
        .map(|c| {
            let [x, y] = mesh.cell_center(c);
            let v = space
                .eval_field(u, c, &[[0.0, 0.0]])
                .expect("field belongs to space")[0]
                .0;
            [x, y, v]
        })
        .collect()
}

/// Runs every (element, level) pair of `cfg`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let problem = cfg.problem();
    let flow = cfg.flow_config();
    let potential = problem.potential.build();

    let reference = match &cfg.reference {
        Some(spec) => Some(solve_reference(&problem, spec, &flow)?),
        None => None,
    };
    let reference_run = match &reference {
        Some((space, gs)) => Some(ReferenceRun {
            element: space.kind(),
            n: space.mesh().nx,
            dofs: space.n_dofs(),
            energy: gs.energy,
            eigenvalue: gs.eigenvalue,
            iterations: gs.iterations,
            mixed_derivative_l2: analysis::mixed_derivative_l2(space, &gs.u)?,
        }),
        None => None,
    };

    let mut runs = Vec::new();
    for &element in &cfg.elements {
        for &n in &cfg.levels {
            let t0 = Instant::now();
            let space = build_space(&problem, element, n)?;
            let outcome =
                GpeProblem::new(&space, potential.clone(), problem.beta)?.solve_ground_state(&flow);
            let cpu_s = t0.elapsed().as_secs_f64();
            let mut record = ErrorRecord {
                n,
                dofs: space.n_dofs(),
                l2_error: None,
                h1_error: None,
                energy: f64::NAN,
                eigenvalue: f64::NAN,
                energy_error: None,
                eigenvalue_error: None,
                iterations: 0,
                cpu_s: cfg.timings.then_some(cpu_s),
            };
            let run = match outcome {
                Ok(gs) => {
                    record.energy = gs.energy;
                    record.eigenvalue = gs.eigenvalue;
                    record.iterations = gs.iterations;
                    if let (Some((rspace, rgs)), Some(r)) = (&reference, &reference_run) {
                        let e = analysis::compute_errors(&space, &gs.u, rspace, &rgs.u)?;
                        record.l2_error = Some(e.l2);
                        record.h1_error = Some(e.h1);
                        record.energy_error = Some((gs.energy - r.energy).abs());
                        record.eigenvalue_error = Some((gs.eigenvalue - r.eigenvalue).abs());
                    }
                    LevelRun {
                        element,
                        record,
                        status: RunStatus::Ok,
                        samples: cfg.fields.then(|| cell_samples(&space, &gs.u)),
                        trajectory: gs.trajectory,
                    }
                }
                Err(Error::NotConverged { trajectory }) => LevelRun {
                    element,
                    record: ErrorRecord {
                        iterations: trajectory.len(),
                        ..record
                    },
                    status: RunStatus::NotConverged,
                    samples: None,
                    trajectory,
                },
                Err(Error::SolverFailure { .. }) | Err(Error::NotPositiveDefinite) => LevelRun {
                    element,
                    record,
                    status: RunStatus::SolverFailure,
                    samples: None,
                    trajectory: Vec::new(),
                },
                Err(e) => return Err(e),
            };
            runs.push(run);
        }
    }

    let lower_bounds = match &reference_run {
        Some(r) => cfg
            .elements
            .iter()
            .map(|&element| {
                let energies: Vec<(usize, f64)> = runs
                    .iter()
                    .filter(|run| run.element == element && run.status == RunStatus::Ok)
                    .map(|run| (run.record.n, run.record.energy))
                    .collect();
                (
                    element,
                    analysis::lower_bound_check(&energies, r.energy, MONOTONE_TOLERANCE),
                )
            })
            .collect(),
        None => Vec::new(),
    };

    Ok(ExperimentReport {
        config: cfg.clone(),
        reference: reference_run,
        runs,
        lower_bounds,
    })
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, num)
}

fn sci(v: Option<f64>) -> String {
    v.filter(|v| v.is_finite())
        .map_or_else(String::new, |v| format!("{v:e}"))
}

fn header(file: &str, cfg: &ExperimentConfig) -> String {
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    format!(
        "# bec-fem {file} example={} generated_unix={stamp}\n",
        cfg.label()
    )
}

fn column(runs: &[&LevelRun], f: impl Fn(&ErrorRecord) -> Option<f64>) -> Vec<Option<f64>> {
    let values: Vec<f64> = runs
        .iter()
        .map(|r| f(&r.record).unwrap_or(f64::NAN))
        .collect();
    eoc_sequence(&values)
}

/// Table rows for one element in level order.
fn element_runs(report: &ExperimentReport, element: ElementKind) -> Vec<&LevelRun> {
    report.rows(element).collect()
}

pub fn table_errors_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("element,N,DOFs,cpu_s,l2_error,l2_order,h1_error,h1_order,status\n");
    for &element in &report.config.elements {
        let runs = element_runs(report, element);
        let l2_order = column(&runs, |r| r.l2_error);
        let h1_order = column(&runs, |r| r.h1_error);
        for (i, run) in runs.iter().enumerate() {
            let r = &run.record;
            let _ = writeln!(
                out,
                "{element},{},{},{},{},{},{},{},{}",
                r.n,
                r.dofs,
                opt(r.cpu_s),
                sci(r.l2_error),
                opt(l2_order[i]),
                sci(r.h1_error),
                opt(h1_order[i]),
                run.status.as_str()
            );
        }
    }
    out
}

pub fn table_energy_csv(report: &ExperimentReport) -> String {
    let mut out = String::from(
        "element,N,energy,energy_error,energy_order,eigenvalue,eigenvalue_error,eigenvalue_order,iterations,status\n",
    );
    for &element in &report.config.elements {
        let runs = element_runs(report, element);
        let e_order = column(&runs, |r| r.energy_error);
        let l_order = column(&runs, |r| r.eigenvalue_error);
        for (i, run) in runs.iter().enumerate() {
            let r = &run.record;
            let _ = writeln!(
                out,
                "{element},{},{},{},{},{},{},{},{},{}",
                r.n,
                num(r.energy),
                sci(r.energy_error),
                opt(e_order[i]),
                num(r.eigenvalue),
                sci(r.eigenvalue_error),
                opt(l_order[i]),
                r.iterations,
                run.status.as_str()
            );
        }
    }
    out
}

pub fn convergence_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("element,N,iteration,energy,eigenvalue,residual\n");
    for run in &report.runs {
        for t in &run.trajectory {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:e}",
                run.element,
                run.record.n,
                t.iteration,
                num(t.energy),
                num(t.eigenvalue),
                t.residual
            );
        }
    }
    out
}

pub fn lower_bound_csv(report: &ExperimentReport) -> Option<String> {
    let reference = report.reference.as_ref()?;
    let mut out = String::from("element,N,energy,reference_energy,margin,below\n");
    for (element, lb) in &report.lower_bounds {
        for l in &lb.levels {
            let _ = writeln!(
                out,
                "{element},{},{},{},{:e},{}",
                l.n,
                num(l.energy),
                num(reference.energy),
                l.margin,
                l.below
            );
        }
    }
    Some(out)
}

pub fn reference_csv(report: &ExperimentReport) -> Option<String> {
    let r = report.reference.as_ref()?;
    Some(format!(
        "element,N,DOFs,energy,eigenvalue,iterations,mixed_derivative_l2\n{},{},{},{},{},{},{}\n",
        r.element,
        r.n,
        r.dofs,
        num(r.energy),
        num(r.eigenvalue),
        r.iterations,
        num(r.mixed_derivative_l2)
    ))
}

/// `field_N<k>.csv` bodies keyed by level.
pub fn field_csvs(report: &ExperimentReport) -> Vec<(usize, String)> {
    let mut out: Vec<(usize, String)> = Vec::new();
    for run in &report.runs {
        let Some(samples) = &run.samples else {
            continue;
        };
        let k = run.record.n;
        let pos = match out.iter().position(|(n, _)| *n == k) {
            Some(p) => p,
            None => {
                out.push((k, String::from("element,x,y,u\n")));
                out.len() - 1
            }
        };
        let body = &mut out[pos].1;
        for [x, y, u] in samples {
            let _ = writeln!(body, "{},{},{},{}", run.element, num(*x), num(*y), num(*u));
        }
    }
    out
}

/// Writes all tables of `report` into `dir`.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let cfg = &report.config;
    let mut files = vec![
        ("table_errors.csv".to_string(), table_errors_csv(report)),
        ("table_energy.csv".to_string(), table_energy_csv(report)),
        ("convergence.csv".to_string(), convergence_csv(report)),
    ];
    if let Some(s) = lower_bound_csv(report) {
        files.push(("lower_bound.csv".into(), s));
    }
    if let Some(s) = reference_csv(report) {
        files.push(("reference.csv".into(), s));
    }
    for (k, body) in field_csvs(report) {
        files.push((format!("field_N{k}.csv"), body));
    }
    for (name, body) in files {
        fs::write(dir.join(&name), header(&name, cfg) + &body)?;
    }
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    Ok(())
}

/// Parses, runs and writes the experiment described by the file at `path`.
pub fn run(path: &Path) -> Result<ExperimentReport> {
    let cfg = ExperimentConfig::from_path(path)?;
    run_config(&cfg)
}

pub fn run_config(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_config_with_threads(cfg, configured_threads()?)
}

pub fn run_config_with_threads(cfg: &ExperimentConfig, threads: usize) -> Result<ExperimentReport> {
    let report = with_threads(threads, || run_experiment(cfg))??;
    write_report(&report, &cfg.output)?;
    Ok(report)
}

/// Drops `#` comment lines.
pub fn csv_body(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExampleId;

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::for_example(ExampleId::TableConv, vec![4, 8]);
        cfg.elements = vec![ElementKind::Eq1Rot, ElementKind::Q2];
        cfg.reference = Some(ReferenceSpec {
            level: 32,
            element: ElementKind::Q2,
        });
        cfg.timings = false;
        cfg.fields = true;
        cfg
    }

    #[test]
    fn report_shape() {
        let report = run_experiment(&small()).unwrap();
        assert_eq!(report.runs.len(), 4);
        assert!(!report.has_failures());
        let eq1: Vec<_> = report.rows(ElementKind::Eq1Rot).collect();
        assert!(eq1[0].record.energy < eq1[1].record.energy);
        assert!(report.lower_bound(ElementKind::Eq1Rot).unwrap().all_below());
        assert!(!report.lower_bound(ElementKind::Q2).unwrap().all_below());

        let errors = table_errors_csv(&report);
        let lines: Vec<&str> = errors.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("eq1rot,4,"));
        assert_eq!(lines[1].split(',').nth(3), Some(""));
        assert_eq!(lines[1].split(',').nth(5), Some(""));
        assert!(lines[2].split(',').nth(5).unwrap().parse::<f64>().is_ok());
        let fields = field_csvs(&report);
        assert_eq!(fields.len(), 2);
        assert_eq!(fields[1].1.lines().count(), 1 + 2 * 64);
        assert!(reference_csv(&report).unwrap().contains("q2,32,"));
    }

    #[test]
    fn non_convergence_is_a_marked_row() {
        let mut cfg = ExperimentConfig::for_example(ExampleId::TableConv, vec![4]);
        cfg.flow.max_iterations = Some(2);
        let report = run_experiment(&cfg).unwrap();
        assert!(report.has_failures());
        assert_eq!(report.runs[0].trajectory.len(), 2);
        assert!(table_energy_csv(&report).contains("not_converged"));
    }

    #[test]
    fn written_tables_are_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small();
        cfg.output = dir.path().join("a");
        let a = run_config(&cfg).unwrap();
        cfg.output = dir.path().join("b");
        run_config(&cfg).unwrap();
        for name in [
            "table_errors.csv",
            "table_energy.csv",
            "convergence.csv",
            "field_N8.csv",
        ] {
            let x = fs::read_to_string(dir.path().join("a").join(name)).unwrap();
            let y = fs::read_to_string(dir.path().join("b").join(name)).unwrap();
            assert!(x.starts_with("# bec-fem"));
            assert_eq!(csv_body(&x), csv_body(&y), "{name}");
        }
        let echoed =
            ExperimentConfig::from_path(&dir.path().join("a").join("config.toml")).unwrap();
        assert_eq!(echoed.levels, a.config.levels);
    }
}
