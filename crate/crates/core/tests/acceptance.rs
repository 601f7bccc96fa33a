//! One line per acceptance criterion. Exits nonzero if any criterion fails.

use std::f64::consts::PI;
use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use bec_fem::analysis::eoc;
use bec_fem::assembly::Potential;
use bec_fem::config::{ExampleId, ExperimentConfig, ReferenceSpec};
use bec_fem::elements::{ElementKind, FeSpace};
use bec_fem::experiment::{csv_body, run_config_with_threads, run_experiment, ExperimentReport};
use bec_fem::gpe::{FlowConfig, GpeProblem};
use bec_fem::mesh::{Domain, Mesh};
use bec_fem::selftest::{run_selftest, SelftestOptions};

const LEVELS: [usize; 6] = [8, 16, 32, 64, 128, 256];
const REFERENCE_LEVEL: usize = 512;

const ENERGY: [f64; 6] = [2.795872, 2.818900, 2.824798, 2.826281, 2.826652, 2.826745];
const EIGENVALUE: [f64; 6] = [5.872934, 5.919046, 5.930845, 5.933812, 5.934555, 5.934740];
const OBSERVABLE_TOL: f64 = 5e-6;

const L2_ERROR: [f64; 5] = [1.28e-2, 3.21e-3, 8.03e-4, 2.01e-4, 5.02e-5];
const H1_ERROR: [f64; 5] = [2.52e-1, 1.26e-1, 6.30e-2, 3.15e-2, 1.57e-2];
const ERROR_REL_TOL: f64 = 0.02;
const ORDER_TOL: f64 = 0.05;

const MONOTONE_TOL: f64 = 1e-10;
const LAPLACE_TOL: f64 = 1e-2;

struct Outcome {
    passed: bool,
    lines: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self {
            passed: true,
            lines: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, detail: String) {
        self.passed &= ok;
        self.lines
            .push(format!("    {} {detail}", if ok { "ok  " } else { "FAIL" }));
    }
}

fn report(number: usize, title: &str, outcome: &Outcome, seconds: f64) -> bool {
    let mark = if outcome.passed { "PASS" } else { "FAIL" };
    println!("{mark} criterion {number}: {title} ({seconds:.1}s)");
    for l in &outcome.lines {
        println!("{l}");
    }
    outcome.passed
}

fn eq1rot_rows(report: &ExperimentReport) -> Vec<&bec_fem::analysis::ErrorRecord> {
    report
        .rows(ElementKind::Eq1Rot)
        .map(|r| &r.record)
        .collect()
}

fn sine_well_study() -> ExperimentReport {
    let mut cfg = ExperimentConfig::table2(*LEVELS.last().unwrap());
    cfg.reference = Some(ReferenceSpec {
        level: REFERENCE_LEVEL,
        element: ElementKind::Q2,
    });
    run_experiment(&cfg).expect("sine-well study runs")
}

fn criterion1(study: &ExperimentReport) -> Outcome {
    let mut o = Outcome::new();
    for (i, r) in eq1rot_rows(study).iter().enumerate() {
        let de = (r.energy - ENERGY[i]).abs();
        let dl = (r.eigenvalue - EIGENVALUE[i]).abs();
        o.check(
            de <= OBSERVABLE_TOL && dl <= OBSERVABLE_TOL,
            format!("N={:<4} E={:.7} (|dE|={de:.1e})  lambda={:.7} (|dl|={dl:.1e})  tol {OBSERVABLE_TOL:e}", r.n, r.energy, r.eigenvalue),
        );
    }
    o
}

fn criterion2(study: &ExperimentReport) -> Outcome {
    let mut o = Outcome::new();
    let rows = eq1rot_rows(study);
    for i in 0..L2_ERROR.len() {
        let r = rows[i];
        let (l2, h1) = (r.l2_error.unwrap(), r.h1_error.unwrap());
        let rl = (l2 / L2_ERROR[i] - 1.0).abs();
        let rh = (h1 / H1_ERROR[i] - 1.0).abs();
        let mut ok = rl <= ERROR_REL_TOL && rh <= ERROR_REL_TOL;
        let mut orders = String::new();
        if i > 0 {
            let ol = eoc(rows[i - 1].l2_error.unwrap(), l2).unwrap_or(f64::NAN);
            let oh = eoc(rows[i - 1].h1_error.unwrap(), h1).unwrap_or(f64::NAN);
            ok &= (ol - 2.0).abs() <= ORDER_TOL && (oh - 1.0).abs() <= ORDER_TOL;
            orders = format!("  orders {ol:.3} / {oh:.3}");
        }
        o.check(
            ok,
            format!(
                "N={:<4} l2={l2:.3e} ({:+.2}%)  h1={h1:.3e} ({:+.2}%){orders}",
                r.n,
                100.0 * (l2 / L2_ERROR[i] - 1.0),
                100.0 * (h1 / H1_ERROR[i] - 1.0)
            ),
        );
    }
    o
}

fn criterion3(study: &ExperimentReport) -> Outcome {
    let mut o = Outcome::new();
    let rows = eq1rot_rows(study);
    for i in 1..rows.len() {
        if rows[i].n < 32 {
            continue;
        }
        let oe = eoc(
            rows[i - 1].energy_error.unwrap(),
            rows[i].energy_error.unwrap(),
        )
        .unwrap_or(f64::NAN);
        let ol = eoc(
            rows[i - 1].eigenvalue_error.unwrap(),
            rows[i].eigenvalue_error.unwrap(),
        )
        .unwrap_or(f64::NAN);
        o.check(
            (oe - 2.0).abs() <= ORDER_TOL && (ol - 2.0).abs() <= ORDER_TOL,
            format!(
                "N={:<4} energy order {oe:.3}  eigenvalue order {ol:.3}  (2 +- {ORDER_TOL})",
                rows[i].n
            ),
        );
    }
    o
}

fn lower_bound_lines(o: &mut Outcome, label: &str, study: &ExperimentReport, strict: bool) {
    let lb = study
        .lower_bound(ElementKind::Eq1Rot)
        .expect("reference present");
    let margins: Vec<String> = lb
        .levels
        .iter()
        .map(|l| format!("{}:{:+.2e}", l.n, l.margin))
        .collect();
    if strict {
        o.check(
            lb.levels.iter().all(|l| l.margin > 0.0),
            format!(
                "{label}: E_ref(Q2, N={REFERENCE_LEVEL}) = {:.7}, margins {}",
                lb.upper,
                margins.join(" ")
            ),
        );
    } else {
        let threshold = lb
            .threshold
            .map_or_else(|| "none".into(), |n| n.to_string());
        o.check(
            lb.threshold.is_some(),
            format!("{label}: E_ref(Q2, N={REFERENCE_LEVEL}) = {:.7}, margins {}, lower bound holds from N = {threshold}", lb.upper, margins.join(" ")),
        );
    }
}

fn criterion4(study: &ExperimentReport) -> Outcome {
    let mut o = Outcome::new();
    lower_bound_lines(&mut o, "sine well, beta=1", study, true);
    for (example, label, strict) in [
        (ExampleId::ElementCompare, "sine well, beta=10", true),
        (ExampleId::Stirrer, "stirrer, beta=400", false),
    ] {
        let mut cfg =
            ExperimentConfig::lower_bound(example, *LEVELS.last().unwrap(), REFERENCE_LEVEL);
        cfg.elements = vec![ElementKind::Eq1Rot];
        let r = run_experiment(&cfg).expect("lower-bound study runs");
        lower_bound_lines(&mut o, label, &r, strict);
    }
    o
}

fn criterion5(study: &ExperimentReport) -> Outcome {
    let mut o = Outcome::new();
    let rows = eq1rot_rows(study);
    let steps: Vec<f64> = rows.windows(2).map(|w| w[1].energy - w[0].energy).collect();
    let worst = steps.iter().cloned().fold(f64::INFINITY, f64::min);
    o.check(
        worst >= -MONOTONE_TOL,
        format!("smallest energy increase across levels {worst:.3e} (>= -{MONOTONE_TOL:e})"),
    );
    o
}

fn criterion6() -> Outcome {
    let mut o = Outcome::new();
    let target = PI * PI / 2.0;
    for kind in [ElementKind::Eq1Rot, ElementKind::Q2] {
        let s = FeSpace::new(
            Mesh::uniform(Domain::square(-1.0, 1.0).unwrap(), 64).unwrap(),
            kind,
            5,
        )
        .unwrap();
        let gs = GpeProblem::new(&s, Potential::Zero, 0.0)
            .unwrap()
            .solve_ground_state(&FlowConfig::default())
            .unwrap();
        let side_ok = match kind {
            ElementKind::Eq1Rot => gs.eigenvalue <= target,
            ElementKind::Q2 => gs.eigenvalue >= target,
        };
        let rel = if kind == ElementKind::Eq1Rot {
            "<="
        } else {
            ">="
        };
        o.check(
            side_ok && (gs.eigenvalue - target).abs() <= LAPLACE_TOL,
            format!("{kind:>6} N=64 lambda={:.6} {rel} pi^2/2={target:.6}, gap {:.2e} (tol {LAPLACE_TOL:e})", gs.eigenvalue, (gs.eigenvalue - target).abs()),
        );
    }
    o
}

fn criterion7() -> Outcome {
    let mut o = Outcome::new();
    let report = run_selftest(&SelftestOptions::default());
    for s in &report.suites {
        o.check(s.passed, format!("{:<18} {}", s.name, s.detail));
    }
    o
}

fn criterion8() -> Outcome {
    let mut o = Outcome::new();
    let dir = tempfile::tempdir().expect("temp dir");
    let mut bodies = Vec::new();
    for threads in [1, 4] {
        let mut cfg = ExperimentConfig::table2(*LEVELS.last().unwrap());
        cfg.timings = false;
        cfg.output = dir.path().join(format!("threads{threads}"));
        run_config_with_threads(&cfg, threads).expect("table run");
        let files: Vec<String> = ["table_errors.csv", "table_energy.csv", "convergence.csv"]
            .iter()
            .map(|f| csv_body(&fs::read_to_string(cfg.output.join(f)).expect("written")))
            .collect();
        bodies.push(files);
    }
    for (k, name) in ["table_errors.csv", "table_energy.csv", "convergence.csv"]
        .iter()
        .enumerate()
    {
        o.check(
            bodies[0][k] == bodies[1][k],
            format!(
                "{name}: bodies identical with 1 and 4 threads ({} bytes)",
                bodies[0][k].len()
            ),
        );
    }
    o
}

fn main() -> ExitCode {
    let mut all = true;
    let t = Instant::now();
    let study = sine_well_study();
    println!(
        "sine-well study with Q2 reference N={REFERENCE_LEVEL}: {:.1}s",
        t.elapsed().as_secs_f64()
    );

    let timed = |f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let o = f();
        (o, t.elapsed().as_secs_f64())
    };
    let (o, s) = timed(&|| criterion1(&study));
    all &= report(1, "energies and eigenvalues, sine well N=8..256", &o, s);
    let (o, s) = timed(&|| criterion2(&study));
    all &= report(2, "L2/H1 errors against Q2 reference, N=8..128", &o, s);
    let (o, s) = timed(&|| criterion3(&study));
    all &= report(3, "energy and eigenvalue orders, N>=32", &o, s);
    let (o, s) = timed(&|| criterion4(&study));
    all &= report(4, "lower bound against Q2 reference energy", &o, s);
    let (o, s) = timed(&|| criterion5(&study));
    all &= report(5, "monotone energies, sine well", &o, s);
    let (o, s) = timed(&criterion6);
    all &= report(6, "linear problem brackets pi^2/2", &o, s);
    let (o, s) = timed(&criterion7);
    all &= report(7, "property suites", &o, s);
    let (o, s) = timed(&criterion8);
    all &= report(8, "byte-identical tables across thread counts", &o, s);

    println!(
        "acceptance: {}",
        if all { "all criteria pass" } else { "FAILURES" }
    );
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
