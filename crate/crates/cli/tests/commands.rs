use std::fs;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bec-fem"))
}

#[test]
fn selftest_passes_and_the_corrupted_basis_fails() {
    let ok = bin().args(["selftest", "--seed", "3"]).output().unwrap();
    assert_eq!(
        ok.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&ok.stdout)
    );
    let text = String::from_utf8(ok.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 6);

    let bad = bin()
        .args(["selftest", "--corrupt-basis", "1e-3"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(4));
    assert!(String::from_utf8(bad.stdout)
        .unwrap()
        .contains("FAIL orthogonality"));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "example = \"TABLE_CONV\"\nlevels = [8, 6]\n").unwrap();
    let out = bin().arg("run").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .contains("power of two"));
}

#[test]
fn non_convergence_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short.toml");
    fs::write(
        &path,
        "example = \"TABLE_CONV\"\nlevels = [4]\n[flow]\nmax_iterations = 1\n",
    )
    .unwrap();
    let out = bin().arg("run").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    let energy = fs::read_to_string(dir.path().join("out/table_energy.csv")).unwrap();
    assert!(energy.contains("not_converged"));
}

#[test]
fn table2_small() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["table2", "--max-level", "16", "--output"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("2.795872"), "{text}");
    assert!(dir.path().join("table_energy.csv").exists());
}

#[test]
fn thread_count_does_not_change_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg =
        "example = \"TABLE_CONV\"\nlevels = [8, 16]\ntimings = false\n[reference]\nlevel = 32\n";
    let mut bodies = Vec::new();
    for threads in ["1", "3"] {
        let sub = dir.path().join(threads);
        fs::create_dir_all(&sub).unwrap();
        fs::write(sub.join("c.toml"), cfg).unwrap();
        let out = bin()
            .arg("run")
            .arg(sub.join("c.toml"))
            .env("BEC_FEM_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
        let text = fs::read_to_string(sub.join("out/table_errors.csv")).unwrap();
        bodies.push(bec_fem::experiment::csv_body(&text));
    }
    assert_eq!(bodies[0], bodies[1]);
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let out = bin()
        .args(["selftest"])
        .env("BEC_FEM_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
