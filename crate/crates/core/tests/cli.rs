//! Exit codes and output of the `nlup` binary.

use std::process::{Command, Output};

fn nlup(args: &[&str], dir: &std::path::Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlup"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: [&str; 8] = ["--set", "mesh.nx=3", "--set", "mesh.ny=3", "--set", "mesh.refine=2", "--set", "problem.n_steps=1"];

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(nlup(&[], dir.path()).status.code(), Some(2));
    assert_eq!(nlup(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(nlup(&["solve", "--provider", "oracle"], dir.path()).status.code(), Some(2));
    assert_eq!(nlup(&["--version"], dir.path()).status.code(), Some(0));
}

#[test]
fn mesh_info_reports_layout_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let o = nlup(&["mesh-info", "--config", "example1"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    for line in ["nx_coarse=20", "refine=5", "coarse_cells=400", "fine_cells=10000", "coarse_edges=840", "trace_slots=4200"] {
        assert!(out.lines().any(|l| l == line), "missing {line} in\n{out}");
    }
    assert!(out.contains("surrogate layers: [800, 2400, 2400, 4200]"), "{out}");
}

#[test]
fn runtime_errors_exit_with_one_and_a_category() {
    let dir = tempfile::tempdir().unwrap();
    let o = nlup(&["mesh-info", "--config", "no-such-config"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("error["), "{}", stderr(&o));

    let o = nlup(&["mesh-info", "--set", "mesh.nx=0"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("error[config]"), "{}", stderr(&o));

    let missing = dir.path().join("missing.bin");
    let mut args = vec!["solve", "--provider", "nn", "--model", missing.to_str().unwrap()];
    args.extend(TINY);
    let o = nlup(&args, dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("error[io]"), "{}", stderr(&o));
}

#[test]
fn strict_mode_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let o = nlup(&["mesh-info", "--set", "mesh.bogus=1"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = nlup(&["mesh-info", "--strict", "--set", "mesh.bogus=1"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("error[config]") && stderr(&o).contains("mesh.bogus"), "{}", stderr(&o));
}

#[test]
fn tiny_exact_and_baseline_solves_succeed() {
    let dir = tempfile::tempdir().unwrap();
    for provider in ["exact", "baseline"] {
        let mut args = vec!["solve", "--provider", provider, "--out", "run"];
        args.extend(TINY);
        let o = nlup(&args, dir.path());
        assert_eq!(o.status.code(), Some(0), "{provider}: {}", stderr(&o));
    }
}
