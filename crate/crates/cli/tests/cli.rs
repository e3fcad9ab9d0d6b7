//! Black-box checks of the binary: exit codes per failure class and
//! byte-identical outputs across reruns.

use std::path::PathBuf;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_tempered-dg");

fn tmp(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("tempered-dg-cli-{name}"));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn write_cfg(dir: &PathBuf, text: &str) -> PathBuf {
    let p = dir.join("run.cfg");
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> i32 {
    Command::new(BIN)
        .args(args)
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

#[test]
fn config_errors_exit_2() {
    let d = tmp("cfg-err");
    let cfg = write_cfg(&d, "problem.id = nonexistent\n");
    let out = d.join("out");
    assert_eq!(run(&["--out", out.to_str().unwrap(), "converge", cfg.to_str().unwrap()]), 2);
}

#[test]
fn io_failures_exit_3() {
    let d = tmp("io-err");
    let cfg = write_cfg(&d, "problem.id = smooth-1d\nmesh.levels = 2\n");
    // output directory path occupied by a plain file
    let blocked = d.join("blocked");
    std::fs::write(&blocked, "x").unwrap();
    assert_eq!(
        run(&["--out", blocked.to_str().unwrap(), "converge", cfg.to_str().unwrap()]),
        3
    );
}

#[test]
fn adaptivity_abort_exits_4() {
    let d = tmp("abort");
    let cfg = write_cfg(
        &d,
        "problem.id = boundary-layer-1d\nuniform.levels = 0\n\
         adapt.tol_space = 0.0000000001\nadapt.max_iterations = 200\nadapt.dof_cap = 50\n",
    );
    let out = d.join("out");
    assert_eq!(
        run(&[
            "--out",
            out.to_str().unwrap(),
            "adapt-stationary",
            cfg.to_str().unwrap(),
            "--scheme",
            "energy",
        ]),
        4
    );
}

#[test]
fn reruns_are_byte_identical() {
    let d = tmp("determinism");
    let cfg = write_cfg(&d, "problem.id = smooth-1d\nmesh.levels = 2\n");
    let (o1, o2) = (d.join("a"), d.join("b"));
    for o in [&o1, &o2] {
        assert_eq!(run(&["--out", o.to_str().unwrap(), "converge", cfg.to_str().unwrap()]), 0);
    }
    for name in ["converge.csv", "converge.svg"] {
        let a = std::fs::read(o1.join(name)).unwrap();
        let b = std::fs::read(o2.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between reruns");
    }
}
