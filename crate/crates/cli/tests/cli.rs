//! End-to-end checks of the command-line driver.

use std::process::Command;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_subdiv-iga"))
}

fn temp_dir(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join("subdiv_iga_cli").join(name);
    std::fs::remove_dir_all(&dir).ok();
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn run_writes_reports() {
    let out = temp_dir("run");
    let status = binary()
        .args([
            "run",
            "--case",
            "plate-test1-mesh1",
            "--levels",
            "2",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    for name in ["convergence.csv", "pointwise_error.csv", "sparsity.csv"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
}

#[test]
fn config_file_with_flag_overrides() {
    let out = temp_dir("config");
    let cfg = out.join("experiment.cfg");
    std::fs::write(
        &cfg,
        format!(
            "case = plate-test2-mesh1\nlevels = 3\nquadrature = standard\nout = {}\n",
            out.display()
        ),
    )
    .unwrap();
    let status = binary()
        .args(["run", "--case"])
        .arg(&cfg)
        .args(["--levels", "2"]) // override the config's 3 levels
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(out.join("convergence.csv")).unwrap();
    assert_eq!(text.lines().count(), 3); // header + 2 levels
}

#[test]
fn unknown_case_fails() {
    let output = binary()
        .args(["run", "--case", "torus", "--out"])
        .arg(temp_dir("bad"))
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("unknown case"), "stderr: {stderr}");
}

#[test]
fn timing_subcommand_writes_table() {
    let out = temp_dir("timing");
    let status = binary()
        .args([
            "timing",
            "--case",
            "plate-test1-mesh2",
            "--levels",
            "1",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(out.join("timing.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "level,n_elements,n_d,e_L2,assembly_seconds");
    assert_eq!(text.lines().count(), 4); // header + three depths
}
