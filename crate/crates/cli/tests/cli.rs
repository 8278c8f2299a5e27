use std::path::Path;
use std::process::{Command, Output};

fn cgm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgm"))
        .args(args)
        .env("CGM_WORKERS", "2")
        .output()
        .unwrap()
}

fn out_arg(dir: &Path) -> String {
    dir.display().to_string()
}

#[test]
fn rap_run_with_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let out = cgm(&[
        "--problem", "rap", "--d", "12", "--iters", "100,200", "--schedule", "constant,varying",
        "--check-bounds", "--out", &out_arg(dir.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("rap_constant_T100"));
    assert!(stdout.contains("pass"));
    assert!(dir.path().join("summary.csv").exists());
    assert!(dir.path().join("rap_schedules.svg").exists());
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(&cfg, "problem = hbg\nd = 500\nbeta = 0.5\niters = 150\n").unwrap();
    let out = cgm(&[
        "--config", cfg.to_str().unwrap(), "--d", "8", "--baselines", "--no-plots",
        "--out", &out_arg(&dir.path().join("res")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("res/hbg_b0.5_eg_T150.csv")).unwrap();
    assert_eq!(csv.lines().count(), 151);
    assert!(!dir.path().join("res/hbg_cgm.svg").exists());
}

#[test]
fn invalid_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = cgm(&["--problem", "hbg", "--beta", "1.5", "--out", &out_arg(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("beta"));

    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "problem = rap\nstepsize = 3\n").unwrap();
    let out = cgm(&["--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.cfg:2: unknown key `stepsize`"));
}
