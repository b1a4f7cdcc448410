//! End-to-end tests of the `rioflow` binary: exit codes, report files,
//! deterministic traces.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rioflow"))
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const COUNTER: &str = "\
top Main
clock fck 1000000 Hz
vi Main {
  sctl s clock fck {
    shiftreg c: i32 init 0
    indicator out: i32
    node one: Const i32 1
    node inc: Add
    wire c -> inc.x
    wire one.out -> inc.y
    wire inc.sum -> c
    wire c -> out
  }
}
";

const TIMING_VIOLATION: &str = "\
top Main
clock fck 40000000 Hz
vi Main {
  sctl s clock fck {
    shiftreg c: fxp<8,4> init 0
    node m1: Mul
    node cv1: Convert fxp<8,4>
    node m2: Mul
    node cv2: Convert fxp<8,4>
    wire c -> m1.x
    wire c -> m1.y
    wire m1.prod -> cv1.in
    wire cv1.out -> m2.x
    wire c -> m2.y
    wire m2.prod -> cv2.in
    wire cv2.out -> c
  }
}
";

#[test]
fn check_accepts_valid_project() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "ok.gtext", COUNTER);
    let out = bin().arg("check").arg(&p).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn check_rejects_timing_violation_with_critical_path() {
    // Two chained 15 ns multiplies cannot fit a 25 ns period.
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "slow.gtext", TIMING_VIOLATION);
    let out = bin().arg("check").arg(&p).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("E_SCTL_TIMING"), "{}", err);
    assert!(err.contains("m1") && err.contains("m2"), "critical path missing: {}", err);
}

#[test]
fn check_missing_file_is_usage_error() {
    let out = bin().arg("check").arg("/nonexistent/x.gtext").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn check_reports_syntax_error_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "bad.gtext", "vi V { control a f64 }");
    let out = bin().arg("check").arg(&p).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("E_SYNTAX"), "{}", err);
    assert!(err.contains("bad.gtext:1:"), "line-addressed diagnostic missing: {}", err);
}

#[test]
fn sim_counter_final_register_and_deterministic_traces() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "counter.gtext", COUNTER);
    let run = |out_dir: &Path| {
        let out = bin()
            .arg("sim")
            .arg(&p)
            .args(["--ticks", "100", "--seed", "7", "--trace", "vcd,csv", "--out"])
            .arg(out_dir)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8_lossy(&out.stdout).to_string()
    };
    let d1 = dir.path().join("a");
    let d2 = dir.path().join("b");
    let s1 = run(&d1);
    let _ = run(&d2);
    assert!(s1.contains("s.out = 99"), "{}", s1);
    // Byte-identical traces for the same manifest.
    let vcd1 = std::fs::read(d1.join("trace.vcd")).unwrap();
    let vcd2 = std::fs::read(d2.join("trace.vcd")).unwrap();
    assert_eq!(vcd1, vcd2);
    let csv1 = std::fs::read(d1.join("trace.csv")).unwrap();
    let csv2 = std::fs::read(d2.join("trace.csv")).unwrap();
    assert_eq!(csv1, csv2);
    assert!(d1.join("summary.json").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d1.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["final_registers"]["s.out"], "99");
}

#[test]
fn sim_host_mode_agrees_on_final_register() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "counter.gtext", COUNTER);
    let out = bin()
        .arg("sim")
        .arg(&p)
        .args(["--mode", "host", "--ticks", "100", "--out"])
        .arg(dir.path().join("h"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("s.out = 99"), "{}", stdout);
}

#[test]
fn estimate_reports_resources_and_exit_one_when_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write(dir.path(), "ok.gtext", COUNTER);
    let out = bin().arg("estimate").arg(&ok).arg("--out").arg(dir.path().join("e1")).output().unwrap();
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("e1/estimate.json")).unwrap(),
    )
    .unwrap();
    // Counter: one i32 adder (32 LUT), two 32-bit registers (c + out).
    assert_eq!(report["loops"][0]["resources"]["lut"], 32);
    assert_eq!(report["loops"][0]["resources"]["ff"], 64);
    assert_eq!(report["feasible"], true);

    let slow = write(dir.path(), "slow.gtext", TIMING_VIOLATION);
    let out = bin().arg("estimate").arg(&slow).arg("--out").arg(dir.path().join("e2")).output().unwrap();
    assert_eq!(out.status.code(), Some(1), "infeasible design still reports, exit 1");
    assert!(dir.path().join("e2/estimate.json").exists(), "report emitted despite failure");
}

#[test]
fn demo_runs_and_writes_output_pcm() {
    let dir = tempfile::tempdir().unwrap();
    // 300 samples of a 1 kHz sine at 44.1 kHz, 16-bit LE.
    let mut codes = Vec::new();
    for k in 0..300 {
        let x = 0.4 * (2.0 * std::f64::consts::PI * 1000.0 * k as f64 / 44100.0).sin();
        codes.extend_from_slice(&(((x * 32768.0) as i16).to_le_bytes()));
    }
    let pcm = dir.path().join("in.pcm");
    std::fs::write(&pcm, codes).unwrap();
    let out_dir = dir.path().join("demo");
    let out = bin()
        .arg("demo")
        .args(["--pcm-in"])
        .arg(&pcm)
        .args(["--gains", "1,1,1", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let produced = std::fs::read(out_dir.join("demo_out.pcm")).unwrap();
    assert_eq!(produced.len(), 300 * 2);
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out_dir.join("demo_report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["zero_jitter"], true);
    assert_eq!(report["underruns"], 0);
    assert_eq!(report["ticks_per_sample"], 23);
}

#[test]
fn estimate_all_host_project_reports_zero() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "host.gtext",
        "vi Main { control a: f64  indicator y: f64  wire a -> y }",
    );
    let out = bin().arg("estimate").arg(&p).arg("--out").arg(dir.path().join("e")).output().unwrap();
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("e/estimate.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["total"]["lut"], 0);
    assert_eq!(report["total"]["ff"], 0);
    assert_eq!(report["total"]["dsp"], 0);
    assert_eq!(report["total"]["bram"], 0);
    assert_eq!(report["loops"].as_array().unwrap().len(), 0);
}

#[test]
fn sim_firing_limit_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    // A while loop that never stops trips the firing limit.
    let p = write(
        dir.path(),
        "spin.gtext",
        "vi Main {
  indicator out: i32
  while l {
    indicator stop: bool
    indicator cur: i32
    node never: Const bool false
    wire never.out -> stop
    wire i -> cur
  }
  wire l.cur -> out
}
",
    );
    let out = bin()
        .arg("sim")
        .arg(&p)
        .args(["--ticks", "10", "--max-firings", "1000", "--out"])
        .arg(dir.path().join("s"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("E_LIMIT"));
}

#[test]
fn demo_missing_input_is_usage_error() {
    let out = bin().arg("demo").args(["--pcm-in", "/nonexistent.pcm"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
