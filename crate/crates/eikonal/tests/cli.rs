//! Black-box tests of the `eikonal` binary: exit codes, output contracts,
//! and determinism.

use std::io::Write;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_eikonal"))
}

fn write_config(dir: &tempfile::TempDir, name: &str, json: &str) -> String {
    let path = dir.path().join(name);
    std::fs::File::create(&path)
        .unwrap()
        .write_all(json.as_bytes())
        .unwrap();
    path.to_str().unwrap().to_string()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const CLOSED_FORM: &str = r#"{"kind": "3d", "g": "1", "k": "0"}"#;

#[test]
fn eval_converged_point_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, "cfg.json", CLOSED_FORM);
    let out = bin()
        .args(["eval", "--config", &cfg, "--point", "0,0.6,0,0.8"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let text = stdout_of(&out);
    // closed form: u = −(x0 + ρ) = −1 at this point
    assert!(text.contains("u=-1.0000000000000000e0"), "{text}");
}

#[test]
fn eval_no_branch_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, "cfg.json", CLOSED_FORM);
    // x3 = 0 is rejected as degenerate: no branch
    let out = bin()
        .args(["eval", "--config", &cfg, "--point", "0,0.6,0,0"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{out:?}");
}

#[test]
fn parse_error_exits_one_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, "cfg.json", r#"{"kind": "3d", "g": "z1 +", "k": "0"}"#);
    let out = bin()
        .args(["eval", "--config", &cfg, "--point", "0,0.6,0,0.8"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{out:?}");
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("position"), "stderr should cite the byte offset: {err}");
}

#[test]
fn malformed_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, "cfg.json", r#"{"kind": "3d", "g": "1", "nope": 1}"#);
    let out = bin()
        .args(["eval", "--config", &cfg, "--point", "0,0.6,0,0.8"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{out:?}");
}

#[test]
fn grid_is_deterministic_and_has_contracted_header() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        &dir,
        "cfg.json",
        r#"{
            "kind": "3d", "g": "1 + 0.1*z1", "k": "0.05*z1*z2",
            "grid": {
                "x0": {"min": -0.5, "max": 0.5, "count": 3},
                "x1": {"min": -0.5, "max": 0.5, "count": 3},
                "x2": {"min": -0.5, "max": 0.5, "count": 3},
                "x3": {"min": 0.3, "max": 1.1, "count": 3}
            }
        }"#,
    );
    let out_a = dir.path().join("a.csv");
    let out_b = dir.path().join("b.csv");
    for out in [&out_a, &out_b] {
        let st = bin()
            .args(["grid", "--config", &cfg, "--out", out.to_str().unwrap()])
            .output()
            .unwrap();
        assert_eq!(st.status.code(), Some(0), "{st:?}");
    }
    let a = std::fs::read(&out_a).unwrap();
    let b = std::fs::read(&out_b).unwrap();
    assert_eq!(a, b, "grid CSV must be byte-identical across runs");
    let text = String::from_utf8(a).unwrap();
    assert!(
        text.starts_with("x0,x1,x2,x3,branch,z1,z2,s,u,v,res_uu,res_vv,res_uv,converged,iters"),
        "{}",
        text.lines().next().unwrap_or("")
    );
    // 3^4 data rows after the header
    assert_eq!(text.lines().count(), 1 + 81);
}

#[test]
fn audit_writes_json_report_and_exits_by_gate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, "cfg.json", CLOSED_FORM);
    let out_path = dir.path().join("audit.json");
    let st = bin()
        .args([
            "audit",
            "--config",
            &cfg,
            "--out",
            out_path.to_str().unwrap(),
            "--seed",
            "7",
            "--samples",
            "10",
        ])
        .output()
        .unwrap();
    // the closed-form family passes the gate
    assert_eq!(st.status.code(), Some(0), "{st:?}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    for key in ["family", "variants", "selected", "seed", "samples", "passed", "gate"] {
        assert!(report.get(key).is_some(), "missing key {key}");
    }
    assert_eq!(report["selected"]["constraint"], "paper_y_display");
    assert_eq!(report["passed"], true);
    assert_eq!(report["variants"].as_array().unwrap().len(), 16);
}

#[test]
fn audit_gate_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    // curved g with cross-term k: no closure variant has an integrable
    // r-gradient, so every combination misses the v-residual gate
    let cfg = write_config(
        &dir,
        "cfg.json",
        r#"{"kind": "3d", "g": "1 + 0.1*z1 - 0.15*z2^2", "k": "0.2*z1*z2", "samples": 8}"#,
    );
    let st = bin().args(["audit", "--config", &cfg]).output().unwrap();
    assert_eq!(st.status.code(), Some(3), "{st:?}");
}

#[test]
fn verify_prints_residuals_and_hodograph_checks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, "cfg.json", CLOSED_FORM);
    let out = bin()
        .args(["verify", "--config", &cfg, "--point", "0,0.6,0,0.8"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let text = stdout_of(&out);
    assert!(text.contains("res_uu"), "{text}");
    assert!(text.contains("eik4"), "{text}");
}

#[test]
fn family2d_worked_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, "cfg.json", r#"{"kind": "2d", "g": "z", "k": "0", "h": "0"}"#);
    let out = bin()
        .args(["family2d", "--config", &cfg, "--point", "2,0,-1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let text = stdout_of(&out);
    assert!(text.contains("8.6602540378443871e-1"), "{text}");
}

#[test]
fn selfcheck_passes_clean_and_fails_under_injected_fault() {
    let out = bin().arg("selfcheck").output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let text = stdout_of(&out);
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() >= 7, "{text}");

    let out = bin()
        .args(["selfcheck", "--inject-fault", "minkowski-sign"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4), "{out:?}");
    let text = stdout_of(&out);
    assert!(text.contains("FAIL"), "{text}");
}
