use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tink_core::hand::HandParams;
use tink_core::io::write_obj;
use tink_core::mesh::icosphere;
use tink_core::{Point, Vec3};

fn tink(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tink"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("tink runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// Two spheres and an open hand with its palm just above the first one.
fn sphere_scene(dir: &Path) {
    write_obj(&icosphere(Point::origin(), 0.05, 3), dir.join("small.obj")).unwrap();
    write_obj(&icosphere(Point::origin(), 0.06, 3), dir.join("large.obj")).unwrap();
    let params = HandParams {
        wrist: Vec3::new(-0.0025, -0.05, 0.07),
        ..HandParams::default()
    };
    fs::write(dir.join("hand.json"), serde_json::to_string(&params).unwrap()).unwrap();
}

#[test]
fn path_writes_numbered_landmarks() {
    let dir = tempfile::tempdir().unwrap();
    sphere_scene(dir.path());
    let out = tink(&["path", "small.obj", "large.obj", "--n-itpl", "3", "--out", "lm"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("lm/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["n_itpl"], 3);
    let files = manifest["files"].as_array().unwrap();
    assert_eq!(files.len(), 3);
    for f in files {
        assert!(dir.path().join("lm").join(f.as_str().unwrap()).exists());
    }
    let t: Vec<f64> = manifest["t_values"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(t.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn contact_then_refine() {
    let dir = tempfile::tempdir().unwrap();
    sphere_scene(dir.path());
    let out = tink(
        &["contact", "small.obj", "hand.json", "--target", "large.obj", "--out", "c"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["contacts.json", "contacts.ply", "target_contacts.json", "target_contacts.ply"] {
        assert!(dir.path().join("c").join(f).exists(), "{f}");
    }

    let manifest = serde_json::json!({
        "source_params": "hand.json",
        "source_mesh": "small.obj",
        "target_mesh": "large.obj",
        "contacts": "c/target_contacts.json",
        "config": {"refine": {"adam": {"iterations": 50}}},
    });
    fs::write(dir.path().join("refine.json"), manifest.to_string()).unwrap();
    let out = tink(&["refine", "refine.json", "--out", "r"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let trace = fs::read_to_string(dir.path().join("r/trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,E_consis,E_anat,E_intp,total"));
    assert!(trace.lines().count() > 1);
    assert!(dir.path().join("r/final_params.json").exists());
    assert!(dir.path().join("r/hand_mesh.obj").exists());
}

#[test]
fn audit_reports_failures_as_partial() {
    let dir = tempfile::tempdir().unwrap();
    sphere_scene(dir.path());
    let manifest = serde_json::json!([
        {"id": "touching", "object": "small.obj", "hand_params": "hand.json"},
        {"id": "missing", "object": "nowhere.obj", "hand_params": "hand.json"},
    ]);
    fs::write(dir.path().join("grasps.json"), manifest.to_string()).unwrap();
    let out = tink(&["audit", "grasps.json", "--out", "a"], dir.path());
    assert_eq!(code(&out), 2);
    let csv = fs::read_to_string(dir.path().join("a/audit.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("mean,"));
    assert!(rows[2].starts_with("touching,"));
    assert!(fs::read_to_string(dir.path().join("a/audit_errors.csv")).unwrap().contains("missing"));
}

#[test]
fn batch_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let out = tink(&["fixtures", "--count", "3", "--out", "fx", "--seed", "3"], root);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    // One unreadable target among three jobs.
    fs::write(root.join("fx/pair_001_target.obj"), "v 0 0 0\nf 1 2 3\n").unwrap();
    let out = tink(&["batch", "fx/manifest.json", "--out", "run", "--jobs", "2"], root);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(root.join("run/summary.csv")).unwrap();
    let status: Vec<&str> = summary.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(status, ["ok", "error", "ok"]);
    for job in ["pair_000", "pair_002"] {
        let d = root.join("run").join(job);
        for f in ["inputs.json", "landmarks/manifest.json", "contacts.json", "refine/final_params.json", "metrics.csv"] {
            assert!(d.join(f).exists(), "{job}/{f}");
        }
    }

    fs::write(root.join("empty.json"), "[]").unwrap();
    let out = tink(&["batch", "empty.json", "--out", "none"], root);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read_to_string(root.join("none/summary.csv")).unwrap().lines().count(), 1);

    let out = tink(&["batch", "absent.json", "--out", "none"], root);
    assert_eq!(code(&out), 1);
}

#[test]
fn bad_config_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    sphere_scene(dir.path());
    fs::write(dir.path().join("bad.toml"), "[path]\nn_itpl = 0\n").unwrap();
    let out = tink(
        &["path", "small.obj", "large.obj", "--config", "bad.toml", "--out", "lm"],
        dir.path(),
    );
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = tink(&["path", "small.obj", "large.obj", "--jobs", "0"], dir.path());
    assert_eq!(code(&out), 1);
}
