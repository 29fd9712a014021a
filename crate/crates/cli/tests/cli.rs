use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn handocc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_handocc")).current_dir(dir).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let o = handocc(dir, args);
    assert_eq!(code(&o), 0, "{args:?}\nstdout: {}\nstderr: {}", stdout(&o), stderr(&o));
    o
}

fn read_json(p: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn write_json(p: impl AsRef<Path>, v: &Value) {
    std::fs::write(p, serde_json::to_string(v).unwrap()).unwrap();
}

fn tmp() -> (TempDir, PathBuf) {
    let t = TempDir::new().unwrap();
    let p = t.path().to_path_buf();
    (t, p)
}

/// One FK skeleton written to `skel.json`.
fn skeleton_file(d: &Path) -> PathBuf {
    ok(d, &["sample-poses", "--n", "1", "--skeletons", "--out", "skels.json"]);
    let v = read_json(d.join("skels.json"));
    write_json(d.join("skel.json"), &v[0]);
    d.join("skel.json")
}

#[test]
fn fit_recovers_fk_skeleton() {
    let (_t, d) = tmp();
    skeleton_file(&d);
    let o = ok(&d, &["fit", "--input", "skel.json", "--out", "pose.json"]);
    let r: f64 = stdout(&o).trim().strip_prefix("residual_mm=").unwrap().parse().unwrap();
    assert!(r < 0.5, "{r}");
    let pose = read_json(d.join("pose.json"));
    assert_eq!(pose["joint_angles"].as_array().unwrap().len(), 20);
    let m = read_json(d.join("pose.json.manifest.json"));
    assert_eq!(m["command"], "fit");
    assert_eq!(m["seed"], 42);
    assert_eq!(m["exit_code"], 0);
    assert!((m["results"]["residual_mm"].as_f64().unwrap() - r).abs() < 1e-6);
}

#[test]
fn fit_rejects_malformed_json_with_position() {
    let (_t, d) = tmp();
    std::fs::write(d.join("bad.json"), "{\"side\": \"right\",\n \"joints\": [[0, 0, 0],\n").unwrap();
    let o = handocc(&d, &["fit", "--input", "bad.json", "--out", "pose.json"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 3 column"), "{}", stderr(&o));
    assert!(!d.join("pose.json").exists());
}

#[test]
fn fit_rejects_twenty_joints() {
    let (_t, d) = tmp();
    let s = skeleton_file(&d);
    let mut v = read_json(&s);
    v["joints"].as_array_mut().unwrap().pop();
    write_json(d.join("s20.json"), &v);
    let o = handocc(&d, &["fit", "--input", "s20.json", "--out", "pose.json"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("expected 21 joints"), "{}", stderr(&o));
}

#[test]
fn fit_residual_over_limit_exits_3() {
    let (_t, d) = tmp();
    let s = skeleton_file(&d);
    let mut v = read_json(&s);
    // Bend the index tip off its chain plane so no pose reproduces it.
    let tip = &mut v["joints"][8];
    tip[0] = (tip[0].as_f64().unwrap() + 15.0).into();
    tip[2] = (tip[2].as_f64().unwrap() - 15.0).into();
    write_json(d.join("bent.json"), &v);
    let o = handocc(&d, &["fit", "--input", "bent.json", "--out", "pose.json"]);
    assert_eq!(code(&o), 3, "{}", stdout(&o));
    assert!(d.join("pose.json").exists());
    assert_eq!(read_json(d.join("pose.json.manifest.json"))["exit_code"], 3);
}

#[test]
fn mesh_reports_counts_and_watertightness() {
    let (_t, d) = tmp();
    skeleton_file(&d);
    ok(&d, &["fit", "--input", "skel.json", "--out", "pose.json"]);
    for (variant, v) in [("plain", 307), ("refined", 699)] {
        let out = format!("{variant}.obj");
        let o = ok(&d, &["mesh", "--pose", "pose.json", "--variant", variant, "--out", &out]);
        let s = stdout(&o);
        assert!(s.contains(&format!("V={v} ")), "{s}");
        assert!(s.contains("watertight: true"), "{s}");
        let obj = std::fs::read_to_string(d.join(&out)).unwrap();
        assert_eq!(obj.lines().filter(|l| l.starts_with("v ")).count(), v);
        assert!(d.join(format!("{out}.manifest.json")).exists());
    }
}

/// Six intersecting pairs as a list, and the first one alone.
fn pair_files(d: &Path) {
    ok(d, &["--seed", "7", "sample-pairs", "--n", "6", "--out", "pairs.json"]);
    let v = read_json(d.join("pairs.json"));
    write_json(d.join("pair.json"), &v[0]);
}

#[test]
fn refine_zero_weight_returns_input() {
    let (_t, d) = tmp();
    pair_files(&d);
    let before = std::fs::read(d.join("pair.json")).unwrap();
    ok(&d, &["refine", "--pair", "pair.json", "--weight", "0", "--out", "out.json", "--report", "r.csv"]);
    assert_eq!(read_json(d.join("out.json")), read_json(d.join("pair.json")));
    assert_eq!(std::fs::read(d.join("pair.json")).unwrap(), before);
    let csv = std::fs::read_to_string(d.join("r.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().contains(",zero_weight,"), "{csv}");
}

#[test]
fn refine_reduces_intersections_and_reports_points() {
    let (_t, d) = tmp();
    pair_files(&d);
    let o = ok(&d, &["refine", "--pair", "pairs.json", "--points", "dense", "--out", "out.json", "--report", "r.csv"]);
    assert!(stdout(&o).contains("tested_points_per_hand=121"));
    let csv = std::fs::read_to_string(d.join("r.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let (mut before, mut after) = (0usize, 0usize);
    let mut n = 0;
    for l in lines {
        let f: Vec<&str> = l.split(',').collect();
        before += f[col("raycast_before")].parse::<usize>().unwrap();
        after += f[col("raycast_after")].parse::<usize>().unwrap();
        assert_eq!(f[col("points_per_hand")], "121");
        n += 1;
    }
    assert_eq!(n, 6);
    assert!(before > 0 && after < before, "{before} -> {after}");
    assert_eq!(read_json(d.join("out.json")).as_array().unwrap().len(), 6);
}

#[test]
fn refine_bad_flags_exit_2() {
    let (_t, d) = tmp();
    pair_files(&d);
    let base = ["refine", "--pair", "pair.json", "--out", "out.json"];
    for extra in [&["--points", "voxels"][..], &["--field", "splines"], &["--weight", "-1"], &["--field", "occnet:nope.bin"]] {
        let args: Vec<&str> = base.iter().copied().chain(extra.iter().copied()).collect();
        assert_eq!(code(&handocc(&d, &args)), 2, "{extra:?}");
    }
    assert!(!d.join("out.json").exists());
}

#[test]
fn refine_divergence_exits_4() {
    let (_t, d) = tmp();
    pair_files(&d);
    std::fs::write(d.join("cfg.json"), r#"{"fixed_iters": true, "step": 1e300, "max_iters": 3}"#).unwrap();
    let o = handocc(&d, &["refine", "--pair", "pair.json", "--config", "cfg.json", "--out", "out.json"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn metrics_counts_and_determinism() {
    let (_t, d) = tmp();
    pair_files(&d);
    ok(&d, &["metrics", "--pair", "pair.json", "--grid", "50", "--out", "m1.json"]);
    ok(&d, &["metrics", "--pair", "pair.json", "--grid", "50", "--out", "m2.json"]);
    let m = read_json(d.join("m1.json"));
    assert_eq!(m["samples"], 125000);
    assert!(m["raycast_count"].as_u64().unwrap() > 0);
    assert!(m["iou_per_hand"]["right"].as_f64().unwrap() > 0.5);
    assert!(m.get("mpjpe").is_none());
    assert_eq!(std::fs::read(d.join("m1.json")).unwrap(), std::fs::read(d.join("m2.json")).unwrap());

    // Push the left hand far away.
    let mut p = read_json(d.join("pair.json"));
    for j in p["left"]["joints"].as_array_mut().unwrap() {
        j[0] = (j[0].as_f64().unwrap() + 500.0).into();
    }
    write_json(d.join("far.json"), &p);
    ok(&d, &["metrics", "--pair", "far.json", "--reference", "pair.json", "--out", "m3.json"]);
    let m = read_json(d.join("m3.json"));
    assert_eq!(m["raycast_count"], 0);
    assert!((m["mpjpe"]["left"].as_f64().unwrap() - 500.0).abs() < 1e-9);
    assert_eq!(m["mpjpe"]["right"], 0.0);
}

#[test]
fn study_noise_rows_and_rerun() {
    let (_t, d) = tmp();
    ok(&d, &["--seed", "3", "sample-pairs", "--n", "3", "--out", "pairs.json"]);
    let probs = "0,0.2,0.4,0.6,0.8,1.0";
    ok(&d, &["study-noise", "--pairs", "pairs.json", "--probs", probs, "--out", "a.csv"]);
    ok(&d, &["study-noise", "--pairs", "pairs.json", "--probs", probs, "--out", "b.csv"]);
    let a = std::fs::read_to_string(d.join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read_to_string(d.join("b.csv")).unwrap());
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines.len(), 7);
    assert_eq!(lines[0], "noise_prob,mpjpe_with,mpjpe_without,isect_with,isect_without");
    let row0: Vec<&str> = lines[1].split(',').collect();
    assert!(row0[3].parse::<usize>().unwrap() <= row0[4].parse::<usize>().unwrap());
    for bad in ["0,1.5", "0,,1", "a"] {
        assert_eq!(code(&handocc(&d, &["study-noise", "--pairs", "pairs.json", "--probs", bad, "--out", "c.csv"])), 2);
    }
}

const TINY_TRAIN: &str = r#"{"epochs": 2, "samples_per_hand": 512, "batch_points": 128, "val_grid_n": 8,
    "dims": {"enc_hidden": 16, "feature": 8, "hidden": 16, "blocks": 1}}"#;

#[test]
fn train_occ_is_seeded_and_checks_pose_count() {
    let (_t, d) = tmp();
    ok(&d, &["sample-poses", "--n", "5", "--side", "alternate", "--out", "poses.json"]);
    std::fs::write(d.join("cfg.json"), TINY_TRAIN).unwrap();
    let args = |out: &'static str, hist: &'static str| {
        ["train-occ", "--poses", "poses.json", "--config", "cfg.json", "--out", out, "--history", hist, "--final-grid", "8"]
    };
    ok(&d, &args("a.bin", "a.csv"));
    ok(&d, &args("b.bin", "b.csv"));
    assert_eq!(std::fs::read(d.join("a.bin")).unwrap(), std::fs::read(d.join("b.bin")).unwrap());
    let h = std::fs::read_to_string(d.join("a.csv")).unwrap();
    assert!(h.starts_with("epoch,train_loss,val_iou,seconds\n"));
    assert_eq!(h.lines().count(), 4);
    let m = read_json(d.join("a.bin.manifest.json"));
    assert_eq!(m["results"]["val_poses"], 1);
    assert!(m["results"]["final_val_iou"].is_number());

    ok(&d, &["--seed", "9", "train-occ", "--poses", "poses.json", "--config", "cfg.json", "--out", "c.bin"]);
    assert_ne!(std::fs::read(d.join("a.bin")).unwrap(), std::fs::read(d.join("c.bin")).unwrap());

    // The trained file loads as a field.
    ok(&d, &["--seed", "1", "sample-pairs", "--n", "1", "--out", "pairs.json"]);
    ok(&d, &["metrics", "--pair", "pairs.json", "--field", "occnet:a.bin", "--grid", "10", "--out", "m.json"]);

    ok(&d, &["sample-poses", "--n", "1", "--out", "one.json"]);
    let o = handocc(&d, &["train-occ", "--poses", "one.json", "--out", "x.bin"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("need >= 2 poses for validation split"), "{}", stderr(&o));
}

#[test]
fn train_occ_nan_exits_4() {
    let (_t, d) = tmp();
    ok(&d, &["sample-poses", "--n", "5", "--out", "poses.json"]);
    let cfg = r#"{"epochs": 6, "samples_per_hand": 256, "batch_points": 64, "val_grid_n": 8, "lr": 1e30}"#;
    std::fs::write(d.join("cfg.json"), cfg).unwrap();
    let o = handocc(&d, &["train-occ", "--poses", "poses.json", "--config", "cfg.json", "--out", "x.bin", "--final-grid", "0"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("NaN"));
}

#[test]
fn replay_reproduces_outputs() {
    let (_t, d) = tmp();
    pair_files(&d);
    ok(&d, &["--seed", "5", "refine", "--pair", "pairs.json", "--out", "out.json", "--report", "r.csv"]);
    let (out, rep) = (std::fs::read(d.join("out.json")).unwrap(), std::fs::read(d.join("r.csv")).unwrap());
    let m = read_json(d.join("out.json.manifest.json"));
    assert_eq!(m["seed"], 5);
    assert_eq!(m["config"]["refine"]["seed"], 5);
    std::fs::remove_file(d.join("out.json")).unwrap();
    std::fs::remove_file(d.join("r.csv")).unwrap();
    // Replay from elsewhere: the manifest records the working directory.
    let elsewhere = TempDir::new().unwrap();
    ok(elsewhere.path(), &["replay", "--manifest", d.join("out.json.manifest.json").to_str().unwrap()]);
    assert_eq!(std::fs::read(d.join("out.json")).unwrap(), out);
    assert_eq!(std::fs::read(d.join("r.csv")).unwrap(), rep);
}

#[test]
fn sampling_is_seeded() {
    let (_t, d) = tmp();
    ok(&d, &["sample-poses", "--n", "4", "--out", "a.json"]);
    ok(&d, &["sample-poses", "--n", "4", "--out", "b.json"]);
    ok(&d, &["--seed", "43", "sample-poses", "--n", "4", "--out", "c.json"]);
    assert_eq!(read_json(d.join("a.json")), read_json(d.join("b.json")));
    assert_ne!(read_json(d.join("a.json")), read_json(d.join("c.json")));
}

#[test]
fn outputs_never_overwrite_inputs() {
    let (_t, d) = tmp();
    pair_files(&d);
    let before = std::fs::read(d.join("pair.json")).unwrap();
    let o = handocc(&d, &["refine", "--pair", "pair.json", "--out", "pair.json"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("would overwrite"));
    assert_eq!(std::fs::read(d.join("pair.json")).unwrap(), before);
}

#[test]
fn usage_errors_exit_2_and_help_lists_flags() {
    let (_t, d) = tmp();
    assert_eq!(code(&handocc(&d, &["fit"])), 2);
    assert_eq!(code(&handocc(&d, &["frobnicate"])), 2);
    let h = stdout(&ok(&d, &["refine", "--help"]));
    for flag in ["--pair", "--field", "--weight", "--points", "--both-hands", "--truncated", "--out", "--report", "--seed"] {
        assert!(h.contains(flag), "{flag} missing from help");
    }
}
