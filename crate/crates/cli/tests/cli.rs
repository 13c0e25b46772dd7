use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparsepose"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_exits_zero() {
    let o = run(&["--help"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("gradcheck"));
}

#[test]
fn unknown_flag_is_usage_error() {
    let o = run(&["train", "--bogus"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("error_code=1 kind=usage"));
}

#[test]
fn unknown_config_key_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["train", "--preset", "tiny", "--set", "no_such_key=1", "--out", p(dir.path())]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let o = run(&["train", "--preset", "nope", "--out", p(dir.path())]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn unreadable_config_file_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.cfg");
    let o = run(&["train", "--config", p(&missing), "--out", p(dir.path())]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("error_code=2 kind=data"));
}

#[test]
fn corrupt_checkpoint_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("bad.sppz");
    std::fs::write(&ckpt, b"SPPZ\x01garbage").unwrap();
    let o = run(&["eval", "--ckpt", p(&ckpt), "--out", p(dir.path())]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn gradcheck_passes() {
    let o = run(&["gradcheck", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}{}", String::from_utf8_lossy(&o.stdout), stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains(", 0 failed"));
}

#[test]
fn divergent_training_is_numeric_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = run(&[
        "train", "--preset", "tiny", "--set", "steps=50", "--set", "lr=1e30", "--set", "clip_norm=1e30", "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("error_code=3 kind=numeric"));
}

#[test]
fn gen_train_eval_infer_plot_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = run(&["gen-data", "--preset", "tiny", "--out", p(&data), "--scenes", "3", "--views", "3", "--seed", "4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let scene0 = data.join("scene_0000");
    assert!(scene0.join("poses.csv").is_file());

    let run_dir = dir.path().join("run");
    let o = run(&["train", "--preset", "tiny", "--set", "steps=20", "--set", "eval_every=10", "--out", p(&run_dir)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ckpt = run_dir.join("checkpoint.sppz");
    let metrics = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("step,loss,rot_loss,trans_loss,lr,eval_rot_acc15,eval_trans_acc20\n"));
    assert_eq!(metrics.lines().count(), 21);

    // Resuming to a larger budget appends the missing rows only.
    let o = run(&["train", "--resume", p(&ckpt), "--set", "steps=25", "--out", p(&run_dir)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let metrics = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 26);

    let eval_dir = dir.path().join("eval");
    let o = run(&["eval", "--ckpt", p(&ckpt), "--data", p(&data), "--plots", "2", "--out", p(&eval_dir)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = std::fs::read_to_string(eval_dir.join("metrics.csv")).unwrap();
    assert!(rows.starts_with("scene_id,C,cam_idx,rot_err_deg,trans_err_norm\n"));
    // Three scenes, two non-reference cameras each.
    assert_eq!(rows.lines().count(), 1 + 3 * 2);
    assert!(eval_dir.join("summary.csv").is_file());
    assert!(eval_dir.join("plots/scene_0001.svg").is_file());

    let intr = dir.path().join("intrinsics.csv");
    let poses = std::fs::read_to_string(scene0.join("poses.csv")).unwrap();
    let mut text = String::from("frame_id,fx,fy,cx,cy\n");
    let images = dir.path().join("images");
    std::fs::create_dir(&images).unwrap();
    for entry in std::fs::read_dir(&scene0).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "ppm") {
            std::fs::copy(&path, images.join(path.file_name().unwrap())).unwrap();
        }
    }
    let header: Vec<&str> = poses.lines().next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    for line in poses.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        text += &format!("{},{},{},{},{}\n", f[col("frame_id")], f[col("fx")], f[col("fy")], f[col("cx")], f[col("cy")]);
    }
    std::fs::write(&intr, text).unwrap();
    let pred = dir.path().join("pred.csv");
    let o = run(&["infer", "--ckpt", p(&ckpt), "--images", p(&images), "--intrinsics", p(&intr), "--out", p(&pred)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&pred).unwrap().lines().count(), 4);

    let svg = dir.path().join("cams.svg");
    let o = run(&["plot", "--pred", p(&pred), "--gt", p(&scene0.join("poses.csv")), "--out", p(&svg)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(std::fs::read_to_string(&svg).unwrap().contains("<svg"));
    assert!(dir.path().join("cams.csv").is_file());
}

#[test]
fn eval_rejects_checkpoint_with_config() {
    let o = run(&["eval", "--ckpt", "x.sppz", "--preset", "tiny"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn ablate_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ablation.csv");
    let o = run(&[
        "ablate",
        "--preset",
        "tiny",
        "--set",
        "steps=4",
        "--set",
        "train_scenes=4",
        "--set",
        "eval_scenes_per_count=2",
        "--variants",
        "init-only,lstm-steps-1",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    // base, init-only, lstm-steps-1 for view counts 3 and 4.
    assert_eq!(text.lines().count(), 1 + 3 * 2);
    let o = run(&["ablate", "--preset", "tiny", "--variants", "nope", "--out", p(&out)]);
    assert_eq!(code(&o), 1);
}
