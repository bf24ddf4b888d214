use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fixbi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fixbi"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str =
    "epochs = 3\nwarmup_epochs = 1\nbaseline_epochs = 2\nlr = 0.05\ndataset.per_class = 20\nbatch_size = 8\nseed = 5\n";

#[test]
fn gen_writes_source_and_target() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("blobs.csv");
    let o = fixbi(&[
        "gen",
        "blobs",
        "--seed",
        "3",
        "--out",
        s(&out),
        "--per-class",
        "10",
        "--classes",
        "4",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let src = fs::read_to_string(&out).unwrap();
    let tgt = fs::read_to_string(dir.path().join("blobs-target.csv")).unwrap();
    assert!(src.starts_with("# classes=4 dim=2"));
    assert_eq!(src.lines().count(), 41);
    assert_eq!(tgt.lines().count(), 41);

    let again = dir.path().join("again.csv");
    fixbi(&[
        "gen",
        "blobs",
        "--seed",
        "3",
        "--out",
        s(&again),
        "--per-class",
        "10",
        "--classes",
        "4",
    ]);
    assert_eq!(fs::read_to_string(&again).unwrap(), src);

    let moons = dir.path().join("moons.csv");
    let t = dir.path().join("moons-t.csv");
    let o = fixbi(&[
        "gen",
        "moons",
        "--out",
        s(&moons),
        "--target-out",
        s(&t),
        "--rotation",
        "30",
    ]);
    assert!(o.status.success());
    assert!(fs::read_to_string(&t).unwrap().starts_with("# classes=2 dim=2"));
}

#[test]
fn run_then_eval_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.conf");
    fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("out");
    let o = fixbi(&["run", s(&cfg), s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((0.0..=1.0).contains(&summary["target_acc"].as_f64().unwrap()));

    let data = dir.path().join("eval.csv");
    fixbi(&["gen", "blobs", "--seed", "5", "--out", s(&data), "--per-class", "20"]);
    let target = dir.path().join("eval-target.csv");
    let o = fixbi(&["eval", s(&out.join("sdm.ckpt")), s(&target)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.starts_with("accuracy "));
    assert_eq!(text.lines().filter(|l| l.starts_with("class ")).count(), 3);

    let o = fixbi(&[
        "eval",
        s(&out.join("sdm.ckpt")),
        s(&target),
        "--with",
        s(&out.join("tdm.ckpt")),
    ]);
    assert!(o.status.success());
}

#[test]
fn bad_config_fails_with_field_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    fs::write(&cfg, "lambda_sd = 0.6\nlambda_td = 0.6\n").unwrap();
    let o = fixbi(&["run", s(&cfg), s(&dir.path().join("out"))]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("lambda"));
}

#[test]
fn seeds_flag_fans_out() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.conf");
    fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("multi");
    let o = fixbi(&["run", s(&cfg), s(&out), "--seeds", "1..2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for seed in 1..=2 {
        assert!(out.join(format!("seed-{seed}")).join("summary.json").is_file());
    }
}

#[test]
fn eval_rejects_unlabeled_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.conf");
    fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("out");
    assert!(fixbi(&["run", s(&cfg), s(&out)]).status.success());
    let data = dir.path().join("u.csv");
    fs::write(&data, "# classes=3 dim=2\n0.1,0.2,-1\n0.3,0.4,-1\n").unwrap();
    let o = fixbi(&["eval", s(&out.join("sdm.ckpt")), s(&data)]);
    assert!(!o.status.success());
}
