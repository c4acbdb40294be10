use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dec"))
        .args(args)
        .env_remove("DEC_SEED")
        .output()
        .expect("spawn dec")
}

fn ok(args: &[&str]) -> String {
    let out = dec(args);
    assert!(
        out.status.success(),
        "dec {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn fails(args: &[&str]) -> String {
    let out = dec(args);
    assert!(!out.status.success(), "dec {args:?} unexpectedly succeeded");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

fn workspace() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    ok(&["toygen", "--out", s(&root.join("src")), "--n", "6", "--seed", "1"]);
    ok(&["toygen", "--out", s(&root.join("tgt")), "--n", "6", "--seed", "2", "--domain", "target"]);
    let config = root.join("run.toml");
    std::fs::write(
        &config,
        "strategy = \"B+V+H+T\"\nsources = [\"src\"]\ntarget = \"tgt\"\noutput = \"out\"\nseed = 3\n\n\
         [ensemble]\nmasks = \"precompute\"\n",
    )
    .unwrap();
    Workspace {
        _dir: dir,
        root,
        config,
    }
}

#[test]
fn validate_reports_partition() {
    let out = ok(&["validate", "--strategy", "B+V+H+T"]);
    assert!(out.contains("4 categories"), "{out}");
    let err = fails(&["validate", "--strategy", "no-such-preset"]);
    assert!(err.contains("B+V+H+T"), "{err}");
}

#[test]
fn invalid_strategy_file_lists_violations() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(
        &path,
        "name = \"bad\"\n[[categories]]\nname = \"a\"\nmembers = [\"road\", \"road\"]\n",
    )
    .unwrap();
    let err = fails(&["validate", "--strategy", s(&path)]);
    assert!(err.contains("duplicate"), "{err}");
}

#[test]
fn full_pipeline_produces_labels_and_metrics() {
    let ws = workspace();
    let cfg = s(&ws.config);
    ok(&["validate", "--config", cfg]);

    let err = fails(&["train", "--config", cfg, "--stage", "category-sl", "--iterations", "2"]);
    assert!(err.contains("dec remap"), "{err}");

    ok(&["remap", "--config", cfg]);
    let label = ws.root.join("out/remap/source0/1-vehicle/labels");
    assert!(label.is_dir());
    let first: Vec<_> = std::fs::read_dir(&label).unwrap().map(|e| e.unwrap().path()).collect();
    let before = std::fs::read(&first[0]).unwrap();
    ok(&["remap", "--config", cfg, "--category", "1"]);
    assert_eq!(before, std::fs::read(&first[0]).unwrap());

    let err = fails(&["train", "--config", cfg, "--stage", "ensemble", "--iterations", "2"]);
    assert!(err.contains("category-sl"), "{err}");

    ok(&["train", "--config", cfg, "--stage", "category-sl", "--iterations", "2"]);
    ok(&["train", "--config", cfg, "--stage", "category-uda", "--iterations", "2"]);
    ok(&["train", "--config", cfg, "--stage", "ensemble", "--iterations", "2"]);
    for part in ["checkpoints/ensemble/manifest.json", "checkpoints/category-uda/3-traffic/weights.idx"] {
        assert!(ws.root.join("out").join(part).exists(), "{part}");
    }
    let manifest = std::fs::read_to_string(ws.root.join("out/manifests/train-ensemble.json")).unwrap();
    assert!(manifest.contains("\"seed\": 3"), "{manifest}");

    let pred = ws.root.join("pred");
    let tgt = ws.root.join("tgt");
    ok(&["infer", "--config", cfg, "--images", s(&tgt), "--out", s(&pred), "--color"]);
    assert_eq!(std::fs::read_dir(&pred).unwrap().filter(|e| e.as_ref().unwrap().path().is_file()).count(), 7);
    assert!(pred.join("color").is_dir());

    let report = ws.root.join("report");
    let out = ok(&["eval", "--pred", s(&pred), "--gt", s(&tgt), "--out", s(&report)]);
    assert!(out.contains("mIoU"), "{out}");
    for f in ["metrics.csv", "summary.csv", "iou.png"] {
        assert!(report.join(f).exists(), "{f}");
    }
    let metrics = std::fs::read_to_string(report.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("class,name,iou,defined"), "{metrics}");

    let overlay = ws.root.join("overlay");
    ok(&["infer", "--config", cfg, "--images", s(&tgt), "--out", s(&overlay), "--fuser", "overlay", "--models", "sl"]);
    assert!(overlay.join("run_manifest.json").exists());

    // remapped ground truth fused by overlay gives back the source labels
    let masks = ws.root.join("masks");
    for entry in std::fs::read_dir(ws.root.join("out/remap/source0")).unwrap() {
        let dir = entry.unwrap().path();
        let dest = masks.join(dir.file_name().unwrap());
        std::fs::create_dir_all(&dest).unwrap();
        for f in std::fs::read_dir(dir.join("labels")).unwrap() {
            let f = f.unwrap().path();
            std::fs::copy(&f, dest.join(f.file_name().unwrap())).unwrap();
        }
    }
    let fused = ws.root.join("fused");
    ok(&["infer", "--config", cfg, "--masks-from-dir", s(&masks), "--out", s(&fused), "--fuser", "overlay"]);
    for f in std::fs::read_dir(ws.root.join("src/labels")).unwrap() {
        let f = f.unwrap().path();
        assert_eq!(std::fs::read(&f).unwrap(), std::fs::read(fused.join(f.file_name().unwrap())).unwrap());
    }
    let report = ws.root.join("report-gt");
    let out = ok(&["eval", "--pred", s(&fused), "--gt", s(&ws.root.join("src")), "--out", s(&report)]);
    assert!(out.contains("mIoU 100.00"), "{out}");
}

#[test]
fn eval_lists_unmatched_files() {
    let ws = workspace();
    let pred = ws.root.join("pred");
    std::fs::create_dir_all(&pred).unwrap();
    let labels = ws.root.join("src/labels");
    let mut names: Vec<_> = std::fs::read_dir(&labels).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    std::fs::copy(&names[0], pred.join(names[0].file_name().unwrap())).unwrap();
    std::fs::copy(&names[0], pred.join("stray.png")).unwrap();
    let err = fails(&["eval", "--pred", s(&pred), "--gt", s(&ws.root.join("src")), "--out", s(&ws.root.join("r"))]);
    assert!(err.contains("stray"), "{err}");
}

#[test]
fn seed_env_overrides_config() {
    let ws = workspace();
    let out = Command::new(env!("CARGO_BIN_EXE_dec"))
        .args(["validate", "--config", s(&ws.config)])
        .env("DEC_SEED", "41")
        .output()
        .unwrap();
    assert!(out.status.success());
    let manifest = std::fs::read_to_string(ws.root.join("out/manifests/validate.json")).unwrap();
    assert!(manifest.contains("\"seed\": 41"), "{manifest}");
}

#[test]
fn bench_writes_csv_with_smaller_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["bench", "--height", "16", "--width", "16", "--reps", "3", "--batch", "1", "--out", s(dir.path())]);
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    let params = |model: &str| -> usize {
        let line = csv.lines().find(|l| l.starts_with(model)).unwrap();
        line.split(',').nth(1).unwrap().parse().unwrap()
    };
    assert!(params("ensemble") < params("category:background"));
    let err = fails(&["bench", "--height", "10", "--width", "16", "--reps", "3", "--out", s(dir.path())]);
    assert!(err.contains("multiples"), "{err}");
}

#[test]
fn unknown_stage_is_a_usage_error() {
    let out = dec(&["train", "--config", "x.toml", "--stage", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
}
