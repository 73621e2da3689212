use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn salinst(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_salinst"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for e in std::fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        if e.file_type().unwrap().is_dir() {
            copy_dir(&e.path(), &to.join(e.file_name()));
        } else {
            std::fs::copy(e.path(), to.join(e.file_name())).unwrap();
        }
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&salinst(&[])), 1);
    assert_eq!(code(&salinst(&["bogus"])), 1);
    assert_eq!(code(&salinst(&["train", "--task", "edges", "--data", "x", "--out", "y"])), 1);
    assert_eq!(code(&salinst(&["--help"])), 0);
    let o = salinst(&["infer-saliency", "--model", "m.json", "--out", "o"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn missing_checkpoint_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("a.png");
    std::fs::write(&img, b"not a png").unwrap();
    let o = salinst(&["infer-saliency", "--model", p(&dir.path().join("none.json")), "--input", p(&img), "--out", p(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("none.json"), "{}", stderr(&o));
}

#[test]
fn metric_selfcheck_passes_and_names_a_corrupted_fixture() {
    let o = salinst(&["selfcheck", "--only", "metrics"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.lines().all(|l| !l.starts_with("FAIL")), "{out}");

    let dir = tempfile::tempdir().unwrap();
    copy_dir(&fixtures(), dir.path());
    let golden = dir.path().join("metrics/golden.json");
    let text = std::fs::read_to_string(&golden).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["dataset_max_f"] = serde_json::json!(0.123);
    std::fs::write(&golden, v.to_string()).unwrap();
    let o = salinst(&["selfcheck", "--only", "metrics", "--fixtures", p(dir.path())]);
    assert_eq!(code(&o), 3);
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.lines().any(|l| l.starts_with("FAIL metrics.")), "{out}");
    assert!(stderr(&o).contains("metrics."), "{}", stderr(&o));
}

#[test]
fn gen_synthetic_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = salinst(&["--seed", "4", "gen-synthetic", "--out", p(d.path()), "--train", "3", "--val", "3", "--test", "3", "--size", "32"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let manifest = std::fs::read_to_string(a.path().join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 9);
    for name in ["train_0000.png", "val_0002_ins.png", "test_0001_con.png", "manifest.jsonl"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

/// Trains tiny region and contour models, then runs every model-driven
/// command on the resulting checkpoints.
#[test]
fn train_infer_segment_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    let o = salinst(&["gen-synthetic", "--out", p(&data), "--train", "3", "--val", "2", "--test", "2", "--size", "32"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest = data.join("manifest.jsonl");
    let cfg = d.join("train.json");
    std::fs::write(&cfg, r#"{"preset":"toy","minibatch":2,"accumulate_iters":2,"total_iters":4,"validate_every":2,"train_resolution":16}"#).unwrap();

    let region = d.join("region");
    let o = salinst(&["--seed", "1", "--config", p(&cfg), "train", "--task", "region", "--data", p(&manifest), "--out", p(&region)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let log = std::fs::read_to_string(region.join("log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("iter,train_loss,val_loss"));
    assert_eq!(log.lines().count(), 6);
    for f in ["config.json", "best.json", "best.bin", "iter_000000.json", "iter_000004.bin"] {
        assert!(region.join(f).exists(), "{f}");
    }

    let o = salinst(&["--config", p(&cfg), "train", "--task", "region", "--init", p(&region.join("best.json")), "--data", p(&manifest), "--out", p(&d.join("x"))]);
    assert_eq!(code(&o), 1);

    let contour = d.join("contour");
    let o = salinst(&[
        "--config", p(&cfg), "train", "--task", "contour", "--init", p(&region.join("best.json")),
        "--data", p(&manifest), "--out", p(&contour),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (rm, cm) = (region.join("best.json"), contour.join("best.json"));

    let o = salinst(&["infer-contour", "--model", p(&rm), "--data", p(&manifest), "--out", p(&d.join("m"))]);
    assert_eq!(code(&o), 1, "wrong task must be refused");

    let maps = d.join("maps");
    let o = salinst(&["infer-saliency", "--model", p(&rm), "--data", p(&manifest), "--out", p(&maps)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let written = std::fs::read_dir(&maps).unwrap().count();
    assert_eq!(written, 2 * 7);
    for s in ["fused", "scale1", "scale2", "scale3", "weight1", "weight2", "weight3"] {
        assert!(maps.join(format!("test_0000_{s}.png")).exists(), "{s}");
    }

    let props = d.join("props");
    let o = salinst(&["propose", "--contour", p(&cm), "--data", p(&manifest), "--out", p(&props)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let pool = std::fs::read_to_string(props.join("test_0001_proposals.jsonl")).unwrap();
    assert!(pool.lines().count() >= 1);

    let seg = |out: &Path| {
        let o = salinst(&["--threads", "1", "segment-instances", "--region", p(&rm), "--contour", p(&cm), "--data", p(&manifest), "--out", p(out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    };
    let (s1, s2) = (d.join("seg1"), d.join("seg2"));
    seg(&s1);
    seg(&s2);
    for f in ["test_0000_labels.png", "test_0000_vis.png", "test_0000_instances.jsonl", "test_0001_summary.json"] {
        assert_eq!(std::fs::read(s1.join(f)).unwrap(), std::fs::read(s2.join(f)).unwrap(), "{f}");
    }

    let ev = d.join("eval");
    let o = salinst(&["evaluate", "--data", p(&manifest), "--region", p(&rm), "--contour", p(&cm), "--out", p(&ev)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ev.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["images"], 2);
    assert!(report["saliency"]["max_f"].is_number());
    assert!(report["contour"]["ods"].is_number());
    assert_eq!(report["map_r"].as_array().unwrap().len(), 2);
    let csv = std::fs::read_to_string(ev.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("metric,value\nmax_f,"));
    assert!(csv.contains("map_r@0.5,"));
    assert_eq!(std::fs::read_to_string(ev.join("saliency_pr.csv")).unwrap().lines().count(), 257);
    assert!(ev.join("contour_pr.csv").exists());

    let o = salinst(&["evaluate", "--data", p(&manifest), "--out", p(&ev)]);
    assert_eq!(code(&o), 1);
}
