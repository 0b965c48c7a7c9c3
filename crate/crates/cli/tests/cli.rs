use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use kcl_core::io::{write_emb, write_labels};
use kcl_core::FeatureMatrix;
use serde_json::Value;

fn kcl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kcl"))
        .args(args)
        .env_remove("KCL_LOG")
        .output()
        .expect("spawn kcl")
}

fn json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "--out", p(dir)];
    args.extend_from_slice(extra);
    json(&kcl(&args));
}

#[test]
fn run_contract() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, &["--classes", "4", "--dim", "8", "--samples-per-class", "10"]);
    let report_path = d.join("r.json");
    let out = kcl(&[
        "run",
        "--mode",
        "zero-shot",
        "--features",
        p(&d.join("test.emb")),
        "--weights",
        p(&d.join("weights.emb")),
        "--k",
        "1",
        "--steps",
        "4",
        "--out",
        p(&report_path),
    ]);
    let r = json(&out);
    assert_eq!(r["predictions"].as_array().unwrap().len(), 40);
    assert!(r.get("accuracy").is_none());
    let steps = r["per_step"].as_array().unwrap();
    assert!(!steps.is_empty() && steps.len() <= 4);
    for key in ["step", "picked_count", "completion_size", "lambda", "mu"] {
        assert!(steps[0].get(key).is_some(), "{key}");
    }
    assert!(r["converged_at"].as_u64().unwrap() <= 4);
    assert!(r["wall_time"].as_f64().unwrap() >= 0.0);
    let saved: Value = serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(saved, r);

    // eval on the saved report agrees with run --labels
    let labels = d.join("test.lbl");
    let with_acc = json(&kcl(&[
        "run",
        "--features",
        p(&d.join("test.emb")),
        "--weights",
        p(&d.join("weights.emb")),
        "--labels",
        p(&labels),
        "--steps",
        "4",
    ]));
    let ev = json(&kcl(&["eval", "--report", p(&report_path), "--labels", p(&labels)]));
    assert_eq!(ev["accuracy"], with_acc["accuracy"]);
    assert_eq!(ev["total"], 40);
}

#[test]
fn few_shot_with_search_and_csv_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, &["--classes", "3", "--dim", "4", "--samples-per-class", "5", "--val-per-class", "2"]);
    assert!(d.join("val.emb").exists() && d.join("val.lbl").exists());

    // the same weights as unnormalized CSV, which needs --normalize
    let w = kcl_core::io::read_emb(d.join("weights.emb"), false).unwrap();
    let csv: String = w
        .iter_rows()
        .map(|r| r.iter().map(|x| format!("{}", x * 3.0)).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    fs::write(d.join("w.csv"), csv).unwrap();

    let base = |weights: &str, extra: &[&str]| {
        let mut args = vec![
            "run",
            "--mode",
            "few-shot",
            "--features",
            "test.emb",
            "--weights",
            weights,
            "--cache-features",
            "cache.emb",
            "--cache-labels",
            "cache.lbl",
            "--val-features",
            "val.emb",
            "--val-labels",
            "val.lbl",
            "--labels",
            "test.lbl",
            "--search",
            "--threads",
            "2",
        ];
        args.extend_from_slice(extra);
        Command::new(env!("CARGO_BIN_EXE_kcl")).current_dir(d).args(&args).output().unwrap()
    };
    assert_eq!(base("w.csv", &[]).status.code(), Some(1));
    let a = json(&base("w.csv", &["--normalize"]));
    let b = json(&base("weights.emb", &[]));
    assert_eq!(a["predictions"], b["predictions"]);
    assert!(a["accuracy"].as_f64().unwrap() > 0.5);
}

#[test]
fn synth_is_deterministic_with_five_files() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let r = json(&kcl(&["synth", "--classes", "10", "--dim", "32", "--seed", "7", "--out", p(dir)]));
        assert_eq!(r["files"].as_array().unwrap().len(), 5);
    }
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names, ["cache.emb", "cache.lbl", "test.emb", "test.lbl", "weights.emb"]);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
}

// Long-tailed test classes: the small classes run out of their own samples,
// so a class-side-only rule starts absorbing other classes' samples.
#[test]
fn ablate_mutual_beats_image_to_class_on_long_tail() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, &["--imbalance", "10", "--seed", "3"]);
    for mode in ["zero-shot", "few-shot"] {
        let r = json(&kcl(&[
            "ablate",
            "--rule",
            "image-to-class",
            "--mode",
            mode,
            "--features",
            p(&d.join("test.emb")),
            "--weights",
            p(&d.join("weights.emb")),
            "--cache-features",
            p(&d.join("cache.emb")),
            "--cache-labels",
            p(&d.join("cache.lbl")),
            "--labels",
            p(&d.join("test.lbl")),
            "--k",
            "5",
            "--steps",
            "10",
        ]));
        let obj = r.as_object().unwrap();
        assert_eq!(obj.len(), 2);
        let mutual = r["mutual"]["accuracy"].as_f64().unwrap();
        let variant = r["image-to-class"]["accuracy"].as_f64().unwrap();
        assert!(mutual >= variant, "{mode}: mutual {mutual} < image-to-class {variant}");
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, &["--classes", "3", "--dim", "4", "--samples-per-class", "4"]);
    let (t, w) = (d.join("test.emb"), d.join("weights.emb"));

    assert_eq!(kcl(&["--help"]).status.code(), Some(0));
    assert_eq!(kcl(&["run", "--bogus"]).status.code(), Some(1));
    assert_eq!(kcl(&["run", "--features", p(&t)]).status.code(), Some(1));

    let missing = kcl(&["run", "--features", p(&d.join("nope.emb")), "--weights", p(&w)]);
    assert_eq!(missing.status.code(), Some(2));
    let err = String::from_utf8_lossy(&missing.stderr);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");

    fs::write(d.join("bad.emb"), b"XXXX\0\0\0\0").unwrap();
    assert_eq!(kcl(&["run", "--features", p(&d.join("bad.emb")), "--weights", p(&w)]).status.code(), Some(2));

    // dimension mismatch, non-unit rows, bad parameters, missing cache
    write_emb(d.join("wide.emb"), &FeatureMatrix::from_rows(&[[1.0, 0.0, 0.0, 0.0, 0.0], [0.0; 5]]).unwrap())
        .unwrap();
    write_emb(d.join("w5.emb"), &FeatureMatrix::from_rows(&[[1.0, 0.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0, 0.0]]).unwrap())
        .unwrap();
    write_labels(d.join("short.lbl"), &[0]).unwrap();
    let (w5, wide, short) = (d.join("w5.emb"), d.join("wide.emb"), d.join("short.lbl"));
    let cases: [&[&str]; 7] = [
        &["--weights", p(&w5)],
        &["--weights", p(&wide)],
        &["--weights", p(&w), "--k", "0"],
        &["--weights", p(&w), "--beta", "0"],
        &["--weights", p(&w), "--steps", "0"],
        &["--weights", p(&w), "--mode", "few-shot"],
        &["--weights", p(&w), "--labels", p(&short)],
    ];
    for extra in cases {
        let mut args = vec!["run", "--features", p(&t)];
        args.extend_from_slice(extra);
        let out = kcl(&args);
        assert_eq!(out.status.code(), Some(1), "{extra:?}: {}", String::from_utf8_lossy(&out.stderr));
    }

    let garbage = d.join("r.json");
    fs::write(&garbage, "not json").unwrap();
    assert_eq!(kcl(&["eval", "--report", p(&garbage), "--labels", p(&d.join("test.lbl"))]).status.code(), Some(2));
}

#[test]
fn ablate_without_rule_runs_all_three() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, &["--classes", "3", "--dim", "4", "--samples-per-class", "6"]);
    let r = json(&kcl(&["ablate", "--features", p(&d.join("test.emb")), "--weights", p(&d.join("weights.emb"))]));
    let mut keys: Vec<_> = r.as_object().unwrap().keys().cloned().collect();
    keys.sort();
    assert_eq!(keys, ["class-to-image", "image-to-class", "mutual"]);

    let saved = d.join("ablate.json");
    fs::write(&saved, serde_json::to_string(&r).unwrap()).unwrap();
    let ev = json(&kcl(&["eval", "--report", p(&saved), "--labels", p(&d.join("test.lbl"))]));
    assert_eq!(ev.as_object().unwrap().len(), 3);
    assert_eq!(ev["mutual"]["total"], 18);
}
