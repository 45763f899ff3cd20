use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hilp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hilp"))
        .args(args)
        .env_remove("HILP_CONFIG")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = hilp(args);
    assert!(o.status.success(), "{args:?} failed:\n{}\n{}", stdout(&o), stderr(&o));
    stdout(&o)
}

fn es_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/es.conf")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn line_value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(key).map(|v| v.trim().parse::<f64>().unwrap()))
        .unwrap_or_else(|| panic!("no `{key}` line in:\n{text}"))
}

#[test]
fn es10_pipeline_reaches_full_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let (kb, run, rules) = (
        dir.path().join("es10"),
        dir.path().join("run"),
        dir.path().join("rules.txt"),
    );
    ok(&["gen-es", "--n", "10", "--out", s(&kb)]);
    ok(&[
        "train",
        "--kb",
        s(&kb),
        "--targets",
        "Even,Zero",
        "--config",
        s(&es_config()),
        "--out",
        s(&run),
        "--log-every",
        "0",
    ]);
    for artifact in ["model.ckpt", "rules.txt", "report.json", "config.conf", "manifest.json"] {
        assert!(run.join(artifact).exists(), "{artifact}");
    }
    ok(&[
        "extract",
        "--checkpoint",
        s(&run.join("model.ckpt")),
        "--out",
        s(&rules),
    ]);
    assert!(dir.path().join("rules.txt.manifest.json").exists());

    let by_rules = ok(&["eval", "--rules", s(&rules), "--kb", s(&kb)]);
    assert_eq!(line_value(&by_rules, "accuracy"), 1.0, "{by_rules}");
    let by_ckpt = ok(&["eval", "--checkpoint", s(&run.join("model.ckpt")), "--kb", s(&kb)]);
    assert_eq!(by_rules, by_ckpt);

    // Variable form and s-expressions parse back to the same rules.
    for flag in ["--variable-form", "--ast"] {
        let other = dir.path().join(format!("rules{flag}.txt"));
        ok(&[
            "extract",
            "--checkpoint",
            s(&run.join("model.ckpt")),
            "--out",
            s(&other),
            flag,
        ]);
        assert_eq!(ok(&["eval", "--rules", s(&other), "--kb", s(&kb)]), by_rules);
    }

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 4);
    assert!(manifest["kb_digests"].as_object().unwrap().len() >= 3);
    assert!(manifest["config"].as_str().unwrap().contains("identity = false"));
}

#[test]
fn gen_es_counts_and_size_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["gen-es", "--n", "10", "--out", s(&dir.path().join("a"))]);
    assert!(out.starts_with("wrote 15 facts over 10 entities"), "{out}");
    let facts = std::fs::read_to_string(dir.path().join("a/facts.tsv")).unwrap();
    assert_eq!(
        facts.lines().filter(|l| !l.is_empty() && !l.starts_with('#')).count(),
        15
    );
    assert!(dir.path().join("a/manifest.json").exists());

    let o = hilp(&["gen-es", "--n", "1", "--out", s(&dir.path().join("b"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("at least 2"), "{}", stderr(&o));
}

#[test]
fn eval_rejects_both_sources() {
    let o = hilp(&["eval", "--checkpoint", "a", "--rules", "b", "--kb", "c"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("cannot be used with"), "{}", stderr(&o));
    let o = hilp(&["eval", "--kb", "c"]);
    assert!(!o.status.success());
}

#[test]
fn training_is_reproducible_with_one_worker() {
    let dir = tempfile::tempdir().unwrap();
    let kb = dir.path().join("es");
    ok(&["gen-es", "--n", "12", "--out", s(&kb)]);
    let mut outputs = Vec::new();
    for run in ["r1", "r2"] {
        let out = dir.path().join(run);
        ok(&[
            "--workers",
            "1",
            "train",
            "--kb",
            s(&kb),
            "--out",
            s(&out),
            "--set",
            "epochs=4",
            "--set",
            "restarts=2",
            "--set",
            "d=8",
            "--seed",
            "7",
            "--log-every",
            "0",
        ]);
        let rules = std::fs::read(out.join("rules.txt")).unwrap();
        let ckpt = std::fs::read(out.join("model.ckpt")).unwrap();
        let metrics = ok(&[
            "--workers",
            "1",
            "eval",
            "--checkpoint",
            s(&out.join("model.ckpt")),
            "--kb",
            s(&kb),
        ]);
        outputs.push((rules, ckpt, metrics));
    }
    assert!(outputs[0] == outputs[1]);
    // Default targets are every base predicate.
    let rules = String::from_utf8(outputs[0].0.clone()).unwrap();
    assert_eq!(rules.lines().filter(|l| !l.starts_with('#')).count(), 3, "{rules}");
}

#[test]
fn config_errors_name_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    std::fs::write(&cfg, "t = 2\nwidth = 9\n").unwrap();
    let kb = dir.path().join("es");
    ok(&["gen-es", "--n", "10", "--out", s(&kb)]);
    let o = Command::new(env!("CARGO_BIN_EXE_hilp"))
        .args(["train", "--kb", s(&kb), "--out", s(&dir.path().join("o"))])
        .env("HILP_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("bad.conf:2") && err.contains("width"), "{err}");
}

#[test]
fn check_grad_default_config_passes() {
    let out = ok(&["check-grad", "--per-tensor", "2"]);
    let err: f64 = out
        .split_whitespace()
        .skip_while(|w| *w != "error")
        .nth(1)
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| panic!("{out}"));
    assert!(err < 1e-4, "{out}");
    assert!(out.contains("pass"));
}
