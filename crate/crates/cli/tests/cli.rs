use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_noisyd-ct"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn every_subcommand_has_help() {
    ok(&["--help"]);
    for sub in ["simulate", "train", "eval", "visualize", "params", "toy"] {
        let text = ok(&[sub, "--help"]);
        assert!(text.contains("Usage"), "{}", sub);
    }
}

#[test]
fn usage_errors_exit_2_with_one_line() {
    for args in [
        &["train", "--bogus"][..],
        &["train", "--stage", "7", "--data", "d", "--out", "o"],
        &["frobnicate"],
        &[],
    ] {
        let out = run(args);
        assert_eq!(out.status.code(), Some(2), "{:?}", args);
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.trim_end().lines().count(), 1, "{:?}: {}", args, err);
        assert!(err.starts_with("error[usage]: "), "{}", err);
    }
}

#[test]
fn stage_two_without_init_is_a_training_error() {
    let out = run(&["train", "--stage", "2", "--data", "d", "--out", "o"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error[training]: "), "{}", err);
}

#[test]
fn missing_manifest_is_reported_with_its_category() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let out = run(&[
        "train",
        "--stage",
        "1",
        "--data",
        p(&missing),
        "--out",
        p(&dir.path().join("m.ndct")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error["), "{}", err);
    assert!(err.contains("nope.jsonl"), "{}", err);
}

fn count(text: &str, key: &str) -> u64 {
    text.lines()
        .find_map(|l| {
            let mut it = l.split_whitespace();
            (it.next() == Some(key)).then(|| it.next().unwrap().parse().unwrap())
        })
        .unwrap_or_else(|| panic!("{} missing from {}", key, text))
}

#[test]
fn params_reports_component_counts() {
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/full-size.cfg");
    let text = ok(&["params", "--config", cfg]);
    assert_eq!(count(&text, "noisyd_total"), 1_681_168);
    assert_eq!(
        count(&text, "noisyd_total"),
        count(&text, "noisyd.encoder_c")
            + count(&text, "noisyd.encoder_n")
            + count(&text, "noisyd.decoder_cn")
    );
    assert_eq!(
        count(&text, "encoder_total"),
        count(&text, "feature_encoder") + count(&text, "conformer_blocks")
    );
    assert_eq!(
        count(&text, "inference_total"),
        count(&text, "baseline_total") + count(&text, "noisyd.encoder_c")
    );
    let bpe = ok(&["params", "--config", cfg, "--vocab-size", "5000"]);
    assert_eq!(count(&bpe, "vocabulary"), 5000);
    assert!(count(&bpe, "transducer_decoder") > count(&text, "transducer_decoder"));
}

#[test]
fn tri_stage_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let toy = d.join("toy");
    ok(&[
        "toy",
        "--out",
        p(&toy),
        "--seed",
        "1",
        "--train-utterances",
        "6",
        "--test-utterances",
        "3",
    ]);
    let cfg = toy.join("toy.cfg");
    let sim = d.join("sim");
    ok(&[
        "simulate",
        "--clean-manifest",
        p(&toy.join("train.jsonl")),
        "--noise-dir",
        p(&toy.join("noise")),
        "--partition",
        "train",
        "--out",
        p(&sim),
        "--seed",
        "2",
        "--no-loop",
    ]);
    let paired = sim.join("noisy.jsonl");
    assert!(paired.exists());
    let grid = d.join("grid");
    ok(&[
        "simulate",
        "--clean-manifest",
        p(&toy.join("test.jsonl")),
        "--noise-dir",
        p(&toy.join("noise")),
        "--partition",
        "test",
        "--out",
        p(&grid),
        "--snr-grid",
        "-5,15",
        "--no-loop",
    ]);

    let s1 = d.join("s1.ndct");
    let s2 = d.join("s2.ndct");
    let s3 = d.join("s3.ndct");
    let vocab = format!("vocab.path={}", p(&toy.join("vocab.tsv")));
    ok(&[
        "train",
        "--stage",
        "1",
        "--config",
        p(&cfg),
        "--set",
        &vocab,
        "--data",
        p(&toy.join("train.jsonl")),
        "--out",
        p(&s1),
        "--steps",
        "3",
    ]);
    for (stage, init, out) in [("2", &s1, &s2), ("3", &s2, &s3)] {
        ok(&[
            "train",
            "--stage",
            stage,
            "--init",
            p(init),
            "--data",
            p(&paired),
            "--out",
            p(out),
            "--steps",
            "2",
        ]);
    }
    let log = std::fs::read_to_string(d.join("s3.ndct.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);

    let report = d.join("report.json");
    let mut args = vec![
        "eval".to_string(),
        "--checkpoint".into(),
        p(&s3).into(),
        "--by-snr".into(),
        "--by-noise".into(),
        "--out".into(),
        p(&report).into(),
    ];
    for e in std::fs::read_dir(&grid).unwrap() {
        let path = e.unwrap().path();
        if path.extension().is_some_and(|x| x == "jsonl") {
            args.push("--manifest".into());
            args.push(p(&path).into());
        }
    }
    assert!(args.len() > 7);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&refs);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let buckets = json["buckets"].as_array().unwrap();
    // four noise types at two SNRs
    assert_eq!(buckets.len(), 8);
    assert!(buckets.iter().all(|b| b["utterances"] == 3));
    assert_eq!(json["aggregate"]["utterances"], 24);

    // stage 3 cannot start from a stage-1 checkpoint
    let out = run(&[
        "train",
        "--stage",
        "3",
        "--init",
        p(&s1),
        "--data",
        p(&paired),
        "--out",
        p(&d.join("bad.ndct")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}
