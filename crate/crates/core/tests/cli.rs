use std::path::Path;
use std::process::{Command, Output};

use densecam::corpus::{load_manifest, read_tensor_file};
use densecam::labels::ClassVocab;

fn densecam(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_densecam"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn densecam")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = densecam(dir, args);
    assert!(
        out.status.success(),
        "densecam {} exited {:?}: {}",
        args.join(" "),
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_corpus(dir: &Path) {
    ok(
        dir,
        &[
            "synth-corpus",
            "--out",
            "c",
            "--classes",
            "3",
            "--train",
            "12",
            "--dev",
            "6",
            "--eval",
            "6",
            "--clip-s",
            "2",
            "--sample-rate",
            "8000",
            "--seed",
            "3",
        ],
    );
}

const TINY: [&str; 10] = [
    "--set",
    "growth_rate=2",
    "--set",
    "block_layers=1,1,1,1",
    "--set",
    "finetune_epochs=1",
    "--max-epochs",
    "2",
    "--batch-size",
    "4",
];

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn train_tune_infer_evaluate() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    small_corpus(dir);
    let train = [
        &[
            "train",
            "--train",
            "c/train.jsonl",
            "--dev",
            "c/dev.jsonl",
            "--classes",
            "c/classes.txt",
            "--out",
            "m/model.bin",
        ][..],
        &TINY,
    ]
    .concat();
    ok(dir, &train);
    let report = std::fs::read_to_string(dir.join("m/model.txt")).unwrap();
    assert!(report.contains("epochs_run=3"), "{report}");
    assert_eq!(read_json(&dir.join("m/model.json"))["epochs_run"], 3);

    ok(
        dir,
        &[
            "tune-thresholds",
            "--model",
            "m/model.bin",
            "--manifest",
            "c/dev.jsonl",
            "--out",
            "m/th.json",
        ],
    );
    let th = read_json(&dir.join("m/th.json"));
    assert_eq!(th["thresholds"].as_array().unwrap().len(), 3);

    ok(
        dir,
        &[
            "infer-events",
            "--model",
            "m/model.bin",
            "m/model.bin",
            "--manifest",
            "c/eval.jsonl",
            "--thresholds",
            "m/th.json",
            "--out",
            "p/events.jsonl",
        ],
    );
    ok(
        dir,
        &[
            "infer-tags",
            "--model",
            "m/model.bin",
            "--manifest",
            "c/eval.jsonl",
            "--out",
            "p/tags.jsonl",
        ],
    );

    let vocab = ClassVocab::load(&dir.join("c/classes.txt")).unwrap();
    let events = load_manifest(&dir.join("p/events.jsonl"), &vocab).unwrap();
    assert_eq!(events.len(), 6);
    for r in &events {
        for e in r.strong.as_deref().unwrap_or(&[]) {
            assert!(e.onset >= 0.0 && e.offset <= 2.0 + 1e-9 && e.onset < e.offset);
            assert!(r.weak.contains(&e.class));
        }
    }
    let tags = load_manifest(&dir.join("p/tags.jsonl"), &vocab).unwrap();
    assert!(tags.iter().all(|r| r.strong.is_none()));

    for (pred, metric) in [
        ("p/tags.jsonl", "clip"),
        ("p/events.jsonl", "segment"),
        ("p/events.jsonl", "event"),
    ] {
        let out = format!("r/{metric}");
        let text = ok(
            dir,
            &[
                "evaluate",
                "--pred",
                pred,
                "--ref",
                "c/eval.jsonl",
                "--classes",
                "c/classes.txt",
                "--metric",
                metric,
                "--out",
                &out,
            ],
        );
        assert!(text.contains(&format!("metric={metric}")), "{text}");
        let f1 = read_json(&dir.join(format!("{out}.json")))["f1"]
            .as_f64()
            .unwrap();
        assert!((0.0..=1.0).contains(&f1));
    }
}

#[test]
fn evaluate_reference_against_itself() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    small_corpus(dir);
    for metric in ["clip", "segment", "event"] {
        let text = ok(
            dir,
            &[
                "evaluate",
                "--pred",
                "c/eval.jsonl",
                "--ref",
                "c/eval.jsonl",
                "--classes",
                "c/classes.txt",
                "--metric",
                metric,
            ],
        );
        assert!(text.lines().any(|l| l == "f1=1.000000"), "{metric}: {text}");
    }
}

#[test]
fn featurize_and_augment() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    small_corpus(dir);
    ok(
        dir,
        &[
            "featurize",
            "--manifest",
            "c/dev.jsonl",
            "--classes",
            "c/classes.txt",
            "--out",
            "f",
            "--set",
            "n_mels=32",
        ],
    );
    let (spec, _meta) = read_tensor_file(&dir.join("f/dev_0000.lfbe")).unwrap();
    assert_eq!(spec.shape()[1], 32);
    assert_eq!(std::fs::read_dir(dir.join("f")).unwrap().count(), 6);

    ok(
        dir,
        &[
            "augment",
            "--manifest",
            "c/train.jsonl",
            "--classes",
            "c/classes.txt",
            "--target",
            "20",
            "--out",
            "a/train.jsonl",
            "--seed",
            "5",
        ],
    );
    let vocab = ClassVocab::load(&dir.join("c/classes.txt")).unwrap();
    let records = load_manifest(&dir.join("a/train.jsonl"), &vocab).unwrap();
    assert_eq!(records.len(), 20);
    let derived: Vec<_> = records
        .iter()
        .filter(|r| r.derived_from.is_some())
        .collect();
    assert_eq!(derived.len(), 8);
    for r in derived {
        assert!(r.audio_path(&dir.join("a")).exists(), "{}", r.id);
    }
}

#[test]
fn tri_train_writes_six_models_and_pools() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    small_corpus(dir);
    let args = [
        &[
            "tri-train",
            "--train",
            "c/train.jsonl",
            "--unlabeled",
            "c/eval.jsonl",
            "--classes",
            "c/classes.txt",
            "--out-dir",
            "t",
            "--set",
            "rounds=2",
            "--set",
            "tau=0.6",
        ][..],
        &TINY,
    ]
    .concat();
    ok(dir, &args);
    for k in 0..6 {
        assert!(dir.join(format!("t/model{k}.bin")).exists());
    }
    for i in 0..3 {
        assert!(dir.join(format!("t/pools/round1_model{i}.jsonl")).exists());
    }
    assert!(std::fs::read_to_string(dir.join("t/report.txt"))
        .unwrap()
        .contains("rounds=2"));
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    assert_eq!(densecam(dir, &["--help"]).status.code(), Some(0));
    assert_eq!(densecam(dir, &["train", "--bogus"]).status.code(), Some(1));
    let missing = densecam(
        dir,
        &[
            "train",
            "--train",
            "nope.jsonl",
            "--classes",
            "nope.txt",
            "--out",
            "m.bin",
        ],
    );
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope"));

    small_corpus(dir);
    std::fs::write(
        dir.join("bad.jsonl"),
        "{\"id\":\"x\",\"path\":\"a.wav\",\"weak\":[\"nope\"],\"split\":\"train\"}\n",
    )
    .unwrap();
    let bad = densecam(
        dir,
        &[
            "train",
            "--train",
            "bad.jsonl",
            "--classes",
            "c/classes.txt",
            "--out",
            "m.bin",
        ],
    );
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("line 1"));

    let preset = densecam(
        dir,
        &[
            "train",
            "--train",
            "c/train.jsonl",
            "--classes",
            "c/classes.txt",
            "--out",
            "m.bin",
            "--preset",
            "dcase1999",
        ],
    );
    assert_eq!(preset.status.code(), Some(1));
    let events = densecam(
        dir,
        &[
            "infer-events",
            "--model",
            "m.bin",
            "--manifest",
            "c/eval.jsonl",
            "--out",
            "x.jsonl",
        ],
    );
    assert_eq!(events.status.code(), Some(1));
}
