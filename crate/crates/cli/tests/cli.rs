use std::path::Path;
use std::process::{Command, Output};

fn citefield(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_citefield"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const TINY: &str = r#"
seed = 3
[data]
synthetic_records = 140
generated = 80
task_train = 30
validation = 10
test = 10
[model]
dim = 8
hidden = 8
vocab_size = 200
[finetune]
epochs = 2
basic_epochs = 2
learning_rate = 0.01
[anchor]
delta = 1e-6
[selector]
epochs = 1
[pretrain]
steps = 3
batch_size = 8
[ablation]
strategies = ["none", "anchor"]
seeds = [1]
significance_trials = 20
"#;

#[test]
fn stage_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("tiny.toml"), TINY).unwrap();
    let cfg = ["--config", "tiny.toml"];

    ok(citefield(
        d,
        &[
            "synth",
            "--count",
            "60",
            "--seed",
            "1",
            "--out",
            "records.jsonl",
        ],
    ));
    ok(citefield(
        d,
        &[
            "generate",
            "--records",
            "records.jsonl",
            "--out",
            "cites.jsonl",
        ],
    ));
    let vocab = ok(citefield(
        d,
        &[
            &cfg[..],
            &["vocab", "--corpus", "cites.jsonl", "--out", "vocab.txt"],
        ]
        .concat(),
    ));
    assert!(vocab.contains("pieces"));
    ok(citefield(
        d,
        &[
            &cfg[..],
            &[
                "finetune",
                "--train",
                "cites.jsonl",
                "--vocab",
                "vocab.txt",
                "--out",
                "m.model",
            ],
        ]
        .concat(),
    ));
    ok(citefield(
        d,
        &[
            "predict",
            "--model",
            "m.model",
            "--vocab",
            "vocab.txt",
            "--data",
            "cites.jsonl",
            "--out",
            "pred.jsonl",
        ],
    ));
    let table = ok(citefield(
        d,
        &[
            "evaluate",
            "--gold",
            "cites.jsonl",
            "--pred",
            "pred.jsonl",
            "--report",
            "report.json",
        ],
    ));
    assert!(table.contains("field-level"));
    assert!(d.join("report.json").exists());

    let cmp = ok(citefield(
        d,
        &[
            "compare",
            "--a",
            "pred.jsonl",
            "--b",
            "pred.jsonl",
            "--gold",
            "cites.jsonl",
            "--trials",
            "50",
        ],
    ));
    let sig: serde_json::Value = serde_json::from_str(&cmp).unwrap();
    assert_eq!(sig["p_value"], 1.0);

    ok(citefield(
        d,
        &[
            &cfg[..],
            &[
                "anchors",
                "--model",
                "m.model",
                "--vocab",
                "vocab.txt",
                "--data",
                "cites.jsonl",
                "--out",
                "anchors.jsonl",
            ],
        ]
        .concat(),
    ));
    let stats = ok(citefield(
        d,
        &[
            "anchor-stats",
            "--corpus",
            "cites.jsonl",
            "--anchors",
            "anchors.jsonl",
            "--top",
            "5",
        ],
    ));
    assert!(stats.lines().count() <= 5);
    ok(citefield(
        d,
        &[
            &cfg[..],
            &[
                "pretrain",
                "--corpus",
                "cites.jsonl",
                "--vocab",
                "vocab.txt",
                "--strategy",
                "random",
                "--init",
                "m.model",
                "--steps",
                "2",
                "--out",
                "p.model",
            ],
        ]
        .concat(),
    ));
}

#[test]
fn run_and_ablate_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("tiny.toml"), TINY).unwrap();
    let out = ok(citefield(
        d,
        &[
            "--config",
            "tiny.toml",
            "run",
            "--out",
            "run",
            "--strategy",
            "none",
        ],
    ));
    assert!(out.contains("token-level"));
    assert!(d.join("run/manifest.json").exists());
    let table = ok(citefield(
        d,
        &["--config", "tiny.toml", "ablate", "--out", "abl"],
    ));
    assert!(table.contains("anchor") && table.contains("Venue"));
}

#[test]
fn failures_exit_nonzero_with_stage() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = citefield(
        d,
        &[
            "evaluate",
            "--gold",
            "missing.jsonl",
            "--pred",
            "p.jsonl",
            "--report",
            "r.json",
        ],
    );
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage `evaluate`"), "{err}");

    std::fs::write(
        d.join("bad.toml"),
        "[model]\nvocab_size = 9\n[data]\ntest = 5\n",
    )
    .unwrap();
    let out = citefield(d, &["--config", "bad.toml", "run", "--out", "run"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage `vocab`"), "{err}");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("run/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["failed_stage"], "vocab");

    let out = citefield(d, &["--config", "nope.toml", "run", "--out", "x"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage `run`"));
}
