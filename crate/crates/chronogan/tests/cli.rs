//! Black-box checks of the command-line interface: artifact layout, exit
//! codes, determinism and output schemas, driven through the compiled
//! binary exactly as a user would run it.

use std::path::Path;
use std::process::{Command, Output};

use chronogan::data::{export_sequences_csv, generate_sines, save_checkpoint, EarlyGenSummary};
use chronogan::nets::{ModelBundle, ModelDims};
use chronogan::seed::stream;

/// A deliberately tiny run: three-plus-three-plus-four epochs over sixty
/// short sine sequences, with generation checks at epochs 2 and 4.
const RUN_CFG: &str = r#"{
  "data": {"source": "sines", "n": 60, "T": 8, "features": 2},
  "model": {"hidden_dim": 4, "latent_dim": 3, "gru_layers": 1, "lstm_layers": 1},
  "train": {
    "epochs_phase1": 3, "epochs_phase2": 3, "epochs_phase3": 4,
    "batch_size": 16, "check_epoch": 2, "eval_budget_steps": 8, "seed": 33
  }
}"#;

fn chronogan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chronogan"))
        .args(args)
        .output()
        .expect("binary launches")
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

#[test]
fn train_writes_artifacts_and_reruns_identically() {
    let dir = tempfile::tempdir().expect("tempdir");
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, RUN_CFG).expect("write config");

    let out1 = dir.path().join("out1");
    let run1 = chronogan(&["train", "--config", path_str(&cfg), "--out", path_str(&out1)]);
    assert!(
        run1.status.success(),
        "train failed: {}",
        String::from_utf8_lossy(&run1.stderr)
    );
    for name in [
        "checkpoint_best.cgn",
        "checkpoint_latest.cgn",
        "early_gen_history.csv",
        "synthetic_best.csv",
        "train_log.csv",
    ] {
        assert!(out1.join(name).is_file(), "missing artifact {name}");
    }
    let log = std::fs::read_to_string(out1.join("train_log.csv")).expect("read log");
    assert!(log.starts_with("phase,epoch,"), "unexpected log header: {log:.40}");
    assert!(log.lines().count() > 10, "log looks truncated");

    // an identical invocation reproduces the logs and outputs exactly
    let out2 = dir.path().join("out2");
    let run2 = chronogan(&["train", "--config", path_str(&cfg), "--out", path_str(&out2)]);
    assert!(run2.status.success());
    for name in ["train_log.csv", "early_gen_history.csv", "synthetic_best.csv"] {
        let a = std::fs::read(out1.join(name)).expect("read first");
        let b = std::fs::read(out2.join(name)).expect("read second");
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn train_rejects_a_missing_config() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = chronogan(&[
        "train",
        "--config",
        path_str(&dir.path().join("nope.json")),
        "--out",
        path_str(&dir.path().join("out")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("error:"), "stderr was: {err}");
}

#[test]
fn generate_honours_count_seed_and_empty_requests() {
    let dir = tempfile::tempdir().expect("tempdir");
    let ckpt = dir.path().join("model.cgn");
    let dims = ModelDims { feature_dim: 2, latent_dim: 3, hidden_dim: 4, noise_dim: 2 };
    let bundle = ModelBundle::<f32>::init(dims, 1, 1, &mut stream(7, "cli-gen"));
    save_checkpoint(&bundle, &EarlyGenSummary::default(), Some(RUN_CFG), &ckpt)
        .expect("save checkpoint");

    // zero sequences: just the header, so downstream tooling sees a schema
    let empty = dir.path().join("empty.csv");
    let run = chronogan(&[
        "generate", "--checkpoint", path_str(&ckpt), "--num", "0", "--out", path_str(&empty),
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(
        std::fs::read_to_string(&empty).expect("read"),
        "sample_id,timestep,f0,f1\n"
    );

    // six sequences of the configured length, deterministic per seed
    let a = dir.path().join("a.csv");
    let run = chronogan(&[
        "generate", "--checkpoint", path_str(&ckpt), "--num", "6", "--seed", "5",
        "--out", path_str(&a),
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let text = std::fs::read_to_string(&a).expect("read");
    assert_eq!(text.lines().count(), 1 + 6 * 8, "sequence length comes from the config echo");
    assert!(text.starts_with("sample_id,timestep,f0,f1\n"));

    let b = dir.path().join("b.csv");
    chronogan(&[
        "generate", "--checkpoint", path_str(&ckpt), "--num", "6", "--seed", "5",
        "--out", path_str(&b),
    ]);
    assert_eq!(
        std::fs::read(&a).expect("read"),
        std::fs::read(&b).expect("read"),
        "same seed must reproduce the same sample"
    );
    let c = dir.path().join("c.csv");
    chronogan(&[
        "generate", "--checkpoint", path_str(&ckpt), "--num", "6", "--seed", "6",
        "--out", path_str(&c),
    ]);
    assert_ne!(
        std::fs::read(&a).expect("read"),
        std::fs::read(&c).expect("read"),
        "different seeds must vary the sample"
    );
}

#[test]
fn evaluate_writes_a_full_report() {
    let dir = tempfile::tempdir().expect("tempdir");
    let real = dir.path().join("real.csv");
    let synth = dir.path().join("synth.csv");
    export_sequences_csv(&generate_sines::<f32>(12, 6, 2, 301).expect("sines"), &real)
        .expect("export");
    export_sequences_csv(&generate_sines::<f32>(12, 6, 2, 302).expect("sines"), &synth)
        .expect("export");

    let report = dir.path().join("report.txt");
    let run = chronogan(&[
        "evaluate", "--real", path_str(&real), "--synthetic", path_str(&synth),
        "--replications", "1", "--out", path_str(&report),
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let doc = std::fs::read_to_string(&report).expect("read report");
    assert!(doc.starts_with("replications = 1\n"), "report was: {doc}");
    for block in ["[discriminative]", "[predictive]", "[mse_mean]", "[mse_std]"] {
        assert!(doc.contains(block), "report lacks {block}: {doc}");
    }
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(stdout.contains("discriminative:") && stdout.contains("predictive:"));
}

#[test]
fn project_writes_plot_ready_csv() {
    let dir = tempfile::tempdir().expect("tempdir");
    let real = dir.path().join("real.csv");
    let synth = dir.path().join("synth.csv");
    export_sequences_csv(&generate_sines::<f32>(64, 4, 2, 881).expect("sines"), &real)
        .expect("export");
    export_sequences_csv(&generate_sines::<f32>(64, 4, 2, 882).expect("sines"), &synth)
        .expect("export");

    for method in ["pca", "tsne"] {
        let out = dir.path().join(format!("{method}.csv"));
        let run = chronogan(&[
            "project", "--real", path_str(&real), "--synthetic", path_str(&synth),
            "--method", method, "--out", path_str(&out),
        ]);
        assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
        let text = std::fs::read_to_string(&out).expect("read");
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("method,component1,component2,label"));
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 128, "one row per projected sequence");
        assert!(rows.iter().all(|r| r.starts_with(method)), "method column mismatch");
        assert!(rows.iter().any(|r| r.ends_with(",real")));
        assert!(rows.iter().any(|r| r.ends_with(",synthetic")));
    }
}

#[test]
fn project_rejects_an_unknown_method() {
    let dir = tempfile::tempdir().expect("tempdir");
    let run = chronogan(&[
        "project", "--real", "r.csv", "--synthetic", "s.csv", "--method", "umap",
        "--out", path_str(&dir.path().join("p.csv")),
    ]);
    assert_eq!(run.status.code(), Some(2), "clap usage errors exit with 2");
}
