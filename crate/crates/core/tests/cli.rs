//! The `qtfm` binary end to end.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn qtfm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qtfm")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = qtfm(args);
    assert!(
        out.status.success(),
        "qtfm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// The toy model on a corpus small enough to train for one epoch in a test.
fn quick_config(dir: &Path) -> PathBuf {
    let text = std::fs::read_to_string(configs().join("toy.toml"))
        .unwrap()
        .replace("train_utterances = 4000", "train_utterances = 40")
        .replace("test_utterances = 200", "test_utterances = 6")
        .replace("max_epochs = 22", "max_epochs = 2");
    let path = dir.join("quick.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn count(out: &str) -> u64 {
    out.split_whitespace().nth(1).unwrap().parse().unwrap()
}

#[test]
fn count_params_on_the_paper_config() {
    let cfg = configs().join("paper.toml");
    let proposed = count(&ok(&["--config", s(&cfg), "count-params"]));
    let conv = count(&ok(&["--config", s(&cfg), "--variant", "conv-context", "count-params"]));
    assert!((proposed as f64 - 51e6).abs() <= 0.15 * 51e6, "{proposed}");
    assert!(conv > proposed);
}

#[test]
fn eval_of_identical_transcripts_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let refs = dir.path().join("ref.tsv");
    std::fs::write(&refs, "hyp\tid\ta\ttokens\t3 4 5\nhyp\tid\tb\ttokens\t7\n").unwrap();
    let out = ok(&["--out", s(dir.path()), "eval", "--ref", s(&refs), "--hyp", s(&refs)]);
    assert!(out.starts_with("WER 0.0000"), "{out}");
    let summary = std::fs::read_to_string(dir.path().join("eval.tsv")).unwrap();
    assert!(summary.contains("wer\t0.000000"), "{summary}");
}

#[test]
fn eval_pairs_by_id() {
    let dir = tempfile::tempdir().unwrap();
    let (r, h) = (dir.path().join("ref.tsv"), dir.path().join("hyp.tsv"));
    std::fs::write(&r, "hyp\tid\ta\ttokens\t3 4 5 6\n").unwrap();
    std::fs::write(&h, "hyp\tid\tz\ttokens\t1\nhyp\tid\ta\ttokens\t3 5 6\n").unwrap();
    let out = ok(&["--out", s(dir.path()), "eval", "--ref", s(&r), "--hyp", s(&h)]);
    assert!(out.starts_with("WER 0.2500"), "{out}");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(configs().join("toy.toml")).unwrap().replace("grad_clip", "grad_clp");
    std::fs::write(&bad, text).unwrap();
    let out = qtfm(&["--config", s(&bad), "count-params"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("grad_clp"));
}

#[test]
fn gen_data_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    ok(&["--config", s(&cfg), "--seed", "5", "--out", s(&a), "gen-data"]);
    ok(&["--config", s(&cfg), "--seed", "5", "--out", s(&b), "gen-data"]);
    ok(&["--config", s(&cfg), "--seed", "6", "--out", s(&c), "gen-data"]);
    fn files(d: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                files(&p, out);
            } else {
                out.push((p.clone(), std::fs::read(&p).unwrap()));
            }
        }
    }
    let read = |d: &Path| {
        let mut v = Vec::new();
        files(d, &mut v);
        let mut v: Vec<(PathBuf, Vec<u8>)> =
            v.into_iter().map(|(p, b)| (p.strip_prefix(d).unwrap().to_path_buf(), b)).collect();
        v.sort();
        v
    };
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn toy_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = quick_config(d);
    let c = s(&cfg);
    let out = |name: &str| d.join(name);
    ok(&["--config", c, "--out", s(&out("data")), "gen-data"]);
    ok(&["--config", c, "--out", s(&out("fp")), "train", "--data", s(&out("data"))]);
    assert!(out("fp/epoch-002.qtfm").exists() && out("fp/metrics.tsv").exists());
    let fp = out("fp/average.qtfm");
    ok(&[
        "--config", c, "--out", s(&out("ptq")), "quantize-ptq", "--checkpoint", s(&fp), "--data", s(&out("data")),
        "--steps", "5",
    ]);
    let q = out("ptq/ptq.qtfm");
    let e = ok(&["--config", c, "--out", s(&out("eval")), "eval", "--checkpoint", s(&q), "--data", s(&out("data"))]);
    assert!(e.starts_with("WER "), "{e}");
    assert!(out("eval/eval.tsv").exists() && out("eval/length_deletion.tsv").exists());
    let r = ok(&["--out", s(&out("cmp")), "report-compression", "--fp32", s(&fp), "--quantized", s(&q)]);
    let ratio: f64 = r.trim().rsplit(' ').next().unwrap().parse().unwrap();
    assert!(ratio >= 3.5, "{r}");

    // QAT from the float weights, then finalization.
    ok(&[
        "--config", c, "--quant", "qat", "--out", s(&out("qat")), "train", "--data", s(&out("data")), "--init",
        s(&fp), "--epochs", "2",
    ]);
    ok(&[
        "--config", c, "--out", s(&out("fin")), "quantize-qat-finalize", "--checkpoints", s(&out("qat/epoch-001.qtfm")),
        s(&out("qat/epoch-002.qtfm")), "--data", s(&out("data")), "--steps", "3",
    ]);
    ok(&["--config", c, "--out", s(&out("eval2")), "eval", "--checkpoint", s(&out("fin/qat-final.qtfm")), "--data",
        s(&out("data")), "--engine", "simulate"]);
    let a = ok(&["--out", s(&out("attn")), "export-attention", "--checkpoint", s(&fp), "--data", s(&out("data"))]);
    assert!(a.starts_with("2 decoder layers"), "{a}");
}

#[test]
fn uncalibrated_checkpoints_need_the_override() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = quick_config(d);
    let c = s(&cfg);
    let data = d.join("data");
    ok(&["--config", c, "--out", s(&data), "gen-data"]);
    ok(&["--config", c, "--out", s(&d.join("fp")), "train", "--data", s(&data), "--epochs", "1"]);
    let fp = d.join("fp/average.qtfm");
    ok(&["--config", c, "--out", s(d), "quantize-ptq", "--checkpoint", s(&fp), "--data", s(&data), "--steps", "0"]);
    let q = d.join("ptq.qtfm");
    let refused = qtfm(&["--config", c, "--out", s(&d.join("e")), "eval", "--checkpoint", s(&q), "--data", s(&data)]);
    assert!(!refused.status.success());
    assert!(String::from_utf8_lossy(&refused.stderr).contains("uncalibrated"));
    ok(&[
        "--config", c, "--out", s(&d.join("e")), "eval", "--checkpoint", s(&q), "--data", s(&data),
        "--allow-uncalibrated",
    ]);
}
