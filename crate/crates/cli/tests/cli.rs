use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use ita_core::arbitrator::{ArbitratorConfig, ArbitratorMode, ArbitratorModel, EncoderKind};
use ita_core::corpus::pipeline::read_processed_dir;
use ita_core::corpus::{Role, Vocabulary};
use ita_core::imaginator::{ImaginatorConfig, ImaginatorModel};
use ita_core::trainer::{Checkpoint, CheckpointMeta, ModelSpec, TrainConfig};
use ita_core::Tensor;

fn ita(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ita"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = ita(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &[&str] = &[
    "--epochs",
    "1",
    "--batch-size",
    "16",
    "--token-dim",
    "6",
    "--tag-dim",
    "2",
    "--hidden",
    "8",
    "--max-history",
    "24",
    "--max-len",
    "6",
    "--beam-width",
    "2",
    "--valid-limit",
    "10",
    "--embed-dim",
    "6",
    "--filter-widths",
    "2,3",
    "--filters",
    "4",
    "--fusion-dim",
    "8",
    "--seed",
    "3",
];

/// Synthesizes and preprocesses a small corpus; returns the processed dir.
fn corpus(dir: &Path, kind: &str, dialogues: &str, p_split: &str) -> PathBuf {
    let raw = dir.join(format!("{kind}.jsonl"));
    ok(&[
        "synth",
        "--kind",
        kind,
        "--dialogues",
        dialogues,
        "--seed",
        "5",
        "--out",
        p(&raw),
    ]);
    let out = dir.join(format!("{kind}-{p_split}"));
    ok(&[
        "preprocess",
        "--input",
        p(&raw),
        "--p-split",
        p_split,
        "--seed",
        "5",
        "--out",
        p(&out),
    ]);
    out
}

fn data_lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn preprocess_is_deterministic_and_unsplit_at_zero() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.jsonl");
    ok(&["synth", "--dialogues", "40", "--out", p(&raw)]);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let stdout = ok(&[
        "preprocess",
        "--input",
        p(&raw),
        "--p-split",
        "0",
        "--out",
        p(&a),
    ]);
    assert!(stdout.contains("Avg. Split User Turns: 1.0000"), "{stdout}");
    ok(&[
        "preprocess",
        "--input",
        p(&raw),
        "--p-split",
        "0",
        "--out",
        p(&b),
    ]);
    let mut names: Vec<_> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 7);
    for name in &names {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name:?}"
        );
    }
    let manifest = std::fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert_eq!(manifest.lines().filter(|l| !l.starts_with('#')).count(), 6);

    let split = dir.path().join("split");
    let stdout = ok(&[
        "preprocess",
        "--input",
        p(&raw),
        "--p-split",
        "1",
        "--out",
        p(&split),
    ]);
    assert!(
        !stdout.contains("Avg. Split User Turns: 1.0000"),
        "{stdout}"
    );
    let stats = ok(&["stats", "--data", p(&split)]);
    assert!(stats.contains("Avg. Split User Turns:"));
}

#[test]
fn malformed_input_fails_with_a_locator() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("bad.jsonl");
    std::fs::write(&raw, "{\"id\": 1}\n").unwrap();
    let out = ita(&[
        "preprocess",
        "--input",
        p(&raw),
        "--out",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.jsonl:1"));
}

#[test]
fn usage_errors_come_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("arb.ckpt");
    let missing = dir.path().join("no-such-dir");
    let out = ita(&[
        "train",
        "--kind",
        "arbitrator",
        "--mode",
        "ita",
        "--data",
        p(&missing),
        "--out",
        p(&ckpt),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--agent-imaginator"));
    assert!(!ckpt.exists());

    let out = ita(&[
        "train",
        "--kind",
        "imaginator",
        "--data",
        p(&missing),
        "--out",
        p(&ckpt),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = ita(&[
        "train",
        "--kind",
        "imaginator",
        "--role",
        "agent",
        "--bogus",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_and_evaluate_an_imaginator() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), "separable", "40", "0");
    let ckpt = dir.path().join("agent.ckpt");
    let mut args = vec![
        "train",
        "--kind",
        "imaginator",
        "--role",
        "agent",
        "--data",
        p(&data),
        "--out",
        p(&ckpt),
    ];
    args.extend_from_slice(TINY);
    let out = ita(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("seed: 3") && stderr.contains("hidden = 8"),
        "{stderr}"
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("best validation bleu"));
    assert!(dir.path().join("agent.ckpt.toml").exists());
    assert!(dir.path().join("agent.ckpt.metrics.jsonl").exists());

    let ck = Checkpoint::load(&ckpt).unwrap();
    assert_eq!(ck.imaginator().unwrap().role(), Role::Agent);
    assert_eq!(ck.train.hidden, 8);

    let report = dir.path().join("report.txt");
    let eval = [
        "evaluate",
        "--checkpoint",
        p(&ckpt),
        "--data",
        p(&data),
        "--report",
        p(&report),
    ];
    let first = ok(&eval);
    let second = ok(&eval);
    assert_eq!(first, second);
    assert_eq!(std::fs::read_to_string(&report).unwrap(), first);
    let agent_n = data_lines(&data.join("imaginator_agent.jsonl"));
    let user_n = data_lines(&data.join("imaginator_user.jsonl"));
    assert!(
        first.contains(&format!("agent_target_samples: {agent_n}\n")),
        "{first}"
    );
    assert!(first.contains(&format!("user_target_samples: {user_n}\n")));
    assert!(first.contains("bleu_on_agent_targets: ") && first.contains("bleu_on_user_targets: "));

    let history = dir.path().join("history.txt");
    std::fs::write(&history, "user: i need a cheap meal over to you\n").unwrap();
    let g = [
        "generate",
        "--checkpoint",
        p(&ckpt),
        "--history",
        p(&history),
    ];
    assert_eq!(ok(&g), ok(&g));
}

#[test]
fn train_and_evaluate_a_baseline_arbitrator() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), "separable", "40", "0");
    let ckpt = dir.path().join("arb.ckpt");
    let mut args = vec![
        "train",
        "--kind",
        "arbitrator",
        "--mode",
        "baseline",
        "--encoder",
        "bigru",
        "--gru-hidden",
        "4",
        "--data",
        p(&data),
        "--out",
        p(&ckpt),
    ];
    args.extend_from_slice(TINY);
    assert!(ok(&args).contains("best validation accuracy"));
    let decisions = dir.path().join("decisions.jsonl");
    let report = ok(&[
        "evaluate",
        "--checkpoint",
        p(&ckpt),
        "--data",
        p(&data),
        "--decisions",
        p(&decisions),
    ]);
    let n = data_lines(&data.join("arbitrator.jsonl"));
    assert!(report.contains(&format!("samples: {n}\n")), "{report}");
    assert!(report.contains("random_accuracy: "));
    assert_eq!(
        std::fs::read_to_string(&decisions).unwrap().lines().count(),
        n
    );
    let confusion: u64 = report
        .lines()
        .filter(|l| l.starts_with("confusion_"))
        .map(|l| l.rsplit(' ').next().unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(confusion as usize, n);

    let test_only = ok(&[
        "evaluate",
        "--checkpoint",
        p(&ckpt),
        "--data",
        p(&data),
        "--split",
        "test",
    ]);
    assert!(!test_only.contains(&format!("samples: {n}\n")));
}

#[test]
fn vocabulary_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let sep = corpus(dir.path(), "separable", "30", "0");
    let mwz = corpus(dir.path(), "multiwoz-like", "30", "0");
    let ckpt = dir.path().join("user.ckpt");
    let mut args = vec![
        "train",
        "--kind",
        "imaginator",
        "--role",
        "user",
        "--data",
        p(&sep),
        "--out",
        p(&ckpt),
    ];
    args.extend_from_slice(TINY);
    ok(&args);
    let out = ita(&["evaluate", "--checkpoint", p(&ckpt), "--data", p(&mwz)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("vocabulary"));
}

fn save(path: &Path, spec: ModelSpec, vocab: &Vocabulary, params: ita_core::autodiff::ParamStore) {
    Checkpoint {
        meta: CheckpointMeta {
            model: spec,
            vocab_hash: vocab.hash(),
            epoch: 0,
            metric: "none".into(),
            best_value: None,
        },
        train: TrainConfig::default(),
        vocab: vocab.clone(),
        params,
        optimizer: None,
    }
    .save(path)
    .unwrap();
}

/// Imaginator whose output layer always prefers `token`.
fn rigged_imaginator(path: &Path, role: Role, vocab: &Vocabulary, token: &str) {
    let mut c = ImaginatorConfig::new(role, vocab.len());
    c.token_dim = 4;
    c.tag_dim = 2;
    c.hidden = 6;
    c.max_len = 3;
    let mut m = ImaginatorModel::new(c.clone(), 1).unwrap();
    let id = m.store.id("out.b").unwrap();
    let mut b = vec![0.0; vocab.len()];
    b[vocab.id(token)] = 50.0;
    *m.store.value_mut(id) = Tensor::new(vec![vocab.len()], b).unwrap();
    save(path, ModelSpec::Imaginator(c), vocab, m.store);
}

#[test]
fn demo_with_a_rigged_arbitrator_always_replies() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), "separable", "20", "0");
    let vocab = read_processed_dir(&data).unwrap().vocab;
    let agent = dir.path().join("agent.ckpt");
    let user = dir.path().join("user.ckpt");
    let arb = dir.path().join("arb.ckpt");
    rigged_imaginator(&agent, Role::Agent, &vocab, "certainly");
    rigged_imaginator(&user, Role::User, &vocab, "please");
    let mut c = ArbitratorConfig::new(vocab.len(), EncoderKind::TextCnn, ArbitratorMode::Ita);
    c.embed_dim = 4;
    c.filter_widths = vec![2];
    c.filters = 3;
    c.fusion_dim = 4;
    let mut m = ArbitratorModel::new(c.clone(), 2).unwrap();
    let id = m.store.id("fuse.classify.b").unwrap();
    *m.store.value_mut(id) = Tensor::new(vec![2], vec![-50.0, 50.0]).unwrap();
    save(&arb, ModelSpec::Arbitrator(c), &vocab, m.store);

    let transcript = dir.path().join("session.txt");
    let mut child = Command::new(env!("CARGO_BIN_EXE_ita"))
        .args([
            "demo",
            "--agent-imaginator",
            p(&agent),
            "--user-imaginator",
            p(&user),
            "--arbitrator",
            p(&arb),
        ])
        .args(["--transcript", p(&transcript)])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"i need a cheap meal\n\nsomewhere uptown please\n/quit\nnever read\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.matches("REPLY p=1.000").count(), 2, "{stdout}");
    assert_eq!(
        stdout
            .matches("agent: certainly certainly certainly")
            .count(),
        2,
        "{stdout}"
    );
    let saved = std::fs::read_to_string(&transcript).unwrap();
    assert_eq!(saved.lines().filter(|l| l.starts_with("user: ")).count(), 2);
    assert!(!saved.contains("never read"));
}
