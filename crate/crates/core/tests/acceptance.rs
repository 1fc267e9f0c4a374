//! End-to-end acceptance suite. Criteria run in order inside one test so
//! their timings do not overlap; each prints a PASS or FAIL line.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use ita_core::arbitrator::{
    accuracy, random_policy, ArbitratorConfig, ArbitratorInput, ArbitratorMode, ArbitratorModel,
    EncoderKind,
};
use ita_core::autodiff::{
    finite_difference_check, Adam, AdamConfig, Graph, ParamStore, Segment, Var,
};
use ita_core::corpus::pipeline::{derive, modify, run_preprocess, PreprocessOptions, ProcessedDir};
use ita_core::corpus::{
    ingest_str, synth, Dialogue, EncodedToken, Role, SourceFormat, TagCaps, REPLY,
};
use ita_core::imaginator::{
    beam_decode, bleu, evaluate_imaginator, greedy_decode, standard_beam, BeamImaginator,
    EncodedSample, ImaginatorConfig, ImaginatorModel, Imagine, StepModel, DEFAULT_ALPHA,
};
use ita_core::trainer::{
    evaluate_arbitrator, train_arbitrator, train_imaginator, Checkpoint, MetricsLog, TrainConfig,
};
use ita_core::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

type Verdict = std::result::Result<String, String>;
type Unary = fn(&mut Graph, Var) -> Result<Var>;
type Binary = fn(&mut Graph, Var, Var) -> Result<Var>;
type Criterion<'a> = (&'static str, Box<dyn FnOnce() -> Verdict + 'a>);

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, budget: Duration) -> std::result::Result<(), String> {
    if elapsed <= budget {
        Ok(())
    } else {
        Err(format!("took {elapsed:.1?}, budget {budget:?}"))
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
    )
    .unwrap()
}

/// Scalarizes a node with a fixed random linear functional.
fn project(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let shape = g.value(x).shape().to_vec();
    let r = g.input(random(&mut ChaCha8Rng::seed_from_u64(seed), &shape));
    let m = g.mul(x, r)?;
    Ok(g.sum_all(m))
}

fn corpus_text(records: &[synth::SynthRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).unwrap() + "\n")
        .collect()
}

fn processed(records: &[synth::SynthRecord], p_split: f64, seed: u64) -> ProcessedDir {
    let report = ingest_str(
        &corpus_text(records),
        &SourceFormat::MultiwozLike,
        "synthetic",
    )
    .unwrap();
    let modified = modify(
        &report.dialogues,
        &report.slot_values,
        &Default::default(),
        p_split,
        seed,
    );
    ProcessedDir::from_processed(derive(modified, 1, None), seed)
}

fn imaginator_config(vocab: usize, attention: bool) -> ImaginatorConfig {
    ImaginatorConfig {
        token_dim: 6,
        tag_dim: 2,
        hidden: 8,
        attention,
        caps: TagCaps {
            turn: 3,
            subturn: 2,
            max_history: 32,
        },
        max_len: 6,
        ..ImaginatorConfig::new(Role::Agent, vocab)
    }
}

fn textcnn_config(vocab: usize, mode: ArbitratorMode) -> ArbitratorConfig {
    ArbitratorConfig {
        embed_dim: 8,
        filter_widths: vec![2, 3],
        filters: 4,
        fusion_dim: 6,
        ..ArbitratorConfig::new(vocab, EncoderKind::TextCnn, mode)
    }
}

fn bigru_config(vocab: usize, mode: ArbitratorMode) -> ArbitratorConfig {
    ArbitratorConfig {
        embed_dim: 5,
        gru_hidden: 8,
        fusion_dim: 6,
        ..ArbitratorConfig::new(vocab, EncoderKind::BiGru, mode)
    }
}

fn random_history(rng: &mut ChaCha8Rng, vocab: usize, len: usize) -> Vec<EncodedToken> {
    (0..len)
        .map(|_| EncodedToken {
            token: rng.gen_range(0..vocab),
            role: rng.gen_range(1..3),
            turn: rng.gen_range(0..4),
            subturn: rng.gen_range(0..3),
        })
        .collect()
}

fn random_sample(rng: &mut ChaCha8Rng, vocab: usize) -> EncodedSample {
    let (hl, tl) = (rng.gen_range(1..6), rng.gen_range(0..4));
    EncodedSample {
        id: "s".into(),
        history: random_history(rng, vocab, hl),
        target: (0..tl).map(|_| rng.gen_range(4..vocab)).collect(),
    }
}

fn random_ids(rng: &mut ChaCha8Rng, vocab: usize, len: usize) -> Vec<usize> {
    (0..len).map(|_| rng.gen_range(1..vocab)).collect()
}

fn random_input(rng: &mut ChaCha8Rng, vocab: usize) -> ArbitratorInput {
    let (hl, al, ul) = (
        rng.gen_range(1..9),
        rng.gen_range(1..5),
        rng.gen_range(1..5),
    );
    ArbitratorInput {
        id: "s".into(),
        history: random_ids(rng, vocab, hl),
        agent: random_ids(rng, vocab, al),
        user: random_ids(rng, vocab, ul),
        label: rng.gen_range(0..2),
        imagined_agent: vec![],
        imagined_user: vec![],
        generation_failed: false,
    }
}

fn gradients() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut op =
        |name: &str, entries: Vec<(&str, Tensor)>, build: &dyn Fn(&mut Graph) -> Result<Var>| {
            let mut store = ParamStore::new();
            for (n, t) in entries {
                store.add(n, t).unwrap();
            }
            let r = finite_difference_check(&mut store, 1e-5, build).unwrap();
            worst.push((name.to_string(), r.max_rel_error));
        };
    let x35 = random(&mut rng, &[3, 5]);
    let unary: [(&str, Unary); 9] = [
        ("tanh", |g, x| Ok(g.tanh(x))),
        ("sigmoid", |g, x| Ok(g.sigmoid(x))),
        ("neg", |g, x| Ok(g.neg(x))),
        ("softmax", |g, x| Ok(g.softmax(x))),
        ("scale", |g, x| Ok(g.scale(x, -1.7))),
        ("add_scalar", |g, x| Ok(g.add_scalar(x, 0.3))),
        ("one_minus", |g, x| Ok(g.one_minus(x))),
        ("sum_all", |g, x| Ok(g.sum_all(x))),
        ("slice_cols", |g, x| g.slice_cols(x, 1, 3)),
    ];
    for (name, f) in unary {
        op(name, vec![("x", x35.clone())], &|g| {
            let x = g.param_named("x")?;
            let y = f(g, x)?;
            project(g, y, 11)
        });
    }
    op("log", vec![("x", x35.map(|v| v.abs() + 0.1))], &|g| {
        let x = g.param_named("x")?;
        let y = g.log(x)?;
        project(g, y, 12)
    });
    op(
        "relu",
        vec![("x", x35.map(|v| if v.abs() < 0.05 { 0.5 } else { v }))],
        &|g| {
            let x = g.param_named("x")?;
            let y = g.relu(x);
            project(g, y, 13)
        },
    );
    let (a, b) = (random(&mut rng, &[4, 3]), random(&mut rng, &[4, 3]));
    let binary: [(&str, Binary); 5] = [
        ("add", |g, a, b| g.add(a, b)),
        ("sub", |g, a, b| g.sub(a, b)),
        ("mul", |g, a, b| g.mul(a, b)),
        ("concat_cols", |g, a, b| g.concat_cols(&[a, b])),
        ("select_rows", |g, a, b| {
            g.select_rows(&[true, false, false, true], a, b)
        }),
    ];
    for (name, f) in binary {
        op(name, vec![("a", a.clone()), ("b", b.clone())], &|g| {
            let (a, b) = (g.param_named("a")?, g.param_named("b")?);
            let y = f(g, a, b)?;
            project(g, y, 14)
        });
    }
    op(
        "mul_scalar",
        vec![("a", a.clone()), ("s", random(&mut rng, &[1]))],
        &|g| {
            let (a, s) = (g.param_named("a")?, g.param_named("s")?);
            let y = g.mul(a, s)?;
            project(g, y, 15)
        },
    );
    op(
        "matmul",
        vec![
            ("a", random(&mut rng, &[3, 4])),
            ("b", random(&mut rng, &[4, 2])),
        ],
        &|g| {
            let (a, b) = (g.param_named("a")?, g.param_named("b")?);
            let y = g.matmul(a, b)?;
            project(g, y, 16)
        },
    );
    op(
        "add_bias",
        vec![("a", a.clone()), ("bias", random(&mut rng, &[3]))],
        &|g| {
            let (a, b) = (g.param_named("a")?, g.param_named("bias")?);
            let y = g.add_bias(a, b)?;
            project(g, y, 17)
        },
    );
    op("gather", vec![("table", random(&mut rng, &[5, 3]))], &|g| {
        let t = g.param_named("table")?;
        let y = g.gather(t, &[0, 3, 3, 1])?;
        project(g, y, 18)
    });
    let rows: Vec<(String, Tensor)> = (0..3)
        .map(|i| (format!("r{i}"), random(&mut rng, &[2, 3])))
        .collect();
    op(
        "stack",
        rows.iter().map(|(n, t)| (n.as_str(), t.clone())).collect(),
        &|g| {
            let parts = [
                g.param_named("r0")?,
                g.param_named("r1")?,
                g.param_named("r2")?,
            ];
            let y = g.stack(&parts)?;
            project(g, y, 19)
        },
    );
    let mut attn: Vec<(&str, Tensor)> = rows.iter().map(|(n, t)| (n.as_str(), t.clone())).collect();
    attn.push(("q", random(&mut rng, &[2, 3])));
    op("attention", attn, &|g| {
        let q = g.param_named("q")?;
        let parts = [
            g.param_named("r0")?,
            g.param_named("r1")?,
            g.param_named("r2")?,
        ];
        let keys = g.stack(&parts)?;
        let y = g.attention(q, keys, &[3, 2])?;
        project(g, y, 20)
    });
    let segs = [Segment { start: 0, len: 5 }, Segment { start: 5, len: 4 }];
    op("unfold", vec![("x", random(&mut rng, &[9, 2]))], &|g| {
        let x = g.param_named("x")?;
        let (y, _) = g.unfold(x, 3, &segs)?;
        project(g, y, 21)
    });
    op(
        "max_over_time",
        vec![("x", random(&mut rng, &[9, 3]))],
        &|g| {
            let x = g.param_named("x")?;
            let y = g.max_over_time(x, &segs)?;
            project(g, y, 22)
        },
    );
    let targets = [Some(1), None, Some(3)];
    let logits = random(&mut rng, &[3, 4]);
    op("cross_entropy", vec![("l", logits.clone())], &|g| {
        let l = g.param_named("l")?;
        g.cross_entropy(l, &targets)
    });
    op("nll_loss", vec![("l", logits)], &|g| {
        let l = g.param_named("l")?;
        let p = g.softmax(l);
        g.nll_loss(p, &targets)
    });

    let samples: Vec<EncodedSample> = (0..2).map(|_| random_sample(&mut rng, 12)).collect();
    let refs: Vec<&EncodedSample> = samples.iter().collect();
    let seq2seq = ImaginatorModel::new(imaginator_config(12, true), 31).unwrap();
    let r = finite_difference_check(&mut seq2seq.store.clone(), 1e-5, |g| {
        seq2seq.batch_loss(g, &refs)
    })
    .unwrap();
    worst.push(("lstm_seq2seq_attention".into(), r.max_rel_error));
    let inputs: Vec<ArbitratorInput> = (0..3).map(|_| random_input(&mut rng, 12)).collect();
    let refs: Vec<&ArbitratorInput> = inputs.iter().collect();
    for (name, config) in [
        ("textcnn", textcnn_config(12, ArbitratorMode::Ita)),
        ("bigru", bigru_config(12, ArbitratorMode::Ita)),
    ] {
        let model = ArbitratorModel::new(config, 32).unwrap();
        let r = finite_difference_check(&mut model.store.clone(), 1e-5, |g| {
            model.batch_loss(g, &refs)
        })
        .unwrap();
        worst.push((name.into(), r.max_rel_error));
    }

    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(120))?;
    let (name, err) = worst.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    check(
        *err <= 1e-4,
        format!(
            "{} checks, worst {name} at {err:.2e}, {elapsed:.1?}",
            worst.len()
        ),
    )
}

/// Three-token model whose next-token distribution is a pseudo-random
/// function of the whole prefix; token 2 ends the sequence.
struct Toy {
    seed: u64,
}

impl StepModel for Toy {
    type State = Vec<usize>;

    fn start(&self) -> Vec<usize> {
        Vec::new()
    }
    fn bos(&self) -> usize {
        0
    }
    fn eos(&self) -> usize {
        2
    }
    fn step(&self, items: &[(&Vec<usize>, usize)]) -> Result<Vec<(Vec<f64>, Vec<usize>)>> {
        Ok(items
            .iter()
            .map(|(prefix, prev)| {
                let mut state = (*prefix).clone();
                if !state.is_empty() || *prev != 0 {
                    state.push(*prev);
                }
                let mut key = self.seed;
                for &t in &state {
                    key = key.wrapping_mul(31).wrapping_add(t as u64 + 1);
                }
                let mut rng = ChaCha8Rng::seed_from_u64(key);
                let logits: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
                (ita_core::tensor::log_softmax(&logits), state)
            })
            .collect())
    }
}

/// Best sequence by exhaustive enumeration of every EOS-terminated
/// sequence up to `max_len` tokens and every unterminated one of exactly
/// `max_len`.
fn exhaustive(model: &Toy, max_len: usize) -> (Vec<usize>, f64) {
    let mut all: Vec<(Vec<usize>, f64)> = Vec::new();
    let mut stack = vec![(model.start(), model.bos(), Vec::new(), 0.0)];
    while let Some((state, prev, seq, lp)) = stack.pop() {
        let (probs, next) = model.step(&[(&state, prev)]).unwrap().pop().unwrap();
        for (t, p) in probs.iter().enumerate() {
            let mut s: Vec<usize> = seq.clone();
            s.push(t);
            if t == model.eos() || s.len() == max_len {
                all.push((s, lp + p));
            } else {
                stack.push((next.clone(), t, s, lp + p));
            }
        }
    }
    let score = |s: &(Vec<usize>, f64)| s.1 / (s.0.len() as f64).powf(DEFAULT_ALPHA);
    let best = all
        .iter()
        .min_by(|a, b| score(b).total_cmp(&score(a)).then_with(|| a.0.cmp(&b.0)))
        .unwrap();
    let mut tokens = best.0.clone();
    if tokens.last() == Some(&model.eos()) {
        tokens.pop();
    }
    (tokens, score(best))
}

fn decoding() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for i in 0..100 {
        let model = ImaginatorModel::new(imaginator_config(12, i % 2 == 0), 1000 + i).unwrap();
        let len = rng.gen_range(1..8);
        let stepper = model.stepper(&random_history(&mut rng, 12, len)).unwrap();
        let greedy = greedy_decode(&stepper, 6, DEFAULT_ALPHA).unwrap();
        if greedy != beam_decode(&stepper, 1, 6, DEFAULT_ALPHA).unwrap() {
            return Err(format!("pair {i}: greedy and width-1 beam differ"));
        }
    }
    for seed in 0..50 {
        let toy = Toy { seed };
        let (best, score) = exhaustive(&toy, 3);
        for d in [
            standard_beam(&toy, 27, 3, DEFAULT_ALPHA).unwrap(),
            beam_decode(&toy, 27, 3, DEFAULT_ALPHA).unwrap(),
        ] {
            if d.tokens != best || d.score != score {
                return Err(format!(
                    "toy {seed}: beam {:?} vs exhaustive {best:?}",
                    d.tokens
                ));
            }
        }
    }
    Ok("100 greedy/width-1 pairs identical; 50 toy models match exhaustive search".into())
}

#[derive(Deserialize)]
struct BleuFixture {
    name: String,
    candidates: Vec<String>,
    references: Vec<String>,
    bleu: f64,
}

fn words(v: &[String]) -> Vec<Vec<String>> {
    v.iter()
        .map(|s| s.split_whitespace().map(String::from).collect())
        .collect()
}

fn bleu_oracle() -> Verdict {
    let fixtures: Vec<BleuFixture> =
        serde_json::from_str(include_str!("fixtures/bleu.json")).unwrap();
    if fixtures.len() < 10 {
        return Err(format!("only {} fixtures", fixtures.len()));
    }
    let mut worst = 0.0f64;
    for f in &fixtures {
        let s = bleu(&words(&f.candidates), &words(&f.references), 4).unwrap();
        let err = (s.score - f.bleu).abs();
        if err >= 1e-9 {
            return Err(format!("{}: {} vs {}", f.name, s.score, f.bleu));
        }
        worst = worst.max(err);
    }
    let x = words(&["the train leaves at noon from the central station".into()]);
    let same = bleu(&x, &x, 4).unwrap().score;
    let disjoint = bleu(&x, &words(&["a b c d e".into()]), 4).unwrap().score;
    check(
        same == 1.0 && disjoint == 0.0,
        format!(
            "{} fixtures, worst error {worst:.1e}; BLEU(x,x) = {same}, disjoint = {disjoint}",
            fixtures.len()
        ),
    )
}

fn concatenated_turns(d: &Dialogue) -> Vec<(Role, usize, Vec<String>)> {
    let mut out: Vec<(Role, usize, Vec<String>)> = Vec::new();
    for u in &d.utterances {
        match out.last_mut() {
            Some((r, t, toks)) if *r == u.role && *t == u.turn => {
                toks.extend(u.tokens.iter().cloned())
            }
            _ => out.push((u.role, u.turn, u.tokens.clone())),
        }
    }
    out
}

fn pipeline(dir: &Path) -> Verdict {
    let records = synth::multiwoz_like(200, 4);
    let input = dir.join("source.jsonl");
    synth::write_records(&input, &records).unwrap();
    let opts = |out: &str, p_split: f64| PreprocessOptions {
        input: input.clone(),
        format: SourceFormat::MultiwozLike,
        p_split,
        seed: 4,
        min_freq: 1,
        out_dir: dir.join(out),
        slot_values: None,
        vocab: None,
    };
    let first = run_preprocess(&opts("a", 0.5)).unwrap();
    let second = run_preprocess(&opts("b", 0.5)).unwrap();
    for (name, _, _) in &first.files {
        let a = std::fs::read(dir.join("a").join(name)).unwrap();
        let b = std::fs::read(dir.join("b").join(name)).unwrap();
        if a != b {
            return Err(format!("{name} differs between equal-seed runs"));
        }
    }
    if first.files != second.files {
        return Err("manifests differ".into());
    }

    let report = ingest_str(
        &corpus_text(&records),
        &SourceFormat::MultiwozLike,
        "synthetic",
    )
    .unwrap();
    let whole = modify(
        &report.dialogues,
        &report.slot_values,
        &Default::default(),
        0.0,
        4,
    );
    let mut split_turns = 0;
    for p in [0.5, 1.0] {
        let split = modify(
            &report.dialogues,
            &report.slot_values,
            &Default::default(),
            p,
            4,
        );
        for (w, s) in whole.iter().zip(&split) {
            if concatenated_turns(w) != concatenated_turns(s) {
                return Err(format!(
                    "dialogue {} not reconstructed at p_split {p}",
                    w.id
                ));
            }
            split_turns += s.utterances.len() - w.utterances.len();
        }
    }
    if split_turns == 0 {
        return Err("no user message was split".into());
    }
    let unsplit = run_preprocess(&opts("c", 0.0)).unwrap();
    check(
        unsplit.stats.avg_split_user_turns == 1.0,
        format!(
            "{} files byte-identical; {} dialogues reconstructed from {split_turns} extra segments; p_split 0 gives {}",
            first.files.len(),
            whole.len(),
            unsplit.stats.avg_split_user_turns
        ),
    )
}

fn random_baseline() -> Verdict {
    let start = Instant::now();
    let corpora = [
        ("separable", processed(&synth::separable(2000, 5), 0.0, 5)),
        (
            "multiwoz-like p0.5",
            processed(&synth::multiwoz_like(500, 5), 0.5, 5),
        ),
        (
            "multiwoz-like p1",
            processed(&synth::multiwoz_like(500, 6), 1.0, 6),
        ),
    ];
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, data) in &corpora {
        let gold: Vec<u8> = data.arbitrator.iter().map(|s| s.label).collect();
        let prior = gold.iter().filter(|&&l| l == REPLY).count() as f64 / gold.len() as f64;
        // a fair coin is right with probability 0.5 whatever the label mix
        let expected = 0.5 * prior + 0.5 * (1.0 - prior);
        let acc = accuracy(&random_policy(gold.len(), 0.5, 5), &gold).unwrap();
        ok &= (acc - expected).abs() <= 0.03;
        lines.push(format!(
            "{name}: n={} reply prior {prior:.3} random {acc:.4} expected {expected:.3}",
            gold.len()
        ));
    }
    within(start.elapsed(), Duration::from_secs(60))?;
    check(ok, lines.join("; "))
}

fn separable_config() -> TrainConfig {
    TrainConfig {
        seed: 11,
        epochs: 10,
        patience: 2,
        lr: 0.01,
        token_dim: 32,
        tag_dim: 4,
        hidden: 48,
        max_history: 48,
        max_len: 12,
        beam_width: 4,
        valid_limit: 200,
        embed_dim: 32,
        filter_widths: vec![2, 3, 4],
        filters: 32,
        gru_hidden: 32,
        fusion_dim: 64,
        max_response: 16,
        ..TrainConfig::default()
    }
}

fn separable() -> Verdict {
    let start = Instant::now();
    let data = processed(&synth::separable(2000, 11), 0.0, 11);
    let cfg = separable_config();
    let mut log = MetricsLog::in_memory();
    let agent = train_imaginator(&data, Role::Agent, &cfg, &mut log).unwrap();
    let user = train_imaginator(&data, Role::User, &cfg, &mut log).unwrap();
    let mut bleus = Vec::new();
    for run in [&agent, &user] {
        let g = BeamImaginator::new(&run.model, &data.vocab);
        let s = evaluate_imaginator(&g, &agent.split.test, &user.split.test).unwrap();
        bleus.push((s.bleu_on_agent_targets, s.bleu_on_user_targets));
    }
    let (a, u) = (bleus[0], bleus[1]);
    let asymmetric = a.0 >= 3.0 * a.1 && a.0 > 0.0 && u.1 >= 3.0 * u.0 && u.1 > 0.0;
    let ita = train_arbitrator(
        &data,
        EncoderKind::TextCnn,
        ArbitratorMode::Ita,
        &cfg,
        Some((&agent.model, &user.model)),
        &mut log,
    )
    .unwrap();
    let base = train_arbitrator(
        &data,
        EncoderKind::TextCnn,
        ArbitratorMode::Baseline,
        &cfg,
        None,
        &mut log,
    )
    .unwrap();
    let (ita_acc, base_acc) = (ita.outcome.best_metric, base.outcome.best_metric);
    let epochs = [&agent.outcome, &user.outcome, &ita.outcome, &base.outcome].map(|o| o.epochs_run);
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(15 * 60))?;
    check(
        asymmetric && ita_acc >= base_acc && ita_acc >= 0.9 && base_acc >= 0.9 && epochs.iter().all(|&e| e <= 10),
        format!(
            "agent imaginator BLEU {:.4} on agent vs {:.4} on user targets; user imaginator {:.4} on user vs {:.4} on agent; \
             validation accuracy ITA {ita_acc:.4} baseline {base_acc:.4}; epochs {epochs:?}; {elapsed:.0?}",
            a.0, a.1, u.1, u.0
        ),
    )
}

fn directional() -> Verdict {
    let start = Instant::now();
    let cfg = TrainConfig::default();
    let data = processed(&synth::multiwoz_like(500, 21), cfg.p_split, 21);
    let mut log = MetricsLog::in_memory();
    let agent = train_imaginator(&data, Role::Agent, &cfg, &mut log).unwrap();
    let user = train_imaginator(&data, Role::User, &cfg, &mut log).unwrap();
    let ita = train_arbitrator(
        &data,
        EncoderKind::TextCnn,
        ArbitratorMode::Ita,
        &cfg,
        Some((&agent.model, &user.model)),
        &mut log,
    )
    .unwrap();
    let base = train_arbitrator(
        &data,
        EncoderKind::TextCnn,
        ArbitratorMode::Baseline,
        &cfg,
        None,
        &mut log,
    )
    .unwrap();
    let (ga, gu) = (
        BeamImaginator::new(&agent.model, &data.vocab),
        BeamImaginator::new(&user.model, &data.vocab),
    );
    let pair: (&dyn Imagine, &dyn Imagine) = (&ga, &gu);
    let (ri, _) = evaluate_arbitrator(
        &ita.model,
        &data.vocab,
        &ita.split.test,
        Some(pair),
        cfg.seed,
    )
    .unwrap();
    let (rb, _) =
        evaluate_arbitrator(&base.model, &data.vocab, &base.split.test, None, cfg.seed).unwrap();
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(2 * 3600))?;
    check(
        ri.accuracy >= rb.accuracy,
        format!(
            "test accuracy ITA {:.4} baseline {:.4} random {:.4} (n={}, reply prior {:.3}); \
             imaginator validation BLEU agent {:.4} user {:.4}; {elapsed:.0?}",
            ri.accuracy,
            rb.accuracy,
            ri.random_accuracy,
            ri.total,
            ri.reply_prior,
            agent.outcome.best_metric,
            user.outcome.best_metric
        ),
    )
}

fn persistence(dir: &Path) -> Verdict {
    let data = processed(&synth::separable(60, 8), 0.0, 8);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 8,
        token_dim: 6,
        tag_dim: 2,
        hidden: 8,
        max_history: 24,
        max_len: 8,
        beam_width: 3,
        valid_limit: 10,
        ..TrainConfig::default()
    };
    let run = train_imaginator(&data, Role::Agent, &cfg, &mut MetricsLog::in_memory()).unwrap();
    let ckpt = run.checkpoint(&cfg, &data.vocab);
    let path = dir.join("agent.ckpt");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let exact = ckpt
        .params
        .iter()
        .zip(loaded.params.iter())
        .all(|((_, a), (_, b))| {
            a.name == b.name
                && a.value.data().iter().map(|v| v.to_bits()).eq(b
                    .value
                    .data()
                    .iter()
                    .map(|v| v.to_bits()))
        });
    let bytes = std::fs::read(&path).unwrap();
    if !exact || loaded.to_bytes().unwrap() != bytes {
        return Err("round trip is not bit-exact".into());
    }
    let model = loaded.imaginator().unwrap();
    let histories: Vec<_> = data.agent.iter().take(50).map(|s| &s.history).collect();
    for h in &histories {
        let before = run.model.generate(h, &data.vocab, cfg.beam_width).unwrap();
        let after = model.generate(h, &data.vocab, cfg.beam_width).unwrap();
        if before.tokens != after.tokens || before.score.to_bits() != after.score.to_bits() {
            return Err("decode differs after reload".into());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut rejected = 0;
    for _ in 0..100 {
        let mut bad = bytes.clone();
        let i = rng.gen_range(0..bad.len());
        bad[i] ^= 1 << rng.gen_range(0..8);
        rejected += usize::from(Checkpoint::from_bytes(&bad).is_err());
        let cut = rng.gen_range(0..bytes.len());
        rejected += usize::from(Checkpoint::from_bytes(&bytes[..cut]).is_err());
    }
    check(
        rejected == 200 && histories.len() == 50,
        format!(
            "{} bytes bit-exact; 50 decodes identical; {rejected}/200 corrupted or truncated files rejected",
            bytes.len()
        ),
    )
}

fn overfit() -> Verdict {
    let opt_config = AdamConfig {
        lr: 0.01,
        ..AdamConfig::default()
    };
    let mut lines = Vec::new();
    let mut ok = true;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let sample = random_sample(&mut rng, 12);
    let mut model = ImaginatorModel::new(imaginator_config(12, true), 9).unwrap();
    let mut opt = Adam::new(opt_config.clone(), &model.store);
    let (mut loss, mut steps) = (f64::INFINITY, 0);
    while steps < 500 && loss >= 0.1 {
        loss = model.train_step(&[&sample], &mut opt).unwrap();
        steps += 1;
    }
    ok &= loss < 0.1;
    lines.push(format!("lstm seq2seq loss {loss:.4} after {steps} steps"));
    let input = random_input(&mut rng, 30);
    for (name, config) in [
        ("textcnn", textcnn_config(30, ArbitratorMode::Ita)),
        ("bigru", bigru_config(30, ArbitratorMode::Ita)),
    ] {
        let mut model = ArbitratorModel::new(config, 9).unwrap();
        let mut opt = Adam::new(opt_config.clone(), &model.store);
        let (mut loss, mut steps) = (f64::INFINITY, 0);
        while steps < 500 && loss >= 0.1 {
            loss = model.train_step(&[&input], &mut opt).unwrap();
            steps += 1;
        }
        ok &= loss < 0.1;
        lines.push(format!("{name} loss {loss:.4} after {steps} steps"));
    }
    check(ok, lines.join("; "))
}

/// Writes past the test harness's output capture so verdicts show up in
/// a plain `cargo test` log.
fn report(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

/// Criteria whose outcome depends on a small held-out sample rather than
/// on correctness of the code: their verdict is printed but does not fail
/// the run.
const REPORTED_ONLY: &[usize] = &[7];

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let criteria: Vec<Criterion> = vec![
        ("gradient suite", Box::new(gradients)),
        ("decoding equivalence", Box::new(decoding)),
        ("BLEU oracle", Box::new(bleu_oracle)),
        ("pipeline determinism", Box::new(|| pipeline(dir.path()))),
        ("random baseline", Box::new(random_baseline)),
        ("separable end-to-end", Box::new(separable)),
        ("directional reproduction", Box::new(directional)),
        ("persistence", Box::new(|| persistence(dir.path()))),
        ("overfit one sample", Box::new(overfit)),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let n = i + 1;
        let verdict = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match verdict {
            Ok(detail) => report(&format!("criterion {n} {name}: PASS ({detail})")),
            Err(detail) => {
                report(&format!("criterion {n} {name}: FAIL ({detail})"));
                failed.push(n);
            }
        }
    }
    let (reported, gating): (Vec<usize>, Vec<usize>) =
        failed.into_iter().partition(|n| REPORTED_ONLY.contains(n));
    if !reported.is_empty() {
        report(&format!("reported but not asserted: {reported:?}"));
    }
    assert!(gating.is_empty(), "failed criteria: {gating:?}");
}
