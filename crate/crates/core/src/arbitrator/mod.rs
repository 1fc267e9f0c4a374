//! Wait/reply classifier over the history and the two imagined responses.

mod eval;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Graph, ParamStore, Segment, Var};
use crate::corpus::{Role, Utterance, Vocabulary, REPLY, WAIT};
use crate::error::{Error, Result};
use crate::imaginator::Imagine;
use crate::nn::{Embedding, Gru, Linear};
use crate::tensor::{softmax, Tensor};

pub use eval::{
    accuracy, evaluate_decisions, random_policy, write_decisions, ArbitratorReport, ClassCounts,
    DecisionRecord,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    TextCnn,
    BiGru,
}

impl EncoderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::TextCnn => "textcnn",
            Self::BiGru => "bigru",
        }
    }
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "textcnn" => Ok(Self::TextCnn),
            "bigru" => Ok(Self::BiGru),
            _ => Err(Error::Config(format!(
                "unknown encoder {s:?} (textcnn or bigru)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArbitratorMode {
    /// History plus both imagined responses.
    Ita,
    /// History only.
    Baseline,
}

impl ArbitratorMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ita => "ita",
            Self::Baseline => "baseline",
        }
    }
}

impl std::str::FromStr for ArbitratorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ita" => Ok(Self::Ita),
            "baseline" => Ok(Self::Baseline),
            _ => Err(Error::Config(format!(
                "unknown mode {s:?} (ita or baseline)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArbitratorConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub encoder: EncoderKind,
    pub mode: ArbitratorMode,
    pub filter_widths: Vec<usize>,
    pub filters: usize,
    pub gru_hidden: usize,
    pub fusion_dim: usize,
    pub max_history: usize,
    pub max_response: usize,
}

impl ArbitratorConfig {
    pub fn new(vocab_size: usize, encoder: EncoderKind, mode: ArbitratorMode) -> Self {
        Self {
            vocab_size,
            embed_dim: 100,
            encoder,
            mode,
            filter_widths: vec![3, 4, 5],
            filters: 100,
            gru_hidden: 128,
            fusion_dim: 128,
            max_history: 256,
            max_response: 40,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self.encoder {
            EncoderKind::TextCnn => self.filters * self.filter_widths.len(),
            EncoderKind::BiGru => 2 * self.gru_hidden,
        }
    }

    fn min_len(&self) -> usize {
        match self.encoder {
            EncoderKind::TextCnn => self.filter_widths.iter().copied().max().unwrap_or(1),
            EncoderKind::BiGru => 1,
        }
    }

    fn validate(&self) -> Result<()> {
        let mut dims = vec![
            self.vocab_size,
            self.embed_dim,
            self.fusion_dim,
            self.max_history,
            self.max_response,
        ];
        match self.encoder {
            EncoderKind::TextCnn => {
                dims.push(self.filters);
                dims.push(self.filter_widths.len());
                dims.extend(&self.filter_widths);
            }
            EncoderKind::BiGru => dims.push(self.gru_hidden),
        }
        if dims.contains(&0) {
            return Err(Error::Config(format!(
                "arbitrator sizes must be positive: {self:?}"
            )));
        }
        if self.vocab_size <= Vocabulary::USER_TAG {
            return Err(Error::Config(
                "vocabulary must contain the reserved tokens".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Encoder {
    TextCnn(Vec<(usize, Linear)>),
    BiGru { forward: Gru, backward: Gru },
}

#[derive(Clone, Debug)]
enum Head {
    Fusion {
        agent: Linear,
        user: Linear,
        combine: Linear,
        classify: Linear,
    },
    Direct(Linear),
}

/// Token ids ready for the encoder, plus what was imagined for them.
#[derive(Clone, Debug, PartialEq)]
pub struct ArbitratorInput {
    pub id: String,
    pub history: Vec<usize>,
    pub agent: Vec<usize>,
    pub user: Vec<usize>,
    pub label: u8,
    pub imagined_agent: Vec<String>,
    pub imagined_user: Vec<String>,
    pub generation_failed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    /// 1 selects the agent path (reply now), 0 the user path (wait).
    pub label: u8,
    /// `[p_wait, p_reply]`.
    pub probs: [f64; 2],
    pub imagined_agent: Vec<String>,
    pub imagined_user: Vec<String>,
    pub generation_failed: bool,
}

/// Argmax of `[p_wait, p_reply]` with ties going to reply.
pub fn decide(probs: [f64; 2]) -> u8 {
    if probs[REPLY as usize] >= probs[WAIT as usize] {
        REPLY
    } else {
        WAIT
    }
}

/// Each utterance as its role marker followed by its tokens, closed by EOS
/// and cut to the newest `max_len` ids.
pub fn history_ids(history: &[Utterance], vocab: &Vocabulary, max_len: usize) -> Vec<usize> {
    let mut ids = Vec::new();
    for u in history {
        ids.push(Vocabulary::role_tag(u.role));
        ids.extend(u.tokens.iter().map(|t| vocab.id(t)));
    }
    ids.push(Vocabulary::EOS);
    if ids.len() > max_len {
        ids.drain(..ids.len() - max_len);
    }
    ids
}

/// An imagined response as role marker plus tokens. Empty output becomes a
/// lone EOS and is reported as a failure.
pub fn response_ids(
    role: Role,
    tokens: &[String],
    vocab: &Vocabulary,
    max_len: usize,
) -> (Vec<usize>, bool) {
    let mut ids = vec![Vocabulary::role_tag(role)];
    let failed = tokens.is_empty();
    if failed {
        ids.push(Vocabulary::EOS);
    } else {
        ids.extend(tokens.iter().take(max_len).map(|t| vocab.id(t)));
    }
    (ids, failed)
}

#[derive(Clone, Debug)]
pub struct ArbitratorModel {
    pub config: ArbitratorConfig,
    pub store: ParamStore,
    embedding: Embedding,
    encoder: Encoder,
    head: Head,
}

impl ArbitratorModel {
    pub fn new(config: ArbitratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        Embedding::new(&mut store, "emb", c.vocab_size, c.embed_dim, &mut rng)?;
        match c.encoder {
            EncoderKind::TextCnn => {
                for &k in &c.filter_widths {
                    Linear::new(
                        &mut store,
                        &format!("conv{k}"),
                        k * c.embed_dim,
                        c.filters,
                        &mut rng,
                    )?;
                }
            }
            EncoderKind::BiGru => {
                Gru::new(&mut store, "gru.fwd", c.embed_dim, c.gru_hidden, &mut rng)?;
                Gru::new(&mut store, "gru.bwd", c.embed_dim, c.gru_hidden, &mut rng)?;
            }
        }
        let (f, d) = (c.feature_dim(), c.fusion_dim);
        match c.mode {
            ArbitratorMode::Ita => {
                Linear::new(&mut store, "fuse.agent", 2 * f, d, &mut rng)?;
                Linear::new(&mut store, "fuse.user", 2 * f, d, &mut rng)?;
                Linear::new(&mut store, "fuse.combine", 2 * d, d, &mut rng)?;
                Linear::new(&mut store, "fuse.classify", d, 2, &mut rng)?;
            }
            ArbitratorMode::Baseline => {
                Linear::new(&mut store, "cls", f, 2, &mut rng)?;
            }
        }
        Self::from_parts(config, store)
    }

    pub fn from_parts(config: ArbitratorConfig, store: ParamStore) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let embedding = Embedding::bind(&store, "emb")?;
        let check = |layer: &Linear, input: usize, output: usize| -> Result<()> {
            if layer.input != input || layer.output != output {
                return Err(Error::Dimension {
                    op: "arbitrator parameters",
                    left: vec![layer.input, layer.output],
                    right: vec![input, output],
                });
            }
            Ok(())
        };
        if embedding.rows != c.vocab_size || embedding.dim != c.embed_dim {
            return Err(Error::Dimension {
                op: "arbitrator embedding",
                left: vec![embedding.rows, embedding.dim],
                right: vec![c.vocab_size, c.embed_dim],
            });
        }
        let mut count = 1;
        let encoder = match c.encoder {
            EncoderKind::TextCnn => {
                let mut convs = Vec::new();
                for &k in &c.filter_widths {
                    let name = format!("conv{k}");
                    let layer = Linear::bind(&store, &name)?;
                    check(&layer, k * c.embed_dim, c.filters)?;
                    convs.push((k, layer));
                    count += 2;
                }
                Encoder::TextCnn(convs)
            }
            EncoderKind::BiGru => {
                let forward = Gru::bind(&store, "gru.fwd")?;
                let backward = Gru::bind(&store, "gru.bwd")?;
                for g in [&forward, &backward] {
                    if g.input != c.embed_dim || g.hidden != c.gru_hidden {
                        return Err(Error::Dimension {
                            op: "arbitrator gru",
                            left: vec![g.input, g.hidden],
                            right: vec![c.embed_dim, c.gru_hidden],
                        });
                    }
                }
                count += 6;
                Encoder::BiGru { forward, backward }
            }
        };
        let (f, d) = (c.feature_dim(), c.fusion_dim);
        let head = match c.mode {
            ArbitratorMode::Ita => {
                let agent = Linear::bind(&store, "fuse.agent")?;
                let user = Linear::bind(&store, "fuse.user")?;
                let combine = Linear::bind(&store, "fuse.combine")?;
                let classify = Linear::bind(&store, "fuse.classify")?;
                check(&agent, 2 * f, d)?;
                check(&user, 2 * f, d)?;
                check(&combine, 2 * d, d)?;
                check(&classify, d, 2)?;
                count += 8;
                Head::Fusion {
                    agent,
                    user,
                    combine,
                    classify,
                }
            }
            ArbitratorMode::Baseline => {
                let cls = Linear::bind(&store, "cls")?;
                check(&cls, f, 2)?;
                count += 2;
                Head::Direct(cls)
            }
        };
        if store.len() != count {
            return Err(Error::Contract(format!(
                "expected {count} arbitrator parameters, found {}",
                store.len()
            )));
        }
        Ok(Self {
            config,
            store,
            embedding,
            encoder,
            head,
        })
    }

    pub fn mode(&self) -> ArbitratorMode {
        self.config.mode
    }

    /// Encodes a batch of id sequences into `[S, F]` features with the
    /// configured encoder.
    pub fn encode(&self, g: &mut Graph, seqs: &[&[usize]]) -> Result<Var> {
        if seqs.is_empty() || seqs.iter().any(|s| s.is_empty()) {
            return Err(Error::Contract("cannot encode an empty sequence".into()));
        }
        match &self.encoder {
            Encoder::TextCnn(convs) => self.textcnn(g, convs, seqs),
            Encoder::BiGru { forward, backward } => self.bigru(g, *forward, *backward, seqs),
        }
    }

    /// Convolution over every window, ReLU, then max over time, for each
    /// filter width; the per-width features are concatenated. Trailing PAD
    /// ids are dropped and sequences shorter than the widest filter are
    /// padded back up to it.
    fn textcnn(&self, g: &mut Graph, convs: &[(usize, Linear)], seqs: &[&[usize]]) -> Result<Var> {
        let min_len = self.config.min_len();
        let mut ids = Vec::new();
        let mut segments = Vec::with_capacity(seqs.len());
        for s in seqs {
            let content = s.len()
                - s.iter()
                    .rev()
                    .take_while(|&&t| t == Vocabulary::PAD)
                    .count();
            let start = ids.len();
            ids.extend_from_slice(&s[..content]);
            ids.resize(start + content.max(min_len), Vocabulary::PAD);
            segments.push(Segment {
                start,
                len: ids.len() - start,
            });
        }
        let x = self.embedding.forward(g, &ids)?;
        let mut features = Vec::with_capacity(convs.len());
        for (k, conv) in convs {
            let (windows, out_segments) = g.unfold(x, *k, &segments)?;
            let c = conv.forward(g, windows)?;
            let c = g.relu(c);
            features.push(g.max_over_time(c, &out_segments)?);
        }
        g.concat_cols(&features)
    }

    fn run_gru(&self, g: &mut Graph, cell: Gru, seqs: &[Vec<usize>]) -> Result<Var> {
        let b = seqs.len();
        let steps = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let mut h = g.input(Tensor::zeros(&[b, cell.hidden]));
        for t in 0..steps {
            let ids: Vec<usize> = seqs
                .iter()
                .map(|s| s.get(t).copied().unwrap_or(Vocabulary::PAD))
                .collect();
            let x = self.embedding.forward(g, &ids)?;
            let hn = cell.step(g, x, h)?;
            let mask: Vec<bool> = seqs.iter().map(|s| t < s.len()).collect();
            h = if mask.iter().all(|&m| m) {
                hn
            } else {
                g.select_rows(&mask, hn, h)?
            };
        }
        Ok(h)
    }

    /// Final forward state concatenated with the final state of the
    /// backward pass over the reversed sequence.
    fn bigru(&self, g: &mut Graph, forward: Gru, backward: Gru, seqs: &[&[usize]]) -> Result<Var> {
        let fwd: Vec<Vec<usize>> = seqs.iter().map(|s| s.to_vec()).collect();
        let bwd: Vec<Vec<usize>> = seqs
            .iter()
            .map(|s| s.iter().rev().copied().collect())
            .collect();
        let hf = self.run_gru(g, forward, &fwd)?;
        let hb = self.run_gru(g, backward, &bwd)?;
        g.concat_cols(&[hf, hb])
    }

    /// Logits for `[wait, reply]` from encoded features: the two dialogue
    /// paths are projected separately, combined, and classified.
    pub fn fuse(
        &self,
        g: &mut Graph,
        his: Var,
        agent: Option<Var>,
        user: Option<Var>,
    ) -> Result<Var> {
        match (&self.head, agent, user) {
            (
                Head::Fusion {
                    agent: w1,
                    user: w2,
                    combine,
                    classify,
                },
                Some(a),
                Some(u),
            ) => {
                let pa = g.concat_cols(&[his, a])?;
                let pu = g.concat_cols(&[his, u])?;
                let da = w1.forward(g, pa)?;
                let du = w2.forward(g, pu)?;
                let both = g.concat_cols(&[da, du])?;
                let d = combine.forward(g, both)?;
                classify.forward(g, d)
            }
            (Head::Direct(cls), _, _) => cls.forward(g, his),
            (Head::Fusion { .. }, _, _) => Err(Error::Contract(
                "fusion needs both imagined responses".into(),
            )),
        }
    }

    /// `[wait, reply]` probabilities for given path features.
    pub fn fuse_paths(
        &self,
        c_his: &Tensor,
        c_agent: &Tensor,
        c_user: &Tensor,
    ) -> Result<Vec<[f64; 2]>> {
        let mut g = Graph::new(&self.store);
        let (h, a, u) = (
            g.input(c_his.clone()),
            g.input(c_agent.clone()),
            g.input(c_user.clone()),
        );
        let logits = self.fuse(&mut g, h, Some(a), Some(u))?;
        Ok(rows_to_probs(g.value(logits)))
    }

    /// Logits `[B, 2]` for a batch.
    pub fn logits(&self, g: &mut Graph, batch: &[&ArbitratorInput]) -> Result<Var> {
        let b = batch.len();
        match self.config.mode {
            ArbitratorMode::Baseline => {
                let seqs: Vec<&[usize]> = batch.iter().map(|s| s.history.as_slice()).collect();
                let his = self.encode(g, &seqs)?;
                self.fuse(g, his, None, None)
            }
            ArbitratorMode::Ita => {
                // one encoder pass over histories, agent and user responses
                let mut seqs: Vec<&[usize]> = Vec::with_capacity(3 * b);
                seqs.extend(batch.iter().map(|s| s.history.as_slice()));
                seqs.extend(batch.iter().map(|s| s.agent.as_slice()));
                seqs.extend(batch.iter().map(|s| s.user.as_slice()));
                let all = self.encode(g, &seqs)?;
                let rows = |from: usize| -> Vec<usize> { (from..from + b).collect() };
                let his = g.gather(all, &rows(0))?;
                let agent = g.gather(all, &rows(b))?;
                let user = g.gather(all, &rows(2 * b))?;
                self.fuse(g, his, Some(agent), Some(user))
            }
        }
    }

    /// Mean negative log-likelihood of the gold labels.
    pub fn batch_loss(&self, g: &mut Graph, batch: &[&ArbitratorInput]) -> Result<Var> {
        let logits = self.logits(g, batch)?;
        let targets: Vec<Option<usize>> = batch.iter().map(|s| Some(s.label as usize)).collect();
        let loss = g.cross_entropy(logits, &targets)?;
        Ok(g.scale(loss, 1.0 / batch.len() as f64))
    }

    pub fn train_step(&mut self, batch: &[&ArbitratorInput], opt: &mut Adam) -> Result<f64> {
        let (loss, grads) = {
            let mut g = Graph::new(&self.store);
            let loss = self.batch_loss(&mut g, batch)?;
            let value = g.value(loss).data()[0];
            (value, g.backward(loss)?)
        };
        if !loss.is_finite() {
            return Err(Error::Training(format!("arbitrator loss is {loss}")));
        }
        self.store.accumulate(&grads);
        opt.step(&mut self.store)?;
        Ok(loss)
    }

    pub fn probabilities(&self, batch: &[&ArbitratorInput]) -> Result<Vec<[f64; 2]>> {
        let mut g = Graph::new(&self.store);
        let logits = self.logits(&mut g, batch)?;
        Ok(rows_to_probs(g.value(logits)))
    }

    pub fn decide_batch(&self, batch: &[&ArbitratorInput]) -> Result<Vec<Decision>> {
        let probs = self.probabilities(batch)?;
        Ok(batch
            .iter()
            .zip(probs)
            .map(|(s, p)| Decision {
                label: decide(p),
                probs: p,
                imagined_agent: s.imagined_agent.clone(),
                imagined_user: s.imagined_user.clone(),
                generation_failed: s.generation_failed,
            })
            .collect())
    }

    /// Turns a history into model input, consulting the imaginators in ITA
    /// mode. The history must end with a user message.
    pub fn prepare(
        &self,
        id: &str,
        history: &[Utterance],
        label: u8,
        vocab: &Vocabulary,
        imaginators: Option<(&dyn Imagine, &dyn Imagine)>,
    ) -> Result<ArbitratorInput> {
        if history.last().map(|u| u.role) != Some(Role::User) {
            return Err(Error::Contract(format!(
                "history {id} must end with a user message"
            )));
        }
        if vocab.len() != self.config.vocab_size {
            return Err(Error::Contract(format!(
                "vocabulary has {} entries, model expects {}",
                vocab.len(),
                self.config.vocab_size
            )));
        }
        let mut input = ArbitratorInput {
            id: id.to_string(),
            history: history_ids(history, vocab, self.config.max_history),
            agent: Vec::new(),
            user: Vec::new(),
            label,
            imagined_agent: Vec::new(),
            imagined_user: Vec::new(),
            generation_failed: false,
        };
        if self.config.mode == ArbitratorMode::Ita {
            let (agent, user) = imaginators.ok_or_else(|| {
                Error::Contract("ITA mode needs agent and user imaginators".into())
            })?;
            if agent.role() != Role::Agent || user.role() != Role::User {
                return Err(Error::Contract(
                    "imaginators passed in the wrong role order".into(),
                ));
            }
            let ra = agent.imagine(history)?.tokens;
            let ru = user.imagine(history)?.tokens;
            let (a_ids, a_failed) = response_ids(Role::Agent, &ra, vocab, self.config.max_response);
            let (u_ids, u_failed) = response_ids(Role::User, &ru, vocab, self.config.max_response);
            input.agent = a_ids;
            input.user = u_ids;
            input.imagined_agent = if a_failed {
                vec![vocab.token(Vocabulary::EOS).to_string()]
            } else {
                ra
            };
            input.imagined_user = if u_failed {
                vec![vocab.token(Vocabulary::EOS).to_string()]
            } else {
                ru
            };
            input.generation_failed = a_failed || u_failed;
        }
        Ok(input)
    }
}

fn rows_to_probs(logits: &Tensor) -> Vec<[f64; 2]> {
    (0..logits.rows())
        .map(|r| {
            let p = softmax(logits.row_slice(r));
            [p[0], p[1]]
        })
        .collect()
}

/// Decision from history plus both imaginators.
pub fn ita_predict(
    model: &ArbitratorModel,
    vocab: &Vocabulary,
    history: &[Utterance],
    agent: &dyn Imagine,
    user: &dyn Imagine,
) -> Result<Decision> {
    if model.mode() != ArbitratorMode::Ita {
        return Err(Error::Contract(
            "ita_predict needs an ITA arbitrator".into(),
        ));
    }
    let input = model.prepare("live", history, REPLY, vocab, Some((agent, user)))?;
    Ok(model.decide_batch(&[&input])?.remove(0))
}

/// Decision from the history alone.
pub fn baseline_predict(
    model: &ArbitratorModel,
    vocab: &Vocabulary,
    history: &[Utterance],
) -> Result<Decision> {
    if model.mode() != ArbitratorMode::Baseline {
        return Err(Error::Contract(
            "baseline_predict needs a baseline arbitrator".into(),
        ));
    }
    let input = model.prepare("live", history, REPLY, vocab, None)?;
    Ok(model.decide_batch(&[&input])?.remove(0))
}
