//! Role-conditioned next-utterance generator: an LSTM encoder over tagged
//! history tokens and an LSTM decoder with optional dot attention.

mod bleu;
mod decode;
mod eval;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Graph, ParamStore, Var};
use crate::corpus::{
    encode_history, EncodedToken, ImaginatorSample, Role, TagCaps, Utterance, Vocabulary,
};
use crate::error::{Error, Result};
use crate::nn::{Embedding, Linear, Lstm};
use crate::tensor::{log_softmax, Tensor};

pub use bleu::{bleu, BleuStats};
pub use decode::{beam_decode, greedy_decode, standard_beam, Decoded, StepModel, DEFAULT_ALPHA};
pub use eval::{
    evaluate_imaginator, history_key, write_transcripts, BeamImaginator, ImaginatorScores, Imagine,
    Imagined, LookupImaginator, TranscriptRecord,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImaginatorConfig {
    pub role: Role,
    pub vocab_size: usize,
    pub token_dim: usize,
    pub tag_dim: usize,
    pub hidden: usize,
    pub attention: bool,
    pub caps: TagCaps,
    pub beam_width: usize,
    pub max_len: usize,
    pub alpha: f64,
}

impl ImaginatorConfig {
    pub fn new(role: Role, vocab_size: usize) -> Self {
        Self {
            role,
            vocab_size,
            token_dim: 100,
            tag_dim: 8,
            hidden: 128,
            attention: true,
            caps: TagCaps::default(),
            beam_width: 4,
            max_len: 40,
            alpha: DEFAULT_ALPHA,
        }
    }

    fn validate(&self) -> Result<()> {
        let dims = [
            self.vocab_size,
            self.token_dim,
            self.tag_dim,
            self.hidden,
            self.beam_width,
            self.max_len,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!(
                "imaginator sizes must be positive: {self:?}"
            )));
        }
        if self.vocab_size <= Vocabulary::EOS {
            return Err(Error::Config(
                "vocabulary must contain the reserved tokens".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Layers {
    token: Embedding,
    role: Embedding,
    turn: Embedding,
    subturn: Embedding,
    encoder: Lstm,
    decoder: Lstm,
    attention: Option<Linear>,
    output: Linear,
}

impl Layers {
    fn bind(store: &ParamStore, attention: bool) -> Result<Self> {
        Ok(Self {
            token: Embedding::bind(store, "emb.token")?,
            role: Embedding::bind(store, "emb.role")?,
            turn: Embedding::bind(store, "emb.turn")?,
            subturn: Embedding::bind(store, "emb.subturn")?,
            encoder: Lstm::bind(store, "enc")?,
            decoder: Lstm::bind(store, "dec")?,
            attention: if attention {
                Some(Linear::bind(store, "attn")?)
            } else {
                None
            },
            output: Linear::bind(store, "out")?,
        })
    }
}

/// A history ready for the encoder and a target as token ids without
/// BOS/EOS.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSample {
    pub id: String,
    pub history: Vec<EncodedToken>,
    pub target: Vec<usize>,
}

/// Encoder outputs on a graph.
pub struct Encoded {
    pub states: Vec<Var>,
    pub keys: Var,
    pub lengths: Vec<usize>,
    pub h: Var,
    pub c: Var,
}

#[derive(Clone, Debug)]
pub struct ImaginatorModel {
    pub config: ImaginatorConfig,
    pub store: ParamStore,
    layers: Layers,
}

impl ImaginatorModel {
    pub fn new(config: ImaginatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let (t, h) = (c.tag_dim, c.hidden);
        Embedding::new(&mut store, "emb.token", c.vocab_size, c.token_dim, &mut rng)?;
        Embedding::new(&mut store, "emb.role", 3, t, &mut rng)?;
        Embedding::new(&mut store, "emb.turn", c.caps.turn + 1, t, &mut rng)?;
        Embedding::new(&mut store, "emb.subturn", c.caps.subturn + 1, t, &mut rng)?;
        Lstm::new(&mut store, "enc", c.token_dim + 3 * t, h, &mut rng)?;
        Lstm::new(&mut store, "dec", c.token_dim, h, &mut rng)?;
        if c.attention {
            Linear::new(&mut store, "attn", 2 * h, h, &mut rng)?;
        }
        Linear::new(&mut store, "out", h, c.vocab_size, &mut rng)?;
        Self::from_parts(config, store)
    }

    /// Rebuilds a model around an existing parameter store, checking that
    /// every shape agrees with the config.
    pub fn from_parts(config: ImaginatorConfig, store: ParamStore) -> Result<Self> {
        config.validate()?;
        let layers = Layers::bind(&store, config.attention)?;
        let c = &config;
        let expect = |name: &str, shape: &[usize]| -> Result<()> {
            let got = store.value(store.id(name)?).shape();
            if got != shape {
                return Err(Error::Dimension {
                    op: "imaginator parameters",
                    left: got.to_vec(),
                    right: shape.to_vec(),
                });
            }
            Ok(())
        };
        let (t, h) = (c.tag_dim, c.hidden);
        expect("emb.token", &[c.vocab_size, c.token_dim])?;
        expect("emb.role", &[3, t])?;
        expect("emb.turn", &[c.caps.turn + 1, t])?;
        expect("emb.subturn", &[c.caps.subturn + 1, t])?;
        expect("enc.w", &[c.token_dim + 3 * t, 4 * h])?;
        expect("enc.u", &[h, 4 * h])?;
        expect("dec.w", &[c.token_dim, 4 * h])?;
        expect("dec.u", &[h, 4 * h])?;
        if c.attention {
            expect("attn.w", &[2 * h, h])?;
        }
        expect("out.w", &[h, c.vocab_size])?;
        expect("out.b", &[c.vocab_size])?;
        let expected = if c.attention { 14 } else { 12 };
        if store.len() != expected {
            return Err(Error::Contract(format!(
                "expected {expected} imaginator parameters, found {}",
                store.len()
            )));
        }
        Ok(Self {
            config,
            store,
            layers,
        })
    }

    pub fn role(&self) -> Role {
        self.config.role
    }

    pub fn encode_sample(&self, sample: &ImaginatorSample, vocab: &Vocabulary) -> EncodedSample {
        EncodedSample {
            id: sample.id.clone(),
            history: encode_history(&sample.history, vocab, &self.config.caps),
            target: sample.target.tokens.iter().map(|t| vocab.id(t)).collect(),
        }
    }

    /// Runs the encoder over a padded batch. Padded rows carry their last
    /// state forward, so `h, c` are each history's final state.
    pub fn encode(&self, g: &mut Graph, histories: &[&[EncodedToken]]) -> Result<Encoded> {
        if histories.is_empty() || histories.iter().any(|h| h.is_empty()) {
            return Err(Error::Contract("cannot encode an empty history".into()));
        }
        let l = &self.layers;
        let b = histories.len();
        let lengths: Vec<usize> = histories.iter().map(|h| h.len()).collect();
        let steps = *lengths.iter().max().expect("non-empty batch");
        let mut h = g.input(Tensor::zeros(&[b, self.config.hidden]));
        let mut c = g.input(Tensor::zeros(&[b, self.config.hidden]));
        let mut states = Vec::with_capacity(steps);
        for t in 0..steps {
            let pick = |f: fn(&EncodedToken) -> usize| -> Vec<usize> {
                histories
                    .iter()
                    .map(|hist| hist.get(t).map(f).unwrap_or(0))
                    .collect()
            };
            let parts = [
                l.token.forward(g, &pick(|e| e.token))?,
                l.role.forward(g, &pick(|e| e.role))?,
                l.turn.forward(g, &pick(|e| e.turn))?,
                l.subturn.forward(g, &pick(|e| e.subturn))?,
            ];
            let x = g.concat_cols(&parts)?;
            let (hn, cn) = l.encoder.step(g, x, h, c)?;
            let mask: Vec<bool> = lengths.iter().map(|&len| t < len).collect();
            if mask.iter().all(|&m| m) {
                (h, c) = (hn, cn);
            } else {
                h = g.select_rows(&mask, hn, h)?;
                c = g.select_rows(&mask, cn, c)?;
            }
            states.push(h);
        }
        let keys = g.stack(&states)?;
        Ok(Encoded {
            states,
            keys,
            lengths,
            h,
            c,
        })
    }

    /// Logits for decoder output `h` given the encoder context.
    fn project(&self, g: &mut Graph, h: Var, keys: Var, lengths: &[usize]) -> Result<Var> {
        let l = &self.layers;
        let features = match l.attention {
            Some(attn) => {
                let ctx = g.attention(h, keys, lengths)?;
                let joined = g.concat_cols(&[ctx, h])?;
                let a = attn.forward(g, joined)?;
                g.tanh(a)
            }
            None => h,
        };
        l.output.forward(g, features)
    }

    /// Teacher-forced negative log-likelihood of `BOS target EOS`, summed over
    /// target positions and averaged over the batch.
    pub fn batch_loss(&self, g: &mut Graph, batch: &[&EncodedSample]) -> Result<Var> {
        let v = self.config.vocab_size;
        for s in batch {
            if let Some(&bad) = s.target.iter().find(|&&t| t >= v) {
                return Err(Error::Index {
                    index: bad,
                    size: v,
                });
            }
        }
        let histories: Vec<&[EncodedToken]> = batch.iter().map(|s| s.history.as_slice()).collect();
        let enc = self.encode(g, &histories)?;
        let steps = batch.iter().map(|s| s.target.len() + 1).max().unwrap_or(1);
        let (mut h, mut c) = (enc.h, enc.c);
        let mut total: Option<Var> = None;
        for t in 0..steps {
            let inputs: Vec<usize> = batch
                .iter()
                .map(|s| match t {
                    0 => Vocabulary::BOS,
                    _ => s.target.get(t - 1).copied().unwrap_or(Vocabulary::PAD),
                })
                .collect();
            let targets: Vec<Option<usize>> = batch
                .iter()
                .map(|s| match t.cmp(&s.target.len()) {
                    std::cmp::Ordering::Less => Some(s.target[t]),
                    std::cmp::Ordering::Equal => Some(Vocabulary::EOS),
                    std::cmp::Ordering::Greater => None,
                })
                .collect();
            let x = self.layers.token.forward(g, &inputs)?;
            (h, c) = self.layers.decoder.step(g, x, h, c)?;
            let logits = self.project(g, h, enc.keys, &enc.lengths)?;
            let loss = g.cross_entropy(logits, &targets)?;
            total = Some(match total {
                Some(acc) => g.add(acc, loss)?,
                None => loss,
            });
        }
        let total = total.expect("at least one decode step");
        Ok(g.scale(total, 1.0 / batch.len() as f64))
    }

    /// One optimizer update on a batch; returns the loss before the update.
    pub fn train_step(&mut self, batch: &[&EncodedSample], opt: &mut Adam) -> Result<f64> {
        let (loss, grads) = {
            let mut g = Graph::new(&self.store);
            let loss = self.batch_loss(&mut g, batch)?;
            let value = g.value(loss).data()[0];
            (value, g.backward(loss)?)
        };
        if !loss.is_finite() {
            return Err(Error::Training(format!("imaginator loss is {loss}")));
        }
        self.store.accumulate(&grads);
        opt.step(&mut self.store)?;
        Ok(loss)
    }

    /// Freezes the encoder output for one history so decoding can proceed
    /// step by step.
    pub fn stepper(&self, history: &[EncodedToken]) -> Result<Stepper<'_>> {
        let mut g = Graph::new(&self.store);
        let enc = self.encode(&mut g, &[history])?;
        Ok(Stepper {
            model: self,
            keys: g.value(enc.keys).clone(),
            h: g.value(enc.h).data().to_vec(),
            c: g.value(enc.c).data().to_vec(),
        })
    }

    /// Beam-decodes a reply to `history` with the given width.
    pub fn generate(
        &self,
        history: &[Utterance],
        vocab: &Vocabulary,
        beam_width: usize,
    ) -> Result<Decoded> {
        let encoded = encode_history(history, vocab, &self.config.caps);
        if encoded.is_empty() {
            return Err(Error::Contract(
                "cannot generate from an empty history".into(),
            ));
        }
        let stepper = self.stepper(&encoded)?;
        beam_decode(&stepper, beam_width, self.config.max_len, self.config.alpha)
    }

    /// Loads pretrained token vectors from a whitespace-separated text file
    /// (`token v1 ... vd`); returns how many vocabulary rows were replaced.
    pub fn load_embeddings(&mut self, path: &Path, vocab: &Vocabulary) -> Result<usize> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dim = self.config.token_dim;
        let table = self.layers.token.table;
        let mut loaded = 0;
        for (n, line) in text.lines().enumerate() {
            let mut fields = line.split_whitespace();
            let Some(word) = fields.next() else { continue };
            let values: Vec<f64> = fields
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Ingestion {
                    locator: format!("{}:{}", path.display(), n + 1),
                    reason: format!("bad vector value: {e}"),
                })?;
            if values.len() != dim {
                return Err(Error::Ingestion {
                    locator: format!("{}:{}", path.display(), n + 1),
                    reason: format!("expected {dim} values, found {}", values.len()),
                });
            }
            if !vocab.contains(word) {
                continue;
            }
            let row = vocab.id(word);
            self.store.value_mut(table).data_mut()[row * dim..(row + 1) * dim]
                .copy_from_slice(&values);
            loaded += 1;
        }
        Ok(loaded)
    }
}

/// Decoder state for one hypothesis.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

/// A model bound to one encoded history.
pub struct Stepper<'m> {
    model: &'m ImaginatorModel,
    keys: Tensor,
    h: Vec<f64>,
    c: Vec<f64>,
}

impl StepModel for Stepper<'_> {
    type State = DecoderState;

    fn start(&self) -> DecoderState {
        DecoderState {
            h: self.h.clone(),
            c: self.c.clone(),
        }
    }

    fn bos(&self) -> usize {
        Vocabulary::BOS
    }

    fn eos(&self) -> usize {
        Vocabulary::EOS
    }

    fn step(&self, items: &[(&DecoderState, usize)]) -> Result<Vec<(Vec<f64>, DecoderState)>> {
        let m = self.model;
        let k = items.len();
        let hd = m.config.hidden;
        let mut g = Graph::new(&m.store);
        let h = g.input(Tensor::new(
            vec![k, hd],
            items
                .iter()
                .flat_map(|(s, _)| s.h.iter().copied())
                .collect(),
        )?);
        let c = g.input(Tensor::new(
            vec![k, hd],
            items
                .iter()
                .flat_map(|(s, _)| s.c.iter().copied())
                .collect(),
        )?);
        let tokens: Vec<usize> = items.iter().map(|&(_, t)| t).collect();
        let x = m.layers.token.forward(&mut g, &tokens)?;
        let (h, c) = m.layers.decoder.step(&mut g, x, h, c)?;
        let steps = self.keys.shape()[1];
        let keys = g.input(Tensor::new(vec![k, steps, hd], self.keys.data().repeat(k))?);
        let logits = m.project(&mut g, h, keys, &vec![steps; k])?;
        let (lv, hv, cv) = (g.value(logits), g.value(h), g.value(c));
        Ok((0..k)
            .map(|r| {
                (
                    log_softmax(lv.row_slice(r)),
                    DecoderState {
                        h: hv.row_slice(r).to_vec(),
                        c: cv.row_slice(r).to_vec(),
                    },
                )
            })
            .collect())
    }
}
