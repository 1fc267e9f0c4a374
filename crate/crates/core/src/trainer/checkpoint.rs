//! Binary checkpoints: a magic string and version, then tagged sections
//! each carrying its length and SHA-256 digest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainConfig;
use crate::arbitrator::{ArbitratorConfig, ArbitratorModel};
use crate::autodiff::{Adam, AdamConfig, ParamStore};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::imaginator::{ImaginatorConfig, ImaginatorModel};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"ITACKPT\0";
pub const VERSION: u32 = 1;

const META: &[u8; 4] = b"META";
const CONF: &[u8; 4] = b"CONF";
const VOCB: &[u8; 4] = b"VOCB";
const PARM: &[u8; 4] = b"PARM";
const OPTM: &[u8; 4] = b"OPTM";

/// Architecture of the stored model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Imaginator(ImaginatorConfig),
    Arbitrator(ArbitratorConfig),
}

impl ModelSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelSpec::Imaginator(_) => "imaginator",
            ModelSpec::Arbitrator(_) => "arbitrator",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelSpec,
    pub vocab_hash: String,
    /// Epoch (1-based) the stored parameters come from.
    pub epoch: usize,
    pub metric: String,
    pub best_value: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub train: TrainConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    pub optimizer: Option<Adam>,
}

impl Checkpoint {
    pub fn imaginator(&self) -> Result<ImaginatorModel> {
        match &self.meta.model {
            ModelSpec::Imaginator(c) => ImaginatorModel::from_parts(c.clone(), self.params.clone()),
            other => Err(Error::Contract(format!(
                "checkpoint holds an {}",
                other.kind()
            ))),
        }
    }

    pub fn arbitrator(&self) -> Result<ArbitratorModel> {
        match &self.meta.model {
            ModelSpec::Arbitrator(c) => ArbitratorModel::from_parts(c.clone(), self.params.clone()),
            other => Err(Error::Contract(format!(
                "checkpoint holds an {}",
                other.kind()
            ))),
        }
    }

    /// Fails unless `vocab` is the vocabulary the model was trained with.
    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        let h = vocab.hash();
        if h != self.meta.vocab_hash {
            return Err(Error::Integrity {
                section: "VOCB".into(),
                reason: format!(
                    "vocabulary hash {h} does not match checkpoint {}",
                    self.meta.vocab_hash
                ),
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        section(&mut out, META, &serde_json::to_vec(&self.meta)?);
        section(&mut out, CONF, self.train.to_toml()?.as_bytes());
        section(&mut out, VOCB, self.vocab.to_text().as_bytes());
        let named: Vec<(&str, &Tensor)> = self
            .params
            .iter()
            .map(|(_, p)| (p.name.as_str(), &p.value))
            .collect();
        section(&mut out, PARM, &encode_tensors(&named));
        if let Some(opt) = &self.optimizer {
            section(&mut out, OPTM, &encode_optimizer(opt, &self.params)?);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "header");
        if r.take(MAGIC.len())? != MAGIC {
            return Err(r.fail("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.fail(&format!("unsupported version {version}")));
        }
        let mut sections = Vec::new();
        while !r.is_empty() {
            sections.push(read_section(&mut r)?);
        }
        let mut it = sections.into_iter().peekable();
        let mut expect = |tag: &[u8; 4]| -> Result<Vec<u8>> {
            match it.next() {
                Some((t, payload)) if &t == tag => Ok(payload),
                Some((t, _)) => Err(integrity(
                    tag,
                    &format!("found {} instead", String::from_utf8_lossy(&t)),
                )),
                None => Err(integrity(tag, "section missing")),
            }
        };
        let meta: CheckpointMeta =
            serde_json::from_slice(&expect(META)?).map_err(|e| integrity(META, &e.to_string()))?;
        let conf = expect(CONF)?;
        let train = std::str::from_utf8(&conf)
            .map_err(|e| integrity(CONF, &e.to_string()))
            .and_then(|t| TrainConfig::from_toml(t).map_err(|e| integrity(CONF, &e.to_string())))?;
        let vocab_bytes = expect(VOCB)?;
        let vocab = std::str::from_utf8(&vocab_bytes)
            .map_err(|e| integrity(VOCB, &e.to_string()))
            .and_then(|t| Vocabulary::from_text(t).map_err(|e| integrity(VOCB, &e.to_string())))?;
        if vocab.hash() != meta.vocab_hash {
            return Err(integrity(
                VOCB,
                "vocabulary does not match the recorded hash",
            ));
        }
        let mut params = ParamStore::new();
        for (name, t) in decode_tensors(&expect(PARM)?, "PARM")? {
            params
                .add(name, t)
                .map_err(|e| integrity(PARM, &e.to_string()))?;
        }
        let optimizer = match it.next() {
            None => None,
            Some((t, payload)) if &t == OPTM => Some(decode_optimizer(&payload, &params)?),
            Some((t, _)) => return Err(integrity(&t, "unexpected section")),
        };
        if let Some((t, _)) = it.next() {
            return Err(integrity(&t, "unexpected trailing section"));
        }
        let ck = Self {
            meta,
            train,
            vocab,
            params,
            optimizer,
        };
        // Reject shape mismatches now rather than at first use.
        match ck.meta.model {
            ModelSpec::Imaginator(_) => drop(
                ck.imaginator()
                    .map_err(|e| integrity(PARM, &e.to_string()))?,
            ),
            ModelSpec::Arbitrator(_) => drop(
                ck.arbitrator()
                    .map_err(|e| integrity(PARM, &e.to_string()))?,
            ),
        }
        Ok(ck)
    }

    /// Writes the checkpoint atomically plus a readable `<path>.toml`
    /// sidecar with the training configuration.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = with_suffix(path, ".tmp");
        std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
        let sidecar = sidecar_path(path);
        let text = format!(
            "# {} checkpoint, epoch {}, {} = {}, vocabulary {}\n{}",
            self.meta.model.kind(),
            self.meta.epoch,
            self.meta.metric,
            self.meta
                .best_value
                .map_or("n/a".to_string(), |v| format!("{v:.6}")),
            self.meta.vocab_hash,
            self.train.to_toml()?
        );
        std::fs::write(&sidecar, text).map_err(|e| Error::io(&sidecar, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    with_suffix(path, ".toml")
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn integrity(tag: &[u8], reason: &str) -> Error {
    Error::Integrity {
        section: String::from_utf8_lossy(tag).into_owned(),
        reason: reason.to_string(),
    }
}

fn section(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&Sha256::digest(payload));
    out.extend_from_slice(payload);
}

fn read_section(r: &mut Reader) -> Result<([u8; 4], Vec<u8>)> {
    let mut tag = [0u8; 4];
    tag.copy_from_slice(r.take(4)?);
    r.section = String::from_utf8_lossy(&tag).into_owned();
    let len = r.u64()?;
    let digest = r.take(32)?.to_vec();
    if len > r.remaining() as u64 {
        return Err(r.fail(&format!(
            "truncated: {len} bytes declared, {} present",
            r.remaining()
        )));
    }
    let payload = r.take(len as usize)?.to_vec();
    if Sha256::digest(&payload).as_slice() != digest.as_slice() {
        return Err(r.fail("digest mismatch"));
    }
    Ok((tag, payload))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    section: String,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], section: &str) -> Self {
        Self {
            bytes,
            pos: 0,
            section: section.to_string(),
        }
    }

    fn fail(&self, reason: &str) -> Error {
        Error::Integrity {
            section: self.section.clone(),
            reason: reason.to_string(),
        }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn is_empty(&self) -> bool {
        self.remaining() == 0
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(self.fail("truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

/// `count`, then per tensor: name length and bytes, rank, dims, f64 data.
fn encode_tensors(tensors: &[(&str, &Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn decode_tensors(bytes: &[u8], tag: &str) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader::new(bytes, tag);
    let out = read_tensors(&mut r)?;
    if !r.is_empty() {
        return Err(r.fail("trailing bytes"));
    }
    Ok(out)
}

fn read_tensors(r: &mut Reader) -> Result<Vec<(String, Tensor)>> {
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = String::from_utf8(r.take(n)?.to_vec())
            .map_err(|_| r.fail("parameter name is not UTF-8"))?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = match numel {
            Some(n) if n.checked_mul(8).is_some_and(|b| b <= r.remaining()) => n,
            _ => return Err(r.fail(&format!("tensor {name} larger than the section"))),
        };
        let data = r
            .take(numel * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| r.fail(&e.to_string()))?;
        out.push((name, t));
    }
    Ok(out)
}

/// JSON Adam config, step count, then first and second moments as tensors
/// named after their parameters.
fn encode_optimizer(opt: &Adam, params: &ParamStore) -> Result<Vec<u8>> {
    let (first, second) = opt.moments();
    if first.len() != params.len() {
        return Err(Error::Contract(
            "optimizer state does not match the parameters".into(),
        ));
    }
    let conf = serde_json::to_vec(&opt.config)?;
    let mut out = Vec::new();
    out.extend_from_slice(&(conf.len() as u32).to_le_bytes());
    out.extend_from_slice(&conf);
    out.extend_from_slice(&opt.step_count().to_le_bytes());
    let names: Vec<&str> = params.iter().map(|(_, p)| p.name.as_str()).collect();
    let moments: Vec<(&str, &Tensor)> = names
        .iter()
        .zip(first)
        .chain(names.iter().zip(second))
        .map(|(n, t)| (*n, t))
        .collect();
    out.extend_from_slice(&encode_tensors(&moments));
    Ok(out)
}

fn decode_optimizer(bytes: &[u8], params: &ParamStore) -> Result<Adam> {
    let mut r = Reader::new(bytes, "OPTM");
    let n = r.u32()? as usize;
    let config: AdamConfig =
        serde_json::from_slice(r.take(n)?).map_err(|e| r.fail(&e.to_string()))?;
    let step = r.u64()?;
    let mut tensors = read_tensors(&mut r)?;
    if !r.is_empty() {
        return Err(r.fail("trailing bytes"));
    }
    if tensors.len() != 2 * params.len() {
        return Err(r.fail("moment count does not match the parameters"));
    }
    let expected: Vec<_> = params.iter().map(|(_, p)| p).collect();
    for ((name, t), p) in tensors.iter().zip(expected.iter().cycle()) {
        if *name != p.name || t.shape() != p.value.shape() {
            return Err(r.fail(&format!(
                "moment {name} does not match parameter {}",
                p.name
            )));
        }
    }
    let second = tensors
        .split_off(params.len())
        .into_iter()
        .map(|(_, t)| t)
        .collect();
    let first = tensors.into_iter().map(|(_, t)| t).collect();
    Ok(Adam::restore(config, step, first, second))
}
