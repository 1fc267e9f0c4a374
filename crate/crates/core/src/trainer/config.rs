use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arbitrator::{ArbitratorConfig, ArbitratorMode, EncoderKind};
use crate::autodiff::AdamConfig;
use crate::corpus::{Role, TagCaps};
use crate::error::{Error, Result};
use crate::imaginator::{ImaginatorConfig, DEFAULT_ALPHA};

/// Every knob of a training run, serialized as flat TOML in field order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub patience: usize,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    /// Cap on validation samples decoded per epoch for imaginators.
    pub valid_limit: usize,
    pub p_split: f64,
    pub min_freq: u64,
    pub token_dim: usize,
    pub tag_dim: usize,
    pub hidden: usize,
    pub attention: bool,
    pub turn_cap: usize,
    pub subturn_cap: usize,
    pub max_history: usize,
    pub beam_width: usize,
    pub max_len: usize,
    pub alpha: f64,
    pub embed_dim: usize,
    pub filter_widths: Vec<usize>,
    pub filters: usize,
    pub gru_hidden: usize,
    pub fusion_dim: usize,
    pub max_response: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 13,
            epochs: 10,
            batch_size: 32,
            lr: 1e-3,
            clip_norm: 5.0,
            patience: 3,
            valid_fraction: 0.1,
            test_fraction: 0.1,
            valid_limit: 500,
            p_split: 0.5,
            min_freq: 1,
            token_dim: 100,
            tag_dim: 8,
            hidden: 128,
            attention: true,
            turn_cap: 16,
            subturn_cap: 8,
            max_history: 256,
            beam_width: 4,
            max_len: 40,
            alpha: DEFAULT_ALPHA,
            embed_dim: 100,
            filter_widths: vec![3, 4, 5],
            filters: 100,
            gru_hidden: 128,
            fusion_dim: 128,
            max_response: 40,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("valid_limit", self.valid_limit),
            ("token_dim", self.token_dim),
            ("tag_dim", self.tag_dim),
            ("hidden", self.hidden),
            ("max_history", self.max_history),
            ("beam_width", self.beam_width),
            ("max_len", self.max_len),
            ("embed_dim", self.embed_dim),
            ("filters", self.filters),
            ("gru_hidden", self.gru_hidden),
            ("fusion_dim", self.fusion_dim),
            ("max_response", self.max_response),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.lr > 0.0 && self.lr.is_finite())
            || self.clip_norm.is_nan()
            || self.clip_norm <= 0.0
        {
            return Err(Error::Config("lr and clip_norm must be positive".into()));
        }
        if self.filter_widths.is_empty() || self.filter_widths.contains(&0) {
            return Err(Error::Config(
                "filter_widths must be non-empty and positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.p_split) {
            return Err(Error::Config(format!(
                "p_split {} outside [0, 1]",
                self.p_split
            )));
        }
        let held_out = self.valid_fraction + self.test_fraction;
        if self.valid_fraction <= 0.0 || self.test_fraction < 0.0 || held_out >= 1.0 {
            return Err(Error::Config(
                "valid_fraction must be positive and held-out fractions below 1".into(),
            ));
        }
        if self.alpha.is_nan() || self.alpha < 0.0 {
            return Err(Error::Config("alpha must be non-negative".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            clip_norm: Some(self.clip_norm),
            ..AdamConfig::default()
        }
    }

    pub fn caps(&self) -> TagCaps {
        TagCaps {
            turn: self.turn_cap,
            subturn: self.subturn_cap,
            max_history: self.max_history,
        }
    }

    pub fn imaginator(&self, role: Role, vocab_size: usize) -> ImaginatorConfig {
        ImaginatorConfig {
            role,
            vocab_size,
            token_dim: self.token_dim,
            tag_dim: self.tag_dim,
            hidden: self.hidden,
            attention: self.attention,
            caps: self.caps(),
            beam_width: self.beam_width,
            max_len: self.max_len,
            alpha: self.alpha,
        }
    }

    pub fn arbitrator(
        &self,
        vocab_size: usize,
        encoder: EncoderKind,
        mode: ArbitratorMode,
    ) -> ArbitratorConfig {
        ArbitratorConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            encoder,
            mode,
            filter_widths: self.filter_widths.clone(),
            filters: self.filters,
            gru_hidden: self.gru_hidden,
            fusion_dim: self.fusion_dim,
            max_history: self.max_history,
            max_response: self.max_response,
        }
    }
}
