use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use ita_core::trainer::TrainConfig;

macro_rules! overrides {
    ($($field:ident: $ty:ty $(, $extra:meta)?;)*) => {
        /// One flag per configuration key; flags win over `--config`.
        #[derive(Args, Clone, Debug, Default)]
        pub struct ConfigArgs {
            /// Flat TOML configuration file
            #[arg(long)]
            pub config: Option<PathBuf>,
            $(
                #[arg(long $(, $extra)?)]
                pub $field: Option<$ty>,
            )*
        }

        impl ConfigArgs {
            fn apply(&self, c: &mut TrainConfig) {
                $(
                    if let Some(v) = &self.$field {
                        c.$field = v.clone();
                    }
                )*
            }
        }
    };
}

overrides! {
    seed: u64;
    epochs: usize;
    batch_size: usize;
    lr: f64;
    clip_norm: f64;
    patience: usize;
    valid_fraction: f64;
    test_fraction: f64;
    valid_limit: usize;
    p_split: f64;
    min_freq: u64;
    token_dim: usize;
    tag_dim: usize;
    hidden: usize;
    attention: bool, action = clap::ArgAction::Set;
    turn_cap: usize;
    subturn_cap: usize;
    max_history: usize;
    beam_width: usize;
    max_len: usize;
    alpha: f64;
    embed_dim: usize;
    filter_widths: Vec<usize>, value_delimiter = ',';
    filters: usize;
    gru_hidden: usize;
    fusion_dim: usize;
    max_response: usize;
}

impl ConfigArgs {
    /// Defaults, then the config file, then individual flags.
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut c = match &self.config {
            Some(path) => TrainConfig::load(path)
                .with_context(|| format!("reading config {}", path.display()))?,
            None => TrainConfig::default(),
        };
        self.apply(&mut c);
        c.validate()?;
        Ok(c)
    }
}

/// Announces the resolved configuration on the diagnostic stream.
pub fn announce(c: &TrainConfig) -> Result<()> {
    eprintln!("seed: {}", c.seed);
    eprintln!("resolved config:");
    for line in c.to_toml()?.lines() {
        eprintln!("  {line}");
    }
    Ok(())
}
