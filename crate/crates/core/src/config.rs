//! Flat `key = value` run configuration. Every key has a default; unknown
//! keys are rejected.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::model::{ModelConfig, Objective};
use crate::train::{AdamConfig, TrainConfig};

pub trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Option<Self>;
    fn render(&self) -> String;
}

macro_rules! from_str_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Option<Self> {
                s.parse().ok()
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

from_str_value!(usize, u64, f64, bool, String);

impl ConfigValue for Objective {
    fn parse_value(s: &str) -> Option<Self> {
        Objective::parse(s).ok()
    }
    fn render(&self) -> String {
        self.as_str().to_string()
    }
}

macro_rules! config {
    ($( $(#[doc = $doc:literal])* $field:ident : $ty:ty = $default:expr, )*) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct Config {
            $( $(#[doc = $doc])* pub $field: $ty, )*
        }

        impl Default for Config {
            fn default() -> Self {
                Self { $( $field: $default, )* }
            }
        }

        impl Config {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($field)),*];

            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $( stringify!($field) => {
                        self.$field = <$ty as ConfigValue>::parse_value(value).ok_or_else(|| {
                            CoreError::Config(format!("invalid value {value:?} for key {key:?}"))
                        })?;
                    } )*
                    _ => return Err(CoreError::Config(format!("unknown key {key:?}"))),
                }
                Ok(())
            }

            /// Every resolved key, one `key = value` line each.
            pub fn render(&self) -> String {
                let mut s = String::new();
                $( writeln!(s, "{} = {}", stringify!($field), self.$field.render()).expect("string write"); )*
                s
            }
        }
    };
}

config! {
    /// Records generated by `synth`.
    n: usize = 2000,
    seed: u64 = 7,
    style_count: usize = 3,
    min_freq: usize = 2,

    image_size: usize = 32,
    conv1: usize = 16,
    conv2: usize = 32,
    d_v: usize = 64,
    d_model: usize = 112,
    n_max: usize = 7,
    visual_layers: usize = 2,
    d_e: usize = 64,
    lang_heads: usize = 4,
    lang_layers: usize = 2,
    d_h: usize = 64,
    d_z: usize = 64,
    prior_hidden: usize = 64,
    max_tokens: usize = 20,
    dropout: f64 = 0.0,
    z_every_step: bool = false,
    visual_positions: bool = false,
    objective: Objective = Objective::Elbo,

    learning_rate: f64 = 3e-4,
    adam_beta1: f64 = 0.9,
    adam_beta2: f64 = 0.999,
    adam_eps: f64 = 1e-8,
    batch_size: usize = 8,
    max_epochs: usize = 30,
    patience: usize = 5,
    mc_samples: usize = 1,
    clip_norm: f64 = 5.0,
    schedule: String = "cyclical".to_string(),
    beta_max: f64 = 0.5,
    cycles: u64 = 4,
    ramp_ratio: f64 = 0.5,
    /// Seeds parameter initialisation and every training step.
    train_seed: u64 = 1,

    sampler: String = "topk".to_string(),
    temperature: f64 = 0.7,
    top_k: usize = 5,
    variants: usize = 3,
    rescoring_samples: usize = 10,
    generation_seed: u64 = 11,
}

impl Config {
    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CoreError::Config(format!("line {}: expected key = value", i + 1)))?;
            c.set(k.trim(), v.trim()).map_err(|e| match e {
                CoreError::Config(d) => CoreError::Config(format!("line {}: {d}", i + 1)),
                other => other,
            })?;
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CoreError::Config(format!("override {o:?} is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn model_config(&self, vocab: usize) -> Result<ModelConfig> {
        let m = ModelConfig {
            image_size: self.image_size,
            conv_channels: [self.conv1, self.conv2],
            d_v: self.d_v,
            d_model: self.d_model,
            n_max: self.n_max,
            visual_layers: self.visual_layers,
            d_e: self.d_e,
            lang_heads: self.lang_heads,
            lang_layers: self.lang_layers,
            d_h: self.d_h,
            d_z: self.d_z,
            prior_hidden: self.prior_hidden,
            vocab,
            max_tokens: self.max_tokens,
            dropout: self.dropout,
            z_every_step: self.z_every_step,
            visual_positions: self.visual_positions,
            objective: self.objective,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = TrainConfig {
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                eps: self.adam_eps,
            },
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            mc_samples: self.mc_samples,
            clip_norm: self.clip_norm,
            schedule: self.schedule.clone(),
            beta_max: self.beta_max,
            cycles: self.cycles,
            ramp_ratio: self.ramp_ratio,
            seed: self.train_seed,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.style_count == 0 || self.min_freq == 0 {
            return Err(CoreError::Config("n, style_count and min_freq must be positive".into()));
        }
        if self.variants == 0 || self.rescoring_samples == 0 || self.top_k == 0 {
            return Err(CoreError::Config(
                "variants, rescoring_samples and top_k must be positive".into(),
            ));
        }
        if !(self.temperature > 0.0) {
            return Err(CoreError::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        self.model_config(crate::data::SPECIALS.len() + 1)?;
        self.train_config()?;
        Ok(())
    }
}
