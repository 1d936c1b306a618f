//! The variational topic inference network and its loss.

mod decoder;
mod encoder;
mod loss;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vti_tensor::nn::{Conv2d, EmbeddingTable, LayerNorm, Linear, LstmCell, MultiHeadAttention, TransformerLayer};
use vti_tensor::{ParamId, ParamStore, Real, Tape};

pub(crate) use decoder::log_softmax_at;
pub use decoder::{DecoderState, Sequence, StepOutput, TeacherForced};
pub use encoder::{Dropout, Visual};
pub use loss::{LossOptions, LossOutput};

use crate::error::{contract, Result};

/// Where decoding topics come from during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Posterior samples, KL to the visual prior.
    Elbo,
    /// Prior means only, no KL: a plain encoder-decoder.
    Deterministic,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Elbo => "elbo",
            Objective::Deterministic => "deterministic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "elbo" => Ok(Objective::Elbo),
            "deterministic" => Ok(Objective::Deterministic),
            other => Err(contract(format!("unknown objective {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub image_size: usize,
    pub conv_channels: [usize; 2],
    pub d_v: usize,
    pub d_model: usize,
    /// Topic slots, one visual attention head each.
    pub n_max: usize,
    pub visual_layers: usize,
    pub d_e: usize,
    pub lang_heads: usize,
    pub lang_layers: usize,
    pub d_h: usize,
    pub d_z: usize,
    pub prior_hidden: usize,
    pub vocab: usize,
    /// Decoding steps per sentence, [EOS] included.
    pub max_tokens: usize,
    pub dropout: f64,
    pub z_every_step: bool,
    pub visual_positions: bool,
    pub objective: Objective,
}

impl ModelConfig {
    pub fn new(vocab: usize) -> Self {
        Self {
            image_size: 32,
            conv_channels: [16, 32],
            d_v: 64,
            d_model: 112,
            n_max: 7,
            visual_layers: 2,
            d_e: 64,
            lang_heads: 4,
            lang_layers: 2,
            d_h: 64,
            d_z: 64,
            prior_hidden: 64,
            vocab,
            max_tokens: 20,
            dropout: 0.0,
            z_every_step: false,
            visual_positions: false,
            objective: Objective::Elbo,
        }
    }

    /// Side of the final feature map (three stride-2 stages).
    pub fn feature_side(&self) -> usize {
        self.image_size / 8
    }

    /// Number of local visual features per image.
    pub fn k(&self) -> usize {
        self.feature_side() * self.feature_side()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.d_v,
            self.d_model,
            self.n_max,
            self.d_e,
            self.lang_heads,
            self.d_h,
            self.d_z,
            self.prior_hidden,
            self.max_tokens,
            self.conv_channels[0],
            self.conv_channels[1],
        ];
        if positive.contains(&0) {
            return Err(contract("model dimensions must be positive"));
        }
        if self.image_size < 8 || self.image_size % 8 != 0 {
            return Err(contract(format!(
                "image_size {} must be a positive multiple of 8",
                self.image_size
            )));
        }
        if self.d_model % self.n_max != 0 {
            return Err(contract(format!(
                "d_model {} not divisible by n_max {} topic heads",
                self.d_model, self.n_max
            )));
        }
        if self.d_e % self.lang_heads != 0 {
            return Err(contract(format!(
                "d_e {} not divisible by {} heads",
                self.d_e, self.lang_heads
            )));
        }
        if self.vocab <= crate::data::SENT {
            return Err(contract(format!(
                "vocabulary of {} lacks the special tokens",
                self.vocab
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(contract(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

/// Parameter handles of every sub-network.
#[derive(Debug, Clone)]
pub struct Network {
    pub config: ModelConfig,
    pub(crate) conv: [Conv2d; 3],
    pub(crate) vis_in: Linear,
    pub(crate) img_token: ParamId,
    pub(crate) vis_layers: Vec<TransformerLayer>,
    pub(crate) topic_norm: LayerNorm,
    pub(crate) topic_attn: MultiHeadAttention,
    pub(crate) prior_heads: Vec<Mlp>,
    pub(crate) embed: EmbeddingTable,
    pub(crate) lang_layers: Vec<TransformerLayer>,
    pub(crate) lang_norm: LayerNorm,
    pub(crate) posterior_head: Mlp,
    pub(crate) z_to_cell: Linear,
    pub(crate) lstm1: LstmCell,
    pub(crate) lstm2: LstmCell,
    pub(crate) att_v: Linear,
    pub(crate) att_h: ParamId,
    pub(crate) att_w: ParamId,
    pub(crate) out_proj: Linear,
}

fn mlp<T: Real>(
    store: &mut ParamStore<T>,
    name: &str,
    d_in: usize,
    hidden: usize,
    d_out: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Mlp> {
    Ok(Mlp {
        hidden: Linear::new(store, &format!("{name}.hidden"), d_in, hidden, rng)?,
        out: Linear::new(store, &format!("{name}.out"), hidden, d_out, rng)?,
    })
}

impl Network {
    pub fn build<T: Real>(config: &ModelConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config;
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let [c1, c2] = c.conv_channels;
        let conv = [
            Conv2d::new(store, "conv1", 1, c1, 3, 2, 1, rng)?,
            Conv2d::new(store, "conv2", c1, c2, 3, 2, 1, rng)?,
            Conv2d::new(store, "conv3", c2, c.d_v, 3, 2, 1, rng)?,
        ];
        let vis_in = Linear::new(store, "visual.in", c.d_v, c.d_model, rng)?;
        let img_token = store.add_uniform("visual.img_token", &[1, c.d_model], 0.1, rng)?;
        let vis_layers = (0..c.visual_layers)
            .map(|i| {
                TransformerLayer::new(
                    store,
                    &format!("visual.layer{i}"),
                    c.d_model,
                    c.n_max,
                    2 * c.d_model,
                    rng,
                )
            })
            .collect::<Result<_, _>>()?;
        let topic_norm = LayerNorm::new(store, "visual.topic_norm", c.d_model)?;
        let topic_attn = MultiHeadAttention::new(store, "visual.topic_attn", c.d_model, c.n_max, false, rng)?;
        let head_dim = c.d_model / c.n_max;
        let prior_heads = (0..c.n_max)
            .map(|i| mlp(store, &format!("prior{i}"), head_dim, c.prior_hidden, 2 * c.d_z, rng))
            .collect::<Result<_>>()?;
        let embed = EmbeddingTable::new(store, "embed", c.vocab, c.d_e, c.max_tokens + 2, rng)?;
        let lang_layers = (0..c.lang_layers)
            .map(|i| {
                TransformerLayer::new(
                    store,
                    &format!("language.layer{i}"),
                    c.d_e,
                    c.lang_heads,
                    2 * c.d_e,
                    rng,
                )
            })
            .collect::<Result<_, _>>()?;
        let lang_norm = LayerNorm::new(store, "language.norm", c.d_e)?;
        let posterior_head = mlp(store, "posterior", c.d_e, c.prior_hidden, 2 * c.d_z, rng)?;
        let z_to_cell = Linear::new(store, "decoder.z_to_cell", c.d_z, c.d_h, rng)?;
        let lstm1_in = c.d_e + if c.z_every_step { c.d_z } else { 0 };
        let lstm1 = LstmCell::new(store, "decoder.lstm1", lstm1_in, c.d_h, rng)?;
        let lstm2 = LstmCell::new(store, "decoder.lstm2", c.d_v + c.d_h, c.d_h, rng)?;
        let att_v = Linear::new(store, "decoder.att_v", c.d_v, c.d_h, rng)?;
        let bound = 1.0 / (c.d_h as f64).sqrt();
        let att_h = store.add_uniform("decoder.att_h", &[c.d_h, c.d_h], bound, rng)?;
        let att_w = store.add_uniform("decoder.att_w", &[c.d_h, 1], bound, rng)?;
        let out_proj = Linear::new(store, "decoder.out", c.d_h, c.vocab, rng)?;
        Ok(Self {
            config: config.clone(),
            conv,
            vis_in,
            img_token,
            vis_layers,
            topic_norm,
            topic_attn,
            prior_heads,
            embed,
            lang_layers,
            lang_norm,
            posterior_head,
            z_to_cell,
            lstm1,
            lstm2,
            att_v,
            att_h,
            att_w,
            out_proj,
        })
    }

    /// Handles of the visual-attention scorer `(W_v, W_h, w_a)`.
    pub fn attention_params(&self) -> (ParamId, ParamId, ParamId, ParamId) {
        (self.att_v.weight, self.att_v.bias, self.att_h, self.att_w)
    }

    pub fn output_projection(&self) -> (ParamId, ParamId) {
        (self.out_proj.weight, self.out_proj.bias)
    }

    pub fn conv_biases(&self) -> [ParamId; 3] {
        [self.conv[0].bias, self.conv[1].bias, self.conv[2].bias]
    }
}

/// A network together with its parameter values.
#[derive(Debug, Clone)]
pub struct VtiModel<T: Real> {
    pub net: Network,
    pub params: ParamStore<T>,
}

impl<T: Real> VtiModel<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let net = Network::build(config, &mut params, seed)?;
        Ok(Self { net, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    pub fn tape(&self) -> Tape<'_, T> {
        Tape::with_params(&self.params)
    }

    pub fn cast<U: Real>(&self) -> VtiModel<U> {
        VtiModel {
            net: self.net.clone(),
            params: self.params.cast(),
        }
    }
}
