use rand::Rng;
use rand_chacha::ChaCha8Rng;
use vti_tensor::nn::sinusoidal_table;
use vti_tensor::{Real, Tape, Tensor, Var};

use super::{Mlp, Network};
use crate::data::SENT;
use crate::error::{contract, Result};
use crate::latent::DiagonalGaussian;

/// Inverted dropout driven by an owned RNG; a no-op in evaluation.
pub struct Dropout<'a> {
    rng: Option<&'a mut ChaCha8Rng>,
    rate: f64,
}

impl<'a> Dropout<'a> {
    pub fn train(rng: &'a mut ChaCha8Rng, rate: f64) -> Self {
        Self { rng: Some(rng), rate }
    }

    pub fn eval() -> Self {
        Self { rng: None, rate: 0.0 }
    }

    pub fn apply<T: Real>(&mut self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        match self.rng.as_deref_mut() {
            Some(rng) if self.rate > 0.0 => {
                let keep: Vec<bool> = (0..tape.value(x).len())
                    .map(|_| rng.random::<f64>() >= self.rate)
                    .collect();
                Ok(tape.dropout(x, &keep, self.rate)?)
            }
            _ => Ok(x),
        }
    }
}

/// Image-side quantities shared by every topic slot of a batch.
#[derive(Debug, Clone, Copy)]
pub struct Visual {
    /// `batch·k × d_v` local features.
    pub features: Var,
    /// `W_v` applied to every feature, `batch·k × d_h`.
    pub keys: Var,
    /// Prior per topic slot, row `slot·batch + image`.
    pub priors: DiagonalGaussian,
    pub batch: usize,
}

impl Mlp {
    fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var, dropout: &mut Dropout<'_>) -> Result<Var> {
        let h = self.hidden.forward(tape, x)?;
        let h = tape.relu(h);
        let h = dropout.apply(tape, h)?;
        Ok(self.out.forward(tape, h)?)
    }
}

impl Network {
    /// Conv stack over unit-range images, `batch·k × d_v` with rows grouped
    /// per image.
    pub fn extract_visual_features<T: Real>(&self, tape: &mut Tape<'_, T>, images: &[&[f32]]) -> Result<Var> {
        let side = self.config.image_size;
        if images.is_empty() {
            return Err(contract("extract_visual_features: no images"));
        }
        if let Some(bad) = images.iter().find(|im| im.len() != side * side) {
            return Err(contract(format!(
                "extract_visual_features: image has {} pixels, expected {side}×{side}",
                bad.len()
            )));
        }
        let data: Vec<T> = images
            .iter()
            .flat_map(|im| im.iter().map(|&p| T::of(p as f64)))
            .collect();
        let mut x = tape.constant(Tensor::new(vec![images.len() * side * side, 1], data)?);
        let (mut h, mut w) = (side, side);
        for conv in &self.conv {
            let (y, oh, ow) = conv.forward(tape, x, images.len(), h, w)?;
            x = tape.relu(y);
            (h, w) = (oh, ow);
        }
        Ok(x)
    }

    /// One prior per topic slot from the per-head outputs at the [IMG]
    /// position of the visual transformer.
    pub fn infer_priors<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        features: Var,
        batch: usize,
        dropout: &mut Dropout<'_>,
    ) -> Result<DiagonalGaussian> {
        let c = &self.config;
        let k = c.k();
        if tape.shape(features) != [batch * k, c.d_v] {
            return Err(contract(format!(
                "infer_priors: features {:?}, expected [{}, {}]",
                tape.shape(features),
                batch * k,
                c.d_v
            )));
        }
        let proj = self.vis_in.forward(tape, features)?;
        let img = tape.param(self.img_token);
        let pool = tape.concat(&[img, proj], 0)?;
        let seq_len = k + 1;
        let index: Vec<usize> = (0..batch)
            .flat_map(|b| std::iter::once(0).chain((0..k).map(move |j| 1 + b * k + j)))
            .collect();
        let mut x = tape.gather_rows(pool, &index)?;
        if c.visual_positions {
            let table = sinusoidal_table(seq_len, c.d_model);
            let rows: Vec<T> = (0..batch).flat_map(|_| table.iter().map(|&v| T::of(v))).collect();
            let pos = tape.constant(Tensor::new(vec![batch * seq_len, c.d_model], rows)?);
            x = tape.add(x, pos)?;
        }
        let segments: Vec<(usize, usize)> = (0..batch).map(|b| (b * seq_len, seq_len)).collect();
        for layer in &self.vis_layers {
            x = layer.forward(tape, x, &segments)?;
        }
        let normed = self.topic_norm.forward(tape, x)?;
        let attn = self.topic_attn.forward(tape, normed, &segments)?;
        let img_rows: Vec<usize> = (0..batch).map(|b| b * seq_len).collect();
        let at_img = tape.gather_rows(attn.heads, &img_rows)?;
        let hd = self.topic_attn.head_dim();
        let mut joint = Vec::with_capacity(c.n_max);
        for (slot, head) in self.prior_heads.iter().enumerate() {
            let h = tape.slice_cols(at_img, slot * hd, hd)?;
            joint.push(head.forward(tape, h, dropout)?);
        }
        let joint = tape.concat(&joint, 0)?;
        DiagonalGaussian::from_joint(tape, joint)
    }

    pub fn visual<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        images: &[&[f32]],
        dropout: &mut Dropout<'_>,
    ) -> Result<Visual> {
        let features = self.extract_visual_features(tape, images)?;
        let keys = self.att_v.forward(tape, features)?;
        let priors = self.infer_priors(tape, features, images.len(), dropout)?;
        Ok(Visual {
            features,
            keys,
            priors,
            batch: images.len(),
        })
    }

    /// Posterior per sentence from the [SENT] position of the language
    /// transformer. Training-time only.
    pub fn infer_posterior<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        sentences: &[&[usize]],
        dropout: &mut Dropout<'_>,
    ) -> Result<DiagonalGaussian> {
        if sentences.is_empty() || sentences.iter().any(|s| s.is_empty()) {
            return Err(contract("infer_posterior: empty sentence"));
        }
        let limit = self.embed.max_len() - 1;
        let mut ids = Vec::new();
        let mut positions = Vec::new();
        let mut segments = Vec::with_capacity(sentences.len());
        for s in sentences {
            let s = &s[..s.len().min(limit)];
            segments.push((ids.len(), s.len() + 1));
            ids.push(SENT);
            ids.extend_from_slice(s);
            positions.extend(0..=s.len());
        }
        let mut x = self.embed.embed_at(tape, &ids, Some(&positions))?;
        for layer in &self.lang_layers {
            x = layer.forward(tape, x, &segments)?;
        }
        let x = self.lang_norm.forward(tape, x)?;
        let heads: Vec<usize> = segments.iter().map(|s| s.0).collect();
        let at_sent = tape.gather_rows(x, &heads)?;
        let joint = self.posterior_head.forward(tape, at_sent, dropout)?;
        DiagonalGaussian::from_joint(tape, joint)
    }
}
