use rand_chacha::ChaCha8Rng;
use vti_tensor::{Real, Tape, Var};

use super::decoder::Sequence;
use super::encoder::Dropout;
use super::{Network, Objective};
use crate::data::EncodedRecord;
use crate::error::{contract, Result};
use crate::latent::{kl_rows, reparameterize, standard_normal, DiagonalGaussian};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    pub beta: f64,
    /// Monte Carlo topic samples per sentence.
    pub mc_samples: usize,
    /// Dropout on; otherwise evaluation mode.
    pub train: bool,
    /// Decode from distribution means instead of samples.
    pub use_means: bool,
}

impl LossOptions {
    pub fn training(beta: f64, mc_samples: usize) -> Self {
        Self {
            beta,
            mc_samples,
            train: true,
            use_means: false,
        }
    }

    /// β = 1, one sample at the mean, no dropout.
    pub fn validation() -> Self {
        Self {
            beta: 1.0,
            mc_samples: 1,
            train: false,
            use_means: true,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossOutput {
    pub loss: Var,
    /// Summed token CE over all slots divided by `n_max`, batch mean.
    pub ce: f64,
    /// Summed KL over active sentences.
    pub kl_sum: f64,
    pub active: usize,
    pub correct: usize,
    pub tokens: usize,
}

impl LossOutput {
    pub fn kl_per_sentence(&self) -> f64 {
        if self.active == 0 {
            0.0
        } else {
            self.kl_sum / self.active as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.tokens.max(1) as f64
    }
}

fn draw<T: Real>(tape: &mut Tape<'_, T>, g: &DiagonalGaussian, use_means: bool, rng: &mut ChaCha8Rng) -> Result<Var> {
    if use_means {
        return Ok(g.mu);
    }
    let eps = standard_normal(rng, g.rows(tape), g.dim(tape));
    let eps = tape.constant(eps);
    reparameterize(tape, g, eps)
}

impl Network {
    /// Batch-mean of the per-report objective
    /// `(Σ_slots CE_slot + β Σ_active KL) / n_max`, where `CE_slot` is the
    /// summed token cross entropy of the slot's sentence.
    ///
    /// Each sentence is decoded from its record's topic slot. Unused slots
    /// are trained to emit [EOS] immediately from a prior sample, which is
    /// what lets generation leave them empty.
    pub fn elbo_loss<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        records: &[&EncodedRecord],
        opts: &LossOptions,
        rng: &mut ChaCha8Rng,
    ) -> Result<LossOutput> {
        let c = &self.config;
        if records.is_empty() {
            return Err(contract("elbo_loss: empty batch"));
        }
        if records.iter().any(|r| r.sentences.is_empty()) {
            return Err(contract("elbo_loss: empty report"));
        }
        if opts.mc_samples == 0 || !(opts.beta >= 0.0) {
            return Err(contract(format!(
                "elbo_loss: beta {} and {} samples",
                opts.beta, opts.mc_samples
            )));
        }
        let batch = records.len();
        let max_words = c.max_tokens - 1;
        let mut active: Vec<(usize, usize, &[usize])> = Vec::new();
        let mut stop: Vec<(usize, usize)> = Vec::new();
        for (b, r) in records.iter().enumerate() {
            if r.slots.len() != r.sentences.len() || r.slots.iter().any(|&s| s >= c.n_max) {
                return Err(contract("elbo_loss: sentence slots out of range"));
            }
            for (&slot, s) in r.slots.iter().zip(&r.sentences) {
                active.push((b, slot, &s[..s.len().min(max_words)]));
            }
            stop.extend((0..c.n_max).filter(|s| !r.slots.contains(s)).map(|slot| (b, slot)));
        }
        let elbo = c.objective == Objective::Elbo;

        let images: Vec<&[f32]> = records.iter().map(|r| r.pixels.as_slice()).collect();
        let (visual, posterior) = {
            let mut dropout = if opts.train {
                Dropout::train(rng, c.dropout)
            } else {
                Dropout::eval()
            };
            let visual = self.visual(tape, &images, &mut dropout)?;
            let posterior = if elbo {
                let sentences: Vec<&[usize]> = active.iter().map(|a| a.2).collect();
                Some(self.infer_posterior(tape, &sentences, &mut dropout)?)
            } else {
                None
            };
            (visual, posterior)
        };
        let prior_row = |b: usize, slot: usize| slot * batch + b;
        let active_rows: Vec<usize> = active.iter().map(|&(b, s, _)| prior_row(b, s)).collect();
        let stop_rows: Vec<usize> = stop.iter().map(|&(b, s)| prior_row(b, s)).collect();

        let samples = if elbo { opts.mc_samples } else { 1 };
        let mut kl = None;
        let mut z_parts = Vec::new();
        match posterior {
            Some(q) => {
                let p_active = visual.priors.gather(tape, &active_rows)?;
                kl = Some(kl_rows(tape, &q, &p_active)?);
                let p_stop = if stop.is_empty() {
                    None
                } else {
                    Some(visual.priors.gather(tape, &stop_rows)?)
                };
                for _ in 0..samples {
                    z_parts.push(draw(tape, &q, opts.use_means, rng)?);
                    if let Some(p) = &p_stop {
                        z_parts.push(draw(tape, p, opts.use_means, rng)?);
                    }
                }
            }
            None => {
                let rows: Vec<usize> = active_rows.iter().chain(&stop_rows).copied().collect();
                z_parts.push(tape.gather_rows(visual.priors.mu, &rows)?);
            }
        }
        let z = if z_parts.len() == 1 {
            z_parts[0]
        } else {
            tape.concat(&z_parts, 0)?
        };

        let per_sample = active.len() + stop.len();
        let scale = 1.0 / (c.n_max * batch * samples) as f64;
        let mut seqs = Vec::with_capacity(per_sample * samples);
        for l in 0..samples {
            let base = l * per_sample;
            for (i, &(b, _, words)) in active.iter().enumerate() {
                seqs.push(Sequence::for_words(b, base + i, words, scale));
            }
            for (i, &(b, _)) in stop.iter().enumerate() {
                seqs.push(Sequence::for_words(b, base + active.len() + i, &[], scale));
            }
        }
        let tf = self.teacher_forced(tape, &visual, z, &seqs)?;
        let targets: Vec<usize> = tf.rows.iter().map(|&(s, t)| seqs[s].target[t]).collect();
        let weights: Vec<T> = tf.rows.iter().map(|&(s, _)| T::of(seqs[s].weight)).collect();
        let ce = tape.softmax_cross_entropy(tf.logits, &targets, &weights)?;

        let v = c.vocab;
        let data = tape.data(tf.logits);
        let correct = targets
            .iter()
            .enumerate()
            .filter(|&(r, &t)| {
                let row = &data[r * v..(r + 1) * v];
                argmax(row) == t
            })
            .count();

        let ce_value = tape.data(ce)[0].to_f64_lossy();
        let (loss, kl_sum) = match kl {
            Some(kl) => {
                let total = tape.sum(kl);
                let kl_sum = tape.data(total)[0].to_f64_lossy();
                let weighted = tape.scale(total, T::of(opts.beta / (c.n_max * batch) as f64));
                (tape.add(ce, weighted)?, kl_sum)
            }
            None => (ce, 0.0),
        };
        Ok(LossOutput {
            loss,
            ce: ce_value,
            kl_sum,
            active: active.len(),
            correct,
            tokens: targets.len(),
        })
    }
}

/// Index of the largest entry, lowest index on ties.
pub(crate) fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}
