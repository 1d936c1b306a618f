use rand::{Rng, RngCore};

use crate::error::{contract, Result};
use crate::registry::Registry;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingOptions {
    pub temperature: f64,
    pub top_k: usize,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            top_k: 5,
        }
    }
}

pub trait TokenSampler {
    fn sample(&self, logits: &[f64], rng: &mut dyn RngCore) -> Result<usize>;
}

pub type SamplerCtor = fn(&SamplingOptions) -> Box<dyn TokenSampler>;

struct TopK(SamplingOptions);

impl TokenSampler for TopK {
    fn sample(&self, logits: &[f64], rng: &mut dyn RngCore) -> Result<usize> {
        sample_token(logits, self.0.temperature, self.0.top_k, rng)
    }
}

struct Greedy;

impl TokenSampler for Greedy {
    fn sample(&self, logits: &[f64], rng: &mut dyn RngCore) -> Result<usize> {
        sample_token(logits, 1.0, 1, rng)
    }
}

pub fn samplers() -> Registry<SamplerCtor> {
    let mut r: Registry<SamplerCtor> = Registry::new("sampler");
    r.register("topk", |o: &SamplingOptions| Box::new(TopK(*o)))
        .register("greedy", |_: &SamplingOptions| Box::new(Greedy));
    r
}

/// The `k` highest logits with their tempered, renormalised probabilities.
/// Ties go to the lower id.
pub fn top_k_distribution(logits: &[f64], temperature: f64, k: usize) -> Result<Vec<(usize, f64)>> {
    if !(temperature > 0.0) || k == 0 || k > logits.len() {
        return Err(contract(format!(
            "sample_token: temperature {temperature}, k {k}, vocabulary {}",
            logits.len()
        )));
    }
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    idx.truncate(k);
    let top = logits[idx[0]] / temperature;
    let w: Vec<f64> = idx.iter().map(|&i| (logits[i] / temperature - top).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(idx.into_iter().zip(w).map(|(i, w)| (i, w / z)).collect())
}

pub fn sample_token<R: RngCore + ?Sized>(logits: &[f64], temperature: f64, k: usize, rng: &mut R) -> Result<usize> {
    let dist = top_k_distribution(logits, temperature, k)?;
    if dist.len() == 1 {
        return Ok(dist[0].0);
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(i, p) in &dist {
        acc += p;
        if u < acc {
            return Ok(i);
        }
    }
    Ok(dist[dist.len() - 1].0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn renormalised_top_two() {
        let logits: Vec<f64> = [0.5f64, 0.3, 0.2].iter().map(|p| p.ln()).collect();
        let d = top_k_distribution(&logits, 1.0, 2).unwrap();
        assert_eq!(d.iter().map(|x| x.0).collect::<Vec<_>>(), [0, 1]);
        assert!((d[0].1 - 0.625).abs() < 1e-12 && (d[1].1 - 0.375).abs() < 1e-12);
    }

    #[test]
    fn k_one_and_cold_temperature_pick_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let logits = [0.1, 2.0, 1.9, -1.0];
        for _ in 0..50 {
            assert_eq!(sample_token(&logits, 100.0, 1, &mut rng).unwrap(), 1);
            assert_eq!(sample_token(&logits, 1e-4, 4, &mut rng).unwrap(), 1);
        }
        assert_eq!(top_k_distribution(&[1.0, 3.0, 3.0], 1.0, 1).unwrap()[0].0, 1);
    }

    #[test]
    fn bad_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_token(&[0.0, 1.0], 0.0, 1, &mut rng).is_err());
        assert!(sample_token(&[0.0, 1.0], 1.0, 3, &mut rng).is_err());
        assert!(sample_token(&[0.0, 1.0], 1.0, 0, &mut rng).is_err());
    }

    #[test]
    fn registry() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = samplers().get("greedy").unwrap()(&SamplingOptions::default());
        assert_eq!(g.sample(&[0.0, 5.0, 1.0], &mut rng).unwrap(), 1);
        assert!(samplers().get("nucleus").is_err());
    }
}
