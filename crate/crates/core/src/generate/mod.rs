//! Report generation from the visual prior: topic sampling, token sampling,
//! Monte-Carlo variants and selection of the most probable sentences.

mod export;
mod sampler;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vti_tensor::{Real, Tape, Tensor, Var};

pub use export::{export_attention_maps, upsample_map};
pub use sampler::{sample_token, samplers, top_k_distribution, SamplerCtor, SamplingOptions, TokenSampler};

use crate::data::{ManifestEntry, Split, Vocabulary, BOS, EOS};
use crate::error::{contract, Result};
use crate::latent::{reparameterize, standard_normal};
use crate::metrics::LabelerRules;
use crate::model::{log_softmax_at, Dropout, Objective, Sequence, Visual, VtiModel};

/// One sampled report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportVariant {
    /// Kept sentences, each ending in [EOS] unless cut at the length cap.
    pub sentences: Vec<Vec<usize>>,
    /// Topic slot each kept sentence was decoded from.
    pub slots: Vec<usize>,
    /// `n_max` rows of `d_z` topic values.
    pub topic_samples: Vec<Vec<f64>>,
    /// Mean token log-probability per kept sentence.
    pub log_probs: Vec<f64>,
    /// Per kept sentence, per token, one weight per feature location.
    pub attention_maps: Vec<Vec<Vec<f64>>>,
}

impl ReportVariant {
    /// Sentence tokens without the closing [EOS].
    pub fn words(&self) -> Vec<Vec<usize>> {
        self.sentences
            .iter()
            .map(|s| s.iter().copied().take_while(|&t| t != EOS).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationConfig {
    pub sampler: String,
    pub sampling: SamplingOptions,
    pub variants: usize,
    pub rescoring_samples: usize,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            sampler: "topk".into(),
            sampling: SamplingOptions::default(),
            variants: 3,
            rescoring_samples: 10,
            seed: 11,
        }
    }
}

/// Sampled variants for one image and the report assembled from them.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedReport {
    pub variants: Vec<ReportVariant>,
    pub best: ReportVariant,
}

fn tensor_rows<T: Real>(tape: &Tape<'_, T>, v: Var) -> Vec<Vec<f64>> {
    let cols = tape.shape(v)[1];
    tape.data(v)
        .chunks(cols)
        .map(|r| r.iter().map(|x| x.to_f64_lossy()).collect())
        .collect()
}

/// Topic samples for every (slot, image) prior row, slot-major. Each image
/// draws its `n_max × d_z` noise from its own generator.
fn sample_topics<T: Real>(
    model: &VtiModel<T>,
    tape: &mut Tape<'_, T>,
    visual: &Visual,
    rngs: &mut [ChaCha8Rng],
) -> Result<Var> {
    let c = model.config();
    if c.objective == Objective::Deterministic {
        return Ok(visual.priors.mu);
    }
    let b = visual.batch;
    let per_image: Vec<Tensor<T>> = rngs.iter_mut().map(|r| standard_normal(r, c.n_max, c.d_z)).collect();
    let mut eps = Tensor::<T>::zeros(&[c.n_max * b, c.d_z]);
    for (img, e) in per_image.iter().enumerate() {
        for slot in 0..c.n_max {
            let dst = (slot * b + img) * c.d_z;
            eps.data_mut()[dst..dst + c.d_z].copy_from_slice(&e.data()[slot * c.d_z..(slot + 1) * c.d_z]);
        }
    }
    let eps = tape.constant(eps);
    reparameterize(tape, &visual.priors, eps)
}

/// Samples one report per image, each image with its own generator.
pub fn generate_reports<T: Real>(
    model: &VtiModel<T>,
    images: &[&[f32]],
    sampler: &dyn TokenSampler,
    rngs: &mut [ChaCha8Rng],
) -> Result<Vec<ReportVariant>> {
    if images.is_empty() || images.len() != rngs.len() {
        return Err(contract("generate_reports: need one generator per image"));
    }
    let c = model.config();
    let net = &model.net;
    let b = images.len();
    let mut tape = model.tape();
    let visual = net.visual(&mut tape, images, &mut Dropout::eval())?;
    let z = sample_topics(model, &mut tape, &visual, rngs)?;
    let z_values = tensor_rows(&tape, z);

    let rows = c.n_max * b;
    let mut live: Vec<usize> = (0..rows).collect();
    let mut state = net.init_decoder(&mut tape, z)?;
    let mut z_live = z;
    let mut tokens = vec![Vec::<usize>::new(); rows];
    let mut alphas = vec![Vec::<Vec<f64>>::new(); rows];
    let mut logp = vec![0.0; rows];
    let mut input = vec![BOS; rows];
    for _ in 0..c.max_tokens {
        let groups: Vec<usize> = live.iter().map(|r| r % b).collect();
        let step_in: Vec<usize> = live.iter().map(|&r| input[r]).collect();
        let out = net.decode_step(&mut tape, &visual, &step_in, state, &groups, Some(z_live))?;
        let logits = tensor_rows(&tape, out.logits);
        let alpha = tensor_rows(&tape, out.alpha);
        let mut keep = Vec::new();
        for (i, &r) in live.iter().enumerate() {
            let tok = sampler.sample(&logits[i], &mut rngs[r % b])?;
            logp[r] += log_softmax_at(&logits[i], tok);
            tokens[r].push(tok);
            alphas[r].push(alpha[i].clone());
            input[r] = tok;
            if tok != EOS {
                keep.push(i);
            }
        }
        if keep.is_empty() {
            break;
        }
        if keep.len() < live.len() {
            state = out.state.select(&mut tape, &keep)?;
            z_live = tape.gather_rows(z_live, &keep)?;
            live = keep.iter().map(|&i| live[i]).collect();
        } else {
            state = out.state;
        }
    }

    Ok((0..b)
        .map(|img| {
            let mut v = ReportVariant {
                sentences: Vec::new(),
                slots: Vec::new(),
                topic_samples: (0..c.n_max).map(|s| z_values[s * b + img].clone()).collect(),
                log_probs: Vec::new(),
                attention_maps: Vec::new(),
            };
            for slot in 0..c.n_max {
                let r = slot * b + img;
                let s = &tokens[r];
                if s[0] == EOS || v.sentences.contains(s) {
                    continue;
                }
                v.sentences.push(s.clone());
                v.slots.push(slot);
                v.log_probs.push(logp[r] / s.len() as f64);
                v.attention_maps.push(alphas[r].clone());
            }
            v
        })
        .collect())
}

pub fn generate_report<T: Real>(
    model: &VtiModel<T>,
    image: &[f32],
    sampler: &dyn TokenSampler,
    rng: &mut ChaCha8Rng,
) -> Result<ReportVariant> {
    let mut rngs = [rng.clone()];
    let mut out = generate_reports(model, &[image], sampler, &mut rngs)?;
    *rng = rngs[0].clone();
    Ok(out.remove(0))
}

/// Per-slot model-averaged scores: the mean, over `samples` common prior
/// draws, of each candidate's mean token log-likelihood.
pub fn rescore<T: Real>(
    model: &VtiModel<T>,
    image: &[f32],
    candidates: &[(usize, Vec<usize>)],
    samples: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    if samples == 0 {
        return Err(contract("rescore: need at least one prior sample"));
    }
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let c = model.config();
    let mut tape = model.tape();
    let visual = model.net.visual(&mut tape, &[image], &mut Dropout::eval())?;
    let z = if c.objective == Objective::Deterministic {
        visual.priors.mu
    } else {
        let mut draws = Vec::with_capacity(samples);
        for _ in 0..samples {
            let eps = standard_normal::<T, _>(rng, c.n_max, c.d_z);
            let eps = tape.constant(eps);
            draws.push(reparameterize(&mut tape, &visual.priors, eps)?);
        }
        if draws.len() == 1 {
            draws[0]
        } else {
            tape.concat(&draws, 0)?
        }
    };
    let samples = if c.objective == Objective::Deterministic {
        1
    } else {
        samples
    };
    let mut seqs = Vec::with_capacity(candidates.len() * samples);
    for (slot, s) in candidates {
        let words: Vec<usize> = s.iter().copied().take_while(|&t| t != EOS).collect();
        for k in 0..samples {
            seqs.push(Sequence::for_words(0, k * c.n_max + slot, &words, 1.0));
        }
    }
    let ll = model.net.sequence_log_likelihoods(&mut tape, &visual, z, &seqs)?;
    Ok(ll
        .chunks(samples)
        .map(|c| c.iter().sum::<f64>() / samples as f64)
        .collect())
}

/// Keeps, for every slot, the candidate sentence with the highest
/// model-averaged score, first variant winning ties.
pub fn select_best_report<T: Real>(
    model: &VtiModel<T>,
    image: &[f32],
    variants: &[ReportVariant],
    samples: usize,
    rng: &mut dyn RngCore,
) -> Result<ReportVariant> {
    let Some(first) = variants.first() else {
        return Err(contract("select_best_report: no variants"));
    };
    if variants.len() == 1 {
        return Ok(first.clone());
    }
    let mut candidates = Vec::new();
    let mut origin = Vec::new();
    for (vi, v) in variants.iter().enumerate() {
        for (si, (&slot, s)) in v.slots.iter().zip(&v.sentences).enumerate() {
            candidates.push((slot, s.clone()));
            origin.push((vi, si));
        }
    }
    let scores = rescore(model, image, &candidates, samples, rng)?;
    let n_max = model.config().n_max;
    let mut best = ReportVariant {
        sentences: Vec::new(),
        slots: Vec::new(),
        topic_samples: first.topic_samples.clone(),
        log_probs: Vec::new(),
        attention_maps: Vec::new(),
    };
    for slot in 0..n_max {
        let mut pick: Option<usize> = None;
        for (i, c) in candidates.iter().enumerate() {
            if c.0 == slot && pick.is_none_or(|p| scores[i] > scores[p]) {
                pick = Some(i);
            }
        }
        let Some(i) = pick else { continue };
        if best.sentences.contains(&candidates[i].1) {
            continue;
        }
        let (vi, si) = origin[i];
        let v = &variants[vi];
        best.sentences.push(v.sentences[si].clone());
        best.slots.push(slot);
        best.log_probs.push(v.log_probs[si]);
        best.attention_maps.push(v.attention_maps[si].clone());
        best.topic_samples[slot] = v.topic_samples[slot].clone();
    }
    Ok(best)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Variants and selected report for every image. Image `i` uses generator
/// streams derived from `(seed, i)` only, so results do not depend on
/// batching.
pub fn generate_all<T: Real>(
    model: &VtiModel<T>,
    images: &[&[f32]],
    config: &GenerationConfig,
    batch_size: usize,
) -> Result<Vec<GeneratedReport>> {
    if config.variants == 0 || batch_size == 0 {
        return Err(contract(
            "generate_all: need at least one variant and a positive batch size",
        ));
    }
    let sampler = samplers().get(&config.sampler)?(&config.sampling);
    let per = config.variants as u64 + 1;
    let mut variants: Vec<Vec<ReportVariant>> = vec![Vec::new(); images.len()];
    for (chunk_i, chunk) in images.chunks(batch_size).enumerate() {
        let base = chunk_i * batch_size;
        for v in 0..config.variants as u64 {
            let mut rngs: Vec<ChaCha8Rng> = (0..chunk.len())
                .map(|i| stream_rng(config.seed, (base + i) as u64 * per + v))
                .collect();
            for (i, r) in generate_reports(model, chunk, sampler.as_ref(), &mut rngs)?
                .into_iter()
                .enumerate()
            {
                variants[base + i].push(r);
            }
        }
    }
    variants
        .into_iter()
        .enumerate()
        .map(|(i, vs)| {
            let mut rng = stream_rng(config.seed, i as u64 * per + config.variants as u64);
            let best = select_best_report(model, images[i], &vs, config.rescoring_samples, &mut rng)?;
            Ok(GeneratedReport { variants: vs, best })
        })
        .collect()
}

/// A manifest line for a generated report, labelled by the rule labeller.
pub fn manifest_entry(
    image: &str,
    report: &ReportVariant,
    vocab: &Vocabulary,
    rules: &LabelerRules,
    style: usize,
    split: Split,
) -> ManifestEntry {
    let sentences: Vec<String> = report.sentences.iter().map(|s| vocab.detokenize(s)).collect();
    ManifestEntry {
        image: image.to_string(),
        labels: rules.label(&sentences).iter().map(|c| c.name().to_string()).collect(),
        sentences,
        style,
        split: split.as_str().to_string(),
    }
}
