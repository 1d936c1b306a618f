#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vti_core::data::EncodedRecord;
use vti_core::model::{LossOptions, ModelConfig, VtiModel};
use vti_tensor::{grad_check_with_params, GradCheckReport};

/// 16×16 images (four local features) and a twelve-word vocabulary.
pub fn mini_config() -> ModelConfig {
    ModelConfig {
        image_size: 16,
        conv_channels: [4, 4],
        d_v: 8,
        d_model: 14,
        visual_layers: 1,
        d_e: 8,
        lang_heads: 2,
        lang_layers: 1,
        d_h: 8,
        d_z: 4,
        prior_hidden: 8,
        dropout: 0.0,
        ..ModelConfig::new(12)
    }
}

pub fn image(seed: u64, side: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..side * side).map(|_| rng.random::<f32>()).collect()
}

pub fn record(side: usize, sentences: Vec<Vec<usize>>) -> EncodedRecord {
    let slots = (0..sentences.len()).collect();
    EncodedRecord {
        pixels: image(9, side),
        sentences,
        slots,
        labels: vec![],
    }
}

/// Finite-difference check of the full loss, one three-word sentence, in
/// f64. The attention scorer and output layer are scaled up so their
/// gradients are not vanishingly small.
pub fn miniature_grad_check() -> GradCheckReport {
    let mut model = VtiModel::<f64>::new(&mini_config(), 8).unwrap();
    for name in ["decoder.att_w", "decoder.out.weight"] {
        let id = model.params.id(name).unwrap();
        model.params.get_mut(id).data_mut().iter_mut().for_each(|x| *x *= 4.0);
    }
    let r = record(16, vec![vec![5, 6, 7]]);
    grad_check_with_params(
        &model.params,
        |tape, _| {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let out = model
                .net
                .elbo_loss(tape, &[&r], &LossOptions::training(0.7, 1), &mut rng)
                .unwrap();
            Ok(out.loss)
        },
        &[],
        1e-6,
        1e-3,
    )
    .unwrap()
}
