mod support;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vti_core::data::{BOS, EOS};
use vti_core::generate::{
    export_attention_maps, generate_all, generate_report, rescore, sample_token, samplers, select_best_report,
    GenerationConfig, ReportVariant, SamplingOptions,
};
use vti_core::model::{Dropout, VtiModel};

fn model() -> VtiModel<f32> {
    VtiModel::new(&support::mini_config(), 4).unwrap()
}

fn variant(m: &VtiModel<f32>, image: &[f32], seed: u64) -> ReportVariant {
    let sampler = samplers().get("topk").unwrap()(&SamplingOptions {
        temperature: 1.0,
        top_k: 6,
    });
    generate_report(m, image, sampler.as_ref(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn variants_honour_the_report_contract() {
    let m = model();
    let image = support::image(1, 16);
    let max = m.config().max_tokens;
    let mut differing = 0;
    let first = variant(&m, &image, 0);
    for seed in 0..20 {
        let v = variant(&m, &image, seed);
        assert_eq!(v, variant(&m, &image, seed));
        if v.words() != first.words() {
            differing += 1;
        }
        assert_eq!(v.topic_samples.len(), m.config().n_max);
        assert!(v.slots.windows(2).all(|w| w[0] < w[1]));
        for (i, s) in v.sentences.iter().enumerate() {
            assert_ne!(s[0], EOS);
            assert!(s.last() == Some(&EOS) || s.len() == max);
            assert!(!v.sentences[..i].contains(s));
            assert_eq!(v.attention_maps[i].len(), s.len());
            for row in &v.attention_maps[i] {
                assert_eq!(row.len(), m.config().k());
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }
    assert!(differing > 10);
}

#[test]
fn generation_does_not_depend_on_batching() {
    let m = model();
    let images: Vec<Vec<f32>> = (0..5).map(|i| support::image(10 + i, 16)).collect();
    let refs: Vec<&[f32]> = images.iter().map(Vec::as_slice).collect();
    let cfg = GenerationConfig {
        sampler: "topk".into(),
        sampling: SamplingOptions::default(),
        variants: 2,
        rescoring_samples: 3,
        seed: 5,
    };
    let one = generate_all(&m, &refs, &cfg, 1).unwrap();
    let three = generate_all(&m, &refs, &cfg, 3).unwrap();
    for (a, b) in one.iter().zip(&three) {
        assert_eq!(a.best, b.best);
        assert_eq!(a.variants, b.variants);
    }
}

#[test]
fn best_report_selection() {
    let m = model();
    let image = support::image(2, 16);
    let rng = || ChaCha8Rng::seed_from_u64(77);
    let vs: Vec<ReportVariant> = (0..4).map(|s| variant(&m, &image, s)).collect();
    assert!(select_best_report(&m, &image, &[], 3, &mut rng()).is_err());
    assert_eq!(select_best_report(&m, &image, &vs[..1], 3, &mut rng()).unwrap(), vs[0]);

    let dup = select_best_report(&m, &image, &[vs[1].clone(), vs[1].clone()], 3, &mut rng()).unwrap();
    assert_eq!(
        (dup.sentences, dup.slots),
        (vs[1].sentences.clone(), vs[1].slots.clone())
    );

    let best = select_best_report(&m, &image, &vs, 3, &mut rng()).unwrap();
    let mut candidates = Vec::new();
    for v in &vs {
        candidates.extend(v.slots.iter().copied().zip(v.sentences.iter().cloned()));
    }
    candidates.extend(best.slots.iter().copied().zip(best.sentences.iter().cloned()));
    let scores = rescore(&m, &image, &candidates, 3, &mut rng()).unwrap();
    let n_in = candidates.len() - best.sentences.len();
    for (j, &slot) in best.slots.iter().enumerate() {
        let chosen = scores[n_in + j];
        for (i, c) in candidates[..n_in].iter().enumerate() {
            if c.0 == slot {
                assert!(chosen >= scores[i] - 1e-9);
            }
        }
    }
    let again = select_best_report(&m, &image, &[best.clone(), best.clone()], 3, &mut rng()).unwrap();
    assert_eq!(
        (again.sentences, again.slots),
        (best.sentences.clone(), best.slots.clone())
    );
}

#[test]
fn untempered_full_vocabulary_sampling_matches_the_softmax() {
    let m = model();
    let image = support::image(3, 16);
    let logits: Vec<f64> = {
        let mut tape = m.tape();
        let visual = m.net.visual(&mut tape, &[&image], &mut Dropout::eval()).unwrap();
        let z = tape.slice_rows(visual.priors.mu, 0, 1).unwrap();
        let state = m.net.init_decoder(&mut tape, z).unwrap();
        let out = m
            .net
            .decode_step(&mut tape, &visual, &[BOS], state, &[0], Some(z))
            .unwrap();
        tape.data(out.logits).iter().map(|&x| x as f64).collect()
    };
    let max = logits.iter().cloned().fold(f64::MIN, f64::max);
    let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let p: Vec<f64> = logits.iter().map(|l| (l - max).exp() / z).collect();
    let n = 10_000;
    let mut counts = vec![0usize; p.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..n {
        counts[sample_token(&logits, 1.0, p.len(), &mut rng).unwrap()] += 1;
    }
    for (c, &pt) in counts.iter().zip(&p) {
        let se = (pt * (1.0 - pt) / n as f64).sqrt();
        assert!((*c as f64 / n as f64 - pt).abs() <= 3.0 * se, "{c} draws vs p {pt}");
    }
}

#[test]
fn attention_export_writes_one_row_per_token() {
    let m = model();
    let image = support::image(4, 16);
    let v = variant(&m, &image, 9);
    assert!(!v.sentences.is_empty());
    let dir = tempfile::tempdir().unwrap();
    export_attention_maps(&v, dir.path(), 16).unwrap();
    for (i, s) in v.sentences.iter().enumerate() {
        let csv = std::fs::read_to_string(dir.path().join(format!("sentence_{i}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), s.len());
        for line in csv.lines() {
            let sum: f64 = line.split(',').map(|x| x.parse::<f64>().unwrap()).sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
        for t in 0..s.len() {
            assert!(dir.path().join(format!("sentence_{i}_token_{t}.pgm")).exists());
        }
    }
}
