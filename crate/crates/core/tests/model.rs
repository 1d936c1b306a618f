mod support;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vti_core::data::{synth_generate, vocab_for, Condition, EncodedRecord, EOS};
use vti_core::model::{Dropout, LossOptions, ModelConfig, Objective, Sequence, VtiModel};
use vti_tensor::Tensor;

use support::{image, mini_config, miniature_grad_check, record};

fn set(model: &mut VtiModel<f64>, name: &str, value: f64) {
    let id = model.params.id(name).unwrap_or_else(|| panic!("{name}"));
    model.params.get_mut(id).data_mut().iter_mut().for_each(|x| *x = value);
}

#[test]
fn visual_features_shape_and_determinism() {
    let model = VtiModel::<f32>::new(&ModelConfig::new(30), 1).unwrap();
    let img = image(1, 32);
    let mut tape = model.tape();
    let a = model.net.extract_visual_features(&mut tape, &[&img, &img]).unwrap();
    assert_eq!(tape.shape(a), [2 * 16, 64]);
    let d = tape.data(a);
    assert_eq!(&d[..16 * 64], &d[16 * 64..]);
    assert!(model.net.extract_visual_features(&mut tape, &[&img[..100]]).is_err());
}

#[test]
fn zero_image_with_zero_biases_gives_zero_features() {
    let mut model = VtiModel::<f32>::new(&ModelConfig::new(30), 1).unwrap();
    for id in model.net.conv_biases() {
        model.params.get_mut(id).data_mut().fill(0.0);
    }
    let zeros = vec![0.0; 32 * 32];
    let mut tape = model.tape();
    let f = model.net.extract_visual_features(&mut tape, &[&zeros]).unwrap();
    assert!(tape.data(f).iter().all(|&x| x == 0.0));
}

#[test]
fn priors_have_one_distribution_per_slot_and_ignore_location_order() {
    let model = VtiModel::<f64>::new(&mini_config(), 2).unwrap();
    let c = model.config();
    let img = image(3, 16);
    let mut tape = model.tape();
    let f = model.net.extract_visual_features(&mut tape, &[&img]).unwrap();
    let p = model.net.infer_priors(&mut tape, f, 1, &mut Dropout::eval()).unwrap();
    assert_eq!(tape.shape(p.mu), [c.n_max, c.d_z]);
    assert_eq!(tape.shape(p.log_sigma), [c.n_max, c.d_z]);
    let perm = tape.gather_rows(f, &[2, 0, 3, 1]).unwrap();
    let q = model
        .net
        .infer_priors(&mut tape, perm, 1, &mut Dropout::eval())
        .unwrap();
    for (a, b) in tape.data(p.mu).iter().zip(tape.data(q.mu)) {
        assert!((a - b).abs() < 1e-5);
    }
    for (a, b) in tape.data(p.log_sigma).iter().zip(tape.data(q.log_sigma)) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn posterior_shape_and_determinism() {
    let model = VtiModel::<f64>::new(&mini_config(), 2).unwrap();
    let mut tape = model.tape();
    let s: &[usize] = &[5, 6, 7];
    let q = model
        .net
        .infer_posterior(&mut tape, &[s, s, &[7, 6, 5]], &mut Dropout::eval())
        .unwrap();
    assert_eq!(tape.shape(q.mu), [3, 4]);
    let mu = tape.data(q.mu);
    assert_eq!(&mu[..4], &mu[4..8]);
    assert_ne!(&mu[..4], &mu[8..]);
    assert!(model
        .net
        .infer_posterior(&mut tape, &[&[]], &mut Dropout::eval())
        .is_err());
}

#[test]
fn attention_closed_forms() {
    let mut model = VtiModel::<f64>::new(&mini_config(), 2).unwrap();
    let (_, _, _, att_w) = model.net.attention_params();
    let d_h = model.config().d_h;
    let mut w = vec![0.0; d_h];
    w[0] = 1.0;
    *model.params.get_mut(att_w) = Tensor::new(vec![d_h, 1], w).unwrap();
    {
        let mut tape = model.tape();
        let features =
            tape.constant(Tensor::from_f64(&[4, 8], &(0..32).map(|i| i as f64).collect::<Vec<_>>()).unwrap());
        let mut keys = vec![0.0; 4 * d_h];
        keys[0] = 2f64.ln().atanh();
        let keys = tape.constant(Tensor::new(vec![4, d_h], keys).unwrap());
        let h1 = tape.constant(Tensor::zeros(&[1, d_h]));
        let (alpha, v_a) = model.net.visual_attention(&mut tape, features, keys, h1, &[0]).unwrap();
        let a = tape.data(alpha);
        for (got, want) in a.iter().zip([0.4, 0.2, 0.2, 0.2]) {
            assert!((got - want).abs() < 1e-12, "{a:?}");
        }
        let want: Vec<f64> = (0..8)
            .map(|d| 0.4 * d as f64 + 0.2 * (8 + d + 16 + d + 24 + d) as f64)
            .collect();
        for (got, want) in tape.data(v_a).iter().zip(&want) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    model.params.get_mut(att_w).data_mut().fill(0.0);
    let mut tape = model.tape();
    let varied = tape.constant(Tensor::from_f64(&[4, 8], &(0..32).map(|i| i as f64).collect::<Vec<_>>()).unwrap());
    let keys =
        tape.constant(Tensor::from_f64(&[4, d_h], &(0..32).map(|i| (i as f64).sin()).collect::<Vec<_>>()).unwrap());
    let h1 = tape.constant(Tensor::from_f64(&[1, d_h], &[0.3; 8]).unwrap());
    let (alpha, _) = model.net.visual_attention(&mut tape, varied, keys, h1, &[0]).unwrap();
    assert!(tape.data(alpha).iter().all(|&x| (x - 0.25).abs() < 1e-12));

    let same = tape.constant(Tensor::from_f64(&[4, 8], &[0.25; 32]).unwrap());
    let (_, v_a) = model.net.visual_attention(&mut tape, same, keys, h1, &[0]).unwrap();
    assert!(tape.data(v_a).iter().all(|&x| (x - 0.25).abs() < 1e-12));
}

#[test]
fn zero_output_projection_gives_uniform_predictions() {
    let mut model = VtiModel::<f64>::new(&mini_config(), 4).unwrap();
    set(&mut model, "decoder.out.weight", 0.0);
    set(&mut model, "decoder.out.bias", 0.0);
    let img = image(5, 16);
    let mut tape = model.tape();
    let visual = model.net.visual(&mut tape, &[&img], &mut Dropout::eval()).unwrap();
    let state = model.net.init_decoder(&mut tape, visual.priors.mu).unwrap();
    let groups = vec![0; 7];
    let out = model
        .net
        .decode_step(&mut tape, &visual, &[1; 7], state, &groups, None)
        .unwrap();
    let p = tape.softmax(out.logits, 1).unwrap();
    assert!(tape.data(p).iter().all(|&x| (x - 1.0 / 12.0).abs() < 1e-12));
    assert!(model
        .net
        .decode_step(&mut tape, &visual, &[12; 7], out.state, &groups, None)
        .is_err());

    let r = record(16, vec![vec![5, 6, 7], vec![8]]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let out = model
        .net
        .elbo_loss(&mut tape, &[&r], &LossOptions::training(0.0, 1), &mut rng)
        .unwrap();
    let per_token = out.ce * model.config().n_max as f64 / out.tokens as f64;
    assert!((per_token - 12f64.ln()).abs() < 1e-9, "{per_token}");
    assert_eq!(tape.data(out.loss)[0], out.ce);
}

#[test]
fn loss_is_at_least_cross_entropy() {
    let model = VtiModel::<f64>::new(&mini_config(), 4).unwrap();
    let r = record(16, vec![vec![5, 6, 7]]);
    for beta in [0.0, 0.5, 1.0] {
        let mut tape = model.tape();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = model
            .net
            .elbo_loss(&mut tape, &[&r], &LossOptions::training(beta, 2), &mut rng)
            .unwrap();
        assert!(tape.data(out.loss)[0] >= out.ce);
        assert!(out.kl_sum >= 0.0);
    }
    let mut det = mini_config();
    det.objective = Objective::Deterministic;
    let model = VtiModel::<f64>::new(&det, 4).unwrap();
    let mut tape = model.tape();
    let out = model
        .net
        .elbo_loss(
            &mut tape,
            &[&r],
            &LossOptions::training(1.0, 1),
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap();
    assert_eq!(out.kl_sum, 0.0);
    assert_eq!(tape.data(out.loss)[0], out.ce);
}

#[test]
fn decoding_is_causal_and_uses_one_attention_map_per_step() {
    let model = VtiModel::<f64>::new(&mini_config(), 6).unwrap();
    let img = image(7, 16);
    let mut tape = model.tape();
    let visual = model.net.visual(&mut tape, &[&img], &mut Dropout::eval()).unwrap();
    let a = Sequence::for_words(0, 0, &[5, 6, 7, 8], 1.0);
    let b = Sequence::for_words(0, 0, &[5, 6, 9, 10], 1.0);
    let tf = model
        .net
        .teacher_forced(&mut tape, &visual, visual.priors.mu, &[a.clone(), b])
        .unwrap();
    assert_eq!(tf.alphas.len(), a.input.len());
    for &alpha in &tf.alphas {
        for row in tape.data(alpha).chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
    let logits = tape.data(tf.logits).to_vec();
    let row = |seq: usize, t: usize| {
        let r = tf.rows.iter().position(|&x| x == (seq, t)).unwrap();
        &logits[r * 12..(r + 1) * 12]
    };
    for t in 0..3 {
        assert_eq!(row(0, t), row(1, t), "step {t}");
    }
    assert_ne!(row(0, 3), row(1, 3));
}

#[test]
fn miniature_end_to_end_gradient_check() {
    let report = miniature_grad_check();
    assert!(report.passed && report.max_rel_err <= 1e-3, "{report:?}");
}

#[test]
fn one_batch_reaches_every_parameter() {
    let recs = synth_generate(40, 3, 3).unwrap();
    let vocab = vocab_for(&recs, 1).unwrap();
    let mut cfg = mini_config();
    cfg.image_size = 32;
    cfg.vocab = vocab.len();
    let model = VtiModel::<f64>::new(&cfg, 1).unwrap();
    let enc: Vec<EncodedRecord> = recs
        .iter()
        .take(8)
        .map(|r| EncodedRecord::encode(r, &vocab, 7, 19))
        .collect();
    let batch: Vec<&EncodedRecord> = enc.iter().collect();
    let mut tape = model.tape();
    let out = model
        .net
        .elbo_loss(
            &mut tape,
            &batch,
            &LossOptions::training(0.5, 1),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
    tape.backward(out.loss).unwrap();
    let mut grads = model.params.zero_grads();
    tape.accumulate_param_grads(&mut grads);
    for (id, name, _) in model.params.iter() {
        assert!(grads[id.index()].iter().any(|&g| g != 0.0), "{name} has no gradient");
    }
}

#[test]
fn canonical_records_use_condition_slots() {
    let recs = synth_generate(60, 5, 3).unwrap();
    let vocab = vocab_for(&recs, 1).unwrap();
    for r in &recs {
        let e = EncodedRecord::encode(r, &vocab, 7, 19);
        let want: Vec<usize> = r.labels.iter().map(|c| c.id()).chain([6]).collect();
        assert_eq!(e.slots, want);
    }
    let e = EncodedRecord::encode(&recs[0], &vocab, 5, 19);
    assert_eq!(e.slots, (0..e.sentences.len()).collect::<Vec<_>>());
    assert_eq!(Condition::ALL.len() + 1, 7);
    assert_eq!(EOS, 2);
}
