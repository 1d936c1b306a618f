mod support;

use vti_core::config::Config;
use vti_core::data::{Dataset, EncodedRecord, Split};
use vti_core::model::VtiModel;
use vti_core::train::{history_csv, Checkpoint, StopReason, TrainState, Trainer};

fn tiny() -> Config {
    let mut c = Config::default();
    let m = support::mini_config();
    c.image_size = 32;
    c.conv1 = m.conv_channels[0];
    c.conv2 = m.conv_channels[1];
    c.d_v = m.d_v;
    c.d_model = m.d_model;
    c.visual_layers = m.visual_layers;
    c.d_e = m.d_e;
    c.lang_heads = m.lang_heads;
    c.lang_layers = m.lang_layers;
    c.d_h = m.d_h;
    c.d_z = m.d_z;
    c.prior_hidden = m.prior_hidden;
    c.n = 60;
    c
}

struct Data {
    _dir: tempfile::TempDir,
    vocab: usize,
    train: Vec<EncodedRecord>,
    val: Vec<EncodedRecord>,
}

fn data(cfg: &Config) -> Data {
    let dir = tempfile::tempdir().unwrap();
    let ds = Dataset::synthesize(dir.path(), cfg.n, cfg.seed, cfg.style_count, cfg.min_freq).unwrap();
    Data {
        vocab: ds.vocab.len(),
        train: ds.encoded(Split::Train, cfg.n_max, cfg.max_tokens),
        val: ds.encoded(Split::Val, cfg.n_max, cfg.max_tokens),
        _dir: dir,
    }
}

fn trainer(cfg: &Config, d: &Data) -> Trainer {
    let model = VtiModel::<f32>::new(&cfg.model_config(d.vocab).unwrap(), cfg.train_seed).unwrap();
    Trainer::new(cfg.train_config().unwrap(), TrainState::new(model), d.train.len()).unwrap()
}

fn same_params(a: &TrainState, b: &TrainState) -> bool {
    a.model
        .params
        .iter()
        .zip(b.model.params.iter())
        .all(|((_, _, x), (_, _, y))| x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()))
}

#[test]
fn frozen_model_stops_after_patience_plus_one_evaluations() {
    let mut cfg = tiny();
    cfg.learning_rate = 1e-38;
    cfg.patience = 3;
    cfg.max_epochs = 10;
    let d = data(&cfg);
    let mut t = trainer(&cfg, &d);
    assert_eq!(t.run(&d.train, &d.val, None).unwrap(), StopReason::EarlyStopped);
    assert_eq!(t.state.history.len(), 4);
    assert!(t.state.history.windows(2).all(|w| w[0].val_loss == w[1].val_loss));
}

#[test]
fn same_seed_reproduces_history_and_parameters() {
    let mut cfg = tiny();
    cfg.max_epochs = 2;
    let d = data(&cfg);
    let (mut a, mut b) = (trainer(&cfg, &d), trainer(&cfg, &d));
    a.run(&d.train, &d.val, None).unwrap();
    b.run(&d.train, &d.val, None).unwrap();
    assert_eq!(history_csv(&a.state.history), history_csv(&b.state.history));
    assert!(same_params(&a.state, &b.state));

    cfg.train_seed += 1;
    let mut c = trainer(&cfg, &d);
    c.run(&d.train, &d.val, None).unwrap();
    assert!(!same_params(&a.state, &c.state));
}

#[test]
fn resuming_from_a_checkpoint_matches_an_uninterrupted_run() {
    let mut cfg = tiny();
    cfg.max_epochs = 3;
    let d = data(&cfg);
    let mut full = trainer(&cfg, &d);
    full.run(&d.train, &d.val, None).unwrap();

    let mut first = trainer(&cfg, &d);
    assert_eq!(first.run(&d.train, &d.val, Some(1)).unwrap(), StopReason::Paused);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.ckpt");
    Checkpoint {
        config: cfg.clone(),
        vocab: d.vocab,
        state: first.state,
    }
    .save(&path)
    .unwrap();
    let ck = Checkpoint::load(&path).unwrap();
    assert_eq!(ck.config, cfg);
    let mut rest = Trainer::new(ck.config.train_config().unwrap(), ck.state, d.train.len()).unwrap();
    rest.run(&d.train, &d.val, None).unwrap();

    assert_eq!(history_csv(&full.state.history), history_csv(&rest.state.history));
    assert_eq!(full.state.step, rest.state.step);
    assert!(same_params(&full.state, &rest.state));
}

#[test]
fn best_model_is_the_lowest_validation_epoch() {
    let mut cfg = tiny();
    cfg.max_epochs = 3;
    let d = data(&cfg);
    let mut t = trainer(&cfg, &d);
    t.run(&d.train, &d.val, None).unwrap();
    let best = t.state.history.iter().map(|h| h.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(t.state.best_val, best);
    let again = vti_core::train::evaluate_loss(&t.state.best_model(), &d.val, cfg.batch_size).unwrap();
    assert!((again.loss - best).abs() < 1e-9);
}

#[test]
fn first_epoch_cuts_loss_well_below_uniform_prediction() {
    let cfg = Config::default();
    let d = data(&cfg);
    let mut t = trainer(&cfg, &d);
    let per_report_tokens =
        |r: &EncodedRecord| r.sentences.iter().map(|s| s.len() + 1).sum::<usize>() + cfg.n_max - r.sentences.len();
    let mut per_token = Vec::new();
    for batch in d.train.chunks(cfg.batch_size) {
        let refs: Vec<&EncodedRecord> = batch.iter().collect();
        let st = t.step(&refs).unwrap();
        let tokens: usize = batch.iter().map(per_report_tokens).sum();
        per_token.push(st.loss * (cfg.n_max * batch.len()) as f64 / tokens as f64);
    }
    let tail = &per_token[per_token.len() - 50..];
    let avg = tail.iter().sum::<f64>() / 50.0;
    let uniform = (d.vocab as f64).ln();
    assert!(avg <= 0.7 * uniform, "moving average {avg} vs uniform {uniform}");
}
