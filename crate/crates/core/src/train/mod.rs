//! Mini-batch optimisation with annealed KL weight, gradient clipping,
//! early stopping and resumable checkpoints.

mod adam;
pub mod checkpoint;
mod state;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::{adam_step, clip_global_norm, AdamConfig, Moments};
pub use state::{Checkpoint, TrainState};

use crate::data::EncodedRecord;
use crate::error::{contract, CoreError, Result};
use crate::latent::{schedules, AnnealSchedule, BetaSchedule};
use crate::model::{LossOptions, VtiModel};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub mc_samples: usize,
    pub clip_norm: f64,
    pub schedule: String,
    pub beta_max: f64,
    pub cycles: u64,
    pub ramp_ratio: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 32,
            max_epochs: 30,
            patience: 5,
            mc_samples: 1,
            clip_norm: 5.0,
            schedule: "cyclical".into(),
            beta_max: 1.0,
            cycles: 4,
            ramp_ratio: 0.5,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        let ok = self.batch_size > 0
            && self.max_epochs > 0
            && self.patience > 0
            && self.mc_samples > 0
            && self.clip_norm > 0.0
            && a.learning_rate >= 0.0
            && (0.0..1.0).contains(&a.beta1)
            && (0.0..1.0).contains(&a.beta2)
            && a.eps > 0.0;
        if !ok {
            return Err(CoreError::Config(format!("invalid training settings: {self:?}")));
        }
        schedules().get(&self.schedule)?;
        AnnealSchedule::new(self.beta_max, self.cycles.max(1), self.cycles, self.ramp_ratio)?;
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> u64 {
        n_train.div_ceil(self.batch_size) as u64
    }

    /// The KL-weight schedule spanning the whole run.
    pub fn beta_schedule(&self, n_train: usize) -> Result<Box<dyn BetaSchedule>> {
        let total = (self.steps_per_epoch(n_train) * self.max_epochs as u64).max(self.cycles.max(1));
        let anneal = AnnealSchedule::new(self.beta_max, total, self.cycles, self.ramp_ratio)?;
        Ok(schedules().get(&self.schedule)?(&anneal))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub ce: f64,
    pub kl: f64,
    pub accuracy: f64,
    pub grad_norm: f64,
    pub beta: f64,
}

/// Validation-mode averages over a record set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalStats {
    pub loss: f64,
    pub ce: f64,
    pub kl: f64,
    pub accuracy: f64,
}

/// One row of training history. Carries no timing so reruns compare
/// byte for byte.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub step: u64,
    pub beta: f64,
    pub train_loss: f64,
    pub train_ce: f64,
    pub train_kl: f64,
    pub val_loss: f64,
    pub val_ce: f64,
    pub val_kl: f64,
    pub val_accuracy: f64,
    pub grad_norm: f64,
}

impl EpochStats {
    pub const FIELDS: [&'static str; 11] = [
        "epoch",
        "step",
        "beta",
        "train_loss",
        "train_ce",
        "train_kl",
        "val_loss",
        "val_ce",
        "val_kl",
        "val_accuracy",
        "grad_norm",
    ];

    pub fn to_array(&self) -> [f64; 11] {
        [
            self.epoch as f64,
            self.step as f64,
            self.beta,
            self.train_loss,
            self.train_ce,
            self.train_kl,
            self.val_loss,
            self.val_ce,
            self.val_kl,
            self.val_accuracy,
            self.grad_norm,
        ]
    }

    pub fn from_array(a: &[f64]) -> Self {
        Self {
            epoch: a[0] as usize,
            step: a[1] as u64,
            beta: a[2],
            train_loss: a[3],
            train_ce: a[4],
            train_kl: a[5],
            val_loss: a[6],
            val_ce: a[7],
            val_kl: a[8],
            val_accuracy: a[9],
            grad_norm: a[10],
        }
    }
}

pub fn history_csv(history: &[EpochStats]) -> String {
    let mut s = EpochStats::FIELDS.join(",");
    s.push('\n');
    for h in history {
        let row: Vec<String> = h.to_array().iter().map(|x| x.to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    EarlyStopped,
    /// A non-finite loss or gradient appeared at this step.
    Diverged {
        step: u64,
    },
    /// The per-call epoch limit was reached; the state can be resumed.
    Paused,
}

/// Mean validation loss, CE, per-sentence KL and token accuracy with β = 1,
/// posterior means and dropout off.
pub fn evaluate_loss(model: &VtiModel<f32>, records: &[EncodedRecord], batch_size: usize) -> Result<EvalStats> {
    if records.is_empty() || batch_size == 0 {
        return Err(contract("evaluate_loss: empty record set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut loss, mut ce, mut kl, mut active, mut correct, mut tokens) = (0.0, 0.0, 0.0, 0, 0, 0);
    for chunk in records.chunks(batch_size) {
        let batch: Vec<&EncodedRecord> = chunk.iter().collect();
        let mut tape = model.tape();
        let out = model
            .net
            .elbo_loss(&mut tape, &batch, &LossOptions::validation(), &mut rng)?;
        let w = chunk.len() as f64;
        loss += tape.data(out.loss)[0] as f64 * w;
        ce += out.ce * w;
        kl += out.kl_sum;
        active += out.active;
        correct += out.correct;
        tokens += out.tokens;
    }
    let n = records.len() as f64;
    Ok(EvalStats {
        loss: loss / n,
        ce: ce / n,
        kl: if active == 0 { 0.0 } else { kl / active as f64 },
        accuracy: correct as f64 / tokens.max(1) as f64,
    })
}

pub struct Trainer {
    pub config: TrainConfig,
    pub state: TrainState,
    schedule: Box<dyn BetaSchedule>,
}

impl Trainer {
    pub fn new(config: TrainConfig, state: TrainState, n_train: usize) -> Result<Self> {
        config.validate()?;
        let schedule = config.beta_schedule(n_train)?;
        Ok(Self {
            config,
            state,
            schedule,
        })
    }

    /// One optimiser step on `batch`. The step's randomness depends only on
    /// the seed and the global step count.
    pub fn step(&mut self, batch: &[&EncodedRecord]) -> Result<StepStats> {
        let s = &mut self.state;
        let beta = self.schedule.beta(s.step);
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(s.step);
        let opts = LossOptions::training(beta, self.config.mc_samples);
        let (stats, mut grads) = {
            let model = &s.model;
            let mut tape = model.tape();
            let out = model.net.elbo_loss(&mut tape, batch, &opts, &mut rng)?;
            let loss = tape.data(out.loss)[0] as f64;
            if !loss.is_finite() {
                return Err(CoreError::NonFiniteGradient("loss".into()));
            }
            tape.backward(out.loss)?;
            let mut grads = model.params.zero_grads();
            tape.accumulate_param_grads(&mut grads);
            let stats = StepStats {
                loss,
                ce: out.ce,
                kl: out.kl_per_sentence(),
                accuracy: out.accuracy(),
                grad_norm: 0.0,
                beta,
            };
            (stats, grads)
        };
        let grad_norm = clip_global_norm(&mut grads, self.config.clip_norm);
        adam_step(
            &mut s.model.params,
            &grads,
            &mut s.moments,
            s.step + 1,
            &self.config.adam,
        )?;
        s.step += 1;
        Ok(StepStats { grad_norm, ..stats })
    }

    fn epoch_order(&self, n: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x9e37_79b9_7f4a_7c15);
        rng.set_stream(self.state.epoch as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Trains until early stopping, the epoch cap, divergence, or
    /// `epoch_limit` epochs in this call.
    pub fn run(
        &mut self,
        train: &[EncodedRecord],
        val: &[EncodedRecord],
        epoch_limit: Option<usize>,
    ) -> Result<StopReason> {
        self.run_observed(train, val, epoch_limit, |_| {})
    }

    /// [`Trainer::run`], calling `on_epoch` after every validation pass.
    pub fn run_observed(
        &mut self,
        train: &[EncodedRecord],
        val: &[EncodedRecord],
        epoch_limit: Option<usize>,
        mut on_epoch: impl FnMut(&EpochStats),
    ) -> Result<StopReason> {
        if train.is_empty() || val.is_empty() {
            return Err(contract("training needs non-empty train and validation sets"));
        }
        if self.state.bad_epochs >= self.config.patience {
            return Ok(StopReason::EarlyStopped);
        }
        let mut epochs_run = 0;
        while self.state.epoch < self.config.max_epochs {
            if epoch_limit.is_some_and(|l| epochs_run >= l) {
                return Ok(StopReason::Paused);
            }
            let order = self.epoch_order(train.len());
            let (mut loss, mut ce, mut kl, mut norm, mut beta) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for idx in order.chunks(self.config.batch_size) {
                let batch: Vec<&EncodedRecord> = idx.iter().map(|&i| &train[i]).collect();
                let st = match self.step(&batch) {
                    Ok(st) => st,
                    Err(CoreError::NonFiniteGradient(_)) => return Ok(StopReason::Diverged { step: self.state.step }),
                    Err(e) => return Err(e),
                };
                let w = batch.len() as f64;
                loss += st.loss * w;
                ce += st.ce * w;
                kl += st.kl * w;
                norm += st.grad_norm * w;
                beta = st.beta;
            }
            let v = evaluate_loss(&self.state.model, val, self.config.batch_size)?;
            if !v.loss.is_finite() {
                return Ok(StopReason::Diverged { step: self.state.step });
            }
            let n = train.len() as f64;
            let s = &mut self.state;
            s.epoch += 1;
            epochs_run += 1;
            s.history.push(EpochStats {
                epoch: s.epoch,
                step: s.step,
                beta,
                train_loss: loss / n,
                train_ce: ce / n,
                train_kl: kl / n,
                val_loss: v.loss,
                val_ce: v.ce,
                val_kl: v.kl,
                val_accuracy: v.accuracy,
                grad_norm: norm / n,
            });
            on_epoch(s.history.last().expect("just pushed"));
            if v.loss < s.best_val {
                s.best_val = v.loss;
                s.best_params = s.model.params.clone();
                s.bad_epochs = 0;
            } else {
                s.bad_epochs += 1;
                if s.bad_epochs >= self.config.patience {
                    return Ok(StopReason::EarlyStopped);
                }
            }
        }
        Ok(StopReason::MaxEpochs)
    }
}
