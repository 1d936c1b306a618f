//! Diagonal Gaussians on the tape, their KL divergence, and β schedules.

use rand::Rng;
use rand_distr::StandardNormal;
use vti_tensor::{Real, Tape, Tensor, Var};

use crate::error::{contract, Result};
use crate::registry::Registry;

pub const LOG_SIGMA_MIN: f64 = -8.0;
pub const LOG_SIGMA_MAX: f64 = 4.0;

/// Row-batched diagonal Gaussians: `mu` and `log_sigma` are both `n × d_z`.
#[derive(Debug, Clone, Copy)]
pub struct DiagonalGaussian {
    pub mu: Var,
    pub log_sigma: Var,
}

impl DiagonalGaussian {
    /// Clamps `log_sigma` into [`LOG_SIGMA_MIN`, `LOG_SIGMA_MAX`].
    pub fn new<T: Real>(tape: &mut Tape<'_, T>, mu: Var, log_sigma: Var) -> Result<Self> {
        if tape.shape(mu) != tape.shape(log_sigma) || tape.shape(mu).len() != 2 {
            return Err(contract(format!(
                "gaussian: mu {:?} and log_sigma {:?} must be equal rank-2 shapes",
                tape.shape(mu),
                tape.shape(log_sigma)
            )));
        }
        let log_sigma = tape.clamp(log_sigma, T::of(LOG_SIGMA_MIN), T::of(LOG_SIGMA_MAX));
        Ok(Self { mu, log_sigma })
    }

    /// Splits `n × 2d` head output into mean (left half) and log-sigma.
    pub fn from_joint<T: Real>(tape: &mut Tape<'_, T>, joint: Var) -> Result<Self> {
        let cols = tape.shape(joint)[1];
        if cols % 2 != 0 {
            return Err(contract(format!("gaussian: odd joint width {cols}")));
        }
        let mu = tape.slice_cols(joint, 0, cols / 2)?;
        let ls = tape.slice_cols(joint, cols / 2, cols / 2)?;
        Self::new(tape, mu, ls)
    }

    pub fn rows<T: Real>(&self, tape: &Tape<'_, T>) -> usize {
        tape.shape(self.mu)[0]
    }

    pub fn dim<T: Real>(&self, tape: &Tape<'_, T>) -> usize {
        tape.shape(self.mu)[1]
    }

    pub fn gather<T: Real>(&self, tape: &mut Tape<'_, T>, rows: &[usize]) -> Result<Self> {
        Ok(Self {
            mu: tape.gather_rows(self.mu, rows)?,
            log_sigma: tape.gather_rows(self.log_sigma, rows)?,
        })
    }
}

/// `mu + exp(log_sigma) ⊙ epsilon`.
pub fn reparameterize<T: Real>(tape: &mut Tape<'_, T>, g: &DiagonalGaussian, epsilon: Var) -> Result<Var> {
    if tape.shape(epsilon) != tape.shape(g.mu) {
        return Err(contract(format!(
            "reparameterize: epsilon {:?} vs distribution {:?}",
            tape.shape(epsilon),
            tape.shape(g.mu)
        )));
    }
    let sigma = tape.exp(g.log_sigma);
    let noise = tape.mul(sigma, epsilon)?;
    Ok(tape.add(g.mu, noise)?)
}

/// Row-wise KL(q ‖ p), shape `n × 1`.
pub fn kl_rows<T: Real>(tape: &mut Tape<'_, T>, q: &DiagonalGaussian, p: &DiagonalGaussian) -> Result<Var> {
    if tape.shape(q.mu) != tape.shape(p.mu) {
        return Err(contract(format!(
            "kl: dimension mismatch {:?} vs {:?}",
            tape.shape(q.mu),
            tape.shape(p.mu)
        )));
    }
    let log_ratio = tape.sub(p.log_sigma, q.log_sigma)?;
    let var_ratio = tape.scale(log_ratio, T::of(-2.0));
    let var_ratio = tape.exp(var_ratio);
    let dm = tape.sub(q.mu, p.mu)?;
    let dm2 = tape.square(dm)?;
    let inv_var_p = tape.scale(p.log_sigma, T::of(-2.0));
    let inv_var_p = tape.exp(inv_var_p);
    let mean_term = tape.mul(dm2, inv_var_p)?;
    let quad = tape.add(var_ratio, mean_term)?;
    let quad = tape.scale(quad, T::of(0.5));
    let elem = tape.add(log_ratio, quad)?;
    let elem = tape.offset(elem, T::of(-0.5));
    Ok(tape.sum_axis(elem, 1)?)
}

/// Closed-form KL summed over all rows and dimensions.
pub fn kl_diag_gauss<T: Real>(tape: &mut Tape<'_, T>, q: &DiagonalGaussian, p: &DiagonalGaussian) -> Result<Var> {
    let rows = kl_rows(tape, q, p)?;
    Ok(tape.sum(rows))
}

/// `rows × dim` standard-normal draws.
pub fn standard_normal<T: Real, R: Rng + ?Sized>(rng: &mut R, rows: usize, dim: usize) -> Tensor<T> {
    let data = (0..rows * dim)
        .map(|_| T::of(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Tensor::new(vec![rows, dim], data).expect("positive extents")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSchedule {
    pub beta_max: f64,
    pub total_steps: u64,
    pub cycles: u64,
    pub ramp_ratio: f64,
}

impl AnnealSchedule {
    pub fn new(beta_max: f64, total_steps: u64, cycles: u64, ramp_ratio: f64) -> Result<Self> {
        if !(beta_max >= 0.0) || cycles == 0 || total_steps < cycles || !(ramp_ratio > 0.0 && ramp_ratio <= 1.0) {
            return Err(contract(format!(
                "anneal schedule: beta_max {beta_max}, total_steps {total_steps}, cycles {cycles}, ramp_ratio {ramp_ratio}"
            )));
        }
        Ok(Self {
            beta_max,
            total_steps,
            cycles,
            ramp_ratio,
        })
    }

    pub fn cycle_len(&self) -> f64 {
        self.total_steps as f64 / self.cycles as f64
    }

    /// Linear ramp over the first `ramp_ratio` of each cycle, then plateau.
    pub fn beta_at(&self, step: u64) -> f64 {
        let c = self.cycle_len();
        let s = step as f64;
        let t = s - (s / c).floor() * c;
        self.beta_max * (t / (self.ramp_ratio * c)).min(1.0)
    }
}

pub trait BetaSchedule: Send + Sync {
    fn beta(&self, step: u64) -> f64;
}

struct Cyclical(AnnealSchedule);

impl BetaSchedule for Cyclical {
    fn beta(&self, step: u64) -> f64 {
        self.0.beta_at(step)
    }
}

/// A single ramp over the whole run.
struct Monotonic(AnnealSchedule);

impl BetaSchedule for Monotonic {
    fn beta(&self, step: u64) -> f64 {
        let ramp = self.0.ramp_ratio * self.0.total_steps as f64;
        self.0.beta_max * (step as f64 / ramp).min(1.0)
    }
}

struct Constant(f64);

impl BetaSchedule for Constant {
    fn beta(&self, _step: u64) -> f64 {
        self.0
    }
}

pub type ScheduleCtor = fn(&AnnealSchedule) -> Box<dyn BetaSchedule>;

pub fn schedules() -> Registry<ScheduleCtor> {
    let mut r: Registry<ScheduleCtor> = Registry::new("beta schedule");
    r.register("cyclical", |s| Box::new(Cyclical(*s)))
        .register("monotonic", |s| Box::new(Monotonic(*s)))
        .register("constant", |s| Box::new(Constant(s.beta_max)));
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss(tape: &mut Tape<'_, f64>, mu: &[f64], ls: &[f64]) -> DiagonalGaussian {
        let n = mu.len();
        let m = tape.constant(Tensor::from_f64(&[1, n], mu).unwrap());
        let l = tape.constant(Tensor::from_f64(&[1, n], ls).unwrap());
        DiagonalGaussian::new(tape, m, l).unwrap()
    }

    fn kl(mq: &[f64], lq: &[f64], mp: &[f64], lp: &[f64]) -> f64 {
        let mut tape = Tape::new();
        let q = gauss(&mut tape, mq, lq);
        let p = gauss(&mut tape, mp, lp);
        let k = kl_diag_gauss(&mut tape, &q, &p).unwrap();
        tape.data(k)[0]
    }

    fn sample(mu: &[f64], ls: &[f64], eps: &[f64]) -> Vec<f64> {
        let mut tape = Tape::new();
        let g = gauss(&mut tape, mu, ls);
        let e = tape.constant(Tensor::from_f64(&[1, eps.len()], eps).unwrap());
        let z = reparameterize(&mut tape, &g, e).unwrap();
        tape.data(z).to_vec()
    }

    #[test]
    fn reparameterize_examples() {
        assert_eq!(sample(&[0.3, -1.0], &[0.2, 0.1], &[0.0, 0.0]), [0.3, -1.0]);
        for (z, m) in sample(&[0.3, -1.0], &[-8.0, -8.0], &[5.9, -5.9])
            .iter()
            .zip([0.3, -1.0])
        {
            assert!((z - m).abs() <= 2e-3);
        }
        let z = sample(&[0.3], &[-8.0], &[6.0])[0];
        assert!((z - 0.3 - 6.0 * (-8f64).exp()).abs() < 1e-15);
        assert_eq!(sample(&[0.0], &[0.0], &[0.5]), [0.5]);
    }

    #[test]
    fn reparameterize_rejects_shape_mismatch() {
        let mut tape = Tape::<f64>::new();
        let g = gauss(&mut tape, &[0.0, 0.0], &[0.0, 0.0]);
        let e = tape.constant(Tensor::zeros(&[1, 3]));
        assert!(reparameterize(&mut tape, &g, e).is_err());
    }

    #[test]
    fn log_sigma_is_clamped() {
        let mut tape = Tape::<f64>::new();
        let g = gauss(&mut tape, &[0.0, 0.0], &[-20.0, 9.0]);
        assert_eq!(tape.data(g.log_sigma), &[LOG_SIGMA_MIN, LOG_SIGMA_MAX]);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl(&[0.4, -0.2], &[0.1, 0.3], &[0.4, -0.2], &[0.1, 0.3]), 0.0);
        assert!((kl(&[1.0], &[0.0], &[0.0], &[0.0]) - 0.5).abs() < 1e-12);
        let expect = 0.5 * (4.0 - 1.0 - 4f64.ln());
        assert!((kl(&[0.0], &[2f64.ln()], &[0.0], &[0.0]) - expect).abs() < 1e-12);
        assert!((expect - 0.8069).abs() < 1e-4);
    }

    #[test]
    fn kl_rejects_dimension_mismatch() {
        let mut tape = Tape::<f64>::new();
        let q = gauss(&mut tape, &[0.0, 0.0], &[0.0, 0.0]);
        let p = gauss(&mut tape, &[0.0], &[0.0]);
        assert!(kl_diag_gauss(&mut tape, &q, &p).is_err());
    }

    #[test]
    fn beta_examples() {
        let s = AnnealSchedule::new(1.0, 400, 4, 0.5).unwrap();
        assert_eq!(s.cycle_len(), 100.0);
        assert_eq!(s.beta_at(0), 0.0);
        assert_eq!(s.beta_at(50), 1.0);
        assert_eq!(s.beta_at(12), 0.24);
        assert!((s.beta_at(100 + 12) - 0.24).abs() < 1e-12);
        assert_eq!(s.beta_at(99), 1.0);
        assert_eq!(s.beta_at(100), 0.0);
    }

    #[test]
    fn schedule_validation() {
        assert!(AnnealSchedule::new(1.0, 3, 4, 0.5).is_err());
        assert!(AnnealSchedule::new(1.0, 10, 0, 0.5).is_err());
        assert!(AnnealSchedule::new(1.0, 10, 1, 0.0).is_err());
        assert!(AnnealSchedule::new(-1.0, 10, 1, 0.5).is_err());
    }

    #[test]
    fn registered_schedules() {
        let s = AnnealSchedule::new(2.0, 100, 2, 0.5).unwrap();
        let reg = schedules();
        assert_eq!(reg.get("cyclical").unwrap()(&s).beta(60), 0.8);
        assert_eq!(reg.get("monotonic").unwrap()(&s).beta(25), 1.0);
        assert_eq!(reg.get("monotonic").unwrap()(&s).beta(90), 2.0);
        assert_eq!(reg.get("constant").unwrap()(&s).beta(0), 2.0);
        assert!(reg.get("sigmoid").is_err());
    }
}
