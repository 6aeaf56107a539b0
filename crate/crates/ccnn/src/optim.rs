//! SGD with Nesterov momentum over complex weights, the piecewise-constant
//! learning-rate schedule, and Glorot initialization adapted to complex
//! tensors.
//!
//! The update treats the real and imaginary parts of every weight as
//! independent real coordinates:
//!
//! ```text
//! Z_{t+1} = mu Z_t - eta * grad(W_t + mu Z_t)
//! W_{t+1} = W_t + Z_{t+1}
//! ```
//!
//! where `grad` is the complex gradient `dl/dA + i dl/dB`.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{ComplexTensor, RealTensor};

/// The elementwise operations the optimizer needs from a weight tensor;
/// implemented by both the complex and the real tensor, since the update
/// treats every real coordinate independently.
pub trait OptimTensor: Clone {
    fn zeros_like(&self) -> Self;
    fn scaled(&self, s: f64) -> Self;
    fn axpy(&mut self, s: f64, other: &Self) -> Result<()>;
}

impl OptimTensor for ComplexTensor {
    fn zeros_like(&self) -> Self {
        ComplexTensor::zeros(self.shape())
    }

    fn scaled(&self, s: f64) -> Self {
        ComplexTensor::scaled(self, s)
    }

    fn axpy(&mut self, s: f64, other: &Self) -> Result<()> {
        ComplexTensor::axpy(self, s, other)
    }
}

impl OptimTensor for RealTensor {
    fn zeros_like(&self) -> Self {
        RealTensor::zeros(self.shape())
    }

    fn scaled(&self, s: f64) -> Self {
        RealTensor::scaled(self, s)
    }

    fn axpy(&mut self, s: f64, other: &Self) -> Result<()> {
        RealTensor::axpy(self, s, other)
    }
}

/// Piecewise-constant schedule: `(threshold, rate)` entries mean "use
/// `rate` while `iteration < threshold`"; thresholds strictly increase and
/// the last entry covers the remaining iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    entries: Vec<(u64, f64)>,
}

impl LrSchedule {
    pub fn new(entries: Vec<(u64, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument("empty learning-rate schedule".into()));
        }
        if entries.iter().any(|&(_, r)| r <= 0.0 || r.is_nan()) {
            return Err(Error::InvalidArgument("learning rates must be > 0".into()));
        }
        if entries.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::InvalidArgument(
                "schedule thresholds must strictly increase".into(),
            ));
        }
        Ok(LrSchedule { entries })
    }

    pub fn constant(rate: f64) -> Self {
        LrSchedule {
            entries: vec![(u64::MAX, rate)],
        }
    }

    pub fn entries(&self) -> &[(u64, f64)] {
        &self.entries
    }

    pub fn at(&self, iteration: u64) -> f64 {
        for &(threshold, rate) in &self.entries {
            if iteration < threshold {
                return rate;
            }
        }
        self.entries.last().expect("schedule is non-empty").1
    }
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub momentum: f64,
    pub schedule: LrSchedule,
    pub batch_size: usize,
    pub iterations: u64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Momentum buffers, one per weight tensor, zero-initialized.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState<T> {
    pub buffers: Vec<T>,
}

impl<T: OptimTensor> MomentumState<T> {
    pub fn zeros_like(params: &[T]) -> Self {
        MomentumState {
            buffers: params.iter().map(OptimTensor::zeros_like).collect(),
        }
    }
}

/// One Nesterov step. `grad_at` receives the lookahead weights
/// `W + mu Z` and returns the gradients there, one tensor per parameter in
/// matching order.
pub fn nesterov_step<T, F>(
    params: &mut [T],
    state: &mut MomentumState<T>,
    eta: f64,
    mu: f64,
    grad_at: F,
) -> Result<()>
where
    T: OptimTensor,
    F: FnOnce(&[T]) -> Result<Vec<T>>,
{
    if params.len() != state.buffers.len() {
        return Err(Error::InvalidArgument(format!(
            "{} parameters but {} momentum buffers",
            params.len(),
            state.buffers.len()
        )));
    }
    let mut lookahead: Vec<T> = params.to_vec();
    for (l, z) in lookahead.iter_mut().zip(&state.buffers) {
        l.axpy(mu, z)?;
    }
    let grads = grad_at(&lookahead)?;
    if grads.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "gradient count {} does not match parameter count {}",
            grads.len(),
            params.len()
        )));
    }
    for ((w, z), g) in params.iter_mut().zip(&mut state.buffers).zip(&grads) {
        // Z <- mu Z - eta g, then W <- W + Z.
        let mut znew = z.scaled(mu);
        znew.axpy(-eta, g)?;
        *z = znew;
        w.axpy(1.0, z)?;
    }
    Ok(())
}

/// Glorot-style initialization for a complex tensor: real and imaginary
/// parts drawn independently, uniform on +-sqrt(6/(fan_in+fan_out))/sqrt(2),
/// so E[|w|^2] matches the real scheme's E[w^2].
pub fn glorot_init(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> ComplexTensor {
    assert!(fan_in >= 1 && fan_out >= 1, "fans must be >= 1");
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() / std::f64::consts::SQRT_2;
    let mut out = ComplexTensor::zeros(shape);
    for z in out.data_mut() {
        z.re = rng.uniform_in(-limit, limit);
        z.im = rng.uniform_in(-limit, limit);
    }
    out
}

/// Sample `batch_size` distinct indices from [0, dataset_size), uniformly
/// without replacement within the batch; draws are independent across
/// batches. Deterministic given the generator state.
pub fn minibatch_indices(dataset_size: usize, batch_size: usize, rng: &mut Rng) -> Vec<usize> {
    assert!(
        batch_size <= dataset_size,
        "batch {batch_size} larger than dataset {dataset_size}"
    );
    // Partial Fisher-Yates over an index table.
    let mut pool: Vec<usize> = (0..dataset_size).collect();
    let mut out = Vec::with_capacity(batch_size);
    for i in 0..batch_size {
        let j = i + rng.below(dataset_size - i);
        pool.swap(i, j);
        out.push(pool[i]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complex::Complex;

    fn scalar(v: f64) -> Vec<ComplexTensor> {
        vec![ComplexTensor::from_vec(&[1], vec![Complex::real(v)]).unwrap()]
    }

    #[test]
    fn zero_momentum_is_plain_sgd() {
        let mut params = scalar(1.0);
        let mut state = MomentumState::zeros_like(&params);
        // l(w) = w^2/2, grad = w
        nesterov_step(&mut params, &mut state, 0.1, 0.0, |p| Ok(p.to_vec())).unwrap();
        assert!((params[0].data()[0].re - 0.9).abs() < 1e-15);
    }

    #[test]
    fn quadratic_two_step_oracle() {
        // l(w) = w^2/2 from w0 = 1 with mu = 0.9, eta = 0.1:
        // hand sequence w1 = 0.9, w2 = 0.729.
        let mut params = scalar(1.0);
        let mut state = MomentumState::zeros_like(&params);
        let step = |params: &mut Vec<ComplexTensor>, state: &mut MomentumState<ComplexTensor>| {
            nesterov_step(params, state, 0.1, 0.9, |p| Ok(p.to_vec())).unwrap();
        };
        step(&mut params, &mut state);
        assert!((params[0].data()[0].re - 0.9).abs() < 1e-12);
        step(&mut params, &mut state);
        assert!((params[0].data()[0].re - 0.729).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_gives_pure_momentum_decay() {
        // After one real step, a zero gradient leaves W following
        // W_{t+1} = W_t + mu^t Z_1.
        let mut params = scalar(1.0);
        let mut state = MomentumState::zeros_like(&params);
        nesterov_step(&mut params, &mut state, 0.1, 0.9, |p| Ok(p.to_vec())).unwrap();
        let z1 = state.buffers[0].data()[0];
        let mut w = params[0].data()[0];
        for t in 1..5 {
            nesterov_step(&mut params, &mut state, 0.1, 0.9, |p| {
                Ok(vec![ComplexTensor::zeros(p[0].shape())])
            })
            .unwrap();
            let expected = w + z1.scale(0.9f64.powi(t));
            assert!((params[0].data()[0] - expected).magnitude() < 1e-15);
            w = expected;
        }
    }

    #[test]
    fn complex_step_equals_stacked_real_system() {
        // Running the update on complex tensors must equal running it on
        // the independently stacked real coordinates, bitwise.
        let data = vec![Complex::new(0.4, -0.7), Complex::new(-1.2, 0.3)];
        let grad = [Complex::new(0.11, 0.05), Complex::new(-0.02, 0.4)];
        let mut params = vec![ComplexTensor::from_vec(&[2], data.clone()).unwrap()];
        let mut state = MomentumState::zeros_like(&params);
        let (eta, mu) = (0.05, 0.9);
        for _ in 0..3 {
            nesterov_step(&mut params, &mut state, eta, mu, |_| {
                Ok(vec![ComplexTensor::from_vec(&[2], grad.to_vec()).unwrap()])
            })
            .unwrap();
        }

        // Stacked real system with identical scalar operations.
        let mut w: Vec<f64> = data.iter().flat_map(|z| [z.re, z.im]).collect();
        let g: Vec<f64> = grad.iter().flat_map(|z| [z.re, z.im]).collect();
        let mut z = vec![0.0; w.len()];
        for _ in 0..3 {
            for i in 0..w.len() {
                z[i] = mu * z[i] + -eta * g[i];
                w[i] += z[i];
            }
        }
        for (i, zc) in params[0].data().iter().enumerate() {
            assert_eq!(zc.re, w[2 * i]);
            assert_eq!(zc.im, w[2 * i + 1]);
        }
    }

    #[test]
    fn glorot_support_bound() {
        let mut rng = Rng::seed_from(1);
        let (fan_in, fan_out) = (25, 200);
        let t = glorot_init(&[8, 1, 5, 5], fan_in, fan_out, &mut rng);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt() / std::f64::consts::SQRT_2;
        for z in t.data() {
            assert!(z.re.abs() <= bound && z.im.abs() <= bound);
        }
    }

    #[test]
    fn glorot_second_moment_matches_real_scheme() {
        // E[|w|^2] for the complex draw must equal E[w^2] = limit^2/3 of
        // the real uniform scheme, within 10% over 1e5 draws.
        let mut rng = Rng::seed_from(2);
        let (fan_in, fan_out) = (30, 20);
        let n = 100_000;
        let t = glorot_init(&[n], fan_in, fan_out, &mut rng);
        let mean_sq: f64 = t.data().iter().map(|z| z.magnitude_sq()).sum::<f64>() / n as f64;
        let real_limit_sq = 6.0 / (fan_in + fan_out) as f64;
        let expected = real_limit_sq / 3.0;
        assert!(
            (mean_sq - expected).abs() / expected < 0.1,
            "{mean_sq} vs {expected}"
        );
    }

    #[test]
    fn glorot_is_deterministic_per_seed() {
        let a = glorot_init(&[3, 3], 3, 3, &mut Rng::seed_from(9));
        let b = glorot_init(&[3, 3], 3, 3, &mut Rng::seed_from(9));
        assert_eq!(a, b);
    }

    #[test]
    fn lr_schedule_paper_values() {
        // Complex schedule: 0.01 before iteration 2000, 0.001 afterwards.
        let s = LrSchedule::new(vec![(2000, 0.01), (u64::MAX, 0.001)]).unwrap();
        assert_eq!(s.at(0), 0.01);
        assert_eq!(s.at(1999), 0.01);
        assert_eq!(s.at(2000), 0.001);
        assert_eq!(s.at(1_000_000), 0.001);
        // Real schedule: fixed 0.1.
        let r = LrSchedule::constant(0.1);
        for it in [0, 5000, 20000] {
            assert_eq!(r.at(it), 0.1);
        }
    }

    #[test]
    fn lr_schedule_validates() {
        assert!(LrSchedule::new(vec![]).is_err());
        assert!(LrSchedule::new(vec![(10, 0.1), (5, 0.2)]).is_err());
        assert!(LrSchedule::new(vec![(10, -0.1)]).is_err());
    }

    #[test]
    fn minibatch_full_sweep_and_distinctness() {
        let mut rng = Rng::seed_from(3);
        let all = minibatch_indices(10, 10, &mut rng);
        let mut sorted = all.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());

        let some = minibatch_indices(100, 30, &mut rng);
        let mut dedup = some.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), 30);
        assert!(some.iter().all(|&i| i < 100));
    }

    #[test]
    fn minibatch_deterministic_per_seed() {
        let mut a = Rng::seed_from(4);
        let mut b = Rng::seed_from(4);
        for _ in 0..5 {
            assert_eq!(
                minibatch_indices(50, 7, &mut a),
                minibatch_indices(50, 7, &mut b)
            );
        }
    }
}
