//! Seeded training loop: shuffled mini-batches, Adam with continuous
//! exponential learning-rate decay, per-epoch train/validation MSE.

use rand::Rng;

use super::layers::{backward, forward_internal, Mode, TapeEntry};
use super::{ModelSpec, NnError, Weights};
use crate::rng::stream_rng;
use crate::synth::Sample;

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub decay_rate: f64,
    pub decay_steps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 2e-4,
            decay_rate: 0.9,
            decay_steps: 2e4,
            epochs: 200,
            batch_size: 32,
            dropout_rate: super::DEFAULT_DROPOUT,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Learning rate at optimizer step `t` (continuous decay).
    pub fn lr_at(&self, t: u64) -> f64 {
        self.initial_lr * self.decay_rate.powf(t as f64 / self.decay_steps)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub lr: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
}

fn fill_batch(samples: &[Sample], idxs: &[usize], x: &mut Vec<f64>, t: &mut Vec<f64>) {
    x.clear();
    t.clear();
    for &i in idxs {
        x.extend(samples[i].input.iter().map(|&b| b as f64));
        t.push(samples[i].target);
    }
}

/// Mean squared error of the model over a sample set (inference mode).
fn set_mse(spec: &ModelSpec, params: &[f64], stats: &[f64], set: &[Sample]) -> f64 {
    if set.is_empty() {
        return f64::NAN;
    }
    const BATCH: usize = 256;
    let width = spec.input_width;
    let mut stats_copy = stats.to_vec();
    let mut sum = 0.0;
    let mut x = Vec::with_capacity(BATCH * width);
    for chunk in set.chunks(BATCH) {
        x.clear();
        for s in chunk {
            x.extend(s.input.iter().map(|&b| b as f64));
        }
        let preds = forward_internal(spec, params, &mut stats_copy, &x, chunk.len(), Mode::Infer, None, None);
        for (p, s) in preds.iter().zip(chunk) {
            sum += (p - s.target) * (p - s.target);
        }
    }
    sum / set.len() as f64
}

/// Train a model from a seeded random initialization. The dropout rate from
/// the config replaces whatever the architecture was built with. Returns
/// the final weights (f32-snapped) and the per-epoch loss report.
pub fn train(
    spec: &ModelSpec,
    train_set: &[Sample],
    val_set: &[Sample],
    config: &TrainConfig,
) -> Result<(Weights, Vec<EpochReport>), NnError> {
    if train_set.is_empty() {
        return Err(NnError::EmptySet);
    }
    let width = spec.input_width;
    for s in train_set.iter().chain(val_set) {
        if s.input.len() != width {
            return Err(NnError::ShapeMismatch { actual: s.input.len(), expected: width });
        }
    }
    // apply the configured dropout rate throughout
    let mut spec = spec.clone();
    for layer in &mut spec.layers {
        if let super::Layer::Dropout { rate } = layer {
            *rate = config.dropout_rate;
        }
    }

    let mut weights = Weights::random_init(&spec, config.seed);
    let mut adam = Adam::new(weights.params.len());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut reports = Vec::with_capacity(config.epochs);
    let mut x = Vec::new();
    let mut t = Vec::new();
    let mut grads = vec![0.0; weights.params.len()];
    let mut tape: Vec<TapeEntry> = Vec::with_capacity(spec.layers.len());

    for epoch in 0..config.epochs {
        let mut shuffle_rng = stream_rng(config.seed, &[0xe90c, epoch as u64]);
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_sq_err = 0.0;
        let mut lr = config.lr_at(adam.t);
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            fill_batch(train_set, batch, &mut x, &mut t);
            let bn = batch.len();
            let mut dropout_rng = stream_rng(config.seed, &[0xd209, epoch as u64, batch_idx as u64]);
            tape.clear();
            let preds = forward_internal(
                &spec,
                &weights.params,
                &mut weights.stats,
                &x,
                bn,
                Mode::Train,
                Some(&mut dropout_rng),
                Some(&mut tape),
            );
            let bf = bn as f64;
            let mut batch_sq = 0.0;
            let dy: Vec<f64> = preds
                .iter()
                .zip(&t)
                .map(|(p, ti)| {
                    batch_sq += (p - ti) * (p - ti);
                    2.0 * (p - ti) / bf
                })
                .collect();
            if !batch_sq.is_finite() {
                return Err(NnError::NonFiniteLoss { epoch, batch: batch_idx });
            }
            epoch_sq_err += batch_sq;
            grads.fill(0.0);
            backward(&spec, &weights.params, &tape, bn, dy, &mut grads);
            lr = config.lr_at(adam.t);
            adam.step(&mut weights.params, &grads, lr);
        }
        let val_mse = set_mse(&spec, &weights.params, &weights.stats, val_set);
        reports.push(EpochReport {
            epoch,
            train_mse: epoch_sq_err / train_set.len() as f64,
            val_mse,
            lr,
        });
    }

    weights.snap_to_f32();
    Ok((weights, reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::build_arch;

    fn tiny_samples(n: usize, radius: usize, seed: u64) -> Vec<Sample> {
        crate::synth::generate_flat_dataset(n, radius, (20.0, 160.0), seed, 0)
            .unwrap()
            .samples
    }

    #[test]
    fn lr_schedule_is_continuous_exponential() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(0), 2e-4);
        let expect = 2e-4 * 0.9f64.powf(10_000.0 / 20_000.0);
        assert!((cfg.lr_at(10_000) - expect).abs() < 1e-18);
        assert!((cfg.lr_at(20_000) - 2e-4 * 0.9).abs() < 1e-18);
    }

    #[test]
    fn training_is_seed_deterministic() {
        let spec = build_arch(3, 2).unwrap();
        let samples = tiny_samples(24, 2, 5);
        let cfg = TrainConfig { epochs: 3, seed: 11, ..Default::default() };
        let (w1, r1) = train(&spec, &samples, &samples[..4], &cfg).unwrap();
        let (w2, r2) = train(&spec, &samples, &samples[..4], &cfg).unwrap();
        assert_eq!(w1, w2);
        assert_eq!(r1.len(), r2.len());
        for (a, b) in r1.iter().zip(&r2) {
            assert_eq!(a.train_mse, b.train_mse);
            assert_eq!(a.val_mse, b.val_mse);
        }
    }

    #[test]
    fn overfits_ten_samples_without_dropout() {
        // capacity sanity oracle: tiny set, long training, dropout off
        let spec = build_arch(2, 2).unwrap();
        let samples = tiny_samples(10, 2, 3);
        let cfg = TrainConfig {
            epochs: 2000,
            dropout_rate: 0.0,
            batch_size: 10,
            initial_lr: 1e-3,
            seed: 4,
            ..Default::default()
        };
        let (w, reports) = train(&spec, &samples, &[], &cfg).unwrap();
        let final_mse = reports.last().unwrap().train_mse;
        assert!(final_mse < 1e-3, "train mse {final_mse}");
        // evaluated in inference mode the fit should also be tight
        let m = crate::nn::evaluate(&spec, &w, &samples).unwrap();
        assert!(m.mse < 5e-3, "infer mse {}", m.mse);
    }

    #[test]
    fn rejects_empty_training_set() {
        let spec = build_arch(3, 2).unwrap();
        assert!(matches!(train(&spec, &[], &[], &TrainConfig::default()), Err(NnError::EmptySet)));
    }
}
