//! ADAM optimization and the training loop.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::model::{batch_loss, loss_and_gradients, Mode, TrainSample};
use crate::network::{build_network_from_rng, NetworkParams, NetworkSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// ADAM step size α.
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub rng_seed: u64,
    /// Fraction of the dataset held out for validation-loss logging
    /// (0 disables the split; the held-out samples are never trained on).
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 4,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            rng_seed: 0,
            val_fraction: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Validation("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Validation("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Validation(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Validation(format!(
                    "{name} must lie in (0, 1), got {b}"
                )));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Validation("eps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Validation(format!(
                "val_fraction must lie in [0, 1), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

/// First/second moment accumulators, one per parameter entry.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn for_params(params: &NetworkParams) -> AdamState {
        AdamState {
            m: vec![0.0; params.len()],
            v: vec![0.0; params.len()],
        }
    }
}

/// One ADAM update with bias correction at step `t` (1-based). Only
/// trainable tensors move; batch-norm running statistics are untouched.
pub fn adam_step(
    params: &mut NetworkParams,
    grads: &NetworkParams,
    state: &mut AdamState,
    t: usize,
    cfg: &TrainConfig,
) -> Result<()> {
    if t < 1 {
        return Err(Error::Validation(
            "ADAM step index must be at least 1".into(),
        ));
    }
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Shape(format!(
            "parameter/gradient/state sizes disagree: {} / {} / {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    let ranges: Vec<(usize, usize)> = params
        .manifest()
        .iter()
        .filter(|m| m.trainable)
        .map(|m| (m.offset, m.len))
        .collect();
    for (offset, len) in ranges {
        for i in offset..offset + len {
            let g = grads.raw()[i];
            state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
            state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
            let mhat = state.m[i] / bc1;
            let vhat = state.v[i] / bc2;
            params.raw_mut()[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
}

/// Trains a freshly initialized network. Deterministic for a fixed seed:
/// the seed drives initialization, the optional validation split, and every
/// epoch's shuffle from a single RNG stream.
pub fn train(
    spec: &NetworkSpec,
    dataset: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<(NetworkParams, Vec<EpochLog>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Validation("training dataset is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut params = build_network_from_rng(spec, &mut rng)?;

    let n = dataset.len();
    let n_val = if cfg.val_fraction > 0.0 {
        ((n as f64 * cfg.val_fraction).round() as usize).min(n - 1)
    } else {
        0
    };
    let mut order: Vec<usize> = (0..n).collect();
    if n_val > 0 {
        order.shuffle(&mut rng);
    }
    let val_idx: Vec<usize> = order[n - n_val..].to_vec();
    let mut train_idx: Vec<usize> = order[..n - n_val].to_vec();

    let mut state = AdamState::for_params(&params);
    let mut step = 0usize;
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0.0;
        for chunk in train_idx.chunks(cfg.batch_size) {
            let batch: Vec<TrainSample> = chunk.iter().map(|&i| dataset[i].clone()).collect();
            let (loss, grads) = loss_and_gradients(&mut params, &batch)?;
            step += 1;
            adam_step(&mut params, &grads, &mut state, step, cfg)?;
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len() as f64;
        }
        let train_loss = loss_sum / seen;
        let val_loss = if val_idx.is_empty() {
            None
        } else {
            let mut s = 0.0;
            let mut c = 0.0;
            for chunk in val_idx.chunks(cfg.batch_size) {
                let batch: Vec<TrainSample> = chunk.iter().map(|&i| dataset[i].clone()).collect();
                s += batch_loss(&params, &batch, Mode::Eval)? * chunk.len() as f64;
                c += chunk.len() as f64;
            }
            Some(s / c)
        };
        logs.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
        });
    }
    Ok((params, logs))
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::build_network;
    use crate::volume::{Axis, Slice2D};
    use rand::Rng;

    fn tiny_dataset(count: usize, s: usize, n: usize, seed: u64) -> Vec<TrainSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let blank = |v: f64| Slice2D {
                    axis: Axis::Axial,
                    index: 0,
                    width: s,
                    height: s,
                    values: vec![v; s * s],
                };
                let mut image = blank(0.0);
                // A bright box in a random corner; the mask marks it.
                let half = s / 2;
                let ox = if rng.random_range(0.0..1.0) < 0.5 {
                    0
                } else {
                    half
                };
                let oy = if rng.random_range(0.0..1.0) < 0.5 {
                    0
                } else {
                    half
                };
                let mut masks: Vec<Slice2D> = (0..n).map(|_| blank(0.0)).collect();
                for y in oy..oy + half {
                    for x in ox..ox + half {
                        image.values[y * s + x] = 1.0;
                        masks[0].values[y * s + x] = 1.0;
                    }
                }
                TrainSample { image, masks }
            })
            .collect()
    }

    #[test]
    fn adam_matches_scalar_reference_for_two_steps() {
        let spec = NetworkSpec::new(1, 1, 8, 3);
        let mut params = build_network(&spec, 1).unwrap();
        let before = params.raw().to_vec();
        let mut grads = params.zeros_like();
        for m in params.manifest().to_vec() {
            if m.trainable {
                grads.view_mut(&m.name).fill(1.0);
            }
        }
        let cfg = TrainConfig::default();
        let mut state = AdamState::for_params(&params);

        // Scalar reference: constant gradient g=1.
        let mut m = 0.0f64;
        let mut v = 0.0f64;
        let mut delta = Vec::new();
        for t in 1..=2 {
            m = cfg.beta1 * m + (1.0 - cfg.beta1);
            v = cfg.beta2 * v + (1.0 - cfg.beta2);
            let mhat = m / (1.0 - cfg.beta1.powi(t));
            let vhat = v / (1.0 - cfg.beta2.powi(t));
            delta.push(cfg.learning_rate * mhat / (vhat.sqrt() + cfg.eps));
        }
        // First step moves every trainable entry by exactly −α·1/(1+ε).
        assert!((delta[0] - cfg.learning_rate / (1.0 + cfg.eps)).abs() < 1e-18);

        adam_step(&mut params, &grads, &mut state, 1, &cfg).unwrap();
        for m in params.manifest().to_vec() {
            if m.trainable {
                for (a, b) in params
                    .view(&m.name)
                    .iter()
                    .zip(&before[m.offset..m.offset + m.len])
                {
                    assert!(((b - a) - delta[0]).abs() < 1e-15);
                }
            } else {
                assert_eq!(params.view(&m.name), &before[m.offset..m.offset + m.len]);
            }
        }
        adam_step(&mut params, &grads, &mut state, 2, &cfg).unwrap();
        for m in params.manifest().to_vec() {
            if m.trainable {
                for (a, b) in params
                    .view(&m.name)
                    .iter()
                    .zip(&before[m.offset..m.offset + m.len])
                {
                    assert!(((b - a) - (delta[0] + delta[1])).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn adam_zero_gradients_fix_point_and_bad_step_index() {
        let spec = NetworkSpec::new(1, 1, 8, 3);
        let mut params = build_network(&spec, 2).unwrap();
        let before = params.raw().to_vec();
        let grads = params.zeros_like();
        let cfg = TrainConfig::default();
        let mut state = AdamState::for_params(&params);
        adam_step(&mut params, &grads, &mut state, 1, &cfg).unwrap();
        assert_eq!(params.raw(), &before[..]);
        assert!(matches!(
            adam_step(&mut params, &grads, &mut state, 0, &cfg),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn train_validates_inputs() {
        let spec = NetworkSpec::new(1, 1, 8, 3);
        let data = tiny_dataset(4, 8, 1, 3);
        let mut cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&spec, &data, &cfg),
            Err(Error::Validation(_))
        ));
        cfg.epochs = 1;
        assert!(matches!(train(&spec, &[], &cfg), Err(Error::Validation(_))));
    }

    #[test]
    fn train_is_deterministic_and_learns() {
        let spec = NetworkSpec::new(1, 1, 8, 3);
        let data = tiny_dataset(8, 8, 1, 4);
        let cfg = TrainConfig {
            epochs: 25,
            batch_size: 4,
            rng_seed: 7,
            ..TrainConfig::default()
        };
        let (pa, logs_a) = train(&spec, &data, &cfg).unwrap();
        let (pb, logs_b) = train(&spec, &data, &cfg).unwrap();
        let bits = |p: &NetworkParams| p.raw().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&pa), bits(&pb));
        assert_eq!(logs_a.len(), 25);
        assert_eq!(logs_a[0].epoch, 1);
        assert_eq!(logs_a[24].epoch, 25);
        assert!(logs_a
            .iter()
            .zip(&logs_b)
            .all(|(x, y)| x.train_loss == y.train_loss));
        // The bright-box task is easy; losses must drop substantially.
        assert!(
            logs_a.last().unwrap().train_loss < 0.5 * logs_a[0].train_loss,
            "first {} last {}",
            logs_a[0].train_loss,
            logs_a.last().unwrap().train_loss
        );
    }

    #[test]
    fn validation_split_logs_val_loss_and_shrinks_train_set() {
        let spec = NetworkSpec::new(1, 1, 8, 3);
        let data = tiny_dataset(10, 8, 1, 5);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            rng_seed: 1,
            val_fraction: 0.2,
            ..TrainConfig::default()
        };
        let (_, logs) = train(&spec, &data, &cfg).unwrap();
        assert!(logs.iter().all(|l| l.val_loss.is_some()));
        let no_split = TrainConfig {
            val_fraction: 0.0,
            ..cfg.clone()
        };
        let (_, logs2) = train(&spec, &data, &no_split).unwrap();
        assert!(logs2.iter().all(|l| l.val_loss.is_none()));
    }
}
