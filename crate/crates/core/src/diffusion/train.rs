//! Unconditional noise-prediction training.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::grad::{Matrix, Tape};

use super::{DenoiserNet, DiffusionError, NoiseSchedule, ParamMode};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Plain gradient descent.
    Sgd,
    /// Adaptive moments with the usual `β = (0.9, 0.999)`, `ε = 1e-8`.
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch_size: 1024,
            learning_rate: 1e-4,
            seed: 0,
            optimizer: Optimizer::Sgd,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DiffusionError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(DiffusionError::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(DiffusionError::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-sample loss of every epoch.
    pub epoch_losses: Vec<f64>,
}

struct AdamState {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    step: i32,
}

/// Trains `net` in place; see [`train_with`].
pub fn train(
    net: &mut DenoiserNet,
    sched: &NoiseSchedule,
    data: &Matrix,
    cfg: &TrainConfig,
) -> Result<TrainReport, DiffusionError> {
    train_with(net, sched, data, cfg, |_, _| {})
}

/// Trains `net` on the rows of `data` by minimizing the mean squared error
/// between injected and predicted noise. Each epoch visits the rows in a
/// fresh seeded permutation; the last partial batch is kept. `on_epoch` is
/// called with the epoch index and its mean loss.
pub fn train_with(
    net: &mut DenoiserNet,
    sched: &NoiseSchedule,
    data: &Matrix,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainReport, DiffusionError> {
    cfg.validate()?;
    if data.rows() == 0 {
        return Err(DiffusionError::EmptyData);
    }
    let d = net.config().data_dim;
    if data.cols() != d {
        return Err(DiffusionError::Config(format!(
            "data has {} columns, network expects {d}",
            data.cols()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.rows()).collect();
    let mut adam = match cfg.optimizer {
        Optimizer::Adam => Some(AdamState {
            m: net
                .params()
                .iter()
                .map(|p| Matrix::zeros(p.rows(), p.cols()))
                .collect(),
            v: net
                .params()
                .iter()
                .map(|p| Matrix::zeros(p.rows(), p.cols()))
                .collect(),
            step: 0,
        }),
        Optimizer::Sgd => None,
    };
    let mut report = TrainReport::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x0 = data.select_rows(idx);
            let steps: Vec<usize> = (0..idx.len())
                .map(|_| rng.random_range(1..=sched.steps()))
                .collect();
            let eps = Matrix::from_fn(idx.len(), d, |_, _| rng.sample(StandardNormal));
            let mut xt = x0;
            for (r, &t) in steps.iter().enumerate() {
                let ab = sched.alpha_bar(t);
                let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
                for (x, &e) in xt.row_mut(r).iter_mut().zip(eps.row(r)) {
                    *x = a * *x + b * e;
                }
            }

            let (loss, grads) = {
                let mut tape = Tape::new();
                let xv = tape.constant(xt);
                let pred = net.record(&mut tape, xv, &steps, ParamMode::Trainable)?;
                let target = tape.constant(eps);
                let diff = tape.sub(pred, target)?;
                let sq = tape.square(diff)?;
                let sum = tape.sum_all(sq)?;
                let loss = tape.scale(sum, 1.0 / (idx.len() * d) as f64)?;
                let value = tape.value(loss).get(0, 0);
                if !value.is_finite() {
                    return Err(DiffusionError::NonFiniteLoss { epoch, batch });
                }
                let grads = tape.backward(loss, &Matrix::filled(1, 1, 1.0))?;
                (value, grads.into_params())
            };
            total += loss * idx.len() as f64;

            match adam.as_mut() {
                None => {
                    for (p, g) in net.params_mut().into_iter().zip(&grads) {
                        p.axpy(-cfg.learning_rate, g)?;
                    }
                }
                Some(state) => {
                    const B1: f64 = 0.9;
                    const B2: f64 = 0.999;
                    const EPS: f64 = 1e-8;
                    state.step += 1;
                    let c1 = 1.0 - B1.powi(state.step);
                    let c2 = 1.0 - B2.powi(state.step);
                    let lr = cfg.learning_rate;
                    for (i, (p, g)) in net.params_mut().into_iter().zip(&grads).enumerate() {
                        let m = state.m[i].data_mut();
                        let v = state.v[i].data_mut();
                        for (j, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                            m[j] = B1 * m[j] + (1.0 - B1) * gv;
                            v[j] = B2 * v[j] + (1.0 - B2) * gv * gv;
                            *pv -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + EPS);
                        }
                    }
                }
            }
        }
        let mean = total / data.rows() as f64;
        report.epoch_losses.push(mean);
        on_epoch(epoch, mean);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::NetConfig;

    fn toy_data() -> Matrix {
        Matrix::from_fn(64, 2, |r, c| {
            let a = r as f64 * 0.3;
            if c == 0 {
                a.cos()
            } else {
                a.sin()
            }
        })
    }

    #[test]
    fn rejects_bad_config_and_empty_data() {
        let sched = NoiseSchedule::build(20, 0.999, 0.95).unwrap();
        let mut net = DenoiserNet::init(NetConfig::compact(2, 8, 4), 0).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(train(&mut net, &sched, &toy_data(), &cfg).is_err());
        let cfg = TrainConfig::default();
        assert!(matches!(
            train(&mut net, &sched, &Matrix::zeros(0, 2), &cfg),
            Err(DiffusionError::EmptyData)
        ));
    }

    #[test]
    fn seeded_runs_are_identical() {
        let sched = NoiseSchedule::build(20, 0.999, 0.95).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 5,
            optimizer: Optimizer::Adam,
        };
        let run = || {
            let mut net = DenoiserNet::init(NetConfig::compact(2, 16, 4), 1).unwrap();
            let rep = train(&mut net, &sched, &toy_data(), &cfg).unwrap();
            (net, rep)
        };
        let (n1, r1) = run();
        let (n2, r2) = run();
        assert_eq!(r1, r2);
        assert_eq!(n1, n2);
    }

    #[test]
    fn diverging_training_is_aborted() {
        let sched = NoiseSchedule::build(20, 0.999, 0.95).unwrap();
        let mut net = DenoiserNet::init(NetConfig::compact(2, 16, 4), 1).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 8,
            learning_rate: 1e6,
            seed: 0,
            optimizer: Optimizer::Sgd,
        };
        let err = train(&mut net, &sched, &toy_data(), &cfg).unwrap_err();
        assert!(matches!(err, DiffusionError::NonFiniteLoss { .. }), "{err}");
    }
}
