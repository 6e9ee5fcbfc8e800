//! Minibatch training of [`MdnModel`] on negative log-likelihood.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::io::Write;

use super::mixture::Bounds;
use super::network::{MdnModel, Standardizer};
use crate::error::{invalid, Error, Result};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub components: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    /// Learning rate at the last step as a fraction of `learning_rate`;
    /// the rate follows a cosine curve between the two.
    pub final_lr_ratio: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            components: 6,
            hidden: vec![64, 64],
            learning_rate: 1e-3,
            epochs: 500,
            batch_size: 128,
            optimizer: Optimizer::Adam { beta1: 0.9, beta2: 0.999 },
            final_lr_ratio: 0.01,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.components == 0 || self.hidden.iter().any(|h| *h == 0) {
            return Err(invalid("components and hidden sizes must be positive"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(invalid("learning_rate must be positive"));
        }
        if !(self.final_lr_ratio > 0.0 && self.final_lr_ratio <= 1.0) {
            return Err(invalid("final_lr_ratio must lie in (0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be positive"));
        }
        match self.optimizer {
            Optimizer::Sgd { momentum } if !(0.0..1.0).contains(&momentum) => {
                Err(invalid("momentum must lie in [0, 1)"))
            }
            Optimizer::Adam { beta1, beta2 } if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) => {
                Err(invalid("Adam betas must lie in [0, 1)"))
            }
            _ => Ok(()),
        }
    }
}

/// Loss history of one training run, all in target units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_nll: f64,
    pub final_nll: f64,
    /// Mean minibatch NLL per epoch.
    pub epoch_nll: Vec<f64>,
    /// Set when the final training NLL is above the initial one.
    pub regressed: bool,
}

impl TrainReport {
    pub fn write_curve_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "nll"])?;
        for (i, l) in self.epoch_nll.iter().enumerate() {
            out.write_record([(i + 1).to_string(), format!("{l:.9}")])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Trains a fresh model on `(xs, ys)`. Standardisation statistics and the
/// input range are taken from the data.
pub fn train(xs: &[Vec<f64>], ys: &[Vec<f64>], cfg: &TrainConfig) -> Result<(MdnModel, TrainReport)> {
    cfg.validate()?;
    if xs.len() != ys.len() {
        return Err(invalid("inputs and targets differ in length"));
    }
    if xs.len() < cfg.batch_size {
        return Err(invalid(format!("dataset of {} is smaller than batch size {}", xs.len(), cfg.batch_size)));
    }
    if xs.iter().chain(ys).flatten().any(|v| !v.is_finite()) {
        return Err(invalid("training data must be finite"));
    }
    let mut init_rng = seeded(derive_seed(cfg.seed, "mdn-init"));
    let mut model = MdnModel::new(xs[0].len(), ys[0].len(), cfg.components, &cfg.hidden, &mut init_rng)?;
    model.input_norm = Standardizer::fit(xs)?;
    model.target_norm = Standardizer::fit(ys)?;
    let d = xs[0].len();
    let lower = (0..d).map(|j| xs.iter().map(|x| x[j]).fold(f64::INFINITY, f64::min)).collect();
    let upper = (0..d).map(|j| xs.iter().map(|x| x[j]).fold(f64::NEG_INFINITY, f64::max)).collect();
    model.input_range = Some(Bounds { lower, upper });

    let xn: Vec<Vec<f64>> = xs.iter().map(|x| model.input_norm.apply(x)).collect();
    let yn: Vec<Vec<f64>> = ys.iter().map(|y| model.target_norm.apply(y)).collect();
    let log_scale: f64 = model.target_norm.std.iter().map(|s| s.ln()).sum();

    let full_nll = |m: &MdnModel| -> f64 {
        let mut s = m.scratch();
        xn.iter().zip(&yn).map(|(x, y)| m.sample_nll(x, y, None, &mut s)).sum::<f64>() / xn.len() as f64 + log_scale
    };
    let initial_nll = full_nll(&model);

    let p = model.params.len();
    let mut grad = vec![0.0; p];
    let mut m1 = vec![0.0; p];
    let mut m2 = vec![0.0; p];
    let mut step = 0i32;
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut shuffle_rng = seeded(derive_seed(cfg.seed, "mdn-shuffle"));
    let mut scratch = model.scratch();
    let mut epoch_nll = Vec::with_capacity(cfg.epochs);

    let steps_per_epoch = xs.len() / cfg.batch_size;
    let total_steps = (steps_per_epoch * cfg.epochs).max(1) as f64;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut seen = 0usize;
        // a trailing partial batch is dropped
        for batch in order.chunks_exact(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                total += model.sample_nll(&xn[i], &yn[i], Some(&mut grad), &mut scratch);
            }
            seen += batch.len();
            let scale = 1.0 / batch.len() as f64;
            let progress = step as f64 / total_steps;
            let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
            let lr = cfg.learning_rate * (cfg.final_lr_ratio + (1.0 - cfg.final_lr_ratio) * cosine);
            step += 1;
            match cfg.optimizer {
                Optimizer::Sgd { momentum } => {
                    for k in 0..p {
                        m1[k] = momentum * m1[k] - lr * grad[k] * scale;
                        model.params[k] += m1[k];
                    }
                }
                Optimizer::Adam { beta1, beta2 } => {
                    let c1 = 1.0 - beta1.powi(step);
                    let c2 = 1.0 - beta2.powi(step);
                    for k in 0..p {
                        let g = grad[k] * scale;
                        m1[k] = beta1 * m1[k] + (1.0 - beta1) * g;
                        m2[k] = beta2 * m2[k] + (1.0 - beta2) * g * g;
                        model.params[k] -= lr * (m1[k] / c1) / ((m2[k] / c2).sqrt() + 1e-8);
                    }
                }
            }
        }
        let mean = total / seen as f64 + log_scale;
        if !mean.is_finite() || model.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::TrainingDiverged { epoch: epoch + 1 });
        }
        epoch_nll.push(mean);
    }
    let final_nll = full_nll(&model);
    if !final_nll.is_finite() {
        return Err(Error::TrainingDiverged { epoch: cfg.epochs });
    }
    let report = TrainReport { initial_nll, final_nll, epoch_nll, regressed: final_nll > initial_nll };
    Ok((model, report))
}
