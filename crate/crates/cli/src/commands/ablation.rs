use anyhow::{bail, Result};
use bouncekit::calibration::{generate_dataset, run_ablation, DropConfig, PriorBox, E, LOG10_KAPPA};
use bouncekit::features::FeatureSubset;
use bouncekit::mdn::TrainConfig;
use bouncekit::rng::derive_seed;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{create, Io, Job};
use crate::config::field;

/// Feature-subset ablation on simulated train and test sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub prior: PriorBox,
    pub drop: DropConfig,
    pub train_size: usize,
    pub test_size: usize,
    /// `train.seed` is replaced by a seed derived from the master seed.
    pub train: TrainConfig,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            prior: PriorBox::default(),
            drop: DropConfig::default(),
            train_size: 6000,
            test_size: 1000,
            train: TrainConfig::default(),
        }
    }
}

impl Job for Ablation {
    const NAME: &'static str = "ablation";

    fn defaults(_: &Value) -> Result<Self> {
        Ok(Ablation::default())
    }

    fn validate(&self) -> Result<()> {
        field("prior", self.prior.validate())?;
        if self.train_size == 0 || self.test_size == 0 {
            bail!("config field `train_size`/`test_size`: must be at least 1");
        }
        if self.drop.n_bounces < 3 {
            bail!("config field `drop.n_bounces`: features need at least 3 bounces");
        }
        Ok(())
    }

    fn run(&self, seed: u64, io: &Io) -> Result<String> {
        let train = generate_dataset(&self.prior, self.train_size, &self.drop, derive_seed(seed, "ablation-train-set"))?;
        let test = generate_dataset(&self.prior, self.test_size, &self.drop, derive_seed(seed, "ablation-test-set"))?;
        let cfg = TrainConfig { seed: derive_seed(seed, "ablation-train"), ..self.train.clone() };
        let table = run_ablation(&train, &test, &cfg)?;
        table.write_csv(create(io.out())?)?;
        let m = |f, t| table.mae(f, t).unwrap_or(f64::NAN);
        Ok(format!(
            "MAE e: time {:.4} position {:.4} both {:.4}; log10_kappa: time {:.3} position {:.3} both {:.3}; 90% coverage {:.3}",
            m(FeatureSubset::Time, E),
            m(FeatureSubset::Position, E),
            m(FeatureSubset::All, E),
            m(FeatureSubset::Time, LOG10_KAPPA),
            m(FeatureSubset::Position, LOG10_KAPPA),
            m(FeatureSubset::All, LOG10_KAPPA),
            table.coverage_90
        ))
    }
}
