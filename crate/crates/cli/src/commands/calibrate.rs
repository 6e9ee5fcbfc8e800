use anyhow::{anyhow, bail, Result};
use bouncekit::calibration::{
    generate_dataset, joint_posterior, CalibrationModel, DropConfig, PriorBox, TruncatedGaussian, E, LOG10_KAPPA,
};
use bouncekit::features::{extract_features, FeatureSubset};
use bouncekit::mdn::TrainConfig;
use bouncekit::rng::derive_seed;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{bounces, read_text, write_json, Io, Job};
use crate::config::field;

/// Fits (or loads) the combined-feature model and fuses every observed
/// drop into one posterior over `(e, log10 κ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Calibrate {
    pub prior: PriorBox,
    /// How training drops are simulated.
    pub drop: DropConfig,
    pub train_size: usize,
    /// `train.seed` is replaced by a seed derived from the master seed.
    pub train: TrainConfig,
}

impl Default for Calibrate {
    fn default() -> Self {
        Calibrate { prior: PriorBox::default(), drop: DropConfig::default(), train_size: 6000, train: TrainConfig::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationOutput {
    pub posterior: TruncatedGaussian,
    pub mode: Vec<f64>,
    pub targets: Vec<String>,
    pub n_observations: usize,
    /// Observations whose features fall outside the training range.
    pub n_extrapolated: usize,
}

pub fn fit_model(prior: &PriorBox, drop: &DropConfig, n: usize, train: &TrainConfig, seed: u64) -> Result<CalibrationModel> {
    let data = generate_dataset(prior, n, drop, derive_seed(seed, "calibrate-data"))?;
    let cfg = TrainConfig { seed: derive_seed(seed, "calibrate-train"), ..train.clone() };
    Ok(CalibrationModel::fit(&data, FeatureSubset::All, &[E, LOG10_KAPPA], &cfg)?.0)
}

impl Job for Calibrate {
    const NAME: &'static str = "calibrate";

    fn defaults(_: &Value) -> Result<Self> {
        Ok(Calibrate::default())
    }

    fn validate(&self) -> Result<()> {
        field("prior", self.prior.validate())?;
        if self.train_size == 0 {
            bail!("config field `train_size`: must be at least 1");
        }
        if self.drop.n_bounces < 3 {
            bail!("config field `drop.n_bounces`: features need at least 3 bounces");
        }
        Ok(())
    }

    fn run(&self, seed: u64, io: &Io) -> Result<String> {
        let model = match io.input("model") {
            Some(p) => CalibrationModel::from_json(&read_text(p)?)?,
            None => fit_model(&self.prior, &self.drop, self.train_size, &self.train, seed)?,
        };
        if model.targets != [E, LOG10_KAPPA] || model.features != FeatureSubset::All {
            bail!("calibration model must use all features and predict (e, log10_kappa)");
        }
        if let Some(p) = io.output("save_model") {
            std::fs::write(p, model.to_json()?)?;
        }
        let drops = bounces::read(io.required_input("obs")?)?;
        let obs = drops
            .iter()
            .map(|(d, b)| extract_features(b).map_err(|e| anyhow!("observation drop {d}: {e}")))
            .collect::<Result<Vec<_>>>()?;
        let n_extrapolated = obs.iter().filter(|x| model.model.is_extrapolating(&x.to_array())).count();
        let posterior = joint_posterior(&model, &obs, &self.prior)?;
        let out = CalibrationOutput {
            mode: posterior.mode(),
            posterior,
            targets: vec!["e".into(), "log10_kappa".into()],
            n_observations: obs.len(),
            n_extrapolated,
        };
        write_json(io.out(), &out)?;
        Ok(format!("posterior mode e = {:.4}, log10_kappa = {:.3} from {} drops", out.mode[0], out.mode[1], out.n_observations))
    }
}
