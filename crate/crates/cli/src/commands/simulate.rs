use anyhow::{bail, Result};
use bouncekit::calibration::{observe_drop, DropConfig};
use bouncekit::rng::stream;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{bounces, Io, Job};
use crate::config::field;

/// Vertical calibration drops at a fixed `(e, log10 κ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Simulate {
    pub restitution: f64,
    pub log10_kappa: f64,
    pub drops: usize,
    pub drop: DropConfig,
}

impl Default for Simulate {
    fn default() -> Self {
        Simulate { restitution: 0.8, log10_kappa: 3.0, drops: 1, drop: DropConfig::default() }
    }
}

impl Job for Simulate {
    const NAME: &'static str = "simulate";

    fn defaults(_: &Value) -> Result<Self> {
        Ok(Simulate::default())
    }

    fn validate(&self) -> Result<()> {
        if !(self.restitution > 0.0 && self.restitution <= 1.0) {
            bail!("config field `restitution`: must lie in (0, 1], got {}", self.restitution);
        }
        if !self.log10_kappa.is_finite() {
            bail!("config field `log10_kappa`: must be finite");
        }
        if self.drops == 0 {
            bail!("config field `drops`: must be at least 1");
        }
        if !(self.drop.drop_height > 0.0) || self.drop.n_bounces == 0 {
            bail!("config field `drop`: height and bounce count must be positive");
        }
        field("drop", self.drop.params(&[self.restitution, self.log10_kappa]).validate())
    }

    fn run(&self, seed: u64, io: &Io) -> Result<String> {
        let theta = [self.restitution, self.log10_kappa];
        let drops = (0..self.drops as u64)
            .map(|d| observe_drop(&theta, &self.drop, &mut stream(seed, d)))
            .collect::<bouncekit::Result<Vec<_>>>()?;
        bounces::write(io.out(), &drops)?;
        Ok(format!("simulated {} drops of {} bounces", self.drops, self.drop.n_bounces))
    }
}
