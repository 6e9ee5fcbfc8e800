use anyhow::{anyhow, bail, Result};
use bouncekit::calibration::TruncatedGaussian;
use bouncekit::dynamics::{train_transition_model, TransitionModel, TransitionSimConfig};
use bouncekit::mdn::TrainConfig;
use bouncekit::rng::derive_seed;
use bouncekit::sim::SimParams;
use bouncekit::tracking::{
    ball_preset, run_batch, run_cup_experiment, write_trials_csv, BallPreset, Controller, CupConfig, CupGrid,
    DeterministicController, EffectorConfig, RobotPlane, StochasticController, TossConfig, DEFAULT_GAIN,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::Path;

use super::{create, read_text, Io, Job};
use crate::config::field;

pub const DEFAULT_BALL: &str = "ping-pong/table";

fn chosen_preset(overrides: &Value) -> Result<BallPreset> {
    let name = match overrides.get("ball") {
        None => DEFAULT_BALL,
        Some(v) => v.as_str().ok_or_else(|| anyhow!("config field `ball`: expected a preset name"))?,
    };
    field("ball", ball_preset(name))
}

/// The preset with its ball parameters replaced by the user's.
fn ball(name: &str, restitution: f64, log10_kappa: f64) -> Result<BallPreset> {
    Ok(BallPreset { restitution, log10_kappa, ..field("ball", ball_preset(name))? })
}

fn read_posterior(path: &Path) -> Result<TruncatedGaussian> {
    let mut v: Value = serde_json::from_str(&read_text(path)?)?;
    if let Some(p) = v.get_mut("posterior") {
        v = p.take();
    }
    let g: TruncatedGaussian = serde_json::from_value(v).map_err(|e| anyhow!("{}: not a posterior: {e}", path.display()))?;
    if g.gaussian.dim() != 2 || g.bounds.dim() != 2 {
        bail!("{}: posterior must be over (e, log10_kappa)", path.display());
    }
    Ok(g)
}

fn train_transition(posterior: &TruncatedGaussian, sims: usize, cfg: &TransitionSimConfig, seed: u64) -> Result<TransitionModel> {
    let cfg = TransitionSimConfig {
        train: TrainConfig { seed: derive_seed(seed, "transition-train"), ..cfg.train.clone() },
        ..cfg.clone()
    };
    Ok(train_transition_model(posterior, sims, &cfg, derive_seed(seed, "transition-sims"))?.0)
}

fn check_transition(t: &TransitionSimConfig, sims: usize) -> Result<()> {
    field("transition.launch", t.launch.validate())?;
    if sims == 0 || t.n_bounces < 3 || !(t.position_noise >= 0.0) {
        bail!("config field `transition`: needs at least one simulation of 3+ bounces and non-negative noise");
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Det,
    Stoch,
}

/// Paired tracking trials for one controller and ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Track {
    pub controller: ControllerKind,
    pub ball: String,
    pub trials: usize,
    /// True ball parameters.
    pub restitution: f64,
    pub log10_kappa: f64,
    /// Restitution the deterministic controller assumes.
    pub e_estimate: f64,
    pub gain: f64,
    pub lookahead: usize,
    pub samples: usize,
    pub confidence: f64,
    pub toss: TossConfig,
    pub plane: RobotPlane,
    pub effector: EffectorConfig,
    /// Used only when no transition model is supplied.
    pub transition_sims: usize,
    pub transition: TransitionSimConfig,
}

impl Track {
    fn from_preset(p: &BallPreset, overrides: &Value) -> Self {
        let e = overrides.get("restitution").and_then(Value::as_f64).unwrap_or(p.restitution);
        Track {
            controller: ControllerKind::Det,
            ball: p.name.to_string(),
            trials: 30,
            restitution: p.restitution,
            log10_kappa: p.log10_kappa,
            e_estimate: e,
            gain: DEFAULT_GAIN,
            lookahead: p.lookahead,
            samples: 10,
            confidence: 0.975,
            toss: p.toss(),
            plane: RobotPlane::default(),
            effector: EffectorConfig::default(),
            transition_sims: 800,
            transition: p.transition_config(0),
        }
    }
}

impl Default for Track {
    fn default() -> Self {
        Track::from_preset(&ball_preset(DEFAULT_BALL).expect("default preset exists"), &Value::Null)
    }
}

impl Job for Track {
    const NAME: &'static str = "track";

    fn defaults(overrides: &Value) -> Result<Self> {
        Ok(Track::from_preset(&chosen_preset(overrides)?, overrides))
    }

    fn validate(&self) -> Result<()> {
        field("restitution", ball(&self.ball, self.restitution, self.log10_kappa)?.params().validate())?;
        if self.trials == 0 {
            bail!("config field `trials`: must be at least 1");
        }
        field("toss", self.toss.validate())?;
        field("plane", self.plane.validate())?;
        field("effector", self.effector.validate())?;
        check_transition(&self.transition, self.transition_sims)?;
        let det = DeterministicController { e: self.e_estimate, gravity: self.transition.gravity };
        field("e_estimate", Controller::Deterministic(det).validate())?;
        if !(self.gain > 0.0) || self.lookahead == 0 || self.samples == 0 || !(self.confidence > 0.0 && self.confidence < 1.0) {
            bail!("config field `gain`/`lookahead`/`samples`/`confidence`: stochastic controller needs positive gain, k, n and a confidence in (0, 1)");
        }
        Ok(())
    }

    fn run(&self, seed: u64, io: &Io) -> Result<String> {
        let preset = ball(&self.ball, self.restitution, self.log10_kappa)?;
        let params = SimParams { gravity: self.transition.gravity, ..preset.params() };
        let model;
        let controller = match self.controller {
            ControllerKind::Det => Controller::Deterministic(DeterministicController { e: self.e_estimate, gravity: params.gravity }),
            ControllerKind::Stoch => {
                model = match io.input("model") {
                    Some(p) => TransitionModel::from_json(&read_text(p)?)?,
                    None => train_transition(&preset.posterior(), self.transition_sims, &self.transition, seed)?,
                };
                Controller::Stochastic(StochasticController {
                    model: &model,
                    gain: self.gain,
                    lookahead: self.lookahead,
                    samples: self.samples,
                    confidence: self.confidence,
                })
            }
        };
        let results = run_batch(&controller, &self.toss, &self.plane, &params, &self.effector, self.trials, seed)?;
        write_trials_csv(&results, create(io.out())?)?;
        let wins = results.iter().filter(|r| r.success).count();
        let energy = results.iter().map(|r| r.energy).sum::<f64>() / results.len() as f64;
        Ok(format!("{} on {}: {wins}/{} successes, mean energy {energy:.5}", controller.name(), self.ball, results.len()))
    }
}

/// Ball-in-cup success counts over a grid of drop points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Cupmap {
    pub grid: CupGrid,
    /// Drops per cell.
    pub n: usize,
    pub cup: CupConfig,
}

impl Default for Cupmap {
    fn default() -> Self {
        Cupmap { grid: CupGrid::default(), n: 100, cup: CupConfig::default() }
    }
}

impl Job for Cupmap {
    const NAME: &'static str = "cupmap";

    fn defaults(_: &Value) -> Result<Self> {
        Ok(Cupmap::default())
    }

    fn validate(&self) -> Result<()> {
        field("grid", self.grid.validate())?;
        field("cup", self.cup.validate())?;
        if self.n == 0 {
            bail!("config field `n`: must be at least 1");
        }
        Ok(())
    }

    fn run(&self, seed: u64, io: &Io) -> Result<String> {
        let posterior = read_posterior(io.required_input("posterior")?)?;
        let map = run_cup_experiment(&posterior, &self.grid, self.n, &self.cup, seed)?;
        map.write_csv(create(io.out())?)?;
        let total: usize = map.cells.iter().map(|c| c.successes).sum();
        Ok(format!("{total} successes over {} cells of {} drops", map.cells.len(), self.n))
    }
}

/// Trains a transition model for the tracking controllers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainTransition {
    pub ball: String,
    /// Centre of the training posterior when none is supplied.
    pub restitution: f64,
    pub log10_kappa: f64,
    pub sims: usize,
    pub transition: TransitionSimConfig,
}

impl TrainTransition {
    fn from_preset(p: &BallPreset) -> Self {
        TrainTransition {
            ball: p.name.to_string(),
            restitution: p.restitution,
            log10_kappa: p.log10_kappa,
            sims: 800,
            transition: p.transition_config(0),
        }
    }
}

impl Default for TrainTransition {
    fn default() -> Self {
        TrainTransition::from_preset(&ball_preset(DEFAULT_BALL).expect("default preset exists"))
    }
}

impl Job for TrainTransition {
    const NAME: &'static str = "train-transition";

    fn defaults(overrides: &Value) -> Result<Self> {
        Ok(TrainTransition::from_preset(&chosen_preset(overrides)?))
    }

    fn validate(&self) -> Result<()> {
        field("restitution", ball(&self.ball, self.restitution, self.log10_kappa)?.params().validate())?;
        check_transition(&self.transition, self.sims)
    }

    fn run(&self, seed: u64, io: &Io) -> Result<String> {
        let posterior = match io.input("posterior") {
            Some(p) => read_posterior(p)?,
            None => ball(&self.ball, self.restitution, self.log10_kappa)?.posterior(),
        };
        let model = train_transition(&posterior, self.sims, &self.transition, seed)?;
        std::fs::write(io.out(), model.to_json()?)?;
        Ok(format!("transition model trained on {} simulations", self.sims))
    }
}
