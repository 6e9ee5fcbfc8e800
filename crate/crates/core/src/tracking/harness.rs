use nalgebra::Vector2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;

use super::controller::{Controller, Tracker};
use super::{EffectorConfig, EndEffector, RobotPlane};
use crate::calibration::TruncatedGaussian;
use crate::dynamics::{LaunchConfig, TransitionSimConfig};
use crate::error::{invalid, Result};
use crate::mdn::{Bounds, GaussianD, TrainConfig};
use crate::rng::{derive_seed, seeded};
use crate::sim::{apply_collision, step_to_next_bounce, BallState, BounceEvent, SimParams, SurfacePlane};

/// Demo ball/surface pairs. The parameters are plausible stand-ins, not
/// measured values. Toss speeds put the plane at `x = 1 m` two to four
/// bounces downrange.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BallPreset {
    pub name: &'static str,
    pub restitution: f64,
    pub log10_kappa: f64,
    /// Horizontal toss speed range, m/s.
    pub speed_range: [f64; 2],
    /// Lookahead depth for the stochastic controller.
    pub lookahead: usize,
}

pub const BALL_PRESETS: [BallPreset; 4] = [
    BallPreset { name: "ping-pong/table", restitution: 0.88, log10_kappa: 3.5, speed_range: [0.85, 1.15], lookahead: 4 },
    BallPreset { name: "tennis/table", restitution: 0.75, log10_kappa: 3.0, speed_range: [1.25, 1.5], lookahead: 3 },
    BallPreset { name: "moon/table", restitution: 0.8, log10_kappa: 1.8, speed_range: [1.1, 1.35], lookahead: 2 },
    BallPreset { name: "ping-pong/asphalt", restitution: 0.82, log10_kappa: 2.5, speed_range: [1.05, 1.3], lookahead: 3 },
];

pub fn ball_preset(name: &str) -> Result<BallPreset> {
    BALL_PRESETS.iter().copied().find(|p| p.name == name).ok_or_else(|| {
        let names: Vec<_> = BALL_PRESETS.iter().map(|p| p.name).collect();
        invalid(format!("unknown ball preset {name:?}; known: {}", names.join(", ")))
    })
}

impl BallPreset {
    pub fn params(&self) -> SimParams {
        SimParams::new(self.restitution, self.log10_kappa)
    }

    pub fn toss(&self) -> TossConfig {
        TossConfig {
            launch: LaunchConfig { speed_range: self.speed_range, heading_spread: 0.15, ..LaunchConfig::default() },
            ..TossConfig::default()
        }
    }

    /// Transition-model training matched to this preset's tosses and
    /// observation noise.
    pub fn transition_config(&self, seed: u64) -> TransitionSimConfig {
        let toss = self.toss();
        TransitionSimConfig {
            launch: toss.launch,
            n_bounces: 6,
            position_noise: toss.localization_noise,
            train: TrainConfig { hidden: vec![32, 32], seed, ..TrainConfig::default() },
            ..TransitionSimConfig::default()
        }
    }

    /// A tight posterior around the preset, standing in for a calibrated one.
    pub fn posterior(&self) -> TruncatedGaussian {
        TruncatedGaussian {
            gaussian: GaussianD::new(vec![self.restitution, self.log10_kappa], vec![1e-4, 0.04])
                .expect("preset posterior is valid"),
            bounds: Bounds { lower: vec![0.55, 1.0], upper: vec![0.95, 5.0] },
        }
    }
}

/// Toss distribution and observation corruption for tracking trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TossConfig {
    pub launch: LaunchConfig,
    /// Per-axis Gaussian noise on observed bounce positions, m.
    pub localization_noise: f64,
    pub outlier_probability: f64,
    /// Outlier displacement magnitude range, m, in a uniform direction.
    pub outlier_magnitude: [f64; 2],
    /// First bounce (1-based) that may carry an outlier.
    pub outliers_from_bounce: usize,
    /// Bounces simulated before the toss counts as never reaching the plane.
    pub max_bounces: usize,
}

impl Default for TossConfig {
    fn default() -> Self {
        TossConfig {
            launch: LaunchConfig { speed_range: [0.9, 1.3], heading_spread: 0.15, ..LaunchConfig::default() },
            localization_noise: 0.0079,
            outlier_probability: 0.1,
            outlier_magnitude: [0.03, 0.1],
            outliers_from_bounce: 1,
            max_bounces: 12,
        }
    }
}

impl TossConfig {
    pub fn validate(&self) -> Result<()> {
        self.launch.validate()?;
        if !(self.localization_noise >= 0.0) {
            return Err(invalid("localization noise must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.outlier_probability) {
            return Err(invalid("outlier probability must lie in [0, 1]"));
        }
        let m = self.outlier_magnitude;
        if !(m[0] >= 0.0 && m[0] <= m[1]) {
            return Err(invalid("outlier magnitude range must be non-negative and ordered"));
        }
        if self.max_bounces == 0 {
            return Err(invalid("max_bounces must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureMode {
    None,
    /// The same toss succeeds once the injected outliers are removed.
    Outlier,
    Missed,
    /// The ball crossed outside the workspace or never reached the plane.
    Boundary,
}

impl FailureMode {
    pub fn name(&self) -> &'static str {
        match self {
            FailureMode::None => "none",
            FailureMode::Outlier => "outlier",
            FailureMode::Missed => "missed",
            FailureMode::Boundary => "boundary",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub success: bool,
    pub failure_mode: FailureMode,
    /// Mass-normalised effector energy up to the crossing, m²/s².
    pub energy: f64,
    /// Ball crossing `(y, z, t)` on the robot plane.
    pub crossing: Option<[f64; 3]>,
    /// Paddle centre `(y, z)` when the ball crossed.
    pub paddle: Option<[f64; 2]>,
    /// Distance from paddle centre to the ball at the crossing, m.
    pub miss_distance: Option<f64>,
    pub bounces_observed: usize,
    /// 1-based indices of bounces whose observation was corrupted.
    pub outlier_bounces: Vec<usize>,
    /// 1-based indices of observations the controller rejected.
    pub rejected_bounces: Vec<usize>,
}

/// Where the arc starting at `state` meets `x = plane_x` before `impact`.
fn plane_crossing(state: &BallState, impact_time: f64, plane_x: f64, gravity: f64) -> Option<[f64; 3]> {
    let (p, v) = (state.position, state.velocity);
    if !(v.x > 0.0) || p.x >= plane_x {
        return None;
    }
    let dt = (plane_x - p.x) / v.x;
    if state.time + dt > impact_time {
        return None;
    }
    Some([p.y + v.y * dt, p.z + v.z * dt - 0.5 * gravity * dt * dt, state.time + dt])
}

/// One toss against one controller.
///
/// The ball, the observation corruption and the controller's own sampling
/// use separate streams derived from `seed`, so two controllers run with
/// the same seed see identical tosses and identical noise. A failed trial
/// with injected outliers is replayed without them; it counts as an
/// outlier failure when the replay succeeds.
pub fn run_trial(
    controller: &Controller,
    toss: &TossConfig,
    plane: &RobotPlane,
    params: &SimParams,
    effector: &EffectorConfig,
    seed: u64,
) -> Result<TrialResult> {
    controller.validate()?;
    toss.validate()?;
    plane.validate()?;
    params.validate()?;
    let mut result = simulate_trial(controller, toss, plane, params, effector, seed, true)?;
    if result.failure_mode == FailureMode::Missed && !result.outlier_bounces.is_empty() {
        let clean = simulate_trial(controller, toss, plane, params, effector, seed, false)?;
        if clean.success {
            result.failure_mode = FailureMode::Outlier;
        }
    }
    Ok(result)
}

fn simulate_trial(
    controller: &Controller,
    toss: &TossConfig,
    plane: &RobotPlane,
    params: &SimParams,
    effector: &EffectorConfig,
    seed: u64,
    inject: bool,
) -> Result<TrialResult> {
    let mut ball_rng = seeded(derive_seed(seed, "toss-ball"));
    let mut obs_rng = seeded(derive_seed(seed, "toss-observation"));
    let mut ctrl_rng = seeded(derive_seed(seed, "toss-control"));
    let noise = Normal::new(0.0, toss.localization_noise.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let table = SurfacePlane::horizontal();

    let mut fx = EndEffector::new(effector, plane)?;
    let mut tracker = Tracker::new(controller);
    let mut state = toss.launch.sample(&mut ball_rng);
    let mut crossing = None;
    let mut outlier_bounces = Vec::new();
    let mut rejected_bounces = Vec::new();
    let mut observed = 0;

    for bounce in 1..=toss.max_bounces {
        let impact = step_to_next_bounce(&state, &table, params.gravity)?;
        if let Some(c) = plane_crossing(&state, impact.state.time, plane.plane_x, params.gravity) {
            crossing = Some(c);
            break;
        }
        // draws are made for every bounce so both controllers stay paired
        let jitter = Vector2::new(noise.sample(&mut obs_rng), noise.sample(&mut obs_rng));
        let u: f64 = obs_rng.random();
        let mag = toss.outlier_magnitude[0] + (toss.outlier_magnitude[1] - toss.outlier_magnitude[0]) * obs_rng.random::<f64>();
        let angle = 2.0 * PI * obs_rng.random::<f64>();
        let mut position = impact.event.position;
        if toss.localization_noise > 0.0 {
            position += jitter;
        }
        let corrupted = inject && bounce >= toss.outliers_from_bounce && u < toss.outlier_probability;
        if corrupted {
            position += Vector2::new(angle.cos(), angle.sin()) * mag;
            outlier_bounces.push(bounce);
        }
        let obs = BounceEvent { time: impact.event.time, position };
        fx.advance_to(obs.time);
        let current = fx.position;
        let (cmd, rejected) = tracker.observe(&obs, &current, plane, &mut ctrl_rng)?;
        fx.command(obs.time, &cmd);
        observed = bounce;
        if rejected {
            rejected_bounces.push(bounce);
        }

        let v = apply_collision(&impact.state.velocity, &table, params, &mut ball_rng)?;
        state = BallState { velocity: v, ..impact.state };
    }

    let base = TrialResult {
        success: false,
        failure_mode: FailureMode::Boundary,
        energy: 0.0,
        crossing,
        paddle: None,
        miss_distance: None,
        bounces_observed: observed,
        outlier_bounces,
        rejected_bounces,
    };
    let Some(c) = crossing else {
        return Ok(TrialResult { energy: fx.energy(), ..base });
    };
    fx.advance_to(c[2]);
    let energy = fx.energy();
    let paddle = Some([fx.position.x, fx.position.y]);
    let ball = Vector2::new(c[0], c[1]);
    if !plane.contains(&ball) {
        return Ok(TrialResult { energy, paddle, ..base });
    }
    let miss = (ball - fx.position).norm();
    let success = miss <= fx.paddle_radius;
    let failure_mode = if success { FailureMode::None } else { FailureMode::Missed };
    Ok(TrialResult { success, failure_mode, energy, paddle, miss_distance: Some(miss), ..base })
}

/// `n_trials` independent tosses; trial `i` uses a seed derived from
/// `(seed, i)`.
pub fn run_batch(
    controller: &Controller,
    toss: &TossConfig,
    plane: &RobotPlane,
    params: &SimParams,
    effector: &EffectorConfig,
    n_trials: usize,
    seed: u64,
) -> Result<Vec<TrialResult>> {
    (0..n_trials)
        .into_par_iter()
        .map(|i| run_trial(controller, toss, plane, params, effector, derive_seed(seed, &format!("trial-{i}"))))
        .collect()
}

pub fn write_trials_csv<W: Write>(results: &[TrialResult], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "trial", "success", "failure_mode", "energy", "crossing_y", "crossing_z", "crossing_t", "paddle_y", "paddle_z", "miss_distance",
        "bounces_observed", "outlier_bounces", "rejected_bounces",
    ])?;
    let join = |v: &[usize]| v.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(";");
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.9}")).unwrap_or_default();
    for (i, r) in results.iter().enumerate() {
        out.write_record([
            i.to_string(),
            r.success.to_string(),
            r.failure_mode.name().to_string(),
            format!("{:.9}", r.energy),
            opt(r.crossing.map(|c| c[0])),
            opt(r.crossing.map(|c| c[1])),
            opt(r.crossing.map(|c| c[2])),
            opt(r.paddle.map(|p| p[0])),
            opt(r.paddle.map(|p| p[1])),
            opt(r.miss_distance),
            r.bounces_observed.to_string(),
            join(&r.outlier_bounces),
            join(&r.rejected_bounces),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracking::DeterministicController;
    use nalgebra::Vector3;

    #[test]
    fn straight_toss_hits_waiting_paddle() {
        // ball launched along y = 0 at paddle height range, no noise
        let toss = TossConfig {
            launch: LaunchConfig {
                x_range: [0.0, 0.0],
                y_range: [0.0, 0.0],
                speed_range: [1.2, 1.2],
                heading_spread: 0.0,
                ..LaunchConfig::default()
            },
            localization_noise: 0.0,
            outlier_probability: 0.0,
            ..TossConfig::default()
        };
        let params = SimParams::new(0.8, 9.0);
        let ctrl = Controller::Deterministic(DeterministicController { e: 0.8, gravity: params.gravity });
        let r = run_trial(&ctrl, &toss, &RobotPlane::default(), &params, &EffectorConfig::default(), 3).unwrap();
        assert!(r.success, "{r:?}");
    }

    #[test]
    fn wide_toss_is_a_boundary_failure() {
        let toss = TossConfig {
            launch: LaunchConfig { y_range: [0.0, 0.0], heading_spread: 0.0, speed_range: [1.2, 1.2], ..LaunchConfig::default() },
            ..TossConfig::default()
        };
        let mut launch = toss.launch;
        launch.y_range = [0.6, 0.6];
        let toss = TossConfig { launch, ..toss };
        let params = SimParams::new(0.8, 9.0);
        let ctrl = Controller::Deterministic(DeterministicController { e: 0.8, gravity: params.gravity });
        let r = run_trial(&ctrl, &toss, &RobotPlane::default(), &params, &EffectorConfig::default(), 3).unwrap();
        assert_eq!(r.failure_mode, FailureMode::Boundary);
        assert!(!r.success);
    }

    #[test]
    fn unknown_preset() {
        assert!(ball_preset("moon/table").is_ok());
        assert!(ball_preset("bowling/ice").is_err());
    }

    #[test]
    fn crossing_of_first_arc() {
        let s = BallState { position: Vector3::new(0.0, 0.0, 0.0), velocity: Vector3::new(1.0, 0.5, 2.0), time: 1.0 };
        let c = plane_crossing(&s, 2.0, 0.2, 9.81).unwrap();
        assert!((c[0] - 0.1).abs() < 1e-12);
        assert!((c[1] - (0.4 - 0.5 * 9.81 * 0.04)).abs() < 1e-12);
        assert!((c[2] - 1.2).abs() < 1e-12);
        assert!(plane_crossing(&s, 1.1, 0.2, 9.81).is_none());
    }
}
