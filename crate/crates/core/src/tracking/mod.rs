//! Simulated robot-plane harness: an end effector on the plane `x = x_R`
//! intercepting tossed balls under a deterministic (closed-form) or a
//! stochastic (learned transition model) controller, plus the inclined
//! ball-in-cup experiment.

mod controller;
mod cup;
mod harness;

pub use controller::{
    deterministic_controller_step, step_fraction, stochastic_controller_step, Controller, DeterministicController,
    StochasticController, Tracker,
};
pub use cup::{drop_into_cup, run_cup_experiment, CupCell, CupConfig, CupGrid, CupMap};
pub use harness::{
    ball_preset, run_batch, run_trial, write_trials_csv, BallPreset, FailureMode, TossConfig, TrialResult,
    BALL_PRESETS,
};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Half of a 4.5 in paddle diameter, m.
pub const PADDLE_RADIUS: f64 = 0.05715;
/// Step-fraction gain of the stochastic controller, m.
pub const DEFAULT_GAIN: f64 = 0.02;

/// The vertical plane `x = plane_x` the end effector moves in, with its
/// rectangular `(y, z)` workspace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotPlane {
    pub plane_x: f64,
    pub y_bounds: [f64; 2],
    pub z_bounds: [f64; 2],
}

impl Default for RobotPlane {
    fn default() -> Self {
        RobotPlane { plane_x: 1.0, y_bounds: [-0.3, 0.3], z_bounds: [0.0, 0.4] }
    }
}

impl RobotPlane {
    pub fn validate(&self) -> Result<()> {
        let ok = |b: [f64; 2]| b[0] < b[1] && b[0].is_finite() && b[1].is_finite();
        if !self.plane_x.is_finite() || !ok(self.y_bounds) || !ok(self.z_bounds) {
            return Err(invalid("robot plane needs a finite x and nonempty y/z bounds"));
        }
        Ok(())
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        (self.y_bounds[0]..=self.y_bounds[1]).contains(&p.x) && (self.z_bounds[0]..=self.z_bounds[1]).contains(&p.y)
    }

    pub fn clamp(&self, p: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(p.x.clamp(self.y_bounds[0], self.y_bounds[1]), p.y.clamp(self.z_bounds[0], self.z_bounds[1]))
    }
}

/// Move the effector to `target` (`y`, `z`) so that it arrives `duration`
/// seconds after the command is issued. A zero duration means "as fast as
/// allowed".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionCommand {
    pub target: Vector2<f64>,
    pub duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EffectorConfig {
    pub home: [f64; 2],
    pub paddle_radius: f64,
    pub max_speed: f64,
}

impl Default for EffectorConfig {
    fn default() -> Self {
        EffectorConfig { home: [0.0, 0.1], paddle_radius: PADDLE_RADIUS, max_speed: 1.0 }
    }
}

impl EffectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.paddle_radius > 0.0) || !(self.max_speed > 0.0) {
            return Err(invalid("paddle radius and max speed must be positive"));
        }
        Ok(())
    }
}

/// Paddle centre in the robot plane, moving in straight constant-velocity
/// segments. Every segment start, arrival and query time is logged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndEffector {
    pub position: Vector2<f64>,
    pub paddle_radius: f64,
    pub max_speed: f64,
    /// `(t, y, z)` samples; velocity is constant between neighbours.
    pub log: Vec<(f64, f64, f64)>,
    time: f64,
    velocity: Vector2<f64>,
    goal: Vector2<f64>,
    arrive_at: f64,
    workspace: RobotPlane,
}

impl EndEffector {
    pub fn new(cfg: &EffectorConfig, plane: &RobotPlane) -> Result<Self> {
        cfg.validate()?;
        let home = Vector2::new(cfg.home[0], cfg.home[1]);
        if !plane.contains(&home) {
            return Err(invalid("effector home lies outside the workspace"));
        }
        Ok(EndEffector {
            position: home,
            paddle_radius: cfg.paddle_radius,
            max_speed: cfg.max_speed,
            log: vec![(0.0, home.x, home.y)],
            time: 0.0,
            velocity: Vector2::zeros(),
            goal: home,
            arrive_at: 0.0,
            workspace: *plane,
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn velocity(&self) -> Vector2<f64> {
        self.velocity
    }

    fn push_log(&mut self) {
        let last = self.log.last().copied();
        if last.map(|l| l.0) == Some(self.time) {
            self.log.pop();
        }
        self.log.push((self.time, self.position.x, self.position.y));
    }

    /// Moves along the current segment up to time `t`.
    pub fn advance_to(&mut self, t: f64) {
        if !(t > self.time) {
            return;
        }
        if self.velocity != Vector2::zeros() && self.arrive_at <= t {
            self.position = self.goal;
            self.time = self.arrive_at;
            self.velocity = Vector2::zeros();
            self.push_log();
        }
        self.position = self.workspace.clamp(&(self.position + self.velocity * (t - self.time)));
        self.time = t;
        self.push_log();
    }

    /// Starts a new segment at time `now`, replacing any move in progress.
    /// The target is clamped to the workspace and the speed to `max_speed`.
    pub fn command(&mut self, now: f64, cmd: &MotionCommand) {
        self.advance_to(now);
        let target = self.workspace.clamp(&cmd.target);
        let delta = target - self.position;
        let dist = delta.norm();
        if dist == 0.0 {
            self.velocity = Vector2::zeros();
            return;
        }
        let speed = if cmd.duration > 0.0 { (dist / cmd.duration).min(self.max_speed) } else { self.max_speed };
        self.velocity = delta * (speed / dist);
        self.goal = target;
        self.arrive_at = self.time + dist / speed;
        self.push_log();
    }

    /// Mass-normalised kinetic energy `∫ ½‖v‖² dt` over the log.
    pub fn energy(&self) -> f64 {
        trajectory_energy(&self.log)
    }
}

/// `∫ ½‖v‖² dt` for a piecewise-linear `(t, y, z)` path.
pub fn trajectory_energy(log: &[(f64, f64, f64)]) -> f64 {
    log.windows(2)
        .map(|w| {
            let dt = w[1].0 - w[0].0;
            if dt <= 0.0 {
                return 0.0;
            }
            let d2 = (w[1].1 - w[0].1).powi(2) + (w[1].2 - w[0].2).powi(2);
            0.5 * d2 / dt
        })
        .sum()
}
