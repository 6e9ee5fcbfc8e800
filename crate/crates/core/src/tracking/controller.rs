use nalgebra::Vector2;
use serde::Serialize;

use super::{MotionCommand, RobotPlane};
use crate::dynamics::{filter_outlier, predict_next_bounce, rollout_to_plane, BounceBelief, TransitionModel};
use crate::error::{invalid, Error, Result};
use crate::rng::SimRng;
use crate::sim::BounceEvent;

/// Closed-form interception from the last two bounces, assuming a known
/// restitution and no directional noise.
///
/// With `d_R` the distance from `cur` to the plane along the direction of
/// travel, the ball reaches the plane before bouncing again iff
/// `e² d_i > d_R`; the command is then `(y_R, z_R)` within `t_R`, otherwise
/// a lateral move to `y_R` within `e t_i`. A heading that does not approach
/// the plane gives a lateral move to the bounce's own `y`.
pub fn deterministic_controller_step(
    prev: &BounceEvent,
    cur: &BounceEvent,
    e: f64,
    gravity: f64,
    plane: &RobotPlane,
    current: &Vector2<f64>,
) -> MotionCommand {
    let t_i = cur.time - prev.time;
    let delta = cur.position - prev.position;
    let d_i = delta.norm();
    let dx = delta.x;
    let to_plane = plane.plane_x - cur.position.x;
    if !(dx > 0.0) || !(to_plane >= 0.0) || !(t_i > 0.0) {
        return MotionCommand { target: Vector2::new(cur.position.y, current.y), duration: e * t_i.max(0.0) };
    }
    let slope = delta.y / dx;
    let y_r = slope * plane.plane_x + (cur.position.y - slope * cur.position.x);
    let d_r = to_plane * d_i / dx;
    if e * e * d_i > d_r {
        let t_r = d_r * t_i / (e * d_i);
        let z_r = 0.5 * e * gravity * t_i * t_r - 0.5 * gravity * t_r * t_r;
        MotionCommand { target: Vector2::new(y_r, z_r), duration: t_r }
    } else {
        MotionCommand { target: Vector2::new(y_r, current.y), duration: e * t_i }
    }
}

/// Share of the distance to the predicted crossing covered in one command,
/// `clamp(gain/σ, 0, 1)`. A zero spread moves all the way.
pub fn step_fraction(gain: f64, sigma: f64) -> f64 {
    if sigma > 0.0 {
        (gain / sigma).clamp(0.0, 1.0)
    } else {
        1.0
    }
}

/// Lookahead step toward the mean of the plane-crossing samples. Each axis
/// moves the fraction `clamp(gain/σ, 0, 1)` of the way, σ being the spread
/// of the crossings on that axis. Without crossings the effector tracks the
/// predicted next bounce laterally.
#[allow(clippy::too_many_arguments)]
pub fn stochastic_controller_step(
    prev: &BounceEvent,
    cur: &BounceEvent,
    belief: &BounceBelief,
    model: &TransitionModel,
    plane: &RobotPlane,
    current: &Vector2<f64>,
    gain: f64,
    lookahead: usize,
    samples: usize,
    rng: &mut SimRng,
) -> Result<MotionCommand> {
    let rollout = rollout_to_plane(model, prev, cur, plane.plane_x, lookahead, samples, rng)?;
    let (Some(mean), Some(sd)) = (rollout.mean(), rollout.std_dev()) else {
        return Ok(MotionCommand {
            target: Vector2::new(belief.mean.y, current.y),
            duration: (belief.time_mean - cur.time).max(0.0),
        });
    };
    let target = Vector2::new(
        current.x + step_fraction(gain, sd[0]) * (mean[0] - current.x),
        current.y + step_fraction(gain, sd[1]) * (mean[1] - current.y),
    );
    Ok(MotionCommand { target, duration: (mean[2] - cur.time).max(0.0) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeterministicController {
    /// Restitution estimate, normally the mode of the calibrated posterior.
    pub e: f64,
    pub gravity: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct StochasticController<'m> {
    pub model: &'m TransitionModel,
    pub gain: f64,
    /// Lookahead depth `k`.
    pub lookahead: usize,
    /// Samples per level `n`.
    pub samples: usize,
    /// Elliptic-envelope confidence for the outlier gate.
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy)]
pub enum Controller<'m> {
    Deterministic(DeterministicController),
    Stochastic(StochasticController<'m>),
}

impl Controller<'_> {
    pub fn validate(&self) -> Result<()> {
        match self {
            Controller::Deterministic(c) if !(c.e > 0.0 && c.e <= 1.0) || !(c.gravity > 0.0) => {
                Err(invalid("deterministic controller needs e in (0, 1] and positive gravity"))
            }
            Controller::Stochastic(c)
                if !(c.gain > 0.0) || c.lookahead == 0 || c.samples == 0 || !(c.confidence > 0.0 && c.confidence < 1.0) =>
            {
                Err(invalid("stochastic controller needs positive gain, k, n and a confidence in (0, 1)"))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Controller::Deterministic(_) => "det",
            Controller::Stochastic(_) => "stoch",
        }
    }
}

/// Per-trial controller state: the effective bounce history and, for the
/// stochastic controller, the belief predicted at the previous bounce.
#[derive(Debug, Clone)]
pub struct Tracker<'c, 'm> {
    controller: &'c Controller<'m>,
    pub history: Vec<BounceEvent>,
    pub belief: Option<BounceBelief>,
}

impl<'c, 'm> Tracker<'c, 'm> {
    pub fn new(controller: &'c Controller<'m>) -> Self {
        Tracker { controller, history: Vec::new(), belief: None }
    }

    /// Feeds one observed bounce. Returns the command to issue and whether
    /// the observation was rejected as an outlier.
    pub fn observe(
        &mut self,
        obs: &BounceEvent,
        current: &Vector2<f64>,
        plane: &RobotPlane,
        rng: &mut SimRng,
    ) -> Result<(MotionCommand, bool)> {
        let lateral = |ev: &BounceEvent| MotionCommand { target: Vector2::new(ev.position.y, current.y), duration: 0.0 };
        match self.controller {
            Controller::Deterministic(c) => {
                self.history.push(*obs);
                let cmd = match self.history.as_slice() {
                    [.., prev, cur] => deterministic_controller_step(prev, cur, c.e, c.gravity, plane, current),
                    _ => lateral(obs),
                };
                Ok((cmd, false))
            }
            Controller::Stochastic(c) => {
                let mut rejected = false;
                let mut effective = *obs;
                if let Some(belief) = &self.belief {
                    let (out, eff) = filter_outlier(belief, obs, c.confidence)?;
                    rejected = out;
                    effective = eff;
                }
                self.history.push(effective);
                let [.., prev, cur] = self.history.as_slice() else {
                    return Ok((lateral(&effective), false));
                };
                let belief = match predict_next_bounce(c.model, prev, cur, rng) {
                    Ok(b) => b,
                    Err(Error::HeadingUndefined) => {
                        self.belief = None;
                        return Ok((lateral(&effective), rejected));
                    }
                    Err(e) => return Err(e),
                };
                self.belief = Some(belief);
                let cmd = stochastic_controller_step(
                    prev, cur, &belief, c.model, plane, current, c.gain, c.lookahead, c.samples, rng,
                )?;
                Ok((cmd, rejected))
            }
        }
    }
}
