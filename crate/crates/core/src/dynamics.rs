//! Learned bounce-to-bounce transition model and what is built on it:
//! next-bounce beliefs, lookahead sampling to a vertical plane and outlier
//! gating of observed bounces.

use nalgebra::{Matrix2, Rotation2, Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::calibration::TruncatedGaussian;
use crate::error::{invalid, Error, Result};
use crate::features::{extract_transition_pairs, TransitionPair};
use crate::mdn::{train, MdnModel, MixtureOfGaussians, TrainConfig, TrainReport};
use crate::rng::stream;
use crate::sim::{simulate_trajectory, BallState, BounceEvent, CollisionMode, SimParams, SurfacePlane, STANDARD_GRAVITY};

/// Mixture samples behind one [`BounceBelief`].
pub const BELIEF_SAMPLES: usize = 256;
/// Shortest flight time a sampled transition may take, s.
const MIN_FLIGHT_TIME: f64 = 1e-4;
/// Attempts per simulated trajectory before giving up.
const MAX_TRIAL_ATTEMPTS: usize = 100;

/// Distribution of launch states for simulated throws on the table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LaunchConfig {
    /// Start position ranges, m.
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub height_range: [f64; 2],
    /// Horizontal speed range, m/s.
    pub speed_range: [f64; 2],
    /// Heading drawn uniformly within `±heading_spread` of `+x`, rad.
    pub heading_spread: f64,
    /// Vertical launch velocity range, m/s (positive is up).
    pub vertical_range: [f64; 2],
}

impl Default for LaunchConfig {
    fn default() -> Self {
        LaunchConfig {
            x_range: [0.0, 0.05],
            y_range: [-0.05, 0.05],
            height_range: [0.25, 0.35],
            speed_range: [0.7, 0.9],
            heading_spread: 0.1,
            vertical_range: [0.0, 0.0],
        }
    }
}

impl LaunchConfig {
    /// Zero horizontal motion from a single height.
    pub fn vertical_drop(height: f64) -> Self {
        LaunchConfig {
            x_range: [0.0, 0.0],
            y_range: [0.0, 0.0],
            height_range: [height, height],
            speed_range: [0.0, 0.0],
            heading_spread: 0.0,
            vertical_range: [0.0, 0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for r in [self.x_range, self.y_range, self.height_range, self.speed_range, self.vertical_range] {
            if !(r[0] <= r[1]) || !r[0].is_finite() || !r[1].is_finite() {
                return Err(invalid("launch ranges must be finite with lower ≤ upper"));
            }
        }
        if !(self.height_range[0] > 0.0) {
            return Err(invalid("launch height must be positive"));
        }
        if !(self.speed_range[0] >= 0.0) || !(self.heading_spread >= 0.0) {
            return Err(invalid("launch speed and heading spread must be non-negative"));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> BallState {
        let mut u = |r: [f64; 2]| if r[1] > r[0] { rng.random_range(r[0]..=r[1]) } else { r[0] };
        let x = u(self.x_range);
        let y = u(self.y_range);
        let h = u(self.height_range);
        let speed = u(self.speed_range);
        let heading = u([-self.heading_spread, self.heading_spread]);
        let vz = u(self.vertical_range);
        BallState {
            position: Vector3::new(x, y, h),
            velocity: Vector3::new(speed * heading.cos(), speed * heading.sin(), vz),
            time: 0.0,
        }
    }
}

/// How transition training data is simulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransitionSimConfig {
    pub launch: LaunchConfig,
    pub n_bounces: usize,
    pub gravity: f64,
    pub collision_mode: CollisionMode,
    /// Per-axis Gaussian noise added to simulated bounce positions before
    /// pairs are extracted, m. Matches the model to noisy observations.
    pub position_noise: f64,
    pub train: TrainConfig,
}

impl Default for TransitionSimConfig {
    fn default() -> Self {
        TransitionSimConfig {
            launch: LaunchConfig::default(),
            n_bounces: 8,
            gravity: STANDARD_GRAVITY,
            collision_mode: CollisionMode::FullSpeed,
            position_noise: 0.0,
            train: TrainConfig::default(),
        }
    }
}

/// A transition density `(t_i, d_i) → (t_next, d_next, α_next)` and the
/// parameter posterior it was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    pub model: MdnModel,
    pub provenance: TruncatedGaussian,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
}

fn default_gravity() -> f64 {
    STANDARD_GRAVITY
}

impl TransitionModel {
    pub fn predict(&self, t_i: f64, d_i: f64) -> Result<MixtureOfGaussians> {
        self.model.forward(&[t_i, d_i])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: TransitionModel = serde_json::from_str(s)?;
        m.model.validate()?;
        if m.model.input_dim != 2 || m.model.output_dim != 3 {
            return Err(invalid("transition model must map 2 inputs to 3 targets"));
        }
        Ok(m)
    }
}

/// Simulates `n_sims` throws with `θ` drawn from the truncated posterior
/// and pools their transition pairs. Simulation `i` owns stream `i`.
pub fn simulate_transition_pairs(
    posterior: &TruncatedGaussian,
    n_sims: usize,
    cfg: &TransitionSimConfig,
    seed: u64,
) -> Result<Vec<TransitionPair>> {
    cfg.launch.validate()?;
    if posterior.gaussian.dim() != 2 {
        return Err(invalid("transition posterior must be over (e, log10 κ)"));
    }
    if cfg.n_bounces < 3 {
        return Err(invalid("transition trajectories need at least 3 bounces"));
    }
    if !(cfg.position_noise >= 0.0) {
        return Err(invalid("position noise must be non-negative"));
    }
    let per_sim: Vec<Result<Vec<TransitionPair>>> = (0..n_sims as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i);
            let mut last = invalid("no attempt made");
            for _ in 0..MAX_TRIAL_ATTEMPTS {
                let theta = posterior.sample(&mut rng);
                let params = SimParams {
                    gravity: cfg.gravity,
                    collision_mode: cfg.collision_mode,
                    ..SimParams::new(theta[0], theta[1])
                };
                let start = cfg.launch.sample(&mut rng);
                match simulate_trajectory(&params, &SurfacePlane::horizontal(), start, cfg.n_bounces, &mut rng)
                    .and_then(|b| {
                        let b: Vec<BounceEvent> =
                            b.iter().map(|ev| jitter_position(ev, cfg.position_noise, &mut rng)).collect();
                        extract_transition_pairs(&b)
                    })
                {
                    Ok(p) => return Ok(p),
                    Err(e) => last = e,
                }
            }
            Err(last)
        })
        .collect();
    let mut pairs = Vec::new();
    for p in per_sim {
        pairs.extend(p?);
    }
    Ok(pairs)
}

pub fn train_transition_model(
    posterior: &TruncatedGaussian,
    n_sims: usize,
    cfg: &TransitionSimConfig,
    seed: u64,
) -> Result<(TransitionModel, TrainReport)> {
    let pairs = simulate_transition_pairs(posterior, n_sims, cfg, seed)?;
    let xs: Vec<Vec<f64>> = pairs.iter().map(|p| p.input().to_vec()).collect();
    let ys: Vec<Vec<f64>> = pairs.iter().map(|p| p.output().to_vec()).collect();
    let (model, report) = train(&xs, &ys, &cfg.train)?;
    Ok((TransitionModel { model, provenance: posterior.clone(), gravity: cfg.gravity }, report))
}

/// Gaussian summary of where and when the next bounce lands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BounceBelief {
    pub mean: Vector2<f64>,
    pub covariance: Matrix2<f64>,
    pub time_mean: f64,
    pub time_variance: f64,
}

/// One sampled transition applied to the last two bounces.
fn step_sample(prev: &BounceEvent, cur: &BounceEvent, draw: &[f64]) -> Result<BounceEvent> {
    let delta = cur.position - prev.position;
    let d_i = delta.norm();
    if !(d_i >= crate::features::DEGENERATE_DISTANCE) {
        return Err(Error::HeadingUndefined);
    }
    let heading = delta / d_i;
    let t = draw[0].max(MIN_FLIGHT_TIME);
    let d = draw[1].max(0.0);
    let next = cur.position + Rotation2::new(draw[2]) * heading * d;
    Ok(BounceEvent { time: cur.time + t, position: next })
}

fn interval(prev: &BounceEvent, cur: &BounceEvent) -> Result<(f64, f64)> {
    let t = cur.time - prev.time;
    if !(t > 0.0) {
        return Err(invalid("bounces must be in time order"));
    }
    let d = (cur.position - prev.position).norm();
    if !(d >= crate::features::DEGENERATE_DISTANCE) {
        return Err(Error::HeadingUndefined);
    }
    Ok((t, d))
}

/// Belief over the next bounce: [`BELIEF_SAMPLES`] draws of `(t, d, α)`
/// pushed through the planar step from `cur` along the rotated heading.
pub fn predict_next_bounce<R: Rng + ?Sized>(
    model: &TransitionModel,
    prev: &BounceEvent,
    cur: &BounceEvent,
    rng: &mut R,
) -> Result<BounceBelief> {
    let (t_i, d_i) = interval(prev, cur)?;
    let mix = model.predict(t_i, d_i)?;
    let samples = mix
        .sample(BELIEF_SAMPLES, rng)
        .iter()
        .map(|d| step_sample(prev, cur, d))
        .collect::<Result<Vec<_>>>()?;
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.position).sum::<Vector2<f64>>() / n;
    let time_mean = samples.iter().map(|s| s.time).sum::<f64>() / n;
    let mut covariance = Matrix2::zeros();
    let mut time_variance = 0.0;
    for s in &samples {
        let r = s.position - mean;
        covariance += r * r.transpose();
        time_variance += (s.time - time_mean).powi(2);
    }
    covariance /= n - 1.0;
    // keep the belief positive definite when every draw coincides
    covariance += Matrix2::identity() * 1e-12;
    time_variance = time_variance / (n - 1.0) + 1e-12;
    Ok(BounceBelief { mean, covariance, time_mean, time_variance })
}

/// A sampled arc crossing the robot plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub y: f64,
    pub z: f64,
    pub t: f64,
    /// Lookahead depth at which the crossing happened (1 = next arc).
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneCrossingSamples {
    pub crossings: Vec<Crossing>,
    /// Sampled bounces generated, crossing or not.
    pub samples_drawn: usize,
}

impl PlaneCrossingSamples {
    pub fn is_empty(&self) -> bool {
        self.crossings.is_empty()
    }

    /// Mean of `(y, z, t)`.
    pub fn mean(&self) -> Option<[f64; 3]> {
        if self.crossings.is_empty() {
            return None;
        }
        let n = self.crossings.len() as f64;
        let s = self.crossings.iter().fold([0.0; 3], |a, c| [a[0] + c.y, a[1] + c.z, a[2] + c.t]);
        Some(s.map(|v| v / n))
    }

    /// Population standard deviation of `(y, z, t)`.
    pub fn std_dev(&self) -> Option<[f64; 3]> {
        let m = self.mean()?;
        let n = self.crossings.len() as f64;
        let s = self.crossings.iter().fold([0.0; 3], |a, c| {
            [a[0] + (c.y - m[0]).powi(2), a[1] + (c.z - m[1]).powi(2), a[2] + (c.t - m[2]).powi(2)]
        });
        Some(s.map(|v| (v / n).sqrt()))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["y", "z", "t", "depth"])?;
        for c in &self.crossings {
            out.write_record([format!("{:.9}", c.y), format!("{:.9}", c.z), format!("{:.9}", c.t), c.depth.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Crossing of the arc `from → to` with the plane `x = plane_x`, if any.
fn arc_crossing(from: &BounceEvent, to: &BounceEvent, plane_x: f64, gravity: f64) -> Option<(f64, f64, f64)> {
    let (x0, x1) = (from.position.x, to.position.x);
    if !(x0 < plane_x && x1 >= plane_x) {
        return None;
    }
    let f = (plane_x - x0) / (x1 - x0);
    let flight = to.time - from.time;
    let y = from.position.y + f * (to.position.y - from.position.y);
    let z = 0.5 * gravity * flight * flight * f * (1.0 - f);
    Some((y, z, from.time + f * flight))
}

/// Recursive ancestral sampling of future bounces. Each node draws `n`
/// next bounces from one model evaluation; arcs that reach the plane are
/// recorded, the rest recurse until depth `k`.
pub fn rollout_to_plane<R: Rng + ?Sized>(
    model: &TransitionModel,
    prev: &BounceEvent,
    cur: &BounceEvent,
    plane_x: f64,
    k: usize,
    n: usize,
    rng: &mut R,
) -> Result<PlaneCrossingSamples> {
    if k == 0 || n == 0 {
        return Err(invalid("lookahead depth and samples per level must be at least 1"));
    }
    let mut out = PlaneCrossingSamples { crossings: Vec::new(), samples_drawn: 0 };
    expand(model, *prev, *cur, plane_x, 1, k, n, rng, &mut out)?;
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn expand<R: Rng + ?Sized>(
    model: &TransitionModel,
    prev: BounceEvent,
    cur: BounceEvent,
    plane_x: f64,
    depth: usize,
    k: usize,
    n: usize,
    rng: &mut R,
    out: &mut PlaneCrossingSamples,
) -> Result<()> {
    let (t_i, d_i) = match interval(&prev, &cur) {
        Ok(v) => v,
        // a sampled zero-length hop has no heading to continue from
        Err(Error::HeadingUndefined) if depth > 1 => return Ok(()),
        Err(e) => return Err(e),
    };
    let mix = model.predict(t_i, d_i)?;
    for draw in mix.sample(n, rng) {
        let next = step_sample(&prev, &cur, &draw)?;
        out.samples_drawn += 1;
        if let Some((y, z, t)) = arc_crossing(&cur, &next, plane_x, model.gravity) {
            out.crossings.push(Crossing { y, z, t, depth });
        } else if depth < k {
            expand(model, cur, next, plane_x, depth + 1, k, n, rng, out)?;
        }
    }
    Ok(())
}

/// Chi-square quantile with two degrees of freedom.
pub fn chi2_2dof_quantile(p: f64) -> f64 {
    -2.0 * (1.0 - p).ln()
}

/// Elliptic-envelope gate. An observation is an outlier when its squared
/// Mahalanobis distance under the belief exceeds the two-dof chi-square
/// quantile at `confidence` (the boundary counts as inlier). Outliers are
/// replaced by the belief mean, keeping the observed time if it lies within
/// 3σ of the predicted time.
pub fn filter_outlier(belief: &BounceBelief, observed: &BounceEvent, confidence: f64) -> Result<(bool, BounceEvent)> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(invalid("confidence must lie in (0, 1)"));
    }
    let inv = belief.covariance.try_inverse().ok_or_else(|| invalid("belief covariance is singular"))?;
    let r = observed.position - belief.mean;
    let d2 = (r.transpose() * inv * r)[(0, 0)];
    let limit = chi2_2dof_quantile(confidence);
    if d2 <= limit * (1.0 + 1e-12) {
        return Ok((false, *observed));
    }
    let time = if (observed.time - belief.time_mean).abs() <= 3.0 * belief.time_variance.sqrt() {
        observed.time
    } else {
        belief.time_mean
    };
    Ok((true, BounceEvent { time, position: belief.mean }))
}

/// Independent Gaussian noise on both position coordinates.
pub fn jitter_position<R: Rng + ?Sized>(ev: &BounceEvent, sigma: f64, rng: &mut R) -> BounceEvent {
    if !(sigma > 0.0) {
        return *ev;
    }
    let n = Normal::new(0.0, sigma).expect("positive sigma");
    BounceEvent { time: ev.time, position: ev.position + Vector2::new(n.sample(rng), n.sample(rng)) }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn belief(var: f64) -> BounceBelief {
        BounceBelief {
            mean: Vector2::new(1.0, 2.0),
            covariance: Matrix2::identity() * var,
            time_mean: 0.5,
            time_variance: 0.01,
        }
    }

    #[test]
    fn filter_cases() {
        let b = belief(0.01);
        let at_mean = BounceEvent::new(0.52, 1.0, 2.0);
        assert_eq!(filter_outlier(&b, &at_mean, 0.975).unwrap(), (false, at_mean));
        let far = BounceEvent::new(0.52, 2.0, 2.0);
        let (out, eff) = filter_outlier(&b, &far, 0.975).unwrap();
        assert!(out);
        assert_eq!(eff.position, b.mean);
        assert_eq!(eff.time, 0.52);
        let late = BounceEvent::new(0.9, 2.0, 2.0);
        assert_eq!(filter_outlier(&b, &late, 0.975).unwrap().1.time, 0.5);
    }

    #[test]
    fn chi_square_boundary_is_inlier() {
        let q = chi2_2dof_quantile(0.975);
        assert!((q - 7.3778).abs() < 1e-4);
        let b = belief(1.0);
        let edge = BounceEvent::new(0.5, 1.0 + q.sqrt(), 2.0);
        assert!(!filter_outlier(&b, &edge, 0.975).unwrap().0);
        let beyond = BounceEvent::new(0.5, 1.0 + q.sqrt() * 1.0001, 2.0);
        assert!(filter_outlier(&b, &beyond, 0.975).unwrap().0);
    }

    #[test]
    fn arc_crossing_geometry() {
        let a = BounceEvent::new(0.0, 0.0, 0.0);
        let b = BounceEvent::new(0.4, 1.0, 0.2);
        let (y, z, t) = arc_crossing(&a, &b, 0.5, 9.81).unwrap();
        assert!((y - 0.1).abs() < 1e-12);
        assert!((t - 0.2).abs() < 1e-12);
        // apex of a 0.4 s flight: g t² / 8
        assert!((z - 9.81 * 0.16 / 8.0).abs() < 1e-12);
        assert!(arc_crossing(&a, &b, 1.5, 9.81).is_none());
    }

    #[test]
    fn coincident_bounces_have_no_heading() {
        let p = BounceEvent::new(0.0, 0.3, 0.3);
        let c = BounceEvent::new(0.4, 0.3, 0.3);
        assert_eq!(interval(&p, &c), Err(Error::HeadingUndefined));
    }
}
