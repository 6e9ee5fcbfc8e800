use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{sample_vmf, BallState, BounceEvent, CollisionMode, SimParams, SurfacePlane};
use crate::error::{invalid, Error, Result};

/// Heights below this magnitude count as "on the plane".
const CONTACT_EPS: f64 = 1e-12;
/// Directional resamples before a sub-surface exit is mirrored instead.
const MAX_SUBSURFACE_RESAMPLES: usize = 64;

/// Ball state at the moment of an impact together with the recorded event.
#[derive(Debug, Clone, Copy)]
pub struct Impact {
    pub state: BallState,
    pub event: BounceEvent,
}

/// Flies the ball until it next meets `plane`.
///
/// The impact time is the smallest positive root of
/// `h(t) = h₀ + (v·n) t + ½ (g·n) t²`; a ball resting on the plane with a
/// separating velocity skips the trivial root at `t = 0`.
pub fn step_to_next_bounce(state: &BallState, plane: &SurfacePlane, gravity: f64) -> Result<Impact> {
    let g = Vector3::new(0.0, 0.0, -gravity);
    let n = plane.unit_normal();
    let h0 = plane.height(&state.position);
    if h0 < -1e-9 {
        return Err(invalid(format!("ball starts {:.3e} m below the plane", -h0)));
    }
    let a = 0.5 * g.dot(n);
    let b = state.velocity.dot(n);
    let dt = if h0.abs() <= CONTACT_EPS {
        if b <= 0.0 {
            return Err(invalid("ball on the plane without separating velocity"));
        }
        if a >= 0.0 {
            return Err(Error::TrajectoryTerminated("ball leaves the plane and never returns".into()));
        }
        -b / a
    } else {
        smallest_positive_root(a, b, h0)
            .ok_or_else(|| Error::TrajectoryTerminated("ballistic arc never meets the plane".into()))?
    };
    let position = plane.project(&state.position_after(dt, &g));
    let velocity = state.velocity + g * dt;
    let time = state.time + dt;
    let event = BounceEvent { time, position: plane.to_plane_coords(&position) };
    Ok(Impact { state: BallState { position, velocity, time }, event })
}

/// Smallest strictly positive root of `a t² + b t + c`.
fn smallest_positive_root(a: f64, b: f64, c: f64) -> Option<f64> {
    if a == 0.0 {
        return if b < 0.0 { Some(-c / b) } else { None };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let mut roots = [q / a, if q != 0.0 { c / q } else { f64::NAN }];
    roots.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Greater));
    roots.into_iter().find(|r| *r > 0.0 && r.is_finite())
}

/// Exit velocity for an incoming velocity `v_in`.
///
/// The unperturbed exit `u₀` is the mirror reflection scaled by `e` (see
/// [`CollisionMode`]); the returned velocity is `‖u₀‖` times a vMF draw
/// centred on `u₀/‖u₀‖`, so speed is untouched by the perturbation. A draw
/// pointing into the surface is redrawn up to 64 times and then mirrored.
pub fn apply_collision<R: Rng + ?Sized>(
    v_in: &Vector3<f64>,
    plane: &SurfacePlane,
    params: &SimParams,
    rng: &mut R,
) -> Result<Vector3<f64>> {
    let n = plane.unit_normal();
    let vn = v_in.dot(n);
    if !(vn < 0.0) {
        return Err(invalid("collision requires an incoming velocity"));
    }
    let e = params.restitution;
    let u0 = match params.collision_mode {
        CollisionMode::FullSpeed => (v_in - n * (2.0 * vn)) * e,
        CollisionMode::NormalOnly => (v_in - n * vn) - n * (e * vn),
    };
    let speed = u0.norm();
    if params.is_deterministic() {
        return Ok(u0);
    }
    let mu = u0 / speed;
    let kappa = params.kappa();
    let mut dir = sample_vmf(&mu, kappa, rng)?;
    for _ in 0..MAX_SUBSURFACE_RESAMPLES {
        if dir.dot(n) > 0.0 {
            return Ok(dir * speed);
        }
        dir = sample_vmf(&mu, kappa, rng)?;
    }
    let dir = if dir.dot(n) > 0.0 { dir } else { dir - n * (2.0 * dir.dot(n)) };
    if dir.dot(n) > 0.0 {
        Ok(dir * speed)
    } else {
        Err(Error::CollisionFailed("exit direction stays tangent to the surface".into()))
    }
}

/// Flies from `initial` through `n_bounces` impacts on `plane`.
pub fn simulate_trajectory<R: Rng + ?Sized>(
    params: &SimParams,
    plane: &SurfacePlane,
    initial: BallState,
    n_bounces: usize,
    rng: &mut R,
) -> Result<Vec<BounceEvent>> {
    params.validate()?;
    let mut events = Vec::with_capacity(n_bounces);
    let mut state = initial;
    for _ in 0..n_bounces {
        let impact = step_to_next_bounce(&state, plane, params.gravity)?;
        events.push(impact.event);
        let v = apply_collision(&impact.state.velocity, plane, params, rng)?;
        state = BallState { velocity: v, ..impact.state };
    }
    Ok(events)
}

/// Drops the ball from `drop_height` above the table origin with an initial
/// velocity drawn from an isotropic Gaussian `N(0, σ²I)` and records the
/// first `n_bounces` impacts.
pub fn simulate_drop<R: Rng + ?Sized>(
    params: &SimParams,
    drop_height: f64,
    init_velocity_sigma: f64,
    n_bounces: usize,
    rng: &mut R,
) -> Result<Vec<BounceEvent>> {
    if n_bounces < 3 {
        return Err(invalid(format!("a drop needs at least 3 bounces, asked for {n_bounces}")));
    }
    if !(drop_height > 0.0) {
        return Err(invalid(format!("drop height must be positive, got {drop_height}")));
    }
    if !(init_velocity_sigma >= 0.0) {
        return Err(invalid("initial velocity sigma must be non-negative"));
    }
    let velocity = if init_velocity_sigma > 0.0 {
        let normal = Normal::new(0.0, init_velocity_sigma).map_err(|e| invalid(e.to_string()))?;
        Vector3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng))
    } else {
        Vector3::zeros()
    };
    let initial = BallState::new(Vector3::new(0.0, 0.0, drop_height), velocity, 0.0)?;
    simulate_trajectory(params, &SurfacePlane::horizontal(), initial, n_bounces, rng)
}
