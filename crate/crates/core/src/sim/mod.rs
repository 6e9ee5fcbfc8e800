//! Event-driven simulation of a ball bouncing on a plane.
//!
//! Flight between impacts is pure ballistics and is solved in closed form;
//! each impact scales the reflected velocity by the restitution `e` and
//! perturbs its direction with a von Mises-Fisher draw of concentration κ.

mod flight;
mod vmf;

pub use flight::{apply_collision, simulate_drop, simulate_trajectory, step_to_next_bounce, Impact};
pub use vmf::{mean_resultant_length, sample_vmf};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Standard gravity, m/s².
pub const STANDARD_GRAVITY: f64 = 9.81;

/// Concentrations at or above `10^DETERMINISTIC_LOG10_KAPPA` are treated as
/// the κ → ∞ limit: collisions become exact mirror reflections.
pub const DETERMINISTIC_LOG10_KAPPA: f64 = 8.0;

/// How restitution enters the exit velocity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CollisionMode {
    /// `u₀ = e · reflect(v)`: the whole exit speed is scaled, so
    /// `‖u₀‖ = e‖v‖` exactly.
    #[default]
    FullSpeed,
    /// Only the normal component is scaled; tangential velocity is kept.
    NormalOnly,
}

/// Simulator parameters. The inferred pair is `(restitution, log10_kappa)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub restitution: f64,
    pub log10_kappa: f64,
    pub gravity: f64,
    pub ball_radius: f64,
    pub ball_mass: f64,
    #[serde(default)]
    pub collision_mode: CollisionMode,
}

impl SimParams {
    pub fn new(restitution: f64, log10_kappa: f64) -> Self {
        SimParams {
            restitution,
            log10_kappa,
            gravity: STANDARD_GRAVITY,
            ball_radius: 0.02,
            ball_mass: 0.0027,
            collision_mode: CollisionMode::FullSpeed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.restitution > 0.0 && self.restitution < 1.0) {
            return Err(invalid(format!("restitution must lie in (0, 1), got {}", self.restitution)));
        }
        if !self.log10_kappa.is_finite() {
            return Err(invalid("log10_kappa must be finite"));
        }
        if !(self.gravity > 0.0) || !self.gravity.is_finite() {
            return Err(invalid(format!("gravity must be positive, got {}", self.gravity)));
        }
        if !(self.ball_radius >= 0.0) {
            return Err(invalid(format!("ball radius must be non-negative, got {}", self.ball_radius)));
        }
        Ok(())
    }

    pub fn kappa(&self) -> f64 {
        10f64.powf(self.log10_kappa)
    }

    /// True when collisions are treated as noiseless.
    pub fn is_deterministic(&self) -> bool {
        self.log10_kappa >= DETERMINISTIC_LOG10_KAPPA
    }

    pub fn gravity_vector(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, -self.gravity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub time: f64,
}

impl BallState {
    pub fn new(position: Vector3<f64>, velocity: Vector3<f64>, time: f64) -> Result<Self> {
        if !position.iter().chain(velocity.iter()).all(|c| c.is_finite()) || !time.is_finite() {
            return Err(invalid("ball state must be finite"));
        }
        Ok(BallState { position, velocity, time })
    }

    /// Position after flying for `dt` under gravity `g`.
    pub fn position_after(&self, dt: f64, g: &Vector3<f64>) -> Vector3<f64> {
        self.position + self.velocity * dt + g * (0.5 * dt * dt)
    }
}

/// An infinite plane the ball bounces on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePlane {
    point: Vector3<f64>,
    unit_normal: Vector3<f64>,
}

impl SurfacePlane {
    pub fn new(point: Vector3<f64>, normal: Vector3<f64>) -> Result<Self> {
        let n = normal.norm();
        if !(n > 0.0) || !n.is_finite() || !point.iter().all(|c| c.is_finite()) {
            return Err(invalid("surface normal must be nonzero and finite"));
        }
        Ok(SurfacePlane { point, unit_normal: normal / n })
    }

    /// The table, `z = 0`.
    pub fn horizontal() -> Self {
        SurfacePlane { point: Vector3::zeros(), unit_normal: Vector3::z() }
    }

    /// A plane through the origin tilted by `angle` radians about the y axis,
    /// descending toward `+x`.
    pub fn inclined(angle: f64) -> Self {
        SurfacePlane {
            point: Vector3::zeros(),
            unit_normal: Vector3::new(angle.sin(), 0.0, angle.cos()),
        }
    }

    pub fn point(&self) -> &Vector3<f64> {
        &self.point
    }

    pub fn unit_normal(&self) -> &Vector3<f64> {
        &self.unit_normal
    }

    /// Signed height of `p` above the plane.
    pub fn height(&self, p: &Vector3<f64>) -> f64 {
        (p - self.point).dot(&self.unit_normal)
    }

    /// In-plane axes. For the horizontal plane these are `+x` and `+y`.
    pub fn basis(&self) -> (Vector3<f64>, Vector3<f64>) {
        let n = self.unit_normal;
        let mut u1 = Vector3::x() - n * n.x;
        if u1.norm() < 1e-6 {
            u1 = Vector3::y() - n * n.y;
        }
        let u1 = u1.normalize();
        let u2 = n.cross(&u1);
        (u1, u2)
    }

    /// Coordinates of `p` projected into the plane basis.
    pub fn to_plane_coords(&self, p: &Vector3<f64>) -> Vector2<f64> {
        let (u1, u2) = self.basis();
        let d = p - self.point;
        Vector2::new(d.dot(&u1), d.dot(&u2))
    }

    pub fn project(&self, p: &Vector3<f64>) -> Vector3<f64> {
        p - self.unit_normal * self.height(p)
    }
}

/// One ball-surface collision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BounceEvent {
    pub time: f64,
    /// Impact point in surface-plane coordinates, m.
    pub position: Vector2<f64>,
}

impl BounceEvent {
    pub fn new(time: f64, x: f64, y: f64) -> Self {
        BounceEvent { time, position: Vector2::new(x, y) }
    }
}
