//! Source position from two time differences of arrival.

use nalgebra::{Matrix2, Vector2, Vector3};

use super::{MicArray, TimeDelays};
use crate::error::{invalid, Error, Result};

pub const LOCALIZE_MAX_ITERATIONS: usize = 100;
/// Residual norm treated as an exact fit, m.
const CONVERGED_RESIDUAL: f64 = 1e-9;
/// Largest residual accepted when iteration stalls, m.
const STALLED_RESIDUAL: f64 = 1e-3;

fn on_table(s: &Vector2<f64>) -> Vector3<f64> {
    Vector3::new(s.x, s.y, 0.0)
}

/// Exact delays for a source on the table plane.
pub fn forward_delays(source: &Vector2<f64>, array: &MicArray, v_sound: f64) -> TimeDelays {
    let s = on_table(source);
    let [a, b, c] = array.positions.map(|m| (s - m).norm());
    TimeDelays { phi_ab: (a - b) / v_sound, phi_ac: (a - c) / v_sound }
}

fn residuals(s: &Vector2<f64>, d: &TimeDelays, array: &MicArray, v: f64) -> (Vector2<f64>, Matrix2<f64>) {
    let p = on_table(s);
    let diff = array.positions.map(|m| p - m);
    let dist = diff.map(|x| x.norm().max(1e-12));
    let unit = [0, 1, 2].map(|i| (diff[i] / dist[i]).xy());
    let r = Vector2::new(v * d.phi_ab - (dist[0] - dist[1]), v * d.phi_ac - (dist[0] - dist[2]));
    let j1 = -(unit[0] - unit[1]);
    let j2 = -(unit[0] - unit[2]);
    (r, Matrix2::new(j1.x, j1.y, j2.x, j2.y))
}

/// Table-plane point whose hyperbolic range differences match `delays`.
/// Levenberg-Marquardt from the microphone centroid.
pub fn localize(delays: &TimeDelays, array: &MicArray, v_sound: f64) -> Result<Vector2<f64>> {
    if !delays.phi_ab.is_finite() || !delays.phi_ac.is_finite() {
        return Err(invalid("delays must be finite"));
    }
    if !(v_sound > 0.0) {
        return Err(invalid("speed of sound must be positive"));
    }
    let mut s = array.centroid();
    let (mut r, mut jac) = residuals(&s, delays, array, v_sound);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut iterations = 0;
    while iterations < LOCALIZE_MAX_ITERATIONS && r.norm() >= CONVERGED_RESIDUAL {
        iterations += 1;
        let jtj = jac.transpose() * jac;
        let g = jac.transpose() * r;
        let damped = jtj + Matrix2::from_diagonal(&jtj.diagonal()) * lambda + Matrix2::identity() * 1e-15;
        let Some(step) = damped.try_inverse().map(|m| -(m * g)) else { break };
        let cand = s + step;
        let (rc, jc) = residuals(&cand, delays, array, v_sound);
        if rc.norm_squared() < cost {
            s = cand;
            r = rc;
            jac = jc;
            cost = r.norm_squared();
            lambda = (lambda * 0.1).max(1e-12);
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    let residual = r.norm();
    if residual < STALLED_RESIDUAL {
        Ok(s)
    } else {
        Err(Error::LocalizationFailed { iterations, residual })
    }
}
