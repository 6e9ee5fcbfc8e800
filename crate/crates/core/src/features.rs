//! Observation features computed from bounce sequences.
//!
//! All values are in physical units; standardisation happens inside the
//! density model.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::sim::BounceEvent;

/// Displacements shorter than this leave the turn angle undefined; the
/// angle is then reported as 0.
pub const DEGENERATE_DISTANCE: f64 = 1e-9;

/// `[t₂/t₁, d₁, d₂, α]` from the first three bounces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub t_ratio: f64,
    pub d1: f64,
    pub d2: f64,
    pub alpha: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; 4] {
        [self.t_ratio, self.d1, self.d2, self.alpha]
    }

    pub fn select(&self, subset: FeatureSubset) -> Vec<f64> {
        let all = self.to_array();
        subset.columns().iter().map(|&i| all[i]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Feature groups used by the ablation: timing only, position only, or both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubset {
    Time,
    Position,
    All,
}

impl FeatureSubset {
    pub fn columns(&self) -> &'static [usize] {
        match self {
            FeatureSubset::Time => &[0],
            FeatureSubset::Position => &[1, 2, 3],
            FeatureSubset::All => &[0, 1, 2, 3],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FeatureSubset::Time => "time",
            FeatureSubset::Position => "position",
            FeatureSubset::All => "both",
        }
    }
}

/// One step of the bounce-to-bounce transition: `(t_i, d_i) → (t_{i+1}, d_{i+1}, α_{i+1})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionPair {
    pub t_in: f64,
    pub d_in: f64,
    pub t_next: f64,
    pub d_next: f64,
    pub alpha_next: f64,
}

impl TransitionPair {
    pub fn input(&self) -> [f64; 2] {
        [self.t_in, self.d_in]
    }

    pub fn output(&self) -> [f64; 3] {
        [self.t_next, self.d_next, self.alpha_next]
    }
}

/// Signed angle from `v1` to `v2` in `(−π, π]`: magnitude from the
/// normalised dot product, sign from the 2-D cross product. Anti-parallel
/// vectors give `+π`.
pub fn signed_angle(v1: &Vector2<f64>, v2: &Vector2<f64>) -> Result<f64> {
    let n1 = v1.norm();
    let n2 = v2.norm();
    if !(n1 > 0.0) || !(n2 > 0.0) {
        return Err(invalid("signed angle of a zero-length vector"));
    }
    let cos = (v1.dot(v2) / (n1 * n2)).clamp(-1.0, 1.0);
    let cross = v1.x * v2.y - v2.x * v1.y;
    let sign = if cross < 0.0 { -1.0 } else { 1.0 };
    Ok(sign * cos.acos())
}

/// Turn angle between successive displacements, 0 when either is degenerate.
pub(crate) fn turn_angle(p1: &Vector2<f64>, p2: &Vector2<f64>) -> f64 {
    if p1.norm() < DEGENERATE_DISTANCE || p2.norm() < DEGENERATE_DISTANCE {
        0.0
    } else {
        signed_angle(p1, p2).unwrap_or(0.0)
    }
}

fn check_times(bounces: &[BounceEvent]) -> Result<()> {
    if bounces.len() < 3 {
        return Err(Error::InsufficientObservations { needed: 3, got: bounces.len() });
    }
    for w in bounces.windows(2) {
        if !(w[1].time > w[0].time) {
            return Err(invalid("bounce times must be strictly increasing"));
        }
    }
    if bounces.iter().any(|b| !b.position.iter().all(|c| c.is_finite())) {
        return Err(invalid("bounce positions must be finite"));
    }
    Ok(())
}

/// Feature vector of the first three bounces.
pub fn extract_features(bounces: &[BounceEvent]) -> Result<FeatureVector> {
    check_times(bounces)?;
    let t1 = bounces[1].time - bounces[0].time;
    let t2 = bounces[2].time - bounces[1].time;
    let p1 = bounces[1].position - bounces[0].position;
    let p2 = bounces[2].position - bounces[1].position;
    Ok(FeatureVector { t_ratio: t2 / t1, d1: p1.norm(), d2: p2.norm(), alpha: turn_angle(&p1, &p2) })
}

/// One transition pair per consecutive bounce triple.
pub fn extract_transition_pairs(bounces: &[BounceEvent]) -> Result<Vec<TransitionPair>> {
    check_times(bounces)?;
    Ok(bounces
        .windows(3)
        .map(|w| {
            let p_in = w[1].position - w[0].position;
            let p_out = w[2].position - w[1].position;
            TransitionPair {
                t_in: w[1].time - w[0].time,
                d_in: p_in.norm(),
                t_next: w[2].time - w[1].time,
                d_next: p_out.norm(),
                alpha_next: turn_angle(&p_in, &p_out),
            }
        })
        .collect())
}
