//! Diagonal-covariance Gaussian mixtures and single-Gaussian algebra.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;
use std::f64::consts::SQRT_2;

use crate::error::{invalid, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const WEIGHT_TOL: f64 = 1e-9;

/// Axis-aligned box `[lower_d, upper_d]` per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(invalid("bounds need matching, nonempty lower/upper"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite()) {
            return Err(invalid("bounds must be finite with lower <= upper"));
        }
        Ok(Bounds { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *u);
        }
    }

    pub fn slice(&self, dims: &[usize]) -> Bounds {
        Bounds {
            lower: dims.iter().map(|&d| self.lower[d]).collect(),
            upper: dims.iter().map(|&d| self.upper[d]).collect(),
        }
    }
}

/// Diagonal Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianD {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl GaussianD {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if mean.len() != variance.len() || mean.is_empty() {
            return Err(invalid("gaussian mean/variance dimension mismatch"));
        }
        if variance.iter().any(|v| !(*v > 0.0) || !v.is_finite()) || mean.iter().any(|m| !m.is_finite()) {
            return Err(invalid("gaussian needs finite mean and positive variance"));
        }
        Ok(GaussianD { mean, variance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        diag_log_density(x, &self.mean, &self.variance)
    }

    pub fn std_dev(&self) -> Vec<f64> {
        self.variance.iter().map(|v| v.sqrt()).collect()
    }

    /// Squared Mahalanobis distance of `x`.
    pub fn mahalanobis_sq(&self, x: &[f64]) -> f64 {
        x.iter().zip(self.mean.iter().zip(&self.variance)).map(|(x, (m, v))| (x - m).powi(2) / v).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.variance)
            .map(|(m, v)| {
                let z: f64 = StandardNormal.sample(rng);
                m + v.sqrt() * z
            })
            .collect()
    }

    /// Draw restricted to `bounds` by rejection; after 1000 misses the draw
    /// is clamped into the box.
    pub fn sample_truncated<R: Rng + ?Sized>(&self, bounds: &Bounds, rng: &mut R) -> Vec<f64> {
        let mut x = self.sample(rng);
        for _ in 0..1000 {
            if bounds.contains(&x) {
                return x;
            }
            x = self.sample(rng);
        }
        bounds.clamp(&mut x);
        x
    }

    /// Mode of the density restricted to `bounds`.
    pub fn truncated_mode(&self, bounds: &Bounds) -> Vec<f64> {
        let mut m = self.mean.clone();
        bounds.clamp(&mut m);
        m
    }

    pub fn mass_in(&self, bounds: &Bounds) -> f64 {
        diag_box_mass(&self.mean, &self.variance, bounds)
    }
}

pub(crate) fn diag_log_density(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let mut s = 0.0;
    for ((x, m), v) in x.iter().zip(mean).zip(var) {
        s -= 0.5 * (LN_2PI + v.ln() + (x - m) * (x - m) / v);
    }
    s
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / SQRT_2))
}

fn diag_box_mass(mean: &[f64], var: &[f64], bounds: &Bounds) -> f64 {
    mean.iter()
        .zip(var)
        .enumerate()
        .map(|(d, (m, v))| {
            let s = v.sqrt();
            normal_cdf((bounds.upper[d] - m) / s) - normal_cdf((bounds.lower[d] - m) / s)
        })
        .product()
}

/// Weighted sum of diagonal Gaussians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureOfGaussians {
    pub weights: Vec<f64>,
    /// `K × D`, one row per component.
    pub means: Vec<Vec<f64>>,
    /// `K × D` diagonal variances.
    pub variances: Vec<Vec<f64>>,
}

impl MixtureOfGaussians {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let m = MixtureOfGaussians { weights, means, variances };
        m.validate()?;
        Ok(m)
    }

    pub fn from_gaussian(g: &GaussianD) -> Self {
        MixtureOfGaussians { weights: vec![1.0], means: vec![g.mean.clone()], variances: vec![g.variance.clone()] }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.variances.len() != k {
            return Err(invalid("mixture needs K >= 1 with matching means/variances"));
        }
        let d = self.means[0].len();
        if d == 0 || self.means.iter().chain(&self.variances).any(|r| r.len() != d) {
            return Err(invalid("mixture component dimensions disagree"));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) || (self.weights.iter().sum::<f64>() - 1.0).abs() > WEIGHT_TOL {
            return Err(invalid("mixture weights must be a probability vector"));
        }
        if self.variances.iter().flatten().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(invalid("mixture variances must be positive"));
        }
        if self.means.iter().flatten().any(|m| !m.is_finite()) {
            return Err(invalid("mixture means must be finite"));
        }
        Ok(())
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> = (0..self.n_components())
            .filter(|&k| self.weights[k] > 0.0)
            .map(|k| self.weights[k].ln() + diag_log_density(x, &self.means[k], &self.variances[k]))
            .collect();
        log_sum_exp(&terms)
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.log_density(x).exp()
    }

    /// Marginal over the listed dimensions.
    pub fn marginal(&self, dims: &[usize]) -> MixtureOfGaussians {
        MixtureOfGaussians {
            weights: self.weights.clone(),
            means: self.means.iter().map(|m| dims.iter().map(|&d| m[d]).collect()).collect(),
            variances: self.variances.iter().map(|v| dims.iter().map(|&d| v[d]).collect()).collect(),
        }
    }

    /// Probability mass of the mixture inside `bounds`.
    pub fn mass_in(&self, bounds: &Bounds) -> f64 {
        (0..self.n_components()).map(|k| self.weights[k] * diag_box_mass(&self.means[k], &self.variances[k], bounds)).sum()
    }

    /// Mixture restricted to `bounds`: each component's weight is rescaled by
    /// its in-box mass. Components entirely outside the box keep a zero
    /// weight. Falls back to the original weights if no mass is inside.
    pub fn truncation_weights(&self, bounds: &Bounds) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.n_components())
            .map(|k| self.weights[k] * diag_box_mass(&self.means[k], &self.variances[k], bounds))
            .collect();
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            raw.iter().map(|w| w / total).collect()
        } else {
            self.weights.clone()
        }
    }

    /// Ancestral draws: a component by weight, then its Gaussian.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = self.n_components() - 1;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                chosen = k;
                break;
            }
        }
        self.means[chosen]
            .iter()
            .zip(&self.variances[chosen])
            .map(|(m, v)| {
                let z: f64 = StandardNormal.sample(rng);
                m + v.sqrt() * z
            })
            .collect()
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Moment-matched single Gaussian: `mean = Σ w μ`,
/// `var = Σ w (σ² + μ²) − mean²` per dimension.
pub fn project_to_gaussian(m: &MixtureOfGaussians) -> GaussianD {
    let d = m.dim();
    let mut mean = vec![0.0; d];
    for k in 0..m.n_components() {
        let w = m.weights[k];
        for j in 0..d {
            mean[j] += w * m.means[k][j];
        }
    }
    // Σ w (σ² + (μ − mean)²), the same quantity without the cancellation.
    let mut variance = vec![0.0; d];
    for k in 0..m.n_components() {
        let w = m.weights[k];
        for j in 0..d {
            let dm = m.means[k][j] - mean[j];
            variance[j] += w * (m.variances[k][j] + dm * dm);
        }
    }
    GaussianD { mean, variance }
}

/// Product of diagonal Gaussians, renormalised: precisions add and the mean
/// is the precision-weighted average.
pub fn multiply_gaussians(factors: &[GaussianD]) -> Result<GaussianD> {
    let first = factors.first().ok_or_else(|| invalid("cannot multiply an empty list of gaussians"))?;
    let d = first.dim();
    if factors.iter().any(|g| g.dim() != d) {
        return Err(invalid("gaussian factors differ in dimension"));
    }
    let mut precision = vec![0.0; d];
    let mut weighted = vec![0.0; d];
    for g in factors {
        for j in 0..d {
            precision[j] += 1.0 / g.variance[j];
            weighted[j] += g.mean[j] / g.variance[j];
        }
    }
    let variance: Vec<f64> = precision.iter().map(|p| 1.0 / p).collect();
    let mean = weighted.iter().zip(&variance).map(|(w, v)| w * v).collect();
    Ok(GaussianD { mean, variance })
}

/// Number of grid points per dimension for the mode scan.
pub const MODE_GRID_POINTS: usize = 201;

/// Highest-density point inside `bounds`: a dense grid scan followed by a
/// shrinking pattern search from the best grid node.
pub fn mixture_mode(m: &MixtureOfGaussians, bounds: &Bounds) -> Result<Vec<f64>> {
    let d = m.dim();
    if bounds.dim() != d {
        return Err(invalid("mode search box dimension mismatch"));
    }
    let points = if d <= 2 { MODE_GRID_POINTS } else { 31 };
    let steps: Vec<f64> = (0..d).map(|j| (bounds.upper[j] - bounds.lower[j]) / (points - 1) as f64).collect();
    let mut best = bounds.lower.clone();
    let mut best_val = f64::NEG_INFINITY;
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0; d];
    loop {
        for j in 0..d {
            x[j] = bounds.lower[j] + steps[j] * idx[j] as f64;
        }
        let v = m.log_density(&x);
        if v > best_val {
            best_val = v;
            best.copy_from_slice(&x);
        }
        let mut j = 0;
        loop {
            idx[j] += 1;
            if idx[j] < points {
                break;
            }
            idx[j] = 0;
            j += 1;
            if j == d {
                break;
            }
        }
        if j == d {
            break;
        }
    }

    let mut step = steps.clone();
    let floor: Vec<f64> = (0..d).map(|j| 1e-10 * (bounds.upper[j] - bounds.lower[j]).max(1e-300)).collect();
    while step.iter().zip(&floor).any(|(s, f)| s > f) {
        let mut improved = false;
        for j in 0..d {
            for dir in [-1.0, 1.0] {
                let mut cand = best.clone();
                cand[j] = (cand[j] + dir * step[j]).clamp(bounds.lower[j], bounds.upper[j]);
                let v = m.log_density(&cand);
                if v > best_val {
                    best_val = v;
                    best = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            for s in step.iter_mut() {
                *s *= 0.5;
            }
        }
    }
    Ok(best)
}
