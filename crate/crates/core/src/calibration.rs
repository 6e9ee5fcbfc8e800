//! Likelihood-free calibration of `θ = (e, log10 κ)` from drop observations.
//!
//! A conditional density `q(θ | X)` is fitted to simulated `(θ, X)` pairs
//! drawn from a uniform prior box. Under a uniform prior the fitted density,
//! truncated to the box, is the posterior.

use nalgebra::Vector2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::io::Write;

use crate::error::{invalid, Result};
use crate::features::{extract_features, FeatureSubset, FeatureVector};
use crate::mdn::{
    mixture_mode, multiply_gaussians, project_to_gaussian, train, Bounds, GaussianD, MdnModel, MixtureOfGaussians,
    TrainConfig, TrainReport,
};
use crate::rng::{derive_seed, stream};
use crate::sim::{simulate_drop, BounceEvent, CollisionMode, SimParams, STANDARD_GRAVITY};

/// Index of `e` and `log10 κ` in a parameter vector.
pub const E: usize = 0;
pub const LOG10_KAPPA: usize = 1;

/// Attempts per trial before dataset generation gives up.
const MAX_TRIAL_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorBox {
    pub e_range: [f64; 2],
    pub log10_kappa_range: [f64; 2],
}

impl Default for PriorBox {
    fn default() -> Self {
        PriorBox { e_range: [0.55, 0.95], log10_kappa_range: [1.0, 5.0] }
    }
}

impl PriorBox {
    /// A box with `lower ≤ upper` on both axes. Equal ends give a point prior.
    pub fn new(e_range: [f64; 2], log10_kappa_range: [f64; 2]) -> Result<Self> {
        let b = PriorBox { e_range, log10_kappa_range };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let [e0, e1] = self.e_range;
        let [k0, k1] = self.log10_kappa_range;
        if !(e0 <= e1 && k0 <= k1) || ![e0, e1, k0, k1].iter().all(|v| v.is_finite()) {
            return Err(invalid("prior ranges must be finite with lower ≤ upper"));
        }
        if !(e0 > 0.0 && e1 < 1.0) {
            return Err(invalid("restitution range must lie inside (0, 1)"));
        }
        Ok(())
    }

    pub fn bounds(&self) -> Bounds {
        Bounds {
            lower: vec![self.e_range[0], self.log10_kappa_range[0]],
            upper: vec![self.e_range[1], self.log10_kappa_range[1]],
        }
    }

    pub fn contains(&self, theta: &[f64; 2]) -> bool {
        self.bounds().contains(theta)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let u = |r: [f64; 2], rng: &mut R| r[0] + (r[1] - r[0]) * rng.random::<f64>();
        let e = u(self.e_range, rng);
        let k = u(self.log10_kappa_range, rng);
        [e, k]
    }
}

/// How one calibration drop is simulated and observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DropConfig {
    pub drop_height: f64,
    pub init_velocity_sigma: f64,
    pub n_bounces: usize,
    /// Isotropic Gaussian error added to each observed bounce position, m.
    pub position_noise_sigma: f64,
    pub gravity: f64,
    pub collision_mode: CollisionMode,
}

impl Default for DropConfig {
    fn default() -> Self {
        DropConfig {
            drop_height: 0.26,
            init_velocity_sigma: 0.01,
            n_bounces: 3,
            position_noise_sigma: 0.0,
            gravity: STANDARD_GRAVITY,
            collision_mode: CollisionMode::FullSpeed,
        }
    }
}

/// Localization error of the offline acoustic pipeline, m. Stands in for
/// the measurement noise on "real" drops observed by the held-out simulator.
pub const HELD_OUT_POSITION_NOISE: f64 = 0.0067;

impl DropConfig {
    /// Drops as seen through the acoustic localizer.
    pub fn held_out() -> Self {
        DropConfig { position_noise_sigma: HELD_OUT_POSITION_NOISE, ..DropConfig::default() }
    }

    pub fn params(&self, theta: &[f64; 2]) -> SimParams {
        SimParams {
            gravity: self.gravity,
            collision_mode: self.collision_mode,
            ..SimParams::new(theta[E], theta[LOG10_KAPPA])
        }
    }
}

/// Simulates one drop at `theta` and returns its observed bounces, with
/// position noise applied.
pub fn observe_drop<R: Rng + ?Sized>(theta: &[f64; 2], cfg: &DropConfig, rng: &mut R) -> Result<Vec<BounceEvent>> {
    let mut events = simulate_drop(&cfg.params(theta), cfg.drop_height, cfg.init_velocity_sigma, cfg.n_bounces, rng)?;
    if cfg.position_noise_sigma > 0.0 {
        let noise = Normal::new(0.0, cfg.position_noise_sigma).map_err(|e| invalid(e.to_string()))?;
        for ev in &mut events {
            ev.position += Vector2::new(noise.sample(rng), noise.sample(rng));
        }
    }
    Ok(events)
}

/// Feature vector of one simulated drop.
pub fn simulate_observation<R: Rng + ?Sized>(theta: &[f64; 2], cfg: &DropConfig, rng: &mut R) -> Result<FeatureVector> {
    extract_features(&observe_drop(theta, cfg, rng)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub theta: [f64; 2],
    pub features: FeatureVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationDataset {
    pub samples: Vec<CalibrationSample>,
    pub prior: PriorBox,
    pub config: DropConfig,
    pub seed: u64,
    /// Trials whose first draw failed and were redrawn.
    pub resampled: usize,
}

impl CalibrationDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn inputs(&self, subset: FeatureSubset) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.features.select(subset)).collect()
    }

    pub fn targets(&self, dims: &[usize]) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| dims.iter().map(|&d| s.theta[d]).collect()).collect()
    }

    /// Writes `e, log10_kappa, t_ratio, d1, d2, alpha` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["e", "log10_kappa", "t_ratio", "d1", "d2", "alpha"])?;
        for s in &self.samples {
            let f = s.features.to_array();
            out.write_record(
                [s.theta[0], s.theta[1], f[0], f[1], f[2], f[3]].iter().map(|v| format!("{v:.12e}")),
            )?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Draws `n` parameter vectors uniformly from `prior` and simulates one drop
/// for each. Trial `i` owns stream `i` of `seed`; a trial that fails is
/// redrawn from its own stream, so the result is independent of scheduling.
pub fn generate_dataset(prior: &PriorBox, n: usize, cfg: &DropConfig, seed: u64) -> Result<CalibrationDataset> {
    prior.validate()?;
    if n == 0 {
        return Err(invalid("dataset size must be at least 1"));
    }
    let trials: Vec<Result<(CalibrationSample, usize)>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i);
            let mut last_err = None;
            for attempt in 0..MAX_TRIAL_ATTEMPTS {
                let theta = prior.sample(&mut rng);
                match simulate_observation(&theta, cfg, &mut rng) {
                    Ok(f) if f.is_finite() => return Ok((CalibrationSample { theta, features: f }, attempt)),
                    Ok(_) => last_err = Some(invalid("non-finite features")),
                    Err(e) => last_err = Some(e),
                }
            }
            Err(last_err.unwrap_or_else(|| invalid("trial failed")))
        })
        .collect();
    let mut samples = Vec::with_capacity(n);
    let mut resampled = 0;
    for t in trials {
        let (s, attempts) = t?;
        resampled += attempts;
        samples.push(s);
    }
    Ok(CalibrationDataset { samples, prior: *prior, config: cfg.clone(), seed, resampled })
}

/// A conditional density over a subset of `θ` given a subset of features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub features: FeatureSubset,
    /// Indices into `θ` (`E`, `LOG10_KAPPA`) that the model predicts.
    pub targets: Vec<usize>,
    pub model: MdnModel,
}

impl CalibrationModel {
    pub fn fit(
        data: &CalibrationDataset,
        features: FeatureSubset,
        targets: &[usize],
        cfg: &TrainConfig,
    ) -> Result<(Self, TrainReport)> {
        if targets.is_empty() || targets.iter().any(|&t| t > LOG10_KAPPA) {
            return Err(invalid("targets must be a nonempty subset of {e, log10_kappa}"));
        }
        let (model, report) = train(&data.inputs(features), &data.targets(targets), cfg)?;
        Ok((CalibrationModel { features, targets: targets.to_vec(), model }, report))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: CalibrationModel = serde_json::from_str(s)?;
        m.model.validate()?;
        if m.model.input_dim != m.features.columns().len() || m.model.output_dim != m.targets.len() {
            return Err(invalid("calibration model dimensions do not match its feature/target lists"));
        }
        Ok(m)
    }
}

/// `q(θ | x)` restricted to the prior box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    /// The untruncated network output.
    pub mixture: MixtureOfGaussians,
    pub bounds: Bounds,
    pub targets: Vec<usize>,
    /// The observation lies outside the feature range seen in training.
    pub extrapolated: bool,
}

impl Posterior {
    /// Highest-density point inside the box.
    pub fn mode(&self) -> Result<Vec<f64>> {
        mixture_mode(&self.mixture, &self.bounds)
    }

    /// Mode of the one-dimensional marginal along position `dim`.
    pub fn marginal_mode(&self, dim: usize) -> Result<f64> {
        Ok(mixture_mode(&self.mixture.marginal(&[dim]), &self.bounds.slice(&[dim]))?[0])
    }

    /// Probability mass of the untruncated mixture inside the box.
    pub fn mass_in_box(&self) -> f64 {
        self.mixture.mass_in(&self.bounds)
    }

    /// Moment-matched Gaussian of the untruncated mixture.
    pub fn projected(&self) -> GaussianD {
        project_to_gaussian(&self.mixture)
    }

    /// Draws from the truncated posterior by rejection. Falls back to
    /// clamping after 1000 rejections per draw.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                for _ in 0..1000 {
                    let x = self.mixture.sample_one(rng);
                    if self.bounds.contains(&x) {
                        return x;
                    }
                }
                let mut x = self.mixture.sample_one(rng);
                self.bounds.clamp(&mut x);
                x
            })
            .collect()
    }
}

pub fn posterior_from_observation(
    model: &CalibrationModel,
    x_obs: &FeatureVector,
    prior: &PriorBox,
) -> Result<Posterior> {
    let x = x_obs.select(model.features);
    let mixture = model.model.forward(&x)?;
    Ok(Posterior {
        mixture,
        bounds: prior.bounds().slice(&model.targets),
        targets: model.targets.clone(),
        extrapolated: model.model.is_extrapolating(&x),
    })
}

/// A Gaussian restricted to a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedGaussian {
    pub gaussian: GaussianD,
    pub bounds: Bounds,
}

impl TruncatedGaussian {
    pub fn mode(&self) -> Vec<f64> {
        self.gaussian.truncated_mode(&self.bounds)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.gaussian.sample_truncated(&self.bounds, rng)
    }
}

/// Product of the projected single-observation posteriors, treating the
/// observations as independent. The product is taken untruncated and the
/// result restricted to the prior box.
pub fn joint_posterior(
    model: &CalibrationModel,
    observations: &[FeatureVector],
    prior: &PriorBox,
) -> Result<TruncatedGaussian> {
    if observations.is_empty() {
        return Err(invalid("joint posterior needs at least one observation"));
    }
    let factors = observations
        .iter()
        .map(|x| posterior_from_observation(model, x, prior).map(|p| p.projected()))
        .collect::<Result<Vec<_>>>()?;
    Ok(TruncatedGaussian { gaussian: multiply_gaussians(&factors)?, bounds: prior.bounds().slice(&model.targets) })
}

/// True when `theta` lies in the central `level` region of `g`.
pub fn in_credible_region(g: &GaussianD, theta: &[f64], level: f64) -> Result<bool> {
    let chi = ChiSquared::new(g.dim() as f64).map_err(|e| invalid(e.to_string()))?;
    Ok(g.mahalanobis_sq(theta) <= chi.inverse_cdf(level))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub features: FeatureSubset,
    /// `"e"` or `"log10_kappa"`.
    pub target: String,
    pub mae: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    /// Fraction of test points whose true θ lies in the 90% region of the
    /// combined model's projected posterior.
    pub coverage_90: f64,
    pub reports: Vec<TrainReport>,
}

impl AblationTable {
    pub fn mae(&self, features: FeatureSubset, target: usize) -> Option<f64> {
        let name = target_name(target);
        self.rows.iter().find(|r| r.features == features && r.target == name).map(|r| r.mae)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["features", "target", "mae", "n"])?;
        for r in &self.rows {
            out.write_record([r.features.name().to_string(), r.target.clone(), format!("{:.9}", r.mae), r.n.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn target_name(t: usize) -> &'static str {
    if t == E {
        "e"
    } else {
        "log10_kappa"
    }
}

/// Mean absolute error of marginal posterior modes over `test`.
pub fn evaluate_mae(model: &CalibrationModel, test: &CalibrationDataset, prior: &PriorBox) -> Result<Vec<f64>> {
    let errs: Vec<Vec<f64>> = test
        .samples
        .par_iter()
        .map(|s| {
            let post = posterior_from_observation(model, &s.features, prior)?;
            model
                .targets
                .iter()
                .enumerate()
                .map(|(j, &t)| Ok((post.marginal_mode(j)? - s.theta[t]).abs()))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let n = errs.len() as f64;
    Ok((0..model.targets.len()).map(|j| errs.iter().map(|e| e[j]).sum::<f64>() / n).collect())
}

/// Feature-subset ablation: four single-target models on timing or
/// position features, plus one joint model on all features.
pub fn run_ablation(
    train_set: &CalibrationDataset,
    test_set: &CalibrationDataset,
    cfg: &TrainConfig,
) -> Result<AblationTable> {
    let prior = train_set.prior;
    let jobs: Vec<(FeatureSubset, Vec<usize>)> = vec![
        (FeatureSubset::Time, vec![E]),
        (FeatureSubset::Time, vec![LOG10_KAPPA]),
        (FeatureSubset::Position, vec![E]),
        (FeatureSubset::Position, vec![LOG10_KAPPA]),
        (FeatureSubset::All, vec![E, LOG10_KAPPA]),
    ];
    let fitted = jobs
        .par_iter()
        .enumerate()
        .map(|(i, (f, t))| {
            let c = TrainConfig { seed: derive_seed(cfg.seed, &format!("ablation-{i}")), ..cfg.clone() };
            CalibrationModel::fit(train_set, *f, t, &c)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for (model, report) in &fitted {
        let mae = evaluate_mae(model, test_set, &prior)?;
        for (j, &t) in model.targets.iter().enumerate() {
            rows.push(AblationRow { features: model.features, target: target_name(t).into(), mae: mae[j], n: test_set.len() });
        }
        reports.push(report.clone());
    }
    let combined = &fitted[4].0;
    let covered = test_set
        .samples
        .par_iter()
        .map(|s| {
            let g = posterior_from_observation(combined, &s.features, &prior)?.projected();
            in_credible_region(&g, &s.theta, 0.9)
        })
        .collect::<Result<Vec<bool>>>()?;
    let coverage_90 = covered.iter().filter(|c| **c).count() as f64 / covered.len() as f64;
    Ok(AblationTable { rows, coverage_90, reports })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn prior_sampling_stays_inside() {
        let p = PriorBox::default();
        let mut rng = seeded(1);
        for _ in 0..1000 {
            assert!(p.contains(&p.sample(&mut rng)));
        }
        assert!(PriorBox::new([0.9, 0.5], [1.0, 5.0]).is_err());
        assert!(PriorBox::new([0.5, 1.5], [1.0, 5.0]).is_err());
    }

    #[test]
    fn dataset_is_deterministic() {
        let cfg = DropConfig::default();
        let a = generate_dataset(&PriorBox::default(), 1, &cfg, 42).unwrap();
        let b = generate_dataset(&PriorBox::default(), 1, &cfg, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&PriorBox::default(), 50, &cfg, 42).unwrap();
        assert_eq!(c.samples[0], a.samples[0]);
    }

    #[test]
    fn point_prior_gives_identical_theta_and_varying_features() {
        let p = PriorBox::new([0.8, 0.8], [2.0, 2.0]).unwrap();
        let d = generate_dataset(&p, 20, &DropConfig::default(), 3).unwrap();
        assert!(d.samples.iter().all(|s| s.theta == [0.8, 2.0]));
        assert!(d.samples.iter().any(|s| s.features != d.samples[0].features));
    }

    #[test]
    fn joint_posterior_algebra() {
        let mixture = MixtureOfGaussians::new(vec![1.0], vec![vec![0.7, 3.0]], vec![vec![0.01, 0.5]]).unwrap();
        let g = project_to_gaussian(&mixture);
        let doubled = multiply_gaussians(&[g.clone(), g.clone()]).unwrap();
        assert!((doubled.variance[0] - 0.005).abs() < 1e-15);
        assert!(in_credible_region(&g, &[0.7, 3.0], 0.9).unwrap());
        assert!(!in_credible_region(&g, &[1.7, 3.0], 0.9).unwrap());
    }
}
