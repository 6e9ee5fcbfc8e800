use std::f64::consts::PI;
use std::sync::OnceLock;
use std::time::Instant;

use bouncekit::calibration::TruncatedGaussian;
use bouncekit::dynamics::*;
use bouncekit::mdn::{project_to_gaussian, Bounds, GaussianD, TrainConfig};
use bouncekit::rng::stream;
use bouncekit::sim::BounceEvent;
use bouncekit::Error;
use nalgebra::{Matrix2, Vector2};
use rand_distr::{Distribution, StandardNormal};

const E: f64 = 0.8;

fn posterior(log10_kappa: f64, log10_kappa_var: f64, kappa_range: [f64; 2]) -> TruncatedGaussian {
    TruncatedGaussian {
        gaussian: GaussianD::new(vec![E, log10_kappa], vec![1e-14, log10_kappa_var]).unwrap(),
        bounds: Bounds::new(vec![0.5, kappa_range[0]], vec![0.99, kappa_range[1]]).unwrap(),
    }
}

// covers bounce intervals from ~0.4 s to 1.25 s and spacings up to ~1.4 m
fn sim_config(seed: u64) -> TransitionSimConfig {
    TransitionSimConfig {
        launch: LaunchConfig {
            x_range: [0.0, 0.0],
            y_range: [0.0, 0.0],
            height_range: [1.0, 3.0],
            speed_range: [0.3, 1.5],
            heading_spread: PI,
            vertical_range: [0.0, 0.0],
        },
        n_bounces: 6,
        train: TrainConfig { hidden: vec![32, 32], seed, ..Default::default() },
        ..Default::default()
    }
}

fn deterministic() -> &'static TransitionModel {
    static M: OnceLock<TransitionModel> = OnceLock::new();
    M.get_or_init(|| train_transition_model(&posterior(9.0, 1e-14, [0.0, 10.0]), 800, &sim_config(1), 3).unwrap().0)
}

fn noisy() -> &'static TransitionModel {
    static M: OnceLock<TransitionModel> = OnceLock::new();
    M.get_or_init(|| train_transition_model(&posterior(2.0, 0.25, [1.0, 3.0]), 800, &sim_config(1), 3).unwrap().0)
}

#[test]
fn belief_follows_geometric_decay() {
    let m = deterministic();
    let prev = BounceEvent::new(0.0, 0.0, 0.0);
    let cur = BounceEvent::new(1.0, 1.0, 0.0);
    let b = predict_next_bounce(m, &prev, &cur, &mut stream(1, 0)).unwrap();
    assert!((b.mean.x - 1.64).abs() < 0.02 * 0.64, "{:?}", b.mean);
    assert!(b.mean.y.abs() < 1e-3);
    assert!((b.time_mean - 1.8).abs() < 0.02 * 0.8, "{}", b.time_mean);

    // same step along a rotated heading
    let cur = BounceEvent::new(1.0, 0.0, -1.0);
    let b = predict_next_bounce(m, &prev, &cur, &mut stream(1, 0)).unwrap();
    assert!((b.mean - Vector2::new(0.0, -1.64)).norm() < 0.02 * 0.64, "{:?}", b.mean);
}

#[test]
fn deterministic_model_matches_closed_forms() {
    let m = deterministic();
    let held = simulate_transition_pairs(&m.provenance, 200, &sim_config(1), 99).unwrap();
    let prev = BounceEvent::new(0.0, 0.0, 0.0);
    let mut worst = Vec::new();
    for (i, p) in held.iter().filter(|p| p.d_in >= 0.1).enumerate() {
        let cur = BounceEvent::new(p.t_in, p.d_in, 0.0);
        let b = predict_next_bounce(m, &prev, &cur, &mut stream(20, i as u64)).unwrap();
        let t_err = ((b.time_mean - p.t_in) / (E * p.t_in) - 1.0).abs();
        let d_err = ((b.mean.x - p.d_in) / (E * E * p.d_in) - 1.0).abs();
        worst.push(t_err.max(d_err));
    }
    let within = worst.iter().filter(|e| **e <= 0.02).count() as f64 / worst.len() as f64;
    assert!(within >= 0.95, "only {within} of held-out pairs within 2%");
}

#[test]
fn predicted_time_tracks_restitution() {
    let m = deterministic();
    for t_in in [0.45, 0.6, 0.8, 1.0, 1.2] {
        let g = project_to_gaussian(&m.predict(t_in, 0.5).unwrap());
        assert!((g.mean[0] / (E * t_in) - 1.0).abs() < 0.02, "t_in {t_in}: {}", g.mean[0]);
    }
}

#[test]
fn wider_kappa_spreads_alpha_and_belief() {
    let (det, wide) = (deterministic(), noisy());
    let var_alpha = |m: &TransitionModel| project_to_gaussian(&m.predict(0.8, 0.5).unwrap()).variance[2];
    assert!(var_alpha(wide) > var_alpha(det), "{} vs {}", var_alpha(wide), var_alpha(det));

    let prev = BounceEvent::new(0.0, 0.0, 0.0);
    let cur = BounceEvent::new(0.8, 0.5, 0.0);
    let spread = |m: &TransitionModel| predict_next_bounce(m, &prev, &cur, &mut stream(2, 0)).unwrap().covariance.trace();
    assert!(spread(wide) > spread(det));
}

#[test]
fn symmetric_model_keeps_mean_on_heading_line() {
    let m = noisy();
    let prev = BounceEvent::new(0.0, 0.2, 0.1);
    let cur = BounceEvent::new(0.8, 0.6, 0.4);
    let heading = (cur.position - prev.position).normalize();
    let normal = Vector2::new(-heading.y, heading.x);
    let b = predict_next_bounce(m, &prev, &cur, &mut stream(4, 0)).unwrap();
    let offset = (b.mean - cur.position).dot(&normal);
    // Monte-Carlo standard error of the mean across 256 draws
    let se = (normal.transpose() * b.covariance * normal)[(0, 0)].sqrt() / (BELIEF_SAMPLES as f64).sqrt();
    assert!(offset.abs() < 4.0 * se + 1e-3, "offset {offset} se {se}");
}

#[test]
fn coincident_bounces_are_rejected() {
    let p = BounceEvent::new(0.0, 0.4, 0.4);
    let c = BounceEvent::new(0.5, 0.4, 0.4);
    assert_eq!(predict_next_bounce(deterministic(), &p, &c, &mut stream(0, 0)), Err(Error::HeadingUndefined));
}

#[test]
fn same_seed_same_model() {
    let cfg = TransitionSimConfig {
        train: TrainConfig { hidden: vec![8], epochs: 5, ..Default::default() },
        ..sim_config(5)
    };
    let post = posterior(2.0, 0.25, [1.0, 3.0]);
    let a = train_transition_model(&post, 60, &cfg, 11).unwrap().0;
    let b = train_transition_model(&post, 60, &cfg, 11).unwrap().0;
    assert_eq!(a, b);
    let c = TransitionModel::from_json(&a.to_json().unwrap()).unwrap();
    assert_eq!(a, c);
}

#[test]
fn deterministic_rollout_collapses() {
    let m = deterministic();
    let prev = BounceEvent::new(0.0, 0.0, 0.0);
    let cur = BounceEvent::new(0.8, 0.5, 0.0);
    // next bounces land near 0.82, 1.02, 1.15 m
    let r = rollout_to_plane(m, &prev, &cur, 0.95, 4, 10, &mut stream(6, 0)).unwrap();
    assert!(!r.is_empty());
    // low-weight mixture components keep a few centimetres of spread in d,
    // so the collapse is checked on the interquartile range
    assert!(r.crossings.iter().all(|c| c.depth == 2));
    let iqr = |f: fn(&Crossing) -> f64| {
        let mut v: Vec<f64> = r.crossings.iter().map(f).collect();
        v.sort_by(|a, b| a.total_cmp(b));
        v[3 * v.len() / 4] - v[v.len() / 4]
    };
    let spread = [iqr(|c| c.y), iqr(|c| c.z), iqr(|c| c.t)];
    assert!(spread.iter().all(|s| *s < 2e-3), "{spread:?}");
}

#[test]
fn rollout_bounded_and_reproducible() {
    let m = noisy();
    let prev = BounceEvent::new(0.0, 0.0, 0.0);
    let cur = BounceEvent::new(0.8, 0.5, 0.0);
    for (k, n) in [(1, 7), (2, 10), (3, 5), (4, 4)] {
        let a = rollout_to_plane(m, &prev, &cur, 5.0, k, n, &mut stream(7, k as u64)).unwrap();
        assert!(a.crossings.len() <= n.pow(k as u32));
        let b = rollout_to_plane(m, &prev, &cur, 5.0, k, n, &mut stream(7, k as u64)).unwrap();
        assert_eq!(a, b);
    }
    // a plane that is never reached yields no crossings
    let r = rollout_to_plane(m, &prev, &cur, 5.0, 4, 10, &mut stream(8, 0)).unwrap();
    assert!(r.is_empty());
    assert!(rollout_to_plane(m, &prev, &cur, 1.0, 0, 10, &mut stream(8, 0)).is_err());
}

#[test]
fn crossing_spread_grows_with_depth() {
    let m = noisy();
    let prev = BounceEvent::new(0.0, 0.0, 0.0);
    let cur = BounceEvent::new(0.8, 0.5, 0.0);
    let mut sigma = Vec::new();
    for k in 1..=4 {
        let mut ys = Vec::new();
        for i in 0..50 {
            let r = rollout_to_plane(m, &prev, &cur, 0.7, k, 10, &mut stream(9, i)).unwrap();
            ys.extend(r.crossings.iter().map(|c| c.y));
        }
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        sigma.push((ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt());
    }
    for w in sigma.windows(2) {
        assert!(w[1] >= w[0], "{sigma:?}");
    }
}

#[test]
fn filter_passes_in_distribution_fraction() {
    let b = BounceBelief {
        mean: Vector2::new(0.3, -0.2),
        covariance: Matrix2::new(0.004, 0.0015, 0.0015, 0.002),
        time_mean: 1.0,
        time_variance: 1e-3,
    };
    let l = b.covariance.cholesky().unwrap().l();
    let mut rng = stream(12, 0);
    let n = 1000;
    let conf = 0.975;
    let mut inliers = 0;
    for _ in 0..n {
        let z = Vector2::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
        let p = b.mean + l * z;
        if !filter_outlier(&b, &BounceEvent::new(1.0, p.x, p.y), conf).unwrap().0 {
            inliers += 1;
        }
    }
    let floor = conf - 3.0 * (conf * (1.0 - conf) / n as f64).sqrt();
    assert!(inliers as f64 / n as f64 >= floor, "{inliers}");
}

#[test]
fn rollout_fits_control_budget() {
    let m = noisy();
    let prev = BounceEvent::new(0.0, 0.0, 0.0);
    let cur = BounceEvent::new(0.8, 0.5, 0.0);
    let _ = rollout_to_plane(m, &prev, &cur, 5.0, 4, 10, &mut stream(13, 0)).unwrap();
    let start = Instant::now();
    for i in 0..5 {
        rollout_to_plane(m, &prev, &cur, 5.0, 4, 10, &mut stream(13, i)).unwrap();
    }
    let per = start.elapsed().as_secs_f64() / 5.0;
    assert!(per < 0.05, "{per} s per rollout");
}
