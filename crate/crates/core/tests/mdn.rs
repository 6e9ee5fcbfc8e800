use bouncekit::mdn::{project_to_gaussian, train, MdnModel, Optimizer, Standardizer, TrainConfig};
use bouncekit::rng::stream;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Central-difference gradient of the mean NLL, one parameter at a time.
fn numeric_gradient(model: &MdnModel, xs: &[Vec<f64>], ys: &[Vec<f64>], h: f64) -> Vec<f64> {
    let mut m = model.clone();
    (0..model.params.len())
        .map(|k| {
            let p = model.params[k];
            m.params[k] = p + h;
            let up = m.nll_loss(xs, ys).unwrap();
            m.params[k] = p - h;
            let down = m.nll_loss(xs, ys).unwrap();
            m.params[k] = p;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn max_relative_gradient_error(seed: u64) -> f64 {
    let mut rng = stream(seed, 0);
    let d_in = rng.random_range(1..=4);
    let d_out = rng.random_range(1..=3);
    let k = rng.random_range(1..=4);
    let hidden: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(2..=6)).collect();
    let mut model = MdnModel::new(d_in, d_out, k, &hidden, &mut rng).unwrap();
    // enlarge the head so mixture terms are not all alike
    let n = model.params.len();
    for p in &mut model.params[n / 2..] {
        *p *= 10.0;
    }
    model.input_norm = Standardizer { mean: vec![0.3; d_in], std: vec![1.5; d_in] };
    model.target_norm = Standardizer { mean: vec![-0.2; d_out], std: vec![0.7; d_out] };
    let xs: Vec<Vec<f64>> = (0..8).map(|_| (0..d_in).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let ys: Vec<Vec<f64>> = (0..8).map(|_| (0..d_out).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let (_, analytic) = model.loss_and_gradient(&xs, &ys).unwrap();
    let numeric = numeric_gradient(&model, &xs, &ys, 1e-5);
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    for seed in 0..10 {
        let err = max_relative_gradient_error(seed);
        assert!(err < 1e-4, "seed {seed}: max relative error {err}");
    }
}

fn uniform_inputs(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, 1);
    (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
}

fn col(v: &[f64]) -> Vec<Vec<f64>> {
    v.iter().map(|x| vec![*x]).collect()
}

#[test]
fn linear_gaussian_regression_reaches_analytic_optimum() {
    let noise = Normal::new(0.0, 0.1).unwrap();
    let mut rng = stream(11, 2);
    let x = uniform_inputs(2500, 11);
    let y: Vec<f64> = x.iter().map(|x| 2.0 * x + noise.sample(&mut rng)).collect();
    let (train_x, test_x) = x.split_at(2000);
    let (train_y, test_y) = y.split_at(2000);
    let (model, report) = train(&col(train_x), &col(train_y), &TrainConfig { seed: 3, ..Default::default() }).unwrap();
    assert!(!report.regressed);
    let mix = model.forward(&[0.5]).unwrap();
    let mean: f64 = mix.weights.iter().zip(&mix.means).map(|(w, m)| w * m[0]).sum();
    assert!((mean - 1.0).abs() < 0.05, "mean at 0.5 = {mean}");
    // optimum: ½ ln(2πσ²) + ½
    let optimum = 0.5 * (2.0 * std::f64::consts::PI * 0.01).ln() + 0.5;
    let held_out = model.nll_loss(&col(test_x), &col(test_y)).unwrap();
    assert!((held_out - optimum).abs() < 0.1, "held-out {held_out} vs optimum {optimum}");
}

#[test]
fn bimodal_targets_split_into_two_modes() {
    let mut rng = stream(12, 2);
    let x = uniform_inputs(3000, 12);
    let y: Vec<f64> = x.iter().map(|x| if rng.random_bool(0.5) { *x } else { -*x }).collect();
    let cfg = TrainConfig { seed: 4, ..Default::default() };
    let (model, _) = train(&col(&x), &col(&y), &cfg).unwrap();
    let mix = model.forward(&[1.0]).unwrap();
    let (mut w_pos, mut m_pos, mut w_neg, mut m_neg) = (0.0, 0.0, 0.0, 0.0);
    for (w, m) in mix.weights.iter().zip(&mix.means) {
        if m[0] > 0.0 {
            w_pos += w;
            m_pos += w * m[0];
        } else {
            w_neg += w;
            m_neg += w * m[0];
        }
    }
    assert!((w_pos - 0.5).abs() < 0.1 && (w_neg - 0.5).abs() < 0.1, "weights {w_pos} {w_neg}");
    assert!((m_pos / w_pos - 1.0).abs() < 0.1, "positive mode {}", m_pos / w_pos);
    assert!((m_neg / w_neg + 1.0).abs() < 0.1, "negative mode {}", m_neg / w_neg);
}

#[test]
fn constant_target_collapses() {
    let x = uniform_inputs(512, 13);
    let y = vec![0.37; 512];
    let (model, _) = train(&col(&x), &col(&y), &TrainConfig { epochs: 1500, seed: 5, ..Default::default() }).unwrap();
    let g = project_to_gaussian(&model.forward(&[0.4]).unwrap());
    assert!((g.mean[0] - 0.37).abs() < 1e-2, "mean {}", g.mean[0]);
    assert!(g.variance[0] < 1e-3, "variance {}", g.variance[0]);
}

#[test]
fn shuffled_labels_match_marginal_entropy() {
    let mut rng = stream(14, 2);
    let x = uniform_inputs(2500, 14);
    // targets independent of inputs: N(1, 0.5²)
    let noise = Normal::new(1.0, 0.5).unwrap();
    let y: Vec<f64> = (0..x.len()).map(|_| noise.sample(&mut rng)).collect();
    let cfg = TrainConfig { epochs: 200, seed: 6, ..Default::default() };
    let (model, _) = train(&col(&x[..2000]), &col(&y[..2000]), &cfg).unwrap();
    let entropy = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * 0.25).ln();
    let held_out = model.nll_loss(&col(&x[2000..]), &col(&y[2000..])).unwrap();
    assert!((held_out - entropy).abs() < 0.1, "held-out {held_out} vs entropy {entropy}");
}

#[test]
fn adam_variant_also_learns() {
    let x = uniform_inputs(512, 15);
    let y: Vec<f64> = x.iter().map(|x| 3.0 * x - 1.0).collect();
    let cfg = TrainConfig {
        epochs: 50,
        optimizer: Optimizer::Adam { beta1: 0.9, beta2: 0.999 },
        seed: 7,
        ..Default::default()
    };
    let (_, report) = train(&col(&x), &col(&y), &cfg).unwrap();
    assert!(report.final_nll < report.initial_nll - 1.0);
}
