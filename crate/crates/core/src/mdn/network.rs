//! Feed-forward mixture density network with hand-written backpropagation.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::mixture::{log_sum_exp, Bounds, MixtureOfGaussians};
use crate::error::{invalid, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Floor added to every predicted variance, in standardised target units.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Per-column affine standardisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    /// Column means and standard deviations; constant columns get unit scale.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| invalid("cannot standardise an empty set"))?;
        let d = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            if r.len() != d {
                return Err(invalid("ragged rows"));
            }
            for j in 0..d {
                mean[j] += r[j];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for j in 0..d {
                var[j] += (r[j] - mean[j]).powi(2);
            }
        }
        let std = var.iter().map(|v| (v / n).sqrt()).map(|s| if s > 1e-12 { s } else { 1.0 }).collect();
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.mean.iter().zip(&self.std)).map(|(v, (m, s))| (v - m) / s).collect()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_scale(&self) -> f64 {
        self.std.iter().map(|s| s.ln()).sum()
    }
}

/// Network shape and weights plus the data normalisation it was trained with.
///
/// Parameters are one flat vector: for every layer the `out × in` weight
/// matrix (row-major) followed by the `out` biases. The output head holds
/// `K` mixture logits, `K·D` means and `K·D` log-variances, component-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdnModel {
    pub input_dim: usize,
    pub output_dim: usize,
    pub components: usize,
    pub hidden: Vec<usize>,
    pub params: Vec<f64>,
    pub input_norm: Standardizer,
    pub target_norm: Standardizer,
    /// Per-feature range seen in training, for extrapolation checks.
    #[serde(default)]
    pub input_range: Option<Bounds>,
}

/// Reusable activation buffers for one sample.
pub(crate) struct Scratch {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
    log_comp: Vec<f64>,
}

impl MdnModel {
    /// Randomly initialised network (Glorot-uniform weights, zero biases).
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        output_dim: usize,
        components: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || components == 0 || hidden.iter().any(|h| *h == 0) {
            return Err(invalid("network dimensions and component count must be positive"));
        }
        let mut model = MdnModel {
            input_dim,
            output_dim,
            components,
            hidden: hidden.to_vec(),
            params: Vec::new(),
            input_norm: Standardizer::identity(input_dim),
            target_norm: Standardizer::identity(output_dim),
            input_range: None,
        };
        let sizes = model.layer_sizes();
        let last = sizes.len() - 2;
        for (l, w) in sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let mut limit = (6.0 / (n_in + n_out) as f64).sqrt();
            if l == last {
                // a small head keeps the initial mixture broad and well spread
                limit *= 0.1;
            }
            let dist = Uniform::new_inclusive(-limit, limit).map_err(|e| invalid(e.to_string()))?;
            model.params.extend((0..n_in * n_out).map(|_| dist.sample(rng)));
            model.params.extend(std::iter::repeat_n(0.0, n_out));
        }
        Ok(model)
    }

    pub fn head_dim(&self) -> usize {
        self.components * (1 + 2 * self.output_dim)
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim];
        s.extend(&self.hidden);
        s.push(self.head_dim());
        s
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.components == 0 {
            return Err(invalid("model needs at least one component"));
        }
        if self.params.len() != self.param_count() {
            return Err(invalid(format!("expected {} parameters, found {}", self.param_count(), self.params.len())));
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(invalid("model parameters must be finite"));
        }
        if self.input_norm.dim() != self.input_dim || self.target_norm.dim() != self.output_dim {
            return Err(invalid("normalisation statistics do not match model dimensions"));
        }
        Ok(())
    }

    /// Zeroes the output layer, giving equal weights and means at the
    /// target-normalisation centre.
    pub fn zero_output_layer(&mut self) {
        let sizes = self.layer_sizes();
        let n = sizes[sizes.len() - 2] * sizes[sizes.len() - 1] + sizes[sizes.len() - 1];
        let len = self.params.len();
        self.params[len - n..].iter_mut().for_each(|p| *p = 0.0);
    }

    pub(crate) fn scratch(&self) -> Scratch {
        let sizes = self.layer_sizes();
        let widest = *sizes.iter().max().unwrap_or(&1);
        Scratch {
            acts: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            delta: vec![0.0; widest],
            delta_prev: vec![0.0; widest],
            log_comp: vec![0.0; self.components],
        }
    }

    /// Runs the network on an already standardised input, leaving the head
    /// in `scratch.acts.last()`.
    fn forward_raw(&self, xn: &[f64], s: &mut Scratch) {
        let sizes = self.layer_sizes();
        s.acts[0].copy_from_slice(xn);
        let n_layers = sizes.len() - 1;
        let mut off = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let (prev, next) = s.acts.split_at_mut(l + 1);
            let a_in = &prev[l];
            let a_out = &mut next[0];
            for j in 0..n_out {
                let row = &w[j * n_in..(j + 1) * n_in];
                let mut z = b[j];
                for i in 0..n_in {
                    z += row[i] * a_in[i];
                }
                a_out[j] = if l + 1 < n_layers { z.tanh() } else { z };
            }
            off += n_in * n_out + n_out;
        }
    }

    /// Conditional mixture over targets for input `x`, in target units.
    pub fn forward(&self, x: &[f64]) -> Result<MixtureOfGaussians> {
        if x.len() != self.input_dim {
            return Err(invalid(format!("expected {} inputs, got {}", self.input_dim, x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(invalid("model input must be finite"));
        }
        let mut s = self.scratch();
        self.forward_raw(&self.input_norm.apply(x), &mut s);
        Ok(self.head_to_mixture(s.acts.last().expect("head layer")))
    }

    fn head_to_mixture(&self, head: &[f64]) -> MixtureOfGaussians {
        let (k, d) = (self.components, self.output_dim);
        let lse = log_sum_exp(&head[..k]);
        let weights: Vec<f64> = head[..k].iter().map(|a| (a - lse).exp()).collect();
        let total: f64 = weights.iter().sum();
        let weights = weights.iter().map(|w| w / total).collect();
        let mut means = Vec::with_capacity(k);
        let mut variances = Vec::with_capacity(k);
        for c in 0..k {
            let mut m = Vec::with_capacity(d);
            let mut v = Vec::with_capacity(d);
            for j in 0..d {
                let s = self.target_norm.std[j];
                m.push(head[k + c * d + j] * s + self.target_norm.mean[j]);
                v.push((head[k + k * d + c * d + j].exp() + VARIANCE_FLOOR) * s * s);
            }
            means.push(m);
            variances.push(v);
        }
        MixtureOfGaussians { weights, means, variances }
    }

    /// Negative log-likelihood of one standardised pair; accumulates
    /// `∂NLL/∂params` into `grad` when given.
    pub(crate) fn sample_nll(&self, xn: &[f64], yn: &[f64], grad: Option<&mut [f64]>, s: &mut Scratch) -> f64 {
        self.forward_raw(xn, s);
        let (k, d) = (self.components, self.output_dim);
        let sizes = self.layer_sizes();
        let head_len = *sizes.last().expect("head");
        let head = &s.acts[sizes.len() - 1];
        let lse_logits = log_sum_exp(&head[..k]);
        for c in 0..k {
            let mut lp = head[c] - lse_logits;
            for j in 0..d {
                let m = head[k + c * d + j];
                let v = head[k + k * d + c * d + j].exp() + VARIANCE_FLOOR;
                let r = yn[j] - m;
                lp -= 0.5 * (LN_2PI + v.ln() + r * r / v);
            }
            s.log_comp[c] = lp;
        }
        let lse = log_sum_exp(&s.log_comp);
        let nll = -lse;
        let Some(grad) = grad else { return nll };

        // dNLL/dhead
        let delta = &mut s.delta[..head_len];
        for c in 0..k {
            let resp = (s.log_comp[c] - lse).exp();
            let w = (head[c] - lse_logits).exp();
            delta[c] = w - resp;
            for j in 0..d {
                let m = head[k + c * d + j];
                let es = head[k + k * d + c * d + j].exp();
                let v = es + VARIANCE_FLOOR;
                let r = yn[j] - m;
                delta[k + c * d + j] = -resp * r / v;
                delta[k + k * d + c * d + j] = 0.5 * resp * es / v * (1.0 - r * r / v);
            }
        }

        let n_layers = sizes.len() - 1;
        let mut off_end = self.params.len();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let off = off_end - (n_in * n_out + n_out);
            let a_in = &s.acts[l];
            {
                let (gw, gb) = grad[off..off_end].split_at_mut(n_in * n_out);
                for j in 0..n_out {
                    let dz = s.delta[j];
                    gb[j] += dz;
                    let row = &mut gw[j * n_in..(j + 1) * n_in];
                    for i in 0..n_in {
                        row[i] += dz * a_in[i];
                    }
                }
            }
            if l > 0 {
                let w = &self.params[off..off + n_in * n_out];
                for i in 0..n_in {
                    s.delta_prev[i] = 0.0;
                }
                for j in 0..n_out {
                    let dz = s.delta[j];
                    let row = &w[j * n_in..(j + 1) * n_in];
                    for i in 0..n_in {
                        s.delta_prev[i] += row[i] * dz;
                    }
                }
                for i in 0..n_in {
                    let a = a_in[i];
                    s.delta_prev[i] *= 1.0 - a * a;
                }
                std::mem::swap(&mut s.delta, &mut s.delta_prev);
            }
            off_end = off;
        }
        nll
    }

    fn check_batch(&self, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<()> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(invalid("batch must be nonempty with matching inputs and targets"));
        }
        if xs.iter().any(|x| x.len() != self.input_dim) || ys.iter().any(|y| y.len() != self.output_dim) {
            return Err(invalid("batch dimensions do not match the model"));
        }
        Ok(())
    }

    /// Mean negative log-likelihood of targets under the predicted
    /// mixtures, in target units.
    pub fn nll_loss(&self, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<f64> {
        self.check_batch(xs, ys)?;
        let mut s = self.scratch();
        let total: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| self.sample_nll(&self.input_norm.apply(x), &self.target_norm.apply(y), None, &mut s))
            .sum();
        Ok(total / xs.len() as f64 + self.target_norm.log_scale())
    }

    /// Mean NLL and its gradient with respect to `params`.
    pub fn loss_and_gradient(&self, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
        self.check_batch(xs, ys)?;
        let mut grad = vec![0.0; self.params.len()];
        let mut s = self.scratch();
        let mut total = 0.0;
        for (x, y) in xs.iter().zip(ys) {
            total += self.sample_nll(&self.input_norm.apply(x), &self.target_norm.apply(y), Some(&mut grad), &mut s);
        }
        let n = xs.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok((total / n + self.target_norm.log_scale(), grad))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: MdnModel = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// True when `x` lies outside the per-feature range seen in training.
    pub fn is_extrapolating(&self, x: &[f64]) -> bool {
        self.input_range.as_ref().is_some_and(|r| !r.contains(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn zeroed_head_gives_uniform_weights_at_target_centre() {
        let mut m = MdnModel::new(3, 2, 4, &[8, 8], &mut seeded(0)).unwrap();
        m.target_norm = Standardizer { mean: vec![0.7, 3.0], std: vec![0.1, 1.2] };
        m.zero_output_layer();
        let mix = m.forward(&[0.1, -2.0, 5.0]).unwrap();
        for w in &mix.weights {
            assert!((w - 0.25).abs() < 1e-15);
        }
        for mean in &mix.means {
            assert!((mean[0] - 0.7).abs() < 1e-15 && (mean[1] - 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_component_at_its_mean() {
        let mut m = MdnModel::new(1, 1, 1, &[4], &mut seeded(1)).unwrap();
        m.zero_output_layer();
        // head: logit 0, mean 0, log-variance 0 → N(0, 1 + floor)
        let l = m.nll_loss(&[vec![0.3]], &[vec![0.0]]).unwrap();
        assert!((l - 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-6);
        let mut m2 = MdnModel::new(1, 1, 2, &[4], &mut seeded(1)).unwrap();
        m2.zero_output_layer();
        let l2 = m2.nll_loss(&[vec![0.3]], &[vec![0.0]]).unwrap();
        assert!((l - l2).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = MdnModel::new(2, 1, 2, &[4], &mut seeded(0)).unwrap();
        assert!(m.forward(&[1.0]).is_err());
        assert!(m.forward(&[1.0, f64::NAN]).is_err());
        assert!(m.nll_loss(&[], &[]).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = MdnModel::new(2, 2, 3, &[5, 4], &mut seeded(2)).unwrap();
        let back = MdnModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
        let mut bad = m.clone();
        bad.params.pop();
        assert!(MdnModel::from_json(&bad.to_json().unwrap()).is_err());
    }
}
