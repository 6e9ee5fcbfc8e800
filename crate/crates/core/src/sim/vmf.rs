//! Von Mises-Fisher sampling on the 2-sphere.

use nalgebra::Vector3;
use rand::Rng;
use std::f64::consts::PI;

use crate::error::{invalid, Result};

/// Tolerance on `‖mu‖ = 1`.
const UNIT_TOL: f64 = 1e-9;

/// Draws one unit vector from the vMF distribution with mean direction `mu`
/// and concentration `kappa`.
///
/// The polar cosine `w = μ·x` is drawn by inverting its CDF,
/// `w = 1 + ln(ξ + (1 − ξ) e^{−2κ}) / κ`, the azimuth uniformly, and the
/// result is rotated from the `+z` frame onto `mu`. No rejection loop is
/// involved, so every call consumes exactly two uniforms.
pub fn sample_vmf<R: Rng + ?Sized>(mu: &Vector3<f64>, kappa: f64, rng: &mut R) -> Result<Vector3<f64>> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(invalid(format!("vMF concentration must be positive and finite, got {kappa}")));
    }
    let norm = mu.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOL {
        return Err(invalid(format!("vMF mean direction must be a unit vector, norm {norm}")));
    }
    let xi: f64 = rng.random();
    let phi = 2.0 * PI * rng.random::<f64>();
    let w = polar_cosine(xi, kappa);
    let r = (1.0 - w * w).max(0.0).sqrt();
    let (b1, b2) = orthonormal_basis(mu);
    let x = b1 * (r * phi.cos()) + b2 * (r * phi.sin()) + mu * w;
    Ok(x.normalize())
}

/// Inverse CDF of the polar cosine for uniform `xi` in `[0, 1)`.
pub(crate) fn polar_cosine(xi: f64, kappa: f64) -> f64 {
    let log_term = if kappa < 1.0 {
        // ln(1 − (1 − ξ)(1 − e^{−2κ})), accurate as κ → 0
        (-(1.0 - xi) * (-(-2.0 * kappa).exp_m1())).ln_1p()
    } else {
        // log-sum-exp of ln ξ and ln(1 − ξ) − 2κ, safe for κ in the thousands
        let a = xi.ln();
        let b = (1.0 - xi).ln() - 2.0 * kappa;
        let m = a.max(b);
        if m == f64::NEG_INFINITY {
            -2.0 * kappa
        } else {
            m + ((a - m).exp() + (b - m).exp()).ln()
        }
    };
    (1.0 + log_term / kappa).clamp(-1.0, 1.0)
}

/// Two unit vectors completing `n` to a right-handed orthonormal frame
/// (Duff et al. branchless construction).
pub(crate) fn orthonormal_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let sign = if n.z >= 0.0 { 1.0 } else { -1.0 };
    let a = -1.0 / (sign + n.z);
    let b = n.x * n.y * a;
    let b1 = Vector3::new(1.0 + sign * n.x * n.x * a, sign * b, -sign * n.x);
    let b2 = Vector3::new(b, sign + n.y * n.y * a, -n.y);
    (b1, b2)
}

/// Mean resultant length `coth(κ) − 1/κ` of the vMF distribution on S².
pub fn mean_resultant_length(kappa: f64) -> f64 {
    if kappa < 1e-4 {
        // series: κ/3 − κ³/45
        kappa / 3.0 - kappa.powi(3) / 45.0
    } else {
        1.0 / kappa.tanh() - 1.0 / kappa
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn basis_is_orthonormal() {
        for n in [
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(0.0, 0.0, -1.0),
            Vector3::new(1.0, 2.0, -3.0).normalize(),
        ] {
            let (b1, b2) = orthonormal_basis(&n);
            assert!((b1.norm() - 1.0).abs() < 1e-12);
            assert!((b2.norm() - 1.0).abs() < 1e-12);
            assert!(b1.dot(&b2).abs() < 1e-12);
            assert!(b1.dot(&n).abs() < 1e-12);
            assert!(b2.dot(&n).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut rng = seeded(0);
        let z = Vector3::z();
        assert!(sample_vmf(&z, 0.0, &mut rng).is_err());
        assert!(sample_vmf(&z, -1.0, &mut rng).is_err());
        assert!(sample_vmf(&z, f64::NAN, &mut rng).is_err());
        assert!(sample_vmf(&Vector3::new(0.0, 0.0, 2.0), 1.0, &mut rng).is_err());
    }

    #[test]
    fn huge_concentration_stays_on_mean() {
        let mut rng = seeded(1);
        let mu = Vector3::z();
        for _ in 0..1000 {
            let x = sample_vmf(&mu, 1e9, &mut rng).unwrap();
            assert!(x.dot(&mu).clamp(-1.0, 1.0).acos() < 1e-3);
            assert!((x.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn polar_cosine_endpoints() {
        assert!((polar_cosine(0.0, 5.0) + 1.0).abs() < 1e-12);
        assert!((polar_cosine(1.0 - 1e-17, 5.0) - 1.0).abs() < 1e-12);
        // near-uniform limit: w ≈ 2ξ − 1
        assert!((polar_cosine(0.25, 1e-8) + 0.5).abs() < 1e-6);
    }

    #[test]
    fn mean_resultant_length_values() {
        assert!((mean_resultant_length(10.0) - 0.9).abs() < 1e-7);
        assert!(mean_resultant_length(1e-6) < 1e-6);
    }
}
