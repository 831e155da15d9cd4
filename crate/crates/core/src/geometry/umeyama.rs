//! Weighted closed-form similarity alignment.

use nalgebra::{Matrix3, Rotation3, Vector3};

use super::Sim3;
use crate::error::{Error, Result};

/// Global minimizer of `Σ wᵤ‖s·R·xᵤ + t − yᵤ‖²`.
///
/// Weighted centroids are removed, the weighted cross-covariance is decomposed by SVD
/// with a determinant sign fix, and the scale is the ratio of the fitted singular values
/// to the source variance.
pub fn weighted_umeyama(src: &[Vector3<f64>], dst: &[Vector3<f64>], weights: &[f64]) -> Result<Sim3> {
    if src.len() != dst.len() || src.len() != weights.len() {
        return Err(Error::invalid(format!(
            "length mismatch: src={}, dst={}, weights={}",
            src.len(),
            dst.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::invalid("weights must be finite and non-negative"));
    }
    let positive = weights.iter().filter(|w| **w > 0.0).count();
    if positive < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "need at least 3 points with positive weight, got {positive}"
        )));
    }
    let total: f64 = weights.iter().sum();

    let mut mu_src = Vector3::zeros();
    let mut mu_dst = Vector3::zeros();
    for ((x, y), &w) in src.iter().zip(dst).zip(weights) {
        mu_src += x * w;
        mu_dst += y * w;
    }
    mu_src /= total;
    mu_dst /= total;

    let mut cov = Matrix3::zeros();
    let mut var_src = 0.0;
    for ((x, y), &w) in src.iter().zip(dst).zip(weights) {
        if w == 0.0 {
            continue;
        }
        let xc = x - mu_src;
        let yc = y - mu_dst;
        cov += (yc * xc.transpose()) * w;
        var_src += w * xc.norm_squared();
    }
    cov /= total;
    var_src /= total;

    let spread = mu_src.norm().max(1.0);
    if !(var_src > 1e-24 * spread * spread) {
        return Err(Error::DegenerateGeometry("source points have near-zero variance".into()));
    }

    let svd = cov.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Numerical("SVD failed to converge".into())),
    };
    // nalgebra does not sort singular values.
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if sv[0] <= 0.0 || sv[1] <= 1e-12 * sv[0] {
        return Err(Error::DegenerateGeometry(
            "weighted cross-covariance has rank < 2".into(),
        ));
    }

    let mut d = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        // Flip the direction paired with the smallest singular value.
        let (idx, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        d[(idx, idx)] = -1.0;
    }
    let rotation = u * d * v_t;
    let scale = (svd.singular_values.component_mul(&d.diagonal())).sum() / var_src;
    let rotation = Rotation3::from_matrix_unchecked(rotation);
    let translation = mu_dst - rotation * mu_src * scale;
    Sim3::new(scale, rotation, translation)
}

/// Uniform-weight convenience wrapper.
pub fn umeyama(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<Sim3> {
    weighted_umeyama(src, dst, &vec![1.0; src.len()])
}
