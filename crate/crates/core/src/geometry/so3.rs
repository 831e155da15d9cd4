//! Rotation helpers: hat/vee, Rodrigues exponential and an atan2-based logarithm
//! that stays accurate for small angles.

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::error::{Error, Result};

pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues formula, `R = I + a·Ω + b·Ω²`.
pub fn exp(phi: &Vector3<f64>) -> Rotation3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < 1e-4 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let omega = hat(phi);
    Rotation3::from_matrix_unchecked(Matrix3::identity() + omega * a + omega * omega * b)
}

/// Rotation angle in `[0, π]`.
pub fn angle(rotation: &Rotation3<f64>) -> f64 {
    let m = rotation.matrix();
    let w = vee(&(m - m.transpose()));
    let sin = 0.5 * w.norm();
    let cos = 0.5 * (m.trace() - 1.0);
    sin.atan2(cos)
}

/// Axis-angle vector of `rotation`. Fails at angles within `margin` of π, where the
/// axis is not recoverable from the skew part.
pub fn log_checked(rotation: &Rotation3<f64>, margin: f64) -> Result<Vector3<f64>> {
    let m = rotation.matrix();
    let w = vee(&(m - m.transpose()));
    let sin = 0.5 * w.norm();
    let cos = 0.5 * (m.trace() - 1.0);
    let theta = sin.atan2(cos);
    if theta >= std::f64::consts::PI - margin {
        return Err(Error::Domain(format!(
            "rotation angle {theta} is within {margin} of pi"
        )));
    }
    let factor = if theta < 1e-4 {
        0.5 * (1.0 + theta * theta / 6.0)
    } else {
        0.5 * theta / sin
    };
    Ok(w * factor)
}

/// Project an arbitrary 3×3 matrix onto SO(3) (closest rotation in Frobenius norm).
pub fn orthonormalize(m: &Matrix3<f64>) -> Result<Rotation3<f64>> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("rotation matrix has non-finite entries"));
    }
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Numerical("SVD failed to converge".into())),
    };
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    Ok(Rotation3::from_matrix_unchecked(u * d * v_t))
}
