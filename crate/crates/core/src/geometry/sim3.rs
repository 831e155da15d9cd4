//! The similarity group Sim(3) and its tangent space.
//!
//! Elements are stored as `(s, R, t)` acting on points as `x ↦ s·R·x + t`.
//! Tangent vectors are ordered `[ρ | φ | σ]`: translational part, axis-angle rotation,
//! and log-scale. The exponential applies the integrated left Jacobian
//! `W(φ, σ) = ∫₀¹ e^{σu} exp(u·φ̂) du` to `ρ`.

use std::fmt;

use nalgebra::{Matrix3, Rotation3, SMatrix, SVector, UnitQuaternion, Vector3};

use super::so3;
use crate::error::{Error, Result};

pub type Vector7 = SVector<f64, 7>;
pub type Matrix7 = SMatrix<f64, 7, 7>;

/// Rotations closer than this to π have no well-defined logarithm.
pub const LOG_ANGLE_MARGIN: f64 = 1e-6;

/// Lie-algebra coordinates `[ρ₁ ρ₂ ρ₃ | φ₁ φ₂ φ₃ | σ]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sim3Tangent(pub Vector7);

impl Sim3Tangent {
    pub fn zero() -> Self {
        Self(Vector7::zeros())
    }

    pub fn from_parts(rho: Vector3<f64>, phi: Vector3<f64>, sigma: f64) -> Self {
        let mut v = Vector7::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&rho);
        v.fixed_rows_mut::<3>(3).copy_from(&phi);
        v[6] = sigma;
        Self(v)
    }

    pub fn rho(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn phi(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn sigma(&self) -> f64 {
        self.0[6]
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    /// Matrix of the adjoint action `ad_ξ`, so that `ad_ξ·η = [ξ, η]`.
    pub fn ad(&self) -> Matrix7 {
        let rho = self.rho();
        let phi_hat = so3::hat(&self.phi());
        let sigma = self.sigma();
        let mut m = Matrix7::zeros();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(phi_hat + Matrix3::identity() * sigma));
        m.fixed_view_mut::<3, 3>(0, 3).copy_from(&so3::hat(&rho));
        m.fixed_view_mut::<3, 1>(0, 6).copy_from(&(-rho));
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&phi_hat);
        m
    }

    /// Left Jacobian `J_l(ξ) = Σₙ adₙ/(n+1)!`, satisfying
    /// `exp(ξ + δ) ≈ exp(J_l(ξ)·δ)·exp(ξ)`.
    pub fn left_jacobian(&self) -> Matrix7 {
        let ad = self.ad();
        let mut term = Matrix7::identity();
        let mut sum = Matrix7::identity();
        for n in 1..200 {
            term = term * ad / (n as f64 + 1.0);
            sum += term;
            if term.amax() <= 1e-18 * sum.amax() {
                break;
            }
        }
        sum
    }

    pub fn left_jacobian_inverse(&self) -> Result<Matrix7> {
        self.left_jacobian()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("left Jacobian is singular".into()))
    }
}

/// A similarity transform `x ↦ s·R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sim3 {
    scale: f64,
    rotation: Rotation3<f64>,
    translation: Vector3<f64>,
}

impl Default for Sim3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl fmt::Display for Sim3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = self.quaternion();
        let t = self.translation;
        write!(
            f,
            "Sim3(s={:.6}, q=[{:.6}, {:.6}, {:.6}, {:.6}], t=[{:.4}, {:.4}, {:.4}])",
            self.scale, q.i, q.j, q.k, q.w, t.x, t.y, t.z
        )
    }
}

impl Sim3 {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform, re-projecting `rotation` onto SO(3) once.
    pub fn new(scale: f64, rotation: Rotation3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::invalid(format!("scale must be positive and finite, got {scale}")));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("translation has non-finite entries"));
        }
        let m = rotation.matrix();
        let rotation = if (m * m.transpose() - Matrix3::identity()).amax() > 1e-12 {
            so3::orthonormalize(m)?
        } else {
            rotation
        };
        if !rotation.matrix().iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("rotation has non-finite entries"));
        }
        Ok(Self {
            scale,
            rotation,
            translation,
        })
    }

    pub fn from_scale(scale: f64) -> Result<Self> {
        Self::new(scale, Rotation3::identity(), Vector3::zeros())
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            translation,
            ..Self::identity()
        }
    }

    pub fn from_quaternion(
        scale: f64,
        rotation: UnitQuaternion<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        Self::new(scale, rotation.to_rotation_matrix(), translation)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rotation(&self) -> &Rotation3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&self.rotation)
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x * self.scale + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Sim3) -> Sim3 {
        Sim3 {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation * self.scale + self.translation,
        }
    }

    pub fn inverse(&self) -> Sim3 {
        let inv_scale = 1.0 / self.scale;
        let rot_t = self.rotation.inverse();
        Sim3 {
            scale: inv_scale,
            rotation: rot_t,
            translation: -(rot_t * self.translation) * inv_scale,
        }
    }

    /// Adjoint matrix, `Ad_S·ξ = log(S·exp(ξ)·S⁻¹)` to first order.
    pub fn adjoint(&self) -> Matrix7 {
        let r = self.rotation.matrix();
        let t = self.translation;
        let mut m = Matrix7::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(r * self.scale));
        m.fixed_view_mut::<3, 3>(0, 3).copy_from(&(so3::hat(&t) * r));
        m.fixed_view_mut::<3, 1>(0, 6).copy_from(&(-t));
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
        m[(6, 6)] = 1.0;
        m
    }

    pub fn exp(xi: &Sim3Tangent) -> Result<Sim3> {
        if !xi.0.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("tangent vector has non-finite entries"));
        }
        let phi = xi.phi();
        let sigma = xi.sigma();
        let w = w_matrix(&phi, sigma);
        Ok(Sim3 {
            scale: sigma.exp(),
            rotation: so3::exp(&phi),
            translation: w * xi.rho(),
        })
    }

    /// Inverse of [`Sim3::exp`]. Rotation angles within [`LOG_ANGLE_MARGIN`] of π are
    /// reported as a domain error.
    pub fn log(&self) -> Result<Sim3Tangent> {
        let phi = so3::log_checked(&self.rotation, LOG_ANGLE_MARGIN)?;
        let sigma = self.scale.ln();
        let w = w_matrix(&phi, sigma);
        let rho = w
            .lu()
            .solve(&self.translation)
            .ok_or_else(|| Error::Numerical("W matrix is singular".into()))?;
        Ok(Sim3Tangent::from_parts(rho, phi, sigma))
    }

    /// 4×4 homogeneous matrix `[[sR, t], [0, 1]]`.
    pub fn to_matrix(&self) -> nalgebra::Matrix4<f64> {
        let mut m = nalgebra::Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(self.rotation.matrix() * self.scale));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Max-abs difference over scale, rotation matrix and translation.
    pub fn max_abs_diff(&self, other: &Sim3) -> f64 {
        let ds = (self.scale - other.scale).abs();
        let dr = (self.rotation.matrix() - other.rotation.matrix()).amax();
        let dt = (self.translation - other.translation).amax();
        ds.max(dr).max(dt)
    }
}

/// `∫₀¹ s^k e^{σs} ds`.
fn moment(k: usize, sigma: f64) -> f64 {
    if sigma.abs() < 2.0 {
        let mut sum = 0.0;
        let mut power = 1.0; // σ^m / m!
        for m in 0..200 {
            let term = power / (k + m + 1) as f64;
            sum += term;
            if term.abs() <= 1e-18 * sum.abs() {
                break;
            }
            power *= sigma / (m + 1) as f64;
        }
        sum
    } else {
        let e = sigma.exp();
        let mut value = sigma.exp_m1() / sigma;
        for j in 1..=k {
            value = (e - j as f64 * value) / sigma;
        }
        value
    }
}

/// Coefficients `(A, B, C)` of `W = C·I + A·φ̂ + B·φ̂²`.
fn w_coefficients(theta: f64, sigma: f64) -> (f64, f64, f64) {
    let c = moment(0, sigma);
    if theta < 0.1 {
        // Power series in θ with exact σ moments.
        let theta2 = theta * theta;
        let (mut a, mut b) = (0.0, 0.0);
        let mut power = 1.0; // (-1)^j θ^{2j}
        let mut fact_odd = 1.0; // (2j+1)!
        let mut fact_even = 2.0; // (2j+2)!
        for j in 0..12 {
            a += power / fact_odd * moment(2 * j + 1, sigma);
            b += power / fact_even * moment(2 * j + 2, sigma);
            power *= -theta2;
            let n = (2 * j + 2) as f64;
            fact_odd *= n * (n + 1.0);
            fact_even *= (n + 1.0) * (n + 2.0);
        }
        (a, b, c)
    } else {
        let e = sigma.exp();
        let (sin, cos) = theta.sin_cos();
        let denom = sigma * sigma + theta * theta;
        let int_sin = (e * (sigma * sin - theta * cos) + theta) / denom;
        let int_cos = (e * (sigma * cos + theta * sin) - sigma) / denom;
        (int_sin / theta, (c - int_cos) / (theta * theta), c)
    }
}

fn w_matrix(phi: &Vector3<f64>, sigma: f64) -> Matrix3<f64> {
    let (a, b, c) = w_coefficients(phi.norm(), sigma);
    let omega = so3::hat(phi);
    Matrix3::identity() * c + omega * a + omega * omega * b
}
