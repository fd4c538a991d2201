//! Non-unit quaternion algebra on SO(3).
//!
//! Orientation is carried as a quaternion whose norm is free to drift; the
//! rotation it represents is recovered with the homogeneous quadratic map
//! `R = Q(q) / |q|^2`, which is exactly orthogonal for any nonzero `q`.
//! Convention: Hamilton product, scalar first, body rates multiply on the right.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible squared norm.
pub const EPS_Q: f64 = 1e-6;

/// Norm band kept by [`rescale_guard`].
pub const RESCALE_BAND: (f64, f64) = (0.5, 2.0);

pub type RotationMatrix = Matrix3<f64>;

/// Quaternion with unconstrained norm, scalar-first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuatNU {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Angular velocity expressed in the body frame (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BodyRates {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BodyRates {
    pub const ZERO: BodyRates = BodyRates { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

impl QuatNU {
    pub const IDENTITY: QuatNU = QuatNU { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.w, self.x, self.y, self.z)
    }

    pub fn norm_squared(&self) -> f64 {
        self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    pub fn conjugate(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Hamilton product `self ⊗ rhs`.
    pub fn mul(&self, rhs: &QuatNU) -> QuatNU {
        let (a, b) = (self, rhs);
        QuatNU::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    fn check(&self) -> Result<()> {
        let n2 = self.norm_squared();
        if !(n2 > EPS_Q) || !n2.is_finite() {
            return Err(Error::DegenerateQuaternion(n2));
        }
        Ok(())
    }

    /// Unit quaternion on the `w >= 0` hemisphere.
    pub fn normalized(&self) -> Result<QuatNU> {
        self.check()?;
        let q = self.scale(1.0 / self.norm());
        Ok(if q.w < 0.0 { q.scale(-1.0) } else { q })
    }
}

/// `Λ(Ω)` such that `q̇ = ½ Λ(Ω) q`.
pub fn omega_matrix(omega: &BodyRates) -> Matrix4<f64> {
    let (x, y, z) = (omega.x, omega.y, omega.z);
    #[rustfmt::skip]
    let m = Matrix4::new(
        0.0, -x,  -y,  -z,
        x,   0.0,  z,  -y,
        y,  -z,   0.0,  x,
        z,   y,   -x,  0.0,
    );
    m
}

/// Time derivative of the quaternion under body rates `omega`.
pub fn quat_derivative(q: &QuatNU, omega: &BodyRates) -> Result<Vector4<f64>> {
    q.check()?;
    Ok(0.5 * omega_matrix(omega) * q.as_vector())
}

/// Homogeneous quadratic form `Q(q)`; equals `|q|^2 R`.
fn homogeneous_rotation(q: &QuatNU) -> Matrix3<f64> {
    let QuatNU { w, x, y, z } = *q;
    let (ww, xx, yy, zz) = (w * w, x * x, y * y, z * z);
    #[rustfmt::skip]
    let m = Matrix3::new(
        ww + xx - yy - zz, 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), ww - xx + yy - zz, 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), ww - xx - yy + zz,
    );
    m
}

pub fn quat_to_rotation(q: &QuatNU) -> Result<RotationMatrix> {
    q.check()?;
    Ok(homogeneous_rotation(q) / q.norm_squared())
}

pub fn rotate_vector(q: &QuatNU, v: &Vector3<f64>) -> Result<Vector3<f64>> {
    Ok(quat_to_rotation(q)? * v)
}

/// Exponential map from a rotation vector to a unit quaternion.
pub fn quat_exp(phi: &Vector3<f64>) -> QuatNU {
    let angle = phi.norm();
    let half = 0.5 * angle;
    // sin(a/2)/a, with its Taylor expansion near zero
    let k = if angle < 1e-8 {
        0.5 - angle * angle / 48.0
    } else {
        half.sin() / angle
    };
    QuatNU::new(half.cos(), k * phi.x, k * phi.y, k * phi.z)
}

/// Logarithm map to a rotation vector of norm at most π.
pub fn quat_log(q: &QuatNU) -> Result<Vector3<f64>> {
    let u = q.normalized()?;
    let v = Vector3::new(u.x, u.y, u.z);
    let s = v.norm();
    if s < 1e-12 {
        return Ok(2.0 * v);
    }
    let angle = 2.0 * s.atan2(u.w);
    Ok(v * (angle / s))
}

/// Geodesic distance between the rotations of two quaternions (rad).
pub fn geodesic_distance(a: &QuatNU, b: &QuatNU) -> Result<f64> {
    Ok(quat_log(&a.conjugate().mul(b))?.norm())
}

fn check_simplex(weights: &[f64], len: usize) -> Result<()> {
    if weights.len() != len {
        return Err(Error::Dimension(format!(
            "expected {len} simplex weights, got {}",
            weights.len()
        )));
    }
    let sum: f64 = weights.iter().sum();
    let min = weights.iter().cloned().fold(f64::INFINITY, f64::min);
    if (sum - 1.0).abs() > 1e-8 || min < -1e-8 || !sum.is_finite() {
        return Err(Error::SimplexViolation { sum, min });
    }
    Ok(())
}

pub(crate) fn validate_simplex(weights: &[f64], len: usize) -> Result<()> {
    check_simplex(weights, len)
}

/// `exp(Σ λ_l log q_l)`: convex combination of rotations in a single tangent chart.
pub fn tangent_convex_combination(quats: &[QuatNU], weights: &[f64]) -> Result<QuatNU> {
    check_simplex(weights, quats.len())?;
    let mut acc = Vector3::zeros();
    for (q, &l) in quats.iter().zip(weights) {
        acc += l * quat_log(q)?;
    }
    Ok(quat_exp(&acc))
}

/// Renormalizes `q` if its norm left the admissible band; otherwise returns it as is.
pub fn rescale_guard(q: &QuatNU) -> Result<QuatNU> {
    let n = q.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::ZeroQuaternion);
    }
    if n < RESCALE_BAND.0 || n > RESCALE_BAND.1 {
        Ok(q.scale(1.0 / n))
    } else {
        Ok(*q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn omega_matrix_cases() {
        assert_eq!(omega_matrix(&BodyRates::ZERO), Matrix4::zeros());
        let m = omega_matrix(&BodyRates::new(0.0, 0.0, 1.0));
        assert_eq!(m[(0, 3)], -1.0);
        assert_eq!(m[(3, 0)], 1.0);
        assert_eq!(m[(1, 2)], 1.0);
        assert_eq!(m[(2, 1)], -1.0);
        let m = omega_matrix(&BodyRates::new(0.3, -1.2, 2.2));
        assert_eq!(m + m.transpose(), Matrix4::zeros());
    }

    #[test]
    fn derivative_cases() {
        let d = quat_derivative(&QuatNU::IDENTITY, &BodyRates::new(0.0, 0.0, 2.0)).unwrap();
        assert_eq!(d, Vector4::new(0.0, 0.0, 0.0, 1.0));
        let q = QuatNU::new(0.3, -0.2, 0.9, 0.1);
        assert_eq!(quat_derivative(&q, &BodyRates::ZERO).unwrap(), Vector4::zeros());
        assert!(matches!(
            quat_derivative(&QuatNU::new(0.0, 0.0, 1e-4, 0.0), &BodyRates::ZERO),
            Err(Error::DegenerateQuaternion(_))
        ));
    }

    #[test]
    fn rotation_cases() {
        assert_eq!(quat_to_rotation(&QuatNU::IDENTITY).unwrap(), Matrix3::identity());
        assert_eq!(quat_to_rotation(&QuatNU::new(2.0, 0.0, 0.0, 0.0)).unwrap(), Matrix3::identity());
        let r = quat_to_rotation(&QuatNU::new(1.0, 1.0, 0.0, 0.0)).unwrap();
        #[rustfmt::skip]
        let expected = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert_relative_eq!(r, expected, epsilon = 1e-15);
    }

    #[test]
    fn rotate_vector_cases() {
        let ez = Vector3::z();
        assert_eq!(rotate_vector(&QuatNU::IDENTITY, &ez).unwrap(), ez);
        let flip = QuatNU::new(0.0, 1.0, 0.0, 0.0);
        assert_relative_eq!(rotate_vector(&flip, &ez).unwrap(), -ez, epsilon = 1e-15);
    }

    #[test]
    fn exp_cases() {
        assert_eq!(quat_exp(&Vector3::zeros()), QuatNU::IDENTITY);
        let q = quat_exp(&Vector3::new(0.0, 0.0, PI));
        assert_relative_eq!(q.as_vector(), Vector4::new(0.0, 0.0, 0.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn log_uses_short_arc() {
        // w < 0 is the antipode of a small rotation
        let q = quat_exp(&Vector3::new(0.2, 0.0, 0.0)).scale(-3.0);
        assert_relative_eq!(quat_log(&q).unwrap(), Vector3::new(0.2, 0.0, 0.0), epsilon = 1e-14);
    }

    #[test]
    fn tangent_combination_cases() {
        let qs = [
            quat_exp(&Vector3::new(0.1, 0.2, -0.3)),
            QuatNU::new(2.0, 0.0, 0.4, 0.0),
            quat_exp(&Vector3::new(0.0, 0.0, 1.0)),
        ];
        let v = tangent_convex_combination(&qs, &[0.0, 1.0, 0.0]).unwrap();
        assert_relative_eq!(v.as_vector(), qs[1].normalized().unwrap().as_vector(), epsilon = 1e-14);

        let same = [qs[0]; 3];
        let v = tangent_convex_combination(&same, &[0.2, 0.3, 0.5]).unwrap();
        assert_relative_eq!(v.as_vector(), qs[0].as_vector(), epsilon = 1e-14);

        let theta = 1.3;
        let pair = [QuatNU::IDENTITY, quat_exp(&Vector3::new(0.0, 0.0, theta))];
        let v = tangent_convex_combination(&pair, &[0.5, 0.5]).unwrap();
        let half = quat_exp(&Vector3::new(0.0, 0.0, theta / 2.0));
        assert_relative_eq!(v.as_vector(), half.as_vector(), epsilon = 1e-14);

        assert!(matches!(
            tangent_convex_combination(&pair, &[0.7, 0.7]),
            Err(Error::SimplexViolation { .. })
        ));
        assert!(matches!(
            tangent_convex_combination(&pair, &[1.1, -0.1]),
            Err(Error::SimplexViolation { .. })
        ));
    }

    #[test]
    fn rescale_cases() {
        assert_eq!(rescale_guard(&QuatNU::IDENTITY).unwrap(), QuatNU::IDENTITY);
        assert_eq!(rescale_guard(&QuatNU::new(4.0, 0.0, 0.0, 0.0)).unwrap(), QuatNU::IDENTITY);
        let q = QuatNU::new(0.6, 0.5, 0.0, 0.0);
        assert_relative_eq!(q.norm(), 0.781_024_967_590_665_4, epsilon = 1e-15);
        assert_eq!(rescale_guard(&q).unwrap(), q);
        assert!(matches!(rescale_guard(&QuatNU::new(0.0, 0.0, 0.0, 0.0)), Err(Error::ZeroQuaternion)));
    }

    fn arb_quat() -> impl Strategy<Value = QuatNU> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, 0.5..2.0f64)
            .prop_filter("nonzero", |(w, x, y, z, _)| w * w + x * x + y * y + z * z > 1e-2)
            .prop_map(|(w, x, y, z, n)| {
                let q = QuatNU::new(w, x, y, z);
                q.scale(n / q.norm())
            })
    }

    fn arb_rates() -> impl Strategy<Value = BodyRates> {
        (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64).prop_map(|(x, y, z)| BodyRates::new(x, y, z))
    }

    proptest! {
        #[test]
        fn exact_flow_preserves_norm(q in arb_quat(), w in arb_rates()) {
            let d = quat_derivative(&q, &w).unwrap();
            prop_assert!(q.as_vector().dot(&d).abs() < 1e-14);
        }

        #[test]
        fn rotation_is_orthonormal_and_scale_invariant(q in arb_quat(), s in prop_oneof![-5.0..-0.2f64, 0.2..5.0f64]) {
            let r = quat_to_rotation(&q).unwrap();
            let err = (r.transpose() * r - Matrix3::identity()).amax();
            prop_assert!(err < 1e-9);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
            let rs = quat_to_rotation(&q.scale(s)).unwrap();
            prop_assert!((r - rs).amax() < 1e-12);
        }

        #[test]
        fn rotation_preserves_length(q in arb_quat(), v in prop::array::uniform3(-10.0..10.0f64)) {
            let v = Vector3::from(v);
            let rv = rotate_vector(&q, &v).unwrap();
            prop_assert!((rv.norm() - v.norm()).abs() < 1e-12);
        }

        #[test]
        fn tangent_combination_is_unit(qs in prop::collection::vec(arb_quat(), 1..6), raw in prop::collection::vec(0.01..1.0f64, 6)) {
            let w: Vec<f64> = raw[..qs.len()].to_vec();
            let s: f64 = w.iter().sum();
            let w: Vec<f64> = w.iter().map(|v| v / s).collect();
            let c = tangent_convex_combination(&qs, &w).unwrap();
            prop_assert!((c.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_exp_round_trip_sampled() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let dir = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if dir.norm() < 1e-3 {
                continue;
            }
            let phi = dir.normalize() * rng.random_range(0.0..PI - 0.01);
            let back = quat_log(&quat_exp(&phi)).unwrap();
            assert!((back - phi).amax() < 1e-10, "{phi:?} -> {back:?}");
        }
    }
}
