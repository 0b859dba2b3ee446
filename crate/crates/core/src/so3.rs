//! Axis-angle rotation helpers.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion};

use crate::mesh::Vec3;

pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation matrix of an axis-angle vector (Rodrigues).
pub fn exp(w: &Vec3) -> Matrix3<f64> {
    let phi2 = w.norm_squared();
    let k = skew(w);
    let (a, b) = if phi2 < 1e-12 {
        (1.0 - phi2 / 6.0, 0.5 - phi2 / 24.0)
    } else {
        let phi = phi2.sqrt();
        (phi.sin() / phi, (1.0 - phi.cos()) / phi2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Axis-angle vector of a rotation matrix, angle in `[0, π]`.
pub fn log(r: &Matrix3<f64>) -> Vec3 {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    canonical(&q.scaled_axis())
}

/// Left Jacobian of SO(3): `exp(w + d) ≈ exp(J_l(w) d) exp(w)`.
pub fn left_jacobian(w: &Vec3) -> Matrix3<f64> {
    let phi2 = w.norm_squared();
    let k = skew(w);
    let (a, b) = if phi2 < 1e-12 {
        (0.5 - phi2 / 24.0, 1.0 / 6.0 - phi2 / 120.0)
    } else {
        let phi = phi2.sqrt();
        ((1.0 - phi.cos()) / phi2, (phi - phi.sin()) / (phi2 * phi))
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Equivalent axis-angle with angle in `[0, π]`. At exactly π the axis
/// keeps a non-negative first nonzero component.
pub fn canonical(w: &Vec3) -> Vec3 {
    let phi = w.norm();
    if !phi.is_finite() || phi == 0.0 {
        return if phi.is_finite() { *w } else { Vec3::zeros() };
    }
    let axis = w / phi;
    let mut angle = phi.rem_euclid(2.0 * PI);
    let mut axis = axis;
    if angle > PI {
        angle = 2.0 * PI - angle;
        axis = -axis;
    }
    if angle == PI {
        let first = axis.iter().copied().find(|c| *c != 0.0).unwrap_or(0.0);
        if first < 0.0 {
            axis = -axis;
        }
    }
    axis * angle
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exp_is_rotation() {
        let w = Vec3::new(0.3, -1.2, 0.7);
        let r = exp(&w);
        assert_relative_eq!(r * r.transpose(), Matrix3::identity(), epsilon = 1e-12);
        assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(r * w, w, epsilon = 1e-12);
    }

    #[test]
    fn left_jacobian_matches_finite_differences() {
        let w = Vec3::new(0.4, 0.9, -1.3);
        let jl = left_jacobian(&w);
        let r = exp(&w);
        let h = 1e-6;
        for c in 0..3 {
            let mut d = Vec3::zeros();
            d[c] = h;
            let dr = (exp(&(w + d)) - exp(&(w - d))) / (2.0 * h);
            let expected = skew(&(jl.column(c).into_owned())) * r;
            assert_relative_eq!(dr, expected, epsilon = 1e-8);
        }
    }

    #[test]
    fn log_inverts_exp_at_half_turn() {
        for w in [Vec3::new(PI, 0.0, 0.0), Vec3::new(1.0, 0.0, 1.0).normalize() * PI, Vec3::new(0.3, -0.2, 0.5)] {
            let r = exp(&w);
            assert!((exp(&log(&r)) - r).amax() < 1e-12, "{w:?}");
        }
    }

    #[test]
    fn canonical_wraps_large_angles() {
        let a = Vec3::new(0.0, 0.0, 1.0);
        let w = a * (1.5 * PI);
        let c = canonical(&w);
        assert_relative_eq!(c, -a * (0.5 * PI), epsilon = 1e-12);
        assert_relative_eq!(exp(&c), exp(&w), epsilon = 1e-12);
        let pi_neg = Vec3::new(-PI, 0.0, 0.0);
        assert_eq!(canonical(&pi_neg), Vec3::new(PI, 0.0, 0.0));
        let small = Vec3::new(0.1, 0.2, 0.3);
        assert_eq!(canonical(&small), small);
    }
}
