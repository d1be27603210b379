/*
Copyright 2026 The softarm Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/
//! Rotation helpers shared by the kinematics, controller and vision code.

use nalgebra::{Matrix3, Vector3};

pub fn rot_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// `[w]x`, the cross-product matrix of `w`.
pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Inverse of [`skew`]. Uses the antisymmetric part, so it tolerates a
/// slightly non-skew input such as a finite-difference estimate.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Rodrigues' formula.
pub fn exp_so3(w: &Vector3<f64>) -> Matrix3<f64> {
    let angle = w.norm();
    let k = skew(w);
    if angle < 1e-8 {
        return Matrix3::identity() + k + 0.5 * k * k;
    }
    let a = angle.sin() / angle;
    let b = (1.0 - angle.cos()) / (angle * angle);
    Matrix3::identity() + a * k + b * k * k
}

/// Principal rotation vector of `r` (angle in `[0, pi]`).
pub fn log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos_angle = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let anti = vee(r);
    let angle = anti.norm().atan2(cos_angle);
    if angle < 1e-6 {
        // sin(angle)/angle ~ 1 - angle^2/6
        return anti * (1.0 + angle * angle / 6.0);
    }
    if std::f64::consts::PI - angle > 1e-4 {
        return anti * (angle / angle.sin());
    }
    // Near pi the antisymmetric part vanishes; recover the axis from the
    // symmetric part instead, R + R^T = 2 cos(a) I + 2 (1 - cos(a)) n n^T.
    let b =
        (r + r.transpose() - Matrix3::identity() * (2.0 * cos_angle)) / (2.0 * (1.0 - cos_angle));
    let col = (0..3)
        .max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)]))
        .unwrap_or(0);
    let mut axis = b.column(col).into_owned() / b[(col, col)].max(f64::MIN_POSITIVE).sqrt();
    axis /= axis.norm();
    // Pick the sign consistent with the (small) antisymmetric part.
    if axis.dot(&anti) < 0.0 {
        axis = -axis;
    }
    axis * angle
}

/// Projects a near-rotation back onto SO(3) (closest rotation in Frobenius norm).
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

/// `||R^T R - I||_F`.
pub fn orthonormality_error(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vec3() -> impl Strategy<Value = Vector3<f64>> {
        (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64).prop_map(|(x, y, z)| Vector3::new(x, y, z))
    }

    #[test]
    fn axis_rotations_match_rodrigues() {
        for a in [-2.0, -0.3, 0.0, 0.7, 3.0] {
            assert!((rot_x(a) - exp_so3(&Vector3::new(a, 0.0, 0.0))).norm() < 1e-14);
            assert!((rot_y(a) - exp_so3(&Vector3::new(0.0, a, 0.0))).norm() < 1e-14);
            assert!((rot_z(a) - exp_so3(&Vector3::new(0.0, 0.0, a))).norm() < 1e-14);
        }
    }

    #[test]
    fn log_near_pi() {
        for angle in [
            std::f64::consts::PI - 1e-9,
            std::f64::consts::PI - 1e-5,
            std::f64::consts::PI,
        ] {
            let axis = Vector3::new(0.3, -0.5, 0.81).normalize();
            let r = exp_so3(&(axis * angle));
            let w = log_so3(&r);
            assert!((exp_so3(&w) - r).norm() < 1e-9, "angle {angle}");
            assert!((w.norm() - angle).abs() < 1e-9);
        }
    }

    #[test]
    fn orthonormalize_fixes_drift() {
        let r = rot_x(0.4) * rot_z(-1.1);
        let drifted = r + Matrix3::repeat(1e-9);
        let fixed = orthonormalize(&drifted);
        assert!(orthonormality_error(&fixed) < 1e-14);
        assert!((fixed - r).norm() < 1e-8);
        assert!(fixed.determinant() > 0.0);
    }

    proptest! {
        #[test]
        fn vee_inverts_skew(w in vec3()) {
            prop_assert_eq!(vee(&skew(&w)), w);
        }

        #[test]
        fn log_inverts_exp(w in vec3()) {
            prop_assume!(w.norm() < std::f64::consts::PI - 1e-3);
            let back = log_so3(&exp_so3(&w));
            prop_assert!((back - w).norm() < 1e-10);
        }
    }
}
