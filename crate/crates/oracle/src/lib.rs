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
//! Independent reference implementations for verifying `softarm`.
//!
//! Nothing here calls into `softarm`; the arm is described with plain arrays
//! and the kinematics are rebuilt from a different construction:
//!
//! - each section's bend is recovered by projecting the actuator elongations
//!   onto the actuator layout (`cos`, `sin` of the actuator angles), which
//!   gives the curvature vector directly;
//! - the arc is integrated from many short straight segments (midpoint rule
//!   on a rotating frame) instead of the closed-form conjugated rotation.
//!
//! These routines are slow and meant only for tests.

use nalgebra::{Matrix3, SMatrix, Vector3};

/// Plain description of one section for the reference model.
#[derive(Debug, Clone, Copy)]
pub struct RefSection {
    pub radius: f64,
    pub initial_length: f64,
    /// Axial offset after the section (gripper offset for the last one).
    pub offset_length: f64,
    /// Rotation about Z after the section.
    pub offset_angle: f64,
}

/// Reference arm: three sections, proximal first.
#[derive(Debug, Clone, Copy)]
pub struct RefArm {
    pub sections: [RefSection; 3],
}

/// Reference pose as a rotation matrix and position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefPose {
    pub rotation: Matrix3<f64>,
    pub position: Vector3<f64>,
}

/// Segment count used by [`fk_reference`] unless told otherwise.
pub const DEFAULT_SEGMENTS: usize = 10_000;

fn axis_rotation(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    // Axis-angle via the outer-product form R = c I + s [a]x + (1 - c) a a^T.
    let (s, c) = angle.sin_cos();
    let a = axis;
    let cross = Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0);
    Matrix3::identity() * c + cross * s + (a * a.transpose()) * (1.0 - c)
}

/// Curvature vector (bend angle times bend direction in the section XY plane)
/// and center-line length of one section.
///
/// Actuator `j` sits at angle `2 pi j / 3` from the section X axis. For a
/// circular arc bent by `phi` toward direction `d`, actuator `j` is shortened
/// by `r phi cos(psi_j - d)` relative to the mean, so the first Fourier
/// coefficient of the elongations gives `phi (cos d, sin d)` directly.
pub fn section_bend(lengths: [f64; 3], section: &RefSection) -> (Vector3<f64>, f64) {
    let mean = (lengths[0] + lengths[1] + lengths[2]) / 3.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for (j, l) in lengths.iter().enumerate() {
        let psi = 2.0 * std::f64::consts::PI * j as f64 / 3.0;
        cx += (l - mean) * psi.cos();
        cy += (l - mean) * psi.sin();
    }
    let k = -2.0 / (3.0 * section.radius);
    (
        Vector3::new(k * cx, k * cy, 0.0),
        section.initial_length + mean,
    )
}

/// Pose of one section's end plate, integrated from `segments` short pieces.
pub fn section_reference(lengths: [f64; 3], section: &RefSection, segments: usize) -> RefPose {
    let (bend, arc) = section_bend(lengths, section);
    let phi = bend.norm();
    let ds = arc / segments as f64;
    if phi == 0.0 {
        return RefPose {
            rotation: Matrix3::identity(),
            position: Vector3::new(0.0, 0.0, arc),
        };
    }
    // Bending toward d tilts Z toward d: rotation axis is z x d.
    let axis = Vector3::z().cross(&(bend / phi));
    let half = axis_rotation(&axis, 0.5 * phi / segments as f64);
    let mut rotation = Matrix3::identity();
    let mut position = Vector3::zeros();
    for _ in 0..segments {
        let mid = rotation * half;
        position += mid * Vector3::new(0.0, 0.0, ds);
        rotation = mid * half;
    }
    RefPose { rotation, position }
}

/// End-effector pose of the reference model.
pub fn fk_reference(q: &[f64; 9], arm: &RefArm, segments: usize) -> RefPose {
    let mut rotation = Matrix3::identity();
    let mut position = Vector3::zeros();
    for (i, section) in arm.sections.iter().enumerate() {
        let piece = section_reference([q[3 * i], q[3 * i + 1], q[3 * i + 2]], section, segments);
        position += rotation * piece.position;
        rotation *= piece.rotation;
        position += rotation * Vector3::new(0.0, 0.0, section.offset_length);
        let (s, c) = section.offset_angle.sin_cos();
        rotation *= Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
    }
    RefPose { rotation, position }
}

/// Closed-form endpoint of a single circular arc of length `arc` bent by
/// `phi` toward direction `theta`: `(lambda (1 - cos phi), 0, lambda sin phi)`
/// rotated by `theta` about Z.
pub fn arc_endpoint(arc: f64, phi: f64, theta: f64) -> Vector3<f64> {
    if phi == 0.0 {
        return Vector3::new(0.0, 0.0, arc);
    }
    let lambda = arc / phi;
    let planar = lambda * (1.0 - phi.cos());
    Vector3::new(
        planar * theta.cos(),
        planar * theta.sin(),
        lambda * phi.sin(),
    )
}

/// Central-difference Jacobian of an arbitrary pose map.
///
/// Rows 0..3 are `dp/dq`, rows 3..6 are `(dR/dq R^T)` reduced to a vector.
pub fn fd_jacobian<F>(f: F, q: &[f64; 9], h: f64) -> SMatrix<f64, 6, 9>
where
    F: Fn(&[f64; 9]) -> RefPose,
{
    assert!(h > 0.0, "step must be positive");
    let center = f(q);
    let mut out = SMatrix::<f64, 6, 9>::zeros();
    for m in 0..9 {
        let mut plus = *q;
        let mut minus = *q;
        plus[m] += h;
        minus[m] -= h;
        let (a, b) = (f(&plus), f(&minus));
        let dp = (a.position - b.position) / (2.0 * h);
        let w = (a.rotation - b.rotation) / (2.0 * h) * center.rotation.transpose();
        let omega = Vector3::new(
            0.5 * (w[(2, 1)] - w[(1, 2)]),
            0.5 * (w[(0, 2)] - w[(2, 0)]),
            0.5 * (w[(1, 0)] - w[(0, 1)]),
        );
        for r in 0..3 {
            out[(r, m)] = dp[r];
            out[(r + 3, m)] = omega[r];
        }
    }
    out
}

/// Central-difference gradient of a scalar function.
pub fn fd_gradient<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    assert!(h > 0.0, "step must be positive");
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Angle of the relative rotation between two rotation matrices.
pub fn rotation_distance(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let r = a.transpose() * b;
    let c = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let s = 0.5
        * Vector3::new(
            r[(2, 1)] - r[(1, 2)],
            r[(0, 2)] - r[(2, 0)],
            r[(1, 0)] - r[(0, 1)],
        )
        .norm();
    s.atan2(c)
}
