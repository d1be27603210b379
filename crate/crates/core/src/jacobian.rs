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
//! Differential kinematics and the pseudoinverse tools used by the
//! controllers.

use nalgebra::{DMatrix, Matrix3, SMatrix};

use crate::error::JacobianError;
use crate::geometry::{ActuatorState, RobotGeometry, NUM_ACTUATORS};
use crate::kinematics::{forward_kinematics, is_fully_straight};
use crate::so3::vee;

/// Central-difference step on actuator elongations, in meters.
pub const FD_STEP: f64 = 1e-7;

/// Default relative singular-value cutoff for [`pinv`].
pub const DEFAULT_SV_TOL: f64 = 1e-8;

pub type Matrix3x9 = SMatrix<f64, 3, NUM_ACTUATORS>;
pub type Matrix6x9 = SMatrix<f64, 6, NUM_ACTUATORS>;
pub type Matrix9 = SMatrix<f64, NUM_ACTUATORS, NUM_ACTUATORS>;

/// Linear (`jv`, m/m) and spatial angular (`jw`, rad/m) Jacobians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jacobian6x9 {
    pub jv: Matrix3x9,
    pub jw: Matrix3x9,
}

impl Jacobian6x9 {
    /// `[jv; jw]`.
    pub fn stacked(&self) -> Matrix6x9 {
        let mut j = Matrix6x9::zeros();
        j.fixed_view_mut::<3, NUM_ACTUATORS>(0, 0)
            .copy_from(&self.jv);
        j.fixed_view_mut::<3, NUM_ACTUATORS>(3, 0)
            .copy_from(&self.jw);
        j
    }

    pub fn is_finite(&self) -> bool {
        self.jv.iter().chain(self.jw.iter()).all(|v| v.is_finite())
    }
}

/// Jacobian of the end-effector pose with respect to `q`.
///
/// Column `m` of `jv` is `dp/dq_m`; column `m` of `jw` is `(dR/dq_m R^T)^v`.
/// Both are central differences of [`forward_kinematics`] with step
/// [`FD_STEP`].
pub fn jacobian(q: &ActuatorState, geom: &RobotGeometry) -> Result<Jacobian6x9, JacobianError> {
    if is_fully_straight(q, geom) {
        return Err(JacobianError::FullyStraightConfiguration);
    }
    Ok(jacobian_with_step(q, geom, FD_STEP))
}

pub(crate) fn jacobian_with_step(q: &ActuatorState, geom: &RobotGeometry, h: f64) -> Jacobian6x9 {
    let r_t = forward_kinematics(q, geom).rotation.transpose();
    let mut jv = Matrix3x9::zeros();
    let mut jw = Matrix3x9::zeros();
    for m in 0..NUM_ACTUATORS {
        let mut plus = *q;
        let mut minus = *q;
        plus[m] += h;
        minus[m] -= h;
        let tp = forward_kinematics(&plus, geom);
        let tm = forward_kinematics(&minus, geom);
        let inv_2h = 0.5 / h;
        jv.set_column(m, &((tp.position - tm.position) * inv_2h));
        let d_rot: Matrix3<f64> = (tp.rotation - tm.rotation) * inv_2h;
        jw.set_column(m, &vee(&(d_rot * r_t)));
    }
    Jacobian6x9 { jv, jw }
}

/// Moore-Penrose pseudoinverse via SVD. Singular values below
/// `sv_tol * sigma_max` are treated as zero.
pub fn pinv<const R: usize, const C: usize>(
    m: &SMatrix<f64, R, C>,
    sv_tol: f64,
) -> SMatrix<f64, C, R> {
    let dynamic = DMatrix::from_column_slice(R, C, m.as_slice());
    let p = pinv_dyn(&dynamic, sv_tol);
    SMatrix::<f64, C, R>::from_column_slice(p.as_slice())
}

/// Condition number up to which [`pinv_dyn`] inverts through the Gram
/// matrix `M M^T`; beyond it squaring the spread would cost too many digits.
const GRAM_MAX_CONDITION: f64 = 1e6;

/// [`pinv`] for dynamically sized matrices.
///
/// The SVD decides the rank. The inverse itself comes from the eigenvectors
/// of `M M^T` when the kept singular values are well separated, because
/// nalgebra's SVD only reconstructs `M` to about `1e-8` relative on some
/// wide Jacobians, which is visible in `M pinv(M) M - M`.
pub fn pinv_dyn(m: &DMatrix<f64>, sv_tol: f64) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(cols, rows);
    }
    let svd = m.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    if !(sigma_max > 0.0) {
        return DMatrix::zeros(cols, rows);
    }
    let cutoff = sv_tol * sigma_max;
    let kept: Vec<f64> = svd
        .singular_values
        .iter()
        .copied()
        .filter(|s| *s > cutoff)
        .collect();
    let sigma_min = kept.iter().copied().fold(f64::INFINITY, f64::min);
    if sigma_max / sigma_min <= GRAM_MAX_CONDITION {
        let eig = (m * m.transpose()).symmetric_eigen();
        let mut order: Vec<usize> = (0..rows).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut inner = DMatrix::zeros(rows, rows);
        for &k in order.iter().take(kept.len()) {
            let u = eig.eigenvectors.column(k);
            inner += u * u.transpose() / eig.eigenvalues[k];
        }
        return m.transpose() * inner;
    }
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let mut out = DMatrix::zeros(cols, rows);
    for (k, &sigma) in svd.singular_values.iter().enumerate() {
        if sigma > cutoff {
            out += v_t.row(k).transpose() * u.column(k).transpose() / sigma;
        }
    }
    out
}

/// `I - pinv(M) M`, the projector onto the null space of `M`.
pub fn null_projector<const R: usize>(m: &SMatrix<f64, R, NUM_ACTUATORS>, sv_tol: f64) -> Matrix9 {
    Matrix9::identity() - pinv(m, sv_tol) * m
}

/// Numerical rank with the same cutoff rule as [`pinv`].
pub fn rank<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>, sv_tol: f64) -> usize {
    let dynamic = DMatrix::from_column_slice(R, C, m.as_slice());
    let sv = dynamic.singular_values();
    let cutoff = sv_tol * sv.max();
    sv.iter().filter(|s| **s > cutoff && **s > 0.0).count()
}
