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
//! Piecewise-constant-curvature kinematics.
//!
//! Two maps per section: actuator elongations to arc parameters
//! ([`actuator_to_config`]) and arc parameters to the end-plate transform
//! ([`config_to_transform`]). [`forward_kinematics`] chains the three sections
//! with their plate offsets.

use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{ActuatorState, RobotGeometry, SectionGeometry};
use crate::so3::{orthonormality_error, orthonormalize, rot_y, rot_z};

/// Below this value of `s` a section is treated as exactly straight.
pub const STRAIGHT_EPS: f64 = 1e-9;

/// Rigid transform: rotation followed by translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            position: Vector3::zeros(),
            rotation: Matrix3::identity(),
        }
    }

    pub fn new(position: Vector3<f64>, rotation: Matrix3<f64>) -> Self {
        Pose { position, rotation }
    }

    pub fn from_translation(position: Vector3<f64>) -> Self {
        Pose {
            position,
            rotation: Matrix3::identity(),
        }
    }

    pub fn from_rotation(rotation: Matrix3<f64>) -> Self {
        Pose {
            position: Vector3::zeros(),
            rotation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Pose {
            position: -(rt * self.position),
            rotation: rt,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.position
    }

    /// True when the rotation is orthonormal with determinant +1 to `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && orthonormality_error(&self.rotation) < tol
            && (self.rotation.determinant() - 1.0).abs() < tol
    }
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        Pose {
            position: self.rotation * rhs.position + self.position,
            rotation: self.rotation * rhs.rotation,
        }
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;

    fn mul(self, rhs: &Pose) -> Pose {
        *self * *rhs
    }
}

/// Arc parameters of one section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectionConfig {
    /// Intermediate `s` of the actuator map; proportional to the bend angle.
    pub s: f64,
    /// Bend angle of the arc.
    pub phi: f64,
    /// Radius of curvature; `f64::INFINITY` for a straight section.
    pub lambda: f64,
    /// Direction of the bending plane, measured from the section X axis.
    pub theta: f64,
    /// Length of the center line, `lambda * phi` when bent.
    pub arc_length: f64,
}

impl SectionConfig {
    /// Straight section of the given length.
    pub fn straight(arc_length: f64) -> Self {
        SectionConfig {
            s: 0.0,
            phi: 0.0,
            lambda: f64::INFINITY,
            theta: 0.0,
            arc_length,
        }
    }

    /// Bent section given directly by its arc parameters. `s` depends on the
    /// section radius and is left as NaN.
    pub fn bent(phi: f64, lambda: f64, theta: f64) -> Self {
        SectionConfig {
            s: f64::NAN,
            phi,
            lambda,
            theta,
            arc_length: lambda * phi,
        }
    }

    pub fn is_straight(&self) -> bool {
        self.phi == 0.0 || !self.lambda.is_finite()
    }
}

/// Maps the three elongations of one section to its arc parameters.
pub fn actuator_to_config(lengths: [f64; 3], section: &SectionGeometry) -> SectionConfig {
    let [l1, l2, l3] = lengths;
    let sum = l1 + l2 + l3;
    let arc_length = section.initial_length + sum / 3.0;
    // s^2 = |u|^2 with u = ((l2 + l3 - 2 l1) / 2, sqrt(3) (l3 - l2) / 2); the
    // component form avoids the cancellation in the expanded quadratic.
    let ux = 0.5 * (l2 + l3 - 2.0 * l1);
    let uy = 0.5 * 3f64.sqrt() * (l3 - l2);
    let s = ux.hypot(uy);
    if s < STRAIGHT_EPS {
        return SectionConfig {
            s,
            ..SectionConfig::straight(arc_length)
        };
    }
    let r = section.radius;
    SectionConfig {
        s,
        phi: 2.0 * s / (3.0 * r),
        lambda: (3.0 * section.initial_length + sum) * r / (2.0 * s),
        theta: (3f64.sqrt() * (l3 - l2)).atan2(l2 + l3 - 2.0 * l1),
        arc_length,
    }
}

/// End-plate pose of a section relative to its base plate:
/// `Rot_z(theta) Trans_x(lambda) Rot_y(phi) Trans_x(-lambda) Rot_z(-theta)`.
pub fn config_to_transform(config: &SectionConfig) -> Pose {
    if config.is_straight() {
        return Pose::from_translation(Vector3::new(0.0, 0.0, config.arc_length));
    }
    let phi = config.phi;
    // lambda (1 - cos phi) and lambda sin phi, written in terms of the arc
    // length so small bends stay accurate.
    let half = 0.5 * phi;
    let radial = config.arc_length * 2.0 * half.sin() * half.sin() / phi;
    let axial = config.arc_length * phi.sin() / phi;
    let rz = rot_z(config.theta);
    Pose {
        position: rz * Vector3::new(radial, 0.0, axial),
        rotation: rz * rot_y(phi) * rz.transpose(),
    }
}

/// Transform of one section followed by its plate offset.
pub fn section_transform(q: &ActuatorState, geom: &RobotGeometry, i: usize) -> Pose {
    let config = actuator_to_config(q.section(i), &geom.sections[i]);
    let (b, beta) = geom.frame_offset(i);
    config_to_transform(&config) * Pose::new(Vector3::new(0.0, 0.0, b), rot_z(beta))
}

/// End-effector pose in the base frame.
pub fn forward_kinematics(q: &ActuatorState, geom: &RobotGeometry) -> Pose {
    let mut pose = (0..geom.sections.len())
        .map(|i| section_transform(q, geom, i))
        .fold(Pose::identity(), |acc, t| acc * t);
    if orthonormality_error(&pose.rotation) > 1e-12 {
        pose.rotation = orthonormalize(&pose.rotation);
    }
    pose
}

/// Configurations of all sections.
pub fn section_configs(q: &ActuatorState, geom: &RobotGeometry) -> Vec<SectionConfig> {
    geom.sections
        .iter()
        .enumerate()
        .map(|(i, s)| actuator_to_config(q.section(i), s))
        .collect()
}

/// True when every section is at the straight sentinel.
pub fn is_fully_straight(q: &ActuatorState, geom: &RobotGeometry) -> bool {
    section_configs(q, geom)
        .iter()
        .all(SectionConfig::is_straight)
}
