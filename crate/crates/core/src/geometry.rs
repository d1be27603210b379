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
//! Static description of the three-section arm and its actuator limits.
//!
//! Lengths are meters and angles radians everywhere, including the JSON
//! geometry files.

use std::f64::consts::FRAC_PI_3;
use std::fmt;
use std::ops::{Index, IndexMut};
use std::path::Path;

use nalgebra::SVector;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Number of sections along the arm.
pub const NUM_SECTIONS: usize = 3;
/// Actuators per section.
pub const ACTUATORS_PER_SECTION: usize = 3;
/// Total number of actuators (length of `q`).
pub const NUM_ACTUATORS: usize = NUM_SECTIONS * ACTUATORS_PER_SECTION;

/// Margin used to keep joint-limit cost evaluation off the barrier poles.
pub const JOINT_LIMIT_MARGIN: f64 = 1e-6;

/// Identified actuator elongation per unit of supply pressure, in m/psi.
pub const METERS_PER_PSI: f64 = 1.0 / 2100.0;

/// 9-vector indexed by actuator.
pub type ActuatorVector = SVector<f64, NUM_ACTUATORS>;

/// One constant-curvature section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectionGeometry {
    /// Distance from the section center line to each actuator.
    pub radius: f64,
    /// Unpressurized actuator length.
    pub initial_length: f64,
    /// Axial offset from this section's end plate to the next frame.
    /// Ignored for the distal section, whose offset is the gripper offset.
    pub plate_offset_length: f64,
    /// Rotation about Z from this section's end plate to the next frame.
    /// Ignored for the distal section.
    pub plate_offset_angle: f64,
    /// Maximum elongation of each actuator in this section.
    pub actuator_max_elongation: f64,
}

/// Full arm description, proximal section first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotGeometry {
    pub sections: Vec<SectionGeometry>,
    /// Gripper offset along Z past the distal end plate.
    pub gripper_offset_length: f64,
    /// Gripper rotation about Z past the distal end plate.
    pub gripper_offset_angle: f64,
}

impl Default for RobotGeometry {
    fn default() -> Self {
        let section = |radius, plate_offset_angle| SectionGeometry {
            radius,
            initial_length: 0.15,
            plate_offset_length: 0.02,
            plate_offset_angle,
            actuator_max_elongation: 0.10,
        };
        RobotGeometry {
            sections: vec![
                section(0.06, FRAC_PI_3),
                section(0.05, FRAC_PI_3),
                section(0.04, 0.0),
            ],
            gripper_offset_length: 0.02,
            gripper_offset_angle: 0.0,
        }
    }
}

/// A single failed geometry check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub rule: &'static str,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Result of [`validate_geometry`]. Empty means valid.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn mentions(&self, rule: &str) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }

    fn push(&mut self, field: impl Into<String>, rule: &'static str) {
        self.violations.push(Violation {
            field: field.into(),
            rule,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            return write!(f, "valid");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// Checks every structural invariant of `geom` and reports all violations.
pub fn validate_geometry(geom: &RobotGeometry) -> ValidationReport {
    let mut report = ValidationReport::default();
    if geom.sections.len() != NUM_SECTIONS {
        report.push("sections", "exactly 3 sections");
    }
    for (i, s) in geom.sections.iter().enumerate() {
        let finite = [
            s.radius,
            s.initial_length,
            s.plate_offset_length,
            s.plate_offset_angle,
            s.actuator_max_elongation,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            report.push(format!("sections[{i}]"), "finite values");
        }
        if !(s.radius > 0.0) {
            report.push(format!("sections[{i}].radius"), "radius > 0");
        }
        if !(s.initial_length > 0.0) {
            report.push(
                format!("sections[{i}].initial_length"),
                "initial_length > 0",
            );
        }
        if !(s.actuator_max_elongation > 0.0) {
            report.push(
                format!("sections[{i}].actuator_max_elongation"),
                "actuator_max_elongation > 0",
            );
        }
    }
    for (i, pair) in geom.sections.windows(2).enumerate() {
        if pair[0].radius < pair[1].radius {
            report.push(
                format!("sections[{}].radius", i + 1),
                "radii non-increasing from proximal to distal",
            );
        }
    }
    if !geom.gripper_offset_length.is_finite() || !geom.gripper_offset_angle.is_finite() {
        report.push("gripper_offset", "finite values");
    }
    report
}

impl RobotGeometry {
    /// Loads a geometry from a JSON file and validates it.
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let geom: RobotGeometry = serde_json::from_str(text)?;
        let report = validate_geometry(&geom);
        if !report.is_valid() {
            return Err(ConfigError::InvalidGeometry(report.to_string()));
        }
        Ok(geom)
    }

    /// Joint limits implied by the actuator elongation ranges: `[0, max]`.
    pub fn joint_limits(&self) -> JointLimits {
        let mut upper = ActuatorVector::zeros();
        for (i, s) in self.sections.iter().enumerate().take(NUM_SECTIONS) {
            for j in 0..ACTUATORS_PER_SECTION {
                upper[i * ACTUATORS_PER_SECTION + j] = s.actuator_max_elongation;
            }
        }
        JointLimits {
            lower: ActuatorVector::zeros(),
            upper,
        }
    }

    /// Returns a copy with every length scaled by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        let mut out = self.clone();
        for s in &mut out.sections {
            s.radius *= k;
            s.initial_length *= k;
            s.plate_offset_length *= k;
            s.actuator_max_elongation *= k;
        }
        out.gripper_offset_length *= k;
        out
    }

    /// Axial and angular offset `(b, beta)` applied after section `i`.
    pub fn frame_offset(&self, i: usize) -> (f64, f64) {
        if i + 1 == self.sections.len() {
            (self.gripper_offset_length, self.gripper_offset_angle)
        } else {
            let s = &self.sections[i];
            (s.plate_offset_length, s.plate_offset_angle)
        }
    }

    /// Upper bound on the base-to-end-effector distance.
    pub fn max_reach(&self) -> f64 {
        self.sections
            .iter()
            .enumerate()
            .map(|(i, s)| {
                s.initial_length + s.actuator_max_elongation + self.frame_offset(i).0.abs()
            })
            .sum()
    }
}

/// Per-actuator elongation bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLimits {
    pub lower: ActuatorVector,
    pub upper: ActuatorVector,
}

impl JointLimits {
    pub fn is_valid(&self) -> bool {
        self.lower.iter().zip(self.upper.iter()).all(|(l, u)| l < u)
    }

    pub fn midpoint(&self) -> ActuatorVector {
        (self.lower + self.upper) * 0.5
    }

    /// True if `q` lies strictly inside every bound.
    pub fn contains_strict(&self, q: &ActuatorVector) -> bool {
        (0..NUM_ACTUATORS).all(|m| q[m] > self.lower[m] && q[m] < self.upper[m])
    }

    /// Flags actuators whose value lies outside `[lower, upper]`.
    pub fn violations(&self, q: &ActuatorVector) -> [bool; NUM_ACTUATORS] {
        std::array::from_fn(|m| q[m] < self.lower[m] || q[m] > self.upper[m])
    }

    /// Clamps `q` into the limit box shrunk by `margin` on each side.
    pub fn clamp_inside(&self, q: &ActuatorVector, margin: f64) -> ActuatorVector {
        ActuatorVector::from_fn(|m, _| {
            let lo = self.lower[m] + margin;
            let hi = self.upper[m] - margin;
            q[m].clamp(lo, hi)
        })
    }
}

/// The nine actuator elongations, ordered `[l11, l12, l13, l21, ..., l33]`.
///
/// Feasibility is not enforced here: the controller has to be able to hold
/// infeasible candidates in order to flag them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActuatorState {
    pub q: ActuatorVector,
}

impl ActuatorState {
    pub fn new(q: ActuatorVector) -> Self {
        ActuatorState { q }
    }

    pub fn zeros() -> Self {
        ActuatorState {
            q: ActuatorVector::zeros(),
        }
    }

    pub fn from_slice(values: &[f64]) -> Option<Self> {
        (values.len() == NUM_ACTUATORS).then(|| ActuatorState {
            q: ActuatorVector::from_column_slice(values),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().all(|v| v.is_finite())
    }

    /// Elongations of section `i` (0-based).
    pub fn section(&self, i: usize) -> [f64; ACTUATORS_PER_SECTION] {
        let base = i * ACTUATORS_PER_SECTION;
        [self.q[base], self.q[base + 1], self.q[base + 2]]
    }

    pub fn is_feasible(&self, limits: &JointLimits) -> bool {
        !self.infeasible_flags(limits).iter().any(|f| *f)
    }

    pub fn infeasible_flags(&self, limits: &JointLimits) -> [bool; NUM_ACTUATORS] {
        limits.violations(&self.q)
    }

    pub fn as_slice(&self) -> &[f64] {
        self.q.as_slice()
    }
}

impl Index<usize> for ActuatorState {
    type Output = f64;

    fn index(&self, m: usize) -> &f64 {
        &self.q[m]
    }
}

impl IndexMut<usize> for ActuatorState {
    fn index_mut(&mut self, m: usize) -> &mut f64 {
        &mut self.q[m]
    }
}

/// Commanded elongation for a supply pressure.
///
/// Negative pressures are not rejected; callers flag them as infeasible.
pub fn pressure_to_elongation(pressure_psi: f64) -> f64 {
    pressure_psi * METERS_PER_PSI
}

pub fn elongation_to_pressure(elongation_m: f64) -> f64 {
    elongation_m / METERS_PER_PSI
}

/// Pressures for every actuator plus a flag for each negative one.
pub fn pressures(q: &ActuatorState) -> ([f64; NUM_ACTUATORS], [bool; NUM_ACTUATORS]) {
    let p: [f64; NUM_ACTUATORS] = std::array::from_fn(|m| elongation_to_pressure(q[m]));
    let neg = std::array::from_fn(|m| p[m] < 0.0);
    (p, neg)
}
