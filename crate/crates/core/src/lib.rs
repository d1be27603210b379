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
//! Kinematics, task-priority control and a closed-loop simulator for a
//! three-section, nine-actuator pneumatic continuum arm.
//!
//! The arm is modeled with piecewise constant curvature: each section bends
//! as a circular arc whose shape is set by the elongation of its three
//! actuators. The crate provides
//!
//! - [`kinematics`]: actuator, configuration and task space maps,
//! - [`jacobian`]: differential kinematics and pseudoinverse tools,
//! - [`controller`]: resolved-rate laws with gain-scheduled joint-limit
//!   avoidance and a closed-loop [`controller::solve`],
//! - [`plant`]: a simulated arm with model mismatch, noise and filtering,
//! - [`vision`]: the two-camera frame chain and point registration,
//! - [`workflow`]: the staged harvesting state machine,
//! - [`scenario`]: config files, runners and CSV/JSON reports.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod error;
pub mod geometry;
pub mod jacobian;
pub mod kinematics;
pub mod plant;
pub mod scenario;
pub mod so3;
pub mod vision;
pub mod workflow;

pub use controller::{
    pose_error, solve, ControlMode, ControllerConfig, GainSchedule, JointLimitSchedule, TaskError,
    Termination, Trajectory,
};
pub use error::{ConfigError, JacobianError, RegistrationError, VisionError};
pub use geometry::{
    validate_geometry, ActuatorState, ActuatorVector, JointLimits, RobotGeometry, SectionGeometry,
    NUM_ACTUATORS,
};
pub use jacobian::{jacobian, Jacobian6x9};
pub use kinematics::{forward_kinematics, Pose, SectionConfig};
pub use plant::{Feedback, ModelFeedback, Plant, PlantConfig, PlantObservation};
