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

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::Vector3;
use softarm::controller::{solve, step, ControlMode, ControllerConfig, GainSchedule};
use softarm::geometry::{ActuatorState, ActuatorVector, RobotGeometry};
use softarm::jacobian::{jacobian, pinv, DEFAULT_SV_TOL};
use softarm::kinematics::{forward_kinematics, Pose};
use softarm::plant::ModelFeedback;

fn bent() -> ActuatorState {
    ActuatorState::new(ActuatorVector::from_column_slice(&[
        0.054, 0.05, 0.05, 0.05, 0.047, 0.05, 0.05, 0.05, 0.055,
    ]))
}

fn kinematics(c: &mut Criterion) {
    let geom = RobotGeometry::default();
    let q = bent();
    c.bench_function("forward_kinematics", |b| {
        b.iter(|| forward_kinematics(black_box(&q), &geom))
    });
    c.bench_function("jacobian", |b| b.iter(|| jacobian(black_box(&q), &geom)));
    let jac = jacobian(&q, &geom).unwrap();
    let stacked = jac.stacked();
    c.bench_function("pinv_6x9", |b| {
        b.iter(|| pinv(black_box(&stacked), DEFAULT_SV_TOL))
    });
}

fn control(c: &mut Criterion) {
    let geom = RobotGeometry::default();
    let q = bent();
    let here = forward_kinematics(&q, &geom);
    let desired = Pose::new(
        here.position + Vector3::new(0.05, -0.03, -0.02),
        here.rotation,
    );
    let cfg = ControllerConfig::new(ControlMode::FullThreeTask, geom.joint_limits());
    let gains = GainSchedule::full_three_task();
    c.bench_function("full_three_task_step", |b| {
        b.iter(|| step(&geom, black_box(&q), &desired, &here, &gains, &cfg))
    });
    let cfg = ControllerConfig::new(ControlMode::PositionWithJL, geom.joint_limits());
    let gains = GainSchedule::position_jl();
    c.bench_function("position_solve", |b| {
        b.iter(|| {
            let mut fb = ModelFeedback::new(geom.clone());
            solve(black_box(&q), &desired, &geom, &gains, &cfg, &mut fb)
        })
    });
}

criterion_group!(benches, kinematics, control);
criterion_main!(benches);
