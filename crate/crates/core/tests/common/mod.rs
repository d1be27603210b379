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

#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softarm::geometry::{ActuatorState, ActuatorVector, RobotGeometry, NUM_ACTUATORS};
use softarm_oracle::{RefArm, RefSection};

pub fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn ref_arm(geom: &RobotGeometry) -> RefArm {
    let n = geom.sections.len();
    let sections = std::array::from_fn(|i| {
        let s = &geom.sections[i];
        let (offset_length, offset_angle) = if i + 1 == n {
            (geom.gripper_offset_length, geom.gripper_offset_angle)
        } else {
            (s.plate_offset_length, s.plate_offset_angle)
        };
        RefSection {
            radius: s.radius,
            initial_length: s.initial_length,
            offset_length,
            offset_angle,
        }
    });
    RefArm { sections }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform `q` in `[lo, hi]^9`.
pub fn random_q(rng: &mut impl Rng, lo: f64, hi: f64) -> ActuatorState {
    ActuatorState::new(ActuatorVector::from_fn(|_, _| rng.random_range(lo..=hi)))
}

pub fn as_array(q: &ActuatorState) -> [f64; NUM_ACTUATORS] {
    std::array::from_fn(|m| q[m])
}
