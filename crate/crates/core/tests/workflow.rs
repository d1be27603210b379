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

mod common;

use common::scenarios_dir;
use softarm::scenario::{run_scenario, Scenario};
use softarm::workflow::{HarvestState, Stage, TargetSource};

#[test]
fn noisy_cameras_keep_stage_invariants() {
    let mut scenario = Scenario::load(scenarios_dir().join("harvest_default.json")).unwrap();
    let harvest = scenario.config.harvest.as_mut().unwrap();
    harvest.camera_noise_std = 0.001;
    harvest.registration_noise_std = 0.001;
    scenario.config.repetitions = 2;
    let out = run_scenario(&scenario);
    assert_eq!(out.harvest_logs.len(), 4);
    for log in &out.harvest_logs {
        assert_eq!(log.state, HarvestState::Done, "{:?}", log.stages);
        assert!(log.fine_distance.unwrap() < 0.02);
        let order: Vec<Stage> = log.stages.iter().map(|s| s.stage).collect();
        assert_eq!(order, Stage::ALL.to_vec());
        // Stages never revert once left.
        let ranks: Vec<usize> = log.steps.iter().map(|s| s.stage as usize).collect();
        assert!(ranks.windows(2).all(|w| w[0] <= w[1]));
        assert!(log
            .steps_in(Stage::FinePositioning)
            .all(|s| s.source != TargetSource::C1));
        assert!(log
            .steps_in(Stage::InitialPlacement)
            .all(|s| s.source != TargetSource::C2));
    }
}
