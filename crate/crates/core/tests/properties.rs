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

use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use softarm::controller::{
    full_increment, jl_cost, jl_gradient, pose_error, position_jl_increment, GainSchedule,
    TaskError,
};
use softarm::geometry::{
    elongation_to_pressure, pressure_to_elongation, ActuatorState, ActuatorVector, RobotGeometry,
};
use softarm::jacobian::{jacobian, pinv, DEFAULT_SV_TOL};
use softarm::kinematics::{
    actuator_to_config, config_to_transform, forward_kinematics, Pose, SectionConfig,
};
use softarm::plant::{LowPassFilter, Plant, PlantConfig};
use softarm::so3::{exp_so3, orthonormality_error, skew, vee};
use softarm::vision::register_rigid;
use softarm_oracle::fd_gradient;

fn q_in(lo: f64, hi: f64) -> impl Strategy<Value = ActuatorState> {
    prop::array::uniform9(lo..hi).prop_map(|a| ActuatorState::new(ActuatorVector::from(a)))
}

fn vec3(r: f64) -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-r..r).prop_map(Vector3::from)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fk_rotation_is_orthonormal(q in q_in(-0.05, 0.15)) {
        let pose = forward_kinematics(&q, &RobotGeometry::default());
        prop_assert!(orthonormality_error(&pose.rotation) < 1e-9);
        prop_assert!(pose.rotation.determinant() > 0.0);
    }

    #[test]
    fn arc_length_identity(l in prop::array::uniform3(0.0..0.1f64)) {
        let section = RobotGeometry::default().sections[1];
        let c = actuator_to_config(l, &section);
        let expected = section.initial_length + (l[0] + l[1] + l[2]) / 3.0;
        prop_assert!(c.s >= 0.0 && c.phi >= 0.0);
        if !c.is_straight() {
            prop_assert!(c.lambda > 0.0);
            prop_assert!((c.lambda * c.phi - expected).abs() <= 1e-12 * expected);
        }
        prop_assert!((c.arc_length - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn small_bend_approaches_straight(arc in 0.15..0.25f64, theta in -std::f64::consts::PI..std::f64::consts::PI) {
        let phi = 1e-8;
        let bent = config_to_transform(&SectionConfig::bent(phi, arc / phi, theta));
        let straight = config_to_transform(&SectionConfig::straight(arc));
        prop_assert!((bent.position - straight.position).norm() < 1e-6);
    }

    #[test]
    fn vee_inverts_skew(w in vec3(10.0)) {
        prop_assert_eq!(vee(&skew(&w)), w);
    }

    #[test]
    fn pressure_maps_are_inverse(p in -100.0..300.0f64) {
        let back = elongation_to_pressure(pressure_to_elongation(p));
        prop_assert!((back - p).abs() <= 2.0 * f64::EPSILON * p.abs().max(1.0));
    }

    #[test]
    fn null_space_is_annihilated(q in q_in(0.005, 0.095)) {
        let jv = jacobian(&q, &RobotGeometry::default()).unwrap().jv;
        let projector = nalgebra::SMatrix::<f64, 9, 9>::identity() - pinv(&jv, DEFAULT_SV_TOL) * jv;
        prop_assert!((jv * projector).norm() < 1e-8);
    }

    #[test]
    fn secondary_tasks_do_not_disturb_position(
        q in q_in(0.005, 0.095),
        e_p in vec3(0.2),
        e_zeta in vec3(1.5),
    ) {
        let geom = RobotGeometry::default();
        let limits = geom.joint_limits();
        let jac = jacobian(&q, &geom).unwrap();
        let e = TaskError { e_p, e_zeta };
        let gains = GainSchedule::full_three_task();
        let full = full_increment(&q, &jac, &e, &gains, &limits, DEFAULT_SV_TOL);
        let expected = jac.jv * pinv(&jac.jv, DEFAULT_SV_TOL) * e_p * (gains.alpha * gains.gamma_position);
        prop_assert!((jac.jv * full - expected).norm() <= 1e-8 * expected.norm().max(1e-12));

        let pj = GainSchedule::position_jl();
        let with = position_jl_increment(&q, &jac, &e, &pj, &limits, DEFAULT_SV_TOL);
        let without = position_jl_increment(&q, &jac, &e, &pj.without_joint_limits(), &limits, DEFAULT_SV_TOL);
        prop_assert!((jac.jv * (with - without)).norm() <= 1e-8 * (jac.jv * without).norm().max(1e-12));
    }

    #[test]
    fn jl_gradient_is_derivative_of_cost(q in q_in(0.002, 0.098)) {
        let limits = RobotGeometry::default().joint_limits();
        let reference = fd_gradient(
            |x| jl_cost(&ActuatorState::new(ActuatorVector::from_row_slice(x)), &limits),
            q.as_slice(),
            1e-8,
        );
        let g = jl_gradient(&q, &limits);
        for (a, b) in g.iter().zip(&reference) {
            prop_assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
    }

    #[test]
    fn orientation_error_is_principal(a in vec3(3.1), b in vec3(3.1)) {
        let e = pose_error(&Pose::from_rotation(exp_so3(&a)), &Pose::from_rotation(exp_so3(&b)));
        prop_assert!(e.orientation_norm() <= std::f64::consts::PI + 1e-12);
    }

    #[test]
    fn registration_returns_proper_rotation(
        points in prop::collection::vec(vec3(1.0), 4..10),
        mirror in any::<bool>(),
        noise in prop::collection::vec(vec3(0.01), 10),
    ) {
        let flip = if mirror { Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0)) } else { Matrix3::identity() };
        let moved: Vec<_> = points.iter().zip(&noise).map(|(p, n)| flip * p + n).collect();
        if let Ok((t, rms)) = register_rigid(&points, &moved) {
            prop_assert!((t.rotation.determinant() - 1.0).abs() < 1e-9);
            prop_assert!(orthonormality_error(&t.rotation) < 1e-9);
            prop_assert!(rms.is_finite());
        }
    }

    #[test]
    fn filter_is_linear(xs in prop::collection::vec(vec3(1.0), 1..40), ys in prop::collection::vec(vec3(1.0), 40)) {
        let run = |input: &mut dyn Iterator<Item = Vector3<f64>>| {
            let mut f = LowPassFilter::new(10.0, 0.05);
            f.reset_zero();
            input.map(|x| f.update(x)).collect::<Vec<_>>()
        };
        let a = run(&mut xs.iter().copied());
        let b = run(&mut ys.iter().take(xs.len()).copied());
        let sum = run(&mut xs.iter().zip(&ys).map(|(x, y)| x + y));
        for ((s, x), y) in sum.iter().zip(&a).zip(&b) {
            prop_assert!((s - (x + y)).norm() < 1e-10);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn plant_is_reproducible(seed in any::<u64>(), q in q_in(-0.01, 0.11)) {
        let cfg = PlantConfig {
            position_noise_std: 5e-4,
            rotation_noise_std: 1e-3,
            rng_seed: seed,
            ..PlantConfig::ideal(RobotGeometry::default(), 0.05).with_random_mismatch(0.02, seed)
        };
        let drive = |cfg: &PlantConfig| {
            let mut plant = Plant::new(cfg.clone());
            plant.reset(&ActuatorState::new(ActuatorVector::from_element(0.05)));
            (0..5).map(|_| plant.apply_command(&q)).collect::<Vec<_>>()
        };
        let (a, b) = (drive(&cfg), drive(&cfg));
        prop_assert_eq!(&a, &b);
        let limits = cfg.true_geometry.joint_limits();
        let flags = a[0].infeasible_flags;
        for m in 0..9 {
            prop_assert_eq!(flags[m], q[m] < limits.lower[m] || q[m] > limits.upper[m]);
        }
    }
}
