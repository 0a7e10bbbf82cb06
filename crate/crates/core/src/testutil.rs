//! Shared helpers for unit tests: small models, random states, and
//! brute-force oracles kept independent of the code paths they check.

use nalgebra::{DVector, Matrix3, UnitQuaternion, Vector3, Vector6};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::kinodynamics::{GeneralizedState, Kinematics, Velocities};
use crate::model::{JointSpec, JointType, LinkSpec, RobotModel};

/// A single floating rigid body with the given mass, CoM offset, and diagonal
/// inertia.
pub fn single_body_model(
    mass: f64,
    com_offset: Vector3<f64>,
    inertia_diag: Vector3<f64>,
    gravity: Vector3<f64>,
) -> RobotModel {
    let links = vec![LinkSpec {
        name: "body".into(),
        mass,
        com_offset,
        rotational_inertia: Matrix3::from_diagonal(&inertia_diag),
    }];
    let joints = vec![JointSpec {
        name: "root".into(),
        parent: "world".into(),
        child: "body".into(),
        joint_type: JointType::Floating,
        axis: Vector3::zeros(),
        placement_translation: Vector3::zeros(),
        placement_rotation: UnitQuaternion::identity(),
    }];
    RobotModel::new(links, joints, vec![], gravity).unwrap()
}

/// Floating base carrying one revolute link with a foot at its tip; used for
/// pendulum-style sanity checks.
pub fn base_plus_arm_model() -> RobotModel {
    let links = vec![
        LinkSpec {
            name: "base".into(),
            mass: 1.0,
            com_offset: Vector3::zeros(),
            rotational_inertia: Matrix3::from_diagonal(&Vector3::new(0.01, 0.01, 0.01)),
        },
        LinkSpec {
            name: "arm".into(),
            mass: 0.2,
            com_offset: Vector3::new(0.0, 0.0, -0.15),
            rotational_inertia: Matrix3::from_diagonal(&Vector3::new(1.5e-3, 1.5e-3, 1e-5)),
        },
    ];
    let joints = vec![
        JointSpec {
            name: "root".into(),
            parent: "world".into(),
            child: "base".into(),
            joint_type: JointType::Floating,
            axis: Vector3::zeros(),
            placement_translation: Vector3::zeros(),
            placement_rotation: UnitQuaternion::identity(),
        },
        JointSpec {
            name: "shoulder".into(),
            parent: "base".into(),
            child: "arm".into(),
            joint_type: JointType::Revolute,
            axis: Vector3::y(),
            placement_translation: Vector3::new(0.0, 0.0, -0.05),
            placement_rotation: UnitQuaternion::identity(),
        },
    ];
    let feet = vec![("tip".to_string(), "arm".to_string(), Vector3::new(0.0, 0.0, -0.3))];
    RobotModel::new(links, joints, feet, Vector3::new(0.0, 0.0, -9.81)).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random state: bounded random base pose, joint angles within ±1.2 rad, and
/// velocities of order one.
pub fn random_state(model: &RobotModel, rng: &mut ChaCha8Rng) -> GeneralizedState {
    let mut state = GeneralizedState::neutral(model);
    state.set_base_position(Vector3::new(
        rng.gen_range(-0.5..0.5),
        rng.gen_range(-0.5..0.5),
        rng.gen_range(0.1..0.5),
    ));
    let axis = Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    let angle = rng.gen_range(0.0..0.6);
    if axis.norm() > 1e-6 {
        state.set_base_orientation(UnitQuaternion::from_scaled_axis(axis.normalize() * angle));
    }
    for j in 0..model.n_joints() {
        state.set_joint_position(j, rng.gen_range(-1.2..1.2));
    }
    state.set_base_linear_velocity(Vector3::new(
        rng.gen_range(-0.5..0.5),
        rng.gen_range(-0.5..0.5),
        rng.gen_range(-0.5..0.5),
    ));
    state.set_base_angular_velocity(Vector3::new(
        rng.gen_range(-0.5..0.5),
        rng.gen_range(-0.5..0.5),
        rng.gen_range(-0.5..0.5),
    ));
    for j in 0..model.n_joints() {
        state.set_joint_velocity(j, rng.gen_range(-1.0..1.0));
    }
    state
}

/// Random stance configuration of the default quadruped: legs bent near the
/// nominal crouch so the contact Jacobian is well-conditioned.
pub fn random_stance_state(model: &RobotModel, rng: &mut ChaCha8Rng) -> GeneralizedState {
    let mut state = GeneralizedState::neutral(model);
    state.set_base_position(Vector3::new(
        rng.gen_range(-0.2..0.2),
        rng.gen_range(-0.2..0.2),
        rng.gen_range(0.18..0.24),
    ));
    for leg in 0..4 {
        state.set_joint_position(3 * leg, rng.gen_range(-0.15..0.15));
        state.set_joint_position(3 * leg + 1, 0.7 + rng.gen_range(-0.2..0.2));
        state.set_joint_position(3 * leg + 2, -1.4 + rng.gen_range(-0.3..0.3));
    }
    state.set_base_linear_velocity(Vector3::new(
        rng.gen_range(-0.4..0.4),
        rng.gen_range(-0.4..0.4),
        rng.gen_range(-0.4..0.4),
    ));
    state.set_base_angular_velocity(Vector3::new(
        rng.gen_range(-0.4..0.4),
        rng.gen_range(-0.4..0.4),
        rng.gen_range(-0.4..0.4),
    ));
    for j in 0..model.n_joints() {
        state.set_joint_velocity(j, rng.gen_range(-0.4..0.4));
    }
    state
}

/// Random torque vector of order `scale`.
pub fn random_torques(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-scale..scale))
}

/// Brute-force centroidal momentum: per-link spatial momenta from link
/// velocities, shifted to the robot CoM. Independent of the mass-matrix
/// route used by `cmm`.
pub fn link_momentum_sum(model: &RobotModel, state: &GeneralizedState) -> Vector6<f64> {
    let kin = Kinematics::compute(model, state);
    let vel = Velocities::compute(model, &kin, state);
    let com = crate::kinodynamics::com_position(model, state);
    let mut linear = Vector3::zeros();
    let mut angular = Vector3::zeros();
    for (link, spec) in model.links().iter().enumerate() {
        let p = spec.mass * vel.com_vel[link];
        linear += p;
        angular += kin.inertia_w[link] * vel.ang[link] + (kin.com[link] - com).cross(&p);
    }
    let mut h = Vector6::zeros();
    h.fixed_rows_mut::<3>(0).copy_from(&linear);
    h.fixed_rows_mut::<3>(3).copy_from(&angular);
    h
}
