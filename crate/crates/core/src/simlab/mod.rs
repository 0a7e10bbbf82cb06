//! Synthetic ground truth: scripted scenarios, rigid-contact forward
//! simulation, sensor-noise injection, and CSV log persistence.
//!
//! The simulator integrates the contact dynamics with semi-implicit Euler,
//! driving the joints with PD tracking plus a gravity-compensation
//! feedforward. Contact transitions follow the scenario schedule; touchdowns
//! are resolved by projecting the velocity onto the new constraint-consistent
//! subspace, and a per-step velocity projection keeps stance feet pinned to
//! machine precision.

mod logio;
mod scenario;

pub use logio::{read_log, write_log};
pub use scenario::{
    build_scenario, ReferenceTrajectory, Scenario, ScenarioKind, NOMINAL_BASE_HEIGHT,
};

use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector3};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constrained_dynamics::{kkt_forward_dynamics, nullspace_projector, DynamicsError};
use crate::kinodynamics::{
    centroidal_momentum, contact_jacobian, nonlinear_terms, CentroidalState, ContactSet,
    GeneralizedState,
};
use crate::math::least_norm_solve;
use crate::model::RobotModel;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    BadScenario(String),
    #[error("scenario infeasible at t = {time:.3}s: foot {foot} IK residual {residual:.3e} m")]
    InfeasibleScenario { time: f64, foot: usize, residual: f64 },
    #[error("simulation diverged at t = {time:.3}s: {reason}")]
    SimulationDiverged { time: f64, reason: String },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("log format error at line {line}: {message}")]
    Format { line: usize, message: String },
}

/// One timestamped simulation sample with ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LogFrame {
    pub t: f64,
    /// Configuration, `n+7` entries (orientation scalar-last).
    pub q: DVector<f64>,
    /// Generalized velocity, `n+6` entries.
    pub v: DVector<f64>,
    /// Applied joint torques, `n` entries.
    pub tau: DVector<f64>,
    /// True contact flags per foot.
    pub contact_truth: Vec<bool>,
    /// True centroidal state.
    pub x_truth: CentroidalState,
}

/// A complete simulation log at a constant sample period.
#[derive(Debug, Clone, PartialEq)]
pub struct Log {
    pub frames: Vec<LogFrame>,
    pub n_joints: usize,
    pub n_feet: usize,
}

impl Log {
    /// Sample period, s.
    pub fn dt(&self) -> f64 {
        if self.frames.len() < 2 {
            return 0.0;
        }
        self.frames[1].t - self.frames[0].t
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Standard deviations of the injected sensor noise. All noise is zero-mean
/// Gaussian; the orientation is perturbed in the tangent space.
/// `sigma_base_vel` applies to all six base velocity coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseInjection {
    pub sigma_joint_pos: f64,
    pub sigma_joint_vel: f64,
    pub sigma_torque: f64,
    pub sigma_base_pos: f64,
    pub sigma_base_vel: f64,
    pub sigma_base_ori: f64,
    pub seed: u64,
}

impl NoiseInjection {
    /// Noise levels that leave the directly computed momenta visibly noisy
    /// but keep the raw signal usable.
    pub fn default_preset(seed: u64) -> Self {
        NoiseInjection {
            sigma_joint_pos: 1e-3,
            sigma_joint_vel: 2e-2,
            sigma_torque: 2e-2,
            sigma_base_pos: 2e-3,
            sigma_base_vel: 1e-2,
            sigma_base_ori: 2e-3,
            seed,
        }
    }

    /// All standard deviations zero.
    pub fn none(seed: u64) -> Self {
        NoiseInjection {
            sigma_joint_pos: 0.0,
            sigma_joint_vel: 0.0,
            sigma_torque: 0.0,
            sigma_base_pos: 0.0,
            sigma_base_vel: 0.0,
            sigma_base_ori: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let sigmas = [
            self.sigma_joint_pos,
            self.sigma_joint_vel,
            self.sigma_torque,
            self.sigma_base_pos,
            self.sigma_base_vel,
            self.sigma_base_ori,
        ];
        if sigmas.iter().any(|s| *s < 0.0 || !s.is_finite()) {
            return Err(SimError::BadScenario(
                "noise standard deviations must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Joint-space PD gains of the tracking controller.
#[derive(Debug, Clone, Copy)]
pub struct ControllerGains {
    /// N·m per rad.
    pub kp: f64,
    /// N·m per rad/s.
    pub kd: f64,
}

impl Default for ControllerGains {
    /// The damping gain must stay below `2 I_min / dt` (the explicit-Euler
    /// damping stability limit of the lightest distal link, about 0.86 at
    /// 1 kHz for the default model); 0.2 keeps the knee near critically
    /// damped with a 4x stability margin.
    fn default() -> Self {
        ControllerGains { kp: 30.0, kd: 0.2 }
    }
}

/// Least-norm static feedforward: torques `τ` (with implied contact forces)
/// such that `B τ + J_cᵀ λ = n(q, 0)`. With no contacts this reduces to the
/// joint-space gravity terms.
pub fn gravity_compensation(
    model: &RobotModel,
    state: &GeneralizedState,
    contacts: &ContactSet,
) -> DVector<f64> {
    let rest = state.with_velocity(DVector::zeros(model.nv()));
    let bias = nonlinear_terms(model, &rest);
    let jac = contact_jacobian(model, &rest, contacts);
    let nv = model.nv();
    let n = model.n_joints();
    let nc = jac.nrows();
    let mut g = DMatrix::zeros(nv, n + nc);
    g.view_mut((0, 0), (nv, n))
        .copy_from(&model.selection_matrix());
    if nc > 0 {
        g.view_mut((0, n), (nv, nc)).copy_from(&jac.transpose());
    }
    least_norm_solve(&g, &bias, 1e-12).rows(0, n).clone_owned()
}

/// Simulate a scenario and return the noise-free ground-truth log.
///
/// Dynamics are the rigid-contact KKT equations integrated with semi-implicit
/// Euler at `scenario.dt_sim`; torques come from joint PD on the scenario
/// references plus gravity-compensation feedforward.
pub fn simulate(
    model: &RobotModel,
    scenario: &Scenario,
    gains: &ControllerGains,
) -> Result<Log, SimError> {
    let refs = build_scenario(model, scenario)?;
    simulate_with_references(model, scenario, gains, &refs)
}

/// Simulate against a prebuilt reference trajectory.
pub fn simulate_with_references(
    model: &RobotModel,
    scenario: &Scenario,
    gains: &ControllerGains,
    refs: &ReferenceTrajectory,
) -> Result<Log, SimError> {
    let n = model.n_joints();
    let dt = refs.dt;
    let frames = refs.len();

    let mut state = GeneralizedState::at_pose(
        model,
        refs.base_positions[0],
        UnitQuaternion::identity(),
    );
    for j in 0..n {
        state.set_joint_position(j, refs.joint_positions[0][j]);
    }

    let mut log_frames = Vec::with_capacity(frames);
    let mut previous = ContactSet::from_flags(&refs.contact_schedule[0]);
    let mut max_constraint_drift: f64 = 0.0;

    for k in 0..frames {
        let t = k as f64 * dt;
        let contacts = ContactSet::from_flags(&refs.contact_schedule[k]);

        // touchdown impact: project the velocity onto the new constraint set
        let gained_contact = contacts.active().iter().any(|f| !previous.contains(*f));
        if gained_contact {
            let nproj = nullspace_projector(model, &state, &contacts);
            state = state.with_velocity(&nproj * state.v());
        }

        // joint PD + gravity-compensation feedforward
        let tau_ff = gravity_compensation(model, &state, &contacts);
        let q_joints = state.joint_positions();
        let v_joints = state.joint_velocities();
        let mut tau = tau_ff;
        for j in 0..n {
            tau[j] += gains.kp * (refs.joint_positions[k][j] - q_joints[j])
                + gains.kd * (refs.joint_velocities[k][j] - v_joints[j]);
        }

        log_frames.push(LogFrame {
            t,
            q: state.q().clone(),
            v: state.v().clone(),
            tau: tau.clone(),
            contact_truth: contacts.flags(model.n_feet()),
            x_truth: centroidal_momentum(model, &state),
        });

        let (vdot, _lambda) = kkt_forward_dynamics(model, &state, &tau, &contacts)?;
        let v_next = state.v() + vdot * dt;
        let mut next = state.perturbed(&(&v_next * dt)).with_velocity(v_next);

        if !contacts.is_empty() {
            let jac = contact_jacobian(model, &next, &contacts);
            let drift = (&jac * next.v()).norm();
            max_constraint_drift = max_constraint_drift.max(drift);
            if drift > 1e-2 {
                return Err(SimError::SimulationDiverged {
                    time: t,
                    reason: format!("contact velocity drift {drift:.3e}"),
                });
            }
            if drift > 1e-10 {
                let nproj = nullspace_projector(model, &next, &contacts);
                next = next.with_velocity(&nproj * next.v());
            }
        }
        if next.v().norm() > 1e3 {
            return Err(SimError::SimulationDiverged {
                time: t,
                reason: format!("velocity norm {:.3e}", next.v().norm()),
            });
        }

        state = next;
        previous = contacts;
    }

    log::info!(
        "simulated {} frames of '{}'; max contact velocity drift {max_constraint_drift:.3e}",
        frames,
        scenario.kind.name()
    );

    Ok(Log {
        frames: log_frames,
        n_joints: n,
        n_feet: model.n_feet(),
    })
}

/// Add sensor noise to a log. Ground-truth fields (`t`, contact flags,
/// `x_truth`) are untouched; the same seed always produces the same output.
pub fn inject_noise(log: &Log, noise: &NoiseInjection) -> Result<Log, SimError> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let standard = Normal::new(0.0, 1.0).expect("unit normal");
    let draw = |sigma: f64, rng: &mut ChaCha8Rng| -> f64 {
        let sample: f64 = standard.sample(rng);
        sigma * sample
    };

    let n = log.n_joints;
    let mut frames = Vec::with_capacity(log.frames.len());
    for frame in &log.frames {
        let mut q = frame.q.clone();
        let mut v = frame.v.clone();
        let mut tau = frame.tau.clone();

        for i in 0..3 {
            q[i] += draw(noise.sigma_base_pos, &mut rng);
        }
        let dw = Vector3::new(
            draw(noise.sigma_base_ori, &mut rng),
            draw(noise.sigma_base_ori, &mut rng),
            draw(noise.sigma_base_ori, &mut rng),
        );
        if noise.sigma_base_ori > 0.0 {
            let rot = crate::math::quat_from_xyzw(q[3], q[4], q[5], q[6]);
            let perturbed = UnitQuaternion::new_normalize(
                (UnitQuaternion::from_scaled_axis(dw) * rot).into_inner(),
            );
            let [x, y, z, w] = crate::math::quat_to_xyzw(&perturbed);
            q[3] = x;
            q[4] = y;
            q[5] = z;
            q[6] = w;
        }
        for j in 0..n {
            q[7 + j] += draw(noise.sigma_joint_pos, &mut rng);
        }
        for i in 0..6 {
            v[i] += draw(noise.sigma_base_vel, &mut rng);
        }
        for j in 0..n {
            v[6 + j] += draw(noise.sigma_joint_vel, &mut rng);
        }
        for j in 0..n {
            tau[j] += draw(noise.sigma_torque, &mut rng);
        }

        frames.push(LogFrame {
            t: frame.t,
            q,
            v,
            tau,
            contact_truth: frame.contact_truth.clone(),
            x_truth: frame.x_truth,
        });
    }
    Ok(Log {
        frames,
        n_joints: log.n_joints,
        n_feet: log.n_feet,
    })
}
