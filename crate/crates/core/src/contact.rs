//! Contact detection from joint torques.
//!
//! Each leg's measured torques are projected through the transpose-inverse of
//! that leg's own 3x3 foot Jacobian into an estimate of the ground reaction
//! force at the foot (leg dynamics and gravity neglected). A Schmitt trigger
//! on the normal component then decides per-foot contact, with hysteresis to
//! keep switching chatter-free.

use nalgebra::{DMatrix, DVector, Vector3};
use thiserror::Error;

use crate::kinodynamics::{ContactSet, GeneralizedState, Kinematics};
use crate::math::{condition_number, damped_pseudo_inverse, pseudo_inverse};
use crate::model::RobotModel;

/// Leg Jacobian condition number above which the damped inverse is used and a
/// warning is logged (stretched-knee singularity).
pub const LEG_CONDITION_WARN: f64 = 1e6;

/// Threshold/hysteresis configuration for the per-foot Schmitt trigger.
#[derive(Debug, Clone)]
pub struct ContactDetectorConfig {
    /// Normal force above which a foot enters contact, N.
    pub normal_threshold: f64,
    /// A foot leaves contact below `normal_threshold - hysteresis`, N.
    pub hysteresis: f64,
    /// World-frame upward normal.
    pub normal_axis: Vector3<f64>,
}

#[derive(Debug, Error)]
pub enum ContactConfigError {
    #[error("normal threshold must be positive, got {0}")]
    NonPositiveThreshold(f64),
    #[error("hysteresis must satisfy 0 <= h < threshold, got {0}")]
    BadHysteresis(f64),
    #[error("normal axis must have unit norm, got {0}")]
    NonUnitAxis(f64),
}

impl ContactDetectorConfig {
    pub fn new(
        normal_threshold: f64,
        hysteresis: f64,
        normal_axis: Vector3<f64>,
    ) -> Result<Self, ContactConfigError> {
        if !(normal_threshold > 0.0) {
            return Err(ContactConfigError::NonPositiveThreshold(normal_threshold));
        }
        if !(0.0..normal_threshold).contains(&hysteresis) {
            return Err(ContactConfigError::BadHysteresis(hysteresis));
        }
        if (normal_axis.norm() - 1.0).abs() > 1e-9 {
            return Err(ContactConfigError::NonUnitAxis(normal_axis.norm()));
        }
        Ok(ContactDetectorConfig {
            normal_threshold,
            hysteresis,
            normal_axis,
        })
    }
}

impl Default for ContactDetectorConfig {
    /// Tuning for the ~2.5 kg default quadruped: 3 N threshold, 1 N
    /// hysteresis, world z normal.
    fn default() -> Self {
        ContactDetectorConfig {
            normal_threshold: 3.0,
            hysteresis: 1.0,
            normal_axis: Vector3::z(),
        }
    }
}

/// Estimate the ground reaction force at every foot by projecting that leg's
/// torques through its own foot Jacobian: `λ̂ = -(J_legᵀ)⁺ τ_leg`.
///
/// Near a leg singularity (condition number above [`LEG_CONDITION_WARN`]) the
/// force is reported through a damped inverse and a warning is logged.
pub fn estimate_foot_forces(
    model: &RobotModel,
    state: &GeneralizedState,
    torques: &DVector<f64>,
) -> Vec<Vector3<f64>> {
    assert_eq!(torques.len(), model.n_joints(), "torque dimension mismatch");
    let kin = Kinematics::compute(model, state);
    let mut forces = Vec::with_capacity(model.n_feet());
    for foot in 0..model.n_feet() {
        let leg = model.leg_joints(foot);
        let frame = &model.foot_frames()[foot];
        let point = kin.foot_position(model, foot);
        let full = kin.point_jacobian(model, frame.link, &point);
        // leg-local Jacobian block: foot linear velocity per leg joint rate
        let mut jac = DMatrix::zeros(3, leg.len());
        for (col, &j) in leg.iter().enumerate() {
            jac.view_mut((0, col), (3, 1))
                .copy_from(&full.view((0, 6 + j), (3, 1)));
        }
        let mut tau_leg = DVector::zeros(leg.len());
        for (row, &j) in leg.iter().enumerate() {
            tau_leg[row] = torques[j];
        }
        let jt = jac.transpose();
        let cond = condition_number(&jt);
        let inv = if cond > LEG_CONDITION_WARN {
            log::warn!(
                "leg of foot '{}' is near singular (condition {cond:.3e}); damping the force estimate",
                frame.name
            );
            let damping = 1e-3 * jt.clone().singular_values().max();
            damped_pseudo_inverse(&jt, damping)
        } else {
            pseudo_inverse(&jt, 1e-12)
        };
        let lambda = -(inv * tau_leg);
        forces.push(Vector3::new(lambda[0], lambda[1], lambda[2]));
    }
    forces
}

/// Per-foot Schmitt trigger on the normal force component.
///
/// A foot enters contact when its normal force rises strictly above the
/// threshold and leaves when it falls strictly below `threshold -
/// hysteresis`; a force exactly at a boundary keeps the previous state.
pub fn detect_contacts(
    forces: &[Vector3<f64>],
    config: &ContactDetectorConfig,
    previous: &ContactSet,
) -> ContactSet {
    let flags: Vec<bool> = forces
        .iter()
        .enumerate()
        .map(|(foot, force)| {
            let normal = force.dot(&config.normal_axis);
            if previous.contains(foot) {
                !(normal < config.normal_threshold - config.hysteresis)
            } else {
                normal > config.normal_threshold
            }
        })
        .collect();
    ContactSet::from_flags(&flags)
}

/// Stateful detector owning the previous contact set.
#[derive(Debug, Clone)]
pub struct ContactDetector {
    config: ContactDetectorConfig,
    state: ContactSet,
}

impl ContactDetector {
    pub fn new(config: ContactDetectorConfig, initial: ContactSet) -> Self {
        ContactDetector {
            config,
            state: initial,
        }
    }

    pub fn config(&self) -> &ContactDetectorConfig {
        &self.config
    }

    pub fn current(&self) -> &ContactSet {
        &self.state
    }

    /// Update from one torque frame and return the new contact set.
    pub fn update(
        &mut self,
        model: &RobotModel,
        state: &GeneralizedState,
        torques: &DVector<f64>,
    ) -> ContactSet {
        let forces = estimate_foot_forces(model, state, torques);
        self.state = detect_contacts(&forces, &self.config, &self.state);
        self.state.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::default_quadruped;
    use crate::testutil::{random_stance_state, rng};
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn zero_torques_zero_forces() {
        let model = default_quadruped();
        let mut r = rng(70);
        let state = random_stance_state(&model, &mut r);
        let forces = estimate_foot_forces(&model, &state, &DVector::zeros(12));
        assert_eq!(forces.len(), 4);
        for f in forces {
            assert_eq!(f.norm(), 0.0);
        }
    }

    #[test]
    fn pseudoinverse_round_trip() {
        let model = default_quadruped();
        let mut r = rng(71);
        let state = random_stance_state(&model, &mut r);
        let kin = Kinematics::compute(&model, &state);
        // pick a known reaction force per foot and build the matching torques
        let mut torques = DVector::zeros(12);
        let mut expected = Vec::new();
        for foot in 0..4 {
            let f = Vector3::new(
                r.gen_range(-3.0..3.0),
                r.gen_range(-3.0..3.0),
                r.gen_range(1.0..10.0),
            );
            let frame = &model.foot_frames()[foot];
            let point = kin.foot_position(&model, foot);
            let full = kin.point_jacobian(&model, frame.link, &point);
            for (row, &j) in model.leg_joints(foot).iter().enumerate() {
                let col = full.view((0, 6 + j), (3, 1)).clone_owned();
                torques[j] = -(col.transpose() * f)[(0, 0)];
                let _ = row;
            }
            expected.push(f);
        }
        let forces = estimate_foot_forces(&model, &state, &torques);
        for foot in 0..4 {
            assert_relative_eq!(forces[foot], expected[foot], epsilon = 1e-9);
        }
    }

    #[test]
    fn detect_all_zero_forces_empty() {
        let config = ContactDetectorConfig::default();
        let forces = vec![Vector3::zeros(); 4];
        let set = detect_contacts(&forces, &config, &ContactSet::all(4));
        assert!(set.is_empty());
    }

    #[test]
    fn exact_threshold_keeps_previous_state() {
        let config = ContactDetectorConfig::default();
        let at_threshold = vec![Vector3::new(0.0, 0.0, config.normal_threshold); 4];
        // previously out: stays out
        let set = detect_contacts(&at_threshold, &config, &ContactSet::empty());
        assert!(set.is_empty());
        // previously in: stays in
        let set = detect_contacts(&at_threshold, &config, &ContactSet::all(4));
        assert_eq!(set.len(), 4);
    }

    #[test]
    fn hysteresis_band_retains_contact() {
        let config = ContactDetectorConfig::default();
        let in_band = vec![Vector3::new(0.0, 0.0, 2.5); 4]; // between 2.0 and 3.0
        let set = detect_contacts(&in_band, &config, &ContactSet::all(4));
        assert_eq!(set.len(), 4);
        let set = detect_contacts(&in_band, &config, &ContactSet::empty());
        assert!(set.is_empty());
    }

    #[test]
    fn detection_monotone_in_threshold() {
        // raising the threshold never adds contacts on a fixed force log
        let mut r = rng(72);
        let mut previous_low = ContactSet::empty();
        let mut previous_high = ContactSet::empty();
        let low = ContactDetectorConfig::new(2.0, 0.5, Vector3::z()).unwrap();
        let high = ContactDetectorConfig::new(4.0, 0.5, Vector3::z()).unwrap();
        for _ in 0..500 {
            let forces: Vec<Vector3<f64>> = (0..4)
                .map(|_| Vector3::new(0.0, 0.0, r.gen_range(-1.0..8.0)))
                .collect();
            previous_low = detect_contacts(&forces, &low, &previous_low);
            previous_high = detect_contacts(&forces, &high, &previous_high);
            for foot in previous_high.active() {
                assert!(
                    previous_low.contains(*foot),
                    "foot {foot} detected at high threshold but not low"
                );
            }
        }
    }

    #[test]
    fn hysteresis_reduces_switching() {
        let mut r = rng(73);
        // noisy force hovering around the threshold
        let log: Vec<Vec<Vector3<f64>>> = (0..2000)
            .map(|_| vec![Vector3::new(0.0, 0.0, 3.0 + r.gen_range(-0.8..0.8))])
            .collect();
        let count_switches = |hysteresis: f64| {
            let config = ContactDetectorConfig::new(3.0, hysteresis, Vector3::z()).unwrap();
            let mut prev = ContactSet::empty();
            let mut switches = 0;
            for forces in &log {
                let next = detect_contacts(forces, &config, &prev);
                if next.contains(0) != prev.contains(0) {
                    switches += 1;
                }
                prev = next;
            }
            switches
        };
        assert!(count_switches(1.0) <= count_switches(0.0));
    }

    #[test]
    fn rejects_bad_config() {
        assert!(ContactDetectorConfig::new(0.0, 0.0, Vector3::z()).is_err());
        assert!(ContactDetectorConfig::new(3.0, 3.0, Vector3::z()).is_err());
        assert!(ContactDetectorConfig::new(3.0, -0.1, Vector3::z()).is_err());
        assert!(ContactDetectorConfig::new(3.0, 1.0, Vector3::z() * 2.0).is_err());
    }
}
