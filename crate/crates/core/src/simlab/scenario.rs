//! Scripted motion scenarios and their reference trajectories.
//!
//! Each scenario produces per-frame joint position/rate targets and a contact
//! schedule from closed-form base and foot curves, using an analytic 3-DoF
//! leg inverse kinematics for the built-in quadruped geometry. Foot touchdown
//! and liftoff curves have zero end velocity so the scheduled contact
//! switches happen at near-zero foot speed.

use nalgebra::{DVector, Rotation3, Vector3};

use crate::kinodynamics::{GeneralizedState, Kinematics};
use crate::model::{RobotModel, DEFAULT_HIP_OFFSET, DEFAULT_LEG_SEGMENT};

use super::SimError;

/// The three built-in motions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    /// Move the base while all four feet stay in contact.
    BalanceBase,
    /// Forward trot alternating diagonal feet pairs.
    Trot,
    /// Jump in place with a flight phase and touchdown impacts.
    Jump,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::BalanceBase => "balance_base",
            ScenarioKind::Trot => "trot",
            ScenarioKind::Jump => "jump",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "balance_base" => Some(ScenarioKind::BalanceBase),
            "trot" => Some(ScenarioKind::Trot),
            "jump" => Some(ScenarioKind::Jump),
            _ => None,
        }
    }
}

/// Scenario description: kind, horizon, and gait parameters.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub kind: ScenarioKind,
    /// Total simulated time, s.
    pub duration: f64,
    /// Simulation step, s.
    pub dt_sim: f64,
    /// Gait cycle period, s (trot).
    pub step_period: f64,
    /// Fraction of the cycle each foot spends in stance (trot).
    pub stance_ratio: f64,
    /// Base motion amplitude, m (balance), or stride length, m (trot).
    pub base_amplitude: f64,
    /// Apex height of the jump above the launch pose, m.
    pub jump_apex: f64,
}

impl Scenario {
    pub fn new(kind: ScenarioKind, duration: f64) -> Self {
        let base_amplitude = match kind {
            ScenarioKind::BalanceBase => 0.03,
            ScenarioKind::Trot => 0.08,
            ScenarioKind::Jump => 0.0,
        };
        Scenario {
            kind,
            duration,
            dt_sim: 1e-3,
            step_period: 0.4,
            stance_ratio: 0.5,
            base_amplitude,
            jump_apex: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.duration > 0.0) {
            return Err(SimError::BadScenario(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        if !(self.dt_sim > 0.0) || self.dt_sim > 0.25 * self.step_period {
            return Err(SimError::BadScenario(format!(
                "dt_sim must satisfy 0 < dt <= step_period / 4, got {} (period {})",
                self.dt_sim, self.step_period
            )));
        }
        if !(0.0 < self.stance_ratio && self.stance_ratio <= 1.0) {
            return Err(SimError::BadScenario(format!(
                "stance ratio must be in (0, 1], got {}",
                self.stance_ratio
            )));
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        (self.duration / self.dt_sim).round() as usize
    }
}

/// Nominal standing height of the scripted scenarios, m.
pub const NOMINAL_BASE_HEIGHT: f64 = 0.20;
const CROUCH_HEIGHT: f64 = 0.12;
const LAUNCH_HEIGHT: f64 = 0.24;
const SETTLE_TIME: f64 = 0.4;
const CROUCH_TIME: f64 = 0.3;
const RECOVER_TIME: f64 = 0.4;
const SWING_LIFT: f64 = 0.05;
const FLIGHT_TUCK: f64 = 0.05;
const GRAVITY_MAG: f64 = 9.81;

/// Per-frame reference targets and the contact schedule.
#[derive(Debug, Clone)]
pub struct ReferenceTrajectory {
    pub dt: f64,
    pub joint_positions: Vec<DVector<f64>>,
    pub joint_velocities: Vec<DVector<f64>>,
    pub contact_schedule: Vec<Vec<bool>>,
    pub base_positions: Vec<Vector3<f64>>,
}

impl ReferenceTrajectory {
    pub fn len(&self) -> usize {
        self.joint_positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joint_positions.is_empty()
    }

    /// Fraction of frames each foot spends in contact.
    pub fn stance_fractions(&self) -> Vec<f64> {
        if self.contact_schedule.is_empty() {
            return Vec::new();
        }
        let m = self.contact_schedule[0].len();
        (0..m)
            .map(|f| {
                let hits = self.contact_schedule.iter().filter(|s| s[f]).count();
                hits as f64 / self.contact_schedule.len() as f64
            })
            .collect()
    }

    /// Number of contact transitions per foot.
    pub fn switch_counts(&self) -> Vec<usize> {
        if self.contact_schedule.is_empty() {
            return Vec::new();
        }
        let m = self.contact_schedule[0].len();
        (0..m)
            .map(|f| {
                self.contact_schedule
                    .windows(2)
                    .filter(|w| w[0][f] != w[1][f])
                    .count()
            })
            .collect()
    }
}

struct LegGeometry {
    hip: Vector3<f64>,
    side: f64,
    knee_sign: f64,
    haa: usize,
    hfe: usize,
    kfe: usize,
}

fn leg_geometries(model: &RobotModel) -> Result<Vec<LegGeometry>, SimError> {
    let mut legs = Vec::new();
    for foot in 0..model.n_feet() {
        let joints = model.leg_joints(foot);
        if joints.len() != 3 {
            return Err(SimError::BadScenario(format!(
                "scripted scenarios need 3-joint legs; foot {foot} has {}",
                joints.len()
            )));
        }
        let haa_spec = model.actuated_joint(joints[0]);
        let hip = haa_spec.placement_translation;
        legs.push(LegGeometry {
            hip,
            side: hip.y.signum(),
            knee_sign: if hip.x > 0.0 { -1.0 } else { 1.0 },
            haa: joints[0],
            hfe: joints[1],
            kfe: joints[2],
        });
    }
    Ok(legs)
}

/// Analytic 3-DoF leg IK: foot target in the base frame -> (haa, hfe, kfe).
fn leg_ik(leg: &LegGeometry, target_base: &Vector3<f64>) -> Option<(f64, f64, f64)> {
    let l = DEFAULT_LEG_SEGMENT;
    let d = leg.side * DEFAULT_HIP_OFFSET;
    let t = target_base - leg.hip;
    let rho_sq = t.y * t.y + t.z * t.z;
    let zp_sq = rho_sq - d * d;
    if zp_sq <= 1e-12 {
        return None;
    }
    let zp = -zp_sq.sqrt();
    let alpha = t.z.atan2(t.y) - zp.atan2(d);

    let r_sq = t.x * t.x + zp * zp;
    let cos_knee = (r_sq - 2.0 * l * l) / (2.0 * l * l);
    if !(-1.0..=1.0).contains(&cos_knee) {
        return None;
    }
    let knee = leg.knee_sign * cos_knee.acos();
    let a = l + l * knee.cos();
    let b = l * knee.sin();
    let s1 = (-a * t.x + b * zp) / r_sq;
    let c1 = (-b * t.x - a * zp) / r_sq;
    let hip_pitch = s1.atan2(c1);
    Some((alpha, hip_pitch, knee))
}

fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

/// World-frame base position reference at time `t`.
fn base_reference(scenario: &Scenario, t: f64) -> Vector3<f64> {
    let h0 = NOMINAL_BASE_HEIGHT;
    match scenario.kind {
        ScenarioKind::BalanceBase => {
            let a = scenario.base_amplitude;
            let ramp = smoothstep(t / 0.5);
            let w1 = 2.0 * std::f64::consts::PI * 0.5;
            let w2 = 2.0 * std::f64::consts::PI * 0.4;
            let w3 = 2.0 * std::f64::consts::PI * 0.8;
            Vector3::new(
                a * ramp * (w1 * t).sin(),
                0.6 * a * ramp * (w2 * t).sin(),
                h0 + 0.3 * a * ramp * (w3 * t).sin(),
            )
        }
        ScenarioKind::Trot => {
            let v = scenario.base_amplitude / scenario.step_period;
            let tau = (t - SETTLE_TIME).max(0.0);
            let t_ramp = scenario.step_period;
            let x = if tau < t_ramp {
                0.5 * v * tau * tau / t_ramp
            } else {
                v * (tau - 0.5 * t_ramp)
            };
            Vector3::new(x, 0.0, h0)
        }
        ScenarioKind::Jump => {
            let phases = JumpPhases::new(scenario);
            Vector3::new(0.0, 0.0, phases.base_height(t))
        }
    }
}

/// Jump phase boundaries derived from the scenario parameters.
pub(crate) struct JumpPhases {
    pub crouch_start: f64,
    pub thrust_start: f64,
    pub liftoff: f64,
    pub touchdown: f64,
    pub recover_start: f64,
    pub recover_end: f64,
    launch_velocity: f64,
    thrust_time: f64,
}

impl JumpPhases {
    pub fn new(scenario: &Scenario) -> Self {
        let apex = scenario.jump_apex.max(0.0);
        let launch_velocity = (2.0 * GRAVITY_MAG * apex).sqrt();
        let dz = LAUNCH_HEIGHT - CROUCH_HEIGHT;
        let thrust_time = if launch_velocity > 0.0 {
            2.0 * dz / launch_velocity
        } else {
            0.2
        };
        let flight_time = 2.0 * launch_velocity / GRAVITY_MAG;
        let crouch_start = SETTLE_TIME;
        let thrust_start = crouch_start + CROUCH_TIME;
        let liftoff = thrust_start + thrust_time;
        let touchdown = liftoff + flight_time;
        let absorb_time = thrust_time;
        let recover_start = touchdown + absorb_time;
        let recover_end = recover_start + RECOVER_TIME;
        JumpPhases {
            crouch_start,
            thrust_start,
            liftoff,
            touchdown,
            recover_start,
            recover_end,
            launch_velocity,
            thrust_time,
        }
    }

    pub fn in_flight(&self, t: f64) -> bool {
        t >= self.liftoff && t < self.touchdown
    }

    fn base_height(&self, t: f64) -> f64 {
        let vl = self.launch_velocity;
        if t < self.crouch_start {
            NOMINAL_BASE_HEIGHT
        } else if t < self.thrust_start {
            let s = smoothstep((t - self.crouch_start) / CROUCH_TIME);
            NOMINAL_BASE_HEIGHT + s * (CROUCH_HEIGHT - NOMINAL_BASE_HEIGHT)
        } else if t < self.liftoff {
            let s = ((t - self.thrust_start) / self.thrust_time).clamp(0.0, 1.0);
            CROUCH_HEIGHT + (LAUNCH_HEIGHT - CROUCH_HEIGHT) * s * s
        } else if t < self.touchdown {
            let tau = t - self.liftoff;
            LAUNCH_HEIGHT + vl * tau - 0.5 * GRAVITY_MAG * tau * tau
        } else if t < self.recover_start {
            let tau = t - self.touchdown;
            let t_abs = self.thrust_time;
            LAUNCH_HEIGHT - vl * t_abs * (tau / t_abs - 0.5 * (tau / t_abs) * (tau / t_abs))
        } else if t < self.recover_end {
            let s = smoothstep((t - self.recover_start) / RECOVER_TIME);
            CROUCH_HEIGHT + s * (NOMINAL_BASE_HEIGHT - CROUCH_HEIGHT)
        } else {
            NOMINAL_BASE_HEIGHT
        }
    }
}

/// Nominal ground point of each foot (under its hip plane).
fn nominal_foot_points(legs: &[LegGeometry]) -> Vec<Vector3<f64>> {
    legs.iter()
        .map(|leg| Vector3::new(leg.hip.x, leg.hip.y + leg.side * DEFAULT_HIP_OFFSET, 0.0))
        .collect()
}

/// Trot stance/swing window logic for one foot.
struct TrotFoot {
    /// Phase offset within the cycle, s.
    offset: f64,
}

impl TrotFoot {
    /// `Some(progress)` while swinging, `None` in stance; also returns the
    /// index of the current/most recent stance window.
    fn phase(&self, tau: f64, period: f64, stance_ratio: f64) -> (isize, Option<f64>) {
        let local = tau - self.offset;
        let cycle = (local / period).floor();
        let phase = local - cycle * period;
        let stance_dur = stance_ratio * period;
        if phase < stance_dur {
            (cycle as isize, None)
        } else {
            let s = (phase - stance_dur) / (period - stance_dur);
            (cycle as isize, Some(s))
        }
    }
}

/// Build the reference trajectory for a scenario.
///
/// Targets are validated by forward kinematics: if any foot misses its target
/// by more than 1 mm the scenario is reported infeasible.
pub fn build_scenario(
    model: &RobotModel,
    scenario: &Scenario,
) -> Result<ReferenceTrajectory, SimError> {
    scenario.validate()?;
    let legs = leg_geometries(model)?;
    let m = legs.len();
    let n = model.n_joints();
    let frames = scenario.frames();
    let dt = scenario.dt_sim;
    let nominal = nominal_foot_points(&legs);

    let mut joint_positions = Vec::with_capacity(frames);
    let mut contact_schedule = Vec::with_capacity(frames);
    let mut base_positions = Vec::with_capacity(frames);

    let trot_feet: Vec<TrotFoot> = (0..m)
        .map(|f| {
            // diagonal pairs: (fl, hr) lead, (fr, hl) trail by half a period
            let pair_a = f == 0 || f == 3;
            TrotFoot {
                offset: if pair_a { 0.0 } else { scenario.step_period / 2.0 },
            }
        })
        .collect();

    for k in 0..frames {
        let t = k as f64 * dt;
        let base = base_reference(scenario, t);
        let mut flags = vec![true; m];
        let mut foot_world = nominal.clone();

        match scenario.kind {
            ScenarioKind::BalanceBase => {}
            ScenarioKind::Trot => {
                let period = scenario.step_period;
                if t >= SETTLE_TIME {
                    let tau = t - SETTLE_TIME;
                    for (f, foot) in trot_feet.iter().enumerate() {
                        let (cycle, swing) = foot.phase(tau, period, scenario.stance_ratio);
                        // stance points anchor at touchdown so foot targets
                        // stay continuous across the settle boundary and
                        // between windows
                        let stance_point = |c: isize| {
                            let td = (c as f64 * period + foot.offset).max(0.0);
                            let base_x_td = base_reference(scenario, SETTLE_TIME + td).x;
                            Vector3::new(nominal[f].x + base_x_td, nominal[f].y, 0.0)
                        };
                        match swing {
                            None => {
                                flags[f] = true;
                                foot_world[f] = stance_point(cycle);
                            }
                            Some(s) => {
                                flags[f] = false;
                                let from = stance_point(cycle);
                                let to = stance_point(cycle + 1);
                                let blend = smoothstep(s);
                                let mut p = from + (to - from) * blend;
                                p.z = SWING_LIFT
                                    * (std::f64::consts::PI * s).sin().powi(2);
                                foot_world[f] = p;
                            }
                        }
                    }
                }
            }
            ScenarioKind::Jump => {
                let phases = JumpPhases::new(scenario);
                if phases.in_flight(t) {
                    let s = (t - phases.liftoff) / (phases.touchdown - phases.liftoff);
                    for (f, p) in foot_world.iter_mut().enumerate() {
                        flags[f] = false;
                        p.z = FLIGHT_TUCK * (std::f64::consts::PI * s).sin().powi(2);
                    }
                }
            }
        }

        // foot targets in the base frame (reference base orientation is level)
        let mut q_ref = DVector::zeros(n);
        for (f, leg) in legs.iter().enumerate() {
            let target_base = foot_world[f] - base;
            let (haa, hfe, kfe) = leg_ik(leg, &target_base).ok_or_else(|| {
                SimError::InfeasibleScenario {
                    time: t,
                    foot: f,
                    residual: f64::INFINITY,
                }
            })?;
            q_ref[leg.haa] = haa;
            q_ref[leg.hfe] = hfe;
            q_ref[leg.kfe] = kfe;
        }

        joint_positions.push(q_ref);
        contact_schedule.push(flags);
        base_positions.push(base);
    }

    // verify the IK against forward kinematics frame by frame
    let check_stride = 7usize;
    for k in (0..frames).step_by(check_stride.max(1)) {
        let mut state = GeneralizedState::at_pose(
            model,
            base_positions[k],
            Rotation3::identity().into(),
        );
        for j in 0..n {
            state.set_joint_position(j, joint_positions[k][j]);
        }
        let kin = Kinematics::compute(model, &state);
        for f in 0..m {
            let p = kin.foot_position(model, f);
            let t = k as f64 * dt;
            let target = expected_foot_target(scenario, &legs, &nominal, f, t, &base_positions[k]);
            let residual = (p - (base_positions[k] + target)).norm();
            if residual > 1e-3 {
                return Err(SimError::InfeasibleScenario {
                    time: t,
                    foot: f,
                    residual,
                });
            }
        }
    }

    // joint rates by central differences of the targets
    let mut joint_velocities = Vec::with_capacity(frames);
    for k in 0..frames {
        let rate = if frames == 1 {
            DVector::zeros(n)
        } else if k == 0 {
            (&joint_positions[1] - &joint_positions[0]) / dt
        } else if k == frames - 1 {
            (&joint_positions[k] - &joint_positions[k - 1]) / dt
        } else {
            (&joint_positions[k + 1] - &joint_positions[k - 1]) / (2.0 * dt)
        };
        joint_velocities.push(rate);
    }

    Ok(ReferenceTrajectory {
        dt,
        joint_positions,
        joint_velocities,
        contact_schedule,
        base_positions,
    })
}

/// Recompute the base-frame foot target used at frame construction, for the
/// FK residual check.
fn expected_foot_target(
    scenario: &Scenario,
    legs: &[LegGeometry],
    nominal: &[Vector3<f64>],
    foot: usize,
    t: f64,
    base: &Vector3<f64>,
) -> Vector3<f64> {
    // rebuild the same world target as the main loop
    let mut world = nominal[foot];
    match scenario.kind {
        ScenarioKind::BalanceBase => {}
        ScenarioKind::Trot => {
            let period = scenario.step_period;
            let stance_dur = scenario.stance_ratio * period;
            if t >= SETTLE_TIME {
                let tau = t - SETTLE_TIME;
                let pair_a = foot == 0 || foot == 3;
                let offset = if pair_a { 0.0 } else { period / 2.0 };
                let local = tau - offset;
                let cycle = (local / period).floor();
                let phase = local - cycle * period;
                let stance_point = |c: f64| {
                    let td = (c * period + offset).max(0.0);
                    let bx = base_reference(scenario, SETTLE_TIME + td).x;
                    Vector3::new(nominal[foot].x + bx, nominal[foot].y, 0.0)
                };
                if phase < stance_dur {
                    world = stance_point(cycle);
                } else {
                    let s = (phase - stance_dur) / (period - stance_dur);
                    let from = stance_point(cycle);
                    let to = stance_point(cycle + 1.0);
                    world = from + (to - from) * smoothstep(s);
                    world.z = SWING_LIFT * (std::f64::consts::PI * s).sin().powi(2);
                }
            }
        }
        ScenarioKind::Jump => {
            let phases = JumpPhases::new(scenario);
            if phases.in_flight(t) {
                let s = (t - phases.liftoff) / (phases.touchdown - phases.liftoff);
                world.z = FLIGHT_TUCK * (std::f64::consts::PI * s).sin().powi(2);
            }
        }
    }
    let _ = legs;
    world - base
}
