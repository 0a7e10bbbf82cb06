//! Core rigid-body computations: forward kinematics, CoM, contact Jacobians,
//! mass matrix, bias forces, inverse dynamics, and the centroidal momentum
//! matrix with its velocity-product bias.
//!
//! Conventions, fixed across the crate:
//!
//! * configuration `q` is `[base position (3), base orientation quaternion
//!   xyzw (4), joint angles (n)]`,
//! * generalized velocity `v` is `[base linear velocity (3), base angular
//!   velocity (3), joint rates (n)]`, with both base components expressed in
//!   world-aligned axes (the linear part is the plain time derivative of the
//!   base position),
//! * configuration perturbations `q ⊕ δ` are additive on base position and
//!   joint angles and a tangent-space update on the orientation, with the
//!   angular part of `δ` in world axes to match the velocity convention.
//!
//! All operations are pure functions of `(model, state)`.

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, SVector, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::math::{quat_from_xyzw, quat_to_xyzw, skew};
use crate::model::RobotModel;

/// Dimension of the centroidal state `[c, l, k]`.
pub const CENTROIDAL_DIM: usize = 9;

/// Error constructing a [`GeneralizedState`].
#[derive(Debug, Error)]
pub enum StateError {
    #[error("configuration has {got} entries, expected {expected}")]
    ConfigurationSize { got: usize, expected: usize },
    #[error("velocity has {got} entries, expected {expected}")]
    VelocitySize { got: usize, expected: usize },
    #[error("base orientation norm is {norm}, must be 1 within 1e-9")]
    NonUnitOrientation { norm: f64 },
    #[error("state has non-finite entries")]
    NonFinite,
}

/// Configuration and generalized velocity of a floating-base robot.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedState {
    q: DVector<f64>,
    v: DVector<f64>,
}

impl GeneralizedState {
    /// Build from flat vectors, checking dimensions and the unit-quaternion
    /// invariant.
    pub fn new(q: DVector<f64>, v: DVector<f64>) -> Result<Self, StateError> {
        if q.len() < 7 {
            return Err(StateError::ConfigurationSize {
                got: q.len(),
                expected: 7,
            });
        }
        if v.len() + 1 != q.len() {
            return Err(StateError::VelocitySize {
                got: v.len(),
                expected: q.len() - 1,
            });
        }
        if q.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(StateError::NonFinite);
        }
        let norm = (q[3] * q[3] + q[4] * q[4] + q[5] * q[5] + q[6] * q[6]).sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(StateError::NonUnitOrientation { norm });
        }
        Ok(GeneralizedState { q, v })
    }

    /// Resting state at a given base pose: all joints at zero, zero velocity.
    pub fn at_pose(
        model: &RobotModel,
        base_position: Vector3<f64>,
        base_orientation: UnitQuaternion<f64>,
    ) -> Self {
        let mut q = DVector::zeros(model.nq());
        q.fixed_rows_mut::<3>(0).copy_from(&base_position);
        let [x, y, z, w] = quat_to_xyzw(&base_orientation);
        q[3] = x;
        q[4] = y;
        q[5] = z;
        q[6] = w;
        GeneralizedState {
            q,
            v: DVector::zeros(model.nv()),
        }
    }

    /// Neutral state: base at the origin with identity orientation.
    pub fn neutral(model: &RobotModel) -> Self {
        Self::at_pose(model, Vector3::zeros(), UnitQuaternion::identity())
    }

    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn v(&self) -> &DVector<f64> {
        &self.v
    }

    pub fn n_joints(&self) -> usize {
        self.v.len() - 6
    }

    pub fn base_position(&self) -> Vector3<f64> {
        Vector3::new(self.q[0], self.q[1], self.q[2])
    }

    pub fn base_orientation(&self) -> UnitQuaternion<f64> {
        quat_from_xyzw(self.q[3], self.q[4], self.q[5], self.q[6])
    }

    pub fn joint_positions(&self) -> DVector<f64> {
        DVector::from(self.q.rows(7, self.q.len() - 7).clone_owned())
    }

    pub fn base_linear_velocity(&self) -> Vector3<f64> {
        Vector3::new(self.v[0], self.v[1], self.v[2])
    }

    pub fn base_angular_velocity(&self) -> Vector3<f64> {
        Vector3::new(self.v[3], self.v[4], self.v[5])
    }

    pub fn joint_velocities(&self) -> DVector<f64> {
        DVector::from(self.v.rows(6, self.v.len() - 6).clone_owned())
    }

    pub fn set_joint_position(&mut self, joint: usize, angle: f64) {
        self.q[7 + joint] = angle;
    }

    pub fn set_joint_velocity(&mut self, joint: usize, rate: f64) {
        self.v[6 + joint] = rate;
    }

    pub fn set_base_position(&mut self, p: Vector3<f64>) {
        self.q.fixed_rows_mut::<3>(0).copy_from(&p);
    }

    pub fn set_base_orientation(&mut self, rot: UnitQuaternion<f64>) {
        let [x, y, z, w] = quat_to_xyzw(&rot);
        self.q[3] = x;
        self.q[4] = y;
        self.q[5] = z;
        self.q[6] = w;
    }

    pub fn set_base_linear_velocity(&mut self, v: Vector3<f64>) {
        self.v.fixed_rows_mut::<3>(0).copy_from(&v);
    }

    pub fn set_base_angular_velocity(&mut self, w: Vector3<f64>) {
        self.v.fixed_rows_mut::<3>(3).copy_from(&w);
    }

    /// Replace the velocity, keeping the configuration.
    pub fn with_velocity(&self, v: DVector<f64>) -> Self {
        assert_eq!(v.len(), self.v.len(), "velocity dimension mismatch");
        GeneralizedState {
            q: self.q.clone(),
            v,
        }
    }

    /// Configuration perturbation `q ⊕ δ` with `δ` of length `n+6`; the
    /// velocity is kept unchanged.
    pub fn perturbed(&self, delta: &DVector<f64>) -> Self {
        GeneralizedState {
            q: perturb_configuration(&self.q, delta),
            v: self.v.clone(),
        }
    }

    /// Integrate the configuration along the state's own velocity for `dt`
    /// seconds (first-order geometric integration).
    pub fn integrated_config(&self, dt: f64) -> Self {
        let delta = &self.v * dt;
        self.perturbed(&delta)
    }
}

/// `q ⊕ δ` on the flat configuration vector: additive on base position and
/// joint angles, exponential-map update on the base orientation. The angular
/// block `δ[3..6]` is expressed in world axes.
pub fn perturb_configuration(q: &DVector<f64>, delta: &DVector<f64>) -> DVector<f64> {
    assert_eq!(delta.len() + 1, q.len(), "perturbation dimension mismatch");
    let mut out = q.clone();
    out[0] += delta[0];
    out[1] += delta[1];
    out[2] += delta[2];
    let rot = quat_from_xyzw(q[3], q[4], q[5], q[6]);
    let dw = Vector3::new(delta[3], delta[4], delta[5]);
    let updated =
        UnitQuaternion::new_normalize((UnitQuaternion::from_scaled_axis(dw) * rot).into_inner());
    let [x, y, z, w] = quat_to_xyzw(&updated);
    out[3] = x;
    out[4] = y;
    out[5] = z;
    out[6] = w;
    for i in 7..q.len() {
        out[i] += delta[i - 1];
    }
    out
}

/// Ordered subset of the model's foot frames currently in contact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContactSet {
    active: Vec<usize>,
}

impl ContactSet {
    pub fn empty() -> Self {
        ContactSet { active: Vec::new() }
    }

    /// All feet of the model in contact.
    pub fn all(n_feet: usize) -> Self {
        ContactSet {
            active: (0..n_feet).collect(),
        }
    }

    /// From per-foot flags, in model foot order.
    pub fn from_flags(flags: &[bool]) -> Self {
        ContactSet {
            active: flags
                .iter()
                .enumerate()
                .filter_map(|(i, f)| f.then_some(i))
                .collect(),
        }
    }

    /// From foot indices; sorted and deduplicated to the model foot order.
    pub fn from_indices<I: IntoIterator<Item = usize>>(indices: I) -> Self {
        let mut active: Vec<usize> = indices.into_iter().collect();
        active.sort_unstable();
        active.dedup();
        ContactSet { active }
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn contains(&self, foot: usize) -> bool {
        self.active.binary_search(&foot).is_ok()
    }

    pub fn flags(&self, n_feet: usize) -> Vec<bool> {
        (0..n_feet).map(|i| self.contains(i)).collect()
    }
}

/// CoM position, linear momentum, and angular momentum about the CoM, in
/// world-aligned axes. Serializes as the 9-vector `[c, l, k]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CentroidalState {
    pub com: Vector3<f64>,
    pub linear_momentum: Vector3<f64>,
    pub angular_momentum: Vector3<f64>,
}

impl CentroidalState {
    pub fn zero() -> Self {
        CentroidalState {
            com: Vector3::zeros(),
            linear_momentum: Vector3::zeros(),
            angular_momentum: Vector3::zeros(),
        }
    }

    pub fn to_vector(self) -> SVector<f64, 9> {
        let mut out = SVector::<f64, 9>::zeros();
        out.fixed_rows_mut::<3>(0).copy_from(&self.com);
        out.fixed_rows_mut::<3>(3).copy_from(&self.linear_momentum);
        out.fixed_rows_mut::<3>(6).copy_from(&self.angular_momentum);
        out
    }

    pub fn from_vector(v: &SVector<f64, 9>) -> Self {
        CentroidalState {
            com: v.fixed_rows::<3>(0).into(),
            linear_momentum: v.fixed_rows::<3>(3).into(),
            angular_momentum: v.fixed_rows::<3>(6).into(),
        }
    }
}

/// World-frame pose data for every link, plus per-joint axes and origins.
/// Internal building block for all kinodynamic quantities.
#[derive(Debug, Clone)]
pub(crate) struct Kinematics {
    /// World rotation of each link frame.
    pub rot: Vec<Rotation3<f64>>,
    /// World position of each link frame origin.
    pub pos: Vec<Vector3<f64>>,
    /// World position of each link CoM.
    pub com: Vec<Vector3<f64>>,
    /// World-frame rotational inertia of each link about its CoM.
    pub inertia_w: Vec<Matrix3<f64>>,
    /// World-frame axis of each actuated joint.
    pub axis_w: Vec<Vector3<f64>>,
    /// World position of each actuated joint origin.
    pub joint_origin: Vec<Vector3<f64>>,
}

impl Kinematics {
    pub fn compute(model: &RobotModel, state: &GeneralizedState) -> Self {
        let nl = model.n_links();
        let n = model.n_joints();
        let mut rot = vec![Rotation3::identity(); nl];
        let mut pos = vec![Vector3::zeros(); nl];
        let mut com = vec![Vector3::zeros(); nl];
        let mut inertia_w = vec![Matrix3::zeros(); nl];
        let mut axis_w = vec![Vector3::zeros(); n];
        let mut joint_origin = vec![Vector3::zeros(); n];

        rot[0] = state.base_orientation().to_rotation_matrix();
        pos[0] = state.base_position();

        for link in 1..nl {
            let parent = model.parent_link(link).expect("non-base link has a parent");
            let j = model
                .inboard_actuated_joint(link)
                .expect("non-base link has an inboard joint");
            let spec = model.actuated_joint(j);
            let r_joint = rot[parent] * spec.placement_rotation.to_rotation_matrix();
            let origin = pos[parent] + rot[parent] * spec.placement_translation;
            let angle = state.q[7 + j];
            axis_w[j] = r_joint * spec.axis;
            joint_origin[j] = origin;
            rot[link] = r_joint * Rotation3::from_axis_angle(
                &nalgebra::Unit::new_normalize(spec.axis),
                angle,
            );
            pos[link] = origin;
        }

        for link in 0..nl {
            let spec = &model.links()[link];
            com[link] = pos[link] + rot[link] * spec.com_offset;
            let r = rot[link].matrix();
            inertia_w[link] = r * spec.rotational_inertia * r.transpose();
        }

        Kinematics {
            rot,
            pos,
            com,
            inertia_w,
            axis_w,
            joint_origin,
        }
    }

    /// World position of a foot frame.
    pub fn foot_position(&self, model: &RobotModel, foot: usize) -> Vector3<f64> {
        let frame = &model.foot_frames()[foot];
        self.pos[frame.link] + self.rot[frame.link] * frame.offset
    }

    /// 3 x (n+6) world-frame linear-velocity Jacobian of a point rigidly
    /// attached to `link` at world position `point`.
    pub fn point_jacobian(
        &self,
        model: &RobotModel,
        link: usize,
        point: &Vector3<f64>,
    ) -> DMatrix<f64> {
        let nv = model.nv();
        let mut jac = DMatrix::zeros(3, nv);
        jac.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
        jac.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(-skew(&(point - self.pos[0]))));
        for j in model.joint_path(link) {
            let col = self.axis_w[j].cross(&(point - self.joint_origin[j]));
            jac.fixed_view_mut::<3, 1>(0, 6 + j).copy_from(&col);
        }
        jac
    }
}

/// Per-link world-frame velocities.
#[derive(Debug, Clone)]
#[allow(dead_code)] // com_vel/origin_vel feed the test oracles
pub(crate) struct Velocities {
    /// Angular velocity of each link.
    pub ang: Vec<Vector3<f64>>,
    /// Velocity of each link frame origin.
    pub origin_vel: Vec<Vector3<f64>>,
    /// Velocity of each link CoM.
    pub com_vel: Vec<Vector3<f64>>,
}

impl Velocities {
    pub fn compute(model: &RobotModel, kin: &Kinematics, state: &GeneralizedState) -> Self {
        let nl = model.n_links();
        let mut ang = vec![Vector3::zeros(); nl];
        let mut origin_vel = vec![Vector3::zeros(); nl];
        let mut com_vel = vec![Vector3::zeros(); nl];

        ang[0] = state.base_angular_velocity();
        origin_vel[0] = state.base_linear_velocity();

        for link in 1..nl {
            let parent = model.parent_link(link).unwrap();
            let j = model.inboard_actuated_joint(link).unwrap();
            let rate = state.v[6 + j];
            let r = kin.pos[link] - kin.pos[parent];
            ang[link] = ang[parent] + kin.axis_w[j] * rate;
            origin_vel[link] = origin_vel[parent] + ang[parent].cross(&r);
        }
        for link in 0..nl {
            let rc = kin.com[link] - kin.pos[link];
            com_vel[link] = origin_vel[link] + ang[link].cross(&rc);
        }
        Velocities {
            ang,
            origin_vel,
            com_vel,
        }
    }
}

/// Mass-weighted mean of the link CoM positions in world frame.
pub fn com_position(model: &RobotModel, state: &GeneralizedState) -> Vector3<f64> {
    let kin = Kinematics::compute(model, state);
    com_from_kinematics(model, &kin)
}

pub(crate) fn com_from_kinematics(model: &RobotModel, kin: &Kinematics) -> Vector3<f64> {
    let mut weighted = Vector3::zeros();
    for (link, spec) in model.links().iter().enumerate() {
        weighted += spec.mass * kin.com[link];
    }
    weighted / model.total_mass()
}

/// World positions of all foot frames.
pub fn foot_positions(model: &RobotModel, state: &GeneralizedState) -> Vec<Vector3<f64>> {
    let kin = Kinematics::compute(model, state);
    (0..model.n_feet())
        .map(|f| kin.foot_position(model, f))
        .collect()
}

/// Stacked world-frame linear-velocity Jacobians of the active feet,
/// `3 m_active x (n+6)`, in [`ContactSet`] order. `J_c v` is the stacked
/// vector of foot linear velocities.
pub fn contact_jacobian(
    model: &RobotModel,
    state: &GeneralizedState,
    contacts: &ContactSet,
) -> DMatrix<f64> {
    let kin = Kinematics::compute(model, state);
    contact_jacobian_from_kinematics(model, &kin, contacts)
}

pub(crate) fn contact_jacobian_from_kinematics(
    model: &RobotModel,
    kin: &Kinematics,
    contacts: &ContactSet,
) -> DMatrix<f64> {
    let nv = model.nv();
    let mut jac = DMatrix::zeros(3 * contacts.len(), nv);
    for (row, &foot) in contacts.active().iter().enumerate() {
        let frame = &model.foot_frames()[foot];
        let point = kin.foot_position(model, foot);
        let jf = kin.point_jacobian(model, frame.link, &point);
        jac.view_mut((3 * row, 0), (3, nv)).copy_from(&jf);
    }
    jac
}

/// Finite-difference step for directional derivatives along `v`. At this
/// size the central-difference truncation (~eps^2) and the amortized rounding
/// noise (~1e-15/eps) are balanced near their joint minimum.
fn directional_step(v: &DVector<f64>) -> f64 {
    1e-5 * v.norm().max(1.0)
}

/// `J̇_c v`: stacked foot accelerations at zero generalized acceleration.
/// Computed by central differences of `J_c` along `v`.
pub fn contact_jacobian_rate_bias(
    model: &RobotModel,
    state: &GeneralizedState,
    contacts: &ContactSet,
) -> DVector<f64> {
    if contacts.is_empty() {
        return DVector::zeros(0);
    }
    let v = state.v();
    if v.norm() == 0.0 {
        return DVector::zeros(3 * contacts.len());
    }
    let eps = directional_step(v);
    let plus = state.perturbed(&(v * (eps / 2.0)));
    let minus = state.perturbed(&(v * (-eps / 2.0)));
    let j_plus = contact_jacobian(model, &plus, contacts);
    let j_minus = contact_jacobian(model, &minus, contacts);
    ((j_plus - j_minus) / eps) * v
}

/// Joint-space mass-inertia matrix, symmetric positive-definite,
/// `(n+6) x (n+6)`. Built by summing per-link CoM Jacobian contributions,
/// which is algebraically the composite-rigid-body matrix.
pub fn mass_matrix(model: &RobotModel, state: &GeneralizedState) -> DMatrix<f64> {
    let kin = Kinematics::compute(model, state);
    mass_matrix_from_kinematics(model, &kin)
}

pub(crate) fn mass_matrix_from_kinematics(model: &RobotModel, kin: &Kinematics) -> DMatrix<f64> {
    let nv = model.nv();
    let mut m = DMatrix::zeros(nv, nv);
    for (link, spec) in model.links().iter().enumerate() {
        if spec.mass == 0.0 && spec.rotational_inertia.norm() == 0.0 {
            continue;
        }
        let jv = kin.point_jacobian(model, link, &kin.com[link]);
        // angular Jacobian: base angular block is identity, joint columns are
        // the world axes along the path
        let mut jw = DMatrix::zeros(3, nv);
        jw.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
        for j in model.joint_path(link) {
            jw.fixed_view_mut::<3, 1>(0, 6 + j).copy_from(&kin.axis_w[j]);
        }
        m += jv.transpose() * spec.mass * &jv;
        m += jw.transpose() * kin.inertia_w[link] * &jw;
    }
    m
}

/// Inverse dynamics (recursive Newton-Euler): generalized force `τ_gen` with
/// `M a + n(q, v) = τ_gen`, excluding contact forces.
pub fn inverse_dynamics(
    model: &RobotModel,
    state: &GeneralizedState,
    accel: &DVector<f64>,
) -> DVector<f64> {
    let kin = Kinematics::compute(model, state);
    inverse_dynamics_with_kinematics(model, &kin, state, accel)
}

pub(crate) fn inverse_dynamics_with_kinematics(
    model: &RobotModel,
    kin: &Kinematics,
    state: &GeneralizedState,
    accel: &DVector<f64>,
) -> DVector<f64> {
    let nv = model.nv();
    assert_eq!(accel.len(), nv, "acceleration dimension mismatch");
    let nl = model.n_links();
    let vel = Velocities::compute(model, kin, state);
    let gravity = model.gravity();

    // forward pass: angular acceleration and frame-origin acceleration
    let mut ang_acc = vec![Vector3::zeros(); nl];
    let mut origin_acc = vec![Vector3::zeros(); nl];
    ang_acc[0] = Vector3::new(accel[3], accel[4], accel[5]);
    origin_acc[0] = Vector3::new(accel[0], accel[1], accel[2]);
    for link in 1..nl {
        let parent = model.parent_link(link).unwrap();
        let j = model.inboard_actuated_joint(link).unwrap();
        let rate = state.v[6 + j];
        let acc = accel[6 + j];
        let r = kin.pos[link] - kin.pos[parent];
        let axis = kin.axis_w[j];
        origin_acc[link] = origin_acc[parent]
            + ang_acc[parent].cross(&r)
            + vel.ang[parent].cross(&vel.ang[parent].cross(&r));
        ang_acc[link] = ang_acc[parent] + axis * acc + vel.ang[parent].cross(&axis) * rate;
    }

    // per-link net wrench about the link CoM
    let mut force = vec![Vector3::zeros(); nl];
    let mut moment = vec![Vector3::zeros(); nl];
    for link in 0..nl {
        let spec = &model.links()[link];
        let rc = kin.com[link] - kin.pos[link];
        let com_acc = origin_acc[link]
            + ang_acc[link].cross(&rc)
            + vel.ang[link].cross(&vel.ang[link].cross(&rc));
        force[link] = spec.mass * (com_acc - gravity);
        let iw = kin.inertia_w[link];
        moment[link] = iw * ang_acc[link] + vel.ang[link].cross(&(iw * vel.ang[link]));
    }

    // backward pass: accumulate transmitted wrench about each link origin
    let mut total_force = vec![Vector3::zeros(); nl];
    let mut total_moment = vec![Vector3::zeros(); nl];
    for link in (0..nl).rev() {
        let rc = kin.com[link] - kin.pos[link];
        total_force[link] += force[link];
        total_moment[link] += moment[link] + rc.cross(&force[link]);
        if let Some(parent) = model.parent_link(link) {
            let shift = kin.pos[link] - kin.pos[parent];
            let f = total_force[link];
            let n = total_moment[link] + shift.cross(&f);
            total_force[parent] += f;
            total_moment[parent] += n;
        }
    }

    let mut tau = DVector::zeros(nv);
    tau.fixed_rows_mut::<3>(0).copy_from(&total_force[0]);
    tau.fixed_rows_mut::<3>(3).copy_from(&total_moment[0]);
    for link in 1..nl {
        let j = model.inboard_actuated_joint(link).unwrap();
        tau[6 + j] = kin.axis_w[j].dot(&total_moment[link]);
    }
    tau
}

/// Nonlinear bias `n(q, v)`: centrifugal, Coriolis, and gravity terms.
/// Equals inverse dynamics at zero acceleration.
pub fn nonlinear_terms(model: &RobotModel, state: &GeneralizedState) -> DVector<f64> {
    inverse_dynamics(model, state, &DVector::zeros(model.nv()))
}

/// Centroidal momentum matrix `A_G`, `6 x (n+6)`: maps generalized velocity
/// to `[l; k]` with `k` taken about the instantaneous CoM in world-aligned
/// axes. Derived from the floating-base rows of the mass matrix shifted to
/// the CoM frame.
pub fn cmm(model: &RobotModel, state: &GeneralizedState) -> DMatrix<f64> {
    let kin = Kinematics::compute(model, state);
    cmm_from_kinematics(model, &kin)
}

pub(crate) fn cmm_from_kinematics(model: &RobotModel, kin: &Kinematics) -> DMatrix<f64> {
    let m = mass_matrix_from_kinematics(model, kin);
    let com = com_from_kinematics(model, kin);
    cmm_from_mass_matrix(&m, &com, &kin.pos[0])
}

/// The CoM-frame shift of the floating-base mass-matrix rows that yields the
/// centroidal momentum matrix.
pub fn cmm_from_mass_matrix(
    mass: &DMatrix<f64>,
    com: &Vector3<f64>,
    base_position: &Vector3<f64>,
) -> DMatrix<f64> {
    let nv = mass.ncols();
    let top = mass.rows(0, 3).clone_owned();
    let mid = mass.rows(3, 3).clone_owned();
    let mut a = DMatrix::zeros(6, nv);
    a.view_mut((0, 0), (3, nv)).copy_from(&top);
    a.view_mut((3, 0), (3, nv))
        .copy_from(&(mid - skew(&(com - base_position)) * top));
    a
}

/// `Ȧ_G v`: centroidal-momentum-matrix rate bias, by central differences of
/// `A_G` along `v`.
pub fn cmm_rate_bias(model: &RobotModel, state: &GeneralizedState) -> nalgebra::Vector6<f64> {
    let v = state.v();
    if v.norm() == 0.0 {
        return nalgebra::Vector6::zeros();
    }
    let eps = directional_step(v);
    let plus = state.perturbed(&(v * (eps / 2.0)));
    let minus = state.perturbed(&(v * (-eps / 2.0)));
    let a_plus = cmm(model, &plus);
    let a_minus = cmm(model, &minus);
    let prod = ((a_plus - a_minus) / eps) * v;
    nalgebra::Vector6::from_column_slice(prod.as_slice())
}

/// CoM position and centroidal momentum `[c, l, k]` of a state. This is also
/// the EKF measurement function.
pub fn centroidal_momentum(model: &RobotModel, state: &GeneralizedState) -> CentroidalState {
    let kin = Kinematics::compute(model, state);
    let a = cmm_from_kinematics(model, &kin);
    let h = a * state.v();
    CentroidalState {
        com: com_from_kinematics(model, &kin),
        linear_momentum: Vector3::new(h[0], h[1], h[2]),
        angular_momentum: Vector3::new(h[3], h[4], h[5]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::default_quadruped;
    use crate::testutil::{
        base_plus_arm_model, link_momentum_sum, random_state, rng, single_body_model,
    };
    use approx::assert_relative_eq;
    use nalgebra::Vector6;

    fn stance_state(model: &RobotModel) -> GeneralizedState {
        let mut state =
            GeneralizedState::at_pose(model, Vector3::new(0.0, 0.0, 0.2), UnitQuaternion::identity());
        // front/hind mirrored so the robot CoM sits above the base origin
        for leg in 0..4 {
            let sign = if leg < 2 { 1.0 } else { -1.0 };
            state.set_joint_position(3 * leg + 1, sign * 0.7);
            state.set_joint_position(3 * leg + 2, sign * -1.4);
        }
        state
    }

    /// RK4 integration of torque-free floating dynamics, for trajectory oracles.
    fn free_flight_step(model: &RobotModel, state: &GeneralizedState, dt: f64) -> GeneralizedState {
        let deriv = |s: &GeneralizedState| -> (DVector<f64>, DVector<f64>) {
            let m = mass_matrix(model, s);
            let n = nonlinear_terms(model, s);
            let vdot = m.lu().solve(&(-n)).unwrap();
            (s.v().clone(), vdot)
        };
        let (k1q, k1v) = deriv(state);
        let s2 = state.perturbed(&(&k1q * (dt / 2.0))).with_velocity(state.v() + &k1v * (dt / 2.0));
        let (k2q, k2v) = deriv(&s2);
        let s3 = state.perturbed(&(&k2q * (dt / 2.0))).with_velocity(state.v() + &k2v * (dt / 2.0));
        let (k3q, k3v) = deriv(&s3);
        let s4 = state.perturbed(&(&k3q * dt)).with_velocity(state.v() + &k3v * dt);
        let (k4q, k4v) = deriv(&s4);
        let dq = (k1q + &k2q * 2.0 + &k3q * 2.0 + k4q) * (dt / 6.0);
        let dv = (k1v + &k2v * 2.0 + &k3v * 2.0 + k4v) * (dt / 6.0);
        state.perturbed(&dq).with_velocity(state.v() + dv)
    }

    #[test]
    fn com_single_body_offset() {
        let model = single_body_model(
            1.0,
            Vector3::new(0.0, 0.0, 0.1),
            Vector3::new(0.01, 0.01, 0.01),
            Vector3::new(0.0, 0.0, -9.81),
        );
        let state = GeneralizedState::neutral(&model);
        assert_relative_eq!(
            com_position(&model, &state),
            Vector3::new(0.0, 0.0, 0.1),
            epsilon = 1e-15
        );
    }

    #[test]
    fn com_symmetric_stance_centered() {
        let model = default_quadruped();
        let state = stance_state(&model);
        let com = com_position(&model, &state);
        assert!((com.x - state.base_position().x).abs() < 1e-12);
        assert!((com.y - state.base_position().y).abs() < 1e-12);

        // brute-force mass-weighted sum over links
        let kin = Kinematics::compute(&model, &state);
        let mut weighted = Vector3::zeros();
        let mut mass = 0.0;
        for (i, l) in model.links().iter().enumerate() {
            weighted += l.mass * (kin.pos[i] + kin.rot[i] * l.com_offset);
            mass += l.mass;
        }
        assert_relative_eq!(com, weighted / mass, epsilon = 1e-14);
    }

    #[test]
    fn com_translation_equivariance() {
        let model = default_quadruped();
        let mut r = rng(11);
        let state = random_state(&model, &mut r);
        let com = com_position(&model, &state);
        let shift = Vector3::new(1.0, 2.0, 3.0);
        let mut moved = state.clone();
        moved.set_base_position(state.base_position() + shift);
        assert_relative_eq!(com_position(&model, &moved), com + shift, epsilon = 1e-12);
    }

    #[test]
    fn contact_jacobian_empty() {
        let model = default_quadruped();
        let state = stance_state(&model);
        let j = contact_jacobian(&model, &state, &ContactSet::empty());
        assert_eq!((j.nrows(), j.ncols()), (0, 18));
    }

    #[test]
    fn contact_jacobian_fd_oracle() {
        let model = default_quadruped();
        let mut r = rng(12);
        let contacts = ContactSet::all(4);
        for _ in 0..20 {
            let state = random_state(&model, &mut r);
            let j = contact_jacobian(&model, &state, &contacts);
            let delta = DVector::from_fn(model.nv(), |_, _| {
                use rand::Rng;
                r.gen_range(-1.0..1.0)
            });
            let eps = 1e-7;
            let plus = state.perturbed(&(&delta * eps));
            let p0: Vec<Vector3<f64>> = foot_positions(&model, &state);
            let p1: Vec<Vector3<f64>> = foot_positions(&model, &plus);
            let jd = &j * &delta;
            for f in 0..4 {
                let fd = (p1[f] - p0[f]) / eps;
                let jv = Vector3::new(jd[3 * f], jd[3 * f + 1], jd[3 * f + 2]);
                assert!((fd - jv).norm() < 1e-6, "foot {f}: fd {fd:?} vs J {jv:?}");
            }
        }
    }

    #[test]
    fn contact_jacobian_base_translation_block() {
        let model = default_quadruped();
        let state = stance_state(&model);
        let j = contact_jacobian(&model, &state, &ContactSet::all(4));
        for f in 0..4 {
            let block = j.fixed_view::<3, 3>(3 * f, 0).clone_owned();
            assert_relative_eq!(block, Matrix3::identity(), epsilon = 1e-15);
        }
    }

    #[test]
    fn jacobian_rate_bias_zero_velocity() {
        let model = default_quadruped();
        let state = stance_state(&model);
        let bias = contact_jacobian_rate_bias(&model, &state, &ContactSet::all(4));
        assert_eq!(bias.len(), 12);
        assert_eq!(bias.norm(), 0.0);
    }

    #[test]
    fn jacobian_rate_bias_fd_oracle() {
        let model = default_quadruped();
        let mut r = rng(13);
        let contacts = ContactSet::all(4);
        for _ in 0..20 {
            let state = random_state(&model, &mut r);
            let bias = contact_jacobian_rate_bias(&model, &state, &contacts);
            // forward-difference oracle with an independent step
            let eps = 2e-7;
            let plus = state.perturbed(&(state.v() * eps));
            let j0 = contact_jacobian(&model, &state, &contacts);
            let j1 = contact_jacobian(&model, &plus, &contacts);
            let oracle = ((j1 - j0) / eps) * state.v();
            assert!(
                (&bias - &oracle).norm() < 1e-5,
                "bias {:.3e} vs oracle {:.3e}, diff {:.3e}",
                bias.norm(),
                oracle.norm(),
                (&bias - &oracle).norm()
            );
        }
    }

    #[test]
    fn jacobian_rate_bias_centripetal_pendulum() {
        let model = base_plus_arm_model();
        let mut state = GeneralizedState::neutral(&model);
        let omega = 1.7;
        state.set_joint_velocity(0, omega);
        let contacts = ContactSet::all(1);
        let bias = contact_jacobian_rate_bias(&model, &state, &contacts);
        // tip is 0.3 m from the joint along -z; centripetal accel points at the
        // joint axis with magnitude omega^2 * r
        let r = 0.3;
        let expected = Vector3::new(0.0, 0.0, omega * omega * r);
        let got = Vector3::new(bias[0], bias[1], bias[2]);
        assert!((got - expected).norm() < 1e-4, "got {got:?}");
    }

    #[test]
    fn mass_matrix_column_oracle() {
        let model = default_quadruped();
        let mut r = rng(14);
        for _ in 0..5 {
            let state = random_state(&model, &mut r).with_velocity(DVector::zeros(18));
            let m = mass_matrix(&model, &state);
            let n0 = inverse_dynamics(&model, &state, &DVector::zeros(18));
            for i in 0..18 {
                let mut e = DVector::zeros(18);
                e[i] = 1.0;
                let col = inverse_dynamics(&model, &state, &e) - &n0;
                assert!(
                    (m.column(i) - &col).norm() <= 1e-10,
                    "column {i} mismatch: {:.3e}",
                    (m.column(i) - &col).norm()
                );
            }
        }
    }

    #[test]
    fn mass_matrix_single_body_linear_block() {
        let model = single_body_model(
            3.0,
            Vector3::zeros(),
            Vector3::new(0.02, 0.03, 0.04),
            Vector3::zeros(),
        );
        let state = GeneralizedState::neutral(&model);
        let m = mass_matrix(&model, &state);
        let block = m.fixed_view::<3, 3>(0, 0).clone_owned();
        assert_relative_eq!(block, Matrix3::identity() * 3.0, epsilon = 1e-14);
    }

    #[test]
    fn mass_matrix_symmetric() {
        let model = default_quadruped();
        let mut r = rng(15);
        for _ in 0..10 {
            let state = random_state(&model, &mut r);
            let m = mass_matrix(&model, &state);
            assert!((&m - m.transpose()).norm() <= 1e-12);
        }
    }

    #[test]
    fn mass_matrix_positive_definite() {
        let model = default_quadruped();
        let mut r = rng(16);
        for _ in 0..10 {
            let state = random_state(&model, &mut r);
            let m = mass_matrix(&model, &state);
            let eig = m.symmetric_eigen().eigenvalues;
            assert!(eig.min() > 0.0, "min eigenvalue {}", eig.min());
        }
    }

    #[test]
    fn nonlinear_terms_static_gravity() {
        let model = default_quadruped();
        let state = stance_state(&model);
        let n = nonlinear_terms(&model, &state);
        let expected = -model.total_mass() * model.gravity();
        assert_relative_eq!(
            Vector3::new(n[0], n[1], n[2]),
            expected,
            epsilon = 1e-12
        );
    }

    #[test]
    fn nonlinear_terms_zero_gravity_rest() {
        let mut model = default_quadruped();
        model = {
            let links = model.links().to_vec();
            let joints = model.joints().to_vec();
            let feet = model
                .foot_frames()
                .iter()
                .map(|f| (f.name.clone(), model.links()[f.link].name.clone(), f.offset))
                .collect();
            RobotModel::new(links, joints, feet, Vector3::zeros()).unwrap()
        };
        let state = stance_state(&model);
        let n = nonlinear_terms(&model, &state);
        assert_eq!(n.norm(), 0.0);
    }

    #[test]
    fn nonlinear_terms_energy_rate() {
        // passive swing under gravity: d/dt KE must equal the gravity power
        let model = default_quadruped();
        let mut r = rng(17);
        let mut state = random_state(&model, &mut r);
        let dt = 1e-4;
        let mut states = vec![state.clone()];
        for _ in 0..40 {
            state = free_flight_step(&model, &state, dt);
            states.push(state.clone());
        }
        let ke = |s: &GeneralizedState| {
            let m = mass_matrix(&model, s);
            0.5 * s.v().dot(&(&m * s.v()))
        };
        for k in 1..states.len() - 1 {
            let rate = (ke(&states[k + 1]) - ke(&states[k - 1])) / (2.0 * dt);
            // gravity power: sum over links of m g . v_com
            let kin = Kinematics::compute(&model, &states[k]);
            let vel = Velocities::compute(&model, &kin, &states[k]);
            let mut power = 0.0;
            for (i, l) in model.links().iter().enumerate() {
                power += l.mass * model.gravity().dot(&vel.com_vel[i]);
            }
            assert!(
                (rate - power).abs() < 1e-6 * rate.abs().max(1.0),
                "step {k}: dKE/dt {rate} vs gravity power {power}"
            );
        }
    }

    #[test]
    fn inverse_dynamics_zero_all() {
        let model = single_body_model(
            2.0,
            Vector3::new(0.05, 0.0, 0.0),
            Vector3::new(0.02, 0.02, 0.02),
            Vector3::zeros(),
        );
        let state = GeneralizedState::neutral(&model);
        let tau = inverse_dynamics(&model, &state, &DVector::zeros(6));
        assert_eq!(tau.norm(), 0.0);
    }

    #[test]
    fn inverse_dynamics_round_trip() {
        let model = default_quadruped();
        let mut r = rng(18);
        for _ in 0..10 {
            let state = random_state(&model, &mut r);
            let tau_gen = DVector::from_fn(18, |_, _| {
                use rand::Rng;
                r.gen_range(-2.0..2.0)
            });
            let m = mass_matrix(&model, &state);
            let n = nonlinear_terms(&model, &state);
            let vdot = m.lu().solve(&(&tau_gen - &n)).unwrap();
            let back = inverse_dynamics(&model, &state, &vdot);
            assert!(
                (&back - &tau_gen).norm() < 1e-9 * tau_gen.norm().max(1.0),
                "round trip error {:.3e}",
                (&back - &tau_gen).norm()
            );
        }
    }

    #[test]
    fn inverse_dynamics_free_fall() {
        let model = single_body_model(
            2.0,
            Vector3::zeros(),
            Vector3::new(0.02, 0.02, 0.02),
            Vector3::new(0.0, 0.0, -9.81),
        );
        let state = GeneralizedState::neutral(&model);
        let mut accel = DVector::zeros(6);
        accel.fixed_rows_mut::<3>(0).copy_from(&model.gravity());
        let tau = inverse_dynamics(&model, &state, &accel);
        assert!(tau.norm() < 1e-12);
    }

    #[test]
    fn cmm_pure_translation() {
        let model = single_body_model(
            2.5,
            Vector3::zeros(),
            Vector3::new(0.02, 0.02, 0.02),
            Vector3::new(0.0, 0.0, -9.81),
        );
        let mut state = GeneralizedState::neutral(&model);
        let u = Vector3::new(0.3, -0.2, 0.5);
        state.set_base_linear_velocity(u);
        let a = cmm(&model, &state);
        let h = a * state.v();
        assert_relative_eq!(Vector3::new(h[0], h[1], h[2]), 2.5 * u, epsilon = 1e-12);
        assert!(Vector3::new(h[3], h[4], h[5]).norm() < 1e-12);
    }

    #[test]
    fn cmm_matches_link_sum_oracle() {
        let model = default_quadruped();
        let mut r = rng(19);
        for _ in 0..20 {
            let state = random_state(&model, &mut r);
            let a = cmm(&model, &state);
            let h = &a * state.v();
            let oracle = link_momentum_sum(&model, &state);
            let diff = Vector6::from_column_slice(h.as_slice()) - oracle;
            assert!(diff.norm() <= 1e-10, "diff {:.3e}", diff.norm());
        }
    }

    #[test]
    fn cmm_zero_velocity() {
        let model = default_quadruped();
        let state = stance_state(&model);
        let h = cmm(&model, &state) * state.v();
        assert_eq!(h.norm(), 0.0);
    }

    #[test]
    fn cmm_rate_bias_zero_velocity() {
        let model = default_quadruped();
        let state = stance_state(&model);
        assert_eq!(cmm_rate_bias(&model, &state).norm(), 0.0);
    }

    #[test]
    fn cmm_rate_bias_fd_oracle() {
        let model = default_quadruped();
        let mut r = rng(20);
        for _ in 0..20 {
            let state = random_state(&model, &mut r);
            let bias = cmm_rate_bias(&model, &state);
            let eps = 2e-7;
            let plus = state.perturbed(&(state.v() * eps));
            let a0 = cmm(&model, &state);
            let a1 = cmm(&model, &plus);
            let oracle = ((a1 - a0) / eps) * state.v();
            let oracle = Vector6::from_column_slice(oracle.as_slice());
            assert!((bias - oracle).norm() < 1e-5, "diff {:.3e}", (bias - oracle).norm());
        }
    }

    #[test]
    fn cmm_rate_bias_trajectory_chain() {
        // along a free-flight trajectory, d/dt h_G = A_G vdot + Adot_G v
        let model = default_quadruped();
        let mut r = rng(21);
        let mut state = random_state(&model, &mut r);
        let dt = 1e-4;
        let mut states = vec![state.clone()];
        for _ in 0..20 {
            state = free_flight_step(&model, &state, dt);
            states.push(state.clone());
        }
        for k in 1..states.len() - 1 {
            let s = &states[k];
            let h_prev = centroidal_momentum(&model, &states[k - 1]);
            let h_next = centroidal_momentum(&model, &states[k + 1]);
            let dl = (h_next.linear_momentum - h_prev.linear_momentum) / (2.0 * dt);
            let dk = (h_next.angular_momentum - h_prev.angular_momentum) / (2.0 * dt);
            let m = mass_matrix(&model, s);
            let n = nonlinear_terms(&model, s);
            let vdot = m.lu().solve(&(-&n)).unwrap();
            let rate = cmm(&model, s) * vdot + DVector::from_column_slice(
                cmm_rate_bias(&model, s).as_slice(),
            );
            let fd = Vector6::new(dl.x, dl.y, dl.z, dk.x, dk.y, dk.z);
            let diff = Vector6::from_column_slice(rate.as_slice()) - fd;
            assert!(diff.norm() < 1e-6 * fd.norm().max(1.0), "step {k}: {:.3e}", diff.norm());
        }
    }

    #[test]
    fn centroidal_momentum_at_rest() {
        let model = default_quadruped();
        let state = stance_state(&model);
        let x = centroidal_momentum(&model, &state);
        assert_eq!(x.linear_momentum.norm(), 0.0);
        assert_eq!(x.angular_momentum.norm(), 0.0);
    }

    #[test]
    fn centroidal_momentum_spinning_body() {
        let model = single_body_model(
            1.2,
            Vector3::zeros(),
            Vector3::new(0.02, 0.03, 0.05),
            Vector3::zeros(),
        );
        let rot = UnitQuaternion::from_euler_angles(0.4, -0.3, 0.9);
        let mut state = GeneralizedState::at_pose(&model, Vector3::new(0.1, 0.2, 0.3), rot);
        let omega = Vector3::new(0.5, -1.0, 0.8);
        state.set_base_angular_velocity(omega);
        let x = centroidal_momentum(&model, &state);
        let r = rot.to_rotation_matrix();
        let i_world =
            r.matrix() * Matrix3::from_diagonal(&Vector3::new(0.02, 0.03, 0.05)) * r.matrix().transpose();
        assert!(x.linear_momentum.norm() < 1e-14);
        assert_relative_eq!(x.angular_momentum, i_world * omega, epsilon = 1e-12);
    }

    #[test]
    fn cmm_identity_from_mass_matrix() {
        let model = default_quadruped();
        let mut r = rng(22);
        for _ in 0..10 {
            let state = random_state(&model, &mut r);
            let m = mass_matrix(&model, &state);
            let com = com_position(&model, &state);
            let pb = state.base_position();
            // reconstruct by hand: [I 0; -skew(c - p) I] applied to the top rows
            let mut rebuilt = DMatrix::zeros(6, 18);
            rebuilt.view_mut((0, 0), (3, 18)).copy_from(&m.rows(0, 3));
            rebuilt
                .view_mut((3, 0), (3, 18))
                .copy_from(&(m.rows(3, 3) - skew(&(com - pb)) * m.rows(0, 3)));
            let a = cmm(&model, &state);
            assert!((&a - &rebuilt).norm() <= 1e-10);
        }
    }

    #[test]
    fn frame_equivariance_under_base_rotation() {
        let model = default_quadruped();
        let mut r = rng(23);
        let state = random_state(&model, &mut r);
        let x = centroidal_momentum(&model, &state);

        let rot = UnitQuaternion::from_euler_angles(0.3, 0.6, -0.4);
        let rmat = rot.to_rotation_matrix();
        let mut rotated = state.clone();
        rotated.set_base_position(rmat * state.base_position());
        rotated.set_base_orientation(rot * state.base_orientation());
        rotated.set_base_linear_velocity(rmat * state.base_linear_velocity());
        rotated.set_base_angular_velocity(rmat * state.base_angular_velocity());

        let xr = centroidal_momentum(&model, &rotated);
        assert!((xr.com - rmat * x.com).norm() <= 1e-10);
        assert!((xr.linear_momentum - rmat * x.linear_momentum).norm() <= 1e-10);
        assert!((xr.angular_momentum - rmat * x.angular_momentum).norm() <= 1e-10);
    }

    #[test]
    fn state_validation() {
        let model = default_quadruped();
        let ok = GeneralizedState::new(DVector::zeros(19), DVector::zeros(18));
        assert!(matches!(ok, Err(StateError::NonUnitOrientation { .. })));
        let mut q = DVector::zeros(19);
        q[6] = 1.0;
        assert!(GeneralizedState::new(q.clone(), DVector::zeros(18)).is_ok());
        assert!(matches!(
            GeneralizedState::new(q.clone(), DVector::zeros(17)),
            Err(StateError::VelocitySize { .. })
        ));
        q[0] = f64::NAN;
        assert!(matches!(
            GeneralizedState::new(q, DVector::zeros(18)),
            Err(StateError::NonFinite)
        ));
        let _ = model;
    }

    #[test]
    fn perturbation_keeps_quaternion_unit() {
        let model = default_quadruped();
        let mut r = rng(24);
        let state = random_state(&model, &mut r);
        let delta = DVector::from_fn(18, |_, _| {
            use rand::Rng;
            r.gen_range(-0.5..0.5)
        });
        let p = state.perturbed(&delta);
        let q = p.q();
        let norm = (q[3] * q[3] + q[4] * q[4] + q[5] * q[5] + q[6] * q[6]).sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn centroidal_state_vector_order() {
        let x = CentroidalState {
            com: Vector3::new(1.0, 2.0, 3.0),
            linear_momentum: Vector3::new(4.0, 5.0, 6.0),
            angular_momentum: Vector3::new(7.0, 8.0, 9.0),
        };
        let v = x.to_vector();
        assert_eq!(v.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        assert_eq!(CentroidalState::from_vector(&v), x);
    }
}
