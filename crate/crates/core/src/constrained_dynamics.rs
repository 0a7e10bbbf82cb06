//! Contact-constrained dynamics via nullspace projection.
//!
//! With rigid, stationary point contacts the whole-body dynamics split into a
//! motion component independent of the contact forces and a constraint-space
//! component. The motion component is obtained by projecting with
//! `N = I - J_c^+ J_c`; combined with the constraint-consistent mass matrix
//! `M_c = N M + I - N` it yields the constrained acceleration and, through
//! the centroidal momentum matrix, a torque-affine centroidal momentum rate
//! `ḣ_G = A(q, v) τ + b(q, v)`.
//!
//! [`kkt_forward_dynamics`] solves the same physics as a saddle-point system
//! with explicit contact forces and serves as an independent oracle for the
//! projected route.

use nalgebra::{DMatrix, DVector, Vector6};
use thiserror::Error;

use crate::kinodynamics::{
    cmm_from_mass_matrix, com_from_kinematics, contact_jacobian_from_kinematics,
    contact_jacobian_rate_bias, inverse_dynamics_with_kinematics, mass_matrix_from_kinematics,
    ContactSet, GeneralizedState, Kinematics,
};
use crate::math::pseudo_inverse;
use crate::model::RobotModel;

/// Rank tolerance (relative to the largest singular value) for the contact
/// Jacobian pseudoinverse.
pub const PINV_RANK_TOL: f64 = 1e-10;

/// Condition-number threshold beyond which `M_c` is treated as singular.
pub const MC_CONDITION_LIMIT: f64 = 1e12;

/// Velocity constraint residual above which `v` is projected onto the
/// constraint-consistent subspace before solving.
pub const VELOCITY_RESIDUAL_WARN: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error(
        "constraint-consistent mass matrix is numerically singular (1-norm condition {condition:.3e})"
    )]
    SingularMass { condition: f64 },
    #[error("contact KKT system is singular (rank {rank} of {size})")]
    SingularKkt { rank: usize, size: usize },
}

/// Bundle of the projected-dynamics quantities at one state.
#[derive(Debug, Clone)]
pub struct ProjectedDynamics {
    /// Orthogonal nullspace projector `N`, `(n+6) x (n+6)`.
    pub nullspace: DMatrix<f64>,
    /// `Ṅ v`.
    pub nullspace_rate_v: DVector<f64>,
    /// Constraint-consistent mass matrix `M_c = N M + I - N`.
    pub constrained_mass: DMatrix<f64>,
    /// Torque map `A = A_G M_c^{-1} N B`, `6 x n`.
    pub torque_map: DMatrix<f64>,
    /// Momentum-rate bias `b = A_G M_c^{-1} (Ṅ v - N n) + Ȧ_G v`.
    pub momentum_bias: Vector6<f64>,
    /// 1-norm condition estimate of `M_c`.
    pub condition: f64,
    inv_constrained_mass: DMatrix<f64>,
    projected_bias: DVector<f64>,
    actuated_cols: DMatrix<f64>,
}

fn projector_from_jacobian(jac: &DMatrix<f64>, nv: usize) -> DMatrix<f64> {
    if jac.nrows() == 0 {
        return DMatrix::identity(nv, nv);
    }
    let pinv = pseudo_inverse(jac, PINV_RANK_TOL);
    let mut n = DMatrix::identity(nv, nv) - pinv * jac;
    // the SVD leaves a ~1e-9 idempotency defect when singular values cluster;
    // symmetrize and apply one Newton step toward the exact projector
    n = (&n + n.transpose()) * 0.5;
    let n2 = &n * &n;
    let n3 = &n2 * &n;
    n2 * 3.0 - n3 * 2.0
}

fn directional_step(v: &DVector<f64>) -> f64 {
    1e-5 * v.norm().max(1.0)
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|c| m.column(c).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

impl ProjectedDynamics {
    /// Evaluate the full projected-dynamics bundle at `(q, v)` with the given
    /// contact set.
    pub fn compute(
        model: &RobotModel,
        state: &GeneralizedState,
        contacts: &ContactSet,
    ) -> Result<Self, DynamicsError> {
        let nv = model.nv();
        let n = model.n_joints();
        let kin = Kinematics::compute(model, state);

        let jac = contact_jacobian_from_kinematics(model, &kin, contacts);
        let nullspace = projector_from_jacobian(&jac, nv);

        let mass = mass_matrix_from_kinematics(model, &kin);
        let bias = inverse_dynamics_with_kinematics(model, &kin, state, &DVector::zeros(nv));
        let com = com_from_kinematics(model, &kin);
        let cmm = cmm_from_mass_matrix(&mass, &com, &kin.pos[0]);

        // one shared pair of perturbed evaluations feeds both Ṅv and Ȧ_G v
        let v = state.v();
        let (nullspace_rate_v, cmm_rate_v) = if v.norm() == 0.0 {
            (DVector::zeros(nv), Vector6::zeros())
        } else {
            let eps = directional_step(v);
            let plus = state.perturbed(&(v * (eps / 2.0)));
            let minus = state.perturbed(&(v * (-eps / 2.0)));
            let kin_p = Kinematics::compute(model, &plus);
            let kin_m = Kinematics::compute(model, &minus);

            let n_p = projector_from_jacobian(
                &contact_jacobian_from_kinematics(model, &kin_p, contacts),
                nv,
            );
            let n_m = projector_from_jacobian(
                &contact_jacobian_from_kinematics(model, &kin_m, contacts),
                nv,
            );
            let n_rate_v = ((n_p - n_m) / eps) * v;

            let m_p = mass_matrix_from_kinematics(model, &kin_p);
            let m_m = mass_matrix_from_kinematics(model, &kin_m);
            let a_p =
                cmm_from_mass_matrix(&m_p, &com_from_kinematics(model, &kin_p), &kin_p.pos[0]);
            let a_m =
                cmm_from_mass_matrix(&m_m, &com_from_kinematics(model, &kin_m), &kin_m.pos[0]);
            let a_rate_v = ((a_p - a_m) / eps) * v;
            (n_rate_v, Vector6::from_column_slice(a_rate_v.as_slice()))
        };

        let constrained_mass = &nullspace * &mass + DMatrix::identity(nv, nv) - &nullspace;
        let inv_constrained_mass =
            constrained_mass
                .clone()
                .lu()
                .try_inverse()
                .ok_or(DynamicsError::SingularMass {
                    condition: f64::INFINITY,
                })?;
        let condition = one_norm(&constrained_mass) * one_norm(&inv_constrained_mass);
        if condition > MC_CONDITION_LIMIT {
            return Err(DynamicsError::SingularMass { condition });
        }
        log::debug!("constrained mass matrix 1-norm condition: {condition:.3e}");

        // N B is the actuated column block of N
        let actuated_cols = nullspace.columns(6, n).clone_owned();
        let torque_map = &cmm * &inv_constrained_mass * &actuated_cols;
        let projected_bias = &nullspace_rate_v - &nullspace * &bias;
        let b_vec = &cmm * (&inv_constrained_mass * &projected_bias);
        let momentum_bias = Vector6::from_column_slice(b_vec.as_slice()) + cmm_rate_v;

        Ok(ProjectedDynamics {
            nullspace,
            nullspace_rate_v,
            constrained_mass,
            torque_map,
            momentum_bias,
            condition,
            inv_constrained_mass,
            projected_bias,
            actuated_cols,
        })
    }

    /// Constrained generalized acceleration for joint torques `tau`.
    pub fn acceleration(&self, tau: &DVector<f64>) -> DVector<f64> {
        &self.inv_constrained_mass * (&self.projected_bias + &self.actuated_cols * tau)
    }

    /// Centroidal momentum rate `A τ + b`.
    pub fn momentum_rate(&self, tau: &DVector<f64>) -> Vector6<f64> {
        let r = &self.torque_map * tau;
        Vector6::from_column_slice(r.as_slice()) + self.momentum_bias
    }
}

/// Orthogonal projector `N = I - J_c^+ J_c` onto motions that do not move the
/// active contact points. `N = I` when no feet are in contact.
pub fn nullspace_projector(
    model: &RobotModel,
    state: &GeneralizedState,
    contacts: &ContactSet,
) -> DMatrix<f64> {
    let kin = Kinematics::compute(model, state);
    let jac = contact_jacobian_from_kinematics(model, &kin, contacts);
    projector_from_jacobian(&jac, model.nv())
}

/// `Ṅ v` by central finite differences of the projector along `v`.
pub fn projector_rate_times_v(
    model: &RobotModel,
    state: &GeneralizedState,
    contacts: &ContactSet,
) -> DVector<f64> {
    let nv = model.nv();
    let v = state.v();
    if v.norm() == 0.0 {
        return DVector::zeros(nv);
    }
    let eps = directional_step(v);
    let plus = state.perturbed(&(v * (eps / 2.0)));
    let minus = state.perturbed(&(v * (-eps / 2.0)));
    let n_p = nullspace_projector(model, &plus, contacts);
    let n_m = nullspace_projector(model, &minus, contacts);
    ((n_p - n_m) / eps) * v
}

/// Generalized acceleration under rigid stationary contacts,
/// `v̇ = M_c^{-1} (Ṅ v - N n + N B τ)`.
///
/// When `‖J_c v‖` exceeds [`VELOCITY_RESIDUAL_WARN`] the velocity is projected
/// onto the constraint-consistent subspace first (and a warning logged),
/// since the constraint differentiation assumes stationary contact points.
pub fn constrained_acceleration(
    model: &RobotModel,
    state: &GeneralizedState,
    tau: &DVector<f64>,
    contacts: &ContactSet,
) -> Result<DVector<f64>, DynamicsError> {
    let consistent = constraint_consistent_state(model, state, contacts);
    let dynamics = ProjectedDynamics::compute(model, &consistent, contacts)?;
    Ok(dynamics.acceleration(tau))
}

/// Project the velocity with `N` if the contact-velocity residual is above
/// [`VELOCITY_RESIDUAL_WARN`]; otherwise return the state unchanged.
pub fn constraint_consistent_state(
    model: &RobotModel,
    state: &GeneralizedState,
    contacts: &ContactSet,
) -> GeneralizedState {
    if contacts.is_empty() {
        return state.clone();
    }
    let kin = Kinematics::compute(model, state);
    let jac = contact_jacobian_from_kinematics(model, &kin, contacts);
    let residual = (&jac * state.v()).norm();
    if residual <= VELOCITY_RESIDUAL_WARN {
        return state.clone();
    }
    log::warn!(
        "contact velocity residual {residual:.3e} exceeds {VELOCITY_RESIDUAL_WARN:.0e}; projecting v"
    );
    let nullspace = projector_from_jacobian(&jac, model.nv());
    state.with_velocity(&nullspace * state.v())
}

/// Coefficients `(A, b)` of the torque-affine centroidal momentum rate
/// `ḣ_G = A(q, v) τ + b(q, v)`, with `A` of shape `6 x n`.
pub fn momentum_dynamics_coefficients(
    model: &RobotModel,
    state: &GeneralizedState,
    contacts: &ContactSet,
) -> Result<(DMatrix<f64>, Vector6<f64>), DynamicsError> {
    let dynamics = ProjectedDynamics::compute(model, state, contacts)?;
    Ok((dynamics.torque_map, dynamics.momentum_bias))
}

/// Independent contact dynamics oracle: solves the saddle-point system
///
/// ```text
/// [ M   J_c^T ] [  v̇ ]   [ B τ - n  ]
/// [ J_c  0    ] [ -λ  ] = [ -J̇_c v  ]
/// ```
///
/// by full-pivot LU, returning the generalized acceleration and the stacked
/// contact forces on the active feet.
pub fn kkt_forward_dynamics(
    model: &RobotModel,
    state: &GeneralizedState,
    tau: &DVector<f64>,
    contacts: &ContactSet,
) -> Result<(DVector<f64>, DVector<f64>), DynamicsError> {
    let nv = model.nv();
    let nc = 3 * contacts.len();
    let kin = Kinematics::compute(model, state);
    let mass = mass_matrix_from_kinematics(model, &kin);
    let bias = inverse_dynamics_with_kinematics(model, &kin, state, &DVector::zeros(nv));

    let mut top = -bias;
    for (j, t) in tau.iter().enumerate() {
        top[6 + j] += *t;
    }

    if nc == 0 {
        let vdot = mass
            .lu()
            .solve(&top)
            .ok_or(DynamicsError::SingularKkt { rank: 0, size: nv })?;
        return Ok((vdot, DVector::zeros(0)));
    }

    let jac = contact_jacobian_from_kinematics(model, &kin, contacts);
    let jdot_v = contact_jacobian_rate_bias(model, state, contacts);

    let size = nv + nc;
    let mut kkt = DMatrix::zeros(size, size);
    kkt.view_mut((0, 0), (nv, nv)).copy_from(&mass);
    kkt.view_mut((0, nv), (nv, nc)).copy_from(&jac.transpose());
    kkt.view_mut((nv, 0), (nc, nv)).copy_from(&jac);
    let mut rhs = DVector::zeros(size);
    rhs.rows_mut(0, nv).copy_from(&top);
    rhs.rows_mut(nv, nc).copy_from(&(-jdot_v));

    let lu = kkt.full_piv_lu();
    // rank from the U factor diagonal, relative tolerance
    let u = lu.u();
    let diag: Vec<f64> = (0..size).map(|i| u[(i, i)].abs()).collect();
    let dmax = diag.iter().cloned().fold(0.0, f64::max);
    let rank = diag.iter().filter(|d| **d > 1e-12 * dmax).count();
    if rank < size {
        return Err(DynamicsError::SingularKkt { rank, size });
    }
    let sol = lu
        .solve(&rhs)
        .ok_or(DynamicsError::SingularKkt { rank, size })?;
    let vdot = sol.rows(0, nv).clone_owned();
    let lambda = -sol.rows(nv, nc).clone_owned();
    Ok((vdot, lambda))
}
