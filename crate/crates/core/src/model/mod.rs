//! Robot description: kinematic tree, link inertias, foot frames.
//!
//! A model is a tree of links connected by joints. The first body is a 6-DoF
//! floating base; every other joint is a 1-DoF revolute. Models are immutable
//! after load and safe to share across threads.

mod format;

pub use format::{load_model, parse_model, save_model, write_model_string};

use nalgebra::{DMatrix, Matrix3, UnitQuaternion, Vector3};
use thiserror::Error;

/// Error raised when a model file cannot be read or parsed.
#[derive(Debug, Error)]
pub enum ParseError {
    #[error("io error reading model: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
}

/// Error raised when a structurally well-formed model violates an invariant.
#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("link '{link}': {message}")]
    Link { link: String, message: String },
    #[error("joint '{joint}': {message}")]
    Joint { joint: String, message: String },
    #[error("model: {0}")]
    Structure(String),
}

/// Error from [`load_model`]: parse failure or invariant violation.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

/// Inertial description of one rigid body.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkSpec {
    pub name: String,
    /// Mass in kg (>= 0).
    pub mass: f64,
    /// Center of mass in the link frame, m.
    pub com_offset: Vector3<f64>,
    /// Rotational inertia about the link CoM, link frame, kg m^2.
    pub rotational_inertia: Matrix3<f64>,
}

/// Joint kind. Exactly one floating joint sits at the root of the tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointType {
    Floating,
    Revolute,
}

/// Connection between a parent and child link.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    pub name: String,
    /// Parent link name; the root floating joint uses "world".
    pub parent: String,
    pub child: String,
    pub joint_type: JointType,
    /// Rotation axis in the joint frame (unit for revolute joints).
    pub axis: Vector3<f64>,
    /// Fixed transform from the parent frame to the joint frame.
    pub placement_translation: Vector3<f64>,
    pub placement_rotation: UnitQuaternion<f64>,
}

/// A point frame rigidly attached to a leg endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct FootFrame {
    pub name: String,
    /// Index of the link the foot is attached to.
    pub link: usize,
    /// Foot point in the link frame, m.
    pub offset: Vector3<f64>,
}

/// Validated robot model. Link 0 is the floating base; actuated joint `j`
/// maps to generalized-velocity coordinate `6 + j`.
#[derive(Debug, Clone)]
pub struct RobotModel {
    links: Vec<LinkSpec>,
    joints: Vec<JointSpec>,
    feet: Vec<FootFrame>,
    gravity: Vector3<f64>,
    /// Parent link index per link; `usize::MAX` for the base.
    parent: Vec<usize>,
    /// Actuated joint index (into `actuated`) whose child is link i; base has none.
    inboard_joint: Vec<Option<usize>>,
    /// Indices into `joints` for the actuated (revolute) joints, in file order.
    actuated: Vec<usize>,
}

impl RobotModel {
    /// Assemble and validate a model from raw parts.
    pub fn new(
        links: Vec<LinkSpec>,
        joints: Vec<JointSpec>,
        feet: Vec<(String, String, Vector3<f64>)>,
        gravity: Vector3<f64>,
    ) -> Result<Self, ValidationError> {
        validate_links(&links)?;
        let (parent, inboard_joint, actuated, order) = validate_tree(&links, &joints)?;

        // Reorder links topologically (parent before child) so kinematics can
        // run in a single forward pass.
        let mut model = RobotModel {
            links,
            joints,
            feet: Vec::new(),
            gravity,
            parent,
            inboard_joint,
            actuated,
        };
        model.apply_order(&order);

        let mut foot_frames = Vec::new();
        for (name, link_name, offset) in feet {
            let link = model
                .link_index(&link_name)
                .ok_or_else(|| ValidationError::Structure(format!(
                    "foot '{name}' references unknown link '{link_name}'"
                )))?;
            foot_frames.push(FootFrame { name, link, offset });
        }
        model.feet = foot_frames;

        if model.total_mass() <= 0.0 {
            return Err(ValidationError::Structure(
                "total mass must be positive".into(),
            ));
        }
        Ok(model)
    }

    fn apply_order(&mut self, order: &[usize]) {
        if order.iter().enumerate().all(|(i, &o)| i == o) {
            return;
        }
        let mut new_index = vec![0usize; order.len()];
        for (new, &old) in order.iter().enumerate() {
            new_index[old] = new;
        }
        let links = order.iter().map(|&o| self.links[o].clone()).collect();
        let parent = order
            .iter()
            .map(|&o| {
                let p = self.parent[o];
                if p == usize::MAX { usize::MAX } else { new_index[p] }
            })
            .collect();
        let inboard = order.iter().map(|&o| self.inboard_joint[o]).collect();
        self.links = links;
        self.parent = parent;
        self.inboard_joint = inboard;
    }

    /// Number of actuated degrees of freedom (`n`).
    pub fn n_joints(&self) -> usize {
        self.actuated.len()
    }

    /// Size of the generalized-velocity vector, `n + 6`.
    pub fn nv(&self) -> usize {
        self.n_joints() + 6
    }

    /// Size of the configuration vector, `n + 7` (quaternion base orientation).
    pub fn nq(&self) -> usize {
        self.n_joints() + 7
    }

    pub fn n_links(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[LinkSpec] {
        &self.links
    }

    pub fn joints(&self) -> &[JointSpec] {
        &self.joints
    }

    pub fn foot_frames(&self) -> &[FootFrame] {
        &self.feet
    }

    pub fn n_feet(&self) -> usize {
        self.feet.len()
    }

    /// Gravity vector in world coordinates, m/s^2.
    pub fn gravity(&self) -> Vector3<f64> {
        self.gravity
    }

    /// Sum of link masses, kg.
    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }

    /// Parent link index; `None` for the floating base.
    pub fn parent_link(&self, link: usize) -> Option<usize> {
        match self.parent[link] {
            usize::MAX => None,
            p => Some(p),
        }
    }

    /// Actuated-joint index (0..n) whose child frame is `link`.
    pub fn inboard_actuated_joint(&self, link: usize) -> Option<usize> {
        self.inboard_joint[link]
    }

    /// The [`JointSpec`] of actuated joint `j` (0..n).
    pub fn actuated_joint(&self, j: usize) -> &JointSpec {
        &self.joints[self.actuated[j]]
    }

    /// Child link index of actuated joint `j`.
    pub fn actuated_joint_child(&self, j: usize) -> usize {
        // built during validation: child link of joint j
        self.inboard_joint
            .iter()
            .position(|ib| *ib == Some(j))
            .expect("actuated joint has a child link")
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    pub fn foot_index(&self, name: &str) -> Option<usize> {
        self.feet.iter().position(|f| f.name == name)
    }

    /// Actuated joints on the path from the base to `link`, base-outward.
    pub fn joint_path(&self, link: usize) -> Vec<usize> {
        let mut path = Vec::new();
        let mut cur = link;
        while let Some(p) = self.parent_link(cur) {
            if let Some(j) = self.inboard_joint[cur] {
                path.push(j);
            }
            cur = p;
        }
        path.reverse();
        path
    }

    /// Actuated joints belonging to the leg that ends at foot `foot`.
    pub fn leg_joints(&self, foot: usize) -> Vec<usize> {
        self.joint_path(self.feet[foot].link)
    }

    /// Selection matrix `B` of shape `(n+6) x n`: zero rows for the floating
    /// base, identity for the actuated joints.
    pub fn selection_matrix(&self) -> DMatrix<f64> {
        let n = self.n_joints();
        let mut b = DMatrix::zeros(n + 6, n);
        for j in 0..n {
            b[(6 + j, j)] = 1.0;
        }
        b
    }
}

fn validate_links(links: &[LinkSpec]) -> Result<(), ValidationError> {
    if links.is_empty() {
        return Err(ValidationError::Structure("model has no links".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for link in links {
        if !seen.insert(link.name.clone()) {
            return Err(ValidationError::Link {
                link: link.name.clone(),
                message: "duplicate link name".into(),
            });
        }
        if !(link.mass >= 0.0) || !link.mass.is_finite() {
            return Err(ValidationError::Link {
                link: link.name.clone(),
                message: format!("mass must be finite and >= 0, got {}", link.mass),
            });
        }
        if link.com_offset.iter().any(|v| !v.is_finite()) {
            return Err(ValidationError::Link {
                link: link.name.clone(),
                message: "com offset has non-finite entries".into(),
            });
        }
        let inertia = link.rotational_inertia;
        let asym = (inertia - inertia.transpose()).norm();
        if asym > 1e-9 * (1.0 + inertia.norm()) {
            return Err(ValidationError::Link {
                link: link.name.clone(),
                message: "inertia matrix is not symmetric".into(),
            });
        }
        let sym = (inertia + inertia.transpose()) * 0.5;
        let eig = sym.symmetric_eigen().eigenvalues;
        let scale = eig.amax().max(1e-30);
        if eig.iter().any(|e| *e < -1e-12 * scale) {
            return Err(ValidationError::Link {
                link: link.name.clone(),
                message: "inertia matrix has a negative eigenvalue".into(),
            });
        }
        // principal moments of a physical body satisfy the triangle inequality
        let mut p = [eig[0], eig[1], eig[2]];
        p.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if p[0] + p[1] < p[2] - 1e-12 * scale {
            return Err(ValidationError::Link {
                link: link.name.clone(),
                message: "principal moments violate the triangle inequality".into(),
            });
        }
    }
    Ok(())
}

type TreeInfo = (Vec<usize>, Vec<Option<usize>>, Vec<usize>, Vec<usize>);

/// Check the joint graph is a tree rooted at a single floating joint and
/// return (parent per link, inboard actuated joint per link, actuated joint
/// list, topological link order).
fn validate_tree(links: &[LinkSpec], joints: &[JointSpec]) -> Result<TreeInfo, ValidationError> {
    let n_links = links.len();
    let link_index = |name: &str| links.iter().position(|l| l.name == name);

    let mut floating = Vec::new();
    let mut actuated = Vec::new();
    for (ji, joint) in joints.iter().enumerate() {
        match joint.joint_type {
            JointType::Floating => floating.push(ji),
            JointType::Revolute => {
                let norm = joint.axis.norm();
                if (norm - 1.0).abs() > 1e-9 {
                    return Err(ValidationError::Joint {
                        joint: joint.name.clone(),
                        message: format!("revolute axis must have unit norm, got {norm}"),
                    });
                }
                actuated.push(ji);
            }
        }
    }
    if floating.len() != 1 {
        return Err(ValidationError::Structure(format!(
            "model must have exactly one floating joint, found {}",
            floating.len()
        )));
    }
    let root_joint = &joints[floating[0]];
    if root_joint.parent != "world" {
        return Err(ValidationError::Joint {
            joint: root_joint.name.clone(),
            message: "floating joint parent must be 'world'".into(),
        });
    }
    if root_joint.placement_translation.norm() > 0.0
        || root_joint.placement_rotation.angle() > 0.0
    {
        return Err(ValidationError::Joint {
            joint: root_joint.name.clone(),
            message: "floating joint placement must be identity".into(),
        });
    }
    let base = link_index(&root_joint.child).ok_or_else(|| ValidationError::Joint {
        joint: root_joint.name.clone(),
        message: format!("unknown child link '{}'", root_joint.child),
    })?;

    let mut parent = vec![usize::MAX; n_links];
    let mut inboard = vec![None; n_links];
    let mut has_parent = vec![false; n_links];
    has_parent[base] = true;

    for (ai, &ji) in actuated.iter().enumerate() {
        let joint = &joints[ji];
        let p = link_index(&joint.parent).ok_or_else(|| ValidationError::Joint {
            joint: joint.name.clone(),
            message: format!("unknown parent link '{}'", joint.parent),
        })?;
        let c = link_index(&joint.child).ok_or_else(|| ValidationError::Joint {
            joint: joint.name.clone(),
            message: format!("unknown child link '{}'", joint.child),
        })?;
        if c == base {
            return Err(ValidationError::Joint {
                joint: joint.name.clone(),
                message: "revolute joint cannot drive the floating base".into(),
            });
        }
        if has_parent[c] {
            return Err(ValidationError::Joint {
                joint: joint.name.clone(),
                message: format!("link '{}' has more than one parent", joint.child),
            });
        }
        has_parent[c] = true;
        parent[c] = p;
        inboard[c] = Some(ai);
    }

    if let Some(orphan) = has_parent.iter().position(|h| !h) {
        return Err(ValidationError::Link {
            link: links[orphan].name.clone(),
            message: "link is not connected to the tree".into(),
        });
    }

    // Topological order via BFS from the base; a cycle leaves links unvisited.
    let mut order = vec![base];
    let mut visited = vec![false; n_links];
    visited[base] = true;
    let mut head = 0;
    while head < order.len() {
        let cur = order[head];
        head += 1;
        for l in 0..n_links {
            if !visited[l] && parent[l] == cur {
                visited[l] = true;
                order.push(l);
            }
        }
    }
    if order.len() != n_links {
        let stuck = (0..n_links).find(|l| !visited[*l]).unwrap();
        return Err(ValidationError::Structure(format!(
            "cycle detected involving link '{}'",
            links[stuck].name
        )));
    }
    if order[0] != base {
        return Err(ValidationError::Structure(
            "floating base must be the first body".into(),
        ));
    }

    Ok((parent, inboard, actuated, order))
}

/// Deterministic 12-DoF quadruped: a base plus four legs of
/// hip-abduction / hip-flexion / knee, with point feet. Round-number link
/// parameters, total mass 2.5 kg.
pub fn default_quadruped() -> RobotModel {
    let base_inertia = Matrix3::from_diagonal(&Vector3::new(0.0045, 0.016, 0.018));
    let hip_inertia = Matrix3::from_diagonal(&Vector3::new(5.0e-5, 5.0e-5, 5.0e-5));
    let segment_inertia = |mass: f64| {
        // slender rod of length 0.16 along z
        let i = mass * 0.16 * 0.16 / 12.0;
        Matrix3::from_diagonal(&Vector3::new(i, i, 1.0e-5 * mass / 0.15))
    };

    let mut links = vec![LinkSpec {
        name: "base".into(),
        mass: 1.1,
        com_offset: Vector3::zeros(),
        rotational_inertia: base_inertia,
    }];
    let mut joints = vec![JointSpec {
        name: "root".into(),
        parent: "world".into(),
        child: "base".into(),
        joint_type: JointType::Floating,
        axis: Vector3::zeros(),
        placement_translation: Vector3::zeros(),
        placement_rotation: UnitQuaternion::identity(),
    }];
    let mut feet = Vec::new();

    // (prefix, hip x, hip y)
    let legs: [(&str, f64, f64); 4] = [
        ("fl", 0.2, 0.1),
        ("fr", 0.2, -0.1),
        ("hl", -0.2, 0.1),
        ("hr", -0.2, -0.1),
    ];
    for (prefix, hip_x, hip_y) in legs {
        let side = hip_y.signum();
        let hip = format!("{prefix}_hip");
        let upper = format!("{prefix}_upper");
        let lower = format!("{prefix}_lower");

        links.push(LinkSpec {
            name: hip.clone(),
            mass: 0.15,
            com_offset: Vector3::new(0.0, side * 0.025, 0.0),
            rotational_inertia: hip_inertia,
        });
        links.push(LinkSpec {
            name: upper.clone(),
            mass: 0.15,
            com_offset: Vector3::new(0.0, 0.0, -0.08),
            rotational_inertia: segment_inertia(0.15),
        });
        links.push(LinkSpec {
            name: lower.clone(),
            mass: 0.05,
            com_offset: Vector3::new(0.0, 0.0, -0.08),
            rotational_inertia: segment_inertia(0.05),
        });

        joints.push(JointSpec {
            name: format!("{prefix}_haa"),
            parent: "base".into(),
            child: hip.clone(),
            joint_type: JointType::Revolute,
            axis: Vector3::x(),
            placement_translation: Vector3::new(hip_x, hip_y, 0.0),
            placement_rotation: UnitQuaternion::identity(),
        });
        joints.push(JointSpec {
            name: format!("{prefix}_hfe"),
            parent: hip.clone(),
            child: upper.clone(),
            joint_type: JointType::Revolute,
            axis: Vector3::y(),
            placement_translation: Vector3::new(0.0, side * 0.05, 0.0),
            placement_rotation: UnitQuaternion::identity(),
        });
        joints.push(JointSpec {
            name: format!("{prefix}_kfe"),
            parent: upper.clone(),
            child: lower.clone(),
            joint_type: JointType::Revolute,
            axis: Vector3::y(),
            placement_translation: Vector3::new(0.0, 0.0, -0.16),
            placement_rotation: UnitQuaternion::identity(),
        });

        feet.push((
            format!("{prefix}_foot"),
            lower.clone(),
            Vector3::new(0.0, 0.0, -0.16),
        ));
    }

    RobotModel::new(links, joints, feet, Vector3::new(0.0, 0.0, -9.81))
        .expect("default quadruped is valid")
}

/// Length of the upper and lower leg segments of the default quadruped, m.
pub const DEFAULT_LEG_SEGMENT: f64 = 0.16;
/// Lateral hip-to-leg-plane offset of the default quadruped, m.
pub const DEFAULT_HIP_OFFSET: f64 = 0.05;

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn default_quadruped_dimensions() {
        let model = default_quadruped();
        assert_eq!(model.n_joints(), 12);
        assert_eq!(model.nv(), 18);
        assert_eq!(model.n_feet(), 4);
        assert_eq!(model.n_links(), 13);
    }

    #[test]
    fn default_quadruped_total_mass() {
        let model = default_quadruped();
        let sum: f64 = model.links().iter().map(|l| l.mass).sum();
        assert_relative_eq!(model.total_mass(), sum, epsilon = 1e-15);
        assert_relative_eq!(model.total_mass(), 2.5, epsilon = 1e-12);
    }

    #[test]
    fn selection_matrix_structure() {
        let model = default_quadruped();
        let b = model.selection_matrix();
        assert_eq!((b.nrows(), b.ncols()), (18, 12));
        for r in 0..6 {
            for c in 0..12 {
                assert_eq!(b[(r, c)], 0.0);
            }
        }
        for j in 0..12 {
            for c in 0..12 {
                assert_eq!(b[(6 + j, c)], if c == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn default_quadruped_mirror_symmetry() {
        let model = default_quadruped();
        // left/right pairs share x and mirror y in the hip placements
        for (l, r) in [("fl_haa", "fr_haa"), ("hl_haa", "hr_haa")] {
            let jl = model.joints().iter().find(|j| j.name == l).unwrap();
            let jr = model.joints().iter().find(|j| j.name == r).unwrap();
            assert_eq!(jl.placement_translation.x, jr.placement_translation.x);
            assert_eq!(jl.placement_translation.y, -jr.placement_translation.y);
            assert_eq!(jl.placement_translation.z, jr.placement_translation.z);
        }
    }

    #[test]
    fn total_mass_scales_linearly() {
        let model = default_quadruped();
        let mut links = model.links().to_vec();
        for l in &mut links {
            l.mass *= 2.0;
        }
        let feet = model
            .foot_frames()
            .iter()
            .map(|f| (f.name.clone(), model.links()[f.link].name.clone(), f.offset))
            .collect();
        let doubled =
            RobotModel::new(links, model.joints().to_vec(), feet, model.gravity()).unwrap();
        assert_relative_eq!(doubled.total_mass(), 2.0 * model.total_mass(), epsilon = 1e-12);
    }

    #[test]
    fn single_body_total_mass() {
        let links = vec![LinkSpec {
            name: "body".into(),
            mass: 2.0,
            com_offset: Vector3::zeros(),
            rotational_inertia: Matrix3::identity() * 0.1,
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
        let model = RobotModel::new(links, joints, vec![], Vector3::new(0.0, 0.0, -9.81)).unwrap();
        assert_eq!(model.n_joints(), 0);
        assert_relative_eq!(model.total_mass(), 2.0);
    }

    #[test]
    fn rejects_negative_mass() {
        let model = default_quadruped();
        let mut links = model.links().to_vec();
        links[3].mass = -0.1;
        let name = links[3].name.clone();
        let feet = model
            .foot_frames()
            .iter()
            .map(|f| (f.name.clone(), model.links()[f.link].name.clone(), f.offset))
            .collect();
        let err = RobotModel::new(links, model.joints().to_vec(), feet, model.gravity())
            .unwrap_err();
        match err {
            ValidationError::Link { link, .. } => assert_eq!(link, name),
            other => panic!("expected link error, got {other}"),
        }
    }

    #[test]
    fn rejects_cycle() {
        let model = default_quadruped();
        let mut joints = model.joints().to_vec();
        // fl_haa's parent becomes fl_lower: fl leg now forms a loop off the tree
        let haa = joints.iter_mut().find(|j| j.name == "fl_haa").unwrap();
        haa.parent = "fl_lower".into();
        let feet = model
            .foot_frames()
            .iter()
            .map(|f| (f.name.clone(), model.links()[f.link].name.clone(), f.offset))
            .collect();
        assert!(RobotModel::new(model.links().to_vec(), joints, feet, model.gravity()).is_err());
    }

    #[test]
    fn rejects_non_unit_axis() {
        let model = default_quadruped();
        let mut joints = model.joints().to_vec();
        joints.iter_mut().find(|j| j.name == "fl_kfe").unwrap().axis *= 2.0;
        let feet = model
            .foot_frames()
            .iter()
            .map(|f| (f.name.clone(), model.links()[f.link].name.clone(), f.offset))
            .collect();
        assert!(RobotModel::new(model.links().to_vec(), joints, feet, model.gravity()).is_err());
    }

    #[test]
    fn leg_joint_paths() {
        let model = default_quadruped();
        for foot in 0..4 {
            let joints = model.leg_joints(foot);
            assert_eq!(joints.len(), 3);
            // chain order: haa, hfe, kfe
            assert!(model.actuated_joint(joints[0]).name.ends_with("haa"));
            assert!(model.actuated_joint(joints[1]).name.ends_with("hfe"));
            assert!(model.actuated_joint(joints[2]).name.ends_with("kfe"));
        }
    }
}
