//! Small linear-algebra helpers shared across the dynamics and estimation code.

use nalgebra::{DMatrix, DVector, Matrix3, Quaternion, UnitQuaternion, Vector3};

/// Skew-symmetric (cross-product) matrix: `skew(a) * b == a.cross(&b)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Unit quaternion from `[x, y, z, w]` (scalar-last) components.
pub fn quat_from_xyzw(x: f64, y: f64, z: f64, w: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z))
}

/// `[x, y, z, w]` (scalar-last) components of a unit quaternion.
pub fn quat_to_xyzw(q: &UnitQuaternion<f64>) -> [f64; 4] {
    [q.i, q.j, q.k, q.w]
}

/// Moore-Penrose pseudoinverse via SVD with a rank tolerance relative to the
/// largest singular value. Singular values below `rel_tol * sigma_max` are
/// treated as zero.
pub fn pseudo_inverse(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let svd = m.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let tol = rel_tol * sigma_max;
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let mut inv_s = DMatrix::zeros(v_t.nrows(), u.ncols());
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s > tol {
            inv_s[(i, i)] = 1.0 / s;
        }
    }
    v_t.transpose() * inv_s * u.transpose()
}

/// Damped (Tikhonov-regularized) pseudoinverse: each singular value `s` is
/// inverted as `s / (s^2 + damping^2)`. Used near kinematic singularities
/// where a plain pseudoinverse would blow up.
pub fn damped_pseudo_inverse(m: &DMatrix<f64>, damping: f64) -> DMatrix<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let mut inv_s = DMatrix::zeros(v_t.nrows(), u.ncols());
    for (i, s) in svd.singular_values.iter().enumerate() {
        inv_s[(i, i)] = s / (s * s + damping * damping);
    }
    v_t.transpose() * inv_s * u.transpose()
}

/// Numerical rank from singular values, with tolerance relative to sigma_max.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let sigma_max = sv.max();
    if sigma_max == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > rel_tol * sigma_max).count()
}

/// 2-norm condition number (sigma_max / sigma_min); `f64::INFINITY` when the
/// smallest singular value underflows to zero.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solve `a * x = b` in the least-squares sense, returning the minimum-norm
/// solution for wide or rank-deficient systems.
pub fn least_norm_solve(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> DVector<f64> {
    pseudo_inverse(a, rel_tol) * b
}
