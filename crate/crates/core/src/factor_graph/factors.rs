//! Whitened residuals and Jacobians in the retraction chart of
//! [`Pose::retract`]. Everything is computed in the 3D embedding and then
//! restricted to the active rows/columns of the problem dimension.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, Vector3};

use super::{Estimate, Factor, LandmarkFactor, OdometryFactor, PriorFactor};
use crate::geometry::{so3_log, so3_right_jacobian_inv, skew, Pose};

type Matrix6 = SMatrix<f64, 6, 6>;
type Vector6 = SMatrix<f64, 6, 1>;
type Matrix3x6 = SMatrix<f64, 3, 6>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variable {
    Pose(usize),
    Landmark(usize),
}

/// Whitened residual and its Jacobian blocks, one per connected variable.
#[derive(Clone, Debug)]
pub struct Linearization {
    pub residual: DVector<f64>,
    pub jacobians: Vec<(Variable, DMatrix<f64>)>,
}

fn select_vec(v: &[f64], rows: &[usize]) -> DVector<f64> {
    DVector::from_iterator(rows.len(), rows.iter().map(|&r| v[r]))
}

fn select_mat<const R: usize, const C: usize>(
    m: &SMatrix<f64, R, C>,
    rows: &[usize],
    cols: &[usize],
) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

fn stack(rot: Vector3<f64>, trans: Vector3<f64>) -> Vector6 {
    Vector6::from_iterator(rot.iter().chain(trans.iter()).copied())
}

/// Relative-pose error `log(meas⁻¹ ∘ (x_i⁻¹ ∘ x_j))` in the embedding.
fn odometry_raw(o: &OdometryFactor, xi: &Pose, xj: &Pose) -> (Vector6, Matrix3<f64>, Vector3<f64>) {
    let ri = xi.rotation();
    let a = ri.tr_mul(xj.rotation());
    let b = ri.tr_mul(&(xj.translation() - xi.translation()));
    let mr = o.relative.rotation();
    let e = mr.tr_mul(&a);
    let r_rot = so3_log(&e);
    let r_t = mr.tr_mul(&(b - o.relative.translation()));
    (stack(r_rot, r_t), a, b)
}

/// Whitened odometry residual at `(x_i, x_j)`.
pub(crate) fn odometry_error(o: &OdometryFactor, xi: &Pose, xj: &Pose) -> DVector<f64> {
    let (raw, _, _) = odometry_raw(o, xi, xj);
    let idx = xi.dim().tangent_indices();
    &o.sqrt_info * select_vec(raw.as_slice(), idx)
}

fn prior_raw(p: &PriorFactor, x: &Pose) -> Vector6 {
    let tr = p.target.rotation();
    let r_rot = so3_log(&tr.tr_mul(x.rotation()));
    let r_t = tr.tr_mul(&(x.translation() - p.target.translation()));
    stack(r_rot, r_t)
}

fn landmark_raw(l: &LandmarkFactor, x: &Pose, y: &Vector3<f64>) -> Vector3<f64> {
    (x.predict_measurement(y) - l.z) / l.sigma
}

/// Whitened residual of one factor.
pub fn residual(factor: &Factor, est: &Estimate) -> DVector<f64> {
    match factor {
        Factor::Prior(p) => {
            let x = &est.poses[p.pose];
            let raw = prior_raw(p, x);
            &p.sqrt_info * select_vec(raw.as_slice(), x.dim().tangent_indices())
        }
        Factor::Odometry(o) => odometry_error(o, &est.poses[o.from], &est.poses[o.to]),
        Factor::Landmark(l) => {
            let x = &est.poses[l.pose];
            let raw = landmark_raw(l, x, &est.landmarks[l.landmark]);
            select_vec(raw.as_slice(), x.dim().point_indices())
        }
    }
}

/// Whitened residual and Jacobians with respect to each connected variable's
/// tangent (poses) or coordinates (landmarks).
pub fn residual_and_jacobian(factor: &Factor, est: &Estimate) -> Linearization {
    match factor {
        Factor::Prior(p) => {
            let x = &est.poses[p.pose];
            let dim = x.dim();
            let raw = prior_raw(p, x);
            let mut j = Matrix6::zeros();
            let jr = so3_right_jacobian_inv(&Vector3::new(raw[0], raw[1], raw[2]));
            j.fixed_view_mut::<3, 3>(0, 0).copy_from(&jr);
            j.fixed_view_mut::<3, 3>(3, 3).copy_from(&p.target.rotation().transpose());
            let idx = dim.tangent_indices();
            Linearization {
                residual: &p.sqrt_info * select_vec(raw.as_slice(), idx),
                jacobians: vec![(Variable::Pose(p.pose), &p.sqrt_info * select_mat(&j, idx, idx))],
            }
        }
        Factor::Odometry(o) => {
            let (xi, xj) = (&est.poses[o.from], &est.poses[o.to]);
            let dim = xi.dim();
            let (raw, a, b) = odometry_raw(o, xi, xj);
            let jr = so3_right_jacobian_inv(&Vector3::new(raw[0], raw[1], raw[2]));
            let mr_t = o.relative.rotation().transpose();
            let mr_ri_t = mr_t * xi.rotation().transpose();

            let mut ji = Matrix6::zeros();
            ji.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-jr * a.transpose()));
            ji.fixed_view_mut::<3, 3>(3, 0).copy_from(&(mr_t * skew(&b)));
            ji.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-mr_ri_t));

            let mut jj = Matrix6::zeros();
            jj.fixed_view_mut::<3, 3>(0, 0).copy_from(&jr);
            jj.fixed_view_mut::<3, 3>(3, 3).copy_from(&mr_ri_t);

            let idx = dim.tangent_indices();
            Linearization {
                residual: &o.sqrt_info * select_vec(raw.as_slice(), idx),
                jacobians: vec![
                    (Variable::Pose(o.from), &o.sqrt_info * select_mat(&ji, idx, idx)),
                    (Variable::Pose(o.to), &o.sqrt_info * select_mat(&jj, idx, idx)),
                ],
            }
        }
        Factor::Landmark(l) => {
            let x = &est.poses[l.pose];
            let y = &est.landmarks[l.landmark];
            let dim = x.dim();
            let local = x.predict_measurement(y);
            let raw = (local - l.z) / l.sigma;
            let rt = x.rotation().transpose() / l.sigma;
            let mut jp = Matrix3x6::zeros();
            jp.fixed_view_mut::<3, 3>(0, 0).copy_from(&(skew(&local) / l.sigma));
            jp.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-rt));
            let rows = dim.point_indices();
            Linearization {
                residual: select_vec(raw.as_slice(), rows),
                jacobians: vec![
                    (Variable::Pose(l.pose), select_mat(&jp, rows, dim.tangent_indices())),
                    (Variable::Landmark(l.landmark), select_mat(&rt, rows, rows)),
                ],
            }
        }
    }
}

/// Applies a tangent/coordinate step to one variable of an estimate.
#[cfg(test)]
pub(crate) fn perturb(est: &Estimate, var: Variable, delta: &[f64]) -> Estimate {
    let mut out = est.clone();
    match var {
        Variable::Pose(i) => {
            let dim = est.poses[i].dim();
            let t = crate::geometry::Tangent::from_slice(dim, delta).expect("tangent size");
            out.poses[i] = est.poses[i].retract(&t);
        }
        Variable::Landmark(j) => {
            for (k, d) in delta.iter().enumerate() {
                out.landmarks[j][k] += d;
            }
        }
    }
    out
}

#[cfg(test)]
pub(crate) fn variable_size(dim: crate::geometry::Dim, var: Variable) -> usize {
    match var {
        Variable::Pose(_) => dim.dof(),
        Variable::Landmark(_) => dim.d(),
    }
}
