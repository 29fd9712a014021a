//! Inverse kinematics: closed-form initialization followed by
//! Levenberg-Marquardt on all 46 pose parameters.

use nalgebra::{DMatrix, DVector, Matrix3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::fk::{finger_base, fk_unchecked};
use super::{finger_joint, mpjpe, HandPose, Side, Skeleton, NUM_FINGERS, NUM_JOINTS};
use crate::dual::Dual;
use crate::error::{Error, Result};
use crate::geom::{Mat3, Vec3};

const NP: usize = 46;
const NR: usize = 3 * NUM_JOINTS;
const MIN_LENGTH: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FitConfig {
    pub max_iters: usize,
    /// Extra attempts from perturbed starts when the residual stays above
    /// `restart_threshold_mm`.
    pub restarts: usize,
    pub restart_threshold_mm: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { max_iters: 100, restarts: 3, restart_threshold_mm: 1.0, seed: 42 }
    }
}

/// Fits a pose to `target` and returns it with its MPJPE residual in mm.
pub fn fit_pose(target: &Skeleton<f64>, init: Option<&HandPose<f64>>) -> Result<(HandPose<f64>, f64)> {
    fit_pose_with(target, init, &FitConfig::default())
}

pub fn fit_pose_with(
    target: &Skeleton<f64>,
    init: Option<&HandPose<f64>>,
    cfg: &FitConfig,
) -> Result<(HandPose<f64>, f64)> {
    if !target.is_finite() {
        return Err(Error::InvalidPose("target has non-finite joints".into()));
    }
    let side = target.side;
    let start = match init {
        Some(p) => {
            p.validate()?;
            if p.side != side {
                return Err(Error::InvalidPose("init side differs from target side".into()));
            }
            p.clone()
        }
        None => analytic_init(target),
    };
    let mut best = levenberg_marquardt(pack(&start), side, target, cfg.max_iters);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let angle_noise = Normal::new(0.0, 0.3).unwrap();
    let rot_noise = Normal::new(0.0, 0.2).unwrap();
    for _ in 0..cfg.restarts {
        if best.1 <= cfg.restart_threshold_mm {
            break;
        }
        let mut x = best.0;
        for v in x[0..3].iter_mut() {
            *v += rot_noise.sample(&mut rng);
        }
        for v in x[6..26].iter_mut() {
            *v += angle_noise.sample(&mut rng);
        }
        let cand = levenberg_marquardt(x, side, target, cfg.max_iters);
        if cand.1 < best.1 {
            best = cand;
        }
    }
    let pose = unpack(&best.0, side);
    let residual = mpjpe(&fk_unchecked(&pose).joints, &target.joints)?;
    Ok((pose, residual))
}

fn pack(p: &HandPose<f64>) -> [f64; NP] {
    let mut x = [0.0; NP];
    x[0..3].copy_from_slice(&p.global_rotation);
    x[3..6].copy_from_slice(&p.global_translation);
    x[6..26].copy_from_slice(&p.joint_angles);
    x[26..46].copy_from_slice(&p.bone_lengths);
    x
}

fn unpack<T: Copy>(x: &[T; NP], side: Side) -> HandPose<T> {
    HandPose {
        side,
        global_rotation: std::array::from_fn(|i| x[i]),
        global_translation: std::array::from_fn(|i| x[3 + i]),
        joint_angles: std::array::from_fn(|i| x[6 + i]),
        bone_lengths: std::array::from_fn(|i| x[26 + i]),
    }
}

fn safe_dir(v: Vec3<f64>, fallback: Vec3<f64>) -> Vec3<f64> {
    let n = v.norm();
    if n > 1e-9 {
        v * (1.0 / n)
    } else {
        fallback
    }
}

/// Closed-form pose: bone lengths from joint distances, global rotation by
/// aligning the five metacarpal directions, then per-finger angles read off
/// the successive bone directions.
fn analytic_init(target: &Skeleton<f64>) -> HandPose<f64> {
    let side = target.side;
    let sx = side.sign::<f64>();
    let j = &target.joints;
    let wrist = j[0];
    let bone_lengths = target.bone_lengths().map(|l| l.max(MIN_LENGTH));

    let mut h = Matrix3::<f64>::zeros();
    for f in 0..NUM_FINGERS {
        let d = finger_base::<f64>(f).mul_vec(Vec3::unit_y());
        let d = Vec3::new(sx * d.x, d.y, d.z);
        let u = j[finger_joint(f, 0)] - wrist;
        if u.norm() < 1e-9 {
            continue;
        }
        let u = u.normalized();
        h += nalgebra::Vector3::new(d.x, d.y, d.z) * nalgebra::Vector3::new(u.x, u.y, u.z).transpose();
    }
    let svd = h.svd(true, true);
    let rot = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => {
            let v = v_t.transpose();
            let mut corr = Matrix3::identity();
            corr[(2, 2)] = (v * u.transpose()).determinant().signum();
            let r = v * corr * u.transpose();
            Mat3 { m: std::array::from_fn(|a| std::array::from_fn(|b| r[(a, b)])) }
        }
        _ => Mat3::identity(),
    };
    let rot_t = rot.transpose();
    let local = |p: Vec3<f64>| {
        let q = rot_t.mul_vec(p - wrist);
        Vec3::new(sx * q.x, q.y, q.z)
    };

    let mut joint_angles = [0.0; 20];
    for f in 0..NUM_FINGERS {
        let q: [Vec3<f64>; 4] = std::array::from_fn(|k| local(j[finger_joint(f, k)]));
        let base = finger_base::<f64>(f);
        let v1 = base.transpose().mul_vec(safe_dir(q[1] - q[0], base.mul_vec(Vec3::unit_y())));
        let flex0 = v1.z.clamp(-1.0, 1.0).asin();
        let abd = (-v1.x).atan2(v1.y);
        let r1 = base.mul_mat(&Mat3::rot_z(abd)).mul_mat(&Mat3::rot_x(flex0));
        let v2 = r1.transpose().mul_vec(safe_dir(q[2] - q[1], r1.mul_vec(Vec3::unit_y())));
        let flex1 = v2.z.atan2(v2.y);
        let r2 = r1.mul_mat(&Mat3::rot_x(flex1));
        let v3 = r2.transpose().mul_vec(safe_dir(q[3] - q[2], r2.mul_vec(Vec3::unit_y())));
        let flex2 = v3.z.atan2(v3.y);
        joint_angles[4 * f..4 * f + 4].copy_from_slice(&[flex0, abd, flex1, flex2]);
    }

    HandPose {
        side,
        global_rotation: rot.to_axis_angle().to_array(),
        global_translation: wrist.to_array(),
        joint_angles,
        bone_lengths,
    }
}

fn residuals(x: &[f64; NP], side: Side, target: &Skeleton<f64>) -> [f64; NR] {
    let s = fk_unchecked(&unpack(x, side));
    let mut r = [0.0; NR];
    for (i, (p, q)) in s.joints.iter().zip(target.joints.iter()).enumerate() {
        r[3 * i] = p.x - q.x;
        r[3 * i + 1] = p.y - q.y;
        r[3 * i + 2] = p.z - q.z;
    }
    r
}

fn jacobian(x: &[f64; NP], side: Side) -> DMatrix<f64> {
    let xd: [Dual<f64, NP>; NP] = std::array::from_fn(|i| Dual::variable(x[i], i));
    let s = fk_unchecked(&unpack(&xd, side));
    let mut jac = DMatrix::zeros(NR, NP);
    for (i, p) in s.joints.iter().enumerate() {
        for c in 0..3 {
            let d = p[c];
            for k in 0..NP {
                jac[(3 * i + c, k)] = d.eps[k];
            }
        }
    }
    jac
}

fn cost(r: &[f64; NR]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

/// Returns the final parameters and their MPJPE.
fn levenberg_marquardt(mut x: [f64; NP], side: Side, target: &Skeleton<f64>, max_iters: usize) -> ([f64; NP], f64) {
    let mut r = residuals(&x, side, target);
    let mut c = cost(&r);
    let mut mu = 1e-3;
    for _ in 0..max_iters {
        if c < 1e-24 {
            break;
        }
        let jac = jacobian(&x, side);
        let rv = DVector::from_column_slice(&r);
        let a = jac.transpose() * &jac;
        let g = jac.transpose() * rv;
        let mut improved = false;
        for _ in 0..12 {
            let mut m = a.clone();
            for k in 0..NP {
                m[(k, k)] += mu * a[(k, k)].max(1e-9);
            }
            let Some(chol) = m.cholesky() else {
                mu *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&g));
            let mut xn = x;
            for k in 0..NP {
                xn[k] += step[k];
            }
            if xn[26..].iter().any(|&l| l < MIN_LENGTH) || xn.iter().any(|v| !v.is_finite()) {
                mu *= 4.0;
                continue;
            }
            let rn = residuals(&xn, side, target);
            let cn = cost(&rn);
            if cn < c {
                let done = (c - cn) <= 1e-15 * c.max(1e-12) || step.amax() < 1e-12;
                x = xn;
                r = rn;
                c = cn;
                mu = (mu / 3.0).max(1e-12);
                improved = !done;
                break;
            }
            mu *= 4.0;
        }
        if !improved {
            break;
        }
    }
    let s = fk_unchecked(&unpack(&x, side));
    let err = mpjpe(&s.joints, &target.joints).unwrap_or(f64::INFINITY);
    (x, err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{forward_kinematics, random_pose, rest_pose, PoseRanges};

    #[test]
    fn rest_target_recovers_zero_angles() {
        for side in [Side::Right, Side::Left] {
            let target = forward_kinematics(&rest_pose(side)).unwrap();
            let (p, res) = fit_pose(&target, None).unwrap();
            assert!(res < 1e-6);
            assert!(p.joint_angles.iter().all(|a| a.abs() < 1e-3), "{:?}", p.joint_angles);
        }
    }

    #[test]
    fn random_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..50 {
            let side = if i % 2 == 0 { Side::Right } else { Side::Left };
            let p = random_pose(&mut rng, side, &PoseRanges::default());
            let target = forward_kinematics(&p).unwrap();
            let (_, res) = fit_pose(&target, None).unwrap();
            assert!(res < 0.5, "pose {i}: residual {res}");
        }
    }

    #[test]
    fn perturbed_joint_leaves_residual() {
        let mut target = forward_kinematics(&rest_pose(Side::Right)).unwrap();
        target.joints[7].z += 50.0;
        let (_, res) = fit_pose(&target, None).unwrap();
        assert!(res > 0.0);
    }

    #[test]
    fn coincident_joints_do_not_crash() {
        let mut target = forward_kinematics(&rest_pose(Side::Right)).unwrap();
        target.joints[8] = target.joints[7];
        let (p, res) = fit_pose(&target, None).unwrap();
        assert!(res.is_finite());
        assert!(p.bone_lengths.iter().all(|&l| l > 0.0));
    }

    #[test]
    fn init_is_respected_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_pose(&mut rng, Side::Right, &PoseRanges::default());
        let target = forward_kinematics(&p).unwrap();
        let a = fit_pose(&target, Some(&rest_pose(Side::Right))).unwrap();
        let b = fit_pose(&target, Some(&rest_pose(Side::Right))).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }
}
