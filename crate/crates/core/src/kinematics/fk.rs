use super::{finger_joint, HandPose, Side, Skeleton, NUM_EDGES, NUM_FINGERS, NUM_JOINTS};
use crate::error::Result;
use crate::geom::{Mat3, Vec3};
use crate::scalar::Scalar;

/// Rotation about +z of each finger's metacarpal direction in the rest pose
/// (right hand, radians). Negative values lean toward +x, the thumb side.
pub const FINGER_SPREAD: [f64; NUM_FINGERS] = [-1.0, -0.22, 0.0, 0.22, 0.44];

/// Roll of each finger's flexion axis about its own metacarpal direction.
/// Only the thumb is rolled so that it curls across the palm.
pub const FINGER_TWIST: [f64; NUM_FINGERS] = [0.7, 0.0, 0.0, 0.0, 0.0];

const BONE_LENGTHS: [f64; NUM_EDGES] = [
    48.0, 33.0, 26.0, 24.0, // thumb
    84.0, 40.0, 25.0, 21.0, // index
    82.0, 44.0, 29.0, 22.0, // middle
    78.0, 40.0, 27.0, 21.0, // ring
    72.0, 31.0, 20.0, 18.0, // pinky
];

pub fn canonical_bone_lengths() -> [f64; NUM_EDGES] {
    BONE_LENGTHS
}

/// All angles zero, canonical lengths, wrist at the origin.
pub fn rest_pose(side: Side) -> HandPose<f64> {
    HandPose {
        side,
        global_rotation: [0.0; 3],
        global_translation: [0.0; 3],
        joint_angles: [0.0; 20],
        bone_lengths: BONE_LENGTHS,
    }
}

/// Base frame of finger `f` in hand coordinates (right-hand template).
pub(crate) fn finger_base<T: Scalar>(f: usize) -> Mat3<T> {
    Mat3::rot_z(T::lit(FINGER_SPREAD[f])).mul_mat(&Mat3::rot_y(T::lit(FINGER_TWIST[f])))
}

/// Joint positions of a right-hand template in hand coordinates.
pub(crate) fn local_joints<T: Scalar>(angles: &[T; 20], lengths: &[T; NUM_EDGES]) -> [Vec3<T>; NUM_JOINTS] {
    let mut out = [Vec3::zero(); NUM_JOINTS];
    let y = Vec3::unit_y();
    for f in 0..NUM_FINGERS {
        let a = &angles[4 * f..4 * f + 4];
        let l = &lengths[4 * f..4 * f + 4];
        let base = finger_base::<T>(f);
        let mcp = base.mul_vec(y) * l[0];
        let r1 = base.mul_mat(&Mat3::rot_z(a[1])).mul_mat(&Mat3::rot_x(a[0]));
        let pip = mcp + r1.mul_vec(y) * l[1];
        let r2 = r1.mul_mat(&Mat3::rot_x(a[2]));
        let dip = pip + r2.mul_vec(y) * l[2];
        let r3 = r2.mul_mat(&Mat3::rot_x(a[3]));
        let tip = dip + r3.mul_vec(y) * l[3];
        out[finger_joint(f, 0)] = mcp;
        out[finger_joint(f, 1)] = pip;
        out[finger_joint(f, 2)] = dip;
        out[finger_joint(f, 3)] = tip;
    }
    out
}

/// Skeleton of a pose without validating it.
///
/// A left hand is the mirror image (x negated in hand coordinates) of the
/// right-hand template with the same angles.
pub(crate) fn fk_unchecked<T: Scalar>(pose: &HandPose<T>) -> Skeleton<T> {
    let local = local_joints(&pose.joint_angles, &pose.bone_lengths);
    let r = pose.rotation();
    let t = pose.translation();
    let s = pose.side.sign::<T>();
    let joints = local.map(|p| r.mul_vec(Vec3::new(s * p.x, p.y, p.z)) + t);
    Skeleton { side: pose.side, joints }
}

pub fn forward_kinematics<T: Scalar>(pose: &HandPose<T>) -> Result<Skeleton<T>> {
    pose.validate()?;
    Ok(fk_unchecked(pose))
}
