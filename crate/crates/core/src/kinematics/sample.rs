use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::fk::canonical_bone_lengths;
use super::{HandPose, Side, NUM_FINGERS};
use crate::geom::{Mat3, Vec3};

/// Sampling ranges for [`random_pose`]. Angles in radians, lengths as
/// multiplicative factors on the canonical bone lengths.
#[derive(Clone, Debug)]
pub struct PoseRanges {
    /// `[mcp flexion, abduction, pip flexion, dip flexion]` bounds for the thumb.
    pub thumb: [(f64, f64); 4],
    /// Same for the four fingers.
    pub finger: [(f64, f64); 4],
    pub hand_scale: (f64, f64),
    pub bone_jitter: (f64, f64),
    /// Half-width of the uniform translation box, mm.
    pub translation: f64,
    pub random_rotation: bool,
}

impl Default for PoseRanges {
    fn default() -> Self {
        Self {
            thumb: [(-0.2, 0.6), (-0.25, 0.25), (0.0, 0.7), (0.0, 0.8)],
            finger: [(-0.2, 1.2), (-0.08, 0.08), (0.0, 1.3), (0.0, 0.9)],
            hand_scale: (0.9, 1.1),
            bone_jitter: (0.95, 1.05),
            translation: 100.0,
            random_rotation: true,
        }
    }
}

/// Uniformly distributed rotation as an axis-angle vector.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    // Normalized Gaussian quaternion is uniform on SO(3).
    let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    let m = Mat3 {
        m: [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
            [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
            [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
        ],
    };
    m.to_axis_angle().to_array()
}

pub fn random_pose<R: Rng + ?Sized>(rng: &mut R, side: Side, ranges: &PoseRanges) -> HandPose<f64> {
    let mut joint_angles = [0.0; 20];
    for f in 0..NUM_FINGERS {
        let r = if f == 0 { &ranges.thumb } else { &ranges.finger };
        for k in 0..4 {
            joint_angles[4 * f + k] = rng.random_range(r[k].0..=r[k].1);
        }
    }
    let scale = rng.random_range(ranges.hand_scale.0..=ranges.hand_scale.1);
    let mut bone_lengths = canonical_bone_lengths();
    for l in bone_lengths.iter_mut() {
        *l *= scale * rng.random_range(ranges.bone_jitter.0..=ranges.bone_jitter.1);
    }
    let global_rotation = if ranges.random_rotation { random_rotation(rng) } else { [0.0; 3] };
    let t = ranges.translation;
    let global_translation = if t > 0.0 {
        std::array::from_fn(|_| rng.random_range(-t..=t))
    } else {
        [0.0; 3]
    };
    HandPose { side, global_rotation, global_translation, joint_angles, bone_lengths }
}

/// Random unit vector.
pub fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> Vec3<f64> {
    loop {
        let v = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n = v.norm();
        if n > 1e-6 {
            return v * (1.0 / n);
        }
    }
}
