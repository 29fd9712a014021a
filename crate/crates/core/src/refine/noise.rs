use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::pairs::{raycast_count, PairSkeletons};
use super::{refine_skeletons, RefineConfig};
use crate::error::{Error, Result};
use crate::geom::Mat3;
use crate::kinematics::{random_unit, skeleton_mpjpe, Skeleton};
use crate::occupancy::OccupancyField;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub probs: Vec<f64>,
    /// Standard deviation of the rotation angle about the wrist, degrees.
    pub sigma_deg: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { probs: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0], sigma_deg: 5.0, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevel {
    pub noise_prob: f64,
    /// Mean per-hand MPJPE to ground truth, mm.
    pub mpjpe_without: f64,
    pub mpjpe_with: f64,
    /// Total ray-cast intersection counts.
    pub isect_without: usize,
    pub isect_with: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseStudy {
    pub levels: Vec<NoiseLevel>,
}

impl NoiseStudy {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("noise_prob,mpjpe_with,mpjpe_without,isect_with,isect_without\n");
        for l in &self.levels {
            let _ = writeln!(s, "{},{:.6},{:.6},{},{}", l.noise_prob, l.mpjpe_with, l.mpjpe_without, l.isect_with, l.isect_without);
        }
        s
    }
}

fn rotate_about_wrist(s: &Skeleton<f64>, r: &Mat3<f64>) -> Skeleton<f64> {
    let w = s.wrist();
    Skeleton { side: s.side, joints: s.joints.map(|p| r.mul_vec(p - w) + w) }
}

/// Perturbs ground-truth pairs with small whole-hand rotations, each hand
/// independently with the given probability, and refines with and without
/// the intersection loss.
///
/// The per-hand draws are shared across probabilities, so a hand noised at
/// one level is also noised, by the same rotation, at every higher level.
pub fn noise_study(
    gt: &[PairSkeletons],
    field: &dyn OccupancyField<f64>,
    cfg: &RefineConfig,
    noise: &NoiseConfig,
) -> Result<NoiseStudy> {
    if noise.probs.iter().any(|p| !(0.0..=1.0).contains(p)) || !(noise.sigma_deg >= 0.0) {
        return Err(Error::InvalidArgument("noise probabilities must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let angle = Normal::new(0.0, noise.sigma_deg.to_radians()).expect("finite sigma");
    let draws: Vec<[(f64, Mat3<f64>); 2]> = gt
        .iter()
        .map(|_| {
            std::array::from_fn(|_| {
                let u: f64 = rng.random();
                let axis = random_unit(&mut rng);
                (u, Mat3::from_axis_angle(axis * angle.sample(&mut rng)))
            })
        })
        .collect();
    let mut levels = Vec::with_capacity(noise.probs.len());
    for &prob in &noise.probs {
        let mut lvl = NoiseLevel { noise_prob: prob, mpjpe_without: 0.0, mpjpe_with: 0.0, isect_without: 0, isect_with: 0 };
        for (p, d) in gt.iter().zip(&draws) {
            let noisy = |s: &Skeleton<f64>, (u, r): &(f64, Mat3<f64>)| if *u < prob { rotate_about_wrist(s, r) } else { s.clone() };
            let (nr, nl) = (noisy(&p.right, &d[0]), noisy(&p.left, &d[1]));
            let err = |a: &Skeleton<f64>, b: &Skeleton<f64>| 0.5 * (skeleton_mpjpe(a, &p.right) + skeleton_mpjpe(b, &p.left));
            lvl.mpjpe_without += err(&nr, &nl);
            lvl.isect_without += raycast_count(&nr, &nl)?;
            let out = refine_skeletons(&nr, &nl, field, cfg)?;
            lvl.mpjpe_with += err(&out.right, &out.left);
            lvl.isect_with +=
                if out.status.refined() { raycast_count(&out.right, &out.left)? } else { raycast_count(&nr, &nl)? };
        }
        let n = gt.len().max(1) as f64;
        lvl.mpjpe_without /= n;
        lvl.mpjpe_with /= n;
        levels.push(lvl);
    }
    Ok(NoiseStudy { levels })
}
