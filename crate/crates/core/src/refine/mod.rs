//! Two-hand pose refinement against the intersection loss, batch reports
//! and the noise study.

mod batch;
mod noise;
mod pairs;

pub use batch::{batch_refine, pair_row, BatchReport, PairRow};
pub use noise::{noise_study, NoiseConfig, NoiseLevel, NoiseStudy};
pub use batch::pair_counts;
pub use pairs::{intersecting_pairs, raycast_count, touching_pairs, PairSkeletons};

use serde::{Deserialize, Serialize};

use crate::dual::Dual;
use crate::error::{Error, Result};
use crate::geom::{Aabb, Vec3};
use crate::kinematics::{fit_pose_with, FitConfig, HandPose, Side, Skeleton, NUM_JOINTS};
use crate::loss::{intersection_loss, intersection_loss_value, LossConfig};
use crate::occupancy::OccupancyField;

/// Number of optimized parameters: right (rotation, translation, 20
/// angles), left (rotation, 20 angles) and the left wrist offset.
pub const NUM_PARAMS: usize = 52;
/// mm² to m², so that the data term is a mean squared displacement in m².
const DATA_UNIT: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairPose {
    pub pose_r: HandPose<f64>,
    pub pose_l: HandPose<f64>,
    /// Left wrist minus right wrist, mm. Overrides `pose_l.global_translation`.
    pub relative_offset: [f64; 3],
}

impl PairPose {
    pub fn new(pose_r: HandPose<f64>, pose_l: HandPose<f64>) -> Result<Self> {
        let off = pose_l.translation() - pose_r.translation();
        let p = Self { pose_r, pose_l, relative_offset: off.to_array() };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.pose_r.validate()?;
        self.pose_l.validate()?;
        if self.pose_r.side != Side::Right || self.pose_l.side != Side::Left {
            return Err(Error::InvalidPose("pair needs a right and a left pose".into()));
        }
        if !self.relative_offset.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidPose("non-finite relative offset".into()));
        }
        Ok(())
    }

    /// The left pose with its translation taken from the offset.
    pub fn left(&self) -> HandPose<f64> {
        let mut l = self.pose_l.clone();
        l.global_translation = (self.pose_r.translation() + Vec3::from(self.relative_offset)).to_array();
        l
    }

    pub fn skeletons(&self) -> Result<(Skeleton<f64>, Skeleton<f64>)> {
        Ok((crate::kinematics::forward_kinematics(&self.pose_r)?, crate::kinematics::forward_kinematics(&self.left())?))
    }

    fn pack(&self) -> [f64; NUM_PARAMS] {
        let mut x = [0.0; NUM_PARAMS];
        x[0..3].copy_from_slice(&self.pose_r.global_rotation);
        x[3..6].copy_from_slice(&self.pose_r.global_translation);
        x[6..26].copy_from_slice(&self.pose_r.joint_angles);
        x[26..29].copy_from_slice(&self.pose_l.global_rotation);
        x[29..49].copy_from_slice(&self.pose_l.joint_angles);
        x[49..52].copy_from_slice(&self.relative_offset);
        x
    }

    fn unpack(&self, x: &[f64; NUM_PARAMS]) -> Self {
        let mut p = self.clone();
        p.pose_r.global_rotation.copy_from_slice(&x[0..3]);
        p.pose_r.global_translation.copy_from_slice(&x[3..6]);
        p.pose_r.joint_angles.copy_from_slice(&x[6..26]);
        p.pose_l.global_rotation.copy_from_slice(&x[26..29]);
        p.pose_l.joint_angles.copy_from_slice(&x[29..49]);
        p.relative_offset.copy_from_slice(&x[49..52]);
        p.pose_l.global_translation = (p.pose_r.translation() + Vec3::from(p.relative_offset)).to_array();
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub loss: LossConfig,
    /// λ, multiplying the mean squared joint displacement in m².
    pub data_weight: f64,
    pub max_iters: usize,
    /// Initial step as a fraction of the preconditioned gradient step.
    pub step: f64,
    /// Stop when an accepted step changes the objective by less than
    /// `tol` relative.
    pub tol: f64,
    /// Seed for the inverse-kinematics restarts.
    pub seed: u64,
    /// Padding of the skeleton boxes in the prefilter, mm.
    pub prefilter_margin: f64,
    /// Pairs whose unweighted loss is below this are left alone.
    pub min_loss: f64,
    /// Run exactly `max_iters` iterations; used for timing.
    pub fixed_iters: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            data_weight: 1.0,
            max_iters: 200,
            step: 0.5,
            tol: 1e-9,
            seed: 0,
            prefilter_margin: 20.0,
            min_loss: 1e-6,
            fixed_iters: false,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.data_weight > 0.0 && self.data_weight.is_finite()) {
            return Err(Error::InvalidArgument(format!("data weight {} must be > 0", self.data_weight)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        if !(self.step > 0.0 && self.tol >= 0.0 && self.prefilter_margin >= 0.0) {
            return Err(Error::InvalidArgument("step must be > 0, tol and margin >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    /// λ-weighted data term.
    pub data: f64,
    /// w-weighted intersection term.
    pub intersection: f64,
    pub step: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineStatus {
    /// Loss weight is zero.
    ZeroWeight,
    /// Bounding boxes do not overlap.
    Separated,
    /// Loss below `min_loss`.
    NoContact,
    Converged,
    MaxIters,
    /// Step shrank to nothing without improving.
    Stalled,
}

impl RefineStatus {
    pub fn refined(self) -> bool {
        matches!(self, RefineStatus::Converged | RefineStatus::MaxIters | RefineStatus::Stalled)
    }
}

#[derive(Clone, Debug)]
pub struct RefineOutcome {
    pub pose: PairPose,
    pub status: RefineStatus,
    pub trace: Vec<TraceEntry>,
    /// Gradient evaluations performed.
    pub iterations: usize,
}

/// True iff the joint boxes, padded by `margin`, overlap (closed intervals).
pub fn bbox_prefilter(r: &Skeleton<f64>, l: &Skeleton<f64>, margin: f64) -> bool {
    let a: Aabb = r.aabb().padded(margin);
    a.overlaps(&l.aabb().padded(margin))
}

type Jac = Dual<f64, 26>;

/// Joints and their Jacobian w.r.t. (rotation, translation, 20 angles).
fn fk_jacobian(p: &HandPose<f64>) -> ([Vec3<f64>; NUM_JOINTS], [[Vec3<f64>; 26]; NUM_JOINTS]) {
    let var = |v: f64, i: usize| Jac::variable(v, i);
    let pd = HandPose {
        side: p.side,
        global_rotation: std::array::from_fn(|i| var(p.global_rotation[i], i)),
        global_translation: std::array::from_fn(|i| var(p.global_translation[i], 3 + i)),
        joint_angles: std::array::from_fn(|i| var(p.joint_angles[i], 6 + i)),
        bone_lengths: p.bone_lengths.map(Jac::constant),
    };
    let s = crate::kinematics::fk_unchecked(&pd);
    let joints = s.joints.map(|q| Vec3::new(q.x.re, q.y.re, q.z.re));
    let jac = s.joints.map(|q| std::array::from_fn(|k| Vec3::new(q.x.eps[k], q.y.eps[k], q.z.eps[k])));
    (joints, jac)
}

/// Maps per-hand Jacobian columns onto the packed parameter vector.
fn column_index(hand: usize, k: usize) -> &'static [usize] {
    const R: [[usize; 1]; 26] = {
        let mut a = [[0usize; 1]; 26];
        let mut i = 0;
        while i < 26 {
            a[i] = [i];
            i += 1;
        }
        a
    };
    const L: [[usize; 1]; 26] = {
        let mut a = [[0usize; 1]; 26];
        let mut i = 0;
        while i < 26 {
            a[i] = [if i < 3 { 26 + i } else if i < 6 { 0 } else { 29 + i - 6 }];
            i += 1;
        }
        a
    };
    // Left translation = right translation + offset: feeds two parameters.
    const LT: [[usize; 2]; 3] = [[3, 49], [4, 50], [5, 51]];
    if hand == 0 {
        &R[k]
    } else if (3..6).contains(&k) {
        &LT[k - 3]
    } else {
        &L[k]
    }
}

struct Objective<'a> {
    field: &'a dyn OccupancyField<f64>,
    cfg: &'a RefineConfig,
    target_r: [Vec3<f64>; NUM_JOINTS],
    target_l: [Vec3<f64>; NUM_JOINTS],
    base: PairPose,
}

impl Objective<'_> {
    fn data_scale(&self) -> f64 {
        self.cfg.data_weight * DATA_UNIT / (2 * NUM_JOINTS) as f64
    }

    fn skeletons(&self, p: &PairPose) -> (Skeleton<f64>, Skeleton<f64>) {
        let r = crate::kinematics::fk_unchecked(&p.pose_r);
        let l = crate::kinematics::fk_unchecked(&p.left());
        (r, l)
    }

    fn data(&self, r: &Skeleton<f64>, l: &Skeleton<f64>) -> f64 {
        let sq: f64 = r.joints.iter().zip(&self.target_r).map(|(a, b)| (*a - *b).norm_sq()).sum::<f64>()
            + l.joints.iter().zip(&self.target_l).map(|(a, b)| (*a - *b).norm_sq()).sum::<f64>();
        self.data_scale() * sq
    }

    fn value(&self, x: &[f64; NUM_PARAMS]) -> Result<(f64, f64)> {
        let p = self.base.unpack(x);
        let (r, l) = self.skeletons(&p);
        let inter = self.cfg.loss.weight * intersection_loss_value(&r, &l, self.field, &self.cfg.loss)?;
        Ok((self.data(&r, &l), inter))
    }

    /// Objective parts, gradient, and the squared Jacobian column norms.
    fn gradient(&self, x: &[f64; NUM_PARAMS]) -> Result<(f64, f64, [f64; NUM_PARAMS], [f64; NUM_PARAMS])> {
        let p = self.base.unpack(x);
        let (jr, dr) = fk_jacobian(&p.pose_r);
        let (jl, dl) = fk_jacobian(&p.left());
        let sr = Skeleton { side: Side::Right, joints: jr };
        let sl = Skeleton { side: Side::Left, joints: jl };
        let loss = intersection_loss(&sr, &sl, self.field, &self.cfg.loss)?;
        let w = self.cfg.loss.weight;
        let c = 2.0 * self.data_scale();
        let mut g = [0.0; NUM_PARAMS];
        let mut colsq = [0.0; NUM_PARAMS];
        for (hand, (joints, jac, target, lg)) in [
            (&jr, &dr, &self.target_r, &loss.grad_right),
            (&jl, &dl, &self.target_l, &loss.grad_left),
        ]
        .into_iter()
        .enumerate()
        {
            for j in 0..NUM_JOINTS {
                let gj = (joints[j] - target[j]) * c + lg[j] * w;
                for k in 0..26 {
                    let d = jac[j][k];
                    for &i in column_index(hand, k) {
                        g[i] += gj.dot(d);
                        colsq[i] += d.norm_sq();
                    }
                }
            }
        }
        Ok((self.data(&sr, &sl), w * loss.value, g, colsq))
    }
}

/// Refines a pair by preconditioned gradient descent with step halving.
/// Bone lengths are not touched.
pub fn refine_pair(init: &PairPose, field: &dyn OccupancyField<f64>, cfg: &RefineConfig) -> Result<RefineOutcome> {
    init.validate()?;
    cfg.validate()?;
    let done = |status| Ok(RefineOutcome { pose: init.clone(), status, trace: Vec::new(), iterations: 0 });
    if cfg.loss.weight == 0.0 {
        return done(RefineStatus::ZeroWeight);
    }
    let (r0, l0) = init.skeletons()?;
    if !bbox_prefilter(&r0, &l0, cfg.prefilter_margin) {
        return done(RefineStatus::Separated);
    }
    let obj = Objective { field, cfg, target_r: r0.joints, target_l: l0.joints, base: init.clone() };
    if !cfg.fixed_iters && intersection_loss_value(&r0, &l0, field, &cfg.loss)? < cfg.min_loss {
        return done(RefineStatus::NoContact);
    }

    let mut x = init.pack();
    let c = 2.0 * obj.data_scale();
    let (mut data, mut inter, mut g, colsq) = obj.gradient(&x)?;
    // Diagonal of the data-term Gauss-Newton matrix at the start.
    let precond = colsq.map(|s| 1.0 / (c * s.max(1e-6)));
    let mut step = cfg.step;
    let mut trace = vec![TraceEntry { iteration: 0, data, intersection: inter, step }];
    let mut status = RefineStatus::MaxIters;
    let mut iterations = 1;
    for it in 1..=cfg.max_iters {
        let f0 = data + inter;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: [f64; NUM_PARAMS] = std::array::from_fn(|i| x[i] - step * precond[i] * g[i]);
            let (d, s) = obj.value(&cand)?;
            if !(d + s).is_finite() {
                return Err(Error::Divergence { iteration: it });
            }
            if d + s <= f0 || cfg.fixed_iters {
                accepted = Some((cand, d, s));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, d, s)) = accepted else {
            status = RefineStatus::Stalled;
            break;
        };
        let change = f0 - (d + s);
        x = cand;
        let (nd, ni, ng, _) = obj.gradient(&x)?;
        iterations += 1;
        (data, inter, g) = (nd, ni, ng);
        trace.push(TraceEntry { iteration: it, data, intersection: inter, step });
        step *= 1.5;
        if !cfg.fixed_iters && change <= cfg.tol * f0.abs().max(1e-300) {
            status = RefineStatus::Converged;
            break;
        }
    }
    Ok(RefineOutcome { pose: init.unpack(&x), status, trace, iterations })
}

#[derive(Clone, Debug)]
pub struct SkeletonRefinement {
    pub right: Skeleton<f64>,
    pub left: Skeleton<f64>,
    pub status: RefineStatus,
    pub trace: Vec<TraceEntry>,
    pub iterations: usize,
}

/// Refines a pair given as skeletons: both hands are fitted by inverse
/// kinematics, refined, and the refined motion is added back onto the input
/// joints so that the fitting residual does not leak into the output.
pub fn refine_skeletons(
    r: &Skeleton<f64>,
    l: &Skeleton<f64>,
    field: &dyn OccupancyField<f64>,
    cfg: &RefineConfig,
) -> Result<SkeletonRefinement> {
    cfg.validate()?;
    if r.side != Side::Right || l.side != Side::Left {
        return Err(Error::InvalidArgument("expected a right and a left skeleton".into()));
    }
    let unchanged = |status| {
        Ok(SkeletonRefinement { right: r.clone(), left: l.clone(), status, trace: Vec::new(), iterations: 0 })
    };
    if cfg.loss.weight == 0.0 {
        return unchanged(RefineStatus::ZeroWeight);
    }
    if !bbox_prefilter(r, l, cfg.prefilter_margin) {
        return unchanged(RefineStatus::Separated);
    }
    if !cfg.fixed_iters && intersection_loss_value(r, l, field, &cfg.loss)? < cfg.min_loss {
        return unchanged(RefineStatus::NoContact);
    }
    let fit = FitConfig { seed: cfg.seed, ..FitConfig::default() };
    let (pr, _) = fit_pose_with(r, None, &fit)?;
    let (pl, _) = fit_pose_with(l, None, &fit)?;
    let init = PairPose::new(pr, pl)?;
    let out = refine_pair(&init, field, cfg)?;
    let (fr, fl) = init.skeletons()?;
    let (nr, nl) = out.pose.skeletons()?;
    let apply = |s: &Skeleton<f64>, a: &Skeleton<f64>, b: &Skeleton<f64>| Skeleton {
        side: s.side,
        joints: std::array::from_fn(|j| s.joints[j] + (b.joints[j] - a.joints[j])),
    };
    Ok(SkeletonRefinement {
        right: apply(r, &fr, &nr),
        left: apply(l, &fl, &nl),
        status: out.status,
        trace: out.trace,
        iterations: out.iterations,
    })
}
