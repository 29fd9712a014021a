//! Intersection loss between two hands: squared occupancy of one hand's
//! points under the field conditioned on the other hand, optionally with the
//! mirrored pair as a second term.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dual::Dual;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::kinematics::{
    densify, flip_x, forward_kinematics, random_pose, PoseRanges, Side, Skeleton, NUM_EDGES, NUM_JOINTS,
};
use crate::mesh::{envelope_vertices, MeshVariant};
use crate::occupancy::OccupancyField;

/// Which points of the tested hand are queried.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PointSetKind {
    /// The 21 joints.
    Sparse,
    /// Joints plus `k` points inside each bone.
    Dense { k: usize },
    /// Vertices of the Plain envelope.
    Mesh,
}

impl PointSetKind {
    pub const DENSE: PointSetKind = PointSetKind::Dense { k: 5 };

    pub fn point_count(self) -> usize {
        match self {
            PointSetKind::Sparse => NUM_JOINTS,
            PointSetKind::Dense { k } => NUM_JOINTS + NUM_EDGES * k,
            PointSetKind::Mesh => MeshVariant::Plain.vertex_count(),
        }
    }

    /// Loss weight used when none is given: smaller for the many mesh points.
    pub fn default_weight(self) -> f64 {
        match self {
            PointSetKind::Mesh => 1e-8,
            _ => 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub point_set: PointSetKind,
    /// Adds the mirrored term (α = 1).
    pub both_hands: bool,
    /// Counts only probabilities above 0.5.
    pub truncated: bool,
    pub weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::for_points(PointSetKind::DENSE)
    }
}

impl LossConfig {
    pub fn for_points(point_set: PointSetKind) -> Self {
        Self { point_set, both_hands: false, truncated: false, weight: point_set.default_weight() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight.is_finite() && self.weight >= 0.0) {
            return Err(Error::InvalidArgument(format!("loss weight {} must be >= 0", self.weight)));
        }
        Ok(())
    }
}

/// Unweighted loss value and its gradients.
#[derive(Clone, Debug)]
pub struct LossResult {
    pub value: f64,
    /// Probabilities of the left-hand points under the right-hand field.
    pub probs: Vec<f64>,
    /// Probabilities of the mirrored right-hand points, when `both_hands`.
    pub flipped_probs: Vec<f64>,
    /// d value / d point for each tested left-hand point (direct term).
    pub point_grads: Vec<Vec3<f64>>,
    pub grad_right: [Vec3<f64>; NUM_JOINTS],
    pub grad_left: [Vec3<f64>; NUM_JOINTS],
}

/// `p` if `p > 0.5`, else 0.
pub fn truncate_kernel(p: &[f64]) -> Vec<f64> {
    p.iter().map(|&x| if x > 0.5 { x } else { 0.0 }).collect()
}

fn kernel(p: f64, truncated: bool) -> (f64, f64) {
    if truncated && p <= 0.5 {
        (0.0, 0.0)
    } else {
        (p * p, 2.0 * p)
    }
}

/// Points of the tested hand.
pub fn tested_points(s: &Skeleton<f64>, kind: PointSetKind) -> Result<Vec<Vec3<f64>>> {
    Ok(match kind {
        PointSetKind::Sparse => s.joints.to_vec(),
        PointSetKind::Dense { k } => densify(s, k).points,
        PointSetKind::Mesh => envelope_vertices(s, MeshVariant::Plain)?,
    })
}

/// Pulls point gradients back onto the joints the points were built from.
fn pull_back(s: &Skeleton<f64>, kind: PointSetKind, g: &[Vec3<f64>]) -> Result<[Vec3<f64>; NUM_JOINTS]> {
    let mut out = [Vec3::zero(); NUM_JOINTS];
    match kind {
        PointSetKind::Sparse => out.copy_from_slice(&g[..NUM_JOINTS]),
        PointSetKind::Dense { k } => {
            out.copy_from_slice(&g[..NUM_JOINTS]);
            for e in 0..NUM_EDGES {
                let (a, b) = crate::kinematics::edge(e);
                for i in 1..=k {
                    let t = i as f64 / (k + 1) as f64;
                    let gi = g[NUM_JOINTS + e * k + i - 1];
                    out[a] += gi * (1.0 - t);
                    out[b] += gi * t;
                }
            }
        }
        PointSetKind::Mesh => {
            let sd: Skeleton<Dual<f64, 63>> = Skeleton {
                side: s.side,
                joints: std::array::from_fn(|j| {
                    let p = s.joints[j];
                    Vec3::new(
                        Dual::variable(p.x, 3 * j),
                        Dual::variable(p.y, 3 * j + 1),
                        Dual::variable(p.z, 3 * j + 2),
                    )
                }),
            };
            let v = envelope_vertices(&sd, MeshVariant::Plain)?;
            let mut acc = [0.0; 63];
            for (vi, gi) in v.iter().zip(g) {
                for c in 0..63 {
                    acc[c] += gi.x * vi.x.eps[c] + gi.y * vi.y.eps[c] + gi.z * vi.z.eps[c];
                }
            }
            for (j, o) in out.iter_mut().enumerate() {
                *o = Vec3::new(acc[3 * j], acc[3 * j + 1], acc[3 * j + 2]);
            }
        }
    }
    Ok(out)
}

fn mirror(g: [Vec3<f64>; NUM_JOINTS]) -> [Vec3<f64>; NUM_JOINTS] {
    g.map(|v| Vec3::new(-v.x, v.y, v.z))
}

struct Term {
    value: f64,
    probs: Vec<f64>,
    point_grads: Vec<Vec3<f64>>,
    /// Gradients w.r.t. the conditioning and the tested skeleton.
    cond: [Vec3<f64>; NUM_JOINTS],
    tested: [Vec3<f64>; NUM_JOINTS],
}

fn term(
    cond: &Skeleton<f64>,
    tested: &Skeleton<f64>,
    field: &dyn OccupancyField<f64>,
    cfg: &LossConfig,
    with_grad: bool,
) -> Result<Term> {
    let pts = tested_points(tested, cfg.point_set)?;
    if !with_grad {
        let probs = field.probabilities(cond, &pts);
        let value = probs.iter().map(|&p| kernel(p, cfg.truncated).0).sum();
        let zero = [Vec3::zero(); NUM_JOINTS];
        return Ok(Term { value, probs, point_grads: Vec::new(), cond: zero, tested: zero });
    }
    let truncated = cfg.truncated;
    let fg = field.backward(cond, &pts, &|_, p| kernel(p, truncated).1);
    let value = fg.probs.iter().map(|&p| kernel(p, truncated).0).sum();
    let tested_grad = pull_back(tested, cfg.point_set, &fg.point_grads)?;
    Ok(Term { value, probs: fg.probs, point_grads: fg.point_grads, cond: fg.cond_grad, tested: tested_grad })
}

fn check_sides(r: &Skeleton<f64>, l: &Skeleton<f64>) -> Result<()> {
    if r.side != Side::Right || l.side != Side::Left {
        return Err(Error::InvalidArgument(format!("expected a right and a left hand, got {:?} and {:?}", r.side, l.side)));
    }
    Ok(())
}

/// Loss and joint gradients for a right/left pair.
pub fn intersection_loss(
    skel_r: &Skeleton<f64>,
    skel_l: &Skeleton<f64>,
    field: &dyn OccupancyField<f64>,
    cfg: &LossConfig,
) -> Result<LossResult> {
    evaluate(skel_r, skel_l, field, cfg, true)
}

/// Loss value only; skips all gradient work.
pub fn intersection_loss_value(
    skel_r: &Skeleton<f64>,
    skel_l: &Skeleton<f64>,
    field: &dyn OccupancyField<f64>,
    cfg: &LossConfig,
) -> Result<f64> {
    Ok(evaluate(skel_r, skel_l, field, cfg, false)?.value)
}

fn evaluate(
    skel_r: &Skeleton<f64>,
    skel_l: &Skeleton<f64>,
    field: &dyn OccupancyField<f64>,
    cfg: &LossConfig,
    with_grad: bool,
) -> Result<LossResult> {
    cfg.validate()?;
    check_sides(skel_r, skel_l)?;
    let direct = term(skel_r, skel_l, field, cfg, with_grad)?;
    let mut out = LossResult {
        value: direct.value,
        probs: direct.probs,
        flipped_probs: Vec::new(),
        point_grads: direct.point_grads,
        grad_right: direct.cond,
        grad_left: direct.tested,
    };
    if cfg.both_hands {
        // Mirrored right-hand points against the field of the mirrored left hand.
        let fl = flip_x(skel_l);
        let fr = flip_x(skel_r);
        let t = term(&fl, &fr, field, cfg, with_grad)?;
        out.value += t.value;
        out.flipped_probs = t.probs;
        let (gl, gr) = (mirror(t.cond), mirror(t.tested));
        for j in 0..NUM_JOINTS {
            out.grad_left[j] += gl[j];
            out.grad_right[j] += gr[j];
        }
    }
    Ok(out)
}

/// A right hand and a mirrored random hand placed so the two are likely to
/// touch. Used for gradient checks and synthetic studies.
pub fn random_close_pair<R: Rng + ?Sized>(rng: &mut R, distance: f64) -> (Skeleton<f64>, Skeleton<f64>) {
    let ranges = PoseRanges::default();
    let pr = random_pose(rng, Side::Right, &ranges);
    let mut pl = random_pose(rng, Side::Left, &ranges);
    let r = forward_kinematics(&pr).expect("sampled poses are valid");
    let centre_r = r.joints.iter().fold(Vec3::zero(), |a, &b| a + b) * (1.0 / NUM_JOINTS as f64);
    pl.global_translation = [0.0; 3];
    let l0 = forward_kinematics(&pl).expect("sampled poses are valid");
    let centre_l = l0.joints.iter().fold(Vec3::zero(), |a, &b| a + b) * (1.0 / NUM_JOINTS as f64);
    let off = crate::kinematics::random_unit(rng) * (distance * rng.random::<f64>());
    (r, l0.translated(centre_r - centre_l + off))
}

/// Largest vector-level relative error between analytic and central
/// finite-difference loss gradients over `cases` random pairs.
pub fn loss_gradcheck(cfg: &LossConfig, field: &dyn OccupancyField<f64>, seed: u64, cases: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (r, l) = random_close_pair(&mut rng, 40.0);
        worst = worst.max(gradcheck_pair(&r, &l, field, cfg, 1e-4)?);
    }
    Ok(worst)
}

/// Relative error `|a − n| / max(|a|, |n|)` over all 126 joint coordinates
/// (0 when both gradients vanish).
pub fn gradcheck_pair(
    r: &Skeleton<f64>,
    l: &Skeleton<f64>,
    field: &dyn OccupancyField<f64>,
    cfg: &LossConfig,
    h: f64,
) -> Result<f64> {
    let res = intersection_loss(r, l, field, cfg)?;
    let mut ana = Vec::with_capacity(126);
    let mut num = Vec::with_capacity(126);
    for hand in 0..2 {
        for j in 0..NUM_JOINTS {
            for c in 0..3 {
                let shift = |d: f64| {
                    let (mut a, mut b) = (r.clone(), l.clone());
                    let s = if hand == 0 { &mut a } else { &mut b };
                    let p = &mut s.joints[j];
                    match c {
                        0 => p.x += d,
                        1 => p.y += d,
                        _ => p.z += d,
                    }
                    intersection_loss_value(&a, &b, field, cfg)
                };
                num.push((shift(h)? - shift(-h)?) / (2.0 * h));
                let g = if hand == 0 { res.grad_right[j] } else { res.grad_left[j] };
                ana.push(g[c]);
            }
        }
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = ana.iter().zip(&num).map(|(a, b)| a - b).collect();
    let scale = norm(&ana).max(norm(&num));
    Ok(if scale < 1e-300 { 0.0 } else { norm(&diff) / scale })
}
