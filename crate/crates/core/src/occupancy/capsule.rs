use serde::{Deserialize, Serialize};

use super::{FieldGrad, OccupancyField};
use crate::error::{Error, Result};
use crate::geom::{Aabb, Vec3};
use crate::kinematics::{edge, Skeleton, NUM_EDGES, NUM_JOINTS};
use crate::scalar::Scalar;

/// Per-edge radii (mm) fitted to the Plain rest mesh at β = 2; see
/// `calibrate_radii`. Order follows the edge numbering.
pub const DEFAULT_RADII: [f64; NUM_EDGES] = [
    7.66, 7.54, 6.67, 5.44, // thumb
    8.82, 5.78, 5.24, 4.35, // index
    8.6, 5.99, 5.27, 3.58, // middle
    7.93, 5.92, 4.79, 3.5, // ring
    8.63, 4.93, 4.21, 3.56, // pinky
];
pub const DEFAULT_BETA: f64 = 2.0;

/// Smooth union of capsules around the skeleton bones:
/// `p = σ(LSE_e β (r_e − d_e))`, with `d_e` the distance to bone segment `e`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapsuleField {
    pub radii: [f64; NUM_EDGES],
    pub beta: f64,
}

impl Default for CapsuleField {
    fn default() -> Self {
        Self { radii: DEFAULT_RADII, beta: DEFAULT_BETA }
    }
}

/// Distance from `p` to segment `ab`, the unit direction from the closest
/// point to `p` (zero on the axis) and the segment parameter.
#[inline]
fn segment_distance<T: Scalar>(p: Vec3<T>, a: Vec3<T>, b: Vec3<T>) -> (T, Vec3<T>, T) {
    let ab = b - a;
    let l2 = ab.norm_sq();
    let t = if l2 > T::zero() { ((p - a).dot(ab) / l2).max(T::zero()).min(T::one()) } else { T::zero() };
    let diff = p - (a + ab * t);
    let d = diff.norm();
    let n = if d > T::zero() { diff * d.recip() } else { Vec3::zero() };
    (d, n, t)
}

impl CapsuleField {
    pub fn new(radii: [f64; NUM_EDGES], beta: f64) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidArgument(format!("sharpness {beta} must be positive")));
        }
        if let Some(e) = radii.iter().position(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::InvalidArgument(format!("radius of edge {e} is {}", radii[e])));
        }
        Ok(Self { radii, beta })
    }

    /// Logit `LSE_e β (r_e − d_e)`.
    fn logit<T: Scalar>(&self, cond: &Skeleton<T>, p: Vec3<T>) -> T {
        let beta = T::lit(self.beta);
        let mut z = [T::zero(); NUM_EDGES];
        let mut m = T::neg_infinity();
        for e in 0..NUM_EDGES {
            let (a, b) = cond.bone(e);
            let (d, _, _) = segment_distance(p, a, b);
            z[e] = beta * (T::lit(self.radii[e]) - d);
            m = m.max(z[e]);
        }
        let s: T = z.iter().map(|&v| (v - m).exp()).sum();
        m + s.ln()
    }

    /// Value, gradient w.r.t. `p` and w.r.t. every joint, for one point.
    pub fn eval_grad<T: Scalar>(&self, cond: &Skeleton<T>, p: Vec3<T>) -> (T, Vec3<T>, [Vec3<T>; NUM_JOINTS]) {
        let beta = T::lit(self.beta);
        let mut z = [T::zero(); NUM_EDGES];
        let mut geo = [(Vec3::zero(), T::zero()); NUM_EDGES];
        let mut m = T::neg_infinity();
        for e in 0..NUM_EDGES {
            let (a, b) = cond.bone(e);
            let (d, n, t) = segment_distance(p, a, b);
            z[e] = beta * (T::lit(self.radii[e]) - d);
            geo[e] = (n, t);
            m = m.max(z[e]);
        }
        let mut w = z.map(|v| (v - m).exp());
        let s: T = w.iter().copied().sum();
        for x in w.iter_mut() {
            *x /= s;
        }
        let prob = sigmoid(m + s.ln());
        // dp/dz_e = p (1 − p) w_e and dz_e/dd_e = −β.
        let scale = prob * (T::one() - prob) * beta;
        let mut gp = Vec3::zero();
        let mut gj = [Vec3::zero(); NUM_JOINTS];
        for e in 0..NUM_EDGES {
            let (n, t) = geo[e];
            let g = n * (-(scale * w[e]));
            gp += g;
            let (ja, jb) = edge(e);
            gj[ja] -= g * (T::one() - t);
            gj[jb] -= g * t;
        }
        (prob, gp, gj)
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> OccupancyField<T> for CapsuleField {
    fn probabilities(&self, cond: &Skeleton<T>, pts: &[Vec3<T>]) -> Vec<T> {
        pts.iter().map(|&p| sigmoid(self.logit(cond, p))).collect()
    }

    /// p > 0.5 needs `β (r_e − d_e) > −ln 20` for some edge, so the padded
    /// skeleton box bounds the superlevel set.
    fn support(&self, cond: &Skeleton<T>) -> Option<Aabb> {
        let r = self.radii.iter().copied().fold(0.0, f64::max);
        Some(cond.aabb().padded(r + (NUM_EDGES as f64).ln() / self.beta + 1e-6))
    }

    fn backward(&self, cond: &Skeleton<T>, pts: &[Vec3<T>], weight: &dyn Fn(usize, T) -> T) -> FieldGrad<T> {
        let mut out = FieldGrad {
            probs: Vec::with_capacity(pts.len()),
            point_grads: Vec::with_capacity(pts.len()),
            cond_grad: [Vec3::zero(); NUM_JOINTS],
        };
        for (i, &p) in pts.iter().enumerate() {
            let (v, gp, gj) = self.eval_grad(cond, p);
            let w = weight(i, v);
            out.probs.push(v);
            out.point_grads.push(gp * w);
            if w != T::zero() {
                for (acc, g) in out.cond_grad.iter_mut().zip(gj) {
                    *acc += g * w;
                }
            }
        }
        out
    }
}
