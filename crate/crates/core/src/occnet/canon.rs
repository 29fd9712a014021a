//! Pose normalization shared by training and evaluation. Left hands are
//! mirrored to right hands, then joints and query points are expressed in
//! the palm frame, centred at the wrist and divided by the mean bone length.

use crate::dual::Dual;
use crate::error::{Error, Result};
use crate::geom::{Mat3, Vec3};
use crate::kinematics::{finger_joint, Side, Skeleton, NUM_EDGES, NUM_JOINTS};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub(crate) struct Canon<T> {
    /// Columns are the palm axes.
    pub rot: Mat3<T>,
    /// Mirrored wrist.
    pub origin: Vec3<T>,
    pub inv_len: T,
    pub mirror: bool,
    pub joints: [Vec3<T>; NUM_JOINTS],
}

fn mirror<T: Scalar>(p: Vec3<T>, on: bool) -> Vec3<T> {
    if on {
        Vec3::new(-p.x, p.y, p.z)
    } else {
        p
    }
}

impl<T: Scalar> Canon<T> {
    pub fn new(s: &Skeleton<T>) -> Result<Self> {
        let on = s.side == Side::Left;
        let j = s.joints.map(|p| mirror(p, on));
        let w = j[0];
        let y = j[finger_joint(2, 0)] - w;
        let yn = y.norm();
        let n = (j[finger_joint(1, 0)] - w).cross(j[finger_joint(4, 0)] - w);
        let y = y * yn.recip();
        let z = n - y * n.dot(y);
        let zn = z.norm();
        if !(yn.re() > 1e-9) || !(zn.re() > 1e-9 * n.norm().re().max(1.0)) {
            return Err(Error::InvalidPose("palm knuckles are collinear with the wrist".into()));
        }
        let z = z * zn.recip();
        let rot = Mat3::from_cols(y.cross(z), y, z);
        let total = s.bone_lengths().into_iter().fold(T::zero(), |a, b| a + b);
        let len = total / T::lit(NUM_EDGES as f64);
        if !(len.re() > 1e-9) {
            return Err(Error::InvalidPose("skeleton has zero size".into()));
        }
        let inv_len = len.recip();
        let rt = rot.transpose();
        let joints = j.map(|p| rt.mul_vec(p - w) * inv_len);
        Ok(Self { rot, origin: w, inv_len, mirror: on, joints })
    }

    /// World offset before rotation: mirrored point minus wrist.
    pub fn offset(&self, p: Vec3<T>) -> Vec3<T> {
        mirror(p, self.mirror) - self.origin
    }

    pub fn point(&self, p: Vec3<T>) -> Vec3<T> {
        self.rot.transpose().mul_vec(self.offset(p)) * self.inv_len
    }

    /// Pulls a canonical-space gradient back to world space.
    pub fn point_grad(&self, g: Vec3<T>) -> Vec3<T> {
        mirror(self.rot.mul_vec(g) * self.inv_len, self.mirror)
    }
}

pub(crate) type D63 = Dual<f64, 63>;

/// Canonical frame with derivatives with respect to every joint coordinate.
pub(crate) fn canon_jacobian(s: &Skeleton<f64>) -> Result<Canon<D63>> {
    let mut joints = [Vec3::<D63>::zero(); NUM_JOINTS];
    for (i, p) in s.joints.iter().enumerate() {
        joints[i] = Vec3::new(
            D63::variable(p.x, 3 * i),
            D63::variable(p.y, 3 * i + 1),
            D63::variable(p.z, 3 * i + 2),
        );
    }
    Canon::new(&Skeleton::new(s.side, joints))
}

/// Adjoints of a scalar objective with respect to the canonical frame.
#[derive(Clone, Debug)]
pub(crate) struct CanonAdjoint {
    pub rot: [[f64; 3]; 3],
    pub origin: Vec3<f64>,
    pub inv_len: f64,
    pub joints: [Vec3<f64>; NUM_JOINTS],
}

impl CanonAdjoint {
    pub fn zero() -> Self {
        Self { rot: [[0.0; 3]; 3], origin: Vec3::zero(), inv_len: 0.0, joints: [Vec3::zero(); NUM_JOINTS] }
    }

    /// Records `g · ∂q/∂(frame)` for `q = Rᵀ d / L`, `d` the mirrored offset.
    pub fn add_point(&mut self, c: &Canon<f64>, d: Vec3<f64>, g: Vec3<f64>) {
        let il = c.inv_len;
        for j in 0..3 {
            for k in 0..3 {
                self.rot[j][k] += g[k] * il * d[j];
            }
        }
        self.origin -= c.rot.mul_vec(g) * il;
        self.inv_len += g.dot(c.rot.transpose().mul_vec(d));
    }

    /// Chain rule through the joint Jacobians.
    pub fn to_joints(&self, c: &Canon<D63>) -> [Vec3<f64>; NUM_JOINTS] {
        let mut g = [0.0; 63];
        let mut add = |v: &D63, w: f64| {
            if w != 0.0 {
                for (gi, e) in g.iter_mut().zip(v.eps.iter()) {
                    *gi += w * e;
                }
            }
        };
        for j in 0..3 {
            for k in 0..3 {
                add(&c.rot.m[j][k], self.rot[j][k]);
            }
        }
        for a in 0..3 {
            add(&c.origin[a], self.origin[a]);
        }
        add(&c.inv_len, self.inv_len);
        for (cj, aj) in c.joints.iter().zip(&self.joints) {
            for a in 0..3 {
                add(&cj[a], aj[a]);
            }
        }
        std::array::from_fn(|i| Vec3::new(g[3 * i], g[3 * i + 1], g[3 * i + 2]))
    }
}
