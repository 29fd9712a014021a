//! 21-joint hand topology, poses, skeletons and point sets.

mod fk;
mod ik;
mod sample;

pub use fk::{
    canonical_bone_lengths, forward_kinematics, rest_pose, FINGER_SPREAD, FINGER_TWIST,
};
pub(crate) use fk::fk_unchecked;
pub use ik::{fit_pose, fit_pose_with, FitConfig};
pub use sample::{random_pose, random_rotation, random_unit, PoseRanges};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geom::{Aabb, Mat3, Vec3};
use crate::scalar::Scalar;

pub const NUM_JOINTS: usize = 21;
pub const NUM_EDGES: usize = 20;
pub const NUM_FINGERS: usize = 5;
pub const NUM_ANGLES: usize = 20;

pub const FINGER_NAMES: [&str; NUM_FINGERS] = ["thumb", "index", "middle", "ring", "pinky"];
const SEGMENT_NAMES: [&str; 4] = ["metacarpal", "proximal", "middle", "distal"];

/// Joint `k` (0 = root, 3 = tip) of finger `f`.
#[inline]
pub const fn finger_joint(f: usize, k: usize) -> usize {
    1 + 4 * f + k
}

/// Parent of joint `j`, `None` for the wrist.
pub const fn parent(j: usize) -> Option<usize> {
    if j == 0 {
        None
    } else if (j - 1) % 4 == 0 {
        Some(0)
    } else {
        Some(j - 1)
    }
}

/// Edge `e` as (parent, child). Edges are numbered finger-major, root to tip,
/// so edge `e` ends at joint `e + 1`.
#[inline]
pub const fn edge(e: usize) -> (usize, usize) {
    let child = e + 1;
    match parent(child) {
        Some(p) => (p, child),
        None => (0, 0),
    }
}

pub fn bone_name(e: usize) -> String {
    format!("{} {}", FINGER_NAMES[e / 4], SEGMENT_NAMES[e % 4])
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HandTopology {
    pub parent: [Option<usize>; NUM_JOINTS],
    pub edges: [(usize, usize); NUM_EDGES],
    pub finger_chains: [[usize; 4]; NUM_FINGERS],
}

impl HandTopology {
    pub fn standard() -> Self {
        Self {
            parent: std::array::from_fn(parent),
            edges: std::array::from_fn(edge),
            finger_chains: std::array::from_fn(|f| std::array::from_fn(|k| finger_joint(f, k))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Right,
    Left,
}

impl Side {
    pub fn flipped(self) -> Self {
        match self {
            Side::Right => Side::Left,
            Side::Left => Side::Right,
        }
    }

    /// +1 for right, -1 for left.
    pub fn sign<T: Scalar>(self) -> T {
        match self {
            Side::Right => T::one(),
            Side::Left => -T::one(),
        }
    }
}

/// Angles are stored per finger as `[mcp flexion, mcp abduction, pip flexion, dip flexion]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandPose<T> {
    pub side: Side,
    pub global_rotation: [T; 3],
    pub global_translation: [T; 3],
    pub joint_angles: [T; NUM_ANGLES],
    pub bone_lengths: [T; NUM_EDGES],
}

impl<T: Scalar> HandPose<T> {
    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[T]| v.iter().all(|x| x.is_finite());
        if !finite(&self.global_rotation) || !finite(&self.global_translation) {
            return Err(Error::InvalidPose("non-finite global placement".into()));
        }
        if !finite(&self.joint_angles) {
            return Err(Error::InvalidPose("non-finite joint angle".into()));
        }
        for (e, &l) in self.bone_lengths.iter().enumerate() {
            if !(l.is_finite() && l > T::zero()) {
                return Err(Error::InvalidPose(format!("bone {e} ({}) has length {l}", bone_name(e))));
            }
        }
        Ok(())
    }

    pub fn rotation(&self) -> Mat3<T> {
        Mat3::from_axis_angle(Vec3::from(self.global_rotation))
    }

    pub fn translation(&self) -> Vec3<T> {
        Vec3::from(self.global_translation)
    }

    pub fn cast<U: Scalar>(&self) -> HandPose<U> {
        let c = |x: &T| U::lit(x.re());
        HandPose {
            side: self.side,
            global_rotation: self.global_rotation.each_ref().map(c),
            global_translation: self.global_translation.each_ref().map(c),
            joint_angles: self.joint_angles.each_ref().map(c),
            bone_lengths: self.bone_lengths.each_ref().map(c),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton<T> {
    pub side: Side,
    pub joints: [Vec3<T>; NUM_JOINTS],
}

impl<T: Scalar> Skeleton<T> {
    pub fn new(side: Side, joints: [Vec3<T>; NUM_JOINTS]) -> Self {
        Self { side, joints }
    }

    pub fn from_slice(side: Side, joints: &[Vec3<T>]) -> Result<Self> {
        if joints.len() != NUM_JOINTS {
            return Err(Error::JointCount { expected: NUM_JOINTS, found: joints.len() });
        }
        Ok(Self { side, joints: std::array::from_fn(|i| joints[i]) })
    }

    pub fn wrist(&self) -> Vec3<T> {
        self.joints[0]
    }

    pub fn bone(&self, e: usize) -> (Vec3<T>, Vec3<T>) {
        let (a, b) = edge(e);
        (self.joints[a], self.joints[b])
    }

    pub fn bone_lengths(&self) -> [T; NUM_EDGES] {
        std::array::from_fn(|e| {
            let (a, b) = self.bone(e);
            (b - a).norm()
        })
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().all(|p| p.is_finite())
    }

    pub fn translated(&self, t: Vec3<T>) -> Self {
        Self { side: self.side, joints: self.joints.map(|p| p + t) }
    }

    /// Applies `x -> r x + t` to every joint.
    pub fn transformed(&self, r: &Mat3<T>, t: Vec3<T>) -> Self {
        Self { side: self.side, joints: self.joints.map(|p| r.mul_vec(p) + t) }
    }

    pub fn cast<U: Scalar>(&self) -> Skeleton<U> {
        Skeleton { side: self.side, joints: self.joints.map(|p| p.cast()) }
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::from_points(&self.joints)
    }
}

#[derive(Serialize, Deserialize)]
struct SkeletonRepr {
    side: Side,
    joints: Vec<[f64; 3]>,
}

impl Serialize for Skeleton<f64> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SkeletonRepr { side: self.side, joints: self.joints.iter().map(|p| p.to_array()).collect() }
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Skeleton<f64> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = SkeletonRepr::deserialize(d)?;
        let joints: Vec<Vec3<f64>> = r.joints.into_iter().map(Vec3::from).collect();
        let s = Skeleton::from_slice(r.side, &joints).map_err(serde::de::Error::custom)?;
        if !s.is_finite() {
            return Err(serde::de::Error::custom("non-finite joint coordinate"));
        }
        Ok(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Sparse21,
    Dense { k: usize },
    MeshSurface,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointSet<T> {
    pub points: Vec<Vec3<T>>,
    pub provenance: Provenance,
}

impl<T> PointSet<T> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Mirrors a skeleton through the x = 0 plane and swaps its side.
pub fn flip_x<T: Scalar>(s: &Skeleton<T>) -> Skeleton<T> {
    Skeleton { side: s.side.flipped(), joints: s.joints.map(|p| Vec3::new(-p.x, p.y, p.z)) }
}

/// The 21 joints followed by `k` evenly spaced interior points per edge.
pub fn densify<T: Scalar>(s: &Skeleton<T>, k: usize) -> PointSet<T> {
    let mut points = Vec::with_capacity(NUM_JOINTS + NUM_EDGES * k);
    points.extend_from_slice(&s.joints);
    let denom = T::from_usize(k + 1).unwrap();
    for e in 0..NUM_EDGES {
        let (a, b) = s.bone(e);
        for i in 1..=k {
            points.push(a.lerp(b, T::from_usize(i).unwrap() / denom));
        }
    }
    let provenance = if k == 0 { Provenance::Sparse21 } else { Provenance::Dense { k } };
    PointSet { points, provenance }
}

/// Mean per-joint position error in mm.
pub fn mpjpe<T: Scalar>(a: &[Vec3<T>], b: &[Vec3<T>]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::JointCount { expected: a.len(), found: b.len() });
    }
    if a.is_empty() {
        return Ok(T::zero());
    }
    let sum: T = a.iter().zip(b).map(|(p, q)| (*p - *q).norm()).sum();
    Ok(sum / T::from_usize(a.len()).unwrap())
}

/// [`mpjpe`] for two skeletons.
pub fn skeleton_mpjpe<T: Scalar>(a: &Skeleton<T>, b: &Skeleton<T>) -> T {
    mpjpe(&a.joints, &b.joints).expect("skeletons have equal joint counts")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topology_shape() {
        let t = HandTopology::standard();
        assert_eq!(t.parent[0], None);
        assert_eq!(t.edges[0], (0, 1));
        assert_eq!(t.edges[4], (0, 5));
        assert_eq!(t.edges[5], (5, 6));
        assert_eq!(t.edges[19], (19, 20));
        assert_eq!(t.finger_chains[1], [5, 6, 7, 8]);
        for j in 1..NUM_JOINTS {
            let mut k = j;
            let mut steps = 0;
            while let Some(p) = t.parent[k] {
                k = p;
                steps += 1;
            }
            assert_eq!(k, 0);
            assert!(steps <= 4);
        }
    }

    #[test]
    fn skeleton_json_rejects_wrong_count() {
        let joints: Vec<[f64; 3]> = vec![[0.0; 3]; 20];
        let txt = serde_json::json!({"side": "right", "joints": joints}).to_string();
        let err = serde_json::from_str::<Skeleton<f64>>(&txt).unwrap_err();
        assert!(err.to_string().contains("expected 21 joints"), "{err}");
    }

    #[test]
    fn mpjpe_mismatch_is_error() {
        let a = vec![Vec3::<f64>::zero(); 21];
        let b = vec![Vec3::<f64>::zero(); 20];
        assert!(mpjpe(&a, &b).is_err());
    }
}
