//! Minimal 3-vectors and 3×3 matrices generic over [`Scalar`].

use std::ops::{Add, AddAssign, Index, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Serialize> Serialize for Vec3<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [&self.x, &self.y, &self.z].serialize(s)
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for Vec3<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [x, y, z] = <[T; 3]>::deserialize(d)?;
        Ok(Self { x, y, z })
    }
}

impl<T> From<[T; 3]> for Vec3<T> {
    fn from([x, y, z]: [T; 3]) -> Self {
        Self { x, y, z }
    }
}

impl<T> From<Vec3<T>> for [T; 3] {
    fn from(v: Vec3<T>) -> Self {
        [v.x, v.y, v.z]
    }
}

impl<T: Scalar> Vec3<T> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }
    #[inline]
    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }
    pub fn from_f64(v: [f64; 3]) -> Self {
        Self::new(T::lit(v[0]), T::lit(v[1]), T::lit(v[2]))
    }
    pub fn unit_x() -> Self {
        Self::new(T::one(), T::zero(), T::zero())
    }
    pub fn unit_y() -> Self {
        Self::new(T::zero(), T::one(), T::zero())
    }
    pub fn unit_z() -> Self {
        Self::new(T::zero(), T::zero(), T::one())
    }
    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }
    #[inline]
    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }
    #[inline]
    pub fn norm_sq(self) -> T {
        self.dot(self)
    }
    #[inline]
    pub fn norm(self) -> T {
        self.norm_sq().sqrt()
    }
    pub fn normalized(self) -> Self {
        self * self.norm().recip()
    }
    pub fn lerp(self, o: Self, t: T) -> Self {
        self + (o - self) * t
    }
    pub fn to_f64(self) -> Vec3<f64> {
        Vec3::new(self.x.re(), self.y.re(), self.z.re())
    }
    pub fn cast<U: Scalar>(self) -> Vec3<U> {
        Vec3::new(U::lit(self.x.re()), U::lit(self.y.re()), U::lit(self.z.re()))
    }
    pub fn map<U>(self, f: impl Fn(T) -> U) -> Vec3<U> {
        Vec3 { x: f(self.x), y: f(self.y), z: f(self.z) }
    }
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
    pub fn min(self, o: Self) -> Self {
        Self::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }
    pub fn max(self, o: Self) -> Self {
        Self::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }
    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }
}

impl<T> Index<usize> for Vec3<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl<T: Scalar> Add for Vec3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Scalar> AddAssign for Vec3<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Scalar> Sub for Vec3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Scalar> SubAssign for Vec3<T> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<T: Scalar> Neg for Vec3<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Scalar> Mul<T> for Vec3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Row-major 3×3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3<T> {
    pub m: [[T; 3]; 3],
}

impl<T: Scalar> Mat3<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self { m: [[o, z, z], [z, o, z], [z, z, o]] }
    }

    pub fn from_cols(a: Vec3<T>, b: Vec3<T>, c: Vec3<T>) -> Self {
        Self { m: [[a.x, b.x, c.x], [a.y, b.y, c.y], [a.z, b.z, c.z]] }
    }

    pub fn col(&self, j: usize) -> Vec3<T> {
        Vec3::new(self.m[0][j], self.m[1][j], self.m[2][j])
    }

    pub fn transpose(&self) -> Self {
        let m = &self.m;
        Self {
            m: [[m[0][0], m[1][0], m[2][0]], [m[0][1], m[1][1], m[2][1]], [m[0][2], m[1][2], m[2][2]]],
        }
    }

    #[inline]
    pub fn mul_vec(&self, v: Vec3<T>) -> Vec3<T> {
        let m = &self.m;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    pub fn mul_mat(&self, o: &Self) -> Self {
        let mut r = [[T::zero(); 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.m[i][0] * o.m[0][j] + self.m[i][1] * o.m[1][j] + self.m[i][2] * o.m[2][j];
            }
        }
        Self { m: r }
    }

    pub fn rot_x(a: T) -> Self {
        let (s, c) = a.sin_cos();
        let (o, z) = (T::one(), T::zero());
        Self { m: [[o, z, z], [z, c, -s], [z, s, c]] }
    }

    pub fn rot_y(a: T) -> Self {
        let (s, c) = a.sin_cos();
        let (o, z) = (T::one(), T::zero());
        Self { m: [[c, z, s], [z, o, z], [-s, z, c]] }
    }

    pub fn rot_z(a: T) -> Self {
        let (s, c) = a.sin_cos();
        let (o, z) = (T::one(), T::zero());
        Self { m: [[c, -s, z], [s, c, z], [z, z, o]] }
    }

    /// Rotation matrix of an axis-angle vector (Rodrigues).
    ///
    /// Uses a Taylor expansion near zero so dual derivatives stay finite at
    /// the identity.
    pub fn from_axis_angle(w: Vec3<T>) -> Self {
        let t2 = w.norm_sq();
        let (a, b) = if t2.re() < 1e-8 {
            // sin(t)/t and (1 - cos t)/t^2 to fourth order
            (
                T::one() - t2 / T::lit(6.0) + t2 * t2 / T::lit(120.0),
                T::lit(0.5) - t2 / T::lit(24.0) + t2 * t2 / T::lit(720.0),
            )
        } else {
            let t = t2.sqrt();
            (t.sin() / t, (T::one() - t.cos()) / t2)
        };
        let k = Self::skew(w);
        let k2 = k.mul_mat(&k);
        let mut r = Self::identity();
        for i in 0..3 {
            for j in 0..3 {
                r.m[i][j] += a * k.m[i][j] + b * k2.m[i][j];
            }
        }
        r
    }

    pub fn skew(w: Vec3<T>) -> Self {
        let z = T::zero();
        Self { m: [[z, -w.z, w.y], [w.z, z, -w.x], [-w.y, w.x, z]] }
    }

    /// Minimal rotation taking unit vector `u` onto unit vector `v`.
    ///
    /// Undefined for exactly opposite vectors; callers keep consecutive bone
    /// directions well away from that.
    pub fn align(u: Vec3<T>, v: Vec3<T>) -> Self {
        let w = u.cross(v);
        let c = u.dot(v);
        let k = Self::skew(w);
        let k2 = k.mul_mat(&k);
        let f = (T::one() + c).recip();
        let mut r = Self::identity();
        for i in 0..3 {
            for j in 0..3 {
                r.m[i][j] += k.m[i][j] + f * k2.m[i][j];
            }
        }
        r
    }

    pub fn det(&self) -> T {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }
}

impl Mat3<f64> {
    /// Axis-angle vector of a rotation matrix.
    pub fn to_axis_angle(&self) -> Vec3<f64> {
        let m = &self.m;
        let tr = m[0][0] + m[1][1] + m[2][2];
        let c = (tr - 1.0) * 0.5;
        let v = Vec3::new(m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]);
        let s = 0.5 * v.norm();
        let theta = s.atan2(c);
        if s == 0.0 && c > 0.0 {
            return Vec3::zero();
        }
        if c <= 0.0 && s < 1e-3 {
            // Near pi the antisymmetric part vanishes; read the axis off the
            // symmetric part, R + R^T = 2c I + 2(1 - c) a a^T.
            let d = [m[0][0], m[1][1], m[2][2]];
            let i = (0..3).max_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap();
            let mut axis = [0.0; 3];
            axis[i] = ((d[i] - c) / (1.0 - c)).max(0.0).sqrt();
            for j in 0..3 {
                if j != i {
                    axis[j] = (m[i][j] + m[j][i]) / (2.0 * (1.0 - c) * axis[i]);
                }
            }
            let mut a = Vec3::from(axis).normalized();
            if a.dot(v) < 0.0 {
                a = -a;
            }
            return a * theta;
        }
        v * (theta / (2.0 * s))
    }
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3<f64>,
    pub max: Vec3<f64>,
}

impl Aabb {
    pub fn from_points<T: Scalar>(pts: &[Vec3<T>]) -> Self {
        let mut min = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut max = -min;
        for p in pts {
            let p = p.to_f64();
            min = min.min(p);
            max = max.max(p);
        }
        Self { min, max }
    }

    pub fn padded(&self, pad: f64) -> Self {
        let d = Vec3::new(pad, pad, pad);
        Self { min: self.min - d, max: self.max + d }
    }

    pub fn union(&self, o: &Self) -> Self {
        Self { min: self.min.min(o.min), max: self.max.max(o.max) }
    }

    /// Closed-interval overlap test.
    pub fn overlaps(&self, o: &Self) -> bool {
        (0..3).all(|i| self.min[i] <= o.max[i] && o.min[i] <= self.max[i])
    }

    pub fn contains(&self, p: Vec3<f64>) -> bool {
        (0..3).all(|i| self.min[i] <= p[i] && p[i] <= self.max[i])
    }
}
