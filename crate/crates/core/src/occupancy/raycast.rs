use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::geom::{Aabb, Vec3};
use crate::mesh::{validate_watertight, HandMesh};

/// Ray attempts before a point is given up on.
pub const MAX_RAY_ATTEMPTS: usize = 8;

/// Crossing-parity inside test against a closed triangle mesh.
#[derive(Debug)]
pub struct RayCaster {
    vertices: Vec<Vec3<f64>>,
    faces: Vec<[u32; 3]>,
    aabb: Aabb,
    eps: f64,
    unresolved: AtomicUsize,
}

impl Clone for RayCaster {
    fn clone(&self) -> Self {
        Self {
            vertices: self.vertices.clone(),
            faces: self.faces.clone(),
            aabb: self.aabb,
            eps: self.eps,
            unresolved: AtomicUsize::new(self.unresolved.load(Ordering::Relaxed)),
        }
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Deterministic direction for attempt `k` at point `p`.
fn direction(p: Vec3<f64>, k: usize) -> Vec3<f64> {
    if k == 0 {
        return Vec3::new(0.318_309_886, 0.864_278_4, 0.390_181_3).normalized();
    }
    let mut h = p.x.to_bits() ^ p.y.to_bits().rotate_left(21) ^ p.z.to_bits().rotate_left(42) ^ (k as u64);
    loop {
        h = splitmix(h);
        let a = (h >> 11) as f64 / (1u64 << 53) as f64;
        h = splitmix(h);
        let b = (h >> 11) as f64 / (1u64 << 53) as f64;
        let z = 2.0 * a - 1.0;
        let r = (1.0 - z * z).max(0.0).sqrt();
        let phi = 2.0 * std::f64::consts::PI * b;
        let d = Vec3::new(r * phi.cos(), r * phi.sin(), z);
        if d.norm() > 0.5 {
            return d;
        }
    }
}

impl RayCaster {
    /// Refuses meshes that are not closed and consistently oriented.
    pub fn new(m: &HandMesh<f64>) -> Result<Self> {
        let r = validate_watertight(m);
        if !(r.is_closed && r.is_oriented) {
            let first = r.defects.first().map(|d| format!("{d:?}")).unwrap_or_default();
            return Err(Error::NotWatertight(format!("{} defects, first {first}", r.defects.len())));
        }
        Ok(Self::new_unchecked(m))
    }

    pub(crate) fn new_unchecked(m: &HandMesh<f64>) -> Self {
        let aabb = m.aabb();
        let scale = (aabb.max - aabb.min).norm().max(1.0);
        Self {
            vertices: m.vertices.clone(),
            faces: m.faces.clone(),
            aabb,
            eps: 1e-10 * scale,
            unresolved: AtomicUsize::new(0),
        }
    }

    pub fn aabb(&self) -> Aabb {
        self.aabb
    }

    /// Points that stayed ambiguous after every attempt; reported as outside.
    pub fn unresolved(&self) -> usize {
        self.unresolved.load(Ordering::Relaxed)
    }

    /// Parity of crossings along the ray `p + t dir, t > 0`; `None` when the
    /// ray grazes an edge or vertex, runs inside a face plane, or `p` lies on
    /// the surface.
    pub fn ray_parity(&self, p: Vec3<f64>, dir: Vec3<f64>) -> Option<bool> {
        let d = dir.normalized();
        let tol = 1e-9;
        let mut odd = false;
        for f in &self.faces {
            let v0 = self.vertices[f[0] as usize];
            let e1 = self.vertices[f[1] as usize] - v0;
            let e2 = self.vertices[f[2] as usize] - v0;
            let h = d.cross(e2);
            let det = e1.dot(h);
            let s = p - v0;
            let n = e1.cross(e2);
            let nn = n.norm();
            if nn == 0.0 {
                continue;
            }
            if det.abs() <= tol * nn {
                // Parallel to the face. A ray lying in the face plane is
                // treated as ambiguous without checking where it hits.
                if (s.dot(n) / nn).abs() <= self.eps {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / det;
            let u = s.dot(h) * inv;
            let q = s.cross(e1);
            let v = d.dot(q) * inv;
            let w = 1.0 - u - v;
            let t = e2.dot(q) * inv;
            if u < -tol || v < -tol || w < -tol {
                continue;
            }
            if t.abs() <= self.eps {
                return None;
            }
            if t < 0.0 {
                continue;
            }
            if u <= tol || v <= tol || w <= tol {
                return None;
            }
            odd = !odd;
        }
        Some(odd)
    }

    /// Inside test with re-casting on ambiguous rays.
    pub fn inside(&self, p: Vec3<f64>) -> bool {
        if !self.aabb.contains(p) {
            return false;
        }
        for k in 0..MAX_RAY_ATTEMPTS {
            if let Some(b) = self.ray_parity(p, direction(p, k)) {
                return b;
            }
        }
        self.unresolved.fetch_add(1, Ordering::Relaxed);
        false
    }

    /// Inside flags on the lattice `xs × ys × zs`, indexed `((ix·ny)+iy)·nz+iz`.
    ///
    /// Every (x, y) column is resolved with one vertical ray shared by all its
    /// z samples; columns hitting an edge or vertex fall back to [`inside`].
    ///
    /// [`inside`]: RayCaster::inside
    pub fn inside_lattice(&self, xs: &[f64], ys: &[f64], zs: &[f64]) -> Vec<bool> {
        let (nx, ny, nz) = (xs.len(), ys.len(), zs.len());
        let mut out = vec![false; nx * ny * nz];
        let mut crossings: Vec<Vec<f64>> = vec![Vec::new(); nx * ny];
        let mut degenerate = vec![false; nx * ny];
        let range = |vals: &[f64], lo: f64, hi: f64| {
            let a = vals.partition_point(|&x| x < lo);
            let b = vals.partition_point(|&x| x <= hi);
            a..b
        };
        for f in &self.faces {
            let [a, b, c] = f.map(|i| self.vertices[i as usize]);
            let lo = a.min(b).min(c);
            let hi = a.max(b).max(c);
            let area = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
            let scale = ((b - a).norm() + (c - a).norm() + (c - b).norm()).max(1e-12);
            let tol = 1e-12 * scale * scale;
            for ix in range(xs, lo.x - self.eps, hi.x + self.eps) {
                for iy in range(ys, lo.y - self.eps, hi.y + self.eps) {
                    let (x, y) = (xs[ix], ys[iy]);
                    let w0 = (b.x - x) * (c.y - y) - (b.y - y) * (c.x - x);
                    let w1 = (c.x - x) * (a.y - y) - (c.y - y) * (a.x - x);
                    let w2 = (a.x - x) * (b.y - y) - (a.y - y) * (b.x - x);
                    let col = ix * ny + iy;
                    let ws = [w0, w1, w2];
                    let pos = ws.iter().all(|&w| w > tol);
                    let neg = ws.iter().all(|&w| w < -tol);
                    if pos || neg {
                        let z = (w0 * a.z + w1 * b.z + w2 * c.z) / area;
                        crossings[col].push(z);
                    } else {
                        let near = ws.iter().any(|w| w.abs() <= tol);
                        let nonneg = ws.iter().all(|&w| w >= -tol);
                        let nonpos = ws.iter().all(|&w| w <= tol);
                        if near && (nonneg || nonpos) {
                            degenerate[col] = true;
                        }
                    }
                }
            }
        }
        for ix in 0..nx {
            for iy in 0..ny {
                let col = ix * ny + iy;
                let base = col * nz;
                if degenerate[col] {
                    for (iz, &z) in zs.iter().enumerate() {
                        out[base + iz] = self.inside(Vec3::new(xs[ix], ys[iy], z));
                    }
                    continue;
                }
                let c = &mut crossings[col];
                if c.is_empty() {
                    continue;
                }
                c.sort_by(|p, q| p.total_cmp(q));
                for (iz, &z) in zs.iter().enumerate() {
                    let above = c.len() - c.partition_point(|&h| h <= z);
                    let on_surface = c.iter().any(|&h| (h - z).abs() <= self.eps);
                    out[base + iz] = if on_surface {
                        self.inside(Vec3::new(xs[ix], ys[iy], z))
                    } else {
                        above % 2 == 1
                    };
                }
            }
        }
        out
    }
}

/// Convenience wrapper; fails on non-watertight meshes.
pub fn ray_cast_inside(m: &HandMesh<f64>, p: Vec3<f64>) -> Result<bool> {
    Ok(RayCaster::new(m)?.inside(p))
}
