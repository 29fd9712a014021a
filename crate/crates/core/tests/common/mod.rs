#![allow(dead_code)]

use handocc::geom::Vec3;
use handocc::kinematics::{forward_kinematics, random_pose, PoseRanges, Side, Skeleton};
use handocc::mesh::HandMesh;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn random_skeleton(seed: u64, side: Side) -> Skeleton<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    forward_kinematics(&random_pose(&mut rng, side, &PoseRanges::default())).unwrap()
}

/// Generalized winding number from per-triangle solid angles.
pub fn winding_number(m: &HandMesh<f64>, p: Vec3<f64>) -> f64 {
    let mut total = 0.0;
    for f in &m.faces {
        let [a, b, c] = f.map(|i| m.vertices[i as usize] - p);
        let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
        let num = a.dot(b.cross(c));
        let den = la * lb * lc + a.dot(b) * lc + a.dot(c) * lb + b.dot(c) * la;
        total += 2.0 * num.atan2(den);
    }
    total / (4.0 * std::f64::consts::PI)
}

/// Distance from `p` to triangle `abc`.
pub fn point_triangle_distance(p: Vec3<f64>, a: Vec3<f64>, b: Vec3<f64>, c: Vec3<f64>) -> f64 {
    let n = (b - a).cross(c - a);
    let nn = n.norm();
    let inside = |u: Vec3<f64>, v: Vec3<f64>| (v - u).cross(p - u).dot(n) >= 0.0;
    if nn > 0.0 && inside(a, b) && inside(b, c) && inside(c, a) {
        return ((p - a).dot(n) / nn).abs();
    }
    let seg = |u: Vec3<f64>, v: Vec3<f64>| {
        let d = v - u;
        let t = ((p - u).dot(d) / d.norm_sq()).clamp(0.0, 1.0);
        (p - (u + d * t)).norm()
    };
    seg(a, b).min(seg(b, c)).min(seg(c, a))
}

pub fn surface_distance(m: &HandMesh<f64>, p: Vec3<f64>) -> f64 {
    (0..m.faces.len())
        .map(|f| {
            let [a, b, c] = m.triangle(f);
            point_triangle_distance(p, a, b, c)
        })
        .fold(f64::INFINITY, f64::min)
}

fn segment_hits_triangle(p: Vec3<f64>, q: Vec3<f64>, t: [Vec3<f64>; 3]) -> bool {
    let d = q - p;
    let e1 = t[1] - t[0];
    let e2 = t[2] - t[0];
    let h = d.cross(e2);
    let a = e1.dot(h);
    if a.abs() < 1e-12 {
        return false;
    }
    let s = p - t[0];
    let u = s.dot(h) / a;
    let qq = s.cross(e1);
    let v = d.dot(qq) / a;
    let w = e2.dot(qq) / a;
    (0.0..=1.0).contains(&u) && v >= 0.0 && u + v <= 1.0 && w > 0.0 && w < 1.0
}

/// Pairs (edge face, hit face) where an edge of one face pierces another
/// face that shares no vertex with it.
pub fn self_intersections(m: &HandMesh<f64>) -> usize {
    let boxes: Vec<_> = (0..m.faces.len()).map(|f| handocc::geom::Aabb::from_points(&m.triangle(f))).collect();
    let mut hits = 0;
    for (i, fi) in m.faces.iter().enumerate() {
        for (j, fj) in m.faces.iter().enumerate() {
            if i == j || !boxes[i].overlaps(&boxes[j]) || fi.iter().any(|v| fj.contains(v)) {
                continue;
            }
            for k in 0..3 {
                let (a, b) = (m.vertices[fi[k] as usize], m.vertices[fi[(k + 1) % 3] as usize]);
                if segment_hits_triangle(a, b, m.triangle(j)) {
                    hits += 1;
                }
            }
        }
    }
    hits
}
