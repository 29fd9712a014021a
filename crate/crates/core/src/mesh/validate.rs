use std::collections::HashMap;

use super::HandMesh;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MeshDefect {
    /// Edge used by a single face.
    BoundaryEdge(u32, u32),
    /// Edge used by more than two faces.
    NonManifoldEdge(u32, u32, usize),
    /// Both faces traverse the edge in the same direction.
    InconsistentWinding(u32, u32),
    /// Face with a repeated index, an index out of range, or zero area.
    DegenerateFace(usize),
    VertexCount { expected: usize, found: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct WatertightReport {
    pub is_closed: bool,
    pub is_oriented: bool,
    pub euler_char: i64,
    pub defects: Vec<MeshDefect>,
}

impl WatertightReport {
    pub fn is_ok(&self) -> bool {
        self.defects.is_empty()
    }
}

/// Combinatorial closedness and orientation checks, plus zero-area faces.
pub fn validate_watertight<T: Scalar>(m: &HandMesh<T>) -> WatertightReport {
    let n = m.vertices.len();
    let mut defects = Vec::new();
    if let Some(v) = m.variant {
        if n != v.vertex_count() {
            defects.push(MeshDefect::VertexCount { expected: v.vertex_count(), found: n });
        }
    }
    // Undirected edge -> (uses as a->b with a<b, uses as b->a).
    let mut edges: HashMap<(u32, u32), (usize, usize)> = HashMap::new();
    for (fi, f) in m.faces.iter().enumerate() {
        if f.iter().any(|&i| i as usize >= n) || f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            defects.push(MeshDefect::DegenerateFace(fi));
            continue;
        }
        let [a, b, c] = m.triangle(fi).map(|p| p.to_f64());
        if (b - a).cross(c - a).norm() <= 1e-12 {
            defects.push(MeshDefect::DegenerateFace(fi));
        }
        for k in 0..3 {
            let (u, v) = (f[k], f[(k + 1) % 3]);
            let e = edges.entry((u.min(v), u.max(v))).or_default();
            if u < v {
                e.0 += 1;
            } else {
                e.1 += 1;
            }
        }
    }
    let mut keys: Vec<_> = edges.keys().copied().collect();
    keys.sort_unstable();
    let (mut closed, mut oriented) = (true, true);
    for key in keys {
        let (fw, bw) = edges[&key];
        match fw + bw {
            1 => {
                closed = false;
                defects.push(MeshDefect::BoundaryEdge(key.0, key.1));
            }
            2 => {
                if fw != 1 {
                    oriented = false;
                    defects.push(MeshDefect::InconsistentWinding(key.0, key.1));
                }
            }
            c => {
                closed = false;
                defects.push(MeshDefect::NonManifoldEdge(key.0, key.1, c));
            }
        }
    }
    let mut used = vec![false; n];
    for f in &m.faces {
        for &i in f {
            if (i as usize) < n {
                used[i as usize] = true;
            }
        }
    }
    let v = used.iter().filter(|&&u| u).count() as i64;
    let euler_char = v - edges.len() as i64 + m.faces.len() as i64;
    WatertightReport { is_closed: closed, is_oriented: oriented, euler_char, defects }
}
