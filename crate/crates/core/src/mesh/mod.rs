//! Watertight hand envelope draped over a skeleton.

mod generate;
mod obj;
mod offsets;
mod template;
mod validate;

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

pub use generate::{envelope_vertices, generate, generate_mesh};
pub use obj::{export_obj, import_obj, parse_obj, write_obj};
pub use offsets::{Anchor, FingerRings, OffsetTable, PalmLevel, Ring, ThumbPatch};
pub use validate::{validate_watertight, MeshDefect, WatertightReport};

use crate::geom::{Aabb, Vec3};
use crate::kinematics::{PointSet, Provenance, Skeleton};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshVariant {
    Plain,
    Refined,
}

impl MeshVariant {
    pub const fn vertex_count(self) -> usize {
        match self {
            MeshVariant::Plain => 307,
            MeshVariant::Refined => 699,
        }
    }
}

/// Built-in offsets, constructed once.
pub fn default_offsets(variant: MeshVariant) -> &'static OffsetTable {
    static PLAIN: OnceLock<OffsetTable> = OnceLock::new();
    static REFINED: OnceLock<OffsetTable> = OnceLock::new();
    match variant {
        MeshVariant::Plain => PLAIN.get_or_init(|| OffsetTable::default_for(variant)),
        MeshVariant::Refined => REFINED.get_or_init(|| OffsetTable::default_for(variant)),
    }
}

/// Triangle mesh in mm. Faces wind counter-clockwise seen from outside.
#[derive(Clone, Debug, PartialEq)]
pub struct HandMesh<T> {
    pub vertices: Vec<Vec3<T>>,
    pub faces: Vec<[u32; 3]>,
    /// `None` for meshes loaded from files.
    pub variant: Option<MeshVariant>,
    pub source_skeleton: Option<Skeleton<T>>,
}

impl<T: Scalar> HandMesh<T> {
    pub fn triangle(&self, f: usize) -> [Vec3<T>; 3] {
        self.faces[f].map(|i| self.vertices[i as usize])
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::from_points(&self.vertices)
    }

    pub fn cast<U: Scalar>(&self) -> HandMesh<U> {
        HandMesh {
            vertices: self.vertices.iter().map(|v| v.cast()).collect(),
            faces: self.faces.clone(),
            variant: self.variant,
            source_skeleton: self.source_skeleton.as_ref().map(|s| s.cast()),
        }
    }

    pub fn volume(&self) -> f64 {
        let v: Vec<Vec3<f64>> = self.vertices.iter().map(|p| p.to_f64()).collect();
        signed_volume(&v, &self.faces)
    }
}

/// Divergence-theorem volume; positive for outward winding.
pub fn signed_volume(v: &[Vec3<f64>], faces: &[[u32; 3]]) -> f64 {
    faces
        .iter()
        .map(|&[a, b, c]| v[a as usize].dot(v[b as usize].cross(v[c as usize])))
        .sum::<f64>()
        / 6.0
}

/// All mesh vertices as a point set.
pub fn mesh_surface_pointset<T: Scalar>(m: &HandMesh<T>) -> PointSet<T> {
    PointSet { points: m.vertices.clone(), provenance: Provenance::MeshSurface }
}
