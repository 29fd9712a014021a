use std::fmt::Write as _;
use std::path::Path;

use super::HandMesh;
use crate::error::{Error, Result};
use crate::geom::Vec3;

/// OBJ text with `v` and `f` records only, 1-based indices.
pub fn write_obj(m: &HandMesh<f64>) -> String {
    let mut s = String::with_capacity(m.vertices.len() * 40 + m.faces.len() * 20);
    for v in &m.vertices {
        // 17 significant digits round-trip f64 exactly.
        let _ = writeln!(s, "v {:.17e} {:.17e} {:.17e}", v.x, v.y, v.z);
    }
    for f in &m.faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

pub fn parse_obj(text: &str) -> Result<HandMesh<f64>> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let err = |line: usize, msg: String| Error::Parse { line, msg };
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        let mut it = body.split_whitespace();
        let Some(tag) = it.next() else { continue };
        let rest: Vec<&str> = it.collect();
        match tag {
            "v" => {
                if rest.len() < 3 || rest.len() > 4 {
                    return Err(err(line, format!("vertex needs 3 coordinates, got {}", rest.len())));
                }
                let mut c = [0.0f64; 3];
                for (k, tok) in rest.iter().take(3).enumerate() {
                    c[k] = tok.parse().map_err(|_| err(line, format!("bad coordinate {tok:?}")))?;
                    if !c[k].is_finite() {
                        return Err(err(line, format!("non-finite coordinate {tok:?}")));
                    }
                }
                vertices.push(Vec3::from(c));
            }
            "f" => {
                if rest.len() != 3 {
                    return Err(err(line, format!("only triangles are supported, face has {} vertices", rest.len())));
                }
                let mut f = [0u32; 3];
                for (k, tok) in rest.iter().enumerate() {
                    let idx = tok.split('/').next().unwrap_or("");
                    let v: i64 = idx.parse().map_err(|_| err(line, format!("bad face index {tok:?}")))?;
                    if v < 1 || v as usize > vertices.len() {
                        return Err(err(line, format!("face index {v} out of range 1..={}", vertices.len())));
                    }
                    f[k] = (v - 1) as u32;
                }
                faces.push(f);
            }
            "vn" | "vt" | "o" | "g" | "s" | "usemtl" | "mtllib" => {}
            other => return Err(err(line, format!("unsupported record {other:?}"))),
        }
    }
    if vertices.is_empty() || faces.is_empty() {
        return Err(err(text.lines().count().max(1), "no vertices or faces".into()));
    }
    Ok(HandMesh { vertices, faces, variant: None, source_skeleton: None })
}

/// Writes through a temporary file so readers never see a partial mesh.
pub fn export_obj(m: &HandMesh<f64>, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, write_obj(m).as_bytes())
}

pub fn import_obj(path: &Path) -> Result<HandMesh<f64>> {
    parse_obj(&std::fs::read_to_string(path)?)
}
