use super::offsets::{Anchor, OffsetTable};
use super::template::{Layout, Template};
use super::{HandMesh, MeshVariant};
use crate::error::{Error, Result};
use crate::geom::{Mat3, Vec3};
use crate::kinematics::{bone_name, finger_joint, Side, Skeleton, NUM_EDGES, NUM_FINGERS};
use crate::scalar::Scalar;

/// Orthonormal frame; `y` follows the bone.
#[derive(Clone, Copy)]
struct Frame<T> {
    x: Vec3<T>,
    y: Vec3<T>,
    z: Vec3<T>,
}

impl<T: Scalar> Frame<T> {
    /// Rotates the frame by the minimal rotation taking `y` to `dir`.
    fn transport(&self, dir: Vec3<T>) -> Self {
        let r = Mat3::align(self.y, dir);
        Self { x: r.mul_vec(self.x), y: dir, z: r.mul_vec(self.z) }
    }

    fn apply(&self, sx: T, o: &[f64; 3]) -> Vec3<T> {
        self.x * (sx * T::lit(o[0])) + self.y * T::lit(o[1]) + self.z * T::lit(o[2])
    }
}

/// Palm frame: y toward the middle knuckle, z out of the palm, x = y × z.
/// Mirrored skeletons give the mirrored frame with the same handedness, so
/// lateral offsets flip sign with the side.
fn palm_frame<T: Scalar>(s: &Skeleton<T>) -> Result<Frame<T>> {
    let w = s.wrist();
    let y = (s.joints[finger_joint(2, 0)] - w).normalized();
    let n = (s.joints[finger_joint(1, 0)] - w).cross(s.joints[finger_joint(4, 0)] - w) * s.side.sign::<T>();
    let z = n - y * n.dot(y);
    let zn = z.norm();
    if !(zn.re() > 1e-9) || !y.is_finite() {
        return Err(Error::InvalidPose("palm knuckles are collinear with the wrist".into()));
    }
    let z = z * zn.recip();
    Ok(Frame { x: y.cross(z), y, z })
}

/// Mesh vertex positions for a skeleton, in template order.
pub(crate) fn vertices<T: Scalar>(s: &Skeleton<T>, table: &OffsetTable) -> Result<Vec<Vec3<T>>> {
    let lengths = s.bone_lengths();
    for (e, l) in lengths.iter().enumerate().take(NUM_EDGES) {
        if !(l.re() > 1e-9) {
            return Err(Error::DegenerateBone { bone: e, name: bone_name(e) });
        }
    }
    let lay = Layout::new(table);
    let k = table.finger_ring_size;
    let sx = s.side.sign::<T>();
    let wrist = s.wrist();
    let palm = palm_frame(s)?;
    let mut out = vec![Vec3::zero(); lay.count];

    // Per-finger bone frames by parallel transport from the palm frame.
    let mut frames = Vec::with_capacity(NUM_FINGERS);
    for f in 0..NUM_FINGERS {
        let mut chain: [Frame<T>; 4] = [palm; 4];
        let mut prev = palm;
        for b in 0..4 {
            let (a, c) = s.bone(4 * f + b);
            let d = (c - a) * lengths[4 * f + b].recip();
            prev = prev.transport(d);
            chain[b] = prev;
        }
        frames.push(chain);
    }

    for i in 0..4 {
        let mcp = s.joints[finger_joint(i + 1, 0)];
        for (r, o) in table.knuckles[i].iter().enumerate() {
            out[lay.knuckle + i * k + r] = mcp + frames[i + 1][0].apply(sx, o);
        }
    }
    let top = lay.top_ring(k);
    for (l, level) in table.palm_levels.iter().enumerate() {
        let t = T::lit(level.t);
        for j in 0..lay.palm_columns {
            let w = wrist + palm.apply(sx, &table.wrist[j]);
            out[lay.palm(l, j)] = w.lerp(out[top[j]], t) + palm.apply(sx, &level.offsets[j]);
        }
    }

    for (f, fr) in table.fingers.iter().enumerate() {
        let chain = &frames[f];
        let mut id = lay.finger_start[f];
        for ring in &fr.rings {
            let (center, frame) = match ring.anchor {
                Anchor::Joint(j) => {
                    let bis = (chain[j].y + chain[j + 1].y).normalized();
                    (s.joints[finger_joint(f, j)], chain[j].transport(bis))
                }
                Anchor::Bone { bone, t } => {
                    let (a, b) = s.bone(4 * f + bone);
                    (a.lerp(b, T::lit(t)), chain[bone])
                }
            };
            for o in &ring.offsets {
                out[id] = center + frame.apply(sx, o);
                id += 1;
            }
        }
        out[id] = s.joints[finger_joint(f, 3)] + chain[3].apply(sx, &fr.apex);
    }

    let mut id = lay.cap;
    for ring in &table.wrist_cap {
        for o in ring {
            out[id] = wrist + palm.apply(sx, o);
            id += 1;
        }
    }
    out[lay.center] = wrist + palm.apply(sx, &table.wrist_center);
    Ok(out)
}

/// Drapes the envelope described by `table` over `s`.
pub fn generate_mesh<T: Scalar>(s: &Skeleton<T>, variant: MeshVariant, table: &OffsetTable) -> Result<HandMesh<T>> {
    if table.variant != variant {
        return Err(Error::Offsets(format!("table is for {:?}, requested {variant:?}", table.variant)));
    }
    table.validate()?;
    let vertices = vertices(s, table)?;
    let tpl = Template::for_table(table);
    let faces = match s.side {
        Side::Right => tpl.faces.clone(),
        Side::Left => tpl.faces.iter().map(|&[a, b, c]| [a, c, b]).collect(),
    };
    Ok(HandMesh { vertices, faces, variant: Some(variant), source_skeleton: Some(s.clone()) })
}

/// [`generate_mesh`] with the built-in offsets for `variant`.
pub fn generate<T: Scalar>(s: &Skeleton<T>, variant: MeshVariant) -> Result<HandMesh<T>> {
    generate_mesh(s, variant, super::default_offsets(variant))
}

/// Vertex positions only, with the built-in offsets. Used where faces are
/// not needed, e.g. when differentiating through the envelope.
pub fn envelope_vertices<T: Scalar>(s: &Skeleton<T>, variant: MeshVariant) -> Result<Vec<Vec3<T>>> {
    vertices(s, super::default_offsets(variant))
}
