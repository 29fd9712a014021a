//! Ring layout and local-frame offsets that drape the envelope over a skeleton.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::MeshVariant;
use crate::error::{Error, Result};
use crate::kinematics::{canonical_bone_lengths, NUM_FINGERS};

/// Where a ring sits along a finger chain.
///
/// Chain joints are numbered 0 (root) to 3 (tip); bone `b` ends at joint `b`,
/// bone 0 being the metacarpal that starts at the wrist.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    /// At chain joint `0..=2`, oriented halfway between the adjacent bones.
    Joint(usize),
    /// At fraction `t` along bone `bone`, oriented with that bone.
    Bone { bone: usize, t: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ring {
    pub anchor: Anchor,
    /// Displacements in the local frame (x lateral, y along the bone, z palmar).
    pub offsets: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FingerRings {
    pub rings: Vec<Ring>,
    /// Tip vertex, relative to the last joint in the distal bone frame.
    pub apex: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PalmLevel {
    /// Blend from the wrist ring (0) to the knuckle ring (1).
    pub t: f64,
    /// Extra displacement per column in the palm frame.
    pub offsets: Vec<[f64; 3]>,
}

/// Hole in the palm side wall that the thumb tube attaches to: the quads
/// between `level` and `level + 1` spanning `columns` consecutive columns
/// starting at `first_column` (wrapping).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThumbPatch {
    pub level: usize,
    pub first_column: usize,
    pub columns: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffsetTable {
    pub variant: MeshVariant,
    /// Vertices per ring on the four fingers (dorsal half first, thumb side first).
    pub finger_ring_size: usize,
    /// Wrist ring offsets in the palm frame; one per palm column.
    pub wrist: Vec<[f64; 3]>,
    pub palm_levels: Vec<PalmLevel>,
    pub thumb_patch: ThumbPatch,
    /// Rings at the index..pinky root joints, metacarpal frame.
    pub knuckles: Vec<Vec<[f64; 3]>>,
    /// Thumb first, then index..pinky. Finger rings start after the knuckle;
    /// the thumb's first ring joins the palm patch.
    pub fingers: Vec<FingerRings>,
    /// Rings closing the wrist end, outermost first, palm frame.
    pub wrist_cap: Vec<Vec<[f64; 3]>>,
    pub wrist_center: [f64; 3],
}

impl OffsetTable {
    pub fn palm_columns(&self) -> usize {
        self.wrist.len()
    }

    pub fn thumb_ring_size(&self) -> usize {
        2 * self.thumb_patch.columns
    }

    /// Vertex count implied by the layout.
    pub fn vertex_count(&self) -> usize {
        let p = self.palm_columns();
        let palm = p * self.palm_levels.len() + p;
        let fingers: usize = self.fingers.iter().map(|f| f.rings.iter().map(|r| r.offsets.len()).sum::<usize>() + 1).sum();
        let cap: usize = self.wrist_cap.iter().map(Vec::len).sum::<usize>() + 1;
        palm + fingers + cap
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Offsets(m));
        let k = self.finger_ring_size;
        let p = self.palm_columns();
        if k < 4 || k % 2 != 0 {
            return bad(format!("finger ring size {k} must be even and at least 4"));
        }
        if p != 4 * k {
            return bad(format!("palm has {p} columns, expected {}", 4 * k));
        }
        if self.palm_levels.is_empty() || self.palm_levels[0].t != 0.0 {
            return bad("first palm level must have t = 0".into());
        }
        if self.palm_levels.iter().any(|l| l.offsets.len() != p) {
            return bad("palm level offset count differs from column count".into());
        }
        let tp = self.thumb_patch;
        if tp.level + 1 >= self.palm_levels.len() || tp.columns < 2 || tp.columns >= p / 2 || tp.first_column >= p {
            return bad(format!("thumb patch {tp:?} does not fit the palm"));
        }
        if self.knuckles.len() != 4 || self.knuckles.iter().any(|r| r.len() != k) {
            return bad(format!("need 4 knuckle rings of {k} vertices"));
        }
        if self.fingers.len() != NUM_FINGERS {
            return bad(format!("need {NUM_FINGERS} finger entries"));
        }
        for (f, fr) in self.fingers.iter().enumerate() {
            let want = if f == 0 { self.thumb_ring_size() } else { k };
            if fr.rings.is_empty() {
                return bad(format!("finger {f} has no rings"));
            }
            for r in &fr.rings {
                if r.offsets.len() != want {
                    return bad(format!("finger {f} ring has {} vertices, expected {want}", r.offsets.len()));
                }
                match r.anchor {
                    Anchor::Joint(j) if j > 2 => return bad(format!("joint anchor {j} out of range")),
                    Anchor::Bone { bone, t } if bone > 3 || !(0.0..=1.0).contains(&t) => {
                        return bad(format!("bone anchor ({bone}, {t}) out of range"))
                    }
                    _ => {}
                }
            }
            if f > 0 && matches!(fr.rings[0].anchor, Anchor::Joint(0) | Anchor::Bone { bone: 0, .. }) {
                return bad(format!("finger {f} ring overlaps its knuckle"));
            }
        }
        if self.wrist_cap.iter().any(|r| r.len() < 3) {
            return bad("wrist cap rings need at least 3 vertices".into());
        }
        let all = self
            .wrist
            .iter()
            .chain(self.palm_levels.iter().flat_map(|l| l.offsets.iter()))
            .chain(self.knuckles.iter().flatten())
            .chain(self.fingers.iter().flat_map(|f| f.rings.iter().flat_map(|r| r.offsets.iter()).chain([&f.apex])))
            .chain(self.wrist_cap.iter().flatten())
            .chain([&self.wrist_center]);
        if all.flat_map(|v| v.iter()).any(|x| !x.is_finite()) {
            return bad("non-finite offset".into());
        }
        let want = self.variant.vertex_count();
        if self.vertex_count() != want {
            return bad(format!("layout has {} vertices, {:?} requires {want}", self.vertex_count(), self.variant));
        }
        Ok(())
    }

    pub fn default_for(variant: MeshVariant) -> Self {
        match variant {
            MeshVariant::Plain => build(variant, 8, &[0.0, 0.2, 0.5], 1, 13, PLAIN_FINGER, PLAIN_THUMB),
            MeshVariant::Refined => {
                build(variant, 12, &[0.0, 0.16, 0.42, 0.62, 0.82], 1, 9, REFINED_FINGER, REFINED_THUMB)
            }
        }
    }
}

const PLAIN_FINGER: &[Anchor] =
    &[Anchor::Bone { bone: 1, t: 0.5 }, Anchor::Joint(1), Anchor::Joint(2), Anchor::Bone { bone: 3, t: 0.6 }];
const PLAIN_THUMB: &[Anchor] = &[Anchor::Joint(0), Anchor::Joint(1), Anchor::Joint(2), Anchor::Bone { bone: 3, t: 0.6 }];
const REFINED_FINGER: &[Anchor] = &[
    Anchor::Bone { bone: 1, t: 0.3 },
    Anchor::Bone { bone: 1, t: 0.7 },
    Anchor::Joint(1),
    Anchor::Bone { bone: 2, t: 0.5 },
    Anchor::Joint(2),
    Anchor::Bone { bone: 3, t: 0.4 },
    Anchor::Bone { bone: 3, t: 0.75 },
];
const REFINED_THUMB: &[Anchor] = &[
    Anchor::Joint(0),
    Anchor::Bone { bone: 1, t: 0.5 },
    Anchor::Joint(1),
    Anchor::Joint(2),
    Anchor::Bone { bone: 3, t: 0.6 },
];

/// Half-width and half-thickness of each finger at its root, thumb first.
const FINGER_RADII: [(f64, f64); NUM_FINGERS] = [(9.0, 8.5), (7.0, 6.6), (7.2, 6.8), (6.8, 6.4), (6.0, 5.6)];
/// Knuckle cross-sections for index..pinky.
const KNUCKLE_RADII: [(f64, f64); 4] = [(7.2, 8.5), (7.4, 8.7), (7.0, 8.3), (6.3, 7.6)];
/// Radius shrink from root to tip.
const TAPER: f64 = 0.35;
const WRIST_HALF_WIDTH: f64 = 25.0;
const WRIST_HALF_THICKNESS: f64 = 10.0;
const APEX_OVERHANG: f64 = 1.5;

/// Ellipse ring. Vertex `k` sits at angle `start - 2 pi (k + 0.5) / n` in the
/// (x, z) plane, so rings run over the dorsal side (z < 0) first when
/// `start = 0`.
fn ellipse(n: usize, rx: f64, rz: f64, start: f64, y: f64) -> Vec<[f64; 3]> {
    (0..n)
        .map(|k| {
            let a = start - 2.0 * PI * (k as f64 + 0.5) / n as f64;
            [rx * a.cos(), y, rz * a.sin()]
        })
        .collect()
}

/// Fraction of the finger's phalanx length (bones 1..3) at which an anchor sits.
fn arc_fraction(f: usize, a: Anchor) -> f64 {
    let l = canonical_bone_lengths();
    let b = &l[4 * f + 1..4 * f + 4];
    let total: f64 = b.iter().sum();
    let along = match a {
        Anchor::Joint(j) => b[..j].iter().sum::<f64>(),
        Anchor::Bone { bone: 0, .. } => 0.0,
        Anchor::Bone { bone, t } => b[..bone - 1].iter().sum::<f64>() + t * b[bone - 1],
    };
    along / total
}

fn build(
    variant: MeshVariant,
    k: usize,
    levels: &[f64],
    patch_level: usize,
    cap_ring: usize,
    finger: &[Anchor],
    thumb: &[Anchor],
) -> OffsetTable {
    let p = 4 * k;
    let thumb_cols = k / 2;
    let kt = 2 * thumb_cols;
    let wrist = ellipse(p, WRIST_HALF_WIDTH, WRIST_HALF_THICKNESS, 0.0, 0.0);
    let palm_levels = levels.iter().map(|&t| PalmLevel { t, offsets: vec![[0.0; 3]; p] }).collect();
    // Centre the patch on the seam between the last and first column, which
    // is the thumb-side edge of the palm.
    let thumb_patch = ThumbPatch { level: patch_level, first_column: p - thumb_cols / 2, columns: thumb_cols };
    let knuckles = KNUCKLE_RADII.iter().map(|&(rx, rz)| ellipse(k, rx, rz, 0.0, 0.0)).collect();

    let mut fingers = Vec::with_capacity(NUM_FINGERS);
    for f in 0..NUM_FINGERS {
        let (rx0, rz0) = FINGER_RADII[f];
        let (anchors, n, start) = if f == 0 {
            // Thumb rings start on the wrist-facing side so that they line up
            // with the palm patch loop (lower row first).
            (thumb, kt, PI / 2.0)
        } else {
            (finger, k, 0.0)
        };
        let rings = anchors
            .iter()
            .map(|&a| {
                let s = 1.0 - TAPER * arc_fraction(f, a);
                Ring { anchor: a, offsets: ellipse(n, rx0 * s, rz0 * s, start, 0.0) }
            })
            .collect();
        fingers.push(FingerRings { rings, apex: [0.0, APEX_OVERHANG, 0.0] });
    }
    let wrist_cap = vec![ellipse(cap_ring, 0.55 * WRIST_HALF_WIDTH, 0.55 * WRIST_HALF_THICKNESS, 0.0, -2.0)];
    OffsetTable {
        variant,
        finger_ring_size: k,
        wrist,
        palm_levels,
        thumb_patch,
        knuckles,
        fingers,
        wrist_cap,
        wrist_center: [0.0, -3.0, 0.0],
    }
}
