//! Fixed triangulation for an offset table. Every piece is a strip between
//! two rings with the same circulation, so closedness and consistent winding
//! hold by construction for any skeleton.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use super::generate::vertices;
use super::offsets::OffsetTable;
use crate::kinematics::{forward_kinematics, rest_pose, Side, NUM_FINGERS};

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub palm_columns: usize,
    pub levels: usize,
    pub knuckle: usize,
    pub finger_start: [usize; NUM_FINGERS],
    pub cap: usize,
    pub center: usize,
    pub count: usize,
}

impl Layout {
    pub fn new(t: &OffsetTable) -> Self {
        let p = t.palm_columns();
        let levels = t.palm_levels.len();
        let knuckle = p * levels;
        let mut next = knuckle + 4 * t.finger_ring_size;
        let mut finger_start = [0; NUM_FINGERS];
        for (f, fr) in t.fingers.iter().enumerate() {
            finger_start[f] = next;
            next += fr.rings.iter().map(|r| r.offsets.len()).sum::<usize>() + 1;
        }
        let cap = next;
        next += t.wrist_cap.iter().map(Vec::len).sum::<usize>();
        Self { palm_columns: p, levels, knuckle, finger_start, cap, center: next, count: next + 1 }
    }

    pub fn palm(&self, level: usize, col: usize) -> usize {
        level * self.palm_columns + col % self.palm_columns
    }

    /// Vertex ids of the ring that closes the top of the palm tube: the
    /// dorsal halves of the knuckle rings from index to pinky, then the
    /// palmar halves back from pinky to index.
    pub fn top_ring(&self, k: usize) -> Vec<usize> {
        let m = k / 2;
        let mut ids = Vec::with_capacity(4 * k);
        for i in 0..4 {
            for r in 0..m {
                ids.push(self.knuckle + i * k + r);
            }
        }
        for i in (0..4).rev() {
            for r in m..k {
                ids.push(self.knuckle + i * k + r);
            }
        }
        ids
    }
}

#[derive(Debug)]
pub(crate) struct Template {
    /// Outward-facing for right hands; left hands use the reversed winding.
    pub faces: Vec<[u32; 3]>,
}

struct Builder {
    faces: Vec<[u32; 3]>,
}

impl Builder {
    fn tri(&mut self, a: usize, b: usize, c: usize) {
        self.faces.push([a as u32, b as u32, c as u32]);
    }

    fn quad(&mut self, l0: usize, l1: usize, u1: usize, u0: usize) {
        self.tri(l0, l1, u1);
        self.tri(l0, u1, u0);
    }

    /// Closed zipper between two aligned rings of possibly different sizes.
    fn stitch(&mut self, lower: &[usize], upper: &[usize]) {
        let (a, b) = (lower.len(), upper.len());
        let (mut i, mut j) = (0, 0);
        while i < a || j < b {
            let advance_lower = if i == a {
                false
            } else if j == b {
                true
            } else {
                (2 * i + 1) * b <= (2 * j + 1) * a
            };
            if advance_lower {
                self.tri(lower[i], lower[(i + 1) % a], upper[j % b]);
                i += 1;
            } else {
                self.tri(lower[i % a], upper[(j + 1) % b], upper[j]);
                j += 1;
            }
        }
    }

    fn fan_up(&mut self, ring: &[usize], apex: usize) {
        let n = ring.len();
        for i in 0..n {
            self.tri(ring[i], ring[(i + 1) % n], apex);
        }
    }

    fn fan_down(&mut self, center: usize, ring: &[usize]) {
        let n = ring.len();
        for i in 0..n {
            self.tri(center, ring[(i + 1) % n], ring[i]);
        }
    }
}

impl Template {
    fn build(t: &OffsetTable) -> Self {
        let lay = Layout::new(t);
        let k = t.finger_ring_size;
        let p = lay.palm_columns;
        let mut b = Builder { faces: Vec::new() };

        let tp = t.thumb_patch;
        let in_patch = |level: usize, col: usize| {
            level == tp.level && (col + p - tp.first_column) % p < tp.columns - 1
        };
        for l in 0..lay.levels - 1 {
            for j in 0..p {
                if !in_patch(l, j) {
                    b.quad(lay.palm(l, j), lay.palm(l, j + 1), lay.palm(l + 1, j + 1), lay.palm(l + 1, j));
                }
            }
        }
        let top = lay.top_ring(k);
        let last = lay.levels - 1;
        for j in 0..p {
            b.quad(lay.palm(last, j), lay.palm(last, j + 1), top[(j + 1) % p], top[j]);
        }

        // Webs close the gaps between neighbouring knuckle rings.
        let m = k / 2;
        for i in 0..3 {
            let here = lay.knuckle + i * k;
            let next = lay.knuckle + (i + 1) * k;
            b.quad(here + m - 1, next, next + k - 1, here + m);
        }

        for (f, fr) in t.fingers.iter().enumerate() {
            let mut id = lay.finger_start[f];
            let mut lower: Vec<usize> = if f == 0 {
                let c = tp.first_column;
                let q = tp.columns;
                let mut loop_ids: Vec<usize> = (0..q).map(|d| lay.palm(tp.level, c + d)).collect();
                loop_ids.extend((0..q).rev().map(|d| lay.palm(tp.level + 1, c + d)));
                loop_ids
            } else {
                (0..k).map(|r| lay.knuckle + (f - 1) * k + r).collect()
            };
            for ring in &fr.rings {
                let upper: Vec<usize> = (id..id + ring.offsets.len()).collect();
                id += ring.offsets.len();
                b.stitch(&lower, &upper);
                lower = upper;
            }
            b.fan_up(&lower, id);
        }

        let mut upper: Vec<usize> = (0..p).map(|j| lay.palm(0, j)).collect();
        let mut id = lay.cap;
        for ring in &t.wrist_cap {
            let lower: Vec<usize> = (id..id + ring.len()).collect();
            id += ring.len();
            b.stitch(&lower, &upper);
            upper = lower;
        }
        b.fan_down(lay.center, &upper);

        let mut tpl = Template { faces: b.faces };
        if let Ok(rest) = forward_kinematics(&rest_pose(Side::Right)) {
            if let Ok(v) = vertices::<f64>(&rest, t) {
                if super::signed_volume(&v, &tpl.faces) < 0.0 {
                    for f in tpl.faces.iter_mut() {
                        f.swap(1, 2);
                    }
                }
            }
        }
        tpl
    }

    /// Shared template for `table`, built once per distinct layout.
    pub fn for_table(table: &OffsetTable) -> Arc<Template> {
        static CACHE: OnceLock<Mutex<HashMap<String, Arc<Template>>>> = OnceLock::new();
        let key = serde_json::to_string(table).unwrap_or_default();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(t) = cache.lock().unwrap().get(&key) {
            return t.clone();
        }
        let t = Arc::new(Template::build(table));
        let mut guard = cache.lock().unwrap();
        if guard.len() > 64 {
            guard.clear();
        }
        guard.insert(key, t.clone());
        t
    }
}
