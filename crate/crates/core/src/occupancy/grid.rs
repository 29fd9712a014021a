use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Aabb, Vec3};

/// Uniform `n × n × n` lattice over a box, corners included.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bbox: Aabb,
    pub n: usize,
}

impl GridSpec {
    pub fn new(bbox: Aabb, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("grid resolution {n} < 2")));
        }
        let ok = (0..3).all(|i| bbox.min[i].is_finite() && bbox.max[i].is_finite() && bbox.min[i] <= bbox.max[i]);
        if !ok {
            return Err(Error::InvalidArgument(format!("bad grid box {bbox:?}")));
        }
        Ok(Self { bbox, n })
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Sample coordinates along axis `a`.
    pub fn axis(&self, a: usize) -> Vec<f64> {
        let (lo, hi) = (self.bbox.min[a], self.bbox.max[a]);
        let step = (hi - lo) / (self.n - 1) as f64;
        (0..self.n).map(|i| if i + 1 == self.n { hi } else { lo + step * i as f64 }).collect()
    }

    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.n + iy) * self.n + iz
    }

    /// All sample points in index order.
    pub fn points(&self) -> Vec<Vec3<f64>> {
        let [xs, ys, zs] = [0, 1, 2].map(|a| self.axis(a));
        let mut out = Vec::with_capacity(self.len());
        for &x in &xs {
            for &y in &ys {
                for &z in &zs {
                    out.push(Vec3::new(x, y, z));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    pub spec: GridSpec,
    pub mask: Vec<bool>,
    /// Field probabilities when the grid came from a field; `mask` is `p > 0.5`.
    pub probs: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct GridFile {
    bbox: Aabb,
    n: usize,
    count: usize,
    /// Alternating run lengths, starting with a (possibly empty) run of `false`.
    runs: Vec<usize>,
}

impl OccupancyGrid {
    pub fn from_mask(spec: GridSpec, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != spec.len() {
            return Err(Error::GridMismatch(format!("mask has {} entries, grid needs {}", mask.len(), spec.len())));
        }
        Ok(Self { spec, mask, probs: None })
    }

    pub fn from_probs(spec: GridSpec, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != spec.len() {
            return Err(Error::GridMismatch(format!("{} probabilities, grid needs {}", probs.len(), spec.len())));
        }
        let mask = probs.iter().map(|&p| p > 0.5).collect();
        Ok(Self { spec, mask, probs: Some(probs) })
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    fn check_same(&self, o: &Self) -> Result<()> {
        if self.spec != o.spec {
            return Err(Error::GridMismatch(format!("{:?} vs {:?}", self.spec, o.spec)));
        }
        Ok(())
    }

    /// Number of samples set in both grids.
    pub fn intersection_count(&self, o: &Self) -> Result<usize> {
        self.check_same(o)?;
        Ok(self.mask.iter().zip(&o.mask).filter(|(a, b)| **a && **b).count())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut runs = Vec::new();
        let mut cur = false;
        let mut len = 0;
        for &b in &self.mask {
            if b == cur {
                len += 1;
            } else {
                runs.push(len);
                cur = b;
                len = 1;
            }
        }
        runs.push(len);
        let f = GridFile { bbox: self.spec.bbox, n: self.spec.n, count: self.count(), runs };
        Ok(serde_json::to_string(&f)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: GridFile = serde_json::from_str(s)?;
        let spec = GridSpec::new(f.bbox, f.n)?;
        let mut mask = Vec::with_capacity(spec.len());
        let mut cur = false;
        for r in f.runs {
            mask.extend(std::iter::repeat_n(cur, r));
            cur = !cur;
        }
        let g = Self::from_mask(spec, mask)?;
        if g.count() != f.count {
            return Err(Error::Format(format!("run lengths give {} set cells, header says {}", g.count(), f.count)));
        }
        Ok(g)
    }

    /// `x,y,z,prob` rows; masks without probabilities write 0 or 1.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,z,prob\n");
        for (i, p) in self.spec.points().into_iter().enumerate() {
            let v = match &self.probs {
                Some(pr) => pr[i],
                None => f64::from(u8::from(self.mask[i])),
            };
            let _ = writeln!(s, "{},{},{},{}", p.x, p.y, p.z, v);
        }
        s
    }
}

/// |a ∧ b| / |a ∨ b|, 1 when both are empty.
pub fn iou(a: &OccupancyGrid, b: &OccupancyGrid) -> Result<f64> {
    a.check_same(b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.mask.iter().zip(&b.mask) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}
