use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::pairs::PairSkeletons;
use super::{refine_skeletons, RefineConfig, RefineStatus};
use crate::error::{Error, Result};
use crate::kinematics::{skeleton_mpjpe, Skeleton};
use crate::mesh::{generate, MeshVariant};
use crate::occupancy::{caster_pair_count, field_pair_count, pair_bbox, GridSpec, OccupancyField, RayCaster, GRID_N};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub id: usize,
    pub status: RefineStatus,
    pub raycast_before: usize,
    pub raycast_after: usize,
    pub occupancy_before: usize,
    pub occupancy_after: usize,
    pub drift_right: f64,
    pub drift_left: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub pairs: usize,
    pub refined_pairs: usize,
    pub raycast_before: usize,
    pub raycast_after: usize,
    pub occupancy_before: usize,
    pub occupancy_after: usize,
    /// Mean per-hand MPJPE between input and output over refined pairs, mm.
    pub mean_drift: f64,
    pub max_drift: f64,
    /// Points tested per hand by the loss.
    pub points_per_hand: usize,
    #[serde(skip)]
    pub rows: Vec<PairRow>,
}

fn decrease(before: usize, after: usize) -> f64 {
    if before == 0 {
        0.0
    } else {
        100.0 * (before as f64 - after as f64) / before as f64
    }
}

impl BatchReport {
    pub fn raycast_decrease_pct(&self) -> f64 {
        decrease(self.raycast_before, self.raycast_after)
    }

    pub fn occupancy_decrease_pct(&self) -> f64 {
        decrease(self.occupancy_before, self.occupancy_after)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "pair,status,raycast_before,raycast_after,occupancy_before,occupancy_after,drift_right_mm,drift_left_mm,iterations,points_per_hand\n",
        );
        for r in &self.rows {
            let status = serde_json::to_value(r.status).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{:.6},{:.6},{},{}",
                r.id,
                status,
                r.raycast_before,
                r.raycast_after,
                r.occupancy_before,
                r.occupancy_after,
                r.drift_right,
                r.drift_left,
                r.iterations,
                self.points_per_hand
            );
        }
        s
    }

    pub fn summary_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        v["raycast_decrease_pct"] = self.raycast_decrease_pct().into();
        v["occupancy_decrease_pct"] = self.occupancy_decrease_pct().into();
        Ok(serde_json::to_string_pretty(&v)?)
    }
}

/// Ray-cast and field intersection counts on the pair's grid.
pub fn pair_counts(r: &Skeleton<f64>, l: &Skeleton<f64>, field: &dyn OccupancyField<f64>) -> Result<(usize, usize)> {
    let mr = generate(r, MeshVariant::Plain)?;
    let ml = generate(l, MeshVariant::Plain)?;
    let (cr, cl) = (RayCaster::new(&mr)?, RayCaster::new(&ml)?);
    let spec = GridSpec::new(pair_bbox(&cr.aabb(), &cl.aabb()), GRID_N)?;
    Ok((caster_pair_count(&cr, &cl, spec), field_pair_count(field, r, l, spec)))
}

/// Refines every pair and tallies intersections before and after.
pub fn batch_refine(pairs: &[PairSkeletons], field: &dyn OccupancyField<f64>, cfg: &RefineConfig) -> Result<BatchReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no pairs to refine".into()));
    }
    let mut rows = Vec::with_capacity(pairs.len());
    for (id, p) in pairs.iter().enumerate() {
        let out = refine_skeletons(&p.right, &p.left, field, cfg)?;
        let after = PairSkeletons { right: out.right, left: out.left };
        rows.push(pair_row(id, p, &after, out.status, out.iterations, field)?);
    }
    Ok(BatchReport::from_rows(rows, cfg.loss.point_set.point_count()))
}

/// Counts and drift for one refined pair. Counts after are only recomputed
/// when the pair was actually refined.
pub fn pair_row(
    id: usize,
    before: &PairSkeletons,
    after: &PairSkeletons,
    status: RefineStatus,
    iterations: usize,
    field: &dyn OccupancyField<f64>,
) -> Result<PairRow> {
    let (rb, ob) = pair_counts(&before.right, &before.left, field)?;
    let (ra, oa) = if status.refined() { pair_counts(&after.right, &after.left, field)? } else { (rb, ob) };
    Ok(PairRow {
        id,
        status,
        raycast_before: rb,
        raycast_after: ra,
        occupancy_before: ob,
        occupancy_after: oa,
        drift_right: skeleton_mpjpe(&before.right, &after.right),
        drift_left: skeleton_mpjpe(&before.left, &after.left),
        iterations,
    })
}

impl BatchReport {
    pub fn from_rows(rows: Vec<PairRow>, points_per_hand: usize) -> Self {
        let refined: Vec<&PairRow> = rows.iter().filter(|r| r.status.refined()).collect();
        let drifts: Vec<f64> = refined.iter().flat_map(|r| [r.drift_right, r.drift_left]).collect();
        BatchReport {
            pairs: rows.len(),
            refined_pairs: refined.len(),
            raycast_before: rows.iter().map(|r| r.raycast_before).sum(),
            raycast_after: rows.iter().map(|r| r.raycast_after).sum(),
            occupancy_before: rows.iter().map(|r| r.occupancy_before).sum(),
            occupancy_after: rows.iter().map(|r| r.occupancy_after).sum(),
            mean_drift: if drifts.is_empty() { 0.0 } else { drifts.iter().sum::<f64>() / drifts.len() as f64 },
            max_drift: drifts.iter().copied().fold(0.0, f64::max),
            points_per_hand,
            rows,
        }
    }
}
