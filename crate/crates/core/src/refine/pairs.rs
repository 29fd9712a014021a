use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geom::Vec3;
use crate::kinematics::{random_unit, Skeleton};
use crate::loss::{intersection_loss_value, random_close_pair, LossConfig};
use crate::mesh::{generate, MeshVariant};
use crate::occupancy::{caster_pair_count, pair_bbox, GridSpec, OccupancyField, RayCaster, GRID_N};

/// Pair file format: `{"right": Skeleton, "left": Skeleton}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSkeletons {
    pub right: Skeleton<f64>,
    pub left: Skeleton<f64>,
}

/// Ray-cast grid points inside both Plain meshes.
pub fn raycast_count(r: &Skeleton<f64>, l: &Skeleton<f64>) -> Result<usize> {
    let mr = generate(r, MeshVariant::Plain)?;
    let ml = generate(l, MeshVariant::Plain)?;
    let (cr, cl) = (RayCaster::new(&mr)?, RayCaster::new(&ml)?);
    let spec = GridSpec::new(pair_bbox(&cr.aabb(), &cl.aabb()), GRID_N)?;
    Ok(caster_pair_count(&cr, &cl, spec))
}

/// Smallest shift along `dir` (to 0.25 mm) at which `apart` holds, searching
/// from a start where it does not.
fn contact_shift(
    r: &Skeleton<f64>,
    l: &Skeleton<f64>,
    dir: Vec3<f64>,
    apart: &dyn Fn(&Skeleton<f64>, &Skeleton<f64>) -> Result<bool>,
) -> Result<Option<f64>> {
    let at = |s: f64| l.translated(dir * s);
    if apart(r, &at(0.0))? {
        return Ok(None);
    }
    let (mut lo, mut hi) = (0.0, 64.0);
    while !apart(r, &at(hi))? {
        lo = hi;
        hi *= 2.0;
        if hi > 1000.0 {
            return Ok(None);
        }
    }
    while hi - lo > 0.25 {
        let mid = 0.5 * (lo + hi);
        if apart(r, &at(mid))? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

/// Pairs that interpenetrate slightly: a random right hand and a mirrored
/// random hand are slid apart until they just stop intersecting, then
/// pushed back in by 2 to 12 mm. Every returned pair has a non-zero
/// ray-cast intersection count.
pub fn intersecting_pairs(n: usize, seed: u64) -> Result<Vec<PairSkeletons>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let apart = |a: &Skeleton<f64>, b: &Skeleton<f64>| Ok(raycast_count(a, b)? == 0);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let (r, l) = random_close_pair(&mut rng, 0.0);
        let dir = random_unit(&mut rng);
        let depth = rng.random_range(2.0..12.0);
        let Some(s) = contact_shift(&r, &l, dir, &apart)? else { continue };
        let left = l.translated(dir * (s - depth));
        if raycast_count(&r, &left)? > 0 {
            out.push(PairSkeletons { right: r, left });
        }
    }
    Ok(out)
}

/// Pairs in contact but not intersecting: zero ray-cast intersections and
/// a loss below `min_loss`, within 0.25 mm of violating either.
pub fn touching_pairs(
    n: usize,
    seed: u64,
    field: &dyn OccupancyField<f64>,
    loss: &LossConfig,
    min_loss: f64,
) -> Result<Vec<PairSkeletons>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let apart = |a: &Skeleton<f64>, b: &Skeleton<f64>| {
        Ok(intersection_loss_value(a, b, field, loss)? < min_loss && raycast_count(a, b)? == 0)
    };
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let (r, l) = random_close_pair(&mut rng, 0.0);
        let dir = random_unit(&mut rng);
        let Some(s) = contact_shift(&r, &l, dir, &apart)? else { continue };
        out.push(PairSkeletons { right: r, left: l.translated(dir * s) });
    }
    Ok(out)
}
