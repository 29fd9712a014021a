//! Inside/outside tests: exact ray casting on meshes, the analytic capsule
//! field, occupancy grids and IoU.

mod capsule;
mod grid;
mod raycast;

pub use capsule::{CapsuleField, DEFAULT_BETA, DEFAULT_RADII};
pub use grid::{iou, GridSpec, OccupancyGrid};
pub use raycast::{ray_cast_inside, RayCaster, MAX_RAY_ATTEMPTS};


use crate::error::Result;
use crate::geom::{Aabb, Vec3};
use crate::kinematics::{Skeleton, NUM_EDGES, NUM_JOINTS};
use crate::mesh::HandMesh;
use crate::scalar::Scalar;

/// Default padding around grid boxes, mm.
pub const GRID_PADDING: f64 = 5.0;
/// Default grid resolution (125 000 samples).
pub const GRID_N: usize = 50;

/// Probabilities plus weighted gradients for a batch of points.
#[derive(Clone, Debug)]
pub struct FieldGrad<T> {
    pub probs: Vec<T>,
    /// `w_i · ∂p_i/∂x_i`.
    pub point_grads: Vec<Vec3<T>>,
    /// `Σ_i w_i · ∂p_i/∂cond`.
    pub cond_grad: [Vec3<T>; NUM_JOINTS],
}

/// Occupancy probability of points given a conditioning skeleton.
pub trait OccupancyField<T: Scalar>: Send + Sync {
    fn probabilities(&self, cond: &Skeleton<T>, pts: &[Vec3<T>]) -> Vec<T>;

    /// Gradients weighted by `weight(i, p_i)`, typically the derivative of a
    /// loss with respect to `p_i`.
    fn backward(&self, cond: &Skeleton<T>, pts: &[Vec3<T>], weight: &dyn Fn(usize, T) -> T) -> FieldGrad<T>;

    /// Box outside which every probability is at most 0.5, if known.
    fn support(&self, _cond: &Skeleton<T>) -> Option<Aabb> {
        None
    }

    fn eval(&self, p: Vec3<T>, cond: &Skeleton<T>) -> T {
        self.probabilities(cond, &[p])[0]
    }

    fn grad_point(&self, p: Vec3<T>, cond: &Skeleton<T>) -> Vec3<T> {
        self.backward(cond, &[p], &|_, _| T::one()).point_grads[0]
    }

    fn grad_skeleton(&self, p: Vec3<T>, cond: &Skeleton<T>) -> [Vec3<T>; NUM_JOINTS] {
        self.backward(cond, &[p], &|_, _| T::one()).cond_grad
    }
}

/// Ray-cast mask of `m` on a grid.
pub fn mesh_grid(m: &HandMesh<f64>, spec: GridSpec) -> Result<OccupancyGrid> {
    let rc = RayCaster::new(m)?;
    Ok(caster_grid(&rc, spec))
}

pub fn caster_grid(rc: &RayCaster, spec: GridSpec) -> OccupancyGrid {
    let [xs, ys, zs] = [0, 1, 2].map(|a| spec.axis(a));
    let mask = rc.inside_lattice(&xs, &ys, &zs);
    OccupancyGrid { spec, mask, probs: None }
}

/// Field probabilities on a grid, thresholded at 0.5 for the mask.
pub fn field_grid<F: OccupancyField<f64> + ?Sized>(field: &F, cond: &Skeleton<f64>, spec: GridSpec) -> OccupancyGrid {
    let probs = field.probabilities(cond, &spec.points());
    OccupancyGrid::from_probs(spec, probs).expect("one probability per grid point")
}

/// Union of the two boxes, padded by [`GRID_PADDING`].
pub fn pair_bbox(a: &Aabb, b: &Aabb) -> Aabb {
    a.union(b).padded(GRID_PADDING)
}

/// Grid points inside both meshes, on the padded union box of the pair.
pub fn pair_intersection_count(mr: &HandMesh<f64>, ml: &HandMesh<f64>, n: usize) -> Result<usize> {
    let rr = RayCaster::new(mr)?;
    let rl = RayCaster::new(ml)?;
    let spec = GridSpec::new(pair_bbox(&rr.aabb(), &rl.aabb()), n)?;
    Ok(caster_pair_count(&rr, &rl, spec))
}

/// [`pair_intersection_count`] with prebuilt casters. Only the overlap of
/// the two mesh boxes is cast against.
pub fn caster_pair_count(rr: &RayCaster, rl: &RayCaster, spec: GridSpec) -> usize {
    let (a, b) = (rr.aabb(), rl.aabb());
    if !a.overlaps(&b) {
        return 0;
    }
    let lo = a.min.max(b.min);
    let hi = a.max.min(b.max);
    let axes = [0, 1, 2].map(|k| {
        let ax = spec.axis(k);
        ax.into_iter().filter(|&x| x >= lo[k] && x <= hi[k]).collect::<Vec<_>>()
    });
    if axes.iter().any(Vec::is_empty) {
        return 0;
    }
    let ir = rr.inside_lattice(&axes[0], &axes[1], &axes[2]);
    let il = rl.inside_lattice(&axes[0], &axes[1], &axes[2]);
    ir.iter().zip(&il).filter(|(x, y)| **x && **y).count()
}

/// Grid points where both fields exceed 0.5, for hands conditioned on `sr`
/// and `sl`.
pub fn field_pair_count<F: OccupancyField<f64> + ?Sized>(
    field: &F,
    sr: &Skeleton<f64>,
    sl: &Skeleton<f64>,
    spec: GridSpec,
) -> usize {
    let mut pts = spec.points();
    if let (Some(a), Some(b)) = (field.support(sr), field.support(sl)) {
        pts.retain(|&p| a.contains(p) && b.contains(p));
    }
    if pts.is_empty() {
        return 0;
    }
    let pr = field.probabilities(sr, &pts);
    let pl = field.probabilities(sl, &pts);
    pr.iter().zip(&pl).filter(|(a, b)| **a > 0.5 && **b > 0.5).count()
}

/// Per-edge radii matching a reference mask: each grid point inside the
/// mesh is assigned to its nearest bone, and `r_e` is set so that bone `e`'s
/// capsule covers as many points of its cell as the mesh does. A few
/// sweeps of coordinate search on IoU follow.
pub fn calibrate_radii(reference: &OccupancyGrid, s: &Skeleton<f64>, beta: f64) -> Result<CapsuleField> {
    let pts = reference.spec.points();
    let mut cell_d: Vec<Vec<f64>> = vec![Vec::new(); NUM_EDGES];
    let mut inside_n = [0usize; NUM_EDGES];
    for (i, &p) in pts.iter().enumerate() {
        let (mut best, mut be) = (f64::INFINITY, 0);
        for e in 0..NUM_EDGES {
            let (a, b) = s.bone(e);
            let ab = b - a;
            let t = ((p - a).dot(ab) / ab.norm_sq()).clamp(0.0, 1.0);
            let d = (p - (a + ab * t)).norm();
            if d < best {
                best = d;
                be = e;
            }
        }
        cell_d[be].push(best);
        inside_n[be] += usize::from(reference.mask[i]);
    }
    let mut radii = [1.0; NUM_EDGES];
    for e in 0..NUM_EDGES {
        let d = &mut cell_d[e];
        d.sort_by(f64::total_cmp);
        let k = inside_n[e];
        radii[e] = if k == 0 { 1.0 } else { 0.5 * (d[k - 1] + d.get(k).copied().unwrap_or(d[k - 1])) }.max(1.0);
    }
    let mut field = CapsuleField::new(radii, beta)?;
    let score = |f: &CapsuleField| iou(&field_grid(f, s, reference.spec), reference).unwrap_or(0.0);
    let mut best = score(&field);
    for step in [1.0, 0.5, 0.25, 0.1] {
        for e in 0..NUM_EDGES {
            for dir in [1.0, -1.0] {
                let mut trial = field.clone();
                trial.radii[e] = (trial.radii[e] + dir * step).max(0.5);
                let sc = score(&trial);
                if sc > best {
                    best = sc;
                    field = trial;
                }
            }
        }
    }
    Ok(field)
}
