//! Sampling labelled points and fitting the network with Adam.

use std::time::Instant;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::canon::Canon;
use super::net::{sigmoid, Dims, OccNetParams};
use super::OccNet;
use crate::error::{Error, Result};
use crate::geom::{Mat3, Vec3};
use crate::kinematics::{forward_kinematics, random_unit, HandPose, Skeleton, NUM_JOINTS};
use crate::mesh::{generate, MeshVariant};
use crate::occupancy::{field_grid, iou, mesh_grid, GridSpec, OccupancyGrid, RayCaster, GRID_PADDING};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub samples_per_hand: usize,
    /// Augmentation rotations are drawn from ±this many degrees.
    pub rotation_deg: f64,
    /// Noise on near-surface samples, mm.
    pub point_noise_sigma: f64,
    pub epochs: usize,
    pub batch_poses: usize,
    pub batch_points: usize,
    pub lr: f64,
    /// Cosine schedule end point.
    pub lr_final: f64,
    pub seed: u64,
    /// Grid resolution of the per-epoch validation IoU.
    pub val_grid_n: usize,
    pub dims: Dims,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            samples_per_hand: 8192,
            rotation_deg: 180.0,
            point_noise_sigma: 4.0,
            epochs: 10,
            batch_poses: 4,
            batch_points: 512,
            lr: 2e-3,
            lr_final: 5e-5,
            seed: 0,
            val_grid_n: 24,
            dims: Dims::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.samples_per_hand == 0 {
            return bad("samples_per_hand must be at least 1");
        }
        if !(self.point_noise_sigma >= 0.0 && self.point_noise_sigma.is_finite()) {
            return bad("point_noise_sigma must be finite and >= 0");
        }
        if !(0.0..=180.0).contains(&self.rotation_deg) {
            return bad("rotation_deg must be in [0, 180]");
        }
        if self.epochs == 0 || self.batch_poses == 0 || self.batch_points == 0 {
            return bad("epochs and batch sizes must be positive");
        }
        if !(self.lr > 0.0 && self.lr_final >= 0.0 && self.lr.is_finite()) {
            return bad("learning rates must be positive");
        }
        if self.val_grid_n < 2 {
            return bad("val_grid_n must be at least 2");
        }
        self.dims.validate()
    }
}

/// Labelled samples for one pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSamples {
    pub pose_id: usize,
    /// The augmented (rotated) skeleton the labels refer to.
    pub skeleton: Skeleton<f64>,
    pub points: Vec<Vec3<f64>>,
    pub labels: Vec<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledSampleSet {
    pub poses: Vec<PoseSamples>,
}

/// Per pose: a random rotation about the wrist, then half the points uniform
/// in the padded mesh box and half at mesh vertices plus Gaussian noise,
/// labelled by ray casting against the Plain mesh.
pub fn sample_training_set(poses: &[HandPose<f64>], cfg: &TrainConfig, seed: u64) -> Result<LabeledSampleSet> {
    cfg.validate()?;
    let noise = Normal::new(0.0, cfg.point_noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut out = Vec::with_capacity(poses.len());
    for (i, pose) in poses.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let s = forward_kinematics(pose)?;
        let angle = rng.random_range(-1.0..=1.0) * cfg.rotation_deg.to_radians();
        let r = Mat3::from_axis_angle(random_unit(&mut rng) * angle);
        let w = s.wrist();
        let s = s.transformed(&r, w - r.mul_vec(w));
        let mesh = generate(&s, MeshVariant::Plain)?;
        let rc = RayCaster::new(&mesh)?;
        let b = mesh.aabb().padded(GRID_PADDING);
        let n = cfg.samples_per_hand;
        let mut points = Vec::with_capacity(n);
        for _ in 0..n / 2 {
            points.push(Vec3::new(
                rng.random_range(b.min.x..=b.max.x),
                rng.random_range(b.min.y..=b.max.y),
                rng.random_range(b.min.z..=b.max.z),
            ));
        }
        while points.len() < n {
            let v = mesh.vertices[rng.random_range(0..mesh.vertices.len())];
            let d = Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
            points.push(v + d);
        }
        let labels = points.iter().map(|&p| rc.inside(p)).collect();
        out.push(PoseSamples { pose_id: i, skeleton: s, points, labels });
    }
    Ok(LabeledSampleSet { poses: out })
}

/// Last `round(n · val_fraction)` poses (at least one) are held out.
pub fn split_poses<T: Clone>(poses: &[T], val_fraction: f64) -> Result<(Vec<T>, Vec<T>)> {
    if poses.len() < 2 {
        return Err(Error::InvalidArgument("need >= 2 poses for validation split".into()));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::InvalidArgument("validation fraction must be in [0, 1)".into()));
    }
    let n_val = ((poses.len() as f64 * val_fraction).round() as usize).clamp(1, poses.len() - 1);
    let cut = poses.len() - n_val;
    Ok((poses[..cut].to_vec(), poses[cut..].to_vec()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean binary cross-entropy per sample.
    pub train_loss: f64,
    pub val_iou: f64,
    pub seconds: f64,
}

/// Epoch 0 is the untrained network.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_iou,seconds\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_loss, e.val_iou, e.seconds));
        }
        s
    }

    pub fn best_iou(&self) -> f64 {
        self.epochs.get(self.best_epoch).map_or(0.0, |e| e.val_iou)
    }
}

struct Prepared {
    joints: [[f32; 3]; NUM_JOINTS],
    q: Vec<[f32; 3]>,
    y: Vec<f32>,
}

fn to_f32(v: Vec3<f64>) -> [f32; 3] {
    [v.x as f32, v.y as f32, v.z as f32]
}

fn prepare(p: &PoseSamples) -> Result<Prepared> {
    let c = Canon::new(&p.skeleton)?;
    Ok(Prepared {
        joints: c.joints.map(to_f32),
        q: p.points.iter().map(|&x| to_f32(c.point(x))).collect(),
        y: p.labels.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
    })
}

struct ValRef {
    skeleton: Skeleton<f64>,
    mask: OccupancyGrid,
}

fn val_refs(skeletons: &[Skeleton<f64>], n: usize) -> Result<Vec<ValRef>> {
    skeletons
        .iter()
        .map(|s| {
            let m = generate(s, MeshVariant::Plain)?;
            let spec = GridSpec::new(m.aabb().padded(GRID_PADDING), n)?;
            Ok(ValRef { skeleton: s.clone(), mask: mesh_grid(&m, spec)? })
        })
        .collect()
}

fn mean_iou(net: &OccNet, refs: &[ValRef]) -> Result<f64> {
    let mut total = 0.0;
    for r in refs {
        total += iou(&field_grid(net, &r.skeleton, r.mask.spec), &r.mask)?;
    }
    Ok(total / refs.len() as f64)
}

/// Mean IoU between the network's grid masks and the Plain-mesh ray-cast
/// masks, each on the mesh box padded by the default grid padding.
pub fn validation_iou(net: &OccNet, skeletons: &[Skeleton<f64>], n: usize) -> Result<f64> {
    if skeletons.is_empty() {
        return Err(Error::InvalidArgument("no validation skeletons".into()));
    }
    mean_iou(net, &val_refs(skeletons, n)?)
}

fn bce(logit: f32, y: f32) -> f32 {
    logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p()
}

struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Adam {
    fn step(&mut self, w: &mut [f32], g: &[f32], lr: f32) {
        let (b1, b2, eps) = (0.9f32, 0.999f32, 1e-8f32);
        self.t += 1;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for i in 0..w.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
            w[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
        }
    }
}

/// Mini-batch Adam on the mean cross-entropy. Validation IoU is measured
/// after every epoch and the best checkpoint is returned.
pub fn train_occnet(
    data: &LabeledSampleSet,
    val: &[Skeleton<f64>],
    cfg: &TrainConfig,
) -> Result<(OccNetParams<f32>, TrainHistory)> {
    cfg.validate()?;
    if data.poses.is_empty() || data.poses.iter().all(|p| p.points.is_empty()) {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if val.is_empty() {
        return Err(Error::InvalidArgument("no validation skeletons".into()));
    }
    let prepared: Vec<Prepared> = data.poses.iter().map(prepare).collect::<Result<_>>()?;
    let refs = val_refs(val, cfg.val_grid_n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = OccNetParams::<f32>::init(cfg.dims, &mut rng);
    let lay = params.layout();
    let mut adam = Adam { m: vec![0.0; params.data.len()], v: vec![0.0; params.data.len()], t: 0 };
    let mut grad = vec![0.0f32; params.data.len()];

    let bp = cfg.batch_points;
    let start = Instant::now();
    let mut initial = 0.0;
    let mut count = 0usize;
    for p in &prepared {
        let k = p.q.len().min(bp);
        let enc = params.encode(&lay, &p.joints);
        let film = params.film(&lay, enc.f.view());
        let dec = params.decode(&lay, &p.q[..k], &p.joints, &film);
        initial += dec.logits.iter().zip(&p.y).map(|(&l, &y)| bce(l, y) as f64).sum::<f64>();
        count += k;
    }
    let mut history = TrainHistory::default();
    history.epochs.push(EpochStats {
        epoch: 0,
        train_loss: initial / count as f64,
        val_iou: mean_iou(&OccNet::from_f64(params.cast()), &refs)?,
        seconds: start.elapsed().as_secs_f64(),
    });
    let mut best = params.clone();

    let items: Vec<(usize, usize)> = prepared
        .iter()
        .enumerate()
        .flat_map(|(i, p)| (0..p.q.len().div_ceil(bp)).map(move |c| (i, c)))
        .collect();
    let steps_per_epoch = items.len().div_ceil(cfg.batch_poses);
    let total_steps = (cfg.epochs * steps_per_epoch) as f64;
    let mut order = items.clone();
    let mut perms: Vec<Vec<usize>> = prepared.iter().map(|p| (0..p.q.len()).collect()).collect();
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        for p in perms.iter_mut() {
            p.shuffle(&mut rng);
        }
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        let mut epoch_n = 0usize;
        for (b, batch) in order.chunks(cfg.batch_poses).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let idx: Vec<&[usize]> = batch
                .iter()
                .map(|&(i, c)| {
                    let perm = &perms[i];
                    &perm[c * bp..((c + 1) * bp).min(perm.len())]
                })
                .collect();
            let n_total: usize = idx.iter().map(|s| s.len()).sum();
            let scale = 1.0 / n_total as f32;
            let mut batch_loss = 0.0f64;
            for (&(i, _), ids) in batch.iter().zip(&idx) {
                let p = &prepared[i];
                let q: Vec<[f32; 3]> = ids.iter().map(|&k| p.q[k]).collect();
                let enc = params.encode(&lay, &p.joints);
                let film = params.film(&lay, enc.f.view());
                let dec = params.decode(&lay, &q, &p.joints, &film);
                let mut g = Array1::zeros(ids.len());
                for (r, &k) in ids.iter().enumerate() {
                    let l = dec.logits[r];
                    batch_loss += bce(l, p.y[k]) as f64;
                    g[r] = (sigmoid(l) - p.y[k]) * scale;
                }
                let (_, dfilm) = params.decode_backward(&lay, &dec, g.view(), Some(&mut grad), false);
                let df = params.film_backward(&lay, enc.f.view(), &dfilm, Some(&mut grad));
                params.encode_backward(&lay, &enc, df.view(), Some(&mut grad));
            }
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NanLoss { epoch, batch: b });
            }
            let frac = step as f64 / total_steps;
            let lr = cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1.0 + (std::f64::consts::PI * frac).cos());
            adam.step(&mut params.data, &grad, lr as f32);
            step += 1;
            epoch_loss += batch_loss;
            epoch_n += n_total;
        }
        let val_iou = mean_iou(&OccNet::from_f64(params.cast()), &refs)?;
        history.epochs.push(EpochStats {
            epoch,
            train_loss: epoch_loss / epoch_n as f64,
            val_iou,
            seconds: start.elapsed().as_secs_f64(),
        });
        if val_iou > history.best_iou() {
            history.best_epoch = epoch;
            best = params.clone();
        }
    }
    Ok((best, history))
}
