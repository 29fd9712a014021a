//! Learned occupancy field: an encoder over the conditioning joints and a
//! feature-modulated decoder over query points, trained on ray-cast labels.

mod canon;
mod net;
mod train;

use std::path::Path;

use ndarray::{Array1, Axis};

pub use net::{Dims, OccNetParams, Real};
pub use train::{
    sample_training_set, split_poses, train_occnet, validation_iou, EpochStats, LabeledSampleSet, PoseSamples,
    TrainConfig, TrainHistory,
};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::kinematics::{Skeleton, NUM_JOINTS};
use crate::occupancy::{FieldGrad, OccupancyField};
use canon::{canon_jacobian, Canon, CanonAdjoint};
use net::{point_features_backward, sigmoid, Layout};

const MAGIC: &[u8; 4] = b"OCN1";
/// Rows per decoder batch during evaluation.
const CHUNK: usize = 4096;

impl OccNetParams<f32> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.dims;
        let mut out = Vec::with_capacity(24 + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        for v in [d.enc_hidden, d.feature, d.hidden, d.blocks, self.data.len()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.len() < 24 || &b[..4] != MAGIC {
            return Err(Error::Format("missing OCN1 header".into()));
        }
        let u = |i: usize| u32::from_le_bytes(b[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let dims = Dims { enc_hidden: u(0), feature: u(1), hidden: u(2), blocks: u(3) };
        dims.validate()?;
        let count = u(4);
        if count != dims.param_count() {
            return Err(Error::Format(format!("{count} weights, {dims:?} needs {}", dims.param_count())));
        }
        if b.len() != 24 + 4 * count {
            return Err(Error::Format(format!("expected {} bytes, found {}", 24 + 4 * count, b.len())));
        }
        let data: Vec<f32> = b[24..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!("weight {i} is not finite")));
        }
        Ok(Self { dims, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Conditioning computed once per skeleton.
#[derive(Clone, Debug)]
pub struct Encoding {
    canon: Canon<f64>,
    joints: [[f64; 3]; NUM_JOINTS],
    pub feature: Vec<f64>,
    film: Vec<Array1<f64>>,
}

/// Evaluation-ready network in double precision.
#[derive(Clone, Debug)]
pub struct OccNet {
    params: OccNetParams<f64>,
    layout: Layout,
}

impl OccNet {
    pub fn new(p: &OccNetParams<f32>) -> Result<Self> {
        p.dims.validate()?;
        if p.data.len() != p.dims.param_count() {
            return Err(Error::InvalidArgument("weight count does not match dims".into()));
        }
        if p.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite weight".into()));
        }
        Ok(Self::from_f64(p.cast()))
    }

    pub fn from_f64(params: OccNetParams<f64>) -> Self {
        let layout = params.layout();
        Self { params, layout }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(&OccNetParams::load(path)?)
    }

    pub fn params(&self) -> &OccNetParams<f64> {
        &self.params
    }

    pub fn encode_skeleton(&self, s: &Skeleton<f64>) -> Result<Encoding> {
        let canon = Canon::new(s)?;
        let joints = canon.joints.map(|p| p.to_array());
        let enc = self.params.encode(&self.layout, &joints);
        let film = self.params.film(&self.layout, enc.f.view());
        Ok(Encoding { canon, joints, feature: enc.f.to_vec(), film })
    }

    /// Probabilities of world-space points under an encoding.
    pub fn eval_encoded(&self, e: &Encoding, pts: &[Vec3<f64>]) -> Vec<f64> {
        let mut out = Vec::with_capacity(pts.len());
        for chunk in pts.chunks(CHUNK) {
            let q: Vec<[f64; 3]> = chunk.iter().map(|&p| e.canon.point(p).to_array()).collect();
            let dec = self.params.decode(&self.layout, &q, &e.joints, &e.film);
            out.extend(dec.logits.iter().map(|&l| sigmoid(l)));
        }
        out
    }
}

impl OccupancyField<f64> for OccNet {
    /// NaN for skeletons without a palm frame.
    fn probabilities(&self, cond: &Skeleton<f64>, pts: &[Vec3<f64>]) -> Vec<f64> {
        match self.encode_skeleton(cond) {
            Ok(e) => self.eval_encoded(&e, pts),
            Err(_) => vec![f64::NAN; pts.len()],
        }
    }

    fn backward(&self, cond: &Skeleton<f64>, pts: &[Vec3<f64>], weight: &dyn Fn(usize, f64) -> f64) -> FieldGrad<f64> {
        let nan = Vec3::new(f64::NAN, f64::NAN, f64::NAN);
        let (Ok(dual), Ok(canon)) = (canon_jacobian(cond), Canon::new(cond)) else {
            return FieldGrad {
                probs: vec![f64::NAN; pts.len()],
                point_grads: vec![nan; pts.len()],
                cond_grad: [nan; NUM_JOINTS],
            };
        };
        let lay = &self.layout;
        let net = &self.params;
        let joints = canon.joints.map(|p| p.to_array());
        let enc = net.encode(lay, &joints);
        let film = net.film(lay, enc.f.view());
        let mut adj = CanonAdjoint::zero();
        let mut dc = [[0.0; 3]; NUM_JOINTS];
        let mut dfilm: Vec<Array1<f64>> = film.iter().map(|f| Array1::zeros(f.len())).collect();
        let mut probs = Vec::with_capacity(pts.len());
        let mut point_grads = Vec::with_capacity(pts.len());
        for (c, chunk) in pts.chunks(CHUNK).enumerate() {
            let d: Vec<Vec3<f64>> = chunk.iter().map(|&p| canon.offset(p)).collect();
            let q: Vec<[f64; 3]> = chunk.iter().map(|&p| canon.point(p).to_array()).collect();
            let dec = net.decode(lay, &q, &joints, &film);
            let mut g = Array1::zeros(chunk.len());
            for (r, &l) in dec.logits.iter().enumerate() {
                let p = sigmoid(l);
                probs.push(p);
                g[r] = weight(c * CHUNK + r, p) * p * (1.0 - p);
            }
            let (dz, df) = net.decode_backward(lay, &dec, g.view(), None, true);
            for (acc, v) in dfilm.iter_mut().zip(&df) {
                *acc += v;
            }
            let dz = dz.expect("input gradient requested");
            for (r, row) in dz.axis_iter(Axis(0)).enumerate() {
                let mut dq = [0.0; 3];
                point_features_backward(&q[r], &joints, row.as_slice().unwrap(), &mut dq, &mut dc);
                let dq = Vec3::from(dq);
                point_grads.push(canon.point_grad(dq));
                adj.add_point(&canon, d[r], dq);
            }
        }
        let df = net.film_backward(lay, enc.f.view(), &dfilm, None);
        let de = net.encode_backward(lay, &enc, df.view(), None);
        for (i, aj) in adj.joints.iter_mut().enumerate() {
            *aj = Vec3::from(dc[i]) + Vec3::new(de[[i, 0]], de[[i, 1]], de[[i, 2]]);
        }
        FieldGrad { probs, point_grads, cond_grad: adj.to_joints(&dual) }
    }
}
