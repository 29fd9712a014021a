//! Parameter layout, forward and backward passes.
//!
//! Encoder, per joint: `[c_i, onehot_i] → E → (residual E) → max-pool → F`.
//! Decoder, per point: `[q, q − c_0, …, q − c_20, d_0, …, d_19] → H` with
//! `d_e` the distance from `q` to bone `e`, then `blocks`
//! residual layers `h += silu((W h + b) ⊙ (1 + γ) + β)` with `(γ, β)` an
//! affine function of the feature, then a linear logit.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, LinalgScalar};
use num_traits::{Float, FromPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{edge, NUM_EDGES, NUM_JOINTS};

pub trait Real: LinalgScalar + ndarray::ScalarOperand + Float + FromPrimitive + Send + Sync + std::fmt::Debug + 'static {}
impl Real for f32 {}
impl Real for f64 {}

pub(crate) const JOINT_IN: usize = 3 + NUM_JOINTS;
pub(crate) const POINT_IN: usize = 3 + 3 * NUM_JOINTS + NUM_EDGES;

/// Layer widths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub enc_hidden: usize,
    pub feature: usize,
    pub hidden: usize,
    pub blocks: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self { enc_hidden: 64, feature: 64, hidden: 128, blocks: 3 }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Lin {
    pub w: usize,
    pub b: usize,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub enc_in: Lin,
    pub enc_r1: Lin,
    pub enc_r2: Lin,
    pub enc_out: Lin,
    pub dec_in: Lin,
    /// (block weight, FiLM generator) per block.
    pub blocks: Vec<(Lin, Lin)>,
    pub out: Lin,
    pub total: usize,
}

impl Layout {
    fn new(d: &Dims) -> Self {
        let mut at = 0;
        let mut lin = |rows, cols| {
            let l = Lin { w: at, b: at + rows * cols, rows, cols };
            at += rows * cols + rows;
            l
        };
        let enc_in = lin(d.enc_hidden, JOINT_IN);
        let enc_r1 = lin(d.enc_hidden, d.enc_hidden);
        let enc_r2 = lin(d.enc_hidden, d.enc_hidden);
        let enc_out = lin(d.feature, d.enc_hidden);
        let dec_in = lin(d.hidden, POINT_IN);
        let blocks = (0..d.blocks).map(|_| (lin(d.hidden, d.hidden), lin(2 * d.hidden, d.feature))).collect();
        let out = lin(1, d.hidden);
        Self { enc_in, enc_r1, enc_r2, enc_out, dec_in, blocks, out, total: at }
    }
}

impl Dims {
    pub fn validate(&self) -> Result<()> {
        if self.enc_hidden == 0 || self.feature == 0 || self.hidden == 0 {
            return Err(Error::InvalidArgument(format!("layer widths must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        Layout::new(self).total
    }
}

/// Flat weights; the layout follows from `dims`.
#[derive(Clone, Debug, PartialEq)]
pub struct OccNetParams<F = f32> {
    pub dims: Dims,
    pub data: Vec<F>,
}

#[inline]
pub(crate) fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[inline]
fn silu<F: Real>(x: F) -> F {
    x * sigmoid(x)
}

#[inline]
fn silu_grad<F: Real>(x: F) -> F {
    let s = sigmoid(x);
    s * (F::one() + x * (F::one() - s))
}

/// `y ← y + x · Wᵀ + b` for a row batch `x`.
fn affine<F: Real>(x: ArrayView2<F>, w: ArrayView2<F>, b: ArrayView1<F>) -> Array2<F> {
    let mut y = Array2::zeros((x.nrows(), w.nrows()));
    let b = b.as_slice().expect("contiguous bias");
    for row in y.as_slice_mut().unwrap().chunks_exact_mut(b.len()) {
        row.copy_from_slice(b);
    }
    general_mat_mul(F::one(), &x, &w.t(), F::one(), &mut y);
    y
}

/// Closest-point parameter of `q` on segment `a b`.
fn seg_t<F: Real>(q: &[F; 3], a: &[F; 3], b: &[F; 3]) -> F {
    let mut num = F::zero();
    let mut den = F::zero();
    for k in 0..3 {
        let ab = b[k] - a[k];
        num = num + (q[k] - a[k]) * ab;
        den = den + ab * ab;
    }
    if den > F::zero() {
        (num / den).max(F::zero()).min(F::one())
    } else {
        F::zero()
    }
}

/// Decoder input row for canonical point `q`.
pub(crate) fn point_features<F: Real>(q: &[F; 3], c: &[[F; 3]; NUM_JOINTS], row: &mut [F]) {
    row[..3].copy_from_slice(q);
    for (i, cj) in c.iter().enumerate() {
        for k in 0..3 {
            row[3 + 3 * i + k] = q[k] - cj[k];
        }
    }
    for e in 0..NUM_EDGES {
        let (i, j) = edge(e);
        let t = seg_t(q, &c[i], &c[j]);
        let mut d2 = F::zero();
        for k in 0..3 {
            let v = q[k] - (c[i][k] + (c[j][k] - c[i][k]) * t);
            d2 = d2 + v * v;
        }
        row[3 + 3 * NUM_JOINTS + e] = d2.sqrt();
    }
}

/// Pulls an input-row gradient back to `q` and the joints.
pub(crate) fn point_features_backward<F: Real>(
    q: &[F; 3],
    c: &[[F; 3]; NUM_JOINTS],
    dz: &[F],
    dq: &mut [F; 3],
    dc: &mut [[F; 3]; NUM_JOINTS],
) {
    for k in 0..3 {
        dq[k] = dq[k] + dz[k];
    }
    for i in 0..NUM_JOINTS {
        for k in 0..3 {
            let g = dz[3 + 3 * i + k];
            dq[k] = dq[k] + g;
            dc[i][k] = dc[i][k] - g;
        }
    }
    for e in 0..NUM_EDGES {
        let g = dz[3 + 3 * NUM_JOINTS + e];
        if g == F::zero() {
            continue;
        }
        let (i, j) = edge(e);
        let t = seg_t(q, &c[i], &c[j]);
        let v: [F; 3] = std::array::from_fn(|k| q[k] - (c[i][k] + (c[j][k] - c[i][k]) * t));
        let d = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if d == F::zero() {
            continue;
        }
        // Moving t along the segment changes the distance only to second
        // order, so t can be held fixed.
        for k in 0..3 {
            let u = g * v[k] / d;
            dq[k] = dq[k] + u;
            dc[i][k] = dc[i][k] - u * (F::one() - t);
            dc[j][k] = dc[j][k] - u * t;
        }
    }
}

pub(crate) struct EncCache<F> {
    x: Array2<F>,
    a1: Array2<F>,
    h1: Array2<F>,
    r1: Array2<F>,
    ra: Array2<F>,
    argmax: Vec<usize>,
    m: Array1<F>,
    pub f: Array1<F>,
}

pub(crate) struct DecCache<F> {
    z: Array2<F>,
    /// Block inputs; the last entry feeds the output layer.
    h: Vec<Array2<F>>,
    a: Vec<Array2<F>>,
    ap: Vec<Array2<F>>,
    /// `σ(ap)`.
    sg: Vec<Array2<F>>,
    film: Vec<Array1<F>>,
    pub logits: Array1<F>,
}

impl<F: Real> OccNetParams<F> {
    pub(crate) fn layout(&self) -> Layout {
        Layout::new(&self.dims)
    }

    pub fn zeros(dims: Dims) -> Self {
        Self { dims, data: vec![F::zero(); dims.param_count()] }
    }

    /// Uniform fan-in initialization; the output layer starts at zero so the
    /// untrained field is 0.5 everywhere.
    pub fn init<R: Rng + ?Sized>(dims: Dims, rng: &mut R) -> Self {
        let mut net = Self::zeros(dims);
        let lay = net.layout();
        let mut fill = |l: Lin, gain: f64| {
            let bound = gain / (l.cols as f64).sqrt();
            for v in &mut net.data[l.w..l.w + l.rows * l.cols] {
                *v = F::from_f64(rng.random_range(-bound..bound)).unwrap();
            }
        };
        for l in [lay.enc_in, lay.enc_r1, lay.enc_r2, lay.enc_out, lay.dec_in] {
            fill(l, 1.0);
        }
        for (w, g) in &lay.blocks {
            fill(*w, 1.0);
            fill(*g, 0.1);
        }
        net
    }

    pub fn cast<G: Real>(&self) -> OccNetParams<G> {
        OccNetParams { dims: self.dims, data: self.data.iter().map(|v| G::from_f64(v.to_f64().unwrap()).unwrap()).collect() }
    }

    pub(crate) fn w(&self, l: Lin) -> ArrayView2<'_, F> {
        ArrayView2::from_shape((l.rows, l.cols), &self.data[l.w..l.b]).unwrap()
    }

    pub(crate) fn b(&self, l: Lin) -> ArrayView1<'_, F> {
        ArrayView1::from(&self.data[l.b..l.b + l.rows])
    }

    /// Encoder pass over canonical joints.
    pub(crate) fn encode(&self, lay: &Layout, joints: &[[F; 3]; NUM_JOINTS]) -> EncCache<F> {
        let mut x = Array2::zeros((NUM_JOINTS, JOINT_IN));
        for (i, c) in joints.iter().enumerate() {
            x[[i, 0]] = c[0];
            x[[i, 1]] = c[1];
            x[[i, 2]] = c[2];
            x[[i, 3 + i]] = F::one();
        }
        let a1 = affine(x.view(), self.w(lay.enc_in), self.b(lay.enc_in));
        let h1 = a1.mapv(silu);
        let ra = affine(h1.view(), self.w(lay.enc_r1), self.b(lay.enc_r1));
        let r1 = ra.mapv(silu);
        let h2 = &h1 + &affine(r1.view(), self.w(lay.enc_r2), self.b(lay.enc_r2));
        let e = self.dims.enc_hidden;
        let mut argmax = vec![0; e];
        let mut m = Array1::zeros(e);
        for j in 0..e {
            let col = h2.column(j);
            let mut best = 0;
            for i in 1..NUM_JOINTS {
                if col[i] > col[best] {
                    best = i;
                }
            }
            argmax[j] = best;
            m[j] = col[best];
        }
        let f = self.w(lay.enc_out).dot(&m) + self.b(lay.enc_out);
        EncCache { x, a1, h1, r1, ra, argmax, m, f }
    }

    /// `(γ, β)` per block for feature `f`.
    pub(crate) fn film(&self, lay: &Layout, f: ArrayView1<F>) -> Vec<Array1<F>> {
        lay.blocks.iter().map(|(_, g)| self.w(*g).dot(&f) + self.b(*g)).collect()
    }

    /// Decoder pass for canonical points `q` given joints `c` and FiLM terms.
    pub(crate) fn decode(&self, lay: &Layout, q: &[[F; 3]], c: &[[F; 3]; NUM_JOINTS], film: &[Array1<F>]) -> DecCache<F> {
        let n = q.len();
        let mut z = Array2::zeros((n, POINT_IN));
        for (p, row) in q.iter().zip(z.as_slice_mut().unwrap().chunks_exact_mut(POINT_IN)) {
            point_features(p, c, row);
        }
        let hd = self.dims.hidden;
        let mut h = vec![affine(z.view(), self.w(lay.dec_in), self.b(lay.dec_in))];
        let mut a = Vec::with_capacity(lay.blocks.len());
        let mut ap = Vec::with_capacity(lay.blocks.len());
        let mut sg = Vec::with_capacity(lay.blocks.len());
        for ((wl, _), gb) in lay.blocks.iter().zip(film) {
            let ak = affine(h.last().unwrap().view(), self.w(*wl), self.b(*wl));
            let gb = gb.as_slice().unwrap();
            let (gamma, beta) = gb.split_at(hd);
            let mut apk = Array2::zeros(ak.dim());
            let mut sk = Array2::zeros(ak.dim());
            let mut next = h.last().unwrap().clone();
            let rows = ak.as_slice().unwrap().chunks_exact(hd);
            let out = apk.as_slice_mut().unwrap().chunks_exact_mut(hd);
            let sig = sk.as_slice_mut().unwrap().chunks_exact_mut(hd);
            let nx = next.as_slice_mut().unwrap().chunks_exact_mut(hd);
            for (((a_r, ap_r), s_r), n_r) in rows.zip(out).zip(sig).zip(nx) {
                for j in 0..hd {
                    let x = a_r[j] * (F::one() + gamma[j]) + beta[j];
                    let sv = sigmoid(x);
                    ap_r[j] = x;
                    s_r[j] = sv;
                    n_r[j] = n_r[j] + x * sv;
                }
            }
            a.push(ak);
            ap.push(apk);
            sg.push(sk);
            h.push(next);
        }
        let logits = h.last().unwrap().dot(&self.w(lay.out).row(0)) + self.data[lay.out.b];
        DecCache { z, h, a, ap, sg, film: film.to_vec(), logits }
    }

    /// Backprop of `Σ_r g_r · logit_r`. Parameter gradients accumulate into
    /// `grad` (skipped when `None`); returns `(∂/∂z rows, ∂/∂film)`.
    pub(crate) fn decode_backward(
        &self,
        lay: &Layout,
        cache: &DecCache<F>,
        g: ArrayView1<F>,
        mut grad: Option<&mut [F]>,
        want_input: bool,
    ) -> (Option<Array2<F>>, Vec<Array1<F>>) {
        let hd = self.dims.hidden;
        let last = cache.h.last().unwrap();
        if let Some(gr) = grad.as_deref_mut() {
            let mut dw = vec_mut(gr, lay.out.w, hd);
            dw.scaled_add(F::one(), &last.t().dot(&g));
            gr[lay.out.b] = gr[lay.out.b] + g.sum();
        }
        let wout = &self.data[lay.out.w..lay.out.b];
        let mut dh = Array2::zeros((g.len(), hd));
        for (row, &gr) in dh.as_slice_mut().unwrap().chunks_exact_mut(hd).zip(g.iter()) {
            for (d, &w) in row.iter_mut().zip(wout) {
                *d = gr * w;
            }
        }
        let mut dfilm = vec![Array1::zeros(2 * hd); lay.blocks.len()];
        for k in (0..lay.blocks.len()).rev() {
            let (wl, _) = lay.blocks[k];
            let gamma = &cache.film[k].as_slice().unwrap()[..hd];
            let mut da = Array2::zeros(dh.dim());
            let mut dgamma = vec![F::zero(); hd];
            let mut dbeta = vec![F::zero(); hd];
            let it = dh
                .as_slice()
                .unwrap()
                .chunks_exact(hd)
                .zip(cache.ap[k].as_slice().unwrap().chunks_exact(hd))
                .zip(cache.sg[k].as_slice().unwrap().chunks_exact(hd))
                .zip(cache.a[k].as_slice().unwrap().chunks_exact(hd))
                .zip(da.as_slice_mut().unwrap().chunks_exact_mut(hd));
            for ((((d_r, x_r), s_r), a_r), o_r) in it {
                for j in 0..hd {
                    let sv = s_r[j];
                    let dap = d_r[j] * sv * (F::one() + x_r[j] * (F::one() - sv));
                    dgamma[j] = dgamma[j] + dap * a_r[j];
                    dbeta[j] = dbeta[j] + dap;
                    o_r[j] = dap * (F::one() + gamma[j]);
                }
            }
            if let Some(gr) = grad.as_deref_mut() {
                add_outer(gr, wl, da.view(), cache.h[k].view());
                add_bias(gr, wl, da.view());
            }
            dfilm[k].slice_mut(s![..hd]).assign(&ArrayView1::from(&dgamma));
            dfilm[k].slice_mut(s![hd..]).assign(&ArrayView1::from(&dbeta));
            general_mat_mul(F::one(), &da, &self.w(wl), F::one(), &mut dh);
        }
        if let Some(gr) = grad.as_deref_mut() {
            add_outer(gr, lay.dec_in, dh.view(), cache.z.view());
            add_bias(gr, lay.dec_in, dh.view());
        }
        let dz = want_input.then(|| dh.dot(&self.w(lay.dec_in)));
        (dz, dfilm)
    }

    /// Backprop from FiLM adjoints to the feature; returns `∂/∂f`.
    pub(crate) fn film_backward(&self, lay: &Layout, f: ArrayView1<F>, dfilm: &[Array1<F>], mut grad: Option<&mut [F]>) -> Array1<F> {
        let mut df = Array1::zeros(self.dims.feature);
        for ((_, gl), d) in lay.blocks.iter().zip(dfilm) {
            if let Some(gr) = grad.as_deref_mut() {
                let d2 = d.view().insert_axis(Axis(0));
                let f2 = f.insert_axis(Axis(0));
                add_outer(gr, *gl, d2, f2);
                add_bias(gr, *gl, d2);
            }
            df.scaled_add(F::one(), &self.w(*gl).t().dot(d));
        }
        df
    }

    /// Backprop from `∂/∂f` through the encoder; returns `∂/∂c_i`.
    pub(crate) fn encode_backward(&self, lay: &Layout, cache: &EncCache<F>, df: ArrayView1<F>, mut grad: Option<&mut [F]>) -> Array2<F> {
        if let Some(gr) = grad.as_deref_mut() {
            let d2 = df.insert_axis(Axis(0));
            add_outer(gr, lay.enc_out, d2, cache.m.view().insert_axis(Axis(0)));
            add_bias(gr, lay.enc_out, d2);
        }
        let dm = self.w(lay.enc_out).t().dot(&df);
        let mut dh2 = Array2::zeros((NUM_JOINTS, self.dims.enc_hidden));
        for (j, &i) in cache.argmax.iter().enumerate() {
            dh2[[i, j]] = dm[j];
        }
        let dra = dh2.dot(&self.w(lay.enc_r2)) * cache.ra.mapv(silu_grad);
        let mut dh1 = dh2.clone();
        general_mat_mul(F::one(), &dra, &self.w(lay.enc_r1), F::one(), &mut dh1);
        let da1 = dh1 * cache.a1.mapv(silu_grad);
        if let Some(gr) = grad.as_deref_mut() {
            add_outer(gr, lay.enc_r2, dh2.view(), cache.r1.view());
            add_bias(gr, lay.enc_r2, dh2.view());
            add_outer(gr, lay.enc_r1, dra.view(), cache.h1.view());
            add_bias(gr, lay.enc_r1, dra.view());
            add_outer(gr, lay.enc_in, da1.view(), cache.x.view());
            add_bias(gr, lay.enc_in, da1.view());
        }
        da1.dot(&self.w(lay.enc_in)).slice(s![.., ..3]).to_owned()
    }
}

fn vec_mut<F>(g: &mut [F], at: usize, len: usize) -> ArrayViewMut1<'_, F> {
    ArrayViewMut1::from(&mut g[at..at + len])
}

/// `grad[W] += dyᵀ x`.
fn add_outer<F: Real>(grad: &mut [F], l: Lin, dy: ArrayView2<F>, x: ArrayView2<F>) {
    let mut w = ArrayViewMut2::from_shape((l.rows, l.cols), &mut grad[l.w..l.b]).unwrap();
    general_mat_mul(F::one(), &dy.t(), &x, F::one(), &mut w);
}

fn add_bias<F: Real>(grad: &mut [F], l: Lin, dy: ArrayView2<F>) {
    let mut b = vec_mut(grad, l.b, l.rows);
    b.scaled_add(F::one(), &dy.sum_axis(Axis(0)));
}
