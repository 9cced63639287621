//! Parameters and hand-written forward/backward passes.
//!
//! Encoder variant, per sequence of `T` feature rows `X` (T × d_in):
//!
//! ```text
//! H0 = X·W_in + b_in
//! A  = MultiHead(H0)·W_o + b_o          (no mask, no bias on Q/K/V)
//! H1 = LN1(H0 + A)
//! H2 = LN2(H1 + GELU(H1·W_1 + b_1)·W_2 + b_2)
//! z  = H2·w_head + b_head
//! ```
//!
//! The linear variant is `z = X·w + b`.
//!
//! Parameters live in one flat vector, laid out in the order above:
//! `w_in, b_in, w_q, w_k, w_v, w_o, b_o, ln1_gain, ln1_bias, w_1, b_1, w_2,
//! b_2, ln2_gain, ln2_bias, w_head, b_head`. Matrices are row-major with
//! shape (inputs × outputs).

use std::io::Write;
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::PredictorError;
use crate::report::write_atomic_bytes;

pub const DEFAULT_D_MODEL: usize = 64;
pub const DEFAULT_HEADS: usize = 4;
pub const DEFAULT_FFN: usize = 128;
const LN_EPS: f64 = 1e-5;

const CHECKPOINT_MAGIC: &[u8; 4] = b"MPRD";
const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_HEADER_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Encoder { d_model: usize, heads: usize, ffn: usize },
    /// Logistic regression on the raw features.
    Linear,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::Encoder {
            d_model: DEFAULT_D_MODEL,
            heads: DEFAULT_HEADS,
            ffn: DEFAULT_FFN,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    d_in: usize,
    d: usize,
    heads: usize,
    f: usize,
    w_in: usize,
    b_in: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    bo: usize,
    g1: usize,
    be1: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    g2: usize,
    be2: usize,
    w_head: usize,
    b_head: usize,
    total: usize,
}

impl Layout {
    fn new(d_in: usize, d: usize, heads: usize, f: usize) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let w_in = take(d_in * d);
        let b_in = take(d);
        let wq = take(d * d);
        let wk = take(d * d);
        let wv = take(d * d);
        let wo = take(d * d);
        let bo = take(d);
        let g1 = take(d);
        let be1 = take(d);
        let w1 = take(d * f);
        let b1 = take(f);
        let w2 = take(f * d);
        let b2 = take(d);
        let g2 = take(d);
        let be2 = take(d);
        let w_head = take(d);
        let b_head = take(1);
        Layout {
            d_in,
            d,
            heads,
            f,
            w_in,
            b_in,
            wq,
            wk,
            wv,
            wo,
            bo,
            g1,
            be1,
            w1,
            b1,
            w2,
            b2,
            g2,
            be2,
            w_head,
            b_head,
            total: at,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    d_in: usize,
    arch: Architecture,
    params: Vec<f64>,
}

pub fn param_count(d_in: usize, arch: Architecture) -> usize {
    match arch {
        Architecture::Linear => d_in + 1,
        Architecture::Encoder { d_model, heads, ffn } => Layout::new(d_in, d_model, heads, ffn).total,
    }
}

fn check_arch(d_in: usize, arch: Architecture) -> Result<(), PredictorError> {
    if d_in == 0 {
        return Err(PredictorError::InvalidArchitecture("d_in must be positive".into()));
    }
    if let Architecture::Encoder { d_model, heads, ffn } = arch {
        if d_model == 0 || heads == 0 || ffn == 0 || d_model % heads != 0 {
            return Err(PredictorError::InvalidArchitecture(format!(
                "d_model {d_model} must be a positive multiple of heads {heads}, ffn {ffn} positive"
            )));
        }
    }
    Ok(())
}

impl PredictorModel {
    /// Xavier-uniform weights, zero biases, unit layer-norm gains.
    pub fn init(d_in: usize, arch: Architecture, seed: u64) -> Result<Self, PredictorError> {
        check_arch(d_in, arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; param_count(d_in, arch)];
        let mut xavier = |slot: &mut [f64], fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let u = Uniform::new_inclusive(-a, a);
            for p in slot {
                *p = u.sample(&mut rng);
            }
        };
        match arch {
            Architecture::Linear => xavier(&mut params[..d_in], d_in, 1),
            Architecture::Encoder { d_model, heads, ffn } => {
                let l = Layout::new(d_in, d_model, heads, ffn);
                let d = d_model;
                xavier(&mut params[l.w_in..l.w_in + d_in * d], d_in, d);
                for off in [l.wq, l.wk, l.wv, l.wo] {
                    xavier(&mut params[off..off + d * d], d, d);
                }
                xavier(&mut params[l.w1..l.w1 + d * ffn], d, ffn);
                xavier(&mut params[l.w2..l.w2 + ffn * d], ffn, d);
                xavier(&mut params[l.w_head..l.w_head + d], d, 1);
                params[l.g1..l.g1 + d].fill(1.0);
                params[l.g2..l.g2 + d].fill(1.0);
            }
        }
        Ok(PredictorModel { d_in, arch, params })
    }

    pub fn from_params(d_in: usize, arch: Architecture, params: Vec<f64>) -> Result<Self, PredictorError> {
        check_arch(d_in, arch)?;
        let expected = param_count(d_in, arch);
        if params.len() != expected {
            return Err(PredictorError::InvalidArchitecture(format!(
                "expected {expected} parameters, got {}",
                params.len()
            )));
        }
        Ok(PredictorModel { d_in, arch, params })
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Offset of the head weights and bias in the flat vector.
    pub fn head_offsets(&self) -> (usize, usize) {
        match self.arch {
            Architecture::Linear => (0, self.d_in),
            Architecture::Encoder { d_model, heads, ffn } => {
                let l = Layout::new(self.d_in, d_model, heads, ffn);
                (l.w_head, l.b_head)
            }
        }
    }

    fn check_rows(&self, x: &[Vec<f64>]) -> Result<(), PredictorError> {
        match x.iter().find(|r| r.len() != self.d_in) {
            Some(r) => Err(PredictorError::DimensionMismatch {
                expected: self.d_in,
                got: r.len(),
            }),
            None => Ok(()),
        }
    }

    /// Per-step logits.
    pub fn logits(&self, x: &[Vec<f64>]) -> Result<Vec<f64>, PredictorError> {
        self.check_rows(x)?;
        let flat: Vec<f64> = x.iter().flatten().copied().collect();
        Ok(match self.arch {
            Architecture::Linear => linear_logits(&self.params, &flat, x.len(), self.d_in),
            Architecture::Encoder { d_model, heads, ffn } => {
                let l = Layout::new(self.d_in, d_model, heads, ffn);
                encoder_forward(&self.params, &l, &flat, x.len()).z
            }
        })
    }

    /// Adds `scale · ∂(Σ_t bce(z_t, y_t))/∂θ` to `grad` and returns the
    /// unscaled summed loss of this sequence.
    pub(crate) fn accumulate(
        &self,
        x: &[Vec<f64>],
        y: &[bool],
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64, PredictorError> {
        self.check_rows(x)?;
        let t = x.len();
        let flat: Vec<f64> = x.iter().flatten().copied().collect();
        match self.arch {
            Architecture::Linear => {
                let z = linear_logits(&self.params, &flat, t, self.d_in);
                let (loss, dz) = bce(&z, y, scale);
                for (row, g) in flat.chunks_exact(self.d_in).zip(&dz) {
                    for (acc, xv) in grad[..self.d_in].iter_mut().zip(row) {
                        *acc += g * xv;
                    }
                    grad[self.d_in] += g;
                }
                Ok(loss)
            }
            Architecture::Encoder { d_model, heads, ffn } => {
                let l = Layout::new(self.d_in, d_model, heads, ffn);
                let cache = encoder_forward(&self.params, &l, &flat, t);
                let (loss, dz) = bce(&cache.z, y, scale);
                encoder_backward(&self.params, &l, &flat, t, &cache, &dz, grad);
                Ok(loss)
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (d, h, f) = match self.arch {
            Architecture::Linear => (0, 0, 0),
            Architecture::Encoder { d_model, heads, ffn } => (d_model, heads, ffn),
        };
        let mut out = Vec::with_capacity(CHECKPOINT_HEADER_LEN + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for v in [CHECKPOINT_VERSION, self.d_in as u32, d as u32, h as u32, f as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PredictorError> {
        let bad = |m: String| PredictorError::Checkpoint(m);
        if bytes.len() < CHECKPOINT_HEADER_LEN || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("missing MPRD header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        if word(0) != CHECKPOINT_VERSION as usize {
            return Err(bad(format!("unsupported version {}", word(0))));
        }
        let d_in = word(1);
        let arch = match (word(2), word(3), word(4)) {
            (0, 0, 0) => Architecture::Linear,
            (d_model, heads, ffn) => Architecture::Encoder { d_model, heads, ffn },
        };
        check_arch(d_in, arch)?;
        let body = &bytes[CHECKPOINT_HEADER_LEN..];
        let expected = param_count(d_in, arch);
        if body.len() != 8 * expected {
            return Err(bad(format!(
                "expected {} parameter bytes after header, found {}",
                8 * expected,
                body.len()
            )));
        }
        let params: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(bad(format!("non-finite parameter at index {i}")));
        }
        Ok(PredictorModel { d_in, arch, params })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        write_atomic_bytes(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, PredictorError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        out.write_all(&self.to_bytes())
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Summed logistic loss and `scale · (σ(z) − y)`.
fn bce(z: &[f64], y: &[bool], scale: f64) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut dz = Vec::with_capacity(z.len());
    for (&zi, &yi) in z.iter().zip(y) {
        let yv = if yi { 1.0 } else { 0.0 };
        loss += zi.max(0.0) - zi * yv + (-zi.abs()).exp().ln_1p();
        dz.push(scale * (sigmoid(zi) - yv));
    }
    (loss, dz)
}

fn linear_logits(params: &[f64], x: &[f64], t: usize, d_in: usize) -> Vec<f64> {
    (0..t)
        .map(|i| {
            let row = &x[i * d_in..(i + 1) * d_in];
            row.iter().zip(&params[..d_in]).map(|(a, b)| a * b).sum::<f64>() + params[d_in]
        })
        .collect()
}

// Row-major helpers. `a` is n×k, `b` is k×m.
fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            for (o, bv) in row.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *o += av * bv;
            }
        }
    }
    out
}

fn add_bias(x: &mut [f64], bias: &[f64]) {
    for row in x.chunks_exact_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// `acc (k×m) += aᵀ·b` for `a` n×k, `b` n×m.
fn acc_at_b(acc: &mut [f64], a: &[f64], b: &[f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let brow = &b[i * m..(i + 1) * m];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            for (o, bv) in acc[p * m..(p + 1) * m].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out (n×k) += a·wᵀ` for `a` n×m, `w` k×m.
fn acc_a_bt(out: &mut [f64], a: &[f64], w: &[f64], n: usize, m: usize, k: usize) {
    for i in 0..n {
        let arow = &a[i * m..(i + 1) * m];
        for p in 0..k {
            out[i * k + p] += arow.iter().zip(&w[p * m..(p + 1) * m]).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

fn acc_colsum(acc: &mut [f64], x: &[f64]) {
    for row in x.chunks_exact(acc.len()) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
}

struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

fn layer_norm(x: &[f64], d: usize, gain: &[f64], bias: &[f64]) -> (Vec<f64>, LnCache) {
    let t = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; t];
    for i in 0..t {
        let row = &x[i * d..(i + 1) * d];
        let mu = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[i] = r;
        for j in 0..d {
            let h = (row[j] - mu) * r;
            xhat[i * d + j] = h;
            y[i * d + j] = gain[j] * h + bias[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

/// Returns dx; accumulates gain and bias gradients.
fn layer_norm_backward(dy: &[f64], d: usize, gain: &[f64], c: &LnCache, dgain: &mut [f64], dbias: &mut [f64]) -> Vec<f64> {
    let t = dy.len() / d;
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; d];
    for i in 0..t {
        let dyr = &dy[i * d..(i + 1) * d];
        let xh = &c.xhat[i * d..(i + 1) * d];
        for j in 0..d {
            dgain[j] += dyr[j] * xh[j];
            dbias[j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
        }
        let m1 = dxhat.iter().sum::<f64>() / d as f64;
        let m2 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for j in 0..d {
            dx[i * d + j] = c.rstd[i] * (dxhat[j] - m1 - xh[j] * m2);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

struct EncoderCache {
    h0: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention weights per head, each T×T.
    att: Vec<Vec<f64>>,
    o: Vec<f64>,
    ln1: LnCache,
    h1: Vec<f64>,
    u: Vec<f64>,
    a: Vec<f64>,
    ln2: LnCache,
    h2: Vec<f64>,
    z: Vec<f64>,
}

fn encoder_forward(p: &[f64], l: &Layout, x: &[f64], t: usize) -> EncoderCache {
    let (d, f) = (l.d, l.f);
    let hd = d / l.heads;
    let scale = 1.0 / (hd as f64).sqrt();

    let mut h0 = matmul(x, &p[l.w_in..l.w_in + l.d_in * d], t, l.d_in, d);
    add_bias(&mut h0, &p[l.b_in..l.b_in + d]);
    let q = matmul(&h0, &p[l.wq..l.wq + d * d], t, d, d);
    let k = matmul(&h0, &p[l.wk..l.wk + d * d], t, d, d);
    let v = matmul(&h0, &p[l.wv..l.wv + d * d], t, d, d);

    let mut att = Vec::with_capacity(l.heads);
    let mut o = vec![0.0; t * d];
    for h in 0..l.heads {
        let c0 = h * hd;
        let mut s = vec![0.0; t * t];
        for i in 0..t {
            let qi = &q[i * d + c0..i * d + c0 + hd];
            let row = &mut s[i * t..(i + 1) * t];
            for (j, sij) in row.iter_mut().enumerate() {
                let kj = &k[j * d + c0..j * d + c0 + hd];
                *sij = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
            }
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for e in row.iter_mut() {
                *e = (*e - mx).exp();
                total += *e;
            }
            for e in row.iter_mut() {
                *e /= total;
            }
            for j in 0..t {
                let w = row[j];
                for c in 0..hd {
                    o[i * d + c0 + c] += w * v[j * d + c0 + c];
                }
            }
        }
        att.push(s);
    }

    let mut r1 = matmul(&o, &p[l.wo..l.wo + d * d], t, d, d);
    add_bias(&mut r1, &p[l.bo..l.bo + d]);
    for (r, h) in r1.iter_mut().zip(&h0) {
        *r += h;
    }
    let (h1, ln1) = layer_norm(&r1, d, &p[l.g1..l.g1 + d], &p[l.be1..l.be1 + d]);

    let mut u = matmul(&h1, &p[l.w1..l.w1 + d * f], t, d, f);
    add_bias(&mut u, &p[l.b1..l.b1 + f]);
    let a: Vec<f64> = u.iter().map(|&v| gelu(v)).collect();
    let mut r2 = matmul(&a, &p[l.w2..l.w2 + f * d], t, f, d);
    add_bias(&mut r2, &p[l.b2..l.b2 + d]);
    for (r, h) in r2.iter_mut().zip(&h1) {
        *r += h;
    }
    let (h2, ln2) = layer_norm(&r2, d, &p[l.g2..l.g2 + d], &p[l.be2..l.be2 + d]);

    let w_head = &p[l.w_head..l.w_head + d];
    let z = h2
        .chunks_exact(d)
        .map(|row| row.iter().zip(w_head).map(|(a, b)| a * b).sum::<f64>() + p[l.b_head])
        .collect();

    EncoderCache {
        h0,
        q,
        k,
        v,
        att,
        o,
        ln1,
        h1,
        u,
        a,
        ln2,
        h2,
        z,
    }
}

#[allow(clippy::too_many_arguments)]
fn encoder_backward(p: &[f64], l: &Layout, x: &[f64], t: usize, c: &EncoderCache, dz: &[f64], g: &mut [f64]) {
    let (d, f) = (l.d, l.f);
    let hd = d / l.heads;
    let scale = 1.0 / (hd as f64).sqrt();

    // Head.
    let mut dh2 = vec![0.0; t * d];
    for i in 0..t {
        g[l.b_head] += dz[i];
        for j in 0..d {
            g[l.w_head + j] += dz[i] * c.h2[i * d + j];
            dh2[i * d + j] = dz[i] * p[l.w_head + j];
        }
    }

    // Feed-forward block.
    let (gg2, rest) = g[l.g2..].split_at_mut(d);
    let dr2 = layer_norm_backward(&dh2, d, &p[l.g2..l.g2 + d], &c.ln2, gg2, &mut rest[..d]);
    acc_at_b(&mut g[l.w2..l.w2 + f * d], &c.a, &dr2, t, f, d);
    acc_colsum(&mut g[l.b2..l.b2 + d], &dr2);
    let mut da = vec![0.0; t * f];
    acc_a_bt(&mut da, &dr2, &p[l.w2..l.w2 + f * d], t, d, f);
    for (dv, &uv) in da.iter_mut().zip(&c.u) {
        *dv *= gelu_grad(uv);
    }
    acc_at_b(&mut g[l.w1..l.w1 + d * f], &c.h1, &da, t, d, f);
    acc_colsum(&mut g[l.b1..l.b1 + f], &da);
    let mut dh1 = dr2;
    acc_a_bt(&mut dh1, &da, &p[l.w1..l.w1 + d * f], t, f, d);

    // Attention block.
    let (gg1, rest) = g[l.g1..].split_at_mut(d);
    let dr1 = layer_norm_backward(&dh1, d, &p[l.g1..l.g1 + d], &c.ln1, gg1, &mut rest[..d]);
    acc_at_b(&mut g[l.wo..l.wo + d * d], &c.o, &dr1, t, d, d);
    acc_colsum(&mut g[l.bo..l.bo + d], &dr1);
    let mut d_o = vec![0.0; t * d];
    acc_a_bt(&mut d_o, &dr1, &p[l.wo..l.wo + d * d], t, d, d);

    let mut dq = vec![0.0; t * d];
    let mut dk = vec![0.0; t * d];
    let mut dv = vec![0.0; t * d];
    let mut datt = vec![0.0; t];
    for h in 0..l.heads {
        let c0 = h * hd;
        let att = &c.att[h];
        for i in 0..t {
            let doi = &d_o[i * d + c0..i * d + c0 + hd];
            for j in 0..t {
                let vj = &c.v[j * d + c0..j * d + c0 + hd];
                datt[j] = doi.iter().zip(vj).map(|(a, b)| a * b).sum();
                let w = att[i * t + j];
                for cc in 0..hd {
                    dv[j * d + c0 + cc] += w * doi[cc];
                }
            }
            let row = &att[i * t..(i + 1) * t];
            let dot: f64 = row.iter().zip(&datt).map(|(a, b)| a * b).sum();
            for j in 0..t {
                let ds = row[j] * (datt[j] - dot) * scale;
                for cc in 0..hd {
                    dq[i * d + c0 + cc] += ds * c.k[j * d + c0 + cc];
                    dk[j * d + c0 + cc] += ds * c.q[i * d + c0 + cc];
                }
            }
        }
    }
    let mut dh0 = dr1;
    for (grad_off, dm) in [(l.wq, &dq), (l.wk, &dk), (l.wv, &dv)] {
        acc_at_b(&mut g[grad_off..grad_off + d * d], &c.h0, dm, t, d, d);
        acc_a_bt(&mut dh0, dm, &p[grad_off..grad_off + d * d], t, d, d);
    }

    acc_at_b(&mut g[l.w_in..l.w_in + l.d_in * d], x, &dh0, t, l.d_in, d);
    acc_colsum(&mut g[l.b_in..l.b_in + d], &dh0);
}
