//! Neural network layers with hand-written forward and backward passes.
//!
//! All parameters of a network live in one flat f64 vector; layers hold
//! (offset, len) spans into it. Backward passes accumulate into a gradient
//! vector of the same layout. Everything is f64 and single-sample: batching
//! is the caller's job, which keeps summation order fixed and results
//! bit-reproducible.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Vol;

// ── Parameter layout ────────────────────────────────────────────────────────

/// A named slice of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub off: usize,
    pub len: usize,
}

impl Span {
    #[inline]
    pub fn of<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.off..self.off + self.len]
    }

    #[inline]
    pub fn of_mut<'a>(&self, params: &'a mut [f64]) -> &'a mut [f64] {
        &mut params[self.off..self.off + self.len]
    }
}

/// Structural index: names -> spans, plus the total length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub entries: Vec<(String, Span)>,
    pub len: usize,
}

impl ParamLayout {
    pub fn span(&self, name: &str) -> Option<Span> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, s)| *s)
    }
}

/// Allocates named spans while a network is being constructed.
#[derive(Debug, Default)]
pub struct LayoutBuilder {
    entries: Vec<(String, Span)>,
    len: usize,
}

impl LayoutBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alloc(&mut self, name: impl Into<String>, len: usize) -> Span {
        let span = Span { off: self.len, len };
        self.entries.push((name.into(), span));
        self.len += len;
        span
    }

    pub fn finish(self) -> ParamLayout {
        ParamLayout { entries: self.entries, len: self.len }
    }
}

// ── Initialization ──────────────────────────────────────────────────────────

/// Kaiming-uniform fill: U(-b, b) with b = sqrt(6 / fan_in).
pub fn init_he_uniform(slice: &mut [f64], fan_in: usize, rng: &mut ChaCha8Rng) {
    let b = (6.0 / fan_in.max(1) as f64).sqrt();
    for v in slice {
        *v = rng.gen_range(-b..b);
    }
}

// ── 3D convolution ──────────────────────────────────────────────────────────

/// Conv over (C, T, H, W) volumes; a 2D conv is the `kt = 1, t = 1` case.
/// Weight layout: [out_c][in_c][kt][kh][kw], optional bias per out channel.
#[derive(Debug, Clone)]
pub struct Conv3d {
    pub in_c: usize,
    pub out_c: usize,
    pub kt: usize,
    pub kh: usize,
    pub kw: usize,
    pub st: usize,
    pub sh: usize,
    pub sw: usize,
    pub pt: usize,
    pub ph: usize,
    pub pw: usize,
    pub weight: Span,
    pub bias: Option<Span>,
}

fn out_dim(i: usize, k: usize, s: usize, p: usize) -> usize {
    (i + 2 * p - k) / s + 1
}

/// Output range [lo, hi) such that `o*s + k - p` stays within `[0, input)`.
#[inline]
fn valid_range(out_n: usize, s: usize, k: usize, p: usize, input: usize) -> (usize, usize) {
    let lo = if k >= p { 0 } else { (p - k + s - 1) / s };
    let hi = if input + p < k + 1 { 0 } else { ((input + p - k - 1) / s + 1).min(out_n) };
    (lo.min(out_n), hi)
}

impl Conv3d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        lb: &mut LayoutBuilder,
        name: &str,
        in_c: usize,
        out_c: usize,
        (kt, kh, kw): (usize, usize, usize),
        (st, sh, sw): (usize, usize, usize),
        (pt, ph, pw): (usize, usize, usize),
        bias: bool,
    ) -> Self {
        let weight = lb.alloc(format!("{name}.w"), out_c * in_c * kt * kh * kw);
        let bias = if bias { Some(lb.alloc(format!("{name}.b"), out_c)) } else { None };
        Self { in_c, out_c, kt, kh, kw, st, sh, sw, pt, ph, pw, weight, bias }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len + self.bias.map_or(0, |b| b.len)
    }

    pub fn out_shape(&self, x: &Vol) -> (usize, usize, usize, usize) {
        (
            self.out_c,
            out_dim(x.t, self.kt, self.st, self.pt),
            out_dim(x.h, self.kh, self.sh, self.ph),
            out_dim(x.w, self.kw, self.sw, self.pw),
        )
    }

    pub fn init(&self, params: &mut [f64], rng: &mut ChaCha8Rng) {
        let fan_in = self.in_c * self.kt * self.kh * self.kw;
        init_he_uniform(self.weight.of_mut(params), fan_in, rng);
        if let Some(b) = self.bias {
            b.of_mut(params).fill(0.0);
        }
    }

    pub fn forward(&self, x: &Vol, params: &[f64]) -> Vol {
        assert_eq!(x.c, self.in_c, "conv input channels");
        let (oc_n, ot_n, oh_n, ow_n) = self.out_shape(x);
        let mut y = Vol::zeros(oc_n, ot_n, oh_n, ow_n);
        if let Some(b) = self.bias {
            let bv = b.of(params);
            let plane = ot_n * oh_n * ow_n;
            for oc in 0..oc_n {
                y.data[oc * plane..(oc + 1) * plane].fill(bv[oc]);
            }
        }
        let w = self.weight.of(params);
        let ksz = self.kt * self.kh * self.kw;
        for oc in 0..oc_n {
            for ic in 0..self.in_c {
                let wbase = (oc * self.in_c + ic) * ksz;
                for kt in 0..self.kt {
                    let (ot_lo, ot_hi) = valid_range(ot_n, self.st, kt, self.pt, x.t);
                    for kh in 0..self.kh {
                        let (oh_lo, oh_hi) = valid_range(oh_n, self.sh, kh, self.ph, x.h);
                        for kw in 0..self.kw {
                            let wv = w[wbase + (kt * self.kh + kh) * self.kw + kw];
                            let (ow_lo, ow_hi) = valid_range(ow_n, self.sw, kw, self.pw, x.w);
                            for ot in ot_lo..ot_hi {
                                let it = ot * self.st + kt - self.pt;
                                for oh in oh_lo..oh_hi {
                                    let ih = oh * self.sh + kh - self.ph;
                                    let xrow = ((ic * x.t + it) * x.h + ih) * x.w;
                                    let yrow = ((oc * ot_n + ot) * oh_n + oh) * ow_n;
                                    for ow in ow_lo..ow_hi {
                                        let iw = ow * self.sw + kw - self.pw;
                                        y.data[yrow + ow] += wv * x.data[xrow + iw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients into `dparams` and returns dx.
    pub fn backward(&self, x: &Vol, params: &[f64], dy: &Vol, dparams: &mut [f64]) -> Vol {
        let (oc_n, ot_n, oh_n, ow_n) = self.out_shape(x);
        assert_eq!((dy.c, dy.t, dy.h, dy.w), (oc_n, ot_n, oh_n, ow_n), "conv dy shape");
        let mut dx = Vol::zeros(x.c, x.t, x.h, x.w);
        let w = self.weight.of(params);
        let ksz = self.kt * self.kh * self.kw;
        if let Some(b) = self.bias {
            let plane = ot_n * oh_n * ow_n;
            for oc in 0..oc_n {
                let g: f64 = dy.data[oc * plane..(oc + 1) * plane].iter().sum();
                dparams[b.off + oc] += g;
            }
        }
        for oc in 0..oc_n {
            for ic in 0..self.in_c {
                let wbase = (oc * self.in_c + ic) * ksz;
                for kt in 0..self.kt {
                    let (ot_lo, ot_hi) = valid_range(ot_n, self.st, kt, self.pt, x.t);
                    for kh in 0..self.kh {
                        let (oh_lo, oh_hi) = valid_range(oh_n, self.sh, kh, self.ph, x.h);
                        for kw in 0..self.kw {
                            let widx = wbase + (kt * self.kh + kh) * self.kw + kw;
                            let wv = w[widx];
                            let (ow_lo, ow_hi) = valid_range(ow_n, self.sw, kw, self.pw, x.w);
                            let mut dw_acc = 0.0;
                            for ot in ot_lo..ot_hi {
                                let it = ot * self.st + kt - self.pt;
                                for oh in oh_lo..oh_hi {
                                    let ih = oh * self.sh + kh - self.ph;
                                    let xrow = ((ic * x.t + it) * x.h + ih) * x.w;
                                    let yrow = ((oc * ot_n + ot) * oh_n + oh) * ow_n;
                                    for ow in ow_lo..ow_hi {
                                        let iw = ow * self.sw + kw - self.pw;
                                        let g = dy.data[yrow + ow];
                                        dw_acc += g * x.data[xrow + iw];
                                        dx.data[xrow + iw] += wv * g;
                                    }
                                }
                            }
                            dparams[self.weight.off + widx] += dw_acc;
                        }
                    }
                }
            }
        }
        dx
    }
}

// ── Group normalization ─────────────────────────────────────────────────────

/// Per-sample group normalization over (C/G, T, H, W) with affine params.
#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub channels: usize,
    pub groups: usize,
    pub eps: f64,
    pub gamma: Span,
    pub beta: Span,
}

/// Largest group count <= 4 that divides the channel count.
pub fn default_groups(channels: usize) -> usize {
    for g in (1..=4usize).rev() {
        if channels % g == 0 {
            return g;
        }
    }
    1
}

/// Cached statistics from a GroupNorm forward pass.
#[derive(Debug, Clone)]
pub struct GnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl GroupNorm {
    pub fn new(lb: &mut LayoutBuilder, name: &str, channels: usize, groups: usize) -> Self {
        assert!(channels % groups == 0, "groups must divide channels");
        let gamma = lb.alloc(format!("{name}.g"), channels);
        let beta = lb.alloc(format!("{name}.b"), channels);
        Self { channels, groups, eps: 1e-5, gamma, beta }
    }

    pub fn init(&self, params: &mut [f64], gamma_value: f64) {
        self.gamma.of_mut(params).fill(gamma_value);
        self.beta.of_mut(params).fill(0.0);
    }

    pub fn forward(&self, x: &Vol, params: &[f64]) -> (Vol, GnCache) {
        assert_eq!(x.c, self.channels, "groupnorm channels");
        let plane = x.t * x.h * x.w;
        let cg = self.channels / self.groups;
        let gsize = cg * plane;
        let gamma = self.gamma.of(params);
        let beta = self.beta.of(params);
        let mut y = Vol::zeros(x.c, x.t, x.h, x.w);
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; self.groups];
        for g in 0..self.groups {
            let base = g * gsize;
            let chunk = &x.data[base..base + gsize];
            let mean = chunk.iter().sum::<f64>() / gsize as f64;
            let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / gsize as f64;
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std[g] = istd;
            for c_in in 0..cg {
                let ch = g * cg + c_in;
                let (gm, bt) = (gamma[ch], beta[ch]);
                for i in 0..plane {
                    let idx = base + c_in * plane + i;
                    let xh = (x.data[idx] - mean) * istd;
                    xhat[idx] = xh;
                    y.data[idx] = gm * xh + bt;
                }
            }
        }
        (y, GnCache { xhat, inv_std })
    }

    pub fn backward(&self, dy: &Vol, cache: &GnCache, params: &[f64], dparams: &mut [f64]) -> Vol {
        let plane = dy.t * dy.h * dy.w;
        let cg = self.channels / self.groups;
        let gsize = cg * plane;
        let gamma = self.gamma.of(params);
        let mut dx = Vol::zeros(dy.c, dy.t, dy.h, dy.w);
        for g in 0..self.groups {
            let base = g * gsize;
            let mut sum_dxhat = 0.0;
            let mut sum_dxhat_xhat = 0.0;
            for c_in in 0..cg {
                let ch = g * cg + c_in;
                let mut dgamma = 0.0;
                let mut dbeta = 0.0;
                for i in 0..plane {
                    let idx = base + c_in * plane + i;
                    let d = dy.data[idx];
                    dgamma += d * cache.xhat[idx];
                    dbeta += d;
                    let dxh = d * gamma[ch];
                    sum_dxhat += dxh;
                    sum_dxhat_xhat += dxh * cache.xhat[idx];
                }
                dparams[self.gamma.off + ch] += dgamma;
                dparams[self.beta.off + ch] += dbeta;
            }
            let istd = cache.inv_std[g];
            let m = gsize as f64;
            for c_in in 0..cg {
                let ch = g * cg + c_in;
                let gm = gamma[ch];
                for i in 0..plane {
                    let idx = base + c_in * plane + i;
                    let dxh = dy.data[idx] * gm;
                    dx.data[idx] =
                        istd * (dxh - (sum_dxhat + cache.xhat[idx] * sum_dxhat_xhat) / m);
                }
            }
        }
        dx
    }
}

// ── Max pooling ─────────────────────────────────────────────────────────────

/// 2x2 spatial max pooling (time untouched), stride 2. Ties pick the first
/// element in scan order so the backward routing is deterministic.
#[derive(Debug, Clone, Copy)]
pub struct MaxPool2x2;

impl MaxPool2x2 {
    pub fn forward(&self, x: &Vol) -> (Vol, Vec<usize>) {
        let oh = x.h / 2;
        let ow = x.w / 2;
        let mut y = Vol::zeros(x.c, x.t, oh, ow);
        let mut argmax = vec![0usize; y.len()];
        let mut oi = 0;
        for c in 0..x.c {
            for t in 0..x.t {
                for yo in 0..oh {
                    for xo in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let idx = x.idx(c, t, yo * 2 + dy, xo * 2 + dx);
                                if x.data[idx] > best {
                                    best = x.data[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        y.data[oi] = best;
                        argmax[oi] = best_idx;
                        oi += 1;
                    }
                }
            }
        }
        (y, argmax)
    }

    pub fn backward(
        &self,
        dy: &Vol,
        argmax: &[usize],
        in_shape: (usize, usize, usize, usize),
    ) -> Vol {
        let mut dx = Vol::zeros(in_shape.0, in_shape.1, in_shape.2, in_shape.3);
        for (i, &src) in argmax.iter().enumerate() {
            dx.data[src] += dy.data[i];
        }
        dx
    }
}

// ── Fully connected ─────────────────────────────────────────────────────────

/// Dense layer, weight layout [out][in], bias per output.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Span,
    pub bias: Span,
}

impl Linear {
    pub fn new(lb: &mut LayoutBuilder, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let weight = lb.alloc(format!("{name}.w"), out_dim * in_dim);
        let bias = lb.alloc(format!("{name}.b"), out_dim);
        Self { in_dim, out_dim, weight, bias }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len + self.bias.len
    }

    pub fn init(&self, params: &mut [f64], rng: &mut ChaCha8Rng) {
        init_he_uniform(self.weight.of_mut(params), self.in_dim, rng);
        self.bias.of_mut(params).fill(0.0);
    }

    pub fn forward(&self, x: &[f64], params: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.in_dim, "linear input width");
        let w = self.weight.of(params);
        let b = self.bias.of(params);
        (0..self.out_dim)
            .map(|o| {
                let row = &w[o * self.in_dim..(o + 1) * self.in_dim];
                crate::tensor::dot(row, x) + b[o]
            })
            .collect()
    }

    pub fn backward(&self, x: &[f64], params: &[f64], dy: &[f64], dparams: &mut [f64]) -> Vec<f64> {
        assert_eq!(dy.len(), self.out_dim, "linear dy width");
        let w = self.weight.of(params);
        let mut dx = vec![0.0; self.in_dim];
        for o in 0..self.out_dim {
            let g = dy[o];
            dparams[self.bias.off + o] += g;
            let row = &w[o * self.in_dim..(o + 1) * self.in_dim];
            let drow = &mut dparams
                [self.weight.off + o * self.in_dim..self.weight.off + (o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                drow[i] += g * x[i];
                dx[i] += row[i] * g;
            }
        }
        dx
    }
}

// ── Activations and heads ───────────────────────────────────────────────────

pub fn relu_vol(x: &mut Vol) {
    for v in &mut x.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// dx = dy where the forward output was positive.
pub fn relu_backward_vol(dy: &Vol, y: &Vol) -> Vol {
    let mut dx = dy.clone();
    for (d, &o) in dx.data.iter_mut().zip(&y.data) {
        if o <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

pub fn relu_vec(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

pub fn relu_backward_vec(dy: &[f64], y: &[f64]) -> Vec<f64> {
    dy.iter().zip(y).map(|(&d, &o)| if o > 0.0 { d } else { 0.0 }).collect()
}

pub const LEAKY_SLOPE: f64 = 0.01;

/// Leaky ReLU; at the narrow projection-head widths a hard ReLU can zero an
/// entire hidden layer, which would make the embedding unnormalizable.
pub fn leaky_relu_vec(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v *= LEAKY_SLOPE;
        }
    }
}

pub fn leaky_relu_backward_vec(dy: &[f64], y: &[f64]) -> Vec<f64> {
    dy.iter().zip(y).map(|(&d, &o)| if o > 0.0 { d } else { d * LEAKY_SLOPE }).collect()
}

/// L2 normalization; returns (unit vector, input norm).
pub fn l2_normalize(x: &[f64]) -> (Vec<f64>, f64) {
    let r = crate::tensor::l2_norm(x);
    if r == 0.0 {
        return (vec![0.0; x.len()], 0.0);
    }
    (x.iter().map(|v| v / r).collect(), r)
}

/// Backward of y = x / |x|: dx = (dy - y * (y . dy)) / |x|.
pub fn l2_normalize_backward(dy: &[f64], y: &[f64], r: f64) -> Vec<f64> {
    let proj = crate::tensor::dot(y, dy);
    dy.iter().zip(y).map(|(&d, &u)| (d - u * proj) / r).collect()
}

/// Softmax cross-entropy with integer target; returns (loss, dlogits).
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = z.ln() + max - logits[target];
    let mut d: Vec<f64> = exps.iter().map(|&e| e / z).collect();
    d[target] -= 1.0;
    (loss, d)
}

/// Argmax index (first maximum wins).
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}
