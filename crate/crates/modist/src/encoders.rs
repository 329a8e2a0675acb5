//! The two encoder pathways and their projection heads.
//!
//! The visual pathway is a small 3D conv net over (3, T, H, W) clips; the
//! motion pathway is its 2D analogue over temporally stacked motion maps
//! (time folded into channels), with 1/8 the channel width per stage. Both
//! follow the same plan: a stride-2 stem conv whose taps read the full-
//! resolution input, then one bottleneck residual block per stage with the
//! temporal kernel on the first 1x1-spatial conv. Early visual stages use
//! degenerate 1-frame temporal kernels, late stages 3-frame kernels; the
//! motion pathway is 2D throughout. Downsampling after the stem is kept
//! late (stages 1 and n-1): at a 32px canvas the motion evidence lives in
//! 1-2px edge structure that aggressive early pooling would erase.
//!
//! Normalization is per-sample group norm: batch statistics would leak
//! information between contrastive samples.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{
    default_groups, l2_normalize, l2_normalize_backward, leaky_relu_backward_vec, leaky_relu_vec, relu_backward_vol, relu_vol, Conv3d, GnCache,
    GroupNorm, LayoutBuilder, Linear, ParamLayout, Span,
};
use crate::tensor::Vol;

// ── Configuration ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathwayKind {
    Visual,
    Motion,
}

/// Structural description of one pathway.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathwayConfig {
    pub kind: PathwayKind,
    /// Output channels per stage; the motion pathway runs at 1/8 of the
    /// visual widths.
    pub stage_channels: Vec<usize>,
    /// Input channels: 3 for RGB, T_m for stacked motion maps.
    pub in_channels: usize,
    /// Input temporal length: T_v for visual, 1 for motion (time is folded
    /// into channels).
    pub clip_len: usize,
    /// Input H = W.
    pub canvas: usize,
    /// Projection output dimension D.
    pub proj_dim: usize,
}

impl PathwayConfig {
    pub fn visual_default() -> Self {
        Self {
            kind: PathwayKind::Visual,
            stage_channels: vec![16, 32, 64, 128],
            in_channels: 3,
            clip_len: 4,
            canvas: 32,
            proj_dim: 32,
        }
    }

    /// Motion defaults for `t_m` stacked single-channel maps.
    pub fn motion_default(t_m: usize) -> Self {
        Self {
            kind: PathwayKind::Motion,
            stage_channels: vec![2, 4, 8, 16],
            in_channels: t_m,
            clip_len: 1,
            canvas: 32,
            proj_dim: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.is_empty() {
            return Err(Error::Config("pathway needs at least one stage".into()));
        }
        if self.proj_dim < 2 {
            return Err(Error::Config(format!("projection dim {} < 2", self.proj_dim)));
        }
        if self.canvas < 8 || self.canvas % 8 != 0 {
            return Err(Error::Config(format!(
                "canvas {} must be a positive multiple of 8",
                self.canvas
            )));
        }
        if self.in_channels == 0 || self.clip_len == 0 {
            return Err(Error::Config("input dims must be positive".into()));
        }
        Ok(())
    }

    /// Pooled feature width = channels of the last stage.
    pub fn feature_dim(&self) -> usize {
        *self.stage_channels.last().unwrap()
    }

    /// Temporal kernel per stage: the visual pathway uses 3-frame kernels in
    /// its second half of stages, the motion pathway is 2D everywhere.
    pub fn temporal_kernels(&self) -> Vec<usize> {
        let n = self.stage_channels.len();
        (0..n)
            .map(|i| match self.kind {
                PathwayKind::Visual if i >= n / 2 => 3,
                _ => 1,
            })
            .collect()
    }
}

// ── Parameters ──────────────────────────────────────────────────────────────

/// Flat parameter vector for one network; structure lives in the layout of
/// the owning `Pathway` / `ProjectionHead`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub values: Vec<f64>,
}

impl EncoderParams {
    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }
}

/// Online weights plus their slow-moving momentum copy.
#[derive(Debug, Clone)]
pub struct MomentumPair {
    pub online: EncoderParams,
    pub momentum: EncoderParams,
    pub lambda: f64,
}

impl MomentumPair {
    /// Momentum starts as an exact copy of the online weights.
    pub fn new(online: EncoderParams, lambda: f64) -> Self {
        let momentum = online.clone();
        Self { online, momentum, lambda }
    }
}

/// In-place momentum update: m <- lambda * m + (1 - lambda) * o.
pub fn momentum_update(pair: &mut MomentumPair) -> Result<()> {
    if pair.online.values.len() != pair.momentum.values.len() {
        return Err(Error::Config(format!(
            "momentum update structure mismatch: {} vs {} params",
            pair.online.values.len(),
            pair.momentum.values.len()
        )));
    }
    if !(0.0..=1.0).contains(&pair.lambda) {
        return Err(Error::Config(format!("lambda {} outside [0,1]", pair.lambda)));
    }
    let l = pair.lambda;
    for (m, &o) in pair.momentum.values.iter_mut().zip(&pair.online.values) {
        *m = l * *m + (1.0 - l) * o;
    }
    Ok(())
}

// ── Embeddings ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Visual,
    Motion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Query,
    Key,
    Negative,
}

/// Unit-norm projection output tagged with its provenance.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub modality: Modality,
    pub role: Role,
    pub video_index: u64,
}

// ── Bottleneck residual block ───────────────────────────────────────────────

#[derive(Debug, Clone)]
struct Bottleneck {
    conv_a: Conv3d,
    gn_a: GroupNorm,
    conv_b: Conv3d,
    gn_b: GroupNorm,
    conv_c: Conv3d,
    gn_c: GroupNorm,
    shortcut: Option<(Conv3d, GroupNorm)>,
}

#[derive(Debug, Clone)]
struct BlockCache {
    x_in: Vol,
    a_out: Vol,
    b_out: Vol,
    gn_a: GnCache,
    gn_b: GnCache,
    gn_c: GnCache,
    gn_s: Option<GnCache>,
    y: Vol,
}

impl Bottleneck {
    fn new(
        lb: &mut LayoutBuilder,
        name: &str,
        in_c: usize,
        out_c: usize,
        kt: usize,
        stride: usize,
    ) -> Self {
        // half-width bottlenecks: the desk-scale channel counts are small
        // enough that quarter-width necks (down to one channel) choke the
        // narrow pathway
        let width = (out_c / 2).max(2).min(out_c);
        let conv_a = Conv3d::new(
            lb,
            &format!("{name}.a"),
            in_c,
            width,
            (kt, 1, 1),
            (1, 1, 1),
            (kt / 2, 0, 0),
            false,
        );
        let gn_a = GroupNorm::new(lb, &format!("{name}.gna"), width, default_groups(width));
        let conv_b = Conv3d::new(
            lb,
            &format!("{name}.b"),
            width,
            width,
            (1, 3, 3),
            (1, stride, stride),
            (0, 1, 1),
            false,
        );
        let gn_b = GroupNorm::new(lb, &format!("{name}.gnb"), width, default_groups(width));
        let conv_c = Conv3d::new(
            lb,
            &format!("{name}.c"),
            width,
            out_c,
            (1, 1, 1),
            (1, 1, 1),
            (0, 0, 0),
            false,
        );
        let gn_c = GroupNorm::new(lb, &format!("{name}.gnc"), out_c, default_groups(out_c));
        let shortcut = if in_c != out_c || stride != 1 {
            let conv = Conv3d::new(
                lb,
                &format!("{name}.s"),
                in_c,
                out_c,
                (1, 1, 1),
                (1, stride, stride),
                (0, 0, 0),
                false,
            );
            let gn = GroupNorm::new(lb, &format!("{name}.gns"), out_c, default_groups(out_c));
            Some((conv, gn))
        } else {
            None
        };
        Self { conv_a, gn_a, conv_b, gn_b, conv_c, gn_c, shortcut }
    }

    fn init(&self, params: &mut [f64], rng: &mut ChaCha8Rng) {
        self.conv_a.init(params, rng);
        self.gn_a.init(params, 1.0);
        self.conv_b.init(params, rng);
        self.gn_b.init(params, 1.0);
        self.conv_c.init(params, rng);
        self.gn_c.init(params, 1.0);
        if let Some((conv, gn)) = &self.shortcut {
            conv.init(params, rng);
            gn.init(params, 1.0);
        }
    }

    fn forward(&self, x: &Vol, params: &[f64]) -> (Vol, BlockCache) {
        let (a_pre, gn_a_cache) = self.gn_a.forward(&self.conv_a.forward(x, params), params);
        let mut a_out = a_pre;
        relu_vol(&mut a_out);
        let (b_pre, gn_b_cache) = self.gn_b.forward(&self.conv_b.forward(&a_out, params), params);
        let mut b_out = b_pre;
        relu_vol(&mut b_out);
        let (c_out, gn_c_cache) = self.gn_c.forward(&self.conv_c.forward(&b_out, params), params);
        let (s_out, gn_s_cache) = match &self.shortcut {
            Some((conv, gn)) => {
                let (s, cache) = gn.forward(&conv.forward(x, params), params);
                (s, Some(cache))
            }
            None => (x.clone(), None),
        };
        let mut y = c_out;
        for (v, s) in y.data.iter_mut().zip(&s_out.data) {
            *v += s;
        }
        relu_vol(&mut y);
        let cache = BlockCache {
            x_in: x.clone(),
            a_out,
            b_out,
            gn_a: gn_a_cache,
            gn_b: gn_b_cache,
            gn_c: gn_c_cache,
            gn_s: gn_s_cache,
            y: y.clone(),
        };
        (y, cache)
    }

    /// Forward without keeping intermediates (inference path).
    fn forward_infer(&self, x: &Vol, params: &[f64]) -> Vol {
        let (y, _) = self.forward(x, params);
        y
    }

    fn backward(&self, dy: &Vol, cache: &BlockCache, params: &[f64], dparams: &mut [f64]) -> Vol {
        let dsum = relu_backward_vol(dy, &cache.y);
        // main branch
        let dc = self.gn_c.backward(&dsum, &cache.gn_c, params, dparams);
        let db_out = self.conv_c.backward(&cache.b_out, params, &dc, dparams);
        let db_pre = relu_backward_vol(&db_out, &cache.b_out);
        let db = self.gn_b.backward(&db_pre, &cache.gn_b, params, dparams);
        let da_out = self.conv_b.backward(&cache.a_out, params, &db, dparams);
        let da_pre = relu_backward_vol(&da_out, &cache.a_out);
        let da = self.gn_a.backward(&da_pre, &cache.gn_a, params, dparams);
        let mut dx = self.conv_a.backward(&cache.x_in, params, &da, dparams);
        // shortcut branch
        match (&self.shortcut, &cache.gn_s) {
            (Some((conv, gn)), Some(gn_cache)) => {
                let ds = gn.backward(&dsum, gn_cache, params, dparams);
                let dxs = conv.backward(&cache.x_in, params, &ds, dparams);
                for (a, b) in dx.data.iter_mut().zip(&dxs.data) {
                    *a += b;
                }
            }
            _ => {
                for (a, b) in dx.data.iter_mut().zip(&dsum.data) {
                    *a += b;
                }
            }
        }
        dx
    }
}

// ── Pathway ─────────────────────────────────────────────────────────────────

/// One encoder: stem + per-stage bottleneck blocks + global average pool.
#[derive(Debug, Clone)]
pub struct Pathway {
    pub cfg: PathwayConfig,
    stem: Conv3d,
    stem_gn: GroupNorm,
    stages: Vec<Bottleneck>,
    pub layout: ParamLayout,
}

/// Everything needed to run the backward pass for one clip.
pub struct PathwayCache {
    stem_in: Vol,
    stem_gn: GnCache,
    stem_out: Vol,
    blocks: Vec<BlockCache>,
    /// Final stage output before global average pooling.
    pub final_out: Vol,
}

/// Spatial stride of stage `i` out of `n`: downsample at stage 1 and, for
/// deeper nets, again at the last stage.
fn stage_stride(i: usize, n: usize) -> usize {
    if i == 1 || (i == n - 1 && n >= 4) {
        2
    } else {
        1
    }
}

impl Pathway {
    pub fn new(cfg: PathwayConfig) -> Result<Self> {
        cfg.validate()?;
        let mut lb = LayoutBuilder::new();
        // the stem is not one of the ratio-scaled stages; give it enough
        // width to carry the stacked temporal channels of the narrow pathway
        let c0 = cfg.stage_channels[0].max(cfg.in_channels.min(8));
        let (stem_kt, stem_st, stem_pt) = match cfg.kind {
            PathwayKind::Visual => (3, 2, 1),
            PathwayKind::Motion => (1, 1, 0),
        };
        let stem = Conv3d::new(
            &mut lb,
            "stem",
            cfg.in_channels,
            c0,
            (stem_kt, 3, 3),
            (stem_st, 2, 2),
            (stem_pt, 1, 1),
            false,
        );
        let stem_gn = GroupNorm::new(&mut lb, "stem.gn", c0, default_groups(c0));
        let kts = cfg.temporal_kernels();
        let n = cfg.stage_channels.len();
        let mut stages = Vec::new();
        let mut in_c = c0;
        for (i, (&out_c, &kt)) in cfg.stage_channels.iter().zip(&kts).enumerate() {
            let stride = stage_stride(i, n);
            stages.push(Bottleneck::new(&mut lb, &format!("stage{i}"), in_c, out_c, kt, stride));
            in_c = out_c;
        }
        Ok(Self { cfg, stem, stem_gn, stages, layout: lb.finish() })
    }

    pub fn param_count(&self) -> usize {
        self.layout.len
    }

    /// Fresh He-initialized parameters.
    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> EncoderParams {
        let mut params = EncoderParams::zeros(self.layout.len);
        self.stem.init(&mut params.values, rng);
        self.stem_gn.init(&mut params.values, 1.0);
        for s in &self.stages {
            s.init(&mut params.values, rng);
        }
        params
    }

    fn check_input(&self, clip: &Vol) -> Result<()> {
        let cfg = &self.cfg;
        if clip.c != cfg.in_channels
            || clip.t != cfg.clip_len
            || clip.h != cfg.canvas
            || clip.w != cfg.canvas
        {
            return Err(Error::Config(format!(
                "clip shape ({},{},{},{}) does not match pathway input ({},{},{},{})",
                clip.c, clip.t, clip.h, clip.w, cfg.in_channels, cfg.clip_len, cfg.canvas, cfg.canvas
            )));
        }
        Ok(())
    }

    fn check_params(&self, params: &EncoderParams) -> Result<()> {
        if params.values.len() != self.layout.len {
            return Err(Error::Config(format!(
                "parameter vector length {} does not match layout {}",
                params.values.len(),
                self.layout.len
            )));
        }
        Ok(())
    }

    /// Pooled backbone feature (no cache kept).
    pub fn forward(&self, clip: &Vol, params: &EncoderParams) -> Result<Vec<f64>> {
        Ok(self.forward_activations(clip, params)?.0)
    }

    /// Pooled feature plus the final-stage activation volume.
    pub fn forward_activations(&self, clip: &Vol, params: &EncoderParams) -> Result<(Vec<f64>, Vol)> {
        self.check_input(clip)?;
        self.check_params(params)?;
        let p = &params.values;
        let (stem_pre, _) = self.stem_gn.forward(&self.stem.forward(clip, p), p);
        let mut x = stem_pre;
        relu_vol(&mut x);
        for s in &self.stages {
            x = s.forward_infer(&x, p);
        }
        Ok((x.global_avg_pool(), x))
    }

    /// Forward keeping every intermediate needed for `backward`.
    pub fn forward_cached(&self, clip: &Vol, params: &EncoderParams) -> Result<(Vec<f64>, PathwayCache)> {
        self.check_input(clip)?;
        self.check_params(params)?;
        let p = &params.values;
        let (stem_pre, stem_gn_cache) = self.stem_gn.forward(&self.stem.forward(clip, p), p);
        let mut stem_out = stem_pre;
        relu_vol(&mut stem_out);
        let mut x = stem_out.clone();
        let mut blocks = Vec::with_capacity(self.stages.len());
        for s in &self.stages {
            let (y, cache) = s.forward(&x, p);
            blocks.push(cache);
            x = y;
        }
        let feature = x.global_avg_pool();
        let cache = PathwayCache {
            stem_in: clip.clone(),
            stem_gn: stem_gn_cache,
            stem_out,
            blocks,
            final_out: x,
        };
        Ok((feature, cache))
    }

    /// Backprop from a pooled-feature gradient; accumulates into `dparams`.
    pub fn backward(
        &self,
        dfeature: &[f64],
        cache: &PathwayCache,
        params: &EncoderParams,
        dparams: &mut [f64],
    ) -> Vol {
        let p = &params.values;
        let f = &cache.final_out;
        let n = (f.t * f.h * f.w) as f64;
        let mut dy = Vol::zeros(f.c, f.t, f.h, f.w);
        let plane = f.t * f.h * f.w;
        for c in 0..f.c {
            let g = dfeature[c] / n;
            dy.data[c * plane..(c + 1) * plane].fill(g);
        }
        for (s, cache_b) in self.stages.iter().zip(&cache.blocks).rev() {
            dy = s.backward(&dy, cache_b, p, dparams);
        }
        let d_stem_pre = relu_backward_vol(&dy, &cache.stem_out);
        let d_conv = self.stem_gn.backward(&d_stem_pre, &cache.stem_gn, p, dparams);
        self.stem.backward(&cache.stem_in, p, &d_conv, dparams)
    }
}

/// Visual-pathway encode with shape checking.
pub fn encode_visual(pathway: &Pathway, clip: &Vol, params: &EncoderParams) -> Result<Vec<f64>> {
    debug_assert_eq!(pathway.cfg.kind, PathwayKind::Visual);
    pathway.forward(clip, params)
}

/// Motion-pathway encode with shape checking.
pub fn encode_motion(pathway: &Pathway, clip: &Vol, params: &EncoderParams) -> Result<Vec<f64>> {
    debug_assert_eq!(pathway.cfg.kind, PathwayKind::Motion);
    pathway.forward(clip, params)
}

// ── Projection head ─────────────────────────────────────────────────────────

/// 2-layer projection: feature -> feature -> D, relu between, then L2 norm.
#[derive(Debug, Clone)]
pub struct ProjectionHead {
    pub lin1: Linear,
    pub lin2: Linear,
    pub layout: ParamLayout,
}

pub struct HeadCache {
    input: Vec<f64>,
    hidden: Vec<f64>,
    unit: Vec<f64>,
    norm: f64,
}

impl ProjectionHead {
    pub fn new(feature_dim: usize, proj_dim: usize) -> Self {
        let mut lb = LayoutBuilder::new();
        let lin1 = Linear::new(&mut lb, "proj1", feature_dim, feature_dim);
        let lin2 = Linear::new(&mut lb, "proj2", feature_dim, proj_dim);
        Self { lin1, lin2, layout: lb.finish() }
    }

    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> EncoderParams {
        let mut params = EncoderParams::zeros(self.layout.len);
        self.lin1.init(&mut params.values, rng);
        self.lin2.init(&mut params.values, rng);
        params
    }

    /// Unit-norm projection of a pooled feature.
    pub fn forward(&self, feature: &[f64], params: &EncoderParams) -> Result<Vec<f64>> {
        Ok(self.forward_cached(feature, params)?.0)
    }

    pub fn forward_cached(
        &self,
        feature: &[f64],
        params: &EncoderParams,
    ) -> Result<(Vec<f64>, HeadCache)> {
        if feature.len() != self.lin1.in_dim {
            return Err(Error::Config(format!(
                "feature width {} does not match head input {}",
                feature.len(),
                self.lin1.in_dim
            )));
        }
        if params.values.len() != self.layout.len {
            return Err(Error::Config("head parameter vector length mismatch".into()));
        }
        let p = &params.values;
        let mut hidden = self.lin1.forward(feature, p);
        leaky_relu_vec(&mut hidden);
        let out = self.lin2.forward(&hidden, p);
        let (unit, norm) = l2_normalize(&out);
        if norm == 0.0 {
            return Err(Error::DegenerateEmbedding(format!(
                "projection output has zero norm (input feature norm {:.3e}, width {})",
                crate::tensor::l2_norm(feature),
                feature.len()
            )));
        }
        let cache = HeadCache { input: feature.to_vec(), hidden, unit: unit.clone(), norm };
        Ok((unit, cache))
    }

    /// Backprop from d(unit embedding); returns d(feature).
    pub fn backward(
        &self,
        d_unit: &[f64],
        cache: &HeadCache,
        params: &EncoderParams,
        dparams: &mut [f64],
    ) -> Vec<f64> {
        let p = &params.values;
        let d_out = l2_normalize_backward(d_unit, &cache.unit, cache.norm);
        let d_hidden = self.lin2.backward(&cache.hidden, p, &d_out, dparams);
        let d_hidden_pre = leaky_relu_backward_vec(&d_hidden, &cache.hidden);
        self.lin1.backward(&cache.input, p, &d_hidden_pre, dparams)
    }
}

/// Project a pooled feature into a tagged, unit-norm embedding.
pub fn project(
    feature: &[f64],
    head: &ProjectionHead,
    params: &EncoderParams,
    modality: Modality,
    role: Role,
    video_index: u64,
) -> Result<Embedding> {
    let vector = head.forward(feature, params)?;
    Ok(Embedding { vector, modality, role, video_index })
}

/// Named parameter spans exposed for checkpoints and tooling.
pub fn layout_spans(layout: &ParamLayout) -> &[(String, Span)] {
    &layout.entries
}
