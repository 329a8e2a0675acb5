//! Transfer evaluation: linear probe on a frozen backbone, full finetuning,
//! low-shot sweeps over stratified label fractions, and class-gradient
//! saliency maps over the final conv stage.
//!
//! Evaluation always reads the ONLINE visual pathway from a checkpoint; the
//! projection head is discarded and probes attach to the pooled backbone
//! feature. Test-time inputs are single center clips at full frame.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::config::TrainConfig;
use crate::datapipe::{augment_visual, gather_visual_clip, sample_visual_clip, SamplerConfig};
use crate::encoders::{EncoderParams, Pathway};
use crate::error::{Error, Result};
use crate::nn::{argmax, softmax_cross_entropy, Linear};
use crate::rng;
use crate::synthvid::LabeledVideo;
use crate::tensor::Vol;
use crate::trainer::{cosine_lr, load_checkpoint, load_corpus, sgd_group, Corpus};

const PROBE_EPOCHS: usize = 100;
const PROBE_LR: f64 = 0.1;
const PROBE_BATCH: usize = 32;
const FINETUNE_EPOCHS: usize = 20;
const FINETUNE_LR: f64 = 0.01;

// ── Results ─────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Linear,
    Full,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Linear => "linear",
            Protocol::Full => "full",
        }
    }
}

/// Top-1 accuracy of one evaluation run.
#[derive(Debug, Clone)]
pub struct ProbeResult {
    pub protocol: Protocol,
    pub top1: f64,
    pub per_class: Vec<f64>,
    pub seed: u64,
    pub checkpoint_id: String,
}

impl ProbeResult {
    pub fn record_fields(&self) -> Vec<(&'static str, String)> {
        vec![
            ("protocol", self.protocol.as_str().to_string()),
            ("ckpt", self.checkpoint_id.clone()),
            ("seed", self.seed.to_string()),
            ("top1", format!("{:.6}", self.top1)),
            (
                "per_class",
                self.per_class.iter().map(|a| format!("{a:.4}")).collect::<Vec<_>>().join(","),
            ),
        ]
    }
}

// ── Backbone loading and feature extraction ─────────────────────────────────

/// The frozen visual backbone of a checkpoint.
pub struct Backbone {
    pub pathway: Pathway,
    pub params: EncoderParams,
    pub train_config: TrainConfig,
    pub checkpoint_id: String,
}

pub fn load_backbone(ckpt_path: &Path) -> Result<Backbone> {
    let ckpt = load_checkpoint(ckpt_path)?;
    let pathway = Pathway::new(ckpt.visual_cfg.clone())?;
    let params = EncoderParams { values: ckpt.block("visual.online")?.clone() };
    if params.values.len() != pathway.param_count() {
        return Err(Error::Config("checkpoint parameter block does not fit its config".into()));
    }
    let train_config = ckpt.train_config()?;
    let checkpoint_id = ckpt_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    Ok(Backbone { pathway, params, train_config, checkpoint_id })
}

/// Deterministic center clip of a video.
pub fn center_clip(video: &LabeledVideo, sampler: &SamplerConfig) -> Vol {
    let span = (sampler.t_v - 1) * sampler.stride_v + 1;
    let start = (video.t.saturating_sub(span)) / 2;
    gather_visual_clip(video, start, sampler).vol
}

/// Pooled backbone features of center clips, in corpus order.
pub fn extract_features(backbone: &Backbone, corpus: &Corpus) -> Result<Vec<Vec<f64>>> {
    let sampler = backbone.train_config.sampler.clone();
    corpus
        .items
        .par_iter()
        .map(|item| backbone.pathway.forward(&center_clip(&item.video, &sampler), &backbone.params))
        .collect()
}

// ── Linear probe ────────────────────────────────────────────────────────────

/// A trained linear classifier plus the feature standardization that makes
/// the overall map affine in the raw feature.
#[derive(Debug, Clone)]
pub struct LinearProbe {
    pub dim: usize,
    pub num_classes: usize,
    /// [C][D]
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl LinearProbe {
    pub fn logits(&self, feature: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = feature
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&f, (&m, &s))| (f - m) / s)
            .collect();
        (0..self.num_classes)
            .map(|c| {
                crate::tensor::dot(&self.weights[c * self.dim..(c + 1) * self.dim], &z)
                    + self.bias[c]
            })
            .collect()
    }

    /// d(logit_c)/d(raw feature), folding in the standardization.
    pub fn feature_gradient(&self, class: usize) -> Vec<f64> {
        (0..self.dim).map(|d| self.weights[class * self.dim + d] / self.std[d]).collect()
    }
}

/// Train a linear classifier on frozen features with SGD + cosine decay.
pub fn fit_linear_probe(
    features: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    seed: u64,
) -> LinearProbe {
    assert_eq!(features.len(), labels.len());
    let dim = features[0].len();
    let n = features.len();
    // standardize with train statistics
    let mut mean = vec![0.0; dim];
    for f in features {
        crate::tensor::axpy(1.0, f, &mut mean);
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut std = vec![0.0; dim];
    for f in features {
        for (d, &v) in f.iter().enumerate() {
            std[d] += (v - mean[d]) * (v - mean[d]);
        }
    }
    for s in &mut std {
        *s = (*s / n as f64).sqrt().max(1e-8);
    }
    let z: Vec<Vec<f64>> = features
        .iter()
        .map(|f| f.iter().zip(mean.iter().zip(&std)).map(|(&v, (&m, &s))| (v - m) / s).collect())
        .collect();

    let mut lb = crate::nn::LayoutBuilder::new();
    let lin = Linear::new(&mut lb, "probe", dim, num_classes);
    let layout = lb.finish();
    let mut params = vec![0.0; layout.len];
    lin.init(&mut params, &mut rng::stream(seed, &[0xE0]));
    let mut velocity = vec![0.0; layout.len];
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = rng::stream(seed, &[0xE1]);
    let total_steps = (PROBE_EPOCHS * n.div_ceil(PROBE_BATCH)) as u64;
    let mut step = 0u64;
    for _ in 0..PROBE_EPOCHS {
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(PROBE_BATCH) {
            let mut grads = vec![0.0; layout.len];
            for &i in chunk {
                let logits = lin.forward(&z[i], &params);
                let (_, dlogits) = softmax_cross_entropy(&logits, labels[i]);
                lin.backward(&z[i], &params, &dlogits, &mut grads);
            }
            let lr = cosine_lr(PROBE_LR, step, total_steps);
            sgd_group(&mut params, &grads, &mut velocity, lr, 0.9, 0.0, 1.0 / chunk.len() as f64);
            step += 1;
        }
    }
    let weights = lin.weight.of(&params).to_vec();
    let bias = lin.bias.of(&params).to_vec();
    LinearProbe { dim, num_classes, weights, bias, mean, std }
}

fn accuracy_by_class(
    predictions: &[usize],
    labels: &[usize],
    num_classes: usize,
) -> (f64, Vec<f64>) {
    let mut hit = vec![0usize; num_classes];
    let mut count = vec![0usize; num_classes];
    let mut correct = 0;
    for (&p, &l) in predictions.iter().zip(labels) {
        count[l] += 1;
        if p == l {
            hit[l] += 1;
            correct += 1;
        }
    }
    let per_class = hit
        .iter()
        .zip(&count)
        .map(|(&h, &c)| if c == 0 { 0.0 } else { h as f64 / c as f64 })
        .collect();
    (correct as f64 / labels.len().max(1) as f64, per_class)
}

fn check_split_hygiene(train: &Corpus, test: &Corpus) -> Result<()> {
    let train_ids: std::collections::HashSet<u64> =
        train.items.iter().map(|i| i.video.video_index).collect();
    if test.items.iter().any(|i| train_ids.contains(&i.video.video_index)) {
        return Err(Error::Split("probe-train and probe-test indices overlap".into()));
    }
    Ok(())
}

/// Freeze the backbone, train a linear classifier on probe-train, report
/// top-1 on probe-test.
pub fn linear_probe(ckpt_path: &Path, data_dir: &Path, seed: u64) -> Result<ProbeResult> {
    let (result, _, _) = linear_probe_detailed(ckpt_path, data_dir, seed)?;
    Ok(result)
}

/// Linear probe that also returns the trained probe and backbone (used by
/// the saliency op, which needs both).
pub fn linear_probe_detailed(
    ckpt_path: &Path,
    data_dir: &Path,
    seed: u64,
) -> Result<(ProbeResult, LinearProbe, Backbone)> {
    let backbone = load_backbone(ckpt_path)?;
    let train = load_corpus(&data_dir.join("probe_train"), None)?;
    let test = load_corpus(&data_dir.join("probe_test"), None)?;
    check_split_hygiene(&train, &test)?;
    let num_classes = train.class_names.len();

    let params_before = backbone.params.values.clone();
    let x_train = extract_features(&backbone, &train)?;
    let y_train: Vec<usize> = train.items.iter().map(|i| i.video.label).collect();
    let probe = fit_linear_probe(&x_train, &y_train, num_classes, seed);

    let x_test = extract_features(&backbone, &test)?;
    let y_test: Vec<usize> = test.items.iter().map(|i| i.video.label).collect();
    let predictions: Vec<usize> = x_test.iter().map(|f| argmax(&probe.logits(f))).collect();
    let (top1, per_class) = accuracy_by_class(&predictions, &y_test, num_classes);
    debug_assert_eq!(params_before, backbone.params.values, "probe must not touch the backbone");
    let result = ProbeResult {
        protocol: Protocol::Linear,
        top1,
        per_class,
        seed,
        checkpoint_id: backbone.checkpoint_id.clone(),
    };
    Ok((result, probe, backbone))
}

// ── Full finetuning ─────────────────────────────────────────────────────────

/// Stratified per-class subset: ceil(fraction * per-class count) videos each.
pub fn stratified_subset(
    corpus: &Corpus,
    fraction: f64,
    num_classes: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Split(format!("fraction {fraction} outside (0, 1]")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, item) in corpus.items.iter().enumerate() {
        by_class[item.video.label].push(i);
    }
    let mut subset = Vec::new();
    for (class, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            return Err(Error::Split(format!("class {class} has no probe-train videos")));
        }
        let take = ((fraction * members.len() as f64).ceil() as usize).max(1).min(members.len());
        let mut r = rng::stream(seed, &[0xF0, class as u64]);
        for i in (1..members.len()).rev() {
            let j = r.gen_range(0..=i);
            members.swap(i, j);
        }
        subset.extend(members.into_iter().take(take));
    }
    subset.sort_unstable();
    Ok(subset)
}

/// Finetune the whole backbone plus a fresh classifier on a stratified
/// fraction of probe-train; report top-1 on probe-test.
pub fn full_finetune(
    ckpt_path: &Path,
    data_dir: &Path,
    fraction: f64,
    seed: u64,
) -> Result<ProbeResult> {
    let backbone = load_backbone(ckpt_path)?;
    let train = load_corpus(&data_dir.join("probe_train"), None)?;
    let test = load_corpus(&data_dir.join("probe_test"), None)?;
    check_split_hygiene(&train, &test)?;
    let num_classes = train.class_names.len();
    let subset = stratified_subset(&train, fraction, num_classes, seed)?;

    let pathway = &backbone.pathway;
    let mut params = backbone.params.clone();
    let classifier = crate::trainer::classifier_layer(pathway.cfg.feature_dim(), num_classes);
    let mut cls_params = EncoderParams::zeros(classifier.param_count());
    classifier.init(&mut cls_params.values, &mut rng::stream(seed, &[0xF1]));
    let mut vel_backbone = vec![0.0; params.values.len()];
    let mut vel_cls = vec![0.0; cls_params.values.len()];
    let sampler = backbone.train_config.sampler.clone();
    let aug = backbone.train_config.aug.clone();

    let mut order = subset.clone();
    let mut shuffle_rng = rng::stream(seed, &[0xF2]);
    let steps_per_epoch = order.len().div_ceil(PROBE_BATCH).max(1) as u64;
    let total_steps = steps_per_epoch * FINETUNE_EPOCHS as u64;
    let mut step = 0u64;
    for epoch in 0..FINETUNE_EPOCHS {
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(PROBE_BATCH) {
            let samples: Vec<Result<(Vol, usize)>> = chunk
                .par_iter()
                .enumerate()
                .map(|(slot, &idx)| {
                    let item = &train.items[idx];
                    let mut r =
                        rng::stream(seed, &[0xF3, epoch as u64, step, slot as u64]);
                    let clip = sample_visual_clip(&item.video, &mut r, &sampler)?;
                    let clip = augment_visual(&clip, &mut r, &aug)?;
                    Ok((clip.vol, item.video.label))
                })
                .collect();
            let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
            let chunks: Vec<&[(Vol, usize)]> =
                samples.chunks(samples.len().div_ceil(8).max(1)).collect();
            let params_ref = &params;
            let cls_ref = &cls_params;
            let partials: Vec<Result<(Vec<f64>, Vec<f64>)>> = chunks
                .par_iter()
                .map(|part| {
                    let mut g_b = vec![0.0; params_ref.values.len()];
                    let mut g_c = vec![0.0; cls_ref.values.len()];
                    for (vol, label) in *part {
                        let (feat, cache) = pathway.forward_cached(vol, params_ref)?;
                        let logits = classifier.forward(&feat, &cls_ref.values);
                        let (_, dlogits) = softmax_cross_entropy(&logits, *label);
                        let dfeat = classifier.backward(&feat, &cls_ref.values, &dlogits, &mut g_c);
                        pathway.backward(&dfeat, &cache, params_ref, &mut g_b);
                    }
                    Ok((g_b, g_c))
                })
                .collect();
            let mut g_b = vec![0.0; params.values.len()];
            let mut g_c = vec![0.0; cls_params.values.len()];
            for p in partials {
                let (gb, gc) = p?;
                crate::tensor::axpy(1.0, &gb, &mut g_b);
                crate::tensor::axpy(1.0, &gc, &mut g_c);
            }
            let lr = cosine_lr(FINETUNE_LR, step, total_steps);
            let scale = 1.0 / samples.len() as f64;
            sgd_group(&mut params.values, &g_b, &mut vel_backbone, lr, 0.9, 1e-4, scale);
            sgd_group(&mut cls_params.values, &g_c, &mut vel_cls, lr, 0.9, 1e-4, scale);
            step += 1;
        }
    }

    // center-clip evaluation
    let predictions: Vec<Result<usize>> = test
        .items
        .par_iter()
        .map(|item| {
            let feat = pathway.forward(&center_clip(&item.video, &sampler), &params)?;
            Ok(argmax(&classifier.forward(&feat, &cls_params.values)))
        })
        .collect();
    let predictions = predictions.into_iter().collect::<Result<Vec<_>>>()?;
    let y_test: Vec<usize> = test.items.iter().map(|i| i.video.label).collect();
    let (top1, per_class) = accuracy_by_class(&predictions, &y_test, num_classes);
    Ok(ProbeResult {
        protocol: Protocol::Full,
        top1,
        per_class,
        seed,
        checkpoint_id: backbone.checkpoint_id.clone(),
    })
}

// ── Low-shot sweep ──────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct LowshotCell {
    pub checkpoint: String,
    pub fraction: f64,
    pub seed: u64,
    pub top1: f64,
}

#[derive(Debug, Clone)]
pub struct LowshotReport {
    pub checkpoints: Vec<String>,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub cells: Vec<LowshotCell>,
}

impl LowshotReport {
    pub fn mean(&self, checkpoint: &str, fraction: f64) -> f64 {
        let vals: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.checkpoint == checkpoint && c.fraction == fraction)
            .map(|c| c.top1)
            .collect();
        crate::stats::mean(&vals)
    }

    /// Text table: one row per checkpoint, one column per fraction, plus a
    /// delta row per checkpoint against the first (baseline) checkpoint and
    /// notes for any non-monotone mean.
    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("{:<24}", "checkpoint"));
        for f in &self.fractions {
            s.push_str(&format!("{:>9}", format!("{:.0}%", f * 100.0)));
        }
        s.push('\n');
        let means: Vec<Vec<f64>> = self
            .checkpoints
            .iter()
            .map(|c| self.fractions.iter().map(|&f| self.mean(c, f)).collect())
            .collect();
        for (ci, ckpt) in self.checkpoints.iter().enumerate() {
            s.push_str(&format!("{:<24}", ckpt));
            for m in &means[ci] {
                s.push_str(&format!("{:>9.3}", m));
            }
            s.push('\n');
        }
        for ci in 1..self.checkpoints.len() {
            s.push_str(&format!("{:<24}", format!("delta vs {}", self.checkpoints[0])));
            for (fi, _) in self.fractions.iter().enumerate() {
                s.push_str(&format!("{:>9.3}", means[ci][fi] - means[0][fi]));
            }
            s.push('\n');
        }
        for (ci, ckpt) in self.checkpoints.iter().enumerate() {
            for fi in 1..self.fractions.len() {
                if means[ci][fi] + 1e-12 < means[ci][fi - 1] {
                    s.push_str(&format!(
                        "note: {ckpt} mean accuracy decreases from {:.0}% to {:.0}% of labels \
                         ({:.3} -> {:.3})\n",
                        self.fractions[fi - 1] * 100.0,
                        self.fractions[fi] * 100.0,
                        means[ci][fi - 1],
                        means[ci][fi],
                    ));
                }
            }
        }
        s
    }
}

/// Finetune every checkpoint at every fraction and seed.
pub fn lowshot(
    ckpt_paths: &[std::path::PathBuf],
    data_dir: &Path,
    fractions: &[f64],
    seeds: &[u64],
) -> Result<LowshotReport> {
    if fractions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("fractions must be sorted strictly ascending".into()));
    }
    let mut cells = Vec::new();
    let mut checkpoints = Vec::new();
    for path in ckpt_paths {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "checkpoint".into());
        let label = format!(
            "{}/{}",
            path.parent()
                .and_then(|p| p.file_name())
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            id
        );
        checkpoints.push(label.clone());
        for &fraction in fractions {
            for &seed in seeds {
                let r = full_finetune(path, data_dir, fraction, seed)?;
                cells.push(LowshotCell { checkpoint: label.clone(), fraction, seed, top1: r.top1 });
            }
        }
    }
    Ok(LowshotReport { checkpoints, fractions: fractions.to_vec(), seeds: seeds.to_vec(), cells })
}

// ── Saliency ────────────────────────────────────────────────────────────────

/// Non-negative class-evidence map at the final-stage spatial grid.
#[derive(Debug, Clone)]
pub struct SaliencyMap {
    pub grid_h: usize,
    pub grid_w: usize,
    pub values: Vec<f64>,
    pub target_class: usize,
}

impl SaliencyMap {
    /// Bilinear upsample to the rendering resolution.
    pub fn upsample(&self, h: usize, w: usize) -> Vec<f64> {
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let sy = (y as f64 + 0.5) * self.grid_h as f64 / h as f64 - 0.5;
                let sx = (x as f64 + 0.5) * self.grid_w as f64 / w as f64 - 0.5;
                let y0 = sy.floor();
                let x0 = sx.floor();
                let fy = sy - y0;
                let fx = sx - x0;
                let yi = |v: f64| (v.max(0.0) as usize).min(self.grid_h - 1);
                let xi = |v: f64| (v.max(0.0) as usize).min(self.grid_w - 1);
                let (y0i, y1i) = (yi(y0), yi(y0 + 1.0));
                let (x0i, x1i) = (xi(x0), xi(x0 + 1.0));
                let g = |yy: usize, xx: usize| self.values[yy * self.grid_w + xx];
                out[y * w + x] = g(y0i, x0i) * (1.0 - fy) * (1.0 - fx)
                    + g(y0i, x1i) * (1.0 - fy) * fx
                    + g(y1i, x0i) * fy * (1.0 - fx)
                    + g(y1i, x1i) * fy * fx;
            }
        }
        out
    }
}

/// Class-gradient saliency: gradients of the class logit w.r.t. the final
/// conv stage, channel-averaged into weights, weighted activation sum,
/// rectified.
pub fn saliency(
    backbone: &Backbone,
    probe: &LinearProbe,
    clip: &Vol,
    class: usize,
) -> Result<SaliencyMap> {
    if class >= probe.num_classes {
        return Err(Error::OutOfRange(format!(
            "class {class} out of range for {} classes",
            probe.num_classes
        )));
    }
    let (_, final_act) = backbone.pathway.forward_activations(clip, &backbone.params)?;
    let dfeat = probe.feature_gradient(class);
    let n = (final_act.t * final_act.h * final_act.w) as f64;
    // d(logit)/d(activation[c,t,h,w]) = dfeat[c] / n, so the pooled-gradient
    // channel weight is dfeat[c] / n itself
    let weights: Vec<f64> = dfeat.iter().map(|g| g / n).collect();
    let mut values = vec![0.0; final_act.h * final_act.w];
    for y in 0..final_act.h {
        for x in 0..final_act.w {
            let mut acc = 0.0;
            for c in 0..final_act.c {
                let mut t_mean = 0.0;
                for t in 0..final_act.t {
                    t_mean += final_act.get(c, t, y, x);
                }
                acc += weights[c] * t_mean / final_act.t as f64;
            }
            values[y * final_act.w + x] = acc.max(0.0);
        }
    }
    Ok(SaliencyMap { grid_h: final_act.h, grid_w: final_act.w, values, target_class: class })
}

/// Fraction of total saliency mass inside a pixel bounding box
/// (y0, x0, y1, x1), inclusive, measured on an upsampled map.
pub fn mass_fraction(map: &[f64], h: usize, w: usize, bbox: (usize, usize, usize, usize)) -> f64 {
    let total: f64 = map.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let (y0, x0, y1, x1) = bbox;
    let mut inside = 0.0;
    for y in y0..=y1.min(h - 1) {
        for x in x0..=x1.min(w - 1) {
            inside += map[y * w + x];
        }
    }
    inside / total
}

/// Render a grayscale center frame with a red saliency overlay as a PNG,
/// upscaled by `scale`.
pub fn write_saliency_png(
    path: &Path,
    video: &LabeledVideo,
    map: &SaliencyMap,
    sampler: &SamplerConfig,
    scale: usize,
) -> Result<()> {
    let (h, w) = (video.h, video.w);
    let up = map.upsample(h, w);
    let peak = up.iter().cloned().fold(0.0f64, f64::max).max(1e-12);
    let span = (sampler.t_v - 1) * sampler.stride_v + 1;
    let t_mid = (video.t.saturating_sub(span)) / 2 + span / 2;
    let (oh, ow) = (h * scale, w * scale);
    let mut rgb = vec![0u8; oh * ow * 3];
    for y in 0..oh {
        for x in 0..ow {
            let sy = y / scale;
            let sx = x / scale;
            let r = video.frame_px(t_mid, sy, sx, 0) as f64;
            let g = video.frame_px(t_mid, sy, sx, 1) as f64;
            let b = video.frame_px(t_mid, sy, sx, 2) as f64;
            let gray = 0.299 * r + 0.587 * g + 0.114 * b;
            let heat = up[sy * w + sx] / peak;
            let base = (y * ow + x) * 3;
            rgb[base] = ((gray * (1.0 - heat) + heat) * 255.0).clamp(0.0, 255.0) as u8;
            rgb[base + 1] = ((gray * (1.0 - heat)) * 255.0).clamp(0.0, 255.0) as u8;
            rgb[base + 2] = ((gray * (1.0 - heat)) * 255.0).clamp(0.0, 255.0) as u8;
        }
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let file = std::fs::File::create(path)?;
    let mut encoder = png::Encoder::new(std::io::BufWriter::new(file), ow as u32, oh as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Format(format!("png header: {e}")))?;
    writer
        .write_image_data(&rgb)
        .map_err(|e| Error::Format(format!("png data: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TrainMode;
    use crate::motion::MotionKind;
    use crate::trainer::{generate_test_corpus, pretrain};
    use std::path::PathBuf;

    fn tmp(name: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("modist-evalkit-{name}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&d);
        std::fs::create_dir_all(&d).unwrap();
        d
    }

    /// Tiny end-to-end fixture: corpus plus a 1-epoch rgb_only checkpoint.
    fn fixture(root: &PathBuf) -> (PathBuf, PathBuf) {
        let mut cfg = TrainConfig::default();
        cfg.mode = TrainMode::RgbOnly;
        cfg.data_dir = root.join("data");
        cfg.motion_dir = root.join("motion").join("flow_edges");
        cfg.out_dir = root.join("out");
        cfg.epochs = 1;
        cfg.batch_size = 4;
        cfg.bank_capacity = 16;
        cfg.visual_channels = vec![8, 16, 32, 64];
        cfg.motion_channels = vec![1, 2, 4, 8];
        cfg.checkpoint_every = 0;
        generate_test_corpus(root, 4, 8, 8, 41, MotionKind::FlowEdges, cfg.sampler.lag).unwrap();
        let ckpt = pretrain(&cfg).unwrap();
        (ckpt, cfg.data_dir.clone())
    }

    #[test]
    fn probe_freezes_backbone_and_is_deterministic() {
        let root = tmp("probe");
        let (ckpt, data) = fixture(&root);
        let backbone = load_backbone(&ckpt).unwrap();
        let before = backbone.params.values.clone();
        let a = linear_probe(&ckpt, &data, 3).unwrap();
        let b = linear_probe(&ckpt, &data, 3).unwrap();
        assert_eq!(a.top1, b.top1, "same seed, same result");
        let after = load_backbone(&ckpt).unwrap();
        assert_eq!(before, after.params.values, "backbone on disk untouched");
        assert!(a.top1 >= 0.0 && a.top1 <= 1.0);
        assert_eq!(a.per_class.len(), 4);
    }

    #[test]
    fn permuted_labels_give_chance_level_accuracy() {
        let root = tmp("permuted");
        let (ckpt, data) = fixture(&root);
        let backbone = load_backbone(&ckpt).unwrap();
        let train = load_corpus(&data.join("probe_train"), None).unwrap();
        let test = load_corpus(&data.join("probe_test"), None).unwrap();
        let x_train = extract_features(&backbone, &train).unwrap();
        let mut y_train: Vec<usize> = train.items.iter().map(|i| i.video.label).collect();
        // destroy the signal with a label rotation
        for y in &mut y_train {
            *y = (*y + 1) % 4;
        }
        let probe = fit_linear_probe(&x_train, &y_train, 4, 0);
        let x_test = extract_features(&backbone, &test).unwrap();
        let y_test: Vec<usize> = test.items.iter().map(|i| i.video.label).collect();
        let preds: Vec<usize> = x_test.iter().map(|f| argmax(&probe.logits(f))).collect();
        let (top1, _) = accuracy_by_class(&preds, &y_test, 4);
        // chance = 0.25 over 8 test videos; 99% binomial CI is generous here
        let ci = crate::stats::binomial_ci_half_width(0.25, y_test.len(), 2.58);
        assert!(
            top1 <= 0.25 + ci + 1e-9,
            "permuted-label probe should be at chance: got {top1}, ci {ci}"
        );
    }

    #[test]
    fn stratified_subsets_cover_every_class() {
        let root = tmp("strat");
        let (_, data) = fixture(&root);
        let train = load_corpus(&data.join("probe_train"), None).unwrap();
        for fraction in [0.13, 0.5, 1.0] {
            let subset = stratified_subset(&train, fraction, 4, 0).unwrap();
            let mut seen = vec![false; 4];
            for idx in &subset {
                seen[train.items[*idx].video.label] = true;
            }
            assert!(seen.iter().all(|&s| s), "fraction {fraction} misses a class");
        }
        // per-class ceil arithmetic: 8 videos over 4 classes = 2 per class
        let subset = stratified_subset(&train, 0.5, 4, 0).unwrap();
        assert_eq!(subset.len(), 4, "ceil(0.5 * 2) = 1 per class");
        assert!(matches!(
            stratified_subset(&train, 0.0, 4, 0),
            Err(Error::Split(_))
        ));
    }

    #[test]
    fn lowshot_table_shape_and_fraction_ordering() {
        let root = tmp("lowshot");
        let (ckpt, data) = fixture(&root);
        // descending fractions are rejected
        assert!(lowshot(&[ckpt.clone()], &data, &[1.0, 0.5], &[0]).is_err());
        let report = lowshot(&[ckpt], &data, &[0.5, 1.0], &[0]).unwrap();
        assert_eq!(report.cells.len(), 2);
        let text = report.render();
        assert!(text.contains("50%") && text.contains("100%"), "{text}");
    }

    #[test]
    fn saliency_is_nonnegative_on_final_grid() {
        let root = tmp("saliency");
        let (ckpt, data) = fixture(&root);
        let (_, probe, backbone) = linear_probe_detailed(&ckpt, &data, 0).unwrap();
        let test = load_corpus(&data.join("probe_test"), None).unwrap();
        let clip = center_clip(&test.items[0].video, &backbone.train_config.sampler);
        let map = saliency(&backbone, &probe, &clip, 1).unwrap();
        assert!(map.values.iter().all(|&v| v >= 0.0));
        // final grid of the default-topology net at 32x32 input is 4x4
        assert_eq!((map.grid_h, map.grid_w), (4, 4));
        assert!(matches!(
            saliency(&backbone, &probe, &clip, 99),
            Err(Error::OutOfRange(_))
        ));
        // upsample + mass fraction behave sanely
        let up = map.upsample(32, 32);
        assert_eq!(up.len(), 32 * 32);
        let f = mass_fraction(&up, 32, 32, (0, 0, 31, 31));
        assert!(f == 0.0 || (f - 1.0).abs() < 1e-9, "whole-canvas fraction is 1, got {f}");
    }

    #[test]
    fn saliency_png_is_written() {
        let root = tmp("salpng");
        let (ckpt, data) = fixture(&root);
        let (_, probe, backbone) = linear_probe_detailed(&ckpt, &data, 0).unwrap();
        let test = load_corpus(&data.join("probe_test"), None).unwrap();
        let video = &test.items[0].video;
        let clip = center_clip(video, &backbone.train_config.sampler);
        let map = saliency(&backbone, &probe, &clip, 0).unwrap();
        let out = root.join("saliency.png");
        write_saliency_png(&out, video, &map, &backbone.train_config.sampler, 4).unwrap();
        let bytes = std::fs::read(&out).unwrap();
        assert_eq!(&bytes[1..4], b"PNG");
    }
}
