//! Pretraining: query/key routing through online/momentum encoders, the
//! contrastive objective, SGD with momentum and cosine-decayed learning rate,
//! bank maintenance and checkpointing. Also the supervised baseline and the
//! offline motion preprocessing step.
//!
//! Determinism: per-sample RNG streams are derived from (seed, step, slot),
//! the batch is processed in a fixed number of chunks whose partial gradients
//! are reduced in chunk order, and the epoch shuffle RNG is part of the
//! checkpointed state. Two runs with the same config and seed produce
//! bit-identical trajectories.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{TrainConfig, TrainMode};
use crate::contrastive::{
    pair_loss_grads, LossBreakdown, MemoryBank, PairEmbeddings,
};
use crate::datapipe::{
    augment_visual, eligible_motion_starts, make_pair, sample_visual_clip, ClipPair, MotionVideo,
};
use crate::encoders::{
    momentum_update, Embedding, EncoderParams, Modality, MomentumPair, Pathway, PathwayConfig,
    PathwayKind, ProjectionHead, Role,
};
use crate::error::{Error, Result};
use crate::io::{self, MotionSidecar, SidecarEntry, Split};
use crate::motion::{motion_energy, motion_map, MotionKind};
use crate::nn::{softmax_cross_entropy, Linear};
use crate::rng;
use crate::synthvid::LabeledVideo;

/// Fixed chunk count for batch parallelism; constant so the floating-point
/// reduction order never depends on the machine.
const GRAD_CHUNKS: usize = 8;

const INIT_VISUAL: u64 = 0xA110;
const INIT_MOTION: u64 = 0xA111;
const INIT_HEAD_V: u64 = 0xA112;
const INIT_HEAD_M: u64 = 0xA113;
const INIT_CLASSIFIER: u64 = 0xA114;
const SHUFFLE_SALT: u64 = 0xB200;
const PAIR_SALT: u64 = 0xB300;

// ── Networks and state ──────────────────────────────────────────────────────

/// The structural (parameter-free) description of all four networks.
pub struct Networks {
    pub visual: Pathway,
    pub motion: Pathway,
    pub head_v: ProjectionHead,
    pub head_m: ProjectionHead,
}

impl Networks {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        let visual = Pathway::new(cfg.visual_pathway())?;
        let motion = Pathway::new(cfg.motion_pathway())?;
        let head_v = ProjectionHead::new(visual.cfg.feature_dim(), cfg.proj_dim);
        let head_m = ProjectionHead::new(motion.cfg.feature_dim(), cfg.proj_dim);
        Ok(Self { visual, motion, head_v, head_m })
    }
}

/// Everything that evolves during pretraining.
pub struct PretrainState {
    pub visual: MomentumPair,
    pub motion: MomentumPair,
    pub head_v: MomentumPair,
    pub head_m: MomentumPair,
    pub bank_v: MemoryBank,
    pub bank_m: MemoryBank,
    pub vel_visual: Vec<f64>,
    pub vel_motion: Vec<f64>,
    pub vel_head_v: Vec<f64>,
    pub vel_head_m: Vec<f64>,
    /// Supervised-mode linear classifier over the pooled visual feature.
    pub classifier: Option<EncoderParams>,
    pub vel_classifier: Vec<f64>,
    pub num_classes: usize,
    pub step: u64,
    pub epoch: u32,
    pub shuffle_rng: ChaCha8Rng,
}

/// Fresh state: He-initialized online weights, momentum copies equal to the
/// online weights, empty banks, zero optimizer state.
pub fn init_state(cfg: &TrainConfig, nets: &Networks, num_classes: usize) -> PretrainState {
    let visual = nets.visual.init_params(&mut rng::stream(cfg.seed, &[INIT_VISUAL]));
    let motion = nets.motion.init_params(&mut rng::stream(cfg.seed, &[INIT_MOTION]));
    let head_v = nets.head_v.init_params(&mut rng::stream(cfg.seed, &[INIT_HEAD_V]));
    let head_m = nets.head_m.init_params(&mut rng::stream(cfg.seed, &[INIT_HEAD_M]));
    let classifier = if cfg.mode == TrainMode::Supervised {
        let mut lb = crate::nn::LayoutBuilder::new();
        let lin = Linear::new(&mut lb, "cls", nets.visual.cfg.feature_dim(), num_classes);
        let layout = lb.finish();
        let mut p = EncoderParams::zeros(layout.len);
        lin.init(&mut p.values, &mut rng::stream(cfg.seed, &[INIT_CLASSIFIER]));
        Some(p)
    } else {
        None
    };
    let vel_cls = classifier.as_ref().map_or(0, |c| c.values.len());
    PretrainState {
        vel_visual: vec![0.0; visual.values.len()],
        vel_motion: vec![0.0; motion.values.len()],
        vel_head_v: vec![0.0; head_v.values.len()],
        vel_head_m: vec![0.0; head_m.values.len()],
        visual: MomentumPair::new(visual, cfg.lambda),
        motion: MomentumPair::new(motion, cfg.lambda),
        head_v: MomentumPair::new(head_v, cfg.lambda),
        head_m: MomentumPair::new(head_m, cfg.lambda),
        bank_v: MemoryBank::new(Modality::Visual, cfg.bank_capacity, cfg.proj_dim),
        bank_m: MemoryBank::new(Modality::Motion, cfg.bank_capacity, cfg.proj_dim),
        classifier,
        vel_classifier: vec![0.0; vel_cls],
        num_classes,
        step: 0,
        epoch: 0,
        shuffle_rng: rng::stream(cfg.seed, &[SHUFFLE_SALT]),
    }
}

/// Supervised-mode classifier layer rebuilt from dimensions.
pub fn classifier_layer(feature_dim: usize, num_classes: usize) -> Linear {
    let mut lb = crate::nn::LayoutBuilder::new();
    let lin = Linear::new(&mut lb, "cls", feature_dim, num_classes);
    let _ = lb.finish();
    lin
}

// ── Corpus ──────────────────────────────────────────────────────────────────

/// One video plus (when the mode needs it) its preprocessed motion maps.
pub struct TrainItem {
    pub video: LabeledVideo,
    pub motion: Option<MotionVideo>,
}

pub struct Corpus {
    pub class_names: Vec<String>,
    pub items: Vec<TrainItem>,
}

/// Load a split directory; when `motion_dir` is given, pair each video with
/// its preprocessed motion maps and sidecar energies.
pub fn load_corpus(
    split_dir: &Path,
    motion_dir: Option<(&Path, MotionKind, usize)>,
) -> Result<Corpus> {
    let (manifest, videos) = crate::synthvid::load_split(split_dir)?;
    let mut motion_by_index = std::collections::HashMap::new();
    if let Some((dir, kind, lag)) = motion_dir {
        let sidecar = io::read_sidecar(&dir.join("motion_manifest.txt"))?;
        if sidecar.kind != kind.as_str() {
            return Err(Error::Config(format!(
                "motion dir holds kind `{}` but config wants `{}`",
                sidecar.kind,
                kind.as_str()
            )));
        }
        if sidecar.lag != lag {
            return Err(Error::Config(format!(
                "motion dir preprocessed with lag {} but config wants {lag}",
                sidecar.lag
            )));
        }
        for entry in &sidecar.entries {
            let mf = io::read_motion(&dir.join(&entry.rel_path))?;
            motion_by_index.insert(
                entry.video_index,
                MotionVideo {
                    video_index: entry.video_index,
                    kind,
                    t: mf.t,
                    h: mf.h,
                    w: mf.w,
                    maps: mf.maps,
                    energies: entry.energies.clone(),
                },
            );
        }
    }
    let items = videos
        .into_iter()
        .map(|video| {
            let motion = motion_by_index.remove(&video.video_index);
            TrainItem { video, motion }
        })
        .collect();
    Ok(Corpus { class_names: manifest.class_names, items })
}

// ── Preprocessing ───────────────────────────────────────────────────────────

/// Compute per-frame motion maps for every video of a split and persist them
/// with a sidecar of per-frame energies (negative = map undefined).
pub fn preprocess_split(
    split_dir: &Path,
    kind: MotionKind,
    lag: usize,
    out_dir: &Path,
) -> Result<MotionSidecar> {
    let (manifest, videos) = crate::synthvid::load_split(split_dir)?;
    std::fs::create_dir_all(out_dir)?;
    let min_frame = kind.min_frame(lag);
    let entries: Vec<Result<SidecarEntry>> = videos
        .par_iter()
        .map(|video| -> Result<SidecarEntry> {
            let plane = video.h * video.w;
            let mut maps = vec![0.0f32; video.t * plane];
            let mut energies = vec![-1.0; video.t];
            for t in min_frame..video.t {
                let m = motion_map(video, t, kind, lag)?;
                for (i, &v) in m.data.iter().enumerate() {
                    maps[t * plane + i] = v as f32;
                }
                energies[t] = motion_energy(&m);
            }
            let rel_path = format!("v{:06}.mot", video.video_index);
            io::write_motion(
                &out_dir.join(&rel_path),
                &io::MotionFile { t: video.t, h: video.h, w: video.w, maps },
            )?;
            Ok(SidecarEntry {
                video_index: video.video_index,
                rel_path,
                num_frames: video.t,
                energies,
            })
        })
        .collect();
    let entries = entries.into_iter().collect::<Result<Vec<_>>>()?;
    let sidecar = MotionSidecar { kind: kind.as_str().to_string(), lag, entries };
    io::write_sidecar(&out_dir.join("motion_manifest.txt"), &sidecar)?;
    let _ = manifest;
    Ok(sidecar)
}

// ── Optimizer ───────────────────────────────────────────────────────────────

/// Cosine-decayed learning rate without warm-up.
pub fn cosine_lr(lr0: f64, step: u64, total_steps: u64) -> f64 {
    if total_steps == 0 {
        return lr0;
    }
    let p = (step.min(total_steps)) as f64 / total_steps as f64;
    0.5 * lr0 * (1.0 + (std::f64::consts::PI * p).cos())
}

/// SGD with momentum and weight decay over one parameter group.
/// `grad_scale` folds in the 1/batch factor.
pub(crate) fn sgd_group(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    mu: f64,
    wd: f64,
    grad_scale: f64,
) {
    for i in 0..params.len() {
        let g = grads[i] * grad_scale + wd * params[i];
        velocity[i] = mu * velocity[i] + g;
        params[i] -= lr * velocity[i];
    }
}

// ── Pretraining step ────────────────────────────────────────────────────────

struct GradBuffers {
    visual: Vec<f64>,
    motion: Vec<f64>,
    head_v: Vec<f64>,
    head_m: Vec<f64>,
}

impl GradBuffers {
    fn new(nets: &Networks) -> Self {
        Self {
            visual: vec![0.0; nets.visual.param_count()],
            motion: vec![0.0; nets.motion.param_count()],
            head_v: vec![0.0; nets.head_v.layout.len],
            head_m: vec![0.0; nets.head_m.layout.len],
        }
    }

    fn merge(&mut self, other: &GradBuffers) {
        crate::tensor::axpy(1.0, &other.visual, &mut self.visual);
        crate::tensor::axpy(1.0, &other.motion, &mut self.motion);
        crate::tensor::axpy(1.0, &other.head_v, &mut self.head_v);
        crate::tensor::axpy(1.0, &other.head_m, &mut self.head_m);
    }
}

struct SampleOut {
    l_v: f64,
    l_m: f64,
    l_mv: f64,
    key_v: Embedding,
    key_m: Option<Embedding>,
}

fn process_pair(
    pair: &ClipPair,
    nets: &Networks,
    state: &PretrainState,
    ccfg: &crate::contrastive::ContrastiveConfig,
    buf: &mut GradBuffers,
) -> Result<SampleOut> {
    let idx = pair.video_index;
    // queries through the online encoders (cached for backward)
    let (f_vq, cache_v) = nets.visual.forward_cached(&pair.v_query.vol, &state.visual.online)?;
    let (e_vq, cache_hv) = nets.head_v.forward_cached(&f_vq, &state.head_v.online)?;
    let v_q = Embedding { vector: e_vq, modality: Modality::Visual, role: Role::Query, video_index: idx };
    // keys through the momentum encoders (no gradient kept)
    let f_vk = nets.visual.forward(&pair.v_key.vol, &state.visual.momentum)?;
    let v_k = crate::encoders::project(
        &f_vk,
        &nets.head_v,
        &state.head_v.momentum,
        Modality::Visual,
        Role::Key,
        idx,
    )?;
    let mut m_q = None;
    let mut m_k = None;
    let mut motion_caches = None;
    if let (Some(mq_clip), Some(mk_clip)) = (&pair.m_query, &pair.m_key) {
        let (f_mq, cache_m) = nets.motion.forward_cached(&mq_clip.to_vol(), &state.motion.online)?;
        let (e_mq, cache_hm) = nets.head_m.forward_cached(&f_mq, &state.head_m.online)?;
        m_q = Some(Embedding {
            vector: e_mq,
            modality: Modality::Motion,
            role: Role::Query,
            video_index: idx,
        });
        let f_mk = nets.motion.forward(&mk_clip.to_vol(), &state.motion.momentum)?;
        m_k = Some(crate::encoders::project(
            &f_mk,
            &nets.head_m,
            &state.head_m.momentum,
            Modality::Motion,
            Role::Key,
            idx,
        )?);
        motion_caches = Some((cache_m, cache_hm));
    }
    let pair_emb = PairEmbeddings {
        v_q,
        v_k: v_k.clone(),
        m_q,
        m_k: m_k.clone(),
        video_index: idx,
    };
    let grads = pair_loss_grads(&pair_emb, &state.bank_v, &state.bank_m, ccfg)?;
    // backprop the visual query
    let d_feat_v = nets.head_v.backward(&grads.d_v_q, &cache_hv, &state.head_v.online, &mut buf.head_v);
    nets.visual.backward(&d_feat_v, &cache_v, &state.visual.online, &mut buf.visual);
    // backprop the motion query
    if let (Some(d_m_q), Some((cache_m, cache_hm))) = (&grads.d_m_q, &motion_caches) {
        let d_feat_m = nets.head_m.backward(d_m_q, cache_hm, &state.head_m.online, &mut buf.head_m);
        nets.motion.backward(&d_feat_m, cache_m, &state.motion.online, &mut buf.motion);
    }
    Ok(SampleOut { l_v: grads.l_v, l_m: grads.l_m, l_mv: grads.l_mv, key_v: v_k, key_m: m_k })
}

/// One optimization step: loss, gradients on online parameters only, SGD,
/// momentum update, key push, step counter increment.
pub fn pretrain_step(
    batch: &[ClipPair],
    state: &mut PretrainState,
    nets: &Networks,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::Config("pretrain_step needs a non-empty batch".into()));
    }
    let ccfg = cfg.contrastive();
    let chunk_size = batch.len().div_ceil(GRAD_CHUNKS);
    let chunks: Vec<&[ClipPair]> = batch.chunks(chunk_size).collect();
    let state_ref = &*state;
    let results: Vec<Result<(GradBuffers, Vec<SampleOut>)>> = chunks
        .par_iter()
        .map(|chunk| {
            let mut buf = GradBuffers::new(nets);
            let mut outs = Vec::with_capacity(chunk.len());
            for pair in *chunk {
                outs.push(process_pair(pair, nets, state_ref, &ccfg, &mut buf)?);
            }
            Ok((buf, outs))
        })
        .collect();

    let mut grads = GradBuffers::new(nets);
    let mut outs = Vec::with_capacity(batch.len());
    for r in results {
        let (buf, mut chunk_outs) = r?;
        grads.merge(&buf);
        outs.append(&mut chunk_outs);
    }

    let b = batch.len() as f64;
    let l_v = outs.iter().map(|o| o.l_v).sum::<f64>() / b;
    let l_m = outs.iter().map(|o| o.l_m).sum::<f64>() / b;
    let l_mv = outs.iter().map(|o| o.l_mv).sum::<f64>() / b;
    let total = ccfg.w_v * l_v + ccfg.w_m * l_m + ccfg.w_mv * l_mv;
    let breakdown = LossBreakdown { l_v, l_m, l_mv, total };

    // Divergence guard, scaled by the number of active InfoNCE terms: the
    // cross-modal terms start well above ln(N+1) by construction (visual and
    // motion embeddings begin in different clusters), so a per-term budget of
    // 3 ln(N+1) separates healthy warm-up from actual blow-up.
    let active_terms = (ccfg.w_v > 0.0) as u32 + (ccfg.w_m > 0.0) as u32
        + if ccfg.w_mv > 0.0 { 2 } else { 0 };
    let divergence_ceiling =
        3.0 * ((cfg.bank_capacity + 1) as f64).ln() * active_terms.max(1) as f64;
    if !breakdown.is_finite() || total > divergence_ceiling {
        return Err(Error::Divergence(format!(
            "step {}: total loss {total} (ceiling {divergence_ceiling}); \
             l_v={l_v} l_m={l_m} l_mv={l_mv} lr={lr}",
            state.step
        )));
    }

    // gradients apply to online parameters only
    let scale = 1.0 / b;
    sgd_group(
        &mut state.visual.online.values,
        &grads.visual,
        &mut state.vel_visual,
        lr,
        cfg.sgd_momentum,
        cfg.weight_decay,
        scale,
    );
    sgd_group(
        &mut state.head_v.online.values,
        &grads.head_v,
        &mut state.vel_head_v,
        lr,
        cfg.sgd_momentum,
        cfg.weight_decay,
        scale,
    );
    if cfg.mode.uses_motion() {
        sgd_group(
            &mut state.motion.online.values,
            &grads.motion,
            &mut state.vel_motion,
            lr,
            cfg.sgd_momentum,
            cfg.weight_decay,
            scale,
        );
        sgd_group(
            &mut state.head_m.online.values,
            &grads.head_m,
            &mut state.vel_head_m,
            lr,
            cfg.sgd_momentum,
            cfg.weight_decay,
            scale,
        );
    }

    momentum_update(&mut state.visual)?;
    momentum_update(&mut state.head_v)?;
    if cfg.mode.uses_motion() {
        momentum_update(&mut state.motion)?;
        momentum_update(&mut state.head_m)?;
    }

    // keys enter the banks in batch order, after the loss used the old bank
    for out in &outs {
        state.bank_v.push(&out.key_v)?;
        if let Some(km) = &out.key_m {
            state.bank_m.push(km)?;
        }
    }
    state.step += 1;
    Ok(breakdown)
}

// ── Pretraining driver ──────────────────────────────────────────────────────

/// Indices of corpus items eligible under the sampler config and mode.
pub fn eligible_items(corpus: &Corpus, cfg: &TrainConfig) -> (Vec<usize>, Vec<u64>) {
    let mut eligible = Vec::new();
    let mut skipped = Vec::new();
    let span_ok = |t: usize| t >= cfg.sampler.t_v * cfg.sampler.stride_v;
    for (i, item) in corpus.items.iter().enumerate() {
        let mut ok = span_ok(item.video.t);
        if ok && cfg.mode.uses_motion() {
            match &item.motion {
                Some(mv) => {
                    let mut starts = eligible_motion_starts(mv, &cfg.sampler);
                    if cfg.sync_mode {
                        let v_max = item.video.t - ((cfg.sampler.t_v - 1) * cfg.sampler.stride_v + 1);
                        starts.retain(|&s| s <= v_max);
                    }
                    ok = !starts.is_empty();
                }
                None => ok = false,
            }
        }
        if ok {
            eligible.push(i);
        } else {
            skipped.push(item.video.video_index);
        }
    }
    (eligible, skipped)
}

fn shuffle<T>(xs: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..xs.len()).rev() {
        let j = rng.gen_range(0..=i);
        xs.swap(i, j);
    }
}

/// Assemble one batch of clip pairs with per-slot derived RNG streams.
fn assemble_batch(
    corpus: &Corpus,
    indices: &[usize],
    cfg: &TrainConfig,
    step: u64,
) -> Result<Vec<ClipPair>> {
    indices
        .par_iter()
        .enumerate()
        .map(|(slot, &item_idx)| {
            let item = &corpus.items[item_idx];
            let mut r = rng::stream(cfg.seed, &[PAIR_SALT, step, slot as u64]);
            let motion = if cfg.mode.uses_motion() { item.motion.as_ref() } else { None };
            make_pair(&item.video, motion, &mut r, &cfg.sampler, &cfg.aug, cfg.sync_mode)
        })
        .collect()
}

/// Run contrastive pretraining (modist or rgb_only mode); returns the final
/// checkpoint path. On divergence the last good checkpoint is retained and a
/// diagnostic dump is written next to it.
pub fn pretrain(cfg: &TrainConfig) -> Result<PathBuf> {
    cfg.validate()?;
    if cfg.mode == TrainMode::Supervised {
        return supervised_pretrain(cfg);
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("config.txt"), cfg.to_text())?;
    let split_dir = cfg.data_dir.join("pretrain");
    let motion_dir = if cfg.mode.uses_motion() {
        Some((cfg.motion_dir.as_path(), cfg.motion_kind, cfg.sampler.lag))
    } else {
        None
    };
    let corpus = load_corpus(&split_dir, motion_dir)?;
    let (eligible, skipped) = eligible_items(&corpus, cfg);
    if !skipped.is_empty() {
        let lines: Vec<String> = skipped.iter().map(|i| i.to_string()).collect();
        std::fs::write(cfg.out_dir.join("skipped.txt"), lines.join("\n") + "\n")?;
        eprintln!("skipping {} ineligible videos (see skipped.txt)", skipped.len());
    }
    if eligible.is_empty() {
        return Err(Error::Config("no eligible videos in the pretrain split".into()));
    }

    let nets = Networks::new(cfg)?;
    let mut state = init_state(cfg, &nets, corpus.class_names.len());
    let steps_per_epoch = (eligible.len() / cfg.batch_size).max(1) as u64;
    let total_steps = steps_per_epoch * cfg.epochs as u64;
    let log_path = cfg.out_dir.join("train_log.txt");
    let _ = std::fs::remove_file(&log_path);

    let mut last_ckpt = cfg.out_dir.join("ckpt_init.ckpt");
    save_checkpoint(&state, &nets, cfg, &last_ckpt)?;

    for epoch in 0..cfg.epochs {
        state.epoch = epoch as u32;
        let mut order = eligible.clone();
        shuffle(&mut order, &mut state.shuffle_rng);
        for batch_indices in order.chunks(cfg.batch_size) {
            if batch_indices.len() < cfg.batch_size && order.len() >= cfg.batch_size {
                continue; // drop ragged tail batch when full batches exist
            }
            let batch = assemble_batch(&corpus, batch_indices, cfg, state.step)?;
            let lr = cosine_lr(cfg.learning_rate, state.step, total_steps);
            let step_now = state.step;
            let fill_v = state.bank_v.len();
            match pretrain_step(&batch, &mut state, &nets, cfg, lr) {
                Ok(lb) => {
                    if cfg.log_every > 0 && step_now % cfg.log_every as u64 == 0 {
                        io::append_record(
                            &log_path,
                            &[
                                ("step", step_now.to_string()),
                                ("epoch", epoch.to_string()),
                                ("l_v", format!("{:.6}", lb.l_v)),
                                ("l_m", format!("{:.6}", lb.l_m)),
                                ("l_mv", format!("{:.6}", lb.l_mv)),
                                ("total", format!("{:.6}", lb.total)),
                                ("lr", format!("{:.6}", lr)),
                                ("fill_v", fill_v.to_string()),
                            ],
                        )?;
                    }
                }
                Err(Error::Divergence(msg)) => {
                    std::fs::write(
                        cfg.out_dir.join("divergence_dump.txt"),
                        format!("{msg}\nlast_good_checkpoint = {}\n", last_ckpt.display()),
                    )?;
                    return Err(Error::Divergence(msg));
                }
                Err(e) => return Err(e),
            }
        }
        if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
            let path = cfg.out_dir.join(format!("ckpt_epoch{:04}.ckpt", epoch + 1));
            save_checkpoint(&state, &nets, cfg, &path)?;
            last_ckpt = path;
        }
    }
    let final_path = cfg.out_dir.join("final.ckpt");
    save_checkpoint(&state, &nets, cfg, &final_path)?;
    Ok(final_path)
}

// ── Supervised baseline ─────────────────────────────────────────────────────

/// Train the visual pathway plus a linear classifier with cross-entropy on
/// the motion-class labels of the pretrain split.
pub fn supervised_pretrain(cfg: &TrainConfig) -> Result<PathBuf> {
    cfg.validate()?;
    if cfg.mode != TrainMode::Supervised {
        return Err(Error::Config("supervised_pretrain needs mode = supervised".into()));
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("config.txt"), cfg.to_text())?;
    let corpus = load_corpus(&cfg.data_dir.join("pretrain"), None)?;
    let num_classes = corpus.class_names.len();
    let (eligible, _) = eligible_items(&corpus, cfg);
    if eligible.is_empty() {
        return Err(Error::Config("no eligible videos in the pretrain split".into()));
    }
    let nets = Networks::new(cfg)?;
    let classifier = classifier_layer(nets.visual.cfg.feature_dim(), num_classes);
    let mut state = init_state(cfg, &nets, num_classes);
    let steps_per_epoch = (eligible.len() / cfg.batch_size).max(1) as u64;
    let total_steps = steps_per_epoch * cfg.epochs as u64;
    let log_path = cfg.out_dir.join("train_log.txt");
    let _ = std::fs::remove_file(&log_path);

    for epoch in 0..cfg.epochs {
        state.epoch = epoch as u32;
        let mut order = eligible.clone();
        shuffle(&mut order, &mut state.shuffle_rng);
        let mut correct = 0usize;
        let mut seen = 0usize;
        let mut ce_sum = 0.0;
        let mut ce_batches = 0usize;
        for batch_indices in order.chunks(cfg.batch_size) {
            if batch_indices.len() < cfg.batch_size && order.len() >= cfg.batch_size {
                continue;
            }
            let step = state.step;
            // assemble (clip, label) samples in parallel with derived streams
            let samples: Vec<Result<(crate::tensor::Vol, usize)>> = batch_indices
                .par_iter()
                .enumerate()
                .map(|(slot, &item_idx)| {
                    let item = &corpus.items[item_idx];
                    let mut r = rng::stream(cfg.seed, &[PAIR_SALT, step, slot as u64]);
                    let clip = sample_visual_clip(&item.video, &mut r, &cfg.sampler)?;
                    let clip = augment_visual(&clip, &mut r, &cfg.aug)?;
                    Ok((clip.vol, item.video.label))
                })
                .collect();
            let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;

            let chunk_size = samples.len().div_ceil(GRAD_CHUNKS);
            let state_ref = &state;
            let results: Vec<Result<(Vec<f64>, Vec<f64>, f64, usize)>> = samples
                .chunks(chunk_size)
                .collect::<Vec<_>>()
                .par_iter()
                .map(|chunk| {
                    let mut g_visual = vec![0.0; nets.visual.param_count()];
                    let mut g_cls = vec![0.0; state_ref.classifier.as_ref().unwrap().values.len()];
                    let mut ce = 0.0;
                    let mut hits = 0usize;
                    for (vol, label) in *chunk {
                        let (feat, cache) =
                            nets.visual.forward_cached(vol, &state_ref.visual.online)?;
                        let cls = state_ref.classifier.as_ref().unwrap();
                        let logits = classifier.forward(&feat, &cls.values);
                        if crate::nn::argmax(&logits) == *label {
                            hits += 1;
                        }
                        let (loss, dlogits) = softmax_cross_entropy(&logits, *label);
                        ce += loss;
                        let dfeat = classifier.backward(&feat, &cls.values, &dlogits, &mut g_cls);
                        nets.visual.backward(&dfeat, &cache, &state_ref.visual.online, &mut g_visual);
                    }
                    Ok((g_visual, g_cls, ce, hits))
                })
                .collect();

            let mut g_visual = vec![0.0; nets.visual.param_count()];
            let mut g_cls = vec![0.0; state.classifier.as_ref().unwrap().values.len()];
            let mut ce = 0.0;
            let mut hits = 0usize;
            for r in results {
                let (gv, gc, c, h) = r?;
                crate::tensor::axpy(1.0, &gv, &mut g_visual);
                crate::tensor::axpy(1.0, &gc, &mut g_cls);
                ce += c;
                hits += h;
            }
            let b = samples.len() as f64;
            let ce_mean = ce / b;
            if !ce_mean.is_finite() {
                return Err(Error::Divergence(format!("step {step}: non-finite loss")));
            }
            let lr = cosine_lr(cfg.learning_rate, state.step, total_steps);
            sgd_group(
                &mut state.visual.online.values,
                &g_visual,
                &mut state.vel_visual,
                lr,
                cfg.sgd_momentum,
                cfg.weight_decay,
                1.0 / b,
            );
            sgd_group(
                &mut state.classifier.as_mut().unwrap().values,
                &g_cls,
                &mut state.vel_classifier,
                lr,
                cfg.sgd_momentum,
                cfg.weight_decay,
                1.0 / b,
            );
            state.step += 1;
            correct += hits;
            seen += samples.len();
            ce_sum += ce_mean;
            ce_batches += 1;
        }
        let acc = if seen > 0 { correct as f64 / seen as f64 } else { 0.0 };
        io::append_record(
            &log_path,
            &[
                ("epoch", epoch.to_string()),
                ("step", state.step.to_string()),
                ("ce", format!("{:.6}", ce_sum / ce_batches.max(1) as f64)),
                ("train_acc", format!("{:.4}", acc)),
            ],
        )?;
    }
    let final_path = cfg.out_dir.join("final.ckpt");
    save_checkpoint(&state, &nets, cfg, &final_path)?;
    Ok(final_path)
}

// ── Checkpoints ─────────────────────────────────────────────────────────────

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MDCKPT01";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A fully parsed checkpoint file.
pub struct Checkpoint {
    pub version: u32,
    pub mode: TrainMode,
    pub step: u64,
    pub epoch: u32,
    pub num_classes: u32,
    pub lambda: f64,
    pub config_text: String,
    pub visual_cfg: PathwayConfig,
    pub motion_cfg: PathwayConfig,
    pub blocks: Vec<(String, Vec<f64>)>,
    pub banks: Vec<(Modality, usize, usize, Vec<(Vec<f64>, u64)>, usize)>,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
}

impl Checkpoint {
    pub fn block(&self, name: &str) -> Result<&Vec<f64>> {
        self.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
            .ok_or_else(|| Error::Format(format!("checkpoint missing block `{name}`")))
    }

    /// Configuration error if the stored visual pathway does not match.
    pub fn require_visual_config(&self, expected: &PathwayConfig) -> Result<()> {
        if &self.visual_cfg != expected {
            return Err(Error::Config(format!(
                "checkpoint visual pathway {:?} does not match expected {:?}",
                self.visual_cfg, expected
            )));
        }
        Ok(())
    }

    /// The TrainConfig this checkpoint was produced with.
    pub fn train_config(&self) -> Result<TrainConfig> {
        TrainConfig::from_text(&self.config_text)
    }
}

fn w_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn w_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn w_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn w_string(w: &mut impl Write, s: &str) -> Result<()> {
    w_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn w_f64_block(w: &mut impl Write, data: &[f64]) -> Result<()> {
    w_u64(w, data.len() as u64)?;
    let mut buf = Vec::with_capacity(data.len() * 8);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn r_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::Format("truncated checkpoint".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn r_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| Error::Format("truncated checkpoint".into()))?;
    Ok(u64::from_le_bytes(b))
}

fn r_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| Error::Format("truncated checkpoint".into()))?;
    Ok(f64::from_le_bytes(b))
}

fn r_string(r: &mut impl Read) -> Result<String> {
    let n = r_u32(r)? as usize;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b).map_err(|_| Error::Format("truncated checkpoint".into()))?;
    String::from_utf8(b).map_err(|_| Error::Format("bad utf8 in checkpoint".into()))
}

fn r_f64_block(r: &mut impl Read) -> Result<Vec<f64>> {
    let n = r_u64(r)? as usize;
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf).map_err(|_| Error::Format("truncated checkpoint".into()))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
        .collect())
}

fn w_pathway_cfg(w: &mut impl Write, cfg: &PathwayConfig) -> Result<()> {
    w.write_all(&[match cfg.kind {
        PathwayKind::Visual => 0u8,
        PathwayKind::Motion => 1u8,
    }])?;
    w_u32(w, cfg.in_channels as u32)?;
    w_u32(w, cfg.clip_len as u32)?;
    w_u32(w, cfg.canvas as u32)?;
    w_u32(w, cfg.proj_dim as u32)?;
    w_u32(w, cfg.stage_channels.len() as u32)?;
    for &c in &cfg.stage_channels {
        w_u32(w, c as u32)?;
    }
    Ok(())
}

fn r_pathway_cfg(r: &mut impl Read) -> Result<PathwayConfig> {
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind).map_err(|_| Error::Format("truncated checkpoint".into()))?;
    let kind = match kind[0] {
        0 => PathwayKind::Visual,
        1 => PathwayKind::Motion,
        other => return Err(Error::Format(format!("bad pathway kind {other}"))),
    };
    let in_channels = r_u32(r)? as usize;
    let clip_len = r_u32(r)? as usize;
    let canvas = r_u32(r)? as usize;
    let proj_dim = r_u32(r)? as usize;
    let n = r_u32(r)? as usize;
    let mut stage_channels = Vec::with_capacity(n);
    for _ in 0..n {
        stage_channels.push(r_u32(r)? as usize);
    }
    Ok(PathwayConfig { kind, stage_channels, in_channels, clip_len, canvas, proj_dim })
}

/// Serialize the full training state.
pub fn save_checkpoint(
    state: &PretrainState,
    nets: &Networks,
    cfg: &TrainConfig,
    path: &Path,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w_u32(&mut w, CHECKPOINT_VERSION)?;
    w_u32(&mut w, match cfg.mode {
        TrainMode::Modist => 0,
        TrainMode::RgbOnly => 1,
        TrainMode::Supervised => 2,
    })?;
    w_u64(&mut w, state.step)?;
    w_u32(&mut w, state.epoch)?;
    w_u32(&mut w, state.classifier.as_ref().map_or(0, |_| state.num_classes as u32))?;
    w_f64(&mut w, cfg.lambda)?;
    w_string(&mut w, &cfg.to_text())?;
    w_pathway_cfg(&mut w, &nets.visual.cfg)?;
    w_pathway_cfg(&mut w, &nets.motion.cfg)?;

    let mut blocks: Vec<(&str, &[f64])> = vec![
        ("visual.online", &state.visual.online.values),
        ("visual.momentum", &state.visual.momentum.values),
        ("motion.online", &state.motion.online.values),
        ("motion.momentum", &state.motion.momentum.values),
        ("head_v.online", &state.head_v.online.values),
        ("head_v.momentum", &state.head_v.momentum.values),
        ("head_m.online", &state.head_m.online.values),
        ("head_m.momentum", &state.head_m.momentum.values),
        ("opt.vel.visual", &state.vel_visual),
        ("opt.vel.motion", &state.vel_motion),
        ("opt.vel.head_v", &state.vel_head_v),
        ("opt.vel.head_m", &state.vel_head_m),
    ];
    if let Some(cls) = &state.classifier {
        blocks.push(("classifier", &cls.values));
        blocks.push(("opt.vel.classifier", &state.vel_classifier));
    }
    w_u32(&mut w, blocks.len() as u32)?;
    for (name, data) in blocks {
        w_string(&mut w, name)?;
        w_f64_block(&mut w, data)?;
    }

    w_u32(&mut w, 2)?;
    for bank in [&state.bank_v, &state.bank_m] {
        let (entries, cursor) = bank.raw_state();
        w.write_all(&[match bank.modality {
            Modality::Visual => 0u8,
            Modality::Motion => 1u8,
        }])?;
        w_u32(&mut w, bank.capacity as u32)?;
        w_u32(&mut w, bank.dim as u32)?;
        w_u32(&mut w, entries.len() as u32)?;
        w_u32(&mut w, cursor as u32)?;
        for (v, idx) in entries {
            w_u64(&mut w, *idx)?;
            for x in v {
                w_f64(&mut w, *x)?;
            }
        }
    }

    w.write_all(&state.shuffle_rng.get_seed())?;
    w.write_all(&state.shuffle_rng.get_word_pos().to_le_bytes())?;
    w.flush()?;
    Ok(())
}

/// Parse a checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| Error::Format("truncated checkpoint".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("{}: bad checkpoint magic", path.display())));
    }
    let version = r_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mode = match r_u32(&mut r)? {
        0 => TrainMode::Modist,
        1 => TrainMode::RgbOnly,
        2 => TrainMode::Supervised,
        other => return Err(Error::Format(format!("bad mode tag {other}"))),
    };
    let step = r_u64(&mut r)?;
    let epoch = r_u32(&mut r)?;
    let num_classes = r_u32(&mut r)?;
    let lambda = r_f64(&mut r)?;
    let config_text = r_string(&mut r)?;
    let visual_cfg = r_pathway_cfg(&mut r)?;
    let motion_cfg = r_pathway_cfg(&mut r)?;
    let n_blocks = r_u32(&mut r)? as usize;
    let mut blocks = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let name = r_string(&mut r)?;
        let data = r_f64_block(&mut r)?;
        blocks.push((name, data));
    }
    let n_banks = r_u32(&mut r)? as usize;
    let mut banks = Vec::with_capacity(n_banks);
    for _ in 0..n_banks {
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag).map_err(|_| Error::Format("truncated checkpoint".into()))?;
        let modality = match tag[0] {
            0 => Modality::Visual,
            1 => Modality::Motion,
            other => return Err(Error::Format(format!("bad bank modality {other}"))),
        };
        let capacity = r_u32(&mut r)? as usize;
        let dim = r_u32(&mut r)? as usize;
        let len = r_u32(&mut r)? as usize;
        let cursor = r_u32(&mut r)? as usize;
        let mut entries = Vec::with_capacity(len);
        for _ in 0..len {
            let idx = r_u64(&mut r)?;
            let mut v = Vec::with_capacity(dim);
            for _ in 0..dim {
                v.push(r_f64(&mut r)?);
            }
            entries.push((v, idx));
        }
        banks.push((modality, capacity, dim, entries, cursor));
    }
    let mut rng_seed = [0u8; 32];
    r.read_exact(&mut rng_seed).map_err(|_| Error::Format("truncated checkpoint".into()))?;
    let mut pos = [0u8; 16];
    r.read_exact(&mut pos).map_err(|_| Error::Format("truncated checkpoint".into()))?;
    let rng_word_pos = u128::from_le_bytes(pos);
    Ok(Checkpoint {
        version,
        mode,
        step,
        epoch,
        num_classes,
        lambda,
        config_text,
        visual_cfg,
        motion_cfg,
        blocks,
        banks,
        rng_seed,
        rng_word_pos,
    })
}

/// Rebuild a live training state from a checkpoint. The caller's config must
/// produce the same network structure as the checkpoint.
pub fn restore_state(ckpt: &Checkpoint, nets: &Networks, cfg: &TrainConfig) -> Result<PretrainState> {
    ckpt.require_visual_config(&nets.visual.cfg)?;
    if ckpt.motion_cfg != nets.motion.cfg {
        return Err(Error::Config("checkpoint motion pathway mismatch".into()));
    }
    let get = |name: &str| -> Result<EncoderParams> {
        Ok(EncoderParams { values: ckpt.block(name)?.clone() })
    };
    let pair = |online: &str, momentum: &str| -> Result<MomentumPair> {
        Ok(MomentumPair { online: get(online)?, momentum: get(momentum)?, lambda: cfg.lambda })
    };
    let mut bank_v = None;
    let mut bank_m = None;
    for (modality, capacity, dim, entries, cursor) in &ckpt.banks {
        let bank = MemoryBank::restore(*modality, *capacity, *dim, entries.clone(), *cursor)?;
        match modality {
            Modality::Visual => bank_v = Some(bank),
            Modality::Motion => bank_m = Some(bank),
        }
    }
    let classifier = if ckpt.num_classes > 0 { Some(get("classifier")?) } else { None };
    let vel_classifier = if ckpt.num_classes > 0 {
        ckpt.block("opt.vel.classifier")?.clone()
    } else {
        Vec::new()
    };
    let mut shuffle_rng = ChaCha8Rng::from_seed(ckpt.rng_seed);
    shuffle_rng.set_word_pos(ckpt.rng_word_pos);
    Ok(PretrainState {
        visual: pair("visual.online", "visual.momentum")?,
        motion: pair("motion.online", "motion.momentum")?,
        head_v: pair("head_v.online", "head_v.momentum")?,
        head_m: pair("head_m.online", "head_m.momentum")?,
        bank_v: bank_v.ok_or_else(|| Error::Format("checkpoint missing visual bank".into()))?,
        bank_m: bank_m.ok_or_else(|| Error::Format("checkpoint missing motion bank".into()))?,
        vel_visual: ckpt.block("opt.vel.visual")?.clone(),
        vel_motion: ckpt.block("opt.vel.motion")?.clone(),
        vel_head_v: ckpt.block("opt.vel.head_v")?.clone(),
        vel_head_m: ckpt.block("opt.vel.head_m")?.clone(),
        classifier,
        vel_classifier,
        num_classes: ckpt.num_classes as usize,
        step: ckpt.step,
        epoch: ckpt.epoch,
        shuffle_rng,
    })
}

// ── Test support ────────────────────────────────────────────────────────────

/// Generate a small three-split corpus plus preprocessed motion maps under
/// `root`; returns (data_dir, motion_dir). Used by integration tests and the
/// acceptance suite.
pub fn generate_test_corpus(
    root: &Path,
    classes: usize,
    pretrain: usize,
    probe_each: usize,
    seed: u64,
    kind: MotionKind,
    lag: usize,
) -> Result<(PathBuf, PathBuf)> {
    let dist = crate::synthvid::SceneDistribution::with_classes(classes)?;
    let data_dir = root.join("data");
    crate::synthvid::generate_dataset(
        &dist,
        pretrain,
        seed,
        Split::Pretrain,
        0,
        &data_dir.join("pretrain"),
    )?;
    crate::synthvid::generate_dataset(
        &dist,
        probe_each,
        seed,
        Split::ProbeTrain,
        100_000,
        &data_dir.join("probe_train"),
    )?;
    crate::synthvid::generate_dataset(
        &dist,
        probe_each,
        seed,
        Split::ProbeTest,
        200_000,
        &data_dir.join("probe_test"),
    )?;
    let motion_dir = root.join("motion").join(kind.as_str());
    preprocess_split(&data_dir.join("pretrain"), kind, lag, &motion_dir)?;
    Ok((data_dir, motion_dir))
}
