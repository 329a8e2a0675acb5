//! Clip-pair sampling and visual augmentation.
//!
//! Visual clips are sampled uniformly over valid start frames; motion clips
//! are sampled only among windows whose mean per-frame motion energy exceeds
//! the threshold gamma. Cross-modal pairs draw all four start frames
//! independently (temporal jitter); a sync mode pins the motion starts to the
//! visual starts for the alignment ablation.
//!
//! Augmentations apply to visual clips only, with one parameter draw per clip
//! so motion cues across frames survive: random resized crop, horizontal
//! flip, grayscale, Gaussian blur, and brightness/contrast/saturation jitter.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::motion::{MotionClip, MotionKind};
use crate::synthvid::LabeledVideo;
use crate::tensor::Vol;

// ── Configuration ───────────────────────────────────────────────────────────

/// Clip geometry and the motion-energy threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub t_v: usize,
    pub stride_v: usize,
    pub t_m: usize,
    pub stride_m: usize,
    /// Motion-energy threshold; windows at or below it are never sampled.
    pub gamma: f64,
    /// Flow lag for flow-based motion inputs.
    pub lag: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { t_v: 4, stride_v: 2, t_m: 8, stride_m: 1, gamma: 0.02, lag: 5 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma < 0.0 {
            return Err(Error::Config(format!("gamma {} must be >= 0", self.gamma)));
        }
        if self.t_v == 0 || self.stride_v == 0 || self.t_m == 0 || self.stride_m == 0 {
            return Err(Error::Config("clip lengths and strides must be positive".into()));
        }
        if self.t_v * self.stride_v != self.t_m * self.stride_m {
            return Err(Error::Config(format!(
                "temporal span mismatch: visual {}x{} != motion {}x{}",
                self.t_v, self.stride_v, self.t_m, self.stride_m
            )));
        }
        Ok(())
    }

    /// Largest valid start for a window of `len` frames at `stride`.
    /// A video is eligible only if it covers the nominal span `len * stride`
    /// (the quantity the visual/motion span contract equates); within an
    /// eligible video every start whose last selected frame exists is valid.
    fn max_start(total: usize, len: usize, stride: usize) -> Option<usize> {
        if total < len * stride {
            return None;
        }
        Some(total - ((len - 1) * stride + 1))
    }
}

/// Augmentation recipe; probabilities are per clip, not per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AugConfig {
    pub p_gray: f64,
    pub p_flip: f64,
    pub p_blur: f64,
    pub p_color: f64,
    pub jitter_ratio: f64,
    pub crop_scale_range: (f64, f64),
    pub enabled: bool,
}

impl Default for AugConfig {
    fn default() -> Self {
        Self {
            p_gray: 0.2,
            p_flip: 0.5,
            p_blur: 0.5,
            p_color: 0.8,
            jitter_ratio: 0.4,
            crop_scale_range: (0.5, 1.0),
            enabled: true,
        }
    }
}

impl AugConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_gray", self.p_gray),
            ("p_flip", self.p_flip),
            ("p_blur", self.p_blur),
            ("p_color", self.p_color),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} outside [0,1]")));
            }
        }
        let (lo, hi) = self.crop_scale_range;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!("bad crop scale range ({lo}, {hi})")));
        }
        Ok(())
    }
}

// ── Clip containers ─────────────────────────────────────────────────────────

/// RGB clip as a (3, T_v, H, W) volume.
#[derive(Debug, Clone)]
pub struct VisualClip {
    pub video_index: u64,
    pub start_frame: usize,
    pub stride: usize,
    pub vol: Vol,
}

/// Per-video motion maps plus per-frame energies, as produced by the
/// preprocessing step. Energies are negative where the map is undefined.
#[derive(Debug, Clone)]
pub struct MotionVideo {
    pub video_index: u64,
    pub kind: MotionKind,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub maps: Vec<f32>,
    pub energies: Vec<f64>,
}

impl MotionVideo {
    /// Slice a window into a MotionClip (f64).
    pub fn clip(&self, start: usize, t_m: usize, stride: usize) -> MotionClip {
        let mut data = Vec::with_capacity(t_m * self.h * self.w);
        for i in 0..t_m {
            let t = start + i * stride;
            let base = t * self.h * self.w;
            data.extend(self.maps[base..base + self.h * self.w].iter().map(|&v| v as f64));
        }
        MotionClip {
            kind: self.kind,
            video_index: self.video_index,
            start_frame: start,
            stride,
            t_m,
            h: self.h,
            w: self.w,
            data,
        }
    }
}

/// Two augmented visual clips and (in distillation modes) two motion clips,
/// all from the same video.
#[derive(Debug, Clone)]
pub struct ClipPair {
    pub v_query: VisualClip,
    pub v_key: VisualClip,
    pub m_query: Option<MotionClip>,
    pub m_key: Option<MotionClip>,
    pub video_index: u64,
}

// ── Sampling ────────────────────────────────────────────────────────────────

/// Gather a visual clip starting at `start`.
pub fn gather_visual_clip(video: &LabeledVideo, start: usize, cfg: &SamplerConfig) -> VisualClip {
    let (h, w) = (video.h, video.w);
    let mut vol = Vol::zeros(3, cfg.t_v, h, w);
    for (i, tslot) in (0..cfg.t_v).enumerate() {
        let t = start + i * cfg.stride_v;
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    vol.set(c, tslot, y, x, video.frame_px(t, y, x, c) as f64);
                }
            }
        }
    }
    VisualClip { video_index: video.video_index, start_frame: start, stride: cfg.stride_v, vol }
}

/// Uniformly random valid start for a visual clip.
pub fn sample_visual_clip(
    video: &LabeledVideo,
    rng: &mut ChaCha8Rng,
    cfg: &SamplerConfig,
) -> Result<VisualClip> {
    let max_start = SamplerConfig::max_start(video.t, cfg.t_v, cfg.stride_v).ok_or_else(|| {
        Error::IneligibleVideo(format!(
            "video {} with {} frames cannot fit a {}x{} visual window",
            video.video_index, video.t, cfg.t_v, cfg.stride_v
        ))
    })?;
    let start = rng.gen_range(0..=max_start);
    Ok(gather_visual_clip(video, start, cfg))
}

/// Start frames whose motion window is fully defined and whose mean energy
/// strictly exceeds gamma.
pub fn eligible_motion_starts(mv: &MotionVideo, cfg: &SamplerConfig) -> Vec<usize> {
    let mut out = Vec::new();
    let max_start = match SamplerConfig::max_start(mv.t, cfg.t_m, cfg.stride_m) {
        Some(m) => m,
        None => return out,
    };
    'start: for start in 0..=max_start {
        let mut sum = 0.0;
        for i in 0..cfg.t_m {
            let e = mv.energies[start + i * cfg.stride_m];
            if e < 0.0 {
                continue 'start; // map undefined at this frame
            }
            sum += e;
        }
        if sum / cfg.t_m as f64 > cfg.gamma {
            out.push(start);
        }
    }
    out
}

/// Uniformly random start among eligible motion windows.
pub fn sample_motion_clip(
    mv: &MotionVideo,
    rng: &mut ChaCha8Rng,
    cfg: &SamplerConfig,
) -> Result<MotionClip> {
    let eligible = eligible_motion_starts(mv, cfg);
    if eligible.is_empty() {
        return Err(Error::NoEligibleClip(format!(
            "video {} has no motion window with mean energy > {}",
            mv.video_index, cfg.gamma
        )));
    }
    let start = eligible[rng.gen_range(0..eligible.len())];
    Ok(mv.clip(start, cfg.t_m, cfg.stride_m))
}

// ── Augmentation ────────────────────────────────────────────────────────────

fn bilinear_sample(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let xi = |v: f64| (v.max(0.0) as usize).min(w - 1);
    let yi = |v: f64| (v.max(0.0) as usize).min(h - 1);
    let (x0i, x1i) = (xi(x0), xi(x0 + 1.0));
    let (y0i, y1i) = (yi(y0), yi(y0 + 1.0));
    let v00 = plane[y0i * w + x0i];
    let v01 = plane[y0i * w + x1i];
    let v10 = plane[y1i * w + x0i];
    let v11 = plane[y1i * w + x1i];
    v00 * (1.0 - fy) * (1.0 - fx) + v01 * (1.0 - fy) * fx + v10 * fy * (1.0 - fx) + v11 * fy * fx
}

fn crop_resize_plane(
    plane: &[f64],
    h: usize,
    w: usize,
    y0: usize,
    x0: usize,
    side: usize,
) -> Vec<f64> {
    if side == h && side == w && x0 == 0 && y0 == 0 {
        return plane.to_vec();
    }
    let mut out = vec![0.0; h * w];
    let scale_y = side as f64 / h as f64;
    let scale_x = side as f64 / w as f64;
    for oy in 0..h {
        for ox in 0..w {
            let sy = (oy as f64 + 0.5) * scale_y - 0.5 + y0 as f64;
            let sx = (ox as f64 + 0.5) * scale_x - 0.5 + x0 as f64;
            out[oy * w + ox] = bilinear_sample(plane, h, w, sy, sx);
        }
    }
    out
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let half = (2.0 * sigma).ceil().max(1.0) as i64;
    let mut k: Vec<f64> = (-half..=half)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

fn blur_plane(plane: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let half = (kernel.len() / 2) as i64;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w as i64 {
            let mut acc = 0.0;
            for (i, &kv) in kernel.iter().enumerate() {
                let sx = (x + i as i64 - half).clamp(0, w as i64 - 1) as usize;
                acc += kv * plane[y * w + sx];
            }
            tmp[y * w + x as usize] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h as i64 {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in kernel.iter().enumerate() {
                let sy = (y + i as i64 - half).clamp(0, h as i64 - 1) as usize;
                acc += kv * tmp[sy * w + x];
            }
            out[y as usize * w + x] = acc;
        }
    }
    out
}

/// Apply the augmentation recipe with one parameter draw per clip.
/// Motion clips are never passed through here.
pub fn augment_visual(
    clip: &VisualClip,
    rng: &mut ChaCha8Rng,
    aug: &AugConfig,
) -> Result<VisualClip> {
    aug.validate()?;
    if !aug.enabled {
        return Ok(clip.clone());
    }
    let v = &clip.vol;
    let (h, w) = (v.h, v.w);
    debug_assert_eq!(h, w, "clips are square");

    // one draw per clip for every augmentation, in a fixed order
    let (lo, hi) = aug.crop_scale_range;
    let scale = if lo < hi { rng.gen_range(lo..hi) } else { lo };
    let side = ((h as f64 * scale.sqrt()).round() as usize).clamp(1, h);
    let y0 = if side < h { rng.gen_range(0..=h - side) } else { 0 };
    let x0 = if side < w { rng.gen_range(0..=w - side) } else { 0 };
    let do_flip = rng.gen_bool(aug.p_flip);
    let do_gray = rng.gen_bool(aug.p_gray);
    let do_blur = rng.gen_bool(aug.p_blur);
    let blur_sigma = if do_blur { rng.gen_range(0.1..2.0) } else { 0.0 };
    let do_color = rng.gen_bool(aug.p_color);
    let j = aug.jitter_ratio;
    let (f_bright, f_contrast, f_sat) = if do_color {
        (
            rng.gen_range(1.0 - j..1.0 + j),
            rng.gen_range(1.0 - j..1.0 + j),
            rng.gen_range(1.0 - j..1.0 + j),
        )
    } else {
        (1.0, 1.0, 1.0)
    };

    let plane_len = h * w;
    let mut planes: Vec<Vec<f64>> = Vec::with_capacity(3 * v.t);
    for c in 0..3 {
        for t in 0..v.t {
            let base = (c * v.t + t) * plane_len;
            planes.push(v.data[base..base + plane_len].to_vec());
        }
    }

    for p in &mut planes {
        *p = crop_resize_plane(p, h, w, y0, x0, side);
    }
    if do_flip {
        for p in planes.iter_mut() {
            for y in 0..h {
                p[y * w..(y + 1) * w].reverse();
            }
        }
    }
    if do_gray {
        for t in 0..v.t {
            for i in 0..plane_len {
                let r = planes[t][i];
                let g = planes[v.t + t][i];
                let b = planes[2 * v.t + t][i];
                let luma = 0.299 * r + 0.587 * g + 0.114 * b;
                planes[t][i] = luma;
                planes[v.t + t][i] = luma;
                planes[2 * v.t + t][i] = luma;
            }
        }
    }
    if do_blur {
        let kernel = gaussian_kernel(blur_sigma);
        for p in planes.iter_mut() {
            *p = blur_plane(p, h, w, &kernel);
        }
    }
    if do_color {
        for p in planes.iter_mut() {
            for pv in p.iter_mut() {
                *pv *= f_bright;
            }
        }
        // contrast around the clip's mean luma so frames stay consistent
        let mut mean_luma = 0.0;
        for t in 0..v.t {
            for i in 0..plane_len {
                mean_luma += 0.299 * planes[t][i]
                    + 0.587 * planes[v.t + t][i]
                    + 0.114 * planes[2 * v.t + t][i];
            }
        }
        mean_luma /= (v.t * plane_len) as f64;
        for p in planes.iter_mut() {
            for pv in p.iter_mut() {
                *pv = (*pv - mean_luma) * f_contrast + mean_luma;
            }
        }
        for t in 0..v.t {
            for i in 0..plane_len {
                let r = planes[t][i];
                let g = planes[v.t + t][i];
                let b = planes[2 * v.t + t][i];
                let luma = 0.299 * r + 0.587 * g + 0.114 * b;
                planes[t][i] = luma + (r - luma) * f_sat;
                planes[v.t + t][i] = luma + (g - luma) * f_sat;
                planes[2 * v.t + t][i] = luma + (b - luma) * f_sat;
            }
        }
        for p in planes.iter_mut() {
            for pv in p.iter_mut() {
                *pv = pv.clamp(0.0, 1.0);
            }
        }
    }

    let mut out = Vol::zeros(3, v.t, h, w);
    for (pi, p) in planes.iter().enumerate() {
        out.data[pi * plane_len..(pi + 1) * plane_len].copy_from_slice(p);
    }
    Ok(VisualClip {
        video_index: clip.video_index,
        start_frame: clip.start_frame,
        stride: clip.stride,
        vol: out,
    })
}

// ── Pair assembly ───────────────────────────────────────────────────────────

/// Build one augmented clip pair. With `motion = None` (RGB-only mode) no
/// motion data is touched at all. With `sync_mode = true` the motion key
/// shares the visual query's start and the motion query shares the visual
/// key's start.
pub fn make_pair(
    video: &LabeledVideo,
    motion: Option<&MotionVideo>,
    rng: &mut ChaCha8Rng,
    cfg: &SamplerConfig,
    aug: &AugConfig,
    sync_mode: bool,
) -> Result<ClipPair> {
    cfg.validate()?;
    let (v_query, v_key, m_query, m_key) = match motion {
        None => {
            let v_q = sample_visual_clip(video, rng, cfg)?;
            let v_k = sample_visual_clip(video, rng, cfg)?;
            (v_q, v_k, None, None)
        }
        Some(mv) => {
            if sync_mode {
                // shared starts must be valid for both windows
                let v_max = SamplerConfig::max_start(video.t, cfg.t_v, cfg.stride_v)
                    .ok_or_else(|| {
                        Error::IneligibleVideo(format!("video {} too short", video.video_index))
                    })?;
                let eligible: Vec<usize> = eligible_motion_starts(mv, cfg)
                    .into_iter()
                    .filter(|&s| s <= v_max)
                    .collect();
                if eligible.is_empty() {
                    return Err(Error::NoEligibleClip(format!(
                        "video {} has no synchronized window with mean energy > {}",
                        mv.video_index, cfg.gamma
                    )));
                }
                let s1 = eligible[rng.gen_range(0..eligible.len())];
                let s2 = eligible[rng.gen_range(0..eligible.len())];
                let v_q = gather_visual_clip(video, s1, cfg);
                let v_k = gather_visual_clip(video, s2, cfg);
                let m_k = mv.clip(s1, cfg.t_m, cfg.stride_m);
                let m_q = mv.clip(s2, cfg.t_m, cfg.stride_m);
                (v_q, v_k, Some(m_q), Some(m_k))
            } else {
                let v_q = sample_visual_clip(video, rng, cfg)?;
                let v_k = sample_visual_clip(video, rng, cfg)?;
                let m_q = sample_motion_clip(mv, rng, cfg)?;
                let m_k = sample_motion_clip(mv, rng, cfg)?;
                (v_q, v_k, Some(m_q), Some(m_k))
            }
        }
    };
    let v_query = augment_visual(&v_query, rng, aug)?;
    let v_key = augment_visual(&v_key, rng, aug)?;
    Ok(ClipPair { v_query, v_key, m_query, m_key, video_index: video.video_index })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::synthvid::{BackgroundSpec, SceneSpec, ShapeKind, ShapeSpec, Trajectory};

    fn test_video(velocity: (f64, f64), frames: usize) -> LabeledVideo {
        let scene = SceneSpec {
            canvas_size: 16,
            num_frames: frames,
            shapes: vec![ShapeSpec {
                kind: ShapeKind::Disk,
                size: 6.0,
                color: [0.9, 0.2, 0.1],
                trajectory: Trajectory::Linear { start: (4.0, 8.0), velocity },
            }],
            background: BackgroundSpec { texture_id: 1, drift: (0.0, 0.0) },
            illumination_drift: 0.0,
            rng_seed: 0,
        };
        crate::synthvid::render_video(&scene, 0, 11).unwrap()
    }

    fn motion_video_with_energies(t: usize, energies: Vec<f64>) -> MotionVideo {
        MotionVideo {
            video_index: 11,
            kind: MotionKind::FlowEdges,
            t,
            h: 4,
            w: 4,
            maps: vec![0.5; t * 16],
            energies,
        }
    }

    #[test]
    fn visual_start_support_is_window_arithmetic() {
        let video = test_video((1.0, 0.0), 24);
        let cfg = SamplerConfig::default();
        let mut rng = stream(1, &[0]);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..500 {
            let c = sample_visual_clip(&video, &mut rng, &cfg).unwrap();
            assert!(c.start_frame <= 17, "start {} beyond valid range", c.start_frame);
            seen.insert(c.start_frame);
        }
        assert_eq!(seen.len(), 18, "uniform sampling should hit all of 0..=17");
    }

    #[test]
    fn short_video_is_ineligible() {
        let video = test_video((1.0, 0.0), 8);
        let mut short = video.clone();
        short.t = 7;
        short.frames.truncate(7 * 16 * 16 * 3);
        short.gt_flow.truncate(7 * 16 * 16 * 2);
        let cfg = SamplerConfig::default();
        let mut rng = stream(2, &[0]);
        match sample_visual_clip(&short, &mut rng, &cfg) {
            Err(Error::IneligibleVideo(_)) => {}
            other => panic!("expected ineligible video, got {other:?}"),
        }
    }

    #[test]
    fn fixed_seed_gives_deterministic_start() {
        let video = test_video((1.0, 0.0), 24);
        let cfg = SamplerConfig::default();
        let a = sample_visual_clip(&video, &mut stream(3, &[7]), &cfg).unwrap();
        let b = sample_visual_clip(&video, &mut stream(3, &[7]), &cfg).unwrap();
        assert_eq!(a.start_frame, b.start_frame);
        assert_eq!(a.vol.data, b.vol.data);
    }

    #[test]
    fn gamma_zero_accepts_every_valid_window() {
        // 24 frames, energies defined from frame 5 (flow lag)
        let mut energies = vec![-1.0; 24];
        for e in energies.iter_mut().skip(5) {
            *e = 0.001; // tiny but positive
        }
        let mv = motion_video_with_energies(24, energies);
        let cfg = SamplerConfig { gamma: 0.0, ..Default::default() };
        let eligible = eligible_motion_starts(&mv, &cfg);
        // valid starts: 5..=16 (window of 8 at stride 1 in 24 frames)
        assert_eq!(eligible, (5..=16).collect::<Vec<_>>());
    }

    #[test]
    fn zero_motion_video_is_rejected_at_default_gamma() {
        let mut energies = vec![-1.0; 24];
        for e in energies.iter_mut().skip(5) {
            *e = 0.0;
        }
        let mv = motion_video_with_energies(24, energies);
        let cfg = SamplerConfig::default();
        let mut rng = stream(4, &[0]);
        match sample_motion_clip(&mv, &mut rng, &cfg) {
            Err(Error::NoEligibleClip(_)) => {}
            other => panic!("expected no-eligible-clip, got {other:?}"),
        }
        // and even at gamma = 0: mean energy 0 is not strictly greater
        let cfg0 = SamplerConfig { gamma: 0.0, ..Default::default() };
        assert!(eligible_motion_starts(&mv, &cfg0).is_empty());
    }

    #[test]
    fn sampled_starts_stay_in_high_motion_region() {
        // motion only in frames 10..=20
        let mut energies = vec![-1.0; 24];
        for (t, e) in energies.iter_mut().enumerate().skip(5) {
            *e = if (10..=20).contains(&t) { 1.0 } else { 0.001 };
        }
        let mv = motion_video_with_energies(24, energies.clone());
        let cfg = SamplerConfig { gamma: 0.5, ..Default::default() };
        // brute-force eligible set
        let mut expected = Vec::new();
        for start in 5..=16usize {
            let mean: f64 = (0..8).map(|i| energies[start + i]).sum::<f64>() / 8.0;
            if mean > cfg.gamma {
                expected.push(start);
            }
        }
        assert!(!expected.is_empty());
        assert_eq!(eligible_motion_starts(&mv, &cfg), expected);
        let mut rng = stream(5, &[0]);
        for _ in 0..100 {
            let c = sample_motion_clip(&mv, &mut rng, &cfg).unwrap();
            assert!(expected.contains(&c.start_frame));
        }
    }

    #[test]
    fn eligibility_is_sound_and_complete() {
        use rand::Rng;
        let mut rng = stream(6, &[0]);
        for _ in 0..50 {
            let t = 16;
            let mut energies = vec![-1.0; t];
            for e in energies.iter_mut().skip(5) {
                *e = rng.gen_range(0.0..0.1);
            }
            let mv = motion_video_with_energies(t, energies.clone());
            let cfg =
                SamplerConfig { t_m: 4, stride_m: 2, t_v: 4, stride_v: 2, gamma: 0.02, lag: 5 };
            let eligible = eligible_motion_starts(&mv, &cfg);
            for start in 0..t {
                let window: Option<Vec<f64>> = (0..4)
                    .map(|i| energies.get(start + i * 2).copied())
                    .collect::<Option<Vec<f64>>>()
                    .filter(|w| w.iter().all(|&e| e >= 0.0));
                let mean_ok =
                    window.map(|w| w.iter().sum::<f64>() / 4.0 > cfg.gamma).unwrap_or(false);
                assert_eq!(eligible.contains(&start), mean_ok, "start {start}");
            }
        }
    }

    #[test]
    fn disabled_or_neutral_augmentation_is_identity() {
        let video = test_video((1.0, 0.0), 24);
        let cfg = SamplerConfig::default();
        let clip = gather_visual_clip(&video, 3, &cfg);
        let mut rng = stream(7, &[0]);
        let off = AugConfig { enabled: false, ..Default::default() };
        let out = augment_visual(&clip, &mut rng, &off).unwrap();
        assert_eq!(out.vol.data, clip.vol.data);

        let neutral = AugConfig {
            p_gray: 0.0,
            p_flip: 0.0,
            p_blur: 0.0,
            p_color: 0.0,
            jitter_ratio: 0.4,
            crop_scale_range: (1.0, 1.0),
            enabled: true,
        };
        let out = augment_visual(&clip, &mut rng, &neutral).unwrap();
        assert_eq!(out.vol.data, clip.vol.data);
    }

    #[test]
    fn double_flip_is_identity() {
        let video = test_video((1.0, 0.0), 24);
        let cfg = SamplerConfig::default();
        let clip = gather_visual_clip(&video, 0, &cfg);
        let flip_only = AugConfig {
            p_gray: 0.0,
            p_flip: 1.0,
            p_blur: 0.0,
            p_color: 0.0,
            jitter_ratio: 0.4,
            crop_scale_range: (1.0, 1.0),
            enabled: true,
        };
        let mut rng = stream(8, &[0]);
        let once = augment_visual(&clip, &mut rng, &flip_only).unwrap();
        assert_ne!(once.vol.data, clip.vol.data, "flip must change the clip");
        let twice = augment_visual(&once, &mut rng, &flip_only).unwrap();
        assert_eq!(twice.vol.data, clip.vol.data);
    }

    #[test]
    fn augmentation_preserves_temporal_order() {
        // frames carry strictly increasing mean brightness; augmentation must
        // keep that ordering (it never reorders frames)
        let video = test_video((0.0, 0.0), 24);
        let mut clip = gather_visual_clip(&video, 0, &SamplerConfig::default());
        let plane = clip.vol.h * clip.vol.w;
        for t in 0..clip.vol.t {
            for c in 0..3 {
                let base = (c * clip.vol.t + t) * plane;
                for i in 0..plane {
                    clip.vol.data[base + i] = 0.1 + 0.2 * t as f64;
                }
            }
        }
        let mut rng = stream(9, &[0]);
        for _ in 0..20 {
            let out = augment_visual(&clip, &mut rng, &AugConfig::default()).unwrap();
            let means: Vec<f64> = (0..out.vol.t)
                .map(|t| {
                    (0..plane).map(|i| out.vol.data[t * plane + i]).sum::<f64>() / plane as f64
                })
                .collect();
            for tpair in means.windows(2) {
                assert!(tpair[0] < tpair[1], "temporal order broken: {means:?}");
            }
        }
    }

    fn motion_for(video: &LabeledVideo, cfg: &SamplerConfig) -> MotionVideo {
        // flow-edge maps + energies straight from the generator ground truth
        let mut maps = vec![0.0f32; video.t * video.h * video.w];
        let mut energies = vec![-1.0; video.t];
        for t in cfg.lag..video.t {
            let m = crate::motion::motion_map(video, t, MotionKind::FlowEdges, cfg.lag).unwrap();
            for (i, &v) in m.data.iter().enumerate() {
                maps[t * video.h * video.w + i] = v as f32;
            }
            energies[t] = crate::motion::motion_energy(&m);
        }
        MotionVideo {
            video_index: video.video_index,
            kind: MotionKind::FlowEdges,
            t: video.t,
            h: video.h,
            w: video.w,
            maps,
            energies,
        }
    }

    #[test]
    fn make_pair_draws_independent_starts() {
        let video = test_video((1.0, 0.0), 24);
        let cfg = SamplerConfig::default();
        let mv = motion_for(&video, &cfg);
        let aug = AugConfig { enabled: false, ..Default::default() };
        let mut rng = stream(10, &[0]);
        let mut all_equal = 0;
        let mut v_starts = std::collections::HashSet::new();
        for _ in 0..100 {
            let p = make_pair(&video, Some(&mv), &mut rng, &cfg, &aug, false).unwrap();
            let vq = p.v_query.start_frame;
            let vk = p.v_key.start_frame;
            let mq = p.m_query.as_ref().unwrap().start_frame;
            let mk = p.m_key.as_ref().unwrap().start_frame;
            if vq == vk && vk == mq && mq == mk {
                all_equal += 1;
            }
            v_starts.insert(vq);
        }
        assert!(all_equal < 10, "starts should be independent draws, got {all_equal} aligned");
        assert!(v_starts.len() > 5, "visual starts should spread over the support");
    }

    #[test]
    fn sync_mode_aligns_cross_modal_starts() {
        let video = test_video((1.0, 0.0), 24);
        let cfg = SamplerConfig::default();
        let mv = motion_for(&video, &cfg);
        let aug = AugConfig { enabled: false, ..Default::default() };
        let mut rng = stream(11, &[0]);
        for _ in 0..50 {
            let p = make_pair(&video, Some(&mv), &mut rng, &cfg, &aug, true).unwrap();
            assert_eq!(p.m_key.as_ref().unwrap().start_frame, p.v_query.start_frame);
            assert_eq!(p.m_query.as_ref().unwrap().start_frame, p.v_key.start_frame);
        }
    }

    #[test]
    fn same_seed_gives_identical_pair() {
        let video = test_video((1.0, 0.0), 24);
        let cfg = SamplerConfig::default();
        let mv = motion_for(&video, &cfg);
        let aug = AugConfig::default();
        let a = make_pair(&video, Some(&mv), &mut stream(12, &[5]), &cfg, &aug, false).unwrap();
        let b = make_pair(&video, Some(&mv), &mut stream(12, &[5]), &cfg, &aug, false).unwrap();
        assert_eq!(a.v_query.vol.data, b.v_query.vol.data);
        assert_eq!(a.v_key.vol.data, b.v_key.vol.data);
        assert_eq!(a.m_query.as_ref().unwrap().data, b.m_query.as_ref().unwrap().data);
    }

    #[test]
    fn pair_carries_one_video_index() {
        let video = test_video((1.0, 0.0), 24);
        let cfg = SamplerConfig::default();
        let mv = motion_for(&video, &cfg);
        let aug = AugConfig { enabled: false, ..Default::default() };
        let p = make_pair(&video, Some(&mv), &mut stream(13, &[0]), &cfg, &aug, false).unwrap();
        assert_eq!(p.video_index, 11);
        assert_eq!(p.v_query.video_index, 11);
        assert_eq!(p.v_key.video_index, 11);
        assert_eq!(p.m_query.unwrap().video_index, 11);
        assert_eq!(p.m_key.unwrap().video_index, 11);
    }

    #[test]
    fn span_mismatch_is_configuration_error() {
        let cfg = SamplerConfig { t_v: 4, stride_v: 2, t_m: 8, stride_m: 2, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
