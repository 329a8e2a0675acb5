//! Procedural video generator with analytically known optical flow.
//!
//! Scenes are built from parametric shapes (disk, square, triangle) moving on
//! linear, circular or oscillating trajectories over a procedurally textured,
//! optionally drifting background. The canvas is toroidal: trajectories wrap
//! instead of bouncing, so a class-defining direction never reverses.
//!
//! The motion class of a video is a function of trajectory kind and direction
//! only; shape kind, size, color and background texture are sampled
//! independently, which makes appearance a confound and motion the signal.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::{self, DatasetManifest, ManifestEntry, Split, VideoFile};
use crate::motion::FlowField;
use crate::rng;

/// Coverage supersampling grid per pixel axis (4x4 samples per pixel).
const SUPERSAMPLE: usize = 4;
/// A pixel belongs to a shape (for flow purposes) above this coverage.
const FLOW_COVERAGE: f64 = 0.5;

// ── Scene model ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Disk,
    Square,
    Triangle,
}

/// Closed-form trajectory; positions are evaluated exactly at any frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Trajectory {
    Linear { start: (f64, f64), velocity: (f64, f64) },
    Circular { center: (f64, f64), radius: f64, omega: f64, phase: f64 },
    Oscillating { center: (f64, f64), axis: (f64, f64), amplitude: f64, omega: f64, phase: f64 },
}

impl Trajectory {
    /// Shape center at frame `t` (unwrapped coordinates).
    pub fn position(&self, t: f64) -> (f64, f64) {
        match *self {
            Trajectory::Linear { start, velocity } => {
                (start.0 + velocity.0 * t, start.1 + velocity.1 * t)
            }
            Trajectory::Circular { center, radius, omega, phase } => {
                let a = omega * t + phase;
                (center.0 + radius * a.cos(), center.1 + radius * a.sin())
            }
            Trajectory::Oscillating { center, axis, amplitude, omega, phase } => {
                let s = amplitude * (omega * t + phase).sin();
                (center.0 + axis.0 * s, center.1 + axis.1 * s)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    /// Diameter in pixels (circumscribed for triangle).
    pub size: f64,
    pub color: [f64; 3],
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundSpec {
    pub texture_id: u32,
    /// Pixels per frame; the whole texture translates by this amount.
    pub drift: (f64, f64),
}

/// Full description of one renderable scene. Identical specs render to
/// identical videos.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub canvas_size: usize,
    pub num_frames: usize,
    /// Draw order = z-order; later shapes occlude earlier ones.
    pub shapes: Vec<ShapeSpec>,
    pub background: BackgroundSpec,
    /// Additive per-frame brightness delta.
    pub illumination_drift: f64,
    pub rng_seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.canvas_size < 16 {
            return Err(Error::Config(format!("canvas_size {} < 16", self.canvas_size)));
        }
        if self.num_frames < 8 {
            return Err(Error::Config(format!("num_frames {} < 8", self.num_frames)));
        }
        for s in &self.shapes {
            if s.size >= self.canvas_size as f64 {
                return Err(Error::Config(format!(
                    "shape size {} must be < canvas {}",
                    s.size, self.canvas_size
                )));
            }
            if s.size <= 0.0 {
                return Err(Error::Config("shape size must be positive".into()));
            }
        }
        Ok(())
    }
}

/// A rendered video with its ground truth.
#[derive(Debug, Clone)]
pub struct LabeledVideo {
    pub video_index: u64,
    pub label: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    /// [T][H][W][3] in [0,1]
    pub frames: Vec<f32>,
    /// Lag-1 flow, [T][H][W][2] channel order (dx, dy); frame 0 is zeros.
    pub gt_flow: Vec<f32>,
}

impl LabeledVideo {
    #[inline]
    pub fn frame_px(&self, t: usize, y: usize, x: usize, c: usize) -> f32 {
        self.frames[((t * self.h + y) * self.w + x) * 3 + c]
    }

    #[inline]
    pub fn flow_px(&self, t: usize, y: usize, x: usize) -> (f32, f32) {
        let i = ((t * self.h + y) * self.w + x) * 2;
        (self.gt_flow[i], self.gt_flow[i + 1])
    }

    pub fn from_file(f: VideoFile, label: usize, video_index: u64) -> Self {
        Self { video_index, label, t: f.t, h: f.h, w: f.w, frames: f.frames, gt_flow: f.flow }
    }

    pub fn to_file(&self) -> VideoFile {
        VideoFile {
            t: self.t,
            h: self.h,
            w: self.w,
            frames: self.frames.clone(),
            flow: self.gt_flow.clone(),
        }
    }
}

// ── Geometry ────────────────────────────────────────────────────────────────

/// Signed offset from `b` to `a` on a circle of circumference `c`,
/// mapped into [-c/2, c/2).
#[inline]
fn wrap_delta(a: f64, b: f64, c: f64) -> f64 {
    let d = a - b;
    d - c * (d / c).round()
}

fn point_in_shape(kind: ShapeKind, size: f64, dx: f64, dy: f64) -> bool {
    let r = size / 2.0;
    match kind {
        ShapeKind::Disk => dx * dx + dy * dy <= r * r,
        ShapeKind::Square => dx.abs() <= r && dy.abs() <= r,
        ShapeKind::Triangle => {
            // apex pointing up (-y), inscribed in a radius-r circle
            let v = [
                (0.0, -r),
                (r * 0.866_025_403_784_438_6, r * 0.5),
                (-r * 0.866_025_403_784_438_6, r * 0.5),
            ];
            // counter-clockwise in image coords (y down) = clockwise on screen
            for i in 0..3 {
                let (ax, ay) = v[i];
                let (bx, by) = v[(i + 1) % 3];
                let cross = (bx - ax) * (dy - ay) - (by - ay) * (dx - ax);
                if cross < 0.0 {
                    return false;
                }
            }
            true
        }
    }
}

/// Fraction of pixel (px, py) covered by the shape centered at `center`,
/// on a toroidal canvas.
fn coverage(kind: ShapeKind, size: f64, center: (f64, f64), px: usize, py: usize, canvas: f64) -> f64 {
    let mut hits = 0usize;
    for j in 0..SUPERSAMPLE {
        for i in 0..SUPERSAMPLE {
            let sx = px as f64 + (i as f64 + 0.5) / SUPERSAMPLE as f64;
            let sy = py as f64 + (j as f64 + 0.5) / SUPERSAMPLE as f64;
            let dx = wrap_delta(sx, center.0, canvas);
            let dy = wrap_delta(sy, center.1, canvas);
            if point_in_shape(kind, size, dx, dy) {
                hits += 1;
            }
        }
    }
    hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64
}

// ── Background textures ─────────────────────────────────────────────────────

fn hash_params(id: u32, salt: u64) -> u64 {
    rng::derive_seed(id as u64, &[salt])
}

fn unit01(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Seamless periodic texture value in [0,1] at unwrapped coordinates.
/// Integer cycle counts keep the pattern continuous across the wrap seam.
fn texture_value(id: u32, x: f64, y: f64, canvas: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let k1 = 2.0 + (hash_params(id, 1) % 5) as f64;
    let k2 = 1.0 + (hash_params(id, 2) % 5) as f64;
    let k3 = 2.0 + (hash_params(id, 3) % 4) as f64;
    let k4 = 1.0 + (hash_params(id, 4) % 6) as f64;
    let p1 = unit01(hash_params(id, 5)) * tau;
    let p2 = unit01(hash_params(id, 6)) * tau;
    let s = 0.5
        + 0.3 * (tau * (k1 * x + k2 * y) / canvas + p1).sin()
        + 0.2 * (tau * (k3 * x - k4 * y) / canvas + p2).sin();
    s.clamp(0.0, 1.0)
}

/// Two-color palette per texture id. Mid-gray band with moderate contrast:
/// texture identity stays easy to read while shape edges (the motion
/// carriers) remain the strongest gradients in the frame.
fn texture_palette(id: u32) -> ([f64; 3], [f64; 3]) {
    let mut a = [0.0; 3];
    let mut b = [0.0; 3];
    for c in 0..3 {
        a[c] = 0.30 + 0.15 * unit01(hash_params(id, 10 + c as u64));
        b[c] = 0.55 + 0.15 * unit01(hash_params(id, 20 + c as u64));
    }
    (a, b)
}

fn background_color(bg: &BackgroundSpec, x: usize, y: usize, t: f64, canvas: f64) -> [f64; 3] {
    // drifting background: sample the texture at coordinates shifted back in time
    let sx = x as f64 + 0.5 - bg.drift.0 * t;
    let sy = y as f64 + 0.5 - bg.drift.1 * t;
    let s = texture_value(bg.texture_id, sx, sy, canvas);
    let (a, b) = texture_palette(bg.texture_id);
    [
        a[0] + (b[0] - a[0]) * s,
        a[1] + (b[1] - a[1]) * s,
        a[2] + (b[2] - a[2]) * s,
    ]
}

// ── Rendering ───────────────────────────────────────────────────────────────

/// Render one frame as [H][W][3] f64 in [0,1].
fn render_frame(scene: &SceneSpec, t: usize) -> Vec<f64> {
    let c = scene.canvas_size;
    let canvas = c as f64;
    let tf = t as f64;
    let mut out = vec![0.0f64; c * c * 3];
    let centers: Vec<(f64, f64)> = scene.shapes.iter().map(|s| s.trajectory.position(tf)).collect();
    for y in 0..c {
        for x in 0..c {
            let mut px = background_color(&scene.background, x, y, tf, canvas);
            for (shape, &center) in scene.shapes.iter().zip(&centers) {
                let cov = coverage(shape.kind, shape.size, center, x, y, canvas);
                if cov > 0.0 {
                    for ch in 0..3 {
                        px[ch] = shape.color[ch] * cov + px[ch] * (1.0 - cov);
                    }
                }
            }
            let illum = scene.illumination_drift * tf;
            let base = (y * c + x) * 3;
            for ch in 0..3 {
                out[base + ch] = (px[ch] + illum).clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// Exact displacement field from frame `t` back to frame `t - lag`.
///
/// At each pixel the top-most shape with majority coverage at frame `t`
/// contributes its own displacement; uncovered pixels carry the background
/// drift; nothing moving means zero flow.
pub fn ground_truth_flow(scene: &SceneSpec, t: usize, lag: usize) -> Result<FlowField> {
    if lag < 1 {
        return Err(Error::OutOfRange(format!("lag {lag} must be >= 1")));
    }
    if t < lag {
        return Err(Error::OutOfRange(format!("frame {t} has no frame {t}-{lag} to flow to")));
    }
    if t >= scene.num_frames {
        return Err(Error::OutOfRange(format!(
            "frame {t} out of range for {}-frame scene",
            scene.num_frames
        )));
    }
    let c = scene.canvas_size;
    let canvas = c as f64;
    let tf = t as f64;
    let tp = (t - lag) as f64;
    let mut field = FlowField::zeros(c, c);
    let disp: Vec<(f64, f64)> = scene
        .shapes
        .iter()
        .map(|s| {
            let now = s.trajectory.position(tf);
            let before = s.trajectory.position(tp);
            (now.0 - before.0, now.1 - before.1)
        })
        .collect();
    let centers: Vec<(f64, f64)> = scene.shapes.iter().map(|s| s.trajectory.position(tf)).collect();
    let bg_moves = scene.background.drift.0 != 0.0 || scene.background.drift.1 != 0.0;
    for y in 0..c {
        for x in 0..c {
            let mut v = (0.0, 0.0);
            if bg_moves {
                v = (scene.background.drift.0 * lag as f64, scene.background.drift.1 * lag as f64);
            }
            // top-most covering shape wins
            for (i, shape) in scene.shapes.iter().enumerate().rev() {
                if coverage(shape.kind, shape.size, centers[i], x, y, canvas) >= FLOW_COVERAGE {
                    v = disp[i];
                    break;
                }
            }
            field.set(y, x, v.0, v.1);
        }
    }
    Ok(field)
}

/// Render all frames and the lag-1 flow for a scene.
pub fn render_video(scene: &SceneSpec, label: usize, video_index: u64) -> Result<LabeledVideo> {
    scene.validate()?;
    let c = scene.canvas_size;
    let t_total = scene.num_frames;
    let mut frames = Vec::with_capacity(t_total * c * c * 3);
    let mut flow = Vec::with_capacity(t_total * c * c * 2);
    for t in 0..t_total {
        let f = render_frame(scene, t);
        frames.extend(f.iter().map(|&v| v as f32));
        if t == 0 {
            flow.extend(std::iter::repeat(0.0f32).take(c * c * 2));
        } else {
            let field = ground_truth_flow(scene, t, 1)?;
            for y in 0..c {
                for x in 0..c {
                    let (dx, dy) = field.get(y, x);
                    flow.push(dx as f32);
                    flow.push(dy as f32);
                }
            }
        }
    }
    Ok(LabeledVideo { video_index, label, t: t_total, h: c, w: c, frames, gt_flow: flow })
}

// ── Motion classes ──────────────────────────────────────────────────────────

/// What defines a motion class: trajectory family plus direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassKind {
    Linear { angle: f64 },
    Circular { clockwise: bool },
    Oscillating { angle: f64 },
}

#[derive(Debug, Clone)]
pub struct MotionClass {
    pub name: String,
    pub kind: ClassKind,
}

/// Canonical taxonomy: 4 cardinal linear directions, 2 circular orientations,
/// 2 oscillation axes, then diagonal linear directions and diagonal
/// oscillation axes. Supports 2..=12 classes.
pub fn class_taxonomy(num_classes: usize) -> Result<Vec<MotionClass>> {
    use std::f64::consts::PI;
    let all: Vec<MotionClass> = vec![
        MotionClass { name: "lin_e".into(), kind: ClassKind::Linear { angle: 0.0 } },
        MotionClass { name: "lin_w".into(), kind: ClassKind::Linear { angle: PI } },
        MotionClass { name: "lin_s".into(), kind: ClassKind::Linear { angle: PI / 2.0 } },
        MotionClass { name: "lin_n".into(), kind: ClassKind::Linear { angle: -PI / 2.0 } },
        MotionClass { name: "circ_cw".into(), kind: ClassKind::Circular { clockwise: true } },
        MotionClass { name: "circ_ccw".into(), kind: ClassKind::Circular { clockwise: false } },
        MotionClass { name: "osc_h".into(), kind: ClassKind::Oscillating { angle: 0.0 } },
        MotionClass { name: "osc_v".into(), kind: ClassKind::Oscillating { angle: PI / 2.0 } },
        MotionClass { name: "lin_se".into(), kind: ClassKind::Linear { angle: PI / 4.0 } },
        MotionClass { name: "lin_nw".into(), kind: ClassKind::Linear { angle: -3.0 * PI / 4.0 } },
        MotionClass { name: "osc_d1".into(), kind: ClassKind::Oscillating { angle: PI / 4.0 } },
        MotionClass { name: "osc_d2".into(), kind: ClassKind::Oscillating { angle: -PI / 4.0 } },
    ];
    if num_classes < 2 {
        return Err(Error::Config(format!("need at least 2 motion classes, got {num_classes}")));
    }
    if num_classes > all.len() {
        return Err(Error::Config(format!(
            "at most {} motion classes supported, got {num_classes}",
            all.len()
        )));
    }
    Ok(all.into_iter().take(num_classes).collect())
}

/// Distribution over scenes used by `generate_dataset`.
#[derive(Debug, Clone)]
pub struct SceneDistribution {
    pub canvas_size: usize,
    pub num_frames: usize,
    pub classes: Vec<MotionClass>,
    pub num_textures: u32,
    /// Probability of adding one static distractor shape.
    pub p_distractor: f64,
    /// Probability that the background drifts.
    pub p_bg_drift: f64,
    /// Probability of a nonzero illumination drift.
    pub p_illumination: f64,
}

impl SceneDistribution {
    pub fn with_classes(num_classes: usize) -> Result<Self> {
        Ok(Self {
            canvas_size: 32,
            num_frames: 24,
            classes: class_taxonomy(num_classes)?,
            num_textures: 8,
            p_distractor: 0.3,
            p_bg_drift: 0.3,
            p_illumination: 0.3,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::Config("scene distribution needs >= 2 motion classes".into()));
        }
        if self.num_textures == 0 {
            return Err(Error::Config("scene distribution needs >= 1 texture".into()));
        }
        Ok(())
    }
}

fn sample_shape_appearance(rng: &mut ChaCha8Rng) -> (ShapeKind, f64, [f64; 3]) {
    let kind = match rng.gen_range(0..3u32) {
        0 => ShapeKind::Disk,
        1 => ShapeKind::Square,
        _ => ShapeKind::Triangle,
    };
    let size = rng.gen_range(8.0..14.0);
    // clearly darker or brighter than the mid-gray texture band, so the
    // moving shape is never lost in the background
    let color = if rng.gen_bool(0.5) {
        [rng.gen_range(0.0..0.15), rng.gen_range(0.0..0.15), rng.gen_range(0.0..0.15)]
    } else {
        [rng.gen_range(0.85..1.0), rng.gen_range(0.85..1.0), rng.gen_range(0.85..1.0)]
    };
    (kind, size, color)
}

/// Sample one scene for the given class. Appearance (shape kind, size, color,
/// texture) is drawn independently of the class.
pub fn sample_scene(dist: &SceneDistribution, class_id: usize, rng: &mut ChaCha8Rng) -> SceneSpec {
    use std::f64::consts::TAU;
    let canvas = dist.canvas_size as f64;
    let (kind, size, color) = sample_shape_appearance(rng);
    let anywhere = |rng: &mut ChaCha8Rng| (rng.gen_range(0.0..canvas), rng.gen_range(0.0..canvas));
    // speeds are sized for a 32px canvas: per-frame displacements around
    // 1-2px keep motion visible to the encoders without temporal aliasing
    // at the visual sampling stride
    let trajectory = match dist.classes[class_id].kind {
        ClassKind::Linear { angle } => {
            let speed = rng.gen_range(0.9..1.8);
            Trajectory::Linear {
                start: anywhere(rng),
                velocity: (speed * angle.cos(), speed * angle.sin()),
            }
        }
        ClassKind::Circular { clockwise } => {
            let radius = rng.gen_range(6.0..10.0);
            // image coords have y down, so positive omega sweeps clockwise on screen
            let mag = rng.gen_range(0.20..0.35);
            let omega = if clockwise { mag } else { -mag };
            Trajectory::Circular { center: anywhere(rng), radius, omega, phase: rng.gen_range(0.0..TAU) }
        }
        ClassKind::Oscillating { angle } => Trajectory::Oscillating {
            center: anywhere(rng),
            axis: (angle.cos(), angle.sin()),
            amplitude: rng.gen_range(4.5..8.0),
            omega: rng.gen_range(0.4..0.7),
            phase: rng.gen_range(0.0..TAU),
        },
    };
    let mut shapes = Vec::new();
    if rng.gen_bool(dist.p_distractor) {
        let (dk, _, dc) = sample_shape_appearance(rng);
        let dsize = rng.gen_range(4.0..8.0);
        shapes.push(ShapeSpec {
            kind: dk,
            size: dsize,
            color: dc,
            trajectory: Trajectory::Linear { start: anywhere(rng), velocity: (0.0, 0.0) },
        });
    }
    shapes.push(ShapeSpec { kind, size, color, trajectory });
    let texture_id = rng.gen_range(0..dist.num_textures);
    let drift = if rng.gen_bool(dist.p_bg_drift) {
        (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5))
    } else {
        (0.0, 0.0)
    };
    let illumination_drift = if rng.gen_bool(dist.p_illumination) {
        let mag = rng.gen_range(0.002..0.006);
        if rng.gen_bool(0.5) {
            mag
        } else {
            -mag
        }
    } else {
        0.0
    };
    SceneSpec {
        canvas_size: dist.canvas_size,
        num_frames: dist.num_frames,
        shapes,
        background: BackgroundSpec { texture_id, drift },
        illumination_drift,
        rng_seed: 0,
    }
}

// ── Dataset generation ──────────────────────────────────────────────────────

/// Balanced label sequence: counts differ by at most one across classes.
fn balanced_labels(num_videos: usize, num_classes: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..num_videos).map(|i| i % num_classes).collect();
    // Fisher-Yates
    for i in (1..labels.len()).rev() {
        let j = rng.gen_range(0..=i);
        labels.swap(i, j);
    }
    labels
}

/// Generate `num_videos` videos into `out_dir`, returning the manifest.
/// Video indices start at `index_base` so splits can stay disjoint.
pub fn generate_dataset(
    dist: &SceneDistribution,
    num_videos: usize,
    seed: u64,
    split: Split,
    index_base: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    dist.validate()?;
    if num_videos < 1 {
        return Err(Error::Config("num_videos must be >= 1".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let split_salt = match split {
        Split::Pretrain => 1,
        Split::ProbeTrain => 2,
        Split::ProbeTest => 3,
    };
    let mut label_rng = rng::stream(seed, &[split_salt, 0xbeef]);
    let labels = balanced_labels(num_videos, dist.classes.len(), &mut label_rng);
    let mut entries = Vec::with_capacity(num_videos);
    for (i, &label) in labels.iter().enumerate() {
        let video_index = index_base + i as u64;
        let mut scene_rng = rng::stream(seed, &[split_salt, video_index]);
        let mut scene = sample_scene(dist, label, &mut scene_rng);
        scene.rng_seed = rng::derive_seed(seed, &[split_salt, video_index]);
        let video = render_video(&scene, label, video_index)?;
        let rel_path = format!("v{video_index:06}.vid");
        io::write_video(&out_dir.join(&rel_path), &video.to_file())?;
        entries.push(ManifestEntry {
            video_index,
            rel_path,
            label,
            num_frames: video.t,
        });
    }
    let manifest = DatasetManifest {
        split,
        class_names: dist.classes.iter().map(|c| c.name.clone()).collect(),
        entries,
    };
    manifest.validate()?;
    io::write_manifest(&out_dir.join("manifest.txt"), &manifest)?;
    Ok(manifest)
}

/// Load every video listed in a manifest directory.
pub fn load_split(dir: &Path) -> Result<(DatasetManifest, Vec<LabeledVideo>)> {
    let manifest = io::read_manifest(&dir.join("manifest.txt"))?;
    let mut videos = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let f = io::read_video(&dir.join(&e.rel_path))?;
        videos.push(LabeledVideo::from_file(f, e.label, e.video_index));
    }
    Ok((manifest, videos))
}
