//! On-disk formats: binary tensor containers, dataset manifests, motion
//! sidecars and line-delimited record files.
//!
//! Video container layout (little endian throughout):
//!   magic `SYNVID01` | u32 T,H,W,C=3 | frames f32 [T][H][W][3] | flow f32 [T][H][W][2]
//! Motion container:
//!   magic `SYNMOT01` | u32 T,H,W,C=1 | maps f32 [T][H][W]
//! Flow channel order is (dx, dy).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const VIDEO_MAGIC: &[u8; 8] = b"SYNVID01";
pub const MOTION_MAGIC: &[u8; 8] = b"SYNMOT01";

// ── Raw tensor blocks ───────────────────────────────────────────────────────

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Format("truncated header".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn write_f32_block(w: &mut impl Write, data: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_f32_block(r: &mut impl Read, n: usize) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("truncated tensor block".into()))?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

// ── Video files ─────────────────────────────────────────────────────────────

/// Frames plus ground-truth lag-1 flow, as stored on disk.
#[derive(Debug, Clone)]
pub struct VideoFile {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    /// [T][H][W][3] in [0,1]
    pub frames: Vec<f32>,
    /// [T][H][W][2], channel order (dx, dy); frame 0 is all zeros.
    pub flow: Vec<f32>,
}

pub fn write_video(path: &Path, v: &VideoFile) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(VIDEO_MAGIC)?;
    for d in [v.t, v.h, v.w, 3usize] {
        write_u32(&mut w, d as u32)?;
    }
    write_f32_block(&mut w, &v.frames)?;
    write_f32_block(&mut w, &v.flow)?;
    w.flush()?;
    Ok(())
}

pub fn read_video(path: &Path) -> Result<VideoFile> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format(format!("{}: truncated magic", path.display())))?;
    if &magic != VIDEO_MAGIC {
        return Err(Error::Format(format!("{}: bad video magic", path.display())));
    }
    let t = read_u32(&mut r)? as usize;
    let h = read_u32(&mut r)? as usize;
    let w = read_u32(&mut r)? as usize;
    let c = read_u32(&mut r)? as usize;
    if c != 3 {
        return Err(Error::Format(format!("{}: expected 3 channels, got {c}", path.display())));
    }
    let frames = read_f32_block(&mut r, t * h * w * 3)?;
    let flow = read_f32_block(&mut r, t * h * w * 2)?;
    Ok(VideoFile { t, h, w, frames, flow })
}

// ── Motion files ────────────────────────────────────────────────────────────

/// Per-frame motion maps for one video; frames before `valid_from` (tracked
/// in the sidecar, not here) are stored as zeros.
#[derive(Debug, Clone)]
pub struct MotionFile {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    /// [T][H][W]
    pub maps: Vec<f32>,
}

pub fn write_motion(path: &Path, m: &MotionFile) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MOTION_MAGIC)?;
    for d in [m.t, m.h, m.w, 1usize] {
        write_u32(&mut w, d as u32)?;
    }
    write_f32_block(&mut w, &m.maps)?;
    w.flush()?;
    Ok(())
}

pub fn read_motion(path: &Path) -> Result<MotionFile> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format(format!("{}: truncated magic", path.display())))?;
    if &magic != MOTION_MAGIC {
        return Err(Error::Format(format!("{}: bad motion magic", path.display())));
    }
    let t = read_u32(&mut r)? as usize;
    let h = read_u32(&mut r)? as usize;
    let w = read_u32(&mut r)? as usize;
    let c = read_u32(&mut r)? as usize;
    if c != 1 {
        return Err(Error::Format(format!("{}: expected 1 channel, got {c}", path.display())));
    }
    let maps = read_f32_block(&mut r, t * h * w)?;
    Ok(MotionFile { t, h, w, maps })
}

// ── Dataset manifest ────────────────────────────────────────────────────────

/// One manifest row: (video_index, relative path, label, num_frames).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub video_index: u64,
    pub rel_path: String,
    pub label: usize,
    pub num_frames: usize,
}

/// The split a manifest describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Pretrain,
    ProbeTrain,
    ProbeTest,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Pretrain => "pretrain",
            Split::ProbeTrain => "probe-train",
            Split::ProbeTest => "probe-test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Split::Pretrain),
            "probe-train" => Ok(Split::ProbeTrain),
            "probe-test" => Ok(Split::ProbeTest),
            other => Err(Error::Format(format!("unknown split `{other}`"))),
        }
    }
}

/// Line-delimited manifest for one split of the dataset.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub split: Split,
    pub class_names: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Validates index uniqueness.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.video_index) {
                return Err(Error::Format(format!("duplicate video index {}", e.video_index)));
            }
            if e.label >= self.class_names.len() {
                return Err(Error::Format(format!(
                    "label {} out of range for {} classes",
                    e.label,
                    self.class_names.len()
                )));
            }
        }
        Ok(())
    }
}

pub fn write_manifest(path: &Path, m: &DatasetManifest) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# split={}", m.split.as_str())?;
    writeln!(w, "# classes={}", m.class_names.join(","))?;
    for e in &m.entries {
        writeln!(w, "{}\t{}\t{}\t{}", e.video_index, e.rel_path, e.label, e.num_frames)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path)?;
    let mut split = None;
    let mut class_names = Vec::new();
    let mut entries = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(v) = rest.strip_prefix("split=") {
                split = Some(Split::parse(v.trim())?);
            } else if let Some(v) = rest.strip_prefix("classes=") {
                class_names = v.split(',').map(|s| s.trim().to_string()).collect();
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Format(format!(
                "{}:{}: expected 4 tab-separated fields",
                path.display(),
                ln + 1
            )));
        }
        entries.push(ManifestEntry {
            video_index: fields[0]
                .parse()
                .map_err(|_| Error::Format(format!("bad index `{}`", fields[0])))?,
            rel_path: fields[1].to_string(),
            label: fields[2]
                .parse()
                .map_err(|_| Error::Format(format!("bad label `{}`", fields[2])))?,
            num_frames: fields[3]
                .parse()
                .map_err(|_| Error::Format(format!("bad frame count `{}`", fields[3])))?,
        });
    }
    let split = split.ok_or_else(|| Error::Format("manifest missing `# split=` header".into()))?;
    if class_names.is_empty() {
        return Err(Error::Format("manifest missing `# classes=` header".into()));
    }
    let m = DatasetManifest { split, class_names, entries };
    m.validate()?;
    Ok(m)
}

// ── Motion sidecar ──────────────────────────────────────────────────────────

/// Sidecar row: per-frame motion energies for one preprocessed video.
/// Energy is negative for frames where the motion map is undefined
/// (before the flow lag, or frame 0 for frame differences).
#[derive(Debug, Clone)]
pub struct SidecarEntry {
    pub video_index: u64,
    pub rel_path: String,
    pub num_frames: usize,
    pub energies: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MotionSidecar {
    pub kind: String,
    pub lag: usize,
    pub entries: Vec<SidecarEntry>,
}

pub fn write_sidecar(path: &Path, s: &MotionSidecar) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# kind={} lag={}", s.kind, s.lag)?;
    for e in &s.entries {
        let energies: Vec<String> = e.energies.iter().map(|v| format!("{v:.9}")).collect();
        writeln!(w, "{}\t{}\t{}\t{}", e.video_index, e.rel_path, e.num_frames, energies.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<MotionSidecar> {
    let text = std::fs::read_to_string(path)?;
    let mut kind = String::new();
    let mut lag = 0usize;
    let mut entries = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            for tok in rest.split_whitespace() {
                if let Some(v) = tok.strip_prefix("kind=") {
                    kind = v.to_string();
                } else if let Some(v) = tok.strip_prefix("lag=") {
                    lag = v
                        .parse()
                        .map_err(|_| Error::Format(format!("bad lag `{v}`")))?;
                }
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Format(format!(
                "{}:{}: expected 4 tab-separated fields",
                path.display(),
                ln + 1
            )));
        }
        let energies = fields[3]
            .split(',')
            .map(|s| s.parse::<f64>().map_err(|_| Error::Format(format!("bad energy `{s}`"))))
            .collect::<Result<Vec<f64>>>()?;
        entries.push(SidecarEntry {
            video_index: fields[0]
                .parse()
                .map_err(|_| Error::Format(format!("bad index `{}`", fields[0])))?,
            rel_path: fields[1].to_string(),
            num_frames: fields[2]
                .parse()
                .map_err(|_| Error::Format(format!("bad frame count `{}`", fields[2])))?,
            energies,
        });
    }
    if kind.is_empty() {
        return Err(Error::Format("sidecar missing `# kind=` header".into()));
    }
    Ok(MotionSidecar { kind, lag, entries })
}

// ── Record files ────────────────────────────────────────────────────────────

/// Append one `key=value` record line to a machine-readable results file.
pub fn append_record(path: &Path, fields: &[(&str, String)]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let line: Vec<String> = fields.iter().map(|(k, v)| format!("{k}={v}")).collect();
    writeln!(f, "{}", line.join("\t"))?;
    Ok(())
}

/// Parse a record file back into key/value maps, one per line.
pub fn read_records(path: &Path) -> Result<Vec<std::collections::HashMap<String, String>>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut map = std::collections::HashMap::new();
        for tok in line.split('\t') {
            if let Some((k, v)) = tok.split_once('=') {
                map.insert(k.to_string(), v.to_string());
            }
        }
        out.push(map);
    }
    Ok(out)
}

/// Collect `*.records` files under a directory (one level of nesting allowed).
pub fn find_record_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        if !d.is_dir() {
            continue;
        }
        for entry in std::fs::read_dir(&d)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().map_or(false, |e| e == "records") {
                found.push(p);
            }
        }
    }
    found.sort();
    Ok(found)
}
