//! Flat `key = value` run configuration.
//!
//! Every run writes its effective configuration next to its outputs; feeding
//! that file back reproduces the run. Unknown keys are rejected so typos
//! cannot silently fall back to defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::contrastive::ContrastiveConfig;
use crate::datapipe::{AugConfig, SamplerConfig};
use crate::encoders::{PathwayConfig, PathwayKind};
use crate::error::{Error, Result};
use crate::motion::MotionKind;

/// What objective the trainer optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Modist,
    RgbOnly,
    Supervised,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Modist => "modist",
            TrainMode::RgbOnly => "rgb_only",
            TrainMode::Supervised => "supervised",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "modist" => Ok(TrainMode::Modist),
            "rgb_only" => Ok(TrainMode::RgbOnly),
            "supervised" => Ok(TrainMode::Supervised),
            other => Err(Error::Config(format!(
                "unknown mode `{other}` (expected modist|rgb_only|supervised)"
            ))),
        }
    }

    pub fn uses_motion(self) -> bool {
        matches!(self, TrainMode::Modist)
    }
}

/// Complete pretraining run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub data_dir: PathBuf,
    pub motion_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    pub lambda: f64,
    pub motion_kind: MotionKind,
    pub sync_mode: bool,
    pub canvas: usize,
    pub visual_channels: Vec<usize>,
    pub motion_channels: Vec<usize>,
    pub proj_dim: usize,
    pub sampler: SamplerConfig,
    pub aug: AugConfig,
    pub tau: f64,
    pub bank_capacity: usize,
    pub w_v: f64,
    pub w_m: f64,
    pub w_mv: f64,
    pub checkpoint_every: usize,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Modist,
            data_dir: PathBuf::from("runs/data"),
            motion_dir: PathBuf::from("runs/motion/flow_edges"),
            out_dir: PathBuf::from("runs/pretrain"),
            seed: 0,
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.03,
            sgd_momentum: 0.9,
            weight_decay: 1e-4,
            lambda: 0.999,
            motion_kind: MotionKind::FlowEdges,
            sync_mode: false,
            canvas: 32,
            visual_channels: vec![16, 32, 64, 128],
            motion_channels: vec![2, 4, 8, 16],
            proj_dim: 32,
            sampler: SamplerConfig::default(),
            aug: AugConfig::default(),
            tau: 0.1,
            bank_capacity: 512,
            w_v: 1.0,
            w_m: 1.0,
            w_mv: 1.0,
            checkpoint_every: 10,
            log_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 || self.sgd_momentum < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config("optimizer hyperparameters must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0,1]", self.lambda)));
        }
        if self.visual_channels.len() != self.motion_channels.len() {
            return Err(Error::Config("pathways must have the same stage count".into()));
        }
        for (i, (&v, &m)) in self.visual_channels.iter().zip(&self.motion_channels).enumerate() {
            if m != (v / 8).max(1) {
                return Err(Error::Config(format!(
                    "stage {i}: motion width {m} must be visual width {v} / 8 (min 1)"
                )));
            }
        }
        if self.sync_mode && self.mode != TrainMode::Modist {
            return Err(Error::Config("sync_mode only applies to modist mode".into()));
        }
        self.sampler.validate()?;
        self.aug.validate()?;
        self.contrastive().validate()?;
        self.visual_pathway().validate()?;
        self.motion_pathway().validate()?;
        Ok(())
    }

    pub fn contrastive(&self) -> ContrastiveConfig {
        let (w_m, w_mv) = match self.mode {
            TrainMode::RgbOnly => (0.0, 0.0),
            _ => (self.w_m, self.w_mv),
        };
        ContrastiveConfig {
            tau: self.tau,
            bank_capacity: self.bank_capacity,
            w_v: self.w_v,
            w_m,
            w_mv,
        }
    }

    pub fn visual_pathway(&self) -> PathwayConfig {
        PathwayConfig {
            kind: PathwayKind::Visual,
            stage_channels: self.visual_channels.clone(),
            in_channels: 3,
            clip_len: self.sampler.t_v,
            canvas: self.canvas,
            proj_dim: self.proj_dim,
        }
    }

    pub fn motion_pathway(&self) -> PathwayConfig {
        PathwayConfig {
            kind: PathwayKind::Motion,
            stage_channels: self.motion_channels.clone(),
            in_channels: self.sampler.t_m,
            clip_len: 1,
            canvas: self.canvas,
            proj_dim: self.proj_dim,
        }
    }

    /// Serialize as flat text; parsing this back reproduces the config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("mode", self.mode.as_str().to_string());
        kv("data_dir", self.data_dir.display().to_string());
        kv("motion_dir", self.motion_dir.display().to_string());
        kv("out_dir", self.out_dir.display().to_string());
        kv("seed", self.seed.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("learning_rate", format!("{:?}", self.learning_rate));
        kv("sgd_momentum", format!("{:?}", self.sgd_momentum));
        kv("weight_decay", format!("{:?}", self.weight_decay));
        kv("lambda", format!("{:?}", self.lambda));
        kv("motion_kind", self.motion_kind.as_str().to_string());
        kv("sync_mode", self.sync_mode.to_string());
        kv("canvas", self.canvas.to_string());
        kv("visual_channels", join_usize(&self.visual_channels));
        kv("motion_channels", join_usize(&self.motion_channels));
        kv("proj_dim", self.proj_dim.to_string());
        kv("t_v", self.sampler.t_v.to_string());
        kv("stride_v", self.sampler.stride_v.to_string());
        kv("t_m", self.sampler.t_m.to_string());
        kv("stride_m", self.sampler.stride_m.to_string());
        kv("gamma", format!("{:?}", self.sampler.gamma));
        kv("lag", self.sampler.lag.to_string());
        kv("aug_enabled", self.aug.enabled.to_string());
        kv("p_gray", format!("{:?}", self.aug.p_gray));
        kv("p_flip", format!("{:?}", self.aug.p_flip));
        kv("p_blur", format!("{:?}", self.aug.p_blur));
        kv("p_color", format!("{:?}", self.aug.p_color));
        kv("jitter_ratio", format!("{:?}", self.aug.jitter_ratio));
        kv("crop_scale_lo", format!("{:?}", self.aug.crop_scale_range.0));
        kv("crop_scale_hi", format!("{:?}", self.aug.crop_scale_range.1));
        kv("tau", format!("{:?}", self.tau));
        kv("bank_capacity", self.bank_capacity.to_string());
        kv("w_v", format!("{:?}", self.w_v));
        kv("w_m", format!("{:?}", self.w_m));
        kv("w_mv", format!("{:?}", self.w_mv));
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv("log_every", self.log_every.to_string());
        s
    }

    /// Parse from flat text; every key must be known.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (k, v) in parse_kv(text)? {
            cfg.apply(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Apply one key/value override.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "mode" => self.mode = TrainMode::parse(value)?,
            "data_dir" => self.data_dir = PathBuf::from(value),
            "motion_dir" => self.motion_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "seed" => self.seed = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "sgd_momentum" => self.sgd_momentum = parse_num(key, value)?,
            "weight_decay" => self.weight_decay = parse_num(key, value)?,
            "lambda" => self.lambda = parse_num(key, value)?,
            "motion_kind" => self.motion_kind = MotionKind::parse(value)?,
            "sync_mode" => self.sync_mode = parse_bool(key, value)?,
            "canvas" => self.canvas = parse_num(key, value)?,
            "visual_channels" => self.visual_channels = parse_usize_list(key, value)?,
            "motion_channels" => self.motion_channels = parse_usize_list(key, value)?,
            "proj_dim" => self.proj_dim = parse_num(key, value)?,
            "t_v" => self.sampler.t_v = parse_num(key, value)?,
            "stride_v" => self.sampler.stride_v = parse_num(key, value)?,
            "t_m" => self.sampler.t_m = parse_num(key, value)?,
            "stride_m" => self.sampler.stride_m = parse_num(key, value)?,
            "gamma" => self.sampler.gamma = parse_num(key, value)?,
            "lag" => self.sampler.lag = parse_num(key, value)?,
            "aug_enabled" => self.aug.enabled = parse_bool(key, value)?,
            "p_gray" => self.aug.p_gray = parse_num(key, value)?,
            "p_flip" => self.aug.p_flip = parse_num(key, value)?,
            "p_blur" => self.aug.p_blur = parse_num(key, value)?,
            "p_color" => self.aug.p_color = parse_num(key, value)?,
            "jitter_ratio" => self.aug.jitter_ratio = parse_num(key, value)?,
            "crop_scale_lo" => self.aug.crop_scale_range.0 = parse_num(key, value)?,
            "crop_scale_hi" => self.aug.crop_scale_range.1 = parse_num(key, value)?,
            "tau" => self.tau = parse_num(key, value)?,
            "bank_capacity" => self.bank_capacity = parse_num(key, value)?,
            "w_v" => self.w_v = parse_num(key, value)?,
            "w_m" => self.w_m = parse_num(key, value)?,
            "w_mv" => self.w_mv = parse_num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, value)?,
            "log_every" => self.log_every = parse_num(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }
}

fn join_usize(xs: &[usize]) -> String {
    xs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Config(format!("cannot parse `{value}` for key `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("cannot parse `{value}` as bool for key `{key}`"))),
    }
}

fn parse_usize_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|s| parse_num(key, s.trim())).collect()
}

/// Parse `key = value` lines; `#` starts a comment.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", ln + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Grouped key/value sections: a `[name]` line opens a section; keys before
/// the first section go into the preamble map. Used by experiment plans.
pub fn parse_sections(text: &str) -> Result<(BTreeMap<String, String>, Vec<(String, Vec<(String, String)>)>)> {
    let mut preamble = BTreeMap::new();
    let mut sections: Vec<(String, Vec<(String, String)>)> = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            sections.push((name.trim().to_string(), Vec::new()));
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", ln + 1)))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        match sections.last_mut() {
            Some((_, kvs)) => kvs.push((k, v)),
            None => {
                preamble.insert(k, v);
            }
        }
    }
    Ok((preamble, sections))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_text();
        let back = TrainConfig::from_text(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_round_trip_exactly() {
        let mut cfg = TrainConfig::default();
        cfg.apply("mode", "rgb_only").unwrap();
        cfg.apply("gamma", "0").unwrap();
        cfg.apply("epochs", "2").unwrap();
        cfg.apply("learning_rate", "0.0123").unwrap();
        cfg.apply("visual_channels", "8,16,32,64").unwrap();
        cfg.apply("motion_channels", "1,2,4,8").unwrap();
        let back = TrainConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        back.validate().unwrap();
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(matches!(
            TrainConfig::from_text("not_a_key = 3\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn channel_ratio_is_enforced() {
        let mut cfg = TrainConfig::default();
        cfg.motion_channels = vec![4, 4, 8, 16];
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn rgb_only_zeroes_motion_weights() {
        let mut cfg = TrainConfig::default();
        cfg.mode = TrainMode::RgbOnly;
        let c = cfg.contrastive();
        assert_eq!(c.w_m, 0.0);
        assert_eq!(c.w_mv, 0.0);
        assert_eq!(c.w_v, 1.0);
    }

    #[test]
    fn sections_parser_handles_plan_shape() {
        let text = "out = runs/t3\nseeds = 0,1\n[cell]\nname = a\nmode = modist\n[cell]\nname = b\n";
        let (pre, sections) = parse_sections(text).unwrap();
        assert_eq!(pre.get("out").unwrap(), "runs/t3");
        assert_eq!(sections.len(), 2);
        assert_eq!(sections[0].1[0], ("name".to_string(), "a".to_string()));
    }
}
