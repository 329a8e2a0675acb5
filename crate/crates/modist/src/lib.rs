//! Motion-distillation pretraining for video representations, desk scale.
//!
//! The pipeline: generate synthetic videos with exact ground-truth flow
//! (`synthvid`), derive motion inputs (`motion`), sample augmented clip pairs
//! under a motion-energy threshold (`datapipe`), encode them with a
//! two-pathway network (`encoders`), train with three InfoNCE objectives and
//! dual momentum memory banks (`contrastive`, `trainer`), then evaluate by
//! linear probe, finetune, low-shot sweep and saliency maps (`evalkit`).

pub mod cli;
pub mod config;
pub mod contrastive;
pub mod datapipe;
pub mod encoders;
pub mod error;
pub mod evalkit;
pub mod io;
pub mod motion;
pub mod nn;
pub mod rng;
pub mod stats;
pub mod synthvid;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
