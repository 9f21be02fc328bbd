//! Encoder plumbing: a template-driven driver for real encoders and a
//! deterministic mock encoder.
//!
//! Profile, space and ground-truth files are TOML documents:
//!
//! ```toml
//! # profile
//! codec_id = "x265"
//! command_template = "x265 --input {input} --fps {framerate} --qp {qp} {flags} -o {output}"
//! metric_command_template = "vmaf-tool --reference {reference} --distorted {distorted}"
//! parallelism = 4
//! output_extension = "hevc"
//!
//! [metric_patterns]
//! vmaf = 'VMAF score: ([0-9.]+)'
//! psnr_y = 'PSNR Y: ([0-9.]+)'
//! psnr_u = 'PSNR U: ([0-9.]+)'
//! psnr_v = 'PSNR V: ([0-9.]+)'
//! ```
//!
//! ```toml
//! # space
//! segment_seconds = 3.0
//! framerate = 50.0
//! qps = [22, 27, 32, 37]
//!
//! [[configs]]
//! config_id = "B2"
//! flags = [{ name = "--preset", value = "veryfast" }]
//! ```

mod driver;
mod mock;

use std::path::PathBuf;

use serde::Deserialize;
use thiserror::Error;

use crate::sweepdata::{ConfigDescriptor, SweepError};

pub use driver::{discover_inputs, expand_template, run_sweep, SegmentInput, SweepRun};
pub use mock::{mock_encode, mock_sweep, GroundTruthEntry, GroundTruthParams, Generator};

/// Upper bound on concurrent encoder processes.
pub const MAX_PARALLELISM: usize = 64;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("encoder `{0}` not found")]
    EncoderNotFound(String),
    #[error("encode failed: `{cmd}` ({status})")]
    EncodeFailed { cmd: String, status: String },
    #[error("metric `{metric}` not found in output of `{cmd}`")]
    MetricParseFailure { cmd: String, metric: String },
    #[error("input `{}` does not exist", .0.display())]
    InputMissing(PathBuf),
    #[error("no ground truth for segment {segment_index} / config `{config_id}`")]
    UnknownKey { segment_index: u32, config_id: String },
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("invalid space: {0}")]
    InvalidSpace(String),
    #[error("invalid ground truth: {0}")]
    InvalidGroundTruth(String),
    #[error("no encode succeeded")]
    NoSuccessfulEncodes,
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Regex per quality metric; capture group 1 holds the number.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MetricPatterns {
    pub vmaf: String,
    pub psnr_y: String,
    pub psnr_u: String,
    pub psnr_v: String,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EncoderProfile {
    pub codec_id: String,
    /// Placeholders: `{input}` `{output}` `{qp}` `{flags}` `{framerate}`.
    pub command_template: String,
    /// Placeholders: `{reference}` `{distorted}`. Without it the patterns are
    /// matched against the encoder's own output.
    #[serde(default)]
    pub metric_command_template: Option<String>,
    pub metric_patterns: MetricPatterns,
    #[serde(default = "one")]
    pub parallelism: usize,
    #[serde(default = "default_extension")]
    pub output_extension: String,
    /// Directory for encoded outputs; a temporary one when absent.
    #[serde(default)]
    pub work_dir: Option<PathBuf>,
}

fn one() -> usize {
    1
}

fn default_extension() -> String {
    "bin".to_string()
}

const ENCODE_PLACEHOLDERS: [&str; 5] = ["{input}", "{output}", "{qp}", "{flags}", "{framerate}"];
const METRIC_PLACEHOLDERS: [&str; 2] = ["{reference}", "{distorted}"];

fn unknown_placeholder(template: &str, allowed: &[&str]) -> Option<String> {
    let re = regex::Regex::new(r"\{[a-z_]+\}").expect("static regex");
    let found = re
        .find_iter(template)
        .map(|m| m.as_str().to_string())
        .find(|p| !allowed.contains(&p.as_str()));
    found
}

impl EncoderProfile {
    pub fn from_toml(text: &str) -> Result<Self, EncoderError> {
        let p: Self = toml::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: String| Err(EncoderError::InvalidProfile(m));
        if self.parallelism == 0 || self.parallelism > MAX_PARALLELISM {
            return bad(format!("parallelism must be in 1..={MAX_PARALLELISM}"));
        }
        for needed in ["{input}", "{output}", "{qp}"] {
            if !self.command_template.contains(needed) {
                return bad(format!("command_template lacks {needed}"));
            }
        }
        if let Some(p) = unknown_placeholder(&self.command_template, &ENCODE_PLACEHOLDERS) {
            return bad(format!("unknown placeholder {p} in command_template"));
        }
        if let Some(t) = &self.metric_command_template {
            if let Some(p) = unknown_placeholder(t, &METRIC_PLACEHOLDERS) {
                return bad(format!("unknown placeholder {p} in metric_command_template"));
            }
        }
        let m = &self.metric_patterns;
        for (name, pat) in [("vmaf", &m.vmaf), ("psnr_y", &m.psnr_y), ("psnr_u", &m.psnr_u), ("psnr_v", &m.psnr_v)] {
            match regex::Regex::new(pat) {
                Ok(re) if re.captures_len() >= 2 => {}
                Ok(_) => return bad(format!("pattern {name} has no capture group")),
                Err(e) => return bad(format!("pattern {name}: {e}")),
            }
        }
        if self.output_extension.is_empty() || self.output_extension.contains('/') {
            return bad("output_extension must be a plain extension".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FlagSpec {
    pub name: String,
    #[serde(default)]
    pub value: String,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConfigSpec {
    pub config_id: String,
    #[serde(default)]
    pub flags: Vec<FlagSpec>,
}

/// The configuration grid of a sweep.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SweepSpace {
    #[serde(default = "default_segment_seconds")]
    pub segment_seconds: f64,
    pub framerate: f64,
    pub qps: Vec<i32>,
    pub configs: Vec<ConfigSpec>,
}

fn default_segment_seconds() -> f64 {
    crate::sweepdata::DEFAULT_SEGMENT_SECONDS
}

impl SweepSpace {
    pub fn from_toml(text: &str) -> Result<Self, EncoderError> {
        let s: Self = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: &str| Err(EncoderError::InvalidSpace(m.to_string()));
        if !(self.segment_seconds.is_finite() && self.segment_seconds > 0.0) {
            return bad("segment_seconds must be positive");
        }
        if !(self.framerate.is_finite() && self.framerate > 0.0) {
            return bad("framerate must be positive");
        }
        if self.qps.is_empty() || self.configs.is_empty() {
            return bad("qps and configs must be non-empty");
        }
        let mut qps = self.qps.clone();
        qps.sort_unstable();
        qps.dedup();
        if qps.len() != self.qps.len() {
            return bad("duplicate qp");
        }
        Ok(())
    }

    /// Frames per segment, as used for the FPS calculation.
    pub fn frames_per_segment(&self) -> f64 {
        (self.framerate * self.segment_seconds).round()
    }

    pub fn descriptors(&self, codec_id: &str) -> Vec<ConfigDescriptor> {
        self.configs
            .iter()
            .map(|c| ConfigDescriptor {
                config_id: c.config_id.clone(),
                codec_id: codec_id.to_string(),
                flags: c.flags.iter().map(|f| (f.name.clone(), f.value.clone())).collect(),
            })
            .collect()
    }
}
