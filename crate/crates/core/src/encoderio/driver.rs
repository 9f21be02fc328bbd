//! Runs real encoders over a configuration grid.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rayon::prelude::*;
use regex::Regex;

use super::{ConfigSpec, EncoderError, EncoderProfile, SweepSpace};
use crate::numfmt::fmt_f64;
use crate::sweepdata::{EncodingSample, SweepDataset};

/// One segmented source file, named `<video_id>_<segment_index>.<ext>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct SegmentInput {
    pub video_id: String,
    pub segment_index: u32,
    pub path: PathBuf,
}

/// Lists the segment files of a directory in `(video, segment)` order.
/// Files that do not follow the naming scheme are ignored.
pub fn discover_inputs(dir: &Path) -> Result<Vec<SegmentInput>, EncoderError> {
    if !dir.is_dir() {
        return Err(EncoderError::InputMissing(dir.to_path_buf()));
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if !path.is_file() {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let Some((video, seg)) = stem.rsplit_once('_') else {
            continue;
        };
        if let (false, Ok(segment_index)) = (video.is_empty(), seg.parse::<u32>()) {
            out.push(SegmentInput {
                video_id: video.to_string(),
                segment_index,
                path,
            });
        }
    }
    out.sort();
    Ok(out)
}

/// Tokenizes `template` and substitutes placeholders token by token. A
/// token that is exactly `{flags}` expands to one `name=value` token per
/// flag (`name` alone when the value is empty); no shell is involved.
pub fn expand_template(
    template: &str,
    values: &[(&str, &str)],
    flags: &[(String, String)],
) -> Result<Vec<String>, EncoderError> {
    let tokens = shell_words::split(template)
        .map_err(|e| EncoderError::InvalidProfile(format!("cannot tokenize template: {e}")))?;
    let mut out = Vec::with_capacity(tokens.len() + flags.len());
    for token in tokens {
        if token == "{flags}" {
            out.extend(flags.iter().map(|(n, v)| {
                if v.is_empty() {
                    n.clone()
                } else {
                    format!("{n}={v}")
                }
            }));
            continue;
        }
        let mut t = token;
        for (key, value) in values {
            t = t.replace(key, value);
        }
        out.push(t);
    }
    if out.is_empty() {
        return Err(EncoderError::InvalidProfile("empty command template".into()));
    }
    Ok(out)
}

/// Outcome of [`run_sweep`]: the assembled dataset and one warning per
/// skipped encode.
#[derive(Debug, Clone)]
pub struct SweepRun {
    pub dataset: SweepDataset,
    pub warnings: Vec<String>,
}

struct Patterns {
    vmaf: Regex,
    psnr_y: Regex,
    psnr_u: Regex,
    psnr_v: Regex,
}

struct Ctx<'a> {
    profile: &'a EncoderProfile,
    space: &'a SweepSpace,
    patterns: Patterns,
    work_dir: PathBuf,
}

fn check_resolvable(template: &str) -> Result<(), EncoderError> {
    let program = shell_words::split(template)
        .ok()
        .and_then(|t| t.into_iter().next())
        .ok_or_else(|| EncoderError::InvalidProfile("empty command template".into()))?;
    which::which(&program)
        .map(|_| ())
        .map_err(|_| EncoderError::EncoderNotFound(program))
}

fn run(argv: &[String]) -> Result<String, EncoderError> {
    let output = Command::new(&argv[0]).args(&argv[1..]).output()?;
    let cmd = shell_words::join(argv);
    if !output.status.success() {
        return Err(EncoderError::EncodeFailed {
            cmd,
            status: output.status.to_string(),
        });
    }
    let mut text = String::from_utf8_lossy(&output.stdout).into_owned();
    text.push('\n');
    text.push_str(&String::from_utf8_lossy(&output.stderr));
    Ok(text)
}

fn capture(re: &Regex, text: &str, metric: &str, cmd: &str) -> Result<f64, EncoderError> {
    re.captures(text)
        .and_then(|c| c.get(1))
        .and_then(|m| m.as_str().parse().ok())
        .ok_or_else(|| EncoderError::MetricParseFailure {
            cmd: cmd.to_string(),
            metric: metric.to_string(),
        })
}

fn encode_one(
    ctx: &Ctx<'_>,
    input: &SegmentInput,
    config: &ConfigSpec,
    flags: &[(String, String)],
    qp: i32,
) -> Result<EncodingSample, EncoderError> {
    let output = ctx.work_dir.join(format!(
        "{}_{}_{}_q{}.{}",
        input.video_id, input.segment_index, config.config_id, qp, ctx.profile.output_extension
    ));
    let input_s = input.path.to_string_lossy().into_owned();
    let output_s = output.to_string_lossy().into_owned();
    let qp_s = qp.to_string();
    let fr_s = fmt_f64(ctx.space.framerate);
    let argv = expand_template(
        &ctx.profile.command_template,
        &[("{input}", &input_s), ("{output}", &output_s), ("{qp}", &qp_s), ("{framerate}", &fr_s)],
        flags,
    )?;
    let started = Instant::now();
    let encoder_text = run(&argv)?;
    let elapsed = started.elapsed().as_secs_f64();
    let bytes = fs::metadata(&output)
        .map_err(|_| EncoderError::EncodeFailed {
            cmd: shell_words::join(&argv),
            status: "no output file".into(),
        })?
        .len();

    let (metric_text, metric_cmd) = match &ctx.profile.metric_command_template {
        Some(t) => {
            let margv = expand_template(t, &[("{reference}", &input_s), ("{distorted}", &output_s)], &[])?;
            (run(&margv)?, shell_words::join(&margv))
        }
        None => (encoder_text, shell_words::join(&argv)),
    };
    let p = &ctx.patterns;
    let sample = EncodingSample {
        video_id: input.video_id.clone(),
        segment_index: input.segment_index,
        config_id: config.config_id.clone(),
        qp,
        vmaf: capture(&p.vmaf, &metric_text, "vmaf", &metric_cmd)?,
        psnr_y: capture(&p.psnr_y, &metric_text, "psnr_y", &metric_cmd)?,
        psnr_u: capture(&p.psnr_u, &metric_text, "psnr_u", &metric_cmd)?,
        psnr_v: capture(&p.psnr_v, &metric_text, "psnr_v", &metric_cmd)?,
        bitrate_kbps: bytes as f64 * 8.0 / ctx.space.segment_seconds / 1000.0,
        enc_fps: ctx.space.frames_per_segment() / elapsed.max(1e-9),
    };
    sample.validate().map_err(|reason| EncoderError::MetricParseFailure {
        cmd: metric_cmd,
        metric: reason,
    })?;
    Ok(sample)
}

/// Encodes every `(input, config, qp)` cell with at most
/// `profile.parallelism` concurrent processes. Results are assembled in grid
/// order; failed cells become warnings.
pub fn run_sweep(
    profile: &EncoderProfile,
    inputs: &[SegmentInput],
    space: &SweepSpace,
) -> Result<SweepRun, EncoderError> {
    profile.validate()?;
    space.validate()?;
    check_resolvable(&profile.command_template)?;
    if let Some(t) = &profile.metric_command_template {
        check_resolvable(t)?;
    }
    for input in inputs {
        if !input.path.is_file() {
            return Err(EncoderError::InputMissing(input.path.clone()));
        }
    }

    let compile = |p: &str| Regex::new(p).map_err(|e| EncoderError::InvalidProfile(e.to_string()));
    let m = &profile.metric_patterns;
    let patterns = Patterns {
        vmaf: compile(&m.vmaf)?,
        psnr_y: compile(&m.psnr_y)?,
        psnr_u: compile(&m.psnr_u)?,
        psnr_v: compile(&m.psnr_v)?,
    };
    let _tmp;
    let work_dir = match &profile.work_dir {
        Some(d) => {
            fs::create_dir_all(d)?;
            d.clone()
        }
        None => {
            let t = tempfile::tempdir()?;
            let path = t.path().to_path_buf();
            _tmp = t;
            path
        }
    };
    let ctx = Ctx {
        profile,
        space,
        patterns,
        work_dir,
    };

    let descriptors = space.descriptors(&profile.codec_id);
    let mut jobs = Vec::new();
    for input in inputs {
        for (config, desc) in space.configs.iter().zip(&descriptors) {
            for &qp in &space.qps {
                jobs.push((input, config, &desc.flags, qp));
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(profile.parallelism)
        .build()
        .map_err(|e| EncoderError::InvalidProfile(e.to_string()))?;
    let results: Vec<Result<EncodingSample, EncoderError>> = pool.install(|| {
        jobs.par_iter()
            .map(|(input, config, flags, qp)| encode_one(&ctx, input, config, flags, *qp))
            .collect()
    });

    let mut samples = Vec::new();
    let mut warnings = Vec::new();
    for ((input, config, _, qp), result) in jobs.iter().zip(results) {
        match result {
            Ok(s) => samples.push(s),
            Err(e) => warnings.push(format!(
                "{}/{}/{}/qp {}: {e}",
                input.video_id, input.segment_index, config.config_id, qp
            )),
        }
    }
    if samples.is_empty() {
        return Err(EncoderError::NoSuccessfulEncodes);
    }
    let dataset = SweepDataset::new(samples, descriptors, space.segment_seconds, profile.codec_id.clone())?;
    Ok(SweepRun { dataset, warnings })
}
