//! `adaptenc` command-line front end.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adaptenc::encoderio::{self, EncoderProfile, GroundTruthParams, SweepSpace};
use adaptenc::models::{self, read_store, write_store, ModelStore};
use adaptenc::numfmt::fmt_f64;
use adaptenc::optimizer::{self, ConstraintSet, Mode, DECISION_COLUMNS};
use adaptenc::pareto::{self, ObjectivePoint};
use adaptenc::session::{self, BandwidthTrace, SessionOptions};
use adaptenc::sweepdata::{self, parse_sweep, SweepDataset};
use adaptenc::{bd_rate, psnr_weighted, QualityKind, RdCurve};
use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "adaptenc", version, about = "Adaptive video encoding decision engine")]
struct Cli {
    /// Suppress warnings and progress messages on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    /// Write the primary output here instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Seed forwarded to the mock encoder, overriding the params file.
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a real encoder over a configuration grid.
    Sweep {
        /// Encoder profile (TOML).
        #[arg(long)]
        profile: PathBuf,
        /// Configuration space (TOML).
        #[arg(long)]
        space: PathBuf,
        /// Directory of `<video>_<segment>.<ext>` source files.
        #[arg(long)]
        inputs: PathBuf,
    },
    /// Generate a sweep from ground-truth generators.
    MockSweep {
        /// Ground-truth parameters (TOML).
        #[arg(long)]
        params: PathBuf,
    },
    /// Fit per-segment models from a sweep and write the model store.
    Fit {
        /// Sweep CSV.
        #[arg(long)]
        sweep: PathBuf,
        /// Fit every segment on all samples, skipping Pareto filtering and reuse.
        #[arg(long)]
        all_samples: bool,
    },
    /// Emit each segment's Pareto front in sweep CSV format.
    Pareto {
        /// Sweep CSV.
        #[arg(long)]
        sweep: PathBuf,
        /// Emit every row with a `dominated_by` column instead.
        #[arg(long)]
        explain: bool,
    },
    /// Pick a configuration and QP for one segment.
    Optimize {
        /// Model store.
        #[arg(long)]
        models: PathBuf,
        /// Segment index.
        #[arg(long)]
        segment: u32,
        /// Video id; required when the store holds several.
        #[arg(long)]
        video: Option<String>,
        /// One of min-bitrate, max-quality, max-fps.
        #[arg(long, value_parser = parse_mode)]
        mode: Mode,
        #[command(flatten)]
        constraints: ConstraintArgs,
    },
    /// Run the per-segment decision loop against a bandwidth trace.
    Simulate {
        /// Model store.
        #[arg(long)]
        models: PathBuf,
        /// Trace CSV with `t_seconds,available_kbps`.
        #[arg(long)]
        trace: PathBuf,
        /// Video id; required when the store holds several.
        #[arg(long)]
        video: Option<String>,
        /// One of min-bitrate, max-quality, max-fps.
        #[arg(long, value_parser = parse_mode)]
        mode: Mode,
        #[command(flatten)]
        constraints: ConstraintArgs,
        /// Static baseline as `<config_id>:<qp>`.
        #[arg(long, value_parser = parse_baseline)]
        baseline: Option<(String, i32)>,
        /// Segment duration in seconds.
        #[arg(long, default_value_t = sweepdata::DEFAULT_SEGMENT_SECONDS)]
        segment_seconds: f64,
        /// Fraction of the trace bandwidth usable as bitrate cap.
        #[arg(long, default_value_t = 1.0)]
        safety: f64,
    },
    /// Bjøntegaard delta bitrate of a test curve against a reference.
    Bdrate {
        /// Reference RD curve (`bitrate_kbps,quality`).
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Test RD curve.
        #[arg(long)]
        test: PathBuf,
        /// Quality metric of both curves.
        #[arg(long, value_enum, default_value_t = KindArg::Vmaf)]
        quality: KindArg,
    },
    /// Weighted PSNR (6Y + U + V) / 8.
    Psnr611 {
        /// Luma PSNR in dB.
        #[arg(long)]
        y: f64,
        /// Cb PSNR in dB.
        #[arg(long)]
        u: f64,
        /// Cr PSNR in dB.
        #[arg(long)]
        v: f64,
    },
}

#[derive(Args)]
struct ConstraintArgs {
    /// Minimum quality.
    #[arg(long)]
    vq_min: Option<f64>,
    /// Quality metric `--vq-min` refers to.
    #[arg(long, value_enum, default_value_t = KindArg::Vmaf)]
    vq_kind: KindArg,
    /// Maximum bitrate in kbps.
    #[arg(long)]
    b_max: Option<f64>,
    /// Minimum encoding FPS.
    #[arg(long)]
    fps_min: Option<f64>,
}

impl ConstraintArgs {
    fn to_set(&self) -> ConstraintSet {
        let mut c = ConstraintSet::default();
        if let Some(v) = self.vq_min {
            c = c.with_vq_min(self.vq_kind.into(), v);
        }
        if let Some(b) = self.b_max {
            c = c.with_b_max(b);
        }
        if let Some(f) = self.fps_min {
            c = c.with_fps_min(f);
        }
        c
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Vmaf,
    Psnr,
}

impl From<KindArg> for QualityKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Vmaf => QualityKind::Vmaf,
            KindArg::Psnr => QualityKind::Psnr611,
        }
    }
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

fn parse_baseline(s: &str) -> Result<(String, i32), String> {
    let (config, qp) = s
        .rsplit_once(':')
        .ok_or_else(|| format!("expected <config_id>:<qp>, got `{s}`"))?;
    let qp = qp.parse().map_err(|_| format!("bad qp `{qp}`"))?;
    if config.is_empty() {
        return Err("empty config id".into());
    }
    Ok((config.to_string(), qp))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).with_context(|| format!("cannot open {}", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

struct Ctx {
    quiet: bool,
    out: Option<PathBuf>,
}

impl Ctx {
    fn warn(&self, msg: impl std::fmt::Display) {
        if !self.quiet {
            eprintln!("warning: {msg}");
        }
    }

    fn emit(&self, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        match &self.out {
            Some(path) => {
                let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
                let mut w = BufWriter::new(file);
                f(&mut w)?;
                w.flush()?;
            }
            None => {
                let stdout = io::stdout();
                let mut w = stdout.lock();
                f(&mut w)?;
                w.flush()?;
            }
        }
        Ok(())
    }
}

fn load_sweep(ctx: &Ctx, path: &Path) -> Result<SweepDataset> {
    let parsed = parse_sweep(open(path)?).with_context(|| format!("cannot parse {}", path.display()))?;
    for w in &parsed.warnings {
        ctx.warn(format!("{}:{}: {}", path.display(), w.line, w.message));
    }
    Ok(parsed.dataset)
}

fn load_store(path: &Path) -> Result<ModelStore> {
    read_store(open(path)?).with_context(|| format!("cannot parse {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx {
        quiet: cli.quiet,
        out: cli.out,
    };
    match cli.command {
        Command::Sweep { profile, space, inputs } => {
            let profile = EncoderProfile::from_toml(&read_text(&profile)?)
                .with_context(|| format!("invalid profile {}", profile.display()))?;
            let space = SweepSpace::from_toml(&read_text(&space)?)
                .with_context(|| format!("invalid space {}", space.display()))?;
            let inputs = encoderio::discover_inputs(&inputs)?;
            if inputs.is_empty() {
                return Err(anyhow!("no <video>_<segment> inputs found"));
            }
            let run = encoderio::run_sweep(&profile, &inputs, &space)?;
            for w in &run.warnings {
                ctx.warn(w);
            }
            ctx.emit(|w| Ok(run.dataset.write_csv(w)?))
        }
        Command::MockSweep { params } => {
            let mut gt = GroundTruthParams::from_toml(&read_text(&params)?)
                .with_context(|| format!("invalid params {}", params.display()))?;
            if let Some(seed) = cli.seed {
                gt.seed = seed;
            }
            let ds = encoderio::mock_sweep(&gt)?;
            ctx.emit(|w| Ok(ds.write_csv(w)?))
        }
        Command::Fit { sweep, all_samples } => {
            let ds = load_sweep(&ctx, &sweep)?;
            let store = if all_samples {
                let mut store = ModelStore::new();
                for v in ds.videos() {
                    for s in ds.segments(v) {
                        store.insert(models::fit_segment_bundle(&ds, v, s, false)?);
                    }
                }
                store
            } else {
                let (store, log) = session::build_models_logged(&ds)?;
                for entry in log.iter().filter(|e| e.check.is_some()) {
                    let c = entry.check.expect("filtered");
                    let e = c.max_errors;
                    if !ctx.quiet {
                        eprintln!(
                            "{}/{}: {} (max error vmaf {:.4}, psnr {:.4}, bitrate {:.4}, fps {:.4})",
                            entry.video_id,
                            entry.segment_index,
                            if c.reuse { "reused" } else { "refitted" },
                            e.vmaf,
                            e.psnr,
                            e.bitrate,
                            e.fps
                        );
                    }
                }
                store
            };
            for b in store.bundles() {
                for (cfg, m) in &b.configs {
                    if m.fallback {
                        ctx.warn(format!(
                            "{}/{}/{cfg}: too few Pareto points, fitted on all samples",
                            b.video_id, b.segment_index
                        ));
                    }
                }
            }
            ctx.emit(|w| Ok(write_store(&store, w)?))
        }
        Command::Pareto { sweep, explain } => {
            let ds = load_sweep(&ctx, &sweep)?;
            let mut rows = Vec::new();
            let mut notes = Vec::new();
            for v in ds.videos() {
                for s in ds.segments(v) {
                    let view = ds.segment_view(v, s)?;
                    let points: Vec<ObjectivePoint> = view.iter().map(|x| ObjectivePoint::from_sample(x)).collect();
                    let dominated = pareto::classify(&points)?;
                    for (sample, by) in view.into_iter().zip(dominated) {
                        if explain {
                            rows.push(sample);
                            notes.push(by.map(|k| k.to_string()).unwrap_or_default());
                        } else if by.is_none() {
                            rows.push(sample);
                        }
                    }
                }
            }
            let annotations = explain.then_some(notes.as_slice());
            ctx.emit(|w| {
                Ok(sweepdata::write_sweep_csv(
                    w,
                    ds.segment_seconds(),
                    ds.codec_id(),
                    rows.iter().copied(),
                    annotations,
                )?)
            })
        }
        Command::Optimize {
            models,
            segment,
            video,
            mode,
            constraints,
        } => {
            let store = load_store(&models)?;
            let video = match video {
                Some(v) => v,
                None => match store.videos().as_slice() {
                    [only] => only.to_string(),
                    [] => return Err(anyhow!("model store {} is empty", models.display())),
                    many => return Err(anyhow!("store holds several videos ({}); pass --video", many.join(", "))),
                },
            };
            let bundle = store
                .get(&video, segment)
                .ok_or_else(|| anyhow!("no models for {video} segment {segment}"))?;
            let d = optimizer::solve(bundle, mode, &constraints.to_set())?;
            ctx.emit(|w| {
                writeln!(w, "{DECISION_COLUMNS}")?;
                writeln!(w, "{}", d.csv_row())?;
                Ok(())
            })
        }
        Command::Simulate {
            models,
            trace,
            video,
            mode,
            constraints,
            baseline,
            segment_seconds,
            safety,
        } => {
            let store = load_store(&models)?;
            let trace = BandwidthTrace::from_csv(open(&trace)?)
                .with_context(|| format!("cannot parse {}", trace.display()))?;
            let opts = SessionOptions { segment_seconds, safety };
            let mut report =
                session::run_session(&store, video.as_deref(), &trace, mode, &constraints.to_set(), opts)?;
            if let Some((config, qp)) = baseline {
                report = session::compare_static(report, &store, &config, qp)?;
            }
            ctx.emit(|w| Ok(session::write_report(&report, w)?))
        }
        Command::Bdrate { reference, test, quality } => {
            let kind = quality.into();
            let r = RdCurve::from_csv(open(&reference)?, kind)
                .with_context(|| format!("cannot parse {}", reference.display()))?;
            let t = RdCurve::from_csv(open(&test)?, kind)
                .with_context(|| format!("cannot parse {}", test.display()))?;
            let bd = bd_rate(&r, &t)?;
            ctx.emit(|w| Ok(writeln!(w, "{}", fmt_f64(bd))?))
        }
        Command::Psnr611 { y, u, v } => {
            let p = psnr_weighted(y, u, v)?;
            ctx.emit(|w| Ok(writeln!(w, "{}", fmt_f64(p))?))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
