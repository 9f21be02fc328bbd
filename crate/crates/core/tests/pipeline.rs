use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::Path;

use adaptenc::encoderio::{
    discover_inputs, mock_sweep, run_sweep, EncoderError, EncoderProfile, GroundTruthParams, SweepSpace,
};
use adaptenc::models::{read_store, write_store, Provenance};
use adaptenc::optimizer::{ConstraintSet, Mode};
use adaptenc::session::{self, BandwidthTrace, SessionOptions};
use adaptenc::sweepdata::parse_sweep;
use adaptenc::QualityKind;

const FAKE_ENCODER: &str = r#"#!/bin/sh
# usage: enc <input> <output> <qp> [flags...]
if [ "$3" = "27" ] && [ "$4" = "--tune=fail" ]; then
  echo "simulated crash" >&2
  exit 3
fi
head -c 3000 /dev/zero > "$2"
echo "VMAF 91.5 Y 40.0 U 38.0 V 39.0"
"#;

fn write_script(dir: &Path) -> String {
    let path = dir.join("enc.sh");
    fs::write(&path, FAKE_ENCODER).unwrap();
    fs::set_permissions(&path, fs::Permissions::from_mode(0o755)).unwrap();
    path.to_string_lossy().into_owned()
}

fn profile(script: &str, work: &Path) -> EncoderProfile {
    EncoderProfile::from_toml(&format!(
        r#"
codec_id = "fake"
command_template = "'{script}' {{input}} {{output}} {{qp}} {{flags}}"
parallelism = 3
output_extension = "bin"
work_dir = '{}'

[metric_patterns]
vmaf = 'VMAF ([0-9.]+)'
psnr_y = 'Y ([0-9.]+)'
psnr_u = 'U ([0-9.]+)'
psnr_v = 'V ([0-9.]+)'
"#,
        work.display()
    ))
    .unwrap()
}

fn space(second_flag: &str) -> SweepSpace {
    SweepSpace::from_toml(&format!(
        r#"
segment_seconds = 2.0
framerate = 25.0
qps = [22, 27, 32]

[[configs]]
config_id = "fast"
flags = [{{ name = "--preset", value = "fast" }}]

[[configs]]
config_id = "slow"
flags = [{{ name = "{second_flag}", value = "" }}]
"#
    ))
    .unwrap()
}

#[test]
fn driver_grid_bitrate_and_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = dir.path().join("in");
    fs::create_dir(&inputs).unwrap();
    fs::write(inputs.join("clip_0.y4m"), b"frames").unwrap();
    let script = write_script(dir.path());
    let work = dir.path().join("work");

    let found = discover_inputs(&inputs).unwrap();
    let run = run_sweep(&profile(&script, &work), &found, &space("--slow")).unwrap();
    assert!(run.warnings.is_empty(), "{:?}", run.warnings);
    let samples = run.dataset.samples();
    assert_eq!(samples.len(), 6);
    let order: Vec<(&str, i32)> = samples.iter().map(|s| (s.config_id.as_str(), s.qp)).collect();
    assert_eq!(
        order,
        [("fast", 22), ("fast", 27), ("fast", 32), ("slow", 22), ("slow", 27), ("slow", 32)]
    );
    for s in samples {
        assert_eq!(s.bitrate_kbps, 3000.0 * 8.0 / 2.0 / 1000.0);
        assert_eq!(s.vmaf, 91.5);
        assert_eq!(s.psnr(), (6.0 * 40.0 + 38.0 + 39.0) / 8.0);
        assert!(s.enc_fps > 0.0);
    }
    assert_eq!(run.dataset.config("fast").unwrap().flags, vec![("--preset".into(), "fast".into())]);

    let mut buf = Vec::new();
    run.dataset.write_csv(&mut buf).unwrap();
    let parsed = parse_sweep(buf.as_slice()).unwrap();
    assert!(parsed.warnings.is_empty());
    assert_eq!(parsed.dataset.samples(), samples);
    assert_eq!(parsed.dataset.segment_seconds(), 2.0);
    assert_eq!(parsed.dataset.codec_id(), "fake");
}

#[test]
fn driver_skips_failed_encode() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("clip_0.y4m");
    fs::write(&input, b"frames").unwrap();
    let script = write_script(dir.path());
    let found = discover_inputs(dir.path()).unwrap();
    assert_eq!(found.len(), 1);
    let run = run_sweep(&profile(&script, &dir.path().join("w")), &found, &space("--tune=fail")).unwrap();
    assert_eq!(run.dataset.samples().len(), 5);
    assert_eq!(run.warnings.len(), 1);
    assert!(run.warnings[0].contains("slow") && run.warnings[0].contains("27"));
}

#[test]
fn driver_reports_missing_input() {
    let dir = tempfile::tempdir().unwrap();
    let script = write_script(dir.path());
    let missing = adaptenc::encoderio::SegmentInput {
        video_id: "clip".into(),
        segment_index: 0,
        path: dir.path().join("nope.y4m"),
    };
    assert!(matches!(
        run_sweep(&profile(&script, dir.path()), &[missing], &space("--slow")),
        Err(EncoderError::InputMissing(_))
    ));
}

const PARAMS: &str = r#"
video_id = "mock"
seed = 5
noise_scale = 0.01
qps = [18, 21, 24, 27, 30, 33, 36, 39, 42, 45]

[[entries]]
segment_index = 0
config_id = "A"
vmaf = [4.68, -0.006, -0.0001]
psnr = [3.9, -0.008, -0.00002]
bitrate = [11.5, -0.15, 0.0008]
fps = [2.0, 0.05, 0.0]

[[entries]]
segment_index = 0
config_id = "B"
vmaf = [4.66, -0.006, -0.0001]
psnr = [3.89, -0.008, -0.00002]
bitrate = [11.3, -0.15, 0.0008]
fps = [2.4, 0.05, 0.0]

[[entries]]
segment_index = 1
config_id = "A"
vmaf = [4.68, -0.006, -0.0001]
psnr = [3.9, -0.008, -0.00002]
bitrate = [11.9, -0.15, 0.0008]
fps = [2.0, 0.05, 0.0]

[[entries]]
segment_index = 1
config_id = "B"
vmaf = [4.66, -0.006, -0.0001]
psnr = [3.89, -0.008, -0.00002]
bitrate = [11.7, -0.15, 0.0008]
fps = [2.4, 0.05, 0.0]
"#;

#[test]
fn session_invariants() {
    let gt = GroundTruthParams::from_toml(PARAMS).unwrap();
    let ds = mock_sweep(&gt).unwrap();
    let store = session::build_models(&ds).unwrap();
    assert_eq!(store.get("mock", 1).unwrap().provenance, Provenance::Fitted);

    let mut text = Vec::new();
    write_store(&store, &mut text).unwrap();
    let loaded = read_store(text.as_slice()).unwrap();
    let mut again = Vec::new();
    write_store(&loaded, &mut again).unwrap();
    assert_eq!(text, again);

    let trace = BandwidthTrace::new(vec![(0.0, 50_000.0), (3.0, 20_000.0)]).unwrap();
    let opts = SessionOptions {
        segment_seconds: 3.0,
        safety: 0.8,
    };
    let c = ConstraintSet::default().with_fps_min(10.0);
    let report = session::run_session(&loaded, None, &trace, Mode::MaxQuality, &c, opts).unwrap();
    assert_eq!(report.rows.len(), 2);
    for row in &report.rows {
        let expected = trace.at(row.segment_index as f64 * 3.0).unwrap() * 0.8;
        assert_eq!(row.b_max_used, Some(expected));
        assert_eq!(row.constraints_used.b_max, Some(expected));
    }
    let n = report.rows.len() as f64;
    let avg: f64 = report.rows.iter().map(|r| r.decision.predicted.bitrate_kbps).sum::<f64>() / n;
    assert_eq!(avg, report.averages.bitrate_kbps);

    let report = session::compare_static(report, &loaded, "A", 27).unwrap();
    let mut out = Vec::new();
    session::write_report(&report, &mut out).unwrap();
    let out = String::from_utf8(out).unwrap();
    assert!(out.contains("\n# summary\n"));
    assert!(out.contains("# baseline=A:27\n"));
    assert!(out.contains("# delta_gain_percent="));
    assert!(matches!(
        session::compare_static(report, &loaded, "Z", 27),
        Err(session::SessionError::BaselineConfigMissing { .. })
    ));
}

#[test]
fn min_bitrate_ignores_trace() {
    let gt = GroundTruthParams::from_toml(PARAMS).unwrap();
    let store = session::build_models(&mock_sweep(&gt).unwrap()).unwrap();
    let c = ConstraintSet::default()
        .with_vq_min(QualityKind::Vmaf, 80.0)
        .with_fps_min(10.0);
    let low = BandwidthTrace::constant(1.0).unwrap();
    let high = BandwidthTrace::constant(1e9).unwrap();
    let a = session::run_session(&store, None, &low, Mode::MinBitrate, &c, SessionOptions::default()).unwrap();
    let b = session::run_session(&store, None, &high, Mode::MinBitrate, &c, SessionOptions::default()).unwrap();
    let picks = |r: &adaptenc::SessionReport| {
        r.rows
            .iter()
            .map(|x| (x.decision.config_id.clone(), x.decision.qp))
            .collect::<Vec<_>>()
    };
    assert_eq!(picks(&a), picks(&b));
    assert!(a.rows.iter().all(|r| r.b_max_used.is_none()));
}

#[test]
fn mock_sweep_is_deterministic() {
    let gt = GroundTruthParams::from_toml(PARAMS).unwrap();
    let mut a = Vec::new();
    let mut b = Vec::new();
    mock_sweep(&gt).unwrap().write_csv(&mut a).unwrap();
    mock_sweep(&gt).unwrap().write_csv(&mut b).unwrap();
    assert_eq!(a, b);
    let mut other = gt.clone();
    other.seed += 1;
    let mut c = Vec::new();
    mock_sweep(&other).unwrap().write_csv(&mut c).unwrap();
    assert_ne!(a, c);
}
