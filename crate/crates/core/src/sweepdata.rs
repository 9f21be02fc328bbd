//! Measurement data model and sweep-log ingestion.
//!
//! A sweep log is a CSV file with one row per encode:
//!
//! ```text
//! # segment_seconds=3
//! # codec=x265
//! video_id,segment_index,config_id,qp,vmaf,psnr_y,psnr_u,psnr_v,bitrate_kbps,enc_fps
//! cactus,0,B3,28,92.48,36.9,38.1,38.3,11130,57.27
//! ```
//!
//! The leading `#` block is optional. Rows whose metrics are not strictly
//! positive (or VMAF above 100) are dropped with a warning; duplicate keys
//! abort the parse.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{Read, Write};

use thiserror::Error;

use crate::numfmt::fmt_f64;

pub const SWEEP_COLUMNS: [&str; 10] = [
    "video_id",
    "segment_index",
    "config_id",
    "qp",
    "vmaf",
    "psnr_y",
    "psnr_u",
    "psnr_v",
    "bitrate_kbps",
    "enc_fps",
];

pub const DEFAULT_SEGMENT_SECONDS: f64 = 3.0;
pub const DEFAULT_CODEC: &str = "unknown";

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("duplicate sample key {0}")]
    DuplicateKey(SampleKey),
    #[error("dataset contains no valid rows")]
    EmptyDataset,
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("unknown segment {video_id}/{segment_index}")]
    UnknownSegment { video_id: String, segment_index: u32 },
    #[error("sample {0} references an undeclared configuration")]
    UnknownConfig(SampleKey),
    #[error("duplicate configuration id `{0}`")]
    DuplicateConfig(String),
    #[error("invalid segment duration {0}")]
    InvalidSegmentSeconds(f64),
    #[error("invalid sample {key}: {reason}")]
    InvalidSample { key: SampleKey, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One point of the configuration space, e.g. `B3` with its encoder flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigDescriptor {
    pub config_id: String,
    pub codec_id: String,
    /// Encoder flags in stored order; opaque to the engine.
    pub flags: Vec<(String, String)>,
}

impl ConfigDescriptor {
    pub fn bare(config_id: impl Into<String>, codec_id: impl Into<String>) -> Self {
        Self {
            config_id: config_id.into(),
            codec_id: codec_id.into(),
            flags: Vec::new(),
        }
    }
}

/// Unique key of an encode within a dataset.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SampleKey {
    pub video_id: String,
    pub segment_index: u32,
    pub config_id: String,
    pub qp: i32,
}

impl fmt::Display for SampleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.video_id, self.segment_index, self.config_id, self.qp
        )
    }
}

/// One measured encode.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingSample {
    pub video_id: String,
    pub segment_index: u32,
    pub config_id: String,
    pub qp: i32,
    pub vmaf: f64,
    pub psnr_y: f64,
    pub psnr_u: f64,
    pub psnr_v: f64,
    pub bitrate_kbps: f64,
    pub enc_fps: f64,
}

impl EncodingSample {
    pub fn key(&self) -> SampleKey {
        SampleKey {
            video_id: self.video_id.clone(),
            segment_index: self.segment_index,
            config_id: self.config_id.clone(),
            qp: self.qp,
        }
    }

    /// Combined PSNR_611 of the three components.
    pub fn psnr(&self) -> f64 {
        (6.0 * self.psnr_y + self.psnr_u + self.psnr_v) / 8.0
    }

    /// Checks the positivity invariants required by log-domain modeling.
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("vmaf", self.vmaf),
            ("psnr_y", self.psnr_y),
            ("psnr_u", self.psnr_u),
            ("psnr_v", self.psnr_v),
            ("bitrate_kbps", self.bitrate_kbps),
            ("enc_fps", self.enc_fps),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v <= 0.0 {
                return Err(format!("{name} = {v} is not strictly positive"));
            }
        }
        if self.vmaf > 100.0 {
            return Err(format!("vmaf = {} exceeds 100", self.vmaf));
        }
        if self.config_id.is_empty() {
            return Err("empty config_id".into());
        }
        Ok(())
    }
}

/// Row excluded during parsing.
#[derive(Debug, Clone, PartialEq)]
pub struct RowWarning {
    /// 1-based line number in the source text.
    pub line: u64,
    pub message: String,
}

impl fmt::Display for RowWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// Validated, immutable collection of encodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepDataset {
    samples: Vec<EncodingSample>,
    configs: Vec<ConfigDescriptor>,
    segment_seconds: f64,
    codec_id: String,
}

impl SweepDataset {
    /// Builds a dataset, checking every invariant. Samples must already be
    /// valid; configurations not listed in `configs` are rejected.
    pub fn new(
        samples: Vec<EncodingSample>,
        configs: Vec<ConfigDescriptor>,
        segment_seconds: f64,
        codec_id: impl Into<String>,
    ) -> Result<Self, SweepError> {
        if !(segment_seconds.is_finite() && segment_seconds > 0.0) {
            return Err(SweepError::InvalidSegmentSeconds(segment_seconds));
        }
        if samples.is_empty() {
            return Err(SweepError::EmptyDataset);
        }
        let mut ids = HashSet::new();
        for c in &configs {
            if c.config_id.is_empty() || !ids.insert(c.config_id.as_str()) {
                return Err(SweepError::DuplicateConfig(c.config_id.clone()));
            }
        }
        let mut keys = HashSet::new();
        for s in &samples {
            let key = s.key();
            if let Err(reason) = s.validate() {
                return Err(SweepError::InvalidSample { key, reason });
            }
            if !ids.contains(s.config_id.as_str()) {
                return Err(SweepError::UnknownConfig(key));
            }
            if !keys.insert(key.clone()) {
                return Err(SweepError::DuplicateKey(key));
            }
        }
        Ok(Self {
            samples,
            configs,
            segment_seconds,
            codec_id: codec_id.into(),
        })
    }

    pub fn samples(&self) -> &[EncodingSample] {
        &self.samples
    }

    pub fn configs(&self) -> &[ConfigDescriptor] {
        &self.configs
    }

    pub fn segment_seconds(&self) -> f64 {
        self.segment_seconds
    }

    pub fn codec_id(&self) -> &str {
        &self.codec_id
    }

    pub fn config(&self, config_id: &str) -> Option<&ConfigDescriptor> {
        self.configs.iter().find(|c| c.config_id == config_id)
    }

    /// Video ids in sorted order.
    pub fn videos(&self) -> Vec<&str> {
        let set: BTreeSet<&str> = self.samples.iter().map(|s| s.video_id.as_str()).collect();
        set.into_iter().collect()
    }

    /// Segment indices present for `video_id`, ascending.
    pub fn segments(&self, video_id: &str) -> Vec<u32> {
        let set: BTreeSet<u32> = self
            .samples
            .iter()
            .filter(|s| s.video_id == video_id)
            .map(|s| s.segment_index)
            .collect();
        set.into_iter().collect()
    }

    /// All samples of one segment ordered by `(config_id, qp)`.
    pub fn segment_view(
        &self,
        video_id: &str,
        segment_index: u32,
    ) -> Result<Vec<&EncodingSample>, SweepError> {
        let mut out: Vec<&EncodingSample> = self
            .samples
            .iter()
            .filter(|s| s.video_id == video_id && s.segment_index == segment_index)
            .collect();
        if out.is_empty() {
            return Err(SweepError::UnknownSegment {
                video_id: video_id.to_string(),
                segment_index,
            });
        }
        out.sort_by(|a, b| (&a.config_id, a.qp).cmp(&(&b.config_id, b.qp)));
        Ok(out)
    }

    /// Samples of one segment grouped per configuration, each group sorted by QP.
    pub fn segment_by_config(
        &self,
        video_id: &str,
        segment_index: u32,
    ) -> Result<BTreeMap<String, Vec<&EncodingSample>>, SweepError> {
        let mut map: BTreeMap<String, Vec<&EncodingSample>> = BTreeMap::new();
        for s in self.segment_view(video_id, segment_index)? {
            map.entry(s.config_id.clone()).or_default().push(s);
        }
        Ok(map)
    }

    /// Writes the dataset in sweep CSV format, including the metadata block.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SweepError> {
        write_sweep_csv(
            out,
            self.segment_seconds,
            &self.codec_id,
            self.samples.iter(),
            None,
        )
    }
}

/// Writes samples in sweep CSV format. When `annotations` is given, a
/// trailing `dominated_by` column is appended with one entry per sample.
pub fn write_sweep_csv<'a, W: Write>(
    mut out: W,
    segment_seconds: f64,
    codec_id: &str,
    samples: impl Iterator<Item = &'a EncodingSample>,
    annotations: Option<&[String]>,
) -> Result<(), SweepError> {
    writeln!(out, "# segment_seconds={}", fmt_f64(segment_seconds))?;
    writeln!(out, "# codec={codec_id}")?;
    let mut header = SWEEP_COLUMNS.join(",");
    if annotations.is_some() {
        header.push_str(",dominated_by");
    }
    writeln!(out, "{header}")?;
    for (i, s) in samples.enumerate() {
        write!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            s.video_id,
            s.segment_index,
            s.config_id,
            s.qp,
            fmt_f64(s.vmaf),
            fmt_f64(s.psnr_y),
            fmt_f64(s.psnr_u),
            fmt_f64(s.psnr_v),
            fmt_f64(s.bitrate_kbps),
            fmt_f64(s.enc_fps),
        )?;
        if let Some(notes) = annotations {
            write!(out, ",{}", notes.get(i).map(String::as_str).unwrap_or(""))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Result of [`parse_sweep`]: the dataset plus the rows that were skipped.
#[derive(Debug, Clone)]
pub struct ParsedSweep {
    pub dataset: SweepDataset,
    pub warnings: Vec<RowWarning>,
}

/// Parses and validates a sweep CSV.
pub fn parse_sweep<R: Read>(mut source: R) -> Result<ParsedSweep, SweepError> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;

    let mut segment_seconds = DEFAULT_SEGMENT_SECONDS;
    let mut codec = DEFAULT_CODEC.to_string();
    let mut comment_lines = 0u64;
    let mut body_start = 0usize;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if !trimmed.starts_with('#') && !trimmed.is_empty() {
            break;
        }
        comment_lines += 1;
        body_start += line.len();
        let meta = trimmed.trim_start_matches('#').trim();
        if let Some((k, v)) = meta.split_once('=') {
            match k.trim() {
                "segment_seconds" => {
                    segment_seconds = v.trim().parse().map_err(|_| SweepError::Malformed {
                        line: comment_lines,
                        message: format!("bad segment_seconds `{}`", v.trim()),
                    })?;
                }
                "codec" => codec = v.trim().to_string(),
                _ => {}
            }
        }
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(&text.as_bytes()[body_start..]);
    let headers = reader.headers()?.clone();
    let mut idx = [0usize; 10];
    for (slot, name) in idx.iter_mut().zip(SWEEP_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| SweepError::MissingColumn(name.to_string()))?;
    }

    let mut samples = Vec::new();
    let mut warnings = Vec::new();
    let mut seen = HashSet::new();
    let mut config_ids = BTreeSet::new();
    for record in reader.records() {
        let record = record?;
        let line = comment_lines + record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| record.get(idx[i]).unwrap_or("");
        let malformed = |name: &str, raw: &str| SweepError::Malformed {
            line,
            message: format!("cannot parse {name} `{raw}`"),
        };
        let int = |i: usize| -> Result<i64, SweepError> {
            field(i).parse().map_err(|_| malformed(SWEEP_COLUMNS[i], field(i)))
        };
        let real = |i: usize| -> Result<f64, SweepError> {
            field(i).parse().map_err(|_| malformed(SWEEP_COLUMNS[i], field(i)))
        };
        let segment_index = u32::try_from(int(1)?).map_err(|_| malformed("segment_index", field(1)))?;
        let qp = i32::try_from(int(3)?).map_err(|_| malformed("qp", field(3)))?;
        let sample = EncodingSample {
            video_id: field(0).to_string(),
            segment_index,
            config_id: field(2).to_string(),
            qp,
            vmaf: real(4)?,
            psnr_y: real(5)?,
            psnr_u: real(6)?,
            psnr_v: real(7)?,
            bitrate_kbps: real(8)?,
            enc_fps: real(9)?,
        };
        if let Err(message) = sample.validate() {
            warnings.push(RowWarning { line, message });
            continue;
        }
        let key = sample.key();
        if !seen.insert(key.clone()) {
            return Err(SweepError::DuplicateKey(key));
        }
        config_ids.insert(sample.config_id.clone());
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(SweepError::EmptyDataset);
    }
    let configs = config_ids
        .into_iter()
        .map(|id| ConfigDescriptor::bare(id, codec.clone()))
        .collect();
    let dataset = SweepDataset::new(samples, configs, segment_seconds, codec)?;
    Ok(ParsedSweep { dataset, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "video_id,segment_index,config_id,qp,vmaf,psnr_y,psnr_u,psnr_v,bitrate_kbps,enc_fps\n";

    fn parse(text: &str) -> Result<ParsedSweep, SweepError> {
        parse_sweep(text.as_bytes())
    }

    #[test]
    fn two_valid_rows() {
        let text = format!("{HEADER}v,0,B2,20,95,40,41,42,5000,30\nv,0,B2,24,90,38,39,40,3000,35\n");
        let parsed = parse(&text).unwrap();
        assert_eq!(parsed.dataset.samples().len(), 2);
        assert!(parsed.warnings.is_empty());
        assert_eq!(parsed.dataset.segment_seconds(), 3.0);
    }

    #[test]
    fn zero_bitrate_row_is_excluded() {
        let text = format!(
            "{HEADER}v,0,B2,20,95,40,41,42,5000,30\nv,0,B2,24,90,38,39,40,0,35\nv,0,B2,28,85,36,37,38,2000,40\n"
        );
        let parsed = parse(&text).unwrap();
        assert_eq!(parsed.dataset.samples().len(), 2);
        assert_eq!(parsed.warnings.len(), 1);
        assert_eq!(parsed.warnings[0].line, 3);
        assert!(parsed.warnings[0].message.contains("bitrate_kbps"));
    }

    #[test]
    fn duplicate_key_is_an_error() {
        let text = format!("{HEADER}v,0,B2,20,95,40,41,42,5000,30\nv,0,B2,20,94,40,41,42,5100,30\n");
        assert!(matches!(parse(&text), Err(SweepError::DuplicateKey(_))));
    }

    #[test]
    fn missing_column() {
        let text = "video_id,segment_index,config_id,qp,vmaf\nv,0,B2,20,95\n";
        match parse(text) {
            Err(SweepError::MissingColumn(c)) => assert_eq!(c, "psnr_y"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_dataset() {
        assert!(matches!(parse(HEADER), Err(SweepError::EmptyDataset)));
        let text = format!("{HEADER}v,0,B2,20,-1,40,41,42,5000,30\n");
        assert!(matches!(parse(&text), Err(SweepError::EmptyDataset)));
    }

    #[test]
    fn metadata_block() {
        let text = format!("# segment_seconds=2.5\n# codec=x265\n{HEADER}v,0,B2,20,95,40,41,42,5000,30\n");
        let parsed = parse(&text).unwrap();
        assert_eq!(parsed.dataset.segment_seconds(), 2.5);
        assert_eq!(parsed.dataset.codec_id(), "x265");
        assert_eq!(parsed.dataset.configs()[0].codec_id, "x265");
    }

    #[test]
    fn malformed_number_reports_line() {
        let text = format!("# codec=x\n{HEADER}v,0,B2,abc,95,40,41,42,5000,30\n");
        match parse(&text) {
            Err(SweepError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn two_segments() -> String {
        format!(
            "{HEADER}v,1,B3,20,95,40,41,42,5000,30\nv,0,B3,24,90,38,39,40,3000,35\nv,0,B2,24,91,38,39,40,3100,34\nv,0,B2,20,96,40,41,42,5200,29\n"
        )
    }

    #[test]
    fn segment_view_filters_and_orders() {
        let ds = parse(&two_segments()).unwrap().dataset;
        let view = ds.segment_view("v", 0).unwrap();
        let keys: Vec<(&str, i32)> = view.iter().map(|s| (s.config_id.as_str(), s.qp)).collect();
        assert_eq!(keys, vec![("B2", 20), ("B2", 24), ("B3", 24)]);
        assert!(matches!(
            ds.segment_view("v", 7),
            Err(SweepError::UnknownSegment { segment_index: 7, .. })
        ));
    }

    #[test]
    fn segment_view_invariant_under_permutation() {
        let text = two_segments();
        let mut rows: Vec<&str> = text.lines().skip(1).collect();
        rows.reverse();
        let permuted = format!("{HEADER}{}\n", rows.join("\n"));
        let a = parse(&text).unwrap().dataset;
        let b = parse(&permuted).unwrap().dataset;
        assert_eq!(a.segment_view("v", 0).unwrap(), b.segment_view("v", 0).unwrap());
    }

    #[test]
    fn serialize_then_reparse() {
        let ds = parse(&two_segments()).unwrap().dataset;
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let again = parse_sweep(buf.as_slice()).unwrap();
        assert!(again.warnings.is_empty());
        assert_eq!(again.dataset, ds);
    }

    #[test]
    fn psnr_matches_metrics_module() {
        let ds = parse(&two_segments()).unwrap().dataset;
        for s in ds.samples() {
            assert_eq!(s.psnr(), crate::metrics::psnr_weighted(s.psnr_y, s.psnr_u, s.psnr_v).unwrap());
        }
    }
}
