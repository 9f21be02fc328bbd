//! Line-oriented model store.
//!
//! ```text
//! video_id,segment_index,config_id,objective,order,b0,b1,b2,b3,adj_r2,qp_min,qp_max,provenance
//! cactus,0,B2,vmaf,2,3.84,0.067,-0.001499,0.0,0.98,18,45,fitted
//! ```
//!
//! Unused high-order coefficients are written as `0.0`; provenance is
//! `fitted` or `reused:<segment_index>`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::{ConfigModels, ForwardModel, ModelBundle, ModelError, Objective, Provenance, MAX_ORDER};
use crate::numfmt::fmt_f64;

pub const STORE_COLUMNS: [&str; 13] = [
    "video_id",
    "segment_index",
    "config_id",
    "objective",
    "order",
    "b0",
    "b1",
    "b2",
    "b3",
    "adj_r2",
    "qp_min",
    "qp_max",
    "provenance",
];

/// Bundles keyed by `(video_id, segment_index)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelStore {
    bundles: BTreeMap<(String, u32), ModelBundle>,
}

impl ModelStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, bundle: ModelBundle) {
        self.bundles
            .insert((bundle.video_id.clone(), bundle.segment_index), bundle);
    }

    pub fn get(&self, video_id: &str, segment_index: u32) -> Option<&ModelBundle> {
        self.bundles.get(&(video_id.to_string(), segment_index))
    }

    pub fn is_empty(&self) -> bool {
        self.bundles.is_empty()
    }

    pub fn len(&self) -> usize {
        self.bundles.len()
    }

    pub fn videos(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.bundles.keys().map(|(v, _)| v.as_str()).collect();
        v.dedup();
        v
    }

    /// Bundles of one video in segment order.
    pub fn segments(&self, video_id: &str) -> Vec<&ModelBundle> {
        self.bundles
            .values()
            .filter(|b| b.video_id == video_id)
            .collect()
    }

    pub fn bundles(&self) -> impl Iterator<Item = &ModelBundle> {
        self.bundles.values()
    }

    pub fn bundles_mut(&mut self) -> impl Iterator<Item = &mut ModelBundle> {
        self.bundles.values_mut()
    }
}

impl FromIterator<ModelBundle> for ModelStore {
    fn from_iter<I: IntoIterator<Item = ModelBundle>>(iter: I) -> Self {
        let mut store = ModelStore::new();
        for b in iter {
            store.insert(b);
        }
        store
    }
}

fn provenance_str(p: Provenance) -> String {
    match p {
        Provenance::Fitted => "fitted".to_string(),
        Provenance::ReusedFrom(s) => format!("reused:{s}"),
    }
}

fn parse_provenance(s: &str) -> Option<Provenance> {
    if s == "fitted" {
        return Some(Provenance::Fitted);
    }
    s.strip_prefix("reused:")?.parse().ok().map(Provenance::ReusedFrom)
}

pub fn write_store<W: Write>(store: &ModelStore, mut out: W) -> Result<(), ModelError> {
    writeln!(out, "{}", STORE_COLUMNS.join(","))?;
    for b in store.bundles() {
        for (config_id, models) in &b.configs {
            for obj in Objective::ALL {
                let m = models.get(obj);
                let mut coeffs = [0.0; MAX_ORDER + 1];
                coeffs[..m.coeffs.len()].copy_from_slice(&m.coeffs);
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    b.video_id,
                    b.segment_index,
                    config_id,
                    obj,
                    m.order,
                    fmt_f64(coeffs[0]),
                    fmt_f64(coeffs[1]),
                    fmt_f64(coeffs[2]),
                    fmt_f64(coeffs[3]),
                    fmt_f64(m.adj_r2),
                    m.qp_min,
                    m.qp_max,
                    provenance_str(b.provenance),
                )?;
            }
        }
    }
    Ok(())
}

type PartialBundle = (Provenance, BTreeMap<String, BTreeMap<Objective, ForwardModel>>);

pub fn read_store<R: Read>(source: R) -> Result<ModelStore, ModelError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(source);
    let mut partial: BTreeMap<(String, u32), PartialBundle> = BTreeMap::new();

    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.get(0) == Some("video_id") {
            continue;
        }
        let bad = |message: String| ModelError::Malformed { line, message };
        if record.len() != STORE_COLUMNS.len() {
            return Err(bad(format!(
                "expected {} fields, got {}",
                STORE_COLUMNS.len(),
                record.len()
            )));
        }
        let f = |i: usize| record.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64, ModelError> {
            f(i).parse()
                .map_err(|_| bad(format!("cannot parse {} `{}`", STORE_COLUMNS[i], f(i))))
        };
        let int = |i: usize| -> Result<i64, ModelError> {
            f(i).parse()
                .map_err(|_| bad(format!("cannot parse {} `{}`", STORE_COLUMNS[i], f(i))))
        };
        let video_id = f(0).to_string();
        let segment_index = u32::try_from(int(1)?).map_err(|_| bad("bad segment_index".into()))?;
        let config_id = f(2).to_string();
        let objective: Objective = f(3).parse().map_err(bad)?;
        let order = usize::try_from(int(4)?).map_err(|_| bad("bad order".into()))?;
        if order > MAX_ORDER {
            return Err(bad(format!("order {order} exceeds {MAX_ORDER}")));
        }
        let all = [num(5)?, num(6)?, num(7)?, num(8)?];
        if all[order + 1..].iter().any(|&c| c != 0.0) {
            return Err(bad("non-zero coefficient above the model order".into()));
        }
        let adj_r2 = num(9)?;
        let qp_min = i32::try_from(int(10)?).map_err(|_| bad("bad qp_min".into()))?;
        let qp_max = i32::try_from(int(11)?).map_err(|_| bad("bad qp_max".into()))?;
        let provenance =
            parse_provenance(f(12)).ok_or_else(|| bad(format!("bad provenance `{}`", f(12))))?;
        let model = ForwardModel::from_coeffs(objective, all[..=order].to_vec(), adj_r2, qp_min, qp_max)
            .map_err(|e| bad(e.to_string()))?;

        let entry = partial
            .entry((video_id, segment_index))
            .or_insert_with(|| (provenance, BTreeMap::new()));
        if entry.0 != provenance {
            return Err(bad("provenance differs within one segment".into()));
        }
        if entry.1.entry(config_id).or_default().insert(objective, model).is_some() {
            return Err(bad(format!("duplicate {objective} model")));
        }
    }

    let mut store = ModelStore::new();
    for ((video_id, segment_index), (provenance, configs)) in partial {
        let mut out = BTreeMap::new();
        for (config_id, mut models) in configs {
            let mut take = |o: Objective| {
                models.remove(&o).ok_or_else(|| {
                    ModelError::Invalid(format!(
                        "{video_id}/{segment_index}/{config_id} lacks a {o} model"
                    ))
                })
            };
            let cm = ConfigModels::new(
                take(Objective::Vmaf)?,
                take(Objective::Psnr)?,
                take(Objective::Bitrate)?,
                take(Objective::Fps)?,
            )?;
            out.insert(config_id, cm);
        }
        store.insert(ModelBundle {
            video_id,
            segment_index,
            configs: out,
            provenance,
        });
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(seg: u32, provenance: Provenance) -> ModelBundle {
        let m = |o, c: Vec<f64>| ForwardModel::from_coeffs(o, c, 0.99, 18, 45).unwrap();
        let cm = ConfigModels::new(
            m(Objective::Vmaf, vec![3.84, 0.067, -0.001499]),
            m(Objective::Psnr, vec![3.86, -0.0066, -0.000074]),
            m(Objective::Bitrate, vec![16.97, -0.3374, 0.002444]),
            m(Objective::Fps, vec![0.1 + 1.0 / 3.0, 0.1581, -0.001727, 1e-7]),
        )
        .unwrap();
        ModelBundle {
            video_id: "cactus".into(),
            segment_index: seg,
            configs: [("B2".to_string(), cm)].into_iter().collect(),
            provenance,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let store: ModelStore = [bundle(0, Provenance::Fitted), bundle(1, Provenance::ReusedFrom(0))]
            .into_iter()
            .collect();
        let mut buf = Vec::new();
        write_store(&store, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("video_id,segment_index,config_id,objective,order,b0,b1,b2,b3,adj_r2,qp_min,qp_max,provenance\n"));
        assert!(text.contains(",reused:0\n"));
        assert!(text.contains("cactus,0,B2,vmaf,2,3.84,0.067,-0.001499,0.0,0.99,18,45,fitted"));
        let back = read_store(buf.as_slice()).unwrap();
        assert_eq!(back, store);
    }

    #[test]
    fn missing_objective_rejected() {
        let text = "cactus,0,B2,vmaf,1,4.0,-0.01,0,0,0.99,18,45,fitted\n";
        assert!(matches!(read_store(text.as_bytes()), Err(ModelError::Invalid(_))));
    }

    #[test]
    fn malformed_rows() {
        for text in [
            "cactus,0,B2,vmaf,1,4.0,-0.01,0.5,0,0.99,18,45,fitted\n",
            "cactus,0,B2,ssim,1,4.0,-0.01,0,0,0.99,18,45,fitted\n",
            "cactus,0,B2,vmaf,1,4.0,-0.01,0,0,0.99,18,45,copied\n",
            "cactus,0,B2,vmaf,1,4.0\n",
        ] {
            assert!(matches!(read_store(text.as_bytes()), Err(ModelError::Malformed { .. })), "{text}");
        }
    }
}
