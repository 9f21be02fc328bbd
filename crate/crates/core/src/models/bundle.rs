use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{fit_objective, ForwardModel, ModelError, Objective, MAX_ORDER, MIN_DISTINCT_QPS};
use crate::pareto;
use crate::sweepdata::{EncodingSample, SweepDataset};

/// Maximum relative prediction error tolerated on VMAF and PSNR for reuse.
pub const REUSE_QUALITY_TOL: f64 = 0.05;
/// Maximum relative prediction error tolerated on bitrate for reuse.
pub const REUSE_BITRATE_TOL: f64 = 0.10;
/// Maximum relative prediction error tolerated on encoding FPS for reuse.
pub const REUSE_FPS_TOL: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Fitted,
    /// Models copied from the bundle fitted on this segment.
    ReusedFrom(u32),
}

/// Predicted metrics at one (config, QP).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Predicted {
    pub vmaf: f64,
    pub psnr: f64,
    pub bitrate_kbps: f64,
    pub fps: f64,
}

/// The four forward models of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigModels {
    pub vmaf: ForwardModel,
    pub psnr: ForwardModel,
    pub bitrate: ForwardModel,
    pub fps: ForwardModel,
    /// Set when too few Pareto points survived and all samples were used.
    pub fallback: bool,
}

impl ConfigModels {
    pub fn new(
        vmaf: ForwardModel,
        psnr: ForwardModel,
        bitrate: ForwardModel,
        fps: ForwardModel,
    ) -> Result<Self, ModelError> {
        let models = Self {
            vmaf,
            psnr,
            bitrate,
            fps,
            fallback: false,
        };
        for obj in Objective::ALL {
            if models.get(obj).objective != obj {
                return Err(ModelError::Invalid(format!(
                    "model in the {obj} slot is a {} model",
                    models.get(obj).objective
                )));
            }
        }
        Ok(models)
    }

    pub fn get(&self, objective: Objective) -> &ForwardModel {
        match objective {
            Objective::Vmaf => &self.vmaf,
            Objective::Psnr => &self.psnr,
            Objective::Bitrate => &self.bitrate,
            Objective::Fps => &self.fps,
        }
    }

    fn get_mut(&mut self, objective: Objective) -> &mut ForwardModel {
        match objective {
            Objective::Vmaf => &mut self.vmaf,
            Objective::Psnr => &mut self.psnr,
            Objective::Bitrate => &mut self.bitrate,
            Objective::Fps => &mut self.fps,
        }
    }

    /// Common fitted QP support of the four models.
    pub fn support(&self) -> (i32, i32) {
        let lo = Objective::ALL.iter().map(|&o| self.get(o).qp_min).max().unwrap();
        let hi = Objective::ALL.iter().map(|&o| self.get(o).qp_max).min().unwrap();
        (lo, hi)
    }

    /// Range of QPs every model accepts, including extrapolation.
    pub fn predict_range(&self) -> (i32, i32) {
        let lo = Objective::ALL.iter().map(|&o| self.get(o).predict_range().0).max().unwrap();
        let hi = Objective::ALL.iter().map(|&o| self.get(o).predict_range().1).min().unwrap();
        (lo, hi)
    }

    pub fn predict(&self, qp: f64) -> Result<Predicted, ModelError> {
        Ok(Predicted {
            vmaf: self.vmaf.predict(qp)?,
            psnr: self.psnr.predict(qp)?,
            bitrate_kbps: self.bitrate.predict(qp)?,
            fps: self.fps.predict(qp)?,
        })
    }
}

/// All forward models of one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub video_id: String,
    pub segment_index: u32,
    pub configs: BTreeMap<String, ConfigModels>,
    pub provenance: Provenance,
}

impl ModelBundle {
    /// Copy of this bundle's models attributed to another segment.
    pub fn reused_for(&self, segment_index: u32) -> Self {
        let origin = match self.provenance {
            Provenance::Fitted => self.segment_index,
            Provenance::ReusedFrom(s) => s,
        };
        Self {
            video_id: self.video_id.clone(),
            segment_index,
            configs: self.configs.clone(),
            provenance: Provenance::ReusedFrom(origin),
        }
    }

    /// `(min qp_min, max qp_max)` over all configurations.
    pub fn global_qp_bounds(&self) -> Option<(i32, i32)> {
        let lo = self.configs.values().map(|c| c.support().0).min()?;
        let hi = self.configs.values().map(|c| c.support().1).max()?;
        Some((lo, hi))
    }

    /// Multiplies every bitrate model by `factor` (shifts β₀ by ln factor).
    pub fn scale_bitrate(&mut self, factor: f64) {
        for c in self.configs.values_mut() {
            c.get_mut(Objective::Bitrate).coeffs[0] += factor.ln();
        }
    }
}

/// Samples each configuration is fitted on, with the fallback flag.
pub type TrainingSet<'a> = BTreeMap<String, (Vec<&'a EncodingSample>, bool)>;

/// Selects the fitting samples of a segment. With `pareto_only`, each
/// configuration uses its Pareto-front samples when at least four distinct
/// QPs survive and falls back to all its samples otherwise.
pub fn training_samples<'a>(
    ds: &'a SweepDataset,
    video_id: &str,
    segment_index: u32,
    pareto_only: bool,
) -> Result<TrainingSet<'a>, ModelError> {
    let by_config = ds.segment_by_config(video_id, segment_index)?;
    if !pareto_only {
        return Ok(by_config.into_iter().map(|(k, v)| (k, (v, false))).collect());
    }
    let view = ds.segment_view(video_id, segment_index)?;
    let front = pareto::sample_front(&view).expect("segment view is non-empty");
    let mut out = TrainingSet::new();
    for (config_id, all) in by_config {
        let kept: Vec<&EncodingSample> = front
            .iter()
            .filter(|s| s.config_id == config_id)
            .copied()
            .collect();
        let mut qps: Vec<i32> = kept.iter().map(|s| s.qp).collect();
        qps.dedup();
        if qps.len() >= MIN_DISTINCT_QPS {
            out.insert(config_id, (kept, false));
        } else {
            out.insert(config_id, (all, true));
        }
    }
    Ok(out)
}

fn measured(s: &EncodingSample, objective: Objective) -> f64 {
    match objective {
        Objective::Vmaf => s.vmaf,
        Objective::Psnr => s.psnr(),
        Objective::Bitrate => s.bitrate_kbps,
        Objective::Fps => s.enc_fps,
    }
}

fn fit_config(config_id: &str, samples: &[&EncodingSample]) -> Result<ConfigModels, ModelError> {
    let fit = |objective: Objective| {
        let pairs: Vec<(i32, f64)> = samples.iter().map(|s| (s.qp, measured(s, objective))).collect();
        fit_objective(objective, &pairs, MAX_ORDER).map_err(|e| ModelError::InConfig {
            config_id: config_id.to_string(),
            objective,
            source: Box::new(e),
        })
    };
    ConfigModels::new(
        fit(Objective::Vmaf)?,
        fit(Objective::Psnr)?,
        fit(Objective::Bitrate)?,
        fit(Objective::Fps)?,
    )
}

/// Fits every configuration of one segment. Configurations are fitted in
/// parallel; the result does not depend on scheduling.
pub fn fit_segment_bundle(
    ds: &SweepDataset,
    video_id: &str,
    segment_index: u32,
    pareto_only: bool,
) -> Result<ModelBundle, ModelError> {
    let training = training_samples(ds, video_id, segment_index, pareto_only)?;
    fit_training_set(video_id, segment_index, &training)
}

pub(crate) fn fit_training_set(
    video_id: &str,
    segment_index: u32,
    training: &TrainingSet<'_>,
) -> Result<ModelBundle, ModelError> {
    let fitted: Vec<(String, ConfigModels)> = training
        .par_iter()
        .map(|(config_id, (samples, fallback))| {
            let mut models = fit_config(config_id, samples)?;
            models.fallback = *fallback;
            Ok((config_id.clone(), models))
        })
        .collect::<Result<_, ModelError>>()?;
    Ok(ModelBundle {
        video_id: video_id.to_string(),
        segment_index,
        configs: fitted.into_iter().collect(),
        provenance: Provenance::Fitted,
    })
}

/// Largest relative prediction error per objective.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveErrors {
    pub vmaf: f64,
    pub psnr: f64,
    pub bitrate: f64,
    pub fps: f64,
}

impl ObjectiveErrors {
    fn slot(&mut self, objective: Objective) -> &mut f64 {
        match objective {
            Objective::Vmaf => &mut self.vmaf,
            Objective::Psnr => &mut self.psnr,
            Objective::Bitrate => &mut self.bitrate,
            Objective::Fps => &mut self.fps,
        }
    }

    pub fn within_reuse_thresholds(&self) -> bool {
        self.vmaf <= REUSE_QUALITY_TOL
            && self.psnr <= REUSE_QUALITY_TOL
            && self.bitrate <= REUSE_BITRATE_TOL
            && self.fps <= REUSE_FPS_TOL
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReuseCheck {
    pub reuse: bool,
    pub max_errors: ObjectiveErrors,
}

/// Evaluates `prev`'s models on the current segment's samples. A sample
/// outside a model's predictable range counts as an infinite error.
pub fn reuse_check(
    prev: &ModelBundle,
    current: &[&EncodingSample],
) -> Result<ReuseCheck, ModelError> {
    let mut errs = ObjectiveErrors::default();
    for s in current {
        let models = prev
            .configs
            .get(&s.config_id)
            .ok_or_else(|| ModelError::ConfigNotCovered(s.config_id.clone()))?;
        for obj in Objective::ALL {
            let actual = measured(s, obj);
            let err = match models.get(obj).predict(s.qp as f64) {
                Ok(pred) => (pred - actual).abs() / actual,
                Err(_) => f64::INFINITY,
            };
            let slot = errs.slot(obj);
            *slot = slot.max(err);
        }
    }
    Ok(ReuseCheck {
        reuse: errs.within_reuse_thresholds(),
        max_errors: errs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sweepdata::ConfigDescriptor;

    fn sample(seg: u32, cfg: &str, qp: i32, scale: [f64; 4]) -> EncodingSample {
        let q = qp as f64;
        let psnr = (3.9 - 0.006 * q).exp() * scale[1];
        EncodingSample {
            video_id: "v".into(),
            segment_index: seg,
            config_id: cfg.into(),
            qp,
            vmaf: ((4.7 - 0.004 * q - 0.0002 * q * q).exp() * scale[0]).min(100.0),
            psnr_y: psnr,
            psnr_u: psnr,
            psnr_v: psnr,
            bitrate_kbps: (11.0 - 0.12 * q + 0.0005 * q * q).exp() * scale[2],
            enc_fps: (2.5 + 0.03 * q).exp() * scale[3],
        }
    }

    fn dataset(configs: &[(&str, f64)], qps: &[i32]) -> SweepDataset {
        let mut samples = Vec::new();
        for &(cfg, br) in configs {
            for &qp in qps {
                samples.push(sample(0, cfg, qp, [1.0, 1.0, br, 1.0]));
            }
        }
        let descs = configs.iter().map(|(c, _)| ConfigDescriptor::bare(*c, "t")).collect();
        SweepDataset::new(samples, descs, 3.0, "t").unwrap()
    }

    #[test]
    fn full_fit_two_configs() {
        let qps: Vec<i32> = (18..=45).step_by(3).collect();
        let ds = dataset(&[("A", 1.0), ("B", 1.2)], &qps);
        let b = fit_segment_bundle(&ds, "v", 0, false).unwrap();
        assert_eq!(b.configs.len(), 2);
        assert_eq!(b.provenance, Provenance::Fitted);
        let a = &b.configs["A"];
        assert_eq!(a.bitrate.order, 2);
        for (got, want) in a.bitrate.coeffs.iter().zip([11.0, -0.12, 0.0005]) {
            assert!(((got - want) / want).abs() < 1e-6);
        }
        for (got, want) in a.vmaf.coeffs.iter().zip([4.7, -0.004, -0.0002]) {
            assert!(((got - want) / want).abs() < 1e-6);
        }
        assert_eq!(a.fps.order, 1);
        assert!(!a.fallback);
    }

    #[test]
    fn sparse_front_config_falls_back() {
        // B costs 20% more bitrate everywhere: dominated at every QP.
        let qps: Vec<i32> = (18..=45).step_by(3).collect();
        let ds = dataset(&[("A", 1.0), ("B", 1.2)], &qps);
        let training = training_samples(&ds, "v", 0, true).unwrap();
        assert!(!training["A"].1);
        assert!(training["B"].1);
        assert_eq!(training["B"].0.len(), qps.len());
        let b = fit_segment_bundle(&ds, "v", 0, true).unwrap();
        assert!(b.configs["B"].fallback);
        assert!(!b.configs["A"].fallback);
    }

    #[test]
    fn reuse_thresholds() {
        let qps: Vec<i32> = (18..=45).step_by(3).collect();
        let ds = dataset(&[("A", 1.0)], &qps);
        let b = fit_segment_bundle(&ds, "v", 0, false).unwrap();
        let check = |scale: [f64; 4]| {
            let cur: Vec<EncodingSample> = qps.iter().map(|&q| sample(1, "A", q, scale)).collect();
            let refs: Vec<&EncodingSample> = cur.iter().collect();
            reuse_check(&b, &refs).unwrap()
        };
        let same = check([1.0; 4]);
        assert!(same.reuse);
        assert!(same.max_errors.bitrate < 1e-9);
        assert!(!check([1.06, 1.0, 1.0, 1.0]).reuse);
        assert!(check([1.02, 1.02, 1.08, 1.09]).reuse);
        assert!(!check([1.0, 1.0, 1.12, 1.0]).reuse);
        assert!(!check([1.0, 1.0, 1.0, 0.89]).reuse);

        let other = sample(1, "Z", 20, [1.0; 4]);
        assert!(matches!(
            reuse_check(&b, &[&other]),
            Err(ModelError::ConfigNotCovered(c)) if c == "Z"
        ));
    }

    #[test]
    fn reused_bundle_tracks_origin() {
        let qps: Vec<i32> = (18..=45).step_by(3).collect();
        let ds = dataset(&[("A", 1.0)], &qps);
        let b = fit_segment_bundle(&ds, "v", 0, false).unwrap();
        let r1 = b.reused_for(1);
        let r2 = r1.reused_for(2);
        assert_eq!(r2.provenance, Provenance::ReusedFrom(0));
        assert_eq!(r2.segment_index, 2);
    }
}
