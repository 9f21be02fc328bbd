//! Adaptive video encoding decision engine.
//!
//! The pipeline turns offline encoding sweeps into per-segment forward
//! prediction models and then picks an encoding configuration and QP for
//! every segment of a live session:
//!
//! 1. [`sweepdata`] ingests sweep logs (one row per segment/config/QP encode).
//! 2. [`pareto`] drops encodings dominated in VMAF, PSNR, bitrate and FPS.
//! 3. [`models`] fits log-domain polynomials in QP to the surviving points,
//!    selects the polynomial order by adjusted R², and decides whether the
//!    previous segment's models can be reused.
//! 4. [`optimizer`] solves the minimum-bitrate, maximum-quality and
//!    maximum-FPS modes over a segment's models.
//! 5. [`session`] runs the per-segment decision loop against a bandwidth
//!    trace and reports gains over a static constant-QP baseline.
//!
//! [`encoderio`] drives real encoders through command templates and provides
//! a deterministic mock encoder; [`metrics`] holds PSNR and BD-rate arithmetic.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod encoderio;
pub mod metrics;
pub mod models;
pub mod numfmt;
pub mod optimizer;
pub mod pareto;
pub mod polyfit;
pub mod session;
pub mod sweepdata;

pub use metrics::{bd_rate, psnr_weighted, QualityKind, RdCurve};
pub use models::{ForwardModel, ModelBundle, ModelStore, Objective, Provenance};
pub use optimizer::{ConstraintSet, Decision, DecisionStatus, Mode};
pub use pareto::{dominates, pareto_front, ObjectivePoint};
pub use session::{BandwidthTrace, SessionReport};
pub use sweepdata::{ConfigDescriptor, EncodingSample, SampleKey, SweepDataset};
