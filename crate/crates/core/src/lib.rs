//! Training-free class-incremental semantic segmentation.
//!
//! Class-agnostic masks are merged into object-level regions
//! ([`mask_agg`]), each region embedding is matched against an append-only
//! bank of class prototypes ([`prototype_bank`], [`classifier`]), and the
//! continual protocol and its metrics live in [`protocol`] and [`eval`].

pub mod classifier;
pub mod error;
pub mod eval;
pub mod formats;
pub mod kmeans;
pub mod label;
pub mod mask_agg;
pub mod protocol;
pub mod prototype_bank;
pub mod vector;

pub use classifier::{
    classify, classify_batch, render, PredictedLabelMap, Prediction, DEFAULT_TAU_SIM,
};
pub use error::{Error, Result};
pub use eval::{compute_report, ConfusionMatrix, EvalReport, SegmentSample};
pub use label::{ClassId, LabelMap, RgbImage};
pub use mask_agg::{
    aggregate, AggregatedMask, RawMask, RawMaskSet, RegionProposal, DEFAULT_TAU_AREA,
};
pub use protocol::{run_protocol, ProtocolConfig, StepSnapshot, TaskProtocol};
pub use prototype_bank::{PrototypeBank, RegionEmbedding, RegistrationParams};
