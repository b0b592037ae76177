//! Training-free few-shot and zero-shot anomaly detection from patch
//! features: a memory bank of nominal patch vectors, cosine nearest-neighbor
//! scoring, tail aggregation, PCA foreground masking and the evaluation
//! harness around them.

pub mod batched;
pub mod error;
pub mod eval;
pub mod features;
pub mod masking;
pub mod memory;
pub mod pipeline;
pub mod scoring;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
pub use features::{Backbone, BackboneSelector, FeatureExtractor, PatchFeatureGrid, PreprocessConfig};
pub use masking::PatchMask;
pub use memory::{build_bank, MemoryBank};
pub use scoring::{AnomalyMap, PatchDistances, ScoreConfig};
pub use pipeline::{Detector, PipelineConfig, RotationMode};
