//! Metrics, dataset ingestion and the k-shot evaluation protocol.

mod dataset;
mod metrics;
mod pixel;
mod protocol;

pub use dataset::{list_images, load_dataset, CategoryIndex, DatasetIndex, Layout, TestItem, VISA_SPLIT_CSV};
pub use metrics::{auroc, average_precision, f1_max};
pub use pixel::{normalized_area, pixel_metrics, pro, pro_curve, GroundTruth, PixelMetrics, ProThresholds};
pub use protocol::{
    evaluate_seed, prepare_tests, run_fewshot_eval, CategoryReport, EvalOptions, EvalReport, PreparedTests,
    SeedResult, Skipped, Summary,
};
