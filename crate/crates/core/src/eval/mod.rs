//! Word error rate, bucketed reports and representation export.

pub mod report;
pub mod visualize;
pub mod wer;

pub use report::{
    evaluate_set, BucketKey, BucketRow, Bucketing, Erratum, UtteranceResult, WerReport,
};
pub use visualize::{export_heatmaps, HeatmapMeta, RepresentationTriple};
pub use wer::{align, normalize_words, wer, ErrorCounts};
