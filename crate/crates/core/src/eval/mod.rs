//! Accuracy reports, confusion matrices, held-out-speaker averaging and
//! first-layer feature-map visualization.

mod confusion;
mod feature_maps;
mod report;

pub use confusion::{emit_confusion_csv, read_confusion_csv, ConfusionMatrix};
pub use feature_maps::{
    emit_pgm, emptiness_score, first_layer_feature_maps, kernel_feature_maps, read_pgm, write_feature_maps,
    FeatureMap, EMPTY_MAP_THRESHOLD,
};
pub use report::{
    evaluate, evaluate_features, msi_average, predict_features, predict_manifest, read_report, write_report,
    ClassAccuracy, EvalReport, RunMetadata, SplitResult,
};
