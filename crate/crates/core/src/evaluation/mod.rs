//! ROC/AUC, Youden-optimal operating points, discriminator pair AUC and
//! principal-component projections of learned representations.

mod metrics;
mod model_eval;
mod pca;
mod roc;

pub use metrics::{youden_threshold, MetricReport};
pub use model_eval::{
    discriminator_auc, evaluate_model, evaluate_outputs, pair_score, project_level, run_model, sample_pairs,
    write_json, write_projection_csv, write_roc_csv, Aggregation, Evaluation, Level, LevelProjection, TrialPair,
    DEFAULT_PAIR_BUDGET,
};
pub use pca::{pca_project, Projection};
pub use roc::{roc_auc, RocCurve, RocPoint};
