//! One-vs-rest metrics, cutpoints, resampling statistics, the
//! carry-forward baseline and risk analyses.

mod locf;
mod metrics;
mod report;
mod risk;
mod stats;

pub use locf::{locf_predict, locf_report, LocfReport, TransitionMatrix};
pub use metrics::{auprc, auroc, balanced_accuracy, binary_metrics, select_cutpoint, BinaryMetrics, Confusion, Cutpoint};
pub use report::{
    compare_auroc, evaluate, macro_mean, prevalence_total, subgroup_report, subgroup_tags, time_bucket, time_bucket_report,
    BucketMetrics, ClassMetrics, EvalOptions, MacroMetrics, MetricsReport, ScoredExample, BUCKET_MINUTES, N_TIME_BUCKETS,
};
pub use risk::{fp_severity_curve, fraction_cap, relative_risk_curve, RelativeRisk, RiskPoint, SeverityPoint};
pub use stats::{bootstrap_ci, permutation_test, ConfidenceInterval, DEFAULT_BOOTSTRAP, DEFAULT_PERMUTATIONS};
