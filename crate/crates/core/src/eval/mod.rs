//! Ranking metrics, cold-start experiments, ablations and sweeps.

mod experiment;
mod metrics;

pub use experiment::{
    evaluate_tasks, fingerprint, prepare_run, run_experiment, run_experiment_with_seeds, run_once, split_users, sweep,
    AblationSpec, ExperimentReport, PreparedRun, RunOutcome, SweepParameter, SweepPoint, SweepReport, Variant,
};
pub use metrics::{
    metrics_from_rank, ndcg_at_k, rank_of, recall_at_k, top_k, AtK, MetricsAccumulator, MetricsReport, UserMetrics,
};
