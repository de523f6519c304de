//! The selection-then-vote algorithm and its comparison baselines.

pub mod augment;
pub mod run;
pub mod select;

pub use run::{
    run_ae, run_confidence_only, run_mvp, CaptureViews, Method, MethodDecision, MvpOutcome,
    SimContext, StageTimings,
};
pub use select::{
    affinity_score, aggregate_stats, confident_subset, entropy_filter, hard_vote,
    marginalized_vote, select_top_k, shannon_entropy, AffinityScore, PooledView,
};
