//! Partition search: uniform sampling, mutation, the predictor-guided
//! loop, baselines, and Bell-number accounting.

pub mod anneal;
pub mod bell;
pub mod cache;
pub mod cluster;
pub mod mutate;
pub mod partition;
pub mod sample;
pub mod trace;

pub use anneal::{
    accept_probability, random_search_baseline, search_with_predictor, PartitionEvaluator,
    SearchConfig, SearchOutcome,
};
pub use bell::bell_number;
pub use cache::{EvalCache, GroupEval};
pub use cluster::{hierarchical_baseline, kmeans_baseline, GainTransform, KmeansOutcome, Linkage};
pub use mutate::{is_single_task_move, mutate_groups};
pub use partition::{GroupKey, Partition};
pub use sample::{sample_uniform_partition, sample_uniform_with, BlockCountSampler};
pub use trace::{SearchTrace, TraceRecord};
