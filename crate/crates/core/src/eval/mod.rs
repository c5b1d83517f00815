//! Evaluation protocols and metrics.

pub mod data;
pub mod metrics;
pub mod tasks;

pub use data::{
    format_exemplars_tsv, format_sim_tsv, format_wic_tsv, format_wsd_tsv, parse_exemplars_tsv, parse_sim_tsv,
    parse_wic_tsv, parse_wsd_tsv, Exemplar, Label, SimPair, WicPair, WsdInstance,
};
pub use metrics::{auc, average_ranks, binary_eval, candidate_thresholds, spearman, threshold_search, Threshold};
pub use tasks::{
    embed_with_template, instantiate_template, one_shot_wsd, similarity_eval, wic_predict, wic_similarities,
    wic_task_eval, EvalReport, LayerResult, WsdOutcome,
};
