//! Interpretability procedures over trained models.
//!
//! Everything here is read-only: analyses take a model (or its parameters)
//! plus evaluation episodes and return plain data for the IO layer to
//! serialize.

pub mod ablation;
pub mod attention;
pub mod embedding;
pub mod reps;

pub use ablation::{ablation_sweep, canonical_specs, AblationRow};
pub use attention::{
    attention_maps, eos_attention_profile, grouped_tasks, within_group_attention, AttentionMap,
    EosCurve, WithinGroupAttention,
};
pub use embedding::{
    embedding_similarity, feature_block, gaussian_fits, gaussian_order_fit, gram, item_dim_names,
    task_embedding_similarity, GaussianFit, SigmaGrid,
};
pub use reps::{pca, task_conditioned_reps, PcaResult, RepresentationSummary};
