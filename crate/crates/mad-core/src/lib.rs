//! Memory-associated differential learning.
//!
//! A model family for link prediction and pointwise regression that keeps
//! the training data around instead of compressing it away: predictions
//! start from memorized facts about nearby reference points and add a
//! learned first-order correction for how the query differs from each
//! reference. Reference estimates are pooled by a distance-weighted
//! softmin whose leftover mass doubles as an uncertainty signal.
//!
//! The crate is deliberately self-contained and deterministic: fixed
//! random streams ([`rng::Rng`]), name-addressed parameters in sorted
//! order ([`tensor::ParamStore`]), and hand-written forward/backward
//! passes validated by finite differences ([`gradcheck`]).

pub mod aggregate;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod link;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod trainer;
pub mod unary;

pub use aggregate::{aggregate_mean, aggregate_softmin, softmin_weights, Estimate, SentinelConfig};
pub use data::{
    export_embeddings, export_metrics, generate_sbm, karate, load_edge_list, load_model,
    load_unary_csv, save_model, split_edges, LoadOptions, LoadedGraph, SplitSpec,
};
pub use encoder::{init_tables, knn_positions, param_count, EncodingTable, HeadSet};
pub use error::{ErrorCategory, MadError, Result};
pub use eval::{
    hits_at_k, mf_oracle, run_ablation, AblationCell, AblationCellResult, AblationConfig,
    AblationGrid, AggregatorChoice, EvalSplit,
};
pub use gradcheck::{check_gradients, GradCheck, GradCheckReport};
pub use graph::{AdjacencyMemory, Graph, MemoryAdaptor};
pub use link::{
    estimate_via_u0, estimate_via_v0, Ablation, AggregatorKind, HeadRefs, LinkModel, MadConfig,
    PairQuery, PairScore, RefMode,
};
pub use optim::{adam_step, AdamState};
pub use rng::Rng;
pub use tensor::{dot, l2_distance, ParamStore, Tensor};
pub use trainer::{
    backward, batch_loss, fit, prepare_batch, sample_negatives, sigmoid, EvalSetup, HitsByMode,
    LossReport, PreparedExample, TrainConfig,
};
pub use unary::{
    choose_references, estimate_from_reference, mean_predictor_mse, predict_unary,
    predict_with_references, train_unary, ReferenceSet, UnaryConfig, UnaryModel, UnaryRefMode,
    UnaryTrainConfig,
};
