//! Episodic few-shot text classification.
//!
//! Eight heads score query vectors against a small labelled support set:
//! matching, prototypical (with optional soft k-means refinement),
//! relation modules (feed-forward or neural tensor layer), induction by
//! dynamic routing, and two fine-tuned linear baselines. Vectors come from
//! a precomputed embedding store or a small trainable bag-of-words
//! encoder. Everything runs on a reverse-mode autodiff tape over `f64`.
//!
//! ```
//! use fewshot_core::{matching_scores, MetricKind, QuerySet, SupportSet};
//!
//! let support = SupportSet::new(
//!     &[vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]],
//!     vec!["a".into(), "b".into()],
//! )?;
//! let query = QuerySet::new(&[vec![0.9, 0.2]], None)?;
//! let scores = matching_scores(&support, &query, MetricKind::Cosine)?;
//! assert_eq!(scores.predictions(), vec![0]);
//! # Ok::<(), fewshot_core::Error>(())
//! ```

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod config;
pub mod data;
pub mod embedding;
pub mod episodes;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod heads;
pub mod metric;
pub mod optim;
pub mod pipeline;
pub mod provider;
pub mod report;
pub mod rng;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Graph, Var};
pub use config::{EncoderKind, RunConfig, ToySettings};
pub use data::Document;
pub use embedding::{load_store, save_store, EmbeddingRecord, EmbeddingStore, ToyEncoder};
pub use episodes::{
    build_arsc_tasks, sample_episode, sample_indices, split_classes, BinaryTask, BinaryTaskSpec,
    ClassPool, ClassSplit, Episode, EpisodeIndices, EpisodeSpec, SplitRatios,
};
pub use error::{Error, Result};
pub use eval::{evaluate, run_episodes, Classifier, EvalConfig, Model, ShotMode, Tally};
pub use heads::baseline::{baseline_scores, baselinepp_scores, BaselineParams};
pub use heads::induction::{induction_prototypes, InductionParams};
pub use heads::matching::matching_scores;
pub use heads::proto::{compute_prototypes, proto_scores, refine_prototypes};
pub use heads::relation::{ntl_scores, relation_base_scores, NtlParams, RelationBaseParams};
pub use heads::{
    Head, HeadConfig, Method, PrototypeSet, QuerySet, RelationModule, ScoreMatrix, SupportSet,
    UnlabeledSet,
};
pub use metric::{MetricKind, COSINE_SCALE};
pub use optim::OptimizerKind;
pub use provider::Provider;
pub use report::{EvalReport, ResultRow};
pub use tensor::Tensor;
pub use train::{train_head, FinetuneConfig, LossKind, TrainConfig};
