//! Item difficulty prediction from latent learner profiles.
//!
//! The pipeline fits a 2PL IRT model for ground-truth difficulty, discovers
//! learner classes with latent class analysis, turns each class into a
//! persona, asks a (pluggable) language-model provider how each persona would
//! answer every item, and regresses difficulty on the resulting features.

pub mod data;
pub mod error;
pub mod irt;
pub mod jsonl;
pub mod lca;
pub mod llm;
pub mod metrics;
pub mod profiling;
pub mod quadrature;
pub mod regression;
pub mod simulation;
pub mod synthetic;

pub use data::{
    filter_dense_core, ingest, partition, AssignmentRule, Dataset, DatasetPartition, InteractionRecord, ItemBank,
    OptionKey, OptionTexts, PartitionConfig, Question, Topic,
};
pub use error::{Error, Result};
pub use irt::{fit_2pl, IrtFitConfig, IrtFitReport, IrtParameters, ItemParameters, StudentAbility};
pub use lca::{
    assign_classes, fit_lca, select_k, sweep_k, ClassAssignment, LatentClassModel, LcaConfig, ModelSelectionCurve,
    ResponseMatrix,
};
pub use llm::{LlmClient, LlmError, MockProfiles, ProviderConfig, ProviderKind, RawOptionMap};
pub use profiling::{DeviationScore, PersonaProfile, PersonaSynthesisRequest, Provenance};
pub use regression::{cross_validate, fit_ridge, CvConfig, EvaluationReport, ItemFeatureVector, RidgeModel};
pub use simulation::{OptionProbs, SimulationMatrix};
pub use synthetic::{generate_irt_world, generate_lca_world, generate_persona_world, SyntheticWorldConfig};
