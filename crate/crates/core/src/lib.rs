//! Temporal consistency probing for text-completion models.
//!
//! Builds forward/backward probes from subject-relation timelines, queries a
//! [`Backend`], scores responses with the seven consistency and factuality
//! metrics, and provides the reward functions and KL analysis used for
//! fine-tuning and diagnosis.

pub mod analysis;
pub mod backend;
pub mod corpus;
pub mod metrics;
pub mod probegen;
pub mod reward;
pub mod run;
pub mod seed;
pub mod testing;
pub mod text;

pub use backend::{Backend, BackendError, GenConfig, ModelResponse, OracleBackend, OracleConfig, ScriptedBackend};
pub use corpus::{CandidateSet, Corpus, CorpusError, Direction, EntityRecord, EntityType, Pattern, SubjectRelationEntry};
pub use metrics::{DirectionalValue, MetricReport, ProbeResult};
pub use probegen::{ProbeInstance, ProbeKey, PromptText};
pub use reward::{RewardRequest, RewardScore};
pub use run::{RunConfig, RunError, RunRecord};
