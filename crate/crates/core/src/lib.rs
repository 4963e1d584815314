//! Big Five questionnaires for language models.
//!
//! Items from an [`item_bank::ItemBank`] are rendered into probes
//! ([`prompt`]), scored by a backend through the [`gateway`], and answered by
//! picking the highest-scoring candidate ([`assessment`]). Prefix contexts
//! ([`context`]) shift those answers; [`stats`] and [`features`] analyse the
//! shifts from record files.

pub mod assessment;
pub mod cli;
pub mod context;
pub mod error;
pub mod features;
pub mod gateway;
pub mod item_bank;
pub mod prompt;
pub mod records;
pub mod stats;

pub use assessment::{AssessmentRecord, Assessor, BatteryOutcome, ContextKind, ContextSpec, RunMeta};
pub use context::{apply_filters, build_grid, CorpusDoc, DocSource, FilterSpec, GridCell};
pub use error::{Error, Result};
pub use gateway::{Backend, BackendSpec, Gateway, GatewayConfig, MockKind, MockScorerSpec};
pub use item_bank::{ItemBank, PerTrait, PercentileModel, Polarity, ResponseChoice, Trait, TraitScores};
pub use prompt::{Persona, RenderMode, Renderer};
