//! Running the full questionnaire against a scorer.

use std::collections::BTreeMap;
use std::fmt;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::context::DocSource;
use crate::error::{Error, Result};
use crate::gateway::{select_choice, Gateway};
use crate::item_bank::{ItemBank, PerTrait, PercentileModel, ResponseChoice, TraitScores};
use crate::prompt::{Persona, RenderMode, Renderer};

pub const RECORD_SCHEMA_VERSION: u32 = 1;

/// Text placed before every questionnaire item.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContextSpec {
    #[default]
    None,
    /// A questionnaire item with the given adverb filled in.
    Item { item_id: u32, modifier: ResponseChoice },
    FreeText {
        doc_id: String,
        source: DocSource,
        text: String,
    },
}

/// Grouping used by range reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextKind {
    None,
    Item,
    Reddit,
    SurveyDirected,
    SurveyUndirected,
    Other,
}

impl ContextKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ContextKind::None => "none",
            ContextKind::Item => "item",
            ContextKind::Reddit => "reddit",
            ContextKind::SurveyDirected => "survey_directed",
            ContextKind::SurveyUndirected => "survey_undirected",
            ContextKind::Other => "other",
        }
    }
}

impl fmt::Display for ContextKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl ContextSpec {
    pub fn item(item_id: u32, modifier: ResponseChoice) -> ContextSpec {
        ContextSpec::Item { item_id, modifier }
    }

    pub fn kind(&self) -> ContextKind {
        match self {
            ContextSpec::None => ContextKind::None,
            ContextSpec::Item { .. } => ContextKind::Item,
            ContextSpec::FreeText { source, .. } => match source {
                DocSource::Reddit => ContextKind::Reddit,
                DocSource::SurveyDirected => ContextKind::SurveyDirected,
                DocSource::SurveyUndirected => ContextKind::SurveyUndirected,
                DocSource::Other => ContextKind::Other,
            },
        }
    }

    pub fn item_context(&self) -> Option<(u32, ResponseChoice)> {
        match self {
            ContextSpec::Item { item_id, modifier } => Some((*item_id, *modifier)),
            _ => None,
        }
    }

    pub fn doc_id(&self) -> Option<&str> {
        match self {
            ContextSpec::FreeText { doc_id, .. } => Some(doc_id),
            _ => None,
        }
    }

    /// Short identifier for tables: `base`, `item:6:always`, `doc:<id>`.
    pub fn label(&self) -> String {
        match self {
            ContextSpec::None => "base".into(),
            ContextSpec::Item { item_id, modifier } => format!("item:{item_id}:{modifier}"),
            ContextSpec::FreeText { doc_id, .. } => format!("doc:{doc_id}"),
        }
    }

    pub fn validate(&self, bank: &ItemBank) -> Result<()> {
        match self {
            ContextSpec::None => Ok(()),
            ContextSpec::Item { item_id, .. } => bank.item(*item_id).map(|_| ()),
            ContextSpec::FreeText { doc_id, text, .. } => {
                if text.trim().is_empty() {
                    Err(Error::EmptyInput(format!("free-text context {doc_id:?} has no text")))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Run provenance. Only `timestamp` varies between identical runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct RunMeta {
    pub timestamp: u64,
    pub config_hash: String,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl RunMeta {
    pub fn now(config_hash: impl Into<String>, seed: Option<u64>) -> RunMeta {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        RunMeta {
            timestamp,
            config_hash: config_hash.into(),
            seed,
        }
    }
}

/// One complete questionnaire administration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentRecord {
    pub schema_version: u32,
    pub context: ContextSpec,
    pub persona: Persona,
    pub mode: RenderMode,
    pub responses: BTreeMap<u32, ResponseChoice>,
    pub scores: TraitScores,
    pub percentiles: PerTrait<f64>,
    pub percentile_model: PercentileModel,
    pub model_id: String,
    /// Some input was cut to fit the backend's window.
    #[serde(default)]
    pub truncated: bool,
    pub meta: RunMeta,
}

impl AssessmentRecord {
    /// Recomputes scores and percentiles from the stored responses.
    pub fn rescore(&mut self, bank: &ItemBank) -> Result<()> {
        self.scores = bank.score_responses(&self.responses)?;
        self.percentiles = bank.population().percentiles(&self.scores, self.percentile_model);
        Ok(())
    }

    /// Checks that the record is complete and its scores follow from its responses.
    pub fn verify(&self, bank: &ItemBank) -> Result<()> {
        if self.schema_version != RECORD_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "record schema {} unsupported (expected {RECORD_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.responses.len() != bank.len() {
            return Err(Error::Invariant(format!(
                "record {} has {} responses, bank has {} items",
                self.context.label(),
                self.responses.len(),
                bank.len()
            )));
        }
        let scores = bank.score_responses(&self.responses)?;
        if scores != self.scores {
            return Err(Error::Invariant(format!(
                "record {} stores scores {:?} but its responses give {:?}",
                self.context.label(),
                self.scores.0,
                scores.0
            )));
        }
        Ok(())
    }

    /// Same persona, mode and model: Δ against `base` is meaningful.
    pub fn comparable_with(&self, base: &AssessmentRecord) -> bool {
        self.persona == base.persona && self.mode == base.mode && self.model_id == base.model_id
    }
}

/// A context whose assessment failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryFailure {
    pub index: usize,
    pub context: String,
    pub persona: Persona,
    pub error: String,
    pub backend: bool,
}

/// Results of a battery; failures do not stop the remaining contexts.
#[derive(Debug, Clone, Default)]
pub struct BatteryOutcome {
    pub records: Vec<AssessmentRecord>,
    pub failures: Vec<BatteryFailure>,
}

impl BatteryOutcome {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }

    /// Machine-readable summary, written next to partial outputs.
    pub fn manifest(&self) -> serde_json::Value {
        serde_json::json!({
            "completed": self.records.len(),
            "failed": self.failures.len(),
            "failures": self.failures,
        })
    }
}

/// Administers the questionnaire through a gateway.
pub struct Assessor<'a> {
    bank: &'a ItemBank,
    gateway: &'a Gateway,
    renderer: Renderer<'a>,
    percentile_model: PercentileModel,
    meta: RunMeta,
    pool: rayon::ThreadPool,
}

impl<'a> Assessor<'a> {
    pub fn new(bank: &'a ItemBank, gateway: &'a Gateway) -> Assessor<'a> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(gateway.concurrency())
            .build()
            .expect("thread pool");
        Assessor {
            bank,
            gateway,
            renderer: Renderer::new(bank),
            percentile_model: PercentileModel::default(),
            meta: RunMeta::default(),
            pool,
        }
    }

    pub fn with_renderer(mut self, renderer: Renderer<'a>) -> Self {
        self.renderer = renderer;
        self
    }

    pub fn with_percentile_model(mut self, model: PercentileModel) -> Self {
        self.percentile_model = model;
        self
    }

    pub fn with_meta(mut self, meta: RunMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn bank(&self) -> &ItemBank {
        self.bank
    }

    pub fn run_assessment(
        &self,
        context: &ContextSpec,
        persona: &Persona,
        mode: RenderMode,
    ) -> Result<AssessmentRecord> {
        self.pool.install(|| self.assess(context, persona, mode))
    }

    fn assess(&self, context: &ContextSpec, persona: &Persona, mode: RenderMode) -> Result<AssessmentRecord> {
        context.validate(self.bank)?;
        let answers: Vec<(u32, ResponseChoice, bool)> = self
            .bank
            .items()
            .par_iter()
            .map(|item| {
                let answer = self
                    .renderer
                    .render(item, persona, context, mode)
                    .and_then(|probe| self.gateway.score_probe(&probe));
                match answer {
                    Ok(resp) => Ok((item.id, select_choice(&resp), resp.truncated)),
                    Err(e) => Err(Error::ItemFailed {
                        item_id: item.id,
                        source: Box::new(e),
                    }),
                }
            })
            .collect::<Result<_>>()?;
        let truncated = answers.iter().any(|a| a.2);
        let responses: BTreeMap<u32, ResponseChoice> = answers.into_iter().map(|(id, c, _)| (id, c)).collect();
        let mut record = AssessmentRecord {
            schema_version: RECORD_SCHEMA_VERSION,
            context: context.clone(),
            persona: persona.clone(),
            mode,
            responses,
            scores: PerTrait::default(),
            percentiles: PerTrait::default(),
            percentile_model: self.percentile_model,
            model_id: self.gateway.model_id().to_string(),
            truncated,
            meta: self.meta.clone(),
        };
        record.rescore(self.bank)?;
        Ok(record)
    }

    /// One record per context, in input order.
    pub fn run_battery(&self, contexts: &[ContextSpec], persona: &Persona, mode: RenderMode) -> Result<BatteryOutcome> {
        let jobs: Vec<(ContextSpec, Persona)> = contexts.iter().map(|c| (c.clone(), persona.clone())).collect();
        self.run_jobs(&jobs, mode)
    }

    /// One record per persona under a shared context, in input order.
    pub fn run_personas(
        &self,
        personas: &[Persona],
        context: &ContextSpec,
        mode: RenderMode,
    ) -> Result<BatteryOutcome> {
        let jobs: Vec<(ContextSpec, Persona)> = personas.iter().map(|p| (context.clone(), p.clone())).collect();
        self.run_jobs(&jobs, mode)
    }

    fn run_jobs(&self, jobs: &[(ContextSpec, Persona)], mode: RenderMode) -> Result<BatteryOutcome> {
        if jobs.is_empty() {
            return Err(Error::EmptyInput("battery has no contexts".into()));
        }
        let results: Vec<Result<AssessmentRecord>> = self.pool.install(|| {
            jobs.par_iter()
                .map(|(context, persona)| self.assess(context, persona, mode))
                .collect()
        });
        let mut outcome = BatteryOutcome::default();
        for (index, (result, (context, persona))) in results.into_iter().zip(jobs).enumerate() {
            match result {
                Ok(record) => outcome.records.push(record),
                Err(e) => {
                    log::error!("{} / {persona}: {e}", context.label());
                    outcome.failures.push(BatteryFailure {
                        index,
                        context: context.label(),
                        persona: persona.clone(),
                        backend: e.is_backend(),
                        error: e.to_string(),
                    });
                }
            }
        }
        Ok(outcome)
    }
}
