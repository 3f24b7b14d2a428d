//! Multi-view inference with consistency verification and self-correction.
//!
//! Every question is answered on its clean view and each perturbed view.
//! The share of views agreeing with the modal answer is the consistency
//! score; below the threshold, one extra call shows the model all of its
//! answers next to the clean image and asks for a reconciled one.

mod consistency;
pub mod log;
mod normalize;
mod orchestrate;
mod prompt;
mod suite;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::DecodeParams;
use crate::perturb::{IntensityLevel, PerturbationKind};
use crate::Fraction;

pub use consistency::consistency_score;
pub use normalize::{normalize_answer, UNPARSEABLE};
pub use orchestrate::{resolve_final, run_multi_view, QuestionFailure, ViewInput};
pub use prompt::{build_self_correction_prompt, PromptTemplate, CORRECTION_TEMPLATE_ID, QUESTION_TEMPLATE_ID};
pub use suite::{load_views, run_suite, SuiteError, SuiteStats};

#[derive(Debug, Error, PartialEq)]
pub enum AmcvError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid orchestrator config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerType {
    MultipleChoice,
    FillInBlank,
    ShortAnswer,
}

/// How the final answer is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolutionMode {
    /// Query only the clean view.
    SingleView,
    /// Query all views; the modal answer is final.
    MajorityVote,
    /// Majority, plus one self-correction call when consistency is below tau.
    FullAmcv,
}

impl ResolutionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ResolutionMode::SingleView => "single_view",
            ResolutionMode::MajorityVote => "majority_vote",
            ResolutionMode::FullAmcv => "full_amcv",
        }
    }
}

impl std::str::FromStr for ResolutionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single_view" => Ok(Self::SingleView),
            "majority_vote" => Ok(Self::MajorityVote),
            "full_amcv" => Ok(Self::FullAmcv),
            other => Err(format!("unknown resolution mode {other:?}")),
        }
    }
}

/// Source of latency measurements. `Zero` records every duration as 0 ms,
/// which makes answer logs and reports byte-reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clock {
    #[default]
    Wall,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrchestratorConfig {
    pub tau: f64,
    pub n_views: u32,
    pub resolution_mode: ResolutionMode,
    #[serde(default)]
    pub clock: Clock,
    #[serde(default)]
    pub template: PromptTemplate,
    #[serde(default)]
    pub decode: DecodeParams,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            tau: 0.6,
            n_views: 10,
            resolution_mode: ResolutionMode::FullAmcv,
            clock: Clock::Wall,
            template: PromptTemplate::default(),
            decode: DecodeParams::default(),
        }
    }
}

impl OrchestratorConfig {
    pub fn validate(&self) -> Result<(), AmcvError> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(AmcvError::Config(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        Ok(())
    }

    /// `tau` as an exact fraction (nearest simple rational, so 0.6 is 3/5).
    pub fn tau_fraction(&self) -> Fraction {
        Fraction::approximate_float(self.tau).unwrap_or_else(|| Fraction::from_integer(0))
    }

    /// Whether a question with consistency `c_q` falls below the threshold.
    pub fn below_threshold(&self, c_q: Fraction) -> bool {
        c_q < self.tau_fraction()
    }
}

/// One view's answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewAnswer {
    pub view_index: u32,
    pub kind: Option<PerturbationKind>,
    pub intensity: Option<IntensityLevel>,
    pub digest: String,
    pub raw: String,
    pub canonical: String,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionOutcome {
    pub raw: Option<String>,
    /// The correction produced nothing usable and `a_mode` was kept.
    pub fell_back: bool,
    pub error: Option<String>,
}

/// All answers for one question plus how they were resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerSet {
    pub question_id: String,
    /// View 0 (clean) first, then perturbed views in index order.
    pub answers: Vec<ViewAnswer>,
    pub c_q: Fraction,
    pub a_mode: String,
    pub triggered_correction: bool,
    pub a_final: String,
    pub extra_calls: u32,
    pub correction: Option<CorrectionOutcome>,
}

impl AnswerSet {
    pub fn total_calls(&self) -> u32 {
        self.answers.len() as u32 + self.extra_calls
    }
}
