//! LLM scoring contract: relevance generation (the probability of "Yes")
//! and the gold-label utility of a demonstration list for a training input.

mod cache;
mod http;
mod mock;
mod template;

use serde::{Deserialize, Serialize};

use crate::corpus::{Demonstration, Label, Passage, Query, TrainingInput};
use crate::error::{BackendError, Error, Result};

pub use cache::{CachedBackend, ScoreCache};
pub use http::{HttpConfig, HttpScorer};
pub use mock::{MockParams, MockScorer, RelevanceRule};
pub use template::PromptTemplate;

/// Normalized distribution over the label space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub p_yes: f64,
    pub p_no: f64,
}

impl LabelDistribution {
    pub fn from_yes(p_yes: f64) -> Self {
        let p_yes = p_yes.clamp(0.0, 1.0);
        LabelDistribution { p_yes, p_no: 1.0 - p_yes }
    }

    /// Renormalizes two non-negative masses.
    pub fn normalize(yes: f64, no: f64) -> Option<Self> {
        let total = yes + no;
        if !(yes.is_finite() && no.is_finite()) || yes < 0.0 || no < 0.0 || total <= 0.0 {
            return None;
        }
        let p_yes = yes / total;
        Some(LabelDistribution { p_yes, p_no: 1.0 - p_yes })
    }

    pub fn prob(&self, label: Label) -> f64 {
        match label {
            Label::Yes => self.p_yes,
            Label::No => self.p_no,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScoreRequest<'a> {
    pub template: &'a PromptTemplate,
    pub demos: Vec<&'a Demonstration>,
    pub input_query: &'a str,
    pub input_passage: &'a str,
}

impl ScoreRequest<'_> {
    pub fn label_space(&self) -> [Label; 2] {
        Label::SPACE
    }

    pub fn render(&self) -> String {
        self.template.render(&self.demos, self.input_query, self.input_passage)
    }
}

/// Anything that maps a prompt to a distribution over {Yes, No}.
pub trait ScorerBackend: Send + Sync {
    fn distribution(&self, request: &ScoreRequest<'_>) -> Result<LabelDistribution, BackendError>;
}

impl<B: ScorerBackend + ?Sized> ScorerBackend for &B {
    fn distribution(&self, request: &ScoreRequest<'_>) -> Result<LabelDistribution, BackendError> {
        (**self).distribution(request)
    }
}

impl<B: ScorerBackend + ?Sized> ScorerBackend for Box<B> {
    fn distribution(&self, request: &ScoreRequest<'_>) -> Result<LabelDistribution, BackendError> {
        (**self).distribution(request)
    }
}

/// Probability of the input's gold label given the demonstration list,
/// normalized over the label space.
pub fn score_list<B: ScorerBackend + ?Sized>(
    backend: &B,
    template: &PromptTemplate,
    demos: &[&Demonstration],
    input: &TrainingInput,
) -> Result<f64> {
    let request = ScoreRequest {
        template,
        demos: demos.to_vec(),
        input_query: &input.query.text,
        input_passage: &input.passage.text,
    };
    let dist = backend.distribution(&request).map_err(|source| Error::Scorer {
        context: format!("input {} ({} demonstrations)", input.id, demos.len()),
        source,
    })?;
    Ok(dist.prob(input.gold))
}

/// Relevance-generation score: probability of "Yes".
pub fn relevance_score<B: ScorerBackend + ?Sized>(
    backend: &B,
    template: &PromptTemplate,
    demos: &[&Demonstration],
    query: &Query,
    passage: &Passage,
) -> Result<f64> {
    let request = ScoreRequest {
        template,
        demos: demos.to_vec(),
        input_query: &query.text,
        input_passage: &passage.text,
    };
    backend
        .distribution(&request)
        .map(|d| d.p_yes)
        .map_err(|source| Error::Scorer {
            context: format!("query {} passage {}", query.id, passage.id),
            source,
        })
}
