//! Deterministic stand-in for an LLM scorer.
//!
//! The demonstration list contributes a label-agnostic "quality" term built
//! from three permutation-invariant list statistics:
//!
//! * `rel`: mean Jaccard similarity between each demo's query+passage and the
//!   input's query+passage,
//! * `div`: mean pairwise Jaccard distance between demo queries,
//! * `bal`: `1 - |#Yes - #No| / m`.
//!
//! `raw = w_rel*rel + w_div*div + w_bal*bal` and
//! `p_yes = sigmoid(w_raw*raw + bias + w_overlap * t * sim(q, p))` where
//! `t = +1` if the input pair is relevant under the configured relevance rule
//! and `-1` otherwise.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{LabelDistribution, ScoreRequest, ScorerBackend};
use crate::corpus::Label;
use crate::error::BackendError;
use crate::text::{jaccard, token_set};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockParams {
    pub w_rel: f64,
    pub w_div: f64,
    pub w_bal: f64,
    pub w_raw: f64,
    pub bias: f64,
    pub w_overlap: f64,
    /// Jaccard threshold deciding relevance for pairs the rule does not know.
    pub threshold: f64,
}

impl Default for MockParams {
    fn default() -> Self {
        MockParams {
            w_rel: 2.0,
            w_div: 1.0,
            w_bal: 1.0,
            w_raw: 2.0,
            bias: -1.0,
            w_overlap: 3.0,
            threshold: 0.2,
        }
    }
}

/// Ground truth the mock consults for the input pair. Texts not covered by
/// the rule fall back to the Jaccard threshold.
#[derive(Debug, Clone, Default)]
pub enum RelevanceRule {
    #[default]
    Threshold,
    /// Relevant iff query text and passage text share a generating topic.
    Topics {
        query: HashMap<String, usize>,
        passage: HashMap<String, usize>,
    },
    /// Explicit (query text, passage text) → relevant.
    Judged(HashMap<(String, String), bool>),
}

impl RelevanceRule {
    fn lookup(&self, query: &str, passage: &str) -> Option<bool> {
        match self {
            RelevanceRule::Threshold => None,
            RelevanceRule::Topics { query: qt, passage: pt } => Some(qt.get(query)? == pt.get(passage)?),
            RelevanceRule::Judged(map) => map.get(&(query.to_string(), passage.to_string())).copied(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockScorer {
    pub params: MockParams,
    pub rule: RelevanceRule,
}

/// The three list statistics, exposed for tests and diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ListTerms {
    pub rel: f64,
    pub div: f64,
    pub bal: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn pair_set(query: &str, passage: &str) -> BTreeSet<String> {
    let mut s = token_set(query);
    s.extend(token_set(passage));
    s
}

impl MockScorer {
    pub fn new(params: MockParams, rule: RelevanceRule) -> Self {
        MockScorer { params, rule }
    }

    pub fn list_terms(&self, request: &ScoreRequest<'_>) -> ListTerms {
        let m = request.demos.len();
        if m == 0 {
            return ListTerms {
                rel: 0.0,
                div: 0.0,
                bal: 0.0,
            };
        }
        let input = pair_set(request.input_query, request.input_passage);
        let rel = request
            .demos
            .iter()
            .map(|d| jaccard(&pair_set(&d.query.text, &d.passage.text), &input))
            .sum::<f64>()
            / m as f64;
        let div = if m <= 1 {
            0.0
        } else {
            let qs: Vec<BTreeSet<String>> = request.demos.iter().map(|d| token_set(&d.query.text)).collect();
            let mut total = 0.0;
            for j in 0..m {
                for l in j + 1..m {
                    total += 1.0 - jaccard(&qs[j], &qs[l]);
                }
            }
            2.0 * total / (m * (m - 1)) as f64
        };
        let yes = request.demos.iter().filter(|d| d.label == Label::Yes).count();
        let bal = 1.0 - (yes as f64 - (m - yes) as f64).abs() / m as f64;
        ListTerms { rel, div, bal }
    }

    pub fn raw(&self, request: &ScoreRequest<'_>) -> f64 {
        let t = self.list_terms(request);
        let p = &self.params;
        p.w_rel * t.rel + p.w_div * t.div + p.w_bal * t.bal
    }

    pub fn truly_relevant(&self, query: &str, passage: &str) -> bool {
        self.rule
            .lookup(query, passage)
            .unwrap_or_else(|| jaccard(&token_set(query), &token_set(passage)) >= self.params.threshold)
    }

    pub fn mock_distribution(&self, request: &ScoreRequest<'_>) -> LabelDistribution {
        let p = &self.params;
        let overlap = jaccard(&token_set(request.input_query), &token_set(request.input_passage));
        let sign = if self.truly_relevant(request.input_query, request.input_passage) {
            1.0
        } else {
            -1.0
        };
        let logit = p.w_raw * self.raw(request) + p.bias + p.w_overlap * sign * overlap;
        LabelDistribution::from_yes(sigmoid(logit))
    }
}

impl ScorerBackend for MockScorer {
    fn distribution(&self, request: &ScoreRequest<'_>) -> Result<LabelDistribution, BackendError> {
        Ok(self.mock_distribution(request))
    }
}
