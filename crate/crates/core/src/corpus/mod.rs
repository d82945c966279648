//! Data model and the construction of the demonstration pool and the
//! training inputs.

mod io;
mod synth;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::stream_rng;
use crate::text::fnv1a64;

pub use io::{load_dataset, write_dataset};
pub use synth::{generate_synthetic_dataset, SynthParams, SyntheticCorpus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Yes,
    No,
}

impl Label {
    pub const SPACE: [Label; 2] = [Label::Yes, Label::No];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Yes => "Yes",
            Label::No => "No",
        }
    }

    pub fn from_relevant(relevant: bool) -> Self {
        if relevant {
            Label::Yes
        } else {
            Label::No
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Yes" => Ok(Label::Yes),
            "No" => Ok(Label::No),
            other => Err(Error::UnresolvedRef(format!("label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelJudgment {
    pub query_id: String,
    pub passage_id: String,
    pub grade: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Demonstration {
    pub query: Query,
    pub passage: Passage,
    pub label: Label,
}

/// Compact `[query_id, passage_id, label]` reference used in JSONL artifacts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DemoRef(pub String, pub String, pub Label);

impl Demonstration {
    pub fn demo_ref(&self) -> DemoRef {
        DemoRef(self.query.id.clone(), self.passage.id.clone(), self.label)
    }

    fn sort_key(&self) -> (&str, &str, Label) {
        (&self.query.id, &self.passage.id, self.label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingInput {
    pub id: String,
    pub query: Query,
    pub passage: Passage,
    pub gold: Label,
}

impl TrainingInput {
    pub fn new(query: Query, passage: Passage, gold: Label) -> Self {
        TrainingInput {
            id: input_id(&query.id, &passage.id),
            query,
            passage,
            gold,
        }
    }
}

pub fn input_id(query_id: &str, passage_id: &str) -> String {
    format!("{query_id}/{passage_id}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Queries, passages and graded judgments for one split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub split: Split,
    pub queries: Vec<Query>,
    pub passages: Vec<Passage>,
    pub judgments: Vec<RelJudgment>,
    query_index: HashMap<String, usize>,
    passage_index: HashMap<String, usize>,
    by_query: HashMap<String, Vec<usize>>,
}

impl Dataset {
    pub fn new(
        split: Split,
        queries: Vec<Query>,
        passages: Vec<Passage>,
        judgments: Vec<RelJudgment>,
    ) -> Result<Self> {
        let mut query_index = HashMap::with_capacity(queries.len());
        for (i, q) in queries.iter().enumerate() {
            if q.text.is_empty() {
                return Err(Error::InvalidDataset(format!("query {} has empty text", q.id)));
            }
            if query_index.insert(q.id.clone(), i).is_some() {
                return Err(Error::InvalidDataset(format!("duplicate query id {}", q.id)));
            }
        }
        let mut passage_index = HashMap::with_capacity(passages.len());
        for (i, p) in passages.iter().enumerate() {
            if p.text.is_empty() {
                return Err(Error::InvalidDataset(format!("passage {} has empty text", p.id)));
            }
            if passage_index.insert(p.id.clone(), i).is_some() {
                return Err(Error::InvalidDataset(format!("duplicate passage id {}", p.id)));
            }
        }
        let mut seen = HashSet::new();
        let mut by_query: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, j) in judgments.iter().enumerate() {
            if !query_index.contains_key(&j.query_id) {
                return Err(Error::InvalidDataset(format!("judgment references unknown query {}", j.query_id)));
            }
            if !passage_index.contains_key(&j.passage_id) {
                return Err(Error::InvalidDataset(format!(
                    "judgment references unknown passage {}",
                    j.passage_id
                )));
            }
            if !seen.insert((j.query_id.as_str(), j.passage_id.as_str())) {
                return Err(Error::InvalidDataset(format!(
                    "duplicate judgment ({}, {})",
                    j.query_id, j.passage_id
                )));
            }
            by_query.entry(j.query_id.clone()).or_default().push(i);
        }
        Ok(Dataset {
            split,
            queries,
            passages,
            judgments,
            query_index,
            passage_index,
            by_query,
        })
    }

    pub fn query(&self, id: &str) -> Option<&Query> {
        self.query_index.get(id).map(|&i| &self.queries[i])
    }

    pub fn passage(&self, id: &str) -> Option<&Passage> {
        self.passage_index.get(id).map(|&i| &self.passages[i])
    }

    pub fn judgments_for(&self, query_id: &str) -> impl Iterator<Item = &RelJudgment> {
        self.by_query
            .get(query_id)
            .into_iter()
            .flatten()
            .map(|&i| &self.judgments[i])
    }

    /// Graded qrels for one query, keyed by passage id.
    pub fn qrels_for(&self, query_id: &str) -> BTreeMap<String, u32> {
        self.judgments_for(query_id)
            .map(|j| (j.passage_id.clone(), j.grade))
            .collect()
    }

    fn queries_sorted(&self) -> Vec<&Query> {
        let mut qs: Vec<&Query> = self.queries.iter().collect();
        qs.sort_by(|a, b| a.id.cmp(&b.id));
        qs
    }

    /// Relevant and irrelevant passages for a query, each sorted by id.
    /// Irrelevant ones are the grade-0 judgments when any exist, otherwise
    /// every unjudged-or-irrelevant corpus passage (`from_corpus = true`).
    fn sides(&self, query_id: &str) -> QuerySides<'_> {
        let mut relevant = Vec::new();
        let mut judged_negative = Vec::new();
        for j in self.judgments_for(query_id) {
            let p = &self.passages[self.passage_index[&j.passage_id]];
            if j.grade > 0 {
                relevant.push(p);
            } else {
                judged_negative.push(p);
            }
        }
        relevant.sort_by(|a, b| a.id.cmp(&b.id));
        judged_negative.sort_by(|a, b| a.id.cmp(&b.id));
        if !judged_negative.is_empty() {
            return QuerySides {
                relevant,
                negatives: judged_negative,
                from_corpus: false,
            };
        }
        let rel_ids: HashSet<&str> = relevant.iter().map(|p| p.id.as_str()).collect();
        let mut negatives: Vec<&Passage> = self
            .passages
            .iter()
            .filter(|p| !rel_ids.contains(p.id.as_str()))
            .collect();
        negatives.sort_by(|a, b| a.id.cmp(&b.id));
        QuerySides {
            relevant,
            negatives,
            from_corpus: true,
        }
    }
}

struct QuerySides<'a> {
    relevant: Vec<&'a Passage>,
    negatives: Vec<&'a Passage>,
    #[allow(dead_code)]
    from_corpus: bool,
}

/// Label-balanced demonstrations built from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemonstrationPool {
    pub demos: Vec<Demonstration>,
    pub counts: BTreeMap<String, (usize, usize)>,
}

impl DemonstrationPool {
    /// Rebuilds a pool from stored demonstrations, restoring the canonical
    /// order and counts.
    pub fn from_demos(mut demos: Vec<Demonstration>) -> Result<Self> {
        if demos.is_empty() {
            return Err(Error::EmptyPool);
        }
        demos.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for d in &demos {
            let c = counts.entry(d.query.id.clone()).or_default();
            match d.label {
                Label::Yes => c.0 += 1,
                Label::No => c.1 += 1,
            }
        }
        Ok(DemonstrationPool { demos, counts })
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    /// Map from demo reference to pool ordinal.
    pub fn ref_index(&self) -> HashMap<DemoRef, usize> {
        self.demos.iter().enumerate().map(|(i, d)| (d.demo_ref(), i)).collect()
    }
}

fn query_stream(query_id: &str) -> u64 {
    fnv1a64(query_id.as_bytes())
}

/// Pairs each training query with its relevant passages (Yes) and an equal
/// number of irrelevant passages (No). When a query has more relevant than
/// irrelevant passages the positives are capped to keep the balance.
pub fn build_pool(dataset: &Dataset, rng_seed: u64) -> Result<DemonstrationPool> {
    let mut demos = Vec::new();
    for q in dataset.queries_sorted() {
        let sides = dataset.sides(&q.id);
        let count = sides.relevant.len().min(sides.negatives.len());
        if count == 0 {
            continue;
        }
        let mut rng = stream_rng(rng_seed, query_stream(&q.id));
        let mut pos = sides.relevant;
        if pos.len() > count {
            pos.shuffle(&mut rng);
            pos.truncate(count);
        }
        let neg: Vec<&Passage> = sides.negatives.choose_multiple(&mut rng, count).copied().collect();
        for (passages, label) in [(pos, Label::Yes), (neg, Label::No)] {
            demos.extend(passages.into_iter().map(|p| Demonstration {
                query: q.clone(),
                passage: p.clone(),
                label,
            }));
        }
    }
    DemonstrationPool::from_demos(demos)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipReport {
    /// Queries without any relevant passage.
    pub no_relevant: Vec<String>,
    /// Queries for which no irrelevant passage exists anywhere.
    pub no_negative: Vec<String>,
}

impl SkipReport {
    pub fn skipped(&self) -> usize {
        self.no_relevant.len() + self.no_negative.len()
    }
}

/// One relevant (gold Yes) and one irrelevant (gold No) input per query.
pub fn build_training_inputs(dataset: &Dataset, rng_seed: u64) -> (Vec<TrainingInput>, SkipReport) {
    let mut inputs = Vec::new();
    let mut report = SkipReport::default();
    for q in dataset.queries_sorted() {
        let sides = dataset.sides(&q.id);
        if sides.relevant.is_empty() {
            report.no_relevant.push(q.id.clone());
            continue;
        }
        if sides.negatives.is_empty() {
            report.no_negative.push(q.id.clone());
            continue;
        }
        let mut rng = stream_rng(rng_seed, query_stream(&q.id));
        let pos = *sides.relevant.choose(&mut rng).expect("non-empty");
        let neg = *sides.negatives.choose(&mut rng).expect("non-empty");
        inputs.push(TrainingInput::new(q.clone(), pos.clone(), Label::Yes));
        inputs.push(TrainingInput::new(q.clone(), neg.clone(), Label::No));
    }
    (inputs, report)
}
