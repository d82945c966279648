//! Seeded topic-model generator for desk-scale experiments.
//!
//! Each topic owns a disjoint slice of the vocabulary; the rest is shared
//! background. A text of topic `t` draws each token from `t`'s words with
//! probability `topic_purity`, otherwise from the background. A passage is
//! relevant to a query iff both were generated from the same topic.

use std::collections::HashMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Passage, Query, RelJudgment, Split};
use crate::error::{Error, Result};
use crate::seed::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub topics: usize,
    pub vocab: usize,
    pub train_queries: usize,
    pub test_queries: usize,
    pub passages_per_query: usize,
    pub query_tokens: usize,
    pub passage_tokens: usize,
    pub max_relevant_per_query: usize,
    pub topic_purity: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            topics: 20,
            vocab: 500,
            train_queries: 200,
            test_queries: 50,
            passages_per_query: 20,
            query_tokens: 6,
            passage_tokens: 24,
            max_relevant_per_query: 4,
            topic_purity: 0.6,
        }
    }
}

impl SynthParams {
    fn validate(&self) -> Result<()> {
        let zero = [
            ("topics", self.topics),
            ("vocab", self.vocab),
            ("train_queries", self.train_queries),
            ("test_queries", self.test_queries),
            ("query_tokens", self.query_tokens),
            ("passage_tokens", self.passage_tokens),
            ("max_relevant_per_query", self.max_relevant_per_query),
        ];
        if let Some((name, _)) = zero.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidParams(format!("{name} must be positive")));
        }
        if self.passages_per_query < 2 {
            return Err(Error::InvalidParams(
                "passages_per_query must be at least 2 (one relevant, one irrelevant)".into(),
            ));
        }
        if self.topics < 2 {
            return Err(Error::InvalidParams("at least two topics are needed for irrelevant passages".into()));
        }
        if self.topic_words() == 0 {
            return Err(Error::InvalidParams(format!(
                "vocab {} too small for {} topics",
                self.vocab, self.topics
            )));
        }
        if !(0.0..=1.0).contains(&self.topic_purity) {
            return Err(Error::InvalidParams("topic_purity must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// Words per topic: 80% of the vocabulary is split evenly across topics.
    fn topic_words(&self) -> usize {
        self.vocab * 4 / 5 / self.topics
    }
}

/// Train and test splits plus the generating topic of every text.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub train: Dataset,
    pub test: Dataset,
    pub query_topic: HashMap<String, usize>,
    pub passage_topic: HashMap<String, usize>,
}

impl SyntheticCorpus {
    pub fn query_count(&self) -> usize {
        self.train.queries.len() + self.test.queries.len()
    }

    pub fn passage_count(&self) -> usize {
        self.train.passages.len() + self.test.passages.len()
    }

    /// Topic of each query text and passage text, for relevance lookups that
    /// only see strings.
    pub fn text_topics(&self) -> (HashMap<String, usize>, HashMap<String, usize>) {
        let mut qt = HashMap::new();
        let mut pt = HashMap::new();
        for ds in [&self.train, &self.test] {
            for q in &ds.queries {
                qt.insert(q.text.clone(), self.query_topic[&q.id]);
            }
            for p in &ds.passages {
                pt.insert(p.text.clone(), self.passage_topic[&p.id]);
            }
        }
        (qt, pt)
    }
}

struct Generator<'a> {
    params: &'a SynthParams,
    topic_vocab: Vec<Vec<String>>,
    background: Vec<String>,
}

impl Generator<'_> {
    fn text<R: Rng>(&self, rng: &mut R, topic: usize, len: usize) -> String {
        let mut words = Vec::with_capacity(len);
        for _ in 0..len {
            let from_topic = self.background.is_empty() || rng.random_bool(self.params.topic_purity);
            let pool = if from_topic { &self.topic_vocab[topic] } else { &self.background };
            words.push(pool.choose(rng).expect("non-empty vocabulary").as_str());
        }
        words.join(" ")
    }
}

pub fn generate_synthetic_dataset(params: &SynthParams, rng_seed: u64) -> Result<SyntheticCorpus> {
    params.validate()?;
    let per_topic = params.topic_words();
    let words: Vec<String> = (0..params.vocab).map(|i| format!("w{i}")).collect();
    let topic_vocab = (0..params.topics)
        .map(|t| words[t * per_topic..(t + 1) * per_topic].to_vec())
        .collect();
    let background = words[params.topics * per_topic..].to_vec();
    let gen = Generator {
        params,
        topic_vocab,
        background,
    };

    let mut rng = rng(rng_seed);
    let mut query_topic = HashMap::new();
    let mut passage_topic = HashMap::new();
    let mut splits = Vec::new();
    for (split, count, tag) in [
        (Split::Train, params.train_queries, "train"),
        (Split::Test, params.test_queries, "test"),
    ] {
        let mut queries = Vec::with_capacity(count);
        let mut passages = Vec::with_capacity(count * params.passages_per_query);
        let mut judgments = Vec::with_capacity(count * params.passages_per_query);
        let width = (count.max(1) - 1).to_string().len();
        for qi in 0..count {
            let qid = format!("{tag}-q{qi:0width$}");
            let topic = rng.random_range(0..params.topics);
            queries.push(Query {
                id: qid.clone(),
                text: gen.text(&mut rng, topic, params.query_tokens),
            });
            query_topic.insert(qid.clone(), topic);

            let max_rel = params.max_relevant_per_query.min(params.passages_per_query - 1);
            let n_rel = rng.random_range(1..=max_rel);
            let mut topics: Vec<usize> = (0..params.passages_per_query)
                .map(|i| {
                    if i < n_rel {
                        topic
                    } else {
                        let other = rng.random_range(0..params.topics - 1);
                        if other >= topic {
                            other + 1
                        } else {
                            other
                        }
                    }
                })
                .collect();
            topics.shuffle(&mut rng);
            for (pi, pt) in topics.into_iter().enumerate() {
                let pid = format!("{qid}-p{pi:02}");
                passages.push(Passage {
                    id: pid.clone(),
                    text: gen.text(&mut rng, pt, params.passage_tokens),
                });
                judgments.push(RelJudgment {
                    query_id: qid.clone(),
                    passage_id: pid.clone(),
                    grade: u32::from(pt == topic),
                });
                passage_topic.insert(pid, pt);
            }
        }
        splits.push(Dataset::new(split, queries, passages, judgments)?);
    }
    let test = splits.pop().expect("two splits");
    let train = splits.pop().expect("two splits");
    Ok(SyntheticCorpus {
        train,
        test,
        query_topic,
        passage_topic,
    })
}
