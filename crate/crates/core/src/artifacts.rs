//! JSONL record types for the intermediate artifacts. Demonstrations are
//! stored by reference (`[query_id, passage_id, label]`) and resolved
//! against the pool on load.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{DemoRef, DemonstrationPool, TrainingInput};
use crate::dreranker::{Continuation, DependencySample};
use crate::dretriever::{ScoredCandidate, ScoredSet};
use crate::error::{Error, Result};

pub struct Resolver<'a> {
    refs: HashMap<DemoRef, usize>,
    pool: &'a DemonstrationPool,
    inputs: HashMap<&'a str, &'a TrainingInput>,
}

impl<'a> Resolver<'a> {
    pub fn new(pool: &'a DemonstrationPool, inputs: &'a [TrainingInput]) -> Self {
        Resolver {
            refs: pool.ref_index(),
            pool,
            inputs: inputs.iter().map(|i| (i.id.as_str(), i)).collect(),
        }
    }

    pub fn demo(&self, r: &DemoRef) -> Result<usize> {
        self.refs
            .get(r)
            .copied()
            .ok_or_else(|| Error::UnresolvedRef(format!("demonstration [{}, {}, {}]", r.0, r.1, r.2)))
    }

    pub fn demos(&self, refs: &[DemoRef]) -> Result<Vec<usize>> {
        refs.iter().map(|r| self.demo(r)).collect()
    }

    pub fn input(&self, id: &str) -> Result<&'a TrainingInput> {
        self.inputs
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnresolvedRef(format!("training input {id}")))
    }

    pub fn demo_ref(&self, ordinal: usize) -> DemoRef {
        self.pool.demos[ordinal].demo_ref()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatesRecord {
    pub input_id: String,
    pub candidates: Vec<DemoRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRef {
    pub demo: DemoRef,
    pub llm_score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub input_id: String,
    pub candidates: Vec<ScoredRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationRecord {
    pub last: DemoRef,
    pub llm_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub input_id: String,
    pub shot: usize,
    pub prefix: Vec<DemoRef>,
    pub continuations: Vec<ContinuationRecord>,
}

pub fn candidates_to_records(r: &Resolver<'_>, inputs: &[TrainingInput], cands: &[Vec<usize>]) -> Vec<CandidatesRecord> {
    inputs
        .iter()
        .zip(cands)
        .map(|(i, c)| CandidatesRecord {
            input_id: i.id.clone(),
            candidates: c.iter().map(|&o| r.demo_ref(o)).collect(),
        })
        .collect()
}

pub fn candidates_from_records(
    r: &Resolver<'_>,
    records: &[CandidatesRecord],
) -> Result<(Vec<TrainingInput>, Vec<Vec<usize>>)> {
    let mut inputs = Vec::with_capacity(records.len());
    let mut cands = Vec::with_capacity(records.len());
    for rec in records {
        inputs.push(r.input(&rec.input_id)?.clone());
        cands.push(r.demos(&rec.candidates)?);
    }
    Ok((inputs, cands))
}

pub fn scored_to_records(r: &Resolver<'_>, sets: &[ScoredSet]) -> Vec<ScoredRecord> {
    sets.iter()
        .map(|s| ScoredRecord {
            input_id: s.input.id.clone(),
            candidates: s
                .candidates
                .iter()
                .map(|c| ScoredRef {
                    demo: r.demo_ref(c.demo),
                    llm_score: c.llm_score,
                    rank: c.rank,
                })
                .collect(),
        })
        .collect()
}

pub fn scored_from_records(r: &Resolver<'_>, records: &[ScoredRecord]) -> Result<Vec<ScoredSet>> {
    records
        .iter()
        .map(|rec| {
            let candidates = rec
                .candidates
                .iter()
                .map(|c| {
                    Ok(ScoredCandidate {
                        demo: r.demo(&c.demo)?,
                        llm_score: c.llm_score,
                        rank: c.rank,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let mut ranks: Vec<usize> = candidates.iter().map(|c| c.rank).collect();
            ranks.sort_unstable();
            if ranks.iter().enumerate().any(|(i, &k)| k != i + 1) {
                return Err(Error::InvalidDataset(format!(
                    "scored set for {} does not rank 1..n",
                    rec.input_id
                )));
            }
            Ok(ScoredSet {
                input: r.input(&rec.input_id)?.clone(),
                candidates,
            })
        })
        .collect()
}

pub fn samples_to_records(r: &Resolver<'_>, samples: &[DependencySample]) -> Vec<SampleRecord> {
    samples
        .iter()
        .map(|s| SampleRecord {
            input_id: s.input.id.clone(),
            shot: s.shot(),
            prefix: s.prefix.iter().map(|&o| r.demo_ref(o)).collect(),
            continuations: s
                .continuations
                .iter()
                .map(|c| ContinuationRecord {
                    last: r.demo_ref(c.last),
                    llm_score: c.llm_score,
                })
                .collect(),
        })
        .collect()
}

pub fn samples_from_records(r: &Resolver<'_>, records: &[SampleRecord]) -> Result<Vec<DependencySample>> {
    records
        .iter()
        .map(|rec| {
            let sample = DependencySample {
                input: r.input(&rec.input_id)?.clone(),
                prefix: r.demos(&rec.prefix)?,
                continuations: rec
                    .continuations
                    .iter()
                    .map(|c| {
                        Ok(Continuation {
                            last: r.demo(&c.last)?,
                            llm_score: c.llm_score,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
            };
            if sample.shot() != rec.shot {
                return Err(Error::InvalidDataset(format!(
                    "sample for {} declares shot {} with a prefix of {}",
                    rec.input_id,
                    rec.shot,
                    rec.prefix.len()
                )));
            }
            sample
                .check()
                .map_err(|e| Error::InvalidDataset(format!("sample for {}: {e}", rec.input_id)))?;
            Ok(sample)
        })
        .collect()
}
