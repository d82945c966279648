use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sampling::sample_by_rank;
use crate::corpus::{Demonstration, DemonstrationPool, TrainingInput};
use crate::dretriever::ranks_by_score;
use crate::error::{Error, Result};
use crate::scorer::{score_list, PromptTemplate, ScorerBackend};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Continuation {
    /// Pool ordinal of the appended demonstration.
    pub last: usize,
    pub llm_score: f64,
}

/// One iteration of the construction: a shared prefix and every unselected
/// demonstration appended to it, ranked by the scorer (best first).
#[derive(Debug, Clone, PartialEq)]
pub struct DependencySample {
    pub input: TrainingInput,
    pub prefix: Vec<usize>,
    pub continuations: Vec<Continuation>,
}

impl DependencySample {
    pub fn shot(&self) -> usize {
        self.prefix.len() + 1
    }

    /// The full list at rank position `i` (0-based).
    pub fn list(&self, i: usize) -> Vec<usize> {
        let mut l = self.prefix.clone();
        l.push(self.continuations[i].last);
        l
    }

    /// Checks the structural invariants; returns a description of the first
    /// violation.
    pub fn check(&self) -> std::result::Result<(), String> {
        if self.continuations.is_empty() {
            return Err("no continuations".into());
        }
        let mut lasts: Vec<usize> = self.continuations.iter().map(|c| c.last).collect();
        if lasts.iter().any(|l| self.prefix.contains(l)) {
            return Err("a continuation repeats a prefix demonstration".into());
        }
        lasts.sort_unstable();
        if lasts.windows(2).any(|w| w[0] == w[1]) {
            return Err("continuation last elements are not distinct".into());
        }
        let mut prefix = self.prefix.clone();
        prefix.sort_unstable();
        if prefix.windows(2).any(|w| w[0] == w[1]) {
            return Err("prefix repeats a demonstration".into());
        }
        if self
            .continuations
            .windows(2)
            .any(|w| w[0].llm_score < w[1].llm_score)
        {
            return Err("llm scores increase with rank".into());
        }
        Ok(())
    }
}

/// Builds `k` dependency-aware samples for one input from its top-M
/// retrieved demonstrations (pool ordinals, in retrieval order).
///
/// Iteration `i` scores every list `selected ++ [z]` for unselected `z`,
/// records the ranking, then moves one demonstration drawn by
/// [`sample_by_rank`] into the selected prefix. The scorer is called
/// `sum_{i<k} (M - i)` times.
pub fn construct_samples<B, R>(
    input: &TrainingInput,
    retrieved: &[usize],
    pool: &DemonstrationPool,
    backend: &B,
    template: &PromptTemplate,
    k: usize,
    rng: &mut R,
) -> Result<Vec<DependencySample>>
where
    B: ScorerBackend + ?Sized,
    R: Rng + ?Sized,
{
    if k == 0 || retrieved.len() < k {
        return Err(Error::NotEnoughCandidates {
            k,
            available: retrieved.len(),
        });
    }
    let mut selected: Vec<usize> = Vec::with_capacity(k);
    let mut unselected: Vec<usize> = retrieved.to_vec();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let prefix: Vec<&Demonstration> = selected.iter().map(|&i| &pool.demos[i]).collect();
        let mut list = prefix.clone();
        list.push(&pool.demos[0]);
        let mut scores = Vec::with_capacity(unselected.len());
        for &z in &unselected {
            *list.last_mut().expect("non-empty") = &pool.demos[z];
            scores.push(score_list(backend, template, &list, input)?);
        }
        let ranks = ranks_by_score(&scores);
        let mut order: Vec<usize> = (0..unselected.len()).collect();
        order.sort_by_key(|&i| ranks[i]);
        out.push(DependencySample {
            input: input.clone(),
            prefix: selected.clone(),
            continuations: order
                .iter()
                .map(|&i| Continuation {
                    last: unselected[i],
                    llm_score: scores[i],
                })
                .collect(),
        });
        let pick = sample_by_rank(&ranks, rng);
        selected.push(unselected.remove(pick));
    }
    Ok(out)
}

/// Total scorer calls made by [`construct_samples`].
pub fn expected_calls(m: usize, k: usize) -> usize {
    (0..k).map(|i| m - i).sum()
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use super::*;
    use crate::corpus::{Label, Passage, Query};
    use crate::error::BackendError;
    use crate::scorer::{LabelDistribution, MockScorer, ScoreRequest};
    use crate::seed::rng;

    struct Counting(MockScorer, AtomicUsize);

    impl ScorerBackend for Counting {
        fn distribution(&self, r: &ScoreRequest<'_>) -> std::result::Result<LabelDistribution, BackendError> {
            self.1.fetch_add(1, Ordering::SeqCst);
            self.0.distribution(r)
        }
    }

    fn pool(n: usize) -> DemonstrationPool {
        DemonstrationPool::from_demos(
            (0..n)
                .map(|i| Demonstration {
                    query: Query {
                        id: format!("q{i:03}"),
                        text: format!("w{} w{} w{}", i % 7, i % 11, i % 3),
                    },
                    passage: Passage {
                        id: format!("p{i}"),
                        text: format!("w{} w{}", i % 5, i % 13),
                    },
                    label: Label::from_relevant(i % 3 == 0),
                })
                .collect(),
        )
        .unwrap()
    }

    fn input() -> TrainingInput {
        TrainingInput::new(
            Query {
                id: "x".into(),
                text: "w1 w2".into(),
            },
            Passage {
                id: "y".into(),
                text: "w2 w3".into(),
            },
            Label::Yes,
        )
    }

    #[test]
    fn default_budget_is_147_calls() {
        let pool = pool(60);
        let backend = Counting(MockScorer::default(), AtomicUsize::new(0));
        let retrieved: Vec<usize> = (0..50).collect();
        let t = PromptTemplate::default();
        let s = construct_samples(&input(), &retrieved, &pool, &backend, &t, 3, &mut rng(1)).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(backend.1.load(Ordering::SeqCst), 147);
        assert_eq!(expected_calls(50, 3), 147);
        for (i, sample) in s.iter().enumerate() {
            sample.check().unwrap();
            assert_eq!(sample.shot(), i + 1);
            assert_eq!(sample.continuations.len(), 50 - i);
        }
        // each prefix extends the previous one by a continuation of it
        assert!(s[0].continuations.iter().any(|c| c.last == s[1].prefix[0]));
        assert_eq!(&s[2].prefix[..1], &s[1].prefix[..]);
    }

    #[test]
    fn single_shot_lists_have_length_one() {
        let pool = pool(10);
        let t = PromptTemplate::default();
        let s = construct_samples(&input(), &[1, 4, 7], &pool, &MockScorer::default(), &t, 1, &mut rng(2)).unwrap();
        assert_eq!(s.len(), 1);
        assert!(s[0].prefix.is_empty());
        assert!((0..3).all(|i| s[0].list(i).len() == 1));
    }

    #[test]
    fn too_few_retrieved_is_an_error() {
        let pool = pool(10);
        let t = PromptTemplate::default();
        let r = construct_samples(&input(), &[1, 2], &pool, &MockScorer::default(), &t, 3, &mut rng(2));
        assert!(matches!(r, Err(Error::NotEnoughCandidates { k: 3, available: 2 })));
    }
}
