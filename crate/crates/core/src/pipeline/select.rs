use crate::corpus::{Demonstration, DemonstrationPool, TrainingInput};
use crate::dreranker::CrossEncoder;
use crate::dretriever::{BiEncoder, DenseIndex, TokenBag};
use crate::error::{Error, Result};
use crate::scorer::{score_list, PromptTemplate, ScorerBackend};

/// Scores a whole demonstration list for an input; greedy selection
/// maximizes it.
pub trait ListScorer: Sync {
    fn score(&self, input: &TrainingInput, list: &[&Demonstration]) -> Result<f64>;
}

impl ListScorer for CrossEncoder {
    fn score(&self, input: &TrainingInput, list: &[&Demonstration]) -> Result<f64> {
        self.cross_score(input, list)
    }
}

/// Uses the scorer backend's own list score (the quantity the reranker is
/// trained to imitate) in place of the reranker.
pub struct OracleScorer<'a, B: ?Sized> {
    pub backend: &'a B,
    pub template: &'a PromptTemplate,
}

impl<B: ScorerBackend + ?Sized> ListScorer for OracleScorer<'_, B> {
    fn score(&self, input: &TrainingInput, list: &[&Demonstration]) -> Result<f64> {
        score_list(self.backend, self.template, list, input)
    }
}

/// Greedy sequential selection of `k` demonstrations from `candidates`
/// (pool ordinals in retrieval order). Each step appends the candidate that
/// maximizes the list score of `selected ++ [z]`; ties go to the earlier
/// candidate.
pub fn greedy_over<S: ListScorer + ?Sized>(
    scorer: &S,
    input: &TrainingInput,
    candidates: &[usize],
    pool: &DemonstrationPool,
    k: usize,
) -> Result<Vec<usize>> {
    if candidates.len() < k {
        return Err(Error::NotEnoughCandidates {
            k,
            available: candidates.len(),
        });
    }
    let mut selected: Vec<usize> = Vec::with_capacity(k);
    let mut remaining: Vec<usize> = candidates.to_vec();
    for _ in 0..k {
        let mut list: Vec<&Demonstration> = selected.iter().map(|&i| &pool.demos[i]).collect();
        list.push(&pool.demos[remaining[0]]);
        let mut best: Option<(usize, f64)> = None;
        for (pos, &z) in remaining.iter().enumerate() {
            *list.last_mut().expect("non-empty") = &pool.demos[z];
            let s = scorer.score(input, &list)?;
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((pos, s));
            }
        }
        let (pos, _) = best.expect("k <= candidates");
        selected.push(remaining.remove(pos));
    }
    Ok(selected)
}

/// Reranker greedy selection specialized to share the encoded context
/// across a step; identical results to [`greedy_over`] with the reranker.
pub fn greedy_rerank(
    reranker: &CrossEncoder,
    input: &TrainingInput,
    candidates: &[usize],
    bags: &[TokenBag],
    k: usize,
) -> Result<Vec<usize>> {
    if candidates.len() < k {
        return Err(Error::NotEnoughCandidates {
            k,
            available: candidates.len(),
        });
    }
    let input_bag = reranker.input_bag(input);
    let mut selected: Vec<usize> = Vec::with_capacity(k);
    let mut remaining: Vec<usize> = candidates.to_vec();
    for _ in 0..k {
        let prefix: Vec<&TokenBag> = selected.iter().map(|&i| &bags[i]).collect();
        let ctx = reranker.context(&input_bag, &prefix);
        let mut best: Option<(usize, f64)> = None;
        for (pos, &z) in remaining.iter().enumerate() {
            let s = reranker.forward_last(&ctx, &bags[z]).score;
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((pos, s));
            }
        }
        let (pos, _) = best.expect("k <= candidates");
        selected.push(remaining.remove(pos));
    }
    Ok(selected)
}

/// Full inference-time selection: retrieve the top-`depth` demonstrations
/// with the retriever, then greedily order `k` of them with the reranker.
#[allow(clippy::too_many_arguments)]
pub fn greedy_select(
    input: &TrainingInput,
    retriever: &BiEncoder,
    index: &DenseIndex,
    reranker: &CrossEncoder,
    bags: &[TokenBag],
    depth: usize,
    k: usize,
    exclude_query: Option<&str>,
) -> Result<Vec<usize>> {
    if depth < k {
        return Err(Error::NotEnoughCandidates { k, available: depth });
    }
    let retrieved = index.retrieve(retriever, input, depth, exclude_query).ordinals();
    greedy_rerank(reranker, input, &retrieved, bags, k)
}

pub const BRUTE_FORCE_LIMIT: u128 = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForce {
    /// Pool ordinals of the best list.
    pub best: Vec<usize>,
    pub best_score: f64,
    /// Every ordered `k`-permutation with its score, in enumeration order
    /// (lexicographic over candidate positions).
    pub scored: Vec<(Vec<usize>, f64)>,
}

pub fn permutation_count(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    ((n - k + 1)..=n).map(|v| v as u128).product()
}

/// Exhaustively scores every ordered `k`-permutation of `candidates` with
/// the backend. Ties keep the lexicographically first list of candidate
/// positions.
pub fn brute_force_best_list<B: ScorerBackend + ?Sized>(
    input: &TrainingInput,
    candidates: &[usize],
    pool: &DemonstrationPool,
    k: usize,
    backend: &B,
    template: &PromptTemplate,
) -> Result<BruteForce> {
    let n = candidates.len();
    if k == 0 || k > n {
        return Err(Error::NotEnoughCandidates { k, available: n });
    }
    let permutations = permutation_count(n, k);
    if permutations > BRUTE_FORCE_LIMIT {
        return Err(Error::SearchTooLarge {
            permutations,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let mut scored = Vec::with_capacity(permutations as usize);
    let mut stack: Vec<usize> = Vec::with_capacity(k);
    let mut used = vec![false; n];
    enumerate(input, candidates, pool, k, backend, template, &mut stack, &mut used, &mut scored)?;
    let mut best = 0;
    for (i, (_, s)) in scored.iter().enumerate() {
        if *s > scored[best].1 {
            best = i;
        }
    }
    Ok(BruteForce {
        best: scored[best].0.clone(),
        best_score: scored[best].1,
        scored,
    })
}

#[allow(clippy::too_many_arguments)]
fn enumerate<B: ScorerBackend + ?Sized>(
    input: &TrainingInput,
    candidates: &[usize],
    pool: &DemonstrationPool,
    k: usize,
    backend: &B,
    template: &PromptTemplate,
    stack: &mut Vec<usize>,
    used: &mut [bool],
    out: &mut Vec<(Vec<usize>, f64)>,
) -> Result<()> {
    if stack.len() == k {
        let ordinals: Vec<usize> = stack.iter().map(|&p| candidates[p]).collect();
        let list: Vec<&Demonstration> = ordinals.iter().map(|&o| &pool.demos[o]).collect();
        let s = score_list(backend, template, &list, input)?;
        out.push((ordinals, s));
        return Ok(());
    }
    for p in 0..candidates.len() {
        if used[p] {
            continue;
        }
        used[p] = true;
        stack.push(p);
        enumerate(input, candidates, pool, k, backend, template, stack, used, out)?;
        stack.pop();
        used[p] = false;
    }
    Ok(())
}
