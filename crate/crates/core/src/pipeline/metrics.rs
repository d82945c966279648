use std::collections::BTreeMap;

use super::RunEntry;

/// NDCG@k with exponential gain `2^grade - 1` and `log2(i + 1)` discount.
/// `None` when the query has no positive judgment (excluded from means).
pub fn ndcg_at_k(run: &[RunEntry], qrels: &BTreeMap<String, u32>, k: usize) -> Option<f64> {
    let mut ideal: Vec<u32> = qrels.values().copied().filter(|&g| g > 0).collect();
    if ideal.is_empty() {
        return None;
    }
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let mut ranked: Vec<&RunEntry> = run.iter().collect();
    ranked.sort_by_key(|e| e.rank);
    let dcg = discounted_gain(ranked.iter().map(|e| qrels.get(&e.passage_id).copied().unwrap_or(0)), k);
    let idcg = discounted_gain(ideal.into_iter(), k);
    Some(dcg / idcg)
}

fn discounted_gain(grades: impl Iterator<Item = u32>, k: usize) -> f64 {
    grades
        .take(k)
        .enumerate()
        .map(|(i, g)| (2f64.powi(g as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}
