use rand::Rng;

/// Draws an index with probability `exp(-rank) / sum_j exp(-rank_j)`.
///
/// Inverse CDF over the candidates taken in rank order, so a given uniform
/// draw always maps to the same candidate.
pub fn sample_by_rank<R: Rng + ?Sized>(ranks: &[usize], rng: &mut R) -> usize {
    assert!(!ranks.is_empty(), "cannot sample from an empty candidate set");
    let mut order: Vec<usize> = (0..ranks.len()).collect();
    order.sort_by_key(|&i| (ranks[i], i));
    let best = ranks[order[0]] as f64;
    let weights: Vec<f64> = order.iter().map(|&i| (best - ranks[i] as f64).exp()).collect();
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (w, &i) in weights.iter().zip(&order) {
        acc += w;
        if u < acc {
            return i;
        }
    }
    *order.last().expect("non-empty")
}

/// The exact selection probabilities, aligned with `ranks`.
pub fn rank_probabilities(ranks: &[usize]) -> Vec<f64> {
    let best = ranks.iter().copied().min().unwrap_or(1) as f64;
    let w: Vec<f64> = ranks.iter().map(|&r| (best - r as f64).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng;

    #[test]
    fn three_way_probabilities() {
        let p = rank_probabilities(&[1, 2, 3]);
        let e = std::f64::consts::E;
        let z = 1.0 + 1.0 / e + 1.0 / (e * e);
        assert!((p[0] - 1.0 / z).abs() < 1e-15);
        for (got, want) in p.iter().zip([0.66524, 0.24473, 0.09003]) {
            assert!((got - want).abs() < 5e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn single_candidate_always_chosen() {
        let mut r = rng(1);
        for _ in 0..100 {
            assert_eq!(sample_by_rank(&[1], &mut r), 0);
        }
    }

    #[test]
    fn positions_follow_ranks_not_slots() {
        // rank 1 sits in the last slot
        let mut r = rng(5);
        let mut counts = [0usize; 3];
        for _ in 0..20_000 {
            counts[sample_by_rank(&[3, 2, 1], &mut r)] += 1;
        }
        assert!(counts[2] > counts[1] && counts[1] > counts[0]);
    }
}
