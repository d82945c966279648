//! Retriever losses and their gradients with respect to the score vector.

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax cross-entropy of the positive against all candidates.
pub fn contrastive_loss(scores: &[f64], positive: usize) -> f64 {
    contrastive_with_grad(scores, positive).0
}

pub fn contrastive_with_grad(scores: &[f64], positive: usize) -> (f64, Vec<f64>) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = z.ln() - (scores[positive] - max);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / z).collect();
    grad[positive] -= 1.0;
    (loss.max(0.0), grad)
}

/// Sum over ordered pairs with `ranks[i] < ranks[j]` of
/// `ln(1 + e^{s_j - s_i})`.
pub fn ranknet_loss(scores: &[f64], ranks: &[usize]) -> f64 {
    ranknet_with_grad(scores, ranks).0
}

pub fn ranknet_with_grad(scores: &[f64], ranks: &[usize]) -> (f64, Vec<f64>) {
    debug_assert_eq!(scores.len(), ranks.len());
    let n = scores.len();
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            if ranks[i] < ranks[j] {
                let d = scores[j] - scores[i];
                loss += softplus(d);
                let g = sigmoid(d);
                grad[j] += g;
                grad[i] -= g;
            }
        }
    }
    (loss, grad)
}

pub fn combined_loss(contrastive: f64, ranking: f64, lambda: f64) -> f64 {
    lambda * contrastive + ranking
}

/// Ranks 1..n by score descending, ties broken by position ascending.
pub fn ranks_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; scores.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r + 1;
    }
    ranks
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn contrastive_examples() {
        let eq = vec![0.3; 50];
        assert!((contrastive_loss(&eq, 7) - 50f64.ln()).abs() < 1e-12);
        assert!((contrastive_loss(&[1.0, 0.0], 0) - (1.0 + (-1f64).exp()).ln()).abs() < 1e-15);
        assert!((contrastive_loss(&[1.0, 0.0], 0) - 0.31326).abs() < 1e-5);
        assert!(contrastive_loss(&[800.0, 0.0, -3.0], 0) < 1e-300);
    }

    #[test]
    fn ranknet_examples() {
        assert!((ranknet_loss(&[0.7, 0.7], &[1, 2]) - 2f64.ln()).abs() < 1e-15);
        assert!((ranknet_loss(&[2.0, 0.0], &[1, 2]) - (1.0 + (-2f64).exp()).ln()).abs() < 1e-15);
        assert!((ranknet_loss(&[2.0, 0.0], &[1, 2]) - 0.12693).abs() < 1e-5);
        // three pair terms at N = 3
        assert!((ranknet_loss(&[0.0; 3], &[2, 1, 3]) - 3.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn combined_examples() {
        assert!((combined_loss(1.0, 0.5, 0.2) - 0.7).abs() < 1e-15);
        assert_eq!(combined_loss(3.0, 0.5, 0.0), 0.5);
        assert_eq!(combined_loss(0.0, 0.0, 0.2), 0.0);
    }

    #[test]
    fn rank_ties_by_position() {
        assert_eq!(ranks_by_score(&[0.5, 0.9, 0.5, 0.1]), vec![2, 1, 3, 4]);
    }

    proptest! {
        #[test]
        fn contrastive_nonnegative(scores in prop::collection::vec(-20.0f64..20.0, 2..12), pos in 0usize..12) {
            let pos = pos % scores.len();
            prop_assert!(contrastive_loss(&scores, pos) >= 0.0);
        }

        #[test]
        fn ranknet_shift_invariant(scores in prop::collection::vec(-5.0f64..5.0, 2..10), c in -50.0f64..50.0) {
            let ranks = ranks_by_score(&scores.iter().map(|s| -s).collect::<Vec<_>>());
            let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
            let a = ranknet_loss(&scores, &ranks);
            let b = ranknet_loss(&shifted, &ranks);
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0), "{a} {b}");
        }
    }
}
