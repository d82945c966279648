//! Dependency-aware demonstration reranker: sample construction, the
//! cross-encoder list scorer, the list-pairwise loss and training.

mod cross;
mod samples;
mod sampling;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::DemonstrationPool;
use crate::dretriever::{sigmoid, softplus, TokenBag};
use crate::error::{Error, Result};
use crate::seed::stream_rng;

pub use cross::{Context, CrossEncoder, CrossGrad, ListForward};
pub use samples::{construct_samples, expected_calls, Continuation, DependencySample};
pub use sampling::{rank_probabilities, sample_by_rank};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RerankerTrainConfig {
    /// Retrieved demonstrations scored per training input.
    pub m: usize,
    /// Construction iterations (maximum shot).
    pub k: usize,
    /// Cap on pairs per sample; `None` keeps every pair.
    pub max_pairs_per_sample: Option<usize>,
    /// Independent sampled trajectories per training input.
    pub trajectories: usize,
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for RerankerTrainConfig {
    fn default() -> Self {
        RerankerTrainConfig {
            m: 50,
            k: 3,
            max_pairs_per_sample: None,
            trajectories: 1,
            hidden: 64,
            lr: 0.001,
            epochs: 2,
            seed: 0,
        }
    }
}

impl RerankerTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.m {
            return Err(Error::Config(format!("reranker needs 1 <= k <= m, got k={} m={}", self.k, self.m)));
        }
        if self.trajectories == 0 {
            return Err(Error::Config("trajectories must be positive".into()));
        }
        Ok(())
    }
}

/// Rank-position pairs `(i, j)`, `i < j`, that enter the loss for a sample
/// with `n` continuations. With a cap, pairs are taken by systematic
/// sampling over the rank-ordered pair list from a seeded offset, so every
/// rank stratum keeps its share.
pub fn sample_pairs<R: Rng + ?Sized>(n: usize, cap: Option<usize>, rng: &mut R) -> Vec<(usize, usize)> {
    let all: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    match cap {
        Some(cap) if cap < all.len() => {
            if cap == 0 {
                return Vec::new();
            }
            let step = all.len() as f64 / cap as f64;
            let offset = rng.random::<f64>() * step;
            (0..cap).map(|t| all[((offset + t as f64 * step) as usize).min(all.len() - 1)]).collect()
        }
        _ => all,
    }
}

/// A sample with token bags resolved.
pub struct PreparedSample {
    pub input: TokenBag,
    pub prefix: Vec<TokenBag>,
    pub lasts: Vec<TokenBag>,
    pub llm_scores: Vec<f64>,
}

impl PreparedSample {
    pub fn new(model: &CrossEncoder, sample: &DependencySample, bags: &[TokenBag]) -> Self {
        PreparedSample {
            input: model.input_bag(&sample.input),
            prefix: sample.prefix.iter().map(|&i| bags[i].clone()).collect(),
            lasts: sample.continuations.iter().map(|c| bags[c.last].clone()).collect(),
            llm_scores: sample.continuations.iter().map(|c| c.llm_score).collect(),
        }
    }
}

pub fn pool_bags(model: &CrossEncoder, pool: &DemonstrationPool) -> Vec<TokenBag> {
    pool.demos.iter().map(|d| model.demo_bag(d)).collect()
}

/// Model scores of every continuation, in rank order.
pub fn sample_scores(model: &CrossEncoder, sample: &PreparedSample) -> Vec<f64> {
    let prefix: Vec<&TokenBag> = sample.prefix.iter().collect();
    let ctx = model.context(&sample.input, &prefix);
    sample.lasts.iter().map(|l| model.forward_last(&ctx, l).score).collect()
}

/// List-pairwise loss of one sample over `pairs` (rank positions, better
/// first); accumulates the gradient when `grad` is given.
pub fn sample_loss(
    model: &CrossEncoder,
    sample: &PreparedSample,
    pairs: &[(usize, usize)],
    grad: Option<&mut CrossGrad>,
) -> f64 {
    let prefix: Vec<&TokenBag> = sample.prefix.iter().collect();
    let ctx = model.context(&sample.input, &prefix);
    let fwd: Vec<ListForward> = sample.lasts.iter().map(|l| model.forward_last(&ctx, l)).collect();
    let mut loss = 0.0;
    let mut d_scores = vec![0.0; fwd.len()];
    for &(i, j) in pairs {
        let diff = fwd[j].score - fwd[i].score;
        loss += softplus(diff);
        let g = sigmoid(diff);
        d_scores[j] += g;
        d_scores[i] -= g;
    }
    if let Some(grad) = grad {
        let d = model.dim();
        let mut d_in = vec![0.0; d];
        let mut d_pre = vec![0.0; d];
        for ((f, last), &ds) in fwd.iter().zip(&sample.lasts).zip(&d_scores) {
            model.backward_last(&ctx, f, last, ds, grad, &mut d_in, &mut d_pre);
        }
        model.backward_context(&sample.input, &prefix, &d_in, &d_pre, grad);
    }
    loss
}

fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    sample_pairs(n, None, &mut stream_rng(0, 0))
}

/// Sum of [`sample_loss`] over every pair of every sample.
pub fn list_pairwise_loss(model: &CrossEncoder, samples: &[PreparedSample]) -> f64 {
    samples
        .iter()
        .map(|s| sample_loss(model, s, &all_pairs(s.lasts.len()), None))
        .sum()
}

/// Fraction of strictly ordered (by LLM score) continuation pairs that the
/// model orders the same way; model ties count one half.
pub fn pairwise_accuracy(model: &CrossEncoder, samples: &[PreparedSample]) -> f64 {
    let mut agree = 0.0;
    let mut total = 0usize;
    for s in samples {
        let scores = sample_scores(model, s);
        for (i, j) in all_pairs(scores.len()) {
            if s.llm_scores[i] > s.llm_scores[j] {
                total += 1;
                if scores[i] > scores[j] {
                    agree += 1.0;
                } else if scores[i] == scores[j] {
                    agree += 0.5;
                }
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        agree / total as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RerankerReport {
    /// Full training-corpus loss before training and after each epoch.
    pub losses: Vec<f64>,
    pub steps: usize,
}

/// Gradient descent on the list-pairwise loss, one step per sample, samples
/// shuffled per epoch.
pub fn train_reranker(
    model: &mut CrossEncoder,
    samples: &[DependencySample],
    pool: &DemonstrationPool,
    config: &RerankerTrainConfig,
) -> Result<RerankerReport> {
    let bags = pool_bags(model, pool);
    let prepared: Vec<PreparedSample> = samples.iter().map(|s| PreparedSample::new(model, s, &bags)).collect();
    let mut grad = CrossGrad::new(model);
    let mut report = RerankerReport {
        losses: vec![list_pairwise_loss(model, &prepared)],
        steps: 0,
    };
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        order.shuffle(&mut stream_rng(config.seed, epoch as u64));
        for &i in &order {
            let mut pair_rng = stream_rng(config.seed ^ 0x5041_4952, (epoch * prepared.len() + i) as u64);
            let pairs = sample_pairs(prepared[i].lasts.len(), config.max_pairs_per_sample, &mut pair_rng);
            let loss = sample_loss(model, &prepared[i], &pairs, Some(&mut grad));
            if !loss.is_finite() || !grad.max_abs().is_finite() {
                return Err(Error::NonFiniteLoss {
                    stage: "reranker",
                    detail: format!(
                        "epoch {epoch}, input {} shot {}: loss={loss}",
                        samples[i].input.id,
                        samples[i].shot()
                    ),
                });
            }
            grad.apply(model, config.lr);
            report.steps += 1;
        }
        let loss = list_pairwise_loss(model, &prepared);
        log::info!("reranker epoch {} loss {loss:.6}", epoch + 1);
        report.losses.push(loss);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng;

    #[test]
    fn pair_enumeration() {
        assert_eq!(sample_pairs(3, None, &mut rng(0)), vec![(0, 1), (0, 2), (1, 2)]);
        assert_eq!(sample_pairs(50, None, &mut rng(0)).len(), 1225);
        let capped = sample_pairs(50, Some(100), &mut rng(3));
        assert_eq!(capped.len(), 100);
        assert!(capped.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(capped, sample_pairs(50, Some(100), &mut rng(3)));
        assert_eq!(sample_pairs(4, Some(100), &mut rng(3)).len(), 6);
    }

    #[test]
    fn config_validation() {
        assert!(RerankerTrainConfig::default().validate().is_ok());
        let bad = RerankerTrainConfig {
            k: 51,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
