//! Bi-encoder demonstration retriever.
//!
//! Inputs and demonstrations are encoded by the same hashed mean-pooling
//! encoder; similarity is the dot product. Training minimizes
//! `lambda * contrastive + ranknet` over each input's LLM-scored candidates.

mod encoder;
mod index;
mod losses;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{CheckpointError, Container, Tensor};
use crate::corpus::{Demonstration, DemonstrationPool, TrainingInput};
use crate::error::{Error, Result};
use crate::seed::stream_rng;

pub use encoder::{
    bucket, demo_text, dot, input_text, pair_text, EmbeddingTable, EncoderConfig, RowGrad, TokenBag,
};
pub use index::{DenseIndex, Retrieved};
pub use losses::{
    combined_loss, contrastive_loss, contrastive_with_grad, ranknet_loss, ranknet_with_grad, ranks_by_score,
    sigmoid, softplus,
};

#[derive(Debug, Clone, PartialEq)]
pub struct BiEncoder {
    pub table: EmbeddingTable,
}

impl BiEncoder {
    pub fn new(config: &EncoderConfig, seed: u64) -> Self {
        BiEncoder {
            table: EmbeddingTable::random(config, seed),
        }
    }

    pub fn buckets(&self) -> usize {
        self.table.buckets
    }

    pub fn dim(&self) -> usize {
        self.table.dim
    }

    pub fn encode(&self, text: &str) -> Vec<f64> {
        self.table.encode(text)
    }

    pub fn input_bag(&self, input: &TrainingInput) -> TokenBag {
        TokenBag::from_text(&input_text(input), self.buckets())
    }

    pub fn demo_bag(&self, demo: &Demonstration) -> TokenBag {
        TokenBag::from_text(&demo_text(demo), self.buckets())
    }

    pub fn encode_input(&self, input: &TrainingInput) -> Vec<f64> {
        self.table.encode_bag(&self.input_bag(input))
    }

    pub fn encode_demo(&self, demo: &Demonstration) -> Vec<f64> {
        self.table.encode_bag(&self.demo_bag(demo))
    }

    /// Dot product of the input encoding and the demonstration encoding.
    pub fn similarity(&self, input: &TrainingInput, demo: &Demonstration) -> f64 {
        dot(&self.encode_input(input), &self.encode_demo(demo))
    }

    pub fn to_container(&self) -> Container {
        Container {
            kind: "bi_encoder".into(),
            meta: serde_json::json!({
                "vocab_buckets": self.buckets(),
                "dim": self.dim(),
                "hash": "fnv1a64-mod-buckets",
                "pooling": "mean",
            }),
            tensors: vec![Tensor::from_f64(
                "embedding",
                vec![self.buckets(), self.dim()],
                &self.table.weights,
            )],
        }
    }

    pub fn from_container(c: &Container) -> Result<Self, CheckpointError> {
        c.expect_kind("bi_encoder")?;
        let t = c.tensor("embedding")?;
        let [buckets, dim] = t.shape[..] else {
            return Err(CheckpointError::Shape(format!("embedding shape {:?}", t.shape)));
        };
        if c.meta["vocab_buckets"] != buckets || c.meta["dim"] != dim {
            return Err(CheckpointError::Shape("metadata dims disagree with the embedding tensor".into()));
        }
        Ok(BiEncoder {
            table: EmbeddingTable {
                buckets,
                dim,
                weights: t.to_f64(),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    /// Pool ordinal.
    pub demo: usize,
    pub llm_score: f64,
    pub rank: usize,
}

/// One training input with its N scored candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    pub input: TrainingInput,
    pub candidates: Vec<ScoredCandidate>,
}

impl ScoredSet {
    /// Assigns ranks by score descending, ties by candidate position.
    pub fn new(input: TrainingInput, scored: Vec<(usize, f64)>) -> Self {
        let scores: Vec<f64> = scored.iter().map(|c| c.1).collect();
        let ranks = ranks_by_score(&scores);
        let candidates = scored
            .into_iter()
            .zip(ranks)
            .map(|((demo, llm_score), rank)| ScoredCandidate { demo, llm_score, rank })
            .collect();
        ScoredSet { input, candidates }
    }

    /// Position of the rank-1 candidate.
    pub fn positive(&self) -> usize {
        self.candidates.iter().position(|c| c.rank == 1).expect("ranks are a permutation")
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.candidates.iter().map(|c| c.rank).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrieverTrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub lambda: f64,
    pub seed: u64,
    /// Reserved for the in-batch-negatives variant; only `false` is supported.
    pub in_batch_negatives: bool,
}

impl Default for RetrieverTrainConfig {
    fn default() -> Self {
        RetrieverTrainConfig {
            lr: 0.05,
            epochs: 2,
            lambda: 0.2,
            seed: 0,
            in_batch_negatives: false,
        }
    }
}

/// A scored set with its token bags resolved against the pool.
pub struct Prepared {
    pub input: TokenBag,
    pub candidates: Vec<TokenBag>,
    pub positive: usize,
    pub ranks: Vec<usize>,
}

impl Prepared {
    pub fn new(model: &BiEncoder, set: &ScoredSet, pool: &DemonstrationPool) -> Self {
        Prepared {
            input: model.input_bag(&set.input),
            candidates: set
                .candidates
                .iter()
                .map(|c| model.demo_bag(&pool.demos[c.demo]))
                .collect(),
            positive: set.positive(),
            ranks: set.ranks(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub contrastive: f64,
    pub ranking: f64,
    pub total: f64,
}

/// Which part of the objective to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Contrastive,
    Ranking,
    Combined,
}

/// Loss of one prepared set; accumulates the table gradient of the chosen
/// objective into `grad` when given.
pub fn set_loss(
    table: &EmbeddingTable,
    set: &Prepared,
    lambda: f64,
    objective: Objective,
    grad: Option<&mut RowGrad>,
) -> LossParts {
    let e_in = table.encode_bag(&set.input);
    let e_c: Vec<Vec<f64>> = set.candidates.iter().map(|b| table.encode_bag(b)).collect();
    let scores: Vec<f64> = e_c.iter().map(|e| dot(&e_in, e)).collect();
    let (lc, gc) = contrastive_with_grad(&scores, set.positive);
    let (lr, gr) = ranknet_with_grad(&scores, &set.ranks);
    let parts = LossParts {
        contrastive: lc,
        ranking: lr,
        total: combined_loss(lc, lr, lambda),
    };
    if let Some(grad) = grad {
        let g: Vec<f64> = match objective {
            Objective::Contrastive => gc,
            Objective::Ranking => gr,
            Objective::Combined => gc.iter().zip(&gr).map(|(c, r)| lambda * c + r).collect(),
        };
        let mut d_in = vec![0.0; table.dim];
        for (gi, e) in g.iter().zip(&e_c) {
            for (d, x) in d_in.iter_mut().zip(e) {
                *d += gi * x;
            }
        }
        grad.add_bag(&set.input, 1.0, &d_in);
        for (gi, bag) in g.iter().zip(&set.candidates) {
            grad.add_bag(bag, *gi, &e_in);
        }
    }
    parts
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean combined loss per epoch, measured during the pass.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Per-input gradient descent over the scored sets. Deterministic for a
/// given seed.
pub fn train_retriever(
    model: &mut BiEncoder,
    sets: &[ScoredSet],
    pool: &DemonstrationPool,
    config: &RetrieverTrainConfig,
) -> Result<TrainReport> {
    if config.in_batch_negatives {
        return Err(Error::Config("in-batch negatives are not supported by this trainer".into()));
    }
    let prepared: Vec<Prepared> = sets.iter().map(|s| Prepared::new(model, s, pool)).collect();
    let mut grad = RowGrad::new(model.buckets(), model.dim());
    let mut report = TrainReport::default();
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        order.shuffle(&mut stream_rng(config.seed, epoch as u64));
        let mut total = 0.0;
        for &i in &order {
            let parts = set_loss(&model.table, &prepared[i], config.lambda, Objective::Combined, Some(&mut grad));
            if !parts.total.is_finite() || !grad.max_abs().is_finite() {
                return Err(Error::NonFiniteLoss {
                    stage: "retriever",
                    detail: format!(
                        "epoch {epoch}, input {}: contrastive={} ranking={}",
                        sets[i].input.id, parts.contrastive, parts.ranking
                    ),
                });
            }
            total += parts.total;
            grad.apply(&mut model.table, config.lr);
            report.steps += 1;
        }
        let mean = total / prepared.len().max(1) as f64;
        log::info!("retriever epoch {} mean loss {mean:.6}", epoch + 1);
        report.epoch_losses.push(mean);
    }
    Ok(report)
}

/// Mean (over sets) rank, under the model's similarity, of each set's
/// highest-LLM-score candidate among its candidates. Lower is better.
pub fn mean_positive_rank(model: &BiEncoder, sets: &[ScoredSet], pool: &DemonstrationPool) -> f64 {
    if sets.is_empty() {
        return 0.0;
    }
    let total: usize = sets
        .iter()
        .map(|s| {
            let e_in = model.encode_input(&s.input);
            let scores: Vec<f64> = s
                .candidates
                .iter()
                .map(|c| dot(&e_in, &model.encode_demo(&pool.demos[c.demo])))
                .collect();
            ranks_by_score(&scores)[s.positive()]
        })
        .sum();
    total as f64 / sets.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Label, Passage, Query};

    fn demo(q: &str, p: &str, label: Label) -> Demonstration {
        Demonstration {
            query: Query {
                id: q.into(),
                text: q.into(),
            },
            passage: Passage {
                id: p.into(),
                text: p.into(),
            },
            label,
        }
    }

    #[test]
    fn similarity_hand_example() {
        // d = 2, one token each side: E_I = (1, 2), E_z = (3, -1) -> 1
        let mut table = EmbeddingTable::zeros(8, 2);
        let bi = bucket("in", 8);
        let bz = bucket("zz", 8);
        assert_ne!(bi, bz);
        table.weights[bi * 2..bi * 2 + 2].copy_from_slice(&[1.0, 2.0]);
        table.weights[bz * 2..bz * 2 + 2].copy_from_slice(&[3.0, -1.0]);
        assert_eq!(dot(&table.encode("in"), &table.encode("zz")), 1.0);
    }

    #[test]
    fn zero_demo_encoding_gives_zero_similarity() {
        let mut model = BiEncoder {
            table: EmbeddingTable::zeros(16, 3),
        };
        let input = TrainingInput::new(
            Query {
                id: "q".into(),
                text: "alpha".into(),
            },
            Passage {
                id: "p".into(),
                text: "beta".into(),
            },
            Label::Yes,
        );
        for (b, _) in model.input_bag(&input).0 {
            model.table.weights[b * 3..b * 3 + 3].copy_from_slice(&[1.0, -2.0, 0.5]);
        }
        // an empty demonstration text still carries its label token
        let d = demo("", "", Label::No);
        let label_row = bucket("no", 16);
        model.table.weights[label_row * 3..label_row * 3 + 3].fill(0.0);
        assert_eq!(model.encode_demo(&d), vec![0.0; 3]);
        assert_eq!(model.similarity(&input, &d), 0.0);
    }

    #[test]
    fn similarity_scales_quadratically() {
        let mut model = BiEncoder::new(&EncoderConfig::default(), 5);
        let input = TrainingInput::new(
            Query {
                id: "q".into(),
                text: "alpha gamma".into(),
            },
            Passage {
                id: "p".into(),
                text: "beta".into(),
            },
            Label::Yes,
        );
        let d = demo("gamma", "delta", Label::Yes);
        let s = model.similarity(&input, &d);
        for w in &mut model.table.weights {
            *w *= 3.0;
        }
        assert!((model.similarity(&input, &d) - 9.0 * s).abs() < 1e-15);
    }

    #[test]
    fn scored_set_ranks() {
        let input = TrainingInput::new(
            Query {
                id: "q".into(),
                text: "q".into(),
            },
            Passage {
                id: "p".into(),
                text: "p".into(),
            },
            Label::Yes,
        );
        let s = ScoredSet::new(input, vec![(4, 0.2), (9, 0.8), (1, 0.8)]);
        assert_eq!(s.ranks(), vec![3, 1, 2]);
        assert_eq!(s.positive(), 1);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let model = BiEncoder::new(
            &EncoderConfig {
                vocab_buckets: 32,
                dim: 4,
                init_scale: 0.05,
            },
            2,
        );
        let bytes = model.to_container().to_bytes().unwrap();
        let back = BiEncoder::from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn in_batch_negatives_rejected() {
        let mut model = BiEncoder::new(&EncoderConfig::default(), 1);
        let pool = DemonstrationPool::from_demos(vec![demo("a", "b", Label::Yes)]).unwrap();
        let cfg = RetrieverTrainConfig {
            in_batch_negatives: true,
            ..Default::default()
        };
        assert!(matches!(train_retriever(&mut model, &[], &pool, &cfg), Err(Error::Config(_))));
    }
}
