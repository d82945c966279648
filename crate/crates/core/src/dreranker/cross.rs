//! Cross-encoder list scorer.
//!
//! Features for `(input, [z_1..z_m])`: the input encoding, the mean encoding
//! of the prefix `z_1..z_{m-1}` (zero for a single demo), the encoding of the
//! last demo and the elementwise product of input and last; then a one
//! hidden layer tanh MLP.

use rand::Rng;

use crate::checkpoint::{to_f32_grid, CheckpointError, Container, Tensor};
use crate::corpus::{Demonstration, TrainingInput};
use crate::dretriever::{demo_text, input_text, EmbeddingTable, EncoderConfig, RowGrad, TokenBag};
use crate::error::{Error, Result};
use crate::seed::stream_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct CrossEncoder {
    pub table: EmbeddingTable,
    pub hidden: usize,
    /// `hidden × 4d`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

/// Gradient buffers matching [`CrossEncoder`].
#[derive(Debug, Clone)]
pub struct CrossGrad {
    pub table: RowGrad,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl CrossGrad {
    pub fn new(model: &CrossEncoder) -> Self {
        CrossGrad {
            table: RowGrad::new(model.table.buckets, model.table.dim),
            w1: vec![0.0; model.w1.len()],
            b1: vec![0.0; model.hidden],
            w2: vec![0.0; model.hidden],
            b2: 0.0,
        }
    }

    pub fn max_abs(&self) -> f64 {
        let dense = self
            .w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .fold(self.b2.abs(), |m, v| m.max(v.abs()));
        dense.max(self.table.max_abs())
    }

    /// Gradient step on every parameter (kept on the f32 grid), then clears.
    pub fn apply(&mut self, model: &mut CrossEncoder, lr: f64) {
        self.table.apply(&mut model.table, lr);
        for (w, g) in model
            .w1
            .iter_mut()
            .zip(self.w1.iter_mut())
            .chain(model.b1.iter_mut().zip(self.b1.iter_mut()))
            .chain(model.w2.iter_mut().zip(self.w2.iter_mut()))
        {
            *w = to_f32_grid(*w - lr * *g);
            *g = 0.0;
        }
        model.b2 = to_f32_grid(model.b2 - lr * self.b2);
        self.b2 = 0.0;
    }
}

/// Encoded pieces of one `(input, prefix)` context.
pub struct Context {
    pub e_in: Vec<f64>,
    pub e_pre: Vec<f64>,
}

pub struct ListForward {
    pub e_last: Vec<f64>,
    pub x: Vec<f64>,
    pub h: Vec<f64>,
    pub score: f64,
}

impl CrossEncoder {
    pub fn new(config: &EncoderConfig, hidden: usize, seed: u64) -> Self {
        let table = EmbeddingTable::random(config, seed);
        let d = config.dim;
        let mut r = stream_rng(seed, 1);
        let a1 = (6.0 / (4 * d + hidden) as f64).sqrt();
        let a2 = (6.0 / (hidden + 1) as f64).sqrt();
        let w1 = (0..hidden * 4 * d).map(|_| to_f32_grid(r.random_range(-a1..a1))).collect();
        let w2 = (0..hidden).map(|_| to_f32_grid(r.random_range(-a2..a2))).collect();
        CrossEncoder {
            table,
            hidden,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: 0.0,
        }
    }

    pub fn zeros(buckets: usize, dim: usize, hidden: usize) -> Self {
        CrossEncoder {
            table: EmbeddingTable::zeros(buckets, dim),
            hidden,
            w1: vec![0.0; hidden * 4 * dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.table.dim
    }

    pub fn buckets(&self) -> usize {
        self.table.buckets
    }

    pub fn input_bag(&self, input: &TrainingInput) -> TokenBag {
        TokenBag::from_text(&input_text(input), self.buckets())
    }

    pub fn demo_bag(&self, demo: &Demonstration) -> TokenBag {
        TokenBag::from_text(&demo_text(demo), self.buckets())
    }

    pub fn context(&self, input: &TokenBag, prefix: &[&TokenBag]) -> Context {
        let e_in = self.table.encode_bag(input);
        let mut e_pre = vec![0.0; self.dim()];
        if !prefix.is_empty() {
            for bag in prefix {
                for (p, v) in e_pre.iter_mut().zip(self.table.encode_bag(bag)) {
                    *p += v;
                }
            }
            let m = prefix.len() as f64;
            for p in &mut e_pre {
                *p /= m;
            }
        }
        Context { e_in, e_pre }
    }

    fn head(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let width = x.len();
        let h: Vec<f64> = (0..self.hidden)
            .map(|k| {
                let row = &self.w1[k * width..(k + 1) * width];
                (row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b1[k]).tanh()
            })
            .collect();
        let score = h.iter().zip(&self.w2).map(|(a, b)| a * b).sum::<f64>() + self.b2;
        (h, score)
    }

    pub fn features(e_in: &[f64], e_pre: &[f64], e_last: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(4 * e_in.len());
        x.extend_from_slice(e_in);
        x.extend_from_slice(e_pre);
        x.extend_from_slice(e_last);
        x.extend(e_in.iter().zip(e_last).map(|(a, b)| a * b));
        x
    }

    pub fn score_features(&self, e_in: &[f64], e_pre: &[f64], e_last: &[f64]) -> f64 {
        self.head(&Self::features(e_in, e_pre, e_last)).1
    }

    pub fn forward_last(&self, ctx: &Context, last: &TokenBag) -> ListForward {
        let e_last = self.table.encode_bag(last);
        let x = Self::features(&ctx.e_in, &ctx.e_pre, &e_last);
        let (h, score) = self.head(&x);
        ListForward { e_last, x, h, score }
    }

    pub fn score_bags(&self, input: &TokenBag, list: &[&TokenBag]) -> Result<f64> {
        let (last, prefix) = list.split_last().ok_or(Error::EmptyList)?;
        Ok(self.forward_last(&self.context(input, prefix), last).score)
    }

    /// Score of a demonstration list for an input.
    pub fn cross_score(&self, input: &TrainingInput, list: &[&Demonstration]) -> Result<f64> {
        let bags: Vec<TokenBag> = list.iter().map(|d| self.demo_bag(d)).collect();
        let refs: Vec<&TokenBag> = bags.iter().collect();
        self.score_bags(&self.input_bag(input), &refs)
    }

    /// Backpropagates `d_score` through one continuation. Returns the
    /// gradients with respect to `e_in` and `e_pre` so callers sharing a
    /// context can push them into the table once.
    #[allow(clippy::too_many_arguments)]
    pub fn backward_last(
        &self,
        ctx: &Context,
        fwd: &ListForward,
        last: &TokenBag,
        d_score: f64,
        grad: &mut CrossGrad,
        d_in: &mut [f64],
        d_pre: &mut [f64],
    ) {
        if d_score == 0.0 {
            return;
        }
        let d = self.dim();
        let width = 4 * d;
        grad.b2 += d_score;
        let mut dx = vec![0.0; width];
        for k in 0..self.hidden {
            grad.w2[k] += d_score * fwd.h[k];
            let da = d_score * self.w2[k] * (1.0 - fwd.h[k] * fwd.h[k]);
            if da == 0.0 {
                continue;
            }
            grad.b1[k] += da;
            let row = &self.w1[k * width..(k + 1) * width];
            let grow = &mut grad.w1[k * width..(k + 1) * width];
            for i in 0..width {
                grow[i] += da * fwd.x[i];
                dx[i] += da * row[i];
            }
        }
        let mut d_last = vec![0.0; d];
        for i in 0..d {
            d_in[i] += dx[i] + dx[3 * d + i] * fwd.e_last[i];
            d_pre[i] += dx[d + i];
            d_last[i] = dx[2 * d + i] + dx[3 * d + i] * ctx.e_in[i];
        }
        grad.table.add_bag(last, 1.0, &d_last);
    }

    /// Pushes accumulated context gradients into the input and prefix rows.
    pub fn backward_context(
        &self,
        input: &TokenBag,
        prefix: &[&TokenBag],
        d_in: &[f64],
        d_pre: &[f64],
        grad: &mut CrossGrad,
    ) {
        grad.table.add_bag(input, 1.0, d_in);
        if !prefix.is_empty() {
            let share = 1.0 / prefix.len() as f64;
            for bag in prefix {
                grad.table.add_bag(bag, share, d_pre);
            }
        }
    }

    pub fn to_container(&self) -> Container {
        let d = self.dim();
        Container {
            kind: "cross_encoder".into(),
            meta: serde_json::json!({
                "vocab_buckets": self.buckets(),
                "dim": d,
                "hidden": self.hidden,
                "hash": "fnv1a64-mod-buckets",
                "features": ["input", "prefix_mean", "last", "input_x_last"],
                "activation": "tanh",
            }),
            tensors: vec![
                Tensor::from_f64("embedding", vec![self.buckets(), d], &self.table.weights),
                Tensor::from_f64("w1", vec![self.hidden, 4 * d], &self.w1),
                Tensor::from_f64("b1", vec![self.hidden], &self.b1),
                Tensor::from_f64("w2", vec![self.hidden], &self.w2),
                Tensor::from_f64("b2", vec![1], &[self.b2]),
            ],
        }
    }

    pub fn from_container(c: &Container) -> Result<Self, CheckpointError> {
        c.expect_kind("cross_encoder")?;
        let emb = c.tensor("embedding")?;
        let [buckets, dim] = emb.shape[..] else {
            return Err(CheckpointError::Shape(format!("embedding shape {:?}", emb.shape)));
        };
        let hidden = c.meta["hidden"]
            .as_u64()
            .ok_or_else(|| CheckpointError::Metadata("missing hidden size".into()))? as usize;
        let expect = |name: &str, shape: Vec<usize>| -> Result<Vec<f64>, CheckpointError> {
            let t = c.tensor(name)?;
            if t.shape != shape {
                return Err(CheckpointError::Shape(format!("{name} has shape {:?}, expected {shape:?}", t.shape)));
            }
            Ok(t.to_f64())
        };
        Ok(CrossEncoder {
            table: EmbeddingTable {
                buckets,
                dim,
                weights: emb.to_f64(),
            },
            hidden,
            w1: expect("w1", vec![hidden, 4 * dim])?,
            b1: expect("b1", vec![hidden])?,
            w2: expect("w2", vec![hidden])?,
            b2: expect("b2", vec![1])?[0],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Label, Passage, Query};

    fn demo(q: &str, p: &str) -> Demonstration {
        Demonstration {
            query: Query {
                id: q.into(),
                text: q.into(),
            },
            passage: Passage {
                id: p.into(),
                text: p.into(),
            },
            label: Label::Yes,
        }
    }

    fn input() -> TrainingInput {
        TrainingInput::new(
            Query {
                id: "q".into(),
                text: "red fish".into(),
            },
            Passage {
                id: "p".into(),
                text: "blue fish".into(),
            },
            Label::No,
        )
    }

    #[test]
    fn zero_parameters_score_zero() {
        let m = CrossEncoder::zeros(32, 4, 3);
        let a = demo("a", "b");
        assert_eq!(m.cross_score(&input(), &[&a]).unwrap(), 0.0);
        assert_eq!(m.cross_score(&input(), &[&a, &a]).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_head() {
        let mut m = CrossEncoder::zeros(4, 1, 1);
        m.w1 = vec![1.0; 4];
        m.w2 = vec![1.0];
        let s = m.score_features(&[1.0], &[0.0], &[2.0]);
        assert_eq!(s, 5f64.tanh());
        assert!((s - 0.99991).abs() < 1e-5);
    }

    #[test]
    fn single_demo_has_zero_prefix() {
        let m = CrossEncoder::new(&EncoderConfig::default(), 8, 3);
        let bag = m.input_bag(&input());
        let ctx = m.context(&bag, &[]);
        assert!(ctx.e_pre.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_list_is_an_error() {
        let m = CrossEncoder::zeros(8, 2, 2);
        assert!(matches!(m.cross_score(&input(), &[]), Err(Error::EmptyList)));
    }

    #[test]
    fn checkpoint_round_trip_scores_identically() {
        let m = CrossEncoder::new(
            &EncoderConfig {
                vocab_buckets: 64,
                dim: 4,
                init_scale: 0.3,
            },
            5,
            9,
        );
        let back = CrossEncoder::from_container(&Container::from_bytes(&m.to_container().to_bytes().unwrap()).unwrap())
            .unwrap();
        assert_eq!(m, back);
        let (a, b) = (demo("red", "fish"), demo("blue", "sea"));
        let s1 = m.cross_score(&input(), &[&a, &b]).unwrap();
        let s2 = back.cross_score(&input(), &[&a, &b]).unwrap();
        assert_eq!(s1.to_bits(), s2.to_bits());
    }
}
