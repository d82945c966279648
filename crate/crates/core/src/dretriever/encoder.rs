//! Hashed bag-of-tokens encoder with mean pooling, shared by the retriever
//! and the reranker.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::to_f32_grid;
use crate::corpus::{Demonstration, TrainingInput};
use crate::seed::rng;
use crate::text::{fnv1a64, tokenize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub vocab_buckets: usize,
    pub dim: usize,
    pub init_scale: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_buckets: 4096,
            dim: 64,
            init_scale: 0.05,
        }
    }
}

pub fn bucket(token: &str, buckets: usize) -> usize {
    (fnv1a64(token.as_bytes()) % buckets as u64) as usize
}

/// Mean-pooling weights: `(bucket, count / total_tokens)`, buckets ascending.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TokenBag(pub Vec<(usize, f64)>);

impl TokenBag {
    pub fn from_text(text: &str, buckets: usize) -> Self {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return TokenBag::default();
        }
        let mut ids: Vec<usize> = tokens.iter().map(|t| bucket(t, buckets)).collect();
        ids.sort_unstable();
        let n = ids.len() as f64;
        let mut out: Vec<(usize, f64)> = Vec::new();
        for id in ids {
            match out.last_mut() {
                Some((b, c)) if *b == id => *c += 1.0,
                _ => out.push((id, 1.0)),
            }
        }
        for e in &mut out {
            e.1 /= n;
        }
        TokenBag(out)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn input_text(input: &TrainingInput) -> String {
    pair_text(&input.query.text, &input.passage.text)
}

pub fn pair_text(query: &str, passage: &str) -> String {
    format!("{query} {passage}")
}

pub fn demo_text(demo: &Demonstration) -> String {
    format!("{} {} {}", demo.query.text, demo.passage.text, demo.label.as_str())
}

/// `V × d` row-major embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub buckets: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
}

impl EmbeddingTable {
    pub fn zeros(buckets: usize, dim: usize) -> Self {
        EmbeddingTable {
            buckets,
            dim,
            weights: vec![0.0; buckets * dim],
        }
    }

    /// Uniform(-scale, scale), rounded onto the f32 grid.
    pub fn random(config: &EncoderConfig, seed: u64) -> Self {
        let mut r = rng(seed);
        let s = config.init_scale;
        let weights = (0..config.vocab_buckets * config.dim)
            .map(|_| to_f32_grid(r.random_range(-s..s)))
            .collect();
        EmbeddingTable {
            buckets: config.vocab_buckets,
            dim: config.dim,
            weights,
        }
    }

    pub fn row(&self, b: usize) -> &[f64] {
        &self.weights[b * self.dim..(b + 1) * self.dim]
    }

    pub fn encode_bag(&self, bag: &TokenBag) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(b, w) in &bag.0 {
            for (o, x) in out.iter_mut().zip(self.row(b)) {
                *o += w * x;
            }
        }
        out
    }

    pub fn encode(&self, text: &str) -> Vec<f64> {
        self.encode_bag(&TokenBag::from_text(text, self.buckets))
    }
}

/// Gradient buffer for an embedding table that remembers which rows were
/// written so that they can be applied and cleared cheaply.
#[derive(Debug, Clone)]
pub struct RowGrad {
    dim: usize,
    pub values: Vec<f64>,
    touched: Vec<usize>,
    mark: Vec<bool>,
}

impl RowGrad {
    pub fn new(buckets: usize, dim: usize) -> Self {
        RowGrad {
            dim,
            values: vec![0.0; buckets * dim],
            touched: Vec::new(),
            mark: vec![false; buckets],
        }
    }

    /// Adds `scale * dir` into every row of `bag`, weighted by the bag.
    pub fn add_bag(&mut self, bag: &TokenBag, scale: f64, dir: &[f64]) {
        if scale == 0.0 {
            return;
        }
        for &(b, w) in &bag.0 {
            if !self.mark[b] {
                self.mark[b] = true;
                self.touched.push(b);
            }
            let row = &mut self.values[b * self.dim..(b + 1) * self.dim];
            for (g, d) in row.iter_mut().zip(dir) {
                *g += scale * w * d;
            }
        }
    }

    pub fn touched(&self) -> &[usize] {
        &self.touched
    }

    pub fn max_abs(&self) -> f64 {
        self.touched
            .iter()
            .flat_map(|&b| &self.values[b * self.dim..(b + 1) * self.dim])
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `table -= lr * grad` on touched rows (kept on the f32 grid), then clears.
    pub fn apply(&mut self, table: &mut EmbeddingTable, lr: f64) {
        for &b in &self.touched {
            let g = &mut self.values[b * self.dim..(b + 1) * self.dim];
            let w = &mut table.weights[b * self.dim..(b + 1) * self.dim];
            for (wi, gi) in w.iter_mut().zip(g.iter_mut()) {
                *wi = to_f32_grid(*wi - lr * *gi);
                *gi = 0.0;
            }
            self.mark[b] = false;
        }
        self.touched.clear();
    }

    pub fn clear(&mut self) {
        for &b in &self.touched {
            self.values[b * self.dim..(b + 1) * self.dim].fill(0.0);
            self.mark[b] = false;
        }
        self.touched.clear();
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
