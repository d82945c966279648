//! BM25 over the demonstration pool: training-candidate mining and the BM25
//! demonstration baseline.

use std::collections::{HashMap, HashSet};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{CheckpointError, Container, Tensor};
use crate::corpus::{DemonstrationPool, TrainingInput};
use crate::error::{Error, Result};
use crate::seed::stream_rng;
use crate::text::fnv1a64;
pub use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 0.9, b: 0.4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    postings: HashMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
}

/// Robertson–Spärck Jones idf with the +1 inside the log, never negative.
pub fn idf(doc_count: usize, df: usize) -> f64 {
    let n = doc_count as f64;
    let df = df as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

impl InvertedIndex {
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a str>) -> Self {
        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        let mut doc_lengths = Vec::new();
        for (ordinal, text) in docs.into_iter().enumerate() {
            let tokens = tokenize(text);
            doc_lengths.push(tokens.len() as u32);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting {
                    doc: ordinal as u32,
                    tf: count,
                });
            }
        }
        let avg_doc_length = if doc_lengths.is_empty() {
            0.0
        } else {
            doc_lengths.iter().map(|&l| l as f64).sum::<f64>() / doc_lengths.len() as f64
        };
        InvertedIndex {
            postings,
            doc_lengths,
            avg_doc_length,
        }
    }

    /// Indexes each demonstration's query and passage text.
    pub fn over_pool(pool: &DemonstrationPool) -> Self {
        let texts: Vec<String> = pool
            .demos
            .iter()
            .map(|d| format!("{} {}", d.query.text, d.passage.text))
            .collect();
        Self::build(texts.iter().map(String::as_str))
    }

    pub fn doc_count(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn term_count(&self) -> usize {
        self.postings.len()
    }

    /// Scores every document containing at least one distinct query term.
    /// Results are sorted by score descending, then ordinal ascending, and
    /// truncated to `top`.
    pub fn search(&self, params: &Bm25Params, query_text: &str, top: usize) -> Result<Vec<(usize, f64)>> {
        if self.doc_count() == 0 {
            return Err(Error::EmptyIndex);
        }
        let n = self.doc_count();
        let mut scores = vec![0.0f64; n];
        let mut touched = vec![false; n];
        let mut seen = HashSet::new();
        for term in tokenize(query_text) {
            if !seen.insert(term.clone()) {
                continue;
            }
            let plist = self.postings(&term);
            if plist.is_empty() {
                continue;
            }
            let w = idf(n, plist.len());
            for p in plist {
                let d = p.doc as usize;
                let tf = p.tf as f64;
                let norm = 1.0 - params.b + params.b * self.doc_lengths[d] as f64 / self.avg_doc_length;
                scores[d] += w * tf * (params.k1 + 1.0) / (tf + params.k1 * norm);
                touched[d] = true;
            }
        }
        let mut hits: Vec<(usize, f64)> = (0..n).filter(|&d| touched[d]).map(|d| (d, scores[d])).collect();
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        hits.truncate(top);
        Ok(hits)
    }

    pub fn to_container(&self) -> Result<Container, CheckpointError> {
        let mut terms: Vec<&String> = self.postings.keys().collect();
        terms.sort();
        let mut offsets = Vec::with_capacity(terms.len() + 1);
        let mut flat = Vec::new();
        offsets.push(0usize);
        for t in &terms {
            for p in &self.postings[*t] {
                flat.push(exact_f32(p.doc as usize)?);
                flat.push(exact_f32(p.tf as usize)?);
            }
            offsets.push(flat.len() / 2);
        }
        let lengths = self
            .doc_lengths
            .iter()
            .map(|&l| exact_f32(l as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let offsets_f = offsets
            .iter()
            .map(|&o| exact_f32(o))
            .collect::<Result<Vec<_>, _>>()?;
        let meta = serde_json::json!({ "terms": terms });
        Ok(Container {
            kind: "bm25_index".into(),
            meta,
            tensors: vec![
                Tensor::new("doc_lengths", vec![lengths.len()], lengths),
                Tensor::new("term_offsets", vec![offsets_f.len()], offsets_f),
                Tensor::new("postings", vec![flat.len() / 2, 2], flat),
            ],
        })
    }

    pub fn from_container(c: &Container) -> Result<Self, CheckpointError> {
        c.expect_kind("bm25_index")?;
        let terms: Vec<String> = serde_json::from_value(c.meta["terms"].clone())
            .map_err(|e| CheckpointError::Metadata(e.to_string()))?;
        let doc_lengths: Vec<u32> = c.tensor("doc_lengths")?.data.iter().map(|&x| x as u32).collect();
        let offsets: Vec<usize> = c.tensor("term_offsets")?.data.iter().map(|&x| x as usize).collect();
        let flat = &c.tensor("postings")?.data;
        if offsets.len() != terms.len() + 1 || offsets.last().copied().unwrap_or(0) * 2 != flat.len() {
            return Err(CheckpointError::Shape("postings do not match term offsets".into()));
        }
        let mut postings = HashMap::with_capacity(terms.len());
        for (i, t) in terms.into_iter().enumerate() {
            let list = (offsets[i]..offsets[i + 1])
                .map(|k| Posting {
                    doc: flat[2 * k] as u32,
                    tf: flat[2 * k + 1] as u32,
                })
                .collect();
            postings.insert(t, list);
        }
        let avg_doc_length = if doc_lengths.is_empty() {
            0.0
        } else {
            doc_lengths.iter().map(|&l| l as f64).sum::<f64>() / doc_lengths.len() as f64
        };
        Ok(InvertedIndex {
            postings,
            doc_lengths,
            avg_doc_length,
        })
    }
}

fn exact_f32(v: usize) -> Result<f32, CheckpointError> {
    if v > (1 << 24) {
        return Err(CheckpointError::Shape(format!("{v} is not exactly representable in f32")));
    }
    Ok(v as f32)
}

pub fn bm25_search(
    index: &InvertedIndex,
    params: &Bm25Params,
    query_text: &str,
    top: usize,
) -> Result<Vec<(usize, f64)>> {
    index.search(params, query_text, top)
}

/// Training candidates for one input: the top-`b` BM25 demonstrations for
/// the input's query+passage text followed by `b` demonstrations sampled
/// uniformly from the rest of the pool. Demonstrations built from
/// `exclude_query` are never returned. Output is a list of pool ordinals of
/// length `2b`, BM25 block first.
pub fn mine_candidates(
    pool: &DemonstrationPool,
    index: &InvertedIndex,
    params: &Bm25Params,
    input: &TrainingInput,
    b: usize,
    exclude_query: Option<&str>,
    rng_seed: u64,
) -> Result<Vec<usize>> {
    let eligible: Vec<bool> = pool
        .demos
        .iter()
        .map(|d| exclude_query != Some(d.query.id.as_str()))
        .collect();
    let available = eligible.iter().filter(|&&e| e).count();
    if available < 2 * b {
        return Err(Error::PoolTooSmall {
            pool: available,
            needed: 2 * b,
        });
    }
    let key = format!("{} {}", input.query.text, input.passage.text);
    let mut picked: Vec<usize> = index
        .search(params, &key, pool.len())?
        .into_iter()
        .map(|(d, _)| d)
        .filter(|&d| eligible[d])
        .take(b)
        .collect();
    let chosen: HashSet<usize> = picked.iter().copied().collect();
    let rest: Vec<usize> = (0..pool.len()).filter(|&d| eligible[d] && !chosen.contains(&d)).collect();
    let need = 2 * b - picked.len();
    let mut rng = stream_rng(rng_seed, fnv1a64(input.id.as_bytes()));
    let mut idx = sample(&mut rng, rest.len(), need).into_vec();
    idx.sort_unstable();
    picked.extend(idx.into_iter().map(|i| rest[i]));
    Ok(picked)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_doc_idf() {
        let idx = InvertedIndex::build(["goldfish"]);
        assert!((idf(1, 1) - (4.0f64 / 3.0).ln()).abs() < 1e-15);
        assert!((idf(1, 1) - 0.28768).abs() < 1e-5);
        let hits = idx.search(&Bm25Params::default(), "goldfish", 10).unwrap();
        // tf = 1, len = avglen: tf*(k1+1)/(tf+k1) = 1
        assert_eq!(hits.len(), 1);
        assert!((hits[0].1 - idf(1, 1)).abs() < 1e-15);
    }

    #[test]
    fn absent_terms_contribute_nothing() {
        let idx = InvertedIndex::build(["a b", "b c"]);
        let p = Bm25Params::default();
        let with = idx.search(&p, "b zzz", 10).unwrap();
        let without = idx.search(&p, "b", 10).unwrap();
        assert_eq!(with, without);
        assert!(idx.search(&p, "zzz", 10).unwrap().is_empty());
    }

    #[test]
    fn top_truncates_and_orders() {
        let docs: Vec<String> = (0..10).map(|i| format!("term {}", "pad ".repeat(i))).collect();
        let idx = InvertedIndex::build(docs.iter().map(String::as_str));
        let hits = idx.search(&Bm25Params::default(), "term", 3).unwrap();
        assert_eq!(hits.len(), 3);
        assert!(hits.windows(2).all(|w| w[0].1 >= w[1].1));
        // shortest documents win
        assert_eq!(hits[0].0, 0);
    }

    #[test]
    fn ties_break_by_ordinal() {
        let idx = InvertedIndex::build(["x y", "x y", "x y"]);
        let hits = idx.search(&Bm25Params::default(), "x", 10).unwrap();
        assert_eq!(hits.iter().map(|h| h.0).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn empty_index_errors() {
        let idx = InvertedIndex::build(std::iter::empty::<&str>());
        assert!(matches!(idx.search(&Bm25Params::default(), "a", 1), Err(Error::EmptyIndex)));
    }

    #[test]
    fn container_round_trip() {
        let idx = InvertedIndex::build(["a b b", "c a", "d"]);
        let back = InvertedIndex::from_container(&idx.to_container().unwrap()).unwrap();
        assert_eq!(idx, back);
    }
}
