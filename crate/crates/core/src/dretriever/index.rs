use crate::corpus::{DemonstrationPool, TrainingInput};
use crate::parallel::{self, Exec};

use super::{dot, BiEncoder};

/// Encodings of every pool demonstration under a frozen retriever.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    dim: usize,
    rows: Vec<f64>,
    owners: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieved {
    /// `(pool ordinal, similarity)`, best first.
    pub hits: Vec<(usize, f64)>,
    /// Set when fewer than the requested number of demonstrations exist.
    pub truncated: bool,
}

impl Retrieved {
    pub fn ordinals(&self) -> Vec<usize> {
        self.hits.iter().map(|h| h.0).collect()
    }
}

impl DenseIndex {
    pub fn build(model: &BiEncoder, pool: &DemonstrationPool, exec: Exec) -> Self {
        let encoded = parallel::map(exec, &pool.demos, |_, d| model.encode_demo(d));
        DenseIndex {
            dim: model.dim(),
            rows: encoded.into_iter().flatten().collect(),
            owners: pool.demos.iter().map(|d| d.query.id.clone()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.owners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.owners.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    /// Exact top-`depth` by dot product against an already encoded query,
    /// ties by pool ordinal. Rows owned by `exclude_query` are skipped.
    pub fn search(&self, query: &[f64], depth: usize, exclude_query: Option<&str>) -> Retrieved {
        let mut hits: Vec<(usize, f64)> = (0..self.len())
            .filter(|&i| exclude_query != Some(self.owners[i].as_str()))
            .map(|i| (i, dot(query, self.row(i))))
            .collect();
        let truncated = hits.len() < depth;
        if truncated {
            log::warn!("requested top-{depth} but only {} demonstrations are eligible", hits.len());
        }
        let cmp = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        if depth < hits.len() {
            hits.select_nth_unstable_by(depth, cmp);
            hits.truncate(depth);
        }
        hits.sort_by(cmp);
        Retrieved { hits, truncated }
    }

    /// Top-`depth` demonstrations for a training or test input.
    pub fn retrieve(
        &self,
        model: &BiEncoder,
        input: &TrainingInput,
        depth: usize,
        exclude_query: Option<&str>,
    ) -> Retrieved {
        self.search(&model.encode_input(input), depth, exclude_query)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Demonstration, Label, Passage, Query};
    use crate::dretriever::EncoderConfig;

    fn pool(n: usize) -> DemonstrationPool {
        let demos = (0..n)
            .map(|i| Demonstration {
                query: Query {
                    id: format!("q{}", i % 3),
                    text: format!("query word{}", i % 7),
                },
                passage: Passage {
                    id: format!("p{i}"),
                    text: format!("passage text{i} word{}", i % 5),
                },
                label: if i % 2 == 0 { Label::Yes } else { Label::No },
            })
            .collect();
        DemonstrationPool::from_demos(demos).unwrap()
    }

    fn input() -> TrainingInput {
        TrainingInput::new(
            Query {
                id: "x".into(),
                text: "query word3".into(),
            },
            Passage {
                id: "y".into(),
                text: "word2 text4".into(),
            },
            Label::Yes,
        )
    }

    #[test]
    fn matches_brute_force() {
        let model = BiEncoder::new(&EncoderConfig::default(), 4);
        let pool = pool(20);
        let idx = DenseIndex::build(&model, &pool, Exec::Sequential);
        let got = idx.retrieve(&model, &input(), 7, None);
        let mut brute: Vec<(usize, f64)> = pool
            .demos
            .iter()
            .enumerate()
            .map(|(i, d)| (i, model.similarity(&input(), d)))
            .collect();
        brute.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        brute.truncate(7);
        assert_eq!(got.hits, brute);
        assert!(!got.truncated);
        assert_eq!(idx.retrieve(&model, &input(), 1, None).hits[0], brute[0]);
    }

    #[test]
    fn oversized_depth_is_flagged() {
        let model = BiEncoder::new(&EncoderConfig::default(), 4);
        let pool = pool(5);
        let idx = DenseIndex::build(&model, &pool, Exec::Parallel);
        let got = idx.retrieve(&model, &input(), 10, None);
        assert_eq!(got.hits.len(), 5);
        assert!(got.truncated);
    }

    #[test]
    fn exclusion_skips_owner_rows() {
        let model = BiEncoder::new(&EncoderConfig::default(), 4);
        let pool = pool(12);
        let idx = DenseIndex::build(&model, &pool, Exec::Sequential);
        let got = idx.retrieve(&model, &input(), 12, Some("q0"));
        assert_eq!(got.hits.len(), 8);
        assert!(got.hits.iter().all(|(i, _)| pool.demos[*i].query.id != "q0"));
    }

    #[test]
    fn positive_scaling_keeps_order() {
        let mut model = BiEncoder::new(&EncoderConfig::default(), 8);
        let pool = pool(20);
        let a = DenseIndex::build(&model, &pool, Exec::Sequential).retrieve(&model, &input(), 10, None);
        for w in &mut model.table.weights {
            *w *= 2.5;
        }
        let b = DenseIndex::build(&model, &pool, Exec::Sequential).retrieve(&model, &input(), 10, None);
        assert_eq!(a.ordinals(), b.ordinals());
    }
}
