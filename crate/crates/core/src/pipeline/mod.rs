//! Inference and evaluation: greedy demonstration selection, passage
//! ranking, NDCG@10, TREC runs and the baseline selection policies.

mod experiment;
mod metrics;
mod select;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Demonstration, DemonstrationPool, Label, Passage, Query, TrainingInput};
use crate::dreranker::{pool_bags, CrossEncoder};
use crate::dretriever::{BiEncoder, DenseIndex, TokenBag};
use crate::error::{Error, Result};
use crate::parallel::{self, Exec};
use crate::scorer::{relevance_score, PromptTemplate, ScorerBackend};
use crate::seed::stream_rng;
use crate::sparse::{Bm25Params, InvertedIndex};
use crate::text::fnv1a64;

pub use experiment::{
    backend_for, build_samples, load_data, mine_all, mock_for, score_candidates, Experiment, ExperimentOutput,
    LoadedData, TrainedModels,
};
pub use metrics::ndcg_at_k;
pub use select::{
    brute_force_best_list, greedy_over, greedy_rerank, greedy_select, permutation_count, BruteForce, ListScorer,
    OracleScorer, BRUTE_FORCE_LIMIT,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub query_id: String,
    pub passage_id: String,
    pub rank: usize,
    pub score: f64,
    pub tag: String,
}

/// Orders passages by score descending, ties by initial position.
pub fn order_run(query_id: &str, passages: &[&Passage], scores: &[f64], tag: &str) -> Vec<RunEntry> {
    let mut order: Vec<usize> = (0..passages.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
        .into_iter()
        .enumerate()
        .map(|(r, i)| RunEntry {
            query_id: query_id.to_string(),
            passage_id: passages[i].id.clone(),
            rank: r + 1,
            score: scores[i],
            tag: tag.to_string(),
        })
        .collect()
}

/// Relevance-generation ranking of `passages` (in initial order) with one
/// shared demonstration list.
pub fn rank_passages<B: ScorerBackend + ?Sized>(
    query: &Query,
    passages: &[&Passage],
    demos: &[&Demonstration],
    backend: &B,
    template: &PromptTemplate,
    tag: &str,
) -> Result<Vec<RunEntry>> {
    let scores = passages
        .iter()
        .map(|p| relevance_score(backend, template, demos, query, p))
        .collect::<Result<Vec<f64>>>()?;
    Ok(order_run(&query.id, passages, &scores, tag))
}

pub fn write_trec_run<W: Write>(mut w: W, run: &[RunEntry]) -> std::io::Result<()> {
    for e in run {
        writeln!(w, "{} Q0 {} {} {} {}", e.query_id, e.passage_id, e.rank, e.score, e.tag)?;
    }
    Ok(())
}

pub fn trec_run_string(run: &[RunEntry]) -> String {
    let mut buf = Vec::new();
    write_trec_run(&mut buf, run).expect("writing to memory");
    String::from_utf8(buf).expect("utf-8")
}

pub fn parse_trec_run(text: &str) -> std::result::Result<Vec<RunEntry>, String> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 6 {
                return Err(format!("line {}: expected 6 fields, got {}", i + 1, f.len()));
            }
            Ok(RunEntry {
                query_id: f[0].into(),
                passage_id: f[2].into(),
                rank: f[3].parse().map_err(|e| format!("line {}: rank: {e}", i + 1))?,
                score: f[4].parse().map_err(|e| format!("line {}: score: {e}", i + 1))?,
                tag: f[5].into(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    ZeroShot,
    Random,
    Bm25Demos,
    RetrieverTopK,
    #[serde(rename = "demorank")]
    DemoRank,
}

impl SelectionPolicy {
    pub const ALL: [SelectionPolicy; 5] = [
        SelectionPolicy::ZeroShot,
        SelectionPolicy::Random,
        SelectionPolicy::Bm25Demos,
        SelectionPolicy::RetrieverTopK,
        SelectionPolicy::DemoRank,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SelectionPolicy::ZeroShot => "zero_shot",
            SelectionPolicy::Random => "random",
            SelectionPolicy::Bm25Demos => "bm25_demos",
            SelectionPolicy::RetrieverTopK => "retriever_top_k",
            SelectionPolicy::DemoRank => "demorank",
        }
    }
}

impl fmt::Display for SelectionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        match norm.as_str() {
            "zero_shot" | "zeroshot" | "0shot" | "0_shot" => Ok(SelectionPolicy::ZeroShot),
            "random" => Ok(SelectionPolicy::Random),
            "bm25_demos" | "bm25" => Ok(SelectionPolicy::Bm25Demos),
            "retriever_top_k" | "retriever" => Ok(SelectionPolicy::RetrieverTopK),
            "demorank" | "demo_rank" => Ok(SelectionPolicy::DemoRank),
            _ => Err(Error::Config(format!("unknown policy {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// Separate selection for every (query, passage) input.
    PerInput,
    /// One selection per query using its top initial passage. Faster, not
    /// what the method prescribes.
    PerQuery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialRanking {
    /// The query's judged passages, ordered by BM25 over them.
    Judged,
    /// BM25 over the whole split's passage collection.
    Bm25,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub shots: usize,
    pub depth: usize,
    pub granularity: Granularity,
    pub initial_ranking: InitialRanking,
    pub initial_depth: usize,
    pub ndcg_k: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            shots: 3,
            depth: 30,
            granularity: Granularity::PerInput,
            initial_ranking: InitialRanking::Judged,
            initial_depth: 100,
            ndcg_k: 10,
            seed: 0,
        }
    }
}

/// Initial passage order per test query.
pub fn initial_ranking(
    dataset: &Dataset,
    params: &Bm25Params,
    mode: InitialRanking,
    depth: usize,
) -> Result<BTreeMap<String, Vec<String>>> {
    let mut out = BTreeMap::new();
    match mode {
        InitialRanking::Bm25 => {
            let index = InvertedIndex::build(dataset.passages.iter().map(|p| p.text.as_str()));
            for q in &dataset.queries {
                let hits = index.search(params, &q.text, depth)?;
                out.insert(q.id.clone(), hits.into_iter().map(|(d, _)| dataset.passages[d].id.clone()).collect());
            }
        }
        InitialRanking::Judged => {
            for q in &dataset.queries {
                let judged: Vec<&Passage> = dataset
                    .judgments_for(&q.id)
                    .filter_map(|j| dataset.passage(&j.passage_id))
                    .collect();
                if judged.is_empty() {
                    continue;
                }
                let index = InvertedIndex::build(judged.iter().map(|p| p.text.as_str()));
                let mut order: Vec<usize> = index
                    .search(params, &q.text, judged.len())?
                    .into_iter()
                    .map(|(d, _)| d)
                    .collect();
                let mut rest: Vec<usize> = (0..judged.len()).filter(|d| !order.contains(d)).collect();
                rest.sort_by(|&a, &b| judged[a].id.cmp(&judged[b].id));
                order.extend(rest);
                order.truncate(depth);
                out.insert(q.id.clone(), order.into_iter().map(|d| judged[d].id.clone()).collect());
            }
        }
    }
    Ok(out)
}

/// Read-only models available to the policies.
pub struct Models<'a> {
    pub pool: &'a DemonstrationPool,
    pub bm25: &'a InvertedIndex,
    pub bm25_params: Bm25Params,
    pub retriever: Option<(&'a BiEncoder, &'a DenseIndex)>,
    pub reranker: Option<&'a CrossEncoder>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: SelectionPolicy,
    pub config_digest: String,
    /// Queries with at least one positive judgment.
    pub per_query: BTreeMap<String, f64>,
    pub mean_ndcg: f64,
    /// Queries dropped because they have no positive judgment.
    pub excluded: Vec<String>,
    pub shots: usize,
    pub granularity: Granularity,
    pub wall_clock_secs: f64,
}

impl EvalReport {
    pub fn from_scores(
        policy: SelectionPolicy,
        config_digest: &str,
        scores: BTreeMap<String, Option<f64>>,
        cfg: &EvalConfig,
        wall_clock_secs: f64,
    ) -> Self {
        let mut per_query = BTreeMap::new();
        let mut excluded = Vec::new();
        for (q, s) in scores {
            match s {
                Some(v) => {
                    per_query.insert(q, v);
                }
                None => excluded.push(q),
            }
        }
        let mean_ndcg = if per_query.is_empty() {
            0.0
        } else {
            per_query.values().sum::<f64>() / per_query.len() as f64
        };
        EvalReport {
            policy,
            config_digest: config_digest.to_string(),
            per_query,
            mean_ndcg,
            excluded,
            shots: cfg.shots,
            granularity: cfg.granularity,
            wall_clock_secs,
        }
    }
}

struct Selector<'a> {
    policy: SelectionPolicy,
    models: &'a Models<'a>,
    cfg: &'a EvalConfig,
    bags: Vec<TokenBag>,
}

impl Selector<'_> {
    fn select(&self, input: &TrainingInput) -> Result<Vec<usize>> {
        let k = self.cfg.shots;
        let pool = self.models.pool;
        match self.policy {
            SelectionPolicy::ZeroShot => Ok(Vec::new()),
            SelectionPolicy::Random => {
                if pool.len() < k {
                    return Err(Error::PoolTooSmall { pool: pool.len(), needed: k });
                }
                let mut rng = stream_rng(self.cfg.seed, fnv1a64(input.id.as_bytes()));
                Ok(sample(&mut rng, pool.len(), k).into_vec())
            }
            SelectionPolicy::Bm25Demos => {
                let hits = self.models.bm25.search(&self.models.bm25_params, &input.query.text, k)?;
                if hits.len() < k {
                    log::warn!("bm25 found only {} demonstrations for query {}", hits.len(), input.query.id);
                }
                Ok(hits.into_iter().map(|(d, _)| d).collect())
            }
            SelectionPolicy::RetrieverTopK => {
                let (model, index) = self.models.retriever.expect("checked before selection");
                Ok(index.retrieve(model, input, k, None).ordinals())
            }
            SelectionPolicy::DemoRank => {
                let (model, index) = self.models.retriever.expect("checked before selection");
                let reranker = self.models.reranker.expect("checked before selection");
                greedy_select(input, model, index, reranker, &self.bags, self.cfg.depth, k, None)
            }
        }
    }
}

fn check_models(policy: SelectionPolicy, models: &Models<'_>) -> Result<()> {
    let need_retriever = matches!(policy, SelectionPolicy::RetrieverTopK | SelectionPolicy::DemoRank);
    if need_retriever && models.retriever.is_none() {
        return Err(Error::MissingModel {
            policy: policy.to_string(),
            model: "retriever",
        });
    }
    if policy == SelectionPolicy::DemoRank && models.reranker.is_none() {
        return Err(Error::MissingModel {
            policy: policy.to_string(),
            model: "reranker",
        });
    }
    Ok(())
}

fn test_input(query: &Query, passage: &Passage, dataset: &Dataset) -> TrainingInput {
    let relevant = dataset
        .judgments_for(&query.id)
        .any(|j| j.passage_id == passage.id && j.grade > 0);
    TrainingInput::new(query.clone(), passage.clone(), Label::from_relevant(relevant))
}

pub struct PolicyRun {
    pub report: EvalReport,
    pub run: Vec<RunEntry>,
}

/// Selects demonstrations by `policy`, ranks every test query's initial
/// passages and scores NDCG. Queries run in parallel; the run is returned
/// in query-id order.
#[allow(clippy::too_many_arguments)]
pub fn run_policy<B: ScorerBackend + ?Sized>(
    policy: SelectionPolicy,
    dataset: &Dataset,
    initial: &BTreeMap<String, Vec<String>>,
    models: &Models<'_>,
    backend: &B,
    template: &PromptTemplate,
    cfg: &EvalConfig,
    config_digest: &str,
    exec: Exec,
) -> Result<PolicyRun> {
    check_models(policy, models)?;
    if cfg.depth < cfg.shots {
        return Err(Error::Config(format!("depth {} < shots {}", cfg.depth, cfg.shots)));
    }
    let start = Instant::now();
    let selector = Selector {
        policy,
        models,
        cfg,
        bags: match models.reranker {
            Some(r) if policy == SelectionPolicy::DemoRank => pool_bags(r, models.pool),
            _ => Vec::new(),
        },
    };
    let tag = format!("demorank-{policy}");
    let queries: Vec<(&String, &Vec<String>)> = initial.iter().collect();
    let per_query = parallel::try_map(exec, &queries, |_, (qid, pids)| -> Result<(Vec<RunEntry>, Option<f64>)> {
        let query = dataset
            .query(qid)
            .ok_or_else(|| Error::InvalidDataset(format!("initial ranking names unknown query {qid}")))?;
        let passages = pids
            .iter()
            .map(|p| {
                dataset
                    .passage(p)
                    .ok_or_else(|| Error::InvalidDataset(format!("initial ranking names unknown passage {p}")))
            })
            .collect::<Result<Vec<&Passage>>>()?;
        let run = if passages.is_empty() {
            Vec::new()
        } else {
            match cfg.granularity {
                Granularity::PerQuery => {
                    let ids = selector.select(&test_input(query, passages[0], dataset))?;
                    let demos: Vec<&Demonstration> = ids.iter().map(|&i| &models.pool.demos[i]).collect();
                    rank_passages(query, &passages, &demos, backend, template, &tag)?
                }
                Granularity::PerInput => {
                    let mut scores = Vec::with_capacity(passages.len());
                    for p in &passages {
                        let ids = selector.select(&test_input(query, p, dataset))?;
                        let demos: Vec<&Demonstration> = ids.iter().map(|&i| &models.pool.demos[i]).collect();
                        scores.push(relevance_score(backend, template, &demos, query, p)?);
                    }
                    order_run(&query.id, &passages, &scores, &tag)
                }
            }
        };
        let ndcg = ndcg_at_k(&run, &dataset.qrels_for(qid), cfg.ndcg_k);
        Ok((run, ndcg))
    })?;
    let mut run = Vec::new();
    let mut scores = BTreeMap::new();
    for ((qid, _), (entries, ndcg)) in queries.iter().zip(per_query) {
        run.extend(entries);
        scores.insert((*qid).clone(), ndcg);
    }
    let report = EvalReport::from_scores(policy, config_digest, scores, cfg, start.elapsed().as_secs_f64());
    Ok(PolicyRun { report, run })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn passage(id: &str) -> Passage {
        Passage {
            id: id.into(),
            text: id.into(),
        }
    }

    #[test]
    fn ties_keep_initial_order() {
        let ps = [passage("a"), passage("b"), passage("c")];
        let refs: Vec<&Passage> = ps.iter().collect();
        let run = order_run("q", &refs, &[0.5, 0.5, 0.5], "t");
        let ids: Vec<&str> = run.iter().map(|e| e.passage_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        let run = order_run("q", &refs[..2], &[0.1, 0.9], "t");
        assert_eq!((run[0].passage_id.as_str(), run[0].rank), ("b", 1));
        assert_eq!((run[1].passage_id.as_str(), run[1].rank), ("a", 2));
    }

    #[test]
    fn trec_format_round_trips() {
        let ps = [passage("a"), passage("b")];
        let refs: Vec<&Passage> = ps.iter().collect();
        let run = order_run("q1", &refs, &[0.25, 0.75], "tag");
        let text = trec_run_string(&run);
        assert_eq!(text, "q1 Q0 b 1 0.75 tag\nq1 Q0 a 2 0.25 tag\n");
        assert_eq!(parse_trec_run(&text).unwrap(), run);
    }

    #[test]
    fn policy_names() {
        for p in SelectionPolicy::ALL {
            assert_eq!(p.as_str().parse::<SelectionPolicy>().unwrap(), p);
        }
        assert_eq!("demorank".parse::<SelectionPolicy>().unwrap(), SelectionPolicy::DemoRank);
        assert!("best".parse::<SelectionPolicy>().is_err());
    }

    #[test]
    fn report_mean_is_arithmetic() {
        let scores: BTreeMap<String, Option<f64>> =
            [("a".to_string(), Some(0.5)), ("b".into(), Some(1.0)), ("c".into(), None)].into();
        let r = EvalReport::from_scores(SelectionPolicy::Random, "d", scores, &EvalConfig::default(), 0.0);
        assert_eq!(r.mean_ndcg, 0.75);
        assert_eq!(r.excluded, vec!["c".to_string()]);
    }
}
