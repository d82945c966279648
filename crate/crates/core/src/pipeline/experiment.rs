//! The whole chain in memory: pool → candidates → scored sets → retriever →
//! dependency samples → reranker → policy evaluation. The CLI runs the
//! same stages one command at a time.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use super::{initial_ranking, run_policy, EvalReport, Models, RunEntry, SelectionPolicy};
use crate::config::{BackendKind, DataConfig, ExperimentConfig};
use crate::corpus::{
    build_pool, build_training_inputs, generate_synthetic_dataset, load_dataset, Dataset, Demonstration,
    DemonstrationPool, Split, TrainingInput,
};
use crate::dreranker::{construct_samples, train_reranker, CrossEncoder, DependencySample, RerankerReport};
use crate::dretriever::{mean_positive_rank, train_retriever, BiEncoder, DenseIndex, ScoredSet, TrainReport};
use crate::error::Result;
use crate::parallel::{self, Exec};
use crate::scorer::{score_list, CachedBackend, HttpScorer, MockScorer, PromptTemplate, RelevanceRule, ScorerBackend};
use crate::seed::stream_rng;
use crate::sparse::{mine_candidates, Bm25Params, InvertedIndex};
use crate::text::fnv1a64;

/// Train and test splits plus, for synthetic data, the generating topics of
/// every text (the mock scorer's ground truth).
pub struct LoadedData {
    pub train: Dataset,
    pub test: Dataset,
    pub topics: Option<(HashMap<String, usize>, HashMap<String, usize>)>,
}

pub fn load_data(data: &DataConfig) -> Result<LoadedData> {
    match data {
        DataConfig::Synthetic { params, seed } => {
            let corpus = generate_synthetic_dataset(params, *seed)?;
            let topics = corpus.text_topics();
            Ok(LoadedData {
                train: corpus.train,
                test: corpus.test,
                topics: Some(topics),
            })
        }
        DataConfig::Files { train_dir, test_dir } => Ok(LoadedData {
            train: load_dataset(train_dir, Split::Train)?,
            test: load_dataset(test_dir, Split::Test)?,
            topics: None,
        }),
    }
}

/// Mock scorer whose relevance rule is the data's ground truth: generating
/// topics for synthetic data, otherwise the judgments of both splits.
pub fn mock_for(config: &ExperimentConfig, data: &LoadedData) -> MockScorer {
    let rule = match &data.topics {
        Some((q, p)) => RelevanceRule::Topics {
            query: q.clone(),
            passage: p.clone(),
        },
        None => {
            let mut judged = HashMap::new();
            for ds in [&data.train, &data.test] {
                for j in &ds.judgments {
                    if let (Some(q), Some(p)) = (ds.query(&j.query_id), ds.passage(&j.passage_id)) {
                        judged.insert((q.text.clone(), p.text.clone()), j.grade > 0);
                    }
                }
            }
            RelevanceRule::Judged(judged)
        }
    };
    MockScorer::new(config.backend.mock, rule)
}

/// The configured scorer backend, cached when enabled.
pub fn backend_for(config: &ExperimentConfig, data: &LoadedData) -> Box<dyn ScorerBackend> {
    let inner: Box<dyn ScorerBackend> = match config.backend.kind {
        BackendKind::Mock => Box::new(mock_for(config, data)),
        BackendKind::Http => Box::new(HttpScorer::new(config.backend.http.clone())),
    };
    if config.backend.cache {
        Box::new(CachedBackend::new(inner))
    } else {
        inner
    }
}

/// Candidate mining for every training input, excluding demonstrations
/// built from the input's own query.
pub fn mine_all(
    inputs: &[TrainingInput],
    pool: &DemonstrationPool,
    index: &InvertedIndex,
    params: &Bm25Params,
    b: usize,
    seed: u64,
    exec: Exec,
) -> Result<Vec<Vec<usize>>> {
    parallel::try_map(exec, inputs, |_, input| {
        mine_candidates(pool, index, params, input, b, Some(&input.query.id), seed)
    })
}

/// Scores each candidate as a one-shot list for its input.
pub fn score_candidates<B: ScorerBackend + ?Sized>(
    inputs: &[TrainingInput],
    candidates: &[Vec<usize>],
    pool: &DemonstrationPool,
    backend: &B,
    template: &PromptTemplate,
    exec: Exec,
) -> Result<Vec<ScoredSet>> {
    let jobs: Vec<(&TrainingInput, &Vec<usize>)> = inputs.iter().zip(candidates).collect();
    parallel::try_map(exec, &jobs, |_, (input, cands)| {
        let scored = cands
            .iter()
            .map(|&c| {
                let list: [&Demonstration; 1] = [&pool.demos[c]];
                score_list(backend, template, &list, input).map(|s| (c, s))
            })
            .collect::<Result<Vec<(usize, f64)>>>()?;
        Ok(ScoredSet::new((*input).clone(), scored))
    })
}

/// Dependency-aware samples for every training input from its top-M
/// retrieved demonstrations. Additional trajectories contribute only their
/// samples with a non-empty prefix (the first step is shared).
#[allow(clippy::too_many_arguments)]
pub fn build_samples<B: ScorerBackend + ?Sized>(
    inputs: &[TrainingInput],
    retriever: &BiEncoder,
    index: &DenseIndex,
    pool: &DemonstrationPool,
    backend: &B,
    template: &PromptTemplate,
    config: &ExperimentConfig,
    exec: Exec,
) -> Result<Vec<DependencySample>> {
    let rc = &config.reranker;
    let per_input = parallel::try_map(exec, inputs, |_, input| -> Result<Vec<DependencySample>> {
        let retrieved = index.retrieve(retriever, input, rc.train.m, Some(&input.query.id)).ordinals();
        let mut out = Vec::new();
        for t in 0..rc.train.trajectories {
            let mut rng = stream_rng(rc.sample_seed.wrapping_add(t as u64), fnv1a64(input.id.as_bytes()));
            let samples = construct_samples(input, &retrieved, pool, backend, template, rc.train.k, &mut rng)?;
            out.extend(samples.into_iter().filter(|s| t == 0 || !s.prefix.is_empty()));
        }
        Ok(out)
    })?;
    Ok(per_input.into_iter().flatten().collect())
}

pub struct TrainedModels {
    pub pool: DemonstrationPool,
    pub bm25: InvertedIndex,
    pub retriever: BiEncoder,
    pub dense: DenseIndex,
    pub reranker: CrossEncoder,
}

impl TrainedModels {
    pub fn models(&self, bm25_params: Bm25Params) -> Models<'_> {
        Models {
            pool: &self.pool,
            bm25: &self.bm25,
            bm25_params,
            retriever: Some((&self.retriever, &self.dense)),
            reranker: Some(&self.reranker),
        }
    }
}

pub struct ExperimentOutput {
    pub models: TrainedModels,
    pub inputs: Vec<TrainingInput>,
    pub scored: Vec<ScoredSet>,
    pub samples: Vec<DependencySample>,
    pub retriever_report: TrainReport,
    pub reranker_report: RerankerReport,
    /// Mean rank of the best candidate of held-out (test split) inputs
    /// under the untrained and the trained retriever.
    pub heldout_rank_before: f64,
    pub heldout_rank_after: f64,
    pub reports: Vec<EvalReport>,
    pub runs: BTreeMap<SelectionPolicy, Vec<RunEntry>>,
    pub stage_secs: BTreeMap<String, f64>,
}

impl ExperimentOutput {
    pub fn report(&self, policy: SelectionPolicy) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.policy == policy)
    }
}

pub struct Experiment<'a, B: ?Sized> {
    pub config: &'a ExperimentConfig,
    pub backend: &'a B,
    pub exec: Exec,
}

impl<B: ScorerBackend + ?Sized> Experiment<'_, B> {
    pub fn run(&self, train: &Dataset, test: &Dataset) -> Result<ExperimentOutput> {
        let cfg = self.config;
        let exec = self.exec;
        let template = &cfg.template;
        let mut stage_secs = BTreeMap::new();
        let mut clock = Instant::now();
        let mut lap = |name: &str| {
            stage_secs.insert(name.to_string(), clock.elapsed().as_secs_f64());
            clock = Instant::now();
        };

        let pool = build_pool(train, cfg.pool.seed)?;
        let bm25 = InvertedIndex::over_pool(&pool);
        let (inputs, skipped) = build_training_inputs(train, cfg.mining.input_seed);
        if skipped.skipped() > 0 {
            log::warn!("skipped {} training queries without usable judgments", skipped.skipped());
        }
        lap("pool");

        let mining = &cfg.mining;
        let candidates = mine_all(&inputs, &pool, &bm25, &mining.bm25, mining.b, mining.seed, exec)?;
        let scored = score_candidates(&inputs, &candidates, &pool, self.backend, template, exec)?;
        lap("score_candidates");

        // held-out sets: test-split inputs against the same pool
        let (heldout_inputs, _) = build_training_inputs(test, cfg.mining.input_seed);
        let heldout_cands = mine_all(&heldout_inputs, &pool, &bm25, &mining.bm25, mining.b, mining.seed, exec)?;
        let heldout = score_candidates(&heldout_inputs, &heldout_cands, &pool, self.backend, template, exec)?;

        let mut retriever = BiEncoder::new(&cfg.retriever.encoder, cfg.retriever.init_seed);
        let heldout_rank_before = mean_positive_rank(&retriever, &heldout, &pool);
        let retriever_report = train_retriever(&mut retriever, &scored, &pool, &cfg.retriever.train)?;
        let heldout_rank_after = mean_positive_rank(&retriever, &heldout, &pool);
        let dense = DenseIndex::build(&retriever, &pool, exec);
        lap("train_retriever");

        let samples = build_samples(&inputs, &retriever, &dense, &pool, self.backend, template, cfg, exec)?;
        lap("build_samples");
        let mut reranker = CrossEncoder::new(&cfg.retriever.encoder, cfg.reranker.train.hidden, cfg.reranker.init_seed);
        let reranker_report = train_reranker(&mut reranker, &samples, &pool, &cfg.reranker.train)?;
        lap("train_reranker");

        let models = TrainedModels {
            pool,
            bm25,
            retriever,
            dense,
            reranker,
        };
        let eval = &cfg.evaluation.eval;
        let initial = initial_ranking(test, &mining.bm25, eval.initial_ranking, eval.initial_depth)?;
        let digest = cfg.digest();
        let mut reports = Vec::new();
        let mut runs = BTreeMap::new();
        for &policy in &cfg.evaluation.policies {
            let out = run_policy(
                policy,
                test,
                &initial,
                &models.models(mining.bm25),
                self.backend,
                template,
                eval,
                &digest,
                exec,
            )?;
            log::info!("{policy}: mean NDCG@{} = {:.5}", eval.ndcg_k, out.report.mean_ndcg);
            reports.push(out.report);
            runs.insert(policy, out.run);
        }
        lap("evaluate");

        Ok(ExperimentOutput {
            models,
            inputs,
            scored,
            samples,
            retriever_report,
            reranker_report,
            heldout_rank_before,
            heldout_rank_after,
            reports,
            runs,
            stage_secs,
        })
    }
}
