//! `demorank` — runs the demonstration-selection pipeline one stage at a
//! time over a work directory of artifacts.

mod stage;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use demorank::artifacts::{
    candidates_from_records, candidates_to_records, samples_from_records, samples_to_records, scored_from_records,
    scored_to_records, CandidatesRecord, Resolver, SampleRecord, ScoredRecord,
};
use demorank::checkpoint::Container;
use demorank::config::{DataConfig, ExperimentConfig};
use demorank::corpus::{build_pool, build_training_inputs, Demonstration, DemonstrationPool, TrainingInput};
use demorank::dreranker::{train_reranker, CrossEncoder, RerankerReport};
use demorank::dretriever::{mean_positive_rank, train_retriever, BiEncoder, DenseIndex, TrainReport};
use demorank::parallel::Exec;
use demorank::pipeline::{
    backend_for, build_samples, initial_ranking, load_data, mine_all, run_policy, score_candidates, trec_run_string,
    EvalReport, LoadedData, Models, SelectionPolicy,
};
use demorank::sparse::InvertedIndex;
use demorank::store::{file_digest, read_jsonl, write_atomic, write_jsonl};
use demorank::{Error, Result};

use stage::{Outcome, Stage};

#[derive(Parser)]
#[command(name = "demorank", version, about = "Demonstration selection for in-context passage ranking")]
struct Cli {
    #[command(flatten)]
    common: Common,
    /// Print the resolved config as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args)]
struct Common {
    /// TOML config file; defaults apply when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Directory holding the artifacts.
    #[arg(long, short, global = true, default_value = "work")]
    workdir: PathBuf,
    /// Rerun even when the outputs are up to date.
    #[arg(long, global = true)]
    force: bool,
    /// Run sequentially regardless of the config.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Args, Clone)]
struct PolicyArgs {
    /// Policy to run (repeatable); defaults to the config's list.
    #[arg(long = "policy", value_parser = parse_policy)]
    policies: Vec<SelectionPolicy>,
}

#[derive(Subcommand)]
enum Command {
    /// Demonstration pool, training inputs and BM25 index.
    BuildPool,
    /// BM25 + random candidate demonstrations per training input.
    MineCandidates,
    /// LLM score of every candidate as a one-shot list.
    ScoreCandidates,
    /// Train the demonstration retriever on the scored candidates.
    TrainRetriever,
    /// Dependency-aware training samples from the retriever's top-M.
    BuildSamples,
    /// Train the dependency-aware reranker.
    TrainReranker,
    /// Rank the test passages with each policy's demonstrations.
    Rank(PolicyArgs),
    /// Rank and score NDCG, one report per policy.
    Evaluate(PolicyArgs),
    /// Tabulate the evaluation reports.
    Compare(PolicyArgs),
    /// Every stage in order, then compare.
    All(PolicyArgs),
    /// Print the resolved config as JSON.
    PrintConfig,
}

fn parse_policy(s: &str) -> std::result::Result<SelectionPolicy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let config = match load_config(&cli.common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if cli.print_config || matches!(cli.command, Some(Command::PrintConfig) | None) {
        if !cli.print_config && cli.command.is_none() {
            eprintln!("error: no command given (see --help)");
            return ExitCode::from(2);
        }
        println!("{}", config.to_json_pretty());
        return ExitCode::SUCCESS;
    }
    let ctx = Ctx::new(config, &cli.common);
    match ctx.dispatch(cli.command.expect("checked above")) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| match e {
            Error::Io { path, source } => Error::Config(format!("{}: {source}", path.display())),
            other => other,
        })?,
        None => ExperimentConfig::default(),
    };
    config.apply_env();
    if common.sequential {
        config.run.parallel = false;
    }
    config.validate()?;
    Ok(config)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Template(_) | Error::InvalidParams(_) => 2,
        Error::MissingArtifact(_)
        | Error::StaleArtifact { .. }
        | Error::Checkpoint(_)
        | Error::Parse { .. }
        | Error::UnresolvedRef(_) => 3,
        Error::Scorer { .. } => 4,
        _ => 1,
    }
}

struct Ctx {
    config: ExperimentConfig,
    digest: String,
    workdir: PathBuf,
    force: bool,
    exec: Exec,
}

#[derive(Serialize)]
struct RetrieverSummary {
    train: TrainReport,
    mean_positive_rank_before: f64,
    mean_positive_rank_after: f64,
}

#[derive(Serialize)]
struct ComparisonRow {
    policy: SelectionPolicy,
    mean_ndcg: f64,
    queries: usize,
    shots: usize,
    wall_clock_secs: f64,
}

#[derive(Serialize)]
struct Comparison {
    config_digest: String,
    ndcg_k: usize,
    rows: Vec<ComparisonRow>,
    best: Option<SelectionPolicy>,
}

impl Ctx {
    fn new(config: ExperimentConfig, common: &Common) -> Self {
        Ctx {
            digest: config.digest(),
            exec: Exec::from_flag(config.run.parallel),
            config,
            workdir: common.workdir.clone(),
            force: common.force,
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.workdir.join(name)
    }

    fn stage<'a>(&'a self, command: &'a str) -> Stage<'a> {
        Stage {
            command,
            config_digest: &self.digest,
            force: self.force,
        }
    }

    fn dispatch(&self, command: Command) -> Result<()> {
        match command {
            Command::BuildPool => self.build_pool(),
            Command::MineCandidates => self.mine_candidates(),
            Command::ScoreCandidates => self.score_candidates(),
            Command::TrainRetriever => self.train_retriever(),
            Command::BuildSamples => self.build_samples(),
            Command::TrainReranker => self.train_reranker(),
            Command::Rank(p) => self.rank(&self.policies(&p), false),
            Command::Evaluate(p) => self.rank(&self.policies(&p), true),
            Command::Compare(p) => self.compare(&self.policies(&p)),
            Command::All(p) => {
                let policies = self.policies(&p);
                self.build_pool()?;
                self.mine_candidates()?;
                self.score_candidates()?;
                self.train_retriever()?;
                self.build_samples()?;
                self.train_reranker()?;
                self.rank(&policies, true)?;
                self.compare(&policies)
            }
            Command::PrintConfig => unreachable!("handled before dispatch"),
        }
    }

    fn policies(&self, args: &PolicyArgs) -> Vec<SelectionPolicy> {
        if args.policies.is_empty() {
            self.config.evaluation.policies.clone()
        } else {
            let mut out = Vec::new();
            for &p in &args.policies {
                if !out.contains(&p) {
                    out.push(p);
                }
            }
            out
        }
    }

    fn report(&self, command: &str, outcome: Outcome, outputs: &[PathBuf]) {
        let names: Vec<String> = outputs.iter().map(|p| p.display().to_string()).collect();
        match outcome {
            Outcome::Ran => println!("{command}: wrote {}", names.join(", ")),
            Outcome::UpToDate => println!("{command}: up to date"),
        }
    }

    /// Digests of dataset files, which the config digest does not cover.
    fn data_inputs(&self) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        if let DataConfig::Files { train_dir, test_dir } = &self.config.data {
            for (split, dir) in [("train", train_dir), ("test", test_dir)] {
                for name in ["queries.jsonl", "passages.jsonl", "qrels.tsv"] {
                    let p = dir.join(name);
                    if !p.exists() {
                        return Err(Error::MissingArtifact(p));
                    }
                    out.insert(format!("{split}/{name}"), file_digest(&p)?);
                }
            }
        }
        Ok(out)
    }

    fn data(&self) -> Result<LoadedData> {
        load_data(&self.config.data)
    }

    fn save_container(&self, path: &Path, mut c: Container) -> Result<()> {
        if let Some(meta) = c.meta.as_object_mut() {
            meta.insert("config_digest".into(), self.digest.clone().into());
        }
        write_atomic(path, &c.to_bytes()?)
    }

    fn read_container(path: &Path) -> Result<Container> {
        let bytes = fs::read(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(Container::from_bytes(&bytes)?)
    }

    fn load_pool(&self) -> Result<DemonstrationPool> {
        DemonstrationPool::from_demos(read_jsonl::<Demonstration>(&self.path("pool.jsonl"))?)
    }

    fn load_inputs(&self) -> Result<Vec<TrainingInput>> {
        read_jsonl(&self.path("inputs.jsonl"))
    }

    fn load_bm25(&self) -> Result<InvertedIndex> {
        Ok(InvertedIndex::from_container(&Self::read_container(&self.path("bm25.ckpt"))?)?)
    }

    fn load_retriever(&self) -> Result<BiEncoder> {
        Ok(BiEncoder::from_container(&Self::read_container(&self.path("retriever.ckpt"))?)?)
    }

    fn load_reranker(&self) -> Result<CrossEncoder> {
        Ok(CrossEncoder::from_container(&Self::read_container(&self.path("reranker.ckpt"))?)?)
    }

    fn build_pool(&self) -> Result<()> {
        let outputs = [self.path("pool.jsonl"), self.path("inputs.jsonl"), self.path("bm25.ckpt")];
        let outcome = self.stage("build-pool").run(&[], self.data_inputs()?, &outputs, || {
            let data = self.data()?;
            let pool = build_pool(&data.train, self.config.pool.seed)?;
            let (inputs, skipped) = build_training_inputs(&data.train, self.config.mining.input_seed);
            if skipped.skipped() > 0 {
                log::warn!("skipped {} training queries without usable judgments", skipped.skipped());
            }
            let bm25 = InvertedIndex::over_pool(&pool);
            write_jsonl(&outputs[0], &pool.demos)?;
            write_jsonl(&outputs[1], &inputs)?;
            self.save_container(&outputs[2], bm25.to_container()?)
        })?;
        self.report("build-pool", outcome, &outputs);
        Ok(())
    }

    fn mine_candidates(&self) -> Result<()> {
        let inputs = [self.path("pool.jsonl"), self.path("inputs.jsonl"), self.path("bm25.ckpt")];
        let outputs = [self.path("candidates.jsonl")];
        let outcome = self.stage("mine-candidates").run(&inputs, BTreeMap::new(), &outputs, || {
            let pool = self.load_pool()?;
            let train = self.load_inputs()?;
            let bm25 = self.load_bm25()?;
            let m = &self.config.mining;
            let cands = mine_all(&train, &pool, &bm25, &m.bm25, m.b, m.seed, self.exec)?;
            let resolver = Resolver::new(&pool, &train);
            write_jsonl(&outputs[0], candidates_to_records(&resolver, &train, &cands))
        })?;
        self.report("mine-candidates", outcome, &outputs);
        Ok(())
    }

    fn score_candidates(&self) -> Result<()> {
        let inputs = [self.path("pool.jsonl"), self.path("inputs.jsonl"), self.path("candidates.jsonl")];
        let outputs = [self.path("scored.jsonl")];
        let outcome = self.stage("score-candidates").run(&inputs, self.data_inputs()?, &outputs, || {
            let pool = self.load_pool()?;
            let train = self.load_inputs()?;
            let records: Vec<CandidatesRecord> = read_jsonl(&inputs[2])?;
            let resolver = Resolver::new(&pool, &train);
            let (set_inputs, cands) = candidates_from_records(&resolver, &records)?;
            let backend = backend_for(&self.config, &self.data()?);
            let scored = score_candidates(&set_inputs, &cands, &pool, &*backend, &self.config.template, self.exec)?;
            write_jsonl(&outputs[0], scored_to_records(&resolver, &scored))
        })?;
        self.report("score-candidates", outcome, &outputs);
        Ok(())
    }

    fn train_retriever(&self) -> Result<()> {
        let inputs = [self.path("pool.jsonl"), self.path("inputs.jsonl"), self.path("scored.jsonl")];
        let outputs = [self.path("retriever.ckpt"), self.path("retriever_report.json")];
        let outcome = self.stage("train-retriever").run(&inputs, BTreeMap::new(), &outputs, || {
            let pool = self.load_pool()?;
            let train = self.load_inputs()?;
            let records: Vec<ScoredRecord> = read_jsonl(&inputs[2])?;
            let sets = scored_from_records(&Resolver::new(&pool, &train), &records)?;
            let rc = &self.config.retriever;
            let mut model = BiEncoder::new(&rc.encoder, rc.init_seed);
            let before = mean_positive_rank(&model, &sets, &pool);
            let report = train_retriever(&mut model, &sets, &pool, &rc.train)?;
            let summary = RetrieverSummary {
                train: report,
                mean_positive_rank_before: before,
                mean_positive_rank_after: mean_positive_rank(&model, &sets, &pool),
            };
            self.save_container(&outputs[0], model.to_container())?;
            write_atomic(&outputs[1], &serde_json::to_vec_pretty(&summary)?)
        })?;
        self.report("train-retriever", outcome, &outputs);
        Ok(())
    }

    fn build_samples(&self) -> Result<()> {
        let inputs = [self.path("pool.jsonl"), self.path("inputs.jsonl"), self.path("retriever.ckpt")];
        let outputs = [self.path("samples.jsonl")];
        let outcome = self.stage("build-samples").run(&inputs, self.data_inputs()?, &outputs, || {
            let pool = self.load_pool()?;
            let train = self.load_inputs()?;
            let retriever = self.load_retriever()?;
            let dense = DenseIndex::build(&retriever, &pool, self.exec);
            let backend = backend_for(&self.config, &self.data()?);
            let samples = build_samples(
                &train,
                &retriever,
                &dense,
                &pool,
                &*backend,
                &self.config.template,
                &self.config,
                self.exec,
            )?;
            let resolver = Resolver::new(&pool, &train);
            write_jsonl(&outputs[0], samples_to_records(&resolver, &samples))
        })?;
        self.report("build-samples", outcome, &outputs);
        Ok(())
    }

    fn train_reranker(&self) -> Result<()> {
        let inputs = [self.path("pool.jsonl"), self.path("inputs.jsonl"), self.path("samples.jsonl")];
        let outputs = [self.path("reranker.ckpt"), self.path("reranker_report.json")];
        let outcome = self.stage("train-reranker").run(&inputs, BTreeMap::new(), &outputs, || {
            let pool = self.load_pool()?;
            let train = self.load_inputs()?;
            let records: Vec<SampleRecord> = read_jsonl(&inputs[2])?;
            let samples = samples_from_records(&Resolver::new(&pool, &train), &records)?;
            let rc = &self.config.reranker;
            let mut model = CrossEncoder::new(&self.config.retriever.encoder, rc.train.hidden, rc.init_seed);
            let report: RerankerReport = train_reranker(&mut model, &samples, &pool, &rc.train)?;
            self.save_container(&outputs[0], model.to_container())?;
            write_atomic(&outputs[1], &serde_json::to_vec_pretty(&report)?)
        })?;
        self.report("train-reranker", outcome, &outputs);
        Ok(())
    }

    fn rank(&self, policies: &[SelectionPolicy], with_reports: bool) -> Result<()> {
        let command = if with_reports { "evaluate" } else { "rank" };
        // Loaded on first use, shared across policies.
        let mut shared: Option<(LoadedData, DemonstrationPool, InvertedIndex)> = None;
        let mut retriever: Option<(BiEncoder, DenseIndex)> = None;
        let mut reranker: Option<CrossEncoder> = None;
        for &policy in policies {
            let mut inputs = vec![self.path("pool.jsonl"), self.path("bm25.ckpt")];
            let needs_retriever = matches!(policy, SelectionPolicy::RetrieverTopK | SelectionPolicy::DemoRank);
            if needs_retriever {
                inputs.push(self.path("retriever.ckpt"));
            }
            if policy == SelectionPolicy::DemoRank {
                inputs.push(self.path("reranker.ckpt"));
            }
            let mut outputs = vec![self.path(&format!("runs/{policy}.trec"))];
            if with_reports {
                outputs.push(self.path(&format!("reports/{policy}.json")));
            }
            let name = format!("{command} {policy}");
            let outcome = self.stage(&name).run(&inputs, self.data_inputs()?, &outputs, || {
                if shared.is_none() {
                    shared = Some((self.data()?, self.load_pool()?, self.load_bm25()?));
                }
                let (data, pool, bm25) = shared.as_ref().expect("loaded");
                if needs_retriever && retriever.is_none() {
                    let model = self.load_retriever()?;
                    let dense = DenseIndex::build(&model, pool, self.exec);
                    retriever = Some((model, dense));
                }
                if policy == SelectionPolicy::DemoRank && reranker.is_none() {
                    reranker = Some(self.load_reranker()?);
                }
                let eval = &self.config.evaluation.eval;
                let bm25_params = self.config.mining.bm25;
                let initial = initial_ranking(&data.test, &bm25_params, eval.initial_ranking, eval.initial_depth)?;
                let models = Models {
                    pool,
                    bm25,
                    bm25_params,
                    retriever: retriever.as_ref().map(|(m, d)| (m, d)),
                    reranker: reranker.as_ref(),
                };
                let backend = backend_for(&self.config, data);
                let out = run_policy(
                    policy,
                    &data.test,
                    &initial,
                    &models,
                    &*backend,
                    &self.config.template,
                    eval,
                    &self.digest,
                    self.exec,
                )?;
                log::info!("{policy}: mean NDCG@{} = {:.5}", eval.ndcg_k, out.report.mean_ndcg);
                write_atomic(&outputs[0], trec_run_string(&out.run).as_bytes())?;
                if with_reports {
                    write_atomic(&outputs[1], &serde_json::to_vec_pretty(&out.report)?)?;
                }
                Ok(())
            })?;
            self.report(&name, outcome, &outputs);
        }
        Ok(())
    }

    fn compare(&self, policies: &[SelectionPolicy]) -> Result<()> {
        let inputs: Vec<PathBuf> = policies.iter().map(|p| self.path(&format!("reports/{p}.json"))).collect();
        let outputs = [self.path("comparison.json")];
        let outcome = self.stage("compare").run(&inputs, BTreeMap::new(), &outputs, || {
            let comparison = self.comparison(&inputs)?;
            write_atomic(&outputs[0], &serde_json::to_vec_pretty(&comparison)?)
        })?;
        self.report("compare", outcome, &outputs);
        let comparison = self.comparison(&inputs)?;
        println!("{:<16} {:>10} {:>8}", "policy", format!("ndcg@{}", comparison.ndcg_k), "queries");
        for row in &comparison.rows {
            println!("{:<16} {:>10.5} {:>8}", row.policy.as_str(), row.mean_ndcg, row.queries);
        }
        Ok(())
    }

    fn comparison(&self, reports: &[PathBuf]) -> Result<Comparison> {
        let mut rows = Vec::new();
        for path in reports {
            let bytes = fs::read(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            let report: EvalReport = serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
                path: path.clone(),
                line: e.line(),
                message: e.to_string(),
            })?;
            rows.push(ComparisonRow {
                policy: report.policy,
                mean_ndcg: report.mean_ndcg,
                queries: report.per_query.len(),
                shots: report.shots,
                wall_clock_secs: report.wall_clock_secs,
            });
        }
        let best = rows
            .iter()
            .fold(None::<&ComparisonRow>, |best, r| match best {
                Some(b) if b.mean_ndcg >= r.mean_ndcg => Some(b),
                _ => Some(r),
            })
            .map(|r| r.policy);
        Ok(Comparison {
            config_digest: self.digest.clone(),
            ndcg_k: self.config.evaluation.eval.ndcg_k,
            rows,
            best,
        })
    }
}
