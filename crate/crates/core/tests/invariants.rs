use std::collections::{BTreeMap, BTreeSet, HashSet};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use demorank::artifacts::{samples_from_records, samples_to_records, scored_from_records, scored_to_records, Resolver};
use demorank::config::ExperimentConfig;
use demorank::corpus::{
    build_pool, build_training_inputs, generate_synthetic_dataset, Demonstration, Label, SynthParams, SyntheticCorpus,
};
use demorank::dreranker::{construct_samples, pool_bags, CrossEncoder};
use demorank::dretriever::{EncoderConfig, ScoredSet};
use demorank::pipeline::{greedy_rerank, mock_for, ndcg_at_k, rank_passages, LoadedData, RunEntry};
use demorank::scorer::{score_list, CachedBackend, PromptTemplate, ScoreRequest, ScorerBackend};
use demorank::sparse::InvertedIndex;

fn corpus(seed: u64, queries: usize, passages: usize) -> SyntheticCorpus {
    let params = SynthParams {
        topics: 6,
        vocab: 120,
        train_queries: queries,
        test_queries: 3,
        passages_per_query: passages,
        ..SynthParams::default()
    };
    generate_synthetic_dataset(&params, seed).unwrap()
}

fn loaded(c: SyntheticCorpus) -> LoadedData {
    let topics = c.text_topics();
    LoadedData {
        train: c.train,
        test: c.test,
        topics: Some(topics),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pool_is_balanced_sorted_and_judgment_consistent(seed in any::<u64>(), pool_seed in any::<u64>(), n in 3usize..10) {
        let c = corpus(seed, 8, n);
        let pool = build_pool(&c.train, pool_seed).unwrap();
        for (yes, no) in pool.counts.values() {
            prop_assert_eq!(yes, no);
        }
        let keys: Vec<_> = pool.demos.iter().map(|d| d.demo_ref()).collect();
        prop_assert!(keys.windows(2).all(|w| w[0] < w[1]));
        for d in &pool.demos {
            let relevant = c.train.judgments_for(&d.query.id).any(|j| j.passage_id == d.passage.id && j.grade > 0);
            prop_assert_eq!(d.label, Label::from_relevant(relevant));
        }
        let (inputs, _) = build_training_inputs(&c.train, pool_seed);
        for i in &inputs {
            let relevant = c.train.judgments_for(&i.query.id).any(|j| j.passage_id == i.passage.id && j.grade > 0);
            prop_assert_eq!(i.gold, Label::from_relevant(relevant));
        }
    }

    #[test]
    fn bm25_index_structure(seed in any::<u64>()) {
        let c = corpus(seed, 6, 6);
        let pool = build_pool(&c.train, 1).unwrap();
        let index = InvertedIndex::over_pool(&pool);
        prop_assert_eq!(index.doc_count(), pool.len());
        let lengths = index.doc_lengths();
        let mean = lengths.iter().map(|&l| l as f64).sum::<f64>() / lengths.len() as f64;
        prop_assert!((index.avg_doc_length() - mean).abs() < 1e-9);
        for d in &pool.demos {
            for term in demorank::text::tokenize(&d.query.text) {
                let postings = index.postings(&term);
                prop_assert!(!postings.is_empty());
                prop_assert!(postings.windows(2).all(|w| w[0].doc < w[1].doc));
            }
        }
    }

    #[test]
    fn scored_set_ranks_are_a_permutation(scores in prop::collection::vec(0u8..5, 1..20)) {
        let c = corpus(3, 4, 4);
        let (inputs, _) = build_training_inputs(&c.train, 0);
        let scored: Vec<(usize, f64)> = scores.iter().enumerate().map(|(i, &s)| (i * 3, s as f64 / 4.0)).collect();
        let set = ScoredSet::new(inputs[0].clone(), scored);
        let mut ranks = set.ranks();
        ranks.sort_unstable();
        prop_assert_eq!(ranks, (1..=scores.len()).collect::<Vec<_>>());
        let mut by_rank = set.candidates.clone();
        by_rank.sort_by_key(|c| c.rank);
        for w in by_rank.windows(2) {
            prop_assert!(w[0].llm_score > w[1].llm_score || (w[0].llm_score == w[1].llm_score && w[0].demo < w[1].demo));
        }
    }

    #[test]
    fn cache_is_read_through(seed in any::<u64>(), picks in prop::collection::vec(0usize..1000, 1..6)) {
        let data = loaded(corpus(seed, 6, 6));
        let config = ExperimentConfig::default();
        let mock = mock_for(&config, &data);
        let cached = CachedBackend::new(mock_for(&config, &data));
        let pool = build_pool(&data.train, 1).unwrap();
        let (inputs, _) = build_training_inputs(&data.train, 2);
        let t = PromptTemplate::default();
        let demos: Vec<&Demonstration> = picks.iter().map(|&i| &pool.demos[i % pool.len()]).collect();
        for input in &inputs {
            let req = ScoreRequest { template: &t, demos: demos.clone(), input_query: &input.query.text, input_passage: &input.passage.text };
            let d = mock.distribution(&req).unwrap();
            prop_assert!((d.p_yes + d.p_no - 1.0).abs() <= 1e-9);
            for _ in 0..2 {
                prop_assert_eq!(cached.distribution(&req).unwrap(), d);
            }
            prop_assert_eq!(score_list(&cached, &t, &demos, input).unwrap(), score_list(&mock, &t, &demos, input).unwrap());
        }
    }

    #[test]
    fn ranked_runs_are_contiguous_and_non_increasing(seed in any::<u64>(), shots in 0usize..4) {
        let data = loaded(corpus(seed, 6, 8));
        let config = ExperimentConfig::default();
        let mock = mock_for(&config, &data);
        let pool = build_pool(&data.train, 1).unwrap();
        let demos: Vec<&Demonstration> = pool.demos.iter().take(shots).collect();
        for q in &data.test.queries {
            let passages: Vec<_> = data.test.judgments_for(&q.id).map(|j| data.test.passage(&j.passage_id).unwrap()).collect();
            let run = rank_passages(q, &passages, &demos, &mock, &config.template, "t").unwrap();
            prop_assert_eq!(run.len(), passages.len());
            prop_assert!(run.iter().enumerate().all(|(i, e)| e.rank == i + 1));
            prop_assert!(run.windows(2).all(|w| w[0].score >= w[1].score));
            let ids: BTreeSet<_> = run.iter().map(|e| e.passage_id.clone()).collect();
            prop_assert_eq!(ids, passages.iter().map(|p| p.id.clone()).collect::<BTreeSet<_>>());
            if let Some(ndcg) = ndcg_at_k(&run, &data.test.qrels_for(&q.id), 10) {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&ndcg));
            }
        }
    }

    #[test]
    fn ideal_run_has_unit_ndcg(grades in prop::collection::vec(0u32..4, 1..15)) {
        let qrels: BTreeMap<String, u32> = grades.iter().enumerate().map(|(i, &g)| (format!("p{i}"), g)).collect();
        let mut order: Vec<(&String, &u32)> = qrels.iter().collect();
        order.sort_by(|a, b| b.1.cmp(a.1));
        let run: Vec<RunEntry> = order.iter().enumerate().map(|(i, (pid, _))| RunEntry {
            query_id: "q".into(),
            passage_id: (*pid).clone(),
            rank: i + 1,
            score: -(i as f64),
            tag: "t".into(),
        }).collect();
        match ndcg_at_k(&run, &qrels, 10) {
            Some(v) => prop_assert!((v - 1.0).abs() < 1e-12),
            None => prop_assert!(grades.iter().all(|&g| g == 0)),
        }
    }

    #[test]
    fn greedy_rerank_returns_k_distinct_candidates(seed in any::<u64>(), k in 1usize..5, extra in 0usize..6) {
        let c = corpus(seed, 8, 6);
        let pool = build_pool(&c.train, 1).unwrap();
        let (inputs, _) = build_training_inputs(&c.train, 2);
        let enc = EncoderConfig { vocab_buckets: 64, dim: 8, ..EncoderConfig::default() };
        let model = CrossEncoder::new(&enc, 8, seed);
        let bags = pool_bags(&model, &pool);
        let n = (k + extra).min(pool.len());
        prop_assume!(n >= k);
        let candidates: Vec<usize> = (0..n).map(|i| (i * 7 + seed as usize % 5) % pool.len()).collect::<BTreeSet<_>>().into_iter().collect();
        prop_assume!(candidates.len() >= k);
        let picked = greedy_rerank(&model, &inputs[0], &candidates, &bags, k).unwrap();
        prop_assert_eq!(picked.len(), k);
        prop_assert_eq!(picked.iter().collect::<HashSet<_>>().len(), k);
        prop_assert!(picked.iter().all(|p| candidates.contains(p)));
    }

    #[test]
    fn artifact_records_round_trip(seed in any::<u64>()) {
        let data = loaded(corpus(seed, 8, 6));
        let config = ExperimentConfig::default();
        let mock = mock_for(&config, &data);
        let pool = build_pool(&data.train, 1).unwrap();
        let (inputs, _) = build_training_inputs(&data.train, 2);
        let resolver = Resolver::new(&pool, &inputs);
        let retrieved: Vec<usize> = (0..6.min(pool.len())).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = construct_samples(&inputs[0], &retrieved, &pool, &mock, &config.template, 3, &mut rng).unwrap();
        let records = samples_to_records(&resolver, &samples);
        let json: Vec<String> = records.iter().map(|r| serde_json::to_string(r).unwrap()).collect();
        let parsed: Vec<_> = json.iter().map(|s| serde_json::from_str(s).unwrap()).collect();
        prop_assert_eq!(samples_from_records(&resolver, &parsed).unwrap(), samples);

        let set = ScoredSet::new(inputs[1].clone(), retrieved.iter().map(|&i| (i, 1.0 / (i + 1) as f64)).collect());
        let recs = scored_to_records(&resolver, std::slice::from_ref(&set));
        prop_assert_eq!(scored_from_records(&resolver, &recs).unwrap(), vec![set]);
    }

    #[test]
    fn config_invariants_and_digest(b in 1usize..60, parallel in any::<bool>()) {
        let cfg = ExperimentConfig::from_toml(&format!("[mining]\nb = {b}\n[run]\nparallel = {parallel}\n")).unwrap();
        prop_assert_eq!(cfg.mining.candidates(), 2 * b);
        prop_assert!(cfg.reranker.train.k <= cfg.reranker.train.m);
        prop_assert!(cfg.evaluation.eval.shots <= cfg.evaluation.eval.depth);
        let base = ExperimentConfig::from_toml(&format!("[mining]\nb = {b}\n")).unwrap();
        prop_assert_eq!(cfg.digest(), base.digest());
    }
}

#[test]
fn unresolved_references_are_reported() {
    let data = loaded(corpus(1, 6, 6));
    let pool = build_pool(&data.train, 1).unwrap();
    let (inputs, _) = build_training_inputs(&data.train, 2);
    let resolver = Resolver::new(&pool, &inputs);
    let rec: demorank::artifacts::SampleRecord = serde_json::from_str(
        r#"{"input_id":"nope","shot":1,"prefix":[],"continuations":[{"last":["a","b","Yes"],"llm_score":0.5}]}"#,
    )
    .unwrap();
    assert!(matches!(
        samples_from_records(&resolver, &[rec]),
        Err(demorank::Error::UnresolvedRef(_))
    ));
}
