//! Experiment configuration (TOML), validation and the config digest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::SynthParams;
use crate::dreranker::RerankerTrainConfig;
use crate::dretriever::{EncoderConfig, RetrieverTrainConfig};
use crate::error::{Error, Result};
use crate::pipeline::{EvalConfig, SelectionPolicy};
use crate::scorer::{HttpConfig, MockParams, PromptTemplate};
use crate::sparse::Bm25Params;
use crate::store::sha256_hex;

pub const SCORER_URL_ENV: &str = "DEMORANK_SCORER_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataConfig {
    Synthetic {
        #[serde(default)]
        params: SynthParams,
        #[serde(default)]
        seed: u64,
    },
    Files {
        train_dir: PathBuf,
        test_dir: PathBuf,
    },
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic {
            params: SynthParams::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub mock: MockParams,
    pub http: HttpConfig,
    /// Memoize scorer responses by prompt digest.
    pub cache: bool,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            mock: MockParams::default(),
            http: HttpConfig::default(),
            cache: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolConfig {
    pub seed: u64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig { seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningConfig {
    /// BM25 candidates per input; as many random ones are added, so each
    /// input gets `2b` candidates.
    pub b: usize,
    pub bm25: Bm25Params,
    /// Seed for choosing the training inputs.
    pub input_seed: u64,
    /// Seed for the random half of the candidates.
    pub seed: u64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            b: 25,
            bm25: Bm25Params::default(),
            input_seed: 2,
            seed: 3,
        }
    }
}

impl MiningConfig {
    pub fn candidates(&self) -> usize {
        2 * self.b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrieverConfig {
    pub encoder: EncoderConfig,
    pub init_seed: u64,
    pub train: RetrieverTrainConfig,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        RetrieverConfig {
            encoder: EncoderConfig::default(),
            init_seed: 4,
            train: RetrieverTrainConfig {
                seed: 5,
                ..RetrieverTrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RerankerConfig {
    pub init_seed: u64,
    /// Seed for the rank-based sampling during sample construction.
    pub sample_seed: u64,
    pub train: RerankerTrainConfig,
}

impl Default for RerankerConfig {
    fn default() -> Self {
        RerankerConfig {
            init_seed: 6,
            sample_seed: 7,
            train: RerankerTrainConfig {
                seed: 8,
                ..RerankerTrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    #[serde(flatten)]
    pub eval: EvalConfig,
    pub policies: Vec<SelectionPolicy>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            eval: EvalConfig {
                seed: 9,
                ..EvalConfig::default()
            },
            policies: SelectionPolicy::ALL.to_vec(),
        }
    }
}

/// Execution settings; not part of the digest because they do not change
/// any result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { parallel: true }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub template: PromptTemplate,
    pub backend: BackendConfig,
    pub pool: PoolConfig,
    pub mining: MiningConfig,
    pub retriever: RetrieverConfig,
    pub reranker: RerankerConfig,
    pub evaluation: EvaluationConfig,
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative dataset paths resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let DataConfig::Files { train_dir, test_dir } = &mut cfg.data {
            let base = path.parent().unwrap_or(Path::new("."));
            for dir in [train_dir, test_dir] {
                if dir.is_relative() {
                    *dir = base.join(&*dir);
                }
            }
        }
        Ok(cfg)
    }

    /// Applies `DEMORANK_SCORER_URL` when set.
    pub fn apply_env(&mut self) {
        if let Ok(url) = std::env::var(SCORER_URL_ENV) {
            if !url.is_empty() {
                self.backend.http.endpoint = url;
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.reranker.train.m;
        let k = self.reranker.train.k;
        let eval = &self.evaluation.eval;
        let checks = [
            (self.mining.b > 0, "mining.b must be positive".to_string()),
            (k >= 1 && k <= m, format!("reranker k={k} must satisfy 1 <= k <= m={m}")),
            (
                eval.shots <= eval.depth,
                format!("evaluation shots={} must not exceed depth={}", eval.shots, eval.depth),
            ),
            (eval.ndcg_k > 0, "evaluation.ndcg_k must be positive".into()),
            (self.reranker.train.trajectories > 0, "reranker trajectories must be positive".into()),
            (
                self.retriever.encoder.vocab_buckets > 0 && self.retriever.encoder.dim > 0,
                "encoder dimensions must be positive".into(),
            ),
            (self.reranker.train.hidden > 0, "reranker hidden width must be positive".into()),
            (!self.retriever.train.in_batch_negatives, "in-batch negatives are not supported".into()),
        ];
        if let Some((_, msg)) = checks.iter().find(|(ok, _)| !ok) {
            return Err(Error::Config(msg.clone()));
        }
        self.template.validate()?;
        Ok(())
    }

    /// Digest of everything that can change an artifact: the resolved
    /// config minus execution settings and HTTP transport details.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.run = RunConfig::default();
        c.backend.http = HttpConfig::default();
        let json = serde_json::to_string(&c).expect("config serializes");
        sha256_hex(json.as_bytes())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
