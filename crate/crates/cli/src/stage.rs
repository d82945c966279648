//! Artifact bookkeeping shared by every command: freshness checks on the
//! inputs, the no-op short circuit, and manifests on the outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use demorank::store::{file_digest, Manifest};
use demorank::{Error, Result};

pub struct Stage<'a> {
    pub command: &'a str,
    pub config_digest: &'a str,
    pub force: bool,
}

pub enum Outcome {
    Ran,
    UpToDate,
}

impl Stage<'_> {
    /// Verifies that `path` exists and was produced under the current
    /// config, unmodified since. Returns its content digest.
    pub fn check_input(&self, path: &Path) -> Result<String> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let digest = file_digest(path)?;
        if let Some(m) = Manifest::load(path)? {
            if m.config_digest != self.config_digest {
                return Err(Error::StaleArtifact {
                    path: path.to_path_buf(),
                    expected: self.config_digest.to_string(),
                    found: m.config_digest,
                });
            }
            let recorded = m.outputs.get(&key(path));
            if recorded != Some(&digest) {
                return Err(Error::StaleArtifact {
                    path: path.to_path_buf(),
                    expected: recorded.cloned().unwrap_or_default(),
                    found: digest,
                });
            }
        } else {
            return Err(Error::StaleArtifact {
                path: path.to_path_buf(),
                expected: self.config_digest.to_string(),
                found: "no manifest".into(),
            });
        }
        Ok(digest)
    }

    /// Runs `body` unless every output is already present and was produced
    /// from the same config and the same inputs. `body` writes the outputs.
    pub fn run(
        &self,
        inputs: &[PathBuf],
        extra_inputs: BTreeMap<String, String>,
        outputs: &[PathBuf],
        body: impl FnOnce() -> Result<()>,
    ) -> Result<Outcome> {
        let mut input_digests = extra_inputs;
        for p in inputs {
            input_digests.insert(key(p), self.check_input(p)?);
        }
        if !self.force && self.up_to_date(&input_digests, outputs)? {
            log::info!("{}: up to date", self.command);
            return Ok(Outcome::UpToDate);
        }
        body()?;
        let mut output_digests = BTreeMap::new();
        for p in outputs {
            output_digests.insert(key(p), file_digest(p)?);
        }
        let manifest = Manifest {
            command: self.command.to_string(),
            config_digest: self.config_digest.to_string(),
            inputs: input_digests,
            outputs: output_digests,
        };
        for p in outputs {
            manifest.save(p)?;
        }
        Ok(Outcome::Ran)
    }

    fn up_to_date(&self, inputs: &BTreeMap<String, String>, outputs: &[PathBuf]) -> Result<bool> {
        for p in outputs {
            if !p.exists() {
                return Ok(false);
            }
            let Some(m) = Manifest::load(p)? else {
                return Ok(false);
            };
            if m.config_digest != self.config_digest || &m.inputs != inputs {
                return Ok(false);
            }
            if m.outputs.get(&key(p)) != Some(&file_digest(p)?) {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Manifest keys are file names; artifacts live in one work directory
/// (runs and reports one level down).
fn key(path: &Path) -> String {
    let name = |p: &Path| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    match path.parent().and_then(|d| d.file_name()) {
        Some(dir) if dir == "runs" || dir == "reports" => format!("{}/{}", dir.to_string_lossy(), name(path)),
        _ => name(path),
    }
}
