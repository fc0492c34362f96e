//! Run bookkeeping: which (condition, trial) pairs have finished, keyed
//! by a config hash so a manifest can never be resumed with a different
//! setup. The JSONL transcripts stay the source of truth; the manifest
//! accelerates resume and is reconciled against them on load.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::conditions::ExperimentCondition;
use crate::game::{MatchRecord, PayoffMatrix};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// The interpretation of the trial count, recorded verbatim so readers
/// of old runs never have to guess.
pub const TRIAL_SEMANTICS: &str =
    "trials count independent matches per (condition, opponent) cell; no state crosses trials";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest is malformed: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("manifest belongs to config {found}, not {expected}")]
    ConfigMismatch { expected: String, found: String },
    #[error("manifest schema version {0} is not supported")]
    UnsupportedVersion(u32),
    #[error("transcript line {line} of {path} is malformed: {reason}")]
    BadTranscript {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

/// Completion state of one condition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionStatus {
    pub condition: ExperimentCondition,
    /// Trial indices with a persisted transcript.
    pub completed_trials: BTreeSet<u32>,
    /// Trial indices whose last execution failed; retried on resume.
    pub failed_trials: BTreeSet<u32>,
}

impl ConditionStatus {
    pub fn missing_trials(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.condition.trials).filter(|t| !self.completed_trials.contains(t))
    }

    pub fn is_complete(&self) -> bool {
        self.completed_trials.len() == self.condition.trials as usize
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub run_id: String,
    pub config_sha256: String,
    pub master_seed: u64,
    pub trial_semantics: String,
    pub fixture_mode: bool,
    /// The payoffs every match in the run was resolved with; analysis
    /// normalizes against this rather than re-reading the config.
    pub matrix: PayoffMatrix,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub conditions: Vec<ConditionStatus>,
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

pub fn transcripts_dir(dir: &Path) -> PathBuf {
    dir.join("transcripts")
}

pub fn transcript_path(dir: &Path, condition_id: &str) -> PathBuf {
    transcripts_dir(dir).join(format!("{condition_id}.jsonl"))
}

/// Builds the match identifier for one (condition, trial) pair and
/// parses it back. The trial index rides inside the id so transcripts
/// alone can rebuild completion state.
pub fn match_id(condition_id: &str, trial: u32) -> String {
    format!("{condition_id}/t{trial}")
}

pub fn trial_of_match_id(id: &str) -> Option<u32> {
    id.rsplit_once("/t")?.1.parse().ok()
}

impl RunManifest {
    pub fn new(
        run_id: String,
        config_sha256: String,
        master_seed: u64,
        fixture_mode: bool,
        matrix: PayoffMatrix,
        conditions: Vec<ExperimentCondition>,
        now: DateTime<Utc>,
    ) -> RunManifest {
        RunManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            run_id,
            config_sha256,
            master_seed,
            trial_semantics: TRIAL_SEMANTICS.to_string(),
            fixture_mode,
            matrix,
            created_at: now,
            updated_at: now,
            conditions: conditions
                .into_iter()
                .map(|condition| ConditionStatus {
                    condition,
                    completed_trials: BTreeSet::new(),
                    failed_trials: BTreeSet::new(),
                })
                .collect(),
        }
    }

    /// Persists atomically: the new content lands under a temporary name
    /// and replaces the old manifest in one rename, so an interrupt can
    /// never leave a half-written manifest behind.
    pub fn save(&self, dir: &Path, now: DateTime<Utc>) -> Result<(), ManifestError> {
        let mut copy = self.clone();
        copy.updated_at = now;
        let path = manifest_path(dir);
        let tmp = dir.join("manifest.json.tmp");
        let body = serde_json::to_vec_pretty(&copy)?;
        fs::write(&tmp, body).map_err(|source| ManifestError::Io {
            path: tmp.clone(),
            source,
        })?;
        fs::rename(&tmp, &path).map_err(|source| ManifestError::Io { path, source })?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<RunManifest, ManifestError> {
        let path = manifest_path(dir);
        let text = fs::read_to_string(&path).map_err(|source| ManifestError::Io {
            path: path.clone(),
            source,
        })?;
        let manifest: RunManifest = serde_json::from_str(&text)?;
        if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(ManifestError::UnsupportedVersion(manifest.schema_version));
        }
        Ok(manifest)
    }

    pub fn exists(dir: &Path) -> bool {
        manifest_path(dir).exists()
    }

    pub fn expect_config(&self, config_sha256: &str) -> Result<(), ManifestError> {
        if self.config_sha256 != config_sha256 {
            return Err(ManifestError::ConfigMismatch {
                expected: config_sha256.to_string(),
                found: self.config_sha256.clone(),
            });
        }
        Ok(())
    }

    /// Folds the transcripts back into completion state. A trial counts
    /// as completed when its record is on disk, whatever the manifest
    /// said; this makes resume safe after a crash between the JSONL
    /// append and the manifest write.
    pub fn reconcile(&mut self, dir: &Path) -> Result<(), ManifestError> {
        for status in &mut self.conditions {
            let path = transcript_path(dir, &status.condition.id);
            if !path.exists() {
                continue;
            }
            let file = fs::File::open(&path).map_err(|source| ManifestError::Io {
                path: path.clone(),
                source,
            })?;
            for (index, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|source| ManifestError::Io {
                    path: path.clone(),
                    source,
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: MatchRecord =
                    serde_json::from_str(&line).map_err(|e| ManifestError::BadTranscript {
                        path: path.clone(),
                        line: index + 1,
                        reason: e.to_string(),
                    })?;
                let trial = trial_of_match_id(&record.match_id).ok_or_else(|| {
                    ManifestError::BadTranscript {
                        path: path.clone(),
                        line: index + 1,
                        reason: format!("match id {:?} carries no trial index", record.match_id),
                    }
                })?;
                status.completed_trials.insert(trial);
                status.failed_trials.remove(&trial);
            }
        }
        Ok(())
    }

    pub fn total_trials(&self) -> u64 {
        self.conditions
            .iter()
            .map(|s| s.condition.trials as u64)
            .sum()
    }

    pub fn completed_trials(&self) -> u64 {
        self.conditions
            .iter()
            .map(|s| s.completed_trials.len() as u64)
            .sum()
    }

    pub fn failed_trials(&self) -> u64 {
        self.conditions
            .iter()
            .map(|s| s.failed_trials.len() as u64)
            .sum()
    }
}
