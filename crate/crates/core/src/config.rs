//! Run configuration: one TOML file describes the models, experiment
//! selection, payoffs, seeds, and output behavior of a run. The parsed
//! form also yields the canonical hash that names the run, so identical
//! configs always map to the same run id.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bfi::TraitScores;
use crate::game::{InvalidMatrix, PayoffMatrix};
use crate::gateway::live::{
    ModelConfig, ReasoningEffort, Sampling, Verbosity, DEFAULT_TEMPERATURE,
};
use crate::strategy::StrategyKind;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid payoffs: {0}")]
    Payoffs(#[from] InvalidMatrix),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Which phases of the pipeline a game run executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Game runs without any personality prompt.
    Baseline,
    /// Game runs with the model's own measured profile prepended.
    Informed,
    /// Game runs with one dimension of the profile forced to 1 or 5.
    Manipulated,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Baseline, Mode::Informed, Mode::Manipulated];
}

/// How a model's replies are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// Chat-completion HTTP endpoint.
    Live,
    /// Fixed reply list, cycled.
    Scripted,
    /// Parametric persona driven by the model's profile.
    Persona,
    /// Recorded replies from a JSON fixture file.
    Replay,
}

fn default_trials() -> u32 {
    100
}
fn default_rounds() -> u32 {
    10
}
fn default_parallelism() -> usize {
    4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub master_seed: u64,
    #[serde(default = "default_trials")]
    pub trials: u32,
    #[serde(default = "default_rounds")]
    pub rounds: u32,
    /// Deterministic mode: virtual timestamps, no live backends allowed.
    #[serde(default)]
    pub fixture_mode: bool,
    /// Overrides the hash-derived run id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

fn default_t() -> i64 {
    5
}
fn default_r() -> i64 {
    3
}
fn default_p() -> i64 {
    1
}
fn default_s() -> i64 {
    0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayoffSection {
    #[serde(default = "default_t")]
    pub t: i64,
    #[serde(default = "default_r")]
    pub r: i64,
    #[serde(default = "default_p")]
    pub p: i64,
    #[serde(default = "default_s")]
    pub s: i64,
}

impl Default for PayoffSection {
    fn default() -> PayoffSection {
        PayoffSection {
            t: default_t(),
            r: default_r(),
            p: default_p(),
            s: default_s(),
        }
    }
}

fn default_timeout_secs() -> u64 {
    60
}
fn default_max_retries() -> u32 {
    5
}
fn default_rpm() -> u32 {
    60
}

/// One model entry. Which fields are required depends on the backend
/// kind; `validate` enforces the combinations.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub backend: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_effort: Option<ReasoningEffort>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verbosity: Option<Verbosity>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_rpm")]
    pub requests_per_minute: u32,
    /// Reply list for the scripted backend, cycled per elicitation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<Vec<String>>,
    /// Recorded-reply fixture for the replay backend. Relative paths are
    /// resolved against the config file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay_file: Option<PathBuf>,
}

impl ModelSpec {
    /// Resolves the sampling mode: explicit temperature, explicit
    /// reasoning pair, or the 0.7 temperature default when nothing is
    /// set. Mixing the two modes is an error.
    pub fn sampling(&self) -> Result<Sampling, ConfigError> {
        match (self.temperature, self.reasoning_effort, self.verbosity) {
            (Some(t), None, None) => Ok(Sampling::Temperature(t)),
            (None, Some(effort), Some(verbosity)) => Ok(Sampling::Reasoning { effort, verbosity }),
            (None, None, None) => Ok(Sampling::Temperature(DEFAULT_TEMPERATURE)),
            (Some(_), _, _) => Err(ConfigError::Invalid(format!(
                "model {}: temperature and reasoning settings are mutually exclusive",
                self.name
            ))),
            _ => Err(ConfigError::Invalid(format!(
                "model {}: reasoning_effort and verbosity must be set together",
                self.name
            ))),
        }
    }

    /// Builds the live-endpoint config. Only valid for `backend = "live"`.
    pub fn live_config(&self) -> Result<ModelConfig, ConfigError> {
        let endpoint = self.endpoint.clone().ok_or_else(|| {
            ConfigError::Invalid(format!(
                "model {}: live backend needs an endpoint",
                self.name
            ))
        })?;
        let api_key_env = self.api_key_env.clone().ok_or_else(|| {
            ConfigError::Invalid(format!(
                "model {}: live backend needs api_key_env",
                self.name
            ))
        })?;
        let config = ModelConfig {
            model_name: self.name.clone(),
            endpoint,
            api_key_env,
            sampling: self.sampling()?,
            timeout: Duration::from_secs(self.timeout_secs),
            max_retries: self.max_retries,
            requests_per_minute: self.requests_per_minute,
        };
        config
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("model {}: {e}", self.name)))?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentsSection {
    /// Game phases to run; the questionnaire phase has its own verb.
    pub modes: Vec<Mode>,
    #[serde(default = "default_opponents")]
    pub opponents: Vec<String>,
}

fn default_opponents() -> Vec<String> {
    StrategyKind::ALL
        .iter()
        .map(|k| k.name().to_string())
        .collect()
}

impl Default for ExperimentsSection {
    fn default() -> ExperimentsSection {
        ExperimentsSection {
            modes: vec![Mode::Baseline],
            opponents: default_opponents(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoresSection {
    pub o: f64,
    pub c: f64,
    pub e: f64,
    pub a: f64,
    pub n: f64,
}

impl From<ScoresSection> for TraitScores {
    fn from(s: ScoresSection) -> TraitScores {
        TraitScores {
            o: s.o,
            c: s.c,
            e: s.e,
            a: s.a,
            n: s.n,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasuredRef {
    /// Per-run scores CSV as written by the questionnaire phase; the
    /// profile is the column mean. Relative paths are resolved against
    /// the config file's directory.
    pub csv: PathBuf,
}

/// Where informed/manipulated profiles come from, per model. Pinned
/// scores win over a measured CSV when both are present.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfilesSection {
    #[serde(default)]
    pub pinned: BTreeMap<String, ScoresSection>,
    #[serde(default)]
    pub measured: BTreeMap<String, MeasuredRef>,
}

fn default_n_runs() -> u32 {
    20
}
fn default_max_attempts() -> u32 {
    5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BfiSection {
    #[serde(default = "default_n_runs")]
    pub n_runs: u32,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
}

impl Default for BfiSection {
    fn default() -> BfiSection {
        BfiSection {
            n_runs: default_n_runs(),
            max_attempts: default_max_attempts(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    #[serde(default)]
    pub payoffs: PayoffSection,
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub experiments: ExperimentsSection,
    #[serde(default)]
    pub profiles: ProfilesSection,
    #[serde(default)]
    pub bfi: BfiSection,
}

impl RunConfig {
    pub fn parse_str(text: &str) -> Result<RunConfig, ConfigError> {
        let config: RunConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Parses and validates a config file. Relative fixture paths inside
    /// the config are resolved against the file's directory.
    pub fn from_path(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = RunConfig::parse_str(&text)?;
        if let Some(dir) = path.parent() {
            config.resolve_paths(dir);
        }
        Ok(config)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        for model in &mut self.models {
            if let Some(file) = &mut model.replay_file {
                if file.is_relative() {
                    *file = dir.join(&file);
                }
            }
        }
        for measured in self.profiles.measured.values_mut() {
            if measured.csv.is_relative() {
                measured.csv = dir.join(&measured.csv);
            }
        }
    }

    pub fn matrix(&self) -> Result<PayoffMatrix, InvalidMatrix> {
        PayoffMatrix::new(
            self.payoffs.t,
            self.payoffs.r,
            self.payoffs.p,
            self.payoffs.s,
        )
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.run.trials == 0 {
            return Err(ConfigError::Invalid("trials must be at least 1".into()));
        }
        if self.run.rounds == 0 {
            return Err(ConfigError::Invalid("rounds must be at least 1".into()));
        }
        if self.run.parallelism == 0 {
            return Err(ConfigError::Invalid(
                "parallelism must be at least 1".into(),
            ));
        }
        self.matrix()?;
        if self.models.is_empty() {
            return Err(ConfigError::Invalid(
                "at least one model is required".into(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for model in &self.models {
            if model.name.is_empty()
                || !model
                    .name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
            {
                return Err(ConfigError::Invalid(format!(
                    "model name {:?} must be non-empty and use only [A-Za-z0-9._-]",
                    model.name
                )));
            }
            if !seen.insert(&model.name) {
                return Err(ConfigError::Invalid(format!(
                    "duplicate model name {}",
                    model.name
                )));
            }
            match model.backend {
                BackendKind::Live => {
                    model.live_config()?;
                    if self.run.fixture_mode {
                        return Err(ConfigError::Invalid(format!(
                            "model {}: live backends are not allowed in fixture mode",
                            model.name
                        )));
                    }
                }
                BackendKind::Scripted => {
                    if model.script.as_ref().is_none_or(|s| s.is_empty()) {
                        return Err(ConfigError::Invalid(format!(
                            "model {}: scripted backend needs a non-empty script",
                            model.name
                        )));
                    }
                }
                BackendKind::Replay => {
                    if model.replay_file.is_none() {
                        return Err(ConfigError::Invalid(format!(
                            "model {}: replay backend needs replay_file",
                            model.name
                        )));
                    }
                }
                BackendKind::Persona => {
                    model.sampling()?;
                }
            }
        }
        if self.experiments.modes.is_empty() {
            return Err(ConfigError::Invalid("at least one mode is required".into()));
        }
        let mut mode_seen = std::collections::BTreeSet::new();
        for mode in &self.experiments.modes {
            if !mode_seen.insert(mode) {
                return Err(ConfigError::Invalid(format!("duplicate mode {mode:?}")));
            }
        }
        if self.experiments.opponents.is_empty() {
            return Err(ConfigError::Invalid(
                "at least one opponent is required".into(),
            ));
        }
        let mut opp_seen = std::collections::BTreeSet::new();
        for opp in &self.experiments.opponents {
            if StrategyKind::from_name(opp).is_none() {
                return Err(ConfigError::Invalid(format!(
                    "unknown opponent strategy {opp:?}"
                )));
            }
            if !opp_seen.insert(opp) {
                return Err(ConfigError::Invalid(format!("duplicate opponent {opp}")));
            }
        }
        let needs_profiles = self
            .experiments
            .modes
            .iter()
            .any(|m| matches!(m, Mode::Informed | Mode::Manipulated));
        if needs_profiles {
            for model in &self.models {
                if !self.profiles.pinned.contains_key(&model.name)
                    && !self.profiles.measured.contains_key(&model.name)
                {
                    return Err(ConfigError::Invalid(format!(
                        "model {}: informed/manipulated modes need a pinned or measured profile",
                        model.name
                    )));
                }
            }
        }
        if self.bfi.n_runs == 0 {
            return Err(ConfigError::Invalid("bfi.n_runs must be at least 1".into()));
        }
        if self.bfi.max_attempts == 0 {
            return Err(ConfigError::Invalid(
                "bfi.max_attempts must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Hash over everything that shapes outputs. The run-id override and
    /// the worker count are excluded: the former must not feed back into
    /// itself, and the latter cannot change results because persistence
    /// reorders records deterministically.
    pub fn content_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.run.run_id = None;
        canonical.run.parallelism = 0;
        let json = serde_json::to_string(&canonical).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The run's identifier: an explicit override, or a prefix of the
    /// content hash so identical configs share an id.
    pub fn run_id(&self) -> String {
        match &self.run.run_id {
            Some(id) => id.clone(),
            None => format!("run-{}", &self.content_hash()[..12]),
        }
    }

    /// Resolves the base profile for one model: pinned scores win, then
    /// the mean of a measured-scores CSV. `Ok(None)` when the config
    /// declares neither.
    pub fn profile_for(&self, model: &str) -> Result<Option<TraitScores>, ConfigError> {
        if let Some(pinned) = self.profiles.pinned.get(model) {
            return Ok(Some((*pinned).into()));
        }
        let Some(measured) = self.profiles.measured.get(model) else {
            return Ok(None);
        };
        let runs =
            crate::bfi::read_scores_csv(&measured.csv).map_err(|source| ConfigError::Io {
                path: measured.csv.clone(),
                source,
            })?;
        if runs.is_empty() {
            return Err(ConfigError::Invalid(format!(
                "measured profile CSV {} holds no runs",
                measured.csv.display()
            )));
        }
        Ok(Some(crate::bfi::aggregate(&runs).mean))
    }
}
