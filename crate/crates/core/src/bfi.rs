//! BFI-44 administration and scoring: the questionnaire prompt, reply
//! parsing and validation, reverse-keyed scoring, and aggregation over
//! repeated measurement runs.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::{AgentHandle, GatewayError, Message, Role};

/// The five trait dimensions, in the O, C, E, A, N order used by score
/// tables and radar exports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dimension {
    O,
    C,
    E,
    A,
    N,
}

impl Dimension {
    pub const ALL: [Dimension; 5] = [
        Dimension::O,
        Dimension::C,
        Dimension::E,
        Dimension::A,
        Dimension::N,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Dimension::O => "O",
            Dimension::C => "C",
            Dimension::E => "E",
            Dimension::A => "A",
            Dimension::N => "N",
        }
    }

    pub fn trait_name(self) -> &'static str {
        match self {
            Dimension::O => "Openness",
            Dimension::C => "Conscientiousness",
            Dimension::E => "Extraversion",
            Dimension::A => "Agreeableness",
            Dimension::N => "Neuroticism",
        }
    }

    pub fn from_code(code: &str) -> Option<Dimension> {
        Dimension::ALL.into_iter().find(|d| d.code() == code)
    }
}

impl std::fmt::Display for Dimension {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

/// One questionnaire item.
#[derive(Debug, Clone, Deserialize)]
pub struct BfiItem {
    /// Letter code as it appears in the questionnaire, "a" through "ar".
    pub label: String,
    pub text: String,
    pub dimension: Dimension,
    /// Reverse-keyed items contribute 6 - rating to their dimension mean.
    pub reverse: bool,
}

#[derive(Deserialize)]
struct ItemFile {
    version: u32,
    items: Vec<BfiItem>,
}

const ITEMS_JSON: &str = include_str!("../data/bfi_items.json");

/// SHA-256 of the embedded item table. The keying map decides every score
/// in the system, so accidental edits must fail loudly rather than shift
/// results.
const ITEMS_SHA256: &str = "41858d1811242244dd7cd869f7794f43cb53d2f5f0bef88eb085d6910e05dae5";

/// Expected per-dimension item counts for the 44-item inventory.
const DIMENSION_COUNTS: [(Dimension, usize); 5] = [
    (Dimension::E, 8),
    (Dimension::A, 9),
    (Dimension::C, 9),
    (Dimension::N, 8),
    (Dimension::O, 10),
];

/// Label for the 0-based questionnaire position: a..z, then aa..ar.
pub fn label_for(index: usize) -> String {
    let letter = |i: usize| (b'a' + i as u8) as char;
    if index < 26 {
        letter(index).to_string()
    } else {
        format!("a{}", letter(index - 26))
    }
}

/// The 44 questionnaire items in presentation order.
///
/// Panics if the embedded table was tampered with: the checksum, the item
/// count, the label sequence, and the per-dimension counts are all pinned.
pub fn inventory() -> &'static [BfiItem] {
    static ITEMS: OnceLock<Vec<BfiItem>> = OnceLock::new();
    ITEMS.get_or_init(|| {
        let digest = hex_digest(ITEMS_JSON.as_bytes());
        assert_eq!(
            digest, ITEMS_SHA256,
            "embedded item table does not match its pinned checksum"
        );
        let file: ItemFile = serde_json::from_str(ITEMS_JSON).expect("item table parses");
        assert_eq!(file.version, 1, "unsupported item table version");
        assert_eq!(file.items.len(), 44, "inventory must hold 44 items");
        for (i, item) in file.items.iter().enumerate() {
            assert_eq!(
                item.label,
                label_for(i),
                "item labels must run a..ar in order"
            );
        }
        for (dim, expected) in DIMENSION_COUNTS {
            let n = file.items.iter().filter(|it| it.dimension == dim).count();
            assert_eq!(n, expected, "dimension {dim} must have {expected} items");
        }
        file.items
    })
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

const QUESTIONNAIRE: &str = include_str!("../data/templates/bfi_questionnaire.txt");

/// The questionnaire prompt presented to agents, byte-for-byte.
pub fn render_bfi_prompt() -> String {
    QUESTIONNAIRE.to_string()
}

/// Why a raw questionnaire reply was rejected. The administration loop
/// re-presents the questionnaire on any of these.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("line {0:?} is not an \"(label) rating\" entry")]
    UnparseableLine(String),
    #[error("unknown item label ({0})")]
    UnknownLabel(String),
    #[error("item ({0}) appears more than once")]
    DuplicateItem(String),
    #[error("item ({label}) has non-numeric rating {text:?}")]
    NonNumeric { label: String, text: String },
    #[error("item ({label}) has out-of-range rating {value}, expected 1 to 5")]
    OutOfRange { label: String, value: i64 },
    #[error("item ({0}) is missing from the reply")]
    MissingItem(String),
}

/// A complete, validated set of 44 ratings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseSet {
    /// Ratings by questionnaire position, each in 1..=5.
    ratings: Vec<u8>,
    /// The reply text the ratings were parsed from.
    pub raw_reply: String,
    /// How many presentations it took to obtain this reply.
    pub attempt_count: u32,
}

impl ResponseSet {
    /// Builds a set directly from per-position ratings, for tests and
    /// fixture construction.
    pub fn from_ratings(ratings: Vec<u8>) -> Result<ResponseSet, FormatError> {
        if ratings.len() != 44 {
            let missing = label_for(ratings.len().min(43));
            return Err(FormatError::MissingItem(missing));
        }
        for (i, &r) in ratings.iter().enumerate() {
            if !(1..=5).contains(&r) {
                return Err(FormatError::OutOfRange {
                    label: label_for(i),
                    value: r as i64,
                });
            }
        }
        Ok(ResponseSet {
            ratings,
            raw_reply: String::new(),
            attempt_count: 1,
        })
    }

    pub fn ratings(&self) -> &[u8] {
        &self.ratings
    }

    pub fn rating(&self, label: &str) -> Option<u8> {
        let idx = inventory().iter().position(|it| it.label == label)?;
        Some(self.ratings[idx])
    }

    /// The reply in canonical form, one "(label) rating" line per item in
    /// questionnaire order.
    pub fn canonical_text(&self) -> String {
        inventory()
            .iter()
            .zip(&self.ratings)
            .map(|(item, r)| format!("({}) {}", item.label, r))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Parses a raw questionnaire reply of the form "(a) 1\n(b) 2\n...".
///
/// Blank lines and surrounding whitespace are tolerated, and the literal
/// two-character sequence `\n` is accepted as a separator because the
/// format instruction displays it and some models echo it back. Every
/// non-blank line must be an item entry; the first offense is reported.
pub fn parse_bfi_reply(raw: &str) -> Result<ResponseSet, FormatError> {
    let items = inventory();
    let mut seen: BTreeMap<usize, u8> = BTreeMap::new();
    let normalized = raw.replace("\\n", "\n");
    for line in normalized.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let inner = line
            .strip_prefix('(')
            .and_then(|rest| rest.split_once(')'))
            .ok_or_else(|| FormatError::UnparseableLine(line.to_string()))?;
        let (label, value_text) = inner;
        let label = label.trim();
        let value_text = value_text.trim();
        let idx = items
            .iter()
            .position(|it| it.label == label)
            .ok_or_else(|| FormatError::UnknownLabel(label.to_string()))?;
        if seen.contains_key(&idx) {
            return Err(FormatError::DuplicateItem(label.to_string()));
        }
        let value: i64 = value_text.parse().map_err(|_| FormatError::NonNumeric {
            label: label.to_string(),
            text: value_text.to_string(),
        })?;
        if !(1..=5).contains(&value) {
            return Err(FormatError::OutOfRange {
                label: label.to_string(),
                value,
            });
        }
        seen.insert(idx, value as u8);
    }
    for (i, item) in items.iter().enumerate() {
        if !seen.contains_key(&i) {
            return Err(FormatError::MissingItem(item.label.clone()));
        }
    }
    Ok(ResponseSet {
        ratings: (0..items.len()).map(|i| seen[&i]).collect(),
        raw_reply: raw.to_string(),
        attempt_count: 1,
    })
}

/// Scores for the five dimensions. Each is the arithmetic mean of its
/// items' reverse-corrected ratings and therefore always lies in [1, 5].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraitScores {
    pub o: f64,
    pub c: f64,
    pub e: f64,
    pub a: f64,
    pub n: f64,
}

impl TraitScores {
    pub fn uniform(v: f64) -> TraitScores {
        TraitScores {
            o: v,
            c: v,
            e: v,
            a: v,
            n: v,
        }
    }

    pub fn get(&self, d: Dimension) -> f64 {
        match d {
            Dimension::O => self.o,
            Dimension::C => self.c,
            Dimension::E => self.e,
            Dimension::A => self.a,
            Dimension::N => self.n,
        }
    }

    pub fn set(&mut self, d: Dimension, v: f64) {
        match d {
            Dimension::O => self.o = v,
            Dimension::C => self.c = v,
            Dimension::E => self.e = v,
            Dimension::A => self.a = v,
            Dimension::N => self.n = v,
        }
    }

    /// Returns a copy with one dimension overridden.
    pub fn with(&self, d: Dimension, v: f64) -> TraitScores {
        let mut out = *self;
        out.set(d, v);
        out
    }

    /// Values in O, C, E, A, N order, the axis order of radar exports.
    pub fn as_array_ocean(&self) -> [f64; 5] {
        [self.o, self.c, self.e, self.a, self.n]
    }

    pub fn in_bounds(&self) -> bool {
        self.as_array_ocean()
            .iter()
            .all(|v| (1.0..=5.0).contains(v))
    }
}

/// Applies reverse keying (rating' = 6 - rating) and averages per
/// dimension.
pub fn score_bfi(r: &ResponseSet) -> TraitScores {
    let mut sums: BTreeMap<Dimension, (f64, usize)> = BTreeMap::new();
    for (item, &rating) in inventory().iter().zip(r.ratings()) {
        let corrected = if item.reverse {
            6.0 - rating as f64
        } else {
            rating as f64
        };
        let entry = sums.entry(item.dimension).or_insert((0.0, 0));
        entry.0 += corrected;
        entry.1 += 1;
    }
    let mean = |d: Dimension| {
        let (sum, count) = sums[&d];
        sum / count as f64
    };
    TraitScores {
        o: mean(Dimension::O),
        c: mean(Dimension::C),
        e: mean(Dimension::E),
        a: mean(Dimension::A),
        n: mean(Dimension::N),
    }
}

/// Per-dimension mean and standard deviation over independent measurement
/// runs.
///
/// The standard deviation is the population form (divide by n, not n - 1).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraitStats {
    pub mean: TraitScores,
    pub sd: TraitScores,
    pub n_runs: usize,
}

/// Aggregates per-run scores into means and population SDs.
pub fn aggregate(scores: &[TraitScores]) -> TraitStats {
    assert!(!scores.is_empty(), "aggregate needs at least one run");
    let n = scores.len() as f64;
    let mut mean = TraitScores::uniform(0.0);
    let mut sd = TraitScores::uniform(0.0);
    for d in Dimension::ALL {
        let m = scores.iter().map(|s| s.get(d)).sum::<f64>() / n;
        let var = scores.iter().map(|s| (s.get(d) - m).powi(2)).sum::<f64>() / n;
        mean.set(d, m);
        sd.set(d, var.sqrt());
    }
    TraitStats {
        mean,
        sd,
        n_runs: scores.len(),
    }
}

/// One full personality measurement: per-run scores plus their aggregate.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub stats: TraitStats,
    pub runs: Vec<TraitScores>,
    pub responses: Vec<ResponseSet>,
}

/// Why a measurement could not be completed.
#[derive(Debug, Error)]
pub enum MeasurementFailure {
    #[error("run {run}: reply still malformed after {attempts} attempts: {last_error}")]
    ExhaustedRetries {
        run: usize,
        attempts: u32,
        last_error: FormatError,
    },
    #[error("run {run}: backend failed: {source}")]
    Backend {
        run: usize,
        #[source]
        source: GatewayError,
    },
}

/// Administers the questionnaire `n_runs` times and aggregates the scores.
///
/// Each run is a fresh conversation. Within a run, a malformed reply makes
/// the loop present the identical questionnaire again, up to `max_attempts`
/// total presentations; exhausting them fails the whole measurement rather
/// than fabricating ratings.
pub fn measure_personality(
    agent: &mut AgentHandle,
    n_runs: usize,
    max_attempts: u32,
) -> Result<Measurement, MeasurementFailure> {
    assert!(n_runs >= 1, "n_runs must be at least 1");
    assert!(max_attempts >= 1, "max_attempts must be at least 1");
    let prompt = render_bfi_prompt();
    let mut runs = Vec::with_capacity(n_runs);
    let mut responses = Vec::with_capacity(n_runs);
    for run in 0..n_runs {
        let mut conversation = vec![Message {
            role: Role::User,
            content: prompt.clone(),
        }];
        let mut last_error = None;
        let mut parsed = None;
        for attempt in 1..=max_attempts {
            agent.set_context_key(format!("bfi/run{run}"));
            let raw = agent
                .complete_raw(&conversation)
                .map_err(|source| MeasurementFailure::Backend { run, source })?;
            match parse_bfi_reply(&raw) {
                Ok(mut set) => {
                    set.attempt_count = attempt;
                    parsed = Some(set);
                    break;
                }
                Err(err) => {
                    log::warn!("bfi run {run} attempt {attempt} rejected: {err}");
                    conversation.push(Message {
                        role: Role::Assistant,
                        content: raw,
                    });
                    conversation.push(Message {
                        role: Role::User,
                        content: prompt.clone(),
                    });
                    last_error = Some(err);
                }
            }
        }
        match parsed {
            Some(set) => {
                runs.push(score_bfi(&set));
                responses.push(set);
            }
            None => {
                return Err(MeasurementFailure::ExhaustedRetries {
                    run,
                    attempts: max_attempts,
                    last_error: last_error.expect("at least one attempt was made"),
                })
            }
        }
    }
    Ok(Measurement {
        stats: aggregate(&runs),
        runs,
        responses,
    })
}

/// Writes per-run scores as CSV with one row per run, full precision.
pub fn write_scores_csv(path: &Path, runs: &[TraitScores]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["run_id", "O", "C", "E", "A", "N"])
        .map_err(std::io::Error::other)?;
    for (i, s) in runs.iter().enumerate() {
        let row = [
            (i + 1).to_string(),
            s.o.to_string(),
            s.c.to_string(),
            s.e.to_string(),
            s.a.to_string(),
            s.n.to_string(),
        ];
        w.write_record(&row).map_err(std::io::Error::other)?;
    }
    w.flush()
}

/// Reads per-run scores written by [`write_scores_csv`].
pub fn read_scores_csv(path: &Path) -> std::io::Result<Vec<TraitScores>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers().map_err(std::io::Error::other)?.clone();
    let expected = ["run_id", "O", "C", "E", "A", "N"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(std::io::Error::other(format!(
            "unexpected score CSV header {headers:?}"
        )));
    }
    let mut runs = Vec::new();
    for record in r.records() {
        let record = record.map_err(std::io::Error::other)?;
        let field = |i: usize| -> std::io::Result<f64> {
            record
                .get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| std::io::Error::other(format!("bad score row {record:?}")))
        };
        runs.push(TraitScores {
            o: field(1)?,
            c: field(2)?,
            e: field(3)?,
            a: field(4)?,
            n: field(5)?,
        });
    }
    Ok(runs)
}

/// Reference trait scores shipped with the artifact: measured means for
/// the supported chat models (usable as pinned base profiles in configs)
/// and the human self-report averages used as the comparison series in
/// radar exports. All values are on the 1-5 scale.
pub mod reference {
    use super::TraitScores;

    pub const GPT35_TURBO: TraitScores = TraitScores {
        o: 4.58,
        c: 4.06,
        e: 3.78,
        a: 4.24,
        n: 1.96,
    };
    pub const GPT35_TURBO_SD: TraitScores = TraitScores {
        o: 0.12,
        c: 0.12,
        e: 0.11,
        a: 0.13,
        n: 0.20,
    };

    pub const GPT4O: TraitScores = TraitScores {
        o: 4.68,
        c: 4.12,
        e: 3.15,
        a: 4.27,
        n: 1.98,
    };
    pub const GPT4O_SD: TraitScores = TraitScores {
        o: 0.25,
        c: 0.32,
        e: 0.28,
        a: 0.32,
        n: 0.39,
    };

    pub const GPT5: TraitScores = TraitScores {
        o: 4.69,
        c: 4.69,
        e: 3.10,
        a: 4.27,
        n: 2.11,
    };
    pub const GPT5_SD: TraitScores = TraitScores {
        o: 0.17,
        c: 0.16,
        e: 0.37,
        a: 0.18,
        n: 0.21,
    };

    pub const HUMAN: TraitScores = TraitScores {
        o: 3.98,
        c: 3.55,
        e: 3.18,
        a: 3.66,
        n: 3.04,
    };
    pub const HUMAN_SD: TraitScores = TraitScores {
        o: 0.66,
        c: 0.73,
        e: 0.90,
        a: 0.72,
        n: 0.88,
    };

    /// Pinned model profiles by model name, for config resolution.
    pub fn by_model_name(name: &str) -> Option<TraitScores> {
        match name {
            "gpt-3.5-turbo" => Some(GPT35_TURBO),
            "gpt-4o" => Some(GPT4O),
            "gpt-5" => Some(GPT5),
            _ => None,
        }
    }
}
