//! Byte-exact rendering of the prompts agents see during play: the game
//! context, the per-round history block, and the personality profile.
//!
//! The wording lives in data files under `data/templates/`; rendering only
//! fills the bracketed slots. Golden-file tests pin every renderer output,
//! so a template edit that changes bytes fails loudly.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bfi::{Dimension, TraitScores};
use crate::game::{PayoffMatrix, RoundOutcome};

const GAME_CONTEXT_TEMPLATE: &str = include_str!("../data/templates/game_context.txt");
const HISTORY_FIRST_ROUND: &str = include_str!("../data/templates/history_first_round.txt");
const HISTORY_BLOCK_TEMPLATE: &str = include_str!("../data/templates/history_block.txt");
const HISTORY_ROUND_LINE_TEMPLATE: &str = include_str!("../data/templates/history_round_line.txt");
const PERSONALITY_TEMPLATE: &str = include_str!("../data/templates/personality_profile.txt");
const ELICITATION_SUFFIX: &str = include_str!("../data/templates/elicitation_suffix.txt");
const RETRY_REMINDER: &str = include_str!("../data/templates/retry_reminder.txt");
const BUCKETS_JSON: &str = include_str!("../data/bucket_descriptions.json");

/// The fixed one-line answer instruction appended after the history block.
/// This wording is an artifact addition, not part of the game description.
pub fn elicitation_suffix() -> &'static str {
    ELICITATION_SUFFIX
}

/// The reminder sent when a reply could not be parsed as a move.
pub fn retry_reminder() -> &'static str {
    RETRY_REMINDER
}

/// "N point" or "N points", matching how the game description phrases its
/// payoff sentences.
fn points_phrase(v: i64) -> String {
    if v == 1 {
        "1 point".to_string()
    } else {
        format!("{v} points")
    }
}

fn substitute(template: &str, pairs: &[(&str, String)]) -> String {
    let mut out = template.to_string();
    for (slot, value) in pairs {
        out = out.replace(slot, value);
    }
    debug_assert!(
        !out.contains("[PAYOFF_")
            && !out.contains("[ITERATIONS]")
            && !out.contains("[ROUND")
            && !out.contains("_SCORE]")
            && !out.contains("_DESC]"),
        "template slot left unfilled: {out}"
    );
    out
}

/// Renders the game description with the configured round count and
/// payoff sentences derived from the matrix.
pub fn render_game_context(iterations: u32, m: &PayoffMatrix) -> String {
    assert!(iterations >= 1, "iterations must be at least 1");
    substitute(
        GAME_CONTEXT_TEMPLATE,
        &[
            ("[PAYOFF_CC_SELF]", points_phrase(m.r())),
            ("[PAYOFF_CC_OPP]", points_phrase(m.r())),
            ("[PAYOFF_CD_SELF]", points_phrase(m.s())),
            ("[PAYOFF_CD_OPP]", points_phrase(m.t())),
            ("[PAYOFF_DC_SELF]", points_phrase(m.t())),
            ("[PAYOFF_DC_OPP]", points_phrase(m.s())),
            ("[PAYOFF_DD_SELF]", points_phrase(m.p())),
            ("[PAYOFF_DD_OPP]", points_phrase(m.p())),
            ("[ITERATIONS]", iterations.to_string()),
        ],
    )
}

/// The completed rounds visible to the agent when it is prompted for a
/// move. Totals are recomputed from the rounds on construction, so they
/// can never drift from the round list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryView {
    pub rounds: Vec<RoundOutcome>,
    pub self_cooperate: u32,
    pub self_defect: u32,
    pub opp_cooperate: u32,
    pub opp_defect: u32,
    pub self_total: i64,
    pub opp_total: i64,
    /// 1-based number of the round about to be played.
    pub current_round: u32,
}

impl HistoryView {
    pub fn from_rounds(rounds: &[RoundOutcome]) -> HistoryView {
        use crate::game::Action;
        let mut view = HistoryView {
            rounds: rounds.to_vec(),
            self_cooperate: 0,
            self_defect: 0,
            opp_cooperate: 0,
            opp_defect: 0,
            self_total: 0,
            opp_total: 0,
            current_round: rounds.len() as u32 + 1,
        };
        for r in rounds {
            match r.self_action {
                Action::Cooperate => view.self_cooperate += 1,
                Action::Defect => view.self_defect += 1,
            }
            match r.opponent_action {
                Action::Cooperate => view.opp_cooperate += 1,
                Action::Defect => view.opp_defect += 1,
            }
            view.self_total += r.self_payoff;
            view.opp_total += r.opponent_payoff;
        }
        view
    }
}

/// Renders the history the agent sees before choosing its move.
///
/// An empty history renders the fixed first-round sentence. Otherwise the
/// block lists every completed round, both players' cooperate/defect
/// counts, both running totals, and the current round number. Counts and
/// points are substituted verbatim with no grammar fix-up, exactly as the
/// block template phrases them.
pub fn render_history(h: &HistoryView) -> String {
    if h.rounds.is_empty() {
        return HISTORY_FIRST_ROUND.to_string();
    }
    let round_lines: Vec<String> = h
        .rounds
        .iter()
        .map(|r| {
            substitute(
                HISTORY_ROUND_LINE_TEMPLATE,
                &[
                    ("[ROUND]", r.round_index.to_string()),
                    ("[SELF_ACTION]", r.self_action.as_str().to_string()),
                    ("[OPP_ACTION]", r.opponent_action.as_str().to_string()),
                    ("[SELF_POINTS]", r.self_payoff.to_string()),
                    ("[OPP_POINTS]", r.opponent_payoff.to_string()),
                ],
            )
        })
        .collect();
    substitute(
        HISTORY_BLOCK_TEMPLATE,
        &[
            ("[ROUNDS_PLAYED]", h.rounds.len().to_string()),
            ("[ROUND_LINES]", round_lines.join("\n")),
            ("[SELF_COOPERATE]", h.self_cooperate.to_string()),
            ("[SELF_DEFECT]", h.self_defect.to_string()),
            ("[OPP_COOPERATE]", h.opp_cooperate.to_string()),
            ("[OPP_DEFECT]", h.opp_defect.to_string()),
            ("[SELF_TOTAL]", h.self_total.to_string()),
            ("[OPP_TOTAL]", h.opp_total.to_string()),
            ("[CURRENT_ROUND]", h.current_round.to_string()),
        ],
    )
}

/// Error for a trait score outside the questionnaire's 1 to 5 range.
#[derive(Debug, Error, PartialEq)]
#[error("score {score} for {dimension} is outside [1, 5]")]
pub struct ScoreOutOfRange {
    pub dimension: Dimension,
    pub score: f64,
}

#[derive(Deserialize)]
struct BucketFile {
    version: u32,
    boundaries: Vec<f64>,
    descriptions: std::collections::BTreeMap<String, Vec<String>>,
}

fn buckets() -> &'static BucketFile {
    static BUCKETS: OnceLock<BucketFile> = OnceLock::new();
    BUCKETS.get_or_init(|| {
        let file: BucketFile = serde_json::from_str(BUCKETS_JSON).expect("bucket table parses");
        assert_eq!(file.version, 1, "unsupported bucket table version");
        assert_eq!(
            file.boundaries,
            vec![1.0, 1.5, 2.5, 3.5, 4.5, 5.0],
            "bucket boundaries are pinned"
        );
        for d in Dimension::ALL {
            let list = file
                .descriptions
                .get(d.code())
                .unwrap_or_else(|| panic!("bucket table is missing {d}"));
            assert_eq!(list.len(), 5, "each dimension has five buckets");
        }
        file
    })
}

/// The natural-language description for a score, under half-open buckets
/// [lo, hi) with the final bucket closed at 5.0.
pub fn bucket_description(
    dimension: Dimension,
    score: f64,
) -> Result<&'static str, ScoreOutOfRange> {
    if !(1.0..=5.0).contains(&score) {
        return Err(ScoreOutOfRange { dimension, score });
    }
    let idx = if score >= 4.5 {
        4
    } else if score >= 3.5 {
        3
    } else if score >= 2.5 {
        2
    } else if score >= 1.5 {
        1
    } else {
        0
    };
    Ok(&buckets().descriptions[dimension.code()][idx])
}

/// How a profile came to be, recorded in run manifests and transcripts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileSource {
    /// Scores taken from a questionnaire measurement (or pinned to one).
    Measured,
    /// One dimension forced to an extreme while the others stay measured.
    Manipulated { dimension: Dimension, value: u8 },
}

/// Trait scores plus their rendered bucket descriptions.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonalityProfile {
    pub scores: TraitScores,
    /// Bucket sentences in E, A, C, N, O order, the order the profile
    /// prompt lists traits in.
    pub descriptions: [String; 5],
    pub source: ProfileSource,
}

/// Trait order used by the profile prompt.
const PROMPT_ORDER: [Dimension; 5] = [
    Dimension::E,
    Dimension::A,
    Dimension::C,
    Dimension::N,
    Dimension::O,
];

impl PersonalityProfile {
    pub fn new(
        scores: TraitScores,
        source: ProfileSource,
    ) -> Result<PersonalityProfile, ScoreOutOfRange> {
        let mut descriptions: [String; 5] = Default::default();
        for (slot, d) in PROMPT_ORDER.into_iter().enumerate() {
            descriptions[slot] = bucket_description(d, scores.get(d))?.to_string();
        }
        Ok(PersonalityProfile {
            scores,
            descriptions,
            source,
        })
    }

    pub fn description(&self, d: Dimension) -> &str {
        let slot = PROMPT_ORDER
            .iter()
            .position(|x| *x == d)
            .expect("known dimension");
        &self.descriptions[slot]
    }
}

/// One decimal place, rounding the stored binary value to nearest with
/// ties to even (the standard formatter's behavior).
fn format_score(v: f64) -> String {
    format!("{v:.1}")
}

/// Renders the full personality prompt: profile header, trait
/// interpretation block, one scored-and-described line per trait, the
/// decision guidelines, and the closing reminder.
///
/// The bracketed trait-list lines in the header are part of the template's
/// fixed wording and stay as they are; only the per-trait score slots and
/// descriptions are substituted.
pub fn render_personality_prompt(p: &PersonalityProfile) -> String {
    substitute(
        PERSONALITY_TEMPLATE,
        &[
            ("[E_SCORE]", format_score(p.scores.e)),
            ("[A_SCORE]", format_score(p.scores.a)),
            ("[C_SCORE]", format_score(p.scores.c)),
            ("[N_SCORE]", format_score(p.scores.n)),
            ("[O_SCORE]", format_score(p.scores.o)),
            ("[E_DESC]", p.description(Dimension::E).to_string()),
            ("[A_DESC]", p.description(Dimension::A).to_string()),
            ("[C_DESC]", p.description(Dimension::C).to_string()),
            ("[N_DESC]", p.description(Dimension::N).to_string()),
            ("[O_DESC]", p.description(Dimension::O).to_string()),
        ],
    )
}
