//! Deterministic prisoner's dilemma primitives: the move alphabet, the
//! payoff matrix, and per-round resolution, plus the transcript types
//! recorded for every match.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Current layout of [`MatchRecord`] as persisted to transcript JSONL.
pub const TRANSCRIPT_SCHEMA_VERSION: u32 = 1;

/// One of the two moves available to a player each round.
///
/// The serialized forms are exactly `"Cooperate"` and `"Defect"`; the same
/// strings appear verbatim in prompts, transcripts, and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Cooperate,
    Defect,
}

impl Action {
    /// The exact string used in prompts and transcripts.
    pub fn as_str(self) -> &'static str {
        match self {
            Action::Cooperate => "Cooperate",
            Action::Defect => "Defect",
        }
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Error for a payoff matrix that is not a prisoner's dilemma.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("payoff matrix must satisfy T > R > P > S, got T={t} R={r} P={p} S={s}")]
pub struct InvalidMatrix {
    pub t: i64,
    pub r: i64,
    pub p: i64,
    pub s: i64,
}

/// The four payoffs of a prisoner's dilemma: T (temptation), R (reward),
/// P (punishment), S (sucker).
///
/// Construction enforces T > R > P > S, so every instance in the program
/// is a valid dilemma. The default is (5, 3, 1, 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MatrixFields")]
pub struct PayoffMatrix {
    t: i64,
    r: i64,
    p: i64,
    s: i64,
}

#[derive(Deserialize)]
struct MatrixFields {
    t: i64,
    r: i64,
    p: i64,
    s: i64,
}

impl TryFrom<MatrixFields> for PayoffMatrix {
    type Error = InvalidMatrix;

    fn try_from(f: MatrixFields) -> Result<Self, InvalidMatrix> {
        PayoffMatrix::new(f.t, f.r, f.p, f.s)
    }
}

impl PayoffMatrix {
    pub fn new(t: i64, r: i64, p: i64, s: i64) -> Result<Self, InvalidMatrix> {
        if t > r && r > p && p > s {
            Ok(PayoffMatrix { t, r, p, s })
        } else {
            Err(InvalidMatrix { t, r, p, s })
        }
    }

    pub fn t(&self) -> i64 {
        self.t
    }

    pub fn r(&self) -> i64 {
        self.r
    }

    pub fn p(&self) -> i64 {
        self.p
    }

    pub fn s(&self) -> i64 {
        self.s
    }
}

impl Default for PayoffMatrix {
    fn default() -> Self {
        PayoffMatrix {
            t: 5,
            r: 3,
            p: 1,
            s: 0,
        }
    }
}

/// Applies the payoff matrix to a pair of simultaneous moves.
///
/// Returns `(points for a, points for b)`. Swapping the moves swaps the
/// payoffs, so the function is symmetric by construction.
pub fn resolve_round(a: Action, b: Action, m: &PayoffMatrix) -> (i64, i64) {
    match (a, b) {
        (Action::Cooperate, Action::Cooperate) => (m.r, m.r),
        (Action::Cooperate, Action::Defect) => (m.s, m.t),
        (Action::Defect, Action::Cooperate) => (m.t, m.s),
        (Action::Defect, Action::Defect) => (m.p, m.p),
    }
}

/// One completed round, seen from the agent's side of the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundOutcome {
    /// 1-based round number.
    pub round_index: u32,
    pub self_action: Action,
    pub opponent_action: Action,
    pub self_payoff: i64,
    pub opponent_payoff: i64,
}

/// Full transcript of one match: per-round moves and payoffs plus the
/// exact prompts sent to the agent and the raw replies received.
///
/// One record serializes to one JSONL line in the transcript store. Field
/// order is fixed by this struct so identical runs produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub schema_version: u32,
    pub match_id: String,
    pub condition_id: String,
    /// Child seed used for this match's strategy and mock-agent streams.
    pub rng_seed: u64,
    /// The system message sent every round (game context, preceded by the
    /// personality prompt when the condition has one).
    pub system_prompt: String,
    pub rounds: Vec<RoundOutcome>,
    /// The user message sent for each round (history block plus the
    /// answer instruction).
    pub per_round_prompts: Vec<String>,
    /// The raw reply the parsed action was taken from, one per round.
    pub per_round_raw_replies: Vec<String>,
    /// How many sends it took to get a parseable reply, one per round.
    pub per_round_attempts: Vec<u32>,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
}

impl MatchRecord {
    /// Sum of the agent's per-round payoffs.
    pub fn cumulative_payoff(&self) -> i64 {
        self.rounds.iter().map(|r| r.self_payoff).sum()
    }

    /// Sum of the opponent's per-round payoffs.
    pub fn opponent_cumulative_payoff(&self) -> i64 {
        self.rounds.iter().map(|r| r.opponent_payoff).sum()
    }

    /// Count of rounds in which the agent cooperated.
    pub fn cooperate_count(&self) -> usize {
        self.rounds
            .iter()
            .filter(|r| r.self_action == Action::Cooperate)
            .count()
    }

    /// Checks the internal consistency every persisted record must have:
    /// the expected round count, contiguous 1-based round indices, payoffs
    /// that match the matrix, and parallel prompt/reply/attempt lists.
    pub fn check_consistency(&self, expected_rounds: u32, m: &PayoffMatrix) -> Result<(), String> {
        if self.rounds.len() != expected_rounds as usize {
            return Err(format!(
                "match {}: expected {} rounds, found {}",
                self.match_id,
                expected_rounds,
                self.rounds.len()
            ));
        }
        let lists = [
            self.per_round_prompts.len(),
            self.per_round_raw_replies.len(),
            self.per_round_attempts.len(),
        ];
        if lists.iter().any(|&n| n != self.rounds.len()) {
            return Err(format!(
                "match {}: prompt/reply/attempt lists do not align with rounds",
                self.match_id
            ));
        }
        for (i, round) in self.rounds.iter().enumerate() {
            if round.round_index != i as u32 + 1 {
                return Err(format!(
                    "match {}: round {} has index {}",
                    self.match_id,
                    i + 1,
                    round.round_index
                ));
            }
            let (own, opp) = resolve_round(round.self_action, round.opponent_action, m);
            if (own, opp) != (round.self_payoff, round.opponent_payoff) {
                return Err(format!(
                    "match {}: round {} payoffs ({}, {}) disagree with the matrix",
                    self.match_id, round.round_index, round.self_payoff, round.opponent_payoff
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_matrix_is_5_3_1_0() {
        let m = PayoffMatrix::default();
        assert_eq!((m.t(), m.r(), m.p(), m.s()), (5, 3, 1, 0));
    }

    #[test]
    fn payoff_table_is_exhaustive_at_defaults() {
        let m = PayoffMatrix::default();
        assert_eq!(
            resolve_round(Action::Cooperate, Action::Cooperate, &m),
            (3, 3)
        );
        assert_eq!(resolve_round(Action::Cooperate, Action::Defect, &m), (0, 5));
        assert_eq!(resolve_round(Action::Defect, Action::Cooperate, &m), (5, 0));
        assert_eq!(resolve_round(Action::Defect, Action::Defect, &m), (1, 1));
    }

    #[test]
    fn resolve_round_is_symmetric() {
        let m = PayoffMatrix::new(9, 4, 2, -1).unwrap();
        for a in [Action::Cooperate, Action::Defect] {
            for b in [Action::Cooperate, Action::Defect] {
                let (pa, pb) = resolve_round(a, b, &m);
                let (qb, qa) = resolve_round(b, a, &m);
                assert_eq!((pa, pb), (qa, qb));
            }
        }
    }

    #[test]
    fn invalid_orderings_are_rejected() {
        assert!(PayoffMatrix::new(3, 3, 1, 0).is_err());
        assert!(PayoffMatrix::new(5, 3, 0, 1).is_err());
        assert!(PayoffMatrix::new(0, 1, 2, 3).is_err());
    }

    #[test]
    fn deserialization_enforces_the_ordering() {
        let ok: Result<PayoffMatrix, _> = serde_json::from_str(r#"{"t":5,"r":3,"p":1,"s":0}"#);
        assert!(ok.is_ok());
        let bad: Result<PayoffMatrix, _> = serde_json::from_str(r#"{"t":1,"r":3,"p":1,"s":0}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn actions_serialize_to_the_exact_prompt_strings() {
        assert_eq!(
            serde_json::to_string(&Action::Cooperate).unwrap(),
            "\"Cooperate\""
        );
        assert_eq!(
            serde_json::to_string(&Action::Defect).unwrap(),
            "\"Defect\""
        );
        let back: Action = serde_json::from_str("\"Defect\"").unwrap();
        assert_eq!(back, Action::Defect);
    }

    fn record_with_rounds(rounds: Vec<RoundOutcome>) -> MatchRecord {
        let n = rounds.len();
        MatchRecord {
            schema_version: TRANSCRIPT_SCHEMA_VERSION,
            match_id: "t".into(),
            condition_id: "c".into(),
            rng_seed: 0,
            system_prompt: String::new(),
            rounds,
            per_round_prompts: vec![String::new(); n],
            per_round_raw_replies: vec![String::new(); n],
            per_round_attempts: vec![1; n],
            started_at: DateTime::<Utc>::MIN_UTC,
            finished_at: DateTime::<Utc>::MIN_UTC,
        }
    }

    #[test]
    fn cumulative_payoff_sums_rounds() {
        let m = PayoffMatrix::default();
        let mut rounds = Vec::new();
        for i in 0..10u32 {
            let (own, opp) = resolve_round(Action::Defect, Action::Defect, &m);
            rounds.push(RoundOutcome {
                round_index: i + 1,
                self_action: Action::Defect,
                opponent_action: Action::Defect,
                self_payoff: own,
                opponent_payoff: opp,
            });
        }
        let rec = record_with_rounds(rounds);
        assert_eq!(rec.cumulative_payoff(), 10);
        assert_eq!(rec.opponent_cumulative_payoff(), 10);
        assert!(rec.check_consistency(10, &m).is_ok());
    }

    #[test]
    fn consistency_check_catches_payoff_drift() {
        let m = PayoffMatrix::default();
        let rec = record_with_rounds(vec![RoundOutcome {
            round_index: 1,
            self_action: Action::Cooperate,
            opponent_action: Action::Cooperate,
            self_payoff: 4,
            opponent_payoff: 3,
        }]);
        assert!(rec.check_consistency(1, &m).is_err());
    }
}
