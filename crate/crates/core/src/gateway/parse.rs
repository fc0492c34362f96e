//! Turns raw reply text into a move. The rule is deliberately narrow:
//! exactly one of the two move words may appear, unnegated. Anything else
//! is a parse error, which makes the caller re-ask rather than guess.

use thiserror::Error;

use crate::game::Action;

/// Why a reply did not yield a move.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum ParseError {
    #[error("reply mentions both moves")]
    Ambiguous,
    #[error("reply mentions no move")]
    NoMove,
    #[error("the move word is negated")]
    Negated,
}

/// True for words that flip the meaning of a following move word.
fn negates(token: &str) -> bool {
    matches!(token, "not" | "no" | "never" | "cannot" | "refuse") || token.ends_with("n't")
}

/// Extracts the move from free-form text.
///
/// The text is lowercased and split into word tokens (letters and
/// apostrophes), so "Cooperate", "\"cooperate\"" and "COOPERATE." all
/// match as whole words while "uncooperative" does not. Exactly one of
/// the two move words must occur; repeated mentions of the same move are
/// fine. A negating word within the three tokens before any occurrence
/// rejects the reply. Total over arbitrary input, never panics.
pub fn parse_action(raw: &str) -> Result<Action, ParseError> {
    let lower = raw.to_lowercase();
    let tokens: Vec<&str> = lower
        .split(|ch: char| !(ch.is_alphabetic() || ch == '\''))
        .filter(|t| !t.is_empty())
        .map(|t| t.trim_matches('\''))
        .filter(|t| !t.is_empty())
        .collect();

    let occurrences = |word: &str| -> Vec<usize> {
        tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| **t == word)
            .map(|(i, _)| i)
            .collect()
    };
    let cooperate = occurrences("cooperate");
    let defect = occurrences("defect");

    let positions = match (cooperate.is_empty(), defect.is_empty()) {
        (true, true) => return Err(ParseError::NoMove),
        (false, false) => return Err(ParseError::Ambiguous),
        (false, true) => &cooperate,
        (true, false) => &defect,
    };
    for &pos in positions {
        let from = pos.saturating_sub(3);
        if tokens[from..pos].iter().any(|t| negates(t)) {
            return Err(ParseError::Negated);
        }
    }
    if cooperate.is_empty() {
        Ok(Action::Defect)
    } else {
        Ok(Action::Cooperate)
    }
}
