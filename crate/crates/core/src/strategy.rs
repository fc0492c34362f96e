//! The five fixed opponent strategies, behind one interface. Every match
//! gets a fresh instance; RANDOM draws from a per-match seeded stream so
//! whole matches replay exactly.

use crate::game::Action;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Names of the available opponent strategies, exactly as they appear in
/// config files and report tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "ALLC")]
    AllC,
    #[serde(rename = "ALLD")]
    AllD,
    #[serde(rename = "RANDOM")]
    Random,
    #[serde(rename = "TFT")]
    TitForTat,
    #[serde(rename = "GRIM")]
    Grim,
}

impl StrategyKind {
    /// All strategies in their conventional tournament order.
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::AllC,
        StrategyKind::AllD,
        StrategyKind::Random,
        StrategyKind::TitForTat,
        StrategyKind::Grim,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::AllC => "ALLC",
            StrategyKind::AllD => "ALLD",
            StrategyKind::Random => "RANDOM",
            StrategyKind::TitForTat => "TFT",
            StrategyKind::Grim => "GRIM",
        }
    }

    pub fn from_name(name: &str) -> Option<StrategyKind> {
        StrategyKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Anything that can play the scripted-opponent side of a match.
///
/// `history` holds the completed rounds in order as (own move, opponent
/// move) pairs from the policy's own perspective. Implementations never
/// see the current round's other move, which keeps play simultaneous.
pub trait OpponentPolicy {
    fn next_action(&mut self, history: &[(Action, Action)]) -> Action;
}

/// A playable strategy instance holding per-match state.
///
/// Apart from RANDOM's seeded stream, every choice is a pure function of
/// the observed history, so replaying a match with the same seed and the
/// same agent moves reproduces it exactly.
#[derive(Debug, Clone)]
pub struct Strategy {
    kind: StrategyKind,
    rng: ChaCha8Rng,
}

impl Strategy {
    /// Creates a fresh instance. `seed` feeds RANDOM's move stream and is
    /// ignored by the deterministic strategies.
    pub fn new(kind: StrategyKind, seed: u64) -> Self {
        Strategy {
            kind,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    /// Discards all per-match state, reusing the instance for a new match.
    pub fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }
}

impl OpponentPolicy for Strategy {
    fn next_action(&mut self, history: &[(Action, Action)]) -> Action {
        match self.kind {
            StrategyKind::AllC => Action::Cooperate,
            StrategyKind::AllD => Action::Defect,
            StrategyKind::Random => {
                if self.rng.random_bool(0.5) {
                    Action::Cooperate
                } else {
                    Action::Defect
                }
            }
            StrategyKind::TitForTat => match history.last() {
                None => Action::Cooperate,
                Some((_, opp)) => *opp,
            },
            // The trigger is recomputed from history rather than latched,
            // which keeps the choice a pure function of what was observed.
            StrategyKind::Grim => {
                if history.iter().any(|(_, opp)| *opp == Action::Defect) {
                    Action::Defect
                } else {
                    Action::Cooperate
                }
            }
        }
    }
}
