//! Offline backends: scripted reply lists, recorded-reply replay, and a
//! parametric persona whose cooperation follows a documented closed-form
//! policy. None of them touch the network.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use super::{ChatBackend, Message, Role, TransportError};
use crate::bfi::{inventory, label_for};
use crate::game::Action;
use crate::prompts::{HistoryView, PersonalityProfile};

/// Serves replies from a fixed list, in order. Exhaustion is an error,
/// not a loop: a test that consumes more replies than it scripted is
/// broken and should fail loudly.
pub struct ScriptedBackend {
    replies: Vec<String>,
    next: usize,
    cycle: bool,
}

impl ScriptedBackend {
    pub fn new(replies: Vec<String>) -> ScriptedBackend {
        ScriptedBackend {
            replies,
            next: 0,
            cycle: false,
        }
    }

    /// Like [`ScriptedBackend::new`], but wraps around instead of
    /// exhausting. Useful as a stand-in model that plays a fixed pattern
    /// for arbitrarily many rounds.
    pub fn cycling(replies: Vec<String>) -> ScriptedBackend {
        assert!(
            !replies.is_empty(),
            "a cycling script needs at least one reply"
        );
        ScriptedBackend {
            replies,
            next: 0,
            cycle: true,
        }
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&mut self, _key: &str, _messages: &[Message]) -> Result<String, TransportError> {
        if self.next >= self.replies.len() {
            if self.cycle {
                self.next = 0;
            } else {
                return Err(TransportError::ScriptExhausted);
            }
        }
        let reply = self.replies[self.next].clone();
        self.next += 1;
        Ok(reply)
    }
}

/// Serves recorded raw replies keyed by elicitation name, for
/// deterministic replays of past runs (or hand-built fixtures).
///
/// Keys follow the handle's convention: `<context>/a<attempt>`, where the
/// context is `<match_id>/r<round>` for game moves and `bfi/run<n>` for
/// questionnaire runs.
pub struct ReplayBackend {
    recordings: BTreeMap<String, String>,
}

impl ReplayBackend {
    pub fn from_map(recordings: BTreeMap<String, String>) -> ReplayBackend {
        ReplayBackend { recordings }
    }

    /// Loads a JSON object of key → raw reply.
    pub fn from_file(path: &Path) -> Result<ReplayBackend, TransportError> {
        let text = fs::read_to_string(path)
            .map_err(|e| TransportError::BadResponse(format!("{}: {e}", path.display())))?;
        let recordings: BTreeMap<String, String> = serde_json::from_str(&text)
            .map_err(|e| TransportError::BadResponse(format!("{}: {e}", path.display())))?;
        Ok(ReplayBackend { recordings })
    }

    pub fn len(&self) -> usize {
        self.recordings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recordings.is_empty()
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&mut self, key: &str, _messages: &[Message]) -> Result<String, TransportError> {
        self.recordings
            .get(key)
            .cloned()
            .ok_or_else(|| TransportError::MissingRecording(key.to_string()))
    }
}

/// Cooperation probability of the parametric persona:
///
/// ```text
/// p = clamp(0.05 + 0.9 * (A - 1) / 4 - 0.3 * defection_rate_observed, 0, 1)
/// ```
///
/// where `A` is the profile's agreeableness and `defection_rate_observed`
/// is the opponent's defection fraction so far (0 when no rounds have
/// been played). The function is fixed and documented so that tests over
/// it are analytic: A=5 on an empty history gives 0.95, A=1 gives 0.05.
pub fn persona_cooperation_probability(agreeableness: f64, defection_rate_observed: f64) -> f64 {
    let p = 0.05 + 0.9 * (agreeableness - 1.0) / 4.0 - 0.3 * defection_rate_observed;
    p.clamp(0.0, 1.0)
}

/// Decides one persona move from a structured history view.
pub fn parametric_persona_policy(
    profile: &PersonalityProfile,
    history: &HistoryView,
    rng: &mut ChaCha8Rng,
) -> Action {
    let observed = history.opp_cooperate + history.opp_defect;
    let rate = if observed == 0 {
        0.0
    } else {
        history.opp_defect as f64 / observed as f64
    };
    let p = persona_cooperation_probability(profile.scores.a, rate);
    if rng.random_bool(p) {
        Action::Cooperate
    } else {
        Action::Defect
    }
}

fn opponent_tally_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"your opponent chose "Cooperate" (\d+) times and chose "Defect" (\d+) times"#)
            .expect("pattern compiles")
    })
}

/// A profile-sensitive stochastic agent that speaks the same chat
/// protocol as a live model. Game moves follow
/// [`persona_cooperation_probability`]; the opponent's record is read
/// back out of the rendered history block it is shown, exactly like a
/// real model would have to. Questionnaire prompts are answered with each
/// score rounded to the nearest integer rating (reverse-keyed items
/// inverted), so a personality measurement recovers the profile.
pub struct PersonaBackend {
    profile: PersonalityProfile,
    rng: ChaCha8Rng,
}

impl PersonaBackend {
    pub fn new(profile: PersonalityProfile, seed: u64) -> PersonaBackend {
        PersonaBackend {
            profile,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn answer_questionnaire(&self) -> String {
        let mut lines = Vec::with_capacity(inventory().len());
        for (index, item) in inventory().iter().enumerate() {
            let score = self.profile.scores.get(item.dimension);
            let corrected = score.round().clamp(1.0, 5.0) as u8;
            let rating = if item.reverse {
                6 - corrected
            } else {
                corrected
            };
            lines.push(format!("({}) {}", label_for(index), rating));
        }
        lines.join("\n")
    }

    fn answer_move(&mut self, user_text: &str) -> String {
        let rate = match opponent_tally_pattern().captures(user_text) {
            Some(caps) => {
                let coop: u64 = caps[1].parse().expect("digits");
                let defect: u64 = caps[2].parse().expect("digits");
                let observed = coop + defect;
                if observed == 0 {
                    0.0
                } else {
                    defect as f64 / observed as f64
                }
            }
            None => 0.0,
        };
        let p = persona_cooperation_probability(self.profile.scores.a, rate);
        if self.rng.random_bool(p) {
            Action::Cooperate.as_str().to_string()
        } else {
            Action::Defect.as_str().to_string()
        }
    }
}

impl ChatBackend for PersonaBackend {
    fn complete(&mut self, _key: &str, messages: &[Message]) -> Result<String, TransportError> {
        let last_user = messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .ok_or_else(|| TransportError::BadResponse("no user message".into()))?;
        if last_user.content.contains("\"Cooperate\" or \"Defect\"") {
            Ok(self.answer_move(&last_user.content))
        } else if last_user
            .content
            .contains("Here are a number of characteristics")
        {
            Ok(self.answer_questionnaire())
        } else {
            Err(TransportError::BadResponse(
                "persona backend does not recognize this prompt".into(),
            ))
        }
    }
}
