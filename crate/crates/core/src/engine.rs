//! Runs one agent-versus-strategy match: renders the prompts each round,
//! elicits the agent's move, commits both moves simultaneously, and
//! records everything into a transcript.

use std::sync::Arc;

use thiserror::Error;

use crate::game::{
    resolve_round, MatchRecord, PayoffMatrix, RoundOutcome, TRANSCRIPT_SCHEMA_VERSION,
};
use crate::gateway::clock::Clock;
use crate::gateway::{
    assemble_system_prompt, assemble_user_prompt, elicit_action, AgentHandle, GatewayError,
};
use crate::prompts::{render_history, HistoryView};
use crate::strategy::OpponentPolicy;

/// Fixed parameters of one match.
pub struct MatchSetup {
    pub match_id: String,
    pub condition_id: String,
    pub rounds: u32,
    pub matrix: PayoffMatrix,
    /// Child seed recorded in the transcript; the caller seeds the
    /// opponent (and any stochastic mock backend) from it.
    pub seed: u64,
    /// Rendered game-context prompt for this match's round count and
    /// payoffs.
    pub context: String,
    /// Rendered personality prompt, present only under the informed and
    /// manipulated conditions.
    pub personality: Option<String>,
    pub clock: Arc<dyn Clock>,
}

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("a match must have at least one round")]
    ZeroRounds,
    #[error("agent failed in round {round}: {source}")]
    Agent {
        round: u32,
        #[source]
        source: GatewayError,
    },
}

/// Plays a match to completion.
///
/// Both sides move simultaneously: the opponent picks from completed
/// rounds only and never sees the agent's current-round action. The
/// caller provides agent and opponent freshly initialized; no state
/// carries over between matches. An agent failure aborts the match with
/// the failing round, so it can be excluded and re-run rather than padded
/// with a fabricated move.
pub fn run_match(
    agent: &mut AgentHandle,
    opponent: &mut dyn OpponentPolicy,
    setup: &MatchSetup,
) -> Result<MatchRecord, MatchError> {
    if setup.rounds == 0 {
        return Err(MatchError::ZeroRounds);
    }
    let started_at = setup.clock.now();
    let mut rounds: Vec<RoundOutcome> = Vec::with_capacity(setup.rounds as usize);
    let mut pairs = Vec::with_capacity(setup.rounds as usize);
    let mut per_round_prompts = Vec::with_capacity(setup.rounds as usize);
    let mut per_round_raw_replies = Vec::with_capacity(setup.rounds as usize);
    let mut per_round_attempts = Vec::with_capacity(setup.rounds as usize);

    for round in 1..=setup.rounds {
        let history = render_history(&HistoryView::from_rounds(&rounds));
        agent.set_context_key(format!("{}/r{round}", setup.match_id));
        let reply = elicit_action(
            agent,
            &setup.context,
            setup.personality.as_deref(),
            &history,
        )
        .map_err(|source| MatchError::Agent { round, source })?;
        let opponent_action = opponent.next_action(&pairs);

        let (self_payoff, opponent_payoff) =
            resolve_round(reply.parsed, opponent_action, &setup.matrix);
        rounds.push(RoundOutcome {
            round_index: round,
            self_action: reply.parsed,
            opponent_action,
            self_payoff,
            opponent_payoff,
        });
        // The policy sees history from its own perspective: its move
        // first, the agent's second.
        pairs.push((opponent_action, reply.parsed));
        per_round_prompts.push(assemble_user_prompt(&history));
        per_round_raw_replies.push(reply.raw);
        per_round_attempts.push(reply.attempts);
    }

    let record = MatchRecord {
        schema_version: TRANSCRIPT_SCHEMA_VERSION,
        match_id: setup.match_id.clone(),
        condition_id: setup.condition_id.clone(),
        rng_seed: setup.seed,
        system_prompt: assemble_system_prompt(&setup.context, setup.personality.as_deref()),
        rounds,
        per_round_prompts,
        per_round_raw_replies,
        per_round_attempts,
        started_at,
        finished_at: setup.clock.now(),
    };
    debug_assert!(record
        .check_consistency(setup.rounds, &setup.matrix)
        .is_ok());
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::Action;
    use crate::gateway::backends::ScriptedBackend;
    use crate::gateway::clock::{fixture_epoch, StepClock};
    use crate::prompts::render_game_context;
    use crate::strategy::{Strategy, StrategyKind};
    use std::time::Duration;

    fn scripted_agent(reply: &str) -> AgentHandle {
        AgentHandle::new(
            Box::new(ScriptedBackend::cycling(vec![reply.to_string()])),
            5,
        )
    }

    fn setup(rounds: u32) -> MatchSetup {
        let matrix = PayoffMatrix::default();
        MatchSetup {
            match_id: "test-match".into(),
            condition_id: "test-cond".into(),
            rounds,
            matrix,
            seed: 42,
            context: render_game_context(rounds.max(1), &matrix),
            personality: None,
            clock: Arc::new(StepClock::starting_at(
                fixture_epoch(),
                Duration::from_secs(1),
            )),
        }
    }

    #[test]
    fn always_cooperate_against_tit_for_tat_yields_mutual_cooperation() {
        let mut agent = scripted_agent("Cooperate");
        let mut opp = Strategy::new(StrategyKind::TitForTat, 42);
        let record = run_match(&mut agent, &mut opp, &setup(10)).unwrap();
        assert_eq!(record.rounds.len(), 10);
        assert!(record
            .rounds
            .iter()
            .all(|r| r.self_action == Action::Cooperate && r.opponent_action == Action::Cooperate));
        assert_eq!(record.cumulative_payoff(), 30);
        assert_eq!(record.opponent_cumulative_payoff(), 30);
    }

    #[test]
    fn always_defect_against_grim_collects_fourteen_points() {
        let mut agent = scripted_agent("Defect");
        let mut opp = Strategy::new(StrategyKind::Grim, 42);
        let record = run_match(&mut agent, &mut opp, &setup(10)).unwrap();
        // Round 1 is (D, C) for the temptation payoff, rounds 2-10 are
        // (D, D) once the trigger has fired.
        assert_eq!(record.rounds[0].opponent_action, Action::Cooperate);
        assert!(record.rounds[1..]
            .iter()
            .all(|r| r.opponent_action == Action::Defect));
        assert_eq!(record.cumulative_payoff(), 14);
        assert_eq!(record.opponent_cumulative_payoff(), 9);
    }

    #[test]
    fn zero_rounds_is_rejected() {
        let mut agent = scripted_agent("Cooperate");
        let mut opp = Strategy::new(StrategyKind::AllC, 1);
        assert!(matches!(
            run_match(&mut agent, &mut opp, &setup(0)),
            Err(MatchError::ZeroRounds)
        ));
    }

    #[test]
    fn agent_failure_reports_the_failing_round() {
        // Two parseable replies, then the script runs dry in round 3.
        let mut agent = AgentHandle::new(
            Box::new(ScriptedBackend::new(vec![
                "Cooperate".into(),
                "Defect".into(),
            ])),
            5,
        );
        let mut opp = Strategy::new(StrategyKind::AllC, 1);
        match run_match(&mut agent, &mut opp, &setup(10)) {
            Err(MatchError::Agent { round, .. }) => assert_eq!(round, 3),
            other => panic!("unexpected result {other:?}"),
        }
    }

    /// The opponent must never observe the round being decided.
    struct Probe {
        observed_lengths: Vec<usize>,
    }

    impl OpponentPolicy for Probe {
        fn next_action(&mut self, history: &[(Action, Action)]) -> Action {
            self.observed_lengths.push(history.len());
            Action::Cooperate
        }
    }

    #[test]
    fn opponent_only_sees_completed_rounds() {
        let mut agent = scripted_agent("Defect");
        let mut probe = Probe {
            observed_lengths: Vec::new(),
        };
        run_match(&mut agent, &mut probe, &setup(5)).unwrap();
        assert_eq!(probe.observed_lengths, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn transcript_prompts_follow_the_rounds_played() {
        let mut agent = scripted_agent("Cooperate");
        let mut opp = Strategy::new(StrategyKind::AllD, 7);
        let record = run_match(&mut agent, &mut opp, &setup(3)).unwrap();
        assert!(record.per_round_prompts[0].starts_with("This is the first round of the game."));
        assert!(record.per_round_prompts[1].contains("the last 1 rounds"));
        assert!(record.per_round_prompts[2].contains("Current round: 3."));
        assert!(record
            .per_round_prompts
            .iter()
            .all(|p| p.ends_with("Answer with exactly one word: \"Cooperate\" or \"Defect\".")));
        assert_eq!(record.per_round_raw_replies, vec!["Cooperate"; 3]);
        assert_eq!(record.per_round_attempts, vec![1, 1, 1]);
        assert!(record.finished_at > record.started_at);
    }

    #[test]
    fn identical_setups_produce_identical_transcripts() {
        let play = || {
            let mut agent = scripted_agent("Cooperate");
            let mut opp = Strategy::new(StrategyKind::Random, 42);
            let record = run_match(&mut agent, &mut opp, &setup(10)).unwrap();
            serde_json::to_string(&record).unwrap()
        };
        assert_eq!(play(), play());
    }
}
