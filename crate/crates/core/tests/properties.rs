//! Property suites for the invariants the pipeline leans on: payoff
//! identities over arbitrary valid matrices, strategy definitions as
//! history properties, parser totality, scoring bounds, aggregation
//! arithmetic, condition-matrix shape, and seed derivation stability.

mod common;

use std::collections::BTreeSet;

use dilemma_lab::analysis::{diff_table, SummaryStats};
use dilemma_lab::bfi::{aggregate, score_bfi, Dimension, ResponseSet, TraitScores};
use dilemma_lab::config::RunConfig;
use dilemma_lab::game::{resolve_round, Action, PayoffMatrix, RoundOutcome};
use dilemma_lab::gateway::parse::parse_action;
use dilemma_lab::prompts::HistoryView;
use dilemma_lab::runner::conditions::Experiment;
use dilemma_lab::runner::{build_conditions, derive_seed, subseed, Manipulation};
use dilemma_lab::strategy::{OpponentPolicy, Strategy as GameStrategy, StrategyKind};
use proptest::prelude::*;
use Action::{Cooperate as C, Defect as D};

/// A valid matrix built from strictly increasing offsets, so T>R>P>S
/// holds by construction over a wide value range.
fn matrices() -> impl Strategy<Value = PayoffMatrix> {
    (-1_000i64..=1_000, 1i64..=500, 1i64..=500, 1i64..=500).prop_map(|(s, dp, dr, dt)| {
        let p = s + dp;
        let r = p + dr;
        let t = r + dt;
        PayoffMatrix::new(t, r, p, s).expect("construction satisfies the ordering")
    })
}

fn actions(max_len: usize) -> impl Strategy<Value = Vec<Action>> {
    prop::collection::vec(
        prop::bool::ANY.prop_map(|b| if b { C } else { D }),
        0..max_len,
    )
}

/// Plays a strategy against a fixed agent sequence, returning the
/// strategy's moves.
fn play(kind: StrategyKind, seed: u64, agent: &[Action]) -> Vec<Action> {
    let mut strategy = GameStrategy::new(kind, seed);
    let mut history = Vec::new();
    let mut own = Vec::new();
    for &theirs in agent {
        let mine = strategy.next_action(&history);
        history.push((mine, theirs));
        own.push(mine);
    }
    own
}

proptest! {
    #[test]
    fn payoff_identities_hold_for_any_valid_matrix(m in matrices()) {
        let (a, b) = resolve_round(C, C, &m);
        prop_assert_eq!(a + b, 2 * m.r());
        let (a, b) = resolve_round(C, D, &m);
        prop_assert_eq!(a + b, m.t() + m.s());
        let (a, b) = resolve_round(D, D, &m);
        prop_assert_eq!(a + b, 2 * m.p());

        let temptation = resolve_round(D, C, &m).0;
        let reward = resolve_round(C, C, &m).0;
        let punishment = resolve_round(D, D, &m).0;
        let sucker = resolve_round(C, D, &m).0;
        prop_assert!(temptation > reward && reward > punishment && punishment > sucker);
    }

    #[test]
    fn grim_defects_forever_after_the_first_defection(agent in actions(30), seed in any::<u64>()) {
        let own = play(StrategyKind::Grim, seed, &agent);
        let first_defection = agent.iter().position(|&a| a == D);
        for (i, &mine) in own.iter().enumerate() {
            let expected = match first_defection {
                Some(at) if i > at => D,
                _ => C,
            };
            prop_assert_eq!(mine, expected, "round {}", i + 1);
        }
    }

    #[test]
    fn tft_opens_cooperating_then_mirrors(agent in actions(30), seed in any::<u64>()) {
        let own = play(StrategyKind::TitForTat, seed, &agent);
        for (i, &mine) in own.iter().enumerate() {
            let expected = if i == 0 { C } else { agent[i - 1] };
            prop_assert_eq!(mine, expected, "round {}", i + 1);
        }
    }

    #[test]
    fn parser_is_total_and_accepts_decorated_single_moves(
        text in "\\PC*",
        cooperate in any::<bool>(),
        lead in "[ \t\"'*>-]{0,4}",
        trail in "[ \t\"'*.!]{0,4}",
    ) {
        let _ = parse_action(&text);

        let word = if cooperate { "Cooperate" } else { "Defect" };
        let reply = format!("{lead}{word}{trail}");
        let expected = if cooperate { C } else { D };
        prop_assert_eq!(parse_action(&reply), Ok(expected), "reply {:?}", reply);
    }

    #[test]
    fn history_view_totals_agree_with_the_rounds(
        moves in prop::collection::vec((prop::bool::ANY, prop::bool::ANY), 0..25),
        m in matrices(),
    ) {
        let rounds: Vec<RoundOutcome> = moves
            .iter()
            .enumerate()
            .map(|(i, &(mine, theirs))| {
                let mine = if mine { C } else { D };
                let theirs = if theirs { C } else { D };
                let (own, opp) = resolve_round(mine, theirs, &m);
                RoundOutcome {
                    round_index: i as u32 + 1,
                    self_action: mine,
                    opponent_action: theirs,
                    self_payoff: own,
                    opponent_payoff: opp,
                }
            })
            .collect();
        let view = HistoryView::from_rounds(&rounds);

        prop_assert_eq!(view.current_round as usize, rounds.len() + 1);
        prop_assert_eq!((view.self_cooperate + view.self_defect) as usize, rounds.len());
        prop_assert_eq!((view.opp_cooperate + view.opp_defect) as usize, rounds.len());
        let self_total: i64 = rounds.iter().map(|r| r.self_payoff).sum();
        let opp_total: i64 = rounds.iter().map(|r| r.opponent_payoff).sum();
        prop_assert_eq!(view.self_total, self_total);
        prop_assert_eq!(view.opp_total, opp_total);
    }

    #[test]
    fn scores_stay_on_the_rating_scale(ratings in prop::collection::vec(1u8..=5, 44)) {
        let scores = score_bfi(&ResponseSet::from_ratings(ratings).unwrap());
        for d in Dimension::ALL {
            let v = scores.get(d);
            prop_assert!((1.0..=5.0).contains(&v), "{} scored {}", d, v);
        }
    }

    #[test]
    fn aggregation_matches_manual_mean_and_population_sd(
        raw in prop::collection::vec([1.0f64..=5.0, 1.0..=5.0, 1.0..=5.0, 1.0..=5.0, 1.0..=5.0], 1..30),
    ) {
        let runs: Vec<TraitScores> = raw
            .iter()
            .map(|[o, c, e, a, n]| TraitScores { o: *o, c: *c, e: *e, a: *a, n: *n })
            .collect();
        let stats = aggregate(&runs);
        prop_assert_eq!(stats.n_runs, runs.len());

        for d in Dimension::ALL {
            let xs: Vec<f64> = runs.iter().map(|r| r.get(d)).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
            prop_assert!((stats.mean.get(d) - mean).abs() < 1e-12);
            prop_assert!((stats.sd.get(d) - var.sqrt()).abs() < 1e-9);
        }

        // The mean of identical runs can differ from the value by one
        // rounding step, so the SD bound is near-zero rather than zero.
        let same = aggregate(&vec![runs[0]; 7]);
        for d in Dimension::ALL {
            prop_assert!(same.sd.get(d).abs() < 1e-12, "constant runs must have near-zero SD");
        }
    }

    #[test]
    fn condition_matrix_has_the_expected_shape(
        baseline in any::<bool>(),
        informed in any::<bool>(),
        manipulated in any::<bool>(),
        opponent_mask in 1u8..32,
    ) {
        prop_assume!(baseline || informed || manipulated);
        let mut modes = Vec::new();
        if baseline {
            modes.push("\"baseline\"");
        }
        if informed {
            modes.push("\"informed\"");
        }
        if manipulated {
            modes.push("\"manipulated\"");
        }
        let opponents: Vec<String> = StrategyKind::ALL
            .iter()
            .enumerate()
            .filter(|(i, _)| opponent_mask & (1 << i) != 0)
            .map(|(_, k)| format!("\"{}\"", k.name()))
            .collect();

        let toml = format!(
            "[run]\nmaster_seed = 1\n\n\
             [[models]]\nname = \"m\"\nbackend = \"persona\"\n\n\
             [experiments]\nmodes = [{}]\nopponents = [{}]\n\n\
             [profiles.pinned.m]\no = 3.0\nc = 3.0\ne = 3.0\na = 3.0\nn = 3.0\n",
            modes.join(", "),
            opponents.join(", "),
        );
        let config = RunConfig::parse_str(&toml).unwrap();
        let conditions = build_conditions(&config).unwrap();

        let per_opponent =
            usize::from(baseline) + usize::from(informed) + 10 * usize::from(manipulated);
        prop_assert_eq!(conditions.len(), per_opponent * opponents.len());

        let ids: BTreeSet<&str> = conditions.iter().map(|c| c.id.as_str()).collect();
        prop_assert_eq!(ids.len(), conditions.len(), "condition ids must be unique");
        for condition in &conditions {
            prop_assert!(condition.check_shape().is_ok());
        }
    }

    #[test]
    fn extreme_difference_table_is_antisymmetric(
        coop in [0.0f64..=1.0, 0.0..=1.0],
        payoff in [0.0f64..=1.0, 0.0..=1.0],
        dim_index in 0usize..5,
        opp_index in 0usize..5,
    ) {
        let dimension = Dimension::ALL[dim_index];
        let opponent = StrategyKind::ALL[opp_index];
        let stat = |value: u8, rate: f64, norm: f64| SummaryStats {
            condition_id: format!("manip-m-{}{}-{}", dimension.code(), value, opponent.name()),
            experiment: Experiment::GameManipulated,
            model: "m".into(),
            opponent: Some(opponent),
            manipulation: Some(Manipulation { dimension, value }),
            n_matches: 10,
            rounds: 10,
            avg_cooperation_rate: rate,
            avg_cumulative_payoff: norm * 50.0,
            normalized_payoff: norm,
        };

        let forward = diff_table(&[stat(1, coop[0], payoff[0]), stat(5, coop[1], payoff[1])]).unwrap();
        let swapped = diff_table(&[stat(1, coop[1], payoff[1]), stat(5, coop[0], payoff[0])]).unwrap();
        prop_assert_eq!(forward.len(), 1);
        prop_assert_eq!(swapped.len(), 1);
        prop_assert_eq!(forward[0].delta_cooperation, -swapped[0].delta_cooperation);
        prop_assert_eq!(
            forward[0].delta_normalized_payoff,
            -swapped[0].delta_normalized_payoff
        );
    }

    #[test]
    fn seed_derivation_is_stable_and_separates_roles(
        master in any::<u64>(),
        condition in 0usize..10_000,
        trial in 0u32..10_000,
    ) {
        let seed = derive_seed(master, condition, trial, "match");
        prop_assert_eq!(seed, derive_seed(master, condition, trial, "match"));
        prop_assert_ne!(seed, derive_seed(master, condition, trial, "bfi"));
        prop_assert_ne!(seed, derive_seed(master, condition, trial + 1, "match"));
        prop_assert_ne!(seed, derive_seed(master, condition + 1, trial, "match"));

        let strategy = subseed(seed, "strategy");
        let agent = subseed(seed, "agent");
        prop_assert_ne!(strategy, agent);
        prop_assert_eq!(strategy, subseed(seed, "strategy"));
    }
}
