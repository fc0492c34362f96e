//! The condition matrix: which (experiment, model, profile, opponent)
//! cells a run executes, and the identifiers they carry through
//! transcripts and reports.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bfi::{Dimension, TraitScores};
use crate::config::{ConfigError, Mode, RunConfig};
use crate::prompts::{PersonalityProfile, ProfileSource, ScoreOutOfRange};
use crate::strategy::StrategyKind;

/// The experiment stage a condition belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Questionnaire administration, no game.
    BfiMeasurement,
    /// Game without a personality prompt.
    GameBaseline,
    /// Game with the measured profile prepended.
    GameInformed,
    /// Game with one dimension forced to an extreme.
    GameManipulated,
}

/// One forced extreme: a dimension pinned to 1 or 5 while the rest of
/// the profile keeps its measured values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manipulation {
    pub dimension: Dimension,
    pub value: u8,
}

/// The two extremes every manipulated dimension is pinned to.
pub const MANIPULATION_VALUES: [u8; 2] = [1, 5];

/// One cell of the condition matrix. Every match belongs to exactly one
/// condition; the id keys transcript files and report rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentCondition {
    pub id: String,
    pub experiment: Experiment,
    pub model: String,
    /// Absent only for questionnaire conditions.
    pub opponent: Option<StrategyKind>,
    pub manipulation: Option<Manipulation>,
    pub base_profile: Option<TraitScores>,
    pub trials: u32,
    pub rounds: u32,
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("model {model}: informed/manipulated conditions need a base profile")]
    MissingProfile { model: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Profile(#[from] ScoreOutOfRange),
}

impl ExperimentCondition {
    /// Checks the per-experiment field combinations.
    pub fn check_shape(&self) -> Result<(), String> {
        let fail = |msg: &str| Err(format!("condition {}: {msg}", self.id));
        match self.experiment {
            Experiment::BfiMeasurement => {
                if self.opponent.is_some() {
                    return fail("questionnaire conditions have no opponent");
                }
                if self.manipulation.is_some() {
                    return fail("questionnaire conditions have no manipulation");
                }
            }
            Experiment::GameBaseline => {
                if self.opponent.is_none() {
                    return fail("game conditions need an opponent");
                }
                if self.manipulation.is_some() || self.base_profile.is_some() {
                    return fail("baseline conditions carry neither manipulation nor profile");
                }
            }
            Experiment::GameInformed => {
                if self.opponent.is_none() {
                    return fail("game conditions need an opponent");
                }
                if self.base_profile.is_none() {
                    return fail("informed conditions need a base profile");
                }
                if self.manipulation.is_some() {
                    return fail("informed conditions have no manipulation");
                }
            }
            Experiment::GameManipulated => {
                if self.opponent.is_none() {
                    return fail("game conditions need an opponent");
                }
                if self.base_profile.is_none() {
                    return fail("manipulated conditions need a base profile");
                }
                match &self.manipulation {
                    None => return fail("manipulated conditions need a manipulation"),
                    Some(m) if !MANIPULATION_VALUES.contains(&m.value) => {
                        return fail("manipulation value must be 1 or 5")
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }

    /// The personality prompt input for this condition: none for
    /// baseline, the base profile for informed, and the base profile
    /// with one dimension overridden for manipulated.
    pub fn effective_profile(&self) -> Result<Option<PersonalityProfile>, ScoreOutOfRange> {
        match self.experiment {
            Experiment::BfiMeasurement | Experiment::GameBaseline => Ok(None),
            Experiment::GameInformed => {
                let scores = self.base_profile.expect("shape-checked");
                Ok(Some(PersonalityProfile::new(
                    scores,
                    ProfileSource::Measured,
                )?))
            }
            Experiment::GameManipulated => {
                let m = self.manipulation.expect("shape-checked");
                let scores = self
                    .base_profile
                    .expect("shape-checked")
                    .with(m.dimension, m.value as f64);
                Ok(Some(PersonalityProfile::new(
                    scores,
                    ProfileSource::Manipulated {
                        dimension: m.dimension,
                        value: m.value,
                    },
                )?))
            }
        }
    }
}

fn condition_id(
    experiment: Experiment,
    model: &str,
    manipulation: Option<Manipulation>,
    opponent: StrategyKind,
) -> String {
    match experiment {
        Experiment::BfiMeasurement => format!("bfi-{model}"),
        Experiment::GameBaseline => format!("base-{model}-{opponent}"),
        Experiment::GameInformed => format!("info-{model}-{opponent}"),
        Experiment::GameManipulated => {
            let m = manipulation.expect("manipulated id needs a manipulation");
            format!("manip-{model}-{}{}-{opponent}", m.dimension.code(), m.value)
        }
    }
}

/// Expands the config into the full condition list, in a fixed order:
/// models as configured; baseline, informed, manipulated; manipulated
/// dimensions in O, C, E, A, N order with value 1 before 5; opponents as
/// configured. Seed derivation and resume both key on positions in this
/// list, so the order is part of the output contract.
pub fn build_conditions(config: &RunConfig) -> Result<Vec<ExperimentCondition>, BuildError> {
    let trials = config.run.trials;
    let rounds = config.run.rounds;
    let opponents: Vec<StrategyKind> = config
        .experiments
        .opponents
        .iter()
        .map(|name| StrategyKind::from_name(name).expect("validated at parse time"))
        .collect();
    let mut modes = config.experiments.modes.clone();
    modes.sort();

    let mut conditions = Vec::new();
    for model in &config.models {
        let profile = config.profile_for(&model.name)?;
        for mode in &modes {
            match mode {
                Mode::Baseline => {
                    for &opponent in &opponents {
                        conditions.push(ExperimentCondition {
                            id: condition_id(Experiment::GameBaseline, &model.name, None, opponent),
                            experiment: Experiment::GameBaseline,
                            model: model.name.clone(),
                            opponent: Some(opponent),
                            manipulation: None,
                            base_profile: None,
                            trials,
                            rounds,
                        });
                    }
                }
                Mode::Informed => {
                    let base = profile.ok_or_else(|| BuildError::MissingProfile {
                        model: model.name.clone(),
                    })?;
                    for &opponent in &opponents {
                        conditions.push(ExperimentCondition {
                            id: condition_id(Experiment::GameInformed, &model.name, None, opponent),
                            experiment: Experiment::GameInformed,
                            model: model.name.clone(),
                            opponent: Some(opponent),
                            manipulation: None,
                            base_profile: Some(base),
                            trials,
                            rounds,
                        });
                    }
                }
                Mode::Manipulated => {
                    let base = profile.ok_or_else(|| BuildError::MissingProfile {
                        model: model.name.clone(),
                    })?;
                    for dimension in Dimension::ALL {
                        for value in MANIPULATION_VALUES {
                            let manipulation = Manipulation { dimension, value };
                            for &opponent in &opponents {
                                conditions.push(ExperimentCondition {
                                    id: condition_id(
                                        Experiment::GameManipulated,
                                        &model.name,
                                        Some(manipulation),
                                        opponent,
                                    ),
                                    experiment: Experiment::GameManipulated,
                                    model: model.name.clone(),
                                    opponent: Some(opponent),
                                    manipulation: Some(manipulation),
                                    base_profile: Some(base),
                                    trials,
                                    rounds,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    for condition in &conditions {
        condition.check_shape().map_err(ConfigError::Invalid)?;
    }
    Ok(conditions)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(modes: &str) -> RunConfig {
        let text = format!(
            r#"
            [run]
            master_seed = 7
            trials = 3
            rounds = 10

            [[models]]
            name = "mock"
            backend = "scripted"
            script = ["Cooperate"]

            [experiments]
            modes = [{modes}]

            [profiles.pinned.mock]
            o = 4.68
            c = 4.12
            e = 3.15
            a = 4.27
            n = 1.98
            "#
        );
        RunConfig::parse_str(&text).unwrap()
    }

    #[test]
    fn informed_and_baseline_make_two_cells_per_opponent() {
        let conditions = build_conditions(&config("\"baseline\", \"informed\"")).unwrap();
        assert_eq!(conditions.len(), 10);
        assert_eq!(
            conditions
                .iter()
                .filter(|c| c.experiment == Experiment::GameBaseline)
                .count(),
            5
        );
        assert_eq!(conditions[0].id, "base-mock-ALLC");
        assert_eq!(conditions[5].id, "info-mock-ALLC");
        assert!(conditions[0].base_profile.is_none());
        assert!(conditions[5].base_profile.is_some());
    }

    #[test]
    fn manipulation_makes_ten_personality_conditions_times_opponents() {
        let conditions = build_conditions(&config("\"manipulated\"")).unwrap();
        assert_eq!(conditions.len(), 50);
        let distinct_manipulations: std::collections::BTreeSet<String> = conditions
            .iter()
            .map(|c| {
                let m = c.manipulation.unwrap();
                format!("{}{}", m.dimension.code(), m.value)
            })
            .collect();
        assert_eq!(distinct_manipulations.len(), 10);
        assert_eq!(conditions[0].id, "manip-mock-O1-ALLC");
        for condition in &conditions {
            condition.check_shape().unwrap();
        }
    }

    #[test]
    fn manipulated_profile_overrides_exactly_one_dimension() {
        let conditions = build_conditions(&config("\"manipulated\"")).unwrap();
        let a5 = conditions
            .iter()
            .find(|c| c.id == "manip-mock-A5-TFT")
            .unwrap();
        let profile = a5.effective_profile().unwrap().unwrap();
        assert_eq!(profile.scores.a, 5.0);
        assert_eq!(profile.scores.o, 4.68);
        assert_eq!(profile.scores.c, 4.12);
        assert_eq!(profile.scores.e, 3.15);
        assert_eq!(profile.scores.n, 1.98);
    }

    #[test]
    fn missing_profile_fails_condition_building() {
        let text = r#"
            [run]
            master_seed = 7

            [[models]]
            name = "mock"
            backend = "scripted"
            script = ["Cooperate"]

            [experiments]
            modes = ["baseline"]
        "#;
        let mut config = RunConfig::parse_str(text).unwrap();
        config.experiments.modes = vec![Mode::Informed];
        assert!(matches!(
            build_conditions(&config),
            Err(BuildError::MissingProfile { .. })
        ));
    }

    #[test]
    fn baseline_conditions_render_no_personality() {
        let conditions = build_conditions(&config("\"baseline\"")).unwrap();
        assert!(conditions[0].effective_profile().unwrap().is_none());
    }
}
