//! Measures Big Five personality profiles of chat-model agents with the
//! BFI-44 questionnaire and runs those agents through repeated prisoner's
//! dilemma tournaments against fixed opponent strategies.
//!
//! The pipeline has three stages. First, [`bfi::measure_personality`]
//! administers the questionnaire repeatedly and aggregates trait scores.
//! Second, [`runner::run_experiment`] plays every configured condition
//! (baseline, personality-informed, and single-trait manipulations) for a
//! number of independent trials, persisting full match transcripts as
//! JSONL. Third, [`analysis`] turns transcripts into cooperation-rate and
//! payoff tables, extreme-condition difference tables, and radar plot data.
//!
//! Every prompt the agents see is rendered byte-exactly from the data
//! files under `data/templates/` and pinned by golden-file tests. Agent
//! backends share one text-in/text-out contract ([`gateway::ChatBackend`]),
//! so live HTTP endpoints and the deterministic offline mocks are
//! interchangeable everywhere in the pipeline.

pub mod analysis;
pub mod bfi;
pub mod config;
pub mod engine;
pub mod game;
pub mod gateway;
pub mod prompts;
pub mod runner;
pub mod strategy;
