//! Fixtures shared by the integration test targets.
//!
//! The main piece is the reply-set constructor: given target trait means,
//! it builds questionnaire replies whose scored aggregate lands within
//! rounding distance of the targets, so measurement tests can replay a
//! known personality without any live model.

#![allow(dead_code)]

use std::collections::BTreeMap;

use dilemma_lab::bfi::{inventory, Dimension, ResponseSet, TraitScores};

/// Builds `n_runs` canonical questionnaire replies whose aggregated trait
/// means reproduce `target` as closely as integer ratings allow.
///
/// Per dimension the corrected ratings are chosen so their grand total is
/// `round(target * n_runs * k)` over the `n_runs * k` item slots, which
/// bounds the achieved-mean error by `0.5 / (n_runs * k)` (at most
/// 0.003125 for the 8-item dimensions at 20 runs). Reverse-keyed items
/// get the reflected raw rating so scoring undoes it.
pub fn reply_sets_for(target: &TraitScores, n_runs: usize) -> Vec<String> {
    let items = inventory();
    let mut plan: BTreeMap<&'static str, Vec<u8>> = BTreeMap::new();
    for dim in Dimension::ALL {
        let k = items.iter().filter(|it| it.dimension == dim).count();
        let slots = n_runs * k;
        let total = (target.get(dim) * slots as f64).round() as usize;
        let base = (total / slots) as u8;
        let bumped = total % slots;
        assert!(
            (1..=5).contains(&base) && (bumped == 0 || base < 5),
            "target {} for {dim} is outside the 1..=5 rating scale",
            target.get(dim)
        );
        let values = (0..slots)
            .map(|slot| if slot < bumped { base + 1 } else { base })
            .collect();
        plan.insert(dim.code(), values);
    }

    (0..n_runs)
        .map(|run| {
            let mut cursor: BTreeMap<&str, usize> = BTreeMap::new();
            let ratings = items
                .iter()
                .map(|item| {
                    let k = items
                        .iter()
                        .filter(|it| it.dimension == item.dimension)
                        .count();
                    let pos = cursor.entry(item.dimension.code()).or_insert(0);
                    let corrected = plan[item.dimension.code()][run * k + *pos];
                    *pos += 1;
                    if item.reverse {
                        6 - corrected
                    } else {
                        corrected
                    }
                })
                .collect();
            ResponseSet::from_ratings(ratings)
                .expect("constructed ratings are in range")
                .canonical_text()
        })
        .collect()
}

/// Keys questionnaire replies the way the measurement loop requests them:
/// run `n` asks under `bfi/run{n}` and a well-formed reply is accepted on
/// the first presentation.
pub fn bfi_replay_map(replies: &[String]) -> BTreeMap<String, String> {
    replies
        .iter()
        .enumerate()
        .map(|(run, reply)| (format!("bfi/run{run}/a1"), reply.clone()))
        .collect()
}

/// Largest absolute per-dimension difference between two score sets.
pub fn max_trait_gap(a: &TraitScores, b: &TraitScores) -> f64 {
    Dimension::ALL
        .into_iter()
        .map(|d| (a.get(d) - b.get(d)).abs())
        .fold(0.0, f64::max)
}
