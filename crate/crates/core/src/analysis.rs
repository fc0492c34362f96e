//! Turns persisted transcripts into the run's summary metrics: pooled
//! cooperation rates, normalized payoffs, extreme-versus-extreme
//! difference tables, and radar-plot data for measured personalities.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::bfi::{reference, Dimension, TraitScores};
use crate::game::{MatchRecord, PayoffMatrix};
use crate::runner::conditions::{Experiment, ExperimentCondition, Manipulation};
use crate::runner::manifest::{self, ManifestError, RunManifest};
use crate::strategy::StrategyKind;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("group {0} holds no match records")]
    EmptyGroup(String),
    #[error("group {group} mixes round counts ({found} after {expected})")]
    MixedRounds {
        group: String,
        expected: usize,
        found: usize,
    },
    #[error("no value={missing_value} condition to pair with {model}/{dimension}/{opponent}")]
    MissingPair {
        model: String,
        dimension: Dimension,
        opponent: StrategyKind,
        missing_value: u8,
    },
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

/// Pooled cooperation rate: the agent's Cooperate actions over all of
/// its actions in the group. With equal round counts this equals the
/// mean of per-match rates; the round counts are required to be equal.
pub fn cooperation_rate(records: &[MatchRecord]) -> Result<f64, AnalysisError> {
    let rounds = uniform_rounds(records, "<records>")?;
    let cooperations: usize = records.iter().map(|r| r.cooperate_count()).sum();
    Ok(cooperations as f64 / (records.len() * rounds) as f64)
}

/// Mean cumulative payoff scaled into [0, 1] by the per-match maximum
/// `rounds * T`.
pub fn normalized_payoff(
    records: &[MatchRecord],
    m: &PayoffMatrix,
    rounds: u32,
) -> Result<f64, AnalysisError> {
    let average = average_payoff(records)?;
    Ok(average / (rounds as i64 * m.t()) as f64)
}

fn average_payoff(records: &[MatchRecord]) -> Result<f64, AnalysisError> {
    if records.is_empty() {
        return Err(AnalysisError::EmptyGroup("<records>".into()));
    }
    let total: i64 = records.iter().map(|r| r.cumulative_payoff()).sum();
    Ok(total as f64 / records.len() as f64)
}

fn uniform_rounds(records: &[MatchRecord], group: &str) -> Result<usize, AnalysisError> {
    let Some(first) = records.first() else {
        return Err(AnalysisError::EmptyGroup(group.to_string()));
    };
    let expected = first.rounds.len();
    for record in records {
        if record.rounds.len() != expected {
            return Err(AnalysisError::MixedRounds {
                group: group.to_string(),
                expected,
                found: record.rounds.len(),
            });
        }
    }
    Ok(expected)
}

/// Aggregates for one condition.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryStats {
    pub condition_id: String,
    pub experiment: Experiment,
    pub model: String,
    pub opponent: Option<StrategyKind>,
    pub manipulation: Option<Manipulation>,
    pub n_matches: usize,
    pub rounds: usize,
    pub avg_cooperation_rate: f64,
    pub avg_cumulative_payoff: f64,
    pub normalized_payoff: f64,
}

/// Everything analysis needs from one run directory.
pub struct LoadedRun {
    pub manifest: RunManifest,
    /// Records grouped by condition id; every record belongs to exactly
    /// one group.
    pub records: BTreeMap<String, Vec<MatchRecord>>,
}

pub fn load_run(dir: &Path) -> Result<LoadedRun, AnalysisError> {
    let manifest = RunManifest::load(dir)?;
    let mut records: BTreeMap<String, Vec<MatchRecord>> = BTreeMap::new();
    for status in &manifest.conditions {
        let path = manifest::transcript_path(dir, &status.condition.id);
        if !path.exists() {
            continue;
        }
        let file = fs::File::open(&path).map_err(|source| AnalysisError::Io {
            path: path.clone(),
            source,
        })?;
        let group = records.entry(status.condition.id.clone()).or_default();
        for (index, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| AnalysisError::Io {
                path: path.clone(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: MatchRecord =
                serde_json::from_str(&line).map_err(|e| ManifestError::BadTranscript {
                    path: path.clone(),
                    line: index + 1,
                    reason: e.to_string(),
                })?;
            group.push(record);
        }
    }
    Ok(LoadedRun { manifest, records })
}

/// Summarizes every game condition in the manifest. A condition without
/// any transcripts fails as an empty group: analysis is meant for
/// completed runs, and `resume` exists to finish partial ones.
pub fn summarize(run: &LoadedRun) -> Result<Vec<SummaryStats>, AnalysisError> {
    let mut stats = Vec::new();
    for status in &run.manifest.conditions {
        let condition = &status.condition;
        if condition.experiment == Experiment::BfiMeasurement {
            continue;
        }
        let records = run
            .records
            .get(&condition.id)
            .filter(|r| !r.is_empty())
            .ok_or_else(|| AnalysisError::EmptyGroup(condition.id.clone()))?;
        stats.push(summarize_condition(
            condition,
            records,
            &run.manifest.matrix,
        )?);
    }
    stats.sort_by(|a, b| a.condition_id.cmp(&b.condition_id));
    Ok(stats)
}

fn summarize_condition(
    condition: &ExperimentCondition,
    records: &[MatchRecord],
    matrix: &PayoffMatrix,
) -> Result<SummaryStats, AnalysisError> {
    let rounds = uniform_rounds(records, &condition.id)?;
    let cooperations: usize = records.iter().map(|r| r.cooperate_count()).sum();
    let avg_cooperation_rate = cooperations as f64 / (records.len() * rounds) as f64;
    let avg_cumulative_payoff = average_payoff(records)?;
    Ok(SummaryStats {
        condition_id: condition.id.clone(),
        experiment: condition.experiment,
        model: condition.model.clone(),
        opponent: condition.opponent,
        manipulation: condition.manipulation,
        n_matches: records.len(),
        rounds,
        avg_cooperation_rate,
        avg_cumulative_payoff,
        normalized_payoff: avg_cumulative_payoff / (rounds as i64 * matrix.t()) as f64,
    })
}

/// One row of the extremes comparison: value-5 minus value-1 for a
/// (model, dimension, opponent) cell.
#[derive(Debug, Clone, Serialize)]
pub struct DiffRow {
    pub model: String,
    pub dimension: Dimension,
    pub opponent: StrategyKind,
    pub cooperation_high: f64,
    pub cooperation_low: f64,
    pub delta_cooperation: f64,
    pub normalized_payoff_high: f64,
    pub normalized_payoff_low: f64,
    pub delta_normalized_payoff: f64,
}

/// Builds the 5−1 difference table from manipulated-condition summaries.
/// A missing extreme is an error, never a silently dropped row.
pub fn diff_table(stats: &[SummaryStats]) -> Result<Vec<DiffRow>, AnalysisError> {
    type Key = (String, Dimension, StrategyKind);
    type Cell<'a> = (Key, [Option<&'a SummaryStats>; 2]);
    let mut cells: BTreeMap<(String, String, String), Cell> = BTreeMap::new();
    for stat in stats {
        if stat.experiment != Experiment::GameManipulated {
            continue;
        }
        let manipulation = stat.manipulation.expect("manipulated stats carry one");
        let opponent = stat.opponent.expect("game stats carry an opponent");
        let sort_key = (
            stat.model.clone(),
            dimension_order(manipulation.dimension).to_string(),
            opponent.name().to_string(),
        );
        let entry = cells.entry(sort_key).or_insert((
            (stat.model.clone(), manipulation.dimension, opponent),
            [None, None],
        ));
        match manipulation.value {
            1 => entry.1[0] = Some(stat),
            5 => entry.1[1] = Some(stat),
            other => unreachable!("manipulation value {other} cannot be built"),
        }
    }

    let mut rows = Vec::new();
    for ((model, dimension, opponent), [low, high]) in cells.into_values() {
        let low = low.ok_or_else(|| AnalysisError::MissingPair {
            model: model.clone(),
            dimension,
            opponent,
            missing_value: 1,
        })?;
        let high = high.ok_or_else(|| AnalysisError::MissingPair {
            model: model.clone(),
            dimension,
            opponent,
            missing_value: 5,
        })?;
        rows.push(DiffRow {
            model,
            dimension,
            opponent,
            cooperation_high: high.avg_cooperation_rate,
            cooperation_low: low.avg_cooperation_rate,
            delta_cooperation: high.avg_cooperation_rate - low.avg_cooperation_rate,
            normalized_payoff_high: high.normalized_payoff,
            normalized_payoff_low: low.normalized_payoff,
            delta_normalized_payoff: high.normalized_payoff - low.normalized_payoff,
        });
    }
    Ok(rows)
}

/// Stable dimension ordering for report rows: the O, C, E, A, N axis
/// order, encoded as a sortable prefix.
fn dimension_order(d: Dimension) -> &'static str {
    match d {
        Dimension::O => "1-O",
        Dimension::C => "2-C",
        Dimension::E => "3-E",
        Dimension::A => "4-A",
        Dimension::N => "5-N",
    }
}

/// Radar-plot data: one series per measured model plus the fixed human
/// self-report series, axes in O, C, E, A, N order.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct RadarData {
    pub axes: [String; 5],
    pub scale_min: f64,
    pub scale_max: f64,
    pub series: Vec<RadarSeries>,
}

#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct RadarSeries {
    pub name: String,
    pub values: [f64; 5],
}

pub fn radar_data(models: &[(String, TraitScores)]) -> RadarData {
    let mut series: Vec<RadarSeries> = models
        .iter()
        .map(|(name, scores)| RadarSeries {
            name: name.clone(),
            values: scores.as_array_ocean(),
        })
        .collect();
    series.push(RadarSeries {
        name: "Human".to_string(),
        values: reference::HUMAN.as_array_ocean(),
    });
    RadarData {
        axes: ["O", "C", "E", "A", "N"].map(str::to_string),
        scale_min: 1.0,
        scale_max: 5.0,
        series,
    }
}

fn reports_dir(dir: &Path) -> Result<PathBuf, AnalysisError> {
    let reports = dir.join("reports");
    fs::create_dir_all(&reports).map_err(|source| AnalysisError::Io {
        path: reports.clone(),
        source,
    })?;
    Ok(reports)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), AnalysisError> {
    fs::write(path, bytes).map_err(|source| AnalysisError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn manipulation_label(m: Option<Manipulation>) -> String {
    match m {
        Some(m) => format!("{}{}", m.dimension.code(), m.value),
        None => String::new(),
    }
}

fn opponent_label(o: Option<StrategyKind>) -> &'static str {
    o.map(|k| k.name()).unwrap_or("")
}

fn experiment_label(e: Experiment) -> &'static str {
    match e {
        Experiment::BfiMeasurement => "bfi_measurement",
        Experiment::GameBaseline => "game_baseline",
        Experiment::GameInformed => "game_informed",
        Experiment::GameManipulated => "game_manipulated",
    }
}

/// Writes `reports/coop.csv`: pooled cooperation rate per condition.
pub fn report_coop(dir: &Path) -> Result<PathBuf, AnalysisError> {
    let run = load_run(dir)?;
    let stats = summarize(&run)?;
    let path = reports_dir(dir)?.join("coop.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    w.write_record([
        "condition_id",
        "experiment",
        "model",
        "opponent",
        "manipulation",
        "n_matches",
        "rounds",
        "cooperation_rate",
    ])
    .map_err(|e| csv_error(&path, e))?;
    for s in &stats {
        w.write_record([
            s.condition_id.clone(),
            experiment_label(s.experiment).to_string(),
            s.model.clone(),
            opponent_label(s.opponent).to_string(),
            manipulation_label(s.manipulation),
            s.n_matches.to_string(),
            s.rounds.to_string(),
            s.avg_cooperation_rate.to_string(),
        ])
        .map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|source| AnalysisError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Writes `reports/payoff.csv` plus `payoff.meta.json` documenting the
/// normalization rule, so downstream consumers can rescale if they want
/// a different convention.
pub fn report_payoff(dir: &Path) -> Result<PathBuf, AnalysisError> {
    let run = load_run(dir)?;
    let stats = summarize(&run)?;
    let reports = reports_dir(dir)?;
    let path = reports.join("payoff.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    w.write_record([
        "condition_id",
        "experiment",
        "model",
        "opponent",
        "manipulation",
        "n_matches",
        "rounds",
        "avg_cumulative_payoff",
        "normalized_payoff",
    ])
    .map_err(|e| csv_error(&path, e))?;
    for s in &stats {
        w.write_record([
            s.condition_id.clone(),
            experiment_label(s.experiment).to_string(),
            s.model.clone(),
            opponent_label(s.opponent).to_string(),
            manipulation_label(s.manipulation),
            s.n_matches.to_string(),
            s.rounds.to_string(),
            s.avg_cumulative_payoff.to_string(),
            s.normalized_payoff.to_string(),
        ])
        .map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|source| AnalysisError::Io {
        path: path.clone(),
        source,
    })?;

    let matrix = &run.manifest.matrix;
    let meta = serde_json::json!({
        "normalization": "avg_cumulative_payoff / (rounds * T)",
        "t": matrix.t(),
        "note": "raw averages are always emitted alongside, so any other scaling can be applied downstream",
    });
    write_file(
        &reports.join("payoff.meta.json"),
        serde_json::to_string_pretty(&meta)
            .expect("meta serializes")
            .as_bytes(),
    )?;
    Ok(path)
}

/// Writes `reports/diff.csv`: the value-5 minus value-1 comparison per
/// (model, dimension, opponent).
pub fn report_diff(dir: &Path) -> Result<PathBuf, AnalysisError> {
    let run = load_run(dir)?;
    let stats = summarize(&run)?;
    let rows = diff_table(&stats)?;
    let path = reports_dir(dir)?.join("diff.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    w.write_record([
        "model",
        "dimension",
        "opponent",
        "cooperation_high",
        "cooperation_low",
        "delta_cooperation",
        "normalized_payoff_high",
        "normalized_payoff_low",
        "delta_normalized_payoff",
    ])
    .map_err(|e| csv_error(&path, e))?;
    for r in &rows {
        w.write_record([
            r.model.clone(),
            r.dimension.code().to_string(),
            r.opponent.name().to_string(),
            r.cooperation_high.to_string(),
            r.cooperation_low.to_string(),
            r.delta_cooperation.to_string(),
            r.normalized_payoff_high.to_string(),
            r.normalized_payoff_low.to_string(),
            r.delta_normalized_payoff.to_string(),
        ])
        .map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|source| AnalysisError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Writes `reports/radar.json` (and optionally `radar.svg`) from the
/// measured per-model score CSVs under `<run>/bfi/`, always including
/// the human reference series.
pub fn report_radar(dir: &Path, svg: bool) -> Result<PathBuf, AnalysisError> {
    let mut models = Vec::new();
    let bfi_dir = dir.join("bfi");
    if bfi_dir.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(&bfi_dir)
            .map_err(|source| AnalysisError::Io {
                path: bfi_dir.clone(),
                source,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
            .collect();
        entries.sort();
        for path in entries {
            let name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("model")
                .to_string();
            let runs = crate::bfi::read_scores_csv(&path).map_err(|source| AnalysisError::Io {
                path: path.clone(),
                source,
            })?;
            if runs.is_empty() {
                return Err(AnalysisError::EmptyGroup(format!("bfi/{name}")));
            }
            models.push((name, crate::bfi::aggregate(&runs).mean));
        }
    }
    let data = radar_data(&models);
    let reports = reports_dir(dir)?;
    let path = reports.join("radar.json");
    write_file(
        &path,
        serde_json::to_string_pretty(&data)
            .expect("radar data serializes")
            .as_bytes(),
    )?;
    if svg {
        write_file(&reports.join("radar.svg"), radar_svg(&data).as_bytes())?;
    }
    Ok(path)
}

fn csv_error(path: &Path, e: csv::Error) -> AnalysisError {
    AnalysisError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    }
}

/// Renders the radar data as a static SVG pentagon plot.
pub fn radar_svg(data: &RadarData) -> String {
    const SIZE: f64 = 480.0;
    const CENTER: f64 = SIZE / 2.0;
    const RADIUS: f64 = 170.0;
    const PALETTE: [&str; 6] = [
        "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#555555",
    ];

    // Axis k points up from the center, then clockwise every 72 degrees.
    let angle = |k: usize| -> (f64, f64) {
        let theta = -std::f64::consts::FRAC_PI_2 + k as f64 * std::f64::consts::TAU / 5.0;
        (theta.cos(), theta.sin())
    };
    let point = |k: usize, value: f64| -> (f64, f64) {
        let unit = (value - data.scale_min) / (data.scale_max - data.scale_min);
        let (dx, dy) = angle(k);
        (CENTER + RADIUS * unit * dx, CENTER + RADIUS * unit * dy)
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {SIZE} {SIZE}\" font-family=\"sans-serif\" font-size=\"13\">\n"
    ));
    for ring in 1..=4 {
        let value = data.scale_min + (data.scale_max - data.scale_min) * ring as f64 / 4.0;
        let ring_points: Vec<String> = (0..5)
            .map(|k| {
                let (x, y) = point(k, value);
                format!("{x:.1},{y:.1}")
            })
            .collect();
        svg.push_str(&format!(
            "  <polygon points=\"{}\" fill=\"none\" stroke=\"#cccccc\"/>\n",
            ring_points.join(" ")
        ));
    }
    for (k, label) in data.axes.iter().enumerate() {
        let (x, y) = point(k, data.scale_max);
        let (dx, dy) = angle(k);
        svg.push_str(&format!(
            "  <line x1=\"{CENTER}\" y1=\"{CENTER}\" x2=\"{x:.1}\" y2=\"{y:.1}\" stroke=\"#cccccc\"/>\n"
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{label}</text>\n",
            x + dx * 16.0,
            y + dy * 16.0 + 4.0
        ));
    }
    for (i, series) in data.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = series
            .values
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let (x, y) = point(k, *v);
                format!("{x:.1},{y:.1}")
            })
            .collect();
        svg.push_str(&format!(
            "  <polygon class=\"series\" points=\"{}\" fill=\"{color}\" fill-opacity=\"0.08\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            pts.join(" ")
        ));
        svg.push_str(&format!(
            "  <text x=\"12\" y=\"{}\" fill=\"{color}\">{}</text>\n",
            20 + i * 18,
            series.name
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
