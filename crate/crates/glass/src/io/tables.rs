//! CSV outputs and the external score import.

use std::path::Path;

use glass_core::eval::{AccuracyCurve, ScoreRecord};
use glass_core::model::{Orientation, STIMULI};
use glass_core::predict::{CharacterDecoding, PredictiveDist};
use glass_core::summary::{ChannelSummary, EffectSummary};
use glass_core::vi::TracePoint;
use serde::Serialize;

use crate::error::{AppError, Result};

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| AppError::format(path, e.to_string()))
}

fn finish(path: &Path, mut w: csv::Writer<std::fs::File>) -> Result<()> {
    w.flush().map_err(|e| AppError::io(path, e))
}

fn write_rows<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = writer(path)?;
    let fail = |e: csv::Error| AppError::format(path, e.to_string());
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(&row).map_err(fail)?;
    }
    finish(path, w)
}

pub fn write_trace(path: &Path, trace: &[TracePoint]) -> Result<()> {
    write_rows(
        path,
        &["iteration", "elbo"],
        trace.iter().map(|p| vec![p.iteration.to_string(), p.elbo.to_string()]),
    )
}

/// Fused predictive distribution of one character, orientation and
/// sequence count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionRow {
    pub character: u32,
    pub orientation: Orientation,
    pub n_seq: usize,
    pub probs: [f64; STIMULI],
    pub ess: f64,
}

impl PredictionRow {
    pub fn argmax(&self) -> usize {
        glass_core::predict::argmax(&self.probs) + 1
    }
}

/// Rows for both orientations of every decoding.
pub fn prediction_rows(decodings: &[CharacterDecoding], ess: f64) -> Vec<PredictionRow> {
    let mut rows = Vec::with_capacity(2 * decodings.len());
    for d in decodings {
        for (orientation, probs) in [(Orientation::Row, d.row), (Orientation::Column, d.column)] {
            rows.push(PredictionRow {
                character: d.character,
                orientation,
                n_seq: d.n_seq,
                probs,
                ess,
            });
        }
    }
    rows.sort_by_key(|r| (r.character, r.orientation, r.n_seq));
    rows
}

pub const PREDICTION_HEADER: [&str; 10] =
    ["c", "u", "n_seq_used", "argmax_j", "prob_1", "prob_2", "prob_3", "prob_4", "prob_5", "prob_6"];

pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let mut header = PREDICTION_HEADER.to_vec();
    header.push("ess");
    write_rows(
        path,
        &header,
        rows.iter().map(|r| {
            let mut row = vec![
                r.character.to_string(),
                r.orientation.as_str().to_string(),
                r.n_seq.to_string(),
                r.argmax().to_string(),
            ];
            row.extend(r.probs.iter().map(f64::to_string));
            row.push(r.ess.to_string());
            row
        }),
    )
}

/// Per-half-sequence predictive distributions before fusion.
pub fn write_half_predictions(path: &Path, rows: &[(u32, u32, PredictiveDist)]) -> Result<()> {
    let header = ["c", "s", "u", "prob_1", "prob_2", "prob_3", "prob_4", "prob_5", "prob_6", "ess", "degenerate"];
    write_rows(
        path,
        &header,
        rows.iter().map(|(c, s, d)| {
            let mut row = vec![c.to_string(), s.to_string(), d.orientation.as_str().to_string()];
            row.extend(d.probs.iter().map(f64::to_string));
            row.push(d.ess.to_string());
            row.push(d.degenerate.to_string());
            row
        }),
    )
}

pub fn write_decoded(path: &Path, decodings: &[CharacterDecoding]) -> Result<()> {
    write_rows(
        path,
        &["c", "n_seq", "row", "column", "symbol", "truth"],
        decodings.iter().map(|d| {
            vec![
                d.character.to_string(),
                d.n_seq.to_string(),
                d.decoded.row.to_string(),
                d.decoded.column.to_string(),
                d.decoded.symbol.to_string(),
                d.truth.map_or(String::new(), |c| c.to_string()),
            ]
        }),
    )
}

pub fn write_metrics(path: &Path, curve: &AccuracyCurve, utility: &[f64]) -> Result<()> {
    write_rows(
        path,
        &["n_seq", "mean_acc", "sd", "utility"],
        curve.points.iter().zip(utility).map(|(p, u)| {
            vec![p.n_seq.to_string(), p.mean.to_string(), p.sd.to_string(), u.to_string()]
        }),
    )
}

pub fn write_effects(path: &Path, summary: &EffectSummary, sample_rate: f64) -> Result<()> {
    write_rows(
        path,
        &["m", "time_ms", "median", "lower", "upper", "prob_nonzero"],
        summary.points.iter().enumerate().map(|(m, p)| {
            vec![
                (m + 1).to_string(),
                (1000.0 * m as f64 / sample_rate).to_string(),
                p.median.to_string(),
                p.lower.to_string(),
                p.upper.to_string(),
                p.prob_nonzero.to_string(),
            ]
        }),
    )
}

pub fn write_channels(path: &Path, summary: &ChannelSummary, names: &[String]) -> Result<()> {
    write_rows(
        path,
        &["e", "name", "selection_prob", "weight", "important"],
        summary.channels.iter().zip(names).enumerate().map(|(e, (p, name))| {
            vec![
                (e + 1).to_string(),
                name.clone(),
                p.selection_prob.to_string(),
                p.weight.to_string(),
                p.important.to_string(),
            ]
        }),
    )
}

/// Effect curves and per-channel weight maps for external plotting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotData {
    pub time_ms: Vec<f64>,
    pub effect_median: Vec<f64>,
    pub effect_lower: Vec<f64>,
    pub effect_upper: Vec<f64>,
    pub prob_nonzero: Vec<f64>,
    pub channel_weight: std::collections::BTreeMap<String, f64>,
    pub selection_prob: std::collections::BTreeMap<String, f64>,
}

impl PlotData {
    pub fn new(effects: &EffectSummary, channels: &ChannelSummary, names: &[String], sample_rate: f64) -> Self {
        Self {
            time_ms: (0..effects.points.len()).map(|m| 1000.0 * m as f64 / sample_rate).collect(),
            effect_median: effects.points.iter().map(|p| p.median).collect(),
            effect_lower: effects.points.iter().map(|p| p.lower).collect(),
            effect_upper: effects.points.iter().map(|p| p.upper).collect(),
            prob_nonzero: effects.points.iter().map(|p| p.prob_nonzero).collect(),
            channel_weight: names.iter().cloned().zip(channels.channels.iter().map(|c| c.weight)).collect(),
            selection_prob: names
                .iter()
                .cloned()
                .zip(channels.channels.iter().map(|c| c.selection_prob))
                .collect(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("plot data serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| AppError::io(path, e))
    }
}

/// Reads a score file with header `c,s,u,j,score`.
pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    let file = std::fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    read_scores_from(file).map_err(|m| AppError::format(path, m))
}

pub fn read_scores_from<R: std::io::Read>(input: R) -> std::result::Result<Vec<ScoreRecord>, String> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers().map_err(|e| e.to_string())?.clone();
    if header.iter().collect::<Vec<_>>() != ["c", "s", "u", "j", "score"] {
        return Err("score header must be c,s,u,j,score".into());
    }
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| format!("line {line}: {e}"))?;
        let bad = |what: &str| format!("line {line}: bad {what}");
        let orientation = match rec[2].to_ascii_lowercase().as_str() {
            "row" | "r" => Orientation::Row,
            "column" | "col" | "c" => Orientation::Column,
            _ => return Err(bad("orientation")),
        };
        out.push(ScoreRecord {
            character: rec[0].parse().map_err(|_| bad("character"))?,
            sequence: rec[1].parse().map_err(|_| bad("sequence"))?,
            orientation,
            stimulus: rec[3].parse().map_err(|_| bad("stimulus"))?,
            score: rec[4].parse().map_err(|_| bad("score"))?,
        });
    }
    Ok(out)
}

/// One row of the shrinkage sensitivity table.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityRow {
    pub ratio: f64,
    pub tau: f64,
    pub accuracy: Vec<f64>,
    pub best_utility: f64,
    pub best_n_seq: usize,
    pub n_seq_80: Option<usize>,
}

pub fn write_sensitivity(path: &Path, rows: &[SensitivityRow]) -> Result<()> {
    let depth = rows.iter().map(|r| r.accuracy.len()).max().unwrap_or(0);
    let mut header: Vec<String> = vec!["ratio".into(), "tau".into()];
    header.extend((1..=depth).map(|n| format!("acc_n{n}")));
    header.extend(["best_utility".into(), "best_n_seq".into(), "n_seq_80".into()]);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_rows(
        path,
        &header,
        rows.iter().map(|r| {
            let mut row = vec![r.ratio.to_string(), r.tau.to_string()];
            row.extend((0..depth).map(|n| r.accuracy.get(n).map_or(String::new(), f64::to_string)));
            row.push(r.best_utility.to_string());
            row.push(r.best_n_seq.to_string());
            row.push(r.n_seq_80.map_or(String::new(), |n| n.to_string()));
            row
        }),
    )
}
