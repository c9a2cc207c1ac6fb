//! Character-level accuracy, BCI utility and sequences needed for 80%.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::sqrt;
use crate::model::{Orientation, TimingConfig, STIMULI};
use crate::predict::{self, CharacterDecoding, Decoded};
use crate::speller::Keyboard;

/// Flashes per sequence: six rows and six columns.
pub const FLASHES_PER_SEQUENCE: usize = 2 * STIMULI;

/// Decoded characters of one sentence or replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupDecoding {
    /// `predictions[n - 1][c]` is character `c` decoded from `n` sequences.
    pub predictions: Vec<Vec<char>>,
    pub truths: Vec<char>,
}

impl GroupDecoding {
    /// Collects fused decodings, ordered by character; every character must
    /// carry a truth and the same sequence counts.
    pub fn from_decodings(decodings: &[CharacterDecoding]) -> Result<Self> {
        let mut by_char: BTreeMap<u32, Vec<&CharacterDecoding>> = BTreeMap::new();
        for d in decodings {
            by_char.entry(d.character).or_default().push(d);
        }
        let depth = by_char.values().map(Vec::len).min().unwrap_or(0);
        let mut predictions = alloc::vec![Vec::with_capacity(by_char.len()); depth];
        let mut truths = Vec::with_capacity(by_char.len());
        for (c, mut list) in by_char {
            if list.len() != depth {
                return Err(Error::LengthMismatch {
                    expected: depth,
                    found: list.len(),
                });
            }
            list.sort_by_key(|d| d.n_seq);
            let truth = list[0]
                .truth
                .ok_or_else(|| Error::InvalidConfig(alloc::format!("character {c} has no label")))?;
            truths.push(truth);
            for (n, d) in list.iter().enumerate() {
                predictions[n].push(d.decoded.symbol);
            }
        }
        Ok(Self { predictions, truths })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AccuracyPoint {
    pub n_seq: usize,
    /// Mean over groups of the per-group fraction correct.
    pub mean: f64,
    /// Sample standard deviation over groups; zero for a single group.
    pub sd: f64,
    pub groups: usize,
    pub characters: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AccuracyCurve {
    pub points: Vec<AccuracyPoint>,
}

impl AccuracyCurve {
    /// Curve from plain mean accuracies at `n = 1, 2, ...`.
    pub fn from_means(means: &[f64]) -> Self {
        Self {
            points: means
                .iter()
                .enumerate()
                .map(|(k, m)| AccuracyPoint {
                    n_seq: k + 1,
                    mean: *m,
                    sd: 0.0,
                    groups: 1,
                    characters: 0,
                })
                .collect(),
        }
    }

    pub fn means(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.mean).collect()
    }
}

/// Fraction decoded correctly at every sequence count, averaged over groups.
///
/// The curve runs to the smallest depth present in any group.
pub fn accuracy_by_sequences(groups: &[GroupDecoding]) -> Result<AccuracyCurve> {
    let depth = groups.iter().map(|g| g.predictions.len()).min().unwrap_or(0);
    for g in groups {
        for p in &g.predictions {
            if p.len() != g.truths.len() {
                return Err(Error::LengthMismatch {
                    expected: g.truths.len(),
                    found: p.len(),
                });
            }
        }
    }
    let mut points = Vec::with_capacity(depth);
    for n in 0..depth {
        let mut accs = Vec::with_capacity(groups.len());
        let mut characters = 0;
        for g in groups.iter().filter(|g| !g.truths.is_empty()) {
            let hits = g.predictions[n].iter().zip(&g.truths).filter(|(p, t)| p == t).count();
            accs.push(hits as f64 / g.truths.len() as f64);
            characters += g.truths.len();
        }
        let k = accs.len() as f64;
        let mean = if accs.is_empty() { 0.0 } else { accs.iter().sum::<f64>() / k };
        let sd = if accs.len() > 1 {
            sqrt(accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (k - 1.0))
        } else {
            0.0
        };
        points.push(AccuracyPoint {
            n_seq: n + 1,
            mean,
            sd,
            groups: accs.len(),
            characters,
        });
    }
    Ok(AccuracyCurve { points })
}

/// Seconds to select one character after `n_seq` sequences.
pub fn character_time(n_seq: usize, timing: &TimingConfig) -> f64 {
    (n_seq * FLASHES_PER_SEQUENCE) as f64 * timing.soa_s() + timing.pause_s
}

/// Bits per second: `max(0, 2P - 1) log2(K - 1) / T_char`.
pub fn bci_utility(accuracy: f64, n_seq: usize, timing: &TimingConfig, n_keys: usize) -> f64 {
    if n_keys < 2 || n_seq == 0 {
        return 0.0;
    }
    let gain = (2.0 * accuracy - 1.0).max(0.0);
    gain * libm::log2((n_keys - 1) as f64) / character_time(n_seq, timing)
}

/// Utility at every point of the curve.
pub fn utility_curve(curve: &AccuracyCurve, timing: &TimingConfig, n_keys: usize) -> Vec<f64> {
    curve
        .points
        .iter()
        .map(|p| bci_utility(p.mean, p.n_seq, timing, n_keys))
        .collect()
}

/// Largest utility over the curve with the sequence count attaining it
/// (the smallest such count on ties).
pub fn best_utility(curve: &AccuracyCurve, timing: &TimingConfig, n_keys: usize) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (p, u) in curve.points.iter().zip(utility_curve(curve, timing, n_keys)) {
        if best.is_none_or(|(_, b)| u > b) {
            best = Some((p.n_seq, u));
        }
    }
    best
}

/// Smallest sequence count whose mean accuracy reaches 0.8.
pub fn n_seq_80(curve: &AccuracyCurve) -> Option<usize> {
    curve.points.iter().find(|p| p.mean >= 0.8).map(|p| p.n_seq)
}

/// One external classifier score for a stimulus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreRecord {
    pub character: u32,
    pub sequence: u32,
    pub orientation: Orientation,
    /// 1-based stimulus number.
    pub stimulus: usize,
    pub score: f64,
}

/// Decoding of one character from external scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreDecoding {
    pub character: u32,
    pub n_seq: usize,
    pub decoded: Decoded,
}

type StimulusScores = [Option<f64>; STIMULI];

/// Averages the scores of the first `n` sequences per stimulus and picks
/// the highest-scoring row and column, for every `n` available.
pub fn decode_scores(records: &[ScoreRecord], kb: &Keyboard) -> Result<Vec<ScoreDecoding>> {
    // (character, orientation) -> sequence -> scores by stimulus
    let mut table: BTreeMap<(u32, u8), BTreeMap<u32, StimulusScores>> = BTreeMap::new();
    for (index, r) in records.iter().enumerate() {
        if !(1..=STIMULI).contains(&r.stimulus) {
            return Err(Error::InvalidConfig(alloc::format!(
                "score record {index}: stimulus {} outside 1..=6",
                r.stimulus
            )));
        }
        if !r.score.is_finite() {
            return Err(Error::NonFinite { what: "score", index });
        }
        let slots = table
            .entry((r.character, r.orientation.code()))
            .or_default()
            .entry(r.sequence)
            .or_insert([None; STIMULI]);
        if slots[r.stimulus - 1].replace(r.score).is_some() {
            return Err(Error::InvalidConfig(alloc::format!("score record {index} is a duplicate")));
        }
    }
    let fused = |seqs: &BTreeMap<u32, [Option<f64>; STIMULI]>, character: u32, orientation| -> Result<Vec<[f64; STIMULI]>> {
        let mut sum = [0.0; STIMULI];
        let mut out = Vec::with_capacity(seqs.len());
        for (k, slots) in seqs.values().enumerate() {
            for (acc, s) in sum.iter_mut().zip(slots) {
                *acc += s.ok_or(Error::IncompleteHalfSequence {
                    character,
                    sequence: k as u32 + 1,
                    orientation,
                })?;
            }
            out.push(sum.map(|v| v / (k + 1) as f64));
        }
        Ok(out)
    };
    let characters: Vec<u32> = {
        let mut c: Vec<u32> = table.keys().map(|k| k.0).collect();
        c.dedup();
        c
    };
    let mut out = Vec::new();
    let empty = BTreeMap::new();
    for c in characters {
        let rows = fused(table.get(&(c, Orientation::Row.code())).unwrap_or(&empty), c, Orientation::Row)?;
        let cols = fused(
            table.get(&(c, Orientation::Column.code())).unwrap_or(&empty),
            c,
            Orientation::Column,
        )?;
        for (n, (r, col)) in rows.iter().zip(&cols).enumerate() {
            out.push(ScoreDecoding {
                character: c,
                n_seq: n + 1,
                decoded: predict::decode_character(r, col, kb),
            });
        }
    }
    Ok(out)
}
