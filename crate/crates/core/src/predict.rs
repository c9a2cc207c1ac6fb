//! Posterior predictive distributions over the six stimuli, fusion across
//! repeated sequences, and character decoding.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, exp, ln};
use crate::model::{self, Dataset, HalfSequence, Orientation, STIMULI};
use crate::speller::Keyboard;
use crate::vi::PosteriorDraws;

/// A single draw holding more than this share of the weight is flagged.
pub const DEGENERATE_SHARE: f64 = 0.999;
/// Floor applied to every probability before fusion.
pub const FUSION_FLOOR: f64 = 1e-300;

/// How posterior draws are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    /// Self-normalized weights `pi(theta_g, z | X) / q(theta_g)`.
    #[default]
    Importance,
    /// Plain average over the surrogate draws.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictiveDist {
    pub probs: [f64; STIMULI],
    /// `(sum w)^2 / sum w^2` of the weights used.
    pub ess: f64,
    /// Whether one draw carries more than [`DEGENERATE_SHARE`] of the weight.
    pub degenerate: bool,
    pub orientation: Orientation,
}

/// Normalized weights with their diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceWeights {
    pub weights: Vec<f64>,
    pub ess: f64,
    pub max_share: f64,
}

impl ImportanceWeights {
    /// Self-normalizes `exp(log_weights)` with max subtraction.
    pub fn from_log(log_weights: &[f64]) -> Result<Self> {
        if log_weights.is_empty() {
            return Err(Error::TooFewDraws { got: 0, need: 1 });
        }
        if let Some(index) = log_weights.iter().position(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::NonFinite {
                what: "importance log-weight",
                index,
            });
        }
        let max = log_weights.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
        if max == f64::NEG_INFINITY {
            return Err(Error::NonFinite {
                what: "importance log-weight",
                index: 0,
            });
        }
        let mut weights: Vec<f64> = log_weights.iter().map(|v| exp(v - max)).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
        let max_share = weights.iter().fold(0.0f64, |a, b| a.max(*b));
        Ok(Self {
            ess: 1.0 / sum_sq,
            max_share,
            weights,
        })
    }

    pub fn uniform(count: usize) -> Result<Self> {
        Self::from_log(&alloc::vec![0.0; count])
    }

    pub fn degenerate(&self) -> bool {
        self.max_share > DEGENERATE_SHARE
    }
}

/// Weights of `draws` under `weighting`; importance weighting needs the
/// attached training log joint.
pub fn draw_weights(draws: &PosteriorDraws, weighting: Weighting) -> Result<ImportanceWeights> {
    match weighting {
        Weighting::Uniform => ImportanceWeights::uniform(draws.len()),
        Weighting::Importance => {
            let joint = draws.log_joint.as_ref().ok_or_else(|| {
                Error::InvalidConfig("importance weighting needs the training log joint of every draw".into())
            })?;
            if joint.len() != draws.len() {
                return Err(Error::len("training log joints", draws.len(), joint.len()));
            }
            let log_w: Vec<f64> = joint.iter().zip(&draws.log_q).map(|(p, q)| p - q).collect();
            ImportanceWeights::from_log(&log_w)
        }
    }
}

/// Reusable predictor: per-draw effects and gains are computed once.
#[derive(Debug, Clone)]
pub struct Predictor {
    beta_tilde: Vec<Vec<f64>>,
    gains: Vec<Vec<f64>>,
    weights: ImportanceWeights,
    channels: usize,
    samples: usize,
}

impl Predictor {
    pub fn new(draws: &PosteriorDraws, tau: f64, weighting: Weighting) -> Result<Self> {
        let weights = draw_weights(draws, weighting)?;
        Self::with_weights(draws, tau, weights)
    }

    pub fn with_weights(draws: &PosteriorDraws, tau: f64, weights: ImportanceWeights) -> Result<Self> {
        if weights.weights.len() != draws.len() {
            return Err(Error::len("weights", draws.len(), weights.weights.len()));
        }
        let gains = draws
            .thetas
            .iter()
            .map(|t| t.channel_weights())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            beta_tilde: draws.thetas.iter().map(|t| t.beta_tilde(tau)).collect(),
            gains,
            weights,
            channels: draws.channels(),
            samples: draws.samples(),
        })
    }

    pub fn weights(&self) -> &ImportanceWeights {
        &self.weights
    }

    /// `sum_g w_g Pr(z = j | theta_g, X_new)`.
    pub fn predict(&self, half: &HalfSequence) -> Result<PredictiveDist> {
        if half.channels() != self.channels || half.samples() != self.samples {
            return Err(Error::shape(
                "model vs half-sequence",
                (self.channels, self.samples),
                (half.channels(), half.samples()),
            ));
        }
        let mut probs = [0.0; STIMULI];
        for ((beta, gains), w) in self.beta_tilde.iter().zip(&self.gains).zip(&self.weights.weights) {
            if *w == 0.0 {
                continue;
            }
            let mut eta = model::linear_predictors(half, gains, beta);
            if eta.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "linear predictor",
                    index: 0,
                });
            }
            math::softmax_in_place(&mut eta);
            for (p, e) in probs.iter_mut().zip(&eta) {
                *p += w * e;
            }
        }
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        Ok(PredictiveDist {
            probs,
            ess: self.weights.ess,
            degenerate: self.weights.degenerate(),
            orientation: half.key.orientation,
        })
    }
}

/// One-off predictive distribution; see [`Predictor`] for repeated use.
pub fn predictive_distribution(
    draws: &PosteriorDraws,
    half: &HalfSequence,
    tau: f64,
    weighting: Weighting,
) -> Result<PredictiveDist> {
    Predictor::new(draws, tau, weighting)?.predict(half)
}

/// Normalized elementwise product of the inputs, each floored at
/// [`FUSION_FLOOR`]; computed in log space.
pub fn fuse_halfsequences(dists: &[PredictiveDist]) -> Result<[f64; STIMULI]> {
    let first = dists.first().ok_or(Error::EmptyList)?;
    let mut log = [0.0; STIMULI];
    for d in dists {
        if d.orientation != first.orientation {
            return Err(Error::MixedOrientation {
                first: first.orientation,
                other: d.orientation,
            });
        }
        for (acc, p) in log.iter_mut().zip(&d.probs) {
            *acc += ln(p.max(FUSION_FLOOR));
        }
    }
    math::softmax_in_place(&mut log);
    Ok(log)
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax(probs: &[f64; STIMULI]) -> usize {
    let mut best = 0;
    for j in 1..STIMULI {
        if probs[j] > probs[best] {
            best = j;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decoded {
    pub symbol: char,
    /// 1-based grid coordinates.
    pub row: usize,
    pub column: usize,
}

/// Symbol at the intersection of the most likely row and column.
pub fn decode_character(row: &[f64; STIMULI], column: &[f64; STIMULI], kb: &Keyboard) -> Decoded {
    let (r, c) = (argmax(row) + 1, argmax(column) + 1);
    Decoded {
        symbol: kb.symbol(r, c).expect("argmax lies on the grid"),
        row: r,
        column: c,
    }
}

/// Prediction for one half-sequence of a test set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfPrediction {
    pub character: u32,
    pub sequence: u32,
    pub dist: PredictiveDist,
}

/// Fused decoding of one character after the first `n_seq` sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacterDecoding {
    pub character: u32,
    pub n_seq: usize,
    pub row: [f64; STIMULI],
    pub column: [f64; STIMULI],
    pub decoded: Decoded,
    /// Keyboard symbol at the labeled target row and column, if labeled.
    pub truth: Option<char>,
}

/// Predicts every half-sequence of `data`.
pub fn predict_dataset(predictor: &Predictor, data: &Dataset) -> Result<Vec<HalfPrediction>> {
    data.half_sequences
        .iter()
        .map(|h| {
            Ok(HalfPrediction {
                character: h.key.character,
                sequence: h.key.sequence,
                dist: predictor.predict(h)?,
            })
        })
        .collect()
}

/// Fuses the first `n` sequences of every character for `n = 1..=max_seq`
/// (or up to the sequences present) and decodes each.
///
/// `half` and `data` must be aligned, as returned by [`predict_dataset`].
pub fn decode_dataset(
    data: &Dataset,
    half: &[HalfPrediction],
    kb: &Keyboard,
    max_seq: Option<usize>,
) -> Result<Vec<CharacterDecoding>> {
    if half.len() != data.len() {
        return Err(Error::LengthMismatch {
            expected: data.len(),
            found: half.len(),
        });
    }
    let mut characters: Vec<u32> = data.half_sequences.iter().map(|h| h.key.character).collect();
    characters.sort_unstable();
    characters.dedup();
    let mut out = Vec::new();
    for c in characters {
        let mut rows: Vec<(u32, &PredictiveDist, Option<usize>)> = Vec::new();
        let mut cols: Vec<(u32, &PredictiveDist, Option<usize>)> = Vec::new();
        for (h, p) in data.half_sequences.iter().zip(half) {
            if h.key.character != c {
                continue;
            }
            let entry = (h.key.sequence, &p.dist, h.target);
            match h.key.orientation {
                Orientation::Row => rows.push(entry),
                Orientation::Column => cols.push(entry),
            }
        }
        rows.sort_by_key(|e| e.0);
        cols.sort_by_key(|e| e.0);
        let available = rows.len().min(cols.len());
        let limit = max_seq.map_or(available, |m| m.min(available));
        let truth = match (rows.first().and_then(|r| r.2), cols.first().and_then(|c| c.2)) {
            (Some(r), Some(col)) => kb.symbol(r + 1, col + 1),
            _ => None,
        };
        for n in 1..=limit {
            let rd: Vec<PredictiveDist> = rows[..n].iter().map(|e| *e.1).collect();
            let cd: Vec<PredictiveDist> = cols[..n].iter().map(|e| *e.1).collect();
            let row = fuse_halfsequences(&rd)?;
            let column = fuse_halfsequences(&cd)?;
            out.push(CharacterDecoding {
                character: c,
                n_seq: n,
                row,
                column,
                decoded: decode_character(&row, &column, kb),
                truth,
            });
        }
    }
    Ok(out)
}
