//! Posterior summaries of effects and channels.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::model::{Hyperparams, ModelParams};
use crate::vi::PosteriorDraws;

/// Fewest draws accepted for quantile summaries.
pub const MIN_DRAWS: usize = 40;
/// Selection probability above which a channel is flagged important.
pub const IMPORTANCE_THRESHOLD: f64 = 0.9;
pub const INTERVAL: (f64, f64) = (0.025, 0.975);

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EffectPoint {
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
    /// Fraction of draws with an effect that is not exactly zero.
    pub prob_nonzero: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EffectSummary {
    pub points: Vec<EffectPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChannelPoint {
    pub selection_prob: f64,
    pub weight: f64,
    pub important: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChannelSummary {
    pub channels: Vec<ChannelPoint>,
}

fn check_count(draws: &PosteriorDraws) -> Result<()> {
    if draws.len() < MIN_DRAWS {
        return Err(Error::TooFewDraws {
            got: draws.len(),
            need: MIN_DRAWS,
        });
    }
    Ok(())
}

/// Per-coordinate median, central 95% interval and nonzero probability of
/// the thresholded effects.
pub fn summarize_effects(draws: &PosteriorDraws, hyper: &Hyperparams) -> Result<EffectSummary> {
    check_count(draws)?;
    let effects: Vec<Vec<f64>> = draws.thetas.iter().map(|t| t.beta_tilde(hyper.tau)).collect();
    let g = effects.len() as f64;
    let mut column = Vec::with_capacity(effects.len());
    let points = (0..draws.samples())
        .map(|m| {
            column.clear();
            column.extend(effects.iter().map(|b| b[m]));
            let nonzero = column.iter().filter(|v| **v != 0.0).count();
            column.sort_by(f64::total_cmp);
            EffectPoint {
                median: math::quantile_sorted(&column, 0.5),
                lower: math::quantile_sorted(&column, INTERVAL.0),
                upper: math::quantile_sorted(&column, INTERVAL.1),
                prob_nonzero: nonzero as f64 / g,
            }
        })
        .collect();
    Ok(EffectSummary { points })
}

/// Selection probabilities, normalized median weights and importance flags.
pub fn summarize_channels(draws: &PosteriorDraws) -> Result<ChannelSummary> {
    check_count(draws)?;
    let weights = median_direction(draws)?;
    let channels = selection_probabilities(draws)
        .into_iter()
        .zip(weights)
        .map(|(selection_prob, weight)| ChannelPoint {
            selection_prob,
            weight,
            important: selection_prob > IMPORTANCE_THRESHOLD,
        })
        .collect();
    Ok(ChannelSummary { channels })
}

/// Mean of each selector over the draws.
pub fn selection_probabilities(draws: &PosteriorDraws) -> Vec<f64> {
    let n = draws.len() as f64;
    let mut out = vec![0.0; draws.channels()];
    for theta in &draws.thetas {
        for (acc, d) in out.iter_mut().zip(&theta.delta) {
            *acc += d;
        }
    }
    out.iter_mut().for_each(|v| *v /= n);
    out
}

/// L2-normalized per-coordinate median of the projected weights; zero when
/// every median is zero.
pub fn median_direction(draws: &PosteriorDraws) -> Result<Vec<f64>> {
    let projected = draws.thetas.iter().map(ModelParams::alpha).collect::<Result<Vec<_>>>()?;
    let mut column = Vec::with_capacity(projected.len());
    let medians: Vec<f64> = (0..draws.channels())
        .map(|e| {
            column.clear();
            column.extend(projected.iter().map(|a| a[e]));
            math::median(&column)
        })
        .collect();
    let norm = math::norm2(&medians);
    Ok(if norm > 0.0 {
        medians.iter().map(|m| m / norm).collect()
    } else {
        medians
    })
}
