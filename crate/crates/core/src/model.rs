//! Domain types and the exact model: constrained multinomial likelihood over
//! the six stimuli of a half-sequence, the latent-channel decomposition of the
//! coefficient matrix, and the prior on raw effects, shrinkage, selectors and
//! raw channel weights.
//!
//! Indexing conventions: stimuli are 0-based (`0..6`) inside the crate, while
//! file formats and reports use the 1-based row/column numbers of the speller
//! grid. Epoch matrices are channel-major, `E` rows of `M` samples.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, dot, ln, normal_log_density, LN_2PI};

/// Stimuli per half-sequence (rows or columns of the 6x6 grid).
pub const STIMULI: usize = 6;

/// Projection refuses raw weight vectors with a smaller norm.
pub const ZERO_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Orientation {
    Row,
    Column,
}

impl Orientation {
    pub fn code(self) -> u8 {
        match self {
            Orientation::Row => 0,
            Orientation::Column => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Orientation::Row),
            1 => Some(Orientation::Column),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Orientation::Row => "row",
            Orientation::Column => "column",
        }
    }
}

/// Identifies a half-sequence: character `c`, sequence `s` (both 1-based) and orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HalfKey {
    pub character: u32,
    pub sequence: u32,
    pub orientation: Orientation,
}

impl HalfKey {
    pub fn new(character: u32, sequence: u32, orientation: Orientation) -> Self {
        Self {
            character,
            sequence,
            orientation,
        }
    }
}

/// EEG samples following one stimulus: `channels x samples`, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StimulusEpoch {
    channels: usize,
    samples: usize,
    sample_rate: f64,
    data: Vec<f64>,
}

impl StimulusEpoch {
    pub fn new(channels: usize, samples: usize, sample_rate: f64, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || samples == 0 {
            return Err(Error::shape("epoch", (1, 1), (channels, samples)));
        }
        if data.len() != channels * samples {
            return Err(Error::len("epoch buffer", channels * samples, data.len()));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "epoch signal",
                index,
            });
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        Ok(Self {
            channels,
            samples,
            sample_rate,
            data,
        })
    }

    pub fn zeros(channels: usize, samples: usize, sample_rate: f64) -> Self {
        Self {
            channels,
            samples,
            sample_rate,
            data: vec![0.0; channels * samples],
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn samples(&self) -> usize {
        self.samples
    }

    #[inline]
    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    #[inline]
    pub fn channel(&self, e: usize) -> &[f64] {
        &self.data[e * self.samples..(e + 1) * self.samples]
    }

    #[inline]
    pub fn channel_mut(&mut self, e: usize) -> &mut [f64] {
        &mut self.data[e * self.samples..(e + 1) * self.samples]
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the raw buffer. Callers must keep values finite.
    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// Six epochs (one per row or column) and, for training data, the target index.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSequence {
    pub key: HalfKey,
    pub epochs: [StimulusEpoch; STIMULI],
    /// 0-based index of the target stimulus.
    pub target: Option<usize>,
}

impl HalfSequence {
    pub fn new(key: HalfKey, epochs: [StimulusEpoch; STIMULI], target: Option<usize>) -> Result<Self> {
        let (e, m, rate) = (epochs[0].channels, epochs[0].samples, epochs[0].sample_rate);
        for epoch in &epochs[1..] {
            if epoch.channels != e || epoch.samples != m {
                return Err(Error::shape("half-sequence epoch", (e, m), (epoch.channels, epoch.samples)));
            }
            if epoch.sample_rate != rate {
                return Err(Error::InvalidConfig(alloc::format!(
                    "mixed sample rates {rate} and {} in one half-sequence",
                    epoch.sample_rate
                )));
            }
        }
        if let Some(z) = target {
            if z >= STIMULI {
                return Err(Error::len("target index bound", STIMULI - 1, z));
            }
        }
        Ok(Self { key, epochs, target })
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.epochs[0].channels
    }

    #[inline]
    pub fn samples(&self) -> usize {
        self.epochs[0].samples
    }

    /// Stimulus indicator `y_j`, 1 for the target and 0 otherwise.
    pub fn indicator(&self, j: usize) -> Option<bool> {
        self.target.map(|z| z == j)
    }
}

/// Stimulus presentation timing of the speller.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TimingConfig {
    pub flash_ms: f64,
    pub isi_ms: f64,
    pub pause_s: f64,
    pub window_ms: f64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            flash_ms: 31.25,
            isi_ms: 125.0,
            pause_s: 3.5,
            window_ms: 800.0,
        }
    }
}

impl TimingConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.flash_ms, self.isi_ms, self.pause_s, self.window_ms]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("timing values must be strictly positive".into()))
        }
    }

    /// Stimulus onset asynchrony in seconds.
    pub fn soa_s(&self) -> f64 {
        (self.flash_ms + self.isi_ms) / 1000.0
    }
}

/// Labeled or unlabeled collection of half-sequences sharing one epoch shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub half_sequences: Vec<HalfSequence>,
    pub channels: usize,
    pub samples: usize,
    pub sample_rate: f64,
    /// Number of characters `C` and sequences per character `S` in the design.
    pub characters: usize,
    pub sequences: usize,
    pub timing: TimingConfig,
    /// Positional metadata only.
    pub channel_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        half_sequences: Vec<HalfSequence>,
        channels: usize,
        samples: usize,
        sample_rate: f64,
        timing: TimingConfig,
        channel_names: Vec<String>,
    ) -> Result<Self> {
        for half in &half_sequences {
            if half.channels() != channels || half.samples() != samples {
                return Err(Error::shape("dataset", (channels, samples), (half.channels(), half.samples())));
            }
            if half.epochs[0].sample_rate != sample_rate {
                return Err(Error::InvalidConfig(alloc::format!(
                    "half-sequence sample rate {} differs from dataset rate {sample_rate}",
                    half.epochs[0].sample_rate
                )));
            }
        }
        if !channel_names.is_empty() && channel_names.len() != channels {
            return Err(Error::len("channel names", channels, channel_names.len()));
        }
        timing.validate()?;
        let characters = half_sequences
            .iter()
            .map(|h| h.key.character as usize)
            .max()
            .unwrap_or(0);
        let sequences = half_sequences.iter().map(|h| h.key.sequence as usize).max().unwrap_or(0);
        let channel_names = if channel_names.is_empty() {
            default_channel_names(channels)
        } else {
            channel_names
        };
        Ok(Self {
            half_sequences,
            channels,
            samples,
            sample_rate,
            characters,
            sequences,
            timing,
            channel_names,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.half_sequences.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.half_sequences.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.half_sequences.iter().all(|h| h.target.is_some())
    }

    /// Copy keeping only sequences `1..=k` of every character.
    pub fn first_sequences(&self, k: usize) -> Dataset {
        let mut out = self.with_half_sequences(
            self.half_sequences
                .iter()
                .filter(|h| (h.key.sequence as usize) <= k)
                .cloned()
                .collect(),
        );
        out.sequences = self.sequences.min(k);
        out
    }

    /// Same header, different half-sequences.
    pub fn with_half_sequences(&self, half_sequences: Vec<HalfSequence>) -> Dataset {
        Dataset {
            half_sequences,
            channels: self.channels,
            samples: self.samples,
            sample_rate: self.sample_rate,
            characters: self.characters,
            sequences: self.sequences,
            timing: self.timing,
            channel_names: self.channel_names.clone(),
        }
    }

    pub fn check_compatible(&self, channels: usize, samples: usize) -> Result<()> {
        if self.channels != channels || self.samples != samples {
            return Err(Error::shape("model vs data", (channels, samples), (self.channels, self.samples)));
        }
        Ok(())
    }
}

/// `Ch1..ChE` when no montage names are given.
pub fn default_channel_names(channels: usize) -> Vec<String> {
    (1..=channels).map(|e| alloc::format!("Ch{e}")).collect()
}

/// The 16-channel montage used in the reference recordings.
pub const MONTAGE_16: [&str; 16] = [
    "F3", "Fz", "F4", "T7", "C3", "Cz", "C4", "T8", "CP3", "CP4", "P3", "Pz", "P4", "PO7", "Oz", "PO8",
];

/// Prior hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct Hyperparams {
    /// Soft-threshold level applied to the raw effects.
    pub tau: f64,
    /// Scale `A` of the half-Cauchy prior on the random-walk step size.
    pub cauchy_scale: f64,
    /// Prior inclusion probability of each channel.
    pub delta_prior: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            tau: 0.0,
            cauchy_scale: 1.0,
            delta_prior: 0.5,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!("tau must be >= 0, got {}", self.tau)));
        }
        if !(self.cauchy_scale > 0.0 && self.cauchy_scale.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!(
                "cauchy_scale must be > 0, got {}",
                self.cauchy_scale
            )));
        }
        if !(self.delta_prior > 0.0 && self.delta_prior < 1.0) {
            return Err(Error::InvalidConfig(alloc::format!(
                "delta_prior must lie in (0, 1), got {}",
                self.delta_prior
            )));
        }
        Ok(())
    }

    pub fn with_tau(self, tau: f64) -> Self {
        Self { tau, ..self }
    }
}

/// One realization of the model parameters.
///
/// `delta` holds the channel selectors. Exact draws are 0/1; relaxed training
/// samples lie strictly inside `(0, 1)` and are used as continuous gates.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelParams {
    pub beta_raw: Vec<f64>,
    pub sigma: f64,
    pub delta: Vec<f64>,
    pub alpha_raw: Vec<f64>,
}

impl ModelParams {
    pub fn samples(&self) -> usize {
        self.beta_raw.len()
    }

    pub fn channels(&self) -> usize {
        self.alpha_raw.len()
    }

    /// Latent-channel effects `S_tau(beta*)`.
    pub fn beta_tilde(&self, tau: f64) -> Vec<f64> {
        self.beta_raw.iter().map(|&b| soft_threshold(b, tau)).collect()
    }

    /// Unit-norm channel weights.
    pub fn alpha(&self) -> Result<Vec<f64>> {
        project_to_sphere(&self.alpha_raw)
    }

    /// Effective per-channel gain `delta_e * alpha_e` of the latent channel.
    pub fn channel_weights(&self) -> Result<Vec<f64>> {
        let alpha = self.alpha()?;
        Ok(self.delta.iter().zip(&alpha).map(|(d, a)| d * a).collect())
    }

    /// The rank-one coefficient matrix `diag(delta) alpha beta_tilde^T`, channel-major.
    pub fn coefficient_matrix(&self, tau: f64) -> Result<Vec<f64>> {
        let weights = self.channel_weights()?;
        let beta = self.beta_tilde(tau);
        let mut out = Vec::with_capacity(weights.len() * beta.len());
        for w in &weights {
            out.extend(beta.iter().map(|b| w * b));
        }
        Ok(out)
    }

    fn check_dims(&self, channels: usize, samples: usize) -> Result<()> {
        if self.delta.len() != self.alpha_raw.len() {
            return Err(Error::len("delta vs alpha", self.alpha_raw.len(), self.delta.len()));
        }
        if self.channels() != channels || self.samples() != samples {
            return Err(Error::shape("parameters vs epochs", (self.channels(), self.samples()), (channels, samples)));
        }
        Ok(())
    }
}

/// `sign(x) * max(|x| - tau, 0)`.
#[inline]
pub fn soft_threshold(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

/// Derivative of [`soft_threshold`]; zero at the kinks `|x| = tau`.
#[inline]
pub fn soft_threshold_slope(x: f64, tau: f64) -> f64 {
    if math::abs(x) > tau {
        1.0
    } else {
        0.0
    }
}

/// `alpha_raw / ||alpha_raw||_2`.
pub fn project_to_sphere(alpha_raw: &[f64]) -> Result<Vec<f64>> {
    let norm = math::norm2(alpha_raw);
    if !(norm >= ZERO_NORM_EPS) {
        return Err(Error::ZeroVector { norm });
    }
    Ok(alpha_raw.iter().map(|a| a / norm).collect())
}

/// Collapses each epoch onto the latent channel `sum_e delta_e alpha_e x_e`.
pub fn latent_channel_signal(half: &HalfSequence, delta: &[f64], alpha: &[f64]) -> Result<[Vec<f64>; STIMULI]> {
    let channels = half.channels();
    if delta.len() != channels {
        return Err(Error::len("selectors", channels, delta.len()));
    }
    if alpha.len() != channels {
        return Err(Error::len("channel weights", channels, alpha.len()));
    }
    Ok(core::array::from_fn(|j| {
        let epoch = &half.epochs[j];
        let mut latent = vec![0.0; epoch.samples()];
        for e in 0..channels {
            let w = delta[e] * alpha[e];
            if w != 0.0 {
                math::axpy(&mut latent, w, epoch.channel(e));
            }
        }
        latent
    }))
}

/// `eta_j = sum_e w_e <x_je, beta_tilde>` for the six stimuli.
pub(crate) fn linear_predictors(half: &HalfSequence, weights: &[f64], beta_tilde: &[f64]) -> [f64; STIMULI] {
    core::array::from_fn(|j| {
        let epoch = &half.epochs[j];
        weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(e, w)| w * dot(epoch.channel(e), beta_tilde))
            .sum()
    })
}

fn softmax6(eta: [f64; STIMULI]) -> Result<[f64; STIMULI]> {
    if let Some(index) = eta.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "linear predictor",
            index,
        });
    }
    let mut probs = eta;
    math::softmax_in_place(&mut probs);
    Ok(probs)
}

/// Probability that each of the six stimuli is the target.
pub fn target_probabilities(half: &HalfSequence, theta: &ModelParams, hyper: &Hyperparams) -> Result<[f64; STIMULI]> {
    theta.check_dims(half.channels(), half.samples())?;
    let weights = theta.channel_weights()?;
    let beta = theta.beta_tilde(hyper.tau);
    softmax6(linear_predictors(half, &weights, &beta))
}

/// Log half-Cauchy density with scale `a` on `sigma > 0`.
pub fn half_cauchy_log_density(sigma: f64, a: f64) -> f64 {
    let r = sigma / a;
    ln(2.0 / (core::f64::consts::PI * a)) - math::ln_1p(r * r)
}

/// Log prior density of the random walk, shrinkage, selectors and raw weights.
///
/// Selector values are scored as `d ln p + (1 - d) ln(1 - p)`, which is the
/// Bernoulli log-mass for `d` in {0, 1}.
pub fn log_prior(theta: &ModelParams, hyper: &Hyperparams) -> Result<f64> {
    let sigma = theta.sigma;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidSigma(sigma));
    }
    let mut prev = 0.0;
    let mut walk = 0.0;
    for &b in &theta.beta_raw {
        walk += normal_log_density(b, prev, sigma);
        prev = b;
    }
    let shrink = half_cauchy_log_density(sigma, hyper.cauchy_scale);
    let (lp, lq) = (ln(hyper.delta_prior), ln(1.0 - hyper.delta_prior));
    let select: f64 = theta.delta.iter().map(|d| d * lp + (1.0 - d) * lq).sum();
    let weights: f64 = theta.alpha_raw.iter().map(|a| -0.5 * LN_2PI - 0.5 * a * a).sum();
    Ok(walk + shrink + select + weights)
}

/// Sum of log target probabilities over a labeled dataset.
pub fn log_likelihood(data: &Dataset, theta: &ModelParams, hyper: &Hyperparams) -> Result<f64> {
    theta.check_dims(data.channels, data.samples)?;
    let weights = theta.channel_weights()?;
    let beta = theta.beta_tilde(hyper.tau);
    let mut total = 0.0;
    for (index, half) in data.half_sequences.iter().enumerate() {
        let z = half.target.ok_or(Error::MissingLabel { index })?;
        let eta = linear_predictors(half, &weights, &beta);
        if let Some(k) = eta.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "linear predictor",
                index: index * STIMULI + k,
            });
        }
        total += eta[z] - math::log_sum_exp(&eta);
    }
    Ok(total)
}

/// `log_likelihood + log_prior`.
pub fn log_joint(data: &Dataset, theta: &ModelParams, hyper: &Hyperparams) -> Result<f64> {
    Ok(log_likelihood(data, theta, hyper)? + log_prior(theta, hyper)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn half_from(channels: usize, samples: usize, f: impl Fn(usize, usize, usize) -> f64) -> HalfSequence {
        let epochs = core::array::from_fn(|j| {
            let data = (0..channels * samples).map(|k| f(j, k / samples, k % samples)).collect();
            StimulusEpoch::new(channels, samples, 256.0, data).unwrap()
        });
        HalfSequence::new(HalfKey::new(1, 1, Orientation::Row), epochs, Some(0)).unwrap()
    }

    fn theta(beta: &[f64], delta: &[f64], alpha: &[f64]) -> ModelParams {
        ModelParams {
            beta_raw: beta.to_vec(),
            sigma: 1.0,
            delta: delta.to_vec(),
            alpha_raw: alpha.to_vec(),
        }
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(2.0, 0.5), 1.5);
        assert_eq!(soft_threshold(-0.3, 0.5), 0.0);
        assert_eq!(soft_threshold(-2.0, 0.5), -1.5);
        assert_eq!(soft_threshold(0.5, 0.5), 0.0);
        assert_eq!(soft_threshold(-1.0, 0.0), -1.0);
    }

    #[test]
    fn projection_examples() {
        let out = project_to_sphere(&[3.0, 4.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(out[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1], 0.8, epsilon = 1e-15);
        assert_eq!(project_to_sphere(&[1.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0]);
        assert!(matches!(project_to_sphere(&[0.0, 1e-13]), Err(Error::ZeroVector { .. })));
        assert!(matches!(project_to_sphere(&[]), Err(Error::ZeroVector { .. })));
    }

    #[test]
    fn latent_channel_examples() {
        let half = half_from(2, 3, |j, _e, m| (j * 10 + m) as f64);
        let zero = latent_channel_signal(&half, &[0.0, 0.0], &[0.6, 0.8]).unwrap();
        assert!(zero.iter().all(|v| v.iter().all(|x| *x == 0.0)));

        let half = half_from(2, 3, |j, e, m| (j * 10 + m) as f64 + 100.0 * e as f64);
        let first = latent_channel_signal(&half, &[1.0, 0.0], &[1.0, 0.0]).unwrap();
        for j in 0..STIMULI {
            assert_eq!(first[j], half.epochs[j].channel(0));
        }

        let half = half_from(2, 3, |j, _e, m| (j + m) as f64 - 2.0);
        let s = core::f64::consts::FRAC_1_SQRT_2;
        let both = latent_channel_signal(&half, &[1.0, 1.0], &[s, s]).unwrap();
        for j in 0..STIMULI {
            for m in 0..3 {
                let v = half.epochs[j].channel(0)[m];
                assert_abs_diff_eq!(both[j][m], core::f64::consts::SQRT_2 * v, epsilon = 1e-12);
            }
        }
        assert!(matches!(
            latent_channel_signal(&half, &[1.0], &[1.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn target_probability_examples() {
        let half = half_from(1, 1, |j, _, _| if j == 0 { 1.0 } else { 0.0 });
        let hyper = Hyperparams::default();
        let p = target_probabilities(&half, &theta(&[1.0], &[1.0], &[1.0]), &hyper).unwrap();
        let e = core::f64::consts::E;
        assert_abs_diff_eq!(p[0], e / (e + 5.0), epsilon = 1e-15);
        for pj in &p[1..] {
            assert_abs_diff_eq!(*pj, 1.0 / (e + 5.0), epsilon = 1e-15);
        }

        let noisy = half_from(2, 4, |j, e, m| (j * 7 + e * 3 + m) as f64 * 0.37 - 1.0);
        let p = target_probabilities(&noisy, &theta(&[0.0; 4], &[1.0, 1.0], &[1.0, 2.0]), &hyper).unwrap();
        assert!(p.iter().all(|v| (*v - 1.0 / 6.0).abs() < 1e-15));
        let p = target_probabilities(&noisy, &theta(&[1.0, -2.0, 0.5, 3.0], &[0.0, 0.0], &[1.0, 2.0]), &hyper).unwrap();
        assert!(p.iter().all(|v| (*v - 1.0 / 6.0).abs() < 1e-15));

        assert!(matches!(
            target_probabilities(&noisy, &theta(&[1.0; 3], &[1.0, 1.0], &[1.0, 2.0]), &hyper),
            Err(Error::DimensionMismatch { .. })
        ));
        let huge = half_from(1, 1, |_, _, _| 1e308);
        assert!(matches!(
            target_probabilities(&huge, &theta(&[10.0], &[1.0], &[1.0]), &hyper),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn log_prior_examples() {
        let hyper = Hyperparams::default();
        let t = ModelParams {
            beta_raw: vec![0.0],
            sigma: 1.0,
            delta: vec![],
            alpha_raw: vec![],
        };
        let expected = -0.5 * LN_2PI + ln(2.0 / (core::f64::consts::PI * 2.0));
        assert_abs_diff_eq!(log_prior(&t, &hyper).unwrap(), expected, epsilon = 1e-14);

        let base = ModelParams {
            beta_raw: vec![0.3, -0.1],
            sigma: 0.7,
            delta: vec![0.0, 0.0, 0.0],
            alpha_raw: vec![0.5, -1.0, 2.0],
        };
        let all_on = ModelParams {
            delta: vec![1.0, 1.0, 1.0],
            ..base.clone()
        };
        assert_abs_diff_eq!(
            log_prior(&base, &hyper).unwrap(),
            log_prior(&all_on, &hyper).unwrap(),
            epsilon = 1e-14
        );

        // Doubling alpha* changes only the standard-normal term: -0.5 * (4 - 1) * sum a^2.
        let doubled = ModelParams {
            alpha_raw: base.alpha_raw.iter().map(|a| 2.0 * a).collect(),
            ..base.clone()
        };
        let sum_sq: f64 = base.alpha_raw.iter().map(|a| a * a).sum();
        assert_abs_diff_eq!(
            log_prior(&doubled, &hyper).unwrap() - log_prior(&base, &hyper).unwrap(),
            -1.5 * sum_sq,
            epsilon = 1e-12
        );

        let bad = ModelParams { sigma: 0.0, ..base };
        assert_eq!(log_prior(&bad, &hyper), Err(Error::InvalidSigma(0.0)));
    }

    #[test]
    fn log_likelihood_examples() {
        let hyper = Hyperparams::default();
        let halves: Vec<_> = (0..4).map(|k| half_from(2, 3, move |j, e, m| (j + e + m + k) as f64 * 0.1)).collect();
        let data = Dataset::new(halves.clone(), 2, 3, 256.0, TimingConfig::default(), Vec::new()).unwrap();
        let zero = theta(&[0.0; 3], &[1.0, 1.0], &[1.0, 1.0]);
        assert_abs_diff_eq!(
            log_likelihood(&data, &zero, &hyper).unwrap(),
            4.0 * ln(1.0 / 6.0),
            epsilon = 1e-12
        );

        let empty = data.with_half_sequences(Vec::new());
        assert_eq!(log_likelihood(&empty, &zero, &hyper).unwrap(), 0.0);

        let t = theta(&[0.4, -0.2, 0.9], &[1.0, 1.0], &[0.3, -0.7]);
        let one = data.with_half_sequences(vec![halves[2].clone()]);
        let p = target_probabilities(&halves[2], &t, &hyper).unwrap();
        assert_abs_diff_eq!(log_likelihood(&one, &t, &hyper).unwrap(), ln(p[0]), epsilon = 1e-12);

        let mut unlabeled = halves[0].clone();
        unlabeled.target = None;
        let bad = data.with_half_sequences(vec![halves[1].clone(), unlabeled]);
        assert_eq!(log_likelihood(&bad, &t, &hyper), Err(Error::MissingLabel { index: 1 }));
    }
}
