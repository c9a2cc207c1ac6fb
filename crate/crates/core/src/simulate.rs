//! Synthetic speller data.
//!
//! * [`simulate_generative`]: ERP templates over AR(1) background noise with
//!   compound-symmetric spatial correlation.
//! * [`simulate_from_model`]: relabels a template dataset so that targets
//!   follow the model under known parameters.
//! * [`apply_corruptions`]: attention drift (target/non-target epoch swaps)
//!   and additive AR(1) noise.
//! * [`recovery_metrics`]: how well posterior draws recover known parameters.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngExt};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::math::{self, exp, sqrt};
use crate::model::{
    self, Dataset, HalfKey, HalfSequence, Hyperparams, ModelParams, Orientation, StimulusEpoch, TimingConfig,
    MONTAGE_16, STIMULI,
};
use crate::rng::{self, tag};
use crate::speller::Keyboard;
use crate::summary::{median_direction, selection_probabilities};
use crate::vi::PosteriorDraws;

/// Training text typed by default: 19 characters.
pub const DEFAULT_TEXT: &str = "THE_QUICK_BROWN_FOX";

/// Indices of Pz, PO7, Oz and PO8 in [`MONTAGE_16`].
pub const SIGNAL_CHANNELS: [usize; 4] = [11, 13, 14, 15];

/// Microvolts per data unit of the standard configuration.
pub const STANDARD_UNIT: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct GenerativeConfig {
    pub channels: usize,
    pub samples: usize,
    pub sample_rate: f64,
    pub characters: usize,
    pub sequences: usize,
    /// Length-`samples` responses added after target and non-target flashes.
    pub erp_target: Vec<f64>,
    pub erp_nontarget: Vec<f64>,
    /// Per-channel template gains; empty means 1 on every channel.
    pub channel_gains: Vec<f64>,
    pub ar_coef: f64,
    /// Marginal variance of the background noise on every channel.
    pub noise_var: f64,
    pub spatial_corr: f64,
    /// Microvolts per data unit; templates and noise are given in microvolts.
    pub unit: f64,
    /// Characters to type, cycled; empty draws uniformly from the keyboard.
    pub text: String,
    pub timing: TimingConfig,
    pub channel_names: Vec<String>,
    pub seed: u64,
}

impl Default for GenerativeConfig {
    fn default() -> Self {
        Self::sim2(20.0)
    }
}

impl GenerativeConfig {
    /// Three channels at 32 Hz, 19 characters by 5 sequences.
    pub fn sim2(noise_var: f64) -> Self {
        let rate = 32.0;
        let samples = 26;
        let (erp_target, erp_nontarget) = parametric_templates(samples, rate);
        Self {
            channels: 3,
            samples,
            sample_rate: rate,
            characters: 19,
            sequences: 5,
            erp_target,
            erp_nontarget,
            channel_gains: Vec::new(),
            ar_coef: 0.4,
            noise_var,
            spatial_corr: 0.5,
            unit: 1.0,
            text: String::new(),
            timing: TimingConfig::default(),
            channel_names: Vec::new(),
            seed: 0,
        }
    }

    pub fn sim2_moderate() -> Self {
        Self::sim2(20.0)
    }

    pub fn sim2_high() -> Self {
        Self::sim2(40.0)
    }

    /// Sixteen channels at 256 Hz, 205 samples, 19 characters by 15 sequences,
    /// with the response concentrated on the parietal-occipital channels.
    pub fn standard() -> Self {
        let rate = 256.0;
        let samples = 205;
        let (erp_target, erp_nontarget) = parametric_templates(samples, rate);
        let mut gains = vec![0.2; 16];
        for (e, g) in SIGNAL_CHANNELS.iter().zip([0.6, 1.0, 0.8, 1.0]) {
            gains[*e] = g;
        }
        Self {
            channels: 16,
            samples,
            sample_rate: rate,
            characters: 19,
            sequences: 15,
            erp_target,
            erp_nontarget,
            channel_gains: gains,
            ar_coef: 0.9,
            noise_var: 20.0,
            spatial_corr: 0.5,
            // Keeps the latent effects near the unit scale that the
            // half-Cauchy prior and the step size assume.
            unit: STANDARD_UNIT,
            text: String::from(DEFAULT_TEXT),
            timing: TimingConfig::default(),
            channel_names: MONTAGE_16.iter().map(|s| String::from(*s)).collect(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.samples == 0 || self.characters == 0 || self.sequences == 0 {
            return Err(Error::InvalidConfig(
                "channels, samples, characters and sequences must be >= 1".into(),
            ));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!("sample_rate must be > 0, got {}", self.sample_rate)));
        }
        if self.erp_target.len() != self.samples {
            return Err(Error::len("erp_target", self.samples, self.erp_target.len()));
        }
        if self.erp_nontarget.len() != self.samples {
            return Err(Error::len("erp_nontarget", self.samples, self.erp_nontarget.len()));
        }
        if !self.channel_gains.is_empty() && self.channel_gains.len() != self.channels {
            return Err(Error::len("channel_gains", self.channels, self.channel_gains.len()));
        }
        let finite = self
            .erp_target
            .iter()
            .chain(&self.erp_nontarget)
            .chain(&self.channel_gains)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidConfig("templates and gains must be finite".into()));
        }
        if !(self.ar_coef.abs() < 1.0) {
            return Err(Error::InvalidConfig(alloc::format!("ar_coef must lie in (-1, 1), got {}", self.ar_coef)));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!("noise_var must be >= 0, got {}", self.noise_var)));
        }
        if !(0.0..1.0).contains(&self.spatial_corr) {
            return Err(Error::InvalidConfig(alloc::format!(
                "spatial_corr must lie in [0, 1), got {}",
                self.spatial_corr
            )));
        }
        if !(self.unit > 0.0 && self.unit.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!("unit must be > 0, got {}", self.unit)));
        }
        if !self.channel_names.is_empty() && self.channel_names.len() != self.channels {
            return Err(Error::len("channel_names", self.channels, self.channel_names.len()));
        }
        self.timing.validate()?;
        let kb = Keyboard::default();
        if let Some(c) = self.text.chars().find(|c| kb.position(*c).is_none()) {
            return Err(Error::InvalidConfig(alloc::format!("text symbol {c:?} is not on the keyboard")));
        }
        Ok(())
    }

    fn gain(&self, e: usize) -> f64 {
        self.channel_gains.get(e).copied().unwrap_or(1.0)
    }
}

/// Target response: amplitude-5 bump at 300 ms (sd 60 ms) plus an
/// amplitude-2 bump at 100 ms (sd 25 ms). Non-target response: zero.
pub fn parametric_templates(samples: usize, sample_rate: f64) -> (Vec<f64>, Vec<f64>) {
    let bump = |t: f64, centre: f64, sd: f64| exp(-0.5 * ((t - centre) / sd) * ((t - centre) / sd));
    let target = (0..samples)
        .map(|m| {
            let t = m as f64 / sample_rate;
            5.0 * bump(t, 0.3, 0.06) + 2.0 * bump(t, 0.1, 0.025)
        })
        .collect();
    (target, vec![0.0; samples])
}

/// What the generative simulator typed.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GenerativeTruth {
    pub text: String,
    /// 1-based target row and column per character.
    pub rows: Vec<usize>,
    pub columns: Vec<usize>,
    /// Flash order of every sequence, character-major: codes 1-6 are rows,
    /// 7-12 are columns.
    pub schedule: Vec<Vec<u8>>,
    pub seed: u64,
}

/// Stationary AR(1) series with marginal variance `var`, written into `out`.
fn ar1_into<R: Rng + ?Sized>(rng: &mut R, rho: f64, var: f64, out: &mut [f64]) {
    let innovation = sqrt(var * (1.0 - rho * rho));
    let mut prev = 0.0;
    for (m, x) in out.iter_mut().enumerate() {
        let z: f64 = StandardNormal.sample(rng);
        prev = if m == 0 { sqrt(var) * z } else { rho * prev + innovation * z };
        *x = prev;
    }
}

/// Labeled data from ERP templates over correlated background noise.
///
/// Character `c` uses stream `c` of `derive(seed, SIMULATION)`; the typed
/// symbols, when drawn, come from a separate stream.
pub fn simulate_generative(cfg: &GenerativeConfig) -> Result<(Dataset, GenerativeTruth)> {
    cfg.validate()?;
    let kb = Keyboard::default();
    let base = rng::derive(cfg.seed, tag::SIMULATION);
    let text: Vec<char> = if cfg.text.is_empty() {
        let mut rng = rng::stream(base, u64::MAX);
        let layout: Vec<char> = kb.layout().chars().collect();
        (0..cfg.characters)
            .map(|_| layout[rng.random_range(0..layout.len())])
            .collect()
    } else {
        cfg.text.chars().cycle().take(cfg.characters).collect()
    };

    let (n_e, n_m) = (cfg.channels, cfg.samples);
    let own = sqrt(cfg.noise_var * (1.0 - cfg.spatial_corr));
    let shared = sqrt(cfg.noise_var * cfg.spatial_corr);
    let to_unit = 1.0 / cfg.unit;
    let mut common = vec![0.0; n_m];
    let mut private = vec![0.0; n_m];

    let mut halves = Vec::with_capacity(cfg.characters * cfg.sequences * 2);
    let mut truth = GenerativeTruth {
        text: text.iter().collect(),
        rows: Vec::with_capacity(cfg.characters),
        columns: Vec::with_capacity(cfg.characters),
        schedule: Vec::with_capacity(cfg.characters * cfg.sequences),
        seed: cfg.seed,
    };
    for (c, symbol) in text.iter().enumerate() {
        let (row, column) = kb.position(*symbol).expect("validated text");
        truth.rows.push(row);
        truth.columns.push(column);
        let mut rng = rng::stream(base, c as u64);
        for s in 0..cfg.sequences {
            let mut order: Vec<u8> = (1..=12).collect();
            shuffle(&mut order, &mut rng);
            truth.schedule.push(order);
            for (orientation, target) in [(Orientation::Row, row - 1), (Orientation::Column, column - 1)] {
                let epochs = core::array::from_fn(|j| {
                    let template = if j == target { &cfg.erp_target } else { &cfg.erp_nontarget };
                    ar1_into(&mut rng, cfg.ar_coef, 1.0, &mut common);
                    let mut data = Vec::with_capacity(n_e * n_m);
                    for e in 0..n_e {
                        ar1_into(&mut rng, cfg.ar_coef, 1.0, &mut private);
                        let g = cfg.gain(e);
                        data.extend(
                            (0..n_m).map(|m| to_unit * (g * template[m] + own * private[m] + shared * common[m])),
                        );
                    }
                    data
                });
                let epochs = epochs.map(|data| StimulusEpoch::new(n_e, n_m, cfg.sample_rate, data));
                let epochs = collect_epochs(epochs)?;
                let key = HalfKey::new(c as u32 + 1, s as u32 + 1, orientation);
                halves.push(HalfSequence::new(key, epochs, Some(target))?);
            }
        }
    }
    let mut data = Dataset::new(halves, n_e, n_m, cfg.sample_rate, cfg.timing, cfg.channel_names.clone())?;
    data.characters = cfg.characters;
    data.sequences = cfg.sequences;
    Ok((data, truth))
}

fn collect_epochs(epochs: [Result<StimulusEpoch>; STIMULI]) -> Result<[StimulusEpoch; STIMULI]> {
    let mut out = Vec::with_capacity(STIMULI);
    for e in epochs {
        out.push(e?);
    }
    Ok(out.try_into().unwrap_or_else(|_| unreachable!()))
}

/// Fisher-Yates shuffle.
fn shuffle<T, R: Rng + ?Sized>(items: &mut [T], rng: &mut R) {
    for k in (1..items.len()).rev() {
        let j = rng.random_range(0..=k);
        items.swap(k, j);
    }
}

/// Per-half-sequence record of a model-based relabeling.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RelabelTruth {
    /// Original stimulus index whose epoch was drawn as the target.
    pub drawn: Vec<usize>,
    pub seed: u64,
}

/// Relabels `template` so that its targets follow the model under `theta`.
///
/// For every half-sequence a stimulus is drawn from the target probabilities
/// under `theta`; its epoch and the template target's epoch exchange
/// stimulus labels, so the label (and hence the typed character) is kept
/// while the epoch now sitting at the target follows the model. The five
/// non-target epochs are then randomly permuted. Half-sequence `i` uses
/// stream `i` of `derive(seed, RELABEL)`.
pub fn simulate_from_model(
    theta: &ModelParams,
    hyper: &Hyperparams,
    template: &Dataset,
    seed: u64,
) -> Result<(Dataset, RelabelTruth)> {
    hyper.validate()?;
    let base = rng::derive(seed, tag::RELABEL);
    let mut halves = Vec::with_capacity(template.len());
    let mut drawn = Vec::with_capacity(template.len());
    for (index, half) in template.half_sequences.iter().enumerate() {
        let z = half.target.ok_or(Error::UnlabeledTemplate { index })?;
        let probs = model::target_probabilities(half, theta, hyper)?;
        let mut rng = rng::stream(base, index as u64);
        let u: f64 = rng.random();
        let pick = sample_index(&probs, u);
        drawn.push(pick);

        let mut slots: [usize; STIMULI] = core::array::from_fn(|j| j);
        slots.swap(z, pick);
        let mut others: Vec<usize> = (0..STIMULI).filter(|&j| j != z).collect();
        let mut sources: Vec<usize> = others.iter().map(|&j| slots[j]).collect();
        shuffle(&mut sources, &mut rng);
        for (j, src) in others.drain(..).zip(sources) {
            slots[j] = src;
        }
        let epochs = core::array::from_fn(|j| half.epochs[slots[j]].clone());
        halves.push(HalfSequence::new(half.key, epochs, Some(z))?);
    }
    Ok((template.with_half_sequences(halves), RelabelTruth { drawn, seed }))
}

/// Smallest `j` whose cumulative probability exceeds `u`.
fn sample_index(probs: &[f64; STIMULI], u: f64) -> usize {
    let mut acc = 0.0;
    for (j, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    STIMULI - 1
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct CorruptionConfig {
    pub attention_drift: bool,
    pub drift_prob: f64,
    pub noisy_eeg: bool,
    pub noisy_ar_coef: f64,
    /// Innovation variance of the added AR(1) series, in squared microvolts.
    pub noisy_var: f64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            attention_drift: false,
            drift_prob: 0.10,
            noisy_eeg: false,
            noisy_ar_coef: 0.5,
            noisy_var: 1.0,
        }
    }
}

impl CorruptionConfig {
    pub fn attention_drift() -> Self {
        Self {
            attention_drift: true,
            ..Self::default()
        }
    }

    pub fn noisy_eeg() -> Self {
        Self {
            noisy_eeg: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.drift_prob) {
            return Err(Error::InvalidConfig(alloc::format!("drift_prob must lie in [0, 1], got {}", self.drift_prob)));
        }
        if !(self.noisy_ar_coef.abs() < 1.0) {
            return Err(Error::InvalidConfig(alloc::format!(
                "noisy_ar_coef must lie in (-1, 1), got {}",
                self.noisy_ar_coef
            )));
        }
        if !(self.noisy_var >= 0.0 && self.noisy_var.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!("noisy_var must be >= 0, got {}", self.noisy_var)));
        }
        Ok(())
    }
}

/// Applies the enabled corruptions to data measured in units of `unit`
/// microvolts. Half-sequence `i` uses stream `i` of `derive(seed, CORRUPTION)`:
/// the drift decision and partner first, then the added noise in stimulus,
/// channel, time order.
pub fn apply_corruptions(data: &Dataset, cfg: &CorruptionConfig, unit: f64, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    if !(unit > 0.0 && unit.is_finite()) {
        return Err(Error::InvalidConfig(alloc::format!("unit must be > 0, got {unit}")));
    }
    let base = rng::derive(seed, tag::CORRUPTION);
    let rho = cfg.noisy_ar_coef;
    // Stationary variance of the added series for the given innovation variance.
    let marginal = cfg.noisy_var / (1.0 - rho * rho) / (unit * unit);
    let mut series = vec![0.0; data.samples];
    let mut halves = data.half_sequences.clone();
    for (index, half) in halves.iter_mut().enumerate() {
        let mut rng = rng::stream(base, index as u64);
        if cfg.attention_drift {
            let z = half.target.ok_or(Error::MissingLabel { index })?;
            let u: f64 = rng.random();
            if u < cfg.drift_prob {
                let k = rng.random_range(0..STIMULI - 1);
                let partner = if k >= z { k + 1 } else { k };
                half.epochs.swap(z, partner);
            }
        }
        if cfg.noisy_eeg {
            for epoch in half.epochs.iter_mut() {
                for e in 0..data.channels {
                    ar1_into(&mut rng, rho, marginal, &mut series);
                    for (x, n) in epoch.channel_mut(e).iter_mut().zip(&series) {
                        *x += n;
                    }
                }
            }
        }
    }
    Ok(data.with_half_sequences(halves))
}

/// A known parameter value used to drive [`simulate_from_model`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrueModel {
    pub theta: ModelParams,
    pub hyper: Hyperparams,
}

impl TrueModel {
    /// Effects shaped like the target template, scaled to peak at `scale`, with
    /// `tau = 0.1 * scale`. Signal channels get positive weights; all other
    /// channels are excluded and carry zero weight.
    pub fn reference(samples: usize, sample_rate: f64, channels: usize, signal: &[usize], scale: f64) -> Result<Self> {
        if signal.is_empty() || signal.iter().any(|&e| e >= channels) {
            return Err(Error::InvalidConfig("signal channels must be non-empty and in range".into()));
        }
        let (target, _) = parametric_templates(samples, sample_rate);
        let peak = target.iter().fold(0.0f64, |a, b| a.max(*b));
        let tau = 0.1 * scale;
        // Raw effects above the threshold reproduce the template shape after shrinkage.
        let beta_raw = target
            .iter()
            .map(|v| {
                let b = scale * v / peak;
                if b > 0.01 * scale {
                    b + tau
                } else {
                    b
                }
            })
            .collect();
        let pattern = [0.5, 0.6, 0.45, 0.55];
        let mut alpha_raw = vec![0.0; channels];
        let mut delta = vec![0.0; channels];
        for (k, &e) in signal.iter().enumerate() {
            alpha_raw[e] = pattern[k % pattern.len()];
            delta[e] = 1.0;
        }
        Ok(Self {
            theta: ModelParams {
                beta_raw,
                sigma: scale * 0.1,
                delta,
                alpha_raw,
            },
            hyper: Hyperparams::default().with_tau(tau),
        })
    }

    pub fn beta_tilde(&self) -> Vec<f64> {
        self.theta.beta_tilde(self.hyper.tau)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RecoveryMetrics {
    /// `||b_true - s b_est||^2 / ||b_true||^2`.
    pub rmse: f64,
    pub error_angle_deg: f64,
    pub mean_delta_signal: f64,
    pub mean_delta_noise: f64,
    /// `s = sign <alpha_true, alpha_hat>`, aligning the estimate with the truth.
    pub sign: f64,
}

/// Compares posterior draws with known parameters.
///
/// `b_est` is the per-time-point posterior median of `S_tau(beta*)` at the
/// fitted `tau`; `alpha_hat` is the normalized per-coordinate median of the
/// projected weights. The likelihood is unchanged under
/// `(alpha, b) -> (-alpha, -b)`, so the effect estimate is compared after
/// flipping by the sign of `<alpha_true, alpha_hat>`, and the angle uses the
/// absolute inner product.
pub fn recovery_metrics(truth: &TrueModel, draws: &PosteriorDraws, fit_hyper: &Hyperparams) -> Result<RecoveryMetrics> {
    if draws.is_empty() {
        return Err(Error::TooFewDraws { got: 0, need: 1 });
    }
    let (n_e, n_m) = (truth.theta.channels(), truth.theta.samples());
    if draws.channels() != n_e || draws.samples() != n_m {
        return Err(Error::shape("draws vs truth", (n_e, n_m), (draws.channels(), draws.samples())));
    }
    let b_true = truth.beta_tilde();
    let denom: f64 = b_true.iter().map(|b| b * b).sum();
    if denom == 0.0 {
        return Err(Error::ZeroTrueEffect);
    }
    let alpha_true = truth.theta.alpha()?;
    let alpha_hat = median_direction(draws)?;
    let inner = math::dot(&alpha_true, &alpha_hat);
    let sign = if inner < 0.0 { -1.0 } else { 1.0 };
    let b_est = draws.effect_medians(fit_hyper.tau);
    let num: f64 = b_true.iter().zip(&b_est).map(|(t, e)| (t - sign * e) * (t - sign * e)).sum();
    let cos = math::abs(inner).min(1.0);
    let error_angle_deg = libm::acos(cos).to_degrees();

    let inclusion = selection_probabilities(draws);
    let (mut sig, mut n_sig, mut noise, mut n_noise) = (0.0, 0usize, 0.0, 0usize);
    for (p, d) in inclusion.iter().zip(&truth.theta.delta) {
        if *d > 0.5 {
            sig += p;
            n_sig += 1;
        } else {
            noise += p;
            n_noise += 1;
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
    Ok(RecoveryMetrics {
        rmse: num / denom,
        error_angle_deg,
        mean_delta_signal: mean(sig, n_sig),
        mean_delta_noise: mean(noise, n_noise),
        sign,
    })
}

/// Unstructured toy data: i.i.d. standard-normal epochs with uniform targets.
pub fn toy_dataset(channels: usize, samples: usize, half_sequences: usize, seed: u64) -> Result<Dataset> {
    let mut rng = rng::stream(rng::derive(seed, tag::SIMULATION), 0);
    let mut halves = Vec::with_capacity(half_sequences);
    for i in 0..half_sequences {
        let epochs = core::array::from_fn(|_| {
            let data = (0..channels * samples).map(|_| StandardNormal.sample(&mut rng)).collect();
            StimulusEpoch::new(channels, samples, 256.0, data)
        });
        let target = rng.random_range(0..STIMULI);
        let orientation = if i % 2 == 0 { Orientation::Row } else { Orientation::Column };
        let key = HalfKey::new((i / 2) as u32 + 1, 1, orientation);
        halves.push(HalfSequence::new(key, collect_epochs(epochs)?, Some(target))?);
    }
    Dataset::new(halves, channels, samples, 256.0, TimingConfig::default(), Vec::new())
}
