//! Stochastic-gradient training of the surrogate, shrinkage calibration and
//! posterior draws.

use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grad::{self, GradConfig};
use crate::math::{self, inv_softplus, ln};
use crate::model::{Dataset, Hyperparams, ModelParams};
use crate::rng::{self, tag};
use crate::variational::{draw_noise, transform_noise, SelectorMode, VariationalParams};

/// Standard deviation of the initial means.
pub const INIT_MEAN_SD: f64 = 0.01;
/// Initial surrogate scale of every normal block.
pub const INIT_SCALE: f64 = 0.1;
/// Posterior draws used to read off the baseline medians in [`calibrate_tau`].
pub const CALIBRATION_DRAWS: usize = 2000;
/// MC draws behind the closing trace point of a fit.
pub const TRACE_SAMPLES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct FitConfig {
    pub iterations: usize,
    pub step_size: f64,
    pub grad: GradConfig,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Record the running ELBO every this many iterations (0 disables).
    pub trace_every: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            step_size: 0.05,
            grad: GradConfig::default(),
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            trace_every: 10,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.grad.validate()?;
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!("step_size must be > 0, got {}", self.step_size)));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidConfig(alloc::format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::InvalidConfig("adam_eps must be > 0".into()));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.grad.seed
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self {
            grad: self.grad.with_seed(seed),
            ..self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TracePoint {
    pub iteration: usize,
    pub elbo: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FitResult {
    pub xi: VariationalParams,
    /// Running MC estimates taken during training; the last point (at
    /// `iterations`) is a fresh [`TRACE_SAMPLES`]-draw estimate at the final
    /// parameters.
    pub trace: Vec<TracePoint>,
    pub tau_used: f64,
    pub seed: u64,
}

/// Initial surrogate: small random means, scales of 0.1, even inclusion odds
/// and `log sigma` centred on `ln 0.1`.
pub fn initialize(channels: usize, samples: usize, seed: u64) -> VariationalParams {
    let mut rng = rng::stream(rng::derive(seed, tag::INIT), 0);
    let mut normal = || -> f64 {
        let z: f64 = StandardNormal.sample(&mut rng);
        INIT_MEAN_SD * z
    };
    let beta_mean = (0..samples).map(|_| normal()).collect();
    let alpha_mean = (0..channels).map(|_| normal()).collect();
    let raw = inv_softplus(INIT_SCALE);
    VariationalParams {
        beta_mean,
        beta_rawscale: alloc::vec![raw; samples],
        sigma_mean: ln(INIT_SCALE),
        sigma_rawscale: raw,
        delta_logit: alloc::vec![0.0; channels],
        alpha_mean,
        alpha_rawscale: alloc::vec![raw; channels],
    }
}

/// Adam state for maximization.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: f64,
}

impl Adam {
    pub fn new(len: usize, cfg: &FitConfig) -> Self {
        Self {
            m: alloc::vec![0.0; len],
            v: alloc::vec![0.0; len],
            t: 0,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            step: cfg.step_size,
        }
    }

    /// Moves `x` uphill along `grad`.
    pub fn ascend(&mut self, x: &mut [f64], grad: &[f64]) {
        self.t = self.t.saturating_add(1);
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for k in 0..x.len() {
            let g = grad[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            x[k] += self.step * m_hat / (math::sqrt(v_hat) + self.eps);
        }
    }
}

/// Runs `cfg.iterations` Adam steps on the relaxed ELBO from [`initialize`].
///
/// Iteration `t` uses the MC seed `derive(seed, ITERATION ^ t)`.
pub fn fit(data: &Dataset, hyper: &Hyperparams, cfg: &FitConfig) -> Result<FitResult> {
    let xi0 = initialize(data.channels, data.samples, cfg.seed());
    fit_from(data, hyper, cfg, xi0)
}

/// [`fit`] from a given starting point.
pub fn fit_from(data: &Dataset, hyper: &Hyperparams, cfg: &FitConfig, xi0: VariationalParams) -> Result<FitResult> {
    cfg.validate()?;
    hyper.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    data.check_compatible(xi0.channels(), xi0.samples())?;
    if let Some(index) = data.half_sequences.iter().position(|h| h.target.is_none()) {
        return Err(Error::MissingLabel { index });
    }
    let seed = cfg.seed();
    let layout = xi0.layout();
    let mut flat = xi0.to_flat();
    let mut xi = xi0;
    let mut adam = Adam::new(flat.len(), cfg);
    let mut trace = Vec::new();

    for t in 0..cfg.iterations {
        let step_cfg = cfg.grad.with_seed(rng::derive(seed, tag::ITERATION ^ t as u64));
        let (value, gradient) = match grad::elbo_value_and_gradient(&xi, data, hyper, &step_cfg) {
            Ok(out) => out,
            Err(Error::NonFinite { .. }) => return Err(Error::NonFiniteGradient { iteration: t }),
            Err(e) => return Err(e),
        };
        if cfg.trace_every > 0 && t % cfg.trace_every == 0 {
            trace.push(TracePoint { iteration: t, elbo: value });
        }
        adam.ascend(&mut flat, &gradient);
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { iteration: t });
        }
        xi = VariationalParams::from_flat(layout, &flat)?;
    }

    if cfg.iterations > 0 {
        let final_cfg = GradConfig {
            mc_samples: TRACE_SAMPLES,
            seed: rng::derive(seed, tag::TRACE),
            ..cfg.grad
        };
        let elbo = grad::elbo_estimate(&xi, data, hyper, &final_cfg)
            .map_err(|_| Error::NonFiniteGradient { iteration: cfg.iterations })?;
        trace.push(TracePoint {
            iteration: cfg.iterations,
            elbo,
        });
    }

    Ok(FitResult {
        xi,
        trace,
        tau_used: hyper.tau,
        seed,
    })
}

/// Shrinkage calibration: the baseline fit and the threshold it implies.
#[derive(Debug, Clone, PartialEq)]
pub struct TauCalibration {
    pub tau: f64,
    pub ratio: f64,
    /// Per-time-point posterior medians of the baseline effects.
    pub baseline_medians: Vec<f64>,
    pub baseline: FitResult,
}

/// `ratio * median_m |medians_m|`.
pub fn tau_from_medians(medians: &[f64], ratio: f64) -> f64 {
    if medians.is_empty() {
        return 0.0;
    }
    let abs: Vec<f64> = medians.iter().map(|v| math::abs(*v)).collect();
    ratio * math::median(&abs)
}

/// Fits a baseline with `tau = 0` on an offset seed and returns
/// `ratio` times the median absolute posterior-median effect.
pub fn calibrate_tau(data: &Dataset, hyper0: &Hyperparams, cfg: &FitConfig, ratio: f64) -> Result<TauCalibration> {
    if !(ratio >= 0.0 && ratio.is_finite()) {
        return Err(Error::InvalidConfig(alloc::format!("shrinkage ratio must be >= 0, got {ratio}")));
    }
    let base_seed = rng::derive(cfg.seed(), tag::CALIBRATION);
    let hyper = hyper0.with_tau(0.0);
    let baseline = fit(data, &hyper, &cfg.with_seed(base_seed))?;
    let draws = posterior_draws(&baseline.xi, CALIBRATION_DRAWS, base_seed)?;
    let baseline_medians = draws.effect_medians(0.0);
    Ok(TauCalibration {
        tau: tau_from_medians(&baseline_medians, ratio),
        ratio,
        baseline_medians,
        baseline,
    })
}

/// Exact draws from a fitted surrogate with their log densities.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub thetas: Vec<ModelParams>,
    pub log_q: Vec<f64>,
    /// Training `log pi(theta_g, z | X)` per draw, once attached.
    pub log_joint: Option<Vec<f64>>,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.thetas.first().map_or(0, ModelParams::channels)
    }

    pub fn samples(&self) -> usize {
        self.thetas.first().map_or(0, ModelParams::samples)
    }

    /// Caches the training log joint of every draw.
    pub fn attach_log_joint(&mut self, data: &Dataset, hyper: &Hyperparams) -> Result<()> {
        hyper.validate()?;
        let liks = grad::log_likelihood_many(data, &self.thetas, hyper.tau)?;
        let mut joint = Vec::with_capacity(liks.len());
        for (theta, lik) in self.thetas.iter().zip(liks) {
            joint.push(lik + crate::model::log_prior(theta, hyper)?);
        }
        self.log_joint = Some(joint);
        Ok(())
    }

    /// Per-time-point median of `S_tau(beta*)` over the draws.
    pub fn effect_medians(&self, tau: f64) -> Vec<f64> {
        let mut column = Vec::with_capacity(self.len());
        (0..self.samples())
            .map(|m| {
                column.clear();
                column.extend(self.thetas.iter().map(|t| crate::model::soft_threshold(t.beta_raw[m], tau)));
                math::median(&column)
            })
            .collect()
    }
}

/// `count` exact draws from `q`; draw `g` comes from stream `g` of
/// `derive(seed, DRAWS)`.
pub fn posterior_draws(xi: &VariationalParams, count: usize, seed: u64) -> Result<PosteriorDraws> {
    xi.validate()?;
    if count == 0 {
        return Err(Error::TooFewDraws { got: 0, need: 1 });
    }
    let base = rng::derive(seed, tag::DRAWS);
    let mut thetas = Vec::with_capacity(count);
    let mut log_q = Vec::with_capacity(count);
    for g in 0..count {
        let mut stream = rng::stream(base, g as u64);
        let noise = draw_noise(xi.samples(), xi.channels(), &mut stream);
        // The temperature is unused for exact draws.
        let sample = transform_noise(xi, noise, SelectorMode::Exact, 1.0);
        thetas.push(sample.theta);
        log_q.push(sample.log_q);
    }
    Ok(PosteriorDraws {
        thetas,
        log_q,
        log_joint: None,
    })
}
