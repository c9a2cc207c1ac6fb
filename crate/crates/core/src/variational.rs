//! Mean-field surrogate family and reparameterized sampling.
//!
//! * raw effects `beta*_m` and raw weights `alpha*_e`: independent normals,
//! * step size `sigma`: log-normal,
//! * selectors `delta_e`: Bernoulli with a logit parameter.
//!
//! Scales are stored unconstrained and mapped through softplus. During
//! training the selectors are replaced by binary-concrete (relaxed Bernoulli)
//! samples: `x = (logit + L) / temperature`, `delta = sigmoid(x)` with
//! `L ~ Logistic(0, 1)`. Relaxed densities, for both the surrogate and the
//! prior, are taken over the logit `x`, where the Jacobian to `delta` cancels
//! in any density ratio.

use alloc::vec::Vec;

use rand::{Rng, RngExt};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::math::{self, ln, log_sigmoid, sigmoid, softplus, LN_2PI};
use crate::model::ModelParams;

/// Parameters of the surrogate distribution.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VariationalParams {
    pub beta_mean: Vec<f64>,
    pub beta_rawscale: Vec<f64>,
    /// Mean and raw scale of `log sigma`.
    pub sigma_mean: f64,
    pub sigma_rawscale: f64,
    pub delta_logit: Vec<f64>,
    pub alpha_mean: Vec<f64>,
    pub alpha_rawscale: Vec<f64>,
}

/// Offsets of each block inside the flat parameter vector:
/// `[beta_mean; M] [beta_rawscale; M] sigma_mean sigma_rawscale [delta_logit; E] [alpha_mean; E] [alpha_rawscale; E]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub samples: usize,
    pub channels: usize,
}

impl Layout {
    pub fn new(samples: usize, channels: usize) -> Self {
        Self { samples, channels }
    }

    pub fn len(&self) -> usize {
        2 * self.samples + 2 + 3 * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn beta_mean(&self, m: usize) -> usize {
        m
    }

    pub fn beta_rawscale(&self, m: usize) -> usize {
        self.samples + m
    }

    pub fn sigma_mean(&self) -> usize {
        2 * self.samples
    }

    pub fn sigma_rawscale(&self) -> usize {
        2 * self.samples + 1
    }

    pub fn delta_logit(&self, e: usize) -> usize {
        2 * self.samples + 2 + e
    }

    pub fn alpha_mean(&self, e: usize) -> usize {
        2 * self.samples + 2 + self.channels + e
    }

    pub fn alpha_rawscale(&self, e: usize) -> usize {
        2 * self.samples + 2 + 2 * self.channels + e
    }

    /// Human-readable name of a flat coordinate.
    pub fn name(&self, k: usize) -> alloc::string::String {
        let (m, e) = (self.samples, self.channels);
        if k < m {
            alloc::format!("beta_mean[{k}]")
        } else if k < 2 * m {
            alloc::format!("beta_rawscale[{}]", k - m)
        } else if k == 2 * m {
            "sigma_mean".into()
        } else if k == 2 * m + 1 {
            "sigma_rawscale".into()
        } else if k < 2 * m + 2 + e {
            alloc::format!("delta_logit[{}]", k - 2 * m - 2)
        } else if k < 2 * m + 2 + 2 * e {
            alloc::format!("alpha_mean[{}]", k - 2 * m - 2 - e)
        } else {
            alloc::format!("alpha_rawscale[{}]", k - 2 * m - 2 - 2 * e)
        }
    }
}

impl VariationalParams {
    pub fn samples(&self) -> usize {
        self.beta_mean.len()
    }

    pub fn channels(&self) -> usize {
        self.delta_logit.len()
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.samples(), self.channels())
    }

    pub fn validate(&self) -> Result<()> {
        let (m, e) = (self.samples(), self.channels());
        if self.beta_rawscale.len() != m {
            return Err(Error::len("beta_rawscale", m, self.beta_rawscale.len()));
        }
        if self.alpha_mean.len() != e || self.alpha_rawscale.len() != e {
            return Err(Error::len("alpha blocks", e, self.alpha_mean.len().max(self.alpha_rawscale.len())));
        }
        if let Some(index) = self.to_flat().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "variational parameter",
                index,
            });
        }
        Ok(())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.layout().len());
        out.extend_from_slice(&self.beta_mean);
        out.extend_from_slice(&self.beta_rawscale);
        out.push(self.sigma_mean);
        out.push(self.sigma_rawscale);
        out.extend_from_slice(&self.delta_logit);
        out.extend_from_slice(&self.alpha_mean);
        out.extend_from_slice(&self.alpha_rawscale);
        out
    }

    pub fn from_flat(layout: Layout, flat: &[f64]) -> Result<Self> {
        if flat.len() != layout.len() {
            return Err(Error::len("flat variational vector", layout.len(), flat.len()));
        }
        let (m, e) = (layout.samples, layout.channels);
        let mut rest = flat;
        let mut take = |n: usize| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head.to_vec()
        };
        let beta_mean = take(m);
        let beta_rawscale = take(m);
        let sigma = take(2);
        let delta_logit = take(e);
        let alpha_mean = take(e);
        let alpha_rawscale = take(e);
        Ok(Self {
            beta_mean,
            beta_rawscale,
            sigma_mean: sigma[0],
            sigma_rawscale: sigma[1],
            delta_logit,
            alpha_mean,
            alpha_rawscale,
        })
    }

    /// Standard deviation of each raw effect.
    pub fn beta_scale(&self) -> Vec<f64> {
        self.beta_rawscale.iter().map(|&r| softplus(r)).collect()
    }

    pub fn alpha_scale(&self) -> Vec<f64> {
        self.alpha_rawscale.iter().map(|&r| softplus(r)).collect()
    }

    pub fn sigma_scale(&self) -> f64 {
        softplus(self.sigma_rawscale)
    }

    /// Surrogate inclusion probabilities `sigmoid(delta_logit)`.
    pub fn inclusion(&self) -> Vec<f64> {
        self.delta_logit.iter().map(|&l| sigmoid(l)).collect()
    }
}

/// How selector draws are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectorMode {
    /// Exact 0/1 Bernoulli draws.
    Exact,
    /// Binary-concrete draws at the given temperature (carried separately).
    Relaxed,
}

/// The standardized noise behind one reparameterized draw.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleNoise {
    pub beta: Vec<f64>,
    pub sigma: f64,
    /// Logistic noise `L_e` (relaxed) or the uniform variate `u_e` (exact).
    pub delta: Vec<f64>,
    pub alpha: Vec<f64>,
}

/// One draw from the surrogate with its log density.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateSample {
    pub theta: ModelParams,
    /// Selector logits `x_e` for relaxed draws, empty for exact draws.
    pub delta_logits: Vec<f64>,
    pub log_q: f64,
    pub noise: SampleNoise,
}

/// Draws the standardized noise for one sample in a fixed order:
/// `M` normals, one normal, `E` uniforms, `E` normals.
pub fn draw_noise<R: Rng + ?Sized>(samples: usize, channels: usize, rng: &mut R) -> SampleNoise {
    let beta = (0..samples).map(|_| StandardNormal.sample(rng)).collect();
    let sigma = StandardNormal.sample(rng);
    let delta = (0..channels).map(|_| rng.random::<f64>()).collect();
    let alpha = (0..channels).map(|_| StandardNormal.sample(rng)).collect();
    SampleNoise {
        beta,
        sigma,
        delta,
        alpha,
    }
}

/// Logistic variate from a uniform, clamped away from the endpoints.
#[inline]
pub(crate) fn logistic_from_uniform(u: f64) -> f64 {
    let u = u.clamp(1e-300, 1.0 - 1e-16);
    ln(u) - math::ln_1p(-u)
}

/// Log density of the logit `x` of a binary-concrete variable with location
/// logit `loc` and temperature `lambda`.
#[inline]
pub fn concrete_logit_log_density(x: f64, loc: f64, lambda: f64) -> f64 {
    let t = loc - lambda * x;
    ln(lambda) + t - 2.0 * softplus(t)
}

/// Maps standardized noise through the surrogate.
pub fn transform_noise(xi: &VariationalParams, noise: SampleNoise, mode: SelectorMode, temperature: f64) -> SurrogateSample {
    let mut log_q = 0.0;

    let beta_raw: Vec<f64> = xi
        .beta_mean
        .iter()
        .zip(&xi.beta_rawscale)
        .zip(&noise.beta)
        .map(|((mu, r), eps)| {
            let s = softplus(*r);
            log_q += -0.5 * LN_2PI - ln(s) - 0.5 * eps * eps;
            mu + s * eps
        })
        .collect();

    let s_sigma = softplus(xi.sigma_rawscale);
    let log_sigma = xi.sigma_mean + s_sigma * noise.sigma;
    log_q += -0.5 * LN_2PI - ln(s_sigma) - 0.5 * noise.sigma * noise.sigma - log_sigma;
    let sigma = math::exp(log_sigma);

    let mut delta_logits = Vec::new();
    let delta: Vec<f64> = match mode {
        SelectorMode::Exact => xi
            .delta_logit
            .iter()
            .zip(&noise.delta)
            .map(|(l, u)| {
                let on = *u < sigmoid(*l);
                log_q += if on { log_sigmoid(*l) } else { log_sigmoid(-*l) };
                if on {
                    1.0
                } else {
                    0.0
                }
            })
            .collect(),
        SelectorMode::Relaxed => {
            delta_logits.reserve(xi.channels());
            xi.delta_logit
                .iter()
                .zip(&noise.delta)
                .map(|(l, u)| {
                    let logistic = logistic_from_uniform(*u);
                    let x = (l + logistic) / temperature;
                    log_q += concrete_logit_log_density(x, *l, temperature);
                    delta_logits.push(x);
                    sigmoid(x)
                })
                .collect()
        }
    };

    let alpha_raw: Vec<f64> = xi
        .alpha_mean
        .iter()
        .zip(&xi.alpha_rawscale)
        .zip(&noise.alpha)
        .map(|((mu, r), eps)| {
            let s = softplus(*r);
            log_q += -0.5 * LN_2PI - ln(s) - 0.5 * eps * eps;
            mu + s * eps
        })
        .collect();

    SurrogateSample {
        theta: ModelParams {
            beta_raw,
            sigma,
            delta,
            alpha_raw,
        },
        delta_logits,
        log_q,
        noise,
    }
}

/// Draws one sample from the surrogate.
pub fn sample_surrogate<R: Rng + ?Sized>(
    xi: &VariationalParams,
    rng: &mut R,
    mode: SelectorMode,
    temperature: f64,
) -> SurrogateSample {
    let noise = draw_noise(xi.samples(), xi.channels(), rng);
    transform_noise(xi, noise, mode, temperature)
}
