//! Monte Carlo ELBO and its pathwise gradient.
//!
//! The gradient is the exact derivative of the seeded estimate: every draw is
//! a deterministic function of the variational parameters and standardized
//! noise, and the adjoints below follow that fixed graph by hand
//! (softmax, inner products, latent channel, projection, soft threshold,
//! log densities). [`check_gradient`] compares it against central differences
//! of [`elbo_estimate`].

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, dot, ln, sigmoid, softplus, LN_2PI};
use crate::model::{self, soft_threshold_slope, Dataset, Hyperparams, ModelParams, STIMULI};
use crate::rng;
use crate::variational::{
    concrete_logit_log_density, draw_noise, transform_noise, Layout, SelectorMode, SurrogateSample,
    VariationalParams,
};

/// Draws evaluated together in one pass over the data.
const BATCH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct GradConfig {
    pub mc_samples: usize,
    pub relax_temperature: f64,
    pub seed: u64,
}

impl Default for GradConfig {
    fn default() -> Self {
        Self {
            mc_samples: 10,
            relax_temperature: 0.5,
            seed: 0,
        }
    }
}

impl GradConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mc_samples == 0 {
            return Err(Error::InvalidConfig("mc_samples must be >= 1".into()));
        }
        if !(self.relax_temperature > 0.0 && self.relax_temperature.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!(
                "relax_temperature must be > 0, got {}",
                self.relax_temperature
            )));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// Latent effects and channel gains of one parameter value.
pub(crate) struct Projection {
    pub beta_tilde: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Projection {
    pub fn new(theta: &ModelParams, tau: f64) -> Result<Self> {
        Ok(Self {
            beta_tilde: theta.beta_tilde(tau),
            weights: theta.channel_weights()?,
        })
    }
}

/// A surrogate draw with the quantities the likelihood pass needs.
struct Draw {
    sample: SurrogateSample,
    projection: Projection,
    alpha: Vec<f64>,
    alpha_norm: f64,
}

impl Draw {
    fn new(sample: SurrogateSample, tau: f64) -> Result<Self> {
        let beta_tilde = sample.theta.beta_tilde(tau);
        let alpha_norm = math::norm2(&sample.theta.alpha_raw);
        let alpha = model::project_to_sphere(&sample.theta.alpha_raw)?;
        let weights = sample.theta.delta.iter().zip(&alpha).map(|(d, a)| d * a).collect();
        Ok(Self {
            sample,
            projection: Projection { beta_tilde, weights },
            alpha,
            alpha_norm,
        })
    }
}

struct Likelihood {
    value: f64,
    g_beta_tilde: Vec<f64>,
    g_weights: Vec<f64>,
}

/// Log-likelihood of every draw in `draws`, and optionally its gradient with
/// respect to the latent effects and the channel gains.
///
/// Per half-sequence the `6E` epoch rows are first projected on every draw's
/// effects; after the softmax residuals `r_j` are known, a second sweep
/// accumulates `sum_{j,e} r_j w_e x_je` into the effect gradient.
fn likelihood_batch(data: &Dataset, draws: &[&Projection], first_index: usize, grad: bool) -> Result<Vec<Likelihood>> {
    let (n_e, n_m, n_l) = (data.channels, data.samples, draws.len());
    let n_k = STIMULI * n_e;
    let mut out: Vec<Likelihood> = draws
        .iter()
        .map(|_| Likelihood {
            value: 0.0,
            g_beta_tilde: if grad { vec![0.0; n_m] } else { Vec::new() },
            g_weights: if grad { vec![0.0; n_e] } else { Vec::new() },
        })
        .collect();
    let zeros = vec![0.0; n_m];
    let betas: Vec<&[f64]> = draws.iter().map(|d| d.beta_tilde.as_slice()).collect();
    // proj[k * L + l] with row k = j * E + e; coef[block][k][a] = r_jl w_el for l = block * LANES + a
    let mut proj = vec![0.0; n_k * n_l];
    let n_blocks = n_l.div_ceil(LANES);
    let mut coef = if grad { vec![vec![[0.0; LANES]; n_k]; n_blocks] } else { Vec::new() };
    let mut rows: Vec<&[f64]> = Vec::with_capacity(n_k);

    for (index, half) in data.half_sequences.iter().enumerate() {
        let z = half.target.ok_or(Error::MissingLabel { index })?;
        rows.clear();
        rows.extend(half.epochs.iter().flat_map(|ep| (0..n_e).map(move |e| ep.channel(e))));
        for (k, row) in rows.iter().enumerate() {
            let slot = &mut proj[k * n_l..(k + 1) * n_l];
            for (block, dst) in betas.chunks(LANES).zip(slot.chunks_mut(LANES)) {
                match block.len() {
                    1 => dst[0] = dot(row, block[0]),
                    2 => dst.copy_from_slice(&dot_lanes(row, [block[0], block[1]])),
                    _ => {
                        let b: [&[f64]; LANES] = core::array::from_fn(|a| block.get(a).copied().unwrap_or(&zeros));
                        dst.copy_from_slice(&dot_lanes(row, b)[..dst.len()]);
                    }
                }
            }
        }
        for (l, (draw, acc)) in draws.iter().zip(out.iter_mut()).enumerate() {
            let mut eta = [0.0; STIMULI];
            for (j, eta_j) in eta.iter_mut().enumerate() {
                *eta_j = (0..n_e).map(|e| proj[(j * n_e + e) * n_l + l] * draw.weights[e]).sum();
            }
            if eta.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "ELBO draw",
                    index: first_index + l,
                });
            }
            let lse = math::log_sum_exp(&eta);
            acc.value += eta[z] - lse;
            if grad {
                for j in 0..STIMULI {
                    let r = if j == z { 1.0 } else { 0.0 } - math::exp(eta[j] - lse);
                    for e in 0..n_e {
                        let k = j * n_e + e;
                        acc.g_weights[e] += r * proj[k * n_l + l];
                        coef[l / LANES][k][l % LANES] = r * draw.weights[e];
                    }
                }
            }
        }
        if grad {
            for (block, c) in out.chunks_mut(LANES).zip(&coef) {
                let mut targets: Vec<&mut Vec<f64>> = block.iter_mut().map(|acc| &mut acc.g_beta_tilde).collect();
                match targets.len() {
                    1 => accumulate_rows::<1>(&rows, c, &mut targets),
                    2 => accumulate_rows::<2>(&rows, c, &mut targets),
                    3 => accumulate_rows::<3>(&rows, c, &mut targets),
                    _ => accumulate_rows::<LANES>(&rows, c, &mut targets),
                }
            }
        }
    }
    Ok(out)
}

/// Draws processed together by the blocked kernels.
const LANES: usize = 4;

/// `[x . b_0, .., x . b_{N-1}]`, sharing each load of `x`.
#[inline]
fn dot_lanes<const N: usize>(x: &[f64], b: [&[f64]; N]) -> [f64; N] {
    let n = x.len();
    let body = n - n % 4;
    let b = b.map(|v| &v[..n]);
    let mut acc = [[0.0f64; 4]; N];
    let mut i = 0;
    while i < body {
        let xs: [f64; 4] = x[i..i + 4].try_into().unwrap();
        for a in 0..N {
            let bs: [f64; 4] = b[a][i..i + 4].try_into().unwrap();
            for t in 0..4 {
                acc[a][t] += xs[t] * bs[t];
            }
        }
        i += 4;
    }
    let mut out = [0.0; N];
    for a in 0..N {
        out[a] = (acc[a][0] + acc[a][1]) + (acc[a][2] + acc[a][3]);
        for m in body..n {
            out[a] += x[m] * b[a][m];
        }
    }
    out
}

/// `targets[a][m] += sum_k coef[k][a] * rows[k][m]` for lanes `a < N`.
fn accumulate_rows<const N: usize>(rows: &[&[f64]], coef: &[[f64; LANES]], targets: &mut [&mut Vec<f64>]) {
    // Columns per register block: the accumulators must fit the vector registers.
    const CHUNK: usize = if cfg!(target_feature = "avx") { 8 } else { 4 };
    let n = targets.first().map_or(0, |t| t.len());
    let body = n - n % CHUNK;
    let mut m = 0;
    while m < body {
        let mut acc = [[0.0f64; CHUNK]; N];
        for (row, c) in rows.iter().zip(coef) {
            let xs: [f64; CHUNK] = row[m..m + CHUNK].try_into().unwrap();
            for a in 0..N {
                for t in 0..CHUNK {
                    acc[a][t] += c[a] * xs[t];
                }
            }
        }
        for (target, lane) in targets.iter_mut().zip(&acc) {
            for t in 0..CHUNK {
                target[m + t] += lane[t];
            }
        }
        m += CHUNK;
    }
    for m in body..n {
        for (row, c) in rows.iter().zip(coef) {
            for (a, target) in targets.iter_mut().enumerate() {
                target[m] += c[a] * row[m];
            }
        }
    }
}

/// Relaxed-model log prior: random walk, half-Cauchy, concrete selector
/// logits and standard-normal raw weights.
fn relaxed_log_prior(draw: &Draw, hyper: &Hyperparams, temperature: f64) -> f64 {
    let theta = &draw.sample.theta;
    let sigma = theta.sigma;
    let mut prev = 0.0;
    let mut walk = 0.0;
    for &b in &theta.beta_raw {
        walk += math::normal_log_density(b, prev, sigma);
        prev = b;
    }
    let loc = prior_logit(hyper);
    let select: f64 = draw
        .sample
        .delta_logits
        .iter()
        .map(|x| concrete_logit_log_density(*x, loc, temperature))
        .sum();
    let weights: f64 = theta.alpha_raw.iter().map(|a| -0.5 * LN_2PI - 0.5 * a * a).sum();
    walk + model::half_cauchy_log_density(sigma, hyper.cauchy_scale) + select + weights
}

#[inline]
fn prior_logit(hyper: &Hyperparams) -> f64 {
    ln(hyper.delta_prior) - ln(1.0 - hyper.delta_prior)
}

fn draw_value(draw: &Draw, lik: &Likelihood, hyper: &Hyperparams, mode: SelectorMode, temperature: f64) -> Result<f64> {
    let prior = match mode {
        SelectorMode::Relaxed => relaxed_log_prior(draw, hyper, temperature),
        SelectorMode::Exact => model::log_prior(&draw.sample.theta, hyper)?,
    };
    Ok(lik.value + prior - draw.sample.log_q)
}

/// Adds `scale * d(draw value)/d(xi)` for a relaxed draw into `out`.
fn accumulate_gradient(
    xi: &VariationalParams,
    draw: &Draw,
    lik: &Likelihood,
    hyper: &Hyperparams,
    temperature: f64,
    scale: f64,
    out: &mut [f64],
) {
    let layout = xi.layout();
    let theta = &draw.sample.theta;
    let noise = &draw.sample.noise;
    let n_m = xi.samples();
    let sigma = theta.sigma;
    let inv_var = 1.0 / (sigma * sigma);

    // Raw effects: likelihood through the soft threshold, plus random-walk prior.
    let mut g_sigma = 0.0;
    let mut sum_sq = 0.0;
    for m in 0..n_m {
        let b = theta.beta_raw[m];
        let diff = b - if m == 0 { 0.0 } else { theta.beta_raw[m - 1] };
        sum_sq += diff * diff;
        let mut g = lik.g_beta_tilde[m] * soft_threshold_slope(b, hyper.tau) - diff * inv_var;
        if m + 1 < n_m {
            g += (theta.beta_raw[m + 1] - b) * inv_var;
        }
        let r = xi.beta_rawscale[m];
        let s = softplus(r);
        out[layout.beta_mean(m)] += scale * g;
        // -log q contributes +1/s to the scale derivative.
        out[layout.beta_rawscale(m)] += scale * (g * noise.beta[m] + 1.0 / s) * sigmoid(r);
    }

    // Step size: random walk and half-Cauchy, then through sigma = exp(u).
    g_sigma += -(n_m as f64) / sigma + sum_sq * inv_var / sigma;
    let a = hyper.cauchy_scale;
    g_sigma += -2.0 * sigma / (a * a + sigma * sigma);
    let g_u = g_sigma * sigma;
    let s_sigma = softplus(xi.sigma_rawscale);
    // -log q(sigma) = ln s + eps^2/2 + u + const
    out[layout.sigma_mean()] += scale * (g_u + 1.0);
    out[layout.sigma_rawscale()] += scale * (g_u * noise.sigma + 1.0 / s_sigma + noise.sigma) * sigmoid(xi.sigma_rawscale);

    // Channel gains w_e = delta_e * alpha_e.
    let n_e = xi.channels();
    let loc = prior_logit(hyper);
    let mut g_alpha = vec![0.0; n_e];
    for e in 0..n_e {
        let d = theta.delta[e];
        g_alpha[e] = lik.g_weights[e] * d;
        let x = draw.sample.delta_logits[e];
        let g_x = lik.g_weights[e] * draw.alpha[e] * d * (1.0 - d)
            + temperature * (2.0 * sigmoid(loc - temperature * x) - 1.0);
        // log q of the logit does not depend on the location once the noise is fixed.
        out[layout.delta_logit(e)] += scale * g_x / temperature;
    }
    let radial = dot(&draw.alpha, &g_alpha);
    for e in 0..n_e {
        let g = (g_alpha[e] - draw.alpha[e] * radial) / draw.alpha_norm - theta.alpha_raw[e];
        let r = xi.alpha_rawscale[e];
        let s = softplus(r);
        out[layout.alpha_mean(e)] += scale * g;
        out[layout.alpha_rawscale(e)] += scale * (g * noise.alpha[e] + 1.0 / s) * sigmoid(r);
    }
}

fn check_inputs(xi: &VariationalParams, data: &Dataset, hyper: &Hyperparams, cfg: &GradConfig) -> Result<()> {
    cfg.validate()?;
    hyper.validate()?;
    xi.validate()?;
    data.check_compatible(xi.channels(), xi.samples())?;
    if let Some(index) = data.half_sequences.iter().position(|h| h.target.is_none()) {
        return Err(Error::MissingLabel { index });
    }
    Ok(())
}

/// Per-draw values `log pi(theta_l, z | X) - log q(theta_l)` for draws
/// `0..cfg.mc_samples`, draw `l` taken from stream `l` of `cfg.seed`.
pub fn elbo_terms(
    xi: &VariationalParams,
    data: &Dataset,
    hyper: &Hyperparams,
    cfg: &GradConfig,
    mode: SelectorMode,
) -> Result<Vec<f64>> {
    check_inputs(xi, data, hyper, cfg)?;
    let mut terms = Vec::with_capacity(cfg.mc_samples);
    let mut start = 0;
    while start < cfg.mc_samples {
        let end = (start + BATCH).min(cfg.mc_samples);
        let draws = make_draws(xi, hyper, cfg, mode, start..end)?;
        let projections: Vec<&Projection> = draws.iter().map(|d| &d.projection).collect();
        let liks = likelihood_batch(data, &projections, start, false)?;
        for (l, (draw, lik)) in draws.iter().zip(&liks).enumerate() {
            let v = draw_value(draw, lik, hyper, mode, cfg.relax_temperature)?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: "ELBO draw",
                    index: start + l,
                });
            }
            terms.push(v);
        }
        start = end;
    }
    Ok(terms)
}

fn make_draws(
    xi: &VariationalParams,
    hyper: &Hyperparams,
    cfg: &GradConfig,
    mode: SelectorMode,
    range: core::ops::Range<usize>,
) -> Result<Vec<Draw>> {
    range
        .map(|l| {
            let mut stream = rng::stream(cfg.seed, l as u64);
            let noise = draw_noise(xi.samples(), xi.channels(), &mut stream);
            Draw::new(transform_noise(xi, noise, mode, cfg.relax_temperature), hyper.tau)
        })
        .collect()
}

/// Exact log-likelihood of each parameter value, sharing data passes across a batch.
pub fn log_likelihood_many(data: &Dataset, thetas: &[ModelParams], tau: f64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(thetas.len());
    for (chunk_index, chunk) in thetas.chunks(BATCH).enumerate() {
        let projections = chunk
            .iter()
            .map(|t| {
                data.check_compatible(t.channels(), t.samples())?;
                Projection::new(t, tau)
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Projection> = projections.iter().collect();
        out.extend(
            likelihood_batch(data, &refs, chunk_index * BATCH, false)?
                .into_iter()
                .map(|l| l.value),
        );
    }
    Ok(out)
}

/// Monte Carlo ELBO of the relaxed model, averaged over `cfg.mc_samples` draws.
pub fn elbo_estimate(xi: &VariationalParams, data: &Dataset, hyper: &Hyperparams, cfg: &GradConfig) -> Result<f64> {
    let terms = elbo_terms(xi, data, hyper, cfg, SelectorMode::Relaxed)?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// ELBO estimate and its gradient in the flat [`Layout`] order.
pub fn elbo_value_and_gradient(
    xi: &VariationalParams,
    data: &Dataset,
    hyper: &Hyperparams,
    cfg: &GradConfig,
) -> Result<(f64, Vec<f64>)> {
    check_inputs(xi, data, hyper, cfg)?;
    let layout = xi.layout();
    let mut grad = vec![0.0; layout.len()];
    let mut total = 0.0;
    let scale = 1.0 / cfg.mc_samples as f64;
    let mut start = 0;
    while start < cfg.mc_samples {
        let end = (start + BATCH).min(cfg.mc_samples);
        let draws = make_draws(xi, hyper, cfg, SelectorMode::Relaxed, start..end)?;
        let projections: Vec<&Projection> = draws.iter().map(|d| &d.projection).collect();
        let liks = likelihood_batch(data, &projections, start, true)?;
        for (l, (draw, lik)) in draws.iter().zip(&liks).enumerate() {
            let v = draw_value(draw, lik, hyper, SelectorMode::Relaxed, cfg.relax_temperature)?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: "ELBO draw",
                    index: start + l,
                });
            }
            total += v;
            accumulate_gradient(xi, draw, lik, hyper, cfg.relax_temperature, scale, &mut grad);
        }
        start = end;
    }
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            what: "ELBO gradient",
            index,
        });
    }
    Ok((total * scale, grad))
}

/// Pathwise gradient of [`elbo_estimate`] at the same seed.
pub fn elbo_gradient(xi: &VariationalParams, data: &Dataset, hyper: &Hyperparams, cfg: &GradConfig) -> Result<Vec<f64>> {
    elbo_value_and_gradient(xi, data, hyper, cfg).map(|(_, g)| g)
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// `max_k |a_k - b_k| / max(1, |a_k|, |b_k|)` over smooth coordinates.
    pub max_rel_error: f64,
    pub worst_coordinate: Option<usize>,
    /// Coordinates whose perturbation moves some draw across a soft-threshold kink.
    pub kink_coordinates: Vec<usize>,
    pub kink_max_rel_error: f64,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

#[inline]
pub fn relative_error(a: f64, b: f64) -> f64 {
    math::abs(a - b) / 1f64.max(math::abs(a)).max(math::abs(b))
}

/// Central differences of [`elbo_estimate`] at fixed seed against [`elbo_gradient`].
///
/// `eps` is clamped to `[1e-6, 1e-3]`.
pub fn check_gradient(
    xi: &VariationalParams,
    data: &Dataset,
    hyper: &Hyperparams,
    cfg: &GradConfig,
    eps: f64,
) -> Result<GradCheck> {
    let eps = eps.clamp(1e-6, 1e-3);
    let analytic = elbo_gradient(xi, data, hyper, cfg)?;
    let layout = xi.layout();
    let base = xi.to_flat();
    let noise: Vec<_> = (0..cfg.mc_samples)
        .map(|l| draw_noise(xi.samples(), xi.channels(), &mut rng::stream(cfg.seed, l as u64)).beta)
        .collect();

    let mut numeric = vec![0.0; base.len()];
    let mut kink_coordinates = Vec::new();
    let (mut max_rel, mut worst, mut kink_max) = (0.0f64, None, 0.0f64);
    for k in 0..base.len() {
        let mut plus = base.clone();
        plus[k] += eps;
        let mut minus = base.clone();
        minus[k] -= eps;
        let xi_plus = VariationalParams::from_flat(layout, &plus)?;
        let xi_minus = VariationalParams::from_flat(layout, &minus)?;
        let f_plus = elbo_estimate(&xi_plus, data, hyper, cfg)?;
        let f_minus = elbo_estimate(&xi_minus, data, hyper, cfg)?;
        numeric[k] = (f_plus - f_minus) / (2.0 * eps);
        let err = relative_error(analytic[k], numeric[k]);
        if crosses_kink(layout, k, &xi_plus, &xi_minus, &noise, hyper.tau) {
            kink_coordinates.push(k);
            kink_max = kink_max.max(err);
        } else if err > max_rel || worst.is_none() {
            max_rel = max_rel.max(err);
            worst = Some(k);
        }
    }
    Ok(GradCheck {
        max_rel_error: max_rel,
        worst_coordinate: worst,
        kink_coordinates,
        kink_max_rel_error: kink_max,
        analytic,
        numeric,
    })
}

fn crosses_kink(
    layout: Layout,
    k: usize,
    plus: &VariationalParams,
    minus: &VariationalParams,
    beta_noise: &[Vec<f64>],
    tau: f64,
) -> bool {
    if tau <= 0.0 {
        return false;
    }
    let m = if k < layout.samples {
        k
    } else if k < 2 * layout.samples {
        k - layout.samples
    } else {
        return false;
    };
    beta_noise.iter().any(|eps| {
        let hi = plus.beta_mean[m] + softplus(plus.beta_rawscale[m]) * eps[m];
        let lo = minus.beta_mean[m] + softplus(minus.beta_rawscale[m]) * eps[m];
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        (lo <= tau && tau <= hi) || (lo <= -tau && -tau <= hi)
    })
}
