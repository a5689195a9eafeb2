//! Nonparametric Bayesian quantile inference: a conjugate Gaussian update of
//! the log-quantile. The map prior supplies (mu, sigma^2); the local
//! empirical quantile enters through its asymptotic order-statistic
//! likelihood with variance eps(1-eps)/(n f^2), f estimated off the density
//! map. Intervals are log-normal quantiles of the posterior.

use crate::channel::Location;
use crate::gpmap::{estimate_theta_quantile, CdiMap};
use crate::stats::{
    normal_inv_cdf, ConfidenceInterval, Inference, InferenceFlag, QuantileSpec, SampleSet, Sided,
    StatsError,
};
use thiserror::Error;

/// Densities predicted below this are clamped (and the result flagged);
/// keeps the likelihood variance finite on sparse maps.
pub const DENSITY_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum NonparError {
    #[error("bad argument: {0}")]
    Domain(&'static str),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPrior {
    pub mu: f64,
    pub sigma2: f64,
}

impl GaussianPrior {
    pub fn new(mu: f64, sigma2: f64) -> Result<Self, NonparError> {
        if !mu.is_finite() {
            return Err(NonparError::Domain("prior mean must be finite"));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(NonparError::Domain("prior variance must be > 0"));
        }
        Ok(GaussianPrior { mu, sigma2 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPosterior {
    pub mu_post: f64,
    pub sigma2_post: f64,
}

/// Asymptotic variance of the log empirical quantile:
/// eps(1-eps) / (n f^2) with f the log-domain density at the quantile.
pub fn likelihood_variance(n: usize, epsilon: f64, f_y_at_quantile: f64) -> Result<f64, NonparError> {
    if n == 0 {
        return Err(NonparError::Domain("n must be >= 1"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(NonparError::Domain("epsilon must be in (0, 1)"));
    }
    if !(f_y_at_quantile > 0.0 && f_y_at_quantile.is_finite()) {
        return Err(NonparError::Domain("density at quantile must be > 0"));
    }
    Ok(epsilon * (1.0 - epsilon) / (n as f64 * f_y_at_quantile * f_y_at_quantile))
}

/// Conjugate normal-normal update; precisions add exactly.
pub fn posterior_update(
    prior: &GaussianPrior,
    y_hat: f64,
    sigma_n2: f64,
) -> Result<GaussianPosterior, NonparError> {
    if !(sigma_n2 > 0.0) {
        return Err(NonparError::Domain("likelihood variance must be > 0"));
    }
    if !y_hat.is_finite() {
        return Err(NonparError::Domain("y_hat must be finite"));
    }
    let total = sigma_n2 + prior.sigma2;
    let w = sigma_n2 / total;
    Ok(GaussianPosterior {
        mu_post: w * prior.mu + (1.0 - w) * y_hat,
        sigma2_post: prior.sigma2 * sigma_n2 / total,
    })
}

/// Log-normal interval from the posterior: one-sided gives
/// [exp(mu + sigma Phi^-1(delta)), inf); two-sided takes the central
/// delta/2, 1-delta/2 quantiles.
pub fn posterior_interval(
    post: &GaussianPosterior,
    delta: f64,
    sided: Sided,
) -> Result<ConfidenceInterval, NonparError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(NonparError::Domain("delta must be in (0, 1)"));
    }
    let sigma = post.sigma2_post.sqrt();
    let ci = match sided {
        Sided::OneSidedLower => ConfidenceInterval::new(
            (post.mu_post + sigma * normal_inv_cdf(delta)?).exp(),
            f64::INFINITY,
            1.0 - delta,
            sided,
        )?,
        Sided::TwoSided => ConfidenceInterval::new(
            (post.mu_post + sigma * normal_inv_cdf(delta / 2.0)?).exp(),
            (post.mu_post + sigma * normal_inv_cdf(1.0 - delta / 2.0)?).exp(),
            1.0 - delta,
            sided,
        )?,
    };
    Ok(ci)
}

/// End-to-end inference at a location: local log quantile + map density ->
/// conjugate update -> interval. With no local samples the interval comes
/// from the prior alone (flagged); a density prediction below
/// [`DENSITY_FLOOR`] is clamped (flagged).
pub fn infer_nonpar_bayes(
    prior: &GaussianPrior,
    local: &SampleSet,
    spec: &QuantileSpec,
    density_map: &CdiMap,
    at: &Location,
    sided: Sided,
) -> Result<Inference, NonparError> {
    let n = local.len();
    if n == 0 {
        let as_post = GaussianPosterior {
            mu_post: prior.mu,
            sigma2_post: prior.sigma2,
        };
        return Ok(Inference {
            interval: posterior_interval(&as_post, spec.delta, sided)?,
            flag: Some(InferenceFlag::PriorOnly),
        });
    }
    let y_hat = estimate_theta_quantile(local, spec.epsilon)?;
    let (ln_f, _) = density_map.predict(at);
    let mut f = ln_f.exp();
    let mut flag = None;
    if !(f >= DENSITY_FLOOR) {
        f = DENSITY_FLOOR;
        flag = Some(InferenceFlag::DensityFloor);
    }
    let sigma_n2 = likelihood_variance(n, spec.epsilon, f)?;
    let post = posterior_update(prior, y_hat, sigma_n2)?;
    Ok(Inference {
        interval: posterior_interval(&post, spec.delta, sided)?,
        flag,
    })
}
