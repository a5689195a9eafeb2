//! Tail-model Bayesian inference by Metropolis-within-Gibbs. The parameter
//! triple phi = (x_eps, xi, p_u) carries a log-normal x normal x beta prior
//! built from the two spatial maps and the order-statistic rank law; the
//! likelihood is the deficit GPD with its scale tied to phi through the
//! quantile reparametrization. Each coordinate gets a Gaussian random walk
//! and a separate accept step per iteration; intervals come from order
//! statistics of the retained chain.

use crate::channel::Location;
use crate::evt::{
    compute_deficits, gpd_loglik, select_threshold, sigma_from_reparam, DeficitSet, EvtError,
    GpdParams, TailParams,
};
use crate::gpmap::CdiMap;
use crate::nonpar::{posterior_interval, GaussianPosterior, GaussianPrior, NonparError};
use crate::stats::{
    ceil_rank, ConfidenceInterval, Inference, InferenceFlag, QuantileSpec, SampleSet, Sided,
    StatsError,
};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::io::{BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum McmcError {
    #[error("bad argument: {0}")]
    BadArgument(&'static str),
    #[error("chain reached the end of burn-in in an invalid state")]
    InvalidChainState,
    #[error(transparent)]
    Evt(#[from] EvtError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Nonpar(#[from] NonparError),
    #[error("chain io: {0}")]
    Io(#[from] std::io::Error),
}

/// Joint prior for (x_eps, xi, p_u): log-normal (stored in the log domain),
/// Gaussian, and Beta(alpha, beta).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiPrior {
    pub x_eps: GaussianPrior,
    pub xi_mean: f64,
    pub xi_var: f64,
    pub pu_alpha: f64,
    pub pu_beta: f64,
}

impl PhiPrior {
    pub fn new(
        x_eps: GaussianPrior,
        xi_mean: f64,
        xi_var: f64,
        pu_alpha: f64,
        pu_beta: f64,
    ) -> Result<Self, McmcError> {
        if !xi_mean.is_finite() || !(xi_var > 0.0 && xi_var.is_finite()) {
            return Err(McmcError::BadArgument("xi prior must have finite mean, var > 0"));
        }
        if !(pu_alpha > 0.0 && pu_alpha.is_finite() && pu_beta > 0.0 && pu_beta.is_finite()) {
            return Err(McmcError::BadArgument("beta shapes must be > 0"));
        }
        Ok(PhiPrior {
            x_eps,
            xi_mean,
            xi_var,
            pu_alpha,
            pu_beta,
        })
    }

    /// Median of the log-normal x_eps prior.
    pub fn x_eps_median(&self) -> f64 {
        self.x_eps.mu.exp()
    }

    /// Linear-domain standard deviation of the log-normal x_eps prior.
    pub fn x_eps_sd(&self) -> f64 {
        let s2 = self.x_eps.sigma2;
        s2.exp_m1().sqrt() * (self.x_eps.mu + 0.5 * s2).exp()
    }

    pub fn xi_sd(&self) -> f64 {
        self.xi_var.sqrt()
    }

    pub fn pu_mean(&self) -> f64 {
        self.pu_alpha / (self.pu_alpha + self.pu_beta)
    }

    pub fn pu_sd(&self) -> f64 {
        let s = self.pu_alpha + self.pu_beta;
        (self.pu_alpha * self.pu_beta / (s * s * (s + 1.0))).sqrt()
    }
}

/// Sampler settings. `proposal_sd` and `init` order is (x_eps, xi, p_u).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub proposal_sd: [f64; 3],
    pub seed: u64,
    pub init: [f64; 3],
}

impl McmcConfig {
    /// Defaults: burn-in 20% of T, proposal sds `fraction` times the prior
    /// sds, chain started at the prior median / mean / mean.
    pub fn from_prior(prior: &PhiPrior, iterations: usize, seed: u64, fraction: f64) -> Self {
        McmcConfig {
            iterations,
            burn_in: iterations / 5,
            proposal_sd: [
                fraction * prior.x_eps_sd(),
                fraction * prior.xi_sd(),
                fraction * prior.pu_sd(),
            ],
            seed,
            init: [prior.x_eps_median(), prior.xi_mean, prior.pu_mean()],
        }
    }

    fn validate(&self) -> Result<(), McmcError> {
        if self.iterations == 0 || self.burn_in >= self.iterations {
            return Err(McmcError::BadArgument("need iterations > burn_in >= 0"));
        }
        if self.proposal_sd.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(McmcError::BadArgument("proposal sds must be > 0"));
        }
        if self.init.iter().any(|v| !v.is_finite()) {
            return Err(McmcError::BadArgument("init must be finite"));
        }
        Ok(())
    }
}

/// One retained draw; `accepted` is a bitmask over the three coordinate
/// updates of that iteration (bit 0 = x_eps, 1 = xi, 2 = p_u).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainDraw {
    pub iter: usize,
    pub x_eps: f64,
    pub xi: f64,
    pub p_u: f64,
    pub accepted: u8,
}

/// Post-burn-in draws plus per-coordinate acceptance bookkeeping.
#[derive(Debug, Clone)]
pub struct PosteriorChain {
    draws: Vec<ChainDraw>,
    acceptance_rates: [f64; 3],
    warnings: Vec<String>,
}

impl PosteriorChain {
    pub fn draws(&self) -> &[ChainDraw] {
        &self.draws
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Acceptance fraction per coordinate over all iterations (burn-in
    /// included), order (x_eps, xi, p_u).
    pub fn acceptance_rates(&self) -> [f64; 3] {
        self.acceptance_rates
    }

    /// Non-fatal diagnostics (acceptance rate under 1% or over 99%).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }
}

/// Deficit log-likelihood at a raw parameter triple; -inf encodes every
/// impossibility (invalid triple, non-positive implied scale, deficit
/// outside support). An empty deficit set with a valid triple gives 0.
pub fn gpd_log_likelihood(x_eps: f64, xi: f64, p_u: f64, epsilon: f64, d: &DeficitSet) -> f64 {
    let t = match TailParams::new(x_eps, xi, p_u, d.u(), epsilon) {
        Ok(t) => t,
        Err(_) => return f64::NEG_INFINITY,
    };
    let sigma_u = match sigma_from_reparam(&t) {
        Ok(s) => s,
        Err(_) => return f64::NEG_INFINITY,
    };
    let gp = match GpdParams::new(sigma_u, xi) {
        Ok(g) => g,
        Err(_) => return f64::NEG_INFINITY,
    };
    gpd_loglik(d, &gp)
}

/// Priors for the parameter triple at a location: map predictions for the
/// quantile (log domain) and the shape, and the exact rank law
/// Beta(r, n+1-r) for the threshold exceedance probability.
pub fn build_phi_prior(
    xeps_map: &CdiMap,
    xi_map: &CdiMap,
    at: &Location,
    r: usize,
    n: usize,
) -> Result<PhiPrior, McmcError> {
    if r < 1 || r > n {
        return Err(McmcError::BadArgument("need 1 <= r <= n"));
    }
    let (mu, s2) = xeps_map.predict(at);
    let (xi_mean, xi_var) = xi_map.predict(at);
    PhiPrior::new(
        GaussianPrior::new(mu, s2)?,
        xi_mean,
        xi_var,
        r as f64,
        (n + 1 - r) as f64,
    )
}

// Unnormalized coordinate log priors; constants cancel in the per-coordinate
// Metropolis ratios.
fn ln_prior_x(prior: &PhiPrior, x: f64) -> f64 {
    if !(x > 0.0 && x.is_finite()) {
        return f64::NEG_INFINITY;
    }
    let lx = x.ln();
    let d = lx - prior.x_eps.mu;
    -lx - d * d / (2.0 * prior.x_eps.sigma2)
}

fn ln_prior_xi(prior: &PhiPrior, xi: f64) -> f64 {
    let d = xi - prior.xi_mean;
    -d * d / (2.0 * prior.xi_var)
}

fn ln_prior_pu(prior: &PhiPrior, p: f64) -> f64 {
    if !(p > 0.0 && p < 1.0) {
        return f64::NEG_INFINITY;
    }
    (prior.pu_alpha - 1.0) * p.ln() + (prior.pu_beta - 1.0) * (-p).ln_1p()
}

/// Accept rule U <= min(A, 1) on the log scale. -inf never accepts (the
/// proposal has zero posterior density), NaN is treated as -inf.
fn metropolis_accept(log_ratio: f64, u: f64) -> bool {
    if log_ratio.is_nan() || log_ratio == f64::NEG_INFINITY {
        return false;
    }
    log_ratio >= 0.0 || u <= log_ratio.exp()
}

/// Sequential per-coordinate random-walk updates of (x_eps, xi, p_u); the
/// Metropolis ratio for each coordinate is the likelihood ratio times that
/// coordinate's prior ratio. Deterministic given the seed. Errors if the
/// chain is still in a zero-density state when retention starts.
pub fn metropolis_within_gibbs(
    prior: &PhiPrior,
    d: &DeficitSet,
    spec: &QuantileSpec,
    cfg: &McmcConfig,
) -> Result<PosteriorChain, McmcError> {
    cfg.validate()?;
    let eps = spec.epsilon;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let [mut x, mut xi, mut pu] = cfg.init;
    let mut ll = gpd_log_likelihood(x, xi, pu, eps, d);
    let mut lp = [
        ln_prior_x(prior, x),
        ln_prior_xi(prior, xi),
        ln_prior_pu(prior, pu),
    ];
    let mut draws = Vec::with_capacity(cfg.iterations - cfg.burn_in);
    let mut accepts = [0usize; 3];
    for t in 1..=cfg.iterations {
        let mut mask = 0u8;
        for c in 0..3 {
            let z: f64 = StandardNormal.sample(&mut rng);
            let step = cfg.proposal_sd[c] * z;
            let u: f64 = rng.gen();
            let (px, pxi, ppu) = match c {
                0 => (x + step, xi, pu),
                1 => (x, xi + step, pu),
                _ => (x, xi, pu + step),
            };
            let prop_ll = gpd_log_likelihood(px, pxi, ppu, eps, d);
            let prop_lp = match c {
                0 => ln_prior_x(prior, px),
                1 => ln_prior_xi(prior, pxi),
                _ => ln_prior_pu(prior, ppu),
            };
            let prop_total = prop_ll + prop_lp;
            let cur_total = ll + lp[c];
            let accept = if prop_total == f64::NEG_INFINITY {
                false
            } else if cur_total == f64::NEG_INFINITY {
                true
            } else {
                metropolis_accept(prop_total - cur_total, u)
            };
            if accept {
                x = px;
                xi = pxi;
                pu = ppu;
                ll = prop_ll;
                lp[c] = prop_lp;
                accepts[c] += 1;
                mask |= 1 << c;
            }
        }
        if t > cfg.burn_in {
            if ll == f64::NEG_INFINITY || lp.iter().any(|v| *v == f64::NEG_INFINITY) {
                return Err(McmcError::InvalidChainState);
            }
            draws.push(ChainDraw {
                iter: t,
                x_eps: x,
                xi,
                p_u: pu,
                accepted: mask,
            });
        }
    }
    let total = cfg.iterations as f64;
    let acceptance_rates = [
        accepts[0] as f64 / total,
        accepts[1] as f64 / total,
        accepts[2] as f64 / total,
    ];
    let mut warnings = Vec::new();
    for (name, rate) in ["x_eps", "xi", "p_u"].iter().zip(acceptance_rates) {
        if rate < 0.01 {
            warnings.push(format!("{name} acceptance rate {rate:.4} below 1%"));
        } else if rate > 0.99 {
            warnings.push(format!("{name} acceptance rate {rate:.4} above 99%"));
        }
    }
    Ok(PosteriorChain {
        draws,
        acceptance_rates,
        warnings,
    })
}

/// Posterior quantile of x_eps as the ceil(p T') order statistic of the
/// retained draws.
pub fn chain_quantile(chain: &PosteriorChain, p: f64) -> Result<f64, McmcError> {
    if chain.is_empty() {
        return Err(McmcError::BadArgument("chain has no retained draws"));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(McmcError::BadArgument("p must be in (0, 1]"));
    }
    let mut xs: Vec<f64> = chain.draws.iter().map(|d| d.x_eps).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let r = ceil_rank(p * xs.len() as f64).clamp(1, xs.len());
    Ok(xs[r - 1])
}

/// Interval from the chain: one-sided [chain_quantile(delta), inf) or the
/// central two-sided counterpart, at confidence 1 - delta.
pub fn interval_from_chain(
    chain: &PosteriorChain,
    delta: f64,
    sided: Sided,
) -> Result<ConfidenceInterval, McmcError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(McmcError::BadArgument("delta must be in (0, 1)"));
    }
    let ci = match sided {
        Sided::OneSidedLower => ConfidenceInterval::new(
            chain_quantile(chain, delta)?,
            f64::INFINITY,
            1.0 - delta,
            sided,
        )?,
        Sided::TwoSided => ConfidenceInterval::new(
            chain_quantile(chain, delta / 2.0)?,
            chain_quantile(chain, 1.0 - delta / 2.0)?,
            1.0 - delta,
            sided,
        )?,
    };
    Ok(ci)
}

/// Chain diagnostics export: one row per retained draw.
pub fn export_chain_csv(path: &Path, chain: &PosteriorChain) -> Result<(), McmcError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(b"iter,x_eps,xi,p_u,accepted_coord\n")?;
    for d in &chain.draws {
        writeln!(
            w,
            "{},{:.16e},{:.16e},{:.16e},{}",
            d.iter, d.x_eps, d.xi, d.p_u, d.accepted
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Inference with an explicit prior (the map-driven entry point is
/// [`infer_evt_bayes`]). No local samples, or too few for the threshold
/// rule, falls back to the log-normal x_eps prior alone, flagged.
pub fn infer_evt_bayes_with_prior(
    prior: &PhiPrior,
    local: &SampleSet,
    spec: &QuantileSpec,
    zeta: f64,
    r_min: usize,
    iterations: usize,
    proposal_fraction: f64,
    seed: u64,
    sided: Sided,
) -> Result<Inference, McmcError> {
    let prior_only = |prior: &PhiPrior| -> Result<Inference, McmcError> {
        let post = GaussianPosterior {
            mu_post: prior.x_eps.mu,
            sigma2_post: prior.x_eps.sigma2,
        };
        Ok(Inference {
            interval: posterior_interval(&post, spec.delta, sided)?,
            flag: Some(InferenceFlag::PriorOnly),
        })
    };
    if local.is_empty() {
        return prior_only(prior);
    }
    let (u, _r) = match select_threshold(local, zeta, r_min) {
        Ok(v) => v,
        Err(EvtError::InsufficientSamples { .. }) => return prior_only(prior),
        Err(e) => return Err(e.into()),
    };
    let d = compute_deficits(local, u);
    let mut cfg = McmcConfig::from_prior(prior, iterations, seed, proposal_fraction);
    // A zero-density start stalls the walk: leaving it takes a single jump
    // to full validity, which distant priors make astronomically unlikely.
    // Drop the quantile start inside the data-implied support instead.
    if gpd_log_likelihood(cfg.init[0], cfg.init[1], cfg.init[2], spec.epsilon, &d)
        == f64::NEG_INFINITY
    {
        let (xi0, p0) = (cfg.init[1], cfg.init[2]);
        let dmax = d.deficits().iter().cloned().fold(f64::NAN, f64::max);
        if dmax.is_finite() && p0 > spec.epsilon {
            let x_min = u - dmax;
            cfg.init[0] = if xi0 < 0.0 {
                // Support bound: x < u - dmax (1 - (p/eps)^xi); start 5%
                // inside it.
                let shrink = 1.0 - (p0 / spec.epsilon).powf(xi0);
                (u - 1.05 * dmax * shrink).max(0.5 * x_min)
            } else {
                u - 0.5 * dmax
            };
        } else if d.is_empty() && (cfg.init[0] >= u || cfg.init[0] <= 0.0) {
            cfg.init[0] = 0.5 * u;
        }
    }
    let chain = metropolis_within_gibbs(prior, &d, spec, &cfg)?;
    Ok(Inference {
        interval: interval_from_chain(&chain, spec.delta, sided)?,
        flag: None,
    })
}

/// End-to-end tail-model inference at a location: threshold and deficits
/// from the local samples, priors from the two maps and the rank law, then
/// the chain interval.
#[allow(clippy::too_many_arguments)]
pub fn infer_evt_bayes(
    xeps_map: &CdiMap,
    xi_map: &CdiMap,
    at: &Location,
    local: &SampleSet,
    spec: &QuantileSpec,
    zeta: f64,
    r_min: usize,
    iterations: usize,
    proposal_fraction: f64,
    seed: u64,
    sided: Sided,
) -> Result<Inference, McmcError> {
    let n = local.len();
    // The beta shapes need the realized rank; use the rank the threshold
    // rule would pick, falling back to a placeholder prior when no
    // threshold is possible (the placeholder is never sampled).
    let r = if n == 0 {
        1
    } else {
        ceil_rank(n as f64 * zeta).max(r_min).min(n.max(1))
    };
    let prior = build_phi_prior(xeps_map, xi_map, at, r, n.max(r))?;
    infer_evt_bayes_with_prior(
        &prior,
        local,
        spec,
        zeta,
        r_min,
        iterations,
        proposal_fraction,
        seed,
        sided,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evt::{fit_gpd_mle, tail_quantile};
    use crate::gpmap::{CdiMap, CdiObservation, GpHyperParams};
    use crate::nonpar::infer_nonpar_bayes;
    use crate::stats::{beta_cdf, ks_distance, normal_cdf};

    fn deficit_free(u: f64) -> DeficitSet {
        DeficitSet::new(u, vec![]).unwrap()
    }

    #[test]
    fn likelihood_edge_cases() {
        let d = deficit_free(10.0);
        let eps = 1e-3;
        // Valid triple, no data: log-likelihood 0.
        assert_eq!(gpd_log_likelihood(1.0, -0.1, 0.1, eps, &d), 0.0);
        // Single deficit on the exponential branch: -ln sigma - y / sigma.
        let one = DeficitSet::new(10.0, vec![0.4]).unwrap();
        let (x, pu) = (2.0, 0.2);
        let t = TailParams::new(x, 0.0, pu, 10.0, eps).unwrap();
        let sigma = sigma_from_reparam(&t).unwrap();
        let want = -sigma.ln() - 0.4 / sigma;
        assert!((gpd_log_likelihood(x, 0.0, pu, eps, &one) - want).abs() < 1e-12);
        // Impossibilities all collapse to -inf.
        assert_eq!(gpd_log_likelihood(-1.0, 0.0, 0.1, eps, &d), f64::NEG_INFINITY);
        assert_eq!(gpd_log_likelihood(11.0, 0.0, 0.1, eps, &d), f64::NEG_INFINITY);
        assert_eq!(gpd_log_likelihood(1.0, 0.0, 1.5, eps, &d), f64::NEG_INFINITY);
        assert_eq!(gpd_log_likelihood(1.0, 0.0, 0.5 * eps, eps, &d), f64::NEG_INFINITY);
        // Deficit beyond a short-tail endpoint.
        let far = DeficitSet::new(10.0, vec![9.5]).unwrap();
        assert_eq!(gpd_log_likelihood(9.0, -0.5, 0.5, eps, &far), f64::NEG_INFINITY);
    }

    #[test]
    fn likelihood_matches_pdf_log_sum() {
        use crate::evt::gpd_pdf;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..50 {
            let x: f64 = rng.gen_range(0.5..3.0);
            let xi: f64 = rng.gen_range(-0.4..0.4);
            let pu: f64 = rng.gen_range(0.05..0.5);
            let u = 5.0;
            let eps = 1e-2;
            let t = match TailParams::new(x, xi, pu, u, eps) {
                Ok(t) => t,
                Err(_) => continue,
            };
            let sigma = sigma_from_reparam(&t).unwrap();
            let gp = GpdParams::new(sigma, xi).unwrap();
            let ys: Vec<f64> = (0..20)
                .map(|_| {
                    let q: f64 = rng.gen_range(0.0..0.9);
                    // GPD inverse CDF.
                    if xi.abs() < 1e-8 {
                        -sigma * (1.0 - q).ln()
                    } else {
                        sigma / xi * ((1.0 - q).powf(-xi) - 1.0)
                    }
                })
                .collect();
            let d = DeficitSet::new(u, ys.clone()).unwrap();
            let direct: f64 = ys.iter().map(|&y| gpd_pdf(y, &gp).ln()).sum();
            let got = gpd_log_likelihood(x, xi, pu, eps, &d);
            assert!((got - direct).abs() < 1e-12, "{got} vs {direct}");
        }
    }

    #[test]
    fn accept_rule() {
        // Ratio at or above 1 always accepts, whatever the uniform did.
        for u in [0.0, 0.5, 0.999_999_999] {
            assert!(metropolis_accept(0.0, u));
            assert!(metropolis_accept(3.5, u));
            assert!(metropolis_accept(f64::INFINITY, u));
        }
        // Below 1 the uniform decides.
        assert!(metropolis_accept(-1.0, 0.3));
        assert!(!metropolis_accept(-1.0, 0.5));
        // Zero-density proposals never pass, even at u = 0.
        assert!(!metropolis_accept(f64::NEG_INFINITY, 0.0));
        assert!(!metropolis_accept(f64::NAN, 0.0));
    }

    #[test]
    fn three_point_target_stationary_distribution() {
        // Drive the accept rule with a +-1 random walk over three states;
        // occupancy must converge to the target in total variation.
        let target: [f64; 3] = [0.5, 0.3, 0.2];
        let mut rng = ChaCha8Rng::seed_from_u64(0x3017);
        let mut state = 0usize;
        let mut counts = [0usize; 3];
        let steps = 100_000;
        for _ in 0..steps {
            let dir: bool = rng.gen();
            let prop = state as i64 + if dir { 1 } else { -1 };
            let u: f64 = rng.gen();
            let lr = if (0..3).contains(&prop) {
                (target[prop as usize] / target[state]).ln()
            } else {
                f64::NEG_INFINITY
            };
            if metropolis_accept(lr, u) {
                state = prop as usize;
            }
            counts[state] += 1;
        }
        let tv: f64 = counts
            .iter()
            .zip(target)
            .map(|(&c, t)| (c as f64 / steps as f64 - t).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.05, "total variation {tv}");
    }

    fn recovery_prior() -> PhiPrior {
        PhiPrior::new(
            GaussianPrior::new(0.0, 0.04).unwrap(),
            -0.1,
            0.01,
            50.0,
            451.0,
        )
        .unwrap()
    }

    #[test]
    fn empty_deficits_recover_the_prior() {
        // With no data the posterior is the prior; compare retained draws to
        // the three marginals by KS distance.
        let prior = recovery_prior();
        let spec = QuantileSpec::new(1e-3, 0.05).unwrap();
        let d = deficit_free(10.0);
        let cfg = McmcConfig::from_prior(&prior, 30_000, 0x5eed, 1.0);
        let chain = metropolis_within_gibbs(&prior, &d, &spec, &cfg).unwrap();
        assert_eq!(chain.len(), 24_000);
        let xs: Vec<f64> = chain.draws().iter().map(|d| d.x_eps).collect();
        let xis: Vec<f64> = chain.draws().iter().map(|d| d.xi).collect();
        let pus: Vec<f64> = chain.draws().iter().map(|d| d.p_u).collect();
        let ks_x = ks_distance(&xs, |x| normal_cdf(x.ln() / 0.2));
        let ks_xi = ks_distance(&xis, |v| normal_cdf((v + 0.1) / 0.1));
        let ks_pu = ks_distance(&pus, |p| beta_cdf(p, 50.0, 451.0).unwrap());
        assert!(ks_x < 0.03, "x_eps KS {ks_x}");
        assert!(ks_xi < 0.03, "xi KS {ks_xi}");
        assert!(ks_pu < 0.03, "p_u KS {ks_pu}");
        // Every retained draw satisfies the tail-parameter invariants.
        for dr in chain.draws() {
            assert!(TailParams::new(dr.x_eps, dr.xi, dr.p_u, 10.0, 1e-3).is_ok());
        }
    }

    #[test]
    fn determinism_and_acceptance_bookkeeping() {
        let prior = recovery_prior();
        let spec = QuantileSpec::new(1e-3, 0.05).unwrap();
        let d = deficit_free(10.0);
        let cfg = McmcConfig::from_prior(&prior, 2_000, 42, 0.25);
        let a = metropolis_within_gibbs(&prior, &d, &spec, &cfg).unwrap();
        let b = metropolis_within_gibbs(&prior, &d, &spec, &cfg).unwrap();
        assert_eq!(a.draws(), b.draws());
        assert_eq!(a.acceptance_rates(), b.acceptance_rates());
        let mut other = cfg;
        other.seed = 43;
        let c = metropolis_within_gibbs(&prior, &d, &spec, &other).unwrap();
        assert_ne!(a.draws(), c.draws());
        for rate in a.acceptance_rates() {
            assert!((0.0..=1.0).contains(&rate));
        }
        // The recorded masks agree with consecutive-draw changes: an
        // unaccepted coordinate cannot have moved.
        for w in a.draws().windows(2) {
            if w[1].accepted & 1 == 0 {
                assert_eq!(w[0].x_eps, w[1].x_eps);
            }
            if w[1].accepted & 2 == 0 {
                assert_eq!(w[0].xi, w[1].xi);
            }
            if w[1].accepted & 4 == 0 {
                assert_eq!(w[0].p_u, w[1].p_u);
            }
        }
    }

    #[test]
    fn acceptance_warnings_fire() {
        let prior = recovery_prior();
        let spec = QuantileSpec::new(1e-3, 0.05).unwrap();
        let d = deficit_free(10.0);
        // Gigantic proposals: almost everything is rejected.
        let mut cfg = McmcConfig::from_prior(&prior, 3_000, 7, 1.0);
        cfg.proposal_sd = [1e6, 1e6, 1e6];
        let chain = metropolis_within_gibbs(&prior, &d, &spec, &cfg).unwrap();
        assert!(!chain.warnings().is_empty());
        // Tiny proposals: almost everything is accepted.
        cfg.proposal_sd = [1e-9, 1e-9, 1e-9];
        let chain2 = metropolis_within_gibbs(&prior, &d, &spec, &cfg).unwrap();
        assert!(chain2.warnings().iter().any(|w| w.contains("above 99%")));
    }

    #[test]
    fn config_validation() {
        let prior = recovery_prior();
        let spec = QuantileSpec::new(1e-3, 0.05).unwrap();
        let d = deficit_free(10.0);
        let mut cfg = McmcConfig::from_prior(&prior, 100, 1, 0.25);
        cfg.burn_in = 100;
        assert!(matches!(
            metropolis_within_gibbs(&prior, &d, &spec, &cfg),
            Err(McmcError::BadArgument(_))
        ));
        cfg.burn_in = 10;
        cfg.proposal_sd[1] = 0.0;
        assert!(metropolis_within_gibbs(&prior, &d, &spec, &cfg).is_err());
    }

    #[test]
    fn chain_quantile_semantics() {
        let prior = recovery_prior();
        let spec = QuantileSpec::new(1e-3, 0.05).unwrap();
        let d = deficit_free(10.0);
        let cfg = McmcConfig::from_prior(&prior, 1_000, 11, 1.0);
        let chain = metropolis_within_gibbs(&prior, &d, &spec, &cfg).unwrap();
        let mut xs: Vec<f64> = chain.draws().iter().map(|d| d.x_eps).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(chain_quantile(&chain, 1.0).unwrap(), *xs.last().unwrap());
        assert_eq!(chain_quantile(&chain, 1e-12).unwrap(), xs[0]);
        // Non-decreasing in p.
        let mut last = f64::NEG_INFINITY;
        for i in 1..=20 {
            let q = chain_quantile(&chain, i as f64 / 20.0).unwrap();
            assert!(q >= last);
            last = q;
        }
        assert!(chain_quantile(&chain, 0.0).is_err());
        assert!(chain_quantile(&chain, 1.1).is_err());
        // A frozen chain is constant at every p.
        let mut frozen_cfg = cfg;
        frozen_cfg.proposal_sd = [1e-300, 1e-300, 1e-300];
        frozen_cfg.iterations = 50;
        frozen_cfg.burn_in = 10;
        let frozen = metropolis_within_gibbs(&prior, &d, &spec, &frozen_cfg).unwrap();
        let q1 = chain_quantile(&frozen, 0.01).unwrap();
        let q9 = chain_quantile(&frozen, 0.99).unwrap();
        assert!((q1 - q9).abs() < 1e-12);
    }

    #[test]
    fn posterior_concentrates_on_mle_quantile() {
        // Plenty of deficit data and diffuse priors: the posterior median
        // of x_eps should sit within 2 posterior sds of the MLE plug-in.
        let (sigma0, xi0, u) = (0.4, -0.2, 5.0);
        let (n, r) = (20_000usize, 2_000usize);
        let mut rng = ChaCha8Rng::seed_from_u64(0x31e5);
        let ys: Vec<f64> = (0..r - 1)
            .map(|_| {
                let q: f64 = rng.gen();
                sigma0 / xi0 * ((1.0 - q).powf(-xi0) - 1.0)
            })
            .collect();
        let d = DeficitSet::new(u, ys).unwrap();
        let eps = 1e-2;
        let spec = QuantileSpec::new(eps, 0.05).unwrap();
        let fit = fit_gpd_mle(&d).unwrap();
        let plug_in = tail_quantile(&fit, u, r as f64 / n as f64, eps).unwrap();
        let prior = PhiPrior::new(
            GaussianPrior::new(plug_in.ln() + 0.2, 0.09).unwrap(),
            0.0,
            0.09,
            r as f64,
            (n + 1 - r) as f64,
        )
        .unwrap();
        let cfg = McmcConfig::from_prior(&prior, 8_000, 0xa11ce, 0.25);
        let chain = metropolis_within_gibbs(&prior, &d, &spec, &cfg).unwrap();
        let median = chain_quantile(&chain, 0.5).unwrap();
        let xs: Vec<f64> = chain.draws().iter().map(|d| d.x_eps).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd =
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
        assert!(
            (median - plug_in).abs() <= 2.0 * sd,
            "median {median}, plug-in {plug_in}, sd {sd}"
        );
    }

    #[test]
    fn beta_prior_from_rank_law() {
        let h = GpHyperParams::new(0.5, 20.0, 1e-6, 0.3).unwrap();
        let obs = [
            CdiObservation {
                location: Location::new(0, 0.0, 0.0, 1.5),
                theta_hat: 0.2,
            },
            CdiObservation {
                location: Location::new(1, 30.0, 0.0, 1.5),
                theta_hat: 0.5,
            },
        ];
        let map = CdiMap::with_hyper(&obs, h, true).unwrap();
        let at = Location::new(2, 15.0, 0.0, 1.5);
        let p = build_phi_prior(&map, &map, &at, 5, 9).unwrap();
        assert_eq!(p.pu_alpha, 5.0);
        assert_eq!(p.pu_beta, 5.0);
        assert!((p.pu_mean() - 0.5).abs() < 1e-15);
        let top = build_phi_prior(&map, &map, &at, 9, 9).unwrap();
        assert_eq!(top.pu_beta, 1.0);
        assert!((top.pu_mean() - 0.9).abs() < 1e-15);
        assert!(build_phi_prior(&map, &map, &at, 10, 9).is_err());
        assert!(build_phi_prior(&map, &map, &at, 0, 9).is_err());
        // At a training location with a near-zero nugget the prior mean
        // reproduces that location's estimate.
        let at0 = Location::new(0, 0.0, 0.0, 1.5);
        let p0 = build_phi_prior(&map, &map, &at0, 5, 9).unwrap();
        assert!((p0.x_eps.mu - 0.2).abs() < 1e-3);
    }

    #[test]
    fn chain_export_round_trip() {
        let prior = recovery_prior();
        let spec = QuantileSpec::new(1e-3, 0.05).unwrap();
        let d = deficit_free(10.0);
        let cfg = McmcConfig::from_prior(&prior, 100, 5, 0.25);
        let chain = metropolis_within_gibbs(&prior, &d, &spec, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chain.csv");
        export_chain_csv(&path, &chain).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "iter,x_eps,xi,p_u,accepted_coord");
        assert_eq!(lines.count(), chain.len());
        let first = text.lines().nth(1).unwrap();
        let fields: Vec<&str> = first.split(',').collect();
        assert_eq!(fields.len(), 5);
        assert_eq!(fields[0].parse::<usize>().unwrap(), chain.draws()[0].iter);
        assert_eq!(
            fields[1].parse::<f64>().unwrap(),
            chain.draws()[0].x_eps
        );
    }

    fn flat_map(theta: f64, sigma2: f64) -> CdiMap {
        let h = GpHyperParams::new(sigma2, 1.0, 0.0, theta).unwrap();
        let obs = [
            CdiObservation {
                location: Location::new(0, 0.0, 0.0, 1.5),
                theta_hat: theta,
            },
            CdiObservation {
                location: Location::new(1, 5000.0, 0.0, 1.5),
                theta_hat: theta,
            },
        ];
        CdiMap::with_hyper(&obs, h, true).unwrap()
    }

    #[test]
    fn no_data_matches_nonpar_prior_only() {
        let xeps_map = flat_map(0.3, 0.25);
        let xi_map = flat_map(-0.2, 0.01);
        let at = Location::new(9, 2500.0, 0.0, 1.5);
        let spec = QuantileSpec::new(1e-2, 0.05).unwrap();
        let empty = SampleSet::new(vec![]).unwrap();
        let evt = infer_evt_bayes(
            &xeps_map, &xi_map, &at, &empty, &spec, 0.2, 2, 1000, 0.25, 1,
            Sided::OneSidedLower,
        )
        .unwrap();
        assert_eq!(evt.flag, Some(InferenceFlag::PriorOnly));
        let prior = GaussianPrior::new(0.3, xeps_map.predict(&at).1).unwrap();
        let nonpar = infer_nonpar_bayes(
            &prior,
            &empty,
            &spec,
            &xi_map,
            &at,
            Sided::OneSidedLower,
        )
        .unwrap();
        assert_eq!(evt.interval.lower, nonpar.interval.lower);
        assert_eq!(evt.interval.upper, nonpar.interval.upper);
        // Too few samples for the threshold rule: same prior-only path.
        let few = SampleSet::new(vec![1.0, 2.0, 3.0]).unwrap();
        let fallback = infer_evt_bayes(
            &xeps_map, &xi_map, &at, &few, &spec, 0.2, 5, 1000, 0.25, 1,
            Sided::OneSidedLower,
        )
        .unwrap();
        assert_eq!(fallback.flag, Some(InferenceFlag::PriorOnly));
    }

    #[test]
    fn median_bound_at_half_delta() {
        let prior = recovery_prior();
        let spec = QuantileSpec::new(1e-3, 0.5).unwrap();
        let d = deficit_free(10.0);
        let cfg = McmcConfig::from_prior(&prior, 2_000, 17, 1.0);
        let chain = metropolis_within_gibbs(&prior, &d, &spec, &cfg).unwrap();
        let ci = interval_from_chain(&chain, 0.5, Sided::OneSidedLower).unwrap();
        assert_eq!(ci.lower, chain_quantile(&chain, 0.5).unwrap());
        let two = interval_from_chain(&chain, 0.1, Sided::TwoSided).unwrap();
        assert!(two.lower <= chain_quantile(&chain, 0.5).unwrap());
        assert!(two.upper >= chain_quantile(&chain, 0.5).unwrap());
    }

    #[test]
    fn coverage_with_correct_priors() {
        // Hierarchical check: truth drawn from the prior, data drawn from
        // the truth, nominal 95% one-sided intervals. The rank-law beta
        // prior is exact by construction; coverage lands near nominal.
        let (mu0, s02): (f64, f64) = (2.0f64.ln(), 0.01);
        let (xi_m, xi_v): (f64, f64) = (-0.45, 0.0016);
        let u0 = (mu0 + 0.4).exp();
        let eps = 1e-2;
        let spec = QuantileSpec::new(eps, 0.05).unwrap();
        let n = 1000usize;
        let zeta = 0.2;
        let r = 200usize;
        let reps = 150;
        let mut rng = ChaCha8Rng::seed_from_u64(0xc07e);
        let mut covered = 0usize;
        for rep in 0..reps {
            let z1: f64 = StandardNormal.sample(&mut rng);
            let z2: f64 = StandardNormal.sample(&mut rng);
            let x_true = (mu0 + s02.sqrt() * z1).exp();
            let xi_true = xi_m + xi_v.sqrt() * z2;
            let t = TailParams::new(x_true, xi_true, 0.5, u0, eps).unwrap();
            let sigma_u0 = sigma_from_reparam(&t).unwrap();
            let vals: Vec<f64> = (0..n)
                .map(|_| {
                    if rng.gen::<f64>() < 0.5 {
                        let q: f64 = rng.gen();
                        let y = sigma_u0 / xi_true * ((1.0 - q).powf(-xi_true) - 1.0);
                        // The short-tail endpoint cannot dip below zero for
                        // these parameter ranges, but guard anyway.
                        (u0 - y).max(1e-9)
                    } else {
                        u0 + rng.gen::<f64>()
                    }
                })
                .collect();
            let local = SampleSet::new(vals).unwrap();
            let prior = PhiPrior::new(
                GaussianPrior::new(mu0, s02).unwrap(),
                xi_m,
                xi_v,
                r as f64,
                (n + 1 - r) as f64,
            )
            .unwrap();
            let inf = infer_evt_bayes_with_prior(
                &prior,
                &local,
                &spec,
                zeta,
                2,
                3_000,
                0.25,
                1000 + rep,
                Sided::OneSidedLower,
            )
            .unwrap();
            assert!(inf.flag.is_none());
            if inf.interval.lower <= x_true {
                covered += 1;
            }
        }
        let rate = covered as f64 / reps as f64;
        assert!(rate >= 0.88 && rate <= 1.0, "coverage {rate}");
    }
}
