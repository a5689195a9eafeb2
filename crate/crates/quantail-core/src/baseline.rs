//! Local-data-only baselines: exact order-statistic confidence intervals
//! for the quantile (distribution-free, via the rank beta law) and GPD
//! profile-likelihood intervals with the exceedance probability plugged in
//! as r/n.

use crate::evt::{compute_deficits, fit_gpd_mle, gpd_loglik, select_threshold, tail_quantile, DeficitSet, EvtError};
use crate::mcmc::gpd_log_likelihood;
use crate::opt::golden_max;
use crate::stats::{
    beta_cdf, ceil_rank, normal_inv_cdf, order_statistic, ConfidenceInterval, Inference,
    InferenceFlag, QuantileSpec, SampleSet, Sided, StatsError,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("bad argument: {0}")]
    BadArgument(&'static str),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Evt(#[from] EvtError),
}

/// Profile-likelihood curve over candidate quantile values.
#[derive(Debug, Clone)]
pub struct ProfileGrid {
    pub x_eps_grid: Vec<f64>,
    pub profile_loglik: Vec<f64>,
}

impl ProfileGrid {
    pub fn new(x_eps_grid: Vec<f64>, profile_loglik: Vec<f64>) -> Result<Self, BaselineError> {
        if x_eps_grid.len() != profile_loglik.len() {
            return Err(BaselineError::BadArgument("grid lengths differ"));
        }
        if x_eps_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(BaselineError::BadArgument("grid must be strictly increasing"));
        }
        Ok(ProfileGrid {
            x_eps_grid,
            profile_loglik,
        })
    }
}

fn degenerate(confidence: f64, sided: Sided) -> Result<ConfidenceInterval, BaselineError> {
    Ok(ConfidenceInterval::new(
        0.0,
        f64::INFINITY,
        confidence,
        sided,
    )?)
}

/// Exact distribution-free interval from order statistics. One-sided:
/// [X_(r), inf) with r the largest rank whose beta-law coverage
/// I_eps(r, n+1-r) still reaches 1-delta; no rank qualifying gives [0, inf).
/// Two-sided: ranks ceil(n eps) -+ k with the smallest k whose coverage
/// difference reaches 1-delta; ranks off either end saturate at 0 / inf.
pub fn nonpar_baseline_interval(
    local: &SampleSet,
    spec: &QuantileSpec,
    sided: Sided,
) -> Result<ConfidenceInterval, BaselineError> {
    let n = local.len();
    let confidence = 1.0 - spec.delta;
    if n == 0 {
        return degenerate(confidence, sided);
    }
    let eps = spec.epsilon;
    let one_sided_ok =
        |r: usize| -> Result<bool, BaselineError> { Ok(beta_cdf(eps, r as f64, (n + 1 - r) as f64)? >= confidence) };
    match sided {
        Sided::OneSidedLower => {
            if !one_sided_ok(1)? {
                return degenerate(confidence, sided);
            }
            // Coverage decreases in r; binary search the last qualifying rank.
            let (mut lo, mut hi) = (1usize, n);
            while lo < hi {
                let mid = (lo + hi + 1) / 2;
                if one_sided_ok(mid)? {
                    lo = mid;
                } else {
                    hi = mid - 1;
                }
            }
            Ok(ConfidenceInterval::new(
                order_statistic(local, lo)?,
                f64::INFINITY,
                confidence,
                sided,
            )?)
        }
        Sided::TwoSided => {
            let m = ceil_rank(n as f64 * eps).max(1);
            let coverage = |k: usize| -> Result<f64, BaselineError> {
                let lo_term = if k >= m {
                    1.0
                } else {
                    beta_cdf(eps, (m - k) as f64, (n + 1 - (m - k)) as f64)?
                };
                let hi_term = if m + k > n {
                    0.0
                } else {
                    beta_cdf(eps, (m + k) as f64, (n + 1 - (m + k)) as f64)?
                };
                Ok(lo_term - hi_term)
            };
            // Coverage is non-decreasing in k; binary search the smallest
            // k that reaches the target (k_max saturates both ends).
            let k_max = m.max(n - m + 1);
            let (mut lo, mut hi) = (0usize, k_max);
            while lo < hi {
                let mid = (lo + hi) / 2;
                if coverage(mid)? >= confidence {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            let k = lo;
            let lower = if k >= m {
                0.0
            } else {
                order_statistic(local, m - k)?
            };
            let upper = if m + k > n {
                f64::INFINITY
            } else {
                order_statistic(local, m + k)?
            };
            Ok(ConfidenceInterval::new(lower, upper, confidence, sided)?)
        }
    }
}

const XI_PROFILE_BOX: f64 = 5.0;
const XI_GRID_POINTS: usize = 51;

/// Log-likelihood in the quantile parametrization with the shape profiled
/// out: sup over xi in [-5, 5] of the deficit log-likelihood, by a coarse
/// grid and golden-section refinement restricted to the feasible shapes.
/// Empty feasible set (or x_eps outside (0, u)) gives -inf.
pub fn profile_loglik(x_eps: f64, d: &DeficitSet, p_u_hat: f64, spec: &QuantileSpec) -> f64 {
    let eval = |xi: f64| gpd_log_likelihood(x_eps, xi, p_u_hat, spec.epsilon, d);
    let step = 2.0 * XI_PROFILE_BOX / (XI_GRID_POINTS - 1) as f64;
    let mut best_xi = f64::NAN;
    let mut best = f64::NEG_INFINITY;
    for i in 0..XI_GRID_POINTS {
        let xi = -XI_PROFILE_BOX + i as f64 * step;
        let v = eval(xi);
        if v > best {
            best = v;
            best_xi = xi;
        }
    }
    if best == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    // Short tails are infeasible left of a support-implied critical shape;
    // keep the refinement bracket on the feasible side of it.
    let mut lo = (best_xi - step).max(-XI_PROFILE_BOX);
    let hi = (best_xi + step).min(XI_PROFILE_BOX);
    if let Some(dmax) = d.deficits().iter().cloned().fold(None, |a: Option<f64>, y| {
        Some(a.map_or(y, |m: f64| m.max(y)))
    }) {
        let gap = d.u() - x_eps;
        if gap > 0.0 && gap < dmax && p_u_hat > spec.epsilon {
            let xi_crit = (1.0 - gap / dmax).ln() / (p_u_hat / spec.epsilon).ln();
            lo = lo.max(xi_crit + 1e-9 * xi_crit.abs().max(1.0));
        }
    }
    if !(lo < hi) {
        return best;
    }
    let (_, refined) = golden_max(eval, lo, hi, 1e-4);
    refined.max(best)
}

fn chi2_quantile_1dof(q: f64) -> Result<f64, BaselineError> {
    let z = normal_inv_cdf((1.0 + q) / 2.0)?;
    Ok(z * z)
}

/// GPD profile-likelihood interval: the set of quantile values whose
/// deviance against the MLE stays within the chi-squared(1) cutoff,
/// bracketed geometrically from the MLE and bisected to relative
/// tolerance 1e-6. Threshold or fit failures degrade to [0, inf), the
/// latter flagged.
pub fn evt_baseline_interval(
    local: &SampleSet,
    spec: &QuantileSpec,
    zeta: f64,
    r_min: usize,
    sided: Sided,
) -> Result<Inference, BaselineError> {
    let confidence = 1.0 - spec.delta;
    let fallback = |flag: Option<InferenceFlag>| -> Result<Inference, BaselineError> {
        Ok(Inference {
            interval: degenerate(confidence, sided)?,
            flag,
        })
    };
    let (u, r) = match select_threshold(local, zeta, r_min) {
        Ok(v) => v,
        Err(EvtError::InsufficientSamples { .. }) => return fallback(None),
        Err(e) => return Err(e.into()),
    };
    let d = compute_deficits(local, u);
    let p_u_hat = r as f64 / local.len() as f64;
    if p_u_hat <= spec.epsilon {
        return fallback(Some(InferenceFlag::FitFallback));
    }
    let fit = match fit_gpd_mle(&d) {
        Ok(f) => f,
        Err(_) => return fallback(Some(InferenceFlag::FitFallback)),
    };
    let x_hat = match tail_quantile(&fit, u, p_u_hat, spec.epsilon) {
        Ok(x) if x > 0.0 && x < u => x,
        _ => return fallback(Some(InferenceFlag::FitFallback)),
    };
    let loglik_hat = gpd_loglik(&d, &fit);
    let cutoff = chi2_quantile_1dof(confidence)?;
    let outside = |x: f64| -> bool {
        let dev = 2.0 * (loglik_hat - profile_loglik(x, &d, p_u_hat, spec));
        !(dev <= cutoff)
    };
    let tol = 1e-6 * x_hat;
    let bisect = |mut inside_x: f64, mut outside_x: f64| -> f64 {
        while (inside_x - outside_x).abs() > tol {
            let mid = 0.5 * (inside_x + outside_x);
            if outside(mid) {
                outside_x = mid;
            } else {
                inside_x = mid;
            }
        }
        0.5 * (inside_x + outside_x)
    };
    // Lower endpoint: halve toward zero until the deviance crosses.
    let lower = {
        let mut prev = x_hat;
        let mut found = None;
        for k in 1..=60 {
            let x = x_hat * 0.5f64.powi(k);
            if outside(x) {
                found = Some(bisect(prev, x));
                break;
            }
            prev = x;
        }
        found.unwrap_or(0.0)
    };
    let interval = match sided {
        Sided::OneSidedLower => {
            ConfidenceInterval::new(lower, f64::INFINITY, confidence, sided)?
        }
        Sided::TwoSided => {
            // Upper endpoint: approach the threshold geometrically; the
            // likelihood collapses as x_eps -> u, so a crossing exists.
            let gap = u - x_hat;
            let mut prev = x_hat;
            let mut upper = u;
            for k in 1..=60 {
                let x = u - gap * 0.5f64.powi(k);
                if outside(x) {
                    upper = bisect(prev, x);
                    break;
                }
                prev = x;
            }
            ConfidenceInterval::new(lower, upper, confidence, sided)?
        }
    };
    Ok(Inference {
        interval,
        flag: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::map_batch;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp1};

    fn ramp(n: usize) -> SampleSet {
        SampleSet::new((1..=n).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn smallest_n_with_nonzero_bound() {
        // eps = 1e-4, delta = 0.05: rank 1 first qualifies at n = 29_956.
        let spec = QuantileSpec::new(1e-4, 0.05).unwrap();
        let ok = nonpar_baseline_interval(&ramp(29_956), &spec, Sided::OneSidedLower).unwrap();
        assert_eq!(ok.lower, 1.0);
        let short = nonpar_baseline_interval(&ramp(29_955), &spec, Sided::OneSidedLower).unwrap();
        assert_eq!(short.lower, 0.0);
        assert_eq!(short.upper, f64::INFINITY);
    }

    #[test]
    fn small_sample_gives_zero_rate() {
        let spec = QuantileSpec::new(1e-2, 0.05).unwrap();
        let ci = nonpar_baseline_interval(&ramp(50), &spec, Sided::OneSidedLower).unwrap();
        assert_eq!(ci.lower, 0.0);
        // And the empty sample set degrades the same way for both shapes.
        let empty = SampleSet::new(vec![]).unwrap();
        for sided in [Sided::OneSidedLower, Sided::TwoSided] {
            let ci = nonpar_baseline_interval(&empty, &spec, sided).unwrap();
            assert_eq!(ci.lower, 0.0);
            assert_eq!(ci.upper, f64::INFINITY);
        }
    }

    #[test]
    fn one_sided_rank_is_maximal_and_bounded() {
        let spec = QuantileSpec::new(0.05, 0.1).unwrap();
        for &n in &[40usize, 100, 500, 2311] {
            let s = ramp(n);
            let ci = nonpar_baseline_interval(&s, &spec, Sided::OneSidedLower).unwrap();
            if ci.lower == 0.0 {
                continue;
            }
            let r = ci.lower as usize; // ramp values are their rank
            assert!(beta_cdf(0.05, r as f64, (n + 1 - r) as f64).unwrap() >= 0.9);
            if r < n {
                assert!(beta_cdf(0.05, (r + 1) as f64, (n - r) as f64).unwrap() < 0.9);
            }
            // Never above the empirical-quantile rank.
            assert!(r <= ceil_rank(n as f64 * 0.05));
        }
    }

    #[test]
    fn confidence_monotonicity() {
        let s = ramp(1000);
        let mut last = f64::INFINITY;
        for &delta in &[0.5, 0.2, 0.1, 0.05, 0.01, 1e-3] {
            let spec = QuantileSpec::new(0.05, delta).unwrap();
            let one = nonpar_baseline_interval(&s, &spec, Sided::OneSidedLower).unwrap();
            assert!(one.lower <= last);
            last = one.lower;
            // Two-sided brackets the empirical quantile rank.
            let two = nonpar_baseline_interval(&s, &spec, Sided::TwoSided).unwrap();
            let m = ceil_rank(1000.0 * 0.05) as f64;
            assert!(two.lower <= m && (two.upper >= m || two.upper == f64::INFINITY));
        }
    }

    #[test]
    fn two_sided_coverage_formula() {
        // The chosen k must reach the target and k-1 must miss it.
        let spec = QuantileSpec::new(0.1, 0.05).unwrap();
        let n = 200usize;
        let s = ramp(n);
        let ci = nonpar_baseline_interval(&s, &spec, Sided::TwoSided).unwrap();
        let m = ceil_rank(n as f64 * 0.1);
        let k = m - ci.lower as usize; // symmetric construction
        assert_eq!(ci.upper as usize, m + k);
        let cover = |k: usize| {
            beta_cdf(0.1, (m - k) as f64, (n + 1 - (m - k)) as f64).unwrap()
                - beta_cdf(0.1, (m + k) as f64, (n + 1 - (m + k)) as f64).unwrap()
        };
        assert!(cover(k) >= 0.95);
        assert!(cover(k - 1) < 0.95);
    }

    #[test]
    fn exact_coverage_monte_carlo() {
        // P(X_eps >= lower) equals the beta-law value exactly for any
        // continuous distribution; check with exponential samples.
        let spec = QuantileSpec::new(0.05, 0.1).unwrap();
        let n = 100usize;
        let ci = nonpar_baseline_interval(&ramp(n), &spec, Sided::OneSidedLower).unwrap();
        let r = ci.lower as usize;
        assert!(r >= 1);
        let want = beta_cdf(0.05, r as f64, (n + 1 - r) as f64).unwrap();
        let x_eps = -(1.0f64 - 0.05).ln(); // Exp(1) quantile
        let reps = 100_000;
        let hits: usize = map_batch(&(0..reps as u64).collect::<Vec<_>>(), |&rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(0xbeb + rep);
            let mut v: Vec<f64> = (0..n).map(|_| Exp1.sample(&mut rng)).collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            usize::from(v[r - 1] <= x_eps)
        })
        .iter()
        .sum();
        let got = hits as f64 / reps as f64;
        assert!((got - want).abs() < 0.005, "{got} vs {want}");
    }

    fn gpd_mixture_sample(
        n: usize,
        u0: f64,
        sigma0: f64,
        xi0: f64,
        rng: &mut ChaCha8Rng,
    ) -> SampleSet {
        let vals: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen::<f64>() < 0.5 {
                    let q: f64 = rng.gen();
                    u0 - sigma0 / xi0 * ((1.0 - q).powf(-xi0) - 1.0)
                } else {
                    u0 + rng.gen::<f64>()
                }
            })
            .collect();
        SampleSet::new(vals).unwrap()
    }

    #[test]
    fn profile_peaks_at_mle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xba5e);
        let s = gpd_mixture_sample(10_000, 5.0, 0.5, -0.25, &mut rng);
        let spec = QuantileSpec::new(1e-2, 0.05).unwrap();
        let (u, r) = select_threshold(&s, 0.1, 2).unwrap();
        let d = compute_deficits(&s, u);
        let p_hat = r as f64 / 10_000.0;
        let fit = fit_gpd_mle(&d).unwrap();
        let x_hat = tail_quantile(&fit, u, p_hat, 1e-2).unwrap();
        let l_hat = gpd_loglik(&d, &fit);
        let at_mle = profile_loglik(x_hat, &d, p_hat, &spec);
        assert!((at_mle - l_hat).abs() < 1e-3, "{at_mle} vs {l_hat}");
        assert!(at_mle <= l_hat + 1e-9);
        // The profile never exceeds the full MLE maximum.
        for i in 1..40 {
            let x = x_hat * (0.6 + 0.02 * i as f64);
            assert!(profile_loglik(x, &d, p_hat, &spec) <= l_hat + 1e-9);
        }
        // Out-of-range quantile candidates are impossible.
        assert_eq!(profile_loglik(u * 1.01, &d, p_hat, &spec), f64::NEG_INFINITY);
        assert_eq!(profile_loglik(-1.0, &d, p_hat, &spec), f64::NEG_INFINITY);
    }

    #[test]
    fn profile_curve_is_unimodal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xc2f7);
        let s = gpd_mixture_sample(5_000, 5.0, 0.5, -0.25, &mut rng);
        let spec = QuantileSpec::new(1e-2, 0.05).unwrap();
        let (u, r) = select_threshold(&s, 0.1, 2).unwrap();
        let d = compute_deficits(&s, u);
        let p_hat = r as f64 / 5_000.0;
        let fit = fit_gpd_mle(&d).unwrap();
        let x_hat = tail_quantile(&fit, u, p_hat, 1e-2).unwrap();
        let grid: Vec<f64> = (0..200)
            .map(|i| x_hat * (0.7 + 0.6 * i as f64 / 199.0))
            .collect();
        let prof: Vec<f64> = grid
            .iter()
            .map(|&x| profile_loglik(x, &d, p_hat, &spec))
            .collect();
        let curve = ProfileGrid::new(grid, prof).unwrap();
        let peak = curve
            .profile_loglik
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let slack = 1e-3;
        for i in 0..peak {
            assert!(curve.profile_loglik[i] <= curve.profile_loglik[i + 1] + slack);
        }
        for i in peak..curve.profile_loglik.len() - 1 {
            assert!(curve.profile_loglik[i] + slack >= curve.profile_loglik[i + 1]);
        }
    }

    #[test]
    fn chi_squared_cutoff() {
        assert!((chi2_quantile_1dof(0.95).unwrap() - 3.8414588206941260).abs() < 1e-10);
    }

    #[test]
    fn interval_contains_mle_and_shrinks_with_delta() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5517);
        let s = gpd_mixture_sample(10_000, 5.0, 0.5, -0.25, &mut rng);
        let (u, r) = select_threshold(&s, 0.1, 2).unwrap();
        let d = compute_deficits(&s, u);
        let p_hat = r as f64 / 10_000.0;
        let fit = fit_gpd_mle(&d).unwrap();
        let x_hat = tail_quantile(&fit, u, p_hat, 1e-2).unwrap();
        let spec = QuantileSpec::new(1e-2, 0.05).unwrap();
        let two = evt_baseline_interval(&s, &spec, 0.1, 2, Sided::TwoSided).unwrap();
        assert!(two.flag.is_none());
        assert!(two.interval.lower <= x_hat && x_hat <= two.interval.upper);
        assert!(two.interval.lower > 0.0);
        // Near-unit delta: the cutoff collapses and the set hugs the MLE.
        let tight_spec = QuantileSpec::new(1e-2, 0.999).unwrap();
        let tight = evt_baseline_interval(&s, &tight_spec, 0.1, 2, Sided::TwoSided).unwrap();
        let width = tight.interval.upper - tight.interval.lower;
        assert!(width < 0.01 * x_hat, "width {width}");
        assert!(width < two.interval.upper - two.interval.lower);
        assert!(tight.interval.lower <= x_hat && x_hat <= tight.interval.upper);
        // One-sided shares the lower endpoint and opens the top.
        let one = evt_baseline_interval(&s, &spec, 0.1, 2, Sided::OneSidedLower).unwrap();
        assert!((one.interval.lower - two.interval.lower).abs() < 1e-9 * x_hat);
        assert_eq!(one.interval.upper, f64::INFINITY);
    }

    #[test]
    fn fallbacks_degrade_to_zero_rate() {
        let spec = QuantileSpec::new(1e-2, 0.05).unwrap();
        // Too few samples for the threshold rule.
        let tiny = SampleSet::new(vec![1.0, 2.0, 3.0]).unwrap();
        let inf = evt_baseline_interval(&tiny, &spec, 0.2, 5, Sided::OneSidedLower).unwrap();
        assert_eq!(inf.interval.lower, 0.0);
        assert!(inf.flag.is_none());
        // Degenerate deficits (all ties): the fit cannot run.
        let mut vals = vec![2.0; 400];
        vals.extend(vec![5.0; 600]);
        let flat = SampleSet::new(vals).unwrap();
        let inf2 = evt_baseline_interval(&flat, &spec, 0.2, 2, Sided::OneSidedLower).unwrap();
        assert_eq!(inf2.interval.lower, 0.0);
        assert_eq!(inf2.flag, Some(InferenceFlag::FitFallback));
    }

    #[test]
    fn evt_interval_coverage_on_true_gpd_tail() {
        // Asymptotic coverage of the two-sided profile interval on a true
        // GPD tail at n = 1e4, nominal 95%.
        let (u0, sigma0, xi0) = (5.0, 0.5, -0.25);
        let spec = QuantileSpec::new(1e-2, 0.05).unwrap();
        let gp = crate::evt::GpdParams::new(sigma0, xi0).unwrap();
        let x_true = tail_quantile(&gp, u0, 0.5, 1e-2).unwrap();
        let reps = 500;
        let hits: usize = map_batch(&(0..reps as u64).collect::<Vec<_>>(), |&rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(0xeb5 + rep);
            let s = gpd_mixture_sample(10_000, u0, sigma0, xi0, &mut rng);
            let inf = evt_baseline_interval(&s, &spec, 0.1, 2, Sided::TwoSided).unwrap();
            usize::from(inf.interval.lower <= x_true && x_true <= inf.interval.upper)
        })
        .iter()
        .sum();
        let rate = hits as f64 / reps as f64;
        assert!(rate >= 0.91 && rate <= 0.98, "coverage {rate}");
    }
}
