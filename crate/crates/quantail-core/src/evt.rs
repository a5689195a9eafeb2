//! Lower-tail model: generalized Pareto deficits below a threshold, the
//! quantile algebra that reparametrizes the scale by the epsilon-quantile,
//! maximum-likelihood fitting, threshold selection, and the automated
//! threshold-fraction calibration from mean-deficit linearity.
//!
//! Deficits are y = u - x for samples x strictly below the threshold u. The
//! deficit law is GPD(sigma_u, xi) with density
//! (1/sigma)(1 + xi y / sigma)^(-(1 + 1/xi)) on {y > 0, 1 + xi y/sigma > 0};
//! |xi| < 1e-8 switches to the exponential limit to dodge cancellation.

use crate::opt::nelder_mead;
use crate::stats::{ceil_rank, order_statistic, SampleSet, StatsError};
use std::io::{BufWriter, Write};
use std::path::Path;
use thiserror::Error;

/// Switch point to the exponential-limit branches.
const XI_ZERO: f64 = 1e-8;
/// Sanity box for the shape during fitting.
const XI_BOX: f64 = 5.0;

#[derive(Debug, Error)]
pub enum EvtError {
    #[error("bad argument: {0}")]
    BadArgument(&'static str),
    #[error("need {needed} samples, have {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("deficits are all equal; scale is degenerate")]
    AllEqualDeficits,
    #[error("tail fit failed: {0}")]
    FitFailed(&'static str),
    #[error("no linear mean-deficit region at any calibration location")]
    NoLinearRegion,
    #[error("invariant violation: {0}")]
    InvariantViolation(&'static str),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// GPD scale and shape for the deficit law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpdParams {
    pub sigma_u: f64,
    pub xi: f64,
}

impl GpdParams {
    pub fn new(sigma_u: f64, xi: f64) -> Result<Self, EvtError> {
        if !(sigma_u > 0.0 && sigma_u.is_finite()) {
            return Err(EvtError::BadArgument("sigma_u must be finite and > 0"));
        }
        if !xi.is_finite() {
            return Err(EvtError::BadArgument("xi must be finite"));
        }
        Ok(GpdParams { sigma_u, xi })
    }
}

/// Tail parametrized by the quantile of interest instead of the scale:
/// (x_eps, xi, p_u) with the threshold u and level epsilon carried along.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailParams {
    pub x_eps: f64,
    pub xi: f64,
    pub p_u: f64,
    pub u: f64,
    pub epsilon: f64,
}

impl TailParams {
    pub fn new(x_eps: f64, xi: f64, p_u: f64, u: f64, epsilon: f64) -> Result<Self, EvtError> {
        if !(x_eps > 0.0 && x_eps.is_finite()) {
            return Err(EvtError::BadArgument("x_eps must be finite and > 0"));
        }
        if !(x_eps < u) {
            return Err(EvtError::BadArgument("x_eps must lie below the threshold"));
        }
        if !(p_u > 0.0 && p_u < 1.0) {
            return Err(EvtError::BadArgument("p_u must be in (0, 1)"));
        }
        if !(epsilon > 0.0 && epsilon < p_u) {
            return Err(EvtError::BadArgument("epsilon must be in (0, p_u)"));
        }
        if !xi.is_finite() {
            return Err(EvtError::BadArgument("xi must be finite"));
        }
        let t = TailParams {
            x_eps,
            xi,
            p_u,
            u,
            epsilon,
        };
        sigma_from_reparam(&t)?;
        Ok(t)
    }
}

/// Threshold deficits y_i = u - x_i for x_i < u.
#[derive(Debug, Clone, PartialEq)]
pub struct DeficitSet {
    u: f64,
    deficits: Vec<f64>,
}

impl DeficitSet {
    pub fn new(u: f64, deficits: Vec<f64>) -> Result<Self, EvtError> {
        if deficits.iter().any(|y| !y.is_finite() || *y <= 0.0) {
            return Err(EvtError::BadArgument("deficits must be finite and > 0"));
        }
        Ok(DeficitSet { u, deficits })
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn deficits(&self) -> &[f64] {
        &self.deficits
    }

    pub fn len(&self) -> usize {
        self.deficits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deficits.is_empty()
    }
}

/// Deficit density. Out-of-support arguments give 0.
pub fn gpd_pdf(y: f64, p: &GpdParams) -> f64 {
    if y <= 0.0 || !y.is_finite() {
        return 0.0;
    }
    let (s, xi) = (p.sigma_u, p.xi);
    if xi.abs() < XI_ZERO {
        return (-y / s).exp() / s;
    }
    let t = xi * y / s;
    if t <= -1.0 {
        return 0.0;
    }
    (-(1.0 + 1.0 / xi) * t.ln_1p()).exp() / s
}

/// Deficit CDF, clamped to [0, 1]; 1 above the upper endpoint when xi < 0.
pub fn gpd_cdf(y: f64, p: &GpdParams) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    let (s, xi) = (p.sigma_u, p.xi);
    if xi.abs() < XI_ZERO {
        return -(-y / s).exp_m1();
    }
    let t = xi * y / s;
    if t <= -1.0 {
        return 1.0;
    }
    (-(-t.ln_1p() / xi).exp_m1()).clamp(0.0, 1.0)
}

/// Log-likelihood of a deficit set under GPD parameters; -inf when any
/// deficit leaves the support, 0 for an empty set.
pub fn gpd_loglik(d: &DeficitSet, p: &GpdParams) -> f64 {
    let (s, xi) = (p.sigma_u, p.xi);
    let n = d.len() as f64;
    if xi.abs() < XI_ZERO {
        let sum: f64 = d.deficits().iter().sum();
        return -n * s.ln() - sum / s;
    }
    let mut acc = 0.0;
    for &y in d.deficits() {
        let t = xi * y / s;
        if t <= -1.0 {
            return f64::NEG_INFINITY;
        }
        acc += t.ln_1p();
    }
    -n * s.ln() - (1.0 + 1.0 / xi) * acc
}

/// Scale implied by the quantile parametrization:
/// sigma_u = (u - x_eps) xi / ((p_u/eps)^xi - 1), with the log-limit branch
/// (u - x_eps)/ln(p_u/eps) for |xi| < 1e-8.
pub fn sigma_from_reparam(t: &TailParams) -> Result<f64, EvtError> {
    let gap = t.u - t.x_eps;
    let lr = (t.p_u / t.epsilon).ln();
    let s = if t.xi.abs() < XI_ZERO {
        gap / lr
    } else {
        gap * t.xi / (t.xi * lr).exp_m1()
    };
    if !(s > 0.0 && s.is_finite()) {
        return Err(EvtError::InvariantViolation("implied sigma_u not positive"));
    }
    Ok(s)
}

/// Probability that a sample falls below x, for x under the threshold:
/// (1 + xi (u-x)/sigma_u)^(-1/xi) * p_u.
pub fn tail_cdf(x: f64, t: &TailParams) -> Result<f64, EvtError> {
    if !(x < t.u) {
        return Err(EvtError::BadArgument("tail_cdf needs x < u"));
    }
    let s = sigma_from_reparam(t)?;
    let y = t.u - x;
    if t.xi.abs() < XI_ZERO {
        return Ok((-y / s).exp() * t.p_u);
    }
    let w = t.xi * y / s;
    if w <= -1.0 {
        // Below the finite lower endpoint (xi < 0): no mass.
        return Ok(0.0);
    }
    Ok((-w.ln_1p() / t.xi).exp() * t.p_u)
}

/// Epsilon-quantile under the deficit model:
/// X_eps = u - (sigma_u/xi)((p_u/eps)^xi - 1), log branch at xi ~ 0.
pub fn tail_quantile(p: &GpdParams, u: f64, p_u: f64, epsilon: f64) -> Result<f64, EvtError> {
    if !(epsilon > 0.0 && epsilon <= p_u && p_u < 1.0) {
        return Err(EvtError::BadArgument("need 0 < epsilon <= p_u < 1"));
    }
    let lr = (p_u / epsilon).ln();
    if p.xi.abs() < XI_ZERO {
        Ok(u - p.sigma_u * lr)
    } else {
        Ok(u - p.sigma_u / p.xi * (p.xi * lr).exp_m1())
    }
}

/// Threshold as the r-th order statistic with r = max(ceil(n zeta), r_min).
pub fn select_threshold(
    s: &SampleSet,
    zeta: f64,
    r_min: usize,
) -> Result<(f64, usize), EvtError> {
    if !(zeta > 0.0 && zeta <= 1.0) {
        return Err(EvtError::BadArgument("zeta must be in (0, 1]"));
    }
    if r_min < 2 {
        return Err(EvtError::BadArgument("r_min must be >= 2"));
    }
    let n = s.len();
    let r = ceil_rank(n as f64 * zeta).max(r_min);
    if r > n {
        return Err(EvtError::InsufficientSamples { needed: r, got: n });
    }
    Ok((order_statistic(s, r)?, r))
}

/// Deficits u - x for samples strictly below u; ties at u are excluded, so a
/// threshold at the r-th order statistic of distinct values yields r-1 of
/// them.
pub fn compute_deficits(s: &SampleSet, u: f64) -> DeficitSet {
    let deficits: Vec<f64> = s
        .values()
        .iter()
        .filter(|&&x| x < u)
        .map(|&x| u - x)
        .collect();
    DeficitSet { u, deficits }
}

/// Negative log-likelihood in (ln sigma, xi) coordinates with support
/// violations and out-of-box shapes pushed to +inf.
fn gpd_nll(z: &[f64], deficits: &[f64]) -> f64 {
    let (ln_s, xi) = (z[0], z[1]);
    if ln_s.abs() > 300.0 || xi.abs() > XI_BOX {
        return f64::INFINITY;
    }
    let s = ln_s.exp();
    let n = deficits.len() as f64;
    if xi.abs() < XI_ZERO {
        let sum: f64 = deficits.iter().sum();
        return n * ln_s + sum / s;
    }
    let mut acc = 0.0;
    for &y in deficits {
        let t = xi * y / s;
        if t <= -1.0 {
            return f64::INFINITY;
        }
        acc += t.ln_1p();
    }
    n * ln_s + (1.0 + 1.0 / xi) * acc
}

/// Maximum-likelihood GPD fit over (ln sigma, xi), five deterministic
/// Nelder-Mead starts seeded from moment estimates.
pub fn fit_gpd_mle(d: &DeficitSet) -> Result<GpdParams, EvtError> {
    let y = d.deficits();
    if y.len() < 10 {
        return Err(EvtError::InsufficientSamples {
            needed: 10,
            got: y.len(),
        });
    }
    let first = y[0];
    if y.iter().all(|&v| v == first) {
        return Err(EvtError::AllEqualDeficits);
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / n;
    // Method of moments: xi = (1 - mean^2/var)/2, sigma = mean (1 - xi).
    let xi0 = (0.5 * (1.0 - mean * mean / var)).clamp(-0.9, 0.9);
    let sigma0 = (mean * (1.0 - xi0)).max(f64::MIN_POSITIVE);
    let z0 = sigma0.ln();
    let starts = [
        [z0, xi0],
        [z0 + 0.7, xi0],
        [z0 - 0.7, xi0],
        [z0, xi0 + 0.3],
        [z0, xi0 - 0.3],
    ];
    let mut best: Option<([f64; 2], f64)> = None;
    for s in starts {
        let r = nelder_mead(|z| gpd_nll(z, y), &s, &[0.5, 0.2], 400, 1e-10);
        let keep = match best {
            None => true,
            Some((_, f)) => r.f < f,
        };
        if keep {
            best = Some(([r.x[0], r.x[1]], r.f));
        }
    }
    let (z, f) = best.expect("at least one start");
    if !f.is_finite() {
        return Err(EvtError::FitFailed("no feasible parameters found"));
    }
    GpdParams::new(z[0].exp(), z[1])
}

/// One point of the mean-deficit curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanDeficitPoint {
    pub u: f64,
    pub e_hat: f64,
    pub count: usize,
}

/// Empirical mean deficit e(u) = mean(u - x | x < u) at each threshold;
/// thresholds with no samples below are omitted.
pub fn mean_deficit_curve(s: &SampleSet, thresholds: &[f64]) -> Vec<MeanDeficitPoint> {
    let sorted = s.sorted();
    // Prefix sums over the sorted samples make each threshold O(log n).
    let mut prefix = Vec::with_capacity(sorted.len() + 1);
    prefix.push(0.0);
    for &x in sorted {
        prefix.push(prefix.last().unwrap() + x);
    }
    let mut out = Vec::with_capacity(thresholds.len());
    for &u in thresholds {
        let k = sorted.partition_point(|&x| x < u);
        if k == 0 {
            continue;
        }
        out.push(MeanDeficitPoint {
            u,
            e_hat: u - prefix[k] / k as f64,
            count: k,
        });
    }
    out
}

/// CSV export of a mean-deficit curve: `u,e_hat,count`.
pub fn export_mean_deficit_csv(path: &Path, curve: &[MeanDeficitPoint]) -> std::io::Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(b"u,e_hat,count\n")?;
    for p in curve {
        writeln!(w, "{:.16e},{:.16e},{}", p.u, p.e_hat, p.count)?;
    }
    w.flush()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Least-squares R^2 of e against u over a window; a flat window (zero
/// spread in e) counts as perfectly linear.
fn window_r2(pts: &[MeanDeficitPoint]) -> f64 {
    let n = pts.len() as f64;
    let mu: f64 = pts.iter().map(|p| p.u).sum::<f64>() / n;
    let me: f64 = pts.iter().map(|p| p.e_hat).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for p in pts {
        let (dx, dy) = (p.u - mu, p.e_hat - me);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if syy <= 1e-24 * me.abs().max(1.0).powi(2) {
        return 1.0;
    }
    if sxx == 0.0 {
        return 0.0;
    }
    let ss_res = syy - sxy * sxy / sxx;
    1.0 - ss_res / syy
}

const ZETA_GRID: usize = 50;
const ZETA_WINDOW: usize = 10;
const ZETA_R2_MIN: f64 = 0.98;

/// Per-location threshold fraction: the largest threshold below which the
/// mean-deficit curve is linear (sliding window of 10 of 50 quantile-spaced
/// thresholds, window accepted at R^2 >= 0.98), converted to the fraction of
/// samples at or below it. Locations with no linear window are skipped; the
/// median over locations is returned.
pub fn calibrate_zeta(samples: &[SampleSet]) -> Result<f64, EvtError> {
    if samples.is_empty() {
        return Err(EvtError::BadArgument("need at least one calibration set"));
    }
    let mut zetas = Vec::new();
    for s in samples {
        if let Some(z) = calibrate_zeta_single(s) {
            zetas.push(z);
        }
    }
    if zetas.is_empty() {
        return Err(EvtError::NoLinearRegion);
    }
    Ok(median(zetas))
}

fn calibrate_zeta_single(s: &SampleSet) -> Option<f64> {
    let n = s.len();
    if n < 40 {
        return None;
    }
    // Quantile-spaced thresholds, log-spaced in level from max(20/n, 1e-4)
    // up to 1, so the bottom of the tail is well resolved.
    let q_lo: f64 = (20.0 / n as f64).max(1e-4);
    let mut thresholds = Vec::with_capacity(ZETA_GRID);
    for j in 0..ZETA_GRID {
        let f = j as f64 / (ZETA_GRID - 1) as f64;
        let q = (q_lo.ln() * (1.0 - f)).exp();
        let r = ceil_rank(n as f64 * q).clamp(1, n);
        let u = order_statistic(s, r).ok()?;
        if thresholds.last() != Some(&u) {
            thresholds.push(u);
        }
    }
    let curve = mean_deficit_curve(s, &thresholds);
    if curve.len() < ZETA_WINDOW {
        return None;
    }
    let mut best_u: Option<f64> = None;
    for w in curve.windows(ZETA_WINDOW) {
        if window_r2(w) >= ZETA_R2_MIN {
            best_u = Some(w[ZETA_WINDOW - 1].u);
        }
    }
    let u = best_u?;
    let sorted = s.sorted();
    let k = sorted.partition_point(|&x| x <= u);
    Some(k as f64 / n as f64)
}
