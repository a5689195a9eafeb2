//! Spatial maps of tail statistics: Gaussian-process regression over
//! per-location point estimates, giving a Gaussian prior (mu, sigma^2) for
//! the statistic at unvisited locations.
//!
//! Kernel: isotropic squared-exponential over 3D coordinates with a nugget.
//! Hyperparameters maximize the log marginal likelihood via multi-start
//! Nelder-Mead in log space; the prior mean is the sample mean of the
//! observations. Also home to the two per-location summary estimators the
//! maps are built from: the log quantile and the log-domain density at the
//! quantile.

use crate::channel::Location;
use crate::opt::nelder_mead;
use crate::stats::{ceil_rank, empirical_quantile, SampleSet, StatsError};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("need at least {needed} distinct observations, have {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("kernel matrix singular even at maximum nugget")]
    Singular,
    #[error("bad value: {0}")]
    BadValue(&'static str),
    #[error("not enough samples for a spacing estimate at this level")]
    InsufficientSpacing,
    #[error("zero spacing persists at maximum bandwidth; samples degenerate")]
    ZeroSpacing,
    #[error("map io: {0}")]
    Io(#[from] std::io::Error),
    #[error("map parse: {0}")]
    Parse(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// One point estimate of the mapped statistic at a location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdiObservation {
    pub location: Location,
    pub theta_hat: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpHyperParams {
    pub signal_variance: f64,
    pub lengthscale_m: f64,
    pub nugget_variance: f64,
    pub constant_mean: f64,
}

impl GpHyperParams {
    pub fn new(
        signal_variance: f64,
        lengthscale_m: f64,
        nugget_variance: f64,
        constant_mean: f64,
    ) -> Result<Self, GpError> {
        if !(signal_variance > 0.0 && signal_variance.is_finite()) {
            return Err(GpError::BadValue("signal_variance must be > 0"));
        }
        if !(lengthscale_m > 0.0 && lengthscale_m.is_finite()) {
            return Err(GpError::BadValue("lengthscale_m must be > 0"));
        }
        if !(nugget_variance >= 0.0 && nugget_variance.is_finite()) {
            return Err(GpError::BadValue("nugget_variance must be >= 0"));
        }
        if !constant_mean.is_finite() {
            return Err(GpError::BadValue("constant_mean must be finite"));
        }
        Ok(GpHyperParams {
            signal_variance,
            lengthscale_m,
            nugget_variance,
            constant_mean,
        })
    }
}

/// Fitted map: merged observations, hyperparameters, and the factorized
/// kernel system. Immutable; predictions are safe to run concurrently.
#[derive(Debug, Clone)]
pub struct CdiMap {
    observations: Vec<CdiObservation>,
    hyper: GpHyperParams,
    log_domain: bool,
    merged_duplicates: usize,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

fn sq_dist(a: &Location, b: &Location) -> f64 {
    (a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)
}

/// Average theta over exactly coincident coordinates; returns the merged
/// list and how many rows were absorbed.
fn merge_duplicates(obs: &[CdiObservation]) -> (Vec<CdiObservation>, usize) {
    let mut merged: Vec<(CdiObservation, usize)> = Vec::with_capacity(obs.len());
    for o in obs {
        match merged.iter_mut().find(|(m, _)| {
            m.location.x == o.location.x
                && m.location.y == o.location.y
                && m.location.z == o.location.z
        }) {
            Some((m, k)) => {
                *k += 1;
                m.theta_hat += (o.theta_hat - m.theta_hat) / *k as f64;
            }
            None => merged.push((*o, 1)),
        }
    }
    let absorbed = obs.len() - merged.len();
    (merged.into_iter().map(|(m, _)| m).collect(), absorbed)
}

fn kernel_matrix(obs: &[CdiObservation], h: &GpHyperParams, nugget: f64) -> DMatrix<f64> {
    let n = obs.len();
    let inv2l2 = 0.5 / (h.lengthscale_m * h.lengthscale_m);
    let mut k = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = h.signal_variance * (-sq_dist(&obs[i].location, &obs[j].location) * inv2l2).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += nugget;
    }
    k
}

/// Negative log marginal likelihood in z = (ln sigma^2, ln l, ln nugget),
/// +inf outside the search box or when the kernel fails to factorize.
struct MarginalNll<'a> {
    dist2: &'a DMatrix<f64>,
    y_centered: &'a DVector<f64>,
    box_lo: [f64; 3],
    box_hi: [f64; 3],
}

impl MarginalNll<'_> {
    fn eval(&self, z: &[f64]) -> f64 {
        for i in 0..3 {
            if z[i] < self.box_lo[i] || z[i] > self.box_hi[i] {
                return f64::INFINITY;
            }
        }
        let (sf2, ell, nug) = (z[0].exp(), z[1].exp(), z[2].exp());
        let n = self.y_centered.len();
        let inv2l2 = 0.5 / (ell * ell);
        let mut k = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = sf2 * (-self.dist2[(i, j)] * inv2l2).exp();
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
            k[(i, i)] += nug;
        }
        let chol = match Cholesky::new(k) {
            Some(c) => c,
            None => return f64::INFINITY,
        };
        let ln_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        let quad = self.y_centered.dot(&chol.solve(self.y_centered));
        0.5 * (quad + ln_det + n as f64 * (2.0 * std::f64::consts::PI).ln())
    }
}

impl CdiMap {
    /// Build from fixed hyperparameters (used by persistence and tests; the
    /// usual entry point is [`fit_cdi_map`]). Applies the jitter policy: a
    /// failed factorization raises the nugget by decades up to 1e-2 of the
    /// signal variance before giving up.
    pub fn with_hyper(
        obs: &[CdiObservation],
        hyper: GpHyperParams,
        log_domain: bool,
    ) -> Result<Self, GpError> {
        if obs.iter().any(|o| {
            !o.theta_hat.is_finite()
                || !o.location.x.is_finite()
                || !o.location.y.is_finite()
                || !o.location.z.is_finite()
        }) {
            return Err(GpError::BadValue("observations must be finite"));
        }
        let (merged, absorbed) = merge_duplicates(obs);
        if merged.len() < 2 {
            return Err(GpError::TooFewObservations {
                needed: 2,
                got: merged.len(),
            });
        }
        let mut hyper = hyper;
        let max_nugget = 1e-2 * hyper.signal_variance;
        let chol = loop {
            let k = kernel_matrix(&merged, &hyper, hyper.nugget_variance);
            if let Some(c) = Cholesky::new(k) {
                break c;
            }
            let next = (hyper.nugget_variance * 10.0).max(1e-10 * hyper.signal_variance);
            if next > max_nugget && hyper.nugget_variance >= max_nugget {
                return Err(GpError::Singular);
            }
            hyper.nugget_variance = next.min(max_nugget);
        };
        let y = DVector::from_iterator(
            merged.len(),
            merged.iter().map(|o| o.theta_hat - hyper.constant_mean),
        );
        let alpha = chol.solve(&y);
        Ok(CdiMap {
            observations: merged,
            hyper,
            log_domain,
            merged_duplicates: absorbed,
            chol,
            alpha,
        })
    }

    pub fn hyper(&self) -> &GpHyperParams {
        &self.hyper
    }

    pub fn log_domain(&self) -> bool {
        self.log_domain
    }

    pub fn merged_duplicates(&self) -> usize {
        self.merged_duplicates
    }

    pub fn observations(&self) -> &[CdiObservation] {
        &self.observations
    }

    /// Predictive mean and variance at a location. The variance includes
    /// the nugget and is clamped into (0, signal_variance + nugget].
    pub fn predict(&self, loc: &Location) -> (f64, f64) {
        let h = &self.hyper;
        let inv2l2 = 0.5 / (h.lengthscale_m * h.lengthscale_m);
        let kstar = DVector::from_iterator(
            self.observations.len(),
            self.observations
                .iter()
                .map(|o| h.signal_variance * (-sq_dist(&o.location, loc) * inv2l2).exp()),
        );
        let mu = h.constant_mean + kstar.dot(&self.alpha);
        let v = h.signal_variance + h.nugget_variance - kstar.dot(&self.chol.solve(&kstar));
        let vmax = h.signal_variance + h.nugget_variance;
        (mu, v.clamp(1e-12 * vmax, vmax))
    }

    /// Persist as a hyperparameter header plus an observation CSV.
    pub fn save(&self, path: &Path) -> Result<(), GpError> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "# signal_variance = {:.16e}", self.hyper.signal_variance)?;
        writeln!(w, "# lengthscale_m = {:.16e}", self.hyper.lengthscale_m)?;
        writeln!(w, "# nugget = {:.16e}", self.hyper.nugget_variance)?;
        writeln!(w, "# mean = {:.16e}", self.hyper.constant_mean)?;
        writeln!(w, "# log_domain = {}", self.log_domain)?;
        writeln!(w, "# merged_duplicates = {}", self.merged_duplicates)?;
        w.write_all(b"location_id,x,y,z,theta_hat\n")?;
        for o in &self.observations {
            writeln!(
                w,
                "{},{:.16e},{:.16e},{:.16e},{:.16e}",
                o.location.id, o.location.x, o.location.y, o.location.z, o.theta_hat
            )?;
        }
        w.flush()?;
        Ok(())
    }

    /// Load a map persisted by [`CdiMap::save`]. Rebuilds the factorization
    /// from the stored hyperparameters; no refit happens.
    pub fn load(path: &Path) -> Result<Self, GpError> {
        let reader = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut sf2 = None;
        let mut ell = None;
        let mut nug = None;
        let mut mean = None;
        let mut log_domain = None;
        let mut merged = 0usize;
        let mut obs = Vec::new();
        let mut saw_header = false;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if let Some(rest) = t.strip_prefix('#') {
                let mut it = rest.splitn(2, '=');
                let key = it.next().unwrap_or("").trim();
                let val = it
                    .next()
                    .ok_or_else(|| GpError::Parse(format!("line {}: missing value", lineno + 1)))?
                    .trim();
                match key {
                    "signal_variance" => sf2 = Some(parse_f64(val, lineno)?),
                    "lengthscale_m" => ell = Some(parse_f64(val, lineno)?),
                    "nugget" => nug = Some(parse_f64(val, lineno)?),
                    "mean" => mean = Some(parse_f64(val, lineno)?),
                    "log_domain" => {
                        log_domain = Some(val.parse::<bool>().map_err(|e| {
                            GpError::Parse(format!("line {}: log_domain: {e}", lineno + 1))
                        })?)
                    }
                    "merged_duplicates" => {
                        merged = val.parse().map_err(|e| {
                            GpError::Parse(format!("line {}: merged_duplicates: {e}", lineno + 1))
                        })?
                    }
                    other => {
                        return Err(GpError::Parse(format!(
                            "line {}: unknown key {other:?}",
                            lineno + 1
                        )))
                    }
                }
                continue;
            }
            if !saw_header {
                if t != "location_id,x,y,z,theta_hat" {
                    return Err(GpError::Parse(format!("line {}: bad header", lineno + 1)));
                }
                saw_header = true;
                continue;
            }
            let f: Vec<&str> = t.split(',').collect();
            if f.len() != 5 {
                return Err(GpError::Parse(format!(
                    "line {}: expected 5 fields",
                    lineno + 1
                )));
            }
            obs.push(CdiObservation {
                location: Location::new(
                    f[0].trim()
                        .parse()
                        .map_err(|e| GpError::Parse(format!("line {}: id: {e}", lineno + 1)))?,
                    parse_f64(f[1], lineno)?,
                    parse_f64(f[2], lineno)?,
                    parse_f64(f[3], lineno)?,
                ),
                theta_hat: parse_f64(f[4], lineno)?,
            });
        }
        let hyper = GpHyperParams::new(
            sf2.ok_or_else(|| GpError::Parse("missing signal_variance".into()))?,
            ell.ok_or_else(|| GpError::Parse("missing lengthscale_m".into()))?,
            nug.ok_or_else(|| GpError::Parse("missing nugget".into()))?,
            mean.ok_or_else(|| GpError::Parse("missing mean".into()))?,
        )?;
        let mut map = CdiMap::with_hyper(
            &obs,
            hyper,
            log_domain.ok_or_else(|| GpError::Parse("missing log_domain".into()))?,
        )?;
        map.merged_duplicates = merged;
        Ok(map)
    }
}

fn parse_f64(s: &str, lineno: usize) -> Result<f64, GpError> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| GpError::Parse(format!("line {}: {e}", lineno + 1)))
}

/// Fit a map: merge duplicates, then maximize the log marginal likelihood
/// over (signal variance, lengthscale, nugget) with 8 deterministic starts
/// spanning the data scales.
pub fn fit_cdi_map(obs: &[CdiObservation], log_domain: bool) -> Result<CdiMap, GpError> {
    let (merged, _) = merge_duplicates(obs);
    if merged.len() < 2 {
        return Err(GpError::TooFewObservations {
            needed: 2,
            got: merged.len(),
        });
    }
    let n = merged.len();
    let mean = merged.iter().map(|o| o.theta_hat).sum::<f64>() / n as f64;
    let var = merged
        .iter()
        .map(|o| (o.theta_hat - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    // Keep the search box positive even for constant observations.
    let v_eff = var.max(1e-12 * (1.0 + mean * mean));
    let mut d2max = 0.0f64;
    let mut dist2 = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let d2 = sq_dist(&merged[i].location, &merged[j].location);
            dist2[(i, j)] = d2;
            dist2[(j, i)] = d2;
            d2max = d2max.max(d2);
        }
    }
    let dmax = d2max.sqrt().max(1e-6);
    let y_centered = DVector::from_iterator(n, merged.iter().map(|o| o.theta_hat - mean));
    let nll = MarginalNll {
        dist2: &dist2,
        y_centered: &y_centered,
        box_lo: [
            (1e-9 * v_eff).ln(),
            (1e-3 * dmax).ln(),
            (1e-12 * v_eff).ln(),
        ],
        box_hi: [(1e4 * v_eff).ln(), (1e3 * dmax).ln(), (1e2 * v_eff).ln()],
    };
    let nug0 = (1e-2 * v_eff).ln();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for &ls in &[v_eff.ln(), v_eff.ln() - 2.3] {
        for &ll in &[
            (0.05 * dmax).ln(),
            (0.2 * dmax).ln(),
            (0.5 * dmax).ln(),
            (1.5 * dmax).ln(),
        ] {
            let r = nelder_mead(|z| nll.eval(z), &[ls, ll, nug0], &[0.8, 0.8, 1.2], 120, 1e-7);
            let keep = match &best {
                None => true,
                Some((_, f)) => r.f < *f,
            };
            if keep {
                best = Some((r.x, r.f));
            }
        }
    }
    let (z, f) = best.expect("at least one start");
    if !f.is_finite() {
        return Err(GpError::Singular);
    }
    let hyper = GpHyperParams::new(z[0].exp(), z[1].exp(), z[2].exp(), mean)?;
    // Reconstruct from the raw observations so the duplicate count and the
    // stored rows reflect the caller's input.
    CdiMap::with_hyper(obs, hyper, log_domain)
}

/// Log of the empirical epsilon-quantile, the statistic mapped for the
/// quantile prior.
pub fn estimate_theta_quantile(s: &SampleSet, epsilon: f64) -> Result<f64, StatsError> {
    Ok(empirical_quantile(s, epsilon)?.ln())
}

/// Log-domain density at the empirical quantile via a symmetric
/// order-statistic spacing: f_hat = (2k/n) / (Y_(r+k) - Y_(r-k)) on
/// Y = ln(samples), r = ceil(n eps), k = ceil(sqrt(n eps (1-eps))). Zero
/// spacings widen k; the result is clamped into [1e-8, 1e8].
pub fn estimate_theta_density(s: &SampleSet, epsilon: f64) -> Result<f64, GpError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(GpError::BadValue("epsilon must be in (0, 1)"));
    }
    let n = s.len();
    if n < 3 {
        return Err(GpError::InsufficientSpacing);
    }
    let r = ceil_rank(n as f64 * epsilon).max(1);
    let k_max = (r - 1).min(n - r);
    if k_max < 1 {
        return Err(GpError::InsufficientSpacing);
    }
    let mut k = (n as f64 * epsilon * (1.0 - epsilon)).sqrt().ceil() as usize;
    k = k.clamp(1, k_max);
    let sorted = s.sorted();
    loop {
        let spread = sorted[r + k - 1].ln() - sorted[r - k - 1].ln();
        if spread > 0.0 {
            let f = (2.0 * k as f64 / n as f64) / spread;
            return Ok(f.clamp(1e-8, 1e8));
        }
        if k == k_max {
            return Err(GpError::ZeroSpacing);
        }
        k = (k * 2).min(k_max);
    }
}
