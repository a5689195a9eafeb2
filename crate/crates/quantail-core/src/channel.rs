//! Synthetic scenario generation: cell grid, multipath profiles, capacity
//! samples, a Monte Carlo ground-truth quantile, and clustered location
//! sampling.
//!
//! The channel at a location is a sum of K fixed-amplitude paths with fresh
//! uniform phases per draw: h = sum_k a_k exp(j theta_k). Narrowband capacity
//! is C = log2(1 + |h|^2 / BN0). The amplitude profile a_k is deterministic
//! given (master_seed, location id): total received power follows log-distance
//! pathloss plus spatially correlated shadowing, the line-of-sight path takes
//! the fraction kappa/(kappa+1) of it, and the remainder spreads over K-1
//! diffuse paths with an exponentially decaying, per-path jittered mean
//! profile.

use crate::rng::{stream_rng, Stream};
use crate::stats::{empirical_quantile, SampleSet, StatsError};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal, Poisson};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("bad scenario config: {0}")]
    Config(&'static str),
    #[error("location ({x}, {y}) outside cell bounds")]
    OutsideCell { x: f64, y: f64 },
    #[error("n_ref {n_ref} leaves under 100 expected tail samples at epsilon {epsilon}")]
    InsufficientReference { n_ref: usize, epsilon: f64 },
    #[error("could not place {needed} distinct grid points (placed {placed})")]
    Exhausted { needed: usize, placed: usize },
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset parse: {0}")]
    Parse(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub id: u64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Location {
    pub fn new(id: u64, x: f64, y: f64, z: f64) -> Self {
        Location { id, x, y, z }
    }

    pub fn distance(&self, other: &Location) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// Per-path amplitudes in linear volts.
#[derive(Debug, Clone, PartialEq)]
pub struct MultipathProfile {
    magnitudes: Vec<f64>,
}

impl MultipathProfile {
    /// All magnitudes finite and >= 0, at least one > 0, K >= 1.
    pub fn new(magnitudes: Vec<f64>) -> Result<Self, ChannelError> {
        if magnitudes.is_empty() {
            return Err(ChannelError::Config("profile needs at least one path"));
        }
        if magnitudes.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(ChannelError::Config("path magnitudes must be finite and >= 0"));
        }
        if !magnitudes.iter().any(|a| *a > 0.0) {
            return Err(ChannelError::Config("profile must carry power"));
        }
        Ok(MultipathProfile { magnitudes })
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    /// Total mean power sum a_k^2, watts.
    pub fn total_power(&self) -> f64 {
        self.magnitudes.iter().map(|a| a * a).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// Cell rectangle corners in meters: (x_min, y_min), (x_max, y_max).
    pub cell_min: (f64, f64),
    pub cell_max: (f64, f64),
    pub bs_location: Location,
    /// User terminal height for grid and sampled locations, meters.
    pub user_height_m: f64,
    pub grid_step_m: f64,
    pub num_paths: usize,
    pub tx_power_dbm: f64,
    /// Total noise power BN0, configured in dBm.
    pub noise_dbm: f64,
    /// Pathloss at the reference distance of 1 m, dB.
    pub pathloss_ref_db: f64,
    pub pathloss_exponent: f64,
    /// Line-of-sight to diffuse power ratio, dB.
    pub rice_k_db: f64,
    /// Mean-power decay rate per diffuse tap index.
    pub path_decay_rate: f64,
    pub shadow_sigma_db: f64,
    /// Shadowing decorrelation distance, meters.
    pub shadow_corr_m: f64,
    pub shadow_harmonics: usize,
    /// Thomas process: expected parents per square meter.
    pub cluster_parent_intensity: f64,
    /// Thomas process: mean offspring per parent.
    pub cluster_offspring_mean: f64,
    /// Thomas process: offspring scatter (std dev), meters.
    pub cluster_sigma_m: f64,
    pub master_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            cell_min: (-50.0, -50.0),
            cell_max: (50.0, 50.0),
            bs_location: Location::new(u64::MAX, 0.0, 0.0, 10.0),
            user_height_m: 1.5,
            grid_step_m: 2.0,
            num_paths: 20,
            tx_power_dbm: 30.0,
            noise_dbm: -96.0,
            pathloss_ref_db: 43.6,
            pathloss_exponent: 2.2,
            rice_k_db: 6.0,
            path_decay_rate: 0.3,
            shadow_sigma_db: 3.0,
            shadow_corr_m: 25.0,
            shadow_harmonics: 256,
            cluster_parent_intensity: 8e-4,
            cluster_offspring_mean: 30.0,
            cluster_sigma_m: 12.0,
            master_seed: 7,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.cell_max.0 >= self.cell_min.0 && self.cell_max.1 >= self.cell_min.1) {
            return Err(ChannelError::Config("cell bounds inverted"));
        }
        if !(self.grid_step_m > 0.0) {
            return Err(ChannelError::Config("grid_step_m must be > 0"));
        }
        if self.num_paths < 1 {
            return Err(ChannelError::Config("num_paths must be >= 1"));
        }
        if !(self.noise_watts() > 0.0) {
            return Err(ChannelError::Config("noise power must be > 0"));
        }
        if !(self.shadow_sigma_db >= 0.0 && self.shadow_corr_m > 0.0) {
            return Err(ChannelError::Config("shadowing parameters out of range"));
        }
        if !(self.cluster_parent_intensity > 0.0
            && self.cluster_offspring_mean > 0.0
            && self.cluster_sigma_m > 0.0)
        {
            return Err(ChannelError::Config("cluster parameters must be > 0"));
        }
        Ok(())
    }

    /// BN0 in watts.
    pub fn noise_watts(&self) -> f64 {
        10f64.powf((self.noise_dbm - 30.0) / 10.0)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.cell_min.0 && x <= self.cell_max.0 && y >= self.cell_min.1 && y <= self.cell_max.1
    }

    /// Mean received power in dBm at 3D distance `dist_m`, before shadowing.
    /// Log-distance model with a 1 m reference; distances are clamped to 1 m.
    pub fn mean_rx_dbm(&self, dist_m: f64) -> f64 {
        let d = dist_m.max(1.0);
        self.tx_power_dbm - self.pathloss_ref_db - 10.0 * self.pathloss_exponent * d.log10()
    }
}

/// Spatially correlated log-normal shadowing, in dB, as a sum of random
/// cosine harmonics whose wavenumbers follow the spectral measure of the
/// exponential covariance sigma^2 exp(-d/l). Deterministic given the
/// scenario's master seed.
#[derive(Debug, Clone)]
pub struct ShadowField {
    harmonics: Vec<(f64, f64, f64)>,
    amplitude: f64,
}

impl ShadowField {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        let mut rng = stream_rng(cfg.master_seed, Stream::Shadowing, &[]);
        let m = cfg.shadow_harmonics.max(1);
        let ell = cfg.shadow_corr_m;
        let two_pi = 2.0 * std::f64::consts::PI;
        let mut harmonics = Vec::with_capacity(m);
        for _ in 0..m {
            // Radial inverse-CDF for the 2D exponential-covariance spectrum:
            // P(|k| <= K) = 1 - (1 + (K l)^2)^(-1/2).
            let u: f64 = rng.gen();
            let r = ((1.0 / (1.0 - u)).powi(2) - 1.0).sqrt() / ell;
            let dir: f64 = rng.gen_range(0.0..two_pi);
            let phase: f64 = rng.gen_range(0.0..two_pi);
            harmonics.push((r * dir.cos(), r * dir.sin(), phase));
        }
        ShadowField {
            harmonics,
            amplitude: cfg.shadow_sigma_db * (2.0 / m as f64).sqrt(),
        }
    }

    /// Shadowing in dB at (x, y).
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let s: f64 = self
            .harmonics
            .iter()
            .map(|&(kx, ky, phase)| (kx * x + ky * y + phase).cos())
            .sum();
        self.amplitude * s
    }
}

/// Row-major grid over the cell bounds, edges included, ids 0..count.
pub fn build_grid(cfg: &ScenarioConfig) -> Result<Vec<Location>, ChannelError> {
    cfg.validate()?;
    let w = cfg.cell_max.0 - cfg.cell_min.0;
    let h = cfg.cell_max.1 - cfg.cell_min.1;
    let nx = (w / cfg.grid_step_m + 1e-9).floor() as usize + 1;
    let ny = (h / cfg.grid_step_m + 1e-9).floor() as usize + 1;
    let mut grid = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            grid.push(Location::new(
                (iy * nx + ix) as u64,
                cfg.cell_min.0 + ix as f64 * cfg.grid_step_m,
                cfg.cell_min.1 + iy as f64 * cfg.grid_step_m,
                cfg.user_height_m,
            ));
        }
    }
    Ok(grid)
}

/// Per-location amplitude profile. Deterministic given (master_seed, loc.id);
/// the shadow field must come from the same config.
pub fn synthesize_profile(
    cfg: &ScenarioConfig,
    shadow: &ShadowField,
    loc: &Location,
) -> Result<MultipathProfile, ChannelError> {
    cfg.validate()?;
    if !cfg.contains(loc.x, loc.y) {
        return Err(ChannelError::OutsideCell { x: loc.x, y: loc.y });
    }
    let dist = loc.distance(&cfg.bs_location);
    let rx_dbm = cfg.mean_rx_dbm(dist) + shadow.eval(loc.x, loc.y);
    let omega = 10f64.powf((rx_dbm - 30.0) / 10.0);
    let k = cfg.num_paths;
    if k == 1 {
        return MultipathProfile::new(vec![omega.sqrt()]);
    }
    let kappa = 10f64.powf(cfg.rice_k_db / 10.0);
    let los_power = omega * kappa / (kappa + 1.0);
    let diffuse_power = omega / (kappa + 1.0);
    // Diffuse taps: exponentially decaying mean profile with multiplicative
    // unit-exponential jitter, renormalized to the diffuse power budget.
    let mut rng = stream_rng(cfg.master_seed, Stream::Profile, &[loc.id]);
    let mut weights = Vec::with_capacity(k - 1);
    for j in 0..k - 1 {
        let jitter: f64 = Exp1.sample(&mut rng);
        weights.push((-cfg.path_decay_rate * j as f64).exp() * jitter);
    }
    let total: f64 = weights.iter().sum();
    let mut magnitudes = Vec::with_capacity(k);
    magnitudes.push(los_power.sqrt());
    for w in weights {
        magnitudes.push((diffuse_power * w / total).sqrt());
    }
    MultipathProfile::new(magnitudes)
}

/// `n` i.i.d. capacity draws, plus the count of draws that landed at exactly
/// zero capacity and were clamped to the smallest positive value.
pub fn draw_capacity_samples_counted(
    profile: &MultipathProfile,
    cfg: &ScenarioConfig,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> (SampleSet, usize) {
    let inv_noise = 1.0 / cfg.noise_watts();
    let mags = profile.magnitudes();
    let pi = std::f64::consts::PI;
    let mut clamped = 0usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let (mut re, mut im) = (0.0f64, 0.0f64);
        for &a in mags {
            let (s, c) = rng.gen_range(-pi..pi).sin_cos();
            re += a * c;
            im += a * s;
        }
        let snr = (re * re + im * im) * inv_noise;
        let mut cap = snr.ln_1p() / std::f64::consts::LN_2;
        if cap <= 0.0 {
            cap = f64::MIN_POSITIVE;
            clamped += 1;
        }
        out.push(cap);
    }
    (SampleSet::new(out).expect("capacity samples are positive finite"), clamped)
}

pub fn draw_capacity_samples(
    profile: &MultipathProfile,
    cfg: &ScenarioConfig,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> SampleSet {
    draw_capacity_samples_counted(profile, cfg, n, rng).0
}

/// Empirical epsilon-quantile over `n_ref` fresh draws. Monte Carlo standard
/// error is sqrt(eps (1-eps) / n_ref) / f_C(c_eps); at eps = 1e-2 and
/// n_ref = 1e6 the relative error is around a percent for the profiles used
/// here. Requires n_ref * eps >= 100 so the tail holds enough samples.
pub fn ground_truth_quantile(
    profile: &MultipathProfile,
    cfg: &ScenarioConfig,
    epsilon: f64,
    n_ref: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64, ChannelError> {
    if !(epsilon > 0.0 && epsilon < 1.0) || (n_ref as f64) * epsilon < 100.0 {
        return Err(ChannelError::InsufficientReference { n_ref, epsilon });
    }
    let samples = draw_capacity_samples(profile, cfg, n_ref, rng);
    Ok(empirical_quantile(&samples, epsilon)?)
}

const THOMAS_MAX_ROUNDS: usize = 200;

/// Thomas cluster sampling of `d + count_test` distinct grid points: Poisson
/// parents uniform in the cell, Gaussian offspring snapped to the nearest
/// still-unused grid point. First `d` selections are training locations.
pub fn sample_locations_thomas(
    cfg: &ScenarioConfig,
    grid: &[Location],
    d: usize,
    count_test: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Location>, Vec<Location>), ChannelError> {
    cfg.validate()?;
    let needed = d + count_test;
    if needed > grid.len() {
        return Err(ChannelError::Config("d + count_test exceeds grid size"));
    }
    let area = (cfg.cell_max.0 - cfg.cell_min.0).max(f64::MIN_POSITIVE)
        * (cfg.cell_max.1 - cfg.cell_min.1).max(f64::MIN_POSITIVE);
    let parent_mean = (cfg.cluster_parent_intensity * area).max(1e-12);
    let parents_dist =
        Poisson::new(parent_mean).map_err(|_| ChannelError::Config("bad parent intensity"))?;
    let offspring_dist = Poisson::new(cfg.cluster_offspring_mean)
        .map_err(|_| ChannelError::Config("bad offspring mean"))?;
    let scatter = Normal::new(0.0, cfg.cluster_sigma_m)
        .map_err(|_| ChannelError::Config("bad cluster sigma"))?;

    let mut used = vec![false; grid.len()];
    let mut picked: Vec<Location> = Vec::with_capacity(needed);
    for _round in 0..THOMAS_MAX_ROUNDS {
        let n_parents = (parents_dist.sample(rng) as usize).max(1);
        for _ in 0..n_parents {
            let px = rng.gen_range(cfg.cell_min.0..=cfg.cell_max.0);
            let py = rng.gen_range(cfg.cell_min.1..=cfg.cell_max.1);
            let n_off = offspring_dist.sample(rng) as usize;
            for _ in 0..n_off {
                if picked.len() == needed {
                    break;
                }
                let ox = px + scatter.sample(rng);
                let oy = py + scatter.sample(rng);
                if !cfg.contains(ox, oy) {
                    continue;
                }
                // Nearest unused grid point; linear scan is fine at the grid
                // sizes used here.
                let mut best = usize::MAX;
                let mut best_d2 = f64::INFINITY;
                for (i, g) in grid.iter().enumerate() {
                    if used[i] {
                        continue;
                    }
                    let d2 = (g.x - ox).powi(2) + (g.y - oy).powi(2);
                    if d2 < best_d2 {
                        best_d2 = d2;
                        best = i;
                    }
                }
                if best != usize::MAX {
                    used[best] = true;
                    picked.push(grid[best]);
                }
            }
        }
        if picked.len() == needed {
            let test = picked.split_off(d);
            return Ok((picked, test));
        }
    }
    Err(ChannelError::Exhausted {
        needed,
        placed: picked.len(),
    })
}

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// CSV export, one row per sample:
/// `location_id,x,y,z,sample_index,value`, 17 significant digits.
pub fn export_dataset(
    path: &Path,
    data: &[(Location, SampleSet)],
) -> Result<(), ChannelError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(b"location_id,x,y,z,sample_index,value\n")?;
    for (loc, samples) in data {
        for (i, v) in samples.values().iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                loc.id,
                fmt_float(loc.x),
                fmt_float(loc.y),
                fmt_float(loc.z),
                i,
                fmt_float(*v)
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`export_dataset`]; locations come back in file order.
pub fn import_dataset(path: &Path) -> Result<Vec<(Location, SampleSet)>, ChannelError> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == "location_id,x,y,z,sample_index,value" => {}
        other => {
            return Err(ChannelError::Parse(format!(
                "bad or missing header: {other:?}"
            )))
        }
    }
    let mut out: Vec<(Location, Vec<f64>)> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(ChannelError::Parse(format!(
                "line {}: expected 6 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let parse_f = |s: &str, what: &str| -> Result<f64, ChannelError> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| ChannelError::Parse(format!("line {}: {what}: {e}", lineno + 2)))
        };
        let id: u64 = fields[0]
            .trim()
            .parse()
            .map_err(|e| ChannelError::Parse(format!("line {}: id: {e}", lineno + 2)))?;
        let x = parse_f(fields[1], "x")?;
        let y = parse_f(fields[2], "y")?;
        let z = parse_f(fields[3], "z")?;
        let value = parse_f(fields[5], "value")?;
        match out.last_mut() {
            Some((loc, vals)) if loc.id == id => vals.push(value),
            _ => out.push((Location::new(id, x, y, z), vec![value])),
        }
    }
    out.into_iter()
        .map(|(loc, vals)| Ok((loc, SampleSet::new(vals)?)))
        .collect()
}
