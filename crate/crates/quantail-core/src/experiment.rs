//! Experiment orchestration: train the three statistic maps on clustered
//! locations, evaluate every enabled rate-selection method across test
//! locations and sample budgets against a shared reference draw, and write
//! per-row plus aggregate CSVs.

use crate::baseline::{evt_baseline_interval, nonpar_baseline_interval, BaselineError};
use crate::channel::{
    build_grid, draw_capacity_samples, sample_locations_thomas, synthesize_profile, ChannelError,
    Location, MultipathProfile, ScenarioConfig, ShadowField,
};
use crate::evt::{compute_deficits, fit_gpd_mle, select_threshold};
use crate::exec::map_batch;
use crate::gpmap::{
    estimate_theta_density, estimate_theta_quantile, fit_cdi_map, CdiMap, CdiObservation, GpError,
};
use crate::mcmc::{infer_evt_bayes, McmcError};
use crate::nonpar::{infer_nonpar_bayes, GaussianPrior, NonparError};
use crate::rng::{child_seed, stream_rng, Stream};
use crate::stats::{
    ceil_rank, empirical_quantile, ConfidenceInterval, Inference, InferenceFlag, QuantileSpec,
    SampleSet, Sided, StatsError,
};
use rand_chacha::ChaCha8Rng;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Evt(#[from] crate::evt::EvtError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Nonpar(#[from] NonparError),
    #[error(transparent)]
    Mcmc(#[from] McmcError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(String),
}

/// Variant order is the output sort order (alphabetical by name).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    BaselineEvt,
    BaselineNonpar,
    BayesEvt,
    BayesNonpar,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::BaselineEvt,
        Method::BaselineNonpar,
        Method::BayesEvt,
        Method::BayesNonpar,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::BaselineEvt => "baseline_evt",
            Method::BaselineNonpar => "baseline_nonpar",
            Method::BayesEvt => "bayes_evt",
            Method::BayesNonpar => "bayes_nonpar",
        }
    }

    pub fn parse(s: &str) -> Result<Method, HarnessError> {
        match s.trim() {
            "baseline_evt" => Ok(Method::BaselineEvt),
            "baseline_nonpar" => Ok(Method::BaselineNonpar),
            "bayes_evt" => Ok(Method::BayesEvt),
            "bayes_nonpar" => Ok(Method::BayesNonpar),
            other => Err(HarnessError::Config(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub spec: QuantileSpec,
    /// Training locations per redraw.
    pub d: usize,
    /// Test locations per redraw.
    pub d_test: usize,
    /// Location redraws (outer replications).
    pub redraws: usize,
    /// Samples per training location.
    pub m: usize,
    /// Local sample budgets per test location, strictly increasing.
    pub n_sweep: Vec<usize>,
    /// Reference draws per test location for truth and outage evaluation.
    pub n_ref: usize,
    pub zeta: f64,
    pub r_min: usize,
    pub mcmc_iterations: usize,
    pub mcmc_proposal_fraction: f64,
    pub methods: Vec<Method>,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.scenario
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        let c = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(HarnessError::Config(msg.to_string()))
            }
        };
        c(self.d >= 2, "d must be >= 2 (map fitting needs two points)")?;
        c(self.d_test >= 1, "d_test must be >= 1")?;
        c(self.redraws >= 1, "redraws must be >= 1")?;
        c(self.m >= 3, "m must be >= 3")?;
        c(!self.n_sweep.is_empty(), "n_sweep must be non-empty")?;
        c(
            self.n_sweep.windows(2).all(|w| w[0] < w[1]),
            "n_sweep must be strictly increasing",
        )?;
        c(
            self.zeta > self.spec.epsilon && self.zeta <= 1.0,
            "zeta must be in (epsilon, 1]",
        )?;
        c(self.r_min >= 2, "r_min must be >= 2")?;
        c(self.mcmc_iterations >= 100, "mcmc.iterations must be >= 100")?;
        c(
            self.mcmc_proposal_fraction.is_finite() && self.mcmc_proposal_fraction > 0.0,
            "mcmc.proposal_fraction must be > 0",
        )?;
        c(!self.methods.is_empty(), "methods must be non-empty")?;
        c(
            (self.n_ref as f64) * self.spec.epsilon >= 10.0,
            "n_ref too small to resolve epsilon",
        )?;
        Ok(())
    }
}

/// Degradation marker for one result row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowFlag {
    Inference(InferenceFlag),
    /// The method failed outright at this location; the row records rate 0.
    Error,
}

impl RowFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            RowFlag::Inference(f) => f.as_str(),
            RowFlag::Error => "error",
        }
    }
}

#[derive(Debug, Clone)]
pub struct MethodResult {
    pub redraw: usize,
    pub location_id: u64,
    pub n: usize,
    pub method: Method,
    pub rate: f64,
    pub p_out: f64,
    pub throughput_norm: f64,
    pub c_eps_truth: f64,
    pub flag: Option<RowFlag>,
}

/// Selected transmission rate from a one-sided interval: the lower bound,
/// clamped at zero (zero means no transmission).
pub fn select_rate(interval: &ConfidenceInterval) -> f64 {
    interval.lower.max(0.0)
}

/// Fraction of reference draws strictly below `rate`. Reference must be
/// non-empty.
pub fn outage_fraction(reference: &SampleSet, rate: f64) -> f64 {
    let sorted = reference.sorted();
    sorted.partition_point(|v| *v < rate) as f64 / sorted.len() as f64
}

/// Outage probability of `rate` against `n_ref` fresh capacity draws.
/// For resolution, `n_ref` should be at least 10 / epsilon.
pub fn eval_outage(
    profile: &MultipathProfile,
    scenario: &ScenarioConfig,
    rate: f64,
    n_ref: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let reference = draw_capacity_samples(profile, scenario, n_ref, rng);
    outage_fraction(&reference, rate)
}

/// Fraction of rows meeting the outage target. NaN on empty input.
pub fn meta_probability(results: &[MethodResult], epsilon: f64) -> f64 {
    if results.is_empty() {
        return f64::NAN;
    }
    let hits = results.iter().filter(|r| r.p_out <= epsilon).count();
    hits as f64 / results.len() as f64
}

/// Throughput relative to the genie rate: R (1 - p_out) / (c_eps (1 - eps)).
pub fn normalized_throughput(
    rate: f64,
    p_out: f64,
    c_eps: f64,
    epsilon: f64,
) -> Result<f64, HarnessError> {
    if !(c_eps > 0.0) {
        return Err(HarnessError::Config(format!(
            "c_eps must be > 0, got {c_eps}"
        )));
    }
    Ok(rate * (1.0 - p_out) / (c_eps * (1.0 - epsilon)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub n: usize,
    pub method: Method,
    pub rows: usize,
    pub meta_probability: f64,
    /// Binomial standard error of the meta-probability estimate.
    pub meta_probability_se: f64,
    pub throughput_q1: f64,
    pub throughput_q2: f64,
    pub throughput_q3: f64,
}

fn quantile_of(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let r = ceil_rank(values.len() as f64 * q).clamp(1, values.len());
    values[r - 1]
}

/// Per-(n, method) summary across all redraws and locations.
pub fn aggregate_results(rows: &[MethodResult], epsilon: f64) -> Vec<AggregateRow> {
    let mut keys: Vec<(usize, Method)> = rows.iter().map(|r| (r.n, r.method)).collect();
    keys.sort();
    keys.dedup();
    keys.iter()
        .map(|&(n, method)| {
            let group: Vec<&MethodResult> = rows
                .iter()
                .filter(|r| r.n == n && r.method == method)
                .collect();
            let count = group.len();
            let hits = group.iter().filter(|r| r.p_out <= epsilon).count();
            let meta = hits as f64 / count as f64;
            let se = (meta * (1.0 - meta) / count as f64).sqrt();
            let mut thr: Vec<f64> = group.iter().map(|r| r.throughput_norm).collect();
            AggregateRow {
                n,
                method,
                rows: count,
                meta_probability: meta,
                meta_probability_se: se,
                throughput_q1: quantile_of(&mut thr, 0.25),
                throughput_q2: quantile_of(&mut thr, 0.5),
                throughput_q3: quantile_of(&mut thr, 0.75),
            }
        })
        .collect()
}

pub const RESULTS_HEADER: &str =
    "redraw,location_id,n,method,rate,p_out,throughput_norm,c_eps_truth,flag";
pub const AGGREGATES_HEADER: &str = "n,method,rows,meta_probability,meta_probability_se,\
throughput_q1,throughput_q2,throughput_q3";

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_result_row<W: Write>(w: &mut W, r: &MethodResult) -> std::io::Result<()> {
    writeln!(
        w,
        "{},{},{},{},{},{},{},{},{}",
        r.redraw,
        r.location_id,
        r.n,
        r.method.as_str(),
        fmt_float(r.rate),
        fmt_float(r.p_out),
        fmt_float(r.throughput_norm),
        fmt_float(r.c_eps_truth),
        r.flag.map_or("", |f| f.as_str()),
    )
}

pub fn write_aggregates_csv(path: &Path, rows: &[AggregateRow]) -> Result<(), HarnessError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{AGGREGATES_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.n,
            r.method.as_str(),
            r.rows,
            fmt_float(r.meta_probability),
            fmt_float(r.meta_probability_se),
            fmt_float(r.throughput_q1),
            fmt_float(r.throughput_q2),
            fmt_float(r.throughput_q3),
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Parse a results CSV written by [`run_experiment`].
pub fn read_results_csv(path: &Path) -> Result<Vec<MethodResult>, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == RESULTS_HEADER => {}
        other => return Err(HarnessError::Parse(format!("bad header: {other:?}"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(HarnessError::Parse(format!(
                "line {}: expected 9 fields, got {}",
                i + 2,
                f.len()
            )));
        }
        let num = |s: &str| -> Result<f64, HarnessError> {
            s.parse::<f64>()
                .map_err(|e| HarnessError::Parse(format!("line {}: {e}", i + 2)))
        };
        let flag = match f[8].trim() {
            "" => None,
            "prior_only" => Some(RowFlag::Inference(InferenceFlag::PriorOnly)),
            "density_floor" => Some(RowFlag::Inference(InferenceFlag::DensityFloor)),
            "fit_fallback" => Some(RowFlag::Inference(InferenceFlag::FitFallback)),
            "error" => Some(RowFlag::Error),
            other => return Err(HarnessError::Parse(format!("line {}: flag {other:?}", i + 2))),
        };
        out.push(MethodResult {
            redraw: f[0]
                .parse()
                .map_err(|e| HarnessError::Parse(format!("line {}: {e}", i + 2)))?,
            location_id: f[1]
                .parse()
                .map_err(|e| HarnessError::Parse(format!("line {}: {e}", i + 2)))?,
            n: f[2]
                .parse()
                .map_err(|e| HarnessError::Parse(format!("line {}: {e}", i + 2)))?,
            method: Method::parse(f[3])?,
            rate: num(f[4])?,
            p_out: num(f[5])?,
            throughput_norm: num(f[6])?,
            c_eps_truth: num(f[7])?,
            flag,
        });
    }
    Ok(out)
}

/// The three statistic maps fit on one redraw's training locations:
/// log quantile, tail shape, log density at the quantile.
pub struct TrainedMaps {
    pub quantile: CdiMap,
    pub shape: CdiMap,
    pub density: CdiMap,
    /// Training locations dropped because a statistic could not be fit.
    pub skipped: usize,
}

/// Sample one redraw's locations and fit its maps, without running any
/// method evaluation.
pub fn fit_experiment_maps(
    cfg: &ExperimentConfig,
    redraw: usize,
) -> Result<TrainedMaps, HarnessError> {
    cfg.validate()?;
    let grid = build_grid(&cfg.scenario)?;
    let shadow = ShadowField::new(&cfg.scenario);
    let mut loc_rng = stream_rng(
        cfg.scenario.master_seed,
        Stream::Locations,
        &[redraw as u64],
    );
    let (train, _test) =
        sample_locations_thomas(&cfg.scenario, &grid, cfg.d, cfg.d_test, &mut loc_rng)?;
    train_maps(cfg, &shadow, &train, redraw)
}

fn train_maps(
    cfg: &ExperimentConfig,
    shadow: &ShadowField,
    train: &[Location],
    redraw: usize,
) -> Result<TrainedMaps, HarnessError> {
    type Obs = (CdiObservation, CdiObservation, CdiObservation);
    let per_loc: Vec<Option<Obs>> = map_batch(train, |loc| {
        let profile = synthesize_profile(&cfg.scenario, shadow, loc).ok()?;
        let mut rng = stream_rng(
            cfg.scenario.master_seed,
            Stream::TrainSamples,
            &[redraw as u64, loc.id],
        );
        let s = draw_capacity_samples(&profile, &cfg.scenario, cfg.m, &mut rng);
        let theta_q = estimate_theta_quantile(&s, cfg.spec.epsilon).ok()?;
        let (u, _r) = select_threshold(&s, cfg.zeta, cfg.r_min).ok()?;
        let fit = fit_gpd_mle(&compute_deficits(&s, u)).ok()?;
        let theta_f = estimate_theta_density(&s, cfg.spec.epsilon).ok()?.ln();
        Some((
            CdiObservation {
                location: *loc,
                theta_hat: theta_q,
            },
            CdiObservation {
                location: *loc,
                theta_hat: fit.xi,
            },
            CdiObservation {
                location: *loc,
                theta_hat: theta_f,
            },
        ))
    });
    let skipped = per_loc.iter().filter(|o| o.is_none()).count();
    let kept: Vec<Obs> = per_loc.into_iter().flatten().collect();
    if kept.len() < 2 {
        return Err(HarnessError::Config(format!(
            "redraw {redraw}: only {} usable training locations",
            kept.len()
        )));
    }
    let obs_q: Vec<CdiObservation> = kept.iter().map(|o| o.0.clone()).collect();
    let obs_xi: Vec<CdiObservation> = kept.iter().map(|o| o.1.clone()).collect();
    let obs_f: Vec<CdiObservation> = kept.iter().map(|o| o.2.clone()).collect();
    Ok(TrainedMaps {
        quantile: fit_cdi_map(&obs_q, true)?,
        shape: fit_cdi_map(&obs_xi, false)?,
        density: fit_cdi_map(&obs_f, true)?,
        skipped,
    })
}

fn infer_one(
    cfg: &ExperimentConfig,
    maps: &TrainedMaps,
    loc: &Location,
    local: &SampleSet,
    redraw: usize,
    method: Method,
) -> Result<Inference, HarnessError> {
    match method {
        Method::BayesNonpar => {
            let (mu, var) = maps.quantile.predict(loc);
            let prior = GaussianPrior::new(mu, var)?;
            Ok(infer_nonpar_bayes(
                &prior,
                local,
                &cfg.spec,
                &maps.density,
                loc,
                Sided::OneSidedLower,
            )?)
        }
        Method::BayesEvt => {
            let seed = child_seed(
                cfg.scenario.master_seed,
                Stream::Mcmc,
                &[redraw as u64, loc.id, local.len() as u64],
            );
            Ok(infer_evt_bayes(
                &maps.quantile,
                &maps.shape,
                loc,
                local,
                &cfg.spec,
                cfg.zeta,
                cfg.r_min,
                cfg.mcmc_iterations,
                cfg.mcmc_proposal_fraction,
                seed,
                Sided::OneSidedLower,
            )?)
        }
        Method::BaselineNonpar => Ok(Inference {
            interval: nonpar_baseline_interval(local, &cfg.spec, Sided::OneSidedLower)?,
            flag: None,
        }),
        Method::BaselineEvt => Ok(evt_baseline_interval(
            local,
            &cfg.spec,
            cfg.zeta,
            cfg.r_min,
            Sided::OneSidedLower,
        )?),
    }
}

fn location_rows(
    cfg: &ExperimentConfig,
    shadow: &ShadowField,
    maps: &TrainedMaps,
    loc: &Location,
    redraw: usize,
) -> Vec<MethodResult> {
    let mut rows = Vec::with_capacity(cfg.n_sweep.len() * cfg.methods.len());
    let error_rows = |c_eps: f64| {
        let mut v = Vec::new();
        for &n in &cfg.n_sweep {
            for &method in &cfg.methods {
                v.push(MethodResult {
                    redraw,
                    location_id: loc.id,
                    n,
                    method,
                    rate: 0.0,
                    p_out: 0.0,
                    throughput_norm: 0.0,
                    c_eps_truth: c_eps,
                    flag: Some(RowFlag::Error),
                });
            }
        }
        v
    };
    let profile = match synthesize_profile(&cfg.scenario, shadow, loc) {
        Ok(p) => p,
        Err(_) => return error_rows(f64::NAN),
    };
    let mut ref_rng = stream_rng(
        cfg.scenario.master_seed,
        Stream::Reference,
        &[redraw as u64, loc.id],
    );
    let reference = draw_capacity_samples(&profile, &cfg.scenario, cfg.n_ref, &mut ref_rng);
    let c_eps = match empirical_quantile(&reference, cfg.spec.epsilon) {
        Ok(v) => v,
        Err(_) => return error_rows(f64::NAN),
    };
    let n_max = *cfg.n_sweep.last().unwrap();
    let mut local_rng = stream_rng(
        cfg.scenario.master_seed,
        Stream::LocalSamples,
        &[redraw as u64, loc.id],
    );
    let full_local = draw_capacity_samples(&profile, &cfg.scenario, n_max, &mut local_rng);
    for &n in &cfg.n_sweep {
        let local = full_local.prefix(n);
        for &method in &cfg.methods {
            let (rate, flag) = match infer_one(cfg, maps, loc, &local, redraw, method) {
                Ok(inf) => (select_rate(&inf.interval), inf.flag.map(RowFlag::Inference)),
                Err(_) => (0.0, Some(RowFlag::Error)),
            };
            let p_out = if rate == 0.0 {
                0.0
            } else {
                outage_fraction(&reference, rate)
            };
            let throughput_norm = if rate == 0.0 {
                0.0
            } else {
                rate * (1.0 - p_out) / (c_eps * (1.0 - cfg.spec.epsilon))
            };
            rows.push(MethodResult {
                redraw,
                location_id: loc.id,
                n,
                method,
                rate,
                p_out,
                throughput_norm,
                c_eps_truth: c_eps,
                flag,
            });
        }
    }
    rows
}

#[derive(Debug)]
pub struct RunSummary {
    pub results_path: PathBuf,
    pub aggregates_path: PathBuf,
    pub rows: Vec<MethodResult>,
    pub aggregates: Vec<AggregateRow>,
    /// Training locations dropped because a statistic could not be fit.
    pub training_skipped: usize,
}

/// Full experiment. Results are streamed to `results.csv` redraw by redraw
/// (partial output survives a later failure); aggregates go to
/// `aggregates.csv` at the end. Rows are sorted by (redraw, location_id, n,
/// method).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary, HarnessError> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let results_path = cfg.output_dir.join("results.csv");
    let aggregates_path = cfg.output_dir.join("aggregates.csv");
    let grid = build_grid(&cfg.scenario)?;
    let shadow = ShadowField::new(&cfg.scenario);
    let mut w = BufWriter::new(std::fs::File::create(&results_path)?);
    writeln!(w, "{RESULTS_HEADER}")?;
    let mut all_rows: Vec<MethodResult> = Vec::new();
    let mut training_skipped = 0usize;
    for redraw in 0..cfg.redraws {
        let mut loc_rng = stream_rng(
            cfg.scenario.master_seed,
            Stream::Locations,
            &[redraw as u64],
        );
        let (train, test) =
            sample_locations_thomas(&cfg.scenario, &grid, cfg.d, cfg.d_test, &mut loc_rng)?;
        let maps = train_maps(cfg, &shadow, &train, redraw)?;
        training_skipped += maps.skipped;
        let mut redraw_rows: Vec<MethodResult> = map_batch(&test, |loc| {
            location_rows(cfg, &shadow, &maps, loc, redraw)
        })
        .into_iter()
        .flatten()
        .collect();
        redraw_rows.sort_by(|a, b| {
            (a.location_id, a.n, a.method).cmp(&(b.location_id, b.n, b.method))
        });
        for r in &redraw_rows {
            write_result_row(&mut w, r)?;
        }
        w.flush()?;
        all_rows.extend(redraw_rows);
    }
    let aggregates = aggregate_results(&all_rows, cfg.spec.epsilon);
    write_aggregates_csv(&aggregates_path, &aggregates)?;
    Ok(RunSummary {
        results_path,
        aggregates_path,
        rows: all_rows,
        aggregates,
        training_skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasCoverage {
    pub n: usize,
    pub coverage: f64,
    pub se: f64,
}

/// Coverage of a deliberately biased bound versus n. The bound is the
/// one-sided distribution-free lower bound plus a fixed offset b; the
/// unbiased bound converges to the true quantile, so any fixed bias drives
/// coverage to 0 (b > 0) or 1 (b < 0) as n grows. Truth comes from a
/// dedicated reference draw of `n_ref`.
pub fn bias_limit_experiment(
    profile: &MultipathProfile,
    scenario: &ScenarioConfig,
    spec: &QuantileSpec,
    b: f64,
    n_list: &[usize],
    reps: usize,
    n_ref: usize,
    master_seed: u64,
) -> Result<Vec<BiasCoverage>, HarnessError> {
    if !(b != 0.0 && b.is_finite()) {
        return Err(HarnessError::Config("bias b must be finite and nonzero".into()));
    }
    if n_list.iter().any(|&n| n == 0) || n_list.is_empty() || reps == 0 {
        return Err(HarnessError::Config("n_list must be non-empty, all >= 1".into()));
    }
    let mut ref_rng = stream_rng(master_seed, Stream::BiasDemo, &[0]);
    let reference = draw_capacity_samples(profile, scenario, n_ref, &mut ref_rng);
    let c_eps = empirical_quantile(&reference, spec.epsilon)?;
    let mut out = Vec::with_capacity(n_list.len());
    for (k, &n) in n_list.iter().enumerate() {
        let hits: usize = map_batch(&(0..reps as u64).collect::<Vec<_>>(), |&rep| {
            let mut rng = stream_rng(
                master_seed,
                Stream::BiasDemo,
                &[1 + k as u64, rep],
            );
            let s = draw_capacity_samples(profile, scenario, n, &mut rng);
            let ci = nonpar_baseline_interval(&s, spec, Sided::OneSidedLower)
                .expect("one-sided baseline bound cannot fail on valid spec");
            usize::from(c_eps >= ci.lower + b)
        })
        .iter()
        .sum();
        let coverage = hits as f64 / reps as f64;
        out.push(BiasCoverage {
            n,
            coverage,
            se: (coverage * (1.0 - coverage) / reps as f64).sqrt(),
        });
    }
    Ok(out)
}
