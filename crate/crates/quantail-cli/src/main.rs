//! Command line front end: dataset synthesis, threshold-fraction
//! calibration, map fitting, the full experiment, the bias-limit
//! demonstration, and ECDF post-processing.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime failure (partial
//! results are left on disk).

use clap::{Parser, Subcommand, ValueEnum};
use quantail_core::channel::{
    build_grid, draw_capacity_samples, export_dataset, import_dataset, sample_locations_thomas,
    synthesize_profile, Location, ShadowField,
};
use quantail_core::config::load_config;
use quantail_core::evt::calibrate_zeta;
use quantail_core::experiment::{
    bias_limit_experiment, fit_experiment_maps, read_results_csv, run_experiment, HarnessError,
    Method, MethodResult,
};
use quantail_core::rng::{stream_rng, Stream};
use quantail_core::stats::{empirical_quantile, SampleSet};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "quantail", version, about = "Spatial tail-quantile inference experiments")]
struct Cli {
    /// Experiment config file; defaults apply for every key not set.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw clustered locations and write a capacity-sample dataset CSV.
    Simulate {
        /// Locations to sample (default: config d).
        #[arg(long)]
        count: Option<usize>,
        /// Samples per location (default: config m).
        #[arg(long)]
        samples: Option<usize>,
        /// Location redraw index feeding the sampling streams.
        #[arg(long, default_value_t = 0)]
        redraw: usize,
        /// Output CSV (default: <output_dir>/dataset.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recommend a global threshold fraction from per-location samples.
    CalibrateZeta {
        /// Dataset CSV from `simulate`; when absent, samples are drawn fresh.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Calibration locations when drawing fresh.
        #[arg(long, default_value_t = 20)]
        count: usize,
        /// Samples per location when drawing fresh (default: config m).
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Fit the three statistic maps for one redraw and save them.
    FitMaps {
        #[arg(long, default_value_t = 0)]
        redraw: usize,
    },
    /// Run the full experiment and write results plus aggregates.
    Run,
    /// Coverage of a deliberately biased quantile bound versus sample size.
    BiasDemo {
        /// Evaluation location coordinates.
        #[arg(long, default_value_t = 25.0)]
        x: f64,
        #[arg(long, default_value_t = 0.0)]
        y: f64,
        /// Bias magnitude relative to the true quantile.
        #[arg(long, default_value_t = 0.05)]
        bias_rel: f64,
        #[arg(long, default_value_t = 400)]
        reps: usize,
        /// Comma-separated sample sizes.
        #[arg(long, default_value = "100,1000,10000,100000")]
        n_list: String,
        /// Output CSV (default: <output_dir>/bias_demo.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-(method, n) ECDF of a results column.
    Ecdf {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, value_enum, default_value_t = EcdfColumn::POut)]
        column: EcdfColumn,
        /// Output CSV (default: ecdf.csv next to the results file).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EcdfColumn {
    POut,
    ThroughputNorm,
    Rate,
}

impl EcdfColumn {
    fn extract(&self, r: &MethodResult) -> f64 {
        match self {
            EcdfColumn::POut => r.p_out,
            EcdfColumn::ThroughputNorm => r.throughput_norm,
            EcdfColumn::Rate => r.rate,
        }
    }
}

fn exit_code(e: &HarnessError) -> i32 {
    match e {
        HarnessError::Config(_) | HarnessError::Parse(_) => 2,
        _ => 3,
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

fn load(config: &Option<PathBuf>) -> Result<quantail_core::experiment::ExperimentConfig, HarnessError> {
    match config {
        Some(path) => load_config(path).map_err(|e| match e {
            // A bad config path is a configuration error, not a runtime one.
            HarnessError::Io(io) => HarnessError::Config(format!("{}: {io}", path.display())),
            other => other,
        }),
        None => Ok(quantail_core::config::default_config()),
    }
}

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn simulate_sets(
    cfg: &quantail_core::experiment::ExperimentConfig,
    count: usize,
    samples: usize,
    redraw: usize,
) -> Result<Vec<(Location, SampleSet)>, HarnessError> {
    let grid = build_grid(&cfg.scenario)?;
    let shadow = ShadowField::new(&cfg.scenario);
    let mut loc_rng = stream_rng(
        cfg.scenario.master_seed,
        Stream::Locations,
        &[redraw as u64],
    );
    let (locations, _) = sample_locations_thomas(&cfg.scenario, &grid, count, 0, &mut loc_rng)?;
    let mut out = Vec::with_capacity(locations.len());
    for loc in &locations {
        let profile = synthesize_profile(&cfg.scenario, &shadow, loc)?;
        let mut rng = stream_rng(
            cfg.scenario.master_seed,
            Stream::TrainSamples,
            &[redraw as u64, loc.id],
        );
        out.push((
            *loc,
            draw_capacity_samples(&profile, &cfg.scenario, samples, &mut rng),
        ));
    }
    Ok(out)
}

fn dispatch(cli: Cli) -> Result<(), HarnessError> {
    let cfg = load(&cli.config)?;
    match cli.command {
        Command::Simulate {
            count,
            samples,
            redraw,
            out,
        } => {
            let count = count.unwrap_or(cfg.d);
            let samples = samples.unwrap_or(cfg.m);
            let path = out.unwrap_or_else(|| cfg.output_dir.join("dataset.csv"));
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            let data = simulate_sets(&cfg, count, samples, redraw)?;
            export_dataset(&path, &data)?;
            println!(
                "wrote {} locations x {} samples to {}",
                data.len(),
                samples,
                path.display()
            );
        }
        Command::CalibrateZeta {
            data,
            count,
            samples,
        } => {
            let sets: Vec<SampleSet> = match data {
                Some(path) => import_dataset(&path)?
                    .into_iter()
                    .map(|(_, s)| s)
                    .collect(),
                None => simulate_sets(&cfg, count, samples.unwrap_or(cfg.m), 0)?
                    .into_iter()
                    .map(|(_, s)| s)
                    .collect(),
            };
            let zeta = calibrate_zeta(&sets)?;
            println!("zeta = {zeta:.6}");
        }
        Command::FitMaps { redraw } => {
            let maps = fit_experiment_maps(&cfg, redraw)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            let q = cfg.output_dir.join("map_quantile.csv");
            let s = cfg.output_dir.join("map_shape.csv");
            let f = cfg.output_dir.join("map_density.csv");
            maps.quantile.save(&q)?;
            maps.shape.save(&s)?;
            maps.density.save(&f)?;
            println!(
                "fit 3 maps on redraw {redraw} ({} training locations skipped); wrote {}, {}, {}",
                maps.skipped,
                q.display(),
                s.display(),
                f.display()
            );
        }
        Command::Run => {
            let summary = run_experiment(&cfg)?;
            println!(
                "wrote {} rows to {} (training locations skipped: {})",
                summary.rows.len(),
                summary.results_path.display(),
                summary.training_skipped
            );
            println!("aggregates in {}:", summary.aggregates_path.display());
            for a in &summary.aggregates {
                println!(
                    "  n={:<7} {:<16} meta={:.3} (se {:.3})  thr_q1={:.3} q2={:.3} q3={:.3}",
                    a.n,
                    a.method.as_str(),
                    a.meta_probability,
                    a.meta_probability_se,
                    a.throughput_q1,
                    a.throughput_q2,
                    a.throughput_q3
                );
            }
        }
        Command::BiasDemo {
            x,
            y,
            bias_rel,
            reps,
            n_list,
            out,
        } => {
            if !(bias_rel.is_finite() && bias_rel > 0.0) {
                return Err(HarnessError::Config("bias_rel must be > 0".into()));
            }
            let n_list: Vec<usize> = n_list
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|e| HarnessError::Config(format!("n_list: {e}")))?;
            let shadow = ShadowField::new(&cfg.scenario);
            let loc = Location::new(0, x, y, cfg.scenario.user_height_m);
            let profile = synthesize_profile(&cfg.scenario, &shadow, &loc)?;
            // Same reference stream as the experiment below, so the relative
            // bias converts against the same truth estimate.
            let mut ref_rng = stream_rng(cfg.scenario.master_seed, Stream::BiasDemo, &[0]);
            let reference =
                draw_capacity_samples(&profile, &cfg.scenario, cfg.n_ref, &mut ref_rng);
            let c_eps = empirical_quantile(&reference, cfg.spec.epsilon)?;
            let path = out.unwrap_or_else(|| cfg.output_dir.join("bias_demo.csv"));
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
            writeln!(w, "n,bias,coverage,se")?;
            for sign in [1.0, -1.0] {
                let b = sign * bias_rel * c_eps;
                let rows = bias_limit_experiment(
                    &profile,
                    &cfg.scenario,
                    &cfg.spec,
                    b,
                    &n_list,
                    reps,
                    cfg.n_ref,
                    cfg.scenario.master_seed,
                )?;
                for r in rows {
                    writeln!(
                        w,
                        "{},{},{},{}",
                        r.n,
                        fmt_float(b),
                        fmt_float(r.coverage),
                        fmt_float(r.se)
                    )?;
                }
            }
            w.flush()?;
            println!("wrote bias coverage for +/-{bias_rel} x c_eps to {}", path.display());
        }
        Command::Ecdf {
            results,
            column,
            out,
        } => {
            let rows = read_results_csv(&results)?;
            if rows.is_empty() {
                return Err(HarnessError::Parse("results file has no rows".into()));
            }
            let mut groups: BTreeMap<(Method, usize), Vec<f64>> = BTreeMap::new();
            for r in &rows {
                groups
                    .entry((r.method, r.n))
                    .or_default()
                    .push(column.extract(r));
            }
            let path = out.unwrap_or_else(|| {
                results
                    .parent()
                    .unwrap_or_else(|| std::path::Path::new("."))
                    .join("ecdf.csv")
            });
            let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
            writeln!(w, "method,n,value,ecdf")?;
            for ((method, n), mut vals) in groups {
                vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let len = vals.len() as f64;
                for (i, v) in vals.iter().enumerate() {
                    writeln!(
                        w,
                        "{},{},{},{}",
                        method.as_str(),
                        n,
                        fmt_float(*v),
                        fmt_float((i + 1) as f64 / len)
                    )?;
                }
            }
            w.flush()?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}
