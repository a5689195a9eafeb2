//! Flat `key = value` experiment configuration. Every key has a default;
//! a config file only overrides what it names. `#` starts a comment.

use crate::experiment::{ExperimentConfig, HarnessError, Method};
use crate::stats::QuantileSpec;
use crate::channel::ScenarioConfig;
use std::path::{Path, PathBuf};

/// Desk-scale defaults: a tail level resolvable with desk-size Monte Carlo
/// budgets while keeping the qualitative method ranking intact.
pub fn default_config() -> ExperimentConfig {
    ExperimentConfig {
        scenario: ScenarioConfig::default(),
        spec: QuantileSpec::new(1e-2, 0.05).expect("default spec is valid"),
        d: 100,
        d_test: 50,
        redraws: 5,
        m: 100_000,
        n_sweep: vec![0, 50, 100, 316, 1_000, 10_000],
        n_ref: 1_000_000,
        zeta: 0.4,
        r_min: 50,
        mcmc_iterations: 4_000,
        mcmc_proposal_fraction: 0.25,
        methods: Method::ALL.to_vec(),
        output_dir: PathBuf::from("results"),
    }
}

fn err(lineno: usize, msg: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(format!("line {lineno}: {msg}"))
}

/// Parse config text over the defaults. Unknown keys are errors so typos
/// cannot silently fall back to defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = default_config();
    let (mut eps, mut delta) = (cfg.spec.epsilon, cfg.spec.delta);
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(lineno, "expected key = value"))?;
        let (key, value) = (key.trim(), value.trim());
        let f = || -> Result<f64, HarnessError> {
            value.parse().map_err(|e| err(lineno, format!("{key}: {e}")))
        };
        let u = || -> Result<usize, HarnessError> {
            value.parse().map_err(|e| err(lineno, format!("{key}: {e}")))
        };
        match key {
            "spec.epsilon" => eps = f()?,
            "spec.delta" => delta = f()?,
            "d" => cfg.d = u()?,
            "d_test" => cfg.d_test = u()?,
            "redraws" => cfg.redraws = u()?,
            "m" => cfg.m = u()?,
            "n_sweep" => {
                cfg.n_sweep = value
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| err(lineno, format!("n_sweep: {e}")))?;
            }
            "n_ref" => cfg.n_ref = u()?,
            "zeta" => cfg.zeta = f()?,
            "r_min" => cfg.r_min = u()?,
            "mcmc.iterations" => cfg.mcmc_iterations = u()?,
            "mcmc.proposal_fraction" => cfg.mcmc_proposal_fraction = f()?,
            "methods" => {
                cfg.methods = value
                    .split(',')
                    .map(Method::parse)
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| err(lineno, e))?;
            }
            "output_dir" => cfg.output_dir = PathBuf::from(value),
            "scenario.master_seed" => {
                cfg.scenario.master_seed =
                    value.parse().map_err(|e| err(lineno, format!("{key}: {e}")))?;
            }
            "scenario.cell_min_x" => cfg.scenario.cell_min.0 = f()?,
            "scenario.cell_min_y" => cfg.scenario.cell_min.1 = f()?,
            "scenario.cell_max_x" => cfg.scenario.cell_max.0 = f()?,
            "scenario.cell_max_y" => cfg.scenario.cell_max.1 = f()?,
            "scenario.bs_x" => cfg.scenario.bs_location.x = f()?,
            "scenario.bs_y" => cfg.scenario.bs_location.y = f()?,
            "scenario.bs_z" => cfg.scenario.bs_location.z = f()?,
            "scenario.user_height_m" => cfg.scenario.user_height_m = f()?,
            "scenario.grid_step_m" => cfg.scenario.grid_step_m = f()?,
            "scenario.num_paths" => cfg.scenario.num_paths = u()?,
            "scenario.tx_power_dbm" => cfg.scenario.tx_power_dbm = f()?,
            "scenario.noise_dbm" => cfg.scenario.noise_dbm = f()?,
            "scenario.pathloss_ref_db" => cfg.scenario.pathloss_ref_db = f()?,
            "scenario.pathloss_exponent" => cfg.scenario.pathloss_exponent = f()?,
            "scenario.rice_k_db" => cfg.scenario.rice_k_db = f()?,
            "scenario.path_decay_rate" => cfg.scenario.path_decay_rate = f()?,
            "scenario.shadow_sigma_db" => cfg.scenario.shadow_sigma_db = f()?,
            "scenario.shadow_corr_m" => cfg.scenario.shadow_corr_m = f()?,
            "scenario.shadow_harmonics" => cfg.scenario.shadow_harmonics = u()?,
            "scenario.cluster_parent_intensity" => cfg.scenario.cluster_parent_intensity = f()?,
            "scenario.cluster_offspring_mean" => cfg.scenario.cluster_offspring_mean = f()?,
            "scenario.cluster_sigma_m" => cfg.scenario.cluster_sigma_m = f()?,
            other => return Err(err(lineno, format!("unknown key {other:?}"))),
        }
    }
    cfg.spec =
        QuantileSpec::new(eps, delta).map_err(|e| HarnessError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    parse_config(&std::fs::read_to_string(path)?)
}
