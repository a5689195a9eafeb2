//! Estimation of rare lower-tail capacity quantiles over space, and the rate
//! selection experiments built on top of it.
//!
//! The pipeline: [`channel`] synthesizes per-location multipath profiles and
//! capacity samples; [`gpmap`] krigs per-location tail summaries into maps
//! usable as priors anywhere in the cell; [`bayes_nonpar`] and [`bayes_evt`]
//! turn those priors plus a handful of local samples into credible intervals
//! for the epsilon-quantile; [`baselines`] provides the classical
//! order-statistic and profile-likelihood intervals for comparison;
//! [`experiment`] wires everything into reproducible rate-selection sweeps.
//!
//! Heavy loops go through [`exec::map_batch`], which runs on rayon when the
//! default `parallel` feature is enabled and degrades to a sequential loop
//! without it. Every work unit derives its own RNG from the master seed via
//! [`rng`], so results are identical either way.

pub mod baseline;
pub mod channel;
pub mod config;
pub mod evt;
pub mod experiment;
pub mod exec;
pub mod gpmap;
pub mod mcmc;
pub mod nonpar;
mod opt;
pub mod rng;
pub mod stats;
