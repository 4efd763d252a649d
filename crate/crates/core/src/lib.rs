//! Agent-based simulation of how the distribution of municipal tax revenue
//! shapes quality of life across the municipalities of a metropolitan
//! region.
//!
//! A run instantiates a sampled population over a [`worldgen::RegionSpec`],
//! then steps months through production, demographics, consumption, the
//! labor and housing markets, tax collection and fiscal distribution under
//! one of four [`fiscal::FiscalCase`]s. Batches of runs feed the regression
//! and best-case tallies in [`analytics`].

pub mod analytics;
pub mod commands;
pub mod config;
pub mod demographics;
pub mod economy;
pub mod engine;
pub mod error;
pub mod fiscal;
pub mod housing;
pub mod ids;
pub mod rng;
pub mod worldgen;

pub use engine::{run_batch, run_scenario, step_month, ModelParams, RunResult, SimulationState};
pub use error::{Error, Result};
pub use fiscal::{policy_for_case, FiscalCase};
