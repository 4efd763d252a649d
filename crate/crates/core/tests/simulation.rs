//! End-to-end behaviour of the engine, analytics and config layers together.

use metrosim::analytics::{observations, validation_report, ValidationTargets};
use metrosim::config::{scenarios, ScenarioConfig, UnknownKeys};
use metrosim::economy::TaxRates;
use metrosim::engine::{BatchSpec, ScenarioStatus, WorldMode};
use metrosim::fiscal::TaxKind;
use metrosim::rng::{substream, Stream};
use metrosim::worldgen::{generate_region, RegionSpec, WorldConfig};
use metrosim::{run_batch, run_scenario, FiscalCase, ModelParams};

fn small_region(seed: u64) -> RegionSpec {
    generate_region(3, 60_000, 1.0, &mut substream(seed, Stream::World)).unwrap()
}

fn params() -> ModelParams {
    ModelParams {
        world: WorldConfig {
            population_fraction: 0.02,
            ..WorldConfig::default()
        },
        ..ModelParams::default()
    }
}

fn no_taxes() -> TaxRates {
    TaxRates {
        consumption: 0.0,
        personal_income: 0.0,
        company: 0.0,
        property_annual: 0.0,
        transmission: 0.0,
        ..TaxRates::default()
    }
}

#[test]
fn runs_are_reproducible_and_conserve_money() {
    let region = small_region(3);
    let a = run_scenario(&region, &params(), FiscalCase::Case1, 36, 9).unwrap();
    let b = run_scenario(&region, &params(), FiscalCase::Case1, 36, 9).unwrap();
    assert_eq!(a, b);
    let start = a.months[0].total_money;
    for m in &a.months {
        assert!((m.total_money - start).abs() <= 1e-6 * start.abs().max(1.0), "month {}", m.month);
        assert_eq!(m.qli.len(), 3);
    }
    let c = run_scenario(&region, &params(), FiscalCase::Case1, 36, 10).unwrap();
    assert_ne!(a.months.last(), c.months.last());
}

#[test]
fn without_taxes_shares_are_undefined_and_qli_stays_zero() {
    let p = ModelParams {
        taxes: no_taxes(),
        ..params()
    };
    let run = run_scenario(&small_region(4), &p, FiscalCase::Case2, 12, 1).unwrap();
    assert!(run.final_qli().iter().all(|&q| q == 0.0));
    let rows = validation_report(&[&run], &ValidationTargets::default());
    assert_eq!(rows.len(), 2);
    for row in &rows {
        assert_eq!(row.shares, None);
        assert_eq!(row.tax_to_gdp, Some(0.0));
        assert!(row.flags.iter().any(|f| f.contains("undefined")));
    }
}

#[test]
fn consumption_only_taxes_give_a_full_consumption_share() {
    let p = ModelParams {
        taxes: TaxRates {
            consumption: 0.2,
            ..no_taxes()
        },
        ..params()
    };
    let run = run_scenario(&small_region(5), &p, FiscalCase::Case3, 12, 2).unwrap();
    let rows = validation_report(&[&run], &ValidationTargets::default());
    let shares = rows[0].shares.expect("taxes were collected");
    assert_eq!(shares[TaxKind::Consumption.index()], 1.0);
    assert!(rows[0].flags.is_empty());
}

#[test]
fn default_taxes_shares_sum_to_one_and_targets_flag() {
    let run = run_scenario(&small_region(6), &params(), FiscalCase::Case1, 12, 3).unwrap();
    let targets = ValidationTargets {
        tax_to_gdp: Some((10.0, 20.0)),
        ..ValidationTargets::default()
    };
    let rows = validation_report(&[&run], &targets);
    let shares = rows[0].shares.unwrap();
    assert!((shares.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(rows[0].flags.iter().any(|f| f.starts_with("tax/GDP")));
}

#[test]
fn batch_results_do_not_depend_on_thread_count() {
    let regions = vec![small_region(7), small_region(8)];
    let scen = scenarios(&regions, &FiscalCase::ALL);
    let spec = BatchSpec {
        params: params(),
        horizon: 12,
        seed: 5,
        runs: 2,
        world_mode: WorldMode::PerRun,
    };
    let one = run_batch(&scen, &spec, 1).unwrap();
    let four = run_batch(&scen, &spec, 4).unwrap();
    assert_eq!(one.len(), 8);
    for (a, b) in one.iter().zip(&four) {
        assert_eq!(a.status, ScenarioStatus::Complete);
        assert_eq!(a.median_final_qli, b.median_final_qli);
    }
    let obs = observations(&one);
    assert_eq!(obs.len(), 8);
    assert!(obs.iter().all(|o| o.qli_final.is_finite()));
}

#[test]
fn config_round_trips_through_toml() {
    let text = r#"
        seed = 42
        runs_per_scenario = 2
        horizon_months = 60
        cases = [2, 1]

        [region]
        source = "generate"
        municipalities = 4
        total_population = 200000
        skew = 1.2

        [taxes]
        consumption = 0.1
    "#;
    let (cfg, unknown) = ScenarioConfig::from_toml_str(text, UnknownKeys::Error).unwrap();
    assert!(unknown.is_empty());
    assert_eq!(cfg.horizon(), 60);
    assert_eq!(cfg.cases().unwrap(), vec![FiscalCase::Case1, FiscalCase::Case2]);
    let (back, _) = ScenarioConfig::from_toml_str(&cfg.to_toml_string(), UnknownKeys::Error).unwrap();
    assert_eq!(back.to_toml_string(), cfg.to_toml_string());
    assert_eq!(back.model_params().unwrap().taxes.consumption, 0.1);
    let regions = back.regions(None).unwrap();
    assert_eq!(regions.len(), 1);
    assert_eq!(regions[0].municipalities.len(), 4);
    assert_eq!(regions[0].total_population(), 200_000);
}

#[test]
fn unknown_keys_error_or_warn() {
    let text = "seed = 1\n[market]\nbogus = 3\n";
    let err = ScenarioConfig::from_toml_str(text, UnknownKeys::Error).unwrap_err();
    assert!(err.to_string().contains("market.bogus"), "{err}");
    let (_, warned) = ScenarioConfig::from_toml_str(text, UnknownKeys::Warn).unwrap();
    assert_eq!(warned, vec!["market.bogus".to_string()]);
}
