//! Monthly scheduler, run driver and batch execution.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demographics::{self, Citizen, DemographyParams};
use crate::economy::{self, Family, Firm, MarketParams, TaxRates};
use crate::error::{Error, Result};
use crate::fiscal::{self, FiscalCase, Money, MpfTable, TaxKind, TaxLedger, Treasury};
use crate::housing::{self, House, HousingParams};
use crate::ids::{CitizenId, FamilyId};
use crate::rng::RngStreams;
use crate::worldgen::{self, RegionSpec, WorldConfig};

pub const DEFAULT_HORIZON_MONTHS: u32 = 240;
/// Horizon under the inclusive reading of the 2000–2020 period.
pub const INCLUSIVE_HORIZON_MONTHS: u32 = 252;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MunicipalityState {
    pub index: usize,
    pub id: String,
    pub centroid: [f64; 2],
    pub treasury: Treasury,
}

impl MunicipalityState {
    pub fn new(index: usize, id: String, centroid: [f64; 2]) -> Self {
        Self {
            index,
            id,
            centroid,
            treasury: Treasury::new(index),
        }
    }
}

/// Flow counters for the month in progress.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MonthStats {
    pub output_units: f64,
    pub output_value: Money,
    pub consumption: Money,
    pub units_sold: f64,
    pub purchases: u64,
    pub hires: u64,
    pub releases: u64,
    pub payroll: Money,
    pub dividends: Money,
    pub transfers: u64,
    pub housing_transactions: u64,
    pub escheated: Money,
    pub deaths: u32,
    pub births: u32,
}

/// Fiscal-side knobs that are not tax rates.
#[derive(Debug, Clone, PartialEq)]
pub struct FiscalParams {
    /// Currency per real-scale resident that raises the index by one.
    pub qli_unit_cost: f64,
    pub mpf_table: MpfTable,
    /// Use the month-0 population shares for the whole run instead of
    /// recomputing them monthly.
    pub freeze_mpf_shares: bool,
}

impl Default for FiscalParams {
    fn default() -> Self {
        Self {
            qli_unit_cost: 100_000.0,
            mpf_table: MpfTable::default(),
            freeze_mpf_shares: false,
        }
    }
}

/// Every parameter block a run needs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    pub world: WorldConfig,
    pub demography: DemographyParams,
    pub market: MarketParams,
    pub housing: HousingParams,
    pub taxes: TaxRates,
    pub fiscal: FiscalParams,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.market.validate().map_err(Error::Validation)?;
        self.housing.validate().map_err(Error::Validation)?;
        self.taxes.validate().map_err(Error::Validation)?;
        if !(self.fiscal.qli_unit_cost > 0.0 && self.fiscal.qli_unit_cost.is_finite()) {
            return Err(Error::validation("fiscal.qli_unit_cost must be positive"));
        }
        if self.demography.qualification_levels != self.world.qualification_levels() {
            return Err(Error::validation(format!(
                "demography.qualification_levels ({}) must match the {} levels of world.initial_qualification_distribution",
                self.demography.qualification_levels,
                self.world.qualification_levels()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimulationState {
    pub month: u32,
    pub region_id: String,
    pub population_fraction: f64,
    pub municipalities: Vec<MunicipalityState>,
    /// Sorted by id.
    pub citizens: Vec<Citizen>,
    /// Sorted by id.
    pub families: Vec<Family>,
    /// Indexed by `FirmId`.
    pub firms: Vec<Firm>,
    /// Indexed by `HouseId`.
    pub houses: Vec<House>,
    pub ledger: TaxLedger,
    /// Funds of municipalities left without residents, redistributed
    /// through the equal channel the following month.
    pub region_pool: Money,
    pub next_citizen_id: u64,
    pub rng: RngStreams,
    pub month_stats: MonthStats,
    frozen_mpf_shares: Option<Vec<f64>>,
    audit_baseline: Money,
    audit_transactions: u64,
}

impl SimulationState {
    pub fn empty(region_id: &str, municipalities: Vec<MunicipalityState>, population_fraction: f64, seed: u64) -> Self {
        let n = municipalities.len();
        Self {
            month: 0,
            region_id: region_id.to_string(),
            population_fraction,
            municipalities,
            citizens: Vec::new(),
            families: Vec::new(),
            firms: Vec::new(),
            houses: Vec::new(),
            ledger: TaxLedger::new(0, n),
            region_pool: 0.0,
            next_citizen_id: 0,
            rng: RngStreams::new(seed),
            month_stats: MonthStats::default(),
            frozen_mpf_shares: None,
            audit_baseline: 0.0,
            audit_transactions: 0,
        }
    }

    pub fn family_pos(&self, id: FamilyId) -> Option<usize> {
        self.families.binary_search_by_key(&id, |f| f.id).ok()
    }

    pub fn family(&self, id: FamilyId) -> Option<&Family> {
        self.family_pos(id).map(|p| &self.families[p])
    }

    pub fn citizen_pos(&self, id: CitizenId) -> Option<usize> {
        self.citizens.binary_search_by_key(&id, |c| c.id).ok()
    }

    pub fn citizen(&self, id: CitizenId) -> Option<&Citizen> {
        self.citizen_pos(id).map(|p| &self.citizens[p])
    }

    /// Location of a family's home, or its municipality's centroid.
    pub fn residence_of(&self, family: FamilyId) -> [f64; 2] {
        match self.family(family) {
            Some(f) => match f.house {
                Some(h) => self.houses[h.0].location,
                None => self.municipalities[f.municipality].centroid,
            },
            None => [0.0, 0.0],
        }
    }

    /// Pays `amount` to a family; arrears are settled first and recorded
    /// as property tax.
    pub fn credit_family(&mut self, id: FamilyId, amount: Money) {
        let Some(pos) = self.family_pos(id) else {
            debug_assert!(false, "credit to unknown family {id}");
            return;
        };
        for e in self.families[pos].receive_income(amount) {
            self.ledger.record(e);
        }
    }

    /// Resident agents per municipality.
    pub fn municipality_populations(&self) -> Vec<usize> {
        let mut pops = vec![0usize; self.municipalities.len()];
        for f in &self.families {
            pops[f.municipality] += f.members.len();
        }
        pops
    }

    /// Populations scaled back to the real region.
    pub fn real_populations(&self) -> Vec<f64> {
        self.municipality_populations()
            .iter()
            .map(|&p| p as f64 / self.population_fraction)
            .collect()
    }

    /// Every unit of money in the system.
    pub fn total_money(&self) -> Money {
        let savings: Money = self.families.iter().map(|f| f.savings).sum();
        let cash: Money = self.firms.iter().map(|f| f.cash).sum();
        let public: Money = self
            .municipalities
            .iter()
            .map(|m| m.treasury.balance + m.treasury.estate)
            .sum();
        savings + cash + public + self.region_pool + self.ledger.total()
    }

    pub fn qli(&self) -> Vec<f64> {
        self.municipalities.iter().map(|m| m.treasury.qli).collect()
    }

    /// Restarts the money audit from the current holdings.
    pub fn reset_audit(&mut self) {
        self.audit_baseline = self.total_money();
        self.audit_transactions = 0;
    }

    pub fn freeze_mpf_shares(&mut self, table: &MpfTable) {
        self.frozen_mpf_shares = Some(fiscal::mpf_shares(&self.real_populations(), table));
    }
}

/// What one month produced, recorded after distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthRecord {
    pub month: u32,
    pub qli: Vec<f64>,
    /// Per municipality, per tax kind: money received this month.
    pub inflows: Vec<[Money; TaxKind::COUNT]>,
    /// Per tax kind: money collected this month.
    pub collected: [Money; TaxKind::COUNT],
    pub population: Vec<usize>,
    pub output_value: Money,
    pub consumption: Money,
    pub units_sold: f64,
    pub unemployment: f64,
    pub avg_workers_per_firm: f64,
    pub avg_firm_profit: Money,
    pub housing_transactions: u64,
    pub transaction_prices: Vec<(Money, Money, Money)>,
    pub deaths: u32,
    pub births: u32,
    pub total_money: Money,
    pub tax_events: u64,
}

impl MonthRecord {
    /// Consumption-weighted average price; `None` when nothing sold.
    pub fn price_level(&self) -> Option<f64> {
        (self.units_sold > 0.0).then(|| self.consumption / self.units_sold)
    }
}

fn invariant(month: u32, name: &'static str, detail: impl Into<String>) -> Error {
    Error::Invariant {
        month,
        invariant: name,
        detail: detail.into(),
    }
}

/// Cross-module consistency checks, run after every month.
pub fn check_invariants(state: &SimulationState, previous_qli: &[f64], params: &ModelParams) -> Result<()> {
    let m = state.month;
    let total = state.total_money();
    // one currency unit per million transactions, with a floor for tiny worlds
    let tolerance = (state.audit_transactions as f64 / 1e6).max(1e-6);
    if (total - state.audit_baseline).abs() > tolerance {
        return Err(invariant(
            m,
            "money conservation",
            format!("total {total} vs baseline {} (tolerance {tolerance})", state.audit_baseline),
        ));
    }
    if !state.citizens.windows(2).all(|w| w[0].id < w[1].id) {
        return Err(invariant(m, "citizen order", "citizens not strictly sorted by id"));
    }
    if !state.families.windows(2).all(|w| w[0].id < w[1].id) {
        return Err(invariant(m, "family order", "families not strictly sorted by id"));
    }
    let max_age = params.demography.vital_rates.max_age_months();
    let q_max = params.demography.qualification_levels;
    let mut employed = vec![0usize; state.firms.len()];
    for c in &state.citizens {
        let fam = state
            .family(c.family)
            .ok_or_else(|| invariant(m, "family membership", format!("citizen {} has no family", c.id)))?;
        if fam.members.binary_search(&c.id).is_err() && !fam.members.contains(&c.id) {
            return Err(invariant(m, "family membership", format!("citizen {} missing from family {}", c.id, fam.id)));
        }
        if c.age_months >= max_age {
            return Err(invariant(m, "age bound", format!("citizen {} aged {} months", c.id, c.age_months)));
        }
        if c.qualification < 1 || c.qualification > q_max {
            return Err(invariant(m, "qualification range", format!("citizen {} at level {}", c.id, c.qualification)));
        }
        if let Some(f) = c.employer {
            let firm = state
                .firms
                .get(f.0)
                .ok_or_else(|| invariant(m, "employment", format!("citizen {} works for unknown firm", c.id)))?;
            if firm.employees.binary_search(&c.id).is_err() {
                return Err(invariant(m, "employment", format!("citizen {} not on firm {} roster", c.id, f)));
            }
            if !(c.monthly_wage > 0.0) {
                return Err(invariant(m, "employment", format!("employed citizen {} has no wage", c.id)));
            }
            employed[f.0] += 1;
        }
    }
    let mut members = 0usize;
    for fam in &state.families {
        if fam.members.is_empty() {
            return Err(invariant(m, "family membership", format!("family {} is empty", fam.id)));
        }
        members += fam.members.len();
        if fam.savings < -1e-9 {
            return Err(invariant(m, "non-negative savings", format!("family {} holds {}", fam.id, fam.savings)));
        }
        if let Some(h) = fam.house {
            if state.houses[h.0].occupant != Some(fam.id) {
                return Err(invariant(m, "occupancy", format!("family {} not recorded in house {}", fam.id, h)));
            }
        }
    }
    if members != state.citizens.len() {
        return Err(invariant(m, "family membership", "family rosters do not partition citizens"));
    }
    for (f, n) in state.firms.iter().zip(&employed) {
        if f.employees.len() != *n {
            return Err(invariant(m, "employment", format!("firm {} roster has {} but {} citizens", f.id, f.employees.len(), n)));
        }
        if !(f.price > 0.0 && f.inventory >= 0.0 && f.wage_offer > 0.0) {
            return Err(invariant(m, "firm state", format!("firm {} price {} inventory {}", f.id, f.price, f.inventory)));
        }
    }
    let mut vacant = vec![0usize; state.municipalities.len()];
    let mut resident_families = vec![0usize; state.municipalities.len()];
    for h in &state.houses {
        match h.occupant {
            None => vacant[h.municipality] += 1,
            Some(fid) => {
                let fam = state
                    .family(fid)
                    .ok_or_else(|| invariant(m, "occupancy", format!("house {} occupied by unknown family", h.id)))?;
                if fam.house != Some(h.id) {
                    return Err(invariant(m, "occupancy", format!("house {} occupant mismatch", h.id)));
                }
            }
        }
        if let Some(o) = h.owner {
            if state.family(o).is_none() {
                return Err(invariant(m, "ownership", format!("house {} owned by unknown family", h.id)));
            }
        }
    }
    for f in &state.families {
        resident_families[f.municipality] += 1;
    }
    for (mi, (&v, &r)) in vacant.iter().zip(&resident_families).enumerate() {
        if r > 0 && v == 0 {
            return Err(invariant(m, "vacancy", format!("municipality {} has no vacant house", state.municipalities[mi].id)));
        }
    }
    for (mi, (now, before)) in state.qli().iter().zip(previous_qli).enumerate() {
        if now < before {
            return Err(invariant(m, "monotone QLI", format!("municipality {} fell from {before} to {now}", mi)));
        }
    }
    Ok(())
}

fn split_evenly(state: &mut SimulationState, families: &[FamilyId], amount: Money) {
    if families.is_empty() || amount == 0.0 {
        return;
    }
    let share = amount / families.len() as f64;
    let mut given = 0.0;
    for &id in families {
        state.credit_family(id, share);
        given += share;
    }
    state.credit_family(families[0], amount - given);
}

/// Advances one month in the fixed event order.
pub fn step_month(state: &mut SimulationState, params: &ModelParams, case: FiscalCase) -> Result<MonthRecord> {
    let month = state.month;
    let previous_qli = state.qli();
    state.month_stats = MonthStats::default();

    economy::produce_all(state, &params.market);

    let mut rng = state.rng.demographics.clone();
    demographics::step_ages(state);
    demographics::mature_entrants(state, &params.demography, &mut rng);
    demographics::retire(state, &params.demography);
    let deaths = demographics::apply_mortality(state, &params.demography.vital_rates, &mut rng)
        .map_err(|e| match e {
            Error::Config { path, message } => Error::Config {
                path,
                message: format!("month {month}: {message}"),
            },
            other => other,
        })?;
    let births = demographics::apply_fertility(state, &params.demography.vital_rates, &params.demography, &mut rng);
    state.rng.demographics = rng;
    state.month_stats.deaths = deaths;
    state.month_stats.births = births;

    economy::consume_all(state, &params.taxes, &params.market);
    economy::firm_decisions(state, &params.market);
    economy::labor_market(state, &params.market, &params.demography);

    let mut rng = state.rng.housing.clone();
    let housing = housing::run_housing_market(state, &params.housing, &params.taxes, &mut rng);
    state.rng.housing = rng;

    economy::pay_all_wages(state, &params.taxes);
    housing::collect_property_tax(state, &params.housing, &params.taxes);
    if (month + 1) % params.taxes.profit_tax_cadence_months == 0 {
        economy::settle_all_profit_taxes(state, &params.taxes);
    }
    economy::pay_dividends(state, &params.market, &params.taxes);

    // fiscal distribution
    let collected = state.ledger.total_by_kind();
    let tax_events = state.ledger.event_count();
    let n = state.municipalities.len();
    let populations = state.municipality_populations();
    let real: Vec<f64> = populations.iter().map(|&p| p as f64 / state.population_fraction).collect();
    let mut inflows = vec![[0.0; TaxKind::COUNT]; n];
    let mut receipts = vec![0.0; n];
    if real.iter().sum::<f64>() > 0.0 {
        let equal = fiscal::equal_shares(&real)?;
        let mpf = match (&state.frozen_mpf_shares, params.fiscal.freeze_mpf_shares) {
            (Some(frozen), true) => frozen.clone(),
            _ => fiscal::mpf_shares(&real, &params.fiscal.mpf_table),
        };
        let allocation = fiscal::distribute_with_shares(&state.ledger, &case.policy(), &equal, &mpf);
        for (mi, row) in allocation.by_municipality.iter().enumerate() {
            inflows[mi] = *row;
            receipts[mi] = row.iter().sum();
        }
        let pool = std::mem::take(&mut state.region_pool);
        if pool > 0.0 {
            let given = fiscal::split_pool(pool, &equal);
            for (r, g) in receipts.iter_mut().zip(given) {
                *r += g;
            }
        }
    } else {
        state.region_pool += state.ledger.total();
    }
    state.ledger.reset(month + 1);

    // invest, then spend: the invested money is paid to the municipality's
    // resident families as public services and wages; estate receipts are
    // rebated the same way without touching the index
    let mut residents: Vec<Vec<FamilyId>> = vec![Vec::new(); n];
    for f in &state.families {
        residents[f.municipality].push(f.id);
    }
    for mi in 0..n {
        let outcome = state.municipalities[mi]
            .treasury
            .invest(receipts[mi], populations[mi], params.fiscal.qli_unit_cost);
        state.region_pool += outcome.escheated;
        split_evenly(state, &residents[mi], outcome.invested);
        let estate = std::mem::take(&mut state.municipalities[mi].treasury.estate);
        if residents[mi].is_empty() {
            state.region_pool += estate;
        } else {
            split_evenly(state, &residents[mi], estate);
        }
    }

    state.month += 1;
    let stats = state.month_stats;
    state.audit_transactions += stats.purchases + stats.transfers + stats.hires + tax_events as u64;
    check_invariants(state, &previous_qli, params)?;

    let labor: Vec<&Citizen> = state
        .citizens
        .iter()
        .filter(|c| params.demography.is_labor_age(c.age_months))
        .collect();
    let unemployed = labor.iter().filter(|c| c.employer.is_none()).count();
    let workers: usize = state.firms.iter().map(|f| f.employees.len()).sum();
    let profit: Money = state
        .firms
        .iter()
        .map(|f| f.revenue_this_month - f.payroll_this_month)
        .sum();
    let nf = state.firms.len().max(1) as f64;
    Ok(MonthRecord {
        month,
        qli: state.qli(),
        inflows,
        collected,
        population: state.municipality_populations(),
        output_value: stats.output_value,
        consumption: stats.consumption,
        units_sold: stats.units_sold,
        unemployment: if labor.is_empty() { 0.0 } else { unemployed as f64 / labor.len() as f64 },
        avg_workers_per_firm: workers as f64 / nf,
        avg_firm_profit: profit / nf,
        housing_transactions: stats.housing_transactions,
        transaction_prices: housing.transactions.iter().map(|t| (t.hedonic, t.offer, t.price)).collect(),
        deaths,
        births,
        total_money: state.total_money(),
        tax_events,
    })
}

/// How each run of a scenario gets its world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WorldMode {
    /// Re-instantiate the world from each run's own seed.
    #[default]
    PerRun,
    /// Every run starts from the world drawn with the base seed; only the
    /// monthly streams differ.
    Frozen,
}

/// Everything recorded for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub scenario: String,
    pub region_id: String,
    pub case: FiscalCase,
    pub seed: u64,
    pub municipality_ids: Vec<String>,
    pub months: Vec<MonthRecord>,
}

impl RunResult {
    pub fn final_qli(&self) -> &[f64] {
        &self.months.last().expect("runs have at least one month").qli
    }

    /// Output value indexed to 100 in the first month with output.
    pub fn gdp_index(&self) -> Vec<f64> {
        let base = self
            .months
            .iter()
            .map(|m| m.output_value)
            .find(|v| *v > 0.0)
            .unwrap_or(1.0);
        self.months.iter().map(|m| 100.0 * m.output_value / base).collect()
    }

    /// Month-on-month change of the consumption-weighted price level.
    pub fn inflation(&self) -> Vec<f64> {
        let mut last = None;
        self.months
            .iter()
            .map(|m| {
                let p = m.price_level().or(last);
                let rate = match (last, p) {
                    (Some(a), Some(b)) if a > 0.0 => b / a - 1.0,
                    _ => 0.0,
                };
                last = p;
                rate
            })
            .collect()
    }

    pub fn total_consumption(&self) -> Money {
        self.months.iter().map(|m| m.consumption).sum()
    }

    pub fn total_housing_transactions(&self) -> u64 {
        self.months.iter().map(|m| m.housing_transactions).sum()
    }
}

/// Runs `horizon` months of `case` on a world drawn from `world_seed`,
/// with monthly streams seeded from `seed`.
pub fn run_scenario_with_world(
    scenario: &str,
    region: &RegionSpec,
    params: &ModelParams,
    case: FiscalCase,
    horizon: u32,
    seed: u64,
    world_seed: u64,
) -> Result<RunResult> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1 month"));
    }
    let wrap = |e: Error| Error::Run {
        scenario: format!("{scenario} case {}", case.id()),
        seed,
        source: Box::new(e),
    };
    params.validate().map_err(wrap)?;
    let mut state = worldgen::instantiate_world(region, &params.world, world_seed).map_err(wrap)?;
    state.rng = RngStreams::new(seed);
    if params.fiscal.freeze_mpf_shares {
        state.freeze_mpf_shares(&params.fiscal.mpf_table);
    }
    let mut months = Vec::with_capacity(horizon as usize);
    for _ in 0..horizon {
        months.push(step_month(&mut state, params, case).map_err(wrap)?);
    }
    Ok(RunResult {
        scenario: scenario.to_string(),
        region_id: region.id.clone(),
        case,
        seed,
        municipality_ids: state.municipalities.iter().map(|m| m.id.clone()).collect(),
        months,
    })
}

pub fn run_scenario(region: &RegionSpec, params: &ModelParams, case: FiscalCase, horizon: u32, seed: u64) -> Result<RunResult> {
    run_scenario_with_world(&region.id, region, params, case, horizon, seed, seed)
}

/// One region under one fiscal case.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub region: RegionSpec,
    pub case: FiscalCase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSpec {
    pub params: ModelParams,
    pub horizon: u32,
    pub seed: u64,
    pub runs: u32,
    pub world_mode: WorldMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioStatus {
    Complete,
    /// Some runs failed; medians use the survivors.
    Partial,
    /// Fewer than half the runs survived; no medians.
    Failed,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub seed: u64,
    pub result: Result<RunResult>,
}

#[derive(Debug)]
pub struct ScenarioResult {
    pub scenario: String,
    pub region_id: String,
    pub case: FiscalCase,
    pub municipality_ids: Vec<String>,
    pub runs: Vec<RunOutcome>,
    pub status: ScenarioStatus,
    /// Element-wise median of final-month QLI per municipality.
    pub median_final_qli: Option<Vec<f64>>,
}

impl ScenarioResult {
    pub fn successes(&self) -> impl Iterator<Item = &RunResult> {
        self.runs.iter().filter_map(|r| r.result.as_ref().ok())
    }

    /// Unweighted mean over municipalities of the median final QLI.
    pub fn region_qli(&self) -> Option<f64> {
        self.median_final_qli
            .as_ref()
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Median of a non-empty slice; even lengths average the middle pair.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

/// Element-wise medians of final-month QLI, or `None` if fewer than half
/// of the `attempted` runs are present.
pub fn median_final_qli(runs: &[&RunResult], attempted: usize) -> Option<Vec<f64>> {
    if runs.is_empty() || runs.len() * 2 < attempted {
        return None;
    }
    let n = runs[0].final_qli().len();
    Some(
        (0..n)
            .map(|i| median(&runs.iter().map(|r| r.final_qli()[i]).collect::<Vec<_>>()))
            .collect(),
    )
}

/// Runs every scenario `spec.runs` times with seeds `seed + r`, on up to
/// `jobs` threads. Results do not depend on `jobs`.
pub fn run_batch(scenarios: &[Scenario], spec: &BatchSpec, jobs: usize) -> Result<Vec<ScenarioResult>> {
    if spec.runs == 0 {
        return Err(Error::invalid("runs per scenario must be at least 1"));
    }
    spec.params.validate()?;
    let tasks: Vec<(usize, u64)> = (0..scenarios.len())
        .flat_map(|s| (0..spec.runs as u64).map(move |r| (s, r)))
        .collect();
    let execute = |&(s, r): &(usize, u64)| {
        let sc = &scenarios[s];
        let seed = spec.seed.wrapping_add(r);
        let world_seed = match spec.world_mode {
            WorldMode::PerRun => seed,
            WorldMode::Frozen => spec.seed,
        };
        let result = run_scenario_with_world(&sc.id, &sc.region, &spec.params, sc.case, spec.horizon, seed, world_seed);
        if let Err(e) = &result {
            log::warn!("run failed: {e}");
        }
        RunOutcome { seed, result }
    };
    let outcomes: Vec<RunOutcome> = if jobs <= 1 {
        tasks.iter().map(execute).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
        pool.install(|| tasks.par_iter().map(execute).collect())
    };

    let mut outcomes = outcomes.into_iter();
    let mut results = Vec::with_capacity(scenarios.len());
    for sc in scenarios {
        let runs: Vec<RunOutcome> = outcomes.by_ref().take(spec.runs as usize).collect();
        let ok: Vec<&RunResult> = runs.iter().filter_map(|r| r.result.as_ref().ok()).collect();
        let median_final_qli = median_final_qli(&ok, runs.len());
        let status = if ok.len() == runs.len() {
            ScenarioStatus::Complete
        } else if median_final_qli.is_some() {
            ScenarioStatus::Partial
        } else {
            log::warn!("scenario {} case {}: only {}/{} runs survived", sc.id, sc.case.id(), ok.len(), runs.len());
            ScenarioStatus::Failed
        };
        results.push(ScenarioResult {
            scenario: sc.id.clone(),
            region_id: sc.region.id.clone(),
            case: sc.case,
            municipality_ids: sc.region.municipalities.iter().map(|m| m.id.clone()).collect(),
            runs,
            status,
            median_final_qli,
        });
    }
    Ok(results)
}
