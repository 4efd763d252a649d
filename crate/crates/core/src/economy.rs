//! Firms, families, and the goods and labor markets.
//!
//! Unit-level rules (`produce`, `set_price`, `pay_wages`, ...) operate on a
//! single firm or family and are pure apart from their arguments. The
//! `*_all` drivers apply them over a whole [`SimulationState`] in id order.

use std::cmp::Ordering;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::demographics::DemographyParams;
use crate::engine::SimulationState;
use crate::fiscal::{Money, TaxEvent, TaxKind};
use crate::ids::{CitizenId, FamilyId, FirmId, HouseId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Firm {
    pub id: FirmId,
    pub municipality: usize,
    pub location: [f64; 2],
    pub cash: Money,
    pub inventory: f64,
    pub price: Money,
    pub wage_offer: Money,
    pub employees: Vec<CitizenId>,
    pub cumulative_profit_this_quarter: Money,
    pub last_output: f64,
    pub vacancy_posted: bool,
    pub unfilled_last_round: bool,
    pub revenue_this_month: Money,
    pub units_sold_this_month: f64,
    pub payroll_this_month: Money,
}

impl Firm {
    pub fn new(id: FirmId, municipality: usize, location: [f64; 2], price: Money, wage: Money) -> Self {
        Self {
            id,
            municipality,
            location,
            cash: 0.0,
            inventory: 0.0,
            price,
            wage_offer: wage,
            employees: Vec::new(),
            cumulative_profit_this_quarter: 0.0,
            last_output: 0.0,
            vacancy_posted: false,
            unfilled_last_round: false,
            revenue_this_month: 0.0,
            units_sold_this_month: 0.0,
            payroll_this_month: 0.0,
        }
    }

    pub fn payroll(&self) -> Money {
        self.wage_offer * self.employees.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Family {
    pub id: FamilyId,
    pub municipality: usize,
    pub members: Vec<CitizenId>,
    pub savings: Money,
    /// The house the family lives in.
    pub house: Option<HouseId>,
    /// Unpaid property tax per municipality, settled from future income.
    pub arrears: Vec<(usize, Money)>,
    /// Income received since the family last consumed.
    pub recent_income: Money,
}

impl Family {
    pub fn new(id: FamilyId, municipality: usize) -> Self {
        Self {
            id,
            municipality,
            members: Vec::new(),
            savings: 0.0,
            house: None,
            arrears: Vec::new(),
            recent_income: 0.0,
        }
    }

    /// Credits income, first settling property-tax arrears. Returns the
    /// tax events for arrears paid.
    pub fn receive_income(&mut self, amount: Money) -> Vec<TaxEvent> {
        let mut left = amount;
        let mut events = Vec::new();
        for (muni, owed) in &mut self.arrears {
            if left <= 0.0 {
                break;
            }
            let pay = owed.min(left);
            *owed -= pay;
            left -= pay;
            events.push(TaxEvent {
                kind: TaxKind::Property,
                amount: pay,
                origin: *muni,
            });
        }
        self.arrears.retain(|(_, owed)| *owed > 0.0);
        self.savings += left;
        self.recent_income += left;
        events
    }

    pub fn debt(&self) -> Money {
        self.arrears.iter().map(|(_, d)| d).sum()
    }

    pub fn add_arrears(&mut self, municipality: usize, amount: Money) {
        if amount <= 0.0 {
            return;
        }
        match self.arrears.iter_mut().find(|(m, _)| *m == municipality) {
            Some((_, owed)) => *owed += amount,
            None => self.arrears.push((municipality, amount)),
        }
    }
}

/// Goods- and labor-market parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarketParams {
    pub productivity_alpha: f64,
    pub qualification_exponent_beta: f64,
    pub price_step: f64,
    pub wage_step: f64,
    pub consumption_firm_sample: usize,
    pub labor_candidate_sample: usize,
    pub proximity_hire_share: f64,
    pub savings_rate_bounds: (f64, f64),
    pub min_price: Money,
    pub min_wage: Money,
    /// Inventory at or below this many months of output counts as sold out.
    pub sold_out_months: f64,
    /// Inventory above this many months of output counts as a glut.
    pub glut_months: f64,
    /// Share of accumulated savings (beyond recent income) a family treats
    /// as spendable each month.
    pub wealth_drawdown: f64,
    /// Months of payroll a firm keeps before paying dividends.
    pub dividend_reserve_months: f64,
}

impl Default for MarketParams {
    fn default() -> Self {
        Self {
            productivity_alpha: 1.0,
            qualification_exponent_beta: 0.5,
            price_step: 0.05,
            wage_step: 0.05,
            consumption_firm_sample: 10,
            labor_candidate_sample: 20,
            proximity_hire_share: 0.0,
            savings_rate_bounds: (0.05, 0.25),
            min_price: 0.01,
            min_wage: 0.01,
            sold_out_months: 0.1,
            glut_months: 1.0,
            wealth_drawdown: 0.05,
            dividend_reserve_months: 3.0,
        }
    }
}

impl MarketParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.productivity_alpha > 0.0) {
            return Err("market.productivity_alpha must be positive".into());
        }
        if !(self.qualification_exponent_beta > 0.0 && self.qualification_exponent_beta <= 1.0) {
            return Err("market.qualification_exponent_beta must lie in (0, 1]".into());
        }
        if self.consumption_firm_sample == 0 || self.labor_candidate_sample == 0 {
            return Err("market sample sizes must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.proximity_hire_share) {
            return Err("market.proximity_hire_share must lie in [0, 1]".into());
        }
        let (lo, hi) = self.savings_rate_bounds;
        if !(0.0 <= lo && lo <= hi && hi < 1.0) {
            return Err("market.savings_rate_bounds must satisfy 0 <= low <= high < 1".into());
        }
        for (name, v) in [
            ("price_step", self.price_step),
            ("wage_step", self.wage_step),
            ("wealth_drawdown", self.wealth_drawdown),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(format!("market.{name} must lie in [0, 1)"));
            }
        }
        if !(self.min_price > 0.0 && self.min_wage > 0.0) {
            return Err("market.min_price and market.min_wage must be positive".into());
        }
        if !(self.glut_months >= self.sold_out_months && self.sold_out_months >= 0.0) {
            return Err("market.glut_months must be at least market.sold_out_months".into());
        }
        Ok(())
    }
}

/// Tax rates applied by the economy and housing market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaxRates {
    pub consumption: f64,
    pub personal_income: f64,
    pub company: f64,
    /// Annual rate on hedonic value, charged monthly.
    pub property_annual: f64,
    pub transmission: f64,
    pub profit_tax_cadence_months: u32,
}

impl Default for TaxRates {
    fn default() -> Self {
        Self {
            consumption: 0.18,
            personal_income: 0.275,
            company: 0.15,
            property_annual: 0.005,
            transmission: 0.02,
            profit_tax_cadence_months: 3,
        }
    }
}

impl TaxRates {
    pub fn zero() -> Self {
        Self {
            consumption: 0.0,
            personal_income: 0.0,
            company: 0.0,
            property_annual: 0.0,
            transmission: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("consumption", self.consumption),
            ("personal_income", self.personal_income),
            ("company", self.company),
            ("property_annual", self.property_annual),
            ("transmission", self.transmission),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(format!("taxes.{name} must lie in [0, 1)"));
            }
        }
        if self.profit_tax_cadence_months == 0 {
            return Err("taxes.profit_tax_cadence_months must be at least 1".into());
        }
        Ok(())
    }
}

/// Adds this month's output to inventory. Returns units produced.
pub fn produce(firm: &mut Firm, employee_qualifications: &[u8], params: &MarketParams) -> f64 {
    let output: f64 = params.productivity_alpha
        * employee_qualifications
            .iter()
            .map(|&q| (q as f64).powf(params.qualification_exponent_beta))
            .sum::<f64>();
    firm.inventory += output;
    firm.last_output = output;
    output
}

fn sold_out(firm: &Firm, params: &MarketParams) -> bool {
    firm.inventory <= params.sold_out_months * firm.last_output
}

/// Inventory rule: raise the price when sold out, cut it on a glut.
pub fn set_price(firm: &mut Firm, params: &MarketParams) {
    // an idle firm with nothing to sell is not facing excess demand
    if sold_out(firm, params) && firm.units_sold_this_month > 0.0 {
        firm.price *= 1.0 + params.price_step;
    } else if firm.inventory > params.glut_months * firm.last_output {
        firm.price *= 1.0 - params.price_step;
    }
    firm.price = firm.price.max(params.min_price);
}

/// Wage rule and vacancy decision. Returns whether a vacancy is posted.
pub fn set_wage_and_vacancy(firm: &mut Firm, params: &MarketParams) -> bool {
    if firm.cash < firm.payroll() {
        firm.wage_offer *= 1.0 - params.wage_step;
    } else if firm.unfilled_last_round {
        firm.wage_offer *= 1.0 + params.wage_step;
    }
    firm.wage_offer = firm.wage_offer.max(params.min_wage);
    firm.vacancy_posted = sold_out(firm, params);
    firm.vacancy_posted
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vacancy {
    pub firm: FirmId,
    pub wage_offer: Money,
    pub location: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub citizen: CitizenId,
    pub qualification: u8,
    pub residence: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LaborOutcome {
    pub matches: Vec<(FirmId, CitizenId, Money)>,
    pub unfilled: Vec<FirmId>,
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Higher-wage vacancies choose first; each draws a candidate sample and
/// hires its most qualified member, or with `proximity_hire_share` its
/// nearest member. Each candidate is hired at most once.
pub fn run_labor_market<R: Rng>(
    vacancies: &[Vacancy],
    candidates: &[Candidate],
    params: &MarketParams,
    rng: &mut R,
) -> LaborOutcome {
    let mut order: Vec<&Vacancy> = vacancies.iter().collect();
    order.sort_by(|a, b| b.wage_offer.total_cmp(&a.wage_offer).then(a.firm.cmp(&b.firm)));
    let mut pool: Vec<Candidate> = candidates.to_vec();
    let mut out = LaborOutcome::default();
    for v in order {
        if pool.is_empty() {
            out.unfilled.push(v.firm);
            continue;
        }
        let k = params.labor_candidate_sample.min(pool.len());
        let sample = index::sample(rng, pool.len(), k).into_vec();
        let by_proximity = params.proximity_hire_share > 0.0 && rng.random::<f64>() < params.proximity_hire_share;
        let pick = sample
            .iter()
            .copied()
            .max_by(|&a, &b| {
                let (ca, cb) = (&pool[a], &pool[b]);
                let primary = if by_proximity {
                    distance(cb.residence, v.location).total_cmp(&distance(ca.residence, v.location))
                } else {
                    ca.qualification.cmp(&cb.qualification)
                };
                primary.then(cb.citizen.cmp(&ca.citizen))
            })
            .expect("sample is non-empty");
        let hired = pool.swap_remove(pick);
        out.matches.push((v.firm, hired.citizen, v.wage_offer));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaffMember {
    pub citizen: CitizenId,
    pub qualification: u8,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Payroll {
    /// Net wage per paid employee.
    pub net_pay: Vec<(CitizenId, Money)>,
    /// Employees released because the firm could not afford them.
    pub released: Vec<CitizenId>,
    pub events: Vec<TaxEvent>,
    pub gross: Money,
}

/// Pays every employee `wage_offer`, withholding income tax. A firm that
/// cannot cover payroll first releases its least qualified employees.
pub fn pay_wages(firm: &mut Firm, staff: &[StaffMember], rates: &TaxRates) -> Payroll {
    let mut staff: Vec<StaffMember> = staff.to_vec();
    // most qualified first, so releases come off the tail
    staff.sort_by(|a, b| b.qualification.cmp(&a.qualification).then(a.citizen.cmp(&b.citizen)));
    let wage = firm.wage_offer;
    let mut out = Payroll::default();
    let affordable = if wage > 0.0 {
        ((firm.cash.max(0.0) / wage).floor() as usize).min(staff.len())
    } else {
        staff.len()
    };
    for s in staff.drain(affordable..) {
        out.released.push(s.citizen);
    }
    out.released.sort_unstable();
    firm.employees.retain(|e| out.released.binary_search(e).is_err());
    for s in &staff {
        let tax = wage * rates.personal_income;
        out.net_pay.push((s.citizen, wage - tax));
        if tax > 0.0 {
            out.events.push(TaxEvent {
                kind: TaxKind::PersonalIncome,
                amount: tax,
                origin: firm.municipality,
            });
        }
    }
    out.gross = wage * staff.len() as f64;
    firm.cash -= out.gross;
    firm.cumulative_profit_this_quarter -= out.gross;
    firm.payroll_this_month = out.gross;
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Purchase {
    pub firm: FirmId,
    pub units: f64,
    pub spent: Money,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConsumptionOutcome {
    pub purchases: Vec<Purchase>,
    pub events: Vec<TaxEvent>,
    pub spent: Money,
    pub units: f64,
}

/// Spends `budget` on the sampled firms, cheapest first, until the budget or
/// the sampled inventory runs out. Sellers receive the net of consumption tax.
pub fn spend_budget(budget: Money, sample: &[FirmId], firms: &mut [Firm], rates: &TaxRates) -> ConsumptionOutcome {
    let mut out = ConsumptionOutcome::default();
    if budget <= 0.0 {
        return out;
    }
    let mut order: Vec<FirmId> = sample.to_vec();
    order.sort_by(|a, b| {
        firms[a.0]
            .price
            .partial_cmp(&firms[b.0].price)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(b))
    });
    order.dedup();
    let mut left = budget;
    for fid in order {
        if left <= 0.0 {
            break;
        }
        let firm = &mut firms[fid.0];
        if firm.inventory <= 0.0 {
            continue;
        }
        let wanted = left / firm.price;
        let (units, spent) = if wanted <= firm.inventory {
            (wanted, left)
        } else {
            (firm.inventory, firm.inventory * firm.price)
        };
        if spent <= 0.0 {
            continue;
        }
        firm.inventory -= units;
        if firm.inventory < 0.0 {
            firm.inventory = 0.0;
        }
        let tax = spent * rates.consumption;
        let net = spent - tax;
        firm.cash += net;
        firm.cumulative_profit_this_quarter += net;
        firm.revenue_this_month += net;
        firm.units_sold_this_month += units;
        if tax > 0.0 {
            out.events.push(TaxEvent {
                kind: TaxKind::Consumption,
                amount: tax,
                origin: firm.municipality,
            });
        }
        out.purchases.push(Purchase { firm: fid, units, spent });
        out.spent += spent;
        out.units += units;
        left -= spent;
    }
    out
}

/// The monthly spending budget of a family for a given savings rate.
pub fn family_budget(family: &Family, savings_rate: f64, params: &MarketParams) -> Money {
    let recent = family.recent_income.clamp(0.0, family.savings.max(0.0));
    let stock = (family.savings - recent).max(0.0);
    let liquid = recent + params.wealth_drawdown * stock;
    ((1.0 - savings_rate) * liquid).clamp(0.0, family.savings.max(0.0))
}

/// One family's consumption decision: draws a savings rate and a firm
/// sample, then spends.
pub fn consume<R: Rng>(
    family: &mut Family,
    firms: &mut [Firm],
    rates: &TaxRates,
    params: &MarketParams,
    rng: &mut R,
) -> ConsumptionOutcome {
    let (lo, hi) = params.savings_rate_bounds;
    let savings_rate = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let budget = family_budget(family, savings_rate, params);
    let k = params.consumption_firm_sample.min(firms.len());
    let sample: Vec<FirmId> = index::sample(rng, firms.len(), k).into_iter().map(FirmId).collect();
    let out = spend_budget(budget, &sample, firms, rates);
    family.savings -= out.spent;
    if family.savings < 0.0 {
        family.savings = 0.0;
    }
    family.recent_income = 0.0;
    out
}

/// Company tax on positive accumulated profit; resets the accumulator.
pub fn settle_profit_tax(firm: &mut Firm, rates: &TaxRates) -> Option<TaxEvent> {
    let profit = firm.cumulative_profit_this_quarter;
    firm.cumulative_profit_this_quarter = 0.0;
    if profit <= 0.0 {
        return None;
    }
    let tax = (profit * rates.company).min(firm.cash.max(0.0));
    if tax <= 0.0 {
        return None;
    }
    firm.cash -= tax;
    Some(TaxEvent {
        kind: TaxKind::Company,
        amount: tax,
        origin: firm.municipality,
    })
}

/// Cash a firm can pay out while keeping its payroll reserve and the
/// company tax accrued on this quarter's profit.
pub fn distributable_cash(firm: &Firm, params: &MarketParams, rates: &TaxRates) -> Money {
    let reserve = params.dividend_reserve_months * firm.payroll();
    let accrued = firm.cumulative_profit_this_quarter.max(0.0) * rates.company;
    (firm.cash - reserve - accrued).max(0.0)
}

// ---------------------------------------------------------------------------
// State-level drivers
// ---------------------------------------------------------------------------

/// Production step for every firm.
pub fn produce_all(state: &mut SimulationState, params: &MarketParams) {
    let mut quals: Vec<Vec<u8>> = vec![Vec::new(); state.firms.len()];
    for c in &state.citizens {
        if let Some(f) = c.employer {
            quals[f.0].push(c.qualification);
        }
    }
    let mut value = 0.0;
    let mut units = 0.0;
    for (firm, q) in state.firms.iter_mut().zip(&quals) {
        firm.revenue_this_month = 0.0;
        firm.units_sold_this_month = 0.0;
        firm.payroll_this_month = 0.0;
        let out = produce(firm, q, params);
        units += out;
        value += out * firm.price;
    }
    state.month_stats.output_units = units;
    state.month_stats.output_value = value;
}

/// Consumption step: every family, in id order.
pub fn consume_all(state: &mut SimulationState, rates: &TaxRates, params: &MarketParams) {
    if state.firms.is_empty() {
        return;
    }
    let SimulationState {
        families,
        firms,
        ledger,
        rng,
        month_stats,
        ..
    } = state;
    for fam in families.iter_mut() {
        let out = consume(fam, firms, rates, params, &mut rng.consumption);
        for e in &out.events {
            ledger.record(*e);
        }
        month_stats.consumption += out.spent;
        month_stats.units_sold += out.units;
        month_stats.purchases += out.purchases.len() as u64;
    }
}

/// Price, wage and vacancy decisions for every firm.
pub fn firm_decisions(state: &mut SimulationState, params: &MarketParams) {
    let SimulationState { firms, citizens, .. } = state;
    for firm in firms.iter_mut() {
        set_price(firm, params);
        set_wage_and_vacancy(firm, params);
        let wage = firm.wage_offer;
        for e in &firm.employees {
            if let Ok(pos) = citizens.binary_search_by_key(e, |c| c.id) {
                citizens[pos].monthly_wage = wage;
            }
        }
    }
}

/// Labor market over posted vacancies and unemployed labor-age citizens.
pub fn labor_market(state: &mut SimulationState, params: &MarketParams, demography: &DemographyParams) {
    let vacancies: Vec<Vacancy> = state
        .firms
        .iter()
        .filter(|f| f.vacancy_posted)
        .map(|f| Vacancy {
            firm: f.id,
            wage_offer: f.wage_offer,
            location: f.location,
        })
        .collect();
    for f in &mut state.firms {
        f.unfilled_last_round = false;
    }
    if vacancies.is_empty() {
        return;
    }
    let candidates: Vec<Candidate> = state
        .citizens
        .iter()
        .filter(|c| c.employer.is_none() && demography.is_labor_age(c.age_months))
        .map(|c| Candidate {
            citizen: c.id,
            qualification: c.qualification,
            residence: state.residence_of(c.family),
        })
        .collect();
    let outcome = run_labor_market(&vacancies, &candidates, params, &mut state.rng.labor);
    for f in &outcome.unfilled {
        state.firms[f.0].unfilled_last_round = true;
    }
    for &(firm, citizen, wage) in &outcome.matches {
        if let Some(pos) = state.citizen_pos(citizen) {
            state.citizens[pos].employer = Some(firm);
            state.citizens[pos].monthly_wage = wage;
            state.firms[firm.0].employees.push(citizen);
        }
    }
    for f in &mut state.firms {
        f.employees.sort_unstable();
    }
    state.month_stats.hires += outcome.matches.len() as u64;
}

/// Month-end payroll: pays every firm's staff and withholds income tax.
pub fn pay_all_wages(state: &mut SimulationState, rates: &TaxRates) {
    let mut staff: Vec<Vec<StaffMember>> = vec![Vec::new(); state.firms.len()];
    for c in &state.citizens {
        if let Some(f) = c.employer {
            staff[f.0].push(StaffMember {
                citizen: c.id,
                qualification: c.qualification,
            });
        }
    }
    for fi in 0..state.firms.len() {
        let payroll = pay_wages(&mut state.firms[fi], &staff[fi], rates);
        for e in &payroll.events {
            state.ledger.record(*e);
        }
        for id in &payroll.released {
            if let Some(pos) = state.citizen_pos(*id) {
                state.citizens[pos].employer = None;
                state.citizens[pos].monthly_wage = 0.0;
            }
        }
        state.month_stats.releases += payroll.released.len() as u64;
        state.month_stats.payroll += payroll.gross;
        for (id, net) in payroll.net_pay {
            let Some(cpos) = state.citizen_pos(id) else { continue };
            let fam = state.citizens[cpos].family;
            state.credit_family(fam, net);
            state.month_stats.transfers += 1;
        }
    }
}

/// Company tax for every firm on the configured cadence.
pub fn settle_all_profit_taxes(state: &mut SimulationState, rates: &TaxRates) {
    for firm in &mut state.firms {
        if let Some(e) = settle_profit_tax(firm, rates) {
            state.ledger.record(e);
        }
    }
}

/// Distributes firms' excess cash equally across all families.
pub fn pay_dividends(state: &mut SimulationState, params: &MarketParams, rates: &TaxRates) {
    if state.families.is_empty() {
        return;
    }
    let mut pot = 0.0;
    for firm in &mut state.firms {
        let d = distributable_cash(firm, params, rates);
        firm.cash -= d;
        pot += d;
    }
    if pot <= 0.0 {
        return;
    }
    let share = pot / state.families.len() as f64;
    let mut given = 0.0;
    let ids: Vec<FamilyId> = state.families.iter().map(|f| f.id).collect();
    for id in &ids {
        state.credit_family(*id, share);
        given += share;
    }
    // rounding residue stays with the first family
    state.credit_family(ids[0], pot - given);
    state.month_stats.dividends += pot;
    state.month_stats.transfers += ids.len() as u64;
}
