//! Ageing, mortality and fertility.

use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::engine::SimulationState;
use crate::error::{Error, Result};
use crate::fiscal::Money;
use crate::ids::{CitizenId, FamilyId, FirmId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Citizen {
    pub id: CitizenId,
    pub age_months: u32,
    pub qualification: u8,
    pub family: FamilyId,
    pub employer: Option<FirmId>,
    pub monthly_wage: Money,
}

impl Citizen {
    pub fn age_years(&self) -> u32 {
        self.age_months / 12
    }
}

/// Monthly probabilities for an inclusive range of ages in years.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VitalBracket {
    #[serde(rename = "bracket_start_age")]
    pub start_age: u32,
    #[serde(rename = "bracket_end_age")]
    pub end_age: u32,
    #[serde(rename = "monthly_mortality")]
    pub mortality: f64,
    #[serde(rename = "monthly_fertility")]
    pub fertility: f64,
}

/// Bracketed mortality and fertility table covering ages 0..=max with no
/// gaps. The terminal bracket must have mortality 1.
#[derive(Debug, Clone, PartialEq)]
pub struct VitalRates {
    brackets: Vec<VitalBracket>,
}

impl Default for VitalRates {
    fn default() -> Self {
        const MORTALITY: [f64; 21] = [
            2.0e-4, 3e-5, 3e-5, 3e-5, 3e-5, 3e-5, 3e-5, 3e-5, 6e-5, 1.0e-4, 1.6e-4, 2.5e-4, 4.0e-4,
            6.5e-4, 1.0e-3, 1.7e-3, 2.8e-3, 4.5e-3, 7.0e-3, 1.1e-2, 1.0,
        ];
        const FERTILITY: [f64; 21] = [
            0.0, 0.0, 0.0, 0.0025, 0.0045, 0.0045, 0.0035, 0.002, 0.0007, 0.0001, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        ];
        let brackets = (0..21)
            .map(|i| VitalBracket {
                start_age: 5 * i as u32,
                end_age: 5 * i as u32 + 4,
                mortality: MORTALITY[i],
                fertility: FERTILITY[i],
            })
            .collect();
        Self::new(brackets).expect("default vital table is valid")
    }
}

impl VitalRates {
    pub fn new(brackets: Vec<VitalBracket>) -> Result<Self> {
        if brackets.is_empty() {
            return Err(Error::validation("vital-rate table is empty"));
        }
        let mut next = 0;
        for b in &brackets {
            if b.start_age != next {
                return Err(Error::validation(format!(
                    "vital-rate brackets leave a gap or overlap at age {next}"
                )));
            }
            if b.end_age < b.start_age {
                return Err(Error::validation(format!(
                    "vital-rate bracket {}..{} is reversed",
                    b.start_age, b.end_age
                )));
            }
            for (name, p) in [("mortality", b.mortality), ("fertility", b.fertility)] {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::validation(format!(
                        "{name} {p} for ages {}..{} is not a probability",
                        b.start_age, b.end_age
                    )));
                }
            }
            next = b.end_age + 1;
        }
        if brackets[brackets.len() - 1].mortality != 1.0 {
            return Err(Error::validation("terminal vital-rate bracket must have mortality 1"));
        }
        Ok(Self { brackets })
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let brackets = rdr.deserialize().collect::<std::result::Result<Vec<VitalBracket>, _>>()?;
        Self::new(brackets)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn brackets(&self) -> &[VitalBracket] {
        &self.brackets
    }

    /// Exclusive upper bound on age in months.
    pub fn max_age_months(&self) -> u32 {
        (self.brackets[self.brackets.len() - 1].end_age + 1) * 12
    }

    pub fn bracket_for(&self, age_months: u32) -> Option<&VitalBracket> {
        let years = age_months / 12;
        self.brackets
            .iter()
            .find(|b| b.start_age <= years && years <= b.end_age)
    }

    /// Same table with every fertility rate replaced.
    pub fn with_fertility(mut self, p: f64) -> Self {
        for b in &mut self.brackets {
            b.fertility = p;
        }
        self
    }

    /// Same table with every non-terminal mortality rate replaced.
    pub fn with_mortality(mut self, p: f64) -> Self {
        let last = self.brackets.len() - 1;
        for b in &mut self.brackets[..last] {
            b.mortality = p;
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemographyParams {
    pub vital_rates: VitalRates,
    pub labor_entry_age_years: u32,
    pub retirement_age_years: u32,
    /// Standard deviation of an entrant's qualification around the family mean.
    pub entrant_qualification_spread: f64,
    pub qualification_levels: u8,
}

impl Default for DemographyParams {
    fn default() -> Self {
        Self {
            vital_rates: VitalRates::default(),
            labor_entry_age_years: 16,
            retirement_age_years: 65,
            entrant_qualification_spread: 2.0,
            qualification_levels: 21,
        }
    }
}

impl DemographyParams {
    pub fn is_labor_age(&self, age_months: u32) -> bool {
        let y = age_months / 12;
        y >= self.labor_entry_age_years && y < self.retirement_age_years
    }
}

/// Every living citizen gets one month older.
pub fn step_ages(state: &mut SimulationState) {
    for c in &mut state.citizens {
        c.age_months += 1;
    }
}

/// Draws the qualification of citizens who reached labor-entry age this month.
pub fn mature_entrants<R: Rng>(state: &mut SimulationState, params: &DemographyParams, rng: &mut R) {
    let entry = params.labor_entry_age_years * 12;
    let q_max = params.qualification_levels.max(1);
    let entrants: Vec<usize> = state
        .citizens
        .iter()
        .enumerate()
        .filter(|(_, c)| c.age_months == entry)
        .map(|(i, _)| i)
        .collect();
    for i in entrants {
        let family = state.citizens[i].family;
        let me = state.citizens[i].id;
        let mean = family_mean_qualification(state, family, Some(me), entry)
            .unwrap_or(state.citizens[i].qualification as f64);
        let draw = Normal::new(mean, params.entrant_qualification_spread.max(0.0))
            .map(|n| n.sample(rng))
            .unwrap_or(mean);
        state.citizens[i].qualification = draw.round().clamp(1.0, q_max as f64) as u8;
    }
}

/// Mean qualification over a family's members of labor-entry age or older.
fn family_mean_qualification(
    state: &SimulationState,
    family: FamilyId,
    exclude: Option<CitizenId>,
    min_age_months: u32,
) -> Option<f64> {
    let fam = state.family(family)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for &m in &fam.members {
        if Some(m) == exclude {
            continue;
        }
        if let Some(c) = state.citizen(m) {
            if c.age_months >= min_age_months {
                sum += c.qualification as f64;
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Employed citizens past retirement age leave their jobs.
pub fn retire(state: &mut SimulationState, params: &DemographyParams) -> usize {
    let limit = params.retirement_age_years * 12;
    let mut leaving = Vec::new();
    for c in &mut state.citizens {
        if c.age_months >= limit {
            if let Some(f) = c.employer.take() {
                c.monthly_wage = 0.0;
                leaving.push((f, c.id));
            }
        }
    }
    for &(f, id) in &leaving {
        state.firms[f.0].employees.retain(|&e| e != id);
    }
    leaving.len()
}

/// Each citizen dies with its bracket probability. Families left empty are
/// dissolved and their assets escheat to the municipality.
pub fn apply_mortality<R: Rng>(state: &mut SimulationState, rates: &VitalRates, rng: &mut R) -> Result<u32> {
    let mut dead = Vec::new();
    for c in &state.citizens {
        let bracket = rates.bracket_for(c.age_months).ok_or_else(|| Error::Config {
            path: "demography.vital_rates".into(),
            message: format!("no bracket covers age {} months", c.age_months),
        })?;
        let p = bracket.mortality;
        if p >= 1.0 || (p > 0.0 && rng.random::<f64>() < p) {
            dead.push(c.id);
        }
    }
    if dead.is_empty() {
        return Ok(0);
    }
    remove_citizens(state, &dead);
    Ok(dead.len() as u32)
}

/// Removes citizens (ids ascending) from families and employers, then
/// dissolves any family that became empty.
pub(crate) fn remove_citizens(state: &mut SimulationState, dead: &[CitizenId]) {
    let is_dead = |id: &CitizenId| dead.binary_search(id).is_ok();
    let mut touched_families = Vec::new();
    for c in state.citizens.iter().filter(|c| is_dead(&c.id)) {
        if let Some(f) = c.employer {
            state.firms[f.0].employees.retain(|e| *e != c.id);
        }
        touched_families.push(c.family);
    }
    state.citizens.retain(|c| !is_dead(&c.id));
    touched_families.sort_unstable();
    touched_families.dedup();
    for fid in touched_families {
        let Some(pos) = state.family_pos(fid) else { continue };
        state.families[pos].members.retain(|m| !is_dead(m));
        if state.families[pos].members.is_empty() {
            extinguish_family(state, pos);
        }
    }
}

/// Escheats a memberless family's money and houses to the municipality and
/// removes it.
fn extinguish_family(state: &mut SimulationState, pos: usize) {
    let family = state.families.remove(pos);
    let muni = family.municipality;
    state.municipalities[muni].treasury.estate += family.savings;
    state.month_stats.escheated += family.savings;
    for h in &mut state.houses {
        if h.owner == Some(family.id) {
            h.owner = None;
        }
        if h.occupant == Some(family.id) {
            h.occupant = None;
        }
    }
}

/// Eligible citizens give birth with their bracket probability; newborns
/// join the parent's family.
pub fn apply_fertility<R: Rng>(
    state: &mut SimulationState,
    rates: &VitalRates,
    params: &DemographyParams,
    rng: &mut R,
) -> u32 {
    let entry = params.labor_entry_age_years * 12;
    let mut parents = Vec::new();
    for c in &state.citizens {
        let p = rates.bracket_for(c.age_months).map_or(0.0, |b| b.fertility);
        if p >= 1.0 || (p > 0.0 && rng.random::<f64>() < p) {
            parents.push(c.family);
        }
    }
    let q_max = params.qualification_levels.max(1) as f64;
    for family in &parents {
        let placeholder = family_mean_qualification(state, *family, None, entry)
            .unwrap_or(1.0)
            .round()
            .clamp(1.0, q_max) as u8;
        let id = CitizenId(state.next_citizen_id);
        state.next_citizen_id += 1;
        state.citizens.push(Citizen {
            id,
            age_months: 0,
            qualification: placeholder,
            family: *family,
            employer: None,
            monthly_wage: 0.0,
        });
        if let Some(pos) = state.family_pos(*family) {
            state.families[pos].members.push(id);
        }
    }
    parents.len() as u32
}
