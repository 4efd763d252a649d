//! Tax collection ledger, the four distribution policies, and municipal
//! investment of distributed revenue.
//!
//! Every tax collected during a month is recorded in a [`TaxLedger`] keyed by
//! kind and origin municipality. At month end the ledger is split over three
//! channels:
//!
//! - **local**: retained by the municipality of origin;
//! - **equal**: pooled over the region and shared in proportion to population;
//! - **MPF**: pooled and shared by population-bracket coefficients, which
//!   favours small municipalities per capita.
//!
//! A [`DistributionPolicy`] holds the channel weights per tax kind.

use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Money = f64;

/// The five taxes collected by the simulated economy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaxKind {
    Consumption,
    PersonalIncome,
    Transmission,
    Company,
    Property,
}

impl TaxKind {
    pub const COUNT: usize = 5;
    pub const ALL: [TaxKind; 5] = [
        TaxKind::Consumption,
        TaxKind::PersonalIncome,
        TaxKind::Transmission,
        TaxKind::Company,
        TaxKind::Property,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            TaxKind::Consumption => "consumption",
            TaxKind::PersonalIncome => "personal_income",
            TaxKind::Transmission => "transmission",
            TaxKind::Company => "company",
            TaxKind::Property => "property",
        }
    }
}

impl fmt::Display for TaxKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One unit of collected tax, tagged with where it was collected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaxEvent {
    pub kind: TaxKind,
    pub amount: Money,
    pub origin: usize,
}

/// Taxes collected during one month, by (kind, origin municipality).
#[derive(Debug, Clone, PartialEq)]
pub struct TaxLedger {
    pub month: u32,
    amounts: Vec<[Money; TaxKind::COUNT]>,
    events: u64,
}

impl TaxLedger {
    pub fn new(month: u32, municipalities: usize) -> Self {
        Self {
            month,
            amounts: vec![[0.0; TaxKind::COUNT]; municipalities],
            events: 0,
        }
    }

    /// Records an event. Zero amounts are dropped; negative amounts are a bug.
    pub fn record(&mut self, event: TaxEvent) {
        debug_assert!(event.amount >= 0.0, "negative tax event {event:?}");
        if event.amount <= 0.0 {
            return;
        }
        self.amounts[event.origin][event.kind.index()] += event.amount;
        self.events += 1;
    }

    pub fn municipalities(&self) -> usize {
        self.amounts.len()
    }

    pub fn amount(&self, kind: TaxKind, origin: usize) -> Money {
        self.amounts[origin][kind.index()]
    }

    pub fn by_origin(&self) -> &[[Money; TaxKind::COUNT]] {
        &self.amounts
    }

    pub fn event_count(&self) -> u64 {
        self.events
    }

    pub fn total_by_kind(&self) -> [Money; TaxKind::COUNT] {
        let mut out = [0.0; TaxKind::COUNT];
        for row in &self.amounts {
            for (acc, v) in out.iter_mut().zip(row) {
                *acc += v;
            }
        }
        out
    }

    pub fn total(&self) -> Money {
        self.total_by_kind().iter().sum()
    }

    /// Empties the ledger and moves it to `month`.
    pub fn reset(&mut self, month: u32) {
        self.month = month;
        self.events = 0;
        for row in &mut self.amounts {
            *row = [0.0; TaxKind::COUNT];
        }
    }
}

/// The four distribution alternatives compared by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum FiscalCase {
    /// Status quo: separate municipalities with MPF transfers.
    Case1,
    /// Fiscal merger of the region, MPF kept.
    Case2,
    /// Everything retained where collected.
    Case3,
    /// Fiscal merger without MPF.
    Case4,
}

impl FiscalCase {
    pub const ALL: [FiscalCase; 4] = [
        FiscalCase::Case1,
        FiscalCase::Case2,
        FiscalCase::Case3,
        FiscalCase::Case4,
    ];

    pub fn id(self) -> u8 {
        match self {
            FiscalCase::Case1 => 1,
            FiscalCase::Case2 => 2,
            FiscalCase::Case3 => 3,
            FiscalCase::Case4 => 4,
        }
    }

    /// True for the cases that keep municipalities fiscally separate.
    pub fn alternative0(self) -> bool {
        matches!(self, FiscalCase::Case1 | FiscalCase::Case3)
    }

    /// True for the cases where the MPF rule is applied.
    pub fn mpf_distribution(self) -> bool {
        matches!(self, FiscalCase::Case1 | FiscalCase::Case2)
    }

    pub fn policy(self) -> DistributionPolicy {
        policy_for_case(self.id()).expect("valid case id")
    }
}

impl TryFrom<u8> for FiscalCase {
    type Error = Error;

    fn try_from(id: u8) -> Result<Self> {
        match id {
            1 => Ok(FiscalCase::Case1),
            2 => Ok(FiscalCase::Case2),
            3 => Ok(FiscalCase::Case3),
            4 => Ok(FiscalCase::Case4),
            other => Err(Error::invalid(format!("case id {other} is outside 1..=4"))),
        }
    }
}

impl From<FiscalCase> for u8 {
    fn from(c: FiscalCase) -> u8 {
        c.id()
    }
}

impl fmt::Display for FiscalCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.id())
    }
}

/// Shares of one tax kind routed to each channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelWeights {
    pub local: f64,
    pub equal: f64,
    pub mpf: f64,
}

impl ChannelWeights {
    pub const LOCAL: ChannelWeights = ChannelWeights::new(1.0, 0.0, 0.0);
    pub const EQUAL: ChannelWeights = ChannelWeights::new(0.0, 1.0, 0.0);

    pub const fn new(local: f64, equal: f64, mpf: f64) -> Self {
        Self { local, equal, mpf }
    }

    pub fn sum(&self) -> f64 {
        self.local + self.equal + self.mpf
    }
}

/// Channel weights for every tax kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionPolicy {
    weights: [ChannelWeights; TaxKind::COUNT],
}

impl DistributionPolicy {
    pub fn new(weights: [ChannelWeights; TaxKind::COUNT]) -> Result<Self> {
        for (kind, w) in TaxKind::ALL.iter().zip(&weights) {
            if w.local < 0.0 || w.equal < 0.0 || w.mpf < 0.0 {
                return Err(Error::validation(format!("negative weight for {kind}")));
            }
            if (w.sum() - 1.0).abs() > 1e-12 {
                return Err(Error::validation(format!(
                    "weights for {kind} sum to {} instead of 1",
                    w.sum()
                )));
            }
        }
        Ok(Self { weights })
    }

    pub fn uniform(w: ChannelWeights) -> Self {
        Self { weights: [w; TaxKind::COUNT] }
    }

    pub fn weights(&self, kind: TaxKind) -> ChannelWeights {
        self.weights[kind.index()]
    }
}

/// The weight matrix of one of the four alternatives.
pub fn policy_for_case(case_id: u8) -> Result<DistributionPolicy> {
    let split = ChannelWeights::new(0.0, 0.765, 0.235);
    let weights = match case_id {
        1 => [
            ChannelWeights::new(0.1875, 0.8125, 0.0),
            split,
            ChannelWeights::LOCAL,
            split,
            ChannelWeights::LOCAL,
        ],
        2 => [
            ChannelWeights::EQUAL,
            split,
            ChannelWeights::EQUAL,
            split,
            ChannelWeights::EQUAL,
        ],
        3 => [ChannelWeights::LOCAL; TaxKind::COUNT],
        4 => [ChannelWeights::EQUAL; TaxKind::COUNT],
        other => return Err(Error::invalid(format!("case id {other} is outside 1..=4"))),
    };
    DistributionPolicy::new(weights)
}

/// How a bracket table maps a population onto a coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MpfLookup {
    /// Coefficient of the bracket containing the population.
    Step,
    /// Piecewise-linear between bracket anchors. Keeps per-capita shares
    /// monotone where the step ladder jumps.
    #[default]
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpfBracket {
    /// Inclusive upper bound; `None` for the open top bracket.
    pub max_population: Option<u64>,
    pub coefficient: f64,
}

/// Population-bracket coefficient ladder for the MPF channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpfTable {
    brackets: Vec<MpfBracket>,
    lookup: MpfLookup,
}

const FPM_BOUNDS: [u64; 17] = [
    10_188, 13_584, 16_980, 23_772, 30_564, 37_356, 44_148, 50_940, 61_128, 71_316, 81_504,
    91_692, 101_880, 115_464, 129_048, 142_632, 156_216,
];

impl Default for MpfTable {
    /// The FPM ladder: 0.6 up to 10,188 inhabitants rising by 0.2 per
    /// bracket to 4.0 above 156,216.
    fn default() -> Self {
        let mut brackets: Vec<MpfBracket> = FPM_BOUNDS
            .iter()
            .enumerate()
            .map(|(i, &b)| MpfBracket {
                max_population: Some(b),
                coefficient: 0.6 + 0.2 * i as f64,
            })
            .collect();
        brackets.push(MpfBracket {
            max_population: None,
            coefficient: 4.0,
        });
        Self::new(brackets, MpfLookup::Linear).expect("default table is valid")
    }
}

#[derive(Debug, Deserialize)]
struct MpfRow {
    max_population: Option<u64>,
    coefficient: f64,
}

impl MpfTable {
    pub fn new(brackets: Vec<MpfBracket>, lookup: MpfLookup) -> Result<Self> {
        if brackets.is_empty() {
            return Err(Error::validation("MPF table has no brackets"));
        }
        let last = brackets.len() - 1;
        for (i, b) in brackets.iter().enumerate() {
            if !(b.coefficient.is_finite() && b.coefficient > 0.0) {
                return Err(Error::validation(format!(
                    "MPF bracket {i}: coefficient must be positive"
                )));
            }
            match (i == last, b.max_population) {
                (true, Some(_)) => {
                    return Err(Error::validation(
                        "MPF table must end with an open bracket (empty max_population)",
                    ))
                }
                (false, None) => {
                    return Err(Error::validation(format!(
                        "MPF bracket {i}: only the last bracket may be open"
                    )))
                }
                _ => {}
            }
            if i > 0 {
                let prev = brackets[i - 1];
                if b.coefficient < prev.coefficient {
                    return Err(Error::validation(format!(
                        "MPF bracket {i}: coefficients must be non-decreasing"
                    )));
                }
                if let (Some(p), Some(c)) = (prev.max_population, b.max_population) {
                    if c <= p {
                        return Err(Error::validation(format!(
                            "MPF bracket {i}: bounds must be strictly ascending"
                        )));
                    }
                }
            }
        }
        Ok(Self { brackets, lookup })
    }

    pub fn with_lookup(mut self, lookup: MpfLookup) -> Self {
        self.lookup = lookup;
        self
    }

    pub fn lookup(&self) -> MpfLookup {
        self.lookup
    }

    pub fn brackets(&self) -> &[MpfBracket] {
        &self.brackets
    }

    /// Reads `max_population,coefficient` rows; the last row leaves
    /// `max_population` empty.
    pub fn from_csv_reader<R: Read>(reader: R, lookup: MpfLookup) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut brackets = Vec::new();
        for row in rdr.deserialize::<MpfRow>() {
            let row = row?;
            brackets.push(MpfBracket {
                max_population: row.max_population,
                coefficient: row.coefficient,
            });
        }
        Self::new(brackets, lookup)
    }

    pub fn load(path: &Path, lookup: MpfLookup) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?, lookup)
    }

    /// Coefficient for a (real-scale) population.
    pub fn coefficient(&self, population: f64) -> f64 {
        match self.lookup {
            MpfLookup::Step => self
                .brackets
                .iter()
                .find(|b| b.max_population.is_none_or(|m| population <= m as f64))
                .map(|b| b.coefficient)
                .unwrap_or(self.brackets[self.brackets.len() - 1].coefficient),
            MpfLookup::Linear => self.interpolated(population),
        }
    }

    fn anchors(&self) -> Vec<(f64, f64)> {
        let mut pts: Vec<(f64, f64)> = self
            .brackets
            .iter()
            .filter_map(|b| b.max_population.map(|m| (m as f64, b.coefficient)))
            .collect();
        let top = self.brackets[self.brackets.len() - 1].coefficient;
        // The open bracket is reached one bracket-width beyond the last bound.
        let anchor = match pts.as_slice() {
            [] => None,
            [only] => Some(only.0 * 2.0),
            [.., a, b] => Some(b.0 + (b.0 - a.0)),
        };
        if let Some(x) = anchor {
            pts.push((x, top));
        }
        pts
    }

    fn interpolated(&self, population: f64) -> f64 {
        let pts = self.anchors();
        if pts.is_empty() {
            return self.brackets[0].coefficient;
        }
        if population <= pts[0].0 {
            return pts[0].1;
        }
        for w in pts.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if population <= x1 {
                return y0 + (y1 - y0) * (population - x0) / (x1 - x0);
            }
        }
        pts[pts.len() - 1].1
    }
}

/// Population-proportional shares that sum to exactly 1.
pub fn equal_shares(populations: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = populations.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("equal shares need a positive total population"));
    }
    let shares = populations.iter().map(|p| p / total).collect();
    Ok(close_to_one(shares))
}

/// Shares proportional to each municipality's bracket coefficient.
pub fn mpf_shares(populations: &[f64], table: &MpfTable) -> Vec<f64> {
    let coefs: Vec<f64> = populations.iter().map(|&p| table.coefficient(p)).collect();
    let total: f64 = coefs.iter().sum();
    close_to_one(coefs.into_iter().map(|c| c / total).collect())
}

/// Pushes the rounding residue onto the largest share.
fn close_to_one(mut shares: Vec<f64>) -> Vec<f64> {
    if shares.is_empty() {
        return shares;
    }
    let sum: f64 = shares.iter().sum();
    let residue = 1.0 - sum;
    if residue != 0.0 {
        let largest = shares
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        shares[largest] += residue;
    }
    shares
}

/// Allocation of one month's ledger, per receiving municipality and kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub by_municipality: Vec<[Money; TaxKind::COUNT]>,
}

impl Allocation {
    pub fn total(&self, municipality: usize) -> Money {
        self.by_municipality[municipality].iter().sum()
    }

    pub fn totals(&self) -> Vec<Money> {
        (0..self.by_municipality.len()).map(|m| self.total(m)).collect()
    }

    pub fn total_by_kind(&self) -> [Money; TaxKind::COUNT] {
        let mut out = [0.0; TaxKind::COUNT];
        for row in &self.by_municipality {
            for (acc, v) in out.iter_mut().zip(row) {
                *acc += v;
            }
        }
        out
    }
}

/// Splits `pool` by `shares`, putting the rounding residue on the largest
/// share so the parts sum to `pool`.
pub fn split_pool(pool: Money, shares: &[f64]) -> Vec<Money> {
    let mut out = vec![[0.0; TaxKind::COUNT]; shares.len()];
    spread(&mut out, 0, pool, shares);
    out.iter().map(|row| row[0]).collect()
}

/// Routes the ledger through the policy using precomputed channel shares.
pub fn distribute_with_shares(
    ledger: &TaxLedger,
    policy: &DistributionPolicy,
    equal: &[f64],
    mpf: &[f64],
) -> Allocation {
    let n = ledger.municipalities();
    assert_eq!(equal.len(), n, "equal shares length");
    assert_eq!(mpf.len(), n, "mpf shares length");
    if n == 1 {
        // every channel lands on the only municipality; keep the amounts
        // exact so the fiscal case cannot matter
        return Allocation {
            by_municipality: ledger.by_origin().to_vec(),
        };
    }
    let mut by_municipality = vec![[0.0; TaxKind::COUNT]; n];
    for kind in TaxKind::ALL {
        let w = policy.weights(kind);
        let k = kind.index();
        let mut pooled_equal = 0.0;
        let mut pooled_mpf = 0.0;
        for (origin, row) in ledger.by_origin().iter().enumerate() {
            let amount = row[k];
            if amount == 0.0 {
                continue;
            }
            let local = w.local * amount;
            let eq = w.equal * amount;
            // remainder keeps the three parts summing to the collected amount
            let mp = amount - local - eq;
            by_municipality[origin][k] += local;
            pooled_equal += eq;
            pooled_mpf += mp;
        }
        if pooled_equal != 0.0 {
            spread(&mut by_municipality, k, pooled_equal, equal);
        }
        if pooled_mpf != 0.0 {
            spread(&mut by_municipality, k, pooled_mpf, mpf);
        }
    }
    Allocation { by_municipality }
}

fn spread(out: &mut [[Money; TaxKind::COUNT]], k: usize, pool: Money, shares: &[f64]) {
    let mut given = 0.0;
    let mut largest = 0;
    for (m, &s) in shares.iter().enumerate() {
        let part = pool * s;
        out[m][k] += part;
        given += part;
        if s > shares[largest] {
            largest = m;
        }
    }
    out[largest][k] += pool - given;
}

/// Routes the ledger through the policy with shares computed from
/// `populations` (real-scale) and the MPF table.
pub fn distribute(
    ledger: &TaxLedger,
    policy: &DistributionPolicy,
    populations: &[f64],
    table: &MpfTable,
) -> Result<Allocation> {
    let equal = equal_shares(populations)?;
    let mpf = mpf_shares(populations, table);
    Ok(distribute_with_shares(ledger, policy, &equal, &mpf))
}

/// A municipality's public account and its quality of life index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Treasury {
    pub municipality: usize,
    pub balance: Money,
    pub qli: f64,
    pub cumulative_invested: Money,
    /// Non-tax receipts (escheated savings, municipal house sales). These
    /// are rebated to residents and never raise the index.
    pub estate: Money,
}

/// What happened to a treasury's funds in one investment step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InvestOutcome {
    pub invested: Money,
    /// Funds with no resident population to serve; sent to the region pool.
    pub escheated: Money,
}

impl Treasury {
    pub fn new(municipality: usize) -> Self {
        Self {
            municipality,
            balance: 0.0,
            qli: 0.0,
            cumulative_invested: 0.0,
            estate: 0.0,
        }
    }

    /// Adds `allocation` and invests the whole balance, raising the index
    /// linearly in per-capita spending.
    pub fn invest(&mut self, allocation: Money, population: usize, qli_unit_cost: f64) -> InvestOutcome {
        debug_assert!(allocation >= 0.0);
        self.balance += allocation;
        if population == 0 {
            let escheated = self.balance;
            if escheated > 0.0 {
                log::debug!(
                    "municipality {} has no residents; {escheated} sent to region pool",
                    self.municipality
                );
            }
            self.balance = 0.0;
            return InvestOutcome {
                invested: 0.0,
                escheated,
            };
        }
        let invested = self.balance;
        self.qli += invested / (population as f64 * qli_unit_cost);
        self.cumulative_invested += invested;
        self.balance = 0.0;
        InvestOutcome {
            invested,
            escheated: 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ledger_with(n: usize, entries: &[(TaxKind, Money, usize)]) -> TaxLedger {
        let mut l = TaxLedger::new(0, n);
        for &(kind, amount, origin) in entries {
            l.record(TaxEvent { kind, amount, origin });
        }
        l
    }

    #[test]
    fn case_one_consumption_row() {
        let p = policy_for_case(1).unwrap();
        assert_eq!(p.weights(TaxKind::Consumption), ChannelWeights::new(0.1875, 0.8125, 0.0));
    }

    #[test]
    fn case_three_is_fully_local() {
        let p = policy_for_case(3).unwrap();
        for k in TaxKind::ALL {
            assert_eq!(p.weights(k), ChannelWeights::LOCAL);
        }
    }

    #[test]
    fn case_four_consumption_is_equal() {
        let p = policy_for_case(4).unwrap();
        assert_eq!(p.weights(TaxKind::Consumption), ChannelWeights::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn out_of_range_case_rejected() {
        assert!(policy_for_case(0).is_err());
        assert!(policy_for_case(5).is_err());
        assert!(FiscalCase::try_from(5).is_err());
    }

    #[test]
    fn case_flags() {
        use FiscalCase::*;
        let flags: Vec<_> = FiscalCase::ALL
            .iter()
            .map(|c| (c.alternative0(), c.mpf_distribution()))
            .collect();
        assert_eq!(flags, vec![(true, true), (false, true), (true, false), (false, false)]);
        assert_eq!(Case2.id(), 2);
    }

    #[test]
    fn policy_rejects_bad_rows() {
        let mut w = [ChannelWeights::LOCAL; TaxKind::COUNT];
        w[2] = ChannelWeights::new(0.5, 0.4, 0.0);
        assert!(DistributionPolicy::new(w).is_err());
        w[2] = ChannelWeights::new(1.5, -0.5, 0.0);
        assert!(DistributionPolicy::new(w).is_err());
    }

    #[test]
    fn equal_shares_examples() {
        assert_eq!(equal_shares(&[42.0]).unwrap(), vec![1.0]);
        assert_eq!(equal_shares(&[75.0, 25.0]).unwrap(), vec![0.75, 0.25]);
        let thirds = equal_shares(&[1.0, 1.0, 1.0]).unwrap();
        for s in &thirds {
            assert_relative_eq!(*s, 1.0 / 3.0, max_relative = 1e-15);
        }
        assert_eq!(thirds.iter().sum::<f64>(), 1.0);
        assert!(equal_shares(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn default_ladder_endpoints() {
        let t = MpfTable::default();
        assert_eq!(t.brackets().len(), 18);
        assert_eq!(t.coefficient(5_000.0), 0.6);
        assert_eq!(t.coefficient(10_188.0), 0.6);
        assert_eq!(t.coefficient(2_000_000.0), 4.0);
        let step = t.clone().with_lookup(MpfLookup::Step);
        assert_eq!(step.coefficient(10_189.0), 0.8);
        assert_relative_eq!(step.coefficient(156_216.0), 3.8, max_relative = 1e-12);
        assert_eq!(step.coefficient(156_217.0), 4.0);
    }

    #[test]
    fn mpf_two_extreme_municipalities() {
        let t = MpfTable::default();
        let s = mpf_shares(&[5_000.0, 500_000.0], &t);
        assert_relative_eq!(s[0], 0.6 / 4.6, max_relative = 1e-14);
        assert_relative_eq!(s[1], 4.0 / 4.6, max_relative = 1e-14);
    }

    #[test]
    fn mpf_equal_populations_equal_shares() {
        let s = mpf_shares(&[30_000.0; 4], &MpfTable::default());
        for v in s {
            assert_relative_eq!(v, 0.25, max_relative = 1e-15);
        }
    }

    #[test]
    fn mpf_small_beats_large_per_capita() {
        let pops = [10_000.0, 1_000_000.0];
        let s = mpf_shares(&pops, &MpfTable::default());
        assert!(s[0] / pops[0] > s[1] / pops[1]);
    }

    #[test]
    fn table_validation() {
        let ok = |v: Vec<(Option<u64>, f64)>| {
            MpfTable::new(
                v.into_iter()
                    .map(|(m, c)| MpfBracket { max_population: m, coefficient: c })
                    .collect(),
                MpfLookup::Step,
            )
        };
        assert!(ok(vec![(Some(10), 1.0), (None, 2.0)]).is_ok());
        assert!(ok(vec![(Some(10), 2.0), (None, 1.0)]).is_err());
        assert!(ok(vec![(Some(10), 1.0), (Some(20), 2.0)]).is_err());
        assert!(ok(vec![(Some(10), 1.0), (Some(5), 1.0), (None, 2.0)]).is_err());
        assert!(ok(vec![]).is_err());
    }

    #[test]
    fn table_from_csv() {
        let csv = "max_population,coefficient\n1000,1.0\n5000,2.0\n,3.0\n";
        let t = MpfTable::from_csv_reader(csv.as_bytes(), MpfLookup::Step).unwrap();
        assert_eq!(t.coefficient(900.0), 1.0);
        assert_eq!(t.coefficient(4000.0), 2.0);
        assert_eq!(t.coefficient(9000.0), 3.0);
        let bad = "max_population,coefficient\n1000,2.0\n,1.0\n";
        assert!(MpfTable::from_csv_reader(bad.as_bytes(), MpfLookup::Step).is_err());
    }

    #[test]
    fn case_three_routes_to_origin() {
        let l = ledger_with(
            3,
            &[
                (TaxKind::Consumption, 10.0, 0),
                (TaxKind::Company, 5.0, 2),
                (TaxKind::Property, 1.0, 2),
            ],
        );
        let a = distribute(&l, &policy_for_case(3).unwrap(), &[100.0, 200.0, 300.0], &MpfTable::default())
            .unwrap();
        assert_eq!(a.totals(), vec![10.0, 0.0, 6.0]);
    }

    #[test]
    fn case_one_consumption_split() {
        let l = ledger_with(2, &[(TaxKind::Consumption, 100.0, 0)]);
        let a = distribute(&l, &policy_for_case(1).unwrap(), &[75.0, 25.0], &MpfTable::default()).unwrap();
        assert_relative_eq!(a.total(0), 79.6875, max_relative = 1e-14);
        assert_relative_eq!(a.total(1), 20.3125, max_relative = 1e-14);
    }

    #[test]
    fn single_municipality_collapses_cases() {
        let l = ledger_with(
            1,
            &[
                (TaxKind::Consumption, 3.0, 0),
                (TaxKind::PersonalIncome, 7.0, 0),
                (TaxKind::Transmission, 0.5, 0),
                (TaxKind::Company, 2.0, 0),
                (TaxKind::Property, 0.25, 0),
            ],
        );
        let allocs: Vec<_> = FiscalCase::ALL
            .iter()
            .map(|c| distribute(&l, &c.policy(), &[1234.0], &MpfTable::default()).unwrap())
            .collect();
        for a in &allocs[1..] {
            assert_eq!(a, &allocs[0]);
        }
    }

    #[test]
    fn invest_examples() {
        let mut t = Treasury::new(0);
        t.invest(0.0, 10, 1.0);
        assert_eq!(t.qli, 0.0);
        t.invest(100.0, 100, 1.0);
        assert_eq!(t.qli, 1.0);
        assert_eq!(t.balance, 0.0);
        assert_eq!(t.cumulative_invested, 100.0);

        let mut small = Treasury::new(0);
        let mut big = Treasury::new(1);
        small.invest(60.0, 10, 2.0);
        big.invest(60.0, 20, 2.0);
        assert_relative_eq!(big.qli * 2.0, small.qli, max_relative = 1e-15);
    }

    #[test]
    fn invest_without_residents_escheats() {
        let mut t = Treasury::new(3);
        t.balance = 5.0;
        let out = t.invest(10.0, 0, 1.0);
        assert_eq!(out.escheated, 15.0);
        assert_eq!(out.invested, 0.0);
        assert_eq!(t.qli, 0.0);
        assert_eq!(t.balance, 0.0);
    }

    proptest! {
        #[test]
        fn every_case_row_sums_to_one(case in 1u8..=4) {
            let p = policy_for_case(case).unwrap();
            for k in TaxKind::ALL {
                prop_assert!((p.weights(k).sum() - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn distribution_conserves_per_kind(
            case in 1u8..=4,
            pops in proptest::collection::vec(1.0f64..2e6, 1..12),
            seedamts in proptest::collection::vec((0usize..5, 0.0f64..1e6, 0usize..64), 0..40),
        ) {
            let n = pops.len();
            let mut l = TaxLedger::new(0, n);
            for (k, amt, o) in seedamts {
                l.record(TaxEvent { kind: TaxKind::ALL[k], amount: amt, origin: o % n });
            }
            let a = distribute(&l, &policy_for_case(case).unwrap(), &pops, &MpfTable::default()).unwrap();
            let got = a.total_by_kind();
            let want = l.total_by_kind();
            for k in 0..TaxKind::COUNT {
                prop_assert!((got[k] - want[k]).abs() <= 1e-9 * want[k].max(1.0));
            }
            for row in &a.by_municipality {
                for v in row {
                    prop_assert!(*v >= -1e-9);
                }
            }
        }

        #[test]
        fn qli_never_decreases(allocs in proptest::collection::vec((0.0f64..1e4, 0usize..50), 1..30)) {
            let mut t = Treasury::new(0);
            let mut last = t.qli;
            for (a, pop) in allocs {
                t.invest(a, pop, 3.0);
                prop_assert!(t.qli >= last);
                last = t.qli;
            }
        }
    }
}
