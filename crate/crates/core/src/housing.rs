//! Hedonic real-estate market and property taxation.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::economy::TaxRates;
use crate::engine::SimulationState;
use crate::fiscal::{Money, TaxEvent, TaxKind};
use crate::ids::{FamilyId, HouseId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct House {
    pub id: HouseId,
    pub municipality: usize,
    pub location: [f64; 2],
    pub size: f64,
    pub quality: f64,
    /// `None` means municipal stock.
    pub owner: Option<FamilyId>,
    pub occupant: Option<FamilyId>,
    pub last_transaction_price: Money,
}

impl House {
    pub fn is_vacant(&self) -> bool {
        self.occupant.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HousingParams {
    /// Monthly probability that a family with savings enters as a buyer.
    pub market_entry_rate: f64,
    /// Price per unit of size x quality at zero quality of life.
    pub hedonic_base: Money,
    pub qli_elasticity: f64,
    /// Share of savings a buyer offers.
    pub offer_fraction: f64,
}

impl Default for HousingParams {
    fn default() -> Self {
        Self {
            market_entry_rate: 0.05,
            hedonic_base: 2000.0,
            qli_elasticity: 1.0,
            offer_fraction: 0.9,
        }
    }
}

impl HousingParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.market_entry_rate) {
            return Err("housing.market_entry_rate must lie in [0, 1]".into());
        }
        if !(self.hedonic_base > 0.0) {
            return Err("housing.hedonic_base must be positive".into());
        }
        if !(self.qli_elasticity >= 0.0) {
            return Err("housing.qli_elasticity must be non-negative".into());
        }
        if !(self.offer_fraction > 0.0 && self.offer_fraction <= 1.0) {
            return Err("housing.offer_fraction must lie in (0, 1]".into());
        }
        Ok(())
    }
}

pub fn hedonic_price(house: &House, municipality_qli: f64, params: &HousingParams) -> Money {
    params.hedonic_base * house.size * house.quality * (1.0 + params.qli_elasticity * municipality_qli)
}

/// One completed sale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transaction {
    pub house: HouseId,
    pub buyer: FamilyId,
    pub seller: Option<FamilyId>,
    pub hedonic: Money,
    pub offer: Money,
    pub price: Money,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HousingOutcome {
    pub transactions: Vec<Transaction>,
    pub events: Vec<TaxEvent>,
    pub buyers: usize,
}

/// Monthly market: sampled buyers, in random order, take the cheapest vacant
/// listing they can afford at the midpoint between hedonic price and offer.
/// A municipality's last vacant unit is never sold. Tax events are recorded
/// in the state's ledger and also returned.
pub fn run_housing_market<R: Rng>(
    state: &mut SimulationState,
    params: &HousingParams,
    rates: &TaxRates,
    rng: &mut R,
) -> HousingOutcome {
    let mut out = HousingOutcome::default();
    let mut buyers: Vec<usize> = Vec::new();
    for (pos, fam) in state.families.iter().enumerate() {
        let entering = rng.random::<f64>() < params.market_entry_rate;
        if entering && fam.savings > 0.0 {
            buyers.push(pos);
        }
    }
    out.buyers = buyers.len();
    if buyers.is_empty() {
        return out;
    }
    buyers.shuffle(rng);

    let qli: Vec<f64> = state.municipalities.iter().map(|m| m.treasury.qli).collect();
    let mut listings: Vec<(HouseId, Money)> = state
        .houses
        .iter()
        .filter(|h| h.is_vacant())
        .map(|h| (h.id, hedonic_price(h, qli[h.municipality], params)))
        .collect();
    if listings.is_empty() {
        return out;
    }
    listings.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut sold = vec![false; listings.len()];
    let mut vacant = vec![0usize; state.municipalities.len()];
    for h in &state.houses {
        if h.is_vacant() {
            vacant[h.municipality] += 1;
        }
    }

    for pos in buyers {
        let buyer = state.families[pos].id;
        let offer = params.offer_fraction * state.families[pos].savings;
        let old_house = state.families[pos].house;
        let old_muni = old_house.map(|h| state.houses[h.0].municipality);
        let mut chosen = None;
        for (li, &(hid, hedonic)) in listings.iter().enumerate() {
            if hedonic > offer {
                break;
            }
            if sold[li] {
                continue;
            }
            let house = &state.houses[hid.0];
            if house.owner == Some(buyer) {
                continue;
            }
            let m = house.municipality;
            let refill = usize::from(old_muni == Some(m));
            if vacant[m] + refill < 2 {
                continue;
            }
            chosen = Some(li);
            break;
        }
        let Some(li) = chosen else { continue };
        let (hid, hedonic) = listings[li];
        sold[li] = true;
        let price = (hedonic + offer) / 2.0;
        let tax = price * rates.transmission;
        let muni = state.houses[hid.0].municipality;
        let seller = state.houses[hid.0].owner;

        state.families[pos].savings -= price;
        match seller {
            Some(owner) => {
                if let Some(sp) = state.family_pos(owner) {
                    state.families[sp].savings += price - tax;
                }
            }
            None => state.municipalities[muni].treasury.estate += price - tax,
        }
        if tax > 0.0 {
            let e = TaxEvent {
                kind: TaxKind::Transmission,
                amount: tax,
                origin: muni,
            };
            state.ledger.record(e);
            out.events.push(e);
        }

        let house = &mut state.houses[hid.0];
        house.owner = Some(buyer);
        house.occupant = Some(buyer);
        house.last_transaction_price = price;
        vacant[muni] -= 1;
        if let Some(old) = old_house {
            state.houses[old.0].occupant = None;
            vacant[state.houses[old.0].municipality] += 1;
        }
        state.families[pos].house = Some(hid);
        state.families[pos].municipality = muni;
        out.transactions.push(Transaction {
            house: hid,
            buyer,
            seller,
            hedonic,
            offer,
            price,
        });
    }
    state.month_stats.housing_transactions += out.transactions.len() as u64;
    state.month_stats.transfers += out.transactions.len() as u64;
    out
}

/// Monthly property tax on every family-owned house. What the owner cannot
/// pay now accrues as arrears.
pub fn collect_property_tax(state: &mut SimulationState, params: &HousingParams, rates: &TaxRates) -> Vec<TaxEvent> {
    let monthly = rates.property_annual / 12.0;
    let mut events = Vec::new();
    if monthly <= 0.0 {
        return events;
    }
    let qli: Vec<f64> = state.municipalities.iter().map(|m| m.treasury.qli).collect();
    for hi in 0..state.houses.len() {
        let house = &state.houses[hi];
        let Some(owner) = house.owner else { continue };
        let muni = house.municipality;
        let due = hedonic_price(house, qli[muni], params) * monthly;
        let Some(fp) = state.family_pos(owner) else { continue };
        let fam = &mut state.families[fp];
        let paid = due.min(fam.savings.max(0.0));
        fam.savings -= paid;
        fam.add_arrears(muni, due - paid);
        if paid > 0.0 {
            let e = TaxEvent {
                kind: TaxKind::Property,
                amount: paid,
                origin: muni,
            };
            state.ledger.record(e);
            events.push(e);
        }
    }
    events
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::tests::tiny_state;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn house(size: f64, quality: f64) -> House {
        House {
            id: HouseId(0),
            municipality: 0,
            location: [0.0, 0.0],
            size,
            quality,
            owner: None,
            occupant: None,
            last_transaction_price: 0.0,
        }
    }

    #[test]
    fn hedonic_examples() {
        let base = HousingParams {
            hedonic_base: 100.0,
            qli_elasticity: 1.0,
            ..HousingParams::default()
        };
        assert_eq!(hedonic_price(&house(1.0, 1.0), 0.0, &base), 100.0);
        assert_relative_eq!(hedonic_price(&house(2.0, 1.5), 0.5, &base), 450.0, max_relative = 1e-15);
        let flat = HousingParams {
            qli_elasticity: 0.0,
            ..base
        };
        assert_eq!(
            hedonic_price(&house(2.0, 1.5), 0.0, &flat),
            hedonic_price(&house(2.0, 1.5), 7.0, &flat)
        );
    }

    /// tiny_state gives each family one occupied house plus one vacant
    /// municipal house; add `extra` more vacant municipal units of unit size.
    fn market_state(families: usize, extra: usize) -> SimulationState {
        let mut s = tiny_state(families);
        for _ in 0..extra {
            let id = HouseId(s.houses.len());
            s.houses.push(House { id, ..house(1.0, 1.0) });
        }
        for h in &mut s.houses {
            h.size = 1.0;
            h.quality = 1.0;
        }
        s
    }

    fn always_enter(base: Money) -> HousingParams {
        HousingParams {
            market_entry_rate: 1.0,
            hedonic_base: base,
            qli_elasticity: 0.0,
            offer_fraction: 0.8,
        }
    }

    #[test]
    fn no_vacancy_no_sales() {
        let mut s = market_state(1, 0);
        for h in &mut s.houses {
            h.occupant = Some(s.families[0].id);
        }
        s.families[0].savings = 1e6;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = run_housing_market(&mut s, &always_enter(1.0), &TaxRates::default(), &mut rng);
        assert!(out.transactions.is_empty());
    }

    #[test]
    fn midpoint_and_transmission_tax() {
        let mut s = market_state(1, 1);
        s.families[0].savings = 100.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = run_housing_market(&mut s, &always_enter(60.0), &TaxRates::default(), &mut rng);
        let t = out.transactions[0];
        assert_eq!(t.hedonic, 60.0);
        assert_eq!(t.price, 70.0);
        assert_relative_eq!(out.events[0].amount, 1.4, max_relative = 1e-15);
        assert_eq!(s.families[0].savings, 30.0);
    }

    #[test]
    fn midpoint_example_values() {
        // hedonic 100, offer 80 -> 90, tax 1.8 at 2%
        let price = (100.0 + 80.0) / 2.0;
        assert_eq!(price, 90.0);
        assert_relative_eq!(price * TaxRates::default().transmission, 1.8, max_relative = 1e-15);
    }

    #[test]
    fn unaffordable_buyer_keeps_savings() {
        let mut s = market_state(1, 2);
        s.families[0].savings = 10.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = run_housing_market(&mut s, &always_enter(1000.0), &TaxRates::default(), &mut rng);
        assert!(out.transactions.is_empty());
        assert_eq!(s.families[0].savings, 10.0);
    }

    #[test]
    fn last_vacant_unit_kept() {
        // two families, each in its own house, one vacant municipal unit
        let mut s = market_state(2, 0);
        let vacant_before = s.houses.iter().filter(|h| h.is_vacant()).count();
        assert_eq!(vacant_before, 1);
        for f in &mut s.families {
            f.savings = 1e6;
            f.house = None;
        }
        // occupy all but one house without linking families to them
        let n = s.houses.len();
        for h in &mut s.houses[..n - 1] {
            h.occupant = Some(FamilyId(999));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = run_housing_market(&mut s, &always_enter(1.0), &TaxRates::default(), &mut rng);
        assert!(out.transactions.is_empty());
    }

    #[test]
    fn municipal_sale_credits_estate() {
        let mut s = market_state(1, 1);
        s.families[0].savings = 100.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = run_housing_market(&mut s, &always_enter(60.0), &TaxRates::default(), &mut rng);
        let t = out.transactions[0];
        assert!(t.seller.is_none());
        assert_relative_eq!(s.municipalities[0].treasury.estate, 70.0 - 1.4, max_relative = 1e-15);
        let h = &s.houses[t.house.0];
        assert_eq!(h.owner, Some(s.families[0].id));
        assert_eq!(s.families[0].house, Some(t.house));
    }

    #[test]
    fn property_tax_rate_zero() {
        let mut s = market_state(2, 0);
        s.houses[0].owner = Some(s.families[0].id);
        let ev = collect_property_tax(&mut s, &HousingParams::default(), &TaxRates::zero());
        assert!(ev.is_empty());
    }

    #[test]
    fn property_tax_monthly_slice() {
        let mut s = market_state(1, 0);
        s.families[0].savings = 1e6;
        let fam = s.families[0].id;
        for h in &mut s.houses {
            h.owner = None;
        }
        s.houses[0].owner = Some(fam);
        let params = HousingParams {
            hedonic_base: 1200.0,
            qli_elasticity: 0.0,
            ..HousingParams::default()
        };
        let ev = collect_property_tax(&mut s, &params, &TaxRates::default());
        assert_eq!(ev.len(), 1);
        assert_relative_eq!(ev[0].amount, 1200.0 * 0.005 / 12.0, max_relative = 1e-15);
        assert_relative_eq!(ev[0].amount, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn municipal_vacant_house_untaxed() {
        let mut s = market_state(1, 3);
        for h in &mut s.houses {
            h.owner = None;
        }
        let ev = collect_property_tax(&mut s, &HousingParams::default(), &TaxRates::default());
        assert!(ev.is_empty());
    }

    #[test]
    fn unpaid_property_tax_becomes_arrears() {
        let mut s = market_state(1, 0);
        let fam = s.families[0].id;
        s.families[0].savings = 0.1;
        s.houses[0].owner = Some(fam);
        let params = HousingParams {
            hedonic_base: 1200.0,
            qli_elasticity: 0.0,
            ..HousingParams::default()
        };
        let ev = collect_property_tax(&mut s, &params, &TaxRates::default());
        assert_relative_eq!(ev[0].amount, 0.1, max_relative = 1e-15);
        assert_relative_eq!(s.families[0].debt(), 0.4, max_relative = 1e-12);
        assert_eq!(s.families[0].savings, 0.0);
    }
}
