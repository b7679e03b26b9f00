//! Before/after impact metrics of a hub over its potential trips: demand,
//! mode shift, transit ridership, car VMT with CO2, and consumer surplus.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::calibration::HubParams;
use crate::choice::{log_sum_exp, mnl_shares, nested_shares, LowerBranch, MarketId, ModeId, NestedShares};
use crate::error::Result;
use crate::hub::{AssembledLeg, HubMarket};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmissionFactor {
    pub grams_co2_per_mile: f64,
    pub days_per_year: f64,
}

impl Default for EmissionFactor {
    fn default() -> Self {
        EmissionFactor {
            grams_co2_per_mile: 400.0,
            days_per_year: 365.0,
        }
    }
}

impl EmissionFactor {
    pub fn kg_per_day(&self, miles_per_day: f64) -> f64 {
        miles_per_day * self.grams_co2_per_mile / 1000.0
    }

    pub fn annual_miles(&self, miles_per_day: f64) -> f64 {
        miles_per_day * self.days_per_year
    }

    pub fn tonnes_per_year(&self, miles_per_day: f64) -> f64 {
        self.kg_per_day(miles_per_day) * self.days_per_year / 1000.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImpactOptions {
    pub lower_branch: LowerBranch,
    pub emission: EmissionFactor,
    /// Count unimodal on-demand auto as car VMT.
    pub include_on_demand_vmt: bool,
    /// Used for car legs without a network distance.
    pub circuity: f64,
}

impl Default for ImpactOptions {
    fn default() -> Self {
        ImpactOptions {
            lower_branch: LowerBranch::Consistent,
            emission: EmissionFactor::default(),
            include_on_demand_vmt: false,
            circuity: 1.3,
        }
    }
}

/// Sum of trips over the potential-trip markets.
pub fn potential_demand(markets: &[HubMarket]) -> f64 {
    markets.iter().map(|m| m.trips_per_day).sum()
}

/// Distance shares of the two legs: network miles when both legs have them,
/// straight-line kilometres otherwise.
pub fn leg_weights(legs: &[AssembledLeg; 2]) -> [f64; 2] {
    let dist: [f64; 2] = match (legs[0].network_miles, legs[1].network_miles) {
        (Some(a), Some(b)) => [a, b],
        _ => [legs[0].line_km, legs[1].line_km],
    };
    let total = dist[0] + dist[1];
    if total > 0.0 {
        let w0 = dist[0] / total;
        [w0, 1.0 - w0]
    } else {
        [0.5, 0.5]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModeShift {
    /// Unimodal trips/day without the hub.
    pub before: BTreeMap<ModeId, f64>,
    /// Unimodal trips/day once the hub nest is offered.
    pub after: BTreeMap<ModeId, f64>,
    pub multimodal_total: f64,
    /// Distance-weighted multimodal trips/day by leg mode.
    pub multimodal_by_leg: BTreeMap<ModeId, f64>,
}

impl ModeShift {
    pub fn leg_shares(&self) -> BTreeMap<ModeId, f64> {
        self.multimodal_by_leg
            .iter()
            .map(|(m, t)| {
                let s = if self.multimodal_total > 0.0 { t / self.multimodal_total } else { 0.0 };
                (*m, s)
            })
            .collect()
    }

    pub fn total_before(&self) -> f64 {
        self.before.values().sum()
    }

    pub fn total_after(&self) -> f64 {
        self.after.values().sum::<f64>() + self.multimodal_total
    }
}

/// Leg-mode trips given a multimodal total and the leg-mode shares.
pub fn leg_trips_from_shares(total: f64, shares: &[(ModeId, f64)]) -> BTreeMap<ModeId, f64> {
    shares.iter().map(|(m, s)| (*m, total * s)).collect()
}

/// Change in bus/transit trips: bus legs of multimodal trips plus the post-hub
/// unimodal transit, minus the baseline unimodal transit.
pub fn transit_delta(shift: &ModeShift) -> f64 {
    let get = |t: &BTreeMap<ModeId, f64>, m| t.get(&m).copied().unwrap_or(0.0);
    get(&shift.multimodal_by_leg, ModeId::Bus) + get(&shift.after, ModeId::Transit) - get(&shift.before, ModeId::Transit)
}

struct MarketOutcome {
    base: Vec<f64>,
    nested: NestedShares,
}

fn outcome(m: &HubMarket, params: &HubParams, lower: LowerBranch) -> Result<MarketOutcome> {
    let uni: Vec<f64> = m.unimodal.iter().map(|(_, v)| *v).collect();
    Ok(MarketOutcome {
        base: mnl_shares(&uni)?,
        nested: nested_shares(&m.unimodal, &m.combo_utilities(), params, m.segment, lower)?,
    })
}

fn accumulate_shift(shift: &mut ModeShift, m: &HubMarket, o: &MarketOutcome) {
    let d = m.trips_per_day;
    for ((mode, _), p) in m.unimodal.iter().zip(&o.base) {
        *shift.before.entry(*mode).or_default() += d * p;
    }
    for (mode, p) in &o.nested.unimodal {
        *shift.after.entry(*mode).or_default() += d * p;
    }
    shift.multimodal_total += d * o.nested.hub;
    for (combo, (_, p)) in m.combos.iter().zip(o.nested.joint()) {
        let w = leg_weights(&combo.legs);
        for (leg, wi) in combo.legs.iter().zip(w) {
            *shift.multimodal_by_leg.entry(leg.mode).or_default() += d * p * wi;
        }
    }
}

pub fn mode_shift(markets: &[HubMarket], params: &HubParams, lower: LowerBranch) -> Result<ModeShift> {
    let mut shift = ModeShift::default();
    for m in markets {
        let o = outcome(m, params, lower)?;
        accumulate_shift(&mut shift, m, &o);
    }
    Ok(shift)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VmtSplit {
    pub driving: f64,
    pub carpool: f64,
    pub on_demand_auto: f64,
}

impl VmtSplit {
    pub fn total(&self) -> f64 {
        self.driving + self.carpool + self.on_demand_auto
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EmissionSummary {
    pub reduced_kg_per_day: f64,
    pub reduced_miles_per_year: f64,
    pub reduced_tonnes_per_year: f64,
}

impl EmissionSummary {
    pub fn from_reduced_vmt(reduced_miles_per_day: f64, factor: &EmissionFactor) -> Self {
        EmissionSummary {
            reduced_kg_per_day: factor.kg_per_day(reduced_miles_per_day),
            reduced_miles_per_year: factor.annual_miles(reduced_miles_per_day),
            reduced_tonnes_per_year: factor.tonnes_per_year(reduced_miles_per_day),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VmtReport {
    pub before: VmtSplit,
    pub after: VmtSplit,
    /// `before - after`; positive means fewer vehicle miles.
    pub reduced_miles_per_day: f64,
    pub emissions: EmissionSummary,
    /// Markets skipped for lack of a driving distance.
    pub excluded_markets: usize,
}

fn accumulate_vmt(before: &mut VmtSplit, after: &mut VmtSplit, m: &HubMarket, o: &MarketOutcome, opts: &ImpactOptions) -> bool {
    let Some(miles) = m.driving_miles else {
        return false;
    };
    let d = m.trips_per_day;
    let add = |split: &mut VmtSplit, mode: ModeId, p: f64| {
        let v = miles * d * p;
        match mode {
            ModeId::Driving => split.driving += v,
            ModeId::Carpool => split.carpool += v,
            ModeId::OnDemandAuto if opts.include_on_demand_vmt => split.on_demand_auto += v,
            _ => {}
        }
    };
    for ((mode, _), p) in m.unimodal.iter().zip(&o.base) {
        add(before, *mode, *p);
    }
    for (mode, p) in &o.nested.unimodal {
        add(after, *mode, *p);
    }
    for (combo, (_, p)) in m.combos.iter().zip(o.nested.joint()) {
        for leg in &combo.legs {
            match leg.mode {
                ModeId::Car => after.driving += d * p * leg.road_miles(opts.circuity),
                ModeId::CarShare => after.carpool += d * p * leg.road_miles(opts.circuity),
                _ => {}
            }
        }
    }
    true
}

pub fn vmt_delta(markets: &[HubMarket], params: &HubParams, opts: &ImpactOptions) -> Result<VmtReport> {
    let mut report = VmtReport::default();
    for m in markets {
        let o = outcome(m, params, opts.lower_branch)?;
        if !accumulate_vmt(&mut report.before, &mut report.after, m, &o, opts) {
            warn!("market {} has no driving distance; excluded from VMT", m.id);
            report.excluded_markets += 1;
        }
    }
    finish_vmt(&mut report, opts);
    Ok(report)
}

fn finish_vmt(report: &mut VmtReport, opts: &ImpactOptions) {
    report.reduced_miles_per_day = report.before.total() - report.after.total();
    report.emissions = EmissionSummary::from_reduced_vmt(report.reduced_miles_per_day, &opts.emission);
}

/// Per-trip surplus gain of one market, `(logsum(J+) - logsum(J)) / |beta_cost|`.
/// `None` when the cost coefficient cannot monetise utility.
pub fn market_surplus_delta(m: &HubMarket, params: &HubParams) -> Result<Option<f64>> {
    if !(m.beta_cost < 0.0) {
        return Ok(None);
    }
    if m.combos.is_empty() {
        return Ok(Some(0.0));
    }
    let uni: Vec<f64> = m.unimodal.iter().map(|(_, v)| *v).collect();
    let base = log_sum_exp(&uni)?;
    let combos: Vec<f64> = m.combos.iter().map(|c| c.utility).collect();
    let hub_v = crate::choice::nest_logsum(&combos, params.beta_hub, params.asc(m.segment))?;
    // ln(e^base + e^hub) - base, written so it never goes negative
    let gain = (hub_v - base).exp().ln_1p();
    Ok(Some(gain / m.beta_cost.abs()))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SurplusReport {
    pub per_market: Vec<(MarketId, f64)>,
    /// Compensating variation, dollars/day.
    pub cv_total: f64,
    pub cs_per_trip: f64,
    pub excluded_markets: usize,
}

pub fn consumer_surplus_delta(markets: &[HubMarket], params: &HubParams) -> Result<SurplusReport> {
    let mut report = SurplusReport::default();
    for m in markets {
        match market_surplus_delta(m, params)? {
            Some(cs) => {
                report.cv_total += m.trips_per_day * cs;
                report.per_market.push((m.id.clone(), cs));
            }
            None => {
                warn!("market {} has a non-negative cost coefficient; excluded from surplus", m.id);
                report.excluded_markets += 1;
            }
        }
    }
    let pd = potential_demand(markets);
    report.cs_per_trip = if pd > 0.0 { report.cv_total / pd } else { 0.0 };
    Ok(report)
}

/// Total compensating variation implied by a per-trip gain over a demand.
pub fn compensating_variation(cs_per_trip: f64, potential_demand: f64) -> f64 {
    cs_per_trip * potential_demand
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpactReport {
    pub hub_id: String,
    pub potential_markets: usize,
    pub potential_demand: f64,
    pub unimodal_trips_before: BTreeMap<ModeId, f64>,
    pub unimodal_trips_after: BTreeMap<ModeId, f64>,
    pub multimodal_trips: f64,
    pub multimodal_trips_by_leg: BTreeMap<ModeId, f64>,
    pub multimodal_leg_shares: BTreeMap<ModeId, f64>,
    pub transit_delta: f64,
    pub vmt: VmtReport,
    pub cs_per_trip: f64,
    pub cv_total: f64,
}

/// All four metrics for one hub in a single pass over its markets.
pub fn assess_hub(hub_id: &str, markets: &[HubMarket], params: &HubParams, opts: &ImpactOptions) -> Result<ImpactReport> {
    params.validate()?;
    let mut shift = ModeShift::default();
    let mut vmt = VmtReport::default();
    for m in markets {
        let o = outcome(m, params, opts.lower_branch)?;
        accumulate_shift(&mut shift, m, &o);
        if !accumulate_vmt(&mut vmt.before, &mut vmt.after, m, &o, opts) {
            warn!("market {} has no driving distance; excluded from VMT", m.id);
            vmt.excluded_markets += 1;
        }
    }
    finish_vmt(&mut vmt, opts);
    let cs = consumer_surplus_delta(markets, params)?;
    Ok(ImpactReport {
        hub_id: hub_id.to_string(),
        potential_markets: markets.len(),
        potential_demand: potential_demand(markets),
        transit_delta: transit_delta(&shift),
        multimodal_leg_shares: shift.leg_shares(),
        unimodal_trips_before: shift.before,
        unimodal_trips_after: shift.after,
        multimodal_trips: shift.multimodal_total,
        multimodal_trips_by_leg: shift.multimodal_by_leg,
        vmt,
        cs_per_trip: cs.cs_per_trip,
        cv_total: cs.cv_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::choice::ModeAttr;

    fn leg(mode: ModeId, km: f64, miles: Option<f64>) -> AssembledLeg {
        AssembledLeg {
            mode,
            attr: ModeAttr::timed(1.0, 0.0),
            line_km: km,
            network_miles: miles,
        }
    }

    #[test]
    fn weights() {
        let w = leg_weights(&[leg(ModeId::Car, 3.0, None), leg(ModeId::Bus, 3.0, None)]);
        assert_eq!(w, [0.5, 0.5]);
        let w = leg_weights(&[leg(ModeId::Car, 1.0, Some(6.0)), leg(ModeId::Bus, 1.0, Some(2.0))]);
        assert_eq!(w, [0.75, 0.25]);
        // mixed availability falls back to straight-line distances
        let w = leg_weights(&[leg(ModeId::Car, 1.0, Some(6.0)), leg(ModeId::Bus, 3.0, None)]);
        assert_eq!(w, [0.25, 0.75]);
        assert_eq!(leg_weights(&[leg(ModeId::Car, 0.0, None), leg(ModeId::Bus, 0.0, None)]), [0.5, 0.5]);
    }

    #[test]
    fn table_leg_split() {
        let t = leg_trips_from_shares(
            8.83,
            &[
                (ModeId::Bus, 0.5350),
                (ModeId::Car, 0.1947),
                (ModeId::BikeShare, 0.1789),
                (ModeId::WalkLeg, 0.0914),
            ],
        );
        for (m, want) in [(ModeId::Bus, 4.72), (ModeId::Car, 1.72), (ModeId::BikeShare, 1.58), (ModeId::WalkLeg, 0.81)] {
            assert!((t[&m] - want).abs() < 0.01, "{m}: {}", t[&m]);
        }
    }

    #[test]
    fn transit_delta_from_tables() {
        let shift = ModeShift {
            before: BTreeMap::from([(ModeId::Transit, 634.80)]),
            after: BTreeMap::from([(ModeId::Transit, 634.53)]),
            multimodal_total: 8.83,
            multimodal_by_leg: BTreeMap::from([(ModeId::Bus, 4.72)]),
        };
        assert!((transit_delta(&shift) - 4.45).abs() < 0.01);
        assert_eq!(transit_delta(&ModeShift::default()), 0.0);
    }

    #[test]
    fn emission_arithmetic() {
        let f = EmissionFactor::default();
        let e = EmissionSummary::from_reduced_vmt(55.83, &f);
        assert!((e.reduced_kg_per_day - 22.332).abs() < 1e-9);
        assert!((e.reduced_miles_per_year - 20377.95).abs() < 1e-6);
        assert!((e.reduced_tonnes_per_year - 8.151).abs() < 1e-3);
        assert_eq!(EmissionSummary::from_reduced_vmt(0.0, &f), EmissionSummary::default());
    }

    #[test]
    fn cv_from_per_trip() {
        assert!((compensating_variation(0.1950, 20511.0) - 4000.0).abs() < 5.0);
        assert!((compensating_variation(0.3185, 5470.0) - 1742.0).abs() < 2.0);
    }
}
