//! Hub choice sets and leg-level level-of-service assembly.
//!
//! A hub's sub-choice set is the deduplicated set of `(entry, exit)` leg
//! pairs reported by its survey respondents, filtered by the shared services
//! the hub actually offers. Leg attributes come from precomputed zone-to-hub
//! matrices when a hub has them, otherwise from a straight-line speed model
//! (used for candidate sites that have never been surveyed).

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::choice::{systematic_utility, ComboId, Market, MarketId, ModeAttr, ModeId, SegmentId};
use crate::error::{Error, Result};
use crate::geo::{haversine_km, GeoPoint, KM_PER_MILE};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Services {
    pub car_share: bool,
    pub bike_share: bool,
}

impl Services {
    pub fn allows(&self, combo: &ComboId) -> bool {
        combo.legs().iter().all(|leg| match leg {
            ModeId::CarShare => self.car_share,
            ModeId::BikeShare => self.bike_share,
            _ => true,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hub {
    pub id: String,
    pub location: GeoPoint,
    pub car_share_available: bool,
    pub bike_share_available: bool,
    pub combos: BTreeSet<ComboId>,
}

impl Hub {
    /// Builds a hub, dropping combos that need a service it does not offer.
    pub fn new(id: impl Into<String>, location: GeoPoint, services: Services, combos: impl IntoIterator<Item = ComboId>) -> Self {
        Hub {
            id: id.into(),
            location,
            car_share_available: services.car_share,
            bike_share_available: services.bike_share,
            combos: combos.into_iter().filter(|c| services.allows(c)).collect(),
        }
    }

    pub fn services(&self) -> Services {
        Services {
            car_share: self.car_share_available,
            bike_share: self.bike_share_available,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurveyRecord {
    pub hub_id: String,
    pub origin: GeoPoint,
    pub destination: GeoPoint,
    pub entry_mode: ModeId,
    pub exit_mode: ModeId,
    pub segment: Option<SegmentId>,
    pub complete: bool,
}

/// Observed `(entry, exit)` pairs for one hub, restricted to its services.
pub fn build_combos(hub_id: &str, records: &[SurveyRecord], services: Services) -> Result<BTreeSet<ComboId>> {
    let mut seen = false;
    let mut combos = BTreeSet::new();
    for r in records.iter().filter(|r| r.hub_id == hub_id) {
        seen = true;
        if !r.entry_mode.is_leg() || !r.exit_mode.is_leg() {
            return Err(Error::InvalidAttribute(format!(
                "survey modes {}/{} are not leg modes",
                r.entry_mode, r.exit_mode
            )));
        }
        let combo = ComboId::new(r.entry_mode, r.exit_mode);
        if services.allows(&combo) {
            combos.insert(combo);
        }
    }
    if !seen {
        return Err(Error::EmptySurvey(hub_id.to_string()));
    }
    Ok(combos)
}

fn combos_of(pairs: &[(ModeId, ModeId)]) -> BTreeSet<ComboId> {
    pairs.iter().map(|&(a, b)| ComboId::new(a, b)).collect()
}

/// Combo template for sites with car share next to a park-and-ride lot (16 combos).
pub fn car_share_profile() -> BTreeSet<ComboId> {
    use ModeId::*;
    combos_of(&[
        (Bus, Bus),
        (Bus, CarShare),
        (Bus, WalkLeg),
        (Bus, BikeShare),
        (CarShare, Bus),
        (CarShare, WalkLeg),
        (CarShare, BikeShare),
        (Car, Bus),
        (Car, WalkLeg),
        (Car, CarShare),
        (Car, BikeShare),
        (BikeShare, Bus),
        (BikeShare, WalkLeg),
        (BikeShare, CarShare),
        (WalkLeg, Bus),
        (WalkLeg, CarShare),
    ])
}

/// Combo template for bike-share-only sites (9 unique combos).
pub fn standard_profile() -> BTreeSet<ComboId> {
    use ModeId::*;
    combos_of(&[
        (Bus, Bus),
        (Bus, WalkLeg),
        (Bus, BikeShare),
        (Car, Bus),
        (Car, WalkLeg),
        (Car, BikeShare),
        (BikeShare, Bus),
        (BikeShare, WalkLeg),
        (WalkLeg, Bus),
    ])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FareStep {
    /// Upper bound of the ride duration covered by this step; `None` is open-ended.
    pub up_to_min: Option<f64>,
    pub usd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FareTable {
    pub bus_fare_usd: f64,
    pub car_share_usd_per_hour: f64,
    /// Ascending step function of ride minutes.
    pub bike_share_steps: Vec<FareStep>,
}

impl Default for FareTable {
    fn default() -> Self {
        FareTable {
            bus_fare_usd: 1.50,
            car_share_usd_per_hour: 5.0,
            bike_share_steps: vec![FareStep {
                up_to_min: None,
                usd: 1.0,
            }],
        }
    }
}

impl FareTable {
    pub fn validate(&self) -> Result<()> {
        let fares = std::iter::once(self.bus_fare_usd)
            .chain(std::iter::once(self.car_share_usd_per_hour))
            .chain(self.bike_share_steps.iter().map(|s| s.usd));
        for f in fares {
            if !(f.is_finite() && f >= 0.0) {
                return Err(Error::InvalidAttribute(format!("fare {f}")));
            }
        }
        if self.bike_share_steps.is_empty() {
            return Err(Error::InvalidAttribute("empty bike-share fare schedule".into()));
        }
        Ok(())
    }

    pub fn bike_share_fare(&self, minutes: f64) -> f64 {
        self.bike_share_steps
            .iter()
            .find(|s| s.up_to_min.is_none_or(|m| minutes <= m))
            .or(self.bike_share_steps.last())
            .map_or(0.0, |s| s.usd)
    }

    pub fn car_share_fare(&self, minutes: f64) -> f64 {
        self.car_share_usd_per_hour * minutes / 60.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LegPosition {
    /// Origin zone to hub.
    ToHub,
    /// Hub to destination zone.
    FromHub,
}

impl LegPosition {
    pub fn as_str(self) -> &'static str {
        match self {
            LegPosition::ToHub => "to_hub",
            LegPosition::FromHub => "from_hub",
        }
    }
}

impl std::str::FromStr for LegPosition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "to_hub" => Ok(LegPosition::ToHub),
            "from_hub" => Ok(LegPosition::FromHub),
            other => Err(format!("unknown leg direction {other:?}")),
        }
    }
}

/// Travel time of one leg; bus legs fill access, egress and transfers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LegTime {
    pub ivt_min: f64,
    pub access_min: f64,
    pub egress_min: f64,
    pub transfers: f64,
    /// Network distance when the matrix supplies one.
    pub miles: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LegKey {
    pub hub_id: String,
    pub zone_id: String,
    pub position: LegPosition,
    pub mode: ModeId,
}

/// Precomputed zone-to-hub and hub-to-zone leg tables.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LegMatrices {
    entries: HashMap<LegKey, LegTime>,
    hubs: HashSet<String>,
}

impl LegMatrices {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: LegKey, time: LegTime) {
        self.hubs.insert(key.hub_id.clone());
        self.entries.insert(key, time);
    }

    pub fn covers(&self, hub_id: &str) -> bool {
        self.hubs.contains(hub_id)
    }

    pub fn get(&self, hub_id: &str, zone_id: &str, position: LegPosition, mode: ModeId) -> Option<&LegTime> {
        // HashMap lookup needs an owned key; the tables are small enough for this to be fine
        self.entries.get(&LegKey {
            hub_id: hub_id.to_string(),
            zone_id: zone_id.to_string(),
            position,
            mode,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in key order.
    pub fn sorted_entries(&self) -> Vec<(&LegKey, &LegTime)> {
        let mut v: Vec<_> = self.entries.iter().collect();
        v.sort_by(|a, b| a.0.cmp(b.0));
        v
    }
}

/// Straight-line fallback for hubs without matrices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LegSpeeds {
    pub walk_kmh: f64,
    pub bike_kmh: f64,
    pub car_kmh: f64,
    pub bus_kmh: f64,
    pub bus_access_min: f64,
    pub bus_egress_min: f64,
}

impl Default for LegSpeeds {
    fn default() -> Self {
        LegSpeeds {
            walk_kmh: 4.8,
            bike_kmh: 14.0,
            car_kmh: 40.0,
            bus_kmh: 20.0,
            bus_access_min: 5.0,
            bus_egress_min: 5.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssemblyConfig {
    /// Operating cost of a private car leg, dollars per mile.
    pub car_cost_per_mile: f64,
    /// Network-to-straight-line distance factor.
    pub circuity: f64,
    pub speeds: LegSpeeds,
}

impl Default for AssemblyConfig {
    fn default() -> Self {
        AssemblyConfig {
            car_cost_per_mile: 0.20,
            circuity: 1.3,
            speeds: LegSpeeds::default(),
        }
    }
}

impl AssemblyConfig {
    fn estimate(&self, km: f64, mode: ModeId) -> LegTime {
        let s = &self.speeds;
        let road_km = km * self.circuity;
        let minutes = |kmh: f64| road_km / kmh * 60.0;
        let (ivt, access, egress) = match mode {
            ModeId::Bus => (minutes(s.bus_kmh), s.bus_access_min, s.bus_egress_min),
            ModeId::Car | ModeId::CarShare => (minutes(s.car_kmh), 0.0, 0.0),
            ModeId::BikeShare => (minutes(s.bike_kmh), 0.0, 0.0),
            _ => (minutes(s.walk_kmh), 0.0, 0.0),
        };
        LegTime {
            ivt_min: ivt,
            access_min: access,
            egress_min: egress,
            transfers: 0.0,
            miles: None,
        }
    }
}

/// Where leg attributes come from during assembly.
#[derive(Clone, Copy, Debug)]
pub struct LegContext<'a> {
    pub matrices: Option<&'a LegMatrices>,
    pub fares: &'a FareTable,
    pub config: &'a AssemblyConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssembledLeg {
    pub mode: ModeId,
    pub attr: ModeAttr,
    /// Straight-line length of the leg.
    pub line_km: f64,
    pub network_miles: Option<f64>,
}

impl AssembledLeg {
    /// Driving distance of the leg: network miles, or circuity-scaled straight line.
    pub fn road_miles(&self, circuity: f64) -> f64 {
        self.network_miles
            .unwrap_or(self.line_km * circuity / KM_PER_MILE)
    }
}

fn leg_for(market: &Market, hub: &Hub, position: LegPosition, mode: ModeId, ctx: &LegContext<'_>) -> AssembledLeg {
    let (zone, endpoint) = match position {
        LegPosition::ToHub => (&market.origin_zone, market.origin),
        LegPosition::FromHub => (&market.destination_zone, market.destination),
    };
    let line_km = haversine_km(endpoint, hub.location);
    let time = match ctx.matrices {
        Some(m) if m.covers(&hub.id) => m.get(&hub.id, zone, position, mode).copied(),
        _ => Some(ctx.config.estimate(line_km, mode)),
    };
    let Some(time) = time else {
        return AssembledLeg {
            mode,
            attr: ModeAttr::unavailable(),
            line_km,
            network_miles: None,
        };
    };
    let cost = match mode {
        ModeId::Bus => ctx.fares.bus_fare_usd,
        ModeId::CarShare => ctx.fares.car_share_fare(time.ivt_min),
        ModeId::BikeShare => ctx.fares.bike_share_fare(time.ivt_min),
        ModeId::Car => {
            let miles = time
                .miles
                .unwrap_or(line_km * ctx.config.circuity / KM_PER_MILE);
            ctx.config.car_cost_per_mile * miles
        }
        _ => 0.0,
    };
    AssembledLeg {
        mode,
        attr: ModeAttr::new(time.ivt_min, time.access_min, time.egress_min, time.transfers, cost),
        line_km,
        network_miles: time.miles,
    }
}

/// Both legs of a combo with geometry; a missing matrix entry leaves a leg unavailable.
pub fn assemble_legs(market: &Market, hub: &Hub, combo: ComboId, ctx: &LegContext<'_>) -> [AssembledLeg; 2] {
    [
        leg_for(market, hub, LegPosition::ToHub, combo.entry, ctx),
        leg_for(market, hub, LegPosition::FromHub, combo.exit, ctx),
    ]
}

pub fn assemble_leg_attrs(market: &Market, hub: &Hub, combo: ComboId, ctx: &LegContext<'_>) -> (ModeAttr, ModeAttr) {
    let [a, b] = assemble_legs(market, hub, combo, ctx);
    (a.attr, b.attr)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HubCombo {
    pub combo: ComboId,
    pub utility: f64,
    pub legs: [AssembledLeg; 2],
}

/// A potential-trip market scored against one hub: everything the nested
/// model needs that does not depend on the hub parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HubMarket {
    pub id: MarketId,
    pub segment: SegmentId,
    pub trips_per_day: f64,
    pub beta_cost: f64,
    pub driving_miles: Option<f64>,
    pub unimodal: Vec<(ModeId, f64)>,
    /// Available combos only, in combo order.
    pub combos: Vec<HubCombo>,
}

impl HubMarket {
    pub fn combo_utilities(&self) -> Vec<(ComboId, f64)> {
        self.combos.iter().map(|c| (c.combo, c.utility)).collect()
    }
}

pub fn prepare_market(market: &Market, hub: &Hub, ctx: &LegContext<'_>) -> Result<HubMarket> {
    let unimodal = market.unimodal_utilities()?;
    let mut combos = Vec::with_capacity(hub.combos.len());
    for &combo in &hub.combos {
        let legs = assemble_legs(market, hub, combo, ctx);
        if !(legs[0].attr.available && legs[1].attr.available) {
            continue;
        }
        let utility = systematic_utility(&market.taste, &legs[0].attr, combo.entry)?
            + systematic_utility(&market.taste, &legs[1].attr, combo.exit)?;
        combos.push(HubCombo { combo, utility, legs });
    }
    Ok(HubMarket {
        id: market.id(),
        segment: market.segment,
        trips_per_day: market.trips_per_day,
        beta_cost: market.taste.beta_cost,
        driving_miles: market.driving_miles,
        unimodal,
        combos,
    })
}

/// Scores the markets listed in `ids` against `hub`, in id order.
pub fn prepare_hub_markets(markets: &[Market], ids: &BTreeSet<MarketId>, hub: &Hub, ctx: &LegContext<'_>) -> Result<Vec<HubMarket>> {
    let mut selected: Vec<&Market> = markets.iter().filter(|m| ids.contains(&m.id())).collect();
    selected.sort_by_key(|m| m.id());
    selected.into_iter().map(|m| prepare_market(m, hub, ctx)).collect()
}
