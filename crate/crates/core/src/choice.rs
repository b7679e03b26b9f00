//! Utilities, logit shares and logsums for unimodal and hub-multimodal alternatives.
//!
//! Each market `(segment, OD pair)` carries its own [`TasteVector`]. Unimodal
//! alternatives are scored with the parameter family of their mode; a hub
//! combo is the sum of its two leg utilities, each leg scored with the family
//! its leg mode maps to. The multimodal nest enters the upper level through
//! the usual logsum `beta_hub * ln sum exp(V / beta_hub) + asc`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calibration::HubParams;
use crate::error::{Error, Result};
use crate::geo::GeoPoint;
use crate::hub::Hub;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentId {
    NotLowIncome,
    LowIncome,
    Senior,
    Student,
}

impl SegmentId {
    pub const ALL: [SegmentId; 4] = [
        SegmentId::NotLowIncome,
        SegmentId::LowIncome,
        SegmentId::Senior,
        SegmentId::Student,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SegmentId::NotLowIncome => "not_low_income",
            SegmentId::LowIncome => "low_income",
            SegmentId::Senior => "senior",
            SegmentId::Student => "student",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SegmentId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SegmentId::ALL
            .into_iter()
            .find(|seg| seg.as_str() == s)
            .ok_or_else(|| format!("unknown segment tag {s:?}"))
    }
}

/// Unimodal modes of the pre-estimated model plus the leg modes used at hubs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeId {
    Driving,
    Transit,
    OnDemandAuto,
    Biking,
    Walking,
    Carpool,
    Bus,
    Car,
    CarShare,
    BikeShare,
    WalkLeg,
}

impl ModeId {
    pub const UNIMODAL: [ModeId; 6] = [
        ModeId::Driving,
        ModeId::Transit,
        ModeId::OnDemandAuto,
        ModeId::Biking,
        ModeId::Walking,
        ModeId::Carpool,
    ];

    pub const LEGS: [ModeId; 5] = [
        ModeId::Bus,
        ModeId::Car,
        ModeId::CarShare,
        ModeId::BikeShare,
        ModeId::WalkLeg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModeId::Driving => "driving",
            ModeId::Transit => "transit",
            ModeId::OnDemandAuto => "on_demand_auto",
            ModeId::Biking => "biking",
            ModeId::Walking => "walking",
            ModeId::Carpool => "carpool",
            ModeId::Bus => "bus",
            ModeId::Car => "car",
            ModeId::CarShare => "car_share",
            ModeId::BikeShare => "bike_share",
            ModeId::WalkLeg => "walk_leg",
        }
    }

    pub fn is_leg(self) -> bool {
        ModeId::LEGS.contains(&self)
    }

    /// Unimodal parameter family used to score this mode.
    pub fn family(self) -> ModeId {
        match self {
            ModeId::Bus => ModeId::Transit,
            ModeId::Car | ModeId::CarShare => ModeId::Driving,
            ModeId::BikeShare => ModeId::Biking,
            ModeId::WalkLeg => ModeId::Walking,
            unimodal => unimodal,
        }
    }
}

impl fmt::Display for ModeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModeId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModeId::UNIMODAL
            .into_iter()
            .chain(ModeId::LEGS)
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode tag {s:?}"))
    }
}

/// The twelve per-market taste parameters. The carpool constant is fixed at 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TasteVector {
    pub beta_auto_tt: f64,
    pub beta_trans_ivt: f64,
    pub beta_trans_at: f64,
    pub beta_trans_et: f64,
    pub beta_trans_n: f64,
    pub beta_nonveh_tt: f64,
    pub beta_cost: f64,
    pub asc_driving: f64,
    pub asc_transit: f64,
    pub asc_ondemand: f64,
    pub asc_biking: f64,
    pub asc_walking: f64,
}

impl TasteVector {
    pub const FIELD_NAMES: [&'static str; 12] = [
        "beta_auto_tt",
        "beta_trans_ivt",
        "beta_trans_at",
        "beta_trans_et",
        "beta_trans_n",
        "beta_nonveh_tt",
        "beta_cost",
        "asc_driving",
        "asc_transit",
        "asc_ondemand",
        "asc_biking",
        "asc_walking",
    ];

    pub fn zero() -> Self {
        TasteVector::from_array([0.0; 12])
    }

    pub fn to_array(&self) -> [f64; 12] {
        [
            self.beta_auto_tt,
            self.beta_trans_ivt,
            self.beta_trans_at,
            self.beta_trans_et,
            self.beta_trans_n,
            self.beta_nonveh_tt,
            self.beta_cost,
            self.asc_driving,
            self.asc_transit,
            self.asc_ondemand,
            self.asc_biking,
            self.asc_walking,
        ]
    }

    pub fn from_array(v: [f64; 12]) -> Self {
        TasteVector {
            beta_auto_tt: v[0],
            beta_trans_ivt: v[1],
            beta_trans_at: v[2],
            beta_trans_et: v[3],
            beta_trans_n: v[4],
            beta_nonveh_tt: v[5],
            beta_cost: v[6],
            asc_driving: v[7],
            asc_transit: v[8],
            asc_ondemand: v[9],
            asc_biking: v[10],
            asc_walking: v[11],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.to_array().iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidAttribute(format!(
                "{} is not finite",
                Self::FIELD_NAMES[i]
            )));
        }
        if self.beta_cost >= 0.0 {
            return Err(Error::InvalidAttribute(format!(
                "beta_cost must be negative, got {}",
                self.beta_cost
            )));
        }
        Ok(())
    }

    fn constant(&self, family: ModeId) -> f64 {
        match family {
            ModeId::Driving => self.asc_driving,
            ModeId::Transit => self.asc_transit,
            ModeId::OnDemandAuto => self.asc_ondemand,
            ModeId::Biking => self.asc_biking,
            ModeId::Walking => self.asc_walking,
            _ => 0.0,
        }
    }
}

/// Level-of-service attributes of one mode (or one leg) for one market.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeAttr {
    pub ivt_min: f64,
    pub access_min: f64,
    pub egress_min: f64,
    pub transfers: f64,
    pub cost_usd: f64,
    pub available: bool,
}

impl ModeAttr {
    pub fn new(ivt_min: f64, access_min: f64, egress_min: f64, transfers: f64, cost_usd: f64) -> Self {
        ModeAttr {
            ivt_min,
            access_min,
            egress_min,
            transfers,
            cost_usd,
            available: true,
        }
    }

    /// Travel time and cost only, for modes without access/egress structure.
    pub fn timed(ivt_min: f64, cost_usd: f64) -> Self {
        ModeAttr::new(ivt_min, 0.0, 0.0, 0.0, cost_usd)
    }

    pub fn unavailable() -> Self {
        ModeAttr {
            ivt_min: 0.0,
            access_min: 0.0,
            egress_min: 0.0,
            transfers: 0.0,
            cost_usd: 0.0,
            available: false,
        }
    }

    fn check(&self) -> Result<()> {
        let fields = [
            ("ivt_min", self.ivt_min),
            ("access_min", self.access_min),
            ("egress_min", self.egress_min),
            ("transfers", self.transfers),
            ("cost_usd", self.cost_usd),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::InvalidAttribute(format!("{name} = {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MarketId {
    pub od_id: String,
    pub segment: SegmentId,
}

impl fmt::Display for MarketId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.od_id, self.segment)
    }
}

/// One `(population segment, OD pair)` cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Market {
    pub segment: SegmentId,
    pub od_id: String,
    pub origin: GeoPoint,
    pub destination: GeoPoint,
    /// Zone keys used to look up leg travel times; default to the OD id.
    pub origin_zone: String,
    pub destination_zone: String,
    pub trips_per_day: f64,
    pub attrs: BTreeMap<ModeId, ModeAttr>,
    pub taste: TasteVector,
    /// Driving network distance of the OD pair, miles.
    pub driving_miles: Option<f64>,
}

impl Market {
    pub fn id(&self) -> MarketId {
        MarketId {
            od_id: self.od_id.clone(),
            segment: self.segment,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.trips_per_day.is_finite() && self.trips_per_day >= 0.0) {
            return Err(Error::InvalidAttribute(format!(
                "trips_per_day = {}",
                self.trips_per_day
            )));
        }
        if let Some(l) = self.driving_miles {
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::InvalidAttribute(format!("driving_miles = {l}")));
            }
        }
        let mut any = false;
        for (mode, attr) in &self.attrs {
            if mode.is_leg() {
                return Err(Error::InvalidAttribute(format!(
                    "leg mode {mode} cannot be a unimodal alternative"
                )));
            }
            if attr.available {
                attr.check()?;
                let fields = [attr.ivt_min, attr.access_min, attr.egress_min, attr.transfers, attr.cost_usd];
                if fields.iter().any(|v| *v < 0.0) {
                    return Err(Error::InvalidAttribute(format!("negative attribute for {mode}")));
                }
                any = true;
            }
        }
        if !any {
            return Err(Error::InvalidAttribute("no available mode".into()));
        }
        self.taste.validate()
    }

    /// Systematic utilities of the available unimodal modes, in mode order.
    pub fn unimodal_utilities(&self) -> Result<Vec<(ModeId, f64)>> {
        self.attrs
            .iter()
            .filter(|(_, a)| a.available)
            .map(|(m, a)| Ok((*m, systematic_utility(&self.taste, a, *m)?)))
            .collect()
    }
}

/// An `(entry leg, exit leg)` transfer pattern at a hub.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ComboId {
    pub entry: ModeId,
    pub exit: ModeId,
}

impl ComboId {
    pub fn new(entry: ModeId, exit: ModeId) -> Self {
        ComboId { entry, exit }
    }

    pub fn legs(&self) -> [ModeId; 2] {
        [self.entry, self.exit]
    }
}

impl fmt::Display for ComboId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.entry, self.exit)
    }
}

impl FromStr for ComboId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once('-')
            .ok_or_else(|| format!("combo {s:?} is not of the form entry-exit"))?;
        let entry: ModeId = a.parse()?;
        let exit: ModeId = b.parse()?;
        if !entry.is_leg() || !exit.is_leg() {
            return Err(format!("combo {s:?} must use leg modes"));
        }
        Ok(ComboId { entry, exit })
    }
}

impl Serialize for ComboId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ComboId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `V = beta . X + asc` using the parameter family of `mode`.
pub fn systematic_utility(taste: &TasteVector, attrs: &ModeAttr, mode: ModeId) -> Result<f64> {
    if !attrs.available {
        return Err(Error::ModeUnavailable(mode.to_string()));
    }
    attrs.check()?;
    let family = mode.family();
    let lvl = match family {
        ModeId::Driving | ModeId::Carpool | ModeId::OnDemandAuto => taste.beta_auto_tt * attrs.ivt_min,
        ModeId::Transit => {
            taste.beta_trans_ivt * attrs.ivt_min
                + taste.beta_trans_at * attrs.access_min
                + taste.beta_trans_et * attrs.egress_min
                + taste.beta_trans_n * attrs.transfers
        }
        ModeId::Biking | ModeId::Walking => taste.beta_nonveh_tt * attrs.ivt_min,
        _ => unreachable!("family() always returns a unimodal mode"),
    };
    let v = lvl + taste.beta_cost * attrs.cost_usd + taste.constant(family);
    if !v.is_finite() {
        return Err(Error::InvalidAttribute(format!("utility of {mode} is {v}")));
    }
    Ok(v)
}

/// Natural log of `sum exp(v)`, shifted by the maximum.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    let max = values
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() {
        return Err(Error::EmptyChoiceSet);
    }
    if !max.is_finite() {
        return Err(Error::InvalidAttribute(format!("utility {max}")));
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Multinomial logit shares.
pub fn mnl_shares(utilities: &[f64]) -> Result<Vec<f64>> {
    if utilities.is_empty() {
        return Err(Error::EmptyChoiceSet);
    }
    if let Some(v) = utilities.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidAttribute(format!("utility {v}")));
    }
    let max = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut shares: Vec<f64> = utilities.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = shares.iter().sum();
    shares.iter_mut().for_each(|s| *s /= total);
    // one renormalisation pass absorbs the rounding left by the division
    let total: f64 = shares.iter().sum();
    shares.iter_mut().for_each(|s| *s /= total);
    Ok(shares)
}

/// Utility of a hub combo: origin-to-hub leg plus hub-to-destination leg.
pub fn combo_utility(market: &Market, hub: &Hub, combo: ComboId, legs: (&ModeAttr, &ModeAttr)) -> Result<f64> {
    if !hub.combos.contains(&combo) || !legs.0.available || !legs.1.available {
        return Err(Error::ComboUnavailable(format!("{combo} at hub {}", hub.id)));
    }
    let first = systematic_utility(&market.taste, legs.0, combo.entry)?;
    let second = systematic_utility(&market.taste, legs.1, combo.exit)?;
    Ok(first + second)
}

fn check_beta_hub(beta_hub: f64) -> Result<()> {
    if !(beta_hub > 0.0 && beta_hub <= 1.0) {
        return Err(Error::InvalidNestingCoefficient(beta_hub));
    }
    Ok(())
}

/// Upper-level utility of the hub nest.
pub fn nest_logsum(combo_utilities: &[f64], beta_hub: f64, asc_hub: f64) -> Result<f64> {
    check_beta_hub(beta_hub)?;
    if combo_utilities.is_empty() {
        return Err(Error::EmptyNest);
    }
    let max = combo_utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() || combo_utilities.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidAttribute("non-finite combo utility".into()));
    }
    let sum: f64 = combo_utilities
        .iter()
        .map(|v| ((v - max) / beta_hub).exp())
        .sum();
    Ok(max + beta_hub * sum.ln() + asc_hub)
}

/// How the conditional shares inside the hub nest are scaled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowerBranch {
    /// `exp(V / beta_hub)`, consistent with the nest logsum.
    #[default]
    Consistent,
    /// `exp(V)`, ignoring the nesting coefficient.
    Literal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NestedShares {
    /// Upper-level shares of the unimodal alternatives.
    pub unimodal: Vec<(ModeId, f64)>,
    /// Upper-level share of the hub nest.
    pub hub: f64,
    /// Conditional shares within the nest.
    pub lower: Vec<(ComboId, f64)>,
    /// Nest utility, `None` when the hub offers nothing to this market.
    pub hub_utility: Option<f64>,
}

impl NestedShares {
    /// Unconditional probability of each combo.
    pub fn joint(&self) -> impl Iterator<Item = (ComboId, f64)> + '_ {
        self.lower.iter().map(move |(c, p)| (*c, self.hub * p))
    }

    pub fn unimodal_share(&self, mode: ModeId) -> f64 {
        self.unimodal
            .iter()
            .find(|(m, _)| *m == mode)
            .map_or(0.0, |(_, p)| *p)
    }
}

pub fn nested_shares(
    unimodal: &[(ModeId, f64)],
    combos: &[(ComboId, f64)],
    params: &HubParams,
    segment: SegmentId,
    lower_branch: LowerBranch,
) -> Result<NestedShares> {
    params.validate()?;
    if unimodal.is_empty() {
        return Err(Error::EmptyChoiceSet);
    }
    let mut upper: Vec<f64> = unimodal.iter().map(|(_, v)| *v).collect();
    if combos.is_empty() {
        let shares = mnl_shares(&upper)?;
        return Ok(NestedShares {
            unimodal: unimodal.iter().map(|(m, _)| *m).zip(shares).collect(),
            hub: 0.0,
            lower: Vec::new(),
            hub_utility: None,
        });
    }
    let combo_v: Vec<f64> = combos.iter().map(|(_, v)| *v).collect();
    let hub_v = nest_logsum(&combo_v, params.beta_hub, params.asc(segment))?;
    upper.push(hub_v);
    let mut shares = mnl_shares(&upper)?;
    let hub = shares.pop().unwrap_or(0.0);
    let lower = match lower_branch {
        LowerBranch::Consistent => {
            let scaled: Vec<f64> = combo_v.iter().map(|v| v / params.beta_hub).collect();
            mnl_shares(&scaled)?
        }
        LowerBranch::Literal => mnl_shares(&combo_v)?,
    };
    Ok(NestedShares {
        unimodal: unimodal.iter().map(|(m, _)| *m).zip(shares).collect(),
        hub,
        lower: combos.iter().map(|(c, _)| *c).zip(lower).collect(),
        hub_utility: Some(hub_v),
    })
}

/// Value of time in dollars per hour.
pub fn value_of_time(taste: &TasteVector) -> Result<f64> {
    if !(taste.beta_cost < 0.0) {
        return Err(Error::UndefinedVot(taste.beta_cost));
    }
    Ok(60.0 * taste.beta_auto_tt / taste.beta_cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::SegmentAscs;

    fn taste_with(f: impl FnOnce(&mut TasteVector)) -> TasteVector {
        let mut t = TasteVector::zero();
        f(&mut t);
        t
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn utility_constant_only() {
        let t = taste_with(|t| t.asc_driving = 1.0);
        let a = ModeAttr::new(33.0, 4.0, 2.0, 1.0, 7.5);
        assert_eq!(systematic_utility(&t, &a, ModeId::Driving).unwrap(), 1.0);
    }

    #[test]
    fn utility_hand_arithmetic() {
        let t = taste_with(|t| {
            t.beta_auto_tt = -0.05;
            t.beta_cost = -0.5;
            t.asc_driving = 1.0;
        });
        let a = ModeAttr::timed(20.0, 2.0);
        let v = systematic_utility(&t, &a, ModeId::Driving).unwrap();
        assert!(close(v, -1.0, 1e-12), "{v}");
    }

    #[test]
    fn carpool_is_reference() {
        let t = taste_with(|t| {
            t.asc_driving = 3.0;
            t.asc_transit = 2.0;
            t.beta_cost = -1.0;
        });
        let a = ModeAttr::timed(0.0, 0.0);
        assert_eq!(systematic_utility(&t, &a, ModeId::Carpool).unwrap(), 0.0);
    }

    #[test]
    fn transit_family_uses_all_components() {
        let t = taste_with(|t| {
            t.beta_trans_ivt = -0.02;
            t.beta_trans_at = -0.04;
            t.beta_trans_et = -0.03;
            t.beta_trans_n = -0.3;
            t.beta_cost = -0.4;
            t.asc_transit = -1.0;
        });
        let a = ModeAttr::new(15.0, 5.0, 4.0, 1.0, 1.5);
        let expected = -0.02 * 15.0 - 0.04 * 5.0 - 0.03 * 4.0 - 0.3 - 0.4 * 1.5 - 1.0;
        let v = systematic_utility(&t, &a, ModeId::Bus).unwrap();
        assert!(close(v, expected, 1e-12));
    }

    #[test]
    fn utility_errors() {
        let t = TasteVector::zero();
        let err = systematic_utility(&t, &ModeAttr::unavailable(), ModeId::Walking).unwrap_err();
        assert!(matches!(err, Error::ModeUnavailable(_)));
        let err = systematic_utility(&t, &ModeAttr::timed(f64::NAN, 0.0), ModeId::Walking).unwrap_err();
        assert!(matches!(err, Error::InvalidAttribute(_)));
    }

    #[test]
    fn leg_family_mapping() {
        assert_eq!(ModeId::Bus.family(), ModeId::Transit);
        assert_eq!(ModeId::Car.family(), ModeId::Driving);
        assert_eq!(ModeId::CarShare.family(), ModeId::Driving);
        assert_eq!(ModeId::BikeShare.family(), ModeId::Biking);
        assert_eq!(ModeId::WalkLeg.family(), ModeId::Walking);
        for m in ModeId::UNIMODAL {
            assert_eq!(m.family(), m);
        }
    }

    #[test]
    fn shares_examples() {
        assert_eq!(mnl_shares(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let s = mnl_shares(&[3f64.ln(), 0.0]).unwrap();
        assert!(close(s[0], 0.75, 1e-15) && close(s[1], 0.25, 1e-15));
        // oracle: e^1, e^2, e^3 over their sum
        let e: Vec<f64> = [1f64, 2.0, 3.0].iter().map(|v| v.exp()).collect();
        let z: f64 = e.iter().sum();
        let s = mnl_shares(&[1.0, 2.0, 3.0]).unwrap();
        for (got, want) in s.iter().zip([0.09003, 0.24473, 0.66524]) {
            assert!(close(*got, want, 1e-5));
        }
        for (got, ei) in s.iter().zip(&e) {
            assert!(close(*got, ei / z, 1e-14));
        }
        assert!(matches!(mnl_shares(&[]), Err(Error::EmptyChoiceSet)));
    }

    #[test]
    fn shares_survive_extreme_utilities() {
        let s = mnl_shares(&[-7000.0, 1000.0, 999.0]).unwrap();
        assert!(s.iter().all(|p| p.is_finite()));
        assert!(close(s.iter().sum::<f64>(), 1.0, 1e-12));
    }

    #[test]
    fn logsum_examples() {
        assert!(close(nest_logsum(&[-2.5], 0.3, 0.7).unwrap(), -1.8, 1e-12));
        assert!(close(nest_logsum(&[0.0, 0.0], 1.0, 0.0).unwrap(), 2f64.ln(), 1e-15));
        let v = nest_logsum(&[0.0, 0.0], 0.1237, 0.0).unwrap();
        assert!(close(v, 0.1237 * 2f64.ln(), 1e-15));
        assert!(close(v, 0.08574, 1e-5));
        assert!(matches!(nest_logsum(&[], 0.5, 0.0), Err(Error::EmptyNest)));
        assert!(matches!(
            nest_logsum(&[0.0], 0.0, 0.0),
            Err(Error::InvalidNestingCoefficient(_))
        ));
        assert!(matches!(
            nest_logsum(&[0.0], -0.2, 0.0),
            Err(Error::InvalidNestingCoefficient(_))
        ));
    }

    fn params(beta: f64, asc: f64) -> HubParams {
        HubParams {
            beta_hub: beta,
            asc_by_segment: SegmentAscs::uniform(asc),
        }
    }

    #[test]
    fn nested_symmetric_case() {
        let combo = ComboId::new(ModeId::Bus, ModeId::WalkLeg);
        let s = nested_shares(
            &[(ModeId::Driving, 0.0)],
            &[(combo, 0.0)],
            &params(1.0, 0.0),
            SegmentId::Student,
            LowerBranch::Consistent,
        )
        .unwrap();
        assert!(close(s.unimodal[0].1, 0.5, 1e-15));
        assert!(close(s.hub, 0.5, 1e-15));
        assert_eq!(s.lower, vec![(combo, 1.0)]);
        assert!(close(s.joint().next().unwrap().1, 0.5, 1e-15));
    }

    #[test]
    fn nested_hub_vanishes_with_large_negative_constant() {
        let combo = ComboId::new(ModeId::Bus, ModeId::WalkLeg);
        let s = nested_shares(
            &[(ModeId::Driving, 0.0), (ModeId::Transit, -1.0)],
            &[(combo, 0.0)],
            &params(0.5, -50.0),
            SegmentId::Senior,
            LowerBranch::Consistent,
        )
        .unwrap();
        assert!(s.hub < 1e-15);
    }

    #[test]
    fn nested_without_combos_is_plain_mnl() {
        let s = nested_shares(
            &[(ModeId::Driving, 0.3), (ModeId::Walking, -0.2)],
            &[],
            &params(0.5, -3.0),
            SegmentId::LowIncome,
            LowerBranch::Consistent,
        )
        .unwrap();
        assert_eq!(s.hub, 0.0);
        assert!(s.lower.is_empty());
        let flat = mnl_shares(&[0.3, -0.2]).unwrap();
        assert_eq!(s.unimodal[0].1, flat[0]);
    }

    #[test]
    fn nested_collapse_matches_flat_mnl() {
        // 3 unimodal modes, 4 combos; beta = 1, asc = 0 reduces to one flat logit
        let uni = [(ModeId::Driving, 0.4), (ModeId::Transit, -1.1), (ModeId::Walking, -2.0)];
        let combos = [
            (ComboId::new(ModeId::Bus, ModeId::Bus), -1.7),
            (ComboId::new(ModeId::Car, ModeId::Bus), -0.9),
            (ComboId::new(ModeId::WalkLeg, ModeId::Bus), -2.4),
            (ComboId::new(ModeId::BikeShare, ModeId::WalkLeg), -3.3),
        ];
        let s = nested_shares(&uni, &combos, &params(1.0, 0.0), SegmentId::Student, LowerBranch::Consistent).unwrap();
        let all: Vec<f64> = uni.iter().map(|x| x.1).chain(combos.iter().map(|x| x.1)).collect();
        let z: f64 = all.iter().map(|v| v.exp()).sum();
        for (i, (_, p)) in s.unimodal.iter().enumerate() {
            assert!(close(*p, all[i].exp() / z, 1e-12));
        }
        for (i, (_, p)) in s.joint().enumerate() {
            assert!(close(p, all[3 + i].exp() / z, 1e-12));
        }
    }

    #[test]
    fn literal_lower_branch_ignores_beta() {
        let combos = [
            (ComboId::new(ModeId::Bus, ModeId::Bus), -1.0),
            (ComboId::new(ModeId::Car, ModeId::Bus), -2.0),
        ];
        let p = params(0.25, -1.0);
        let lit = nested_shares(&[(ModeId::Driving, 0.0)], &combos, &p, SegmentId::Senior, LowerBranch::Literal).unwrap();
        let con = nested_shares(&[(ModeId::Driving, 0.0)], &combos, &p, SegmentId::Senior, LowerBranch::Consistent).unwrap();
        assert_eq!(lit.hub, con.hub);
        let e = (1f64).exp();
        assert!(close(lit.lower[0].1, e / (e + 1.0), 1e-14));
        let e4 = (4f64).exp();
        assert!(close(con.lower[0].1, e4 / (e4 + 1.0), 1e-14));
    }

    #[test]
    fn vot_examples() {
        let t = taste_with(|t| t.beta_cost = -0.3);
        assert_eq!(value_of_time(&t).unwrap(), 0.0);
        let t = taste_with(|t| {
            t.beta_auto_tt = -0.5;
            t.beta_cost = -1.0;
        });
        assert!(close(value_of_time(&t).unwrap(), 30.0, 1e-12));
        let t = taste_with(|t| {
            t.beta_auto_tt = -1.0;
            t.beta_cost = -2.0;
        });
        assert!(close(value_of_time(&t).unwrap(), 30.0, 1e-12));
        let t = taste_with(|t| t.beta_cost = 0.0);
        assert!(matches!(value_of_time(&t), Err(Error::UndefinedVot(_))));
    }

    #[test]
    fn combo_id_text_round_trip() {
        for a in ModeId::LEGS {
            for b in ModeId::LEGS {
                let c = ComboId::new(a, b);
                assert_eq!(c.to_string().parse::<ComboId>().unwrap(), c);
            }
        }
        assert!("driving-bus".parse::<ComboId>().is_err());
    }
}
