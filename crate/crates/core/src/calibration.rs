//! Observed hub-usage rates and calibration of the five hub parameters.
//!
//! The nest carries one generic nesting coefficient and one constant per
//! population segment. Calibration minimises the squared gap between the
//! predicted and observed share of potential trips that use each hub.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::choice::{log_sum_exp, nest_logsum, nested_shares, LowerBranch, ModeId, SegmentId};
use crate::error::{Error, Result};
use crate::hub::HubMarket;
use crate::optimize::{nelder_mead, projected_gradient, BoxBounds, Minimum, OptimizerOptions};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentAscs {
    pub not_low_income: f64,
    pub low_income: f64,
    pub senior: f64,
    pub student: f64,
}

impl SegmentAscs {
    pub fn uniform(v: f64) -> Self {
        SegmentAscs::from_array([v; 4])
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        SegmentAscs {
            not_low_income: v[0],
            low_income: v[1],
            senior: v[2],
            student: v[3],
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.not_low_income, self.low_income, self.senior, self.student]
    }

    pub fn get(&self, segment: SegmentId) -> f64 {
        self.to_array()[segment.index()]
    }

    pub fn set(&mut self, segment: SegmentId, v: f64) {
        let mut a = self.to_array();
        a[segment.index()] = v;
        *self = SegmentAscs::from_array(a);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HubParams {
    pub beta_hub: f64,
    pub asc_by_segment: SegmentAscs,
}

impl Default for HubParams {
    fn default() -> Self {
        HubParams {
            beta_hub: 0.5,
            asc_by_segment: SegmentAscs::uniform(-5.0),
        }
    }
}

impl HubParams {
    pub fn asc(&self, segment: SegmentId) -> f64 {
        self.asc_by_segment.get(segment)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta_hub > 0.0 && self.beta_hub <= 1.0) {
            return Err(Error::InvalidNestingCoefficient(self.beta_hub));
        }
        if self.asc_by_segment.to_array().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite hub constant".into()));
        }
        Ok(())
    }

    /// `[beta_hub, asc_not_low_income, asc_low_income, asc_senior, asc_student]`
    pub fn to_vector(&self) -> [f64; 5] {
        let a = self.asc_by_segment.to_array();
        [self.beta_hub, a[0], a[1], a[2], a[3]]
    }

    pub fn from_vector(v: [f64; 5]) -> Self {
        HubParams {
            beta_hub: v[0],
            asc_by_segment: SegmentAscs::from_array([v[1], v[2], v[3], v[4]]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservedUsage {
    pub hub_id: String,
    pub observed_trips_per_day: f64,
    pub potential_trips_per_day: f64,
    pub observed_proportion: f64,
    pub sample_rate: Option<f64>,
}

impl ObservedUsage {
    pub fn new(hub_id: impl Into<String>, trips_per_day: f64, potential_trips: f64) -> Result<Self> {
        if !(trips_per_day.is_finite() && trips_per_day >= 0.0) {
            return Err(Error::InvalidObservation(format!("trips/day = {trips_per_day}")));
        }
        if !(potential_trips.is_finite() && potential_trips > 0.0) {
            return Err(Error::InvalidObservation(format!("potential trips = {potential_trips}")));
        }
        Ok(ObservedUsage {
            hub_id: hub_id.into(),
            observed_trips_per_day: trips_per_day,
            potential_trips_per_day: potential_trips,
            observed_proportion: trips_per_day / potential_trips,
            sample_rate: None,
        })
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidObservation(format!("{name} = {v}")))
    }
}

/// Hub trips per day from a monthly backend count of one service and that
/// service's share of surveyed hub trips.
pub fn derive_observed_rate(
    hub_id: &str,
    backend_trips_per_month: f64,
    days_per_month: f64,
    service_share: f64,
    potential_trips: f64,
) -> Result<ObservedUsage> {
    positive("backend trips", backend_trips_per_month)?;
    positive("days per month", days_per_month)?;
    positive("service share", service_share)?;
    if service_share > 1.0 {
        return Err(Error::InvalidObservation(format!("service share {service_share} > 1")));
    }
    positive("potential trips", potential_trips)?;
    let trips = backend_trips_per_month / days_per_month / service_share;
    ObservedUsage::new(hub_id, trips, potential_trips)
}

/// Fraction of hub trips captured by the survey.
pub fn derive_sample_rate(survey_responses: f64, trips_per_day: f64, survey_days: f64) -> Result<f64> {
    positive("survey responses", survey_responses)?;
    positive("trips per day", trips_per_day)?;
    positive("survey days", survey_days)?;
    Ok(survey_responses / trips_per_day / survey_days)
}

/// Hub trips per day implied by a survey count and a known sample rate.
pub fn infer_trips_from_sample(
    hub_id: &str,
    survey_responses: f64,
    survey_days: f64,
    sample_rate: f64,
    potential_trips: f64,
) -> Result<ObservedUsage> {
    positive("survey responses", survey_responses)?;
    positive("survey days", survey_days)?;
    positive("sample rate", sample_rate)?;
    positive("potential trips", potential_trips)?;
    let trips = survey_responses / survey_days / sample_rate;
    let mut usage = ObservedUsage::new(hub_id, trips, potential_trips)?;
    usage.sample_rate = Some(sample_rate);
    Ok(usage)
}

/// Upper-level probability of the hub nest for one prepared market.
pub fn hub_probability(market: &HubMarket, params: &HubParams) -> Result<f64> {
    if market.combos.is_empty() {
        return Ok(0.0);
    }
    let uni: Vec<f64> = market.unimodal.iter().map(|(_, v)| *v).collect();
    let combos: Vec<f64> = market.combos.iter().map(|c| c.utility).collect();
    let base = log_sum_exp(&uni)?;
    let hub_v = nest_logsum(&combos, params.beta_hub, params.asc(market.segment))?;
    // logistic of the utility gap equals the softmax share of the nest
    let gap = hub_v - base;
    Ok(if gap >= 0.0 {
        1.0 / (1.0 + (-gap).exp())
    } else {
        let e = gap.exp();
        e / (1.0 + e)
    })
}

/// Trip-weighted mean hub-nest probability over a hub's potential trips.
pub fn predict_hub_proportion(markets: &[HubMarket], params: &HubParams) -> Result<f64> {
    params.validate()?;
    if markets.is_empty() {
        return Err(Error::NoPotentialTrips("(unnamed)".into()));
    }
    let terms: Vec<(f64, f64)> = markets
        .par_iter()
        .map(|m| Ok((m.trips_per_day * hub_probability(m, params)?, m.trips_per_day)))
        .collect::<Result<_>>()?;
    // index-ordered reduction keeps the sum independent of the thread count
    let (num, den) = terms
        .iter()
        .fold((0.0, 0.0), |(n, d), (a, b)| (n + a, d + b));
    if den <= 0.0 {
        return Err(Error::NoPotentialTrips("(zero demand)".into()));
    }
    Ok(num / den)
}

/// One hub's observation together with its prepared potential-trip markets.
#[derive(Clone, Debug)]
pub struct CalibrationTarget {
    pub observed: ObservedUsage,
    pub markets: Vec<HubMarket>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamBounds {
    pub beta_hub: (f64, f64),
    pub asc: (f64, f64),
}

impl Default for ParamBounds {
    fn default() -> Self {
        ParamBounds {
            beta_hub: (0.01, 1.0),
            asc: (-12.0, 0.0),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerMethod {
    #[default]
    NelderMead,
    ProjectedGradient,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationSettings {
    pub method: OptimizerMethod,
    pub bounds: ParamBounds,
    pub optimizer: OptimizerOptions,
    /// Weight of the L2 pull of the hub constants toward their initial values.
    pub regularization: f64,
    /// Which of `[beta_hub, asc x4]` are free; fixed entries stay at `init`.
    pub free: [bool; 5],
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings {
            method: OptimizerMethod::NelderMead,
            bounds: ParamBounds::default(),
            optimizer: OptimizerOptions::default(),
            regularization: 0.0,
            free: [true; 5],
        }
    }
}

impl CalibrationSettings {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bounds.beta_hub;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidConfig(format!("beta_hub bounds ({lo}, {hi}) must lie in (0, 1]")));
        }
        let (lo, hi) = self.bounds.asc;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidConfig(format!("asc bounds ({lo}, {hi})")));
        }
        if !(self.regularization.is_finite() && self.regularization >= 0.0) {
            return Err(Error::InvalidConfig(format!("regularization {}", self.regularization)));
        }
        if self.optimizer.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CalibrationWarning {
    /// Fewer observations than free parameters.
    RankDeficient { observations: usize, parameters: usize },
    NotConverged { iterations: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HubFit {
    pub hub_id: String,
    pub observed_proportion: f64,
    pub predicted_proportion: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub params: HubParams,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub objective_trace: Vec<f64>,
    pub hubs: Vec<HubFit>,
    pub warnings: Vec<CalibrationWarning>,
}

fn objective(targets: &[CalibrationTarget], params: &HubParams, init: &HubParams, weight: f64) -> Result<f64> {
    let mut total = 0.0;
    for t in targets {
        let r = predict_hub_proportion(&t.markets, params)? - t.observed.observed_proportion;
        total += r * r;
    }
    if weight > 0.0 {
        let pull: f64 = params
            .asc_by_segment
            .to_array()
            .iter()
            .zip(init.asc_by_segment.to_array())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        total += weight * pull;
    }
    Ok(total)
}

/// Fits the hub parameters to the observed hub-use proportions.
pub fn calibrate(targets: &[CalibrationTarget], init: &HubParams, settings: &CalibrationSettings) -> Result<CalibrationResult> {
    settings.validate()?;
    init.validate()?;
    if targets.is_empty() {
        return Err(Error::InvalidObservation("no observations to calibrate against".into()));
    }
    for t in targets {
        if t.markets.is_empty() {
            return Err(Error::NoPotentialTrips(t.observed.hub_id.clone()));
        }
    }

    let free_idx: Vec<usize> = (0..5).filter(|&i| settings.free[i]).collect();
    let mut warnings = Vec::new();
    if targets.len() < free_idx.len() {
        warn!(
            "{} observations for {} free hub parameters; the fit is not identified",
            targets.len(),
            free_idx.len()
        );
        warnings.push(CalibrationWarning::RankDeficient {
            observations: targets.len(),
            parameters: free_idx.len(),
        });
    }

    let base = init.to_vector();
    let (b, a) = (settings.bounds.beta_hub, settings.bounds.asc);
    let lower_all = [b.0, a.0, a.0, a.0, a.0];
    let upper_all = [b.1, a.1, a.1, a.1, a.1];
    let bounds = BoxBounds {
        lower: free_idx.iter().map(|&i| lower_all[i]).collect(),
        upper: free_idx.iter().map(|&i| upper_all[i]).collect(),
    };
    let expand = |x: &[f64]| {
        let mut full = base;
        for (k, &i) in free_idx.iter().enumerate() {
            full[i] = x[k];
        }
        HubParams::from_vector(full)
    };
    let x0: Vec<f64> = free_idx.iter().map(|&i| base[i]).collect();

    let mut failure = None;
    let f = |x: &[f64]| match objective(targets, &expand(x), init, settings.regularization) {
        Ok(v) => v,
        Err(e) => {
            failure.get_or_insert(e);
            f64::INFINITY
        }
    };
    let Minimum {
        x,
        iterations,
        evaluations,
        converged,
        trace,
        ..
    } = match settings.method {
        OptimizerMethod::NelderMead => nelder_mead(f, &x0, &bounds, &settings.optimizer),
        OptimizerMethod::ProjectedGradient => projected_gradient(f, &x0, &bounds, &settings.optimizer),
    };
    if let Some(e) = failure {
        return Err(e);
    }
    if !converged {
        warn!("calibration stopped after {iterations} iterations without converging");
        warnings.push(CalibrationWarning::NotConverged { iterations });
    }

    let params = expand(&x);
    let objective = objective(targets, &params, init, settings.regularization)?;
    let hubs = targets
        .iter()
        .map(|t| {
            Ok(HubFit {
                hub_id: t.observed.hub_id.clone(),
                observed_proportion: t.observed.observed_proportion,
                predicted_proportion: predict_hub_proportion(&t.markets, &params)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(CalibrationResult {
        params,
        objective,
        converged,
        iterations,
        evaluations,
        objective_trace: trace,
        hubs,
        warnings,
    })
}

/// Bus boardings (`PickUp`) or alightings (`DropOff`) at the hub stop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountDirection {
    PickUp,
    DropOff,
}

impl std::str::FromStr for CountDirection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pick_up" => Ok(CountDirection::PickUp),
            "drop_off" => Ok(CountDirection::DropOff),
            other => Err(format!("unknown count direction {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LegCountObservation {
    pub hub_id: String,
    pub direction: CountDirection,
    pub observed: f64,
    /// Unimodal transit riders using the hub stop, added to the prediction.
    pub unimodal_boardings: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LegCountRow {
    pub hub_id: String,
    pub direction: CountDirection,
    pub predicted: f64,
    pub observed: f64,
    /// `(predicted - observed) / observed` in percent; `None` when nothing was observed.
    pub percent_difference: Option<f64>,
    pub absolute_gap: f64,
}

pub fn percent_difference(predicted: f64, observed: f64) -> Option<f64> {
    (observed != 0.0).then(|| (predicted - observed) / observed * 100.0)
}

/// Expected multimodal trips that board (`PickUp`) or leave (`DropOff`) a bus at the hub.
pub fn predicted_bus_trips(markets: &[HubMarket], params: &HubParams, direction: CountDirection, lower: LowerBranch) -> Result<f64> {
    let mut total = 0.0;
    for m in markets {
        let shares = nested_shares(&m.unimodal, &m.combo_utilities(), params, m.segment, lower)?;
        for (combo, p) in shares.joint() {
            let leg = match direction {
                CountDirection::PickUp => combo.exit,
                CountDirection::DropOff => combo.entry,
            };
            if leg == ModeId::Bus {
                total += m.trips_per_day * p;
            }
        }
    }
    Ok(total)
}

pub fn validate_leg_counts(
    hub_id: &str,
    markets: &[HubMarket],
    params: &HubParams,
    ground_truth: &[LegCountObservation],
    lower: LowerBranch,
) -> Result<Vec<LegCountRow>> {
    ground_truth
        .iter()
        .filter(|g| g.hub_id == hub_id)
        .map(|g| {
            let predicted = predicted_bus_trips(markets, params, g.direction, lower)? + g.unimodal_boardings.unwrap_or(0.0);
            Ok(LegCountRow {
                hub_id: g.hub_id.clone(),
                direction: g.direction,
                predicted,
                observed: g.observed,
                percent_difference: percent_difference(predicted, g.observed),
                absolute_gap: predicted - g.observed,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observed_rate_examples() {
        let u = derive_observed_rate("cohoes", 28.0, 30.0, 0.15, 5470.0).unwrap();
        assert!((u.observed_trips_per_day - 6.22).abs() < 0.005);
        assert!((u.observed_proportion * 100.0 - 0.1137).abs() < 0.0005);
        let u = derive_observed_rate("h", 10.0, 1.0, 1.0, 10.0).unwrap();
        assert_eq!(u.observed_trips_per_day, 10.0);
        assert_eq!(u.observed_proportion, 1.0);
        let u = derive_observed_rate("h", 60.0, 30.0, 0.5, 400.0).unwrap();
        assert!((u.observed_trips_per_day - 4.0).abs() < 1e-12);
        assert!((u.observed_proportion - 0.01).abs() < 1e-15);
        assert!(derive_observed_rate("h", 28.0, 0.0, 0.15, 5470.0).is_err());
        assert!(derive_observed_rate("h", 28.0, 30.0, 1.5, 5470.0).is_err());
    }

    #[test]
    fn sample_rate_examples() {
        assert!((derive_sample_rate(18.0, 6.22, 61.0).unwrap() * 100.0 - 4.74).abs() < 0.01);
        assert_eq!(derive_sample_rate(1.0, 1.0, 1.0).unwrap(), 1.0);
        assert!((derive_sample_rate(30.0, 5.0, 60.0).unwrap() - 0.10).abs() < 1e-15);
        assert!(derive_sample_rate(18.0, 0.0, 61.0).is_err());
    }

    #[test]
    fn inferred_trip_examples() {
        let u = infer_trips_from_sample("ualbany", 25.0, 60.0, 0.0474, 20511.0).unwrap();
        assert!((u.observed_trips_per_day - 8.79).abs() < 0.01);
        assert!((u.observed_proportion * 100.0 - 0.0429).abs() < 0.0005);
        let u = infer_trips_from_sample("h", 10.0, 10.0, 1.0, 100.0).unwrap();
        assert_eq!(u.observed_trips_per_day, 1.0);
        assert!((u.observed_proportion - 0.01).abs() < 1e-15);
        let u = infer_trips_from_sample("h", 12.0, 30.0, 0.10, 800.0).unwrap();
        assert!((u.observed_trips_per_day - 4.0).abs() < 1e-12);
        assert!((u.observed_proportion - 0.005).abs() < 1e-15);
        assert!(infer_trips_from_sample("h", 12.0, 30.0, 0.0, 800.0).is_err());
    }

    #[test]
    fn percent_difference_rows() {
        assert!((percent_difference(213.0, 267.0).unwrap() + 20.2).abs() < 0.1);
        assert_eq!(percent_difference(5.0, 5.0), Some(0.0));
        assert_eq!(percent_difference(5.0, 0.0), None);
        // hand arithmetic: (110-100)/100, (45-50)/50, (0-8)/8
        let rows = [(110.0, 100.0, 10.0), (45.0, 50.0, -10.0), (0.0, 8.0, -100.0)];
        for (p, o, want) in rows {
            assert!((percent_difference(p, o).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn params_vector_round_trip() {
        let p = HubParams {
            beta_hub: 0.1237,
            asc_by_segment: SegmentAscs::from_array([-5.2682, -6.9988, -3.276, -4.7021]),
        };
        assert_eq!(HubParams::from_vector(p.to_vector()), p);
        assert_eq!(p.asc(SegmentId::Senior), -3.276);
        assert!(p.validate().is_ok());
        let bad = HubParams { beta_hub: 1.2, ..p };
        assert!(bad.validate().is_err());
    }
}
