//! Candidate hub generation from transit stops, batch evaluation and ranking.

use std::collections::{BTreeMap, HashSet};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::HubParams;
use crate::choice::Market;
use crate::error::{Error, Result};
use crate::geo::{haversine_km, identify_potential_trips, GeoPoint, IdentifyOptions, EARTH_RADIUS_KM};
use crate::hub::{car_share_profile, prepare_hub_markets, standard_profile, Hub, LegContext, Services};
use crate::impact::{assess_hub, ImpactOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopRecord {
    pub stop_id: String,
    pub location: GeoPoint,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateMetrics {
    pub potential_markets: usize,
    pub potential_demand: f64,
    pub transit_delta: f64,
    pub reduced_vmt: f64,
    pub cv_total: f64,
    /// No market fell inside the hub's catchment.
    pub no_potential_trips: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub candidate_id: String,
    pub location: GeoPoint,
    pub member_stop_ids: Vec<String>,
    pub car_share_available: bool,
    pub bike_share_available: bool,
    pub metrics: Option<CandidateMetrics>,
}

impl Candidate {
    pub fn services(&self) -> Services {
        Services {
            car_share: self.car_share_available,
            bike_share: self.bike_share_available,
        }
    }

    /// The hub this candidate would become, with its service-profile combo set.
    pub fn to_hub(&self) -> Hub {
        let template = if self.car_share_available {
            car_share_profile()
        } else {
            standard_profile()
        };
        Hub::new(self.candidate_id.clone(), self.location, self.services(), template)
    }
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Single-linkage clusters of stops within `radius_m` of each other.
///
/// Output is sorted by candidate id, which is `cand-` plus the smallest member
/// stop id, so the result does not depend on input order.
pub fn cluster_stops(stops: &[StopRecord], radius_m: f64) -> Result<Vec<Candidate>> {
    if stops.is_empty() {
        return Err(Error::Input {
            path: "stops".into(),
            message: "no stops to cluster".into(),
        });
    }
    if !(radius_m.is_finite() && radius_m >= 0.0) {
        return Err(Error::InvalidConfig(format!("cluster radius {radius_m} m")));
    }
    let mut seen = HashSet::new();
    for s in stops {
        s.location.validate()?;
        if !seen.insert(s.stop_id.as_str()) {
            return Err(Error::Input {
                path: "stops".into(),
                message: format!("duplicate stop id {}", s.stop_id),
            });
        }
    }
    let radius_km = radius_m / 1000.0;
    // any pair within the radius differs in latitude by at most this much
    let lat_window = (radius_km / EARTH_RADIUS_KM).to_degrees() * (1.0 + 1e-9) + 1e-12;
    let mut order: Vec<usize> = (0..stops.len()).collect();
    order.sort_by(|&a, &b| stops[a].location.lat.total_cmp(&stops[b].location.lat));
    let mut dsu = DisjointSet::new(stops.len());
    for (pos, &i) in order.iter().enumerate() {
        let a = stops[i].location;
        for &j in &order[pos + 1..] {
            let b = stops[j].location;
            if b.lat - a.lat > lat_window {
                break;
            }
            if haversine_km(a, b) <= radius_km {
                dsu.union(i, j);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<&StopRecord>> = BTreeMap::new();
    for (i, s) in stops.iter().enumerate() {
        groups.entry(dsu.find(i)).or_default().push(s);
    }
    let mut out: Vec<Candidate> = groups
        .into_values()
        .map(|mut members| {
            members.sort_by(|a, b| a.stop_id.cmp(&b.stop_id));
            let n = members.len() as f64;
            let lat = members.iter().map(|s| s.location.lat).sum::<f64>() / n;
            let lon = members.iter().map(|s| s.location.lon).sum::<f64>() / n;
            Candidate {
                candidate_id: format!("cand-{}", members[0].stop_id),
                location: GeoPoint { lat, lon },
                member_stop_ids: members.iter().map(|s| s.stop_id.clone()).collect(),
                car_share_available: false,
                bike_share_available: false,
                metrics: None,
            }
        })
        .collect();
    out.sort_by(|a, b| a.candidate_id.cmp(&b.candidate_id));
    Ok(out)
}

/// Car share where a park-and-ride lot lies within `radius_m` of the centroid;
/// bike share everywhere.
pub fn assign_services(candidates: &mut [Candidate], lots: &[GeoPoint], radius_m: f64) -> Result<()> {
    for lot in lots {
        lot.validate()?;
    }
    let radius_km = radius_m / 1000.0;
    for c in candidates.iter_mut() {
        c.car_share_available = lots.iter().any(|l| haversine_km(c.location, *l) <= radius_km);
        c.bike_share_available = true;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
pub struct EvaluationContext<'a> {
    pub params: &'a HubParams,
    pub threshold: f64,
    pub identify: IdentifyOptions,
    pub legs: LegContext<'a>,
    pub impact: ImpactOptions,
}

pub fn evaluate_candidate(candidate: &Candidate, markets: &[Market], ctx: &EvaluationContext<'_>) -> Result<CandidateMetrics> {
    let ids = identify_potential_trips(markets, candidate.location, ctx.threshold, &ctx.identify)?;
    if ids.is_empty() {
        return Ok(CandidateMetrics {
            no_potential_trips: true,
            ..CandidateMetrics::default()
        });
    }
    let hub = candidate.to_hub();
    let hub_markets = prepare_hub_markets(markets, &ids, &hub, &ctx.legs)?;
    let report = assess_hub(&hub.id, &hub_markets, ctx.params, &ctx.impact)?;
    Ok(CandidateMetrics {
        potential_markets: report.potential_markets,
        potential_demand: report.potential_demand,
        transit_delta: report.transit_delta,
        reduced_vmt: report.vmt.reduced_miles_per_day,
        cv_total: report.cv_total,
        no_potential_trips: false,
    })
}

/// Evaluates every candidate in parallel; the result is sorted by candidate id.
pub fn evaluate_candidates(candidates: &[Candidate], markets: &[Market], ctx: &EvaluationContext<'_>) -> Result<Vec<Candidate>> {
    ctx.params.validate()?;
    let mut out: Vec<Candidate> = candidates
        .par_iter()
        .map(|c| {
            let metrics = evaluate_candidate(c, markets, ctx)?;
            Ok(Candidate {
                metrics: Some(metrics),
                ..c.clone()
            })
        })
        .collect::<Result<_>>()?;
    out.sort_by(|a, b| a.candidate_id.cmp(&b.candidate_id));
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    PotentialDemand,
    TransitDelta,
    ReducedVmt,
    CompensatingVariation,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::PotentialDemand,
        Metric::TransitDelta,
        Metric::ReducedVmt,
        Metric::CompensatingVariation,
    ];

    pub fn short(self) -> &'static str {
        match self {
            Metric::PotentialDemand => "pd",
            Metric::TransitDelta => "tr",
            Metric::ReducedVmt => "rv",
            Metric::CompensatingVariation => "cv",
        }
    }

    pub fn of(self, m: &CandidateMetrics) -> f64 {
        match self {
            Metric::PotentialDemand => m.potential_demand,
            Metric::TransitDelta => m.transit_delta,
            Metric::ReducedVmt => m.reduced_vmt,
            Metric::CompensatingVariation => m.cv_total,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub candidate_id: String,
    pub values: [f64; 4],
    /// 1 is best.
    pub ranks: [usize; 4],
    /// Percent of candidates strictly outperformed.
    pub percentiles: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lower: f64,
    pub upper: f64,
    pub counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: Metric,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
    pub histogram: Histogram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferencePlacement {
    pub candidate_id: String,
    pub values: [f64; 4],
    pub percentiles: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    /// Sorted by candidate id.
    pub rows: Vec<RankingRow>,
    pub summaries: Vec<MetricSummary>,
    pub references: Vec<ReferencePlacement>,
    pub missing_references: Vec<String>,
    pub candidates_without_trips: usize,
}

pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    let lower = values.iter().copied().fold(f64::INFINITY, f64::min);
    let upper = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut counts = vec![0; bins];
    if values.is_empty() {
        return Histogram {
            lower: 0.0,
            upper: 0.0,
            counts,
        };
    }
    let width = (upper - lower) / bins as f64;
    for &v in values {
        let idx = if width > 0.0 {
            (((v - lower) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[idx] += 1;
    }
    Histogram { lower, upper, counts }
}

fn summarize(metric: Metric, values: &[f64], bins: usize) -> MetricSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let h = histogram(values, bins);
    MetricSummary {
        metric,
        mean,
        sd,
        min: h.lower,
        max: h.upper,
        histogram: h,
    }
}

/// Descending ranks per metric (ties by candidate id), strict-outperformance
/// percentiles, distribution summaries and reference-hub placements.
pub fn rank_and_summarize(candidates: &[Candidate], reference_ids: &[String], bins: usize) -> Result<Ranking> {
    if candidates.is_empty() {
        return Err(Error::InvalidConfig("nothing to rank".into()));
    }
    let mut sorted: Vec<(&str, CandidateMetrics)> = Vec::with_capacity(candidates.len());
    for c in candidates {
        let m = c
            .metrics
            .ok_or_else(|| Error::InvalidConfig(format!("candidate {} has not been evaluated", c.candidate_id)))?;
        sorted.push((&c.candidate_id, m));
    }
    sorted.sort_by(|a, b| a.0.cmp(b.0));
    let n = sorted.len();
    let mut rows: Vec<RankingRow> = sorted
        .iter()
        .map(|(id, m)| RankingRow {
            candidate_id: id.to_string(),
            values: Metric::ALL.map(|k| k.of(m)),
            ranks: [0; 4],
            percentiles: [0.0; 4],
        })
        .collect();
    let mut summaries = Vec::with_capacity(4);
    for (k, metric) in Metric::ALL.into_iter().enumerate() {
        let values: Vec<f64> = rows.iter().map(|r| r.values[k]).collect();
        let mut order: Vec<usize> = (0..n).collect();
        // rows are already in id order, so a stable sort breaks ties by id
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        for (r, &i) in order.iter().enumerate() {
            rows[i].ranks[k] = r + 1;
        }
        let mut asc = values.clone();
        asc.sort_by(f64::total_cmp);
        for (i, row) in rows.iter_mut().enumerate() {
            let below = asc.partition_point(|v| *v < values[i]);
            row.percentiles[k] = 100.0 * below as f64 / n as f64;
        }
        summaries.push(summarize(metric, &values, bins));
    }
    let mut references = Vec::new();
    let mut missing_references = Vec::new();
    for id in reference_ids {
        match rows.binary_search_by(|r| r.candidate_id.as_str().cmp(id)) {
            Ok(i) => references.push(ReferencePlacement {
                candidate_id: id.clone(),
                values: rows[i].values,
                percentiles: rows[i].percentiles,
            }),
            Err(_) => {
                warn!("reference hub {id} is not among the candidates; skipped");
                missing_references.push(id.clone());
            }
        }
    }
    Ok(Ranking {
        rows,
        summaries,
        references,
        missing_references,
        candidates_without_trips: sorted.iter().filter(|(_, m)| m.no_potential_trips).count(),
    })
}
