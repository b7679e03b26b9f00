//! The command pipeline: loads inputs named by a manifest, runs one stage and
//! writes its artifacts plus a JSON report echoing the config and input digests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;
use serde_json::json;

use super::config::{Manifest, PipelineConfig};
use super::fixture::{generate_fixture, FixtureSpec};
use super::tables::{self, num, HubSite};
use super::{sha256_file, write_atomic, write_json};
use crate::calibration::{
    calibrate, validate_leg_counts, CalibrationResult, CalibrationTarget, HubParams, LegCountObservation, LegCountRow,
    ObservedUsage,
};
use crate::choice::Market;
use crate::error::{Error, Result};
use crate::geo::{derive_threshold, detour_ratio, haversine_km, identify_potential_trips, DetourRecord, IdentifyOptions};
use crate::hub::{build_combos, prepare_hub_markets, FareTable, Hub, HubMarket, LegContext, LegMatrices, SurveyRecord};
use crate::impact::{assess_hub, potential_demand, ImpactReport};
use crate::siting::{assign_services, cluster_stops, evaluate_candidates, rank_and_summarize, Candidate, EvaluationContext, Metric, Ranking};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    DeriveThreshold,
    IdentifyTrips,
    Calibrate,
    Assess,
    Rank,
    GenFixture,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::DeriveThreshold => "derive-threshold",
            Command::IdentifyTrips => "identify-trips",
            Command::Calibrate => "calibrate",
            Command::Assess => "assess",
            Command::Rank => "rank",
            Command::GenFixture => "gen-fixture",
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub command: Command,
    pub manifest: Option<PathBuf>,
    pub config: PipelineConfig,
    pub out_dir: PathBuf,
    pub fixture: FixtureSpec,
}

#[derive(Serialize)]
struct InputDigest {
    entry: String,
    file: String,
    sha256: String,
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    command: &'static str,
    version: &'static str,
    config: &'a PipelineConfig,
    inputs: Vec<InputDigest>,
    result: T,
}

/// Everything a stage may need, loaded on demand from the manifest.
pub struct Inputs {
    pub manifest: Manifest,
}

impl Inputs {
    pub fn new(manifest: Manifest) -> Self {
        Inputs { manifest }
    }

    pub fn markets(&self) -> Result<Vec<Market>> {
        let m = &self.manifest;
        let path = m.need(&m.markets, "markets")?;
        let taste = match &m.taste {
            Some(t) => Some(tables::load_taste(&m.resolve(t))?),
            None => None,
        };
        tables::load_markets(&path, taste.as_ref())
    }

    pub fn hub_sites(&self) -> Result<Vec<HubSite>> {
        let mut hubs = tables::load_hubs(&self.manifest.need(&self.manifest.hubs, "hubs")?)?;
        hubs.sort_by(|a, b| a.hub_id.cmp(&b.hub_id));
        Ok(hubs)
    }

    pub fn survey(&self) -> Result<Vec<SurveyRecord>> {
        tables::load_survey(&self.manifest.need(&self.manifest.survey, "survey")?)
    }

    pub fn leg_matrices(&self) -> Result<LegMatrices> {
        let mut m = LegMatrices::new();
        for p in &self.manifest.leg_matrices {
            tables::load_leg_matrices(&self.manifest.resolve(p), &mut m)?;
        }
        Ok(m)
    }

    pub fn fares(&self) -> Result<FareTable> {
        match &self.manifest.fares {
            Some(p) => tables::load_fares(&self.manifest.resolve(p)),
            None => Ok(FareTable::default()),
        }
    }

    fn digests(&self) -> Result<Vec<InputDigest>> {
        let m = &self.manifest;
        let named = [
            ("markets", &m.markets),
            ("taste", &m.taste),
            ("fares", &m.fares),
            ("stops", &m.stops),
            ("pr_lots", &m.pr_lots),
            ("survey", &m.survey),
            ("observed", &m.observed),
            ("hubs", &m.hubs),
            ("bus_counts", &m.bus_counts),
            ("params", &m.params),
        ];
        let mut out = Vec::new();
        for (entry, p) in named {
            if let Some(p) = p {
                out.push(digest(m, entry, p)?);
            }
        }
        for p in &m.leg_matrices {
            out.push(digest(m, "leg_matrices", p)?);
        }
        Ok(out)
    }
}

fn digest(m: &Manifest, entry: &str, rel: &Path) -> Result<InputDigest> {
    Ok(InputDigest {
        entry: entry.to_string(),
        file: rel.to_string_lossy().replace('\\', "/"),
        sha256: sha256_file(&m.resolve(rel))?,
    })
}

/// Detour ratios of the survey trips through their own hubs; degenerate ODs are skipped.
pub fn survey_detours(survey: &[SurveyRecord], sites: &[HubSite]) -> Result<(Vec<DetourRecord>, usize)> {
    let loc: BTreeMap<&str, _> = sites.iter().map(|h| (h.hub_id.as_str(), h.location)).collect();
    let mut records = Vec::with_capacity(survey.len());
    let mut skipped = 0;
    for r in survey {
        let hub = loc.get(r.hub_id.as_str()).ok_or_else(|| Error::Input {
            path: "survey".into(),
            message: format!("survey names unknown hub {}", r.hub_id),
        })?;
        match detour_ratio(r.origin, r.destination, *hub) {
            Ok(d) => records.push(d),
            Err(Error::DegenerateOd) => {
                warn!("survey trip at {} has coincident endpoints; skipped", r.hub_id);
                skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok((records, skipped))
}

#[derive(Clone, Debug, Serialize)]
pub struct ThresholdInfo {
    pub threshold: f64,
    pub source: &'static str,
    pub survey_records: usize,
    pub skipped_records: usize,
}

pub fn resolve_threshold(config: &PipelineConfig, survey: Option<&[SurveyRecord]>, sites: &[HubSite]) -> Result<ThresholdInfo> {
    if let Some(t) = config.threshold {
        return Ok(ThresholdInfo {
            threshold: t,
            source: "config",
            survey_records: 0,
            skipped_records: 0,
        });
    }
    let survey = survey.ok_or_else(|| Error::InvalidConfig("no threshold configured and no survey to derive one".into()))?;
    let (records, skipped) = survey_detours(survey, sites)?;
    Ok(ThresholdInfo {
        threshold: derive_threshold(&records)?,
        source: "survey",
        survey_records: records.len(),
        skipped_records: skipped,
    })
}

/// Existing hubs with their survey-derived combo sets.
pub fn build_hubs(sites: &[HubSite], survey: &[SurveyRecord]) -> Result<Vec<Hub>> {
    sites
        .iter()
        .map(|s| {
            let combos = build_combos(&s.hub_id, survey, s.services)?;
            Ok(Hub::new(s.hub_id.clone(), s.location, s.services, combos))
        })
        .collect()
}

pub fn hub_markets(markets: &[Market], hub: &Hub, threshold: f64, identify: &IdentifyOptions, legs: &LegContext<'_>) -> Result<Vec<HubMarket>> {
    let ids = identify_potential_trips(markets, hub.location, threshold, identify)?;
    prepare_hub_markets(markets, &ids, hub, legs)
}

/// Shared state of the stages that run the nested model on existing hubs.
struct HubStage {
    markets: Vec<Market>,
    hubs: Vec<Hub>,
    threshold: ThresholdInfo,
    matrices: LegMatrices,
    fares: FareTable,
}

impl HubStage {
    fn load(inputs: &Inputs, config: &PipelineConfig) -> Result<Self> {
        let sites = inputs.hub_sites()?;
        let survey = inputs.survey()?;
        Ok(HubStage {
            threshold: resolve_threshold(config, Some(&survey), &sites)?,
            hubs: build_hubs(&sites, &survey)?,
            markets: inputs.markets()?,
            matrices: inputs.leg_matrices()?,
            fares: inputs.fares()?,
        })
    }

    fn markets_for(&self, hub: &Hub, config: &PipelineConfig) -> Result<Vec<HubMarket>> {
        let ctx = LegContext {
            matrices: Some(&self.matrices),
            fares: &self.fares,
            config: &config.assembly,
        };
        hub_markets(&self.markets, hub, self.threshold.threshold, &config.identify(), &ctx)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CalibrationOutput {
    pub threshold: ThresholdInfo,
    pub init: HubParams,
    #[serde(flatten)]
    pub result: CalibrationResult,
    pub leg_counts: Vec<LegCountRow>,
}

fn run_calibration(inputs: &Inputs, config: &PipelineConfig, stage: &HubStage) -> Result<CalibrationOutput> {
    let observed = tables::load_observed(&inputs.manifest.need(&inputs.manifest.observed, "observed")?)?;
    let mut targets = Vec::with_capacity(observed.len());
    for row in &observed {
        let hub = stage
            .hubs
            .iter()
            .find(|h| h.id == row.hub_id)
            .ok_or_else(|| Error::Input {
                path: "observed".into(),
                message: format!("observation for unknown hub {}", row.hub_id),
            })?;
        let markets = stage.markets_for(hub, config)?;
        if markets.is_empty() {
            return Err(Error::NoPotentialTrips(hub.id.clone()));
        }
        let potential = row.potential_trips.unwrap_or_else(|| potential_demand(&markets));
        targets.push(CalibrationTarget {
            observed: ObservedUsage::new(hub.id.clone(), row.trips_per_day, potential)?,
            markets,
        });
    }
    let result = calibrate(&targets, &config.init, &config.calibration)?;
    let mut leg_counts = Vec::new();
    if let Some(p) = &inputs.manifest.bus_counts {
        let counts: Vec<LegCountObservation> = tables::load_bus_counts(&inputs.manifest.resolve(p))?;
        for t in &targets {
            leg_counts.extend(validate_leg_counts(&t.observed.hub_id, &t.markets, &result.params, &counts, config.lower_branch())?);
        }
    }
    Ok(CalibrationOutput {
        threshold: stage.threshold.clone(),
        init: config.init,
        result,
        leg_counts,
    })
}

fn load_or_calibrate(inputs: &Inputs, config: &PipelineConfig, stage: &HubStage) -> Result<(HubParams, &'static str)> {
    match &inputs.manifest.params {
        Some(p) => {
            let path = inputs.manifest.resolve(p);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let params: HubParams = serde_json::from_str(&text)?;
            params.validate()?;
            Ok((params, "file"))
        }
        None => {
            info!("no hub parameters in the manifest; calibrating");
            Ok((run_calibration(inputs, config, stage)?.result.params, "calibrated"))
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AssessOutput {
    pub threshold: ThresholdInfo,
    pub params: HubParams,
    pub params_source: &'static str,
    pub hubs: Vec<ImpactReport>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReferenceHub {
    pub hub_id: String,
    pub candidate_id: String,
    pub distance_m: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RankOutput {
    pub threshold: ThresholdInfo,
    pub params: HubParams,
    pub params_source: &'static str,
    pub stops: usize,
    pub candidates: usize,
    pub car_share_candidates: usize,
    pub reference_hubs: Vec<ReferenceHub>,
    #[serde(flatten)]
    pub ranking: RankingSummary,
}

#[derive(Clone, Debug, Serialize)]
pub struct RankingSummary {
    pub summaries: Vec<crate::siting::MetricSummary>,
    pub references: Vec<crate::siting::ReferencePlacement>,
    pub missing_references: Vec<String>,
    pub candidates_without_trips: usize,
}

fn nearest_candidates(sites: &[HubSite], candidates: &[Candidate]) -> Vec<ReferenceHub> {
    sites
        .iter()
        .filter_map(|s| {
            candidates
                .iter()
                .map(|c| (haversine_km(s.location, c.location), c))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(d, c)| ReferenceHub {
                    hub_id: s.hub_id.clone(),
                    candidate_id: c.candidate_id.clone(),
                    distance_m: d * 1000.0,
                })
        })
        .collect()
}

pub fn ranking_csv(candidates: &[Candidate], ranking: &Ranking) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let mut header = vec!["candidate_id", "lat", "lon", "stops", "car_share", "bike_share", "potential_markets", "no_potential_trips"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    for prefix in ["", "rank_", "pct_"] {
        header.extend(Metric::ALL.iter().map(|m| format!("{prefix}{}", m.short())));
    }
    w.write_record(&header)?;
    for (c, row) in candidates.iter().zip(&ranking.rows) {
        debug_assert_eq!(c.candidate_id, row.candidate_id);
        let m = c.metrics.unwrap_or_default();
        let mut rec = vec![
            c.candidate_id.clone(),
            num(c.location.lat),
            num(c.location.lon),
            c.member_stop_ids.len().to_string(),
            c.car_share_available.to_string(),
            c.bike_share_available.to_string(),
            m.potential_markets.to_string(),
            m.no_potential_trips.to_string(),
        ];
        rec.extend(row.values.iter().map(|v| num(*v)));
        rec.extend(row.ranks.iter().map(|r| r.to_string()));
        rec.extend(row.percentiles.iter().map(|p| num(*p)));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::io("ranking.csv", e.into_error()))
}

pub fn candidates_geojson(candidates: &[Candidate], ranking: &Ranking) -> serde_json::Value {
    let features: Vec<_> = candidates
        .iter()
        .zip(&ranking.rows)
        .map(|(c, row)| {
            let metrics: serde_json::Map<String, serde_json::Value> = Metric::ALL
                .iter()
                .enumerate()
                .flat_map(|(k, m)| {
                    [
                        (m.short().to_string(), json!(row.values[k])),
                        (format!("rank_{}", m.short()), json!(row.ranks[k])),
                    ]
                })
                .collect();
            let mut props = json!({
                "candidate_id": c.candidate_id,
                "member_stop_ids": c.member_stop_ids,
                "car_share": c.car_share_available,
                "bike_share": c.bike_share_available,
            });
            props.as_object_mut().expect("object").extend(metrics);
            json!({
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [c.location.lon, c.location.lat]},
                "properties": props,
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

fn report<'a, T: Serialize>(command: Command, config: &'a PipelineConfig, inputs: Option<&Inputs>, result: T) -> Result<Report<'a, T>> {
    Ok(Report {
        command: command.as_str(),
        version: env!("CARGO_PKG_VERSION"),
        config,
        inputs: match inputs {
            Some(i) => i.digests()?,
            None => Vec::new(),
        },
        result,
    })
}

/// Runs one command and returns the artifact paths written.
pub fn run(opts: &RunOptions) -> Result<Vec<PathBuf>> {
    let config = &opts.config;
    config.validate()?;
    let out = &opts.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    if opts.command == Command::GenFixture {
        let written = generate_fixture(out, &opts.fixture)?;
        clear_error_record(out);
        return Ok(written);
    }
    let manifest_path = opts
        .manifest
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig(format!("`{}` needs --manifest", opts.command.as_str())))?;
    let inputs = Inputs::new(Manifest::load(manifest_path)?);
    let mut written = Vec::new();
    match opts.command {
        Command::DeriveThreshold => {
            let sites = inputs.hub_sites()?;
            let survey = inputs.survey()?;
            let (records, skipped) = survey_detours(&survey, &sites)?;
            let info = ThresholdInfo {
                threshold: derive_threshold(&records)?,
                source: "survey",
                survey_records: records.len(),
                skipped_records: skipped,
            };
            let path = out.join("threshold.json");
            write_json(&path, &report(opts.command, config, Some(&inputs), info)?)?;
            written.push(path);
        }
        Command::IdentifyTrips => {
            let stage = HubStage::load(&inputs, config)?;
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
            w.write_record(["hub_id", "od_id", "segment", "trips_per_day"])?;
            let mut per_hub = BTreeMap::new();
            for hub in &stage.hubs {
                let ids = identify_potential_trips(&stage.markets, hub.location, stage.threshold.threshold, &config.identify())?;
                let mut selected: Vec<&Market> = stage.markets.iter().filter(|m| ids.contains(&m.id())).collect();
                selected.sort_by_key(|m| m.id());
                let mut pd = 0.0;
                for m in selected {
                    pd += m.trips_per_day;
                    w.write_record([hub.id.clone(), m.od_id.clone(), m.segment.to_string(), num(m.trips_per_day)])?;
                }
                per_hub.insert(hub.id.clone(), json!({"markets": ids.len(), "potential_demand": pd}));
            }
            let bytes = w.into_inner().map_err(|e| Error::io("potential_trips.csv", e.into_error()))?;
            let csv_path = out.join("potential_trips.csv");
            write_atomic(&csv_path, &bytes)?;
            let path = out.join("identify.json");
            let result = json!({"threshold": stage.threshold, "hubs": per_hub});
            write_json(&path, &report(opts.command, config, Some(&inputs), result)?)?;
            written.extend([csv_path, path]);
        }
        Command::Calibrate => {
            let stage = HubStage::load(&inputs, config)?;
            let output = run_calibration(&inputs, config, &stage)?;
            let params_path = out.join("hub_params.json");
            write_json(&params_path, &output.result.params)?;
            let path = out.join("calibration.json");
            write_json(&path, &report(opts.command, config, Some(&inputs), output)?)?;
            written.extend([params_path, path]);
        }
        Command::Assess => {
            let stage = HubStage::load(&inputs, config)?;
            let (params, params_source) = load_or_calibrate(&inputs, config, &stage)?;
            let mut hubs = Vec::with_capacity(stage.hubs.len());
            for hub in &stage.hubs {
                let markets = stage.markets_for(hub, config)?;
                hubs.push(assess_hub(&hub.id, &markets, &params, &config.impact())?);
            }
            let output = AssessOutput {
                threshold: stage.threshold.clone(),
                params,
                params_source,
                hubs,
            };
            let path = out.join("impacts.json");
            write_json(&path, &report(opts.command, config, Some(&inputs), output)?)?;
            written.push(path);
        }
        Command::Rank => {
            let stage = HubStage::load(&inputs, config)?;
            let (params, params_source) = load_or_calibrate(&inputs, config, &stage)?;
            let stops = tables::load_stops(&inputs.manifest.need(&inputs.manifest.stops, "stops")?)?;
            let lots: Vec<_> = match &inputs.manifest.pr_lots {
                Some(p) => tables::load_lots(&inputs.manifest.resolve(p))?.into_iter().map(|l| l.location).collect(),
                None => Vec::new(),
            };
            let mut candidates = cluster_stops(&stops, config.cluster_radius_m)?;
            assign_services(&mut candidates, &lots, config.lot_radius_m)?;
            let ctx = EvaluationContext {
                params: &params,
                threshold: stage.threshold.threshold,
                identify: config.identify(),
                legs: LegContext {
                    matrices: None,
                    fares: &stage.fares,
                    config: &config.assembly,
                },
                impact: config.impact(),
            };
            let evaluated = evaluate_candidates(&candidates, &stage.markets, &ctx)?;
            let sites = inputs.hub_sites()?;
            let reference_hubs = if config.reference_ids.is_empty() {
                nearest_candidates(&sites, &evaluated)
            } else {
                Vec::new()
            };
            let reference_ids: Vec<String> = if config.reference_ids.is_empty() {
                reference_hubs.iter().map(|r| r.candidate_id.clone()).collect()
            } else {
                config.reference_ids.clone()
            };
            let ranking = rank_and_summarize(&evaluated, &reference_ids, config.histogram_bins)?;

            let csv_path = out.join("ranking.csv");
            write_atomic(&csv_path, &ranking_csv(&evaluated, &ranking)?)?;
            let geo_path = out.join("candidates.geojson");
            write_json(&geo_path, &candidates_geojson(&evaluated, &ranking))?;
            let output = RankOutput {
                threshold: stage.threshold.clone(),
                params,
                params_source,
                stops: stops.len(),
                candidates: evaluated.len(),
                car_share_candidates: evaluated.iter().filter(|c| c.car_share_available).count(),
                reference_hubs,
                ranking: RankingSummary {
                    summaries: ranking.summaries,
                    references: ranking.references,
                    missing_references: ranking.missing_references,
                    candidates_without_trips: ranking.candidates_without_trips,
                },
            };
            let path = out.join("summary.json");
            write_json(&path, &report(opts.command, config, Some(&inputs), output)?)?;
            written.extend([csv_path, geo_path, path]);
        }
        Command::GenFixture => unreachable!(),
    }
    clear_error_record(out);
    Ok(written)
}

pub fn clear_error_record(out_dir: &Path) {
    let _ = std::fs::remove_file(out_dir.join("error.json"));
}

/// Machine-readable record of a failed run.
pub fn write_error_record(out_dir: &Path, command: Command, err: &Error) -> Result<PathBuf> {
    let path = out_dir.join("error.json");
    write_json(
        &path,
        &json!({
            "command": command.as_str(),
            "error": {"kind": err.kind(), "message": err.to_string()},
        }),
    )?;
    Ok(path)
}
