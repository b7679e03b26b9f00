//! Deterministic synthetic region: zones, OD markets, two surveyed hubs with
//! leg matrices, transit stops, park-and-ride lots, fares and observed usage.
//!
//! Observed usage and bus counts are generated from the model itself under
//! known hub parameters, so calibration on the fixture has a known answer.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Manifest, PipelineConfig};
use super::pipeline::{build_hubs, hub_markets, resolve_threshold};
use super::tables::{self, HubSite, ObservedRow, ParkRideLot};
use super::write_atomic;
use crate::calibration::{predict_hub_proportion, predicted_bus_trips, CountDirection, HubParams, LegCountObservation, SegmentAscs};
use crate::choice::{Market, ModeAttr, ModeId, SegmentId, TasteVector};
use crate::error::Result;
use crate::geo::{haversine_km, GeoPoint, EARTH_RADIUS_KM, KM_PER_MILE};
use crate::hub::{car_share_profile, standard_profile, FareStep, FareTable, LegContext, LegKey, LegMatrices, LegPosition, LegTime, Services, SurveyRecord};
use crate::impact::potential_demand;
use crate::siting::StopRecord;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub seed: u64,
    /// Each OD pair yields one market per population segment.
    pub od_pairs: usize,
    /// Stop clusters, one siting candidate each.
    pub sites: usize,
    pub zones_per_side: usize,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            seed: 7,
            od_pairs: 300,
            sites: 40,
            zones_per_side: 10,
        }
    }
}

/// Hub parameters the observed usage is generated from.
pub fn fixture_truth() -> HubParams {
    HubParams {
        beta_hub: 0.3,
        asc_by_segment: SegmentAscs::from_array([-4.0, -5.0, -3.0, -4.0]),
    }
}

const CENTER: (f64, f64) = (42.70, -73.80);
const REGION_KM: f64 = 22.0;

fn offset(p: GeoPoint, north_km: f64, east_km: f64) -> GeoPoint {
    let dlat = (north_km / EARTH_RADIUS_KM).to_degrees();
    let dlon = (east_km / (EARTH_RADIUS_KM * p.lat.to_radians().cos())).to_degrees();
    GeoPoint {
        lat: p.lat + dlat,
        lon: p.lon + dlon,
    }
}

fn round(v: f64, places: i32) -> f64 {
    let s = 10f64.powi(places);
    (v * s).round() / s
}

fn rounded(p: GeoPoint) -> GeoPoint {
    GeoPoint {
        lat: round(p.lat, 6),
        lon: round(p.lon, 6),
    }
}

fn jitter(rng: &mut ChaCha8Rng, p: GeoPoint, km: f64) -> GeoPoint {
    offset(p, rng.gen_range(-km..=km), rng.gen_range(-km..=km))
}

fn taste_for(rng: &mut ChaCha8Rng, segment: SegmentId) -> TasteVector {
    let cost = match segment {
        SegmentId::NotLowIncome => -0.25,
        SegmentId::LowIncome => -0.6,
        SegmentId::Senior => -0.4,
        SegmentId::Student => -0.5,
    };
    let base = [-0.05, -0.03, -0.06, -0.06, -0.3, -0.08, cost, 1.0, -1.5, -2.0, -2.5, -1.0];
    let mut v = [0.0; 12];
    for (out, b) in v.iter_mut().zip(base) {
        *out = round(b * (1.0 + rng.gen_range(-0.1..0.1)), 5);
    }
    TasteVector::from_array(v)
}

fn mode_attrs(rng: &mut ChaCha8Rng, road_km: f64) -> BTreeMap<ModeId, ModeAttr> {
    let miles = road_km / KM_PER_MILE;
    let mut noise = |v: f64| round(v * (1.0 + rng.gen_range(-0.08..0.08)), 3);
    let drive = road_km / 40.0 * 60.0 + 3.0;
    let mut attrs = BTreeMap::new();
    attrs.insert(ModeId::Driving, ModeAttr::timed(noise(drive), noise(0.2 * miles + 1.0)));
    attrs.insert(ModeId::Carpool, ModeAttr::timed(noise(drive + 5.0), noise(0.1 * miles + 0.5)));
    attrs.insert(ModeId::OnDemandAuto, ModeAttr::timed(noise(drive + 2.0), noise(3.0 + 1.5 * miles)));
    let transfers = if road_km > 8.0 { 1.0 } else { 0.0 };
    attrs.insert(
        ModeId::Transit,
        ModeAttr::new(noise(road_km / 18.0 * 60.0), noise(8.0), noise(6.0), transfers, 1.5),
    );
    let mut bike = ModeAttr::timed(noise(road_km / 14.0 * 60.0), 0.0);
    bike.available = road_km < 20.0;
    attrs.insert(ModeId::Biking, bike);
    let mut walk = ModeAttr::timed(noise(road_km / 4.8 * 60.0), 0.0);
    walk.available = road_km < 6.0;
    attrs.insert(ModeId::Walking, walk);
    attrs
}

struct Region {
    zones: Vec<(String, GeoPoint)>,
    markets: Vec<Market>,
    stops: Vec<StopRecord>,
    lots: Vec<ParkRideLot>,
    hubs: Vec<HubSite>,
    survey: Vec<SurveyRecord>,
    legs: LegMatrices,
    fares: FareTable,
}

fn build_region(spec: &FixtureSpec) -> Region {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let center = GeoPoint {
        lat: CENTER.0,
        lon: CENTER.1,
    };
    let g = spec.zones_per_side.max(2);
    let step = REGION_KM / (g - 1) as f64;
    let mut zones = Vec::with_capacity(g * g);
    for r in 0..g {
        for c in 0..g {
            let p = offset(center, -REGION_KM / 2.0 + r as f64 * step, -REGION_KM / 2.0 + c as f64 * step);
            zones.push((format!("z{r:02}{c:02}"), rounded(p)));
        }
    }

    let mut markets = Vec::with_capacity(spec.od_pairs * 4);
    for i in 0..spec.od_pairs {
        let o = rng.gen_range(0..zones.len());
        let mut d = rng.gen_range(0..zones.len() - 1);
        if d >= o {
            d += 1;
        }
        let origin = rounded(jitter(&mut rng, zones[o].1, 0.5));
        let destination = rounded(jitter(&mut rng, zones[d].1, 0.5));
        let road_km = haversine_km(origin, destination) * 1.3;
        let od_id = format!("od{i:05}");
        for segment in SegmentId::ALL {
            let weight = match segment {
                SegmentId::NotLowIncome => 1.0,
                SegmentId::LowIncome => 0.4,
                SegmentId::Senior => 0.3,
                SegmentId::Student => 0.3,
            };
            markets.push(Market {
                segment,
                od_id: od_id.clone(),
                origin,
                destination,
                origin_zone: zones[o].0.clone(),
                destination_zone: zones[d].0.clone(),
                trips_per_day: round(weight * rng.gen_range(0.5..40.0), 3),
                attrs: mode_attrs(&mut rng, road_km),
                taste: taste_for(&mut rng, segment),
                driving_miles: Some(round(road_km / KM_PER_MILE, 4)),
            });
        }
    }

    // stop clusters on a jittered grid, far enough apart to stay separate
    let k = (spec.sites as f64).sqrt().ceil().max(1.0) as usize;
    let spacing = (REGION_KM - 2.0) / k as f64;
    let mut stops = Vec::new();
    let mut site_centroids = Vec::with_capacity(spec.sites);
    for s in 0..spec.sites {
        let (r, c) = (s / k, s % k);
        let anchor = offset(
            center,
            -(REGION_KM - 2.0) / 2.0 + (r as f64 + 0.5) * spacing + rng.gen_range(-0.2..0.2),
            -(REGION_KM - 2.0) / 2.0 + (c as f64 + 0.5) * spacing + rng.gen_range(-0.2..0.2),
        );
        let n = rng.gen_range(1..=3);
        let mut pts = Vec::with_capacity(n);
        for j in 0..n {
            let p = rounded(jitter(&mut rng, anchor, 0.04));
            stops.push(StopRecord {
                stop_id: format!("st{s:04}{j}"),
                location: p,
            });
            pts.push(p);
        }
        let m = pts.len() as f64;
        site_centroids.push(GeoPoint {
            lat: pts.iter().map(|p| p.lat).sum::<f64>() / m,
            lon: pts.iter().map(|p| p.lon).sum::<f64>() / m,
        });
    }

    let hub_sites = if spec.sites >= 2 {
        [spec.sites / 3, (2 * spec.sites) / 3]
    } else {
        [0, 0]
    };
    let fallback = [offset(center, 0.0, -3.0), offset(center, 0.0, 3.0)];
    let hub_loc = |i: usize| rounded(site_centroids.get(hub_sites[i]).copied().unwrap_or(fallback[i]));
    let hubs = vec![
        HubSite {
            hub_id: "campus".into(),
            location: hub_loc(0),
            services: Services {
                car_share: false,
                bike_share: true,
            },
        },
        HubSite {
            hub_id: "parkride".into(),
            location: hub_loc(1),
            services: Services {
                car_share: true,
                bike_share: true,
            },
        },
    ];

    let mut lots = vec![ParkRideLot {
        lot_id: "lot000".into(),
        location: rounded(offset(hubs[1].location, 0.15, 0.0)),
    }];
    for i in 0..spec.sites / 5 {
        let s = rng.gen_range(0..spec.sites);
        let dist = rng.gen_range(0.2..0.9);
        let ang = rng.gen_range(0.0..2.0 * PI);
        lots.push(ParkRideLot {
            lot_id: format!("lot{:03}", i + 1),
            location: rounded(offset(site_centroids[s], dist * ang.sin(), dist * ang.cos())),
        });
    }

    let mut survey = Vec::new();
    for (hub, n) in hubs.iter().zip([40, 25]) {
        let profile: Vec<_> = if hub.services.car_share {
            car_share_profile()
        } else {
            standard_profile()
        }
        .into_iter()
        .filter(|c| hub.services.allows(c))
        .collect();
        for i in 0..n {
            let theta = rng.gen_range(0.0..2.0 * PI);
            let (d1, d2) = (rng.gen_range(1.0..6.0), rng.gen_range(1.0..6.0));
            let back = theta + PI + rng.gen_range(-1.4..1.4);
            // cycle through the profile first so every combo is observed
            let combo = if i < profile.len() {
                profile[i]
            } else {
                profile[rng.gen_range(0..profile.len())]
            };
            survey.push(SurveyRecord {
                hub_id: hub.hub_id.clone(),
                origin: rounded(offset(hub.location, d1 * theta.sin(), d1 * theta.cos())),
                destination: rounded(offset(hub.location, d2 * back.sin(), d2 * back.cos())),
                entry_mode: combo.entry,
                exit_mode: combo.exit,
                segment: Some(SegmentId::ALL[rng.gen_range(0..4)]),
                complete: rng.gen_bool(0.9),
            });
        }
    }

    let mut legs = LegMatrices::new();
    for hub in &hubs {
        for (zone_id, zp) in &zones {
            let km = haversine_km(*zp, hub.location);
            let road = km * 1.3;
            for position in [LegPosition::ToHub, LegPosition::FromHub] {
                for mode in ModeId::LEGS {
                    if mode == ModeId::CarShare && !hub.services.car_share {
                        continue;
                    }
                    let f = 1.0 + rng.gen_range(-0.1..0.1);
                    let t = match mode {
                        ModeId::Bus => LegTime {
                            ivt_min: round(road / 20.0 * 60.0 * f, 3),
                            access_min: 6.0,
                            egress_min: 4.0,
                            transfers: if road > 8.0 { 1.0 } else { 0.0 },
                            miles: None,
                        },
                        ModeId::Car | ModeId::CarShare => LegTime {
                            ivt_min: round(road / 40.0 * 60.0 * f + 1.0, 3),
                            access_min: 0.0,
                            egress_min: 0.0,
                            transfers: 0.0,
                            miles: Some(round(road * f / KM_PER_MILE, 4)),
                        },
                        ModeId::BikeShare => LegTime {
                            ivt_min: round(road / 14.0 * 60.0 * f, 3),
                            access_min: 0.0,
                            egress_min: 0.0,
                            transfers: 0.0,
                            miles: None,
                        },
                        _ => LegTime {
                            ivt_min: round(road / 4.8 * 60.0 * f, 3),
                            access_min: 0.0,
                            egress_min: 0.0,
                            transfers: 0.0,
                            miles: None,
                        },
                    };
                    legs.insert(
                        LegKey {
                            hub_id: hub.hub_id.clone(),
                            zone_id: zone_id.clone(),
                            position,
                            mode,
                        },
                        t,
                    );
                }
            }
        }
    }

    let fares = FareTable {
        bike_share_steps: vec![
            FareStep {
                up_to_min: Some(30.0),
                usd: 1.0,
            },
            FareStep {
                up_to_min: None,
                usd: 3.0,
            },
        ],
        ..FareTable::default()
    };

    Region {
        zones,
        markets,
        stops,
        lots,
        hubs,
        survey,
        legs,
        fares,
    }
}

/// Observed hub use and bus counts implied by [`fixture_truth`].
fn synthesize_observations(region: &Region, rng: &mut ChaCha8Rng) -> Result<(Vec<ObservedRow>, Vec<LegCountObservation>)> {
    let config = PipelineConfig::default();
    let threshold = resolve_threshold(&config, Some(&region.survey), &region.hubs)?.threshold;
    let hubs = build_hubs(&region.hubs, &region.survey)?;
    let ctx = LegContext {
        matrices: Some(&region.legs),
        fares: &region.fares,
        config: &config.assembly,
    };
    let truth = fixture_truth();
    let mut observed = Vec::new();
    let mut counts = Vec::new();
    for hub in &hubs {
        let markets = hub_markets(&region.markets, hub, threshold, &config.identify(), &ctx)?;
        if markets.is_empty() {
            continue;
        }
        let share = predict_hub_proportion(&markets, &truth)?;
        observed.push(ObservedRow {
            hub_id: hub.id.clone(),
            trips_per_day: share * potential_demand(&markets),
            potential_trips: None,
        });
        for direction in [CountDirection::PickUp, CountDirection::DropOff] {
            let predicted = predicted_bus_trips(&markets, &truth, direction, config.lower_branch())?;
            let unimodal = round(rng.gen_range(50.0..200.0), 0);
            counts.push(LegCountObservation {
                hub_id: hub.id.clone(),
                direction,
                observed: round((predicted + unimodal) * (1.0 + rng.gen_range(-0.15..0.05)), 0),
                unimodal_boardings: Some(unimodal),
            });
        }
    }
    Ok((observed, counts))
}

/// Writes the fixture files, a manifest and a default config into `dir`.
pub fn generate_fixture(dir: &Path, spec: &FixtureSpec) -> Result<Vec<PathBuf>> {
    let region = build_region(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6f62_7365_7276_6564);
    let (observed, counts) = synthesize_observations(&region, &mut rng)?;

    let p = |name: &str| dir.join(name);
    tables::write_markets(&p("markets.csv"), &region.markets)?;
    tables::write_survey(&p("survey.csv"), &region.survey)?;
    tables::write_hubs(&p("hubs.csv"), &region.hubs)?;
    tables::write_stops(&p("stops.csv"), &region.stops)?;
    tables::write_lots(&p("pr_lots.csv"), &region.lots)?;
    tables::write_leg_matrices(&p("leg_matrices.csv"), &region.legs)?;
    tables::write_fares(&p("fares.csv"), &region.fares)?;
    tables::write_observed(&p("observed.csv"), &observed)?;
    tables::write_bus_counts(&p("bus_counts.csv"), &counts)?;
    let mut zones = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    zones.write_record(["zone_id", "lat", "lon"])?;
    for (id, z) in &region.zones {
        zones.write_record([id.clone(), tables::num(z.lat), tables::num(z.lon)])?;
    }
    write_atomic(&p("zones.csv"), &zones.into_inner().map_err(|e| crate::Error::io(p("zones.csv"), e.into_error()))?)?;

    let manifest = Manifest {
        markets: Some("markets.csv".into()),
        leg_matrices: vec!["leg_matrices.csv".into()],
        fares: Some("fares.csv".into()),
        stops: Some("stops.csv".into()),
        pr_lots: Some("pr_lots.csv".into()),
        survey: Some("survey.csv".into()),
        observed: Some("observed.csv".into()),
        hubs: Some("hubs.csv".into()),
        bus_counts: Some("bus_counts.csv".into()),
        ..Manifest::default()
    };
    write_atomic(&p("manifest.toml"), manifest.to_toml().as_bytes())?;
    write_atomic(&p("config.toml"), PipelineConfig::default().to_toml().as_bytes())?;

    Ok([
        "markets.csv",
        "survey.csv",
        "hubs.csv",
        "stops.csv",
        "pr_lots.csv",
        "leg_matrices.csv",
        "fares.csv",
        "observed.csv",
        "bus_counts.csv",
        "zones.csv",
        "manifest.toml",
        "config.toml",
    ]
    .iter()
    .map(|n| p(n))
    .collect())
}
