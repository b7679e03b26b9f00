#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use hubfuse::calibration::{predict_hub_proportion, CalibrationTarget, HubParams, ObservedUsage, SegmentAscs};
use hubfuse::choice::{ComboId, Market, MarketId, ModeAttr, ModeId, SegmentId, TasteVector};
use hubfuse::geo::{GeoPoint, EARTH_RADIUS_KM};
use hubfuse::hub::{AssembledLeg, HubCombo, HubMarket};
use hubfuse::siting::StopRecord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn taste(r: &mut ChaCha8Rng) -> TasteVector {
    TasteVector {
        beta_auto_tt: r.gen_range(-0.1..-0.01),
        beta_trans_ivt: r.gen_range(-0.1..-0.01),
        beta_trans_at: r.gen_range(-0.1..-0.01),
        beta_trans_et: r.gen_range(-0.1..-0.01),
        beta_trans_n: r.gen_range(-0.5..0.0),
        beta_nonveh_tt: r.gen_range(-0.15..-0.02),
        beta_cost: r.gen_range(-1.0..-0.05),
        asc_driving: r.gen_range(-1.0..2.0),
        asc_transit: r.gen_range(-3.0..0.0),
        asc_ondemand: r.gen_range(-3.0..0.0),
        asc_biking: r.gen_range(-3.0..0.0),
        asc_walking: r.gen_range(-3.0..0.0),
    }
}

pub fn point_near(r: &mut ChaCha8Rng, lat: f64, lon: f64, spread: f64) -> GeoPoint {
    GeoPoint {
        lat: lat + r.gen_range(-spread..spread),
        lon: lon + r.gen_range(-spread..spread),
    }
}

pub fn market(r: &mut ChaCha8Rng, od_id: &str, segment: SegmentId, origin: GeoPoint, destination: GeoPoint) -> Market {
    let mut attrs = BTreeMap::new();
    for m in ModeId::UNIMODAL {
        attrs.insert(
            m,
            ModeAttr::new(
                r.gen_range(5.0..60.0),
                r.gen_range(0.0..10.0),
                r.gen_range(0.0..10.0),
                r.gen_range(0..3) as f64,
                r.gen_range(0.0..8.0),
            ),
        );
    }
    Market {
        segment,
        od_id: od_id.to_string(),
        origin,
        destination,
        origin_zone: format!("{od_id}-o"),
        destination_zone: format!("{od_id}-d"),
        trips_per_day: r.gen_range(0.5..50.0),
        attrs,
        taste: taste(r),
        driving_miles: Some(r.gen_range(0.5..20.0)),
    }
}

fn leg(mode: ModeId, r: &mut ChaCha8Rng) -> AssembledLeg {
    AssembledLeg {
        mode,
        attr: ModeAttr::timed(r.gen_range(1.0..30.0), r.gen_range(0.0..3.0)),
        line_km: r.gen_range(0.1..10.0),
        network_miles: if r.gen_bool(0.5) { Some(r.gen_range(0.1..8.0)) } else { None },
    }
}

/// A prepared market with random utilities and `n_combos` random combos.
pub fn hub_market(r: &mut ChaCha8Rng, id: usize, segment: SegmentId, n_combos: usize) -> HubMarket {
    let n_uni = r.gen_range(1..=6);
    let unimodal = ModeId::UNIMODAL[..n_uni]
        .iter()
        .map(|m| (*m, r.gen_range(-6.0..2.0)))
        .collect();
    let mut all: Vec<ComboId> = ModeId::LEGS
        .iter()
        .flat_map(|a| ModeId::LEGS.iter().map(move |b| ComboId::new(*a, *b)))
        .collect();
    let mut combos = Vec::with_capacity(n_combos);
    for _ in 0..n_combos.min(all.len()) {
        let c = all.remove(r.gen_range(0..all.len()));
        combos.push(HubCombo {
            combo: c,
            utility: r.gen_range(-8.0..0.0),
            legs: [leg(c.entry, r), leg(c.exit, r)],
        });
    }
    combos.sort_by_key(|c| c.combo);
    HubMarket {
        id: MarketId {
            od_id: format!("od{id:05}"),
            segment,
        },
        segment,
        trips_per_day: r.gen_range(0.5..50.0),
        beta_cost: r.gen_range(-1.0..-0.05),
        driving_miles: Some(r.gen_range(0.5..20.0)),
        unimodal,
        combos,
    }
}

pub fn truth() -> HubParams {
    HubParams {
        beta_hub: 0.3,
        asc_by_segment: SegmentAscs::from_array([-4.0, -5.0, -3.0, -4.0]),
    }
}

/// Five hubs whose markets lean on different segments, observed under `params`.
pub fn synthetic_targets(seed: u64, hubs: usize, params: &HubParams) -> Vec<CalibrationTarget> {
    let mut r = rng(seed);
    let mixes = [
        [0.7, 0.1, 0.1, 0.1],
        [0.1, 0.7, 0.1, 0.1],
        [0.1, 0.1, 0.7, 0.1],
        [0.1, 0.1, 0.1, 0.7],
        [0.25, 0.25, 0.25, 0.25],
    ];
    (0..hubs)
        .map(|h| {
            let mix = mixes[h % mixes.len()];
            let markets: Vec<HubMarket> = (0..60)
                .map(|i| {
                    let u: f64 = r.gen();
                    let mut acc = 0.0;
                    let mut seg = SegmentId::Student;
                    for (k, w) in mix.iter().enumerate() {
                        acc += w;
                        if u < acc {
                            seg = SegmentId::ALL[k];
                            break;
                        }
                    }
                    let n = r.gen_range(1..=8);
                    hub_market(&mut r, h * 1000 + i, seg, n)
                })
                .collect();
            let pd: f64 = markets.iter().map(|m| m.trips_per_day).sum();
            let share = predict_hub_proportion(&markets, params).unwrap();
            CalibrationTarget {
                observed: ObservedUsage::new(format!("hub{h}"), share * pd, pd).unwrap(),
                markets,
            }
        })
        .collect()
}

/// Great-circle distance via the chord between unit vectors.
pub fn chord_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let v = |p: GeoPoint| {
        let (la, lo) = (p.lat.to_radians(), p.lon.to_radians());
        [la.cos() * lo.cos(), la.cos() * lo.sin(), la.sin()]
    };
    let (x, y) = (v(a), v(b));
    let c = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt();
    2.0 * EARTH_RADIUS_KM * (c / 2.0).min(1.0).asin()
}

pub fn random_stops(r: &mut ChaCha8Rng, n: usize, spread: f64) -> Vec<StopRecord> {
    (0..n)
        .map(|i| StopRecord {
            stop_id: format!("s{i:04}"),
            location: point_near(r, 42.65, -73.75, spread),
        })
        .collect()
}

/// Connected components by breadth-first search over all pairs.
pub fn brute_components(stops: &[StopRecord], radius_m: f64) -> BTreeSet<Vec<String>> {
    let n = stops.len();
    let mut seen = vec![false; n];
    let mut out = BTreeSet::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut queue = vec![s];
        let mut members = Vec::new();
        while let Some(i) = queue.pop() {
            members.push(stops[i].stop_id.clone());
            for j in 0..n {
                if !seen[j] && chord_km(stops[i].location, stops[j].location) * 1000.0 <= radius_m {
                    seen[j] = true;
                    queue.push(j);
                }
            }
        }
        members.sort();
        out.insert(members);
    }
    out
}
