//! Straight-line geometry for deciding which OD markets a hub can serve.

use std::collections::BTreeSet;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::choice::{Market, MarketId};
use crate::error::{Error, Result};

/// IUGG mean Earth radius.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;
pub const KM_PER_MILE: f64 = 1.609344;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        let p = GeoPoint { lat, lon };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidCoordinate {
                lat: self.lat,
                lon: self.lon,
            })
        }
    }
}

/// Haversine distance.
pub fn great_circle_km(a: GeoPoint, b: GeoPoint) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(haversine_km(a, b))
}

// Symmetric by construction: both the squared sines and the cosine product commute.
pub(crate) fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let s_lat = (dlat / 2.0).sin();
    let s_lon = (dlon / 2.0).sin();
    let h = s_lat * s_lat + lat1.cos() * lat2.cos() * s_lon * s_lon;
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

pub fn km_to_miles(km: f64) -> f64 {
    km / KM_PER_MILE
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetourRecord {
    pub od_km: f64,
    pub oh_km: f64,
    pub hd_km: f64,
    pub ratio: f64,
}

/// `(OH + HD) / OD` for an origin, destination and hub.
pub fn detour_ratio(o: GeoPoint, d: GeoPoint, h: GeoPoint) -> Result<DetourRecord> {
    let od_km = great_circle_km(o, d)?;
    let oh_km = great_circle_km(o, h)?;
    let hd_km = great_circle_km(h, d)?;
    if od_km <= 0.0 {
        return Err(Error::DegenerateOd);
    }
    Ok(DetourRecord {
        od_km,
        oh_km,
        hd_km,
        ratio: (oh_km + hd_km) / od_km,
    })
}

/// Nearest-rank 90th percentile of the survey detour ratios.
pub fn derive_threshold(records: &[DetourRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::NoSurveyRecords);
    }
    let mut ratios: Vec<f64> = records.iter().map(|r| r.ratio).collect();
    ratios.sort_by(f64::total_cmp);
    let n = ratios.len();
    // ceil(0.9 n) in integer arithmetic
    let rank = (9 * n).div_ceil(10).max(1);
    Ok(ratios[rank - 1])
}

/// Second identification condition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProximityRule {
    /// `OH + HD < OH + near_km`, i.e. the hub is within `near_km` of the destination.
    #[default]
    #[serde(rename = "literal_hd_1km")]
    LiteralHd1km,
    /// `OH + HD < OD + near_km`.
    #[serde(rename = "od_plus_1km")]
    OdPlus1km,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifyOptions {
    pub rule: ProximityRule,
    pub near_km: f64,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        IdentifyOptions {
            rule: ProximityRule::LiteralHd1km,
            near_km: 1.0,
        }
    }
}

/// Whether one OD geometry is potentially served by a hub.
pub fn is_potential_trip(rec: &DetourRecord, threshold: f64, opts: &IdentifyOptions) -> bool {
    let detour = rec.oh_km + rec.hd_km;
    let near = match opts.rule {
        ProximityRule::LiteralHd1km => rec.hd_km < opts.near_km,
        ProximityRule::OdPlus1km => detour < rec.od_km + opts.near_km,
    };
    detour < threshold * rec.od_km || near
}

/// Markets whose OD pair could route through the hub, sorted by id.
pub fn identify_potential_trips(
    markets: &[Market],
    hub_location: GeoPoint,
    threshold: f64,
    opts: &IdentifyOptions,
) -> Result<BTreeSet<MarketId>> {
    if !(threshold.is_finite() && threshold >= 1.0) {
        return Err(Error::InvalidThreshold(threshold));
    }
    hub_location.validate()?;
    let mut out = BTreeSet::new();
    for m in markets {
        match detour_ratio(m.origin, m.destination, hub_location) {
            Ok(rec) => {
                if is_potential_trip(&rec, threshold, opts) {
                    out.insert(m.id());
                }
            }
            Err(Error::DegenerateOd) => {
                warn!("market {} has a zero-length OD pair; excluded", m.id());
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
