//! Comma-separated input tables: loaders with row/column errors and writers
//! that re-emit every modelled field losslessly.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calibration::{CountDirection, LegCountObservation};
use crate::choice::{Market, MarketId, ModeAttr, ModeId, SegmentId, TasteVector};
use crate::error::{Error, Result};
use crate::geo::GeoPoint;
use crate::hub::{FareStep, FareTable, LegKey, LegMatrices, LegTime, Services, SurveyRecord};
use crate::siting::StopRecord;

/// A parsed CSV file addressed by header name.
pub struct Sheet {
    path: String,
    headers: HashMap<String, usize>,
    rows: Vec<csv::StringRecord>,
}

/// One data row; `line` is the 1-based line in the file (header is line 1).
pub struct Row<'a> {
    sheet: &'a Sheet,
    record: &'a csv::StringRecord,
    line: usize,
}

impl Sheet {
    pub fn read(path: &Path) -> Result<Sheet> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Sheet::from_reader(&path.display().to_string(), file)
    }

    pub fn from_reader(name: &str, reader: impl std::io::Read) -> Result<Sheet> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr
            .headers()?
            .iter()
            .enumerate()
            .map(|(i, h)| (h.to_string(), i))
            .collect();
        let rows = rdr.records().collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Sheet {
            path: name.to_string(),
            headers,
            rows,
        })
    }

    pub fn has(&self, column: &str) -> bool {
        self.headers.contains_key(column)
    }

    pub fn require(&self, columns: &[&str]) -> Result<()> {
        for c in columns {
            if !self.has(c) {
                return Err(self.error(1, c, "missing column"));
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> impl Iterator<Item = Row<'_>> {
        self.rows.iter().enumerate().map(|(i, record)| Row {
            sheet: self,
            record,
            line: i + 2,
        })
    }

    fn error(&self, row: usize, column: &str, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            row,
            column: column.to_string(),
            message: message.into(),
        }
    }
}

impl Row<'_> {
    pub fn line(&self) -> usize {
        self.line
    }

    pub fn error(&self, column: &str, message: impl Into<String>) -> Error {
        self.sheet.error(self.line, column, message)
    }

    /// Raw cell; missing columns read as empty.
    pub fn cell(&self, column: &str) -> &str {
        self.sheet
            .headers
            .get(column)
            .and_then(|&i| self.record.get(i))
            .unwrap_or("")
    }

    pub fn text(&self, column: &str) -> Result<String> {
        let v = self.cell(column);
        if v.is_empty() {
            return Err(self.error(column, "empty value"));
        }
        Ok(v.to_string())
    }

    pub fn parse<T: FromStr>(&self, column: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.cell(column);
        v.parse().map_err(|e: T::Err| self.error(column, format!("{v:?}: {e}")))
    }

    pub fn opt_parse<T: FromStr>(&self, column: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if self.cell(column).is_empty() {
            Ok(None)
        } else {
            self.parse(column).map(Some)
        }
    }

    pub fn real(&self, column: &str) -> Result<f64> {
        let v: f64 = self.parse(column)?;
        if !v.is_finite() {
            return Err(self.error(column, "non-finite value"));
        }
        Ok(v)
    }

    pub fn opt_real(&self, column: &str) -> Result<Option<f64>> {
        if self.cell(column).is_empty() {
            Ok(None)
        } else {
            self.real(column).map(Some)
        }
    }

    pub fn real_or(&self, column: &str, default: f64) -> Result<f64> {
        Ok(self.opt_real(column)?.unwrap_or(default))
    }

    pub fn flag_or(&self, column: &str, default: bool) -> Result<bool> {
        match self.cell(column) {
            "" => Ok(default),
            "true" | "1" => Ok(true),
            "false" | "0" => Ok(false),
            other => Err(self.error(column, format!("{other:?} is not a boolean"))),
        }
    }

    pub fn point(&self, lat: &str, lon: &str) -> Result<GeoPoint> {
        let p = GeoPoint {
            lat: self.real(lat)?,
            lon: self.real(lon)?,
        };
        p.validate().map_err(|e| self.error(lat, e.to_string()))?;
        Ok(p)
    }
}

/// Shortest round-trip decimal form.
pub fn num(v: f64) -> String {
    format!("{v}")
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn finish(path: &Path, w: csv::Writer<Vec<u8>>) -> Result<()> {
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    super::write_atomic(path, &bytes)
}

const ATTR_SUFFIXES: [&str; 6] = ["ivt", "access", "egress", "transfers", "cost", "available"];

fn taste_from_row(row: &Row<'_>) -> Result<TasteVector> {
    let mut v = [0.0; 12];
    for (slot, name) in v.iter_mut().zip(TasteVector::FIELD_NAMES) {
        *slot = row.real(name)?;
    }
    let taste = TasteVector::from_array(v);
    if taste.beta_cost >= 0.0 {
        return Err(row.error(
            "beta_cost",
            format!("beta_cost must be negative (utility falls with cost), got {}", taste.beta_cost),
        ));
    }
    Ok(taste)
}

/// Taste vectors keyed by market, from a file with `od_id, segment` and the twelve taste columns.
pub fn load_taste(path: &Path) -> Result<BTreeMap<MarketId, TasteVector>> {
    let sheet = Sheet::read(path)?;
    sheet.require(&["od_id", "segment"])?;
    sheet.require(&TasteVector::FIELD_NAMES)?;
    let mut out = BTreeMap::new();
    for row in sheet.rows() {
        let id = MarketId {
            od_id: row.text("od_id")?,
            segment: row.parse("segment")?,
        };
        let taste = taste_from_row(&row)?;
        if out.insert(id.clone(), taste).is_some() {
            return Err(row.error("od_id", format!("duplicate market {id}")));
        }
    }
    Ok(out)
}

/// Markets with inline taste columns, or joined from `taste` when given.
pub fn load_markets(path: &Path, taste: Option<&BTreeMap<MarketId, TasteVector>>) -> Result<Vec<Market>> {
    let sheet = Sheet::read(path)?;
    sheet.require(&["od_id", "segment", "o_lat", "o_lon", "d_lat", "d_lon", "trips_per_day"])?;
    if taste.is_none() {
        sheet.require(&TasteVector::FIELD_NAMES)?;
    }
    let modes: Vec<ModeId> = ModeId::UNIMODAL
        .into_iter()
        .filter(|m| sheet.has(&format!("{m}_ivt")))
        .collect();
    for m in &modes {
        let cols: Vec<String> = ATTR_SUFFIXES[..5].iter().map(|s| format!("{m}_{s}")).collect();
        sheet.require(&cols.iter().map(String::as_str).collect::<Vec<_>>())?;
    }
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(sheet.rows.len());
    for row in sheet.rows() {
        let od_id = row.text("od_id")?;
        let segment: SegmentId = row.parse("segment")?;
        let id = MarketId {
            od_id: od_id.clone(),
            segment,
        };
        if !seen.insert(id.clone()) {
            return Err(row.error("od_id", format!("duplicate market {id}")));
        }
        let mut attrs = BTreeMap::new();
        for m in &modes {
            let col = |s: &str| format!("{m}_{s}");
            let attr = ModeAttr {
                ivt_min: row.real_or(&col("ivt"), 0.0)?,
                access_min: row.real_or(&col("access"), 0.0)?,
                egress_min: row.real_or(&col("egress"), 0.0)?,
                transfers: row.real_or(&col("transfers"), 0.0)?,
                cost_usd: row.real_or(&col("cost"), 0.0)?,
                available: row.flag_or(&col("available"), true)?,
            };
            attrs.insert(*m, attr);
        }
        let taste = match taste {
            Some(t) => *t
                .get(&id)
                .ok_or_else(|| row.error("od_id", format!("no taste parameters for {id}")))?,
            None => taste_from_row(&row)?,
        };
        let zone = |c: &str| -> Result<String> {
            let v = row.cell(c);
            Ok(if v.is_empty() { od_id.clone() } else { v.to_string() })
        };
        let market = Market {
            segment,
            origin: row.point("o_lat", "o_lon")?,
            destination: row.point("d_lat", "d_lon")?,
            origin_zone: zone("o_zone")?,
            destination_zone: zone("d_zone")?,
            trips_per_day: row.real("trips_per_day")?,
            driving_miles: row.opt_real("driving_miles")?,
            attrs,
            taste,
            od_id,
        };
        market.validate().map_err(|e| row.error("*", e.to_string()))?;
        out.push(market);
    }
    Ok(out)
}

pub fn market_header() -> Vec<String> {
    let mut h: Vec<String> = [
        "od_id",
        "segment",
        "o_lat",
        "o_lon",
        "d_lat",
        "d_lon",
        "o_zone",
        "d_zone",
        "trips_per_day",
        "driving_miles",
    ]
    .map(String::from)
    .to_vec();
    for m in ModeId::UNIMODAL {
        for s in ATTR_SUFFIXES {
            h.push(format!("{m}_{s}"));
        }
    }
    h.extend(TasteVector::FIELD_NAMES.map(String::from));
    h
}

/// Writes markets with all six modes and inline taste columns; absent modes are written unavailable.
pub fn write_markets(path: &Path, markets: &[Market]) -> Result<()> {
    let mut w = writer();
    w.write_record(market_header())?;
    for m in markets {
        let mut rec = vec![
            m.od_id.clone(),
            m.segment.to_string(),
            num(m.origin.lat),
            num(m.origin.lon),
            num(m.destination.lat),
            num(m.destination.lon),
            m.origin_zone.clone(),
            m.destination_zone.clone(),
            num(m.trips_per_day),
            opt_num(m.driving_miles),
        ];
        for mode in ModeId::UNIMODAL {
            let a = m.attrs.get(&mode).copied().unwrap_or_else(ModeAttr::unavailable);
            rec.extend([
                num(a.ivt_min),
                num(a.access_min),
                num(a.egress_min),
                num(a.transfers),
                num(a.cost_usd),
                a.available.to_string(),
            ]);
        }
        rec.extend(m.taste.to_array().map(num));
        w.write_record(rec)?;
    }
    finish(path, w)
}

pub fn load_survey(path: &Path) -> Result<Vec<SurveyRecord>> {
    let sheet = Sheet::read(path)?;
    sheet.require(&["hub_id", "o_lat", "o_lon", "d_lat", "d_lon", "entry_mode", "exit_mode"])?;
    sheet
        .rows()
        .map(|row| {
            let entry_mode: ModeId = row.parse("entry_mode")?;
            let exit_mode: ModeId = row.parse("exit_mode")?;
            for (col, m) in [("entry_mode", entry_mode), ("exit_mode", exit_mode)] {
                if !m.is_leg() {
                    return Err(row.error(col, format!("{m} is not a hub leg mode")));
                }
            }
            Ok(SurveyRecord {
                hub_id: row.text("hub_id")?,
                origin: row.point("o_lat", "o_lon")?,
                destination: row.point("d_lat", "d_lon")?,
                entry_mode,
                exit_mode,
                segment: row.opt_parse("segment")?,
                complete: row.flag_or("complete", true)?,
            })
        })
        .collect()
}

pub fn write_survey(path: &Path, records: &[SurveyRecord]) -> Result<()> {
    let mut w = writer();
    w.write_record(["hub_id", "o_lat", "o_lon", "d_lat", "d_lon", "entry_mode", "exit_mode", "segment", "complete"])?;
    for r in records {
        w.write_record([
            r.hub_id.clone(),
            num(r.origin.lat),
            num(r.origin.lon),
            num(r.destination.lat),
            num(r.destination.lon),
            r.entry_mode.to_string(),
            r.exit_mode.to_string(),
            r.segment.map(|s| s.to_string()).unwrap_or_default(),
            r.complete.to_string(),
        ])?;
    }
    finish(path, w)
}

pub fn load_stops(path: &Path) -> Result<Vec<StopRecord>> {
    let sheet = Sheet::read(path)?;
    sheet.require(&["stop_id", "lat", "lon"])?;
    let mut seen = std::collections::HashSet::new();
    sheet
        .rows()
        .map(|row| {
            let stop_id = row.text("stop_id")?;
            if !seen.insert(stop_id.clone()) {
                return Err(row.error("stop_id", format!("duplicate stop {stop_id}")));
            }
            Ok(StopRecord {
                stop_id,
                location: row.point("lat", "lon")?,
            })
        })
        .collect()
}

pub fn write_stops(path: &Path, stops: &[StopRecord]) -> Result<()> {
    let mut w = writer();
    w.write_record(["stop_id", "lat", "lon"])?;
    for s in stops {
        w.write_record([s.stop_id.clone(), num(s.location.lat), num(s.location.lon)])?;
    }
    finish(path, w)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParkRideLot {
    pub lot_id: String,
    pub location: GeoPoint,
}

pub fn load_lots(path: &Path) -> Result<Vec<ParkRideLot>> {
    let sheet = Sheet::read(path)?;
    sheet.require(&["lot_id", "lat", "lon"])?;
    sheet
        .rows()
        .map(|row| {
            Ok(ParkRideLot {
                lot_id: row.text("lot_id")?,
                location: row.point("lat", "lon")?,
            })
        })
        .collect()
}

pub fn write_lots(path: &Path, lots: &[ParkRideLot]) -> Result<()> {
    let mut w = writer();
    w.write_record(["lot_id", "lat", "lon"])?;
    for l in lots {
        w.write_record([l.lot_id.clone(), num(l.location.lat), num(l.location.lon)])?;
    }
    finish(path, w)
}

/// An existing hub: where it is and which shared services it offers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HubSite {
    pub hub_id: String,
    pub location: GeoPoint,
    pub services: Services,
}

pub fn load_hubs(path: &Path) -> Result<Vec<HubSite>> {
    let sheet = Sheet::read(path)?;
    sheet.require(&["hub_id", "lat", "lon"])?;
    let mut seen = std::collections::HashSet::new();
    sheet
        .rows()
        .map(|row| {
            let hub_id = row.text("hub_id")?;
            if !seen.insert(hub_id.clone()) {
                return Err(row.error("hub_id", format!("duplicate hub {hub_id}")));
            }
            Ok(HubSite {
                hub_id,
                location: row.point("lat", "lon")?,
                services: Services {
                    car_share: row.flag_or("car_share", false)?,
                    bike_share: row.flag_or("bike_share", true)?,
                },
            })
        })
        .collect()
}

pub fn write_hubs(path: &Path, hubs: &[HubSite]) -> Result<()> {
    let mut w = writer();
    w.write_record(["hub_id", "lat", "lon", "car_share", "bike_share"])?;
    for h in hubs {
        w.write_record([
            h.hub_id.clone(),
            num(h.location.lat),
            num(h.location.lon),
            h.services.car_share.to_string(),
            h.services.bike_share.to_string(),
        ])?;
    }
    finish(path, w)
}

/// Observed hub use; an empty `potential_trips` means "use the modelled potential demand".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservedRow {
    pub hub_id: String,
    pub trips_per_day: f64,
    pub potential_trips: Option<f64>,
}

pub fn load_observed(path: &Path) -> Result<Vec<ObservedRow>> {
    let sheet = Sheet::read(path)?;
    sheet.require(&["hub_id", "trips_per_day"])?;
    sheet
        .rows()
        .map(|row| {
            let trips = row.real("trips_per_day")?;
            if trips < 0.0 {
                return Err(row.error("trips_per_day", "negative trips"));
            }
            let potential = row.opt_real("potential_trips")?;
            if potential.is_some_and(|p| p <= 0.0) {
                return Err(row.error("potential_trips", "must be positive"));
            }
            Ok(ObservedRow {
                hub_id: row.text("hub_id")?,
                trips_per_day: trips,
                potential_trips: potential,
            })
        })
        .collect()
}

pub fn write_observed(path: &Path, rows: &[ObservedRow]) -> Result<()> {
    let mut w = writer();
    w.write_record(["hub_id", "trips_per_day", "potential_trips"])?;
    for r in rows {
        w.write_record([r.hub_id.clone(), num(r.trips_per_day), opt_num(r.potential_trips)])?;
    }
    finish(path, w)
}

pub fn load_leg_matrices(path: &Path, into: &mut LegMatrices) -> Result<()> {
    let sheet = Sheet::read(path)?;
    sheet.require(&["hub_id", "zone_id", "direction", "mode", "ivt_min"])?;
    for row in sheet.rows() {
        let mode: ModeId = row.parse("mode")?;
        if !mode.is_leg() {
            return Err(row.error("mode", format!("{mode} is not a hub leg mode")));
        }
        let time = LegTime {
            ivt_min: row.real("ivt_min")?,
            access_min: row.real_or("access_min", 0.0)?,
            egress_min: row.real_or("egress_min", 0.0)?,
            transfers: row.real_or("transfers", 0.0)?,
            miles: row.opt_real("miles")?,
        };
        let fields = [time.ivt_min, time.access_min, time.egress_min, time.transfers, time.miles.unwrap_or(0.0)];
        if fields.iter().any(|v| *v < 0.0) {
            return Err(row.error("*", "negative leg attribute"));
        }
        into.insert(
            LegKey {
                hub_id: row.text("hub_id")?,
                zone_id: row.text("zone_id")?,
                position: row.parse("direction")?,
                mode,
            },
            time,
        );
    }
    Ok(())
}

pub fn write_leg_matrices(path: &Path, m: &LegMatrices) -> Result<()> {
    let mut w = writer();
    w.write_record(["hub_id", "zone_id", "direction", "mode", "ivt_min", "access_min", "egress_min", "transfers", "miles"])?;
    for (k, t) in m.sorted_entries() {
        w.write_record([
            k.hub_id.clone(),
            k.zone_id.clone(),
            k.position.as_str().to_string(),
            k.mode.to_string(),
            num(t.ivt_min),
            num(t.access_min),
            num(t.egress_min),
            num(t.transfers),
            opt_num(t.miles),
        ])?;
    }
    finish(path, w)
}

/// Rows: `bus` (flat fare), `car_share_per_hour` (rate), and one `bike_share`
/// row per step with its upper duration bound (empty for the open-ended step).
pub fn load_fares(path: &Path) -> Result<FareTable> {
    let sheet = Sheet::read(path)?;
    sheet.require(&["kind", "usd"])?;
    let mut table = FareTable::default();
    let mut steps = Vec::new();
    for row in sheet.rows() {
        let usd = row.real("usd")?;
        match row.cell("kind") {
            "bus" => table.bus_fare_usd = usd,
            "car_share_per_hour" => table.car_share_usd_per_hour = usd,
            "bike_share" => steps.push(FareStep {
                up_to_min: row.opt_real("max_minutes")?,
                usd,
            }),
            other => return Err(row.error("kind", format!("unknown fare kind {other:?}"))),
        }
    }
    if !steps.is_empty() {
        table.bike_share_steps = steps;
    }
    table.validate().map_err(|e| Error::Input {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(table)
}

pub fn write_fares(path: &Path, fares: &FareTable) -> Result<()> {
    let mut w = writer();
    w.write_record(["kind", "max_minutes", "usd"])?;
    w.write_record(["bus".to_string(), String::new(), num(fares.bus_fare_usd)])?;
    w.write_record(["car_share_per_hour".to_string(), String::new(), num(fares.car_share_usd_per_hour)])?;
    for s in &fares.bike_share_steps {
        w.write_record(["bike_share".to_string(), opt_num(s.up_to_min), num(s.usd)])?;
    }
    finish(path, w)
}

pub fn load_bus_counts(path: &Path) -> Result<Vec<LegCountObservation>> {
    let sheet = Sheet::read(path)?;
    sheet.require(&["hub_id", "direction", "observed"])?;
    sheet
        .rows()
        .map(|row| {
            let direction: CountDirection = row.parse("direction")?;
            Ok(LegCountObservation {
                hub_id: row.text("hub_id")?,
                direction,
                observed: row.real("observed")?,
                unimodal_boardings: row.opt_real("unimodal_boardings")?,
            })
        })
        .collect()
}

pub fn write_bus_counts(path: &Path, rows: &[LegCountObservation]) -> Result<()> {
    let mut w = writer();
    w.write_record(["hub_id", "direction", "observed", "unimodal_boardings"])?;
    for r in rows {
        let dir = match r.direction {
            CountDirection::PickUp => "pick_up",
            CountDirection::DropOff => "drop_off",
        };
        w.write_record([r.hub_id.clone(), dir.to_string(), num(r.observed), opt_num(r.unimodal_boardings)])?;
    }
    finish(path, w)
}
