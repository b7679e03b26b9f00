//! Pipeline configuration and the manifest of input files, both TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::{CalibrationSettings, HubParams};
use crate::choice::LowerBranch;
use crate::error::{Error, Result};
use crate::geo::{IdentifyOptions, ProximityRule};
use crate::hub::AssemblyConfig;
use crate::impact::{EmissionFactor, ImpactOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Detour threshold; derived from the survey when absent.
    pub threshold: Option<f64>,
    /// Lower-branch shares as `exp(V)` rather than `exp(V / beta_hub)`.
    pub literal_lower_branch: bool,
    pub condition2_mode: ProximityRule,
    pub near_km: f64,
    pub emission: EmissionFactor,
    pub include_on_demand_vmt: bool,
    pub calibration: CalibrationSettings,
    pub init: HubParams,
    pub assembly: AssemblyConfig,
    pub cluster_radius_m: f64,
    pub lot_radius_m: f64,
    pub histogram_bins: usize,
    /// Candidates to place in the ranking distribution; defaults to the
    /// candidate nearest each existing hub.
    pub reference_ids: Vec<String>,
    pub threads: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            threshold: None,
            literal_lower_branch: false,
            condition2_mode: ProximityRule::LiteralHd1km,
            near_km: 1.0,
            emission: EmissionFactor::default(),
            include_on_demand_vmt: false,
            calibration: CalibrationSettings::default(),
            init: HubParams::default(),
            assembly: AssemblyConfig::default(),
            cluster_radius_m: 200.0,
            lot_radius_m: 500.0,
            histogram_bins: 30,
            reference_ids: Vec::new(),
            threads: None,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")))
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.threshold {
            if !(t.is_finite() && t >= 1.0) {
                return Err(Error::InvalidThreshold(t));
            }
        }
        if !(self.near_km.is_finite() && self.near_km >= 0.0) {
            return Err(Error::InvalidConfig(format!("near_km {}", self.near_km)));
        }
        positive("grams_co2_per_mile", self.emission.grams_co2_per_mile)?;
        positive("days_per_year", self.emission.days_per_year)?;
        positive("circuity", self.assembly.circuity)?;
        if !(self.assembly.car_cost_per_mile.is_finite() && self.assembly.car_cost_per_mile >= 0.0) {
            return Err(Error::InvalidConfig(format!("car_cost_per_mile {}", self.assembly.car_cost_per_mile)));
        }
        let s = &self.assembly.speeds;
        for (name, v) in [("walk_kmh", s.walk_kmh), ("bike_kmh", s.bike_kmh), ("car_kmh", s.car_kmh), ("bus_kmh", s.bus_kmh)] {
            positive(name, v)?;
        }
        if !(s.bus_access_min >= 0.0 && s.bus_egress_min >= 0.0) {
            return Err(Error::InvalidConfig("bus access/egress minutes must be non-negative".into()));
        }
        if !(self.cluster_radius_m.is_finite() && self.cluster_radius_m >= 0.0) {
            return Err(Error::InvalidConfig(format!("cluster_radius_m {}", self.cluster_radius_m)));
        }
        if !(self.lot_radius_m.is_finite() && self.lot_radius_m >= 0.0) {
            return Err(Error::InvalidConfig(format!("lot_radius_m {}", self.lot_radius_m)));
        }
        if self.histogram_bins == 0 {
            return Err(Error::InvalidConfig("histogram_bins must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidConfig("threads must be at least 1".into()));
        }
        self.calibration.validate()?;
        self.init.validate()
    }

    pub fn lower_branch(&self) -> LowerBranch {
        if self.literal_lower_branch {
            LowerBranch::Literal
        } else {
            LowerBranch::Consistent
        }
    }

    pub fn identify(&self) -> IdentifyOptions {
        IdentifyOptions {
            rule: self.condition2_mode,
            near_km: self.near_km,
        }
    }

    pub fn impact(&self) -> ImpactOptions {
        ImpactOptions {
            lower_branch: self.lower_branch(),
            emission: self.emission,
            include_on_demand_vmt: self.include_on_demand_vmt,
            circuity: self.assembly.circuity,
        }
    }
}

/// Input files, relative to the manifest's directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub markets: Option<PathBuf>,
    pub taste: Option<PathBuf>,
    #[serde(default)]
    pub leg_matrices: Vec<PathBuf>,
    pub fares: Option<PathBuf>,
    pub stops: Option<PathBuf>,
    pub pr_lots: Option<PathBuf>,
    pub survey: Option<PathBuf>,
    pub observed: Option<PathBuf>,
    pub hubs: Option<PathBuf>,
    pub bus_counts: Option<PathBuf>,
    /// Calibrated hub parameters; calibrated on the fly when absent.
    pub params: Option<PathBuf>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.check_exists()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.base_dir.join(rel)
    }

    /// Resolved path of a required entry.
    pub fn need(&self, entry: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
        entry
            .as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| Error::InvalidConfig(format!("manifest has no `{name}` entry")))
    }

    pub fn entries(&self) -> Vec<&Path> {
        let singles = [
            &self.markets,
            &self.taste,
            &self.fares,
            &self.stops,
            &self.pr_lots,
            &self.survey,
            &self.observed,
            &self.hubs,
            &self.bus_counts,
            &self.params,
        ];
        singles
            .into_iter()
            .filter_map(|p| p.as_deref())
            .chain(self.leg_matrices.iter().map(PathBuf::as_path))
            .collect()
    }

    fn check_exists(&self) -> Result<()> {
        for p in self.entries() {
            let full = self.resolve(p);
            if !full.is_file() {
                return Err(Error::Input {
                    path: full.display().to_string(),
                    message: "manifest entry does not exist".into(),
                });
            }
        }
        Ok(())
    }
}
