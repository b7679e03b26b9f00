use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mode unavailable: {0}")]
    ModeUnavailable(String),
    #[error("invalid attribute: {0}")]
    InvalidAttribute(String),
    #[error("empty choice set")]
    EmptyChoiceSet,
    #[error("combo unavailable: {0}")]
    ComboUnavailable(String),
    #[error("empty nest")]
    EmptyNest,
    #[error("invalid nesting coefficient: {0}")]
    InvalidNestingCoefficient(f64),
    #[error("undefined VOT: beta_cost = {0} is not negative")]
    UndefinedVot(f64),
    #[error("invalid coordinate: lat {lat}, lon {lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("degenerate OD pair")]
    DegenerateOd,
    #[error("no survey records")]
    NoSurveyRecords,
    #[error("invalid detour threshold: {0}")]
    InvalidThreshold(f64),
    #[error("empty survey for hub {0}")]
    EmptySurvey(String),
    #[error("invalid observation inputs: {0}")]
    InvalidObservation(String),
    #[error("no potential trips for hub {0}")]
    NoPotentialTrips(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{path}: row {row}, column {column}: {message}")]
    Parse {
        path: String,
        row: usize,
        column: String,
        message: String,
    },
    #[error("{path}: {message}")]
    Input { path: String, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ModeUnavailable(_) => "mode_unavailable",
            Error::InvalidAttribute(_) => "invalid_attribute",
            Error::EmptyChoiceSet => "empty_choice_set",
            Error::ComboUnavailable(_) => "combo_unavailable",
            Error::EmptyNest => "empty_nest",
            Error::InvalidNestingCoefficient(_) => "invalid_nesting_coefficient",
            Error::UndefinedVot(_) => "undefined_vot",
            Error::InvalidCoordinate { .. } => "invalid_coordinate",
            Error::DegenerateOd => "degenerate_od",
            Error::NoSurveyRecords => "no_survey_records",
            Error::InvalidThreshold(_) => "invalid_threshold",
            Error::EmptySurvey(_) => "empty_survey",
            Error::InvalidObservation(_) => "invalid_observation",
            Error::NoPotentialTrips(_) => "no_potential_trips",
            Error::InvalidParams(_) => "invalid_params",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Parse { .. } => "parse",
            Error::Input { .. } => "input",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
