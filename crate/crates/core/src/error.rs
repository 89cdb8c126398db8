use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}, column {column}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid value for `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// The virtual force vanished, so no heading can be derived.
    #[error("potential-field local minimum at waypoint {index}{}", vehicle_suffix(*.vehicle))]
    LocalMinimum { index: usize, vehicle: Option<u32> },

    #[error("non-finite value produced by the {term} term")]
    NumericalDomain { term: &'static str },

    #[error("degenerate waypoints: {0}")]
    DegenerateWaypoints(String),

    #[error("infeasible coefficient bounds on a{index}: lower {lower} > upper {upper}")]
    InfeasibleBounds { index: usize, lower: f64, upper: f64 },

    #[error("brute-force oracle limited to {max} speed variables, got {got}")]
    OracleGuard { max: usize, got: usize },

    #[error("bus integrity: sender {sender} submitted more than one message in tick {tick}")]
    BusIntegrity { sender: u32, tick: u64 },

    #[error("vehicle {vehicle} dynamics diverged at tick {tick}")]
    DynamicsDivergence { vehicle: u32, tick: u64 },

    #[error("{0}")]
    Range(String),

    #[error("{0}")]
    Usage(String),
}

fn vehicle_suffix(vehicle: Option<u32>) -> String {
    vehicle.map(|v| format!(" (vehicle {v})")).unwrap_or_default()
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used in CLI error JSON and FFI status mapping.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema { .. } => "schema",
            Error::Validation { .. } => "validation",
            Error::Io { .. } => "io",
            Error::LocalMinimum { .. } => "local_minimum",
            Error::NumericalDomain { .. } => "numerical_domain",
            Error::DegenerateWaypoints(_) => "degenerate_waypoints",
            Error::InfeasibleBounds { .. } => "infeasible_bounds",
            Error::OracleGuard { .. } => "oracle_guard",
            Error::BusIntegrity { .. } => "bus_integrity",
            Error::DynamicsDivergence { .. } => "dynamics_divergence",
            Error::Range(_) => "range",
            Error::Usage(_) => "usage",
        }
    }
}
