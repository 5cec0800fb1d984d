use crate::market::Direction;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Which battery constraint a dispatch profile broke.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    PowerBound,
    SimultaneousChargeDischarge,
    SocBound,
    NegativePower,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{direction:?} volume {requested:.6} MW exceeds available {available:.6} MW{}", minute_suffix(*.minute))]
    VolumeExceedsLadder {
        minute: Option<usize>,
        direction: Direction,
        requested: f64,
        available: f64,
    },
    #[error("no aFRR activation in the {0:?} direction")]
    NoActivation(Direction),
    #[error("empty {0} ladder")]
    EmptyLadder(&'static str),
    #[error("position needs {required_mw:.4} MW average, battery limit is {power_max_mw} MW")]
    PowerInfeasible { required_mw: f64, power_max_mw: f64 },
    #[error("battery constraint {constraint:?} violated at minute {minute}")]
    BatteryInfeasible { minute: usize, constraint: Constraint },
    #[error("enumeration of {0} profiles exceeds the oracle limit")]
    EnumerationTooLarge(u128),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("schema error in `{field}`: {reason}")]
    Schema { field: String, reason: String },
    #[error("validation failed ({invariant}): {detail}")]
    Validation { invariant: &'static str, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn minute_suffix(minute: Option<usize>) -> String {
    minute.map(|m| format!(" at minute {m}")).unwrap_or_default()
}

impl Error {
    pub(crate) fn validation(invariant: &'static str, detail: impl Into<String>) -> Self {
        Error::Validation {
            invariant,
            detail: detail.into(),
        }
    }

    /// Stable machine-readable name of the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::VolumeExceedsLadder { .. } => "VolumeExceedsLadder",
            Error::NoActivation(_) => "NoActivation",
            Error::EmptyLadder(_) => "EmptyLadder",
            Error::PowerInfeasible { .. } => "PowerInfeasible",
            Error::BatteryInfeasible { .. } => "BatteryInfeasible",
            Error::EnumerationTooLarge(_) => "EnumerationTooLarge",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Parse { .. } => "ParseError",
            Error::Schema { .. } => "SchemaError",
            Error::Validation { .. } => "ValidationError",
            Error::Io(_) => "IoError",
        }
    }

    /// True for errors that mean the requested dispatch cannot be realised.
    pub fn is_infeasibility(&self) -> bool {
        matches!(
            self,
            Error::VolumeExceedsLadder { .. }
                | Error::PowerInfeasible { .. }
                | Error::BatteryInfeasible { .. }
        )
    }
}
