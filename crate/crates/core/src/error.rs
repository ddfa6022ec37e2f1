use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {field} {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("input {u} outside the PWM range [-{u_max}, {u_max}]")]
    OutOfRange { u: f64, u_max: f64 },

    #[error("control input {u} at t = {t} saturates the PWM range [-{u_max}, {u_max}]")]
    Saturation { t: f64, u: f64, u_max: f64 },

    #[error("non-finite value in {what} at t = {t}")]
    NumericOverflow { what: &'static str, t: f64 },

    #[error("(A, B) is not controllable: controllability matrix has rank deficiency (sigma_min / sigma_max = {ratio:e})")]
    Uncontrollable { ratio: f64 },

    #[error("invalid pole set: {0}")]
    InvalidPoles(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("demodulator window not warmed up")]
    WarmUp,

    #[error("degenerate modulation: mean square of s1 at u = {u} is {mean_square:e}, below the floor {floor:e}")]
    DegenerateModulation {
        u: f64,
        mean_square: f64,
        floor: f64,
    },

    #[error("trace grids differ: {0}")]
    GridMismatch(String),

    #[error("config line {line}: {message}", line = line.map_or_else(|| "-".to_string(), |l| l.to_string()))]
    Parse {
        line: Option<usize>,
        message: String,
    },

    #[error("{context}: {message}")]
    Io { context: String, message: String },

    #[error(
        "convergence sweep needs at least 3 strictly decreasing epsilons with positive errors: {0}"
    )]
    Sweep(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
