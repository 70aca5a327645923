//! Network model, admittance matrix and Newton-Raphson power flow.

mod case;
mod powerflow;

pub use case::{Branch, Bus, BusKind, GridCase};
pub use powerflow::{
    build_admittance, solve_from, solve_power_flow, Admittance, PfOptions, PowerFlowSolution,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GridError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid case: {0}")]
    Invalid(String),
    #[error("unknown bus {0}")]
    UnknownBus(usize),
    #[error("bus {0} is not a load bus")]
    NotLoadBus(usize),
    #[error("{0}")]
    Io(String),
}
