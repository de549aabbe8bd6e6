use thiserror::Error;

use crate::sca::Trajectory;
use crate::solver::SolveError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mission infeasible: endpoints are {distance:.3} m apart but at most {reach:.3} m can be flown")]
    InfeasibleMission { distance: f64, reach: f64 },

    #[error("parameter `{0}` must be positive")]
    NonPositiveParam(&'static str),

    #[error("parameter `{field}` is invalid: {reason}")]
    InvalidParam { field: &'static str, reason: String },

    #[error("brute-force oracle limited to {max_elements} elements and grid size {max_grid}, got M={elements}, grid={grid}")]
    InstanceTooLarge {
        elements: usize,
        grid: usize,
        max_elements: usize,
        max_grid: usize,
    },

    #[error("waypoint {slot} has a non-finite coordinate")]
    DegenerateX { slot: usize },

    #[error("exponential overflow while linearizing slot {slot}; check scene scaling")]
    NumericalOverflow { slot: usize },

    #[error("subproblem solver failed at SCA iteration {iteration}: {source}")]
    SolverFailure {
        iteration: usize,
        #[source]
        source: SolveError,
        last_feasible: Box<Trajectory>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
