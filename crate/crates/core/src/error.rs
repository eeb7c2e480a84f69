//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by the solvers and models in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Transmitter sits exactly on the circumference of the user disk;
    /// the path-loss expectation is divergent there.
    #[error("degenerate geometry: centre distance {center_distance} equals disk radius {disk_radius}")]
    DegenerateGeometry {
        center_distance: f64,
        disk_radius: f64,
    },

    /// Co-located transmitter requires a user disk of radius at least 1 m.
    #[error("co-located case requires disk radius >= 1 m, got {disk_radius}")]
    CoLocatedDiskTooSmall { disk_radius: f64 },

    /// The defining integral E[d^-alpha] diverges for a transmitter strictly
    /// inside the user disk; only the alpha = 4 closed form extends there.
    #[error(
        "E[d^-{alpha}] diverges for a transmitter inside the user disk \
         (centre distance {center_distance} < disk radius {disk_radius}); \
         only the closed-form alpha = 4 extension is defined"
    )]
    DivergentExpectation {
        center_distance: f64,
        disk_radius: f64,
        alpha: f64,
    },

    /// Adaptive quadrature failed to reach its tolerance.
    #[error("quadrature did not converge (residual estimate {residual:.3e})")]
    QuadratureNotConverged { residual: f64 },

    /// A BS pair violates the geometric preconditions of the gain formulas.
    #[error("gain table: pair (receiver-owner {rx_owner}, transmitter {tx}): {source}")]
    GainPrecondition {
        rx_owner: usize,
        tx: usize,
        #[source]
        source: Box<Error>,
    },

    /// Topology sampling exhausted its rejection budget.
    #[error("topology generation failed after {attempts} rejection rounds; constraints may be unsatisfiable (coverage radius too large for the macro disk)")]
    TopologyRejection { attempts: usize },

    /// A probability vector failed validation.
    #[error("invalid distribution: {reason}")]
    InvalidDistribution { reason: String },

    /// CES action exceeds the battery capacity.
    #[error("action Q = {q} exceeds battery capacity S = {capacity}")]
    ActionExceedsCapacity { q: usize, capacity: usize },

    /// CES action exceeds the current battery level (causality).
    #[error("action Q = {q} exceeds current battery level s = {state}")]
    ActionExceedsState { q: usize, state: usize },

    /// Energy budget cannot be absorbed by the SBS power boxes.
    #[error("infeasible budget: {budget} W exceeds total SBS capacity {max_total} W")]
    InfeasibleBudget { budget: f64, max_total: f64 },

    /// Energy allocation failed for a specific table cell.
    #[error("allocation failed at state {state}, Q = {q}, p0 = {p0}: {source}")]
    AllocationFailed {
        state: usize,
        q: usize,
        p0: f64,
        #[source]
        source: Box<Error>,
    },

    /// Exhaustive enumeration would exceed the configured candidate budget.
    #[error("enumeration over {candidates} pure strategies exceeds budget {budget}")]
    EnumerationBudgetExceeded { candidates: u128, budget: u128 },

    /// Best-response iteration entered a cycle without reaching a fixed point.
    #[error("best-response iteration cycled without a fixed point; cycle of length {} (trace attached)", trace.len())]
    BestResponseCycle { trace: Vec<Vec<usize>> },

    /// No equilibrium satisfied the acceptance tolerances.
    #[error("no equilibrium found: {reason}")]
    NoEquilibrium { reason: String },

    /// A candidate solution violates a feasibility constraint of the
    /// equilibrium program.
    #[error("infeasible candidate: constraint `{constraint}` violated by {residual:.3e}")]
    InfeasibleCandidate { constraint: String, residual: f64 },

    /// The explicit finite-difference iteration blew up.
    #[error(
        "finite-difference instability at iteration {iteration}, t = {t}: |value| reached {max_abs:.3e}; \
         reduce the time step (the scheme needs (dR)^2 > dt with dt small where the density lives)"
    )]
    MfgInstability {
        iteration: usize,
        t: usize,
        max_abs: f64,
    },

    /// Non-finite values appeared in the MFG grid.
    #[error("MFG iteration diverged at iteration {iteration}: non-finite grid values")]
    MfgDiverged { iteration: usize },

    /// Configuration value violates a documented constraint.
    #[error("config key `{key}`: {constraint}")]
    ConfigValidation { key: String, constraint: String },

    /// Configuration file could not be parsed.
    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(key: &str, constraint: impl Into<String>) -> Self {
        Error::ConfigValidation {
            key: key.to_string(),
            constraint: constraint.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
