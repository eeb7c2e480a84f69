//! CES battery dynamics.
//!
//! The central energy storage holds an integer number of energy packets,
//! capped at `S`. Each slot it dispatches `Q` packets (feasible only when
//! the battery holds at least `Q`) and receives a random arrival `phi`
//! from a distribution truncated at `S` with the tail mass folded onto
//! `S`. The battery follows `E(t+1) = min(E(t) - Q + phi, S)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for probability mass conservation.
pub const PMF_TOLERANCE: f64 = 1e-12;

/// Distribution of the number of energy packets arriving per slot,
/// supported on `0..=S` with `Pr(phi = S)` absorbing the tail.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrivalDistribution {
    pmf: Vec<f64>,
}

impl ArrivalDistribution {
    /// Builds a distribution from an explicit pmf over `0..=S`.
    pub fn from_pmf(pmf: Vec<f64>) -> Result<Self> {
        if pmf.is_empty() {
            return Err(Error::InvalidDistribution {
                reason: "pmf must not be empty".into(),
            });
        }
        if pmf.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::InvalidDistribution {
                reason: "pmf entries must be non-negative and finite".into(),
            });
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > PMF_TOLERANCE {
            return Err(Error::InvalidDistribution {
                reason: format!("pmf sums to {total}, expected 1 within {PMF_TOLERANCE:e}"),
            });
        }
        Ok(Self { pmf })
    }

    /// Poisson(rate) truncated at `capacity` packets, with
    /// `Pr(phi = S) = Pr(phi >= S)`.
    pub fn poisson(rate: f64, capacity: usize) -> Result<Self> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::InvalidDistribution {
                reason: format!("poisson rate must be positive and finite, got {rate}"),
            });
        }
        let mut pmf = Vec::with_capacity(capacity + 1);
        let mut term = (-rate).exp();
        let mut below = 0.0;
        for k in 0..capacity {
            pmf.push(term);
            below += term;
            term *= rate / (k + 1) as f64;
        }
        pmf.push((1.0 - below).max(0.0));
        Self::from_pmf(pmf)
    }

    /// Point mass at `value` packets.
    pub fn deterministic(value: usize, capacity: usize) -> Result<Self> {
        if value > capacity {
            return Err(Error::InvalidDistribution {
                reason: format!("point mass {value} exceeds capacity {capacity}"),
            });
        }
        let mut pmf = vec![0.0; capacity + 1];
        pmf[value] = 1.0;
        Self::from_pmf(pmf)
    }

    /// Largest supported arrival (battery capacity).
    pub fn capacity(&self) -> usize {
        self.pmf.len() - 1
    }

    /// `Pr(phi = k)`, zero outside the support.
    pub fn prob(&self, k: usize) -> f64 {
        self.pmf.get(k).copied().unwrap_or(0.0)
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    /// Inverse-CDF sample of the arrival count.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (k, &p) in self.pmf.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        self.pmf.len() - 1
    }
}

/// Physical parameters of the CES energy chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyConfig {
    /// Battery capacity `S`; battery levels live in `0..=S`.
    pub battery_capacity: usize,
    /// Volume of one energy packet, joules.
    pub packet_volume: f64,
    /// Slot duration, seconds.
    pub slot_duration: f64,
    /// Arrival distribution over `0..=S`.
    pub arrival: ArrivalDistribution,
    /// Fraction of dispatched energy lost in transfer, in `[0, 1)`.
    pub transfer_loss_fraction: f64,
}

impl EnergyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.packet_volume > 0.0) {
            return Err(Error::config("energy.packet_volume", "must be > 0"));
        }
        if !(self.slot_duration > 0.0) {
            return Err(Error::config("energy.slot_duration", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.transfer_loss_fraction) {
            return Err(Error::config(
                "energy.transfer_loss_fraction",
                "must lie in [0, 1)",
            ));
        }
        if self.arrival.capacity() != self.battery_capacity {
            return Err(Error::config(
                "energy.arrival",
                format!(
                    "arrival pmf covers 0..={}, battery capacity is {}",
                    self.arrival.capacity(),
                    self.battery_capacity
                ),
            ));
        }
        Ok(())
    }

    /// Number of battery states, `S + 1`.
    pub fn num_states(&self) -> usize {
        self.battery_capacity + 1
    }
}

/// One-slot battery transition matrix under dispatch action `Q`.
///
/// Rows indexed by the current level `s`; rows with `s < Q` are `None`
/// (the action is infeasible there). Valid rows are exactly stochastic:
/// the `s' = S` entry carries all arrival mass that would overflow.
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    pub action: usize,
    pub rows: Vec<Option<Vec<f64>>>,
}

impl TransitionMatrix {
    /// Row of the matrix for current level `s`, if the action is feasible.
    pub fn row(&self, s: usize) -> Option<&[f64]> {
        self.rows[s].as_deref()
    }
}

/// Builds the transition matrix for dispatch action `Q`.
pub fn transition_matrix(config: &EnergyConfig, action: usize) -> Result<TransitionMatrix> {
    let cap = config.battery_capacity;
    if action > cap {
        return Err(Error::ActionExceedsCapacity {
            q: action,
            capacity: cap,
        });
    }
    let rows = (0..=cap)
        .map(|s| (s >= action).then(|| transition_row_unchecked(config, s, action)))
        .collect();
    Ok(TransitionMatrix { action, rows })
}

/// Transition row for a single `(state, action)` pair.
pub fn transition_row(config: &EnergyConfig, state: usize, action: usize) -> Result<Vec<f64>> {
    if action > config.battery_capacity {
        return Err(Error::ActionExceedsCapacity {
            q: action,
            capacity: config.battery_capacity,
        });
    }
    if action > state {
        return Err(Error::ActionExceedsState {
            q: action,
            state,
        });
    }
    Ok(transition_row_unchecked(config, state, action))
}

fn transition_row_unchecked(config: &EnergyConfig, state: usize, action: usize) -> Vec<f64> {
    let cap = config.battery_capacity;
    let residual = state - action;
    let mut row = vec![0.0; cap + 1];
    let mut below = 0.0;
    for sp in residual..cap {
        let p = config.arrival.prob(sp - residual);
        row[sp] = p;
        below += p;
    }
    // All remaining mass saturates the battery.
    row[cap] = (1.0 - below).max(0.0);
    row
}

/// Advances the battery one slot: `min(s - Q + phi, S)`.
pub fn step_battery(config: &EnergyConfig, state: usize, action: usize, arrival: usize) -> Result<usize> {
    if action > state {
        return Err(Error::ActionExceedsState {
            q: action,
            state,
        });
    }
    Ok((state - action + arrival).min(config.battery_capacity))
}

/// Total SBS transmit-power budget bought by `Q` packets:
/// `(1 - loss) * K * Q / dT` watts.
pub fn packets_to_power_budget(action: usize, config: &EnergyConfig) -> f64 {
    (1.0 - config.transfer_loss_fraction) * config.packet_volume * action as f64
        / config.slot_duration
}
