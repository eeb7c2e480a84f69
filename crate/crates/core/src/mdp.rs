//! Finite discounted MDPs over the battery chain.
//!
//! Value iteration to a tight Bellman residual, greedy policy extraction
//! with smallest-index tie-breaking, then exact policy evaluation (and
//! policy improvement until stable) through dense linear solves. Also
//! exposes the discounted state occupancy, the dual variable of the
//! value LP.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Value-iteration Bellman residual target.
const VI_TOLERANCE: f64 = 1e-9;
const VI_MAX_SWEEPS: usize = 200_000;
/// Policy-iteration round cap (finite convergence, this is a guard).
const PI_MAX_ROUNDS: usize = 10_000;

/// A finite discounted MDP with per-state action lists.
#[derive(Debug, Clone)]
pub struct Mdp {
    /// Discount factor in (0, 1).
    pub discount: f64,
    /// `rewards[s][a]` for action index `a` at state `s`.
    pub rewards: Vec<Vec<f64>>,
    /// `transition[s][a][s']` rows, each summing to 1.
    pub transition: Vec<Vec<Vec<f64>>>,
}

/// Optimal policy and value function.
#[derive(Debug, Clone)]
pub struct MdpSolution {
    /// Optimal values per state.
    pub values: Vec<f64>,
    /// Optimal action index per state (smallest index among ties).
    pub policy: Vec<usize>,
    /// Bellman residual of `values`.
    pub bellman_residual: f64,
    pub sweeps: usize,
}

impl Mdp {
    pub fn num_states(&self) -> usize {
        self.rewards.len()
    }

    fn q_value(&self, s: usize, a: usize, values: &[f64]) -> f64 {
        let row = &self.transition[s][a];
        let cont: f64 = row
            .iter()
            .zip(values.iter())
            .map(|(&q, &v)| q * v)
            .sum();
        self.rewards[s][a] + self.discount * cont
    }

    /// Greedy policy w.r.t. `values`, ties toward the smaller index.
    pub fn greedy_policy(&self, values: &[f64]) -> Vec<usize> {
        (0..self.num_states())
            .map(|s| {
                let mut best = 0;
                let mut best_v = self.q_value(s, 0, values);
                for a in 1..self.rewards[s].len() {
                    let v = self.q_value(s, a, values);
                    if v > best_v {
                        best_v = v;
                        best = a;
                    }
                }
                best
            })
            .collect()
    }

    /// Max-norm Bellman residual of `values`.
    pub fn bellman_residual(&self, values: &[f64]) -> f64 {
        (0..self.num_states())
            .map(|s| {
                let best = (0..self.rewards[s].len())
                    .map(|a| self.q_value(s, a, values))
                    .fold(f64::NEG_INFINITY, f64::max);
                (best - values[s]).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Exact discounted value of a stationary deterministic policy.
    pub fn evaluate_policy(&self, policy: &[usize]) -> Result<Vec<f64>> {
        let n = self.num_states();
        let a = DMatrix::from_fn(n, n, |s, sp| {
            let q = self.transition[s][policy[s]][sp];
            (if s == sp { 1.0 } else { 0.0 }) - self.discount * q
        });
        let b = DVector::from_fn(n, |s, _| self.rewards[s][policy[s]]);
        let lu = a.lu();
        let v = lu.solve(&b).ok_or_else(|| Error::NoEquilibrium {
            reason: "policy evaluation system is singular".into(),
        })?;
        Ok(v.iter().copied().collect())
    }

    /// Solves the MDP: value iteration to `1e-9`, then policy iteration
    /// with exact evaluations until the greedy policy is stable.
    pub fn solve(&self) -> Result<MdpSolution> {
        let n = self.num_states();
        let mut values = vec![0.0; n];
        let mut sweeps = 0;
        for _ in 0..VI_MAX_SWEEPS {
            sweeps += 1;
            let mut next = vec![0.0; n];
            let mut delta = 0.0f64;
            for s in 0..n {
                let best = (0..self.rewards[s].len())
                    .map(|a| self.q_value(s, a, &values))
                    .fold(f64::NEG_INFINITY, f64::max);
                delta = delta.max((best - values[s]).abs());
                next[s] = best;
            }
            values = next;
            if delta <= VI_TOLERANCE {
                break;
            }
        }
        let mut policy = self.greedy_policy(&values);
        for _ in 0..PI_MAX_ROUNDS {
            values = self.evaluate_policy(&policy)?;
            let improved = self.greedy_policy(&values);
            if improved == policy {
                break;
            }
            policy = improved;
        }
        let bellman_residual = self.bellman_residual(&values);
        Ok(MdpSolution {
            values,
            policy,
            bellman_residual,
            sweeps,
        })
    }

    /// State transition matrix induced by a mixed stationary strategy
    /// (`strategy[s][a]` = probability of action index `a`).
    pub fn induced_chain(&self, strategy: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = self.num_states();
        (0..n)
            .map(|s| {
                let mut row = vec![0.0; n];
                for (a, &w) in strategy[s].iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    for (sp, &q) in self.transition[s][a].iter().enumerate() {
                        row[sp] += w * q;
                    }
                }
                row
            })
            .collect()
    }

    /// Discounted state occupancy `y^T = pi^T (I - beta P)^{-1}` of a
    /// mixed stationary strategy.
    pub fn state_occupancy(&self, strategy: &[Vec<f64>], initial: &[f64]) -> Result<Vec<f64>> {
        let n = self.num_states();
        let chain = self.induced_chain(strategy);
        let a = DMatrix::from_fn(n, n, |s, sp| {
            // (I - beta P)^T
            (if s == sp { 1.0 } else { 0.0 }) - self.discount * chain[sp][s]
        });
        let b = DVector::from_fn(n, |s, _| initial[s]);
        let y = a.lu().solve(&b).ok_or_else(|| Error::NoEquilibrium {
            reason: "occupancy system is singular".into(),
        })?;
        Ok(y.iter().copied().collect())
    }

    /// Stationary distribution of the chain induced by a strategy,
    /// by damped power iteration from `initial`. The lazy mix
    /// `(I + P)/2` shares the stationary distribution and is aperiodic.
    pub fn stationary_distribution(&self, strategy: &[Vec<f64>], initial: &[f64]) -> Vec<f64> {
        let n = self.num_states();
        let chain = self.induced_chain(strategy);
        let mut rho = initial.to_vec();
        for _ in 0..1_000_000 {
            let mut next = vec![0.0; n];
            for s in 0..n {
                if rho[s] == 0.0 {
                    continue;
                }
                next[s] += 0.5 * rho[s];
                for sp in 0..n {
                    next[sp] += 0.5 * rho[s] * chain[s][sp];
                }
            }
            let total: f64 = next.iter().sum();
            for v in &mut next {
                *v /= total;
            }
            let delta = rho
                .iter()
                .zip(next.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            rho = next;
            if delta <= 1e-14 {
                break;
            }
        }
        rho
    }
}
