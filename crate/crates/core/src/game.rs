//! Single-controller discounted stochastic game between the MBS and the
//! CES.
//!
//! The battery level is the game state and only the CES moves it. Fixing
//! an MBS strategy `m` turns the CES side into a discounted MDP whose
//! optimal value `phi_1`, greedy policy `n`, and discounted occupancy `x`
//! are the primal/dual pieces of the value LP. A pair `(m, n)` is a Nash
//! point exactly when the bilinear expression
//! `m (R0 + R1) x - pi^T phi_1 - 1^T xi` vanishes, which is how
//! candidates are certified here. Enumeration over pure MBS strategies is
//! the reference solver (the MBS always has a pure best response); a
//! best-response iteration and a penalized local-search mode cover larger
//! instances.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::transition_row;
use crate::error::{Error, Result};
use crate::mdp::Mdp;
use crate::payoff::{GameConfig, PayoffTables};

/// Absolute tolerance on the equilibrium gap.
pub const GAP_TOLERANCE: f64 = 1e-6;
/// Tolerance on feasibility residuals when validating candidates.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-6;
/// Strategy normalization tolerance.
pub const STRATEGY_TOLERANCE: f64 = 1e-10;
/// Default enumeration budget (number of pure MBS strategies).
pub const DEFAULT_ENUMERATION_BUDGET: u128 = 1 << 20;

/// Mixed stationary strategies of both players.
///
/// `mbs[s]` is a distribution over the power levels, `ces[s]` over the
/// feasible dispatch actions of state `s` (in table column order).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyPair {
    pub mbs: Vec<Vec<f64>>,
    pub ces: Vec<Vec<f64>>,
}

impl StrategyPair {
    /// Point-mass strategies from per-state action indices.
    pub fn pure(mbs_idx: &[usize], ces_idx: &[usize], tables: &PayoffTables, config: &GameConfig) -> Self {
        let mbs = mbs_idx
            .iter()
            .map(|&i| {
                let mut row = vec![0.0; config.num_power_levels()];
                row[i] = 1.0;
                row
            })
            .collect();
        let ces = ces_idx
            .iter()
            .enumerate()
            .map(|(s, &a)| {
                let mut row = vec![0.0; tables.actions[s].len()];
                row[a] = 1.0;
                row
            })
            .collect();
        Self { mbs, ces }
    }

    /// Per-state MBS action indices if the MBS side is pure.
    pub fn mbs_pure_indices(&self) -> Option<Vec<usize>> {
        self.mbs
            .iter()
            .map(|row| {
                let mut idx = None;
                for (i, &w) in row.iter().enumerate() {
                    if w == 1.0 {
                        idx = Some(i);
                    } else if w != 0.0 {
                        return None;
                    }
                }
                idx
            })
            .collect()
    }

    pub fn validate(&self, tables: &PayoffTables, config: &GameConfig) -> Result<()> {
        if self.mbs.len() != tables.num_states() || self.ces.len() != tables.num_states() {
            return Err(Error::InfeasibleCandidate {
                constraint: "strategy length".into(),
                residual: f64::NAN,
            });
        }
        for (s, row) in self.mbs.iter().enumerate() {
            if row.len() != config.num_power_levels() {
                return Err(Error::InfeasibleCandidate {
                    constraint: format!("m({s}) arity"),
                    residual: f64::NAN,
                });
            }
            check_distribution(row, &format!("m({s})"))?;
        }
        for (s, row) in self.ces.iter().enumerate() {
            if row.len() != tables.actions[s].len() {
                return Err(Error::InfeasibleCandidate {
                    constraint: format!("n({s}) support"),
                    residual: f64::NAN,
                });
            }
            check_distribution(row, &format!("n({s})"))?;
        }
        Ok(())
    }
}

fn check_distribution(row: &[f64], name: &str) -> Result<()> {
    if row.iter().any(|&w| w < -STRATEGY_TOLERANCE) {
        return Err(Error::InfeasibleCandidate {
            constraint: format!("{name} non-negativity"),
            residual: row.iter().fold(0.0f64, |a, &b| a.min(b)).abs(),
        });
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > STRATEGY_TOLERANCE {
        return Err(Error::InfeasibleCandidate {
            constraint: format!("{name} normalization"),
            residual: (total - 1.0).abs(),
        });
    }
    Ok(())
}

/// A certified (or candidate) equilibrium of the game.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquilibriumSolution {
    pub strategies: StrategyPair,
    /// CES discounted values `phi_1` per state.
    pub ces_values: Vec<f64>,
    /// `xi_s`: best MBS stage payoff against the occupancy at state `s`.
    pub mbs_state_payoffs: Vec<f64>,
    /// Discounted state-action occupancy `x[s][a]`.
    pub occupancy: Vec<Vec<f64>>,
    /// Bilinear equilibrium gap (zero at a Nash pair).
    pub gap: f64,
}

impl EquilibriumSolution {
    /// `pi^T phi_1`: the CES's expected discounted value.
    pub fn ces_objective(&self, config: &GameConfig) -> f64 {
        config
            .initial_state_dist
            .iter()
            .zip(self.ces_values.iter())
            .map(|(&p, &v)| p * v)
            .sum()
    }
}

/// CES best response to an MBS strategy.
#[derive(Debug, Clone)]
pub struct CesBestResponse {
    /// Pure optimal policy as per-state distributions.
    pub ces: Vec<Vec<f64>>,
    /// Optimal values `phi_1`.
    pub values: Vec<f64>,
    /// Discounted state-action occupancy of `(pi, n)`.
    pub occupancy: Vec<Vec<f64>>,
    pub bellman_residual: f64,
}

/// Builds the CES-side MDP induced by MBS strategy `m`:
/// `r1(s, a) = sum_p m(s, p) U1(p, Q_a)` with battery transitions.
fn ces_mdp(m: &[Vec<f64>], tables: &PayoffTables, config: &GameConfig) -> Mdp {
    let states = tables.num_states();
    let mut rewards = Vec::with_capacity(states);
    let mut transition = Vec::with_capacity(states);
    for s in 0..states {
        let block = &tables.r1[s];
        let acts = &tables.actions[s];
        let r: Vec<f64> = (0..acts.len())
            .map(|a| {
                m[s].iter()
                    .enumerate()
                    .map(|(pi, &w)| w * block[[pi, a]])
                    .sum()
            })
            .collect();
        let t: Vec<Vec<f64>> = acts
            .iter()
            .map(|&q| transition_row(&config.energy, s, q).expect("feasible action"))
            .collect();
        rewards.push(r);
        transition.push(t);
    }
    Mdp {
        discount: config.discount,
        rewards,
        transition,
    }
}

/// Solves the CES's best-response MDP against `m`.
///
/// Returns the greedy pure policy (ties toward fewer packets), its exact
/// discounted values, and the discounted occupancy that certifies dual
/// feasibility.
pub fn ces_best_response(
    m: &[Vec<f64>],
    tables: &PayoffTables,
    config: &GameConfig,
) -> Result<CesBestResponse> {
    let mdp = ces_mdp(m, tables, config);
    let sol = mdp.solve()?;
    let ces: Vec<Vec<f64>> = sol
        .policy
        .iter()
        .enumerate()
        .map(|(s, &a)| {
            let mut row = vec![0.0; tables.actions[s].len()];
            row[a] = 1.0;
            row
        })
        .collect();
    let y = mdp.state_occupancy(&ces, &config.initial_state_dist)?;
    let occupancy = ces
        .iter()
        .enumerate()
        .map(|(s, row)| row.iter().map(|&w| w * y[s]).collect())
        .collect();
    Ok(CesBestResponse {
        ces,
        values: sol.values,
        occupancy,
        bellman_residual: sol.bellman_residual,
    })
}

/// Pure MBS best response to a CES strategy: per state, the power level
/// maximizing the expected stage payoff (the MBS does not influence the
/// state, so stage-wise argmax is globally optimal). Ties break toward
/// the smaller power.
pub fn mbs_best_response(n: &[Vec<f64>], tables: &PayoffTables, config: &GameConfig) -> Vec<usize> {
    (0..tables.num_states())
        .map(|s| {
            let block = &tables.r0[s];
            let mut best = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            for pi in 0..config.num_power_levels() {
                let v: f64 = n[s]
                    .iter()
                    .enumerate()
                    .map(|(a, &w)| w * block[[pi, a]])
                    .sum();
                if v > best_v {
                    best_v = v;
                    best = pi;
                }
            }
            best
        })
        .collect()
}

/// Assembles a candidate solution from strategies and the CES values,
/// recomputing `xi` from the occupancy and evaluating the gap.
fn assemble_candidate(
    strategies: StrategyPair,
    values: Vec<f64>,
    occupancy: Vec<Vec<f64>>,
    tables: &PayoffTables,
    config: &GameConfig,
) -> EquilibriumSolution {
    let states = tables.num_states();
    let mut xi = vec![0.0; states];
    let mut bilinear = 0.0;
    for s in 0..states {
        let r0 = &tables.r0[s];
        let r1 = &tables.r1[s];
        let x = &occupancy[s];
        // R0^s x(s) per power level; xi_s is its maximum.
        let mut best = f64::NEG_INFINITY;
        for pi in 0..config.num_power_levels() {
            let v: f64 = x.iter().enumerate().map(|(a, &xa)| xa * r0[[pi, a]]).sum();
            best = best.max(v);
        }
        xi[s] = best;
        for (pi, &w) in strategies.mbs[s].iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let v: f64 = x
                .iter()
                .enumerate()
                .map(|(a, &xa)| xa * (r0[[pi, a]] + r1[[pi, a]]))
                .sum();
            bilinear += w * v;
        }
    }
    let pi_phi: f64 = config
        .initial_state_dist
        .iter()
        .zip(values.iter())
        .map(|(&p, &v)| p * v)
        .sum();
    let gap = bilinear - pi_phi - xi.iter().sum::<f64>();
    EquilibriumSolution {
        strategies,
        ces_values: values,
        mbs_state_payoffs: xi,
        occupancy,
        gap,
    }
}

/// Recomputes the bilinear equilibrium gap of a candidate after checking
/// the feasibility constraints of the underlying quadratic program.
///
/// Rejects candidates whose occupancy identity `x^T H = pi^T`, value
/// dominance `H phi_1 >= R1^T m`, stage bound `R0^s x(s) <= xi_s`, or
/// strategy normalization is violated beyond [`FEASIBILITY_TOLERANCE`],
/// naming the constraint.
pub fn equilibrium_gap(
    candidate: &EquilibriumSolution,
    tables: &PayoffTables,
    config: &GameConfig,
) -> Result<f64> {
    candidate.strategies.validate(tables, config)?;
    let states = tables.num_states();
    let x = &candidate.occupancy;
    for (s, row) in x.iter().enumerate() {
        if row.len() != tables.actions[s].len() {
            return Err(Error::InfeasibleCandidate {
                constraint: format!("x({s}) support"),
                residual: f64::NAN,
            });
        }
        if let Some(&neg) = row.iter().find(|&&v| v < -FEASIBILITY_TOLERANCE) {
            return Err(Error::InfeasibleCandidate {
                constraint: format!("x({s}) non-negativity"),
                residual: neg.abs(),
            });
        }
    }

    // Occupancy identity x^T H = pi^T.
    let mut worst = 0.0f64;
    for sp in 0..states {
        let mut lhs = 0.0;
        for s in 0..states {
            for (a, &xa) in x[s].iter().enumerate() {
                if xa == 0.0 {
                    continue;
                }
                let q = transition_row(&config.energy, s, tables.actions[s][a])?;
                let delta = if s == sp { 1.0 } else { 0.0 };
                lhs += xa * (delta - config.discount * q[sp]);
            }
        }
        worst = worst.max((lhs - config.initial_state_dist[sp]).abs());
    }
    if worst > FEASIBILITY_TOLERANCE {
        return Err(Error::InfeasibleCandidate {
            constraint: "occupancy identity x^T H = pi^T".into(),
            residual: worst,
        });
    }

    // Value dominance H phi_1 >= R1^T m (per state-action Bellman inequality).
    let phi = &candidate.ces_values;
    let mut dominance = 0.0f64;
    for s in 0..states {
        for (a, &q_action) in tables.actions[s].iter().enumerate() {
            let r1: f64 = candidate.strategies.mbs[s]
                .iter()
                .enumerate()
                .map(|(pi, &w)| w * tables.r1[s][[pi, a]])
                .sum();
            let row = transition_row(&config.energy, s, q_action)?;
            let cont: f64 = row.iter().zip(phi.iter()).map(|(&q, &v)| q * v).sum();
            let slack = phi[s] - (r1 + config.discount * cont);
            dominance = dominance.min(slack);
        }
    }
    if dominance < -FEASIBILITY_TOLERANCE {
        return Err(Error::InfeasibleCandidate {
            constraint: "value dominance H phi_1 >= R1^T m".into(),
            residual: dominance.abs(),
        });
    }

    // Stage bound R0^s x(s) <= xi_s.
    let mut stage = 0.0f64;
    for s in 0..states {
        for pi in 0..config.num_power_levels() {
            let v: f64 = x[s]
                .iter()
                .enumerate()
                .map(|(a, &xa)| xa * tables.r0[s][[pi, a]])
                .sum();
            stage = stage.max(v - candidate.mbs_state_payoffs[s]);
        }
    }
    if stage > FEASIBILITY_TOLERANCE {
        return Err(Error::InfeasibleCandidate {
            constraint: "stage bound R0^s x(s) <= xi_s".into(),
            residual: stage,
        });
    }

    let mut bilinear = 0.0;
    for s in 0..states {
        for (pi, &w) in candidate.strategies.mbs[s].iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let v: f64 = x[s]
                .iter()
                .enumerate()
                .map(|(a, &xa)| xa * (tables.r0[s][[pi, a]] + tables.r1[s][[pi, a]]))
                .sum();
            bilinear += w * v;
        }
    }
    let pi_phi: f64 = config
        .initial_state_dist
        .iter()
        .zip(phi.iter())
        .map(|(&p, &v)| p * v)
        .sum();
    Ok(bilinear - pi_phi - candidate.mbs_state_payoffs.iter().sum::<f64>())
}

/// Solver modes.
#[derive(Debug, Clone)]
pub enum SolveMode {
    /// Exhaustive search over pure MBS strategies (reference mode).
    Enumerate { budget: u128 },
    /// Alternating best responses from a seeded random pure strategy.
    BestResponseIteration { seed: u64, max_rounds: usize },
    /// Penalized local search with monotone-improvement restarts.
    Incremental {
        epsilon: f64,
        restarts: usize,
        seed: u64,
    },
}

impl SolveMode {
    pub fn enumerate() -> Self {
        SolveMode::Enumerate {
            budget: DEFAULT_ENUMERATION_BUDGET,
        }
    }

    pub fn best_response(seed: u64) -> Self {
        SolveMode::BestResponseIteration {
            seed,
            max_rounds: 500,
        }
    }

    pub fn incremental(seed: u64) -> Self {
        SolveMode::Incremental {
            epsilon: 1e-6,
            restarts: 12,
            seed,
        }
    }
}

/// Scale of the payoff entries, used to size acceptance tolerances.
fn payoff_scale(tables: &PayoffTables) -> f64 {
    let mut scale = 0.0f64;
    for block in tables.r0.iter().chain(tables.r1.iter()) {
        for &v in block.iter() {
            scale = scale.max(v.abs());
        }
    }
    scale.max(1e-300)
}

/// Builds the candidate for a pure MBS strategy and keeps it when it is a
/// mutual best response within tolerance.
fn candidate_for_pure_m(
    m_idx: &[usize],
    tables: &PayoffTables,
    config: &GameConfig,
    scale: f64,
) -> Result<Option<EquilibriumSolution>> {
    let m: Vec<Vec<f64>> = m_idx
        .iter()
        .map(|&i| {
            let mut row = vec![0.0; config.num_power_levels()];
            row[i] = 1.0;
            row
        })
        .collect();
    let br = ces_best_response(&m, tables, config)?;
    // MBS-side best-response check, state by state.
    let tol = 1e-9 * scale;
    for s in 0..tables.num_states() {
        let block = &tables.r0[s];
        let value = |pi: usize| -> f64 {
            br.ces[s]
                .iter()
                .enumerate()
                .map(|(a, &w)| w * block[[pi, a]])
                .sum()
        };
        let own = value(m_idx[s]);
        let best = (0..config.num_power_levels())
            .map(value)
            .fold(f64::NEG_INFINITY, f64::max);
        if own < best - tol {
            return Ok(None);
        }
    }
    let strategies = StrategyPair {
        mbs: m,
        ces: br.ces.clone(),
    };
    let sol = assemble_candidate(strategies, br.values, br.occupancy, tables, config);
    if sol.gap.abs() <= GAP_TOLERANCE {
        Ok(Some(sol))
    } else {
        Ok(None)
    }
}

fn decode_pure_m(mut index: u128, states: usize, base: usize) -> Vec<usize> {
    let mut digits = vec![0usize; states];
    for d in digits.iter_mut() {
        *d = (index % base as u128) as usize;
        index /= base as u128;
    }
    digits
}

/// Enumerates every pure MBS strategy and returns all certified
/// equilibria, in strategy-index order.
pub fn enumerate_equilibria(
    tables: &PayoffTables,
    config: &GameConfig,
    budget: u128,
) -> Result<Vec<EquilibriumSolution>> {
    let states = tables.num_states();
    let base = config.num_power_levels();
    let candidates = (base as u128)
        .checked_pow(states as u32)
        .ok_or(Error::EnumerationBudgetExceeded {
            candidates: u128::MAX,
            budget,
        })?;
    if candidates > budget {
        return Err(Error::EnumerationBudgetExceeded { candidates, budget });
    }
    let scale = payoff_scale(tables);
    let results: Vec<Result<Option<EquilibriumSolution>>> = (0..candidates as u64)
        .into_par_iter()
        .map(|idx| {
            let m_idx = decode_pure_m(idx as u128, states, base);
            candidate_for_pure_m(&m_idx, tables, config, scale)
        })
        .collect();
    let mut found = Vec::new();
    for r in results {
        if let Some(sol) = r? {
            found.push(sol);
        }
    }
    Ok(found)
}

/// Runs alternating best responses from a pure seed strategy until a
/// fixed point or a cycle.
fn best_response_iteration(
    tables: &PayoffTables,
    config: &GameConfig,
    seed: u64,
    max_rounds: usize,
) -> Result<EquilibriumSolution> {
    let states = tables.num_states();
    let base = config.num_power_levels();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut m_idx: Vec<usize> = (0..states).map(|_| rng.gen_range(0..base)).collect();
    let mut visited: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut history: Vec<Vec<usize>> = Vec::new();
    for round in 0..max_rounds {
        if let Some(&first) = visited.get(&m_idx) {
            return Err(Error::BestResponseCycle {
                trace: history[first..].to_vec(),
            });
        }
        visited.insert(m_idx.clone(), round);
        history.push(m_idx.clone());
        let m: Vec<Vec<f64>> = m_idx
            .iter()
            .map(|&i| {
                let mut row = vec![0.0; base];
                row[i] = 1.0;
                row
            })
            .collect();
        let br = ces_best_response(&m, tables, config)?;
        let reply = mbs_best_response(&br.ces, tables, config);
        if reply == m_idx {
            let strategies = StrategyPair { mbs: m, ces: br.ces.clone() };
            let sol = assemble_candidate(strategies, br.values, br.occupancy, tables, config);
            if sol.gap.abs() <= GAP_TOLERANCE {
                return Ok(sol);
            }
            return Err(Error::NoEquilibrium {
                reason: format!(
                    "best-response fixed point failed the gap check (gap {:.3e})",
                    sol.gap
                ),
            });
        }
        m_idx = reply;
    }
    Err(Error::NoEquilibrium {
        reason: format!("no fixed point within {max_rounds} best-response rounds"),
    })
}

/// Projects a vector onto the probability simplex.
fn project_simplex(row: &mut [f64]) {
    let n = row.len();
    let mut sorted = row.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut acc = 0.0;
    let mut tau = 0.0;
    for (k, &v) in sorted.iter().enumerate() {
        acc += v;
        let trial = (acc - 1.0) / (k + 1) as f64;
        if v - trial > 0.0 {
            tau = trial;
        }
    }
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - tau).max(0.0);
        total += *v;
    }
    if total > 0.0 {
        for v in row.iter_mut() {
            *v /= total;
        }
    } else {
        for v in row.iter_mut() {
            *v = 1.0 / n as f64;
        }
    }
}

/// Penalized local search reproducing the repeated local-solve procedure:
/// maximize `pi^T phi_1 + rho * gap` over mixed MBS strategies by
/// projected numerical-gradient ascent, round to a pure strategy, certify
/// it, and restart with the constraint that a new solution must not fall
/// more than `epsilon` below the incumbent. Heuristic; returned solutions
/// are always gap-certified.
fn incremental_solve(
    tables: &PayoffTables,
    config: &GameConfig,
    epsilon: f64,
    restarts: usize,
    seed: u64,
) -> Result<EquilibriumSolution> {
    let states = tables.num_states();
    let base = config.num_power_levels();
    let scale = payoff_scale(tables);
    let rho = 1e4;

    let evaluate = |m: &[Vec<f64>]| -> Result<(f64, f64)> {
        let br = ces_best_response(m, tables, config)?;
        let strategies = StrategyPair {
            mbs: m.to_vec(),
            ces: br.ces.clone(),
        };
        let sol = assemble_candidate(strategies, br.values, br.occupancy, tables, config);
        let obj = sol.ces_objective(config);
        Ok((obj, sol.gap))
    };

    let mut best: Option<EquilibriumSolution> = None;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for _ in 0..restarts {
        // Random mixed start.
        let mut m: Vec<Vec<f64>> = (0..states)
            .map(|_| {
                let mut row: Vec<f64> = (0..base).map(|_| rng.gen::<f64>() + 1e-3).collect();
                let t: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= t);
                row
            })
            .collect();
        let penalized = |m: &[Vec<f64>], best_obj: Option<f64>| -> Result<f64> {
            let (obj, gap) = evaluate(m)?;
            let mut j = obj / scale + rho * (gap / scale);
            if let Some(b) = best_obj {
                let short = ((b - epsilon) - obj) / scale;
                if short > 0.0 {
                    j -= rho * short * short;
                }
            }
            Ok(j)
        };
        let best_obj = best.as_ref().map(|b| b.ces_objective(config));
        let h = 1e-4;
        for _ in 0..40 {
            let j0 = penalized(&m, best_obj)?;
            // Numerical gradient, coordinate by coordinate.
            let mut grad = vec![vec![0.0; base]; states];
            for s in 0..states {
                for p in 0..base {
                    let mut probe = m.clone();
                    probe[s][p] += h;
                    project_simplex(&mut probe[s]);
                    let j1 = penalized(&probe, best_obj)?;
                    grad[s][p] = (j1 - j0) / h;
                }
            }
            // Backtracking ascent step.
            let mut improved = false;
            let mut step = 0.5;
            for _ in 0..8 {
                let mut trial = m.clone();
                for s in 0..states {
                    for p in 0..base {
                        trial[s][p] += step * grad[s][p];
                    }
                    project_simplex(&mut trial[s]);
                }
                if penalized(&trial, best_obj)? > j0 + 1e-12 {
                    m = trial;
                    improved = true;
                    break;
                }
                step *= 0.5;
            }
            if !improved {
                break;
            }
        }
        // Round to the pure strategy suggested by the mixed point.
        let m_idx: Vec<usize> = m
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap()
            })
            .collect();
        if let Some(sol) = candidate_for_pure_m(&m_idx, tables, config, scale)? {
            let obj = sol.ces_objective(config);
            let acceptable = match &best {
                None => true,
                Some(b) => obj >= b.ces_objective(config) - epsilon,
            };
            if acceptable
                && best
                    .as_ref()
                    .map(|b| obj > b.ces_objective(config))
                    .unwrap_or(true)
            {
                best = Some(sol);
            }
        }
    }
    best.ok_or_else(|| Error::NoEquilibrium {
        reason: "incremental search found no gap-certified pure equilibrium".into(),
    })
}

/// Computes a Nash equilibrium in the requested mode.
///
/// Enumerate returns the equilibrium maximizing the CES's expected
/// discounted value `pi^T phi_1` (ties: lexicographically smallest pure
/// MBS strategy).
pub fn solve_equilibrium(
    tables: &PayoffTables,
    config: &GameConfig,
    mode: &SolveMode,
) -> Result<EquilibriumSolution> {
    match mode {
        SolveMode::Enumerate { budget } => {
            let found = enumerate_equilibria(tables, config, *budget)?;
            if found.is_empty() {
                return Err(Error::NoEquilibrium {
                    reason: "no pure-MBS equilibrium passed the gap check".into(),
                });
            }
            let scale = payoff_scale(tables);
            let best_obj = found
                .iter()
                .map(|s| s.ces_objective(config))
                .fold(f64::NEG_INFINITY, f64::max);
            let tie = 1e-12 * scale.max(1.0);
            let mut tied: Vec<&EquilibriumSolution> = found
                .iter()
                .filter(|s| s.ces_objective(config) >= best_obj - tie)
                .collect();
            tied.sort_by_key(|s| s.strategies.mbs_pure_indices().unwrap_or_default());
            Ok(tied[0].clone())
        }
        SolveMode::BestResponseIteration { seed, max_rounds } => {
            best_response_iteration(tables, config, *seed, *max_rounds)
        }
        SolveMode::Incremental {
            epsilon,
            restarts,
            seed,
        } => incremental_solve(tables, config, *epsilon, *restarts, *seed),
    }
}

/// Worst profitable pure MBS deviation across states: the largest gain of
/// any power level over the played strategy, in expected stage payoff
/// against the equilibrium CES strategy. Non-positive (up to tolerance)
/// at an equilibrium.
pub fn mbs_deviation_margin(
    solution: &EquilibriumSolution,
    tables: &PayoffTables,
    config: &GameConfig,
) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for s in 0..tables.num_states() {
        let block = &tables.r0[s];
        let value = |pi: usize| -> f64 {
            solution.strategies.ces[s]
                .iter()
                .enumerate()
                .map(|(a, &w)| w * block[[pi, a]])
                .sum()
        };
        let played: f64 = solution.strategies.mbs[s]
            .iter()
            .enumerate()
            .map(|(pi, &w)| w * value(pi))
            .sum();
        let best = (0..config.num_power_levels())
            .map(value)
            .fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max(best - played);
    }
    worst
}

/// Bellman residual of the CES values under the equilibrium MBS strategy.
pub fn ces_bellman_residual(
    solution: &EquilibriumSolution,
    tables: &PayoffTables,
    config: &GameConfig,
) -> f64 {
    let mdp = ces_mdp(&solution.strategies.mbs, tables, config);
    mdp.bellman_residual(&solution.ces_values)
}

/// One slot of a simulated equilibrium trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub t: usize,
    pub state: usize,
    pub q: usize,
    pub p0: f64,
    pub sbs_powers: Vec<f64>,
    pub arrival: usize,
}

/// Samples an action index from a distribution row.
fn sample_index<R: Rng>(rng: &mut R, row: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &w) in row.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    row.len() - 1
}

/// Simulates the closed loop: each slot the CES draws `Q ~ n(s)`, the MBS
/// draws `p0 ~ m(s)`, the memoized split is dispatched, and the battery
/// advances with a fresh arrival. Deterministic for a given seed.
pub fn run_policy(
    solution: &EquilibriumSolution,
    tables: &PayoffTables,
    config: &GameConfig,
    horizon: usize,
    seed: u64,
) -> Vec<TrajectoryStep> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut state = sample_index(&mut rng, &config.initial_state_dist);
    let mut steps = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let a = sample_index(&mut rng, &solution.strategies.ces[state]);
        let q = tables.actions[state][a];
        let pi = sample_index(&mut rng, &solution.strategies.mbs[state]);
        let p0 = config.mbs_power_levels[pi];
        let powers = tables.allocation(q, pi).powers.clone();
        let arrival = config.energy.arrival.sample(&mut rng);
        steps.push(TrajectoryStep {
            t,
            state,
            q,
            p0,
            sbs_powers: powers,
            arrival,
        });
        state = (state - q + arrival).min(config.energy.battery_capacity);
    }
    steps
}
