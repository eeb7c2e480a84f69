//! Stage payoffs of the MBS/CES game.
//!
//! Both players track SINR targets through negated squared errors. For a
//! dispatch `Q` and MBS power `p0`, the CES splits the bought power
//! budget over the SBSs by maximizing its own utility
//! `-(1/M) sum_i (p_i g_i - lambda_1 I_i)^2` subject to the budget plane
//! and per-SBS power boxes; the problem is strictly concave, so the split
//! is unique and both stage payoffs are functions of `(Q, p0)` alone.
//! Payoff tables stack those values for every battery state.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{packets_to_power_budget, EnergyConfig};
use crate::error::{Error, Result};
use crate::geometry::GainTable;
use crate::qp::{self, FeasibleSet, QuadraticObjective};

/// Relative slack when deciding whether a budget fits the SBS boxes.
const BUDGET_SLACK: f64 = 1e-12;

/// Full parameter set of the stochastic game.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GameConfig {
    /// Ordered MBS transmit-power levels, watts.
    pub mbs_power_levels: Vec<f64>,
    /// Macro user SINR target, lambda_0.
    pub target_sinr_mbs: f64,
    /// Small-cell user SINR target, lambda_1.
    pub target_sinr_sbs: f64,
    /// Thermal noise at the macro user, watts.
    pub noise: f64,
    /// Per-SBS transmit power cap, watts.
    pub sbs_max_power: f64,
    /// Discount factor, in (0, 1).
    pub discount: f64,
    /// Initial battery distribution over `0..=S`.
    pub initial_state_dist: Vec<f64>,
    pub energy: EnergyConfig,
    pub gains: GainTable,
}

impl GameConfig {
    pub fn num_sbs(&self) -> usize {
        self.gains.num_sbs()
    }

    pub fn num_states(&self) -> usize {
        self.energy.num_states()
    }

    pub fn num_power_levels(&self) -> usize {
        self.mbs_power_levels.len()
    }

    /// Largest dispatch whose power budget fits inside the SBS boxes.
    pub fn max_feasible_q(&self) -> usize {
        let cap = self.num_sbs() as f64 * self.sbs_max_power;
        let mut q_max = 0;
        for q in 0..=self.energy.battery_capacity {
            if packets_to_power_budget(q, &self.energy) <= cap * (1.0 + BUDGET_SLACK) {
                q_max = q;
            } else {
                break;
            }
        }
        q_max
    }

    /// Feasible dispatch actions at battery level `s`.
    pub fn feasible_actions(&self, s: usize) -> Vec<usize> {
        (0..=s.min(self.max_feasible_q())).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.energy.validate()?;
        if self.mbs_power_levels.is_empty() {
            return Err(Error::config("game.mbs_power_levels", "must not be empty"));
        }
        if !self
            .mbs_power_levels
            .windows(2)
            .all(|w| w[0] < w[1])
            || self.mbs_power_levels[0] <= 0.0
        {
            return Err(Error::config(
                "game.mbs_power_levels",
                "must be strictly increasing and positive",
            ));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::config("game.discount", "must lie in (0, 1)"));
        }
        if !(self.target_sinr_mbs > 0.0) {
            return Err(Error::config("game.target_sinr_mbs", "must be > 0"));
        }
        if !(self.target_sinr_sbs > 0.0) {
            return Err(Error::config("game.target_sinr_sbs", "must be > 0"));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::config("game.noise", "must be >= 0"));
        }
        if !(self.sbs_max_power > 0.0) {
            return Err(Error::config("game.sbs_max_power", "must be > 0"));
        }
        if self.gains.num_sbs() < 1 {
            return Err(Error::config("game.gains", "need at least one SBS"));
        }
        if self.initial_state_dist.len() != self.num_states() {
            return Err(Error::config(
                "game.initial_state_dist",
                format!("must have {} entries", self.num_states()),
            ));
        }
        let total: f64 = self.initial_state_dist.iter().sum();
        if (total - 1.0).abs() > 1e-10 || self.initial_state_dist.iter().any(|&p| p < 0.0) {
            return Err(Error::config(
                "game.initial_state_dist",
                "must be a probability vector (sum 1 within 1e-10)",
            ));
        }
        Ok(())
    }
}

/// Optimal SBS power split for one `(Q, p0)` pair, with solver
/// diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AllocationRecord {
    /// Per-SBS transmit powers, watts.
    pub powers: Vec<f64>,
    /// CES utility achieved by this split (non-positive).
    pub objective: f64,
    pub kkt_residual: f64,
}

/// Builds the CES allocation objective for MBS power `p0`.
fn allocation_objective(p0: f64, config: &GameConfig) -> QuadraticObjective {
    let m = config.num_sbs();
    let l1 = config.target_sinr_sbs;
    let mut c = Array2::zeros((m, m));
    let mut target = Array1::zeros(m);
    for i in 1..=m {
        for j in 1..=m {
            c[[i - 1, j - 1]] = if i == j {
                config.gains.g_bar(i, i)
            } else {
                -l1 * config.gains.g_bar(i, j)
            };
        }
        target[i - 1] = l1 * p0 * config.gains.g_bar(i, 0);
    }
    QuadraticObjective {
        c,
        target,
        scale: 1.0 / m as f64,
    }
}

/// Splits the power budget bought by `Q` packets across the SBSs.
///
/// Returns the unique maximizer of the CES utility on the budget plane
/// intersected with the power boxes. Budgets exceeding `M * P_max` are
/// infeasible and reported so the caller can prune the action.
pub fn allocate_energy(q: usize, p0: f64, config: &GameConfig) -> Result<AllocationRecord> {
    let m = config.num_sbs();
    let budget = packets_to_power_budget(q, &config.energy);
    let set = FeasibleSet::BudgetBox {
        hi: vec![config.sbs_max_power; m],
        budget,
    };
    if q == 0 {
        return Ok(AllocationRecord {
            powers: vec![0.0; m],
            objective: utility_ces_for_powers(&vec![0.0; m], p0, config),
            kkt_residual: 0.0,
        });
    }
    let objective = allocation_objective(p0, config);
    // Even split as the deterministic starting point.
    let start = Array1::from_elem(m, (budget / m as f64).min(config.sbs_max_power));
    let sol = qp::minimize(&objective, &set, Some(&start))?;
    Ok(AllocationRecord {
        powers: sol.p.to_vec(),
        objective: -sol.objective,
        kkt_residual: sol.kkt_residual,
    })
}

/// MBS stage payoff `-(p0 g00 - lambda_0 (I0 + N0))^2` for a given SBS
/// power split.
pub fn utility_mbs_for_powers(powers: &[f64], p0: f64, config: &GameConfig) -> f64 {
    let g00 = config.gains.g_bar(0, 0);
    let i0: f64 = powers
        .iter()
        .enumerate()
        .map(|(idx, &p)| p * config.gains.g_bar(0, idx + 1))
        .sum();
    let err = p0 * g00 - config.target_sinr_mbs * (i0 + config.noise);
    -(err * err)
}

/// CES stage payoff `-(1/M) sum_i (p_i g_i - lambda_1 I_i)^2` for a given
/// SBS power split.
pub fn utility_ces_for_powers(powers: &[f64], p0: f64, config: &GameConfig) -> f64 {
    let m = config.num_sbs();
    let l1 = config.target_sinr_sbs;
    let mut acc = 0.0;
    for i in 1..=m {
        let co_tier: f64 = (1..=m)
            .filter(|&j| j != i)
            .map(|j| powers[j - 1] * config.gains.g_bar(i, j))
            .sum();
        let interference = co_tier + p0 * config.gains.g_bar(i, 0);
        let err = powers[i - 1] * config.gains.g_bar(i, i) - l1 * interference;
        acc += err * err;
    }
    -acc / m as f64
}

/// MBS stage payoff for `(p0, Q)`, allocating the budget internally.
pub fn utility_mbs(p0: f64, q: usize, config: &GameConfig) -> Result<f64> {
    let alloc = allocate_energy(q, p0, config)?;
    Ok(utility_mbs_for_powers(&alloc.powers, p0, config))
}

/// CES stage payoff for `(p0, Q)`, allocating the budget internally.
pub fn utility_ces(p0: f64, q: usize, config: &GameConfig) -> Result<f64> {
    let alloc = allocate_energy(q, p0, config)?;
    Ok(utility_ces_for_powers(&alloc.powers, p0, config))
}

/// Stage payoff matrices `R0^s`, `R1^s` for every battery state, plus the
/// memoized SBS power splits.
#[derive(Debug, Clone)]
pub struct PayoffTables {
    /// Per state: `|P| x |actions(s)|` MBS payoffs.
    pub r0: Vec<Array2<f64>>,
    /// Per state: `|P| x |actions(s)|` CES payoffs.
    pub r1: Vec<Array2<f64>>,
    /// Feasible dispatch actions per state, in column order.
    pub actions: Vec<Vec<usize>>,
    /// Split records keyed by `(Q, p0 index)`.
    pub allocations: BTreeMap<(usize, usize), AllocationRecord>,
}

impl PayoffTables {
    pub fn num_states(&self) -> usize {
        self.r0.len()
    }

    pub fn allocation(&self, q: usize, p0_idx: usize) -> &AllocationRecord {
        &self.allocations[&(q, p0_idx)]
    }
}

/// Evaluates both payoff matrices for every state.
///
/// Payoffs depend on `(Q, p0)` only, so each pair is solved once and the
/// per-state blocks are views into that shared store; infeasible budgets
/// are pruned from the action sets.
pub fn build_payoff_tables(config: &GameConfig) -> Result<PayoffTables> {
    config.validate()?;
    let q_max = config.max_feasible_q();
    let np = config.num_power_levels();

    let cells: Vec<(usize, usize)> = (0..=q_max)
        .flat_map(|q| (0..np).map(move |pi| (q, pi)))
        .collect();
    let solved: Vec<((usize, usize), Result<AllocationRecord>)> = cells
        .par_iter()
        .map(|&(q, pi)| {
            let p0 = config.mbs_power_levels[pi];
            ((q, pi), allocate_energy(q, p0, config))
        })
        .collect();

    let mut allocations = BTreeMap::new();
    let mut u0 = BTreeMap::new();
    let mut u1 = BTreeMap::new();
    for ((q, pi), res) in solved {
        let p0 = config.mbs_power_levels[pi];
        let record = res.map_err(|source| Error::AllocationFailed {
            state: q,
            q,
            p0,
            source: Box::new(source),
        })?;
        u0.insert((q, pi), utility_mbs_for_powers(&record.powers, p0, config));
        u1.insert((q, pi), utility_ces_for_powers(&record.powers, p0, config));
        allocations.insert((q, pi), record);
    }

    let mut r0 = Vec::with_capacity(config.num_states());
    let mut r1 = Vec::with_capacity(config.num_states());
    let mut actions = Vec::with_capacity(config.num_states());
    for s in 0..config.num_states() {
        let acts = config.feasible_actions(s);
        let mut b0 = Array2::zeros((np, acts.len()));
        let mut b1 = Array2::zeros((np, acts.len()));
        for (col, &q) in acts.iter().enumerate() {
            for pi in 0..np {
                b0[[pi, col]] = u0[&(q, pi)];
                b1[[pi, col]] = u1[&(q, pi)];
            }
        }
        r0.push(b0);
        r1.push(b1);
        actions.push(acts);
    }
    Ok(PayoffTables {
        r0,
        r1,
        actions,
        allocations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::ArrivalDistribution;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    /// Hand-built config with explicit gains; `gains[i][j]` indexed with
    /// BS 0 = MBS.
    pub(crate) fn config_with_gains(
        gains: Vec<Vec<f64>>,
        capacity: usize,
        packet_volume: f64,
        p_max: f64,
    ) -> GameConfig {
        let mut dist = vec![0.0; capacity + 1];
        dist[capacity] = 1.0;
        GameConfig {
            mbs_power_levels: vec![10.0, 20.0],
            target_sinr_mbs: 10.0,
            target_sinr_sbs: 0.1,
            noise: 1e-8,
            sbs_max_power: p_max,
            discount: 0.9,
            initial_state_dist: dist,
            energy: EnergyConfig {
                battery_capacity: capacity,
                packet_volume,
                slot_duration: 5e-3,
                arrival: ArrivalDistribution::poisson(1.0, capacity).unwrap(),
                transfer_loss_fraction: 0.0,
            },
            gains: GainTable::from_rows(gains).unwrap(),
        }
    }

    fn symmetric_two_sbs(capacity: usize, packet_volume: f64, p_max: f64) -> GameConfig {
        config_with_gains(
            vec![
                vec![2.0e-4, 1.0e-6, 1.0e-6],
                vec![1.0e-5, 5.0e-3, 2.0e-4],
                vec![1.0e-5, 2.0e-4, 5.0e-3],
            ],
            capacity,
            packet_volume,
            p_max,
        )
    }

    #[test]
    fn single_sbs_gets_whole_budget() {
        let cfg = config_with_gains(
            vec![vec![2.0e-4, 1.0e-6], vec![1.0e-5, 5.0e-3]],
            4,
            2.5e-3,
            2.0,
        );
        let alloc = allocate_energy(3, 10.0, &cfg).unwrap();
        let budget = packets_to_power_budget(3, &cfg.energy);
        assert_relative_eq!(alloc.powers[0], budget, max_relative = 1e-12);
    }

    #[test]
    fn symmetric_gains_split_evenly() {
        let cfg = symmetric_two_sbs(4, 2.5e-3, 2.0);
        let alloc = allocate_energy(2, 10.0, &cfg).unwrap();
        let budget = packets_to_power_budget(2, &cfg.energy);
        assert_relative_eq!(alloc.powers[0], alloc.powers[1], max_relative = 1e-8);
        assert_relative_eq!(
            alloc.powers.iter().sum::<f64>(),
            budget,
            max_relative = 1e-8
        );
    }

    #[test]
    fn asymmetric_gains_match_grid_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for trial in 0..20 {
            let own1 = rng.gen_range(0.5..2.0);
            let own2 = rng.gen_range(0.5..2.0);
            let cross = rng.gen_range(0.01..0.2);
            let to_mbs_user = rng.gen_range(0.01..0.1);
            let from_mbs1 = rng.gen_range(0.05..0.5);
            let from_mbs2 = rng.gen_range(0.05..0.5);
            let cfg = {
                let mut c = config_with_gains(
                    vec![
                        vec![1.0, to_mbs_user, to_mbs_user],
                        vec![from_mbs1, own1, cross],
                        vec![from_mbs2, cross, own2],
                    ],
                    4,
                    2.5e-3,
                    1.0,
                );
                c.target_sinr_sbs = rng.gen_range(0.05..0.3);
                c.mbs_power_levels = vec![1.0, 2.0];
                c
            };
            let q = rng.gen_range(1..=4usize);
            let p0 = 1.0;
            let alloc = allocate_energy(q, p0, &cfg).unwrap();
            let budget = packets_to_power_budget(q, &cfg.energy);
            assert!(alloc.kkt_residual <= 1e-8, "trial {trial}");
            // 1-D grid over the feasible segment p1 in [max(0,B-Pmax), min(B,Pmax)].
            let lo = (budget - cfg.sbs_max_power).max(0.0);
            let hi = budget.min(cfg.sbs_max_power);
            let mut best = f64::NEG_INFINITY;
            let steps = ((hi - lo) / 1e-4).ceil() as usize + 1;
            for k in 0..=steps {
                let p1 = lo + (hi - lo) * k as f64 / steps as f64;
                let powers = vec![p1, budget - p1];
                best = best.max(utility_ces_for_powers(&powers, p0, &cfg));
            }
            assert!(
                alloc.objective >= best - 1e-6,
                "trial {trial}: solver {} vs grid {}",
                alloc.objective,
                best
            );
        }
    }

    #[test]
    fn infeasible_budget_is_detected() {
        let cfg = symmetric_two_sbs(8, 2.5e-3, 0.3);
        // Q = 8 buys 4 W but the two SBSs absorb at most 0.6 W.
        let err = allocate_energy(8, 10.0, &cfg).unwrap_err();
        assert!(matches!(err, Error::InfeasibleBudget { .. }));
    }

    #[test]
    fn mbs_utility_zero_at_exact_target() {
        let mut cfg = symmetric_two_sbs(4, 2.5e-3, 2.0);
        let g00 = cfg.gains.g_bar(0, 0);
        let p_star = cfg.target_sinr_mbs * cfg.noise / g00;
        cfg.mbs_power_levels = vec![p_star, 2.0 * p_star];
        let u = utility_mbs(p_star, 0, &cfg).unwrap();
        assert!(u.abs() < 1e-30, "got {u}");
        // Any payoff is non-positive.
        assert!(utility_mbs(2.0 * p_star, 0, &cfg).unwrap() <= 0.0);
    }

    #[test]
    fn mbs_utility_matches_hand_evaluation_on_symmetric_split() {
        let cfg = symmetric_two_sbs(4, 2.5e-3, 2.0);
        let q = 2;
        let p0 = 10.0;
        let alloc = allocate_energy(q, p0, &cfg).unwrap();
        // Symmetric gains split the budget evenly; evaluate the macro
        // payoff by hand from that split.
        let budget = packets_to_power_budget(q, &cfg.energy);
        let half = budget / 2.0;
        let i0 = half * cfg.gains.g_bar(0, 1) + half * cfg.gains.g_bar(0, 2);
        let err = p0 * cfg.gains.g_bar(0, 0) - cfg.target_sinr_mbs * (i0 + cfg.noise);
        let by_hand = -(err * err);
        assert_relative_eq!(
            utility_mbs_for_powers(&alloc.powers, p0, &cfg),
            by_hand,
            max_relative = 1e-9
        );
    }

    #[test]
    fn ces_utility_at_zero_dispatch_matches_formula() {
        let cfg = symmetric_two_sbs(4, 2.5e-3, 2.0);
        let p0 = 10.0;
        let expect: f64 = -(1..=2)
            .map(|i| {
                let e = cfg.target_sinr_sbs * p0 * cfg.gains.g_bar(i, 0);
                e * e
            })
            .sum::<f64>()
            / 2.0;
        assert_relative_eq!(utility_ces(p0, 0, &cfg).unwrap(), expect, max_relative = 1e-12);
    }

    #[test]
    fn ces_utility_equals_stored_objective() {
        let cfg = symmetric_two_sbs(4, 2.5e-3, 2.0);
        let alloc = allocate_energy(3, 20.0, &cfg).unwrap();
        assert_relative_eq!(
            alloc.objective,
            utility_ces_for_powers(&alloc.powers, 20.0, &cfg),
            max_relative = 1e-12
        );
    }

    #[test]
    fn tables_have_expected_shapes_and_shared_cells() {
        let cfg = symmetric_two_sbs(2, 2.5e-3, 2.0);
        let tables = build_payoff_tables(&cfg).unwrap();
        assert_eq!(tables.num_states(), 3);
        for s in 0..=2 {
            assert_eq!(tables.actions[s], (0..=s).collect::<Vec<_>>());
            assert_eq!(tables.r0[s].ncols(), s + 1);
            assert_eq!(tables.r0[s].nrows(), 2);
            assert!(tables.r0[s].iter().all(|&v| v <= 0.0));
            assert!(tables.r1[s].iter().all(|&v| v <= 0.0));
        }
        // Same (Q, p0) cell is identical across states.
        for s in 1..=2 {
            for pi in 0..2 {
                assert_eq!(tables.r1[s][[pi, 1]], tables.r1[1][[pi, 1]]);
                assert_eq!(tables.r0[s][[pi, 0]], tables.r0[0][[pi, 0]]);
            }
        }
    }

    #[test]
    fn zero_capacity_reduces_to_single_column() {
        let mut cfg = symmetric_two_sbs(1, 2.5e-3, 2.0);
        cfg.energy.battery_capacity = 1;
        let tables = build_payoff_tables(&cfg).unwrap();
        assert_eq!(tables.r0[0].ncols(), 1);
    }

    #[test]
    fn table_entries_match_independent_recomputation() {
        let cfg = symmetric_two_sbs(2, 2.5e-3, 2.0);
        let tables = build_payoff_tables(&cfg).unwrap();
        for s in 0..=2 {
            for (col, &q) in tables.actions[s].iter().enumerate() {
                for (pi, &p0) in cfg.mbs_power_levels.iter().enumerate() {
                    let budget = packets_to_power_budget(q, &cfg.energy);
                    let lo = (budget - cfg.sbs_max_power).max(0.0);
                    let hi = budget.min(cfg.sbs_max_power);
                    let steps = 4000;
                    let mut best = f64::NEG_INFINITY;
                    let mut best_powers = vec![0.0, 0.0];
                    for k in 0..=steps {
                        let p1 = lo + (hi - lo) * k as f64 / steps as f64;
                        let powers = vec![p1, budget - p1];
                        let u = utility_ces_for_powers(&powers, p0, &cfg);
                        if u > best {
                            best = u;
                            best_powers = powers;
                        }
                    }
                    assert!(
                        (tables.r1[s][[pi, col]] - best).abs() <= 1e-6,
                        "R1 mismatch at s={s} q={q} p0={p0}"
                    );
                    let u0 = utility_mbs_for_powers(&best_powers, p0, &cfg);
                    assert!(
                        (tables.r0[s][[pi, col]] - u0).abs() <= 1e-6,
                        "R0 mismatch at s={s} q={q} p0={p0}"
                    );
                }
            }
        }
    }

    #[test]
    fn allocation_is_permutation_equivariant() {
        let cfg = config_with_gains(
            vec![
                vec![1.0, 0.05, 0.02],
                vec![0.2, 1.5, 0.1],
                vec![0.3, 0.1, 0.7],
            ],
            4,
            2.5e-3,
            1.0,
        );
        let swapped = config_with_gains(
            vec![
                vec![1.0, 0.02, 0.05],
                vec![0.3, 0.7, 0.1],
                vec![0.2, 0.1, 1.5],
            ],
            4,
            2.5e-3,
            1.0,
        );
        let a = allocate_energy(2, 10.0, &cfg).unwrap();
        let b = allocate_energy(2, 10.0, &swapped).unwrap();
        assert_relative_eq!(a.powers[0], b.powers[1], max_relative = 1e-9);
        assert_relative_eq!(a.powers[1], b.powers[0], max_relative = 1e-9);
    }

    #[test]
    fn random_perturbations_never_beat_allocation() {
        let cfg = config_with_gains(
            vec![
                vec![1.0, 0.05, 0.02],
                vec![0.2, 1.5, 0.1],
                vec![0.3, 0.1, 0.7],
            ],
            4,
            2.5e-3,
            1.0,
        );
        let q = 2;
        let p0 = 10.0;
        let alloc = allocate_energy(q, p0, &cfg).unwrap();
        let budget = packets_to_power_budget(q, &cfg.energy);
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        for _ in 0..10_000 {
            // Random feasible perturbation along the budget plane.
            let delta = rng.gen_range(-0.05..0.05f64);
            let mut p = alloc.powers.clone();
            p[0] = (p[0] + delta).clamp(0.0, cfg.sbs_max_power);
            p[1] = (budget - p[0]).clamp(0.0, cfg.sbs_max_power);
            if (p[0] + p[1] - budget).abs() > 1e-12 {
                continue;
            }
            let u = utility_ces_for_powers(&p, p0, &cfg);
            assert!(
                u <= alloc.objective + 1e-6,
                "perturbation improved utility: {} > {}",
                u,
                alloc.objective
            );
        }
    }
}
