//! Myopic Stackelberg baseline.
//!
//! Each SBS keeps its own battery and spends it greedily: given the
//! leader's power `p0`, the followers jointly minimize
//! `sum_i (p_i g_i - lambda_1 I_i)^2` under per-SBS energy boxes
//! `p_i dT <= E_i` (no pooling, no lookahead). The MBS evaluates its own
//! utility against that response for every power level and picks the
//! best, which makes the tuple a one-shot Nash point. Energy arrives at
//! each SBS independently as unit-rate Poisson packets whose volume is
//! the CES quantum divided by the pooling ratio `C`.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::GainTable;
use crate::payoff::{utility_mbs_for_powers, GameConfig};
use crate::qp::{self, FeasibleSet, QuadraticObjective};

/// Default ratio of CES packet volume to a standalone SBS packet volume.
pub const DEFAULT_QUANTA_RATIO: f64 = 60.0;
/// Default per-SBS battery capacity, joules.
pub const DEFAULT_SBS_BATTERY_CAPACITY: f64 = 1.5e-3;

/// Per-SBS stored energy and capacity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SbsBatteryState {
    /// Stored energy per SBS, joules.
    pub stored: Vec<f64>,
    /// Battery capacity per SBS, joules.
    pub capacity: f64,
}

impl SbsBatteryState {
    pub fn empty(num_sbs: usize, capacity: f64) -> Self {
        Self {
            stored: vec![0.0; num_sbs],
            capacity,
        }
    }

    pub fn full(num_sbs: usize, capacity: f64) -> Self {
        Self {
            stored: vec![capacity; num_sbs],
            capacity,
        }
    }
}

/// Joint follower response: minimizes the shared tracking objective under
/// the per-SBS energy boxes `0 <= p_i <= E_i / dT`.
pub fn followers_response(
    p0: f64,
    batteries: &SbsBatteryState,
    gains: &GainTable,
    target_sinr: f64,
    slot_duration: f64,
    warm_start: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let m = gains.num_sbs();
    let mut c = Array2::zeros((m, m));
    let mut target = Array1::zeros(m);
    for i in 1..=m {
        for j in 1..=m {
            c[[i - 1, j - 1]] = if i == j {
                gains.g_bar(i, i)
            } else {
                -target_sinr * gains.g_bar(i, j)
            };
        }
        target[i - 1] = target_sinr * p0 * gains.g_bar(i, 0);
    }
    let objective = QuadraticObjective {
        c,
        target,
        scale: 1.0,
    };
    let hi: Vec<f64> = batteries
        .stored
        .iter()
        .map(|&e| (e / slot_duration).max(0.0))
        .collect();
    let set = FeasibleSet::Box { hi };
    let start = warm_start.map(|p| Array1::from_vec(p.to_vec()));
    let sol = qp::minimize(&objective, &set, start.as_ref())?;
    Ok(sol.p.to_vec())
}

/// Leader step: evaluates the follower response for every power level and
/// returns the utility-maximizing `(p0, p_1..p_M)` (ties toward the
/// smaller power).
pub fn leader_choice(
    batteries: &SbsBatteryState,
    gains: &GainTable,
    config: &GameConfig,
    warm_start: Option<&[f64]>,
) -> Result<(f64, Vec<f64>)> {
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    for &p0 in &config.mbs_power_levels {
        let powers = followers_response(
            p0,
            batteries,
            gains,
            config.target_sinr_sbs,
            config.energy.slot_duration,
            warm_start,
        )?;
        let u0 = utility_mbs_for_powers(&powers, p0, config);
        match &best {
            Some((u_best, _, _)) if u0 <= *u_best => {}
            _ => best = Some((u0, p0, powers)),
        }
    }
    let (_, p0, powers) = best.expect("at least one power level");
    Ok((p0, powers))
}

/// One slot of the baseline trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineStep {
    pub t: usize,
    pub p0: f64,
    pub sbs_powers: Vec<f64>,
    /// Stored energy per SBS after the slot, joules.
    pub stored: Vec<f64>,
    /// Energy harvested per SBS this slot, joules.
    pub harvested: Vec<f64>,
}

/// Runs the hierarchical baseline for `horizon` slots.
///
/// Per slot: each SBS harvests Poisson(1) packets of volume
/// `K_ces / quanta_ratio` (clipped at its battery capacity), the leader
/// picks `p0`, the followers respond, and spent energy `p_i dT` is
/// deducted. Deterministic for a given seed.
pub fn run_baseline(
    config: &GameConfig,
    quanta_ratio: f64,
    sbs_battery_capacity: f64,
    horizon: usize,
    seed: u64,
) -> Result<Vec<BaselineStep>> {
    let m = config.num_sbs();
    let dt = config.energy.slot_duration;
    let packet = config.energy.packet_volume / quanta_ratio;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let poisson = Poisson::new(1.0).expect("unit rate");
    let mut batteries = SbsBatteryState::empty(m, sbs_battery_capacity);
    let mut steps = Vec::with_capacity(horizon);
    let mut warm: Option<Vec<f64>> = None;
    for t in 0..horizon {
        let mut harvested = vec![0.0; m];
        for (stored, h) in batteries.stored.iter_mut().zip(harvested.iter_mut()) {
            let packets: f64 = poisson.sample(&mut rng);
            *h = packets * packet;
            *stored = (*stored + *h).min(sbs_battery_capacity);
        }
        let (p0, powers) = leader_choice(&batteries, &config.gains, config, warm.as_deref())?;
        for (stored, &p) in batteries.stored.iter_mut().zip(powers.iter()) {
            *stored = (*stored - p * dt).max(0.0);
        }
        warm = Some(powers.clone());
        steps.push(BaselineStep {
            t,
            p0,
            sbs_powers: powers,
            stored: batteries.stored.clone(),
            harvested,
        });
    }
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{ArrivalDistribution, EnergyConfig};
    use approx::assert_relative_eq;

    fn desk_config() -> GameConfig {
        GameConfig {
            mbs_power_levels: vec![1.0, 2.0],
            target_sinr_mbs: 2.0,
            target_sinr_sbs: 0.2,
            noise: 0.3,
            sbs_max_power: 1.0,
            discount: 0.9,
            initial_state_dist: vec![0.0, 0.0, 1.0],
            energy: EnergyConfig {
                battery_capacity: 2,
                packet_volume: 1e-3,
                slot_duration: 5e-3,
                arrival: ArrivalDistribution::poisson(1.0, 2).unwrap(),
                transfer_loss_fraction: 0.0,
            },
            gains: GainTable::from_rows(vec![
                vec![1.0, 0.6, 0.5],
                vec![0.8, 1.4, 0.2],
                vec![0.7, 0.2, 1.1],
            ])
            .unwrap(),
        }
    }

    #[test]
    fn empty_batteries_force_silence() {
        let cfg = desk_config();
        let batteries = SbsBatteryState::empty(2, 1.5e-3);
        let p = followers_response(1.0, &batteries, &cfg.gains, 0.2, 5e-3, None).unwrap();
        assert_eq!(p, vec![0.0, 0.0]);
    }

    #[test]
    fn single_follower_with_ample_energy_hits_target() {
        let gains = GainTable::from_rows(vec![vec![1.0, 0.6], vec![0.8, 1.4]]).unwrap();
        let batteries = SbsBatteryState::full(1, 1.0);
        let p0 = 1.5;
        let p = followers_response(p0, &batteries, &gains, 0.2, 5e-3, None).unwrap();
        // Interior optimum: p1 = lambda_1 p0 g_{1,0} / g_1.
        assert_relative_eq!(p[0], 0.2 * p0 * 0.8 / 1.4, epsilon = 1e-9);
    }

    #[test]
    fn binding_battery_matches_grid_oracle() {
        let cfg = desk_config();
        let batteries = SbsBatteryState {
            stored: vec![2.0e-4, 1.5e-3],
            capacity: 1.5e-3,
        };
        let p0 = 2.0;
        let p = followers_response(p0, &batteries, &cfg.gains, 0.2, 5e-3, None).unwrap();
        let hi: Vec<f64> = batteries.stored.iter().map(|e| e / 5e-3).collect();
        let objective = |p1: f64, p2: f64| -> f64 {
            let e1 = p1 * cfg.gains.g_bar(1, 1)
                - 0.2 * (p2 * cfg.gains.g_bar(1, 2) + p0 * cfg.gains.g_bar(1, 0));
            let e2 = p2 * cfg.gains.g_bar(2, 2)
                - 0.2 * (p1 * cfg.gains.g_bar(2, 1) + p0 * cfg.gains.g_bar(2, 0));
            e1 * e1 + e2 * e2
        };
        let mut best = f64::INFINITY;
        let steps = 400;
        for a in 0..=steps {
            for b in 0..=steps {
                let p1 = hi[0] * a as f64 / steps as f64;
                let p2 = hi[1] * b as f64 / steps as f64;
                best = best.min(objective(p1, p2));
            }
        }
        assert!(objective(p[0], p[1]) <= best + 1e-9);
        // The starved battery pins its coordinate at the box.
        assert_relative_eq!(p[0], hi[0], epsilon = 1e-12);
    }

    #[test]
    fn leader_matches_exhaustive_choice() {
        let cfg = desk_config();
        let batteries = SbsBatteryState::empty(2, 1.5e-3);
        let (p0, powers) = leader_choice(&batteries, &cfg.gains, &cfg, None).unwrap();
        assert_eq!(powers, vec![0.0, 0.0]);
        let u1 = utility_mbs_for_powers(&[0.0, 0.0], 1.0, &cfg);
        let u2 = utility_mbs_for_powers(&[0.0, 0.0], 2.0, &cfg);
        assert_eq!(p0, if u1 >= u2 { 1.0 } else { 2.0 });
    }

    #[test]
    fn single_power_level_is_returned() {
        let mut cfg = desk_config();
        cfg.mbs_power_levels = vec![1.7];
        let batteries = SbsBatteryState::full(2, 1.5e-3);
        let (p0, _) = leader_choice(&batteries, &cfg.gains, &cfg, None).unwrap();
        assert_eq!(p0, 1.7);
    }

    #[test]
    fn baseline_is_deterministic_and_conserves_energy() {
        let cfg = desk_config();
        let a = run_baseline(&cfg, 60.0, 1.5e-3, 200, 7).unwrap();
        let b = run_baseline(&cfg, 60.0, 1.5e-3, 200, 7).unwrap();
        assert_eq!(a.len(), b.len());
        let dt = cfg.energy.slot_duration;
        let mut stored = vec![0.0f64; 2];
        for (sa, sb) in a.iter().zip(b.iter()) {
            assert_eq!(sa.p0, sb.p0);
            assert_eq!(sa.sbs_powers, sb.sbs_powers);
            for i in 0..2 {
                let with_harvest = (stored[i] + sa.harvested[i]).min(1.5e-3);
                let after = (with_harvest - sa.sbs_powers[i] * dt).max(0.0);
                assert_relative_eq!(sa.stored[i], after, epsilon = 1e-15);
                stored[i] = sa.stored[i];
                assert!(sa.sbs_powers[i] * dt <= with_harvest + 1e-12);
            }
        }
    }

    #[test]
    fn zero_arrivals_drain_to_permanent_silence() {
        // Infinite quanta ratio mimics zero harvest volume.
        let cfg = desk_config();
        let steps = run_baseline(&cfg, f64::INFINITY, 1.5e-3, 50, 3).unwrap();
        for s in &steps {
            assert!(s.sbs_powers.iter().all(|&p| p == 0.0));
        }
    }

    #[test]
    fn ample_energy_reproduces_unconstrained_interior_solution() {
        let cfg = desk_config();
        // Huge batteries and harvest: the box never binds, so every slot
        // solves the same unconstrained tracking problem.
        let steps = run_baseline(&cfg, 1e-6, 1e3, 30, 5).unwrap();
        let batteries = SbsBatteryState::full(2, 1e3);
        let (p0, interior) = leader_choice(&batteries, &cfg.gains, &cfg, None).unwrap();
        for s in steps.iter().skip(1) {
            assert_eq!(s.p0, p0);
            for i in 0..2 {
                assert_relative_eq!(s.sbs_powers[i], interior[i], max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn joint_minimizer_has_no_profitable_unilateral_deviation() {
        let cfg = desk_config();
        let batteries = SbsBatteryState {
            stored: vec![8.0e-4, 1.2e-3],
            capacity: 1.5e-3,
        };
        let (p0, p) = leader_choice(&batteries, &cfg.gains, &cfg, None).unwrap();
        let hi: Vec<f64> = batteries.stored.iter().map(|e| e / 5e-3).collect();
        let shared = |p1: f64, p2: f64| -> f64 {
            let e1 = p1 * cfg.gains.g_bar(1, 1)
                - cfg.target_sinr_sbs
                    * (p2 * cfg.gains.g_bar(1, 2) + p0 * cfg.gains.g_bar(1, 0));
            let e2 = p2 * cfg.gains.g_bar(2, 2)
                - cfg.target_sinr_sbs
                    * (p1 * cfg.gains.g_bar(2, 1) + p0 * cfg.gains.g_bar(2, 0));
            e1 * e1 + e2 * e2
        };
        let base = shared(p[0], p[1]);
        let steps = 2000;
        for k in 0..=steps {
            let d1 = hi[0] * k as f64 / steps as f64;
            assert!(shared(d1, p[1]) >= base - 1e-9);
            let d2 = hi[1] * k as f64 / steps as f64;
            assert!(shared(p[0], d2) >= base - 1e-9);
        }
        // Leader deviations over the discrete power set.
        let u_played = utility_mbs_for_powers(&p, p0, &cfg);
        for &alt in &cfg.mbs_power_levels {
            let powers = followers_response(
                alt,
                &batteries,
                &cfg.gains,
                cfg.target_sinr_sbs,
                5e-3,
                None,
            )
            .unwrap();
            assert!(utility_mbs_for_powers(&powers, alt, &cfg) <= u_played + 1e-12);
        }
    }
}
