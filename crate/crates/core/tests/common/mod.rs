//! Shared oracles and pinned desk-scale scenarios for the acceptance
//! suite. Oracles are deliberately independent of the library paths they
//! certify.

use powctl_core::energy::{ArrivalDistribution, EnergyConfig};
use powctl_core::geometry::GainTable;
use powctl_core::payoff::GameConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Monte Carlo estimate of E[d^-alpha] for a transmitter at distance
/// `big_r` from the centre of a uniform user disk of radius `r`.
/// Co-located users closer than 1 m contribute zero, matching the
/// truncation in the closed form.
pub fn mc_inv_d_alpha(big_r: f64, r: f64, alpha: f64, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut acc = 0.0;
    for _ in 0..samples {
        let rad = r * rng.gen::<f64>().sqrt();
        let ang = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
        let x = rad * ang.cos() - big_r;
        let y = rad * ang.sin();
        let d2 = x * x + y * y;
        if big_r == 0.0 && d2 < 1.0 {
            continue;
        }
        acc += d2.powf(-alpha / 2.0);
    }
    acc / samples as f64
}

/// Desk-scale certification game: S = 6, two MBS power levels, M = 3,
/// order-one gains so every tolerance bites, all dispatch actions
/// feasible, and a target geometry that flips the MBS best response with
/// the dispatch level (several equilibria with distinct CES values).
pub fn certification_game() -> GameConfig {
    GameConfig {
        mbs_power_levels: vec![1.0, 2.0],
        target_sinr_mbs: 2.7,
        target_sinr_sbs: 0.25,
        noise: 0.5,
        sbs_max_power: 0.6,
        discount: 0.9,
        initial_state_dist: {
            let mut d = vec![0.0; 7];
            d[6] = 1.0;
            d
        },
        energy: EnergyConfig {
            battery_capacity: 6,
            packet_volume: 1.25e-3,
            slot_duration: 5e-3,
            arrival: ArrivalDistribution::poisson(1.0, 6).unwrap(),
            transfer_loss_fraction: 0.0,
        },
        gains: GainTable::from_rows(vec![
            vec![1.0, 0.15, 0.15, 0.15],
            vec![0.5, 1.2, 0.1, 0.1],
            vec![0.5, 0.1, 1.0, 0.1],
            vec![0.5, 0.1, 0.1, 0.8],
        ])
        .unwrap(),
    }
}

/// Desk-scale outage scenario: compact cell, quanta sized so one packet
/// covers the SINR targets of about two SBSs, pooling ratio 60.
pub fn crossover_toml(num_sbs: usize) -> String {
    format!(
        r#"
[topology]
num_sbs = {num_sbs}
macro_radius = 60.0
coverage_radius = 10.0
seed = 42

[game]
mbs_power_levels = [10.0, 20.0]
target_sinr_mbs = 10.0
target_sinr_sbs = 0.1
noise = 1e-8
sbs_max_power = 0.3
discount = 0.9

[energy]
battery_capacity = 6
packet_volume = 2.6e-7

[baseline]
quanta_ratio = 60.0
sbs_battery_capacity = 1.5e-3
"#
    )
}
