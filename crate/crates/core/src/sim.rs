//! Monte Carlo evaluation of the solved policies.
//!
//! Outage is measured on instantaneous SINRs: every slot each user is
//! redrawn uniformly in its serving disk, every link gets an independent
//! exponential fading draw `|h|^2` with mean `E[h^2]`, and a user is in
//! outage when its SINR falls below its tier threshold (no noise at
//! small-cell users, thermal noise at the macro user). Replications run
//! independently with seeds derived from the master seed, so a report is
//! reproducible bit for bit.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{run_policy, EquilibriumSolution};
use crate::geometry::{sample_in_disk, Topology};
use crate::mdp::Mdp;
use crate::mfg::{average_sinr, solve_mfg, MfgConfig};
use crate::payoff::{GameConfig, PayoffTables};
use crate::stackelberg::run_baseline;

/// Default SBS-user outage threshold.
pub const DEFAULT_SBS_OUTAGE_THRESHOLD: f64 = 0.02;
/// Default macro-user outage threshold.
pub const DEFAULT_MBS_OUTAGE_THRESHOLD: f64 = 5.0;

/// Monte Carlo sizing and thresholds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimParams {
    pub slots: usize,
    pub replications: usize,
    pub sbs_outage_threshold: f64,
    pub mbs_outage_threshold: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            slots: 10_000,
            replications: 20,
            sbs_outage_threshold: DEFAULT_SBS_OUTAGE_THRESHOLD,
            mbs_outage_threshold: DEFAULT_MBS_OUTAGE_THRESHOLD,
        }
    }
}

/// Aggregated outage statistics for one evaluated policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutageReport {
    pub scenario: String,
    pub sbs_outage: f64,
    /// 95% confidence half-width across replications.
    pub sbs_outage_ci: f64,
    pub mbs_outage: f64,
    pub mbs_outage_ci: f64,
    pub mean_sinr_sbs: f64,
    pub mean_sinr_mbs: f64,
    pub replications: usize,
    pub slots: usize,
    pub seed: u64,
}

/// Policy under evaluation.
pub enum PreparedPolicy<'a> {
    Stochastic {
        solution: &'a EquilibriumSolution,
        tables: &'a PayoffTables,
    },
    Stackelberg {
        quanta_ratio: f64,
        sbs_battery_capacity: f64,
    },
}

impl PreparedPolicy<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            PreparedPolicy::Stochastic { .. } => "stochastic",
            PreparedPolicy::Stackelberg { .. } => "stackelberg",
        }
    }
}

/// Splitmix-style derivation of independent substream seeds.
pub fn child_seed(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct RepCounts {
    sbs_outages: usize,
    sbs_samples: usize,
    mbs_outages: usize,
    mbs_samples: usize,
    sinr_sbs_sum: f64,
    sinr_mbs_sum: f64,
}

/// Instantaneous squared distance with a 1 m near-field clip, matching
/// the truncation built into the average-gain formulas.
fn clipped_d2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    d2.max(1.0)
}

fn instantaneous_gain<R: Rng>(rng: &mut R, d2: f64, alpha: f64, mean_h2: f64) -> f64 {
    // |h|^2 is exponential with mean E[h^2] for Rayleigh amplitudes.
    let u: f64 = rng.gen();
    let h2 = -mean_h2 * (1.0 - u).ln();
    if (alpha - 4.0).abs() < 1e-12 {
        h2 / (d2 * d2)
    } else {
        h2 * d2.powf(-alpha / 2.0)
    }
}

fn evaluate_replication(
    policy: &PreparedPolicy,
    topology: &Topology,
    config: &GameConfig,
    params: &SimParams,
    rep_seed: u64,
) -> Result<RepCounts> {
    let m = topology.num_sbs();
    // Per-slot transmit powers (p0, p_1..p_M) from the policy.
    let powers: Vec<(f64, Vec<f64>)> = match policy {
        PreparedPolicy::Stochastic { solution, tables } => {
            run_policy(solution, tables, config, params.slots, child_seed(rep_seed, 1))
                .into_iter()
                .map(|s| (s.p0, s.sbs_powers))
                .collect()
        }
        PreparedPolicy::Stackelberg {
            quanta_ratio,
            sbs_battery_capacity,
        } => run_baseline(
            config,
            *quanta_ratio,
            *sbs_battery_capacity,
            params.slots,
            child_seed(rep_seed, 1),
        )?
        .into_iter()
        .map(|s| (s.p0, s.sbs_powers))
        .collect(),
    };

    let mut rng = ChaCha12Rng::seed_from_u64(child_seed(rep_seed, 2));
    let alpha = topology.pathloss_exponent;
    let mean_h2 = topology.rayleigh_mean_sq;
    let mut counts = RepCounts {
        sbs_outages: 0,
        sbs_samples: 0,
        mbs_outages: 0,
        mbs_samples: 0,
        sinr_sbs_sum: 0.0,
        sinr_mbs_sum: 0.0,
    };
    let mut users: Vec<[f64; 2]> = vec![[0.0, 0.0]; m + 1];
    for (p0, sbs_powers) in &powers {
        // Fresh user positions each slot: user i is served by BS i.
        for (i, user) in users.iter_mut().enumerate() {
            *user = sample_in_disk(
                &mut rng,
                topology.bs_position(i),
                topology.user_disk_radius(i),
            );
        }
        // Macro user: interference from every transmitting SBS.
        let mut macro_interference = config.noise;
        let mut macro_signal = 0.0;
        for j in 0..=m {
            let d2 = clipped_d2(users[0], topology.bs_position(j));
            let gain = instantaneous_gain(&mut rng, d2, alpha, mean_h2);
            if j == 0 {
                macro_signal = p0 * gain;
            } else {
                macro_interference += sbs_powers[j - 1] * gain;
            }
        }
        let gamma0 = macro_signal / macro_interference;
        counts.mbs_samples += 1;
        counts.sinr_mbs_sum += gamma0;
        if gamma0 < params.mbs_outage_threshold {
            counts.mbs_outages += 1;
        }
        // Small-cell users: co-tier plus cross-tier interference, no noise.
        for i in 1..=m {
            let mut signal = 0.0;
            let mut interference = 0.0;
            for j in 0..=m {
                let d2 = clipped_d2(users[i], topology.bs_position(j));
                let gain = instantaneous_gain(&mut rng, d2, alpha, mean_h2);
                if j == 0 {
                    interference += p0 * gain;
                } else if j == i {
                    signal = sbs_powers[j - 1] * gain;
                } else {
                    interference += sbs_powers[j - 1] * gain;
                }
            }
            let gamma = signal / interference;
            counts.sbs_samples += 1;
            counts.sinr_sbs_sum += gamma;
            if gamma < params.sbs_outage_threshold {
                counts.sbs_outages += 1;
            }
        }
    }
    Ok(counts)
}

/// 95% half-width: replication-level spread with an Agresti-Coull floor
/// from the pooled counts (strictly positive for any sample size).
fn half_width(rates: &[f64], pooled_hits: usize, pooled_n: usize) -> f64 {
    let r = rates.len() as f64;
    let mean = rates.iter().sum::<f64>() / r;
    let floor = {
        let n = pooled_n as f64 + 4.0;
        let p = (pooled_hits as f64 + 2.0) / n;
        (p * (1.0 - p) / n).sqrt()
    };
    if rates.len() < 2 {
        return 1.96 * floor;
    }
    let var = rates.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r - 1.0);
    let se = (var / r).sqrt();
    1.96 * se.max(floor)
}

/// Evaluates one policy on one pinned topology.
pub fn evaluate_outage(
    policy: &PreparedPolicy,
    topology: &Topology,
    config: &GameConfig,
    params: &SimParams,
    seed: u64,
) -> Result<OutageReport> {
    let reps: Vec<Result<RepCounts>> = (0..params.replications)
        .into_par_iter()
        .map(|rep| {
            evaluate_replication(policy, topology, config, params, child_seed(seed, 1000 + rep as u64))
        })
        .collect();
    let mut counts = Vec::with_capacity(reps.len());
    for r in reps {
        counts.push(r?);
    }
    let sbs_rates: Vec<f64> = counts
        .iter()
        .map(|c| c.sbs_outages as f64 / c.sbs_samples.max(1) as f64)
        .collect();
    let mbs_rates: Vec<f64> = counts
        .iter()
        .map(|c| c.mbs_outages as f64 / c.mbs_samples.max(1) as f64)
        .collect();
    let sbs_hits: usize = counts.iter().map(|c| c.sbs_outages).sum();
    let sbs_n: usize = counts.iter().map(|c| c.sbs_samples).sum();
    let mbs_hits: usize = counts.iter().map(|c| c.mbs_outages).sum();
    let mbs_n: usize = counts.iter().map(|c| c.mbs_samples).sum();
    Ok(OutageReport {
        scenario: policy.name().to_string(),
        sbs_outage: sbs_rates.iter().sum::<f64>() / sbs_rates.len() as f64,
        sbs_outage_ci: half_width(&sbs_rates, sbs_hits, sbs_n),
        mbs_outage: mbs_rates.iter().sum::<f64>() / mbs_rates.len() as f64,
        mbs_outage_ci: half_width(&mbs_rates, mbs_hits, mbs_n),
        mean_sinr_sbs: counts.iter().map(|c| c.sinr_sbs_sum).sum::<f64>() / sbs_n.max(1) as f64,
        mean_sinr_mbs: counts.iter().map(|c| c.sinr_mbs_sum).sum::<f64>() / mbs_n.max(1) as f64,
        replications: params.replications,
        slots: params.slots,
        seed,
    })
}

/// Swept quantity of a figure-style experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParameter {
    /// Number of small cells `M`.
    NumSbs,
    /// Small-cell SINR target `lambda_1`.
    TargetSinrSbs,
    /// CES quanta volume multiplier `C` (SBS packet volume fixed).
    QuantaRatio,
}

impl SweepParameter {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParameter::NumSbs => "num-sbs",
            SweepParameter::TargetSinrSbs => "target-sinr-sbs",
            SweepParameter::QuantaRatio => "quanta-ratio",
        }
    }
}

/// One evaluated point of a sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub parameter: SweepParameter,
    pub value: f64,
    pub method: String,
    pub report: OutageReport,
}

/// MFG-versus-MDP comparison settings (symmetric-gain scenario).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSpec {
    /// Densities to sweep.
    pub m_values: Vec<usize>,
    /// CES battery capacity for the MDP branch.
    pub battery_capacity: usize,
    /// CES quanta volume multiplier `C`.
    pub quanta_ratio: f64,
    /// Standalone SBS packet volume, joules.
    pub sbs_packet_volume: f64,
    /// Discretized-Gaussian arrival mean and std, packets per slot.
    pub arrival_mean: f64,
    pub arrival_std: f64,
    pub discount: f64,
}

impl Default for CompareSpec {
    fn default() -> Self {
        Self {
            m_values: (1..=8).map(|k| k * 100).collect(),
            battery_capacity: 101,
            quanta_ratio: 20.0,
            sbs_packet_volume: 7.5e-6,
            arrival_mean: 1.0,
            arrival_std: 1.0,
            discount: 0.9,
        }
    }
}

/// One density point of the comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparePoint {
    pub num_sbs: usize,
    pub mfg_avg_sinr: f64,
    pub mfg_converged: bool,
    pub mdp_avg_sinr: f64,
}

/// Gaussian pmf over `0..=capacity` with both tails folded onto the
/// boundary cells.
fn discretized_gaussian_pmf(mean: f64, std: f64, capacity: usize) -> Vec<f64> {
    let phi = |x: f64| 0.5 * erfc_ab(-(x - mean) / (std * std::f64::consts::SQRT_2));
    let mut pmf = Vec::with_capacity(capacity + 1);
    for k in 0..=capacity {
        let lo = if k == 0 { f64::NEG_INFINITY } else { k as f64 - 0.5 };
        let hi = if k == capacity {
            f64::INFINITY
        } else {
            k as f64 + 0.5
        };
        let plo = if lo.is_finite() { phi(lo) } else { 0.0 };
        let phi_hi = if hi.is_finite() { phi(hi) } else { 1.0 };
        pmf.push((phi_hi - plo).max(0.0));
    }
    let total: f64 = pmf.iter().sum();
    for v in &mut pmf {
        *v /= total;
    }
    pmf
}

/// Abramowitz-Stegun 7.1.26 complementary error function (|err| < 1.5e-7),
/// ample for binning a unit-scale Gaussian into packet counts.
fn erfc_ab(x: f64) -> f64 {
    let sign_flip = x < 0.0;
    let ax = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * ax);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405417))));
    let erfc = poly * (-ax * ax).exp();
    if sign_flip {
        2.0 - erfc
    } else {
        erfc
    }
}

/// Per-SBS SINR of the symmetric scenario when the CES dispatches `q`
/// packets: `g / ((M-1) g_cross + N0 M dT / (q C K))`.
fn symmetric_sinr(q: usize, m: usize, mfg: &MfgConfig, cmp: &CompareSpec) -> f64 {
    if q == 0 {
        return 0.0;
    }
    let energy = q as f64 * cmp.quanta_ratio * cmp.sbs_packet_volume;
    let denom = (m as f64 - 1.0) * mfg.cross_gain
        + mfg.noise * m as f64 * mfg.slot_duration / energy;
    mfg.own_gain / denom
}

/// Compares the dense-limit policy against the CES-only dispatch chain on
/// the symmetric-gain scenario (every SBS receives the same share), over
/// a range of densities.
///
/// The MDP branch solves the discounted dispatch problem with
/// squared-error rewards on the shared SINR and reports the stationary
/// average SINR of its optimal policy; the MFG branch reports the
/// time-average of the density-weighted SINR.
pub fn compare_mfg_vs_mdp(mfg_base: &MfgConfig, cmp: &CompareSpec) -> Result<Vec<ComparePoint>> {
    if mfg_base.own_gain != mfg_base.cross_gain {
        return Err(Error::config(
            "compare",
            "symmetric scenario requires own_gain = cross_gain",
        ));
    }
    let capacity = cmp.battery_capacity;
    let pmf = discretized_gaussian_pmf(cmp.arrival_mean, cmp.arrival_std, capacity);
    let mut points = Vec::with_capacity(cmp.m_values.len());
    for &m_sbs in &cmp.m_values {
        // MFG branch.
        let mfg_cfg = MfgConfig {
            num_sbs: m_sbs,
            ..mfg_base.clone()
        };
        let sol = solve_mfg(&mfg_cfg)?;
        let sinr = average_sinr(&sol.grid, &mfg_cfg);
        let mfg_avg = sinr.iter().sum::<f64>() / sinr.len() as f64;

        // MDP branch: dispatch chain with the shared-SINR reward.
        let lambda = mfg_base.target_sinr;
        let rewards: Vec<Vec<f64>> = (0..=capacity)
            .map(|s| {
                (0..=s)
                    .map(|q| {
                        let power = q as f64 * cmp.quanta_ratio * cmp.sbs_packet_volume
                            / (m_sbs as f64 * mfg_base.slot_duration);
                        let interference = (m_sbs as f64 - 1.0) * mfg_base.cross_gain * power
                            + mfg_base.noise;
                        let err = power * mfg_base.own_gain - lambda * interference;
                        -(err * err)
                    })
                    .collect()
            })
            .collect();
        let transition: Vec<Vec<Vec<f64>>> = (0..=capacity)
            .map(|s| {
                (0..=s)
                    .map(|q| {
                        let residual = s - q;
                        let mut row = vec![0.0; capacity + 1];
                        let mut below = 0.0;
                        for sp in residual..capacity {
                            let p = pmf[sp - residual];
                            row[sp] = p;
                            below += p;
                        }
                        row[capacity] = (1.0 - below).max(0.0);
                        row
                    })
                    .collect()
            })
            .collect();
        let mdp = Mdp {
            discount: cmp.discount,
            rewards,
            transition,
        };
        let mdp_sol = mdp.solve()?;
        let strategy: Vec<Vec<f64>> = mdp_sol
            .policy
            .iter()
            .enumerate()
            .map(|(s, &a)| {
                let mut row = vec![0.0; s + 1];
                row[a] = 1.0;
                row
            })
            .collect();
        // Start from a full battery, as in the dispatch game.
        let mut initial = vec![0.0; capacity + 1];
        initial[capacity] = 1.0;
        let rho = mdp.stationary_distribution(&strategy, &initial);
        let mdp_avg: f64 = rho
            .iter()
            .enumerate()
            .map(|(s, &w)| w * symmetric_sinr(mdp_sol.policy[s], m_sbs, mfg_base, cmp))
            .sum();

        points.push(ComparePoint {
            num_sbs: m_sbs,
            mfg_avg_sinr: mfg_avg,
            mfg_converged: sol.converged,
            mdp_avg_sinr: mdp_avg,
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{ArrivalDistribution, EnergyConfig};
    use crate::game::{solve_equilibrium, SolveMode};
    use crate::geometry::{build_gain_table, generate_topology};
    use crate::payoff::build_payoff_tables;

    fn small_scenario() -> (Topology, GameConfig) {
        let topology = generate_topology(2, 60.0, 10.0, 11).unwrap();
        let gains = build_gain_table(&topology).unwrap();
        let capacity = 3;
        let mut dist = vec![0.0; capacity + 1];
        dist[capacity] = 1.0;
        let config = GameConfig {
            mbs_power_levels: vec![10.0, 20.0],
            target_sinr_mbs: 10.0,
            target_sinr_sbs: 0.1,
            noise: 1e-8,
            sbs_max_power: 0.3,
            discount: 0.9,
            initial_state_dist: dist,
            energy: EnergyConfig {
                battery_capacity: capacity,
                packet_volume: 1e-9,
                slot_duration: 5e-3,
                arrival: ArrivalDistribution::poisson(1.0, capacity).unwrap(),
                transfer_loss_fraction: 0.0,
            },
            gains,
        };
        (topology, config)
    }

    #[test]
    fn stochastic_outage_report_is_reproducible() {
        let (topology, config) = small_scenario();
        let tables = build_payoff_tables(&config).unwrap();
        let solution = solve_equilibrium(&tables, &config, &SolveMode::enumerate()).unwrap();
        let policy = PreparedPolicy::Stochastic {
            solution: &solution,
            tables: &tables,
        };
        let params = SimParams {
            slots: 400,
            replications: 4,
            ..SimParams::default()
        };
        let a = evaluate_outage(&policy, &topology, &config, &params, 99).unwrap();
        let b = evaluate_outage(&policy, &topology, &config, &params, 99).unwrap();
        assert_eq!(a.sbs_outage, b.sbs_outage);
        assert_eq!(a.mbs_outage, b.mbs_outage);
        assert_eq!(a.mean_sinr_sbs, b.mean_sinr_sbs);
        assert!(a.sbs_outage_ci > 0.0);
        assert!((0.0..=1.0).contains(&a.sbs_outage));
    }

    #[test]
    fn zero_sbs_threshold_means_no_sbs_outage() {
        let (topology, config) = small_scenario();
        let params = SimParams {
            slots: 200,
            replications: 2,
            sbs_outage_threshold: 0.0,
            ..SimParams::default()
        };
        let policy = PreparedPolicy::Stackelberg {
            quanta_ratio: 60.0,
            sbs_battery_capacity: 1.5e-3,
        };
        let report = evaluate_outage(&policy, &topology, &config, &params, 5).unwrap();
        assert_eq!(report.sbs_outage, 0.0);
    }

    #[test]
    fn unreachable_macro_threshold_gives_certain_outage() {
        let (topology, mut config) = small_scenario();
        // Macro threshold unreachable by any configured power.
        config.mbs_power_levels = vec![1e-12, 2e-12];
        let params = SimParams {
            slots: 200,
            replications: 2,
            mbs_outage_threshold: 1e12,
            ..SimParams::default()
        };
        let policy = PreparedPolicy::Stackelberg {
            quanta_ratio: 60.0,
            sbs_battery_capacity: 1.5e-3,
        };
        let report = evaluate_outage(&policy, &topology, &config, &params, 5).unwrap();
        assert_eq!(report.mbs_outage, 1.0);
    }

    #[test]
    fn confidence_width_shrinks_with_replications() {
        let (topology, config) = small_scenario();
        let policy = PreparedPolicy::Stackelberg {
            quanta_ratio: 60.0,
            sbs_battery_capacity: 1.5e-3,
        };
        let narrow = SimParams {
            slots: 300,
            replications: 8,
            ..SimParams::default()
        };
        let wide = SimParams {
            slots: 300,
            replications: 4,
            ..SimParams::default()
        };
        let a = evaluate_outage(&policy, &topology, &config, &narrow, 7).unwrap();
        let b = evaluate_outage(&policy, &topology, &config, &wide, 7).unwrap();
        // CLT scaling within sampling noise: doubling replications should
        // shrink the half-width by roughly 1/sqrt(2).
        assert!(
            a.sbs_outage_ci < b.sbs_outage_ci * 1.1,
            "8-rep CI {} vs 4-rep CI {}",
            a.sbs_outage_ci,
            b.sbs_outage_ci
        );
    }

    #[test]
    fn gaussian_pmf_is_normalized_and_folded() {
        let pmf = discretized_gaussian_pmf(1.0, 1.0, 8);
        let total: f64 = pmf.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(pmf[0] > 0.2, "left fold should absorb the negative tail");
    }

    #[test]
    fn symmetric_sinr_reduces_at_single_sbs() {
        let mfg = MfgConfig::default();
        let cmp = CompareSpec::default();
        // M = 1: the co-tier term vanishes, SINR = g q C K / (N0 dT).
        let got = symmetric_sinr(3, 1, &mfg, &cmp);
        let energy = 3.0 * cmp.quanta_ratio * cmp.sbs_packet_volume;
        let expect = mfg.own_gain * energy / (mfg.noise * mfg.slot_duration);
        assert!((got - expect).abs() <= 1e-12 * expect);
    }

    #[test]
    fn comparison_runs_on_a_reduced_grid() {
        let mfg = MfgConfig {
            r_max: 10,
            t_max: 40,
            delta_r: 0.25,
            delta_t: 0.03,
            initial_mean_energy: 8.0,
            initial_spread: 0.4,
            max_iterations: 150,
            ..MfgConfig::default()
        };
        let cmp = CompareSpec {
            m_values: vec![100, 400],
            battery_capacity: 21,
            ..CompareSpec::default()
        };
        let points = compare_mfg_vs_mdp(&mfg, &cmp).unwrap();
        assert_eq!(points.len(), 2);
        for p in &points {
            assert!(p.mfg_avg_sinr >= 0.0);
            assert!(p.mfg_avg_sinr < mfg.target_sinr, "MFG average below target");
            assert!(p.mdp_avg_sinr >= 0.0);
        }
    }
}
