//! Configuration files and experiment orchestration.
//!
//! Experiments are described by one TOML file with a section per
//! subsystem; every key has a default, so an empty file reproduces the
//! reference scenario (25-level CES with 2.5 mJ packets over 5 ms slots,
//! two MBS power levels 10/20 W, targets 10 and 0.1, unit-rate Poisson
//! arrivals, pooling ratio 60, per-SBS batteries of 1.5 mJ). Loading
//! validates every module invariant and names the offending key.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::energy::{ArrivalDistribution, EnergyConfig};
use crate::error::{Error, Result};
use crate::game::{solve_equilibrium, EquilibriumSolution, SolveMode};
use crate::geometry::{build_gain_table, generate_topology, GainTable, Topology};
use crate::mfg::MfgConfig;
use crate::payoff::{build_payoff_tables, GameConfig, PayoffTables};
use crate::sim::{
    child_seed, evaluate_outage, CompareSpec, PreparedPolicy, SimParams, SweepParameter,
    SweepPoint,
};

/// Arrival distribution as written in config files: either an explicit
/// pmf vector or a named family like `"poisson(1.0)"`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArrivalSpec {
    Named(String),
    Pmf(Vec<f64>),
}

impl Default for ArrivalSpec {
    fn default() -> Self {
        ArrivalSpec::Named("poisson(1)".to_string())
    }
}

impl ArrivalSpec {
    /// Builds the distribution, truncating named families at `capacity`
    /// with the tail mass folded onto the last cell.
    pub fn build(&self, capacity: usize) -> Result<ArrivalDistribution> {
        match self {
            ArrivalSpec::Pmf(pmf) => {
                if pmf.len() != capacity + 1 {
                    return Err(Error::config(
                        "energy.arrival",
                        format!("explicit pmf must have {} entries", capacity + 1),
                    ));
                }
                ArrivalDistribution::from_pmf(pmf.clone())
            }
            ArrivalSpec::Named(name) => {
                let trimmed = name.trim();
                if let Some(rest) = trimmed
                    .strip_prefix("poisson(")
                    .and_then(|r| r.strip_suffix(')'))
                {
                    let rate: f64 = rest.trim().parse().map_err(|_| {
                        Error::config("energy.arrival", format!("bad poisson rate `{rest}`"))
                    })?;
                    ArrivalDistribution::poisson(rate, capacity)
                } else {
                    Err(Error::config(
                        "energy.arrival",
                        format!("unknown arrival spec `{trimmed}` (expected `poisson(rate)` or a pmf array)"),
                    ))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologySection {
    pub num_sbs: usize,
    pub macro_radius: f64,
    pub coverage_radius: f64,
    pub pathloss_exponent: f64,
    pub rayleigh_mean_sq: f64,
    /// Seed for random placement when positions are not pinned.
    pub seed: u64,
    /// Pinned SBS positions; overrides random placement.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sbs_positions: Option<Vec<[f64; 2]>>,
}

impl Default for TopologySection {
    fn default() -> Self {
        Self {
            num_sbs: 60,
            macro_radius: 1000.0,
            coverage_radius: 20.0,
            pathloss_exponent: 4.0,
            rayleigh_mean_sq: 1.0,
            seed: 1,
            sbs_positions: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GameSection {
    pub mbs_power_levels: Vec<f64>,
    pub target_sinr_mbs: f64,
    pub target_sinr_sbs: f64,
    pub noise: f64,
    pub sbs_max_power: f64,
    pub discount: f64,
    /// Explicit initial battery distribution; default is a full battery.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_state_dist: Option<Vec<f64>>,
}

impl Default for GameSection {
    fn default() -> Self {
        Self {
            mbs_power_levels: vec![10.0, 20.0],
            target_sinr_mbs: 10.0,
            target_sinr_sbs: 0.1,
            noise: 1e-8,
            sbs_max_power: 0.3,
            discount: 0.9,
            initial_state_dist: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergySection {
    pub battery_capacity: usize,
    pub packet_volume: f64,
    pub slot_duration: f64,
    pub arrival: ArrivalSpec,
    pub transfer_loss_fraction: f64,
}

impl Default for EnergySection {
    fn default() -> Self {
        Self {
            battery_capacity: 25,
            packet_volume: 2.5e-3,
            slot_duration: 5e-3,
            arrival: ArrivalSpec::default(),
            transfer_loss_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    /// Ratio of CES packet volume to a standalone SBS packet volume.
    pub quanta_ratio: f64,
    /// Per-SBS battery capacity, joules.
    pub sbs_battery_capacity: f64,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            quanta_ratio: 60.0,
            sbs_battery_capacity: 1.5e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub slots: usize,
    pub replications: usize,
    pub sbs_outage_threshold: f64,
    pub mbs_outage_threshold: f64,
    /// Redraw the topology per sweep point instead of pinning one layout.
    pub resample_topology: bool,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            slots: 10_000,
            replications: 20,
            sbs_outage_threshold: 0.02,
            mbs_outage_threshold: 5.0,
            resample_topology: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            parameter: SweepParameter::NumSbs,
            values: vec![20.0, 40.0, 60.0, 80.0],
        }
    }
}

/// Root of the experiment configuration file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub topology: TopologySection,
    pub game: GameSection,
    pub energy: EnergySection,
    pub baseline: BaselineSection,
    pub sim: SimSection,
    pub sweep: SweepSection,
    pub mfg: MfgConfig,
    pub compare: CompareSpec,
}

impl AppConfig {
    /// Parses a TOML string (an empty string gives the defaults) and
    /// validates every module invariant.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: AppConfig =
            toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads and validates a configuration file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    /// Canonical serialized form.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Builds the physical layout: pinned positions if present, seeded
    /// placement otherwise.
    pub fn build_topology(&self) -> Result<Topology> {
        let t = &self.topology;
        let mut topology = match &t.sbs_positions {
            Some(pos) => Topology {
                mbs_position: [0.0, 0.0],
                sbs_positions: pos.clone(),
                macro_radius: t.macro_radius,
                sbs_coverage_radius: t.coverage_radius,
                pathloss_exponent: t.pathloss_exponent,
                rayleigh_mean_sq: t.rayleigh_mean_sq,
            },
            None => generate_topology(t.num_sbs, t.macro_radius, t.coverage_radius, t.seed)?,
        };
        topology.pathloss_exponent = t.pathloss_exponent;
        topology.rayleigh_mean_sq = t.rayleigh_mean_sq;
        topology.validate()?;
        Ok(topology)
    }

    /// Assembles the validated game configuration for a topology.
    pub fn build_game_config(&self, gains: GainTable) -> Result<GameConfig> {
        let capacity = self.energy.battery_capacity;
        let initial = match &self.game.initial_state_dist {
            Some(d) => d.clone(),
            None => {
                let mut d = vec![0.0; capacity + 1];
                d[capacity] = 1.0;
                d
            }
        };
        let config = GameConfig {
            mbs_power_levels: self.game.mbs_power_levels.clone(),
            target_sinr_mbs: self.game.target_sinr_mbs,
            target_sinr_sbs: self.game.target_sinr_sbs,
            noise: self.game.noise,
            sbs_max_power: self.game.sbs_max_power,
            discount: self.game.discount,
            initial_state_dist: initial,
            energy: EnergyConfig {
                battery_capacity: capacity,
                packet_volume: self.energy.packet_volume,
                slot_duration: self.energy.slot_duration,
                arrival: self.energy.arrival.build(capacity)?,
                transfer_loss_fraction: self.energy.transfer_loss_fraction,
            },
            gains,
        };
        config.validate()?;
        Ok(config)
    }

    /// Full validation: builds every derived object once.
    pub fn validate(&self) -> Result<()> {
        let topology = self.build_topology()?;
        if topology.num_sbs() > 0 {
            let gains = build_gain_table(&topology)?;
            self.build_game_config(gains)?;
        }
        self.mfg.validate()?;
        if !(self.baseline.quanta_ratio > 0.0) {
            return Err(Error::config("baseline.quanta_ratio", "must be > 0"));
        }
        if !(self.baseline.sbs_battery_capacity > 0.0) {
            return Err(Error::config(
                "baseline.sbs_battery_capacity",
                "must be > 0",
            ));
        }
        if self.sim.slots == 0 || self.sim.replications == 0 {
            return Err(Error::config(
                "sim",
                "slots and replications must be >= 1",
            ));
        }
        if self.sweep.values.is_empty() {
            return Err(Error::config("sweep.values", "must not be empty"));
        }
        if self.compare.m_values.is_empty() {
            return Err(Error::config("compare.m_values", "must not be empty"));
        }
        Ok(())
    }
}

/// A solved stochastic scenario ready for simulation or export.
pub struct SolvedScenario {
    pub topology: Topology,
    pub config: GameConfig,
    pub tables: PayoffTables,
    pub solution: EquilibriumSolution,
}

/// Builds the payoff tables and solves the equilibrium for the configured
/// scenario.
pub fn solve_stochastic(app: &AppConfig, mode: &SolveMode) -> Result<SolvedScenario> {
    let topology = app.build_topology()?;
    let gains = build_gain_table(&topology)?;
    let config = app.build_game_config(gains)?;
    let tables = build_payoff_tables(&config)?;
    let solution = solve_equilibrium(&tables, &config, mode)?;
    Ok(SolvedScenario {
        topology,
        config,
        tables,
        solution,
    })
}

/// Applies one sweep value to a copy of the scenario.
///
/// `num-sbs` redraws that many SBSs; `target-sinr-sbs` retunes the
/// small-cell target; `quanta-ratio` rescales the CES packet volume while
/// the standalone SBS packet (`K_ces / C`) stays fixed, so the baseline
/// is untouched by construction.
fn apply_sweep_value(app: &AppConfig, parameter: SweepParameter, value: f64) -> Result<AppConfig> {
    let mut point = app.clone();
    match parameter {
        SweepParameter::NumSbs => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(Error::config("sweep.values", "num-sbs values must be positive integers"));
            }
            point.topology.num_sbs = value as usize;
            point.topology.sbs_positions = None;
        }
        SweepParameter::TargetSinrSbs => {
            point.game.target_sinr_sbs = value;
        }
        SweepParameter::QuantaRatio => {
            if !(value > 0.0) {
                return Err(Error::config("sweep.values", "quanta-ratio values must be > 0"));
            }
            let sbs_packet = app.energy.packet_volume / app.baseline.quanta_ratio;
            point.energy.packet_volume = value * sbs_packet;
            point.baseline.quanta_ratio = value;
        }
    }
    Ok(point)
}

/// Evaluates both policies at every sweep value.
///
/// The topology is pinned per point (seeded from the master seed and the
/// point index when resampling is enabled, otherwise from the configured
/// topology seed) and shared by both methods for a paired comparison.
pub fn run_sweep(
    app: &AppConfig,
    parameter: SweepParameter,
    values: &[f64],
    mode: &SolveMode,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    let mut points = Vec::with_capacity(values.len() * 2);
    for (idx, &value) in values.iter().enumerate() {
        let mut point_cfg = apply_sweep_value(app, parameter, value)?;
        if app.sim.resample_topology {
            point_cfg.topology.seed = child_seed(seed, 77_000 + idx as u64);
        }
        let params = SimParams {
            slots: app.sim.slots,
            replications: app.sim.replications,
            sbs_outage_threshold: app.sim.sbs_outage_threshold,
            mbs_outage_threshold: app.sim.mbs_outage_threshold,
        };
        let point_seed = child_seed(seed, idx as u64);

        let solved = solve_stochastic(&point_cfg, mode).map_err(|e| Error::NoEquilibrium {
            reason: format!("sweep point {parameter:?} = {value}: {e}"),
        })?;
        let stochastic = PreparedPolicy::Stochastic {
            solution: &solved.solution,
            tables: &solved.tables,
        };
        points.push(SweepPoint {
            parameter,
            value,
            method: stochastic.name().to_string(),
            report: evaluate_outage(&stochastic, &solved.topology, &solved.config, &params, point_seed)?,
        });

        let baseline = PreparedPolicy::Stackelberg {
            quanta_ratio: point_cfg.baseline.quanta_ratio,
            sbs_battery_capacity: point_cfg.baseline.sbs_battery_capacity,
        };
        points.push(SweepPoint {
            parameter,
            value,
            method: baseline.name().to_string(),
            report: evaluate_outage(&baseline, &solved.topology, &solved.config, &params, point_seed)?,
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_documented_defaults() {
        let cfg = AppConfig::from_toml("").unwrap();
        assert_eq!(cfg.energy.battery_capacity, 25);
        assert_eq!(cfg.energy.packet_volume, 2.5e-3);
        assert_eq!(cfg.energy.slot_duration, 5e-3);
        assert_eq!(cfg.game.mbs_power_levels, vec![10.0, 20.0]);
        assert_eq!(cfg.game.noise, 1e-8);
        assert_eq!(cfg.sim.sbs_outage_threshold, 0.02);
        assert_eq!(cfg.sim.mbs_outage_threshold, 5.0);
        assert_eq!(cfg.baseline.quanta_ratio, 60.0);
        assert_eq!(cfg.baseline.sbs_battery_capacity, 1.5e-3);
    }

    #[test]
    fn bad_discount_is_rejected_by_name() {
        let err = AppConfig::from_toml("[game]\ndiscount = 1.5\n").unwrap_err();
        match err {
            Error::ConfigValidation { key, .. } => assert_eq!(key, "game.discount"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn bad_step_relation_is_rejected_by_name() {
        let err =
            AppConfig::from_toml("[mfg]\ndelta_r = 0.1\ndelta_t = 0.02\n").unwrap_err();
        match err {
            Error::ConfigValidation { key, .. } => assert_eq!(key, "mfg.delta_t"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn save_load_round_trip_is_identity() {
        let cfg = AppConfig::from_toml("[topology]\nnum_sbs = 3\nmacro_radius = 80.0\ncoverage_radius = 10.0\n[energy]\nbattery_capacity = 4\n").unwrap();
        let text = cfg.to_toml();
        let reloaded = AppConfig::from_toml(&text).unwrap();
        assert_eq!(text, reloaded.to_toml());
    }

    #[test]
    fn arrival_specs_parse() {
        let poisson = ArrivalSpec::Named("poisson(2.5)".into()).build(5).unwrap();
        assert_eq!(poisson.capacity(), 5);
        let explicit = ArrivalSpec::Pmf(vec![0.5, 0.25, 0.25]).build(2).unwrap();
        assert_eq!(explicit.prob(0), 0.5);
        assert!(ArrivalSpec::Named("bogus".into()).build(3).is_err());
        assert!(ArrivalSpec::Pmf(vec![0.5, 0.5]).build(3).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            AppConfig::from_toml("[game]\nnot_a_key = 1\n"),
            Err(Error::ConfigParse(_))
        ));
    }

    #[test]
    fn single_point_sweep_equals_direct_evaluation() {
        let toml = "[topology]\nnum_sbs = 2\nmacro_radius = 60.0\ncoverage_radius = 10.0\nseed = 11\n[energy]\nbattery_capacity = 2\npacket_volume = 1e-9\n[sim]\nslots = 300\nreplications = 3\n";
        let app = AppConfig::from_toml(toml).unwrap();
        let points = run_sweep(
            &app,
            SweepParameter::NumSbs,
            &[2.0],
            &SolveMode::enumerate(),
            17,
        )
        .unwrap();
        assert_eq!(points.len(), 2);
        let solved = solve_stochastic(&app, &SolveMode::enumerate()).unwrap();
        let params = SimParams {
            slots: 300,
            replications: 3,
            sbs_outage_threshold: app.sim.sbs_outage_threshold,
            mbs_outage_threshold: app.sim.mbs_outage_threshold,
        };
        let direct = evaluate_outage(
            &PreparedPolicy::Stochastic {
                solution: &solved.solution,
                tables: &solved.tables,
            },
            &solved.topology,
            &solved.config,
            &params,
            child_seed(17, 0),
        )
        .unwrap();
        let swept = &points[0].report;
        assert_eq!(swept.sbs_outage, direct.sbs_outage);
        assert_eq!(swept.mbs_outage, direct.mbs_outage);
        assert_eq!(swept.mean_sinr_sbs, direct.mean_sinr_sbs);
    }

    #[test]
    fn different_master_seeds_agree_within_confidence() {
        let toml = "[topology]\nnum_sbs = 2\nmacro_radius = 60.0\ncoverage_radius = 10.0\nseed = 11\n[energy]\nbattery_capacity = 2\npacket_volume = 1e-9\n[sim]\nslots = 2000\nreplications = 6\n";
        let app = AppConfig::from_toml(toml).unwrap();
        let solved = solve_stochastic(&app, &SolveMode::enumerate()).unwrap();
        let params = SimParams {
            slots: 2000,
            replications: 6,
            sbs_outage_threshold: app.sim.sbs_outage_threshold,
            mbs_outage_threshold: app.sim.mbs_outage_threshold,
        };
        let policy = PreparedPolicy::Stochastic {
            solution: &solved.solution,
            tables: &solved.tables,
        };
        let a = evaluate_outage(&policy, &solved.topology, &solved.config, &params, 1).unwrap();
        let b = evaluate_outage(&policy, &solved.topology, &solved.config, &params, 2).unwrap();
        // 3-sigma self-consistency: the half-widths are 1.96 sigma each.
        let allowance = 3.0 / 1.96 * (a.sbs_outage_ci + b.sbs_outage_ci);
        assert!(
            (a.sbs_outage - b.sbs_outage).abs() <= allowance,
            "outage {} vs {} beyond {allowance}",
            a.sbs_outage,
            b.sbs_outage
        );
    }

    #[test]
    fn quanta_sweep_keeps_baseline_packet_fixed() {
        let app = AppConfig::from_toml("").unwrap();
        let sbs_packet = app.energy.packet_volume / app.baseline.quanta_ratio;
        for value in [20.0, 40.0, 60.0] {
            let point = apply_sweep_value(&app, SweepParameter::QuantaRatio, value).unwrap();
            let point_sbs_packet = point.energy.packet_volume / point.baseline.quanta_ratio;
            assert!((point_sbs_packet - sbs_packet).abs() < 1e-18);
        }
    }
}
