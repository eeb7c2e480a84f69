//! Plot-ready artifact serialization.
//!
//! Numeric CSVs use Rust's shortest round-trip float formatting, so a
//! file is bit-identical across runs of the same solve. Tensors are
//! written in long form with explicit axes.

use std::fmt::Write as _;

use serde::Serialize;

use crate::game::{EquilibriumSolution, TrajectoryStep};
use crate::mfg::{MfgConfig, MfgGrid};
use crate::payoff::{GameConfig, PayoffTables};
use crate::sim::{ComparePoint, SweepPoint};
use crate::stackelberg::BaselineStep;

/// Per-state equilibrium tables in long form:
/// `state,quantity,index,value` with quantities `m`, `n`, `phi1`, `xi`, `x`.
pub fn equilibrium_csv(
    solution: &EquilibriumSolution,
    tables: &PayoffTables,
    config: &GameConfig,
) -> String {
    let mut out = String::from("state,quantity,index,value\n");
    for s in 0..tables.num_states() {
        for (i, &w) in solution.strategies.mbs[s].iter().enumerate() {
            let _ = writeln!(out, "{s},m,{},{w}", config.mbs_power_levels[i]);
        }
        for (a, &w) in solution.strategies.ces[s].iter().enumerate() {
            let _ = writeln!(out, "{s},n,{},{w}", tables.actions[s][a]);
        }
        let _ = writeln!(out, "{s},phi1,0,{}", solution.ces_values[s]);
        let _ = writeln!(out, "{s},xi,0,{}", solution.mbs_state_payoffs[s]);
        for (a, &x) in solution.occupancy[s].iter().enumerate() {
            let _ = writeln!(out, "{s},x,{},{x}", tables.actions[s][a]);
        }
    }
    out
}

fn power_columns(count: usize) -> String {
    (1..=count)
        .map(|i| format!(",p{i}"))
        .collect::<Vec<_>>()
        .join("")
}

/// Closed-loop trajectory: `t,s,q,p0,p1..pM,arrival`.
pub fn trajectory_csv(steps: &[TrajectoryStep]) -> String {
    let m = steps.first().map(|s| s.sbs_powers.len()).unwrap_or(0);
    let mut out = format!("t,s,q,p0{},arrival\n", power_columns(m));
    for step in steps {
        let _ = write!(out, "{},{},{},{}", step.t, step.state, step.q, step.p0);
        for p in &step.sbs_powers {
            let _ = write!(out, ",{p}");
        }
        let _ = writeln!(out, ",{}", step.arrival);
    }
    out
}

/// Baseline trajectory in the same column layout; the CES state and
/// dispatch columns are zero because the baseline has neither.
pub fn baseline_trajectory_csv(steps: &[BaselineStep]) -> String {
    let m = steps.first().map(|s| s.sbs_powers.len()).unwrap_or(0);
    let mut out = format!("t,s,q,p0{},arrival\n", power_columns(m));
    for step in steps {
        let _ = write!(out, "{},0,0,{}", step.t, step.p0);
        for p in &step.sbs_powers {
            let _ = write!(out, ",{p}");
        }
        let _ = writeln!(out, ",0");
    }
    out
}

/// Tidy sweep table, one row per (value, method).
pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from(
        "parameter,value,method,sbs_outage,sbs_outage_ci,mbs_outage,mbs_outage_ci,mean_sinr_sbs,mean_sinr_mbs,replications,slots,seed\n",
    );
    for p in points {
        let r = &p.report;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            p.parameter.name(),
            p.value,
            p.method,
            r.sbs_outage,
            r.sbs_outage_ci,
            r.mbs_outage,
            r.mbs_outage_ci,
            r.mean_sinr_sbs,
            r.mean_sinr_mbs,
            r.replications,
            r.slots,
            r.seed
        );
    }
    out
}

/// One MFG tensor in long form: `t,r_index,r,value`.
pub fn mfg_tensor_csv(grid: &MfgGrid, config: &MfgConfig, which: MfgTensor) -> String {
    let mut out = String::from("t,r_index,r,value\n");
    let data = match which {
        MfgTensor::Value => &grid.u,
        MfgTensor::Density => &grid.m,
        MfgTensor::Power => &grid.p,
    };
    for t in 0..=config.t_max {
        for k in 0..config.num_r() {
            let r = config.r_phys(k);
            let _ = writeln!(out, "{t},{},{r},{}", k as i64 - config.r_max as i64, data[[t, k]]);
        }
    }
    out
}

/// Which MFG tensor to export.
#[derive(Debug, Clone, Copy)]
pub enum MfgTensor {
    Value,
    Density,
    Power,
}

/// Mean-power vector: `t,p_bar`.
pub fn mfg_mean_power_csv(grid: &MfgGrid) -> String {
    let mut out = String::from("t,p_bar\n");
    for (t, p) in grid.p_bar.iter().enumerate() {
        let _ = writeln!(out, "{t},{p}");
    }
    out
}

/// Average-SINR table of the density comparison: `m,method,avg_sinr`.
pub fn compare_csv(points: &[ComparePoint]) -> String {
    let mut out = String::from("m,method,avg_sinr,converged\n");
    for p in points {
        let _ = writeln!(out, "{},mfg,{},{}", p.num_sbs, p.mfg_avg_sinr, p.mfg_converged);
        let _ = writeln!(out, "{},mdp,{},true", p.num_sbs, p.mdp_avg_sinr);
    }
    out
}

/// Payoff tables as a structured JSON document (per-state matrices).
#[derive(Serialize)]
struct PayoffStateJson<'a> {
    state: usize,
    actions: &'a [usize],
    /// Row per MBS power level.
    r0: Vec<Vec<f64>>,
    r1: Vec<Vec<f64>>,
}

pub fn payoff_tables_json(tables: &PayoffTables, config: &GameConfig) -> String {
    #[derive(Serialize)]
    struct Doc<'a> {
        mbs_power_levels: &'a [f64],
        states: Vec<PayoffStateJson<'a>>,
    }
    let states = (0..tables.num_states())
        .map(|s| PayoffStateJson {
            state: s,
            actions: &tables.actions[s],
            r0: (0..tables.r0[s].nrows())
                .map(|r| tables.r0[s].row(r).to_vec())
                .collect(),
            r1: (0..tables.r1[s].nrows())
                .map(|r| tables.r1[s].row(r).to_vec())
                .collect(),
        })
        .collect();
    serde_json::to_string_pretty(&Doc {
        mbs_power_levels: &config.mbs_power_levels,
        states,
    })
    .expect("payoff tables serialize")
}
