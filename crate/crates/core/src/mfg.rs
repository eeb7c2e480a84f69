//! Mean-field limit of the power-control game for dense deployments.
//!
//! Each SBS carries a continuous battery `E = e^R` (log coordinates keep
//! the energy positive) driven by `dE = -p dt + sigma dW`, and tracks its
//! SINR target against the population through the mean transmit power
//! `p_bar(t) = int e^R p m dR`. The value function satisfies a backward
//! HJB equation whose pointwise minimizer is
//!
//! ```text
//! p(t,R) = [ (lambda_bar p_bar(t) + lambda N0) / g
//!            + e^-R dU/dR / (2 g^2) ]^+ ,    lambda_bar = lambda g_cross M,
//! ```
//!
//! and the density moves forward by the matching Fokker-Planck equation.
//! Both are discretized with explicit central-difference updates on a
//! `(t, R)` lattice with `(dR)^2 > dt`, and the coupled system is solved
//! by relaxed fixed-point sweeps: forward density, mean power, backward
//! value, power refresh, blend.
//!
//! Internally energies are micro-joules and powers micro-watts; the
//! configured noise (watts) is converted on entry. `p` is capped at
//! `e^{R dR} / dT` (the battery cannot be emptied faster than one slot)
//! and forced to zero at the bottom energy level.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Abort threshold for the explicit density update.
const DENSITY_ABORT: f64 = 1e6;
/// Abort threshold for the value function.
const VALUE_ABORT: f64 = 1e15;
/// Relative change of `p` that counts as a converged fixed point.
pub const MFG_CONVERGENCE_TOLERANCE: f64 = 1e-6;
/// Pointwise cap on the effective diffusion number
/// `sigma^2 dt e^{-2R} / (2 dR^2)`. The step relation `(dR)^2 > dt`
/// bounds it only at R = 0; toward the bottom of the grid the `e^{-2R}`
/// weight grows like `e^{2 r_max dR}` and the explicit update would
/// amplify any boundary-injected difference without this limiter. Cells
/// where the cap binds hold almost-empty batteries whose policy is
/// pinned by the drain cap anyway.
const DIFFUSION_NUMBER_CAP: f64 = 0.49;

/// Parameters of the mean-field solver.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfgConfig {
    /// Number of SBSs in the cell (enters only through `lambda_bar`).
    pub num_sbs: usize,
    /// Own-link gain `g`.
    pub own_gain: f64,
    /// Generic cross-link gain.
    pub cross_gain: f64,
    /// SINR target `lambda`.
    pub target_sinr: f64,
    /// Constant cross-tier interference plus noise, watts.
    pub noise: f64,
    /// Energy-arrival/leakage intensity, micro-joules per sqrt(time unit).
    pub sigma: f64,
    /// Grid half-width: R indices run over `-r_max..=r_max`.
    pub r_max: usize,
    /// Number of time steps; rows run over `0..=t_max`.
    pub t_max: usize,
    /// Energy-coefficient step.
    pub delta_r: f64,
    /// Time step; must satisfy `delta_r^2 > delta_t`.
    pub delta_t: f64,
    /// Transmission slot length, seconds (power cap `e^{R dR}/dT`).
    pub slot_duration: f64,
    /// Relaxation weight on the previous power iterate (`b = 1 - a`).
    pub relaxation: f64,
    pub max_iterations: usize,
    /// Mean of the initial battery distribution, micro-joules.
    pub initial_mean_energy: f64,
    /// Std of the initial distribution in R units.
    pub initial_spread: f64,
    /// Explicit initial density over the R grid (sum * dR = 1); when
    /// absent a truncated Gaussian built from the two fields above.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_density: Option<Vec<f64>>,
}

impl Default for MfgConfig {
    fn default() -> Self {
        Self {
            num_sbs: 400,
            own_gain: 0.001,
            cross_gain: 0.001,
            target_sinr: 0.002,
            noise: 1e-5,
            sigma: 1.0,
            r_max: 40,
            t_max: 1000,
            delta_r: 0.125,
            delta_t: 1.5e-3,
            slot_duration: 5e-3,
            relaxation: 0.9,
            max_iterations: 500,
            initial_mean_energy: 100.0,
            initial_spread: 0.5,
            initial_density: None,
        }
    }
}

impl MfgConfig {
    /// Number of R grid points.
    pub fn num_r(&self) -> usize {
        2 * self.r_max + 1
    }

    /// Physical energy coefficient at grid column `k`.
    pub fn r_phys(&self, k: usize) -> f64 {
        (k as f64 - self.r_max as f64) * self.delta_r
    }

    /// Battery energy at grid column `k`, micro-joules.
    pub fn energy(&self, k: usize) -> f64 {
        self.r_phys(k).exp()
    }

    /// Power cap at column `k`: the battery spent over one slot.
    pub fn power_cap(&self, k: usize) -> f64 {
        self.energy(k) / self.slot_duration
    }

    /// `lambda_bar = lambda * cross_gain * M`.
    pub fn lambda_bar(&self) -> f64 {
        self.target_sinr * self.cross_gain * self.num_sbs as f64
    }

    /// Noise in micro-watts (grid power unit).
    pub fn noise_uw(&self) -> f64 {
        self.noise * 1e6
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_sbs < 1 {
            return Err(Error::config("mfg.num_sbs", "must be >= 1"));
        }
        if !(self.own_gain > 0.0) || !(self.cross_gain > 0.0) {
            return Err(Error::config("mfg.gains", "must be > 0"));
        }
        if !(self.target_sinr > 0.0) {
            return Err(Error::config("mfg.target_sinr", "must be > 0"));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::config("mfg.noise", "must be >= 0"));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::config("mfg.sigma", "must be >= 0"));
        }
        if self.r_max < 2 {
            return Err(Error::config("mfg.r_max", "must be >= 2"));
        }
        if self.t_max < 1 {
            return Err(Error::config("mfg.t_max", "must be >= 1"));
        }
        if !(self.delta_r > 0.0) || !(self.delta_t > 0.0) {
            return Err(Error::config("mfg.steps", "delta_r and delta_t must be > 0"));
        }
        if self.delta_r * self.delta_r <= self.delta_t {
            return Err(Error::config(
                "mfg.delta_t",
                format!(
                    "explicit scheme requires (delta_r)^2 > delta_t, got {}^2 = {} <= {}",
                    self.delta_r,
                    self.delta_r * self.delta_r,
                    self.delta_t
                ),
            ));
        }
        if !(0.0..=1.0).contains(&self.relaxation) {
            return Err(Error::config("mfg.relaxation", "must lie in [0, 1]"));
        }
        if self.max_iterations < 1 {
            return Err(Error::config("mfg.max_iterations", "must be >= 1"));
        }
        if !(self.slot_duration > 0.0) {
            return Err(Error::config("mfg.slot_duration", "must be > 0"));
        }
        if let Some(m0) = &self.initial_density {
            if m0.len() != self.num_r() {
                return Err(Error::config(
                    "mfg.initial_density",
                    format!("must have {} entries", self.num_r()),
                ));
            }
            if m0.iter().any(|&v| v < 0.0) {
                return Err(Error::config("mfg.initial_density", "must be >= 0"));
            }
            let total: f64 = m0.iter().sum::<f64>() * self.delta_r;
            if (total - 1.0).abs() > 1e-8 {
                return Err(Error::config(
                    "mfg.initial_density",
                    format!("must integrate to 1 (got {total})"),
                ));
            }
        } else {
            if !(self.initial_mean_energy > 0.0) {
                return Err(Error::config("mfg.initial_mean_energy", "must be > 0"));
            }
            if !(self.initial_spread > 0.0) {
                return Err(Error::config("mfg.initial_spread", "must be > 0"));
            }
        }
        Ok(())
    }

    /// Initial density: explicit override or the truncated Gaussian
    /// centred on `ln(initial_mean_energy)`, zero at the top cell,
    /// normalized to `sum * dR = 1`.
    pub fn build_initial_density(&self) -> Vec<f64> {
        let nr = self.num_r();
        let mut m0 = match &self.initial_density {
            Some(m) => m.clone(),
            None => {
                let mu = self.initial_mean_energy.ln();
                let s2 = 2.0 * self.initial_spread * self.initial_spread;
                (0..nr)
                    .map(|k| {
                        let d = self.r_phys(k) - mu;
                        (-d * d / s2).exp()
                    })
                    .collect()
            }
        };
        m0[nr - 1] = 0.0;
        let total: f64 = m0.iter().sum::<f64>() * self.delta_r;
        if total > 0.0 {
            for v in &mut m0 {
                *v /= total;
            }
        }
        m0
    }
}

/// Discretized solution tensors over the `(t, R)` lattice.
#[derive(Debug, Clone)]
pub struct MfgGrid {
    /// Value function, `(t_max+1) x (2 r_max+1)`.
    pub u: Array2<f64>,
    /// Density, same shape; every row integrates to 1.
    pub m: Array2<f64>,
    /// Power policy, micro-watts.
    pub p: Array2<f64>,
    /// Mean transmit power per time row.
    pub p_bar: Vec<f64>,
}

/// Convergence metadata of a solve.
#[derive(Debug, Clone)]
pub struct MfgSolution {
    pub grid: MfgGrid,
    pub iterations: usize,
    pub converged: bool,
    /// Relative max-norm change of `p` at the last iteration.
    pub final_change: f64,
    pub change_history: Vec<f64>,
    /// Fraction of interior points violating the expected sign conditions
    /// `dU/dR <= eps`, `dU/dt <= eps` (monitored diagnostic only).
    pub monotonicity_violation_fraction: f64,
}

/// One explicit forward step of the density transport.
///
/// Interior cells follow the central-difference update of
/// `dm/dt = d(p e^-R m)/dR + (sigma^2/2) d^2(e^-2R m)/dR^2`; the top cell
/// is pinned to zero (no battery reaches the grid ceiling) and the bottom
/// cell absorbs the remaining probability mass. Negative interior values
/// are clipped before the mass balance.
pub fn fokker_planck_step(m_prev: &[f64], p_prev: &[f64], config: &MfgConfig) -> Result<Vec<f64>> {
    let nr = config.num_r();
    let dr = config.delta_r;
    let dt = config.delta_t;
    let adv = dt / (2.0 * dr);
    let diff = config.sigma * config.sigma * dt / (2.0 * dr * dr);
    let mut m = vec![0.0; nr];
    let flux = |k: usize| (-config.r_phys(k)).exp() * p_prev[k] * m_prev[k];
    let weighted = |k: usize| (-2.0 * config.r_phys(k)).exp() * m_prev[k];
    for k in 1..nr - 1 {
        let a2 = flux(k + 1) - flux(k - 1);
        let b2 = weighted(k + 1) - 2.0 * weighted(k) + weighted(k - 1);
        // The update adds diff * d2(e^{-2R} m); its stability weight at
        // cell k is diff * e^{-2 r_k}, limited to the stable range.
        let nu = diff * (-2.0 * config.r_phys(k)).exp();
        let diff_k = if nu > DIFFUSION_NUMBER_CAP {
            DIFFUSION_NUMBER_CAP * (2.0 * config.r_phys(k)).exp()
        } else {
            diff
        };
        m[k] = m_prev[k] + adv * a2 + diff_k * b2;
        if !m[k].is_finite() || m[k].abs() > DENSITY_ABORT {
            return Err(Error::MfgInstability {
                iteration: 0,
                t: k,
                max_abs: m[k].abs(),
            });
        }
        if m[k] < 0.0 {
            m[k] = 0.0;
        }
    }
    m[nr - 1] = 0.0;
    // Mass balance assigns the bottom cell whatever keeps the row a
    // probability density; if that would be negative the row is rescaled.
    let rest: f64 = m[1..].iter().sum();
    let bottom = 1.0 / dr - rest;
    if bottom >= 0.0 {
        m[0] = bottom;
    } else {
        m[0] = 0.0;
        let total: f64 = m.iter().sum();
        if total > 0.0 {
            let scale = 1.0 / (dr * total);
            for v in &mut m {
                *v *= scale;
            }
        } else {
            m[0] = 1.0 / dr;
        }
    }
    Ok(m)
}

/// Population-mean transmit power of one time row.
///
/// The grid stores `m` as a density over R (its rows integrate to 1 in
/// `dR`), so the mean power `int p m_E dE` translates to
/// `sum p(t,R) m(t,R) dR`; the `e^R` weight written next to the
/// energy-space density is the Jacobian already absorbed by `m`. Keeping
/// the weight on top of the R-density would multiply the interference
/// feedback by the mean battery energy (about 80x at the reference
/// parameters), which has no finite fixed point.
pub fn mean_power(m_row: &[f64], p_row: &[f64], config: &MfgConfig) -> f64 {
    let mut acc = 0.0;
    for k in 0..config.num_r() {
        acc += p_row[k] * m_row[k];
    }
    acc * config.delta_r
}

/// One backward value sweep: from the row at time `t` (with its power row
/// and mean power) to the row at `t - 1`.
///
/// Interior cells follow the explicit update with the diffusion stencil
/// and source `(p g)^2 - (lambda_bar p_bar + lambda N)^2`. The bottom
/// boundary encodes "an empty battery is silent" (the optimality bracket
/// vanishes there, pinning the one-sided slope); the top is closed by
/// zero-curvature extrapolation, which leaves the full-battery cell
/// transmitting at whatever its interior slope dictates.
pub fn hjb_backward_sweep(
    u_next: &[f64],
    p_row: &[f64],
    p_bar_t: f64,
    config: &MfgConfig,
) -> Result<Vec<f64>> {
    let nr = config.num_r();
    let dr = config.delta_r;
    let dt = config.delta_t;
    let g = config.own_gain;
    let diff = config.sigma * config.sigma * dt / (2.0 * dr * dr);
    let drive = config.lambda_bar() * p_bar_t + config.target_sinr * config.noise_uw();
    let mut u = vec![0.0; nr];
    for k in 1..nr - 1 {
        let a1 = u_next[k + 1] - 2.0 * u_next[k] + u_next[k - 1];
        let b1 = (p_row[k] * g).powi(2) - drive * drive;
        // Same stability limiter as the density sweep.
        let nu = ((-2.0 * config.r_phys(k)).exp() * diff).min(DIFFUSION_NUMBER_CAP);
        u[k] = u_next[k] + nu * a1 - dt * b1;
        if !u[k].is_finite() || u[k].abs() > VALUE_ABORT {
            return Err(Error::MfgDiverged { iteration: 0 });
        }
    }
    // Top: the full-battery relation ties p(t, R_max) to the one-sided
    // slope of U, so it cannot fix the boundary value itself (any value
    // satisfies it once p is defined from the slope). Close with a
    // zero-curvature extrapolation; the power refresh then realises
    // p(t, R_max) > 0 from that slope.
    u[nr - 1] = 2.0 * u[nr - 2] - u[nr - 3];
    // Bottom: transmission stops, the bracket vanishes.
    u[0] = u[1] + dr * 2.0 * g * drive * (-config.r_phys(0)).exp();
    Ok(u)
}

/// Pointwise optimal power for one value row: positive part of the
/// first-order condition, capped by the per-slot battery drain and forced
/// to zero at the bottom cell.
pub fn power_update(u_row: &[f64], p_bar_t: f64, config: &MfgConfig) -> Vec<f64> {
    let nr = config.num_r();
    let dr = config.delta_r;
    let g = config.own_gain;
    let drive = (config.lambda_bar() * p_bar_t + config.target_sinr * config.noise_uw()) / g;
    let two_g2 = 2.0 * g * g;
    let mut p = vec![0.0; nr];
    for k in 1..nr {
        // The top cell uses the interior-side slope: its own boundary
        // value was reconstructed *from* the previous power via the
        // full-battery relation, and differencing that back would just
        // return the old power unchanged.
        let du = if k + 1 < nr {
            (u_row[k + 1] - u_row[k - 1]) / (2.0 * dr)
        } else {
            (u_row[k - 1] - u_row[k - 2]) / dr
        };
        let raw = drive + (-config.r_phys(k)).exp() * du / two_g2;
        p[k] = raw.max(0.0).min(config.power_cap(k));
    }
    p
}

/// Runs the relaxed forward-backward iteration.
pub fn solve_mfg(config: &MfgConfig) -> Result<MfgSolution> {
    config.validate()?;
    let nr = config.num_r();
    let nt = config.t_max + 1;
    let m0 = config.build_initial_density();

    let mut m = Array2::zeros((nt, nr));
    let mut u = Array2::zeros((nt, nr));
    let mut p = Array2::zeros((nt, nr));
    let mut p_bar = vec![0.0; nt];
    for k in 0..nr {
        m[[0, k]] = m0[k];
    }
    // Arbitrary initial power guess e^{R dR}, capped, silent at the bottom.
    for t in 0..nt {
        for k in 1..nr {
            p[[t, k]] = config.energy(k).min(config.power_cap(k));
        }
    }

    let a = config.relaxation;
    let b = 1.0 - a;
    let mut change_history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut final_change = f64::INFINITY;

    for it in 0..config.max_iterations {
        iterations = it + 1;
        // Forward density transport with the current power.
        for t in 1..nt {
            let m_prev: Vec<f64> = (0..nr).map(|k| m[[t - 1, k]]).collect();
            let p_prev: Vec<f64> = (0..nr).map(|k| p[[t - 1, k]]).collect();
            let row = fokker_planck_step(&m_prev, &p_prev, config).map_err(|e| match e {
                Error::MfgInstability { max_abs, .. } => Error::MfgInstability {
                    iteration: it,
                    t,
                    max_abs,
                },
                other => other,
            })?;
            for k in 0..nr {
                m[[t, k]] = row[k];
            }
        }
        // Mean power per row.
        for t in 0..nt {
            let m_row: Vec<f64> = (0..nr).map(|k| m[[t, k]]).collect();
            let p_row: Vec<f64> = (0..nr).map(|k| p[[t, k]]).collect();
            p_bar[t] = mean_power(&m_row, &p_row, config);
        }
        // Backward value sweeps from the zero terminal row. The source
        // term uses the power implied by the value rows of this very
        // sweep (value/policy consistency kills a cap-riding chatter
        // mode); the mean-field coupling stays lagged through p_bar.
        for k in 0..nr {
            u[[nt - 1, k]] = 0.0;
        }
        let mut fresh = Array2::zeros((nt, nr));
        {
            let top_row = power_update(&vec![0.0; nr], p_bar[nt - 1], config);
            for k in 0..nr {
                fresh[[nt - 1, k]] = top_row[k];
            }
        }
        for t in (1..nt).rev() {
            let u_next: Vec<f64> = (0..nr).map(|k| u[[t, k]]).collect();
            let p_row: Vec<f64> = (0..nr).map(|k| fresh[[t, k]]).collect();
            let row = hjb_backward_sweep(&u_next, &p_row, p_bar[t], config).map_err(|e| match e {
                Error::MfgDiverged { .. } => Error::MfgDiverged { iteration: it },
                other => other,
            })?;
            for k in 0..nr {
                u[[t - 1, k]] = row[k];
            }
            let fresh_row = power_update(&row, p_bar[t - 1], config);
            for k in 0..nr {
                fresh[[t - 1, k]] = fresh_row[k];
            }
        }
        // Relaxed policy refresh with cap and bottom floor.
        let p_scale = p.iter().fold(0.0f64, |acc, &v| acc.max(v.abs())).max(1e-300);
        let mut change = 0.0f64;
        for t in 0..nt {
            for k in 0..nr {
                let old = p[[t, k]];
                let blended = if k == 0 {
                    0.0
                } else {
                    (a * old + b * fresh[[t, k]]).clamp(0.0, config.power_cap(k))
                };
                change = change.max((blended - old).abs());
                p[[t, k]] = blended;
            }
        }
        final_change = change / p_scale;
        change_history.push(final_change);
        if final_change < MFG_CONVERGENCE_TOLERANCE {
            converged = true;
            break;
        }
    }
    if p.iter().any(|v| !v.is_finite()) || u.iter().any(|v| !v.is_finite()) {
        return Err(Error::MfgDiverged {
            iteration: iterations,
        });
    }

    // One last forward pass so the reported density matches the final p.
    for t in 1..nt {
        let m_prev: Vec<f64> = (0..nr).map(|k| m[[t - 1, k]]).collect();
        let p_prev: Vec<f64> = (0..nr).map(|k| p[[t - 1, k]]).collect();
        let row = fokker_planck_step(&m_prev, &p_prev, config)?;
        for k in 0..nr {
            m[[t, k]] = row[k];
        }
    }
    for t in 0..nt {
        let m_row: Vec<f64> = (0..nr).map(|k| m[[t, k]]).collect();
        let p_row: Vec<f64> = (0..nr).map(|k| p[[t, k]]).collect();
        p_bar[t] = mean_power(&m_row, &p_row, config);
    }

    let monotonicity_violation_fraction = monotonicity_violations(&u, config);
    Ok(MfgSolution {
        grid: MfgGrid { u, m, p, p_bar },
        iterations,
        converged,
        final_change,
        change_history,
        monotonicity_violation_fraction,
    })
}

/// Fraction of interior points with positive time or energy slope of `U`
/// beyond `1e-6 max|U|` (the continuous solution has both non-positive).
fn monotonicity_violations(u: &Array2<f64>, config: &MfgConfig) -> f64 {
    let nr = config.num_r();
    let nt = config.t_max + 1;
    let scale = u.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    let eps = 1e-6 * scale;
    let mut bad = 0usize;
    let mut total = 0usize;
    for t in 1..nt - 1 {
        for k in 1..nr - 1 {
            let du_dr = (u[[t, k + 1]] - u[[t, k - 1]]) / (2.0 * config.delta_r);
            let du_dt = (u[[t + 1, k]] - u[[t - 1, k]]) / (2.0 * config.delta_t);
            total += 1;
            if du_dr > eps || du_dt > eps {
                bad += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        bad as f64 / total as f64
    }
}

/// Mean battery energy `sum e^R m dR` per time row (the energy-space
/// first moment under the R-density).
pub fn mean_energy(grid: &MfgGrid, config: &MfgConfig) -> Vec<f64> {
    moment(grid, config, 1.0)
}

/// Second energy moment `E_2(t) = sum e^{2R} m dR` per time row.
pub fn energy_second_moment(grid: &MfgGrid, config: &MfgConfig) -> Vec<f64> {
    moment(grid, config, 2.0)
}

fn moment(grid: &MfgGrid, config: &MfgConfig, order: f64) -> Vec<f64> {
    let nr = config.num_r();
    (0..=config.t_max)
        .map(|t| {
            (0..nr)
                .map(|k| (order * config.r_phys(k)).exp() * grid.m[[t, k]])
                .sum::<f64>()
                * config.delta_r
        })
        .collect()
}

/// Scheme-consistency residuals of the drift identity: the mean battery
/// energy should drain at exactly the mean transmit power (plus an
/// `O(sigma^2 E[1/E])` diffusion correction and the bottom-boundary
/// absorption, both small where the population lives).
#[derive(Debug, Clone)]
pub struct EnergyDrainDiagnostic {
    /// `-(E(t+1) - E(t))/dt - p_bar(t)` for `t = 0..t_max`.
    pub residuals: Vec<f64>,
    pub mean_energy: Vec<f64>,
    pub max_abs: f64,
    /// Time-weighted L2 norm, comparable across grid resolutions.
    pub l2_time: f64,
    /// Time-weighted L2 norm over the first 90% of the horizon. The last
    /// stretch is dominated by the bottom-boundary absorption of the
    /// terminal depletion burst, which measures the domain truncation
    /// rather than the scheme.
    pub l2_bulk: f64,
}

/// Compares the discrete energy drain against the mean power row by row.
pub fn lemma2_diagnostic(grid: &MfgGrid, config: &MfgConfig) -> EnergyDrainDiagnostic {
    let e2 = mean_energy(grid, config);
    let mut residuals = Vec::with_capacity(config.t_max);
    for t in 0..config.t_max {
        let drain = -(e2[t + 1] - e2[t]) / config.delta_t;
        residuals.push(drain - grid.p_bar[t]);
    }
    let max_abs = residuals.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let l2_time = residuals
        .iter()
        .map(|r| r * r * config.delta_t)
        .sum::<f64>()
        .sqrt();
    let bulk = residuals.len() * 9 / 10;
    let l2_bulk = residuals[..bulk]
        .iter()
        .map(|r| r * r * config.delta_t)
        .sum::<f64>()
        .sqrt();
    EnergyDrainDiagnostic {
        residuals,
        mean_energy: e2,
        max_abs,
        l2_time,
        l2_bulk,
    }
}

/// Density-weighted average SINR `p g / (lambda_bar p_bar / lambda + N)`
/// per time row.
pub fn average_sinr(grid: &MfgGrid, config: &MfgConfig) -> Vec<f64> {
    let nr = config.num_r();
    let g = config.own_gain;
    (0..=config.t_max)
        .map(|t| {
            let denom = config.lambda_bar() * grid.p_bar[t] / config.target_sinr
                + config.noise_uw();
            let num: f64 = (0..nr)
                .map(|k| grid.p[[t, k]] * g * grid.m[[t, k]])
                .sum::<f64>()
                * config.delta_r;
            num / denom
        })
        .collect()
}
