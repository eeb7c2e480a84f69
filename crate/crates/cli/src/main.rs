//! Experiment runner: loads a TOML scenario, dispatches to the solvers,
//! and writes plot-ready artifacts plus a manifest that pins everything
//! needed to reproduce them (resolved config, seed, version, output
//! hashes). Wall-clock timing goes to stderr only, keeping artifacts
//! byte-identical across runs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use powctl_core::config::{solve_stochastic, run_sweep, AppConfig};
use powctl_core::error::Error as CoreError;
use powctl_core::export;
use powctl_core::game::{run_policy, SolveMode};
use powctl_core::geometry::build_gain_table;
use powctl_core::mfg::{average_sinr, energy_second_moment, lemma2_diagnostic, solve_mfg};
use powctl_core::sim::{compare_mfg_vs_mdp, evaluate_outage, PreparedPolicy, SimParams, SweepPoint, SweepParameter};
use powctl_core::stackelberg::run_baseline;

#[derive(Parser)]
#[command(name = "powctl", version, about = "Downlink power-control policies for two-tier networks with energy-harvesting small cells")]
struct Cli {
    /// Scenario file (TOML); omitted or empty means the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every random draw.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Equilibrium solver mode.
    #[arg(long, global = true, value_enum, default_value_t = ModeArg::Enumerate)]
    mode: ModeArg,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Enumerate,
    Bri,
    Incremental,
}

impl ModeArg {
    fn to_mode(self, seed: u64) -> SolveMode {
        match self {
            ModeArg::Enumerate => SolveMode::enumerate(),
            ModeArg::Bri => SolveMode::best_response(seed),
            ModeArg::Incremental => SolveMode::incremental(seed),
        }
    }

    fn name(self) -> &'static str {
        match self {
            ModeArg::Enumerate => "enumerate",
            ModeArg::Bri => "bri",
            ModeArg::Incremental => "incremental",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve the CES/MBS stochastic game and export the equilibrium.
    SolveStochastic,
    /// Run the mean-field forward-backward solver and export the grids.
    SolveMfg,
    /// Simulate the myopic per-SBS baseline.
    Baseline {
        /// Slots to simulate.
        #[arg(long, default_value_t = 1000)]
        horizon: usize,
    },
    /// Monte Carlo outage evaluation of one policy.
    Simulate {
        #[arg(long, value_enum, default_value_t = PolicyArg::Stochastic)]
        policy: PolicyArg,
    },
    /// Outage sweep over a scenario parameter, both policies per point.
    Sweep {
        /// Override the configured sweep parameter.
        #[arg(long, value_enum)]
        parameter: Option<ParameterArg>,
        /// Override the configured sweep values (comma separated).
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Average-SINR comparison of the mean-field and dispatch policies.
    Compare,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SolveStochastic => "solve-stochastic",
            Command::SolveMfg => "solve-mfg",
            Command::Baseline { .. } => "baseline",
            Command::Simulate { .. } => "simulate",
            Command::Sweep { .. } => "sweep",
            Command::Compare => "compare",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Stochastic,
    Stackelberg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParameterArg {
    NumSbs,
    TargetSinrSbs,
    QuantaRatio,
}

impl ParameterArg {
    fn to_parameter(self) -> SweepParameter {
        match self {
            ParameterArg::NumSbs => SweepParameter::NumSbs,
            ParameterArg::TargetSinrSbs => SweepParameter::TargetSinrSbs,
            ParameterArg::QuantaRatio => SweepParameter::QuantaRatio,
        }
    }
}

/// Exit categories: 2 usage (from clap), 3 configuration, 4 solver,
/// 5 I/O.
fn exit_category(err: &anyhow::Error) -> u8 {
    if let Some(core) = err.downcast_ref::<CoreError>() {
        return match core {
            CoreError::ConfigValidation { .. } | CoreError::ConfigParse(_) => 3,
            CoreError::Io(_) => 5,
            _ => 4,
        };
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return 5;
    }
    4
}

#[derive(Serialize)]
struct ManifestOutput {
    name: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest {
    tool: String,
    version: String,
    command: String,
    mode: String,
    seed: u64,
    config_toml: String,
    outputs: Vec<ManifestOutput>,
}

struct ArtifactDir {
    dir: PathBuf,
    outputs: Vec<ManifestOutput>,
}

impl ArtifactDir {
    fn create(dir: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            outputs: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> anyhow::Result<()> {
        std::fs::write(self.dir.join(name), contents)?;
        let mut hasher = Sha256::new();
        hasher.update(contents.as_bytes());
        self.outputs.push(ManifestOutput {
            name: name.to_string(),
            sha256: format!("{:x}", hasher.finalize()),
        });
        Ok(())
    }

    fn finish(mut self, manifest: Manifest) -> anyhow::Result<()> {
        let mut manifest = manifest;
        manifest.outputs = std::mem::take(&mut self.outputs);
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(self.dir.join("manifest.json"), text)?;
        Ok(())
    }
}

fn load_config(path: &Option<PathBuf>) -> anyhow::Result<AppConfig> {
    match path {
        Some(p) => Ok(AppConfig::load(p)?),
        None => Ok(AppConfig::from_toml("")?),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global()
            .ok();
    }
    let app = load_config(&cli.config)?;
    let mode = cli.mode.to_mode(cli.seed);
    let mut artifacts = ArtifactDir::create(&cli.out)?;
    let started = Instant::now();

    match &cli.command {
        Command::SolveStochastic => {
            let solved = solve_stochastic(&app, &mode)?;
            artifacts.write(
                "equilibrium.csv",
                &export::equilibrium_csv(&solved.solution, &solved.tables, &solved.config),
            )?;
            artifacts.write(
                "payoff_tables.json",
                &export::payoff_tables_json(&solved.tables, &solved.config),
            )?;
            artifacts.write("topology.json", &serde_json::to_string_pretty(&solved.topology)?)?;
            artifacts.write("gains.json", &serde_json::to_string_pretty(&solved.config.gains)?)?;
            let trajectory = run_policy(&solved.solution, &solved.tables, &solved.config, 1000, cli.seed);
            artifacts.write("trajectory.csv", &export::trajectory_csv(&trajectory))?;
            eprintln!(
                "equilibrium gap {:.3e}, CES value {:.6e}",
                solved.solution.gap,
                solved.solution.ces_objective(&solved.config)
            );
        }
        Command::SolveMfg => {
            let sol = solve_mfg(&app.mfg)?;
            artifacts.write("u.csv", &export::mfg_tensor_csv(&sol.grid, &app.mfg, export::MfgTensor::Value))?;
            artifacts.write("m.csv", &export::mfg_tensor_csv(&sol.grid, &app.mfg, export::MfgTensor::Density))?;
            artifacts.write("p.csv", &export::mfg_tensor_csv(&sol.grid, &app.mfg, export::MfgTensor::Power))?;
            artifacts.write("p_bar.csv", &export::mfg_mean_power_csv(&sol.grid))?;
            let drain = lemma2_diagnostic(&sol.grid, &app.mfg);
            let sinr = average_sinr(&sol.grid, &app.mfg);
            let e2 = energy_second_moment(&sol.grid, &app.mfg);
            #[derive(Serialize)]
            struct MfgSummary {
                iterations: usize,
                converged: bool,
                final_change: f64,
                monotonicity_violation_fraction: f64,
                drain_residual_l2: f64,
                drain_residual_l2_bulk: f64,
                drain_residual_max: f64,
                max_avg_sinr: f64,
                final_second_moment: f64,
            }
            artifacts.write(
                "mfg_summary.json",
                &serde_json::to_string_pretty(&MfgSummary {
                    iterations: sol.iterations,
                    converged: sol.converged,
                    final_change: sol.final_change,
                    monotonicity_violation_fraction: sol.monotonicity_violation_fraction,
                    drain_residual_l2: drain.l2_time,
                    drain_residual_l2_bulk: drain.l2_bulk,
                    drain_residual_max: drain.max_abs,
                    max_avg_sinr: sinr.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    final_second_moment: *e2.last().unwrap(),
                })?,
            )?;
            eprintln!(
                "mfg: {} iterations, converged = {}, final change {:.3e}",
                sol.iterations, sol.converged, sol.final_change
            );
        }
        Command::Baseline { horizon } => {
            let topology = app.build_topology()?;
            let gains = build_gain_table(&topology)?;
            let config = app.build_game_config(gains)?;
            let steps = run_baseline(
                &config,
                app.baseline.quanta_ratio,
                app.baseline.sbs_battery_capacity,
                *horizon,
                cli.seed,
            )?;
            artifacts.write("baseline_trajectory.csv", &export::baseline_trajectory_csv(&steps))?;
            artifacts.write("topology.json", &serde_json::to_string_pretty(&topology)?)?;
        }
        Command::Simulate { policy } => {
            let params = SimParams {
                slots: app.sim.slots,
                replications: app.sim.replications,
                sbs_outage_threshold: app.sim.sbs_outage_threshold,
                mbs_outage_threshold: app.sim.mbs_outage_threshold,
            };
            let report = match policy {
                PolicyArg::Stochastic => {
                    let solved = solve_stochastic(&app, &mode)?;
                    let prepared = PreparedPolicy::Stochastic {
                        solution: &solved.solution,
                        tables: &solved.tables,
                    };
                    evaluate_outage(&prepared, &solved.topology, &solved.config, &params, cli.seed)?
                }
                PolicyArg::Stackelberg => {
                    let topology = app.build_topology()?;
                    let gains = build_gain_table(&topology)?;
                    let config = app.build_game_config(gains)?;
                    let prepared = PreparedPolicy::Stackelberg {
                        quanta_ratio: app.baseline.quanta_ratio,
                        sbs_battery_capacity: app.baseline.sbs_battery_capacity,
                    };
                    evaluate_outage(&prepared, &topology, &config, &params, cli.seed)?
                }
            };
            let point = SweepPoint {
                parameter: app.sweep.parameter,
                value: f64::NAN,
                method: report.scenario.clone(),
                report,
            };
            artifacts.write("outage.csv", &export::sweep_csv(std::slice::from_ref(&point)))?;
        }
        Command::Sweep { parameter, values } => {
            let param = parameter
                .map(|p| p.to_parameter())
                .unwrap_or(app.sweep.parameter);
            let vals = values.clone().unwrap_or_else(|| app.sweep.values.clone());
            let points = run_sweep(&app, param, &vals, &mode, cli.seed)?;
            artifacts.write("sweep.csv", &export::sweep_csv(&points))?;
        }
        Command::Compare => {
            let points = compare_mfg_vs_mdp(&app.mfg, &app.compare)?;
            artifacts.write("compare.csv", &export::compare_csv(&points))?;
        }
    }

    artifacts.finish(Manifest {
        tool: "powctl".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: cli.command.name().into(),
        mode: cli.mode.name().into(),
        seed: cli.seed,
        config_toml: app.to_toml(),
        outputs: Vec::new(),
    })?;
    eprintln!(
        "{} finished in {:.1} s, artifacts in {}",
        cli.command.name(),
        started.elapsed().as_secs_f64(),
        cli.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_category(&err))
        }
    }
}
