//! Batch front-end: experiment configs in, CSV/JSON artifacts out.
//!
//! Configs are single JSON documents; frequencies are plain Hz (converted to
//! angular frequencies internally), times are seconds, angles radians.
//! Unknown keys are rejected. Floats in CSV output are printed with 12
//! significant digits so reruns are byte-identical.
//!
//! Exit codes: 0 success, 2 config/validation error, 3 numerical failure.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis;
use crate::dynamics::{
    evolve, steady_state, steady_state_longtime, IntegratorConfig, Method, Schedule,
    Trajectory,
};
use crate::geometry;
use crate::model::{self, ModelSpec, Preset};
use crate::operators::{spin_coherent_state, QuantumState};
use crate::protocols::{self, InitialState, ModelForm, PulseOp, PulseSequence};
use crate::sensing::{self, SensingScenario};
use crate::space::{Ancilla, Representation, SpaceLayout};
use crate::{Error, Result};

const TWO_PI: f64 = std::f64::consts::TAU;

// ---------------------------------------------------------------------------
// config schema
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct ExperimentConfig {
    /// Named preset resolved for n_spins; model fields override it.
    #[serde(default)]
    pub preset: Option<String>,
    pub n_spins: usize,
    pub representation: RepresentationConfig,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub model_form: ModelFormConfig,
    pub initial_state: InitialStateConfig,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub ensemble: Option<EnsembleConfig>,
    #[serde(default)]
    pub integrator: Option<IntegratorConfigInput>,
    pub output: OutputConfig,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum RepresentationConfig {
    Dicke,
    Product,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelFormConfig {
    #[default]
    Full,
    Effective,
}

#[derive(Clone, Debug, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub lambda_bar_hz: Option<f64>,
    #[serde(default)]
    pub delta_lambda_hz: Option<f64>,
    #[serde(default)]
    pub delta_omega_hz: Option<f64>,
    #[serde(default)]
    pub detuning_hz: Option<f64>,
    #[serde(default)]
    pub drive_hz: Option<f64>,
    #[serde(default)]
    pub drive_phase_rad: Option<f64>,
    #[serde(default)]
    pub gamma_hz: Option<f64>,
    #[serde(default)]
    pub ancilla: Option<AncillaConfig>,
    #[serde(default)]
    pub rng_seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum AncillaConfig {
    None,
    Qubit,
    Boson(usize),
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialStateConfig {
    pub theta_rad: f64,
    pub phi_rad: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum ScheduleConfig {
    /// Plain evolution for a fixed duration (0 emits the initial state only).
    Free { duration_s: f64 },
    Xy8 { tau_s: f64 },
    ConcatenatedXy8 { tau_s: f64 },
    DcrReflection { tau_s: f64, count: usize },
    /// Steady-state request instead of time evolution.
    Steady,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub param1: SweepAxis,
    #[serde(default)]
    pub param2: Option<SweepAxis>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    /// One of: detuning, drive, gamma, lambda_bar, delta_omega, delta_lambda.
    pub name: String,
    pub values_hz: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub n_runs: usize,
    pub master_seed: u64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct IntegratorConfigInput {
    #[serde(default)]
    pub method: Option<IntegratorMethodConfig>,
    #[serde(default)]
    pub rtol: Option<f64>,
    #[serde(default)]
    pub atol: Option<f64>,
    #[serde(default)]
    pub krylov_tol: Option<f64>,
    #[serde(default)]
    pub krylov_dim: Option<usize>,
    #[serde(default)]
    pub rk4_dt_s: Option<f64>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorMethodConfig {
    Dopri45,
    Rk4,
    Krylov,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dt_s: f64,
    #[serde(default)]
    pub dir: Option<String>,
    /// Optional subset check of recorded observables; the trajectory CSV
    /// always carries the full column set.
    #[serde(default)]
    pub observables: Option<Vec<String>>,
}

const KNOWN_OBSERVABLES: [&str; 7] = ["xi2", "jx", "jy", "jz", "trace_err", "purity", "anc_pop"];

// ---------------------------------------------------------------------------
// config resolution
// ---------------------------------------------------------------------------

/// Fully resolved run inputs.
pub struct Resolved {
    pub spec: ModelSpec,
    pub layout: SpaceLayout,
    pub form: ModelForm,
    pub integrator: IntegratorConfig,
    pub config: ExperimentConfig,
}

fn bare_model(n: usize) -> ModelSpec {
    ModelSpec {
        n_spins: n,
        lambda_bar: 0.0,
        delta_lambda: 0.0,
        lambda_i: None,
        delta_omega: 0.0,
        omega_offsets: None,
        detuning: 0.0,
        drive: 0.0,
        drive_phase: 0.0,
        gamma: 0.0,
        ancilla: Ancilla::None,
        rng_seed: None,
    }
}

pub fn resolve(config: &ExperimentConfig, seed_flag: Option<u64>) -> Result<Resolved> {
    if let Some(obs) = &config.output.observables {
        for o in obs {
            if !KNOWN_OBSERVABLES.contains(&o.as_str()) {
                return Err(Error::Config(format!(
                    "unknown observable '{o}' (known: {KNOWN_OBSERVABLES:?})"
                )));
            }
        }
    }
    if !(config.output.dt_s > 0.0) && !matches!(config.schedule, ScheduleConfig::Steady) {
        if let ScheduleConfig::Free { duration_s } = config.schedule {
            if duration_s > 0.0 {
                return Err(Error::Config("output.dt_s must be > 0".into()));
            }
        } else {
            return Err(Error::Config("output.dt_s must be > 0".into()));
        }
    }
    let mut spec = match &config.preset {
        Some(name) => name.parse::<Preset>()?.spec(config.n_spins),
        None => bare_model(config.n_spins),
    };
    if let Some(m) = &config.model {
        if let Some(v) = m.lambda_bar_hz {
            spec.lambda_bar = TWO_PI * v;
        }
        if let Some(v) = m.delta_lambda_hz {
            spec.delta_lambda = TWO_PI * v;
        }
        if let Some(v) = m.delta_omega_hz {
            spec.delta_omega = TWO_PI * v;
        }
        if let Some(v) = m.detuning_hz {
            spec.detuning = TWO_PI * v;
        }
        if let Some(v) = m.drive_hz {
            spec.drive = TWO_PI * v;
        }
        if let Some(v) = m.drive_phase_rad {
            spec.drive_phase = v;
        }
        if let Some(v) = m.gamma_hz {
            spec.gamma = TWO_PI * v;
        }
        if let Some(a) = m.ancilla {
            spec.ancilla = match a {
                AncillaConfig::None => Ancilla::None,
                AncillaConfig::Qubit => Ancilla::Qubit,
                AncillaConfig::Boson(d) => Ancilla::Boson(d),
            };
        }
        if let Some(s) = m.rng_seed {
            spec.rng_seed = Some(s);
        }
    }
    if spec.rng_seed.is_none() {
        spec.rng_seed = seed_flag;
    }
    spec.validate()?;
    let form = match config.model_form {
        ModelFormConfig::Full => ModelForm::Full,
        ModelFormConfig::Effective => ModelForm::Effective,
    };
    let representation = match config.representation {
        RepresentationConfig::Dicke => Representation::DickeSymmetric,
        RepresentationConfig::Product => Representation::FullProduct,
    };
    let ancilla = match form {
        ModelForm::Full => spec.ancilla,
        ModelForm::Effective => Ancilla::None,
    };
    let layout = SpaceLayout::new(representation, config.n_spins, ancilla)?;
    let integrator = resolve_integrator(config.integrator.as_ref())?;
    Ok(Resolved { spec, layout, form, integrator, config: config.clone() })
}

fn resolve_integrator(input: Option<&IntegratorConfigInput>) -> Result<IntegratorConfig> {
    let mut cfg = IntegratorConfig::default();
    let Some(i) = input else { return Ok(cfg) };
    let method = i.method.unwrap_or(IntegratorMethodConfig::Dopri45);
    cfg.method = match method {
        IntegratorMethodConfig::Dopri45 => Method::Dopri45 {
            rtol: i.rtol.unwrap_or(1e-8),
            atol: i.atol.unwrap_or(1e-10),
        },
        IntegratorMethodConfig::Krylov => Method::KrylovExpm {
            tol: i.krylov_tol.unwrap_or(1e-9),
            dim: i.krylov_dim.unwrap_or(40),
        },
        IntegratorMethodConfig::Rk4 => Method::Rk4 {
            dt: i
                .rk4_dt_s
                .ok_or_else(|| Error::Config("rk4 method requires rk4_dt_s".into()))?,
        },
    };
    Ok(cfg)
}

fn build_sequence(schedule: &ScheduleConfig) -> Result<Option<PulseSequence>> {
    Ok(match *schedule {
        ScheduleConfig::Free { duration_s } => {
            if duration_s > 0.0 {
                Some(PulseSequence { ops: vec![PulseOp::Free { tau: duration_s }] })
            } else {
                Some(PulseSequence::default())
            }
        }
        ScheduleConfig::Xy8 { tau_s } => Some(protocols::xy8_block(tau_s)?),
        ScheduleConfig::ConcatenatedXy8 { tau_s } => Some(protocols::concatenated_xy8(tau_s)?),
        ScheduleConfig::DcrReflection { .. } => None, // needs steady-state angles first
        ScheduleConfig::Steady => None,
    })
}

// ---------------------------------------------------------------------------
// artifact writers
// ---------------------------------------------------------------------------

fn fmt_f(x: f64) -> String {
    format!("{x:.11e}")
}

pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "t_s,xi2,jx,jy,jz,trace_err,purity,anc_pop")?;
    for r in &traj.records {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            fmt_f(r.t),
            fmt_f(r.xi2),
            fmt_f(r.mean_spin[0]),
            fmt_f(r.mean_spin[1]),
            fmt_f(r.mean_spin[2]),
            fmt_f(r.trace_err),
            fmt_f(r.purity),
            fmt_f(r.ancilla_population),
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    command: &'a str,
    config: &'a ExperimentConfig,
    resolved_model: &'a ModelSpec,
    seeds: Vec<u64>,
    wall_ms: u128,
    integrator: IntegratorStatsOut,
    outputs: Vec<String>,
}

#[derive(Serialize, Default)]
struct IntegratorStatsOut {
    steps_accepted: usize,
    steps_rejected: usize,
    rhs_evals: usize,
    max_hermitization_correction: f64,
    max_trace_drift: f64,
    trace_flagged: bool,
}

#[allow(clippy::too_many_arguments)]
fn write_manifest(
    dir: &Path,
    command: &str,
    config: &ExperimentConfig,
    spec: &ModelSpec,
    seeds: Vec<u64>,
    wall_ms: u128,
    stats: IntegratorStatsOut,
    outputs: &[PathBuf],
) -> Result<()> {
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        command,
        config,
        resolved_model: spec,
        seeds,
        wall_ms,
        integrator: stats,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    let f = std::fs::File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(f, &manifest).map_err(|e| Error::Config(e.to_string()))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// subcommand implementations
// ---------------------------------------------------------------------------

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("invalid config: {e}")))
}

fn out_dir(config: &ExperimentConfig, flag: Option<&Path>) -> Result<PathBuf> {
    let dir = flag
        .map(|p| p.to_path_buf())
        .or_else(|| config.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn stats_out(traj: &Trajectory) -> IntegratorStatsOut {
    IntegratorStatsOut {
        steps_accepted: traj.stats.steps_accepted,
        steps_rejected: traj.stats.steps_rejected,
        rhs_evals: traj.stats.rhs_evals,
        max_hermitization_correction: traj.stats.max_hermitization_correction,
        max_trace_drift: traj.stats.max_trace_drift,
        trace_flagged: traj.trace_flagged,
    }
}

/// Evolve one resolved configuration (no ensemble). The DCR reflection
/// schedule first solves for the steady state to fix the rotation angle.
fn run_single(res: &Resolved) -> Result<Trajectory> {
    let initial = InitialState {
        theta: res.config.initial_state.theta_rad,
        phi: res.config.initial_state.phi_rad,
    };
    let seq = match &res.config.schedule {
        ScheduleConfig::DcrReflection { tau_s, count } => {
            let (theta_ss, _phi) = dcr_angles(res)?;
            protocols::dcr_reflection_sequence(theta_ss, res.spec.drive_phase, *tau_s, *count)?
        }
        other => build_sequence(other)?.ok_or_else(|| {
            Error::Config("schedule kind not runnable as a trajectory".into())
        })?,
    };
    let s0 = spin_coherent_state(res.layout, initial.theta, initial.phi);
    if seq.ops.is_empty() {
        // zero-duration schedule: initial-state observables only
        let mut sched = Schedule::new(1.0);
        sched.push_unitary(crate::operators::Operator::identity(res.layout));
        return evolve(&s0, &sched, &res.integrator);
    }
    let schedule =
        protocols::sequence_schedule(&res.spec, res.layout, res.form, &seq, res.config.output.dt_s)?;
    evolve(&s0, &schedule, &res.integrator)
}

/// Steady-state angles for the DCR reflection protocol, computed from the
/// homogeneous model steady state (theta_ss stays frozen thereafter).
fn dcr_angles(res: &Resolved) -> Result<(f64, f64)> {
    let hom = res.spec.clone().homogeneous();
    let (ss, _info) = match res.form {
        ModelForm::Effective => {
            let layout = SpaceLayout::new(
                res.layout.representation,
                res.spec.n_spins,
                Ancilla::None,
            )?;
            let (h, terms) = model::build_effective(&hom, layout)?;
            steady_state(&h, &terms)?
        }
        ModelForm::Full => {
            let layout = res.layout;
            let (h, terms) = model::build_full(&hom, layout)?;
            if layout.total_dim() <= 64 {
                steady_state(&h, &terms)?
            } else {
                let init = spin_coherent_state(layout, 0.0, 0.0);
                let consts = model::effective_constants(&hom)?;
                let max_t = 1e3 / (consts.gamma_eff * res.spec.n_spins as f64).max(1e-300);
                (steady_state_longtime(&h, &terms, &init, max_t)?, Default::default())
            }
        }
    };
    let (theta_ss, phi_ss, _resid) = protocols::steady_state_angles(&ss, res.spec.drive_phase)?;
    Ok((theta_ss, phi_ss))
}

impl Default for crate::dynamics::SteadyStateInfo {
    fn default() -> Self {
        crate::dynamics::SteadyStateInfo { residual: 0.0, gap: 0.0, degenerate: false }
    }
}

fn cmd_simulate(config_path: &Path, out: Option<&Path>, seed: Option<u64>, workers: usize) -> Result<()> {
    let t0 = std::time::Instant::now();
    let config = load_config(config_path)?;
    let res = resolve(&config, seed)?;
    let dir = out_dir(&config, out)?;
    let traj_path = dir.join("trajectory.csv");
    let mut outputs = vec![traj_path.clone()];
    let mut seeds = Vec::new();

    let traj = if let Some(ens) = config.ensemble {
        let initial = InitialState {
            theta: config.initial_state.theta_rad,
            phi: config.initial_state.phi_rad,
        };
        let seq = match &config.schedule {
            ScheduleConfig::DcrReflection { tau_s, count } => {
                let (theta_ss, _d) = dcr_angles(&res)?;
                protocols::dcr_reflection_sequence(theta_ss, res.spec.drive_phase, *tau_s, *count)?
            }
            other => build_sequence(other)?
                .ok_or_else(|| Error::Config("schedule kind not runnable".into()))?,
        };
        let result = run_ensemble_pooled(&res, initial, &seq, ens, workers)?;
        seeds = result.seeds.clone();
        let per_run = dir.join("per_run_xi2.csv");
        write_per_run_csv(&per_run, &result)?;
        outputs.push(per_run.clone());
        result.averaged
    } else {
        run_single(&res)?
    };
    write_trajectory_csv(&traj_path, &traj)?;
    write_manifest(
        &dir,
        "simulate",
        &config,
        &res.spec,
        seeds,
        t0.elapsed().as_millis(),
        stats_out(&traj),
        &outputs,
    )?;
    let m = traj.min_xi2();
    println!("simulate: {} records, min xi2 = {:.6} at t = {:.6e} s", traj.records.len(), m.value, m.t);
    Ok(())
}

fn run_ensemble_pooled(
    res: &Resolved,
    initial: InitialState,
    seq: &PulseSequence,
    ens: EnsembleConfig,
    workers: usize,
) -> Result<protocols::EnsembleResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| {
        protocols::ensemble_average(
            &res.spec,
            res.layout,
            res.form,
            initial,
            seq,
            res.config.output.dt_s,
            ens.n_runs,
            ens.master_seed,
            &res.integrator,
        )
    })
}

fn write_per_run_csv(path: &Path, result: &protocols::EnsembleResult) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    let header: Vec<String> = (0..result.n_runs).map(|k| format!("run{k}")).collect();
    writeln!(f, "t_index,mean_of_curves,{}", header.join(","))?;
    let n_t = result.mean_of_xi2_curves.len();
    for k in 0..n_t {
        let row: Vec<String> = result.per_run_xi2.iter().map(|c| fmt_f(c[k])).collect();
        writeln!(f, "{},{},{}", k, fmt_f(result.mean_of_xi2_curves[k]), row.join(","))?;
    }
    Ok(())
}

fn sweep_value_set(spec: &ModelSpec, name: &str, value_rad: f64) -> Result<ModelSpec> {
    let mut s = spec.clone();
    match name {
        "detuning" => s.detuning = value_rad,
        "drive" => s.drive = value_rad,
        "gamma" => s.gamma = value_rad,
        "lambda_bar" => s.lambda_bar = value_rad,
        "delta_omega" => s.delta_omega = value_rad,
        "delta_lambda" => s.delta_lambda = value_rad,
        other => {
            return Err(Error::Config(format!(
                "unknown sweep parameter '{other}' (detuning, drive, gamma, lambda_bar, delta_omega, delta_lambda)"
            )))
        }
    }
    Ok(s)
}

fn cmd_sweep(config_path: &Path, out: Option<&Path>, seed: Option<u64>, workers: usize) -> Result<()> {
    let t0 = std::time::Instant::now();
    let config = load_config(config_path)?;
    let res = resolve(&config, seed)?;
    let sweep = config
        .sweep
        .clone()
        .ok_or_else(|| Error::Config("sweep subcommand requires a sweep section".into()))?;
    let dir = out_dir(&config, out)?;
    let seq = build_sequence(&config.schedule)?
        .ok_or_else(|| Error::Config("sweep requires a time-evolution schedule".into()))?;
    let v1: Vec<f64> = sweep.param1.values_hz.iter().map(|v| TWO_PI * v).collect();
    let v2: Vec<f64> = sweep
        .param2
        .as_ref()
        .map(|a| a.values_hz.iter().map(|v| TWO_PI * v).collect())
        .unwrap_or_else(|| vec![f64::NAN]);
    let mut cells = Vec::new();
    for &a in &v1 {
        for &b in &v2 {
            cells.push((a, b));
        }
    }
    let initial = InitialState {
        theta: config.initial_state.theta_rad,
        phi: config.initial_state.phi_rad,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let run_cell = |&(a, b): &(f64, f64)| -> Result<(f64, f64)> {
        let mut spec = sweep_value_set(&res.spec, &sweep.param1.name, a)?;
        if let Some(p2) = &sweep.param2 {
            spec = sweep_value_set(&spec, &p2.name, b)?;
        }
        let schedule =
            protocols::sequence_schedule(&spec, res.layout, res.form, &seq, config.output.dt_s)?;
        let s0 = spin_coherent_state(res.layout, initial.theta, initial.phi);
        let traj = evolve(&s0, &schedule, &res.integrator)?;
        let m = traj.min_xi2();
        Ok((m.value, m.t))
    };
    use rayon::prelude::*;
    let results: Vec<Result<(f64, f64)>> = pool.install(|| cells.par_iter().map(run_cell).collect());

    let sweep_path = dir.join("sweep.csv");
    let mut f = std::fs::File::create(&sweep_path)?;
    if sweep.param2.is_some() {
        writeln!(f, "param1,param2,min_xi2,t_at_min")?;
    } else {
        writeln!(f, "param1,min_xi2,t_at_min")?;
    }
    // row-major over (param1, param2) regardless of execution order
    for (idx, cell) in cells.iter().enumerate() {
        let (mv, mt) = results[idx].as_ref().map_err(|e| Error::Integration(e.to_string()))?;
        if sweep.param2.is_some() {
            writeln!(
                f,
                "{},{},{},{}",
                fmt_f(cell.0 / TWO_PI),
                fmt_f(cell.1 / TWO_PI),
                fmt_f(*mv),
                fmt_f(*mt)
            )?;
        } else {
            writeln!(f, "{},{},{}", fmt_f(cell.0 / TWO_PI), fmt_f(*mv), fmt_f(*mt))?;
        }
    }
    drop(f);
    write_manifest(
        &dir,
        "sweep",
        &config,
        &res.spec,
        vec![],
        t0.elapsed().as_millis(),
        IntegratorStatsOut::default(),
        &[sweep_path],
    )?;
    println!("sweep: {} cells written", cells.len());
    Ok(())
}

fn cmd_steady(config_path: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let t0 = std::time::Instant::now();
    let config = load_config(config_path)?;
    let res = resolve(&config, seed)?;
    let dir = out_dir(&config, out)?;
    let spec = res.spec.clone().homogeneous();
    let (h, terms) = match res.form {
        ModelForm::Full => model::build_full(&spec, res.layout)?,
        ModelForm::Effective => model::build_effective(&spec, res.layout)?,
    };
    let (ss, info) = if res.layout.total_dim() <= 64 {
        steady_state(&h, &terms)?
    } else {
        let init = spin_coherent_state(res.layout, config.initial_state.theta_rad, config.initial_state.phi_rad);
        let min_rate = terms.iter().map(|t| t.rate).fold(f64::INFINITY, f64::min);
        (
            steady_state_longtime(&h, &terms, &init, 1e4 / min_rate)?,
            Default::default(),
        )
    };
    let rep = analysis::wineland_xi2(&ss);
    let angles = protocols::steady_state_angles(&ss, spec.drive_phase).ok();
    #[derive(Serialize)]
    struct SteadyOut {
        xi2: f64,
        xi2_defined: bool,
        mean_spin: [f64; 3],
        residual: f64,
        gap: f64,
        degenerate: bool,
        theta_ss: Option<f64>,
        phi_ss: Option<f64>,
    }
    let outp = dir.join("steady.json");
    let f = std::fs::File::create(&outp)?;
    serde_json::to_writer_pretty(
        f,
        &SteadyOut {
            xi2: rep.xi2,
            xi2_defined: rep.defined,
            mean_spin: rep.mean_spin,
            residual: info.residual,
            gap: info.gap,
            degenerate: info.degenerate,
            theta_ss: angles.map(|a| a.0),
            phi_ss: angles.map(|a| a.1),
        },
    )
    .map_err(|e| Error::Config(e.to_string()))?;
    write_manifest(
        &dir,
        "steady",
        &config,
        &res.spec,
        vec![],
        t0.elapsed().as_millis(),
        IntegratorStatsOut::default(),
        &[outp],
    )?;
    println!("steady: xi2 = {:.6} (gap {:.3e})", rep.xi2, info.gap);
    Ok(())
}

fn cmd_qfunction(config_path: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let t0 = std::time::Instant::now();
    let config = load_config(config_path)?;
    let res = resolve(&config, seed)?;
    let dir = out_dir(&config, out)?;
    let state: QuantumState = match &config.schedule {
        ScheduleConfig::Steady => {
            let spec = res.spec.clone().homogeneous();
            let (h, terms) = match res.form {
                ModelForm::Full => model::build_full(&spec, res.layout)?,
                ModelForm::Effective => model::build_effective(&spec, res.layout)?,
            };
            steady_state(&h, &terms)?.0
        }
        _ => run_single(&res)?.final_state,
    };
    let q = analysis::q_function(&state, analysis::Q_GRID_THETA, analysis::Q_GRID_PHI)?;
    let qpath = dir.join("qfunction.csv");
    let mut f = std::fs::File::create(&qpath)?;
    // header row: phi coordinates; header column: theta
    let phis: Vec<String> = q.phi.iter().map(|p| fmt_f(*p)).collect();
    writeln!(f, "theta\\phi,{}", phis.join(","))?;
    for (i, th) in q.theta.iter().enumerate() {
        let row: Vec<String> = (0..q.phi.len()).map(|j| fmt_f(q.values[(i, j)])).collect();
        writeln!(f, "{},{}", fmt_f(*th), row.join(","))?;
    }
    drop(f);
    write_manifest(
        &dir,
        "qfunction",
        &config,
        &res.spec,
        vec![],
        t0.elapsed().as_millis(),
        IntegratorStatsOut::default(),
        &[qpath],
    )?;
    println!("qfunction: normalization = {:.6}", q.normalization());
    Ok(())
}

fn cmd_couplingmap(preset: &str, out: Option<&Path>, grid: usize, sample: bool, seed: u64) -> Result<()> {
    let dir = out.map(|p| p.to_path_buf()).unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    let preset: Preset = preset.parse()?;
    let map_path = dir.join("couplingmap.csv");
    let mut f = std::fs::File::create(&map_path)?;
    writeln!(f, "y_m,z_m,lambda_hz")?;
    match preset {
        Preset::FqNv | Preset::DcrFq => {
            let g = geometry::FluxQubitGeometry::default();
            let half = 0.95 * g.side / 2.0;
            for iy in 0..grid {
                let y = -half + 2.0 * half * iy as f64 / (grid - 1) as f64;
                for iz in 0..grid {
                    let z = -half + 2.0 * half * iz as f64 / (grid - 1) as f64;
                    let lam = geometry::fq_coupling([0.0, y, z], &g, 4, 4)?;
                    writeln!(f, "{},{},{}", fmt_f(y), fmt_f(z), fmt_f(lam / TWO_PI))?;
                }
            }
        }
        Preset::MrDonor => {
            let g = geometry::ResonatorGeometry::default();
            let x = g.height + 100e-9;
            let half_y = 0.6 * g.length / 2.0;
            let half_z = 3.0 * g.width;
            for iy in 0..grid {
                let y = -half_y + 2.0 * half_y * iy as f64 / (grid - 1) as f64;
                for iz in 0..grid {
                    let z = -half_z + 2.0 * half_z * iz as f64 / (grid - 1) as f64;
                    let lam = geometry::mr_coupling([x, y, z], &g, 8, 2)?;
                    writeln!(f, "{},{},{}", fmt_f(y), fmt_f(z), fmt_f(lam / TWO_PI))?;
                }
            }
        }
    }
    drop(f);
    let mut outputs = vec![map_path];
    if sample {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (sample_box, stats) = match preset {
            Preset::FqNv | Preset::DcrFq => {
                let b = geometry::SampleBox::fq_diamond();
                let pts = geometry::sample_spins(&b, geometry::CountMode::Poisson, &mut rng)?;
                let g = geometry::FluxQubitGeometry::default();
                let st = geometry::coupling_stats(&pts, |p| geometry::fq_coupling(p, &g, 4, 4), 40)?;
                (pts, st)
            }
            Preset::MrDonor => {
                let b = geometry::SampleBox::mr_silicon();
                let pts = geometry::sample_spins(&b, geometry::CountMode::Poisson, &mut rng)?;
                let g = geometry::ResonatorGeometry::default();
                let st = geometry::coupling_stats(&pts, |p| geometry::mr_coupling(p, &g, 8, 2), 40)?;
                (pts, st)
            }
        };
        let pos_path = dir.join("positions.csv");
        let mut f = std::fs::File::create(&pos_path)?;
        writeln!(f, "x_m,y_m,z_m")?;
        for p in &sample_box {
            writeln!(f, "{},{},{}", fmt_f(p[0]), fmt_f(p[1]), fmt_f(p[2]))?;
        }
        drop(f);
        outputs.push(pos_path);
        let stats_path = dir.join("coupling_stats.json");
        #[derive(Serialize)]
        struct StatsOut {
            n_spins: usize,
            lambda_bar_hz: f64,
            delta_lambda_hz: f64,
            histogram: Vec<(f64, usize)>,
        }
        let fj = std::fs::File::create(&stats_path)?;
        serde_json::to_writer_pretty(
            fj,
            &StatsOut {
                n_spins: sample_box.len(),
                lambda_bar_hz: stats.lambda_bar / TWO_PI,
                delta_lambda_hz: stats.delta_lambda / TWO_PI,
                histogram: stats
                    .histogram
                    .iter()
                    .map(|(c, n)| (c / TWO_PI, *n))
                    .collect(),
            },
        )
        .map_err(|e| Error::Config(e.to_string()))?;
        outputs.push(stats_path);
        println!(
            "couplingmap: N = {}, lambda_bar = 2pi x {:.4} kHz, delta_lambda = 2pi x {:.4} kHz",
            sample_box.len(),
            stats.lambda_bar / TWO_PI / 1e3,
            stats.delta_lambda / TWO_PI / 1e3
        );
    } else {
        println!("couplingmap: grid written");
    }
    let _ = outputs;
    Ok(())
}

fn cmd_sense(preset: &str, state: &str, out: Option<&Path>) -> Result<()> {
    let dir = out.map(|p| p.to_path_buf()).unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    let (scenario, label) = sense_scenario(preset, state)?;
    let opt = sensing::optimize_sensitivity(&scenario)?;
    #[derive(Serialize)]
    struct SenseOut {
        scenario: SensingScenario,
        label: String,
        t_star_s: f64,
        delta_b_sqrt_t: f64,
        unimodal: bool,
    }
    let path = dir.join("sense.json");
    let f = std::fs::File::create(&path)?;
    serde_json::to_writer_pretty(
        f,
        &SenseOut {
            scenario,
            label: label.clone(),
            t_star_s: opt.t_star,
            delta_b_sqrt_t: opt.delta_b_sqrt_t,
            unimodal: opt.unimodal,
        },
    )
    .map_err(|e| Error::Config(e.to_string()))?;
    // sensitivity curve
    let curve_path = dir.join("sense_curve.csv");
    let mut fc = std::fs::File::create(&curve_path)?;
    writeln!(fc, "t_s,delta_b_sqrt_t")?;
    let lo = 1e-9f64;
    let hi = 10.0 / scenario.gamma_s;
    for i in 0..400 {
        let t = lo * (hi / lo).powf(i as f64 / 399.0);
        writeln!(fc, "{},{}", fmt_f(t), fmt_f(sensing::sensitivity(t, &scenario)))?;
    }
    println!("sense {label}: dB sqrt(T) = {:.4e} T/sqrt(Hz) at t = {:.4e} s", opt.delta_b_sqrt_t, opt.t_star);
    Ok(())
}

/// Paper scenarios: FQ_NV (N=500, T2 = 30 ms), MR_DONOR (N=1.2e4, T2 = 10 s),
/// HYBRID (flux qubit with donor spins: N=500, T2 = 10 s).
pub fn sense_scenario(preset: &str, state: &str) -> Result<(SensingScenario, String)> {
    let (n, gamma_s, model_preset) = match preset {
        "FQ_NV" => (500usize, 1.0 / 30e-3, Preset::FqNv),
        "MR_DONOR" => (12_000, 0.1, Preset::MrDonor),
        "HYBRID" => (500, 0.1, Preset::FqNv),
        other => {
            return Err(Error::Config(format!(
                "unknown sensing preset '{other}' (FQ_NV, MR_DONOR, HYBRID)"
            )))
        }
    };
    let scenario = match state {
        "coherent" => SensingScenario::coherent(n, gamma_s),
        "squeezed" => SensingScenario::oat_squeezed(&model_preset.spec(n), gamma_s)?,
        other => return Err(Error::Config(format!("unknown state '{other}' (coherent, squeezed)"))),
    };
    Ok((scenario, format!("{preset}/{state}")))
}

fn cmd_validate(config_path: &Path) -> Result<()> {
    let config = load_config(config_path)?;
    let res = resolve(&config, None)?;
    // dimension and Hermiticity checks without evolution
    let (h, terms) = match res.form {
        ModelForm::Full => model::build_full(&res.spec, res.layout)?,
        ModelForm::Effective => model::build_effective(&res.spec, res.layout)?,
    };
    h.assert_hermitian(1e-10 * (1.0 + h.max_abs()))?;
    for t in &terms {
        if t.rate < 0.0 {
            return Err(Error::Config("negative Lindblad rate".into()));
        }
    }
    if let Some(seq) = build_sequence(&config.schedule)? {
        if !seq.ops.is_empty() {
            let sched = protocols::sequence_schedule(
                &res.spec,
                res.layout,
                res.form,
                &seq,
                config.output.dt_s.min(seq.total_duration().max(config.output.dt_s)),
            )?;
            sched.validate()?;
        }
    }
    println!(
        "valid: N = {}, dim = {}, preset = {:?}, form = {:?}",
        res.spec.n_spins,
        res.layout.total_dim(),
        config.preset,
        config.model_form
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// argument parsing and dispatch
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(name = "spinsqueeze", about = "Spin-squeezing simulator for dissipative-ancilla models", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonRun {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker pool size for sweeps and ensembles.
    #[arg(long, default_value_t = default_workers())]
    workers: usize,
    /// Model disorder seed when the config leaves it unset.
    #[arg(long)]
    seed: Option<u64>,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a trajectory (optionally a disorder ensemble).
    Simulate(CommonRun),
    /// Scan one or two parameters; each cell records min xi^2.
    Sweep(CommonRun),
    /// Solve for the steady state of the configured model.
    Steady(CommonRun),
    /// Export the Q-function of the final (or steady) state.
    Qfunction(CommonRun),
    /// Export a device coupling map and optional sample statistics.
    Couplingmap {
        #[arg(long)]
        preset: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Grid points per axis.
        #[arg(long, default_value_t = 61)]
        grid: usize,
        /// Also sample spin positions and write coupling statistics.
        #[arg(long, default_value_t = false)]
        sample: bool,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Optimized magnetometry sensitivity for a device preset.
    Sense {
        #[arg(long)]
        preset: String,
        /// coherent or squeezed.
        #[arg(long)]
        state: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config without running the evolution.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn error_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::InvalidArgument(_)
        | Error::LayoutMismatch(_)
        | Error::DimensionMismatch { .. }
        | Error::SiteOutOfRange { .. }
        | Error::NoAncilla
        | Error::ProductRepresentationRequired => 2,
        _ => 3,
    }
}

/// CLI entry: parse arguments, dispatch, and map errors to exit codes.
pub fn main_impl() -> i32 {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(c) => cmd_simulate(&c.config, c.out.as_deref(), c.seed, c.workers),
        Command::Sweep(c) => cmd_sweep(&c.config, c.out.as_deref(), c.seed, c.workers),
        Command::Steady(c) => cmd_steady(&c.config, c.out.as_deref(), c.seed),
        Command::Qfunction(c) => cmd_qfunction(&c.config, c.out.as_deref(), c.seed),
        Command::Couplingmap { preset, out, grid, sample, seed } => {
            cmd_couplingmap(preset, out.as_deref(), *grid, *sample, *seed)
        }
        Command::Sense { preset, state, out } => cmd_sense(preset, state, out.as_deref()),
        Command::Validate { config } => cmd_validate(config),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            error_code(&e)
        }
    }
}
