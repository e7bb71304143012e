//! Experiment driver: single trajectories, parameter sweeps, the Markov-limit
//! comparison and the `h_m` calibration scan.

pub mod config;
pub mod output;

use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{AdamStart, ControlArm, RunConfig};
pub use output::{Manifest, VERSION};

use crate::control::PulseSchedule;
use crate::error::{Error, Result};
use crate::hamiltonian::{energy_gap, ChainConfig, LindbladKind};
use crate::optimizer::{evaluate, loss, optimize, OptimizerRun, Termination};
use crate::propagator::{Propagator, RunOptions, TrajectoryPoint};

/// Parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    GammaCoupling,
    GammaBath,
    Temperature,
    NSites,
    Lindblad,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::GammaCoupling => "gamma_coupling",
            SweepParameter::GammaBath => "gamma_bath",
            SweepParameter::Temperature => "temperature",
            SweepParameter::NSites => "n_sites",
            SweepParameter::Lindblad => "lindblad",
        }
    }

    /// 16 evenly spaced points up to the largest plotted value; `N` runs
    /// over 3..=9 and the Lindblad axis over all kinds.
    pub fn default_values(self) -> Vec<SweepValue> {
        let grid = |top: f64| (1..=16).map(|i| SweepValue::Number(top * i as f64 / 16.0)).collect();
        match self {
            SweepParameter::GammaCoupling => grid(0.05),
            SweepParameter::GammaBath => grid(20.0),
            SweepParameter::Temperature => grid(30.0),
            SweepParameter::NSites => (3..=9).map(|n| SweepValue::Number(n as f64)).collect(),
            SweepParameter::Lindblad => LindbladKind::ALL.into_iter().map(SweepValue::Kind).collect(),
        }
    }
}

impl std::str::FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma_coupling" | "gamma-coupling" => Ok(SweepParameter::GammaCoupling),
            "gamma_bath" | "gamma-bath" => Ok(SweepParameter::GammaBath),
            "temperature" => Ok(SweepParameter::Temperature),
            "n_sites" | "n-sites" => Ok(SweepParameter::NSites),
            "lindblad" => Ok(SweepParameter::Lindblad),
            other => Err(Error::InvalidConfig(format!("unknown sweep parameter `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepValue {
    Number(f64),
    Kind(LindbladKind),
}

impl fmt::Display for SweepValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepValue::Number(x) => write!(f, "{x}"),
            SweepValue::Kind(k) => f.write_str(k.short_name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub parameter: SweepParameter,
    pub values: Vec<SweepValue>,
}

impl Sweep {
    pub fn new(parameter: SweepParameter, values: Vec<SweepValue>) -> Result<Self> {
        let sweep = Self { parameter, values };
        for v in &sweep.values {
            sweep.check(*v)?;
        }
        Ok(sweep)
    }

    pub fn default_grid(parameter: SweepParameter) -> Self {
        Self {
            parameter,
            values: parameter.default_values(),
        }
    }

    /// Parses a comma-separated value list for `parameter`.
    pub fn parse(parameter: SweepParameter, list: &str) -> Result<Self> {
        let values = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| match parameter {
                SweepParameter::Lindblad => s.parse().map(SweepValue::Kind),
                _ => s
                    .parse::<f64>()
                    .map(SweepValue::Number)
                    .map_err(|_| Error::InvalidConfig(format!("`{s}` is not a number"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(parameter, values)
    }

    fn check(&self, value: SweepValue) -> Result<()> {
        match (self.parameter, value) {
            (SweepParameter::Lindblad, SweepValue::Kind(_)) => Ok(()),
            (SweepParameter::NSites, SweepValue::Number(x)) if x.fract() == 0.0 && x >= 1.0 => Ok(()),
            (SweepParameter::NSites, v) => Err(Error::InvalidConfig(format!("n_sites value {v} is not a positive integer"))),
            (SweepParameter::Lindblad, v) => Err(Error::InvalidConfig(format!("`{v}` is not a Lindblad kind"))),
            (_, SweepValue::Number(_)) => Ok(()),
            (p, v) => Err(Error::InvalidConfig(format!("`{v}` is not a value for {}", p.name()))),
        }
    }

    /// `base` with the swept parameter set to `value`.
    pub fn apply(&self, base: &RunConfig, value: SweepValue) -> Result<RunConfig> {
        self.check(value)?;
        let mut cfg = base.clone();
        match (self.parameter, value) {
            (SweepParameter::GammaCoupling, SweepValue::Number(x)) => cfg.gamma_coupling = x,
            (SweepParameter::GammaBath, SweepValue::Number(x)) => cfg.gamma_bath = x,
            (SweepParameter::Temperature, SweepValue::Number(x)) => cfg.temperature = x,
            (SweepParameter::NSites, SweepValue::Number(x)) => cfg.n_sites = x as usize,
            (SweepParameter::Lindblad, SweepValue::Kind(k)) => cfg.lindblad = k,
            _ => unreachable!("checked above"),
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// `NaN` when the run failed before reaching `T`.
    pub final_fidelity: f64,
    pub c_max: f64,
    /// `1 - F + lambda * c_max` with the configured `lambda`.
    pub loss: f64,
    pub wall_time_s: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub manifest: Manifest,
    pub arm: ControlArm,
    pub schedule: PulseSchedule,
    pub trajectory: Vec<TrajectoryPoint>,
    pub summary: Summary,
    pub optimizer: Option<OptimizerRun>,
}

impl RunRecord {
    pub fn failed(&self) -> bool {
        self.summary.error.is_some()
    }
}

/// `F_adam(T) - F_ideal(T)`
pub fn improvement(adam: f64, ideal: f64) -> f64 {
    adam - ideal
}

/// Starting schedule for the Adam arm under `cfg.adam_start`.
pub fn adam_initial_schedule(cfg: &RunConfig, prop: &Propagator) -> Result<PulseSchedule> {
    let guess = cfg.schedule(ControlArm::Adam)?;
    match cfg.adam_start {
        AdamStart::Guess => Ok(guess),
        AdamStart::BestOf => {
            let ideal = cfg.schedule(ControlArm::Ideal)?;
            let (f_guess, _) = evaluate(prop, &guess, 0.0)?;
            let (f_ideal, _) = evaluate(prop, &ideal, 0.0)?;
            Ok(if f_ideal > f_guess { ideal } else { guess })
        }
    }
}

/// Simulates `cfg` under its control arm, sampling the trajectory every
/// `sample_stride` steps. Integration and optimizer failures are reported in
/// the summary together with whatever was computed before them.
pub fn run_fidelity_trace(cfg: &RunConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let started = Instant::now();
    let prop = cfg.propagator()?;
    let arm = cfg.control;
    let mut error = None;
    let (schedule, optimizer) = match arm {
        ControlArm::Adam => {
            let run = optimize(&adam_initial_schedule(cfg, &prop)?, &prop, &cfg.optimizer())?;
            if let Termination::Failed(e) = &run.termination {
                error = Some(format!("optimizer: {e}"));
            }
            (run.best_schedule.clone(), Some(run))
        }
        other => (cfg.schedule(other)?, None),
    };
    finish(cfg, &prop, arm, schedule, optimizer, started, error)
}

/// Simulates `cfg` under a stored schedule, e.g. one written by an earlier
/// optimization.
pub fn replay_schedule(cfg: &RunConfig, schedule: PulseSchedule) -> Result<RunRecord> {
    cfg.validate()?;
    let started = Instant::now();
    let prop = cfg.propagator()?;
    finish(cfg, &prop, cfg.control, schedule, None, started, None)
}

fn finish(
    cfg: &RunConfig,
    prop: &Propagator,
    arm: ControlArm,
    schedule: PulseSchedule,
    optimizer: Option<OptimizerRun>,
    started: Instant,
    mut error: Option<String>,
) -> Result<RunRecord> {
    let track = prop.track(&schedule)?;
    let (trajectory, out) = prop.trace(
        &track,
        &RunOptions {
            sample_stride: Some(cfg.sample_stride),
            record_checkpoints: false,
        },
    );
    let final_fidelity = match out {
        Ok(out) => out.final_fidelity,
        Err(e) => {
            error.get_or_insert(e.to_string());
            f64::NAN
        }
    };
    Ok(RunRecord {
        manifest: Manifest::new("simulate", cfg),
        arm,
        schedule,
        trajectory,
        summary: Summary {
            final_fidelity,
            c_max: track.c_max(),
            loss: loss(final_fidelity, track.c_max(), cfg.lambda),
            wall_time_s: started.elapsed().as_secs_f64(),
            error,
        },
        optimizer,
    })
}

/// Runs `tasks` on a pool of `workers` threads (all cores when `None`),
/// returning results in task order.
pub fn in_pool<T: Sync, R: Send>(workers: Option<usize>, tasks: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Result<Vec<R>> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| tasks.par_iter().map(f).collect()))
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: SweepValue,
    pub arm: ControlArm,
    pub record: std::result::Result<RunRecord, String>,
}

impl SweepPoint {
    pub fn fidelity(&self) -> f64 {
        self.record.as_ref().map_or(f64::NAN, |r| r.summary.final_fidelity)
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub sweep: Sweep,
    pub arms: Vec<ControlArm>,
    /// Ordered by value, then by arm.
    pub points: Vec<SweepPoint>,
}

/// One CSV row of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: String,
    pub value: String,
    pub arm: String,
    pub fidelity: f64,
    pub c_max: f64,
    pub loss: f64,
    pub improvement: Option<f64>,
    pub error: Option<String>,
}

impl SweepResult {
    pub fn point(&self, value_index: usize, arm: ControlArm) -> Option<&SweepPoint> {
        let j = self.arms.iter().position(|&a| a == arm)?;
        self.points.get(value_index * self.arms.len() + j)
    }

    /// Final fidelities along the sweep axis for one arm.
    pub fn fidelities(&self, arm: ControlArm) -> Vec<f64> {
        (0..self.sweep.values.len())
            .filter_map(|i| self.point(i, arm).map(SweepPoint::fidelity))
            .collect()
    }

    /// `Im` at each sweep value, when both the Adam and ideal arms ran.
    pub fn improvements(&self) -> Vec<Option<f64>> {
        (0..self.sweep.values.len())
            .map(|i| {
                let adam = self.point(i, ControlArm::Adam)?.record.as_ref().ok()?;
                let ideal = self.point(i, ControlArm::Ideal)?.record.as_ref().ok()?;
                Some(improvement(adam.summary.final_fidelity, ideal.summary.final_fidelity))
            })
            .collect()
    }

    pub fn rows(&self) -> Vec<SweepRow> {
        let im = self.improvements();
        self.points
            .iter()
            .enumerate()
            .map(|(idx, p)| {
                let i = idx / self.arms.len();
                let (fidelity, c_max, loss, error) = match &p.record {
                    Ok(r) => (r.summary.final_fidelity, r.summary.c_max, r.summary.loss, r.summary.error.clone()),
                    Err(e) => (f64::NAN, f64::NAN, f64::NAN, Some(e.clone())),
                };
                SweepRow {
                    parameter: self.sweep.parameter.name().to_string(),
                    value: p.value.to_string(),
                    arm: p.arm.name().to_string(),
                    fidelity,
                    c_max,
                    loss,
                    improvement: im[i],
                    error,
                }
            })
            .collect()
    }
}

/// Runs every `(value, arm)` pair of `sweep` on top of `base`. Failing
/// points are recorded and the sweep continues.
pub fn run_sweep(base: &RunConfig, sweep: &Sweep, arms: &[ControlArm]) -> Result<SweepResult> {
    let tasks: Vec<(SweepValue, ControlArm)> = sweep
        .values
        .iter()
        .flat_map(|&v| arms.iter().map(move |&a| (v, a)))
        .collect();
    let points = in_pool(base.workers, &tasks, |&(value, arm)| {
        let record = sweep
            .apply(base, value)
            .and_then(|cfg| {
                run_fidelity_trace(&RunConfig {
                    control: arm,
                    ..cfg
                })
            })
            .map(|mut r| {
                r.manifest.command = "sweep".into();
                r
            })
            .map_err(|e| e.to_string());
        SweepPoint { value, arm, record }
    })?;
    Ok(SweepResult {
        sweep: sweep.clone(),
        arms: arms.to_vec(),
        points,
    })
}

/// Markov-limit runs of the no-control, ideal and Adam arms.
pub fn markov_comparison(cfg: &RunConfig) -> Result<Vec<RunRecord>> {
    let arms = [ControlArm::None, ControlArm::Ideal, ControlArm::Adam];
    let base = RunConfig {
        markov: true,
        ..cfg.clone()
    };
    in_pool(base.workers, &arms, |&arm| {
        run_fidelity_trace(&RunConfig {
            control: arm,
            ..base.clone()
        })
    })?
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub h_m: f64,
    pub fidelity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub scan: Vec<CalibrationPoint>,
    pub best_h_m: f64,
    pub best_fidelity: f64,
    pub target: f64,
}

impl Calibration {
    pub fn passed(&self) -> bool {
        self.best_fidelity >= self.target
    }

    pub fn check(&self) -> Result<f64> {
        if self.passed() {
            Ok(self.best_h_m)
        } else {
            Err(Error::CalibrationFailed {
                best: self.best_fidelity,
                h_m: self.best_h_m,
                target: self.target,
            })
        }
    }
}

/// Scans `h_m` over `points` evenly spaced values in `[lo, hi]` on the
/// closed system under the ideal pulses of `base`, and picks the value with
/// the highest final fidelity (the smallest one on ties).
pub fn calibrate_hm(base: &RunConfig, target: f64, lo: f64, hi: f64, points: usize) -> Result<Calibration> {
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::InvalidConfig(format!("invalid h_m range [{lo}, {hi}]")));
    }
    let values: Vec<f64> = if points <= 1 || lo == hi {
        vec![lo]
    } else {
        (0..points)
            .map(|i| lo + (hi - lo) * (i as f64 / (points - 1) as f64))
            .collect()
    };
    let closed = RunConfig {
        gamma_coupling: 0.0,
        markov: false,
        control: ControlArm::Ideal,
        ..base.clone()
    };
    let scan = in_pool(base.workers, &values, |&h_m| -> Result<CalibrationPoint> {
        let cfg = RunConfig { h_m, ..closed.clone() };
        let (fidelity, _) = evaluate(&cfg.propagator()?, &cfg.schedule(ControlArm::Ideal)?, 0.0)?;
        Ok(CalibrationPoint { h_m, fidelity })
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let best = scan
        .iter()
        .fold(&scan[0], |best, p| if p.fidelity > best.fidelity { p } else { best });
    Ok(Calibration {
        best_h_m: best.h_m,
        best_fidelity: best.fidelity,
        scan,
        target,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub t: f64,
    pub gap: f64,
}

/// `Delta E_01(t)` on `points` evenly spaced times in `[0, T]`.
pub fn gap_table(chain: &ChainConfig, points: usize) -> Result<Vec<GapPoint>> {
    chain.validate()?;
    let n = points.max(2) - 1;
    (0..=n)
        .map(|i| {
            let t = chain.total_time * (i as f64 / n as f64);
            Ok(GapPoint {
                t,
                gap: energy_gap(t, chain)?,
            })
        })
        .collect()
}

/// Trajectory row for CSV output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub t_over_total: f64,
    pub fidelity: f64,
    pub trace: f64,
    pub min_eigenvalue: f64,
    pub hermiticity: f64,
}

pub fn trajectory_rows(record: &RunRecord) -> Vec<TrajectoryRow> {
    let total = record.manifest.config.total_time;
    record
        .trajectory
        .iter()
        .map(|p| TrajectoryRow {
            t: p.t,
            t_over_total: p.t / total,
            fidelity: p.fidelity,
            trace: p.trace,
            min_eigenvalue: p.min_eigenvalue,
            hermiticity: p.hermiticity,
        })
        .collect()
}

/// Markov-comparison row: one per arm and sampled time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmTrajectoryRow {
    pub arm: String,
    pub t: f64,
    pub t_over_total: f64,
    pub fidelity: f64,
}

pub fn arm_trajectory_rows(records: &[RunRecord]) -> Vec<ArmTrajectoryRow> {
    records
        .iter()
        .flat_map(|r| {
            trajectory_rows(r).into_iter().map(move |row| ArmTrajectoryRow {
                arm: r.arm.name().to_string(),
                t: row.t,
                t_over_total: row.t_over_total,
                fidelity: row.fidelity,
            })
        })
        .collect()
}
