//! Flat run configuration shared by the config file and the CLI flags.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::{gap_tuned, ideal_rect, no_control, PulseSchedule, DEFAULT_GAP_FLOOR};
use crate::dynamics::{BathConfig, OzSource};
use crate::error::{Error, Result};
use crate::hamiltonian::{ChainConfig, LindbladKind, LoweringConvention};
use crate::optimizer::OptimizerConfig;
use crate::propagator::{Model, Propagator, DEFAULT_STEPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlArm {
    None,
    #[serde(alias = "ideal_rect")]
    Ideal,
    #[serde(alias = "gap-tuned")]
    GapTuned,
    #[serde(alias = "adam_optimized")]
    Adam,
}

impl ControlArm {
    pub const ALL: [ControlArm; 4] = [ControlArm::None, ControlArm::Ideal, ControlArm::GapTuned, ControlArm::Adam];

    pub fn name(self) -> &'static str {
        match self {
            ControlArm::None => "none",
            ControlArm::Ideal => "ideal",
            ControlArm::GapTuned => "gap-tuned",
            ControlArm::Adam => "adam",
        }
    }
}

impl std::str::FromStr for ControlArm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ControlArm::None),
            "ideal" | "ideal_rect" => Ok(ControlArm::Ideal),
            "gap-tuned" | "gap_tuned" => Ok(ControlArm::GapTuned),
            "adam" | "adam_optimized" => Ok(ControlArm::Adam),
            other => Err(Error::InvalidConfig(format!("unknown control arm `{other}`"))),
        }
    }
}

/// Starting schedule for the Adam arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdamStart {
    /// Alternating `+-initial_guess`.
    Guess,
    /// Whichever of the guess and the ideal schedule has the higher fidelity.
    #[default]
    BestOf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n_sites: usize,
    pub coupling: f64,
    pub h_m: f64,
    pub total_time: f64,

    pub gamma_coupling: f64,
    pub gamma_bath: f64,
    pub temperature: f64,
    pub lindblad: LindbladKind,
    pub normalized_lowering: bool,
    pub oz_source: OzSource,
    /// Use the Markov-limit Lindblad equation.
    pub markov: bool,

    pub control: ControlArm,
    pub pulse_strength: f64,
    pub tau: f64,
    pub gap_floor: f64,

    /// RK4 steps over `[0, T]`; `dt` takes precedence when set.
    pub steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub sample_stride: usize,

    pub seed: u64,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub lambda: f64,
    pub xi: f64,
    pub k_max: usize,
    pub fd_step: f64,
    pub enforce_alternation: bool,
    pub initial_guess: f64,
    pub adam_start: AdamStart,

    /// Worker threads for sweeps; all cores when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let chain = ChainConfig::default();
        let bath = BathConfig::default();
        let opt = OptimizerConfig::default();
        Self {
            n_sites: chain.n_sites,
            coupling: chain.coupling,
            h_m: chain.h_m,
            total_time: chain.total_time,
            gamma_coupling: bath.coupling,
            gamma_bath: bath.frequency,
            temperature: bath.temperature,
            lindblad: bath.lindblad,
            normalized_lowering: bath.lowering == LoweringConvention::Normalized,
            oz_source: bath.oz_source,
            markov: false,
            control: ControlArm::Ideal,
            pulse_strength: 20.0,
            tau: PI / 10.0,
            gap_floor: DEFAULT_GAP_FLOOR,
            steps: DEFAULT_STEPS,
            dt: None,
            sample_stride: 10,
            seed: opt.seed,
            alpha: opt.alpha,
            beta1: opt.beta1,
            beta2: opt.beta2,
            epsilon: opt.epsilon,
            lambda: opt.lambda,
            xi: opt.xi,
            k_max: opt.k_max,
            fd_step: opt.fd_step,
            enforce_alternation: opt.enforce_alternation,
            initial_guess: 10.0,
            adam_start: AdamStart::default(),
            workers: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn chain(&self) -> Result<ChainConfig> {
        ChainConfig::new(self.n_sites, self.coupling, self.h_m, self.total_time)
    }

    pub fn bath(&self) -> Result<BathConfig> {
        let bath = BathConfig {
            coupling: self.gamma_coupling,
            frequency: self.gamma_bath,
            temperature: self.temperature,
            lindblad: self.lindblad,
            lowering: if self.normalized_lowering {
                LoweringConvention::Normalized
            } else {
                LoweringConvention::Literal
            },
            oz_source: self.oz_source,
        };
        bath.validate()?;
        Ok(bath)
    }

    pub fn model(&self) -> Model {
        if self.markov {
            Model::Lindblad
        } else {
            Model::NonMarkovian
        }
    }

    /// Step count, derived from `dt` when it is set.
    pub fn step_count(&self) -> Result<usize> {
        match self.dt {
            None if self.steps > 0 => Ok(self.steps),
            None => Err(Error::InvalidConfig("steps must be positive".into())),
            Some(dt) => {
                let ratio = self.total_time / dt;
                let n = ratio.round();
                if !(dt > 0.0) || n < 1.0 || (ratio - n).abs() > 1e-9 * ratio {
                    return Err(Error::InvalidConfig(format!(
                        "dt = {dt} does not divide T = {} into whole steps",
                        self.total_time
                    )));
                }
                Ok(n as usize)
            }
        }
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            alpha: self.alpha,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            lambda: self.lambda,
            xi: self.xi,
            k_max: self.k_max,
            fd_step: self.fd_step,
            seed: self.seed,
            enforce_alternation: self.enforce_alternation,
        }
    }

    pub fn propagator(&self) -> Result<Propagator> {
        Propagator::new(&self.chain()?, &self.bath()?, self.model(), self.step_count()?)
    }

    /// Fixed schedule for an arm; the Adam arm yields its starting guess.
    pub fn schedule(&self, arm: ControlArm) -> Result<PulseSchedule> {
        match arm {
            ControlArm::None => Ok(no_control(self.total_time)),
            ControlArm::Ideal => ideal_rect(self.pulse_strength, self.tau, self.total_time),
            ControlArm::GapTuned => gap_tuned(self.pulse_strength, self.tau, self.total_time, self.gap_floor),
            ControlArm::Adam => ideal_rect(self.initial_guess, self.tau, self.total_time),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.chain()?;
        self.bath()?;
        self.step_count()?;
        self.optimizer().validate()?;
        if self.sample_stride == 0 {
            return Err(Error::InvalidConfig("sample_stride must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidConfig("workers must be positive".into()));
        }
        Ok(())
    }
}
