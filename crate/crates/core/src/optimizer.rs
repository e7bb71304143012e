//! Stochastic Adam search over piecewise-constant pulse amplitudes.
//!
//! Each iteration draws one segment uniformly at random, estimates the loss
//! gradient along it with a central difference, takes an Adam step over all
//! amplitudes and keeps the result only if the final fidelity improves.
//! Rejected steps restore the amplitudes but keep the moment estimates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{free_piecewise, PulseMode, PulseSchedule};
use crate::error::{Error, Result};
use crate::propagator::{PackedState, Propagator, RunOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Weight of `c_max` in the loss.
    pub lambda: f64,
    /// Stop once the loss of the kept schedule falls below this.
    pub xi: f64,
    pub k_max: usize,
    pub fd_step: f64,
    pub seed: u64,
    /// Clamp each amplitude to the sign it had in the initial schedule.
    pub enforce_alternation: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            lambda: 0.01,
            xi: 0.001,
            k_max: 3000,
            fd_step: 1e-2,
            seed: 0,
            enforce_alternation: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if !(self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return bad("fd_step must be positive");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be non-negative");
        }
        if self.xi.is_nan() {
            return bad("xi must be a number");
        }
        Ok(())
    }
}

/// `1 - F + lambda * c_max`
pub fn loss(fidelity: f64, c_max: f64, lambda: f64) -> f64 {
    1.0 - fidelity + lambda * c_max
}

/// `[f(x + h) - f(x - h)] / 2h`
pub fn central_difference(mut f: impl FnMut(f64) -> Result<f64>, x: f64, h: f64) -> Result<f64> {
    Ok((f(x + h)? - f(x - h)?) / (2.0 * h))
}

/// Final fidelity and loss of `schedule`, simulated from `t = 0`.
pub fn evaluate(prop: &Propagator, schedule: &PulseSchedule, lambda: f64) -> Result<(f64, f64)> {
    let out = prop.run(&prop.track(schedule)?, &RunOptions::default())?;
    Ok((out.final_fidelity, loss(out.final_fidelity, schedule.max_amplitude(), lambda)))
}

/// Central-difference derivative of the loss along segment `coord`.
pub fn fd_gradient(
    prop: &Propagator,
    schedule: &PulseSchedule,
    coord: usize,
    fd_step: f64,
    lambda: f64,
) -> Result<f64> {
    if coord >= schedule.segments() {
        return Err(Error::InvalidConfig(format!(
            "segment {coord} out of range for {} segments",
            schedule.segments()
        )));
    }
    central_difference(
        |x| {
            let mut s = schedule.clone();
            s.amplitudes[coord] = x;
            Ok(evaluate(prop, &s, lambda)?.1)
        },
        schedule.amplitudes[coord],
        fd_step,
    )
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One Adam step at iteration `k >= 1`: updates the moments in place and
/// returns the proposed parameters.
pub fn adam_update(moments: &mut Moments, params: &[f64], g: &[f64], k: usize, cfg: &OptimizerConfig) -> Vec<f64> {
    assert!(k >= 1, "Adam iterations are counted from 1");
    assert_eq!(params.len(), g.len());
    let c1 = 1.0 - cfg.beta1.powi(k as i32);
    let c2 = 1.0 - cfg.beta2.powi(k as i32);
    params
        .iter()
        .zip(g)
        .zip(moments.m.iter_mut().zip(moments.v.iter_mut()))
        .map(|((&x, &gi), (m, v))| {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * gi;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            x - cfg.alpha * m_hat / (v_hat.sqrt() + cfg.epsilon)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub k: usize,
    /// Fidelity of this iteration's candidate.
    pub fidelity: f64,
    pub loss: f64,
    pub c_max: f64,
    pub accepted: bool,
    /// Fidelity of the kept schedule after this iteration.
    pub best_fidelity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    LossBelowThreshold,
    IterationCap,
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct OptimizerRun {
    pub params: Vec<f64>,
    pub moments: Moments,
    /// Iteration counter when the loop stopped.
    pub k: usize,
    pub best_schedule: PulseSchedule,
    pub best_fidelity: f64,
    pub best_loss: f64,
    pub initial_fidelity: f64,
    /// Entry `k = 0` is the initial schedule.
    pub log: Vec<LogEntry>,
    pub termination: Termination,
}

impl OptimizerRun {
    pub fn best_c_max(&self) -> f64 {
        self.best_schedule.max_amplitude()
    }
}

fn as_free(initial: &PulseSchedule) -> Result<PulseSchedule> {
    match initial.mode {
        PulseMode::GapTuned => Err(Error::InvalidConfig(
            "the optimizer searches over piecewise-constant amplitudes; gap-tuned schedules are not supported".into(),
        )),
        _ => free_piecewise(initial.amplitudes.clone(), initial.tau),
    }
}

/// Simulates `schedule` from segment boundary `start`, returning the final
/// fidelity and the checkpoints from `start` on.
fn simulate_from(
    prop: &Propagator,
    schedule: &PulseSchedule,
    start: &PackedState,
    record: bool,
) -> Result<(f64, Vec<PackedState>)> {
    let track = prop.track(schedule)?;
    let out = prop.run_from(
        &track,
        start,
        &RunOptions {
            record_checkpoints: record,
            ..RunOptions::default()
        },
    )?;
    Ok((out.final_fidelity, out.checkpoints))
}

pub fn optimize(initial: &PulseSchedule, prop: &Propagator, cfg: &OptimizerConfig) -> Result<OptimizerRun> {
    cfg.validate()?;
    let mut current = as_free(initial)?;
    let segments = current.segments();
    let signs: Vec<f64> = current.amplitudes.iter().map(|a| a.signum()).collect();

    let (fidelity, mut checkpoints) = simulate_from(prop, &current, &prop.initial_state(), true)?;
    let mut current_loss = loss(fidelity, current.max_amplitude(), cfg.lambda);
    let mut run = OptimizerRun {
        params: current.amplitudes.clone(),
        moments: Moments::zeros(segments),
        k: 0,
        best_schedule: current.clone(),
        best_fidelity: fidelity,
        best_loss: current_loss,
        initial_fidelity: fidelity,
        log: vec![LogEntry {
            k: 0,
            fidelity,
            loss: current_loss,
            c_max: current.max_amplitude(),
            accepted: true,
            best_fidelity: fidelity,
        }],
        termination: Termination::IterationCap,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut k = 1;
    loop {
        run.k = k;
        if current_loss < cfg.xi {
            run.termination = Termination::LossBelowThreshold;
            break;
        }
        if k > cfg.k_max {
            run.termination = Termination::IterationCap;
            break;
        }
        let coord = rng.random_range(0..segments);
        match iterate(prop, cfg, &current, &checkpoints, &mut run.moments, coord, k, &signs) {
            Ok(step) => {
                let accepted = step.fidelity > run.best_fidelity;
                if accepted {
                    current.amplitudes = step.proposed;
                    checkpoints.truncate(step.first_changed);
                    checkpoints.extend(step.checkpoints);
                    current_loss = step.loss;
                    run.best_fidelity = step.fidelity;
                    run.best_loss = step.loss;
                }
                run.log.push(LogEntry {
                    k,
                    fidelity: step.fidelity,
                    loss: step.loss,
                    c_max: step.c_max,
                    accepted,
                    best_fidelity: run.best_fidelity,
                });
            }
            Err(e) => {
                run.termination = Termination::Failed(e.to_string());
                break;
            }
        }
        k += 1;
    }
    run.params = current.amplitudes.clone();
    run.best_schedule = current;
    Ok(run)
}

struct Step {
    proposed: Vec<f64>,
    fidelity: f64,
    loss: f64,
    c_max: f64,
    first_changed: usize,
    checkpoints: Vec<PackedState>,
}

#[allow(clippy::too_many_arguments)]
fn iterate(
    prop: &Propagator,
    cfg: &OptimizerConfig,
    current: &PulseSchedule,
    checkpoints: &[PackedState],
    moments: &mut Moments,
    coord: usize,
    k: usize,
    signs: &[f64],
) -> Result<Step> {
    let shifted = |delta: f64| -> Result<f64> {
        let mut s = current.clone();
        s.amplitudes[coord] += delta;
        let (f, _) = simulate_from(prop, &s, &checkpoints[coord], false)?;
        Ok(loss(f, s.max_amplitude(), cfg.lambda))
    };
    let (plus, minus) = rayon::join(|| shifted(cfg.fd_step), || shifted(-cfg.fd_step));
    let mut g = vec![0.0; current.segments()];
    g[coord] = (plus? - minus?) / (2.0 * cfg.fd_step);

    let mut proposed = adam_update(moments, &current.amplitudes, &g, k, cfg);
    if cfg.enforce_alternation {
        for (a, &s) in proposed.iter_mut().zip(signs) {
            if s != 0.0 && *a * s < 0.0 {
                *a = 0.0;
            }
        }
    }
    let candidate = PulseSchedule {
        amplitudes: proposed,
        ..current.clone()
    };
    let c_max = candidate.max_amplitude();
    let first_changed = candidate
        .amplitudes
        .iter()
        .zip(&current.amplitudes)
        .position(|(a, b)| a != b);
    let (fidelity, new_checkpoints, first_changed) = match first_changed {
        Some(j) => {
            let (f, cps) = simulate_from(prop, &candidate, &checkpoints[j], true)?;
            (f, cps, j)
        }
        // Nothing moved: the candidate is the kept schedule.
        None => (
            prop.fidelity(checkpoints.last().expect("checkpoints cover [0, T]"))?,
            Vec::new(),
            checkpoints.len(),
        ),
    };
    Ok(Step {
        proposed: candidate.amplitudes,
        fidelity,
        loss: loss(fidelity, c_max, cfg.lambda),
        c_max,
        first_changed,
        checkpoints: new_checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{ideal_rect, no_control};
    use crate::dynamics::BathConfig;
    use crate::hamiltonian::ChainConfig;
    use crate::propagator::Model;
    use std::f64::consts::PI;

    fn small_problem() -> Propagator {
        let chain = ChainConfig::new(3, -1.0, 0.7, PI).unwrap();
        let bath = BathConfig {
            coupling: 0.003,
            frequency: 2.0,
            temperature: 10.0,
            ..BathConfig::default()
        };
        Propagator::new(&chain, &bath, Model::NonMarkovian, 400).unwrap()
    }

    #[test]
    fn loss_examples() {
        assert_eq!(loss(1.0, 0.0, 0.01), 0.0);
        assert!((loss(0.99, 20.0, 0.01) - 0.21).abs() < 1e-15);
        assert_eq!(loss(0.7, 35.0, 0.0), 1.0 - 0.7);
    }

    #[test]
    fn central_difference_is_exact_on_quadratics() {
        let g = central_difference(|x| Ok((x - 3.0) * (x - 3.0)), 5.0, 1e-2).unwrap();
        assert!((g - 4.0).abs() < 1e-12);
        assert_eq!(central_difference(|_| Ok(2.5), 1.0, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn first_step_is_sign_of_gradient() {
        let cfg = OptimizerConfig::default();
        for g0 in [1.0, -3.0, 250.0] {
            let mut mo = Moments::zeros(3);
            let p = adam_update(&mut mo, &[1.0, 2.0, 3.0], &[g0, 0.0, 0.0], 1, &cfg);
            assert!((p[0] - 1.0 + cfg.alpha * g0.signum()).abs() < 1e-6);
            assert_eq!(&p[1..], &[2.0, 3.0]);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut mo = Moments::zeros(2);
        let p = adam_update(&mut mo, &[4.0, -4.0], &[0.0, 0.0], 1, &OptimizerConfig::default());
        assert_eq!(p, vec![4.0, -4.0]);
    }

    #[test]
    fn five_step_moment_sequence() {
        // Reference values computed independently from the update formulas.
        let gs = [[1.5, 0.0], [0.0, -0.4], [2.0, 0.0], [0.0, 0.7], [-1.0, 0.0]];
        let expected = [
            ([0.15, 0.0], [0.00225, 0.0], [9.000000006666667, -10.0]),
            ([0.135, -0.04], [0.00224775, 0.00016], [8.32994175884908, -9.255863202735648]),
            ([0.3215, -0.036], [0.00624550225, 0.00015984], [7.508131718805599, -8.680643306285598]),
            ([0.28935, 0.0376], [0.00623925674775, 0.00064968016], [6.834954940308522, -8.951731187879407]),
            ([0.160415, 0.03384], [0.007233017491002257, 0.00064903047984], [6.509589507835315, -9.180862262689198]),
        ];
        let cfg = OptimizerConfig::default();
        let mut mo = Moments::zeros(2);
        let mut x = vec![10.0, -10.0];
        for (k, (g, (m, v, xe))) in gs.iter().zip(expected).enumerate() {
            x = adam_update(&mut mo, &x, g, k + 1, &cfg);
            for i in 0..2 {
                assert!((mo.m[i] - m[i]).abs() < 1e-12, "m at k={}", k + 1);
                assert!((mo.v[i] - v[i]).abs() < 1e-12, "v at k={}", k + 1);
                assert!((x[i] - xe[i]).abs() < 1e-12, "x at k={}", k + 1);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig::default().validate().is_ok());
        let bad = [
            OptimizerConfig { alpha: 0.0, ..Default::default() },
            OptimizerConfig { beta1: 1.0, ..Default::default() },
            OptimizerConfig { beta2: -0.1, ..Default::default() },
            OptimizerConfig { epsilon: 0.0, ..Default::default() },
            OptimizerConfig { fd_step: 0.0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn infinite_threshold_stops_at_first_iteration() {
        let prop = small_problem();
        let cfg = OptimizerConfig {
            xi: f64::INFINITY,
            ..Default::default()
        };
        let init = ideal_rect(10.0, PI / 10.0, PI).unwrap();
        let run = optimize(&init, &prop, &cfg).unwrap();
        assert_eq!(run.k, 1);
        assert_eq!(run.log.len(), 1);
        assert_eq!(run.termination, Termination::LossBelowThreshold);
        assert_eq!(run.best_schedule.amplitudes, init.amplitudes);
    }

    #[test]
    fn checkpointed_gradient_matches_fresh_simulation() {
        let prop = small_problem();
        let init = ideal_rect(10.0, PI / 10.0, PI).unwrap();
        let cfg = OptimizerConfig::default();
        let free = as_free(&init).unwrap();
        let (_, cps) = simulate_from(&prop, &free, &prop.initial_state(), true).unwrap();
        for coord in [0, 4, 9] {
            let mut mo = Moments::zeros(10);
            let step = iterate(&prop, &cfg, &free, &cps, &mut mo, coord, 1, &[]).unwrap();
            let fresh = fd_gradient(&prop, &free, coord, cfg.fd_step, cfg.lambda).unwrap();
            assert_eq!(mo.m[coord], (1.0 - cfg.beta1) * fresh);
            let (f, _) = evaluate(&prop, &PulseSchedule { amplitudes: step.proposed.clone(), ..free.clone() }, 0.0)
                .unwrap();
            assert_eq!(step.fidelity, f);
        }
    }

    #[test]
    fn run_is_deterministic_and_guarded() {
        let prop = small_problem();
        let cfg = OptimizerConfig {
            k_max: 25,
            seed: 7,
            ..Default::default()
        };
        let init = ideal_rect(10.0, PI / 10.0, PI).unwrap();
        let a = optimize(&init, &prop, &cfg).unwrap();
        let b = optimize(&init, &prop, &cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.k, 26);
        assert_eq!(a.log.len(), 26);
        assert_eq!(a.termination, Termination::IterationCap);
        assert!(a.log.windows(2).all(|w| w[1].best_fidelity >= w[0].best_fidelity));
        assert!(a.moments.v.iter().all(|&v| v >= 0.0));
        let (f, _) = evaluate(&prop, &a.best_schedule, 0.0).unwrap();
        assert_eq!(f, a.best_fidelity);
        assert!(a.best_fidelity >= a.initial_fidelity);
    }

    #[test]
    fn alternation_clamp_keeps_signs() {
        let prop = small_problem();
        let cfg = OptimizerConfig {
            k_max: 15,
            seed: 3,
            alpha: 25.0,
            enforce_alternation: true,
            ..Default::default()
        };
        let init = ideal_rect(10.0, PI / 10.0, PI).unwrap();
        let run = optimize(&init, &prop, &cfg).unwrap();
        for (a, b) in run.best_schedule.amplitudes.iter().zip(&init.amplitudes) {
            assert!(a * b >= 0.0);
        }
    }

    #[test]
    fn gap_tuned_initial_schedule_is_rejected() {
        let prop = small_problem();
        let init = crate::control::gap_tuned(1.0, PI / 10.0, PI, 0.1).unwrap();
        assert!(optimize(&init, &prop, &OptimizerConfig::default()).is_err());
        assert!(optimize(&no_control(PI), &prop, &OptimizerConfig { k_max: 2, ..Default::default() }).is_ok());
    }
}
