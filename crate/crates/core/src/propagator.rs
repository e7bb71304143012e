//! Fixed-step RK4 integration of the reduced dynamics in a symmetry-blocked
//! basis.
//!
//! The equations are the ones in [`crate::dynamics`]; this module only changes
//! how they are evaluated. All matrices are stored in a basis ordered by
//! excitation number (or parity, for `L = sum sigma^x`), which keeps every
//! product block-sparse. Pulse switches must coincide with step boundaries,
//! and within a step the control amplitude is that of the step's segment.

use std::sync::OnceLock;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::control::{floored_intensity, PulseMode, PulseSchedule};
use crate::dynamics::{fidelity_from_population, BathConfig, EvolutionState, StateVectors};
use crate::error::{Error, Result};
use crate::hamiltonian::{
    build_hxy, build_hz, drive_coefficients, energy_gap, hermitian_eigenvalues, lindblad_operator, ChainConfig,
};
use crate::sector::{BlockMatrix, Grading, SparseRows};

const ONE: Complex64 = Complex64::new(1.0, 0.0);
const NEG_I: Complex64 = Complex64::new(0.0, -1.0);

/// Default number of RK4 steps over `[0, T]`.
pub const DEFAULT_STEPS: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    /// Master equation coupled to the memory-operator equations.
    #[default]
    NonMarkovian,
    /// Markov-limit Lindblad equation.
    Lindblad,
}

/// Per-step values of `1 + c(t)` at the three RK4 stage times.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlTrack {
    factors: Vec<[f64; 3]>,
    steps_per_segment: usize,
    c_max: f64,
}

impl ControlTrack {
    /// Largest realized `|c(t)|` over the stage times.
    pub fn c_max(&self) -> f64 {
        self.c_max
    }

    pub fn steps_per_segment(&self) -> usize {
        self.steps_per_segment
    }
}

/// Integrator state in the blocked basis.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedState {
    step: usize,
    rho: BlockMatrix,
    oz: BlockMatrix,
    ow: BlockMatrix,
}

impl PackedState {
    pub fn step(&self) -> usize {
        self.step
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub fidelity: f64,
    pub trace: f64,
    pub min_eigenvalue: f64,
    /// `max |rho - rho^dagger|`
    pub hermiticity: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Record a trajectory point every this many steps (plus the final step).
    pub sample_stride: Option<usize>,
    /// Keep the state at every segment boundary reached.
    pub record_checkpoints: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub final_fidelity: f64,
    pub final_state: PackedState,
    pub trajectory: Vec<TrajectoryPoint>,
    /// States at segment boundaries `start_segment..=M`, if requested.
    pub checkpoints: Vec<PackedState>,
}

pub struct Propagator {
    chain: ChainConfig,
    bath: BathConfig,
    model: Model,
    steps: usize,
    dt: f64,
    grading: Grading,
    hxy: BlockMatrix,
    hz: BlockMatrix,
    l: BlockMatrix,
    ld: BlockMatrix,
    l_rows: SparseRows,
    ld_rows: SparseRows,
    /// `L^+ L + L L^+`, used by the Lindblad model.
    anti: BlockMatrix,
    /// `(A, B)` on the half-step grid `j * dt / 2`.
    drive: Vec<(f64, f64)>,
    gaps: OnceLock<Result<Vec<f64>>>,
    states: StateVectors,
    target: usize,
    closed: bool,
}

impl Propagator {
    pub fn new(chain: &ChainConfig, bath: &BathConfig, model: Model, steps: usize) -> Result<Self> {
        chain.validate()?;
        bath.validate()?;
        if steps == 0 {
            return Err(Error::InvalidConfig("steps must be positive".into()));
        }
        let n = chain.n_sites;
        let hxy = build_hxy(chain);
        let hz = build_hz(chain);
        let l = lindblad_operator(bath.lindblad, n, bath.lowering)?;
        let ld = l.adjoint();
        let grading = Grading::for_operators(n, &[&hxy, &hz, &l]);
        let pack = |m| grading.pack(m).expect("grading was chosen so that every operator has a charge");
        let anti = &ld * &l + &l * &ld;
        let drive = (0..=2 * steps)
            .map(|j| drive_coefficients(half_step_time(chain.total_time, steps, j), chain.total_time))
            .collect();
        let states = StateVectors::transfer(n);
        Ok(Self {
            chain: *chain,
            bath: *bath,
            model,
            steps,
            dt: chain.total_time / steps as f64,
            l_rows: SparseRows::new(&pack(&l)),
            ld_rows: SparseRows::new(&pack(&ld)),
            hxy: pack(&hxy),
            hz: pack(&hz),
            l: pack(&l),
            ld: pack(&ld),
            anti: pack(&anti),
            target: grading.permuted_index(states.target_index),
            grading,
            drive,
            gaps: OnceLock::new(),
            states,
            closed: bath.is_closed(),
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn chain(&self) -> &ChainConfig {
        &self.chain
    }

    pub fn bath(&self) -> &BathConfig {
        &self.bath
    }

    pub fn model(&self) -> Model {
        self.model
    }

    /// Name of the symmetry used to block the matrices.
    pub fn grading_label(&self) -> &'static str {
        self.grading.label()
    }

    fn gaps(&self) -> Result<&[f64]> {
        let gaps = self.gaps.get_or_init(|| {
            (0..=2 * self.steps)
                .map(|j| energy_gap(half_step_time(self.chain.total_time, self.steps, j), &self.chain))
                .collect()
        });
        match gaps {
            Ok(v) => Ok(v),
            Err(_) => Err(Error::Eigensolver),
        }
    }

    /// Samples `1 + c(t)` for every step; the schedule's switch times must
    /// land on step boundaries.
    pub fn track(&self, schedule: &PulseSchedule) -> Result<ControlTrack> {
        schedule.check_horizon(self.chain.total_time)?;
        let segments = schedule.segments();
        if self.steps % segments != 0 {
            let sps = self.steps as f64 / segments as f64;
            let k = sps.ceil();
            return Err(Error::MisalignedStep {
                switch: schedule.tau,
                start: (k - 1.0) * self.dt,
                end: k * self.dt,
            });
        }
        let sps = self.steps / segments;
        let gaps = match schedule.mode {
            PulseMode::GapTuned => Some(self.gaps()?),
            _ => None,
        };
        let mut c_max: f64 = 0.0;
        let factors = (0..self.steps)
            .map(|k| {
                let amp = schedule.amplitudes[k / sps];
                let mut f = [0.0; 3];
                for (stage, slot) in f.iter_mut().enumerate() {
                    let c = match gaps {
                        Some(g) => floored_intensity(amp, g[2 * k + stage], schedule.gap_floor),
                        None => amp,
                    };
                    c_max = c_max.max(c.abs());
                    *slot = 1.0 + c;
                }
                f
            })
            .collect();
        Ok(ControlTrack {
            factors,
            steps_per_segment: sps,
            c_max,
        })
    }

    pub fn initial_state(&self) -> PackedState {
        let g = &self.grading;
        let mut rho = BlockMatrix::zeros(g, 0);
        let p = g.permuted_index(self.states.initial_index);
        rho.data[p * g.dim() + p] = ONE;
        PackedState {
            step: 0,
            rho,
            oz: BlockMatrix::zeros(g, self.l.charge),
            ow: BlockMatrix::zeros(g, self.ld.charge),
        }
    }

    pub fn run(&self, track: &ControlTrack, options: &RunOptions) -> Result<RunOutput> {
        self.run_from(track, &self.initial_state(), options)
    }

    /// Integrates from `start` to `T`.
    pub fn run_from(&self, track: &ControlTrack, start: &PackedState, options: &RunOptions) -> Result<RunOutput> {
        let mut trajectory = Vec::new();
        let mut out = self.integrate(track, start, options, &mut trajectory)?;
        out.trajectory = trajectory;
        Ok(out)
    }

    /// Like [`Propagator::run`], but hands back the trajectory sampled up to
    /// the point of failure alongside any error.
    pub fn trace(&self, track: &ControlTrack, options: &RunOptions) -> (Vec<TrajectoryPoint>, Result<RunOutput>) {
        let mut trajectory = Vec::new();
        let out = self.integrate(track, &self.initial_state(), options, &mut trajectory);
        (trajectory, out)
    }

    fn integrate(
        &self,
        track: &ControlTrack,
        start: &PackedState,
        options: &RunOptions,
        trajectory: &mut Vec<TrajectoryPoint>,
    ) -> Result<RunOutput> {
        if track.factors.len() != self.steps {
            return Err(Error::InvalidConfig("control track was built for a different step count".into()));
        }
        let g = &self.grading;
        let mut y = start.clone();
        let mut scratch = Scratch::new(g, self.l.charge);
        let mut checkpoints = Vec::new();
        let stride = options.sample_stride.filter(|&s| s > 0);
        let sps = track.steps_per_segment;

        for k in y.step..self.steps {
            if options.record_checkpoints && k % sps == 0 {
                checkpoints.push(y.clone());
            }
            if stride.is_some_and(|s| k % s == 0) {
                trajectory.push(self.diagnostics(&y)?);
            }
            self.rk4_step(k, &track.factors[k], &mut y, &mut scratch);
            if (k + 1) % sps == 0 && !y.rho.is_finite() {
                return Err(Error::Diverged(self.time_of(k + 1)));
            }
        }
        if !y.rho.is_finite() {
            return Err(Error::Diverged(self.chain.total_time));
        }
        if options.record_checkpoints {
            checkpoints.push(y.clone());
        }
        if stride.is_some() {
            trajectory.push(self.diagnostics(&y)?);
        }
        Ok(RunOutput {
            final_fidelity: self.fidelity(&y)?,
            final_state: y,
            trajectory: Vec::new(),
            checkpoints,
        })
    }

    fn time_of(&self, step: usize) -> f64 {
        half_step_time(self.chain.total_time, self.steps, 2 * step)
    }

    pub fn fidelity(&self, state: &PackedState) -> Result<f64> {
        let d = self.grading.dim();
        fidelity_from_population(state.rho.data[self.target * d + self.target].re)
    }

    /// Trace, Hermiticity and positivity of an intermediate state. The
    /// fidelity is clamped at zero here: small negative populations are a
    /// known artifact of the perturbative master equation and show up in
    /// `min_eigenvalue`. Only the final fidelity is held to the corruption
    /// floor.
    pub fn diagnostics(&self, state: &PackedState) -> Result<TrajectoryPoint> {
        let g = &self.grading;
        let d = g.dim();
        let rho = &state.rho;
        let trace = (0..d).map(|i| rho.data[i * d + i].re).sum();
        let mut hermiticity: f64 = 0.0;
        for &(start, len) in rho.spans() {
            let (row, col0) = (start / d, start % d);
            for j in 0..len {
                let col = col0 + j;
                hermiticity = hermiticity.max((rho.data[row * d + col] - rho.data[col * d + row].conj()).norm());
            }
        }
        let mut min_eigenvalue = f64::INFINITY;
        for block in g.diagonal_blocks(rho) {
            let herm = (&block + block.adjoint()) * Complex64::new(0.5, 0.0);
            if let Some(&lowest) = hermitian_eigenvalues(herm)?.first() {
                min_eigenvalue = min_eigenvalue.min(lowest);
            }
        }
        Ok(TrajectoryPoint {
            t: self.time_of(state.step),
            fidelity: rho.data[self.target * d + self.target].re.max(0.0).sqrt(),
            trace,
            min_eigenvalue,
            hermiticity,
        })
    }

    /// Converts a packed state back to dense matrices in the original basis.
    pub fn unpack(&self, state: &PackedState) -> EvolutionState {
        EvolutionState {
            t: self.time_of(state.step),
            rho: self.grading.unpack(&state.rho),
            o_z: self.grading.unpack(&state.oz),
            o_w: self.grading.unpack(&state.ow),
        }
    }

    fn rk4_step(&self, k: usize, f: &[f64; 3], y: &mut PackedState, s: &mut Scratch) {
        let dt = self.dt;
        let j = 2 * k;
        let Scratch { k1, k2, k3, k4, stage, work } = s;
        self.rhs(j, f[0], &y.rho, &y.oz, &y.ow, k1, work);
        self.stage(y, dt / 2.0, k1, stage);
        self.rhs(j + 1, f[1], &stage.rho, &stage.oz, &stage.ow, k2, work);
        self.stage(y, dt / 2.0, k2, stage);
        self.rhs(j + 1, f[1], &stage.rho, &stage.oz, &stage.ow, k3, work);
        self.stage(y, dt, k3, stage);
        self.rhs(j + 2, f[2], &stage.rho, &stage.oz, &stage.ow, k4, work);

        let w = dt / 6.0;
        combine(&mut y.rho, w, &k1.rho, &k2.rho, &k3.rho, &k4.rho);
        if !self.memory_frozen() {
            combine(&mut y.oz, w, &k1.oz, &k2.oz, &k3.oz, &k4.oz);
            combine(&mut y.ow, w, &k1.ow, &k2.ow, &k3.ow, &k4.ow);
        }
        y.step += 1;
    }

    fn memory_frozen(&self) -> bool {
        self.closed || self.model == Model::Lindblad
    }

    fn stage(&self, y: &PackedState, h: f64, k: &Triple, out: &mut Triple) {
        out.rho.set_axpy(&y.rho, h, &k.rho);
        if !self.memory_frozen() {
            out.oz.set_axpy(&y.oz, h, &k.oz);
            out.ow.set_axpy(&y.ow, h, &k.ow);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn rhs(
        &self,
        half_step: usize,
        factor: f64,
        rho: &BlockMatrix,
        oz: &BlockMatrix,
        ow: &BlockMatrix,
        out: &mut Triple,
        w: &mut Work,
    ) {
        let g = &self.grading;
        let (a, b) = self.drive[half_step];
        let (fa, fb) = (factor * a, factor * b);
        for &(s, l) in self.hxy.spans() {
            let h = &mut w.h.data[s..s + l];
            for ((hv, xy), z) in h.iter_mut().zip(&self.hxy.data[s..s + l]).zip(&self.hz.data[s..s + l]) {
                *hv = xy * fa + z * fb;
            }
        }

        out.rho.fill_zero();
        g.mul(ONE, &w.h, rho, &mut w.hr);
        add_hermitian_pair(g, NEG_I, &w.hr, &mut out.rho);
        if self.closed {
            return;
        }

        match self.model {
            Model::Lindblad => {
                // Every term enters as a Hermitian pair so that rho stays
                // exactly Hermitian; the pair form is only valid on that
                // subspace and amplifies any anti-Hermitian residue.
                let rate = self.bath.markov_rate();
                w.acc.fill_zero();
                g.mul(ONE, &self.l, rho, &mut w.lq);
                g.mul_acc_sparse_right(ONE, &w.lq, &self.ld_rows, &mut w.acc);
                g.mul(ONE, &self.ld, rho, &mut w.lmq);
                g.mul_acc_sparse_right(ONE, &w.lmq, &self.l_rows, &mut w.acc);
                add_hermitian_pair(g, Complex64::new(rate, 0.0), &w.acc, &mut out.rho);
                g.mul(ONE, &self.anti, rho, &mut w.hr);
                add_hermitian_pair(g, Complex64::new(-rate, 0.0), &w.hr, &mut out.rho);
            }
            Model::NonMarkovian => {
                // [L, rho Oz^+] - [L^+, Oz rho] = A + A^+ with A = [L, rho Oz^+],
                // and likewise for the Ow pair.
                w.acc.fill_zero();
                g.adjoint(oz, &mut w.ozd);
                g.mul(ONE, rho, &w.ozd, &mut w.lmq);
                g.mul_acc(ONE, &self.l, &w.lmq, &mut w.acc);
                g.mul_acc_sparse_right(-ONE, &w.lmq, &self.l_rows, &mut w.acc);
                g.adjoint(ow, &mut w.owd);
                g.mul(ONE, rho, &w.owd, &mut w.lq);
                g.mul_acc(ONE, &self.ld, &w.lq, &mut w.acc);
                g.mul_acc_sparse_right(-ONE, &w.lq, &self.ld_rows, &mut w.acc);
                add_hermitian_pair(g, ONE, &w.acc, &mut out.rho);

                // K = -iH - (L^+ Oz + L Ow)
                w.acc.fill_zero();
                g.mul_acc(ONE, &self.ld, oz, &mut w.acc);
                g.mul_acc(ONE, &self.l, ow, &mut w.acc);
                let (kmat, acc, h) = (&mut w.k, &w.acc, &w.h);
                for &(s, l) in kmat.spans().to_vec().iter() {
                    for ((kv, hv), mv) in kmat.data[s..s + l]
                        .iter_mut()
                        .zip(&h.data[s..s + l])
                        .zip(&acc.data[s..s + l])
                    {
                        *kv = NEG_I * hv - mv;
                    }
                }

                let (cz, cw) = self.bath.memory_sources();
                let gamma = self.bath.frequency;
                memory_rhs(g, cz, &self.l, gamma, oz, &w.k, &mut out.oz);
                memory_rhs(g, cw, &self.ld, gamma, ow, &w.k, &mut out.ow);
            }
        }
    }
}

/// `out = c * src - gamma * o + [k, o]`
fn memory_rhs(
    g: &Grading,
    c: Complex64,
    src: &BlockMatrix,
    gamma: f64,
    o: &BlockMatrix,
    k: &BlockMatrix,
    out: &mut BlockMatrix,
) {
    for &(s, l) in out.spans().to_vec().iter() {
        for ((ov, sv), xv) in out.data[s..s + l]
            .iter_mut()
            .zip(&src.data[s..s + l])
            .zip(&o.data[s..s + l])
        {
            *ov = c * sv - xv * gamma;
        }
    }
    g.mul_acc(ONE, k, o, out);
    g.mul_acc(-ONE, o, k, out);
}

/// `out += alpha * x + conj(alpha) * x^+` for a charge-0 `x`.
fn add_hermitian_pair(g: &Grading, alpha: Complex64, x: &BlockMatrix, out: &mut BlockMatrix) {
    let d = g.dim();
    let ac = alpha.conj();
    for &(start, len) in x.spans() {
        let (row, col0) = (start / d, start % d);
        for j in 0..len {
            let col = col0 + j;
            out.data[row * d + col] += alpha * x.data[row * d + col] + ac * x.data[col * d + row].conj();
        }
    }
}

fn combine(y: &mut BlockMatrix, w: f64, k1: &BlockMatrix, k2: &BlockMatrix, k3: &BlockMatrix, k4: &BlockMatrix) {
    for &(s, l) in y.spans().to_vec().iter() {
        for ((((yv, a), b), c), d) in y.data[s..s + l]
            .iter_mut()
            .zip(&k1.data[s..s + l])
            .zip(&k2.data[s..s + l])
            .zip(&k3.data[s..s + l])
            .zip(&k4.data[s..s + l])
        {
            *yv += (a + (b + c) * 2.0 + d) * w;
        }
    }
}

/// Time of half-step `j` on a grid of `steps` steps over `[0, total]`; exact
/// at `0`, `T/2` and `T`.
fn half_step_time(total: f64, steps: usize, j: usize) -> f64 {
    total * (j as f64 / (2 * steps) as f64)
}

struct Triple {
    rho: BlockMatrix,
    oz: BlockMatrix,
    ow: BlockMatrix,
}

impl Triple {
    fn new(g: &Grading, q: i32) -> Self {
        Self {
            rho: BlockMatrix::zeros(g, 0),
            oz: BlockMatrix::zeros(g, q),
            ow: BlockMatrix::zeros(g, g.neg_charge(q)),
        }
    }
}

struct Work {
    h: BlockMatrix,
    hr: BlockMatrix,
    acc: BlockMatrix,
    k: BlockMatrix,
    /// charge `q` scratch
    lq: BlockMatrix,
    /// charge `-q` scratch
    lmq: BlockMatrix,
    ozd: BlockMatrix,
    owd: BlockMatrix,
}

struct Scratch {
    k1: Triple,
    k2: Triple,
    k3: Triple,
    k4: Triple,
    stage: Triple,
    work: Work,
}

impl Scratch {
    fn new(g: &Grading, q: i32) -> Self {
        let mq = g.neg_charge(q);
        Self {
            k1: Triple::new(g, q),
            k2: Triple::new(g, q),
            k3: Triple::new(g, q),
            k4: Triple::new(g, q),
            stage: Triple::new(g, q),
            work: Work {
                h: BlockMatrix::zeros(g, 0),
                hr: BlockMatrix::zeros(g, 0),
                acc: BlockMatrix::zeros(g, 0),
                k: BlockMatrix::zeros(g, 0),
                lq: BlockMatrix::zeros(g, q),
                lmq: BlockMatrix::zeros(g, mq),
                ozd: BlockMatrix::zeros(g, mq),
                owd: BlockMatrix::zeros(g, q),
            },
        }
    }
}
