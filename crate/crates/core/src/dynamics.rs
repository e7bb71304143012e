//! Reduced dynamics of the chain: the non-Markovian master equation with its
//! two memory operators, the Markov-limit Lindblad equation, the closed-system
//! reference evolution, and the transfer fidelity.
//!
//! Everything here works on dense matrices in the original basis and is meant
//! as the readable reference. Long runs go through [`crate::propagator`], which
//! integrates the same equations in a symmetry-blocked basis.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{LindbladKind, LoweringConvention, OperatorMatrix};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Source term used in the `O_z` memory-operator equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OzSource {
    /// `Gamma*Tem*gamma/2 + i*Gamma*gamma/2`, i.e. `alpha_z(0)` from the
    /// Ornstein-Uhlenbeck kernel. Reduces to the Lindblad equation as
    /// `gamma -> infinity` up to a Lamb-shift-like term of order `Gamma/2`.
    #[default]
    CorrelationDerived,
    /// `Gamma*Tem*gamma/2 - i*Gamma*gamma^2/2`, as printed with the memory
    /// equations. Its imaginary part grows linearly with `gamma` after the
    /// memory decay is taken into account, so it has no Markov limit.
    Printed,
}

/// Bath parameters and system-bath coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BathConfig {
    /// Coupling strength `Gamma`.
    pub coupling: f64,
    /// Characteristic bath frequency `gamma`; the memory time is `1/gamma`.
    pub frequency: f64,
    /// Temperature `Tem` (k_B = 1).
    pub temperature: f64,
    pub lindblad: LindbladKind,
    #[serde(default)]
    pub lowering: LoweringConvention,
    #[serde(default)]
    pub oz_source: OzSource,
}

impl Default for BathConfig {
    fn default() -> Self {
        Self {
            coupling: 0.01,
            frequency: 20.0,
            temperature: 20.0,
            lindblad: LindbladKind::CollectiveLowering,
            lowering: LoweringConvention::Literal,
            oz_source: OzSource::CorrelationDerived,
        }
    }
}

impl BathConfig {
    pub fn closed() -> Self {
        Self {
            coupling: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.coupling >= 0.0 && self.coupling.is_finite()) {
            return Err(Error::InvalidConfig(format!("coupling must be >= 0, got {}", self.coupling)));
        }
        if !(self.frequency > 0.0 && self.frequency.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "bath frequency must be > 0, got {}",
                self.frequency
            )));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn is_closed(&self) -> bool {
        self.coupling == 0.0
    }

    /// Inhomogeneous coefficients `(c_z, c_w)` of the memory-operator equations.
    pub fn memory_sources(&self) -> (Complex64, Complex64) {
        let (g, w, tem) = (self.coupling, self.frequency, self.temperature);
        let real = g * tem * w / 2.0;
        let cz = match self.oz_source {
            OzSource::CorrelationDerived => Complex64::new(real, g * w / 2.0),
            OzSource::Printed => Complex64::new(real, -g * w * w / 2.0),
        };
        (cz, Complex64::new(real, 0.0))
    }

    /// Dissipator rate `Gamma*Tem/2` of the Markov-limit equation.
    pub fn markov_rate(&self) -> f64 {
        self.coupling * self.temperature / 2.0
    }
}

/// `Lambda(dt) = (gamma/2) exp(-gamma |dt|)`.
pub fn ou_kernel(dt: f64, gamma: f64) -> f64 {
    0.5 * gamma * (-gamma * dt.abs()).exp()
}

/// `(alpha_z, alpha_w)` for a time difference `dt = t - s`.
pub fn bath_correlation(dt: f64, bath: &BathConfig) -> (Complex64, Complex64) {
    let lambda = ou_kernel(dt, bath.frequency);
    let g = bath.coupling;
    (
        Complex64::new(g * bath.temperature * lambda, g * lambda),
        Complex64::new(g * bath.temperature * lambda, 0.0),
    )
}

/// Initial and target states of the transfer: `|10...0>` and `|0...01>`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVectors {
    pub initial: DVector<Complex64>,
    pub target: DVector<Complex64>,
    pub initial_index: usize,
    pub target_index: usize,
}

impl StateVectors {
    pub fn transfer(n_sites: usize) -> Self {
        let dim = 1usize << n_sites;
        let initial_index = 1usize << (n_sites - 1);
        let target_index = 1usize;
        let basis = |k: usize| {
            let mut v = DVector::from_element(dim, Complex64::new(0.0, 0.0));
            v[k] = Complex64::new(1.0, 0.0);
            v
        };
        Self {
            initial: basis(initial_index),
            target: basis(target_index),
            initial_index,
            target_index,
        }
    }

    pub fn dim(&self) -> usize {
        self.initial.len()
    }
}

/// Density matrix and memory operators at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionState {
    pub t: f64,
    pub rho: OperatorMatrix,
    pub o_z: OperatorMatrix,
    pub o_w: OperatorMatrix,
}

impl EvolutionState {
    /// `rho = |psi0><psi0|` with both memory operators zero.
    pub fn initial(states: &StateVectors) -> Self {
        let dim = states.dim();
        Self {
            t: 0.0,
            rho: &states.initial * states.initial.adjoint(),
            o_z: OperatorMatrix::zeros(dim, dim),
            o_w: OperatorMatrix::zeros(dim, dim),
        }
    }

    pub fn trace(&self) -> f64 {
        self.rho.trace().re
    }
}

/// Time derivative of an [`EvolutionState`].
#[derive(Debug, Clone, PartialEq)]
pub struct Derivative {
    pub rho: OperatorMatrix,
    pub o_z: OperatorMatrix,
    pub o_w: OperatorMatrix,
}

fn check_dims(expected: usize, mats: &[&OperatorMatrix]) -> Result<()> {
    for m in mats {
        if m.nrows() != expected || m.ncols() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: m.nrows().max(m.ncols()),
            });
        }
    }
    Ok(())
}

/// Right-hand side of the coupled master equation and memory-operator equations.
///
/// ```text
/// drho = -i[H,rho] + [L, rho Oz^+] - [L^+, Oz rho] + [L^+, rho Ow^+] - [L, Ow rho]
/// dOz  = c_z L   - gamma Oz + [-iH - (L^+ Oz + L Ow), Oz]
/// dOw  = c_w L^+ - gamma Ow + [-iH - (L^+ Oz + L Ow), Ow]
/// ```
pub fn nonmarkovian_rhs(
    state: &EvolutionState,
    h: &OperatorMatrix,
    l: &OperatorMatrix,
    bath: &BathConfig,
) -> Result<Derivative> {
    let dim = state.rho.nrows();
    check_dims(dim, &[&state.rho, &state.o_z, &state.o_w, h, l])?;
    let (rho, oz, ow) = (&state.rho, &state.o_z, &state.o_w);
    let ld = l.adjoint();

    let rho_ozd = rho * oz.adjoint();
    let oz_rho = oz * rho;
    let rho_owd = rho * ow.adjoint();
    let ow_rho = ow * rho;
    let drho = (h * rho - rho * h) * (-I)
        + (l * &rho_ozd - &rho_ozd * l)
        - (&ld * &oz_rho - &oz_rho * &ld)
        + (&ld * &rho_owd - &rho_owd * &ld)
        - (l * &ow_rho - &ow_rho * l);

    let k = h * (-I) - (&ld * oz + l * ow);
    let (cz, cw) = bath.memory_sources();
    let gamma = Complex64::new(bath.frequency, 0.0);
    let d_oz = l * cz - oz * gamma + (&k * oz - oz * &k);
    let d_ow = &ld * cw - ow * gamma + (&k * ow - ow * &k);
    Ok(Derivative {
        rho: drho,
        o_z: d_oz,
        o_w: d_ow,
    })
}

/// Markov-limit Lindblad right-hand side with rate `Gamma*Tem/2` on both the
/// `L` and `L^+` dissipators.
pub fn lindblad_rhs(
    rho: &OperatorMatrix,
    h: &OperatorMatrix,
    l: &OperatorMatrix,
    bath: &BathConfig,
) -> Result<OperatorMatrix> {
    check_dims(rho.nrows(), &[rho, h, l])?;
    let ld = l.adjoint();
    let rate = Complex64::new(bath.markov_rate(), 0.0);
    let two = Complex64::new(2.0, 0.0);
    let ldl = &ld * l;
    let lld = l * &ld;
    let dissipator = (l * rho * &ld) * two - &ldl * rho - rho * &ldl + (&ld * rho * l) * two
        - &lld * rho
        - rho * &lld;
    Ok((h * rho - rho * h) * (-I) + dissipator * rate)
}

fn check_switches(t: f64, dt: f64, switch_times: &[f64]) -> Result<()> {
    let slack = 1e-9 * dt.max(1e-300);
    for &s in switch_times {
        if s > t + slack && s < t + dt - slack {
            return Err(Error::MisalignedStep {
                switch: s,
                start: t,
                end: t + dt,
            });
        }
    }
    Ok(())
}

/// One RK4 step of the coupled non-Markovian system.
///
/// `h_of_t` is evaluated at `t`, `t + dt/2` and `t + dt`; at a pulse switch it
/// must return the value belonging to this step (the left limit at `t + dt`).
/// The trace is not renormalized.
pub fn step_nonmarkovian(
    state: &EvolutionState,
    dt: f64,
    h_of_t: impl Fn(f64) -> OperatorMatrix,
    l: &OperatorMatrix,
    bath: &BathConfig,
    switch_times: &[f64],
) -> Result<EvolutionState> {
    check_switches(state.t, dt, switch_times)?;
    if dt == 0.0 {
        return Ok(state.clone());
    }
    let t = state.t;
    let shifted = |base: &EvolutionState, k: &Derivative, h: f64| EvolutionState {
        t: base.t + h,
        rho: &base.rho + &k.rho * Complex64::new(h, 0.0),
        o_z: &base.o_z + &k.o_z * Complex64::new(h, 0.0),
        o_w: &base.o_w + &k.o_w * Complex64::new(h, 0.0),
    };
    let h_mid = h_of_t(t + dt / 2.0);
    let k1 = nonmarkovian_rhs(state, &h_of_t(t), l, bath)?;
    let k2 = nonmarkovian_rhs(&shifted(state, &k1, dt / 2.0), &h_mid, l, bath)?;
    let k3 = nonmarkovian_rhs(&shifted(state, &k2, dt / 2.0), &h_mid, l, bath)?;
    let k4 = nonmarkovian_rhs(&shifted(state, &k3, dt), &h_of_t(t + dt), l, bath)?;
    let w = Complex64::new(dt / 6.0, 0.0);
    let two = Complex64::new(2.0, 0.0);
    Ok(EvolutionState {
        t: t + dt,
        rho: &state.rho + (&k1.rho + &k2.rho * two + &k3.rho * two + &k4.rho) * w,
        o_z: &state.o_z + (&k1.o_z + &k2.o_z * two + &k3.o_z * two + &k4.o_z) * w,
        o_w: &state.o_w + (&k1.o_w + &k2.o_w * two + &k3.o_w * two + &k4.o_w) * w,
    })
}

/// One RK4 step of the Markov-limit Lindblad equation; memory operators are
/// carried through unchanged.
pub fn step_lindblad(
    state: &EvolutionState,
    dt: f64,
    h_of_t: impl Fn(f64) -> OperatorMatrix,
    l: &OperatorMatrix,
    bath: &BathConfig,
    switch_times: &[f64],
) -> Result<EvolutionState> {
    check_switches(state.t, dt, switch_times)?;
    if dt == 0.0 {
        return Ok(state.clone());
    }
    let t = state.t;
    let rho = &state.rho;
    let c = |x: f64| Complex64::new(x, 0.0);
    let h_mid = h_of_t(t + dt / 2.0);
    let k1 = lindblad_rhs(rho, &h_of_t(t), l, bath)?;
    let k2 = lindblad_rhs(&(rho + &k1 * c(dt / 2.0)), &h_mid, l, bath)?;
    let k3 = lindblad_rhs(&(rho + &k2 * c(dt / 2.0)), &h_mid, l, bath)?;
    let k4 = lindblad_rhs(&(rho + &k3 * c(dt)), &h_of_t(t + dt), l, bath)?;
    Ok(EvolutionState {
        t: t + dt,
        rho: rho + (k1 + k2 * c(2.0) + k3 * c(2.0) + k4) * c(dt / 6.0),
        o_z: state.o_z.clone(),
        o_w: state.o_w.clone(),
    })
}

/// Pure or mixed state for the closed-system reference evolution.
#[derive(Debug, Clone, PartialEq)]
pub enum ClosedState {
    Pure(DVector<Complex64>),
    Mixed(OperatorMatrix),
}

impl ClosedState {
    pub fn density_matrix(&self) -> OperatorMatrix {
        match self {
            ClosedState::Pure(psi) => psi * psi.adjoint(),
            ClosedState::Mixed(rho) => rho.clone(),
        }
    }

    pub fn norm(&self) -> f64 {
        match self {
            ClosedState::Pure(psi) => psi.norm(),
            ClosedState::Mixed(rho) => rho.trace().re,
        }
    }
}

/// Unitary reference evolution as an ordered product of matrix exponentials.
///
/// Each of the `n_steps` sub-intervals uses the fourth-order Magnus propagator
/// `exp(dt/2 (A1 + A2) + sqrt(3) dt^2/12 [A2, A1])` with `A = -iH` sampled at
/// the two Gauss points, so `h_of_t` is only evaluated strictly inside a
/// sub-interval. For constant `H` this is exactly `exp(-iH dt)` per step.
pub fn closed_propagate(
    initial: &ClosedState,
    total_time: f64,
    h_of_t: impl Fn(f64) -> OperatorMatrix,
    n_steps: usize,
) -> Result<ClosedState> {
    if n_steps == 0 {
        return Err(Error::InvalidConfig("closed propagation needs at least one step".into()));
    }
    let dt = total_time / n_steps as f64;
    let offset = 3f64.sqrt() / 6.0;
    let mut state = initial.clone();
    for k in 0..n_steps {
        let t = k as f64 * dt;
        let a1 = h_of_t(t + (0.5 - offset) * dt) * (-I);
        let a2 = h_of_t(t + (0.5 + offset) * dt) * (-I);
        let omega = (&a1 + &a2) * Complex64::new(dt / 2.0, 0.0)
            + (&a2 * &a1 - &a1 * &a2) * Complex64::new(3f64.sqrt() * dt * dt / 12.0, 0.0);
        let u = omega.exp();
        state = match state {
            ClosedState::Pure(psi) => ClosedState::Pure(&u * psi),
            ClosedState::Mixed(rho) => ClosedState::Mixed(&u * rho * u.adjoint()),
        };
    }
    Ok(state)
}

/// Below this the target population signals a corrupted density matrix.
pub const POPULATION_FLOOR: f64 = -1e-10;

/// `F = sqrt(<target| rho |target>)`.
pub fn fidelity(rho: &OperatorMatrix, target: &StateVectors) -> Result<f64> {
    let pop = (target.target.adjoint() * rho * &target.target)[(0, 0)].re;
    fidelity_from_population(pop)
}

pub fn fidelity_from_population(pop: f64) -> Result<f64> {
    if pop.is_nan() || pop < POPULATION_FLOOR {
        return Err(Error::CorruptedState(pop));
    }
    Ok(pop.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{build_lindblad, hermiticity_error, max_abs, system_hamiltonian, ChainConfig};
    use std::f64::consts::PI;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    /// Small deterministic generator so the tests do not depend on `rand`.
    struct Lcg(u64);
    impl Lcg {
        fn next(&mut self) -> f64 {
            self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((self.0 >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        }
        fn matrix(&mut self, d: usize) -> OperatorMatrix {
            OperatorMatrix::from_fn(d, d, |_, _| Complex64::new(self.next(), self.next()))
        }
        fn density(&mut self, d: usize) -> OperatorMatrix {
            let a = self.matrix(d);
            let rho = &a * a.adjoint();
            let tr = rho.trace();
            rho / tr
        }
    }

    #[test]
    fn correlation_examples() {
        let bath = BathConfig {
            coupling: 0.04,
            frequency: 14.0,
            temperature: 10.0,
            ..BathConfig::default()
        };
        let (az, aw) = bath_correlation(0.0, &bath);
        assert!((aw.re - 2.8).abs() < 1e-12 && aw.im == 0.0);
        assert!((az.re - 2.8).abs() < 1e-12 && (az.im - 0.28).abs() < 1e-12);
        let (z0, w0) = bath_correlation(0.3, &BathConfig::closed());
        assert_eq!((z0, w0), (c(0.0), c(0.0)));
    }

    #[test]
    fn correlation_decays_at_bath_frequency() {
        let bath = BathConfig {
            coupling: 0.04,
            frequency: 14.0,
            temperature: 10.0,
            ..BathConfig::default()
        };
        let h = 1e-6;
        for dt in [0.01, 0.1, 0.5] {
            let (zp, wp) = bath_correlation(dt + h, &bath);
            let (zm, wm) = bath_correlation(dt - h, &bath);
            let (z, w) = bath_correlation(dt, &bath);
            let dz = (zp - zm) / (2.0 * h);
            let dw = (wp - wm) / (2.0 * h);
            assert!((dz + z * bath.frequency).norm() / z.norm() < 1e-6);
            assert!((dw + w * bath.frequency).norm() / w.norm() < 1e-6);
        }
    }

    #[test]
    fn memory_sources_per_variant() {
        let mut bath = BathConfig {
            coupling: 0.1,
            frequency: 4.0,
            temperature: 3.0,
            ..BathConfig::default()
        };
        let (cz, cw) = bath.memory_sources();
        assert!((cz - Complex64::new(0.6, 0.2)).norm() < 1e-15);
        assert!((cw - c(0.6)).norm() < 1e-15);
        bath.oz_source = OzSource::Printed;
        let (cz, _) = bath.memory_sources();
        assert!((cz - Complex64::new(0.6, -0.8)).norm() < 1e-15);
        // The correlation-derived source is the zero-lag bath correlation.
        bath.oz_source = OzSource::CorrelationDerived;
        let (az0, _) = bath_correlation(0.0, &bath);
        assert!((bath.memory_sources().0 - az0).norm() < 1e-15);
    }

    #[test]
    fn closed_rhs_is_von_neumann() {
        let mut rng = Lcg(11);
        let cfg = ChainConfig::new(3, -1.0, 0.5, PI).unwrap();
        let h = system_hamiltonian(0.4, &cfg).unwrap();
        let l = build_lindblad(LindbladKind::CollectiveLowering, 3).unwrap();
        let rho = rng.density(8);
        let state = EvolutionState {
            t: 0.4,
            rho: rho.clone(),
            o_z: OperatorMatrix::zeros(8, 8),
            o_w: OperatorMatrix::zeros(8, 8),
        };
        let d = nonmarkovian_rhs(&state, &h, &l, &BathConfig::closed()).unwrap();
        assert!(max_abs(&(d.rho - (&h * &rho - &rho * &h) * (-I))) < 1e-15);
        assert_eq!(max_abs(&d.o_z), 0.0);
        assert_eq!(max_abs(&d.o_w), 0.0);
    }

    #[test]
    fn rhs_hermitian_and_traceless() {
        let mut rng = Lcg(5);
        let cfg = ChainConfig::new(3, -1.0, 0.5, PI).unwrap();
        let bath = BathConfig {
            coupling: 0.05,
            frequency: 3.0,
            temperature: 7.0,
            ..BathConfig::default()
        };
        for kind in LindbladKind::ALL {
            let l = build_lindblad(kind, 3).unwrap();
            for _ in 0..5 {
                let state = EvolutionState {
                    t: 1.0,
                    rho: rng.density(8),
                    o_z: rng.matrix(8),
                    o_w: rng.matrix(8),
                };
                let h = system_hamiltonian(1.0, &cfg).unwrap();
                let d = nonmarkovian_rhs(&state, &h, &l, &bath).unwrap();
                assert!(hermiticity_error(&d.rho) < 1e-12);
                assert!(d.rho.trace().norm() < 1e-12);
                let dl = lindblad_rhs(&state.rho, &h, &l, &bath).unwrap();
                assert!(hermiticity_error(&dl) < 1e-12);
                assert!(dl.trace().norm() < 1e-12);
            }
        }
    }

    #[test]
    fn rhs_rejects_dimension_mismatch() {
        let state = EvolutionState::initial(&StateVectors::transfer(2));
        let h = OperatorMatrix::zeros(8, 8);
        let l = OperatorMatrix::zeros(4, 4);
        assert!(matches!(
            nonmarkovian_rhs(&state, &h, &l, &BathConfig::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_length_step_is_identity() {
        let state = EvolutionState::initial(&StateVectors::transfer(2));
        let cfg = ChainConfig::new(2, -1.0, 0.5, PI).unwrap();
        let l = build_lindblad(LindbladKind::CollectiveLowering, 2).unwrap();
        let h = |t: f64| system_hamiltonian(t, &cfg).unwrap();
        let next = step_nonmarkovian(&state, 0.0, h, &l, &BathConfig::default(), &[]).unwrap();
        assert_eq!(next, state);
    }

    #[test]
    fn misaligned_step_is_rejected() {
        let state = EvolutionState::initial(&StateVectors::transfer(2));
        let cfg = ChainConfig::new(2, -1.0, 0.5, PI).unwrap();
        let l = build_lindblad(LindbladKind::CollectiveLowering, 2).unwrap();
        let h = |t: f64| system_hamiltonian(t, &cfg).unwrap();
        let err = step_nonmarkovian(&state, 0.2, h, &l, &BathConfig::default(), &[0.1]);
        assert!(matches!(err, Err(Error::MisalignedStep { .. })));
        // switches on the step boundary are fine
        assert!(step_lindblad(&state, 0.1, h, &l, &BathConfig::default(), &[0.0, 0.1]).is_ok());
    }

    #[test]
    fn lindblad_pure_dephasing() {
        // H = 0, L = sigma_z on one site, rho = |+><+|: coherence decays as exp(-4 Gamma Tem t).
        let l = build_lindblad(LindbladKind::CollectiveZ, 1).unwrap();
        let bath = BathConfig {
            coupling: 0.05,
            frequency: 1.0,
            temperature: 2.0,
            lindblad: LindbladKind::CollectiveZ,
            ..BathConfig::default()
        };
        let mut state = EvolutionState {
            t: 0.0,
            rho: OperatorMatrix::from_element(2, 2, c(0.5)),
            o_z: OperatorMatrix::zeros(2, 2),
            o_w: OperatorMatrix::zeros(2, 2),
        };
        let zero = OperatorMatrix::zeros(2, 2);
        let dt = 1e-3;
        for _ in 0..2000 {
            state = step_lindblad(&state, dt, |_| zero.clone(), &l, &bath, &[]).unwrap();
        }
        let expected = 0.5 * (-4.0 * bath.coupling * bath.temperature * state.t).exp();
        assert!((state.rho[(0, 1)].re - expected).abs() < 1e-10);
        assert!((state.trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn magnus_oracle_exact_for_constant_hamiltonian() {
        let cfg = ChainConfig::new(3, -1.0, 0.6, 1.0).unwrap();
        let h = system_hamiltonian(0.3, &cfg).unwrap();
        let psi0 = ClosedState::Pure(StateVectors::transfer(3).initial);
        let stepped = closed_propagate(&psi0, 1.7, |_| h.clone(), 37).unwrap();
        let u = (&h * Complex64::new(0.0, -1.7)).exp();
        let ClosedState::Pure(psi) = stepped else { unreachable!() };
        let ClosedState::Pure(p0) = psi0 else { unreachable!() };
        assert!((psi.clone() - u * p0).camax() < 1e-10);
        assert!((psi.norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn fidelity_examples() {
        let sv = StateVectors::transfer(5);
        let target = &sv.target * sv.target.adjoint();
        assert!((fidelity(&target, &sv).unwrap() - 1.0).abs() < 1e-15);
        let mixed = OperatorMatrix::identity(32, 32) / c(32.0);
        assert!((fidelity(&mixed, &sv).unwrap() - (1.0f64 / 32.0).sqrt()).abs() < 1e-15);
        let initial = &sv.initial * sv.initial.adjoint();
        assert_eq!(fidelity(&initial, &sv).unwrap(), 0.0);
        let mut slightly_negative = OperatorMatrix::zeros(32, 32);
        slightly_negative[(1, 1)] = c(-1e-12);
        assert_eq!(fidelity(&slightly_negative, &sv).unwrap(), 0.0);
        slightly_negative[(1, 1)] = c(-1e-6);
        assert!(matches!(fidelity(&slightly_negative, &sv), Err(Error::CorruptedState(_))));
    }

    #[test]
    fn transfer_states() {
        let sv = StateVectors::transfer(5);
        assert_eq!(sv.initial_index, 0b10000);
        assert_eq!(sv.target_index, 0b00001);
        assert!((sv.initial.norm() - 1.0).abs() < 1e-15);
        assert_eq!((sv.initial.adjoint() * &sv.target)[(0, 0)], c(0.0));
    }
}
