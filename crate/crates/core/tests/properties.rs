use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;

use qst_core::control::{free_piecewise, ideal_rect};
use qst_core::dynamics::{lindblad_rhs, nonmarkovian_rhs, BathConfig, EvolutionState, OzSource};
use qst_core::hamiltonian::{
    build_lindblad, commutator, hermiticity_error, max_abs, pauli_site, system_hamiltonian, ChainConfig, LindbladKind,
    OperatorMatrix, PauliAxis,
};
use qst_core::optimizer::{adam_update, optimize, Moments, OptimizerConfig};
use qst_core::propagator::{Model, Propagator, RunOptions};

fn total_z(n: usize) -> OperatorMatrix {
    (1..=n).fold(OperatorMatrix::zeros(1 << n, 1 << n), |acc, i| {
        acc + pauli_site(PauliAxis::Z, i, n).unwrap()
    })
}

fn complex_matrix(dim: usize) -> impl Strategy<Value = OperatorMatrix> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), dim * dim)
        .prop_map(move |v| DMatrix::from_iterator(dim, dim, v.into_iter().map(|(re, im)| Complex64::new(re, im))))
}

/// A random density matrix `A A^+ / Tr(A A^+)`.
fn density_matrix(dim: usize) -> impl Strategy<Value = OperatorMatrix> {
    complex_matrix(dim).prop_map(|a| {
        let rho = &a * a.adjoint();
        let tr = rho.trace();
        rho / tr
    })
}

fn kind() -> impl Strategy<Value = LindbladKind> {
    prop::sample::select(LindbladKind::ALL.to_vec())
}

fn axis() -> impl Strategy<Value = PauliAxis> {
    prop::sample::select(vec![PauliAxis::X, PauliAxis::Y, PauliAxis::Z, PauliAxis::Minus])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hamiltonian_is_hermitian_and_conserves_excitations(n in 2usize..=5, h_m in 0.05..2.0f64, s in 0.0..=1.0f64) {
        let cfg = ChainConfig::new(n, -1.0, h_m, PI).unwrap();
        let h = system_hamiltonian(s * PI, &cfg).unwrap();
        prop_assert!(hermiticity_error(&h) < 1e-12);
        prop_assert!(max_abs(&commutator(&h, &total_z(n))) < 1e-12);
    }

    #[test]
    fn distinct_sites_commute(n in 2usize..=5, a in axis(), b in axis(), i in 1usize..=5, j in 1usize..=5) {
        prop_assume!(i <= n && j <= n && i != j);
        let pa = pauli_site(a, i, n).unwrap();
        let pb = pauli_site(b, j, n).unwrap();
        prop_assert!(max_abs(&commutator(&pa, &pb)) < 1e-12);
    }

    #[test]
    fn master_equation_rhs_is_hermitian_and_traceless(
        rho in density_matrix(8),
        oz in complex_matrix(8),
        ow in complex_matrix(8),
        kind in kind(),
        coupling in 0.0..0.1f64,
        frequency in 0.5..50.0f64,
        temperature in 0.0..30.0f64,
        s in 0.0..=1.0f64,
        printed in any::<bool>(),
    ) {
        let cfg = ChainConfig::new(3, -1.0, 0.7, PI).unwrap();
        let h = system_hamiltonian(s * PI, &cfg).unwrap();
        let l = build_lindblad(kind, 3).unwrap();
        let bath = BathConfig {
            coupling,
            frequency,
            temperature,
            lindblad: kind,
            oz_source: if printed { OzSource::Printed } else { OzSource::CorrelationDerived },
            ..BathConfig::default()
        };
        let state = EvolutionState { t: 0.0, rho: rho.clone(), o_z: oz, o_w: ow };
        let d = nonmarkovian_rhs(&state, &h, &l, &bath).unwrap();
        prop_assert!(hermiticity_error(&d.rho) < 1e-12);
        prop_assert!(d.rho.trace().norm() < 1e-12);
        let dl = lindblad_rhs(&rho, &h, &l, &bath).unwrap();
        prop_assert!(hermiticity_error(&dl) < 1e-12);
        prop_assert!(dl.trace().norm() < 1e-12);
    }

    #[test]
    fn ideal_pulses_have_zero_area(strength in 0.1..50.0f64, m in 1usize..=10) {
        let tau = PI / (2 * m) as f64;
        let s = ideal_rect(strength, tau, PI).unwrap();
        prop_assert_eq!(s.integral_to(PI), 0.0);
        for (n, a) in s.amplitudes.iter().enumerate() {
            let expected = if n % 2 == 0 { strength } else { -strength };
            prop_assert_eq!(*a, expected);
        }
    }

    #[test]
    fn schedules_are_right_continuous(amps in prop::collection::vec(-30.0..30.0f64, 10)) {
        let s = free_piecewise(amps.clone(), PI / 10.0).unwrap();
        let cfg = ChainConfig::default();
        for (n, a) in amps.iter().enumerate() {
            let t = n as f64 * PI / 10.0;
            prop_assert_eq!(s.segment_at(t), n);
            prop_assert_eq!(s.value(t, &cfg).unwrap(), *a);
        }
        prop_assert_eq!(s.max_amplitude(), amps.iter().fold(0.0f64, |m, a| m.max(a.abs())));
    }

    #[test]
    fn adam_second_moment_stays_nonnegative(
        grads in prop::collection::vec(prop::collection::vec(-100.0..100.0f64, 4), 1..30),
    ) {
        let cfg = OptimizerConfig::default();
        let mut moments = Moments::zeros(4);
        let mut x = vec![1.0, -2.0, 3.0, -4.0];
        for (k, g) in grads.iter().enumerate() {
            x = adam_update(&mut moments, &x, g, k + 1, &cfg);
            prop_assert!(moments.v.iter().all(|&v| v >= 0.0));
            prop_assert!(x.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn first_adam_step_is_minus_alpha_sign(g in prop::collection::vec(prop_oneof![-1e3..-1.0f64, 1.0..1e3f64], 1..12)) {
        let cfg = OptimizerConfig::default();
        let x = vec![0.0; g.len()];
        let next = adam_update(&mut Moments::zeros(g.len()), &x, &g, 1, &cfg);
        for (xi, gi) in next.iter().zip(&g) {
            prop_assert!((xi + cfg.alpha * gi.signum()).abs() < 1e-6);
        }
        let still = adam_update(&mut Moments::zeros(g.len()), &x, &vec![0.0; g.len()], 1, &cfg);
        prop_assert_eq!(still, x);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn propagation_conserves_trace_and_hermiticity(
        n in 2usize..=3,
        kind in kind(),
        coupling in 0.0..0.05f64,
        frequency in 1.0..20.0f64,
        temperature in 0.0..30.0f64,
        strength in 0.0..20.0f64,
        markov in any::<bool>(),
    ) {
        let chain = ChainConfig::new(n, -1.0, 0.7, PI).unwrap();
        let bath = BathConfig { coupling, frequency, temperature, lindblad: kind, ..BathConfig::default() };
        let model = if markov { Model::Lindblad } else { Model::NonMarkovian };
        let p = Propagator::new(&chain, &bath, model, 1000).unwrap();
        let track = p.track(&ideal_rect(strength, PI / 10.0, PI).unwrap()).unwrap();
        let (points, out) = p.trace(&track, &RunOptions { sample_stride: Some(50), record_checkpoints: false });
        let out = out.unwrap();
        for q in &points {
            prop_assert!((q.trace - 1.0).abs() < 1e-6);
            prop_assert!(q.hermiticity < 1e-8);
            prop_assert!((0.0..=1.0 + 1e-9).contains(&q.fidelity));
        }
        prop_assert!((0.0..=1.0 + 1e-9).contains(&out.final_fidelity));
    }

    #[test]
    fn memory_operators_vanish_without_coupling(n in 2usize..=3, kind in kind(), frequency in 1.0..20.0f64) {
        let chain = ChainConfig::new(n, -1.0, 0.7, PI).unwrap();
        let bath = BathConfig { coupling: 0.0, frequency, temperature: 10.0, lindblad: kind, ..BathConfig::default() };
        let p = Propagator::new(&chain, &bath, Model::NonMarkovian, 200).unwrap();
        let out = p.run(&p.track(&ideal_rect(20.0, PI / 10.0, PI).unwrap()).unwrap(), &RunOptions::default()).unwrap();
        let state = p.unpack(&out.final_state);
        prop_assert_eq!(max_abs(&state.o_z), 0.0);
        prop_assert_eq!(max_abs(&state.o_w), 0.0);
    }

    #[test]
    fn best_fidelity_never_decreases(seed in any::<u64>(), lambda in 0.0..0.05f64) {
        let chain = ChainConfig::new(2, -1.0, 0.7, PI).unwrap();
        let bath = BathConfig { coupling: 0.01, frequency: 2.0, temperature: 10.0, ..BathConfig::default() };
        let p = Propagator::new(&chain, &bath, Model::NonMarkovian, 200).unwrap();
        let cfg = OptimizerConfig { k_max: 12, seed, lambda, ..OptimizerConfig::default() };
        let run = optimize(&ideal_rect(10.0, PI / 10.0, PI).unwrap(), &p, &cfg).unwrap();
        prop_assert!(run.log.windows(2).all(|w| w[1].best_fidelity >= w[0].best_fidelity));
        prop_assert!(run.moments.v.iter().all(|&v| v >= 0.0));
        prop_assert!(run.best_fidelity >= run.initial_fidelity);
        let again = optimize(&ideal_rect(10.0, PI / 10.0, PI).unwrap(), &p, &cfg).unwrap();
        prop_assert_eq!(run.log, again.log);
    }
}
