//! Exact invariants of the super-operators and of the feedback law.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use proptest::prelude::*;
use qnd_feedback::controller::{default_gain, lyapunov_amplitude, lyapunov_trace};
use qnd_feedback::filter::{click_update, noclick_update, unread_interaction};
use qnd_feedback::fock::{
    apply_displacement, bch_quadratic, displacement, displacement_generator, relax_step, DensityMatrix, FockDim,
    RelaxationParams,
};
use qnd_feedback::measurement::{detection_probabilities, kraus_pair, project, AtomState, DephasingModel, KrausPair};
use qnd_feedback::truth::JumpModel;
use qnd_feedback::truth::RngStream;
use qnd_feedback::{compute_control, ControlParams, ImperfectionParams};

const N_MAX: usize = 9;
const SIZE: usize = N_MAX + 1;

fn dim() -> FockDim {
    FockDim::new(N_MAX).unwrap()
}

fn model() -> DephasingModel {
    DephasingModel::linear(PI / 7.0).unwrap()
}

/// `A Aᵀ / tr` for a random square `A`: a generic full-rank density matrix.
fn density() -> impl Strategy<Value = DensityMatrix> {
    prop::collection::vec(-1.0f64..1.0, SIZE * SIZE).prop_map(|v| {
        let a = DMatrix::from_vec(SIZE, SIZE, v);
        let m = &a * a.transpose();
        let tr = m.trace();
        DensityMatrix::new(m / tr).unwrap()
    })
}

/// Random state of rank at most `rank`, so that small eigenvalues occur.
fn low_rank_density(rank: usize) -> impl Strategy<Value = DensityMatrix> {
    prop::collection::vec(-1.0f64..1.0, SIZE * rank).prop_map(move |v| {
        let a = DMatrix::from_vec(SIZE, rank, v);
        let m = &a * a.transpose();
        let tr = m.trace();
        DensityMatrix::new(m / tr).unwrap()
    })
}

fn kraus() -> impl Strategy<Value = KrausPair> {
    (-PI..PI).prop_map(|phi| kraus_pair(phi, &model(), dim()).unwrap())
}

fn atom() -> impl Strategy<Value = AtomState> {
    prop_oneof![Just(AtomState::G), Just(AtomState::E)]
}

fn assert_valid(rho: &DensityMatrix) {
    let m = rho.matrix();
    assert!((m - m.transpose()).abs().max() <= 1e-12, "not symmetric");
    assert!((rho.trace() - 1.0).abs() <= 1e-10, "trace {}", rho.trace());
    assert!(rho.min_eigenvalue() >= -1e-8, "eigenvalue {}", rho.min_eigenvalue());
}

fn fock_state(n: usize) -> DensityMatrix {
    DensityMatrix::fock(n, dim()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn martingale_identity(rho in density(), k in kraus(), n_tag in 0usize..N_MAX) {
        let (pg, pe) = detection_probabilities(&rho, &k);
        prop_assume!(pg > 1e-9 && pe > 1e-9);
        let fg = project(&rho, &k, AtomState::G).unwrap().population(n_tag);
        let fe = project(&rho, &k, AtomState::E).unwrap().population(n_tag);
        prop_assert!((pg * fg + pe * fe - rho.population(n_tag)).abs() <= 1e-12);
    }

    #[test]
    fn super_operators_preserve_states(
        rho in low_rank_density(2),
        k in kraus(),
        s in atom(),
        alpha in -3.0f64..3.0,
        eta_a in 0.0f64..1.0,
        eta_d in 0.0f64..1.0,
        eta_f in 0.0f64..0.5,
    ) {
        assert_valid(&apply_displacement(&rho, alpha).unwrap());
        let (pg, pe) = detection_probabilities(&rho, &k);
        prop_assume!(pg > 1e-6 && pe > 1e-6);
        assert_valid(&project(&rho, &k, s).unwrap());
        assert_valid(&click_update(&rho, s, eta_f, &k).unwrap());
        let imp = ImperfectionParams { eta_a, eta_d, eta_f, delay: 0 };
        assert_valid(&noclick_update(&rho, &imp, &k).unwrap());
        assert_valid(&unread_interaction(&rho, eta_a, &k).unwrap());
        let relax = RelaxationParams::new(1.0 / 0.13, 0.05, 85e-6);
        assert_valid(&relax_step(&rho, relax).unwrap());
        let jumps = JumpModel::new(relax, dim()).unwrap();
        let mut rng = RngStream::new(3, 0);
        for _ in 0..5 {
            assert_valid(&jumps.step(&rho, &mut rng).0);
        }
    }

    #[test]
    fn displacement_is_orthogonal(alpha in -3.0f64..3.0) {
        let d = displacement(alpha, dim()).unwrap();
        let residual = (d.transpose() * &d - DMatrix::identity(SIZE, SIZE)).abs().max();
        prop_assert!(residual <= 1e-12, "{residual}");
    }

    #[test]
    fn displacements_compose(a in -1.5f64..1.5, b in -1.5f64..1.5) {
        let d = displacement(a, dim()).unwrap() * displacement(b, dim()).unwrap();
        prop_assert!((d - displacement(a + b, dim()).unwrap()).abs().max() <= 1e-12);
    }

    #[test]
    fn fock_states_are_measurement_fixed_points(
        n in 0usize..=N_MAX,
        k in kraus(),
        s in atom(),
        eta_f in 0.0f64..0.5,
    ) {
        let rho = fock_state(n);
        let (pg, pe) = detection_probabilities(&rho, &k);
        let p = if s == AtomState::G { pg } else { pe };
        if p > 1e-9 {
            prop_assert!(project(&rho, &k, s).unwrap().max_abs_diff(&rho) <= 1e-12);
        }
        if (1.0 - eta_f) * p + eta_f * (1.0 - p) > 1e-9 {
            prop_assert!(click_update(&rho, s, eta_f, &k).unwrap().max_abs_diff(&rho) <= 1e-12);
        }
        let imp = ImperfectionParams { eta_a: 0.6, eta_d: 0.8, eta_f, delay: 0 };
        prop_assert!(noclick_update(&rho, &imp, &k).unwrap().max_abs_diff(&rho) <= 1e-12);
        prop_assert!(unread_interaction(&rho, 0.6, &k).unwrap().max_abs_diff(&rho) <= 1e-12);
    }

    #[test]
    fn gain_identity(n_max in 2usize..14, pick in 0usize..64) {
        let n_tag = pick % (n_max - 1);
        let d = FockDim::new(n_max).unwrap();
        let x = displacement_generator(d);
        let tag = DensityMatrix::fock(n_tag, d).unwrap();
        let c = tag.matrix() * &x - &x * tag.matrix();
        let value = (&c * &c).trace();
        prop_assert!((value - (4 * n_tag + 2) as f64).abs() <= 1e-12, "{value}");
        prop_assert!((1.0 / default_gain(n_tag) - (4 * n_tag + 2) as f64).abs() <= 1e-12);
    }

    #[test]
    fn bch_error_is_cubic(rho in density()) {
        let constants: Vec<f64> = [0.01, 0.02, 0.04]
            .iter()
            .map(|&alpha| {
                let exact = apply_displacement(&rho, alpha).unwrap();
                let err = (exact.matrix() - bch_quadratic(&rho, alpha)).norm();
                err / (alpha * alpha * alpha)
            })
            .collect();
        let lo = constants.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = constants.iter().cloned().fold(0.0, f64::max);
        prop_assert!(lo > 0.0 && hi / lo <= 2.0, "{constants:?}");
    }

    #[test]
    fn bch_expansion_keeps_unit_trace(rho in density(), alpha in -0.5f64..0.5) {
        prop_assert!((bch_quadratic(&rho, alpha).trace() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn feedback_improves_target_population(
        sigma in density(),
        weight in 0.0f64..0.4,
        n_tag in 1usize..6,
    ) {
        let tag = fock_state(n_tag);
        let rho = DensityMatrix::new(tag.matrix() * (1.0 - weight) + sigma.matrix() * weight).unwrap();
        let params = ControlParams::new(n_tag, None, 0.1, 0.1);
        let control = compute_control(&rho, &params);
        let f0 = rho.population(n_tag);
        let f1 = apply_displacement(&rho, control.alpha).unwrap().population(n_tag);
        if control.alpha.abs() <= 0.05 {
            prop_assert!(f1 >= f0 - 1e-12, "F {f0} -> {f1} at alpha {}", control.alpha);
            if lyapunov_amplitude(&rho, n_tag, default_gain(n_tag)) != 0.0 {
                prop_assert!(f1 > f0, "F {f0} -> {f1} at alpha {}", control.alpha);
            }
        } else if f1 < f0 - 1e-12 {
            eprintln!("large-amplitude step lowered F: {f0} -> {f1} at alpha {}", control.alpha);
        }
    }

    #[test]
    fn default_gain_maximizes_quadratic_model(
        sigma in density(),
        n_tag in 0usize..8,
        scale in 1e-6f64..1e-5,
    ) {
        let tag = fock_state(n_tag);
        let rho = DensityMatrix::new(tag.matrix() * (1.0 - scale) + sigma.matrix() * scale).unwrap();
        let h = 0.01;
        let f = |alpha: f64| bch_quadratic(&rho, alpha)[(n_tag, n_tag)];
        let (fm, f0, fp) = (f(-h), f(0.0), f(h));
        let curvature = (fp - 2.0 * f0 + fm) / (h * h);
        let slope = (fp - fm) / (2.0 * h);
        let best = -slope / curvature;
        let law = lyapunov_amplitude(&rho, n_tag, default_gain(n_tag));
        prop_assert!((best - law).abs() <= 1e-9, "argmax {best} vs law {law}");
        prop_assert!((slope - lyapunov_trace(&rho, n_tag)).abs() <= 1e-12);
    }
}
