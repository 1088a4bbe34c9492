use std::f64::consts::FRAC_PI_4;

use phonon_forge::dynamics::{build_liouvillian, unvectorize, vectorize, SteadyOptions};
use phonon_forge::experiments::{joint_steady_state, mechanical_steady_state, run_fig2a, SweepOptions};
use phonon_forge::fock::{displacement, embed, number, partial_trace};
use phonon_forge::measures::{mean_occupation, negativity, purity, rotate_to_uncoupled, trace_distance};
use phonon_forge::model::{
    build_dissipators, build_effective_hamiltonian, calibrate, chi_operator, initial_state, MechanicalState,
    ModelInputs,
};
use phonon_forge::{c64, DensityMatrix, ModeLayout, Operator};
use proptest::prelude::*;

fn amplitudes(n: usize) -> impl Strategy<Value = Vec<c64>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), n)
        .prop_filter("non-zero", |v| v.iter().any(|(a, b)| a.abs() + b.abs() > 1e-3))
        .prop_map(|v| v.into_iter().map(|(a, b)| c64::new(a, b)).collect())
}

/// Mixture `w |psi1><psi1| + (1-w) |psi2><psi2|`.
fn mixed(layout: &ModeLayout, a: &[c64], b: &[c64], w: f64) -> DensityMatrix {
    let p1 = DensityMatrix::from_pure(layout, a).unwrap();
    let p2 = DensityMatrix::from_pure(layout, b).unwrap();
    DensityMatrix::new(&p1.scale_real(w) + &p2.scale_real(1.0 - w)).unwrap()
}

fn phase(dim: usize, phi: f64) -> Operator {
    let layout = ModeLayout::single("m", dim).unwrap();
    Operator::from_fn(&layout, |i, j| {
        if i == j {
            c64::from_polar(1.0, phi * i as f64)
        } else {
            c64::new(0.0, 0.0)
        }
    })
}

const D: usize = 3;

fn two_modes(l1: &str, l2: &str) -> ModeLayout {
    ModeLayout::new([(l1, D), (l2, D)]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn negativity_is_invariant_under_local_unitaries(
        a in amplitudes(D * D),
        b in amplitudes(D * D),
        w in 0.0..1.0f64,
        alpha in (-0.5..0.5f64, -0.5..0.5f64),
        phi in -3.0..3.0f64,
    ) {
        let layout = two_modes("x", "y");
        let rho = mixed(&layout, &a, &b, w);
        let u1 = displacement(c64::new(alpha.0, alpha.1), D).unwrap();
        let u = u1.kron(&phase(D, phi)).unwrap().with_layout(layout.clone()).unwrap();
        prop_assert!(u.unitarity_defect() < 1e-12);
        let moved = rho.transform(&u);
        prop_assert!((negativity(&moved).unwrap() - negativity(&rho).unwrap()).abs() < 1e-9);
        prop_assert!((purity(&moved) - purity(&rho)).abs() < 1e-12);
    }

    #[test]
    fn rotation_preserves_purity_and_total_number(
        a in amplitudes(D * D),
        b in amplitudes(D * D),
        w in 0.0..1.0f64,
        theta in 0.0..std::f64::consts::FRAC_PI_2,
    ) {
        let rho = mixed(&two_modes("B1", "B2"), &a, &b, w);
        let rot = rotate_to_uncoupled(&rho, theta).unwrap();
        prop_assert!((rot.trace().re - 1.0).abs() < 1e-12);
        prop_assert!((purity(&rot) - purity(&rho)).abs() < 1e-10);
        let total = |r: &DensityMatrix, l: [&str; 2]| {
            mean_occupation(&partial_trace(r, &[l[0]]).unwrap())
                + mean_occupation(&partial_trace(r, &[l[1]]).unwrap())
        };
        prop_assert!((total(&rot, ["b1", "b2"]) - total(&rho, ["B1", "B2"])).abs() < 1e-10);
    }

    #[test]
    fn partial_trace_of_product_recovers_factors(
        a in amplitudes(D),
        b in amplitudes(2),
        c in amplitudes(D),
        w in 0.0..1.0f64,
    ) {
        let x = mixed(&ModeLayout::single("x", D).unwrap(), &a, &c, w);
        let y = DensityMatrix::from_pure(&ModeLayout::single("y", 2).unwrap(), &b).unwrap();
        let xy = x.tensor(&y).unwrap();
        prop_assert!(partial_trace(&xy, &["x"]).unwrap().max_abs_diff(&x) < 1e-12);
        prop_assert!(partial_trace(&xy, &["y"]).unwrap().max_abs_diff(&y) < 1e-12);
    }

    #[test]
    fn vectorization_round_trips(a in amplitudes(D * D), b in amplitudes(D * D), w in 0.0..1.0f64) {
        let layout = two_modes("x", "y");
        let rho = mixed(&layout, &a, &b, w);
        let back = unvectorize(&vectorize(&rho), &layout).unwrap();
        prop_assert_eq!(back.max_abs_diff(&rho), 0.0);
    }

    #[test]
    fn generator_preserves_trace_and_hermiticity(
        m in 1usize..5,
        gamma_ratio in 0.0..1e-2f64,
        nbar in 0.0..1.0f64,
        a in amplitudes(2 * 8),
        b in amplitudes(2 * 8),
        w in 0.0..1.0f64,
    ) {
        let p = calibrate(&ModelInputs {
            targets: [m, m],
            gamma: [gamma_ratio * 1e-3; 2],
            nbar: [nbar; 2],
            d_m: Some(8),
            ..Default::default()
        })
        .unwrap();
        let layout = p.cell_layout(0);
        let h = build_effective_hamiltonian(&p, &layout).unwrap();
        let l = build_liouvillian(&h, &build_dissipators(&p, &layout).unwrap()).unwrap();
        prop_assert!(l.trace_defect() < 1e-15);
        let rho = mixed(&layout, &a, &b, w);
        let drho = unvectorize(&l.apply(&vectorize(&rho)), &layout).unwrap();
        prop_assert!(drho.trace().norm() < 1e-15);
        prop_assert!(drho.hermiticity_defect() < 1e-15);
    }

    #[test]
    fn target_is_dark_and_excitation_difference_conserved(m in 1usize..=10) {
        let p = calibrate(&ModelInputs { targets: [m, m], ..Default::default() }).unwrap();
        let chi = chi_operator(p.eta[0], p.omega_drive[0], p.d_m).unwrap();
        prop_assert!(chi.get(m, m).norm() < 1e-12);
        for k in 0..m {
            prop_assert!(chi.get(k, k).norm() > 1e-12);
        }
        let layout = p.cell_layout(0);
        let h = build_effective_hamiltonian(&p, &layout).unwrap();
        let dark = initial_state(&p, &layout, &[MechanicalState::Fock(m)], false).unwrap();
        prop_assert!((&h * dark.as_operator()).max_abs() < 1e-12);
        let n_a = embed(&number(p.d_c).unwrap(), &layout, "a1").unwrap();
        let n_b = embed(&number(p.d_m).unwrap(), &layout, "B1").unwrap();
        prop_assert!(h.commutator(&(&n_a - &n_b)).max_abs() < 1e-12);
    }
}

#[test]
fn local_phase_keeps_bell_pair_negativity() {
    let layout = two_modes("x", "y");
    let mut amps = vec![c64::new(0.0, 0.0); D * D];
    amps[0] = c64::new(1.0, 0.0);
    amps[D + 1] = c64::new(1.0, 0.0);
    let bell = DensityMatrix::from_pure(&layout, &amps).unwrap();
    assert!((negativity(&bell).unwrap() - 0.5).abs() < 1e-12);
    let twisted = bell.transform(&embed(&phase(D, 1.0), &layout, "y").unwrap());
    assert!((negativity(&twisted).unwrap() - 0.5).abs() < 1e-12);
    assert!(twisted.max_abs_diff(&bell) > 0.1);
}

#[test]
fn individual_reservoirs_factorise() {
    for (targets, gamma) in [([1, 1], 0.0), ([1, 2], 1e-8), ([2, 1], 1e-6)] {
        let p = calibrate(&ModelInputs {
            targets,
            gamma: [gamma; 2],
            nbar: [0.1; 2],
            ..Default::default()
        })
        .unwrap();
        let opts = SteadyOptions::for_kappa(1e-3);
        let fast = mechanical_steady_state(&p, &opts).unwrap();
        let joint = joint_steady_state(&p, &opts).unwrap();
        let d = trace_distance(&fast.mech, &joint.mech).unwrap();
        assert!(d < 1e-8, "targets {targets:?}, gamma {gamma}: trace distance {d:e}");
    }
}

#[test]
fn presets_are_deterministic() {
    let a = run_fig2a(2, FRAC_PI_4, &SweepOptions::default()).unwrap();
    let b = run_fig2a(2, FRAC_PI_4, &SweepOptions::default()).unwrap();
    assert_eq!(a.to_csv_string(), b.to_csv_string());
    let ta = a.floats("N_inf").unwrap();
    let tb = b.floats("N_inf").unwrap();
    assert!(ta.iter().zip(&tb).all(|(x, y)| (x - y).abs() <= 1e-8));
}
