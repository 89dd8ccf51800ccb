use proptest::prelude::*;

use thermaleq::bath::{bath_spectrum, density_of_states, gibbs_weights_for, BathSpec, Ensemble};
use thermaleq::dynamics::{
    default_degeneracy_tolerance, degeneracy_classes, diagonal_ensemble, eigendecompose, evolve,
    f_weights, initial_composite_state,
};
use thermaleq::hilbert::{
    build_hamiltonian, coupling_matrix, hermitian_operator_norm, hermiticity_deviation, partial_trace_bath,
    product_index, split_index, CouplingSpec, CouplingStructure, DensityMatrix, Space, SystemSpec,
    DEFAULT_MAX_DIMENSION,
};
use thermaleq::laplace::{
    denominator, effective_beta, gibbs_p0, partition_value, pole, residue, rhs_function, NormalizedPartition,
    PartitionModel,
};
use thermaleq::{oracles, Complex64};

fn spectrum_of(m: &thermaleq::CMatrix) -> Vec<f64> {
    let mut e: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    e.sort_by(f64::total_cmp);
    e
}

fn instance(n_levels: usize, n_bath: usize, lambda: f64, seed: u64) -> thermaleq::hilbert::CompositeHamiltonian {
    let sys = SystemSpec::ladder(n_levels, 1.0).unwrap();
    let bath = bath_spectrum(&BathSpec::random_matrix(n_bath, 2.0, Ensemble::Gue, seed)).unwrap();
    let coupling = CouplingSpec { strength: lambda, structure: CouplingStructure::RandomHermitian, seed };
    build_hamiltonian(&sys, bath.energies(), &coupling, DEFAULT_MAX_DIMENSION).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(48) })]

    #[test]
    fn product_index_is_a_bijection(n in 2usize..5, nb in 1usize..9) {
        let mut seen = vec![false; n * nb];
        for i in 0..n {
            for j in 1..=nb {
                let p = product_index(i, j, n, nb).unwrap();
                prop_assert!(!seen[p]);
                seen[p] = true;
                prop_assert_eq!(split_index(p, n, nb).unwrap(), (i, j));
            }
        }
        prop_assert!(product_index(n, 1, n, nb).is_err());
        prop_assert!(product_index(0, 0, n, nb).is_err());
        prop_assert!(product_index(0, nb + 1, n, nb).is_err());
    }

    #[test]
    fn partial_trace_is_linear_and_trace_preserving(
        n in 2usize..4, nb in 1usize..6, s1 in any::<u64>(), s2 in any::<u64>(), a in 0.0f64..1.0,
    ) {
        let d = n * nb;
        let r1 = oracles::random_density_matrix(d, &oracles::random_probabilities(d, s1), s1 ^ 1);
        let r2 = oracles::random_density_matrix(d, &oracles::random_probabilities(d, s2), s2 ^ 2);
        let mix = r1.map(|z| z * a) + r2.map(|z| z * (1.0 - a));
        let pt = |m: &thermaleq::CMatrix| {
            partial_trace_bath(&DensityMatrix::new(Space::Composite, m.clone()).unwrap(), n, nb).unwrap().into_matrix()
        };
        let lhs = pt(&mix);
        let rhs = pt(&r1).map(|z| z * a) + pt(&r2).map(|z| z * (1.0 - a));
        prop_assert!(thermaleq::hilbert::max_abs_difference(&lhs, &rhs) <= 1e-12);
        prop_assert!((lhs.trace() - mix.trace()).norm() <= 1e-12);
    }

    #[test]
    fn hamiltonians_are_deterministic_hermitian_with_unit_coupling(
        n in 2usize..4, nb in 1usize..8, seed in any::<u64>(), flip in any::<bool>(), lambda in 0.0f64..3.0,
    ) {
        let structure = if flip { CouplingStructure::SystemFlip } else { CouplingStructure::RandomHermitian };
        let v = coupling_matrix(n, nb, structure, seed).unwrap();
        prop_assert!(hermiticity_deviation(&v) == 0.0);
        prop_assert!((hermitian_operator_norm(&v) - 1.0).abs() <= 1e-12);
        let sys = SystemSpec::ladder(n, 0.7).unwrap();
        let bath: Vec<f64> = (0..nb).map(|j| j as f64 * 0.3).collect();
        let spec = CouplingSpec { strength: lambda, structure, seed };
        let h1 = build_hamiltonian(&sys, &bath, &spec, DEFAULT_MAX_DIMENSION).unwrap();
        let h2 = build_hamiltonian(&sys, &bath, &spec, DEFAULT_MAX_DIMENSION).unwrap();
        prop_assert_eq!(h1.matrix(), h2.matrix());
        prop_assert!(hermiticity_deviation(h1.matrix()) <= 1e-12);
    }

    #[test]
    fn gibbs_weights_are_normalized_and_ordered(
        mut e in prop::collection::vec(-5.0f64..5.0, 1..40), b1 in 0.0f64..10.0, b2 in 0.0f64..10.0,
    ) {
        e.sort_by(f64::total_cmp);
        let w = gibbs_weights_for(&e, b1).unwrap();
        prop_assert!((w.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(w.weights().windows(2).all(|p| p[0] >= p[1]));
        let z: f64 = e.iter().map(|x| (-b1 * x).exp()).sum();
        prop_assert!((w.partition().unwrap() - z).abs() <= 1e-12 * z);
        let uniform = gibbs_weights_for(&e, 0.0).unwrap();
        prop_assert!(uniform.weights().iter().all(|a| (a - 1.0 / e.len() as f64).abs() <= 1e-15));
        let (lo, hi) = if b1 < b2 { (b1, b2) } else { (b2, b1) };
        let a_lo = gibbs_weights_for(&e, lo).unwrap().weights()[0];
        let a_hi = gibbs_weights_for(&e, hi).unwrap().weights()[0];
        prop_assert!(a_hi >= a_lo - 1e-15);
        prop_assert!(gibbs_weights_for(&e, -0.1).is_err());
    }

    #[test]
    fn density_of_states_integrates_to_count(e in prop::collection::vec(-3.0f64..3.0, 1..60), bins in 1usize..20) {
        let dos = density_of_states(&e, bins).unwrap();
        prop_assert!((dos.integral() - e.len() as f64).abs() <= 1e-9 * e.len() as f64);
        prop_assert_eq!(dos.total, e.len());
    }

    #[test]
    fn spin_gas_has_two_to_the_k_states(k in 1u32..10, w in 0.5f64..4.0) {
        let s = bath_spectrum(&BathSpec::spin_gas(k, w, None)).unwrap();
        prop_assert_eq!(s.len(), 1usize << k);
        prop_assert!(s.energies().windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn degeneracy_classes_partition_the_spectrum(
        mut w in prop::collection::vec(0.0f64..2.0, 1..50), eps in 1e-6f64..0.2,
    ) {
        w.sort_by(f64::total_cmp);
        let classes = degeneracy_classes(&w, eps);
        let mut next = 0;
        for r in classes.classes() {
            prop_assert_eq!(r.start, next);
            prop_assert!(!r.is_empty());
            next = r.end;
            for l in r.start + 1..r.end {
                prop_assert!(w[l] - w[l - 1] <= eps);
            }
        }
        prop_assert_eq!(next, w.len());
        for pair in classes.classes().windows(2) {
            prop_assert!(w[pair[1].start] - w[pair[0].end - 1] > eps);
        }
    }

    #[test]
    fn gibbs_p0_is_monotone_and_inverts(beta in 0.0f64..20.0, delta in 0.05f64..5.0, step in 1e-3f64..1.0) {
        let p = gibbs_p0(beta, delta);
        prop_assert!((0.5..=1.0).contains(&p));
        prop_assert!(gibbs_p0(beta + step, delta) >= p);
        if beta > 0.0 {
            prop_assert!(gibbs_p0(beta, delta + step) >= p);
        }
        // p is within 5e-5 of 1 here; beyond this a single rounding of p moves β_eff by more than 1e-10
        if beta * delta <= 10.0 {
            prop_assert!((effective_beta(p, delta) - beta).abs() <= 1e-10 * beta.max(1.0));
        }
    }

    #[test]
    fn poles_zero_the_denominator(delta in 0.05f64..10.0, n in -200i64..200) {
        prop_assert!(denominator(pole(delta, n), delta).norm() <= 1e-12);
    }

    #[test]
    fn rhs_is_consistent_and_reflection_symmetric(re in 0.05f64..5.0, im in -6.0f64..6.0, delta in 0.3f64..3.0) {
        let zbar = NormalizedPartition::new(
            PartitionModel::ExplicitSpectrum { energies: vec![0.0, 0.4, 1.3] }, 1.0,
        ).unwrap();
        let b = Complex64::new(re, im);
        let r = rhs_function(b, delta, &zbar).unwrap();
        let back = r * denominator(b, delta);
        let z = zbar.value(b).unwrap();
        prop_assert!((back - z).norm() <= 1e-12 * z.norm().max(1.0));
        let rc = rhs_function(b.conj(), delta, &zbar).unwrap();
        prop_assert!((rc - r.conj()).norm() <= 1e-12 * r.norm().max(1.0));
        let real = rhs_function(Complex64::new(re, 0.0), delta, &zbar).unwrap();
        prop_assert!((real.re * (1.0 + (-re * delta).exp()) - zbar.value(Complex64::new(re, 0.0)).unwrap().re).abs() <= 1e-12);
    }

    #[test]
    fn classical_gas_residues(particles in 1u32..5, n in -10i64..10, x in 0.1f64..3.0, delta in 0.5f64..2.0) {
        let model = PartitionModel::ClassicalIdealGas { particles, volume_factor: 1.0 };
        let zbar = NormalizedPartition::new(model.clone(), 1.0).unwrap();
        let r = residue(n, x, delta, &zbar).unwrap();
        prop_assert!(r.relative_difference <= 1e-6);
        let b = pole(delta, n);
        let closed = partition_value(&model, b).unwrap().norm() / zbar.normalization / delta;
        prop_assert!((r.formula.norm() - closed).abs() <= 1e-10 * closed);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(16) })]

    #[test]
    fn evolution_preserves_trace_hermiticity_and_spectrum(
        n in 2usize..4, nb in 1usize..6, seed in any::<u64>(), lambda in 0.0f64..1.5, t in -50.0f64..50.0,
    ) {
        let h = instance(n, nb, lambda, seed);
        let eig = eigendecompose(&h).unwrap();
        let d = h.dim();
        let p = oracles::random_probabilities(d, seed ^ 7);
        let rho0 = DensityMatrix::new(Space::Composite, oracles::random_density_matrix(d, &p, seed ^ 9)).unwrap();
        let rho_t = evolve(&rho0, &eig, t).unwrap();
        prop_assert!((rho_t.matrix().trace() - rho0.matrix().trace()).norm() <= 1e-9);
        prop_assert!(hermiticity_deviation(rho_t.matrix()) <= 1e-9);
        let (s0, st) = (spectrum_of(rho0.matrix()), spectrum_of(rho_t.matrix()));
        for (a, b) in s0.iter().zip(&st) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn diagonal_ensemble_identities(
        n in 2usize..4, nb in 1usize..10, seed in any::<u64>(), lambda in 0.0f64..1.5, b1 in 0.0f64..8.0, b2 in 0.0f64..8.0,
    ) {
        let h = instance(n, nb, lambda, seed);
        let eig = eigendecompose(&h).unwrap();
        let classes = degeneracy_classes(eig.frequencies(), default_degeneracy_tolerance(eig.frequencies()));
        let mut f_seen: Option<Vec<f64>> = None;
        for beta in [b1, b2] {
            let w = gibbs_weights_for(h.bath_energies(), beta).unwrap();
            let rho0 = initial_composite_state(n, 0, &w).unwrap();
            let de = diagonal_ensemble(&eig, &rho0, &classes).unwrap();
            prop_assert!(de.system.validate().is_valid());
            prop_assert!(de.composite.validate().is_valid());
            prop_assert!((0.0..=1.0 + 1e-12).contains(&de.p0));
            let weighted: f64 = w.weights().iter().zip(&de.f_weights).map(|(a, f)| a * f).sum();
            prop_assert!((de.p0 - weighted).abs() <= 1e-10);
            if let Some(prev) = &f_seen {
                prop_assert!(prev.iter().zip(&de.f_weights).all(|(a, b)| a.to_bits() == b.to_bits()));
            }
            f_seen = Some(de.f_weights);
        }
        let all: Vec<Vec<f64>> = (0..n).map(|target| f_weights(&eig, &classes, target).unwrap()).collect();
        for j in 0..nb {
            let s: f64 = all.iter().map(|f| f[j]).sum();
            prop_assert!((s - 1.0).abs() <= 1e-10);
        }
    }
}
