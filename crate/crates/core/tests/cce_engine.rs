mod common;

use common::*;
use num_complex::Complex64;
use proptest::prelude::*;
use spinbath::bath::{enumerate_clusters, BathSpin, Vec3};
use spinbath::cce::{
    cce_curve, cluster_coherence, hyperfine_vector, joint_space_coherence,
    nuclear_dipolar_hamiltonian, pair_factor, Frame,
};
use spinbath::isotopes::Isotope;
use spinbath::{ensemble_coherence, BathSource, CceOrder, IsotopeTable, SimulationConfig, Spin};

#[test]
fn hyperfine_on_axis_and_in_plane() {
    let c13 = iso("13C");
    let k = MU0_OVER_4PI * 2.0 * MU_B * c13.g_factor * MU_N / HBAR / (4e-10f64).powi(3);
    let on_axis = hyperfine_vector(&Vec3::new(0.0, 0.0, 4.0), &c13, 2.0).unwrap();
    assert!(on_axis.x.abs() < 1e-9 * k && on_axis.y.abs() < 1e-9 * k);
    assert!((on_axis.z + 2.0 * k).abs() < 1e-12 * k);
    let in_plane = hyperfine_vector(
        &Vec3::new(4.0 / 2f64.sqrt(), 4.0 / 2f64.sqrt(), 0.0),
        &c13,
        2.0,
    )
    .unwrap();
    assert!(in_plane.x.abs() < 1e-12 * k && in_plane.y.abs() < 1e-12 * k);
    assert!((in_plane.z - k).abs() < 1e-12 * k);
}

#[test]
fn spinless_coupling_vanishes() {
    let ghost = Isotope {
        element: "C".into(),
        mass_number: 13,
        spin: Spin::HALF,
        g_factor: 0.0,
        abundance: 0.0,
    };
    let a = hyperfine_vector(&Vec3::new(1.0, 2.0, 3.0), &ghost, 2.0).unwrap();
    assert_eq!(a.norm(), 0.0);
    let bath = bath_of(&[(Vec3::new(1.0, 2.0, 3.0), ghost)]);
    for l in cluster_coherence(&bath, &[0], &config(1.0, 1e-3, 51)).unwrap() {
        assert!((l - z(1.0)).norm() < 1e-12);
    }
}

#[test]
fn empty_cluster_is_unity() {
    let bath = bath_of(&[]);
    let l = cluster_coherence(&bath, &[], &config(1.0, 1e-3, 11)).unwrap();
    assert!(l.iter().all(|&x| x == z(1.0)));
}

#[test]
fn dipolar_on_axis_diagonal_element() {
    let c13 = iso("13C");
    let a = BathSpin {
        position: Vec3::new(0.0, 0.0, 3.0),
        isotope: c13.clone(),
    };
    let b = BathSpin {
        position: Vec3::new(0.0, 0.0, 5.0),
        isotope: c13.clone(),
    };
    let h = nuclear_dipolar_hamiltonian(&a, &b).unwrap();
    let base = MU0_OVER_4PI * MU_N * MU_N * c13.g_factor * c13.g_factor / HBAR / (2e-10f64).powi(3);
    // (1 − 3cos²0) = −2, and ⟨↑↑|Iz Iz|↑↑⟩ = 1/4
    assert!((h.matrix()[(0, 0)].re - (-2.0 * base) / 4.0).abs() < 1e-12 * base);
}

fn swap_operator(da: usize, db: usize) -> M {
    let n = da * db;
    M::from_fn(n, n, |r, c| {
        let (i, j) = (c / db, c % db);
        if r == j * da + i {
            z(1.0)
        } else {
            z(0.0)
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn dipolar_matches_tensor_contraction(
        x in -6.0f64..6.0, y in -6.0f64..6.0, zc in -6.0f64..6.0,
        which in 0usize..4,
    ) {
        let labels = ["13C", "29Si", "17O", "1H"];
        let pa = Vec3::new(0.5, -0.3, 0.2);
        let pb = Vec3::new(x, y, zc);
        prop_assume!((pb - pa).norm() > 1.0);
        let ia = iso("13C");
        let ib = iso(labels[which]);
        let a = BathSpin { position: pa, isotope: ia.clone() };
        let b = BathSpin { position: pb, isotope: ib.clone() };
        let h = nuclear_dipolar_hamiltonian(&a, &b).unwrap();

        let dims = [ia.spin.multiplicity(), ib.spin.multiplicity()];
        let (oa, ob) = (spin_matrices(ia.spin.twice()), spin_matrices(ib.spin.twice()));
        let d = pb - pa;
        let r = d.norm() * 1e-10;
        let n = d / d.norm();
        let k = MU0_OVER_4PI * MU_N * MU_N * ia.g_factor * ib.g_factor / HBAR / r.powi(3);
        let mut expected = M::zeros(dims[0] * dims[1], dims[0] * dims[1]);
        for p in 0..3 {
            for q in 0..3 {
                let t = k * (if p == q { 1.0 } else { 0.0 } - 3.0 * n[p] * n[q]);
                expected += oa[p].kronecker(&ob[q]) * z(t);
            }
        }
        let scale = expected.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let diff = (h.matrix() - &expected).iter().map(|c| c.norm()).fold(0.0, f64::max);
        prop_assert!(diff <= 1e-12 * scale);

        let swapped = nuclear_dipolar_hamiltonian(&b, &a).unwrap();
        let s = swap_operator(dims[1], dims[0]);
        let back = &s * swapped.matrix() * s.adjoint();
        let diff = (h.matrix() - back).iter().map(|c| c.norm()).fold(0.0, f64::max);
        prop_assert!(diff <= 1e-12 * scale);
    }

    #[test]
    fn single_nucleus_matches_mims_eseem(
        r in 2.5f64..8.0, cos_theta in -0.99f64..0.99, phi in 0.0f64..std::f64::consts::TAU, field_idx in 0usize..3,
    ) {
        let field = [0.3, 1.0, 5.0][field_idx];
        let c13 = iso("13C");
        let pos = position_from(r, cos_theta, phi);
        let bath = bath_of(&[(pos, c13.clone())]);
        let cfg = config(field, 2e-5, 101);
        let l = cluster_coherence(&bath, &[0], &cfg).unwrap();
        for (t, v) in cfg.times().iter().zip(&l) {
            prop_assert!((v.re - mims(pos, &c13, field, *t)).abs() <= 1e-8);
            prop_assert!(v.im.abs() <= 1e-8);
        }
    }

    #[test]
    fn branch_path_matches_joint_space(
        r1 in 2.0f64..7.0, c1 in -0.95f64..0.95, p1 in 0.0f64..std::f64::consts::TAU,
        r2 in 2.0f64..7.0, c2 in -0.95f64..0.95, p2 in 0.0f64..std::f64::consts::TAU,
        which in 0usize..3, field in 0.2f64..5.0,
    ) {
        let a = (position_from(r1, c1, p1), iso("13C"));
        let b = (position_from(r2, c2, p2) + Vec3::new(0.3, 0.0, 0.0), iso(["13C", "17O", "14N"][which]));
        prop_assume!((a.0 - b.0).norm() > 1.0);
        let bath = bath_of(&[a, b]);
        let cfg = config(field, 1e-4, 21);
        for cluster in [vec![0], vec![1], vec![0, 1]] {
            let fast = cluster_coherence(&bath, &cluster, &cfg).unwrap();
            let reference = joint_space_coherence(&bath, &cluster, &cfg, Frame::Rotating).unwrap();
            for (x, y) in fast.iter().zip(&reference) {
                prop_assert!((x - y).norm() <= 1e-10);
            }
        }
    }

    #[test]
    fn normalized_and_bounded(seed in any::<u64>(), field in 0.1f64..6.0, order in 1u32..3) {
        let c13 = iso("13C");
        let source = BathSource::Random { isotope: c13, density: 5e21, material_id: "prop".into() };
        let cfg = SimulationConfig {
            field_t: field,
            order: CceOrder::from_number(order).unwrap(),
            t_max: 2e-3,
            n_times: 41,
            n_instances: 1,
            master_seed: seed,
            r_bath: 12.0,
            r_pair: 6.0,
            ..SimulationConfig::default()
        };
        let bath = spinbath::cce::bath_instance(&source, &IsotopeTable::bundled(), &cfg, 0).unwrap();
        for k in 0..bath.len().min(4) {
            let l = cluster_coherence(&bath, &[k], &cfg).unwrap();
            prop_assert!((l[0] - z(1.0)).norm() <= 1e-9);
        }
        let clusters = enumerate_clusters(&bath, cfg.order, cfg.r_pair);
        if let Some(&(i, j)) = clusters.pairs.first() {
            let l = cluster_coherence(&bath, &[i, j], &cfg).unwrap();
            prop_assert!((l[0] - z(1.0)).norm() <= 1e-9);
        }
        let total = cce_curve(&bath, &clusters, &cfg).unwrap();
        prop_assert!((total[0] - z(1.0)).norm() <= 1e-9);
        prop_assert!(total.iter().all(|v| v.norm() <= 1.0 + 1e-6));
    }

    #[test]
    fn pair_factor_clamp_preserves_phase(re in -1.0f64..1.0, im in -1.0f64..1.0, tiny in 1e-16f64..1e-11) {
        let pair = Complex64::new(re, im);
        prop_assume!(pair.norm() > 1e-3);
        let f = pair_factor(pair, Complex64::new(tiny, 0.0), Complex64::new(0.5, 0.0));
        prop_assert!(f.norm() <= 1.0 + 1e-12);
        prop_assert!((f.arg() - pair.arg()).abs() < 1e-9);
    }
}

#[test]
fn one_spin_bath_cce1_equals_cce2_equals_cluster() {
    let bath = bath_of(&[(Vec3::new(1.0, 2.0, 2.5), iso("13C"))]);
    let cfg = config(0.5, 3e-5, 31);
    let single = cluster_coherence(&bath, &[0], &cfg).unwrap();
    for order in [CceOrder::First, CceOrder::Second] {
        let curve = cce_curve(&bath, &enumerate_clusters(&bath, order, 10.0), &cfg).unwrap();
        assert_eq!(curve, single);
    }
}

#[test]
fn cce2_matches_exact_when_two_spins_interact() {
    let spins = vec![
        (Vec3::new(2.0, 1.0, 1.5), iso("13C")),
        (Vec3::new(3.0, -0.5, 2.5), iso("13C")),
        (Vec3::new(1000.0, 300.0, -200.0), iso("11B")),
    ];
    let bath = bath_of(&spins);
    let cfg = config(0.1, 2e-4, 41);
    let exact = exact_echo(&spins, cfg.field_t, &cfg.times());
    let cce = cce_curve(
        &bath,
        &enumerate_clusters(&bath, CceOrder::Second, 10.0),
        &cfg,
    )
    .unwrap();
    let worst = exact
        .iter()
        .zip(&cce)
        .map(|(a, b)| (a.norm() - b.norm()).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-8, "max deviation {worst:e}");
}

#[test]
fn cce2_matches_exact_for_well_separated_spins() {
    let spins = vec![
        (Vec3::new(2.0, 1.0, 1.5), iso("13C")),
        (Vec3::new(4.0, -2.5, 3.0), iso("13C")),
        (Vec3::new(-3.0, 3.5, -2.0), iso("11B")),
    ];
    let bath = bath_of(&spins);
    let cfg = config(0.2, 1e-3, 41);
    let exact = exact_echo(&spins, cfg.field_t, &cfg.times());
    let cce = cce_curve(
        &bath,
        &enumerate_clusters(&bath, CceOrder::Second, 20.0),
        &cfg,
    )
    .unwrap();
    let worst = exact
        .iter()
        .zip(&cce)
        .map(|(a, b)| (a.norm() - b.norm()).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-2, "max deviation {worst:e}");
}

#[test]
fn symmetric_homonuclear_pair_does_not_dephase() {
    let c13 = iso("13C");
    let bath = bath_of(&[
        (Vec3::new(0.0, 0.0, 4.0), c13.clone()),
        (Vec3::new(0.0, 0.0, -4.0), c13),
    ]);
    let cfg = config(5.0, 5e-3, 101);
    let l = cluster_coherence(&bath, &[0, 1], &cfg).unwrap();
    assert!(l.iter().all(|v| (v.norm() - 1.0).abs() <= 1e-6));
}

#[test]
fn no_pairs_means_cce1_equals_cce2() {
    let source = BathSource::Random {
        isotope: iso("13C"),
        density: 1e21,
        material_id: "sparse".into(),
    };
    let base = SimulationConfig {
        t_max: 2e-3,
        n_times: 31,
        n_instances: 2,
        r_bath: 25.0,
        r_pair: 0.01,
        ..SimulationConfig::default()
    };
    let table = IsotopeTable::bundled();
    let first = ensemble_coherence(
        &source,
        &table,
        &SimulationConfig {
            order: CceOrder::First,
            ..base.clone()
        },
    )
    .unwrap();
    let second = ensemble_coherence(&source, &table, &base).unwrap();
    assert_eq!(first, second);
}

#[test]
fn eseem_depth_falls_with_field() {
    let bath = bath_of(&[(position_from(3.0, 0.5, 0.7), iso("13C"))]);
    let depths: Vec<f64> = [0.3, 1.0, 5.0]
        .iter()
        .map(|&b| {
            let l = cluster_coherence(&bath, &[0], &config(b, 2e-5, 4001)).unwrap();
            l.iter().map(|v| 1.0 - v.norm()).fold(0.0, f64::max)
        })
        .collect();
    assert!(depths[0] > depths[1] && depths[1] > depths[2], "{depths:?}");
}

#[test]
fn near_node_pair_factor_stays_bounded() {
    let source = BathSource::Random {
        isotope: iso("13C"),
        density: 5e21,
        material_id: "prop".into(),
    };
    let cfg = SimulationConfig {
        field_t: 0.2223716717362245,
        t_max: 2e-3,
        n_times: 41,
        n_instances: 1,
        master_seed: 9442899072124840871,
        r_bath: 12.0,
        r_pair: 6.0,
        ..SimulationConfig::default()
    };
    let bath = spinbath::cce::bath_instance(&source, &IsotopeTable::bundled(), &cfg, 0).unwrap();
    let clusters = enumerate_clusters(&bath, CceOrder::Second, cfg.r_pair);
    let total = cce_curve(&bath, &clusters, &cfg).unwrap();
    assert!((total[0] - z(1.0)).norm() <= 1e-9);
    assert!(total.iter().all(|v| v.norm() <= 1.0 + 1e-6));
}

#[test]
fn ensembles_are_deterministic_and_single_instance_has_no_spread() {
    let source = BathSource::Random {
        isotope: iso("13C"),
        density: 2e21,
        material_id: "det".into(),
    };
    let cfg = SimulationConfig {
        t_max: 2e-3,
        n_times: 21,
        n_instances: 1,
        r_bath: 20.0,
        r_pair: 8.0,
        ..SimulationConfig::default()
    };
    let table = IsotopeTable::bundled();
    let a = ensemble_coherence(&source, &table, &cfg).unwrap();
    let b = ensemble_coherence(&source, &table, &cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.stderr.iter().all(|&s| s == 0.0));
    let multi = SimulationConfig {
        n_instances: 3,
        ..cfg
    };
    assert!(ensemble_coherence(&source, &table, &multi)
        .unwrap()
        .stderr
        .iter()
        .any(|&s| s > 0.0));
}

#[test]
fn three_spin_clusters_are_unsupported() {
    let bath = bath_of(&[
        (Vec3::new(2.0, 0.0, 0.0), iso("13C")),
        (Vec3::new(3.0, 0.0, 0.0), iso("13C")),
        (Vec3::new(4.0, 0.0, 0.0), iso("13C")),
    ]);
    assert!(cluster_coherence(&bath, &[0, 1, 2], &config(1.0, 1e-3, 5)).is_err());
}
