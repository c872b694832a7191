use proptest::prelude::*;

use smafem::fem::{BarMesh, BoxGrid, HexMesh};
use smafem::local::{local_residual, resolve_local, InternalState, LocalScheme};
use smafem::material::{Material, MaterialParams, TransformDirection};
use smafem::sim::{Loading, Segment, SimConfig};
use smafem::verify::analytic_1d;
use smafem::voigt::{Matrix, Vector, Voigt6};

fn mat6() -> Material<6> {
    Material::new(MaterialParams::default()).unwrap()
}

fn voigt(max: f64) -> impl Strategy<Value = Voigt6> {
    prop::array::uniform6(-max..max).prop_map(Voigt6::from)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn converged_states_are_admissible(eps in voigt(0.02), t in 200.0..320.0f64) {
        let m = mat6();
        let st_n = InternalState::austenite(&m);
        let (st, _) = resolve_local(&m, &st_n, &eps, t, LocalScheme::NewtonRaphson).unwrap();
        prop_assert!(st.validate(&m).is_ok());
        prop_assert!(st.xi >= st_n.xi);
        prop_assert!(m.effective_strain(&st.eps_t) <= m.params.h + 1e-6);
        if st.direction == TransformDirection::Forward {
            let r = local_residual(&m, &st, &st_n, &eps, t, TransformDirection::Forward).unwrap();
            prop_assert!(r.h_phi.abs() / m.y() < 1e-6);
        }
    }

    #[test]
    fn unloading_never_grows_martensite_beyond_loading(e in 0.01..0.05f64, back in 0.0..1.0f64, t in 280.0..320.0f64) {
        let m = Material::<1>::new(MaterialParams::default()).unwrap();
        let v = |x: f64| Vector::<1>::new(x);
        let (loaded, _) = resolve_local(&m, &InternalState::austenite(&m), &v(e), t, LocalScheme::NewtonRaphson).unwrap();
        let (unloaded, _) = resolve_local(&m, &loaded, &v(e * back), t, LocalScheme::NewtonRaphson).unwrap();
        prop_assert!(unloaded.xi <= loaded.xi + 1e-12);
        prop_assert!(unloaded.eps_t[0].abs() <= m.params.h * unloaded.xi + 1e-9);
    }

    #[test]
    fn analytic_forward_branch_is_monotone_in_temperature(t1 in 195.0..225.0f64, dt in 0.01..5.0f64, sigma in -2e8..2e8f64) {
        let p = MaterialParams::default();
        let (a, _) = analytic_1d(sigma, t1, &p, TransformDirection::Forward).unwrap();
        let (b, _) = analytic_1d(sigma, t1 + dt, &p, TransformDirection::Forward).unwrap();
        prop_assert!(a >= b);
    }

    #[test]
    fn residual_is_additive_over_elements(stress in prop::collection::vec(-1e8..1e8f64, 16)) {
        let g = BoxGrid::new([1.0, 2.0, 1.0], [1, 2, 1]).unwrap();
        let mesh = HexMesh::hex_box(&g).unwrap();
        let s: Vec<Voigt6> = (0..mesh.n_gauss()).map(|i| Voigt6::from_fn(|r, _| stress[(i + r) % 16])).collect();
        let full = mesh.assemble_residual(&s, 0.0);
        let first: Vec<Voigt6> = s.iter().enumerate().map(|(i, v)| if i < 8 { *v } else { Voigt6::zeros() }).collect();
        let second: Vec<Voigt6> = s.iter().enumerate().map(|(i, v)| if i >= 8 { *v } else { Voigt6::zeros() }).collect();
        let sum = mesh.assemble_residual(&first, 0.0) + mesh.assemble_residual(&second, 0.0);
        prop_assert!((full - sum).norm() <= 1e-12 * (1.0 + s.iter().map(|v| v.norm()).sum::<f64>()));
    }

    #[test]
    fn bar_stiffness_is_symmetric_and_singular(n in 1usize..12, len in 0.1..10.0f64, area in 1e-4..1.0f64) {
        let bar = BarMesh::bar(len, n, area, 1.0).unwrap();
        let k = bar.assemble_tangent_dense(&vec![Matrix::<1>::new(30e9); bar.n_gauss()]);
        prop_assert!((&k - k.transpose()).norm() <= 1e-12 * k.norm());
        let rows: f64 = (0..=n).map(|i| k.row(i).sum().abs()).sum();
        prop_assert!(rows <= 1e-9 * k.norm());
    }

    #[test]
    fn configs_round_trip(t0 in 200.0..350.0f64, t1 in 150.0..350.0f64, f in 0.0..2.0f64, dt in 0.05..5.0f64, cycles in 1usize..4) {
        let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/benchmark_3d.toml")).unwrap();
        let mut cfg = SimConfig::from_toml(&text).unwrap();
        cfg.loading = Loading {
            temperature: t0,
            load: 0.0,
            segments: vec![Segment { temperature: t1, load: f, max_dt: Some(dt), max_dload: None }],
            cycles,
        };
        let echoed = SimConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        prop_assert_eq!(&cfg, &echoed);
        prop_assert_eq!(cfg.loading.path(), echoed.loading.path());
    }
}
