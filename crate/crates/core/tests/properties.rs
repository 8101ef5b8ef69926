use std::sync::{Arc, OnceLock};

use proptest::prelude::*;

use trescaflow::config::{parse_config, ExperimentConfig};
use trescaflow::forms::{convection_apply, friction_density, plain_convection, psi_eps_samples, psi_exact_samples};
use trescaflow::geometry::{build_mesh, BoundaryTag, Domain, HeightFunction, Omega};
use trescaflow::io::Snapshot;
use trescaflow::solver::{divergence_field, FlowState};
use trescaflow::spaces::{DiscreteSpace, FaceQuadrature, FieldCoefficients};

struct Fixture {
    space: DiscreteSpace,
    bottom: FaceQuadrature,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let domain = Domain::new(Omega::Interval { a: 0.0, b: 1.0 }, HeightFunction::constant(1.0).unwrap()).unwrap();
        let mesh = Arc::new(build_mesh(&domain, 2).unwrap());
        let space = DiscreteSpace::new(mesh, 2).unwrap();
        let bottom = space.default_gamma0_quadrature();
        Fixture { space, bottom }
    })
}

fn traces(n: usize) -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64).prop_map(|(a, b)| [a, b, 0.0]), n)
}

fn free_field(space: &DiscreteSpace, seed: &[f64]) -> Vec<f64> {
    let free: Vec<f64> = (0..space.num_free()).map(|i| seed[i % seed.len()] * (1.0 + (i as f64 * 0.37).sin())).collect();
    space.dofs().expand(&free)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn friction_density_bounded_and_odd(u in -5.0..5.0f64, v in -5.0..5.0f64, ell in 0.0..3.0f64, eps in 1e-4..1.0f64) {
        let d = friction_density(&[u, v, 0.0], ell, eps);
        prop_assert!((d[0] * d[0] + d[1] * d[1]).sqrt() <= ell * (1.0 + 1e-14));
        let m = friction_density(&[-u, -v, 0.0], ell, eps);
        prop_assert_eq!([m[0], m[1]], [-d[0], -d[1]]);
    }

    #[test]
    fn psi_eps_convex_and_subgradient(
        u in traces(fixture().bottom.len()),
        w in traces(fixture().bottom.len()),
        theta in 0.0..1.0f64,
        eps in 1e-3..1.0f64,
    ) {
        let q = &fixture().bottom;
        let ell: Vec<f64> = q.points.iter().map(|x| 0.5 + x[0]).collect();
        let mix: Vec<[f64; 3]> = u.iter().zip(&w).map(|(a, b)| [theta * a[0] + (1.0 - theta) * b[0], theta * a[1] + (1.0 - theta) * b[1], 0.0]).collect();
        let pu = psi_eps_samples(q, &u, &ell, eps).unwrap();
        let pw = psi_eps_samples(q, &w, &ell, eps).unwrap();
        let pm = psi_eps_samples(q, &mix, &ell, eps).unwrap();
        prop_assert!(pm <= theta * pu + (1.0 - theta) * pw + 1e-12);

        let sum: Vec<[f64; 3]> = u.iter().zip(&w).map(|(a, b)| [a[0] + b[0], a[1] + b[1], 0.0]).collect();
        let pair: f64 = u.iter().zip(&w).zip(&ell).zip(&q.weights).map(|(((a, b), l), wt)| {
            let d = friction_density(a, *l, eps);
            wt * (d[0] * b[0] + d[1] * b[1])
        }).sum();
        prop_assert!(psi_eps_samples(q, &sum, &ell, eps).unwrap() - pu >= pair - 1e-12);
    }

    #[test]
    fn regularization_gap_is_linear_in_eps(u in traces(fixture().bottom.len()), eps in 1e-4..1.0f64) {
        let q = &fixture().bottom;
        let ell: Vec<f64> = q.points.iter().map(|x| 1.0 + x[0] * x[0]).collect();
        let l1: f64 = ell.iter().zip(&q.weights).map(|(l, w)| l * w).sum();
        let gap = psi_eps_samples(q, &u, &ell, eps).unwrap() - psi_exact_samples(q, &u, &ell);
        prop_assert!(gap >= 0.0);
        prop_assert!(gap <= eps * l1 * (1.0 + 1e-12));
    }

    #[test]
    fn corrected_convection_is_skew(a in prop::collection::vec(-1.0..1.0f64, 7), b in prop::collection::vec(-1.0..1.0f64, 5)) {
        let s = &fixture().space;
        let u = free_field(s, &a);
        let v = free_field(s, &b);
        let scale = plain_convection(s, &u, &v, &v).abs().max(1.0);
        prop_assert!(convection_apply(s, &u, &v, &v).abs() <= 1e-12 * scale);
    }

    #[test]
    fn essential_constraints_exact(a in prop::collection::vec(-1.0..1.0f64, 11)) {
        let s = &fixture().space;
        let u = free_field(s, &a);
        let size = u.iter().map(|x| x.abs()).fold(0.0, f64::max);
        for tag in [BoundaryTag::GammaL, BoundaryTag::Gamma1] {
            let q = s.boundary_quadrature(tag, 4);
            for v in s.face_values(&q, &u) {
                prop_assert!(v.iter().all(|c| c.abs() <= 1e-12 * size));
            }
        }
        let q = s.boundary_quadrature(BoundaryTag::Gamma0, 4);
        for (v, n) in s.face_values(&q, &u).iter().zip(&q.normals) {
            prop_assert!((v[0] * n[0] + v[1] * n[1] + v[2] * n[2]).abs() <= 1e-12 * size);
        }
    }

    #[test]
    fn snapshot_text_round_trip(a in prop::collection::vec(-1e3..1e3f64, 9), t in 0.0..10.0f64, step in 0usize..100000, delta in 1e-8..1.0f64) {
        let s = &fixture().space;
        let full = free_field(s, &a);
        let state = FlowState {
            t,
            step,
            vtilde: FieldCoefficients { values: s.dofs().restrict(&full) },
            pressure: divergence_field(s, &full),
        };
        let snap = Snapshot::from_state(&state, &s.mesh().hash(), 2, delta, 1e-2);
        let back = Snapshot::from_text(&snap.to_text()).unwrap();
        prop_assert_eq!(back.to_state(), state);
    }

    #[test]
    fn config_toml_round_trip(
        delta in 1e-6..1.0f64,
        eps in 1e-6..1.0f64,
        dt in 1e-4..0.1f64,
        resolution in 1usize..12,
        ell in 0.0..5.0f64,
        steps in 1usize..50,
    ) {
        let mut cfg = ExperimentConfig::default();
        cfg.solver.delta = delta;
        cfg.solver.eps = eps;
        cfg.solver.dt = dt;
        cfg.solver.tau = dt * steps as f64;
        cfg.geometry.resolution = resolution;
        cfg.physics.friction = trescaflow::config::ScalarSpec::Constant { value: ell };
        let back = parse_config(&cfg.to_toml()).unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn flat_film_volume_and_tags(resolution in 1usize..9, h in 0.2..3.0f64, b in 0.5..2.0f64) {
        let domain = Domain::new(Omega::Interval { a: 0.0, b }, HeightFunction::constant(h).unwrap()).unwrap();
        let mesh = build_mesh(&domain, resolution).unwrap();
        prop_assert!((mesh.volume() - b * h).abs() <= 1e-12 * b * h);
        let total: f64 = [BoundaryTag::Gamma0, BoundaryTag::Gamma1, BoundaryTag::GammaL].iter().map(|t| mesh.tag_measure(*t)).sum();
        prop_assert!((total - 2.0 * (b + h)).abs() <= 1e-12 * (b + h));
        for f in mesh.faces_with_tag(BoundaryTag::Gamma0) {
            let n = mesh.face_normal(f);
            prop_assert!((n[1] + 1.0).abs() <= 1e-12 && n[0].abs() <= 1e-12);
        }
    }
}
