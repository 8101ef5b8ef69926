use trescaflow::diagnostics::{
    delta_study, energy_report, eps_study, pressure_report, sobolev_l4_estimate, tresca_report, DiscreteConstants, PressureDictionary,
};
use trescaflow::experiment::{couette_stick, rest, shear_cavity, Experiment};
use trescaflow::forms::FrictionThreshold;
use trescaflow::solver::RunOptions;

fn small() -> Experiment {
    let mut e = shear_cavity().with_solver(|c| {
        c.dt = 1e-3;
        c.tau = 4e-3;
    });
    e.mesh.resolution = 2;
    e
}

#[test]
fn repeated_deltas_give_identical_rows() {
    let t = delta_study(&small(), &[1e-3, 1e-3, 1e-3], 2).unwrap();
    let div = t.column("div_l2l2");
    assert_eq!(div.len(), 3);
    assert!(div[0] > 0.0);
    assert!(div.iter().all(|d| d.to_bits() == div[0].to_bits()));
    assert!(t.fit.is_none());
}

#[test]
fn zero_data_delta_study_has_no_slope() {
    let t = delta_study(&rest(), &[1e-2, 1e-3, 1e-4], 1).unwrap();
    assert!(t.column("div_l2l2").iter().all(|d| *d == 0.0));
    assert!(t.fit.is_none());
}

#[test]
fn frictionless_eps_study_has_zero_gap() {
    let base = small().with_data(|d| d.friction = FrictionThreshold::constant(0.0).unwrap());
    let t = eps_study(&base, &[1e-1, 1e-2, 1e-3], 1).unwrap();
    assert_eq!(t.column("functional_gap"), vec![0.0; 3]);
}

#[test]
fn eps_study_gaps_below_bound() {
    let t = eps_study(&small(), &[1e-1, 1e-2, 1e-3], 1).unwrap();
    for (g, b) in t.column("functional_gap").iter().zip(t.column("gap_bound")) {
        assert!(*g <= b, "{g} > {b}");
    }
}

#[test]
fn zero_trajectory_reports_vanish() {
    let e = rest();
    let (p, traj) = e.run(&RunOptions::default()).unwrap();
    let constants = DiscreteConstants { korn: traj.korn.unwrap(), sobolev_l4: sobolev_l4_estimate(&p.space, 8, 1) };
    let est = energy_report(&p.space, &traj, &e.data, &e.solver, &p.lift, &constants, 10.0);
    assert_eq!((est.sup_l2, est.l2h1, est.div_l2l2), (0.0, 0.0, 0.0));
    assert!(est.per_step_ok && est.gronwall_ok && est.div_ok && est.h1_ok);
    let pr = pressure_report(&p.space, &traj, &PressureDictionary::default());
    assert_eq!((pr.max_mean_relative, pr.raw_l2l2, pr.weak_surrogate), (0.0, 0.0, 0.0));
}

#[test]
fn stationary_couette_keeps_its_norm() {
    let e = couette_stick();
    let (_, traj) = e.run(&RunOptions::default()).unwrap();
    let first = traj.records[0].norms.l2;
    for r in &traj.records {
        assert!((r.norms.l2 - first).abs() <= 1e-10 * (1.0 + first));
    }
}

#[test]
fn step_counts_follow_tau() {
    let one = small().with_solver(|c| c.tau = c.dt);
    let (_, t1) = one.run(&RunOptions::default()).unwrap();
    assert_eq!(t1.records.len(), 2);
    let (_, t4) = small().run(&RunOptions::default()).unwrap();
    let (_, t8) = small().with_solver(|c| c.tau *= 2.0).run(&RunOptions::default()).unwrap();
    assert_eq!(t8.records.len() - 1, 2 * (t4.records.len() - 1));
}

#[test]
fn zero_threshold_gives_zero_traction() {
    let e = small().with_data(|d| d.friction = FrictionThreshold::constant(0.0).unwrap());
    let (p, traj) = e.run(&RunOptions::default()).unwrap();
    let q = p.space.default_gamma0_quadrature();
    let r = tresca_report(&p.space, &q, &traj.final_state, &e.data, &p.lift, e.solver.eps, 1.0).unwrap();
    assert!(r.points.iter().all(|pt| pt.traction_magnitude() == 0.0));
    assert_eq!(r.max_traction_excess, 0.0);
}

#[test]
fn traction_never_exceeds_threshold() {
    let e = small();
    let (p, traj) = e.run(&RunOptions::default()).unwrap();
    let q = p.space.default_gamma0_quadrature();
    let r = tresca_report(&p.space, &q, &traj.final_state, &e.data, &p.lift, e.solver.eps, 1.0).unwrap();
    assert!(r.points.iter().all(|pt| pt.traction_magnitude() <= pt.threshold * (1.0 + 1e-14)));
}
