//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

use std::time::Instant;

use trescaflow::diagnostics::{delta_study, eps_study, fit_loglog, stick_limit_comparison, tresca_report, StudyTable};
use trescaflow::experiment::{shear_cavity, tresca_cavity};
use trescaflow::forms::FrictionThreshold;
use trescaflow::mms::{spatial_study, temporal_study, ManufacturedSolution};
use trescaflow::solver::RunOptions;
use trescaflow::verify::{verify, VerifyOptions, VerifyReport};

struct Line {
    id: u8,
    ok: bool,
    detail: String,
}

fn from_verify(report: &VerifyReport, id: u8, label: &str) -> Line {
    let checks = report.criterion(id);
    let failed: Vec<String> = checks.iter().filter(|c| c.hard && !c.passed).map(|c| format!("{}[{}]={:e}", c.name, c.case, c.measured)).collect();
    let ok = !checks.is_empty() && failed.is_empty();
    let detail = if failed.is_empty() { format!("{label}: {} checks", checks.len()) } else { format!("{label}: {}", failed.join(", ")) };
    Line { id, ok, detail }
}

fn all_rows_ok(t: &StudyTable) -> bool {
    t.rows.iter().all(|r| r.failure.is_none())
}

fn main() {
    let start = Instant::now();
    let mut lines = Vec::new();

    let opts = VerifyOptions::default();
    let report = verify(&opts).expect("verify runs");
    lines.push(from_verify(&report, 1, "convection identity and skew symmetry"));
    lines.push(from_verify(&report, 2, "discrete coercivity"));
    lines.push(from_verify(&report, 3, "friction functional calculus"));

    // Penalty sweep on the shear cavity.
    let deltas = [1e-2, 1e-3, 1e-4];
    let dstudy = delta_study(&shear_cavity(), &deltas, 1).expect("delta study");
    let fit = dstudy.fit;
    let slope_ok = fit.is_some_and(|f| (f.slope - 0.5).abs() <= 0.1);
    lines.push(Line {
        id: 4,
        ok: all_rows_ok(&dstudy) && slope_ok,
        detail: format!(
            "div L2L2 {:?}, slope {:.4} +- {:.4}",
            dstudy.column("div_l2l2"),
            fit.map_or(f64::NAN, |f| f.slope),
            fit.map_or(f64::NAN, |f| f.ci_half_width)
        ),
    });

    let means = dstudy.column("pressure_mean_max");
    let weak = dstudy.column("pressure_weak");
    let raw = dstudy.column("pressure_l2l2");
    let mean_ok = means.len() == deltas.len() && means.iter().all(|m| *m <= 1e-10);
    let wmax = weak.iter().cloned().fold(f64::MIN, f64::max);
    let wmin = weak.iter().cloned().fold(f64::MAX, f64::min);
    let weak_ok = wmin > 0.0 && wmax / wmin - 1.0 < 0.2;
    let raw_slope = fit_loglog(&deltas, &raw).map_or(f64::NAN, |f| f.slope);
    let raw_ok = (raw_slope + 0.5).abs() <= 0.1;
    lines.push(Line {
        id: 5,
        ok: mean_ok && weak_ok && raw_ok,
        detail: format!("max mean {:e}, weak variation {:.3}, raw slope {:.3}", means.iter().cloned().fold(0.0, f64::max), wmax / wmin - 1.0, raw_slope),
    });

    // Regularization sweep on the stick/slip cavity.
    let base = tresca_cavity();
    let epsilons = [1e-1, 1e-2, 1e-3];
    let estudy = eps_study(&base, &epsilons, 1).expect("eps study");
    let gaps = estudy.column("functional_gap");
    let bounds = estudy.column("gap_bound");
    let gap_ok = gaps.len() == epsilons.len() && gaps.iter().zip(&bounds).all(|(g, b)| g <= b);
    let verify_gap = report.criterion(6).iter().all(|c| c.passed);
    lines.push(Line { id: 6, ok: all_rows_ok(&estudy) && gap_ok && verify_gap, detail: format!("gaps {gaps:?} vs bounds {bounds:?}") });

    let energy_runs = dstudy.column("energy_ok").into_iter().chain(estudy.column("energy_ok")).collect::<Vec<_>>();
    let energy_ok = energy_runs.len() == deltas.len() + epsilons.len() && energy_runs.iter().all(|e| *e == 1.0);
    let v7 = from_verify(&report, 7, "energy");
    let monitored: Vec<String> =
        report.criterion(7).iter().filter(|c| !c.hard).map(|c| format!("{}[{}] {}", c.name, c.case, if c.passed { "ok" } else { "exceeded" })).collect();
    lines.push(Line {
        id: 7,
        ok: energy_ok && v7.ok,
        detail: format!("per-step inequality on {} sweep runs, {}; monitored: {}", energy_runs.len(), v7.detail, monitored.join(", ")),
    });

    // Stick/slip structure at the base regularization.
    let (p, traj) = base.run(&RunOptions::default()).expect("tresca run");
    let quad = p.space.default_gamma0_quadrature();
    let tr = tresca_report(&p.space, &quad, &traj.final_state, &base.data, &p.lift, base.solver.eps, 1.0).expect("tresca report");
    let comp = estudy.column("complementarity");
    let comp_drop = comp.len() == 3 && comp[0] >= 2.0 * comp[2];
    let stick = stick_limit_comparison(&base, 100.0).expect("stick comparison");
    let zero = base.with_data(|d| d.friction = FrictionThreshold::constant(0.0).expect("nonnegative"));
    let (pz, tz) = zero.run(&RunOptions::default()).expect("frictionless run");
    let qz = pz.space.default_gamma0_quadrature();
    let trz = tresca_report(&pz.space, &qz, &tz.final_state, &zero.data, &pz.lift, zero.solver.eps, 1.0).expect("tresca report");
    let zero_traction = trz.points.iter().map(|q| q.traction_magnitude()).fold(0.0, f64::max);
    let v8 = from_verify(&report, 8, "traction");
    let ok8 = tr.stick_count > 0
        && tr.slip_count > 0
        && tr.max_traction_excess <= 0.0
        && comp_drop
        && stick.within(2.0)
        && zero_traction == 0.0
        && v8.ok;
    lines.push(Line {
        id: 8,
        ok: ok8,
        detail: format!(
            "stick {} slip {}, excess {:e}, complementarity {comp:?}, large-threshold diff {:.3e} vs h-diff {:.3e}, zero-threshold traction {:e}",
            tr.stick_count, tr.slip_count, tr.max_traction_excess, stick.difference, stick.discretization, zero_traction
        ),
    });

    let t = temporal_study(&ManufacturedSolution::unsteady(), 16, &[0.2, 0.1, 0.05], 1.0).expect("temporal study");
    let s = spatial_study(&ManufacturedSolution::steady(), &[4, 8, 16]).expect("spatial study");
    let temporal_ok = t.ratios.iter().all(|r| (r - 2.0).abs() <= 0.3);
    let spatial_ok = s.orders.windows(2).all(|w| (w[1] - w[0]).abs() <= 0.3) && s.orders.iter().all(|o| *o >= 1.5);
    lines.push(Line {
        id: 9,
        ok: temporal_ok && spatial_ok,
        detail: format!("temporal ratios {:?}, spatial orders {:?}", t.ratios, s.orders),
    });

    let again = verify(&opts).expect("verify runs");
    let (a, b) = (report.to_csv(), again.to_csv());
    lines.push(Line { id: 10, ok: a.as_bytes() == b.as_bytes(), detail: format!("verify CSV {} bytes, seed {}", a.len(), opts.seed) });

    for l in &lines {
        println!("criterion {:>2}: {} ({})", l.id, if l.ok { "PASS" } else { "FAIL" }, l.detail);
    }
    println!("acceptance finished in {:.1?}", start.elapsed());
    if lines.iter().any(|l| !l.ok) {
        std::process::exit(1);
    }
}
