//! Complete problem descriptions and the built-in cases.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::Result;
use crate::forms::{FrictionThreshold, TemperatureField, ViscosityKind, ViscosityModel};
use crate::geometry::{build_mesh_with, Domain, HeightFunction, MeshOptions, Omega, Refinement};
use crate::lifting::{build_lifting, BoundaryData, Lifting, LiftingOptions, TimeProfile};
use crate::mms::ManufacturedSolution;
use crate::solver::{Forcing, InitialVelocity, NonlinearConfig, PhysicalData, RunOptions, Solver, SolverConfig, Trajectory};
use crate::spaces::{BottomCondition, DiscreteSpace};

/// Geometry, discretization, data and solver settings of one run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub name: String,
    pub domain: Domain,
    pub mesh: MeshOptions,
    pub degree: usize,
    pub bottom: BottomCondition,
    pub data: PhysicalData,
    pub solver: SolverConfig,
    pub lifting: LiftingOptions,
}

/// Space and lifting of an experiment.
#[derive(Debug)]
pub struct Prepared {
    pub space: DiscreteSpace,
    pub lift: Lifting,
}

impl Experiment {
    pub fn prepare(&self) -> Result<Prepared> {
        let mesh = build_mesh_with(&self.domain, self.mesh)?;
        let space = DiscreteSpace::with_bottom(Arc::new(mesh), self.degree, self.bottom)?;
        let lift = build_lifting(&space, &self.data.boundary, &self.lifting)?;
        Ok(Prepared { space, lift })
    }

    pub fn run(&self, opts: &RunOptions) -> Result<(Prepared, Trajectory)> {
        let p = self.prepare()?;
        let tr = Solver::new(&p.space, self.solver, &self.data, &p.lift, opts.check_energy)?.run(opts)?;
        Ok((p, tr))
    }

    pub fn with_solver(&self, f: impl FnOnce(&mut SolverConfig)) -> Self {
        let mut e = self.clone();
        f(&mut e.solver);
        e
    }

    pub fn with_data(&self, f: impl FnOnce(&mut PhysicalData)) -> Self {
        let mut e = self.clone();
        f(&mut e.data);
        e
    }
}

fn unit_square() -> Domain {
    Domain::new(Omega::Interval { a: 0.0, b: 1.0 }, HeightFunction::constant(1.0).expect("positive height")).expect("valid domain")
}

/// Bottom shear profile vanishing with its slope at both corners.
pub fn cavity_shear(x: f64) -> f64 {
    16.0 * x * x * (1.0 - x).powi(2)
}

/// Shear-driven cavity with gravity, temperature-dependent viscosity, friction on the bottom and
/// a non-solenoidal initial bump.
pub fn shear_cavity() -> Experiment {
    let viscosity = ViscosityModel::new(ViscosityKind::Exponential { mu0: 0.5, beta: 0.5, t_ref: 0.0 }, 0.5, 1.5, (0.0, 1.0))
        .expect("valid viscosity");
    let data = PhysicalData {
        viscosity,
        temperature: TemperatureField::new(|x, _| x[1], (0.0, 1.0), false),
        friction: FrictionThreshold::constant(0.3).expect("valid threshold"),
        force: Forcing::constant([0.0, -1.0, 0.0]),
        boundary: BoundaryData::new(|_| [0.0; 3], |x| [cavity_shear(x[0]), 0.0, 0.0], TimeProfile::Constant).expect("valid data"),
        initial: InitialVelocity::homogenized(|x| [0.0, (PI * x[0]).sin() * (PI * x[1]).sin(), 0.0]),
        initial_perturbation: 0.0,
    };
    Experiment {
        name: "shear-cavity".into(),
        domain: unit_square(),
        mesh: MeshOptions { resolution: 4, refinement: Refinement::Barycentric },
        degree: 2,
        bottom: BottomCondition::Slip,
        data,
        solver: SolverConfig {
            delta: 1e-3,
            eps: 1e-2,
            dt: 2e-6,
            tau: 0.0125,
            theta: 1.0,
            nonlinear: NonlinearConfig::default(),
            friction_quad_degree: None,
        },
        lifting: LiftingOptions::default(),
    }
}

/// Shear cavity on a finer mesh with a threshold that leaves stick zones near the corners.
pub fn tresca_cavity() -> Experiment {
    let mut e = shear_cavity()
        .with_solver(|c| {
            c.dt = 1e-3;
            c.tau = 0.1;
        })
        .with_data(|d| d.friction = FrictionThreshold::constant(1.0).expect("valid threshold"));
    e.name = "tresca-cavity".into();
    e.mesh.resolution = 8;
    e
}

/// Pulsating channel flow through the lateral boundaries over a frictional bottom.
pub fn channel() -> Experiment {
    let data = PhysicalData {
        friction: FrictionThreshold::new(|_, x| 0.25 + 0.5 * x[0], 0.75).expect("valid threshold"),
        boundary: BoundaryData::poiseuille(2, 1.0, 1.0, TimeProfile::Sinusoidal { amplitude: 0.5, omega: 2.0 * PI })
            .expect("valid data"),
        initial: InitialVelocity::rest(),
        ..PhysicalData::simple(0.5).expect("valid viscosity")
    };
    Experiment {
        name: "channel".into(),
        domain: unit_square(),
        mesh: MeshOptions { resolution: 3, refinement: Refinement::Barycentric },
        degree: 2,
        bottom: BottomCondition::Slip,
        data,
        solver: SolverConfig { delta: 1e-3, eps: 1e-2, dt: 0.01, tau: 0.1, ..Default::default() },
        lifting: LiftingOptions::default(),
    }
}

/// Plane Couette flow under the stick condition, started from the exact steady state.
pub fn couette_stick() -> Experiment {
    let data = PhysicalData {
        boundary: BoundaryData::couette(2, 1.0, 1.0, TimeProfile::Constant).expect("valid data"),
        initial: InitialVelocity::full(|x| [1.0 - x[1], 0.0, 0.0]),
        ..PhysicalData::simple(0.5).expect("valid viscosity")
    };
    Experiment {
        name: "couette-stick".into(),
        domain: unit_square(),
        mesh: MeshOptions { resolution: 2, refinement: Refinement::Barycentric },
        degree: 2,
        bottom: BottomCondition::NoSlip,
        data,
        solver: SolverConfig { delta: 1e-3, eps: 1e-2, dt: 0.01, tau: 0.05, ..Default::default() },
        lifting: LiftingOptions::default(),
    }
}

/// Homogeneous data, fluid at rest.
pub fn rest() -> Experiment {
    Experiment {
        name: "rest".into(),
        domain: unit_square(),
        mesh: MeshOptions { resolution: 2, refinement: Refinement::Barycentric },
        degree: 2,
        bottom: BottomCondition::Slip,
        data: PhysicalData::simple(0.5).expect("valid viscosity"),
        solver: SolverConfig { delta: 1e-3, eps: 1e-2, dt: 0.01, tau: 0.05, ..Default::default() },
        lifting: LiftingOptions::default(),
    }
}

/// Manufactured-solution run on the unit square.
pub fn manufactured(mms: &ManufacturedSolution, resolution: usize, dt: f64, tau: f64) -> Experiment {
    let m1 = mms.clone();
    let m2 = mms.clone();
    let data = PhysicalData {
        force: Forcing::new(move |x, t| m1.forcing(x, t), !mms.is_steady()),
        initial: InitialVelocity::homogenized(move |x| m2.velocity(x, 0.0)),
        ..PhysicalData::simple(mms.mu).expect("valid viscosity")
    };
    Experiment {
        name: "manufactured".into(),
        domain: unit_square(),
        mesh: MeshOptions { resolution, refinement: Refinement::Barycentric },
        degree: 2,
        bottom: BottomCondition::Slip,
        data,
        solver: SolverConfig {
            delta: 1e-2,
            eps: 1e-2,
            dt,
            tau,
            nonlinear: NonlinearConfig { tolerance: 1e-12, ..Default::default() },
            ..Default::default()
        },
        lifting: LiftingOptions::default(),
    }
}
