use std::f64::consts::PI;
use std::sync::Arc;

use crate::autodiff::Jet;
use crate::loss::{BoundaryHandling, LossConfig, LossProblem, WeakForm};
use crate::network::{Activation, BoundaryEncoder, PointFn};
use crate::sampler::{Circle, Domain, Section};
use crate::trainer::{NetSpec, TrainConfig};

use super::{classify_pieces, transport, Problem, ProblemError};

const SLOPE: f64 = 0.9;

/// Piecewise solution with a jump along `y = 0.9x`.
pub fn discontinuous_exact(x: &[Jet]) -> Jet {
    let (px, py) = (&x[0], &x[1]);
    let c = py - px * SLOPE;
    if c.v > 0.0 {
        let a = (px + 1.0).square() * (PI / 4.0);
        a.sin() * (c * (PI / 2.0)).sin()
    } else {
        ((px.square() + c.square()) * -5.0).exp()
    }
}

/// `β·∇u* + u*`, region by region.
fn discontinuous_source(x: &[Jet]) -> Jet {
    let (px, py) = (&x[0], &x[1]);
    let c = py - px * SLOPE;
    if c.v > 0.0 {
        let a = (px + 1.0).square() * (PI / 4.0);
        let sb = (&c * (PI / 2.0)).sin();
        (px + 1.0) * (PI / 2.0) * a.cos() * &sb + a.sin() * &sb
    } else {
        let u = ((px.square() + c.square()) * -5.0).exp();
        &u * (1.0 - px * 10.0)
    }
}

/// Inflow lift that switches regions along `y = −0.4 + x/2`.
pub fn discontinuous_lift(x: &[Jet]) -> Jet {
    let (px, py) = (&x[0], &x[1]);
    if py.v > -0.4 + px.v / 2.0 {
        Jet::constant(0.0)
    } else {
        let e1 = ((px.square() + (px * -SLOPE - 1.0).square()) * -5.0).exp();
        let e2 = (((py + SLOPE).square() + 1.0) * -5.0).exp();
        let e3 = (-5.0 * (1.0 + (SLOPE - 1.0f64).powi(2))).exp();
        e1 + e2 - e3
    }
}

fn nets(m_s: usize, m_t: usize) -> (NetSpec, NetSpec) {
    (
        NetSpec {
            width: m_s,
            depth: 7,
            activation: Activation::Relu,
        },
        NetSpec {
            width: m_t,
            depth: 7,
            activation: Activation::Tanh,
        },
    )
}

pub(super) fn discontinuous() -> Problem {
    let f: PointFn = Arc::new(|x| vec![discontinuous_source(x)]);
    let system = transport(2, |_| vec![1.0, SLOPE], |_| 0.0, 1.0, f, 1.0);
    let exact: PointFn = Arc::new(|x| vec![discontinuous_exact(x)]);
    let quarter = PI / 4.0;
    let solution_encoder = BoundaryEncoder::scalar_mask(
        move |x| (x[0].scale(quarter) - quarter).cos() * (x[1].scale(quarter) - quarter).cos(),
        |x| vec![discontinuous_lift(x)],
        1,
    );
    let test_encoder = BoundaryEncoder::scalar_mask(
        move |x| (x[0].scale(quarter) + quarter).cos() * (x[1].scale(quarter) + quarter).cos(),
        |_| vec![Jet::constant(0.0)],
        1,
    );
    let (s, t) = nets(50, 150);
    let train = TrainConfig {
        iterations: 32_000,
        interior_points: 90_000,
        boundary_points: 10_000,
        lr_solution: 3e-4,
        lr_test: 3e-3,
        decay_solution: 10_000.0,
        decay_test: 10_000.0,
        solution_restarts: vec![2000],
        restart_widths: vec![250],
        solution_net: s,
        test_net: t,
        ..TrainConfig::default()
    };
    let baseline = TrainConfig {
        iterations: 50_000,
        interior_points: 90_000,
        boundary_points: 10_000,
        lr_solution: 3e-4,
        decay_solution: 10_000.0,
        solution_net: NetSpec {
            width: 250,
            depth: 7,
            activation: Activation::Tanh,
        },
        loss: LossConfig {
            boundary: BoundaryHandling::Penalty,
            ..LossConfig::default()
        },
        ..train.clone()
    };
    Problem {
        name: "advection-discontinuous".into(),
        domain: Domain::hypercube(-1.0, 1.0, 2),
        loss: LossProblem {
            form: WeakForm::Friedrichs(system.clone()),
            data: exact.clone(),
            numerator_pieces: vec![0, 2],
            solution_pieces: vec![0, 2],
            test_pieces: vec![1, 3],
        },
        system,
        exact,
        continuous: false,
        solution_encoder,
        test_encoder,
        split: vec![1],
        train,
        baseline: Some(baseline),
        discontinuity: Some([-SLOPE, 1.0, 0.0]),
        mu0: 1.0,
        probe_seed: 1001,
    }
}

const FAN_MU: f64 = 0.01;

/// Polar angle in the closed first quadrant, well conditioned on both axes.
fn quadrant_angle(x: &Jet, y: &Jet) -> Jet {
    if y.v > x.v {
        PI / 2.0 - (x / y).atan()
    } else {
        (y / x).atan()
    }
}

fn fan_exact(x: &[Jet]) -> Jet {
    let r = (x[0].square() + x[1].square()).sqrt();
    let theta = quadrant_angle(&x[0], &x[1]);
    (r.clone() * theta * FAN_MU).exp() * ((r - 0.5) * 10.0).atan()
}

pub(super) fn fan() -> Problem {
    let beta = |x: &[f64]| {
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
        vec![x[1] / r, -x[0] / r]
    };
    let system = transport(2, beta, |_| 0.0, FAN_MU, super::zero_field(1), FAN_MU);
    let exact: PointFn = Arc::new(|x| vec![fan_exact(x)]);
    let solution_encoder = BoundaryEncoder::scalar_mask(
        |x| x[0].clone(),
        |x| vec![(x[1].scale(FAN_MU * PI / 2.0)).exp() * ((&x[1] - 0.5) * 10.0).atan()],
        1,
    );
    let test_encoder = BoundaryEncoder::scalar_mask(|x| x[1].clone(), |_| vec![Jet::constant(0.0)], 1);
    let (s, t) = nets(250, 150);
    let train = TrainConfig {
        iterations: 10_000,
        interior_points: 40_000,
        boundary_points: 10_000,
        lr_solution: 1e-5,
        lr_test: 1e-3,
        decay_solution: 10_000.0,
        decay_test: 10_000.0,
        test_restart_every: 500,
        solution_net: s,
        test_net: t,
        ..TrainConfig::default()
    };
    // Pieces: ray at θ=0 (y = 0, outflow), ray at θ=π/2 (x = 0, inflow),
    // then the two characteristic arcs.
    Problem {
        name: "advection-fan".into(),
        domain: Domain::AnnulusSector {
            r0: 0.1,
            r1: 1.0,
            theta0: 0.0,
            theta1: PI / 2.0,
        },
        loss: LossProblem {
            form: WeakForm::Friedrichs(system.clone()),
            data: exact.clone(),
            numerator_pieces: vec![1],
            solution_pieces: vec![1],
            test_pieces: vec![0],
        },
        system,
        exact,
        continuous: true,
        solution_encoder,
        test_encoder,
        split: vec![1],
        train,
        baseline: None,
        discontinuity: None,
        mu0: FAN_MU,
        probe_seed: 1002,
    }
}

const WINDING_SHIFT: f64 = 0.1;

fn winding_initial(x: &Jet, y: &Jet) -> Jet {
    x.square() + (y - 0.5).square()
}

fn winding_exact(x: &[Jet]) -> Jet {
    let (t, px, py) = (&x[0], &x[1], &x[2]);
    let w = t.scale(2.0 * PI);
    let (c, s) = (w.cos(), w.sin());
    let x0 = px * &c + py * &s;
    let y0 = py * &c - px * &s;
    t.scale(-WINDING_SHIFT).exp() * winding_initial(&x0, &y0)
}

pub(super) fn winding() -> Result<Problem, ProblemError> {
    let beta = |x: &[f64]| vec![1.0, -2.0 * PI * x[2], 2.0 * PI * x[1]];
    let system = transport(3, beta, |_| 0.0, 0.0, super::zero_field(1), 0.0).coercive_shift(WINDING_SHIFT)?;
    let domain = Domain::Extruded {
        t0: 0.0,
        t1: 1.0,
        section: Section::Disk(Circle {
            center: [0.0, 0.0],
            radius: 1.0,
        }),
        arc_split: 0.0,
    };
    let (inflow, outflow, _) = classify_pieces(&system, &domain)?;
    let exact: PointFn = Arc::new(|x| vec![winding_exact(x)]);
    let solution_encoder =
        BoundaryEncoder::scalar_mask(|x| x[0].clone(), |x| vec![winding_initial(&x[1], &x[2])], 1);
    let test_encoder = BoundaryEncoder::scalar_mask(|x| 1.0 - &x[0], |_| vec![Jet::constant(0.0)], 1);
    let (s, t) = nets(250, 150);
    let train = TrainConfig {
        iterations: 30_000,
        interior_points: 40_000,
        boundary_points: 10_000,
        lr_solution: 1e-4,
        lr_test: 1e-3,
        decay_solution: 15_000.0,
        decay_test: 20_000.0,
        solution_net: s,
        test_net: t,
        ..TrainConfig::default()
    };
    Ok(Problem {
        name: "advection-winding".into(),
        domain,
        loss: LossProblem {
            form: WeakForm::Friedrichs(system.clone()),
            data: exact.clone(),
            numerator_pieces: inflow.clone(),
            solution_pieces: inflow,
            test_pieces: outflow,
        },
        system,
        exact,
        continuous: true,
        solution_encoder,
        test_encoder,
        split: vec![1],
        train,
        baseline: None,
        discontinuity: None,
        mu0: WINDING_SHIFT,
        probe_seed: 1003,
    })
}
