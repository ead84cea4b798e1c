use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::autodiff::Jet;
use crate::loss::{EllipticOperator, LossProblem, WeakForm};
use crate::network::{Activation, BoundaryEncoder, PointFn};
use crate::sampler::Domain;
use crate::system::FriedrichsSystem;
use crate::trainer::{NetSpec, TrainConfig};

use super::{EllipticBoundary, Problem};

fn coefficient(x: &[Jet]) -> Jet {
    x.iter().fold(Jet::constant(1.0), |acc, xi| acc + xi.square())
}

fn exact(x: &[Jet]) -> Jet {
    x[0].scale(PI / 2.0).sin() * x[1].scale(PI / 2.0).cos()
}

/// `−∇·(a∇u*)` written out from `a` and `u*`.
fn source(x: &[Jet]) -> Jet {
    let (s1, c1) = (x[0].scale(PI / 2.0).sin(), x[0].scale(PI / 2.0).cos());
    let (s2, c2) = (x[1].scale(PI / 2.0).sin(), x[1].scale(PI / 2.0).cos());
    let a = coefficient(x);
    let du1 = &c1 * &c2 * (PI / 2.0);
    let du2 = &s1 * &s2 * (-PI / 2.0);
    let lap = &s1 * &c2 * (-PI * PI / 2.0);
    -(a * lap + x[0].scale(2.0) * du1 + x[1].scale(2.0) * du2)
}

/// The source as printed with the problem statement.
pub fn elliptic_source_printed(x: &[f64]) -> f64 {
    let (t1, t2) = (PI * x[0] / 2.0, PI * x[1] / 2.0);
    let a = 1.0 + x.iter().map(|v| v * v).sum::<f64>();
    PI * PI / 2.0 * a * t1.sin() * t2.cos() + PI * x[1] * t1.sin() * t2.sin() - PI * x[0] * t1.cos() * t2.cos()
}

/// `∏ (1 − x_i²)`, zero on every face of `[−1, 1]^d`.
fn cube_mask(x: &[Jet]) -> Jet {
    x.iter().fold(Jet::constant(1.0), |acc, xi| acc * (1.0 - xi.square()))
}

/// Flux form `σ + a∇u = 0`, `∇·σ = f` with unknowns `(σ, u)`.
fn flux_system(dim: usize, f: PointFn) -> FriedrichsSystem {
    let r = dim + 1;
    FriedrichsSystem {
        dim,
        r,
        a: Arc::new(move |_| {
            (0..dim)
                .map(|k| {
                    let mut m = DMatrix::zeros(r, r);
                    m[(k, dim)] = 1.0;
                    m[(dim, k)] = 1.0;
                    m
                })
                .collect()
        }),
        c: Arc::new(move |x| {
            let a = 1.0 + x.iter().map(|v| v * v).sum::<f64>();
            let mut m = DMatrix::zeros(r, r);
            for k in 0..dim {
                m[(k, k)] = 1.0 / a;
            }
            m
        }),
        div_a: Arc::new(move |_| DMatrix::zeros(r, r)),
        f: Arc::new(move |x| {
            let mut out = vec![Jet::constant(0.0); r];
            out[dim] = f(x)[0].clone();
            out
        }),
        mu0: 0.0,
    }
}

/// `−∇·((1+|x|²)∇u) = f` on `(−1, 1)^dim` with `u* = sin(πx₁/2)cos(πx₂/2)`.
pub fn elliptic_problem(dim: usize, boundary: EllipticBoundary) -> Problem {
    assert!(dim >= 2, "the exact solution uses two coordinates");
    let f: PointFn = Arc::new(|x| vec![source(x)]);
    let exact_fn: PointFn = Arc::new(|x| vec![exact(x)]);
    let op = EllipticOperator {
        dim,
        a: Arc::new(coefficient),
        mu: 0.0,
        f: f.clone(),
    };
    let solution_encoder = match boundary {
        EllipticBoundary::Weak => BoundaryEncoder::free(1),
        EllipticBoundary::Lifted => BoundaryEncoder::scalar_mask(cube_mask, |x| vec![exact(x)], 1),
    };
    let test_encoder = BoundaryEncoder::scalar_mask(cube_mask, |_| vec![Jet::constant(0.0)], 1);
    let faces: Vec<usize> = (0..2 * dim).collect();
    let train = TrainConfig {
        iterations: 10_000,
        interior_points: 10_000,
        boundary_points: 10_000,
        lr_solution: 1e-5,
        lr_test: 1e-4,
        decay_solution: 8000.0,
        decay_test: 8000.0,
        test_restart_every: 500,
        solution_net: NetSpec {
            width: 150,
            depth: 7,
            activation: Activation::Relu,
        },
        test_net: NetSpec {
            width: 150,
            depth: 7,
            activation: Activation::Tanh,
        },
        ..TrainConfig::default()
    };
    Problem {
        name: format!("elliptic-{dim}d"),
        domain: Domain::hypercube(-1.0, 1.0, dim),
        loss: LossProblem {
            form: WeakForm::Elliptic(op),
            data: exact_fn.clone(),
            numerator_pieces: faces.clone(),
            solution_pieces: faces.clone(),
            test_pieces: faces,
        },
        system: flux_system(dim, f),
        exact: exact_fn,
        continuous: true,
        solution_encoder,
        test_encoder,
        split: vec![1],
        train,
        baseline: None,
        discontinuity: None,
        mu0: 1.0,
        probe_seed: 1004,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::Domain;

    #[test]
    fn symbolic_source_matches_printed_formula() {
        let dom = Domain::hypercube(-1.0, 1.0, 15);
        let x = dom.sample_interior(200, 5, 1, 0).unwrap();
        for row in x.rows() {
            let p = row.to_vec();
            let s = source(&Jet::point_const(&p)).v;
            assert!((s - elliptic_source_printed(&p)).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_solution_satisfies_the_equation() {
        // −∇·(a∇u) = −aΔu − ∇a·∇u from second-order jets of u*.
        let dom = Domain::hypercube(-1.0, 1.0, 15);
        let x = dom.sample_interior(1000, 6, 1, 0).unwrap();
        for row in x.rows() {
            let p = row.to_vec();
            let jets = Jet::point(&p);
            let u = exact(&jets);
            let a = coefficient(&jets);
            let grad_dot: f64 = (0..15).map(|k| a.grad(k) * u.grad(k)).sum();
            let lhs = -a.v * u.l - grad_dot;
            assert!((lhs - source(&Jet::point_const(&p)).v).abs() < 1e-8);
        }
    }
}
