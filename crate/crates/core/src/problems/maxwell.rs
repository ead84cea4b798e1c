use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::autodiff::Jet;
use crate::loss::{LossProblem, WeakForm};
use crate::network::{Activation, BoundaryEncoder, PointFn};
use crate::sampler::Domain;
use crate::system::FriedrichsSystem;
use crate::trainer::{NetSpec, TrainConfig};

use super::Problem;

/// Levi-Civita symbol on `{0, 1, 2}`.
fn levi_civita(i: usize, j: usize, k: usize) -> f64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

/// `A_k = [[0, R^k], [R^kᵀ, 0]]` with `R^k_ij = ε_ikj`, so that
/// `Σ A_k ∂_k (H, E) = (∇×E, −∇×H)`.
pub(super) fn maxwell_matrices() -> Vec<DMatrix<f64>> {
    (0..3)
        .map(|k| {
            let mut m = DMatrix::zeros(6, 6);
            for i in 0..3 {
                for j in 0..3 {
                    let r = levi_civita(i, k, j);
                    m[(i, 3 + j)] = r;
                    m[(3 + j, i)] = r;
                }
            }
            m
        })
        .collect()
}

fn exact(x: &[Jet]) -> Vec<Jet> {
    let (sx, sy, sz) = (x[0].sin(), x[1].sin(), x[2].sin());
    let (cx, cy, cz) = (x[0].cos(), x[1].cos(), x[2].cos());
    vec![
        &sx * (&cz - &cy),
        &sy * (&cx - &cz),
        &sz * (&cy - &cx),
        &sy * &sz,
        &sz * &sx,
        &sx * &sy,
    ]
}

/// `E_i` masks vanish on the faces where `E × n = 0` constrains `E_i`.
fn masks(x: &[Jet]) -> Vec<Jet> {
    let (sx, sy, sz) = (x[0].sin(), x[1].sin(), x[2].sin());
    vec![
        Jet::constant(1.0),
        Jet::constant(1.0),
        Jet::constant(1.0),
        &sy * &sz,
        &sz * &sx,
        &sx * &sy,
    ]
}

pub(super) fn maxwell() -> Problem {
    let a = maxwell_matrices();
    let f: PointFn = Arc::new(|x| {
        let (sx, sy, sz) = (x[0].sin(), x[1].sin(), x[2].sin());
        let z = Jet::constant(0.0);
        vec![z.clone(), z.clone(), z, (&sy * &sz) * 3.0, (&sz * &sx) * 3.0, (&sx * &sy) * 3.0]
    });
    let system = FriedrichsSystem {
        dim: 3,
        r: 6,
        a: Arc::new(move |_| a.clone()),
        c: Arc::new(|_| DMatrix::identity(6, 6)),
        div_a: Arc::new(|_| DMatrix::zeros(6, 6)),
        f,
        mu0: 1.0,
    };
    let zero: PointFn = super::zero_field(6);
    let encoder = BoundaryEncoder::new(Arc::new(masks), zero, 6);
    let exact_fn: PointFn = Arc::new(exact);
    let train = TrainConfig {
        iterations: 20_000,
        interior_points: 50_000,
        boundary_points: 0,
        lr_solution: 3e-6,
        lr_test: 3e-3,
        decay_solution: 8000.0,
        decay_test: 15_000.0,
        solution_net: NetSpec {
            width: 250,
            depth: 7,
            activation: Activation::Relu,
        },
        test_net: NetSpec {
            width: 50,
            depth: 7,
            activation: Activation::Tanh,
        },
        ..TrainConfig::default()
    };
    Problem {
        name: "maxwell-cube".into(),
        domain: Domain::hypercube(0.0, PI, 3),
        loss: LossProblem {
            form: WeakForm::Friedrichs(system.clone()),
            data: exact_fn.clone(),
            numerator_pieces: vec![],
            solution_pieces: (0..6).collect(),
            test_pieces: (0..6).collect(),
        },
        system,
        exact: exact_fn,
        continuous: true,
        solution_encoder: encoder.clone(),
        test_encoder: encoder,
        split: vec![1; 6],
        train,
        baseline: None,
        discontinuity: None,
        mu0: 1.0,
        probe_seed: 1006,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn operator_is_curl() {
        // Σ A_k ∂_k (0, E) for E = (0, 0, x) gives (∇×E, 0) = ((0, −1, 0), 0).
        let a = maxwell_matrices();
        let mut out = [0.0; 6];
        for (k, ak) in a.iter().enumerate() {
            let mut du = [0.0; 6];
            if k == 0 {
                du[5] = 1.0;
            }
            for i in 0..6 {
                out[i] += (0..6).map(|j| ak[(i, j)] * du[j]).sum::<f64>();
            }
        }
        assert_eq!(out, [0.0, -1.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
