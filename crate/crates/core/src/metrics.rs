//! Error metrics and verification oracles.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use serde::Serialize;
use thiserror::Error;

use crate::autodiff::Jet;
use crate::loss::{residual_functionals, LossError, LossPoints, LossProblem};
use crate::network::{
    Activation, BoundaryEncoder, DerivOrder, FieldBatch, FieldModel, NetworkError, PointFn, ResNetConfig,
    ResNetParams,
};
use crate::sampler::{Domain, SamplerError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("exact solution vanishes on all probe points")]
    ZeroReference,
    #[error("no probe points")]
    Empty,
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

/// Purpose tag of the fixed probe-point stream.
const PROBE_PURPOSE: u64 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorReport {
    pub l2: f64,
    /// Absent when the exact solution is discontinuous.
    pub linf: Option<f64>,
    pub points: usize,
}

/// The fixed probe set: `n` uniform interior points from a dedicated stream.
pub fn probe_points(domain: &Domain, n: usize, seed: u64) -> Result<Array2<f64>, MetricsError> {
    Ok(domain.sample_interior(n, seed, PROBE_PURPOSE, 0)?)
}

/// Relative discrete errors of `approx` against `exact` (both `n×r`).
pub fn relative_errors_of(approx: &Array2<f64>, exact: &Array2<f64>, with_linf: bool) -> Result<ErrorReport, MetricsError> {
    if approx.nrows() == 0 {
        return Err(MetricsError::Empty);
    }
    let diff = approx - exact;
    let num: f64 = diff.iter().map(|v| v * v).sum();
    let den: f64 = exact.iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(MetricsError::ZeroReference);
    }
    let linf = with_linf.then(|| {
        let top = diff.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let bottom = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        top / bottom
    });
    Ok(ErrorReport {
        l2: (num / den).sqrt(),
        linf,
        points: approx.nrows(),
    })
}

/// Relative errors of a field against a closed-form solution.
pub fn relative_errors(
    model: &FieldModel,
    exact: &PointFn,
    points: &Array2<f64>,
    with_linf: bool,
) -> Result<ErrorReport, MetricsError> {
    let approx = model.evaluate(points)?;
    let reference = FieldBatch::eval(exact, points, model.output_dim(), DerivOrder::Value).value;
    relative_errors_of(&approx, &reference, with_linf)
}

/// A field equal to the closed-form `f`, usable wherever a network field is.
pub fn closed_form_field(input_dim: usize, output_dim: usize, f: PointFn) -> FieldModel {
    let cfg = ResNetConfig {
        input_dim,
        output_dim,
        width: 1,
        depth: 1,
        activation: Activation::Relu,
    };
    let net = ResNetParams::zeros(cfg).expect("valid configuration");
    let zero: PointFn = Arc::new(move |_| vec![Jet::constant(0.0); output_dim]);
    FieldModel::new(vec![net], BoundaryEncoder::new(zero, f, output_dim)).expect("matching dimensions")
}

/// Moore–Penrose solve of `G x = r` with relative singular-value cutoff.
fn pinv_quadratic(gram: &Array2<f64>, r: &[f64]) -> f64 {
    let k = r.len();
    let g = DMatrix::from_fn(k, k, |i, j| gram[[i, j]]);
    let svd = g.svd(true, true);
    let smax = svd.singular_values.max();
    let rv = DVector::from_column_slice(r);
    let ut = svd.u.as_ref().expect("u requested").transpose();
    let proj = ut * rv;
    proj.iter()
        .zip(svd.singular_values.iter())
        .filter(|(_, s)| **s > 1e-12 * smax)
        .map(|(p, s)| p * p / s)
        .sum()
}

/// `sqrt(rᵀ G⁺ r)`: the largest ratio `|(u, T̃v) − (f, v) + ∮ vᵀ𝓑u| / ‖T̃v‖`
/// over `v` in the span of `basis`, with integrals taken on `pts`.
pub fn dual_norm_residual(
    problem: &LossProblem,
    sol: &FieldModel,
    basis: &[FieldModel],
    pts: &LossPoints,
) -> Result<f64, MetricsError> {
    let (r, g) = residual_functionals(problem, sol, basis, pts)?;
    Ok(pinv_quadratic(&g, &r).max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapReport {
    /// `|num| / ‖T̃φ_t‖` for the trained test field.
    pub achieved: f64,
    /// Closed-form maximum over the basis span.
    pub basis_maximum: f64,
}

/// Compares the trained test field's ratio with the best ratio over a fixed
/// basis. No ordering holds unless the test field lies in the span.
pub fn minimax_gap_probe(
    problem: &LossProblem,
    sol: &FieldModel,
    test: &FieldModel,
    basis: &[FieldModel],
    pts: &LossPoints,
) -> Result<GapReport, MetricsError> {
    let (r, g) = residual_functionals(problem, sol, std::slice::from_ref(test), pts)?;
    let norm = g[[0, 0]].max(0.0).sqrt();
    let achieved = if norm > 0.0 { r[0].abs() / norm } else { 0.0 };
    Ok(GapReport {
        achieved,
        basis_maximum: dual_norm_residual(problem, sol, basis, pts)?,
    })
}
