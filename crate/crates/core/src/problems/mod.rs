//! Experiment presets: PDE data, exact solutions, boundary encoders and
//! default training parameters.

mod advection;
mod elliptic;
mod maxwell;
mod wave;

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Jet;
use crate::loss::LossProblem;
use crate::network::{BoundaryEncoder, PointFn};
use crate::sampler::{sample_boundary, Domain, SamplerError};
use crate::system::{BoundaryKind, FriedrichsSystem, SystemError};
use crate::trainer::TrainConfig;

pub use advection::{discontinuous_exact, discontinuous_lift};
pub use elliptic::{elliptic_problem, elliptic_source_printed};
pub use wave::{curve_distance, wave_section};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("unknown preset {0:?}; known presets: {PRESETS:?}")]
    UnknownPreset(String),
    #[error("boundary piece {0} mixes inflow and outflow")]
    MixedPiece(String),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    System(#[from] SystemError),
}

pub const PRESETS: [&str; 6] = [
    "advection-discontinuous",
    "advection-fan",
    "advection-winding",
    "elliptic-15d",
    "wave-complex-domain",
    "maxwell-cube",
];

/// How the elliptic preset imposes its Dirichlet data on the solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EllipticBoundary {
    /// Unconstrained solution; the data enter through the boundary
    /// integral of the weak form.
    #[default]
    Weak,
    /// `u = h·û + g` with `h` vanishing on the boundary.
    Lifted,
}

/// A fully specified experiment.
#[derive(Clone)]
pub struct Problem {
    pub name: String,
    pub domain: Domain,
    /// Weak form and boundary roles used by the losses.
    pub loss: LossProblem,
    /// First-order system; for the elliptic preset this is the auxiliary
    /// flux form, used only for property checks.
    pub system: FriedrichsSystem,
    pub exact: PointFn,
    /// Whether the exact solution is continuous (enables the `L∞` error).
    pub continuous: bool,
    pub solution_encoder: BoundaryEncoder,
    pub test_encoder: BoundaryEncoder,
    /// Output components of each sub-network.
    pub split: Vec<usize>,
    pub train: TrainConfig,
    /// Strong-form least-squares comparison run, where one is defined.
    pub baseline: Option<TrainConfig>,
    /// Line `a x + b y + c = 0` across which the exact solution jumps.
    pub discontinuity: Option<[f64; 3]>,
    /// Coercivity constant the formulation is expected to satisfy: `μ₀` of
    /// the first-order system, or the ellipticity bound of `a` for the
    /// second-order form.
    pub mu0: f64,
    pub probe_seed: u64,
}

impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("split", &self.split)
            .finish()
    }
}

impl Problem {
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn components(&self) -> usize {
        self.split.iter().sum()
    }
}

pub fn preset(name: &str) -> Result<Problem, ProblemError> {
    match name {
        "advection-discontinuous" => Ok(advection::discontinuous()),
        "advection-fan" => Ok(advection::fan()),
        "advection-winding" => advection::winding(),
        "elliptic-15d" => Ok(elliptic_problem(15, EllipticBoundary::Weak)),
        "wave-complex-domain" => wave::wave(),
        "maxwell-cube" => Ok(maxwell::maxwell()),
        other => Err(ProblemError::UnknownPreset(other.to_string())),
    }
}

/// Scalar transport `β·∇u + μu = f`.
pub(crate) fn transport(
    dim: usize,
    beta: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    div_beta: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    mu: f64,
    f: PointFn,
    mu0: f64,
) -> FriedrichsSystem {
    FriedrichsSystem {
        dim,
        r: 1,
        a: Arc::new(move |x| beta(x).into_iter().map(|b| DMatrix::from_element(1, 1, b)).collect()),
        c: Arc::new(move |_| DMatrix::from_element(1, 1, mu)),
        div_a: Arc::new(move |x| DMatrix::from_element(1, 1, div_beta(x))),
        f,
        mu0,
    }
}

pub(crate) fn zero_field(r: usize) -> PointFn {
    Arc::new(move |_| vec![Jet::constant(0.0); r])
}

/// Pieces of a scalar transport problem grouped as (inflow, outflow,
/// characteristic), judged from 64 samples per piece.
pub fn classify_pieces(
    system: &FriedrichsSystem,
    domain: &Domain,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>), ProblemError> {
    let pieces = domain.pieces();
    let (mut inflow, mut outflow, mut neutral) = (Vec::new(), Vec::new(), Vec::new());
    for (i, piece) in pieces.iter().enumerate() {
        let (pts, nrm, _, _) = sample_boundary(domain, 64, &[i], 0, 0, 0)?;
        let (mut any_in, mut any_out) = (false, false);
        for k in 0..pts.nrows() {
            match system.classify(&pts.row(k).to_vec(), &nrm.row(k).to_vec(), 1e-12)? {
                BoundaryKind::Inflow => any_in = true,
                BoundaryKind::Outflow => any_out = true,
                BoundaryKind::Characteristic => {}
            }
        }
        match (any_in, any_out) {
            (true, true) => return Err(ProblemError::MixedPiece(piece.name.clone())),
            (true, false) => inflow.push(i),
            (false, true) => outflow.push(i),
            (false, false) => neutral.push(i),
        }
    }
    Ok((inflow, outflow, neutral))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{DerivOrder, FieldBatch};

    #[test]
    fn every_preset_builds_and_matches_its_dimensions() {
        for name in PRESETS {
            let p = preset(name).unwrap();
            assert_eq!(p.loss.form.dim(), p.dim(), "{name}");
            assert_eq!(p.loss.form.components(), p.components(), "{name}");
            assert_eq!(p.solution_encoder.output_dim, p.components(), "{name}");
            let x = p.domain.sample_interior(5, 1, 1, 0).unwrap();
            let v = FieldBatch::eval(&p.exact, &x, p.components(), DerivOrder::Value).value;
            assert!(v.iter().all(|v| v.is_finite()), "{name}");
        }
        assert!(matches!(preset("nope"), Err(ProblemError::UnknownPreset(_))));
    }
}
