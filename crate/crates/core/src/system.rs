//! First-order Friedrichs systems `Tu = Σ_k A_k ∂_k u + C u = f`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{Array2, Axis};
use thiserror::Error;

use crate::autodiff::{Graph, Jet, Var};
use crate::network::{DerivOrder, FieldBatch, FieldModel, NetworkError, PointFn};

#[derive(Debug, Error)]
pub enum SystemError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("normal vector has length {0}, expected 1")]
    NonUnitNormal(f64),
    #[error("coercive shift needs c >= 0, got {0}")]
    InvalidShift(f64),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

pub type MatricesFn = Arc<dyn Fn(&[f64]) -> Vec<DMatrix<f64>> + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// Coefficient fields and data of a Friedrichs system on `d` coordinates with `r` unknowns.
#[derive(Clone)]
pub struct FriedrichsSystem {
    pub dim: usize,
    pub r: usize,
    /// `A_1(x), …, A_d(x)`, each symmetric `r×r`.
    pub a: MatricesFn,
    pub c: MatrixFn,
    /// `Σ_k ∂_k A_k(x)`, supplied in closed form.
    pub div_a: MatrixFn,
    pub f: PointFn,
    /// Coercivity constant the system is expected to satisfy.
    pub mu0: f64,
}

impl fmt::Debug for FriedrichsSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FriedrichsSystem")
            .field("dim", &self.dim)
            .field("r", &self.r)
            .field("mu0", &self.mu0)
            .finish()
    }
}

/// Coefficients of a system sampled at a batch of points, flattened per row
/// (`r×r` matrices in row-major order) for the tape's per-row products.
#[derive(Debug, Clone)]
pub struct CoefficientBatch {
    /// Block `k` (rows `kn..(k+1)n`) holds `A_k`, shape `dn × r²`.
    pub a_stacked: Array2<f64>,
    /// `C`, shape `n × r²`.
    pub c: Array2<f64>,
    /// `Cᵀ − div A`, shape `n × r²`.
    pub adjoint_zeroth: Array2<f64>,
    /// `f`, shape `n × r`.
    pub f: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoercivityReport {
    /// Smallest `λ_min(C + Cᵀ − div A)/2` over the samples.
    pub mu0: f64,
    pub coercive: bool,
}

/// Role of a boundary portion for transport-type problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    /// `𝓑 < 0`: the solution carries data here.
    Inflow,
    /// `𝓑 > 0`: the test function vanishes here.
    Outflow,
    /// `𝓑 = 0`: no condition on either network.
    Characteristic,
}

fn flatten(m: &DMatrix<f64>, out: &mut [f64]) {
    let r = m.nrows();
    for i in 0..r {
        for j in 0..m.ncols() {
            out[i * r + j] = m[(i, j)];
        }
    }
}

impl FriedrichsSystem {
    /// Evaluates all coefficient fields on `points` (`n × d`).
    pub fn coefficients(&self, points: &Array2<f64>) -> Result<CoefficientBatch, SystemError> {
        let (n, d) = points.dim();
        if d != self.dim {
            return Err(SystemError::Dimension(format!(
                "points have {d} coordinates, system has {}",
                self.dim
            )));
        }
        let r = self.r;
        let rr = r * r;
        let mut a_stacked = Array2::zeros((d * n, rr));
        let mut c = Array2::zeros((n, rr));
        let mut adj = Array2::zeros((n, rr));
        for (i, p) in points.axis_iter(Axis(0)).enumerate() {
            let x = p.to_vec();
            let a = (self.a)(&x);
            for (k, ak) in a.iter().enumerate() {
                flatten(ak, a_stacked.row_mut(k * n + i).as_slice_mut().expect("contiguous"));
            }
            let ci = (self.c)(&x);
            flatten(&ci, c.row_mut(i).as_slice_mut().expect("contiguous"));
            let m = ci.transpose() - (self.div_a)(&x);
            flatten(&m, adj.row_mut(i).as_slice_mut().expect("contiguous"));
        }
        let f = FieldBatch::eval(&self.f, points, r, DerivOrder::Value).value;
        Ok(CoefficientBatch {
            a_stacked,
            c,
            adjoint_zeroth: adj,
            f,
        })
    }

    /// Records `T̃v = −Σ A_k ∂_k v + (Cᵀ − div A) v` from traced values
    /// (`n×r`) and stacked gradients (`dn×r`).
    pub fn adjoint_trace(&self, g: &mut Graph, coef: &CoefficientBatch, value: Var, gradient: Var) -> Var {
        let a = g.constant(coef.a_stacked.clone());
        let m = g.constant(coef.adjoint_zeroth.clone());
        let flux = g.matvec(a, gradient, self.r);
        let flux = g.sum_tiles(flux, self.dim);
        let zeroth = g.matvec(m, value, self.r);
        g.sub(zeroth, flux)
    }

    /// Records `Tu = Σ A_k ∂_k u + C u`.
    pub fn forward_trace(&self, g: &mut Graph, coef: &CoefficientBatch, value: Var, gradient: Var) -> Var {
        let a = g.constant(coef.a_stacked.clone());
        let c = g.constant(coef.c.clone());
        let flux = g.matvec(a, gradient, self.r);
        let flux = g.sum_tiles(flux, self.dim);
        let zeroth = g.matvec(c, value, self.r);
        g.add(flux, zeroth)
    }

    fn check_model(&self, model: &FieldModel) -> Result<(), SystemError> {
        if model.output_dim() != self.r || model.input_dim() != self.dim {
            return Err(SystemError::Dimension(format!(
                "field maps R^{} -> R^{}, system needs R^{} -> R^{}",
                model.input_dim(),
                model.output_dim(),
                self.dim,
                self.r
            )));
        }
        Ok(())
    }

    fn apply_model(&self, model: &FieldModel, points: &Array2<f64>, adjoint: bool) -> Result<Array2<f64>, SystemError> {
        self.check_model(model)?;
        let coef = self.coefficients(points)?;
        let mut g = Graph::new();
        let x = g.constant(points.clone());
        let t = model.trace(&mut g, x, DerivOrder::Gradient, false)?;
        let grad = t.gradient.expect("gradient requested");
        let out = if adjoint {
            self.adjoint_trace(&mut g, &coef, t.value, grad)
        } else {
            self.forward_trace(&mut g, &coef, t.value, grad)
        };
        Ok(g.value(out).clone())
    }

    /// `T̃v` for a network field on a batch.
    pub fn adjoint_apply(&self, model: &FieldModel, points: &Array2<f64>) -> Result<Array2<f64>, SystemError> {
        self.apply_model(model, points, true)
    }

    /// `Tu` for a network field on a batch.
    pub fn forward_apply(&self, model: &FieldModel, points: &Array2<f64>) -> Result<Array2<f64>, SystemError> {
        self.apply_model(model, points, false)
    }

    /// `T̃v` at one point for a closed-form field.
    pub fn adjoint_apply_exact(&self, x: &[f64], v: &PointFn) -> Vec<f64> {
        self.apply_exact(x, v, true)
    }

    /// `Tu` at one point for a closed-form field.
    pub fn forward_apply_exact(&self, x: &[f64], u: &PointFn) -> Vec<f64> {
        self.apply_exact(x, u, false)
    }

    fn apply_exact(&self, x: &[f64], w: &PointFn, adjoint: bool) -> Vec<f64> {
        let jets = w(&Jet::point(x));
        let val = DVector::from_iterator(self.r, jets.iter().map(|j| j.v));
        let a = (self.a)(x);
        let mut flux = DVector::zeros(self.r);
        for (k, ak) in a.iter().enumerate() {
            let dk = DVector::from_iterator(self.r, jets.iter().map(|j| j.grad(k)));
            flux += ak * dk;
        }
        let c = (self.c)(x);
        let out = if adjoint {
            (c.transpose() - (self.div_a)(x)) * val - flux
        } else {
            c * val + flux
        };
        out.iter().copied().collect()
    }

    /// `f(x)` at one point.
    pub fn source(&self, x: &[f64]) -> Vec<f64> {
        (self.f)(&Jet::point_const(x)).iter().map(|j| j.v).collect()
    }

    /// `𝓑 = Σ n_k A_k(x)`.
    pub fn boundary_matrix(&self, x: &[f64], normal: &[f64]) -> Result<DMatrix<f64>, SystemError> {
        if normal.len() != self.dim {
            return Err(SystemError::Dimension(format!(
                "normal has {} components, system has {}",
                normal.len(),
                self.dim
            )));
        }
        let len = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (len - 1.0).abs() > 1e-10 {
            return Err(SystemError::NonUnitNormal(len));
        }
        let a = (self.a)(x);
        let mut b = DMatrix::zeros(self.r, self.r);
        for (ak, nk) in a.iter().zip(normal) {
            b += ak * *nk;
        }
        Ok(b)
    }

    /// Classifies a boundary point of a scalar system by the sign of `𝓑`.
    pub fn classify(&self, x: &[f64], normal: &[f64], tol: f64) -> Result<BoundaryKind, SystemError> {
        let b = self.boundary_matrix(x, normal)?;
        let eig = SymmetricEigen::new(b);
        let lo = eig.eigenvalues.min();
        let hi = eig.eigenvalues.max();
        Ok(if hi <= tol && lo < -tol {
            BoundaryKind::Inflow
        } else if lo >= -tol && hi > tol {
            BoundaryKind::Outflow
        } else {
            BoundaryKind::Characteristic
        })
    }

    /// Largest asymmetry `max |A_k − A_kᵀ|` over the samples.
    pub fn symmetry_defect(&self, points: &Array2<f64>) -> f64 {
        points
            .axis_iter(Axis(0))
            .flat_map(|p| (self.a)(&p.to_vec()))
            .map(|ak| (&ak - ak.transpose()).amax())
            .fold(0.0, f64::max)
    }

    /// Empirical coercivity constant `min λ_min(C + Cᵀ − div A)/2`.
    pub fn coercivity_check(&self, points: &Array2<f64>) -> CoercivityReport {
        let mu0 = points
            .axis_iter(Axis(0))
            .map(|p| {
                let x = p.to_vec();
                let c = (self.c)(&x);
                let s = &c + c.transpose() - (self.div_a)(&x);
                SymmetricEigen::new(s).eigenvalues.min() / 2.0
            })
            .fold(f64::INFINITY, f64::min);
        CoercivityReport {
            mu0,
            coercive: mu0 > 0.0,
        }
    }

    /// The system for `v = e^{−ct} u`, with time as coordinate 0.
    ///
    /// `C` becomes `C + c·A_0` (which is `C + cI` for transport with unit
    /// time coefficient) and `f` becomes `e^{−ct} f`. `c = 0` returns the
    /// system unchanged.
    pub fn coercive_shift(&self, c: f64) -> Result<FriedrichsSystem, SystemError> {
        if !(c >= 0.0) || !c.is_finite() {
            return Err(SystemError::InvalidShift(c));
        }
        if c == 0.0 {
            return Ok(self.clone());
        }
        let old_c = self.c.clone();
        let a = self.a.clone();
        let old_f = self.f.clone();
        Ok(FriedrichsSystem {
            c: Arc::new(move |x| old_c(x) + &a(x)[0] * c),
            f: Arc::new(move |x| {
                let damp = (&x[0] * (-c)).exp();
                old_f(x).iter().map(|fi| fi * &damp).collect()
            }),
            mu0: self.mu0 + c,
            ..self.clone()
        })
    }
}
