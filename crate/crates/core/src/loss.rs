//! Empirical minimax loss and its baselines.
//!
//! Every loss is assembled from a handful of weighted sums over the sample
//! points (numerator, squared test norm, two penalty terms). Points are
//! processed in fixed-size chunks, each on its own tape, and the sums are
//! reduced in chunk order, so results do not depend on the thread count.
//! Gradients follow from the chain rule through the combined scalar.

use std::sync::Arc;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Graph, Jet, Var};
use crate::network::{DerivOrder, FieldBatch, FieldModel, NetworkError, PointFn, TracedField};
use crate::quadrature::Rule;
use crate::sampler::SampleBatch;
use crate::system::{FriedrichsSystem, SystemError};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("test-function norm {0:e} is below the degeneracy threshold")]
    DegenerateDenominator(f64),
    #[error("invalid loss configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    System(#[from] SystemError),
}

/// Below this the test function is treated as zero.
pub const DEGENERATE_NORM: f64 = 1e-14;
/// Floor inside the logarithmic penalty.
pub const LOG_FLOOR: f64 = 1e-30;
/// Rows per tape.
pub const CHUNK_ROWS: usize = 2048;
/// Tapes are kept between the value and gradient passes while their total
/// size stays under this; otherwise chunks are re-recorded.
const KEEP_BYTES: usize = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Denominator {
    /// Mean of `‖T̃φ_t‖²`.
    #[default]
    PaperSquared,
    /// Square root of the same mean, an estimate of `‖T̃φ_t‖`.
    SqrtNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// Plain averages `1/N₁` and `1/N₂`.
    #[default]
    PaperAverages,
    /// `|Ω|/N₁` and `|∂Ω'|/N₂`, so sums estimate integrals.
    MeasureWeighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryHandling {
    /// Conditions hold by construction of the fields.
    #[default]
    HardEncoded,
    /// Conditions enforced by penalty terms.
    Penalty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyForm {
    #[default]
    Squared,
    /// `log(max(S, 1e-30))`.
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub denominator: Denominator,
    pub weighting: Weighting,
    pub boundary: BoundaryHandling,
    pub penalty_form: PenaltyForm,
    /// Weight of the solution penalty.
    pub lambda_s: f64,
    /// Weight of the test penalty.
    pub lambda_t: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            denominator: Denominator::PaperSquared,
            weighting: Weighting::PaperAverages,
            boundary: BoundaryHandling::HardEncoded,
            penalty_form: PenaltyForm::Squared,
            lambda_s: 1.0,
            lambda_t: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        for (name, v) in [("lambda_s", self.lambda_s), ("lambda_t", self.lambda_t)] {
            if !v.is_finite() || v < 0.0 {
                return Err(LossError::InvalidConfig(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    fn penalised(&self) -> bool {
        self.boundary == BoundaryHandling::Penalty
    }
}

/// Scalar coefficient field evaluated on jets.
pub type ScalarFn = Arc<dyn Fn(&[Jet]) -> Jet + Send + Sync>;

/// `Lu = −∇·(a∇u) + μu` on `dim` coordinates.
#[derive(Clone)]
pub struct EllipticOperator {
    pub dim: usize,
    pub a: ScalarFn,
    pub mu: f64,
    pub f: PointFn,
}

impl std::fmt::Debug for EllipticOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EllipticOperator")
            .field("dim", &self.dim)
            .field("mu", &self.mu)
            .finish()
    }
}

impl EllipticOperator {
    /// `a` (`n×1`) and `∇a` stacked by coordinate (`dn×1`).
    fn coefficient(&self, points: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let a = self.a.clone();
        let wrapped: PointFn = Arc::new(move |x| vec![a(x)]);
        let b = FieldBatch::eval(&wrapped, points, 1, DerivOrder::Gradient);
        (b.value, b.gradient.expect("gradient requested"))
    }

    fn source(&self, points: &Array2<f64>) -> Array2<f64> {
        FieldBatch::eval(&self.f, points, 1, DerivOrder::Value).value
    }
}

#[derive(Debug, Clone)]
pub enum WeakForm {
    /// Ultra-weak form of a Friedrichs system.
    Friedrichs(FriedrichsSystem),
    /// Doubly integrated scalar elliptic problem; test functions vanish on
    /// the boundary and the Dirichlet data enter through `∮ g a ∂ₙψ`.
    Elliptic(EllipticOperator),
}

impl WeakForm {
    pub fn dim(&self) -> usize {
        match self {
            WeakForm::Friedrichs(s) => s.dim,
            WeakForm::Elliptic(e) => e.dim,
        }
    }

    pub fn components(&self) -> usize {
        match self {
            WeakForm::Friedrichs(s) => s.r,
            WeakForm::Elliptic(_) => 1,
        }
    }
}

/// A weak form together with its boundary data and the roles of the
/// boundary pieces.
#[derive(Clone)]
pub struct LossProblem {
    pub form: WeakForm,
    /// Dirichlet or inflow data `g`.
    pub data: PointFn,
    /// Pieces carrying the numerator's boundary integral.
    pub numerator_pieces: Vec<usize>,
    /// Pieces where the solution is penalised towards `g`.
    pub solution_pieces: Vec<usize>,
    /// Pieces where the test function is penalised towards zero.
    pub test_pieces: Vec<usize>,
}

impl std::fmt::Debug for LossProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LossProblem")
            .field("form", &self.form)
            .field("numerator_pieces", &self.numerator_pieces)
            .field("solution_pieces", &self.solution_pieces)
            .field("test_pieces", &self.test_pieces)
            .finish()
    }
}

impl LossProblem {
    /// Pieces to sample boundary points from under `cfg`.
    pub fn sampled_pieces(&self, cfg: &LossConfig) -> Vec<usize> {
        let mut out = self.numerator_pieces.clone();
        if cfg.penalised() {
            out.extend(&self.solution_pieces);
            out.extend(&self.test_pieces);
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Weighted interior and boundary points.
#[derive(Debug, Clone)]
pub struct LossPoints {
    pub interior: Array2<f64>,
    pub interior_weights: Vec<f64>,
    pub boundary: Array2<f64>,
    pub normals: Array2<f64>,
    pub pieces: Vec<usize>,
    pub boundary_weights: Vec<f64>,
}

impl LossPoints {
    pub fn from_batch(batch: &SampleBatch, weighting: Weighting) -> LossPoints {
        let (n1, n2) = (batch.interior.nrows(), batch.boundary.nrows());
        let (w1, w2) = match weighting {
            Weighting::PaperAverages => (1.0 / n1.max(1) as f64, 1.0 / n2.max(1) as f64),
            Weighting::MeasureWeighted => (batch.volume_weight, batch.surface_weight),
        };
        LossPoints {
            interior: batch.interior.clone(),
            interior_weights: vec![w1; n1],
            boundary: batch.boundary.clone(),
            normals: batch.normals.clone(),
            pieces: batch.pieces.clone(),
            boundary_weights: vec![w2; n2],
        }
    }

    /// Deterministic quadrature: `surface` must carry normals and
    /// `pieces[i]` names the piece of surface node `i`.
    pub fn from_rules(volume: &Rule, surface: &Rule, pieces: Vec<usize>) -> Result<LossPoints, LossError> {
        let d = volume.points.ncols();
        let normals = match &surface.normals {
            Some(n) => n.clone(),
            None if surface.is_empty() => Array2::zeros((0, d)),
            None => return Err(LossError::Shape("surface rule has no normals".into())),
        };
        if pieces.len() != surface.len() {
            return Err(LossError::Shape("one piece index per surface node".into()));
        }
        Ok(LossPoints {
            interior: volume.points.clone(),
            interior_weights: volume.weights.clone(),
            boundary: if surface.is_empty() { Array2::zeros((0, d)) } else { surface.points.clone() },
            normals,
            pieces,
            boundary_weights: surface.weights.clone(),
        })
    }
}

/// Which network's parameters to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wrt {
    Solution,
    Test,
}

/// Components of a loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossValue {
    pub value: f64,
    /// Signed numerator.
    pub numerator: f64,
    /// Denominator after the configured transform.
    pub denominator: f64,
    pub penalty_s: f64,
    pub penalty_t: f64,
}

/// Loss value with optional parameter gradients in
/// [`FieldModel::tensors`] order.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: LossValue,
    pub grads: Option<Vec<Array2<f64>>>,
}

const NUM: usize = 0;
const DEN: usize = 1;
const PEN_S: usize = 2;
const PEN_T: usize = 3;

struct ChunkTape {
    graph: Graph,
    sums: [Option<Var>; 4],
    traced: Option<TracedField>,
}

impl ChunkTape {
    fn values(&self) -> [f64; 4] {
        let mut out = [0.0; 4];
        for (o, s) in out.iter_mut().zip(&self.sums) {
            if let Some(v) = s {
                *o = self.graph.scalar(*v);
            }
        }
        out
    }
}

#[derive(Clone, Copy)]
enum Chunk {
    Interior(usize, usize),
    Boundary(usize, usize),
}

fn chunks(pts: &LossPoints) -> Vec<Chunk> {
    let mut out = Vec::new();
    let n1 = pts.interior.nrows();
    let n2 = pts.boundary.nrows();
    for s in (0..n1).step_by(CHUNK_ROWS) {
        out.push(Chunk::Interior(s, CHUNK_ROWS.min(n1 - s)));
    }
    for s in (0..n2).step_by(CHUNK_ROWS) {
        out.push(Chunk::Boundary(s, CHUNK_ROWS.min(n2 - s)));
    }
    out
}

fn rows(a: &Array2<f64>, start: usize, len: usize) -> Array2<f64> {
    a.slice(ndarray::s![start..start + len, ..]).to_owned()
}

fn column(w: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((w.len(), 1), w.to_vec()).expect("column")
}

/// Boundary weights restricted to `set`.
fn masked_weights(pts: &LossPoints, start: usize, len: usize, set: &[usize]) -> Option<Array2<f64>> {
    let w: Vec<f64> = (start..start + len)
        .map(|i| if set.contains(&pts.pieces[i]) { pts.boundary_weights[i] } else { 0.0 })
        .collect();
    if w.iter().all(|v| *v == 0.0) {
        None
    } else {
        Some(column(&w))
    }
}

/// `Σ w_i q_i` for a column `q`.
fn weighted_sum(g: &mut Graph, q: Var, w: Array2<f64>) -> Var {
    let wv = g.constant(w);
    let p = g.mul_col(q, wv);
    g.sum(p)
}

fn squared_rows(g: &mut Graph, x: Var) -> Var {
    g.row_dot(x, x)
}

fn trace_pair(
    g: &mut Graph,
    x: Var,
    sol: &FieldModel,
    sol_order: DerivOrder,
    test: &FieldModel,
    test_order: DerivOrder,
    wrt: Option<Wrt>,
) -> Result<(TracedField, TracedField), LossError> {
    let s = sol.trace(g, x, sol_order, wrt == Some(Wrt::Solution))?;
    let t = test.trace(g, x, test_order, wrt == Some(Wrt::Test))?;
    Ok((s, t))
}

fn data_batch(data: &PointFn, points: &Array2<f64>, r: usize) -> Array2<f64> {
    FieldBatch::eval(data, points, r, DerivOrder::Value).value
}

fn record_minimax_chunk(
    problem: &LossProblem,
    sol: &FieldModel,
    test: &FieldModel,
    pts: &LossPoints,
    cfg: &LossConfig,
    wrt: Option<Wrt>,
    chunk: Chunk,
) -> Result<ChunkTape, LossError> {
    let mut g = Graph::new();
    let mut sums = [None; 4];
    let r = problem.form.components();
    let (s, t) = match (&problem.form, chunk) {
        (WeakForm::Friedrichs(sys), Chunk::Interior(start, len)) => {
            let p = rows(&pts.interior, start, len);
            let coef = sys.coefficients(&p)?;
            let x = g.constant(p);
            let (s, t) = trace_pair(&mut g, x, sol, DerivOrder::Value, test, DerivOrder::Gradient, wrt)?;
            let tv = sys.adjoint_trace(&mut g, &coef, t.value, t.gradient.expect("gradient requested"));
            let f = g.constant(coef.f);
            let a = g.row_dot(s.value, tv);
            let b = g.row_dot(f, t.value);
            let q = g.sub(a, b);
            let w = column(&pts.interior_weights[start..start + len]);
            sums[NUM] = Some(weighted_sum(&mut g, q, w.clone()));
            let d = squared_rows(&mut g, tv);
            sums[DEN] = Some(weighted_sum(&mut g, d, w));
            (s, t)
        }
        (WeakForm::Elliptic(op), Chunk::Interior(start, len)) => {
            let p = rows(&pts.interior, start, len);
            let (a, da) = op.coefficient(&p);
            let f = op.source(&p);
            let dim = op.dim;
            let x = g.constant(p);
            let (s, t) = trace_pair(&mut g, x, sol, DerivOrder::Value, test, DerivOrder::Laplacian, wrt)?;
            let lt = elliptic_apply(&mut g, op.mu, dim, a, da, &t);
            let fv = g.constant(f);
            let u_l = g.mul(s.value, lt);
            let f_t = g.mul(fv, t.value);
            let q = g.sub(u_l, f_t);
            let w = column(&pts.interior_weights[start..start + len]);
            sums[NUM] = Some(weighted_sum(&mut g, q, w.clone()));
            let d = squared_rows(&mut g, lt);
            sums[DEN] = Some(weighted_sum(&mut g, d, w));
            (s, t)
        }
        (form, Chunk::Boundary(start, len)) => {
            let p = rows(&pts.boundary, start, len);
            let nrm = rows(&pts.normals, start, len);
            let elliptic = matches!(form, WeakForm::Elliptic(_));
            let test_order = if elliptic { DerivOrder::Gradient } else { DerivOrder::Value };
            let gdata = data_batch(&problem.data, &p, r);
            let x = g.constant(p.clone());
            let (s, t) = trace_pair(&mut g, x, sol, DerivOrder::Value, test, test_order, wrt)?;
            if let Some(w) = masked_weights(pts, start, len, &problem.numerator_pieces) {
                let q = match form {
                    WeakForm::Friedrichs(sys) => {
                        let mut bm = Array2::zeros((len, r * r));
                        for i in 0..len {
                            let m = sys.boundary_matrix(&p.row(i).to_vec(), &nrm.row(i).to_vec())?;
                            for a in 0..r {
                                for b in 0..r {
                                    bm[[i, a * r + b]] = m[(a, b)];
                                }
                            }
                        }
                        let bv = g.constant(bm);
                        let bu = g.matvec(bv, s.value, r);
                        g.row_dot(t.value, bu)
                    }
                    WeakForm::Elliptic(op) => {
                        let (a, _) = op.coefficient(&p);
                        let dn = normal_derivative(&mut g, &nrm, t.gradient.expect("gradient requested"));
                        let ga = g.constant(&gdata * &a);
                        g.mul(ga, dn)
                    }
                };
                sums[NUM] = Some(weighted_sum(&mut g, q, w));
            }
            if cfg.penalised() {
                if let Some(w) = masked_weights(pts, start, len, &problem.solution_pieces) {
                    let gv = g.constant(gdata);
                    let diff = g.sub(s.value, gv);
                    let q = squared_rows(&mut g, diff);
                    sums[PEN_S] = Some(weighted_sum(&mut g, q, w));
                }
                if let Some(w) = masked_weights(pts, start, len, &problem.test_pieces) {
                    let q = squared_rows(&mut g, t.value);
                    sums[PEN_T] = Some(weighted_sum(&mut g, q, w));
                }
            }
            (s, t)
        }
    };
    let traced = match wrt {
        Some(Wrt::Solution) => Some(s),
        Some(Wrt::Test) => Some(t),
        None => None,
    };
    Ok(ChunkTape { graph: g, sums, traced })
}

/// `∂ₙψ` from a stacked `dn×1` gradient.
fn normal_derivative(g: &mut Graph, normals: &Array2<f64>, gradient: Var) -> Var {
    let (n, d) = normals.dim();
    let mut stacked = Array2::zeros((d * n, 1));
    for k in 0..d {
        for i in 0..n {
            stacked[[k * n + i, 0]] = normals[[i, k]];
        }
    }
    let nv = g.constant(stacked);
    let p = g.mul(nv, gradient);
    g.sum_tiles(p, d)
}

/// `μψ − aΔψ − ∇a·∇ψ`.
fn elliptic_apply(g: &mut Graph, mu: f64, dim: usize, a: Array2<f64>, da: Array2<f64>, t: &TracedField) -> Var {
    let av = g.constant(a);
    let dav = g.constant(da);
    let lap = g.mul(av, t.laplacian.expect("laplacian requested"));
    let cross = g.mul(dav, t.gradient.expect("gradient requested"));
    let cross = g.sum_tiles(cross, dim);
    let second = g.add(lap, cross);
    let zeroth = g.scale(t.value, mu);
    g.sub(zeroth, second)
}

fn penalty(form: PenaltyForm, s: f64) -> (f64, f64) {
    match form {
        PenaltyForm::Squared => (s, 1.0),
        PenaltyForm::Log => {
            if s > LOG_FLOOR {
                (s.ln(), 1.0 / s)
            } else {
                (LOG_FLOOR.ln(), 0.0)
            }
        }
    }
}

/// Combines the four sums into the minimax loss and its partials.
fn combine_minimax(sums: [f64; 4], cfg: &LossConfig) -> Result<(LossValue, [f64; 4]), LossError> {
    let num = sums[NUM];
    let raw = sums[DEN];
    let (den, dden) = match cfg.denominator {
        Denominator::PaperSquared => (raw, 1.0),
        Denominator::SqrtNorm => {
            let s = raw.max(0.0).sqrt();
            (s, if s > 0.0 { 0.5 / s } else { 0.0 })
        }
    };
    if !(den >= DEGENERATE_NORM) {
        return Err(LossError::DegenerateDenominator(den));
    }
    let ratio = num.abs() / den;
    let mut coef = [0.0; 4];
    coef[NUM] = num.signum() / den;
    coef[DEN] = -ratio / den * dden;
    let (mut ps, mut pt) = (0.0, 0.0);
    if cfg.penalised() {
        let (v, dv) = penalty(cfg.penalty_form, sums[PEN_S]);
        ps = v;
        coef[PEN_S] = cfg.lambda_s * dv;
        let (v, dv) = penalty(cfg.penalty_form, sums[PEN_T]);
        pt = v;
        coef[PEN_T] = -cfg.lambda_t * dv;
    }
    Ok((
        LossValue {
            value: ratio + cfg.lambda_s * ps - cfg.lambda_t * pt,
            numerator: num,
            denominator: den,
            penalty_s: ps,
            penalty_t: pt,
        },
        coef,
    ))
}

/// Runs `record` on every chunk, reduces the sums in chunk order, and
/// back-propagates `Σ coef_i S_i` when gradients are requested.
fn run<R, C>(
    n_chunks: usize,
    record: R,
    combine: C,
    grad_model: Option<&FieldModel>,
) -> Result<LossEval, LossError>
where
    R: Fn(usize) -> Result<ChunkTape, LossError> + Sync,
    C: Fn([f64; 4]) -> Result<(LossValue, [f64; 4]), LossError>,
{
    let mut tapes: Vec<Option<ChunkTape>> = Vec::with_capacity(n_chunks);
    let mut per_chunk: Vec<[f64; 4]> = Vec::with_capacity(n_chunks);
    if n_chunks > 0 {
        let first = record(0)?;
        per_chunk.push(first.values());
        let keep = grad_model.is_some() && first.graph.bytes().saturating_mul(n_chunks) <= KEEP_BYTES;
        tapes.push(keep.then_some(first));
        // Tapes that will not be kept are dropped as soon as their sums are read.
        let rest: Vec<([f64; 4], Option<ChunkTape>)> = (1..n_chunks)
            .into_par_iter()
            .map(|i| record(i).map(|t| (t.values(), keep.then_some(t))))
            .collect::<Result<_, _>>()?;
        for (v, t) in rest {
            per_chunk.push(v);
            tapes.push(t);
        }
    }
    let mut sums = [0.0; 4];
    for c in &per_chunk {
        for (s, v) in sums.iter_mut().zip(c) {
            *s += v;
        }
    }
    let (loss, coef) = combine(sums)?;
    let Some(model) = grad_model else {
        return Ok(LossEval { loss, grads: None });
    };
    let parts: Vec<Vec<Array2<f64>>> = tapes
        .into_par_iter()
        .enumerate()
        .map(|(i, kept)| {
            let mut tape = match kept {
                Some(t) => t,
                None => record(i)?,
            };
            let g = &mut tape.graph;
            let mut root: Option<Var> = None;
            for (s, c) in tape.sums.iter().zip(coef) {
                if let Some(v) = s {
                    if c != 0.0 {
                        let term = g.scale(*v, c);
                        root = Some(match root {
                            Some(r) => g.add(r, term),
                            None => term,
                        });
                    }
                }
            }
            let traced = tape.traced.as_ref().expect("gradients requested");
            match root {
                Some(root) if g.requires_grad(root) => {
                    let grads = g.backward(root, 1.0).map_err(NetworkError::Autodiff)?;
                    Ok(model.collect_grads(&grads, traced))
                }
                _ => Ok(model.tensors().iter().map(|t| Array2::zeros(t.dim())).collect()),
            }
        })
        .collect::<Result<_, LossError>>()?;
    let mut total: Vec<Array2<f64>> = model.tensors().iter().map(|t| Array2::zeros(t.dim())).collect();
    for p in parts {
        for (t, g) in total.iter_mut().zip(p) {
            *t += &g;
        }
    }
    Ok(LossEval { loss, grads: Some(total) })
}

fn check_models(problem: &LossProblem, models: &[&FieldModel]) -> Result<(), LossError> {
    let (d, r) = (problem.form.dim(), problem.form.components());
    for m in models {
        if m.input_dim() != d || m.output_dim() != r {
            return Err(LossError::Shape(format!(
                "field maps R^{} -> R^{}, problem needs R^{d} -> R^{r}",
                m.input_dim(),
                m.output_dim()
            )));
        }
    }
    Ok(())
}

/// Minimax loss `|num| / den + λ₁P(φ_s) − λ₂P(φ_t)` on weighted points,
/// with gradients for the network named by `wrt`.
///
/// The numerator is `Σ w (φ_s·T̃φ_t − f·φ_t) + Σ w_b φ_tᵀ𝓑φ_s` for
/// Friedrichs systems and `Σ w (φ_s Lψ − fψ) + Σ w_b g a ∂ₙψ` for elliptic
/// problems; the denominator is built from `Σ w ‖T̃φ_t‖²` (resp. `(Lψ)²`).
pub fn minimax_loss(
    problem: &LossProblem,
    sol: &FieldModel,
    test: &FieldModel,
    pts: &LossPoints,
    cfg: &LossConfig,
    wrt: Option<Wrt>,
) -> Result<LossEval, LossError> {
    cfg.validate()?;
    check_models(problem, &[sol, test])?;
    let plan = chunks(pts);
    let grad_model = match wrt {
        Some(Wrt::Solution) => Some(sol),
        Some(Wrt::Test) => Some(test),
        None => None,
    };
    run(
        plan.len(),
        |i| record_minimax_chunk(problem, sol, test, pts, cfg, wrt, plan[i]),
        |s| combine_minimax(s, cfg),
        grad_model,
    )
}

/// Strong-form least squares `Σ w ‖Tφ_s − f‖² + λ₁P(φ_s)`, the baseline
/// the minimax loss is compared against.
pub fn strong_form_loss(
    problem: &LossProblem,
    sol: &FieldModel,
    pts: &LossPoints,
    cfg: &LossConfig,
    with_grad: bool,
) -> Result<LossEval, LossError> {
    cfg.validate()?;
    check_models(problem, &[sol])?;
    let plan = chunks(pts);
    let r = problem.form.components();
    let record = |i: usize| -> Result<ChunkTape, LossError> {
        let mut g = Graph::new();
        let mut sums = [None; 4];
        let traced = match plan[i] {
            Chunk::Interior(start, len) => {
                let p = rows(&pts.interior, start, len);
                let (res, s) = match &problem.form {
                    WeakForm::Friedrichs(sys) => {
                        let coef = sys.coefficients(&p)?;
                        let x = g.constant(p);
                        let s = sol.trace(&mut g, x, DerivOrder::Gradient, with_grad)?;
                        let tu = sys.forward_trace(&mut g, &coef, s.value, s.gradient.expect("gradient requested"));
                        let f = g.constant(coef.f);
                        (g.sub(tu, f), s)
                    }
                    WeakForm::Elliptic(op) => {
                        let (a, da) = op.coefficient(&p);
                        let f = op.source(&p);
                        let x = g.constant(p);
                        let s = sol.trace(&mut g, x, DerivOrder::Laplacian, with_grad)?;
                        let lu = elliptic_apply(&mut g, op.mu, op.dim, a, da, &s);
                        let f = g.constant(f);
                        (g.sub(lu, f), s)
                    }
                };
                let q = squared_rows(&mut g, res);
                let w = column(&pts.interior_weights[start..start + len]);
                sums[NUM] = Some(weighted_sum(&mut g, q, w));
                s
            }
            Chunk::Boundary(start, len) => {
                let p = rows(&pts.boundary, start, len);
                let gdata = data_batch(&problem.data, &p, r);
                let x = g.constant(p);
                let s = sol.trace(&mut g, x, DerivOrder::Value, with_grad)?;
                if cfg.penalised() {
                    if let Some(w) = masked_weights(pts, start, len, &problem.solution_pieces) {
                        let gv = g.constant(gdata);
                        let diff = g.sub(s.value, gv);
                        let q = squared_rows(&mut g, diff);
                        sums[PEN_S] = Some(weighted_sum(&mut g, q, w));
                    }
                }
                s
            }
        };
        Ok(ChunkTape {
            graph: g,
            sums,
            traced: Some(traced),
        })
    };
    let combine = |s: [f64; 4]| -> Result<(LossValue, [f64; 4]), LossError> {
        let mut coef = [0.0; 4];
        coef[NUM] = 1.0;
        let mut ps = 0.0;
        if cfg.penalised() {
            let (v, dv) = penalty(cfg.penalty_form, s[PEN_S]);
            ps = v;
            coef[PEN_S] = cfg.lambda_s * dv;
        }
        Ok((
            LossValue {
                value: s[NUM] + cfg.lambda_s * ps,
                numerator: s[NUM],
                denominator: 1.0,
                penalty_s: ps,
                penalty_t: 0.0,
            },
            coef,
        ))
    };
    run(plan.len(), record, combine, with_grad.then_some(sol))
}

/// Per-test-function numerators and Gram data for a fixed family of test
/// fields: returns `r_j = num(φ_s, v_j)` and `G_jk = Σ w T̃v_j·T̃v_k`.
pub fn residual_functionals(
    problem: &LossProblem,
    sol: &FieldModel,
    tests: &[FieldModel],
    pts: &LossPoints,
) -> Result<(Vec<f64>, Array2<f64>), LossError> {
    check_models(problem, &[sol])?;
    check_models(problem, &tests.iter().collect::<Vec<_>>())?;
    let cfg = LossConfig::default();
    let plan = chunks(pts);
    let k = tests.len();
    let mut residual = vec![0.0; k];
    let mut gram = Array2::zeros((k, k));
    for chunk in plan {
        let mut images = Vec::with_capacity(k);
        let mut weights = None;
        for (j, t) in tests.iter().enumerate() {
            let tape = record_minimax_chunk(problem, sol, t, pts, &cfg, None, chunk)?;
            residual[j] += tape.values()[NUM];
            if let Chunk::Interior(start, len) = chunk {
                let p = rows(&pts.interior, start, len);
                images.push(test_image(problem, t, &p)?);
                weights = Some(&pts.interior_weights[start..start + len]);
            }
        }
        if let Some(w) = weights {
            for a in 0..k {
                for b in a..k {
                    let prod = (&images[a] * &images[b]).sum_axis(Axis(1));
                    let v: f64 = prod.iter().zip(w).map(|(p, wi)| p * wi).sum();
                    gram[[a, b]] += v;
                    if a != b {
                        gram[[b, a]] += v;
                    }
                }
            }
        }
    }
    Ok((residual, gram))
}

/// `T̃v` (or `Lψ`) of a field on a batch.
pub fn test_image(problem: &LossProblem, test: &FieldModel, points: &Array2<f64>) -> Result<Array2<f64>, LossError> {
    match &problem.form {
        WeakForm::Friedrichs(sys) => Ok(sys.adjoint_apply(test, points)?),
        WeakForm::Elliptic(op) => {
            let (a, da) = op.coefficient(points);
            let mut g = Graph::new();
            let x = g.constant(points.clone());
            let t = test.trace(&mut g, x, DerivOrder::Laplacian, false)?;
            let lt = elliptic_apply(&mut g, op.mu, op.dim, a, da, &t);
            Ok(g.value(lt).clone())
        }
    }
}
