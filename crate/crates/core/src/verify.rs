//! Oracle checks for a preset: integration by parts, coercivity, exact
//! residuals, boundary-encoder exactness and the dual norm at the exact
//! solution.

use std::fmt;
use std::sync::Arc;

use ndarray::Array2;
use serde::Serialize;
use thiserror::Error;

use crate::autodiff::Jet;
use crate::loss::{LossError, LossPoints, WeakForm};
use crate::metrics::{closed_form_field, dual_norm_residual, MetricsError};
use crate::network::{Activation, DerivOrder, FieldBatch, FieldModel, NetworkError, PointFn};
use crate::problems::{elliptic_problem, EllipticBoundary, Problem};
use crate::quadrature::{boundary_rule, clipped_square, gauss_interval, volume_rule, Rule};
use crate::sampler::{sample_boundary, Curve, Domain, PieceShape, SamplerError};
use crate::system::{FriedrichsSystem, SystemError};
use crate::trainer::{fresh_nets, NetSpec};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// One measured quantity against its bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    /// `value ≥ bound` is required instead of `value ≤ bound`.
    pub lower: bool,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Check {
        Check {
            name: name.into(),
            value,
            bound,
            lower: false,
            pass: value <= bound,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, bound: f64) -> Check {
        Check {
            name: name.into(),
            value,
            bound,
            lower: true,
            pass: value >= bound,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = if self.lower { ">=" } else { "<=" };
        let tag = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {:.3e} {op} {:.3e}", self.name, self.value, self.bound)
    }
}

/// Highest dimension for which tensor-product quadrature is used.
const MAX_QUADRATURE_DIM: usize = 3;

/// Low-dimensional member of the same family when `problem` is too
/// high-dimensional for tensor quadrature.
fn quadrature_instance(problem: &Problem) -> Option<Problem> {
    match &problem.loss.form {
        WeakForm::Elliptic(_) if problem.dim() > MAX_QUADRATURE_DIM => {
            Some(elliptic_problem(MAX_QUADRATURE_DIM, EllipticBoundary::Weak))
        }
        _ => None,
    }
}

fn polynomial_pair(d: usize, r: usize) -> (PointFn, PointFn) {
    let u: PointFn = Arc::new(move |x| {
        (0..r)
            .map(|i| {
                let s = (i + 1) as f64;
                1.0 + x[0].scale(0.3 * s) - x[d - 1].square().scale(0.2) + (&x[0] * &x[1 % d]).scale(0.1 * s)
            })
            .collect()
    });
    let v: PointFn = Arc::new(move |x| {
        (0..r)
            .map(|i| {
                let s = (i + 1) as f64;
                0.5 - x[1 % d].scale(0.4) + x[0].square().scale(0.3) - (&x[0] * &x[d - 1]).scale(0.25 * s)
            })
            .collect()
    });
    (u, v)
}

fn eval_at(f: &PointFn, x: &[f64]) -> Vec<f64> {
    f(&Jet::point_const(x)).iter().map(|j| j.v).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `|(Tu, v) − (u, T̃v) − ∮ vᵀ𝓑u|` for polynomial `u`, `v` under
/// Gauss quadrature with `n` nodes per direction.
pub fn integration_by_parts_defect(system: &FriedrichsSystem, domain: &Domain, n: usize) -> Result<f64, VerifyError> {
    let (u, v) = polynomial_pair(system.dim, system.r);
    let vol = volume_rule(domain, n);
    let pieces: Vec<usize> = (0..domain.pieces().len()).collect();
    let surf = boundary_rule(domain, &pieces, n);
    let normals = surf.normals.as_ref().expect("surface rule");
    let mut volume_term = 0.0;
    for (p, w) in vol.points.rows().into_iter().zip(&vol.weights) {
        let x = p.to_vec();
        let tu = system.forward_apply_exact(&x, &u);
        let tv = system.adjoint_apply_exact(&x, &v);
        volume_term += w * (dot(&tu, &eval_at(&v, &x)) - dot(&eval_at(&u, &x), &tv));
    }
    let mut boundary_term = 0.0;
    for ((p, nv), w) in surf.points.rows().into_iter().zip(normals.rows()).zip(&surf.weights) {
        let x = p.to_vec();
        let b = system.boundary_matrix(&x, &nv.to_vec())?;
        let bu = &b * nalgebra::DVector::from_vec(eval_at(&u, &x));
        boundary_term += w * dot(&eval_at(&v, &x), bu.as_slice());
    }
    Ok((volume_term - boundary_term).abs())
}

/// Empirical coercivity: `min λ_min(C + Cᵀ − div A)/2` for a first-order
/// system, `min (a + μ)` for the second-order form.
pub fn empirical_coercivity(problem: &Problem, points: &Array2<f64>) -> f64 {
    match &problem.loss.form {
        WeakForm::Friedrichs(sys) => sys.coercivity_check(points).mu0,
        WeakForm::Elliptic(op) => points
            .rows()
            .into_iter()
            .map(|p| (op.a)(&Jet::point_const(&p.to_vec())).v + op.mu)
            .fold(f64::INFINITY, f64::min),
    }
}

fn line_distance(line: [f64; 3], x: &[f64]) -> f64 {
    (line[0] * x[0] + line[1] * x[1] + line[2]).abs() / line[0].hypot(line[1])
}

/// Largest pointwise residual of the exact solution on `points`, skipping
/// points within `1e-3` of a known discontinuity.
pub fn exact_residual(problem: &Problem, points: &Array2<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for p in points.rows() {
        let x = p.to_vec();
        if problem.discontinuity.is_some_and(|l| line_distance(l, &x) <= 1e-3) {
            continue;
        }
        let res = match &problem.loss.form {
            WeakForm::Friedrichs(sys) => {
                let tu = sys.forward_apply_exact(&x, &problem.exact);
                let f = sys.source(&x);
                tu.iter().zip(&f).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            }
            WeakForm::Elliptic(op) => {
                let jets = Jet::point(&x);
                let u = &(problem.exact)(&jets)[0];
                let a = (op.a)(&jets);
                let grad_dot: f64 = (0..op.dim).map(|k| a.grad(k) * u.grad(k)).sum();
                let lu = -a.v * u.l - grad_dot + op.mu * u.v;
                (lu - (op.f)(&Jet::point_const(&x))[0].v).abs()
            }
        };
        worst = worst.max(res);
    }
    worst
}

/// Mismatch of an encoded field on boundary samples, over the components
/// whose mask vanishes there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderMismatch {
    pub max: f64,
    /// Number of (point, component) entries the encoding constrains.
    pub constrained: usize,
}

/// Mask values below this count as vanishing.
const MASK_ZERO: f64 = 1e-12;

pub fn encoder_mismatch(
    model: &FieldModel,
    data: &PointFn,
    points: &Array2<f64>,
) -> Result<EncoderMismatch, VerifyError> {
    let r = model.output_dim();
    let phi = model.evaluate(points)?;
    let mask = model.mask_batch(points, DerivOrder::Value).value;
    let g = FieldBatch::eval(data, points, r, DerivOrder::Value).value;
    let mut out = EncoderMismatch {
        max: 0.0,
        constrained: 0,
    };
    for i in 0..points.nrows() {
        for j in 0..r {
            if mask[[i, j]].abs() <= MASK_ZERO {
                out.constrained += 1;
                out.max = out.max.max((phi[[i, j]] - g[[i, j]]).abs());
            }
        }
    }
    Ok(out)
}

fn random_field(problem: &Problem, encoder: &crate::network::BoundaryEncoder, seed: u64) -> Result<FieldModel, VerifyError> {
    let spec = NetSpec {
        width: 16,
        depth: 3,
        activation: Activation::Tanh,
    };
    let nets = fresh_nets(problem.dim(), &problem.split, spec, seed)?;
    Ok(FieldModel::new(nets, encoder.clone())?)
}

/// Boundary mismatch of a randomly initialized solution field (and of the
/// same field after one restart), and of a test field, on `n` samples of
/// their constrained pieces.
pub fn encoder_checks(problem: &Problem, n: usize, seed: u64) -> Result<Vec<Check>, VerifyError> {
    let mut checks = Vec::new();
    let zero: PointFn = {
        let r = problem.components();
        Arc::new(move |_| vec![Jet::constant(0.0); r])
    };
    if !problem.loss.solution_pieces.is_empty() {
        let (pts, _, _, _) = sample_boundary(&problem.domain, n, &problem.loss.solution_pieces, seed, 11, 0)?;
        let sol = random_field(problem, &problem.solution_encoder, seed)?;
        let before = encoder_mismatch(&sol, &problem.exact, &pts)?;
        let fresh = fresh_nets(
            problem.dim(),
            &problem.split,
            NetSpec {
                width: 24,
                depth: 3,
                activation: Activation::Relu,
            },
            seed + 1,
        )?;
        let after = encoder_mismatch(&sol.restart(fresh)?, &problem.exact, &pts)?;
        if before.constrained > 0 {
            checks.push(Check::at_most(
                format!("{}: solution boundary mismatch", problem.name),
                before.max,
                1e-10,
            ));
            checks.push(Check::at_most(
                format!("{}: solution boundary mismatch after restart", problem.name),
                after.max,
                1e-10,
            ));
        }
    }
    if !problem.loss.test_pieces.is_empty() {
        let (pts, _, _, _) = sample_boundary(&problem.domain, n, &problem.loss.test_pieces, seed, 12, 0)?;
        let test = random_field(problem, &problem.test_encoder, seed + 2)?;
        let m = encoder_mismatch(&test, &zero, &pts)?;
        if m.constrained > 0 {
            checks.push(Check::at_most(format!("{}: test boundary mismatch", problem.name), m.max, 1e-10));
        }
    }
    Ok(checks)
}

/// Smooth scalar vanishing on every listed piece: a product of the
/// defining functions of the pieces' supporting lines, circles and planes.
fn piece_polynomial(domain: &Domain, pieces: &[usize]) -> Arc<dyn Fn(&[Jet]) -> Jet + Send + Sync> {
    let all = domain.pieces();
    let shapes: Vec<PieceShape> = pieces.iter().map(|&i| all[i].shape.clone()).collect();
    Arc::new(move |x: &[Jet]| {
        let curve_fn = |c: &Curve, px: &Jet, py: &Jet| match *c {
            Curve::Segment { a, b } => (px - a[0]) * (b[1] - a[1]) - (py - a[1]) * (b[0] - a[0]),
            Curve::Arc { circle, .. } => {
                (px - circle.center[0]).square() + (py - circle.center[1]).square() - circle.radius * circle.radius
            }
        };
        shapes.iter().fold(Jet::constant(1.0), |acc, s| {
            let factor = match s {
                PieceShape::Face { axis, value, .. } => &x[*axis] - *value,
                PieceShape::Curve(c) => curve_fn(c, &x[0], &x[1]),
                PieceShape::Lateral { curve, .. } => curve_fn(curve, &x[1], &x[2]),
                PieceShape::Cap { t, .. } => &x[0] - *t,
                PieceShape::Sphere { center, radius } => {
                    x.iter().zip(center).fold(Jet::constant(-radius * radius), |acc, (xi, c)| acc + (xi - *c).square())
                }
            };
            acc * factor
        })
    })
}

/// Five smooth test functions in the test space of `problem`.
pub fn trig_basis(problem: &Problem) -> Vec<FieldModel> {
    let d = problem.dim();
    let r = problem.components();
    let scalar_mask = piece_polynomial(&problem.domain, &problem.loss.test_pieces);
    let component_mask = problem.test_encoder.mask.clone();
    let per_component = r > 1;
    (0..5)
        .map(|j| {
            let mask = scalar_mask.clone();
            let cmask = component_mask.clone();
            let f: PointFn = Arc::new(move |x| {
                let masks = if per_component { cmask(x) } else { vec![mask(x)] };
                (0..r)
                    .map(|i| {
                        let phase = 0.5 * j as f64 + 0.3 * i as f64;
                        let arg = x[0].scale(0.7 * (j + 1) as f64) + x[d - 1].scale(0.4 + 0.2 * i as f64) + phase;
                        &masks[i] * arg.cos()
                    })
                    .collect()
            });
            closed_form_field(d, r, f)
        })
        .collect()
}

/// Rule on an edge of a rectangle split where `line` crosses it, or `None`
/// if the piece is not such an edge or is not crossed.
fn split_face(domain: &Domain, piece: usize, line: [f64; 3], n: usize) -> Option<Rule> {
    let Domain::Box { lower, upper } = domain else {
        return None;
    };
    let PieceShape::Face { axis, value, upper: up } = domain.pieces()[piece].shape else {
        return None;
    };
    let other = 1 - axis;
    if line[other] == 0.0 {
        return None;
    }
    let cut = -(line[axis] * value + line[2]) / line[other];
    if !(cut > lower[other] && cut < upper[other]) {
        return None;
    }
    let mut normal = vec![0.0; 2];
    normal[axis] = if up { 1.0 } else { -1.0 };
    let mut rows = Vec::new();
    for (a, b) in [(lower[other], cut), (cut, upper[other])] {
        for (s, w) in gauss_interval(a, b, n) {
            let mut x = vec![0.0; 2];
            x[axis] = value;
            x[other] = s;
            rows.push((x, normal.clone(), w));
        }
    }
    Some(Rule::surface(rows, 2))
}

/// Quadrature points for the weak-form functionals of `problem`, split
/// along a known discontinuity so each part integrates a smooth function.
pub fn quadrature_points(problem: &Problem, n: usize) -> Result<LossPoints, VerifyError> {
    let vol = match (problem.discontinuity, &problem.domain) {
        (Some(line), Domain::Box { lower, upper }) if problem.dim() == 2 => {
            let (a, b) = clipped_square(lower[0], upper[0], line, n);
            Rule::concat(vec![a, b])
        }
        _ => volume_rule(&problem.domain, n),
    };
    let pieces = &problem.loss.numerator_pieces;
    let mut surf_rows = Vec::new();
    for &p in pieces {
        let rule = match problem.discontinuity {
            Some(line) if problem.dim() == 2 => split_face(&problem.domain, p, line, n),
            _ => None,
        };
        surf_rows.push((rule.unwrap_or_else(|| boundary_rule(&problem.domain, &[p], n)), p));
    }
    let ids: Vec<usize> = surf_rows.iter().flat_map(|(r, p)| std::iter::repeat_n(*p, r.len())).collect();
    let surf = Rule::concat(surf_rows.into_iter().map(|(r, _)| r).collect());
    Ok(LossPoints::from_rules(&vol, &surf, ids)?)
}

/// Dual-norm residual of the exact solution over [`trig_basis`].
pub fn dual_norm_at_exact(problem: &Problem, n: usize) -> Result<f64, VerifyError> {
    let sol = closed_form_field(problem.dim(), problem.components(), problem.exact.clone());
    let pts = quadrature_points(problem, n)?;
    Ok(dual_norm_residual(&problem.loss, &sol, &trig_basis(problem), &pts)?)
}

/// Nodes per direction for each quadrature check.
fn nodes_for(problem: &Problem) -> usize {
    match problem.dim() {
        2 => 48,
        _ => 14,
    }
}

/// Every oracle check for one preset.
pub fn verify_preset(problem: &Problem) -> Result<Vec<Check>, VerifyError> {
    let mut checks = Vec::new();
    let low = quadrature_instance(problem);
    let quad = low.as_ref().unwrap_or(problem);
    let suffix = if low.is_some() {
        format!(" ({}-d instance)", quad.dim())
    } else {
        String::new()
    };
    let n = nodes_for(quad);
    checks.push(Check::at_most(
        format!("{}: integration by parts{suffix}", problem.name),
        integration_by_parts_defect(&quad.system, &quad.domain, n)?,
        1e-8,
    ));
    let interior = problem.domain.sample_interior(10_000, problem.probe_seed, 13, 0)?;
    checks.push(Check::at_least(
        format!("{}: coercivity", problem.name),
        empirical_coercivity(problem, &interior),
        problem.mu0,
    ));
    let residual_pts = problem.domain.sample_interior(1000, problem.probe_seed, 14, 0)?;
    checks.push(Check::at_most(
        format!("{}: exact-solution residual", problem.name),
        exact_residual(problem, &residual_pts),
        1e-8,
    ));
    let encoded = encoder_checks(problem, 10_000, problem.probe_seed)?;
    let solution_encoded = encoded.iter().any(|c| c.name.contains("solution"));
    checks.extend(encoded);
    // The weak elliptic formulation leaves the solution unconstrained; its
    // hard-encoded variant is checked instead.
    if let (WeakForm::Elliptic(op), false) = (&problem.loss.form, solution_encoded) {
        let lifted = elliptic_problem(op.dim, EllipticBoundary::Lifted);
        for mut c in encoder_checks(&lifted, 10_000, problem.probe_seed)? {
            if c.name.contains("solution") {
                c.name = c.name.replacen(&lifted.name, &format!("{} (lifted)", problem.name), 1);
                checks.push(c);
            }
        }
    }
    checks.push(Check::at_most(
        format!("{}: dual norm at exact solution{suffix}", problem.name),
        dual_norm_at_exact(quad, n)?,
        1e-6,
    ));
    Ok(checks)
}
