use std::f64::consts::PI;
use std::sync::Arc;

use crate::autodiff::Jet;
use crate::loss::{LossProblem, WeakForm};
use crate::network::{Activation, BoundaryEncoder, PointFn};
use crate::sampler::{Circle, Curve, Domain, PieceShape, Section};
use crate::trainer::{NetSpec, TrainConfig};

use super::{classify_pieces, transport, Problem, ProblemError};

const SHIFT: f64 = 0.1;

/// Cross-section: a skewed hexagon with two circular holes.
pub fn wave_section() -> Section {
    Section::Polygon {
        outer: vec![[-1.0, -1.0], [1.0, -0.8], [1.2, 0.3], [0.4, 1.0], [-0.9, 0.8], [-1.2, -0.1]],
        holes: vec![
            Circle {
                center: [-0.35, -0.25],
                radius: 0.25,
            },
            Circle {
                center: [0.45, 0.2],
                radius: 0.2,
            },
        ],
    }
}

fn dist_to_point(x: &Jet, y: &Jet, p: [f64; 2]) -> Jet {
    ((x - p[0]).square() + (y - p[1]).square()).sqrt()
}

/// Distance from `(x, y)` to a curve, differentiable away from the
/// curve's medial axis and endpoints.
pub fn curve_distance(curve: &Curve, x: &Jet, y: &Jet) -> Jet {
    match *curve {
        Curve::Segment { a, b } => {
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len2 = dx * dx + dy * dy;
            let u = ((x.v - a[0]) * dx + (y.v - a[1]) * dy) / len2;
            if u <= 0.0 {
                dist_to_point(x, y, a)
            } else if u >= 1.0 {
                dist_to_point(x, y, b)
            } else {
                ((x - a[0]) * dy - (y - a[1]) * dx).abs() / len2.sqrt()
            }
        }
        Curve::Arc {
            circle,
            theta0,
            theta1,
            ..
        } => {
            let (cx, cy) = (circle.center[0], circle.center[1]);
            let mut th = (y.v - cy).atan2(x.v - cx);
            while th < theta0 {
                th += 2.0 * PI;
            }
            if th <= theta1 {
                (dist_to_point(x, y, circle.center) - circle.radius).abs()
            } else {
                let (p0, _) = curve.at(0.0);
                let (p1, _) = curve.at(1.0);
                dist_to_point(x, y, p0).min(&dist_to_point(x, y, p1))
            }
        }
    }
}

/// Nearest point of a curve, as jets.
fn nearest(curve: &Curve, x: &Jet, y: &Jet) -> (Jet, Jet) {
    match *curve {
        Curve::Segment { a, b } => {
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len2 = dx * dx + dy * dy;
            let u = ((x - a[0]) * dx + (y - a[1]) * dy) / len2;
            if u.v <= 0.0 {
                (Jet::constant(a[0]), Jet::constant(a[1]))
            } else if u.v >= 1.0 {
                (Jet::constant(b[0]), Jet::constant(b[1]))
            } else {
                (&u * dx + a[0], u * dy + a[1])
            }
        }
        Curve::Arc {
            circle,
            theta0,
            theta1,
            ..
        } => {
            let (cx, cy) = (circle.center[0], circle.center[1]);
            let mut th = (y.v - cy).atan2(x.v - cx);
            while th < theta0 {
                th += 2.0 * PI;
            }
            if th <= theta1 {
                let r = dist_to_point(x, y, circle.center);
                let s = circle.radius;
                ((x - cx) * s / &r + cx, (y - cy) * s / r + cy)
            } else {
                let (p0, _) = curve.at(0.0);
                let (p1, _) = curve.at(1.0);
                let d0 = (x.v - p0[0]).hypot(y.v - p0[1]);
                let d1 = (x.v - p1[0]).hypot(y.v - p1[1]);
                let p = if d0 <= d1 { p0 } else { p1 };
                (Jet::constant(p[0]), Jet::constant(p[1]))
            }
        }
    }
}

fn exact(x: &[Jet]) -> Jet {
    let (t, px, py) = (&x[0], &x[1], &x[2]);
    t.scale(-SHIFT).exp() * (px + py - t).sin()
}

fn lateral_curves(domain: &Domain, ids: &[usize]) -> Vec<Curve> {
    let pieces = domain.pieces();
    ids.iter()
        .filter_map(|&i| match &pieces[i].shape {
            PieceShape::Lateral { curve, .. } => Some(*curve),
            _ => None,
        })
        .collect()
}

/// Distance to the nearest of `curves` and the index of that curve.
fn nearest_curve(curves: &[Curve], x: &Jet, y: &Jet) -> (Jet, usize) {
    let mut best: Option<(Jet, usize)> = None;
    for (i, c) in curves.iter().enumerate() {
        let d = curve_distance(c, x, y);
        if best.as_ref().is_none_or(|(b, _)| d.v < b.v) {
            best = Some((d, i));
        }
    }
    best.expect("at least one curve")
}

pub(super) fn wave() -> Result<Problem, ProblemError> {
    let domain = Domain::Extruded {
        t0: 0.0,
        t1: 1.0,
        section: wave_section(),
        arc_split: -PI / 2.0,
    };
    let system = transport(3, |_| vec![1.0, 1.0, 0.0], |_| 0.0, 0.0, super::zero_field(1), 0.0).coercive_shift(SHIFT)?;
    let (inflow, outflow, _) = classify_pieces(&system, &domain)?;
    let inflow_curves = lateral_curves(&domain, &inflow);
    let outflow_curves = lateral_curves(&domain, &outflow);
    let exact_fn: PointFn = Arc::new(|x| vec![exact(x)]);

    let mask_curves = inflow_curves.clone();
    let lift_curves = inflow_curves;
    let solution_encoder = BoundaryEncoder::scalar_mask(
        move |x| {
            let (d, _) = nearest_curve(&mask_curves, &x[1], &x[2]);
            x[0].min(&d)
        },
        // Inverse-distance blend of the initial data (extended constantly in
        // time) and the lateral data at the nearest inflow point.
        move |x| {
            let (t, px, py) = (&x[0], &x[1], &x[2]);
            let (d, i) = nearest_curve(&lift_curves, px, py);
            if d.v + t.v == 0.0 {
                return vec![(px + py).sin()];
            }
            let (qx, qy) = nearest(&lift_curves[i], px, py);
            let initial = (px + py).sin();
            let lateral = t.scale(-SHIFT).exp() * (qx + qy - t).sin();
            vec![(&d * initial + t * lateral) / (d + t)]
        },
        1,
    );
    let test_encoder = BoundaryEncoder::scalar_mask(
        move |x| {
            let (d, _) = nearest_curve(&outflow_curves, &x[1], &x[2]);
            (1.0 - &x[0]).min(&d)
        },
        |_| vec![Jet::constant(0.0)],
        1,
    );
    let train = TrainConfig {
        iterations: 10_000,
        interior_points: 10_000,
        boundary_points: 10_000,
        lr_solution: 5e-4,
        lr_test: 1e-4,
        decay_solution: 5000.0,
        decay_test: 5000.0,
        solution_net: NetSpec {
            width: 250,
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
    Ok(Problem {
        name: "wave-complex-domain".into(),
        domain,
        loss: LossProblem {
            form: WeakForm::Friedrichs(system.clone()),
            data: exact_fn.clone(),
            numerator_pieces: inflow.clone(),
            solution_pieces: inflow,
            test_pieces: outflow,
        },
        system,
        exact: exact_fn,
        continuous: true,
        solution_encoder,
        test_encoder,
        split: vec![1],
        train,
        baseline: None,
        discontinuity: None,
        mu0: SHIFT,
        probe_seed: 1005,
    })
}
