//! Deterministic quadrature rules used by the verification oracles.

use std::f64::consts::PI;

use ndarray::Array2;

use crate::sampler::{Circle, Curve, Domain, PieceShape, Section};

/// Nodes (`n × d`) and weights of a volume or surface rule; surface rules
/// also carry outward normals.
#[derive(Debug, Clone)]
pub struct Rule {
    pub points: Array2<f64>,
    pub weights: Vec<f64>,
    pub normals: Option<Array2<f64>>,
}

impl Rule {
    fn from_rows(rows: Vec<(Vec<f64>, f64)>, d: usize) -> Rule {
        let n = rows.len();
        let mut points = Array2::zeros((n, d));
        let mut weights = Vec::with_capacity(n);
        for (i, (p, w)) in rows.into_iter().enumerate() {
            for k in 0..d {
                points[[i, k]] = p[k];
            }
            weights.push(w);
        }
        Rule {
            points,
            weights,
            normals: None,
        }
    }

    /// Surface rule from `(point, outward normal, weight)` rows.
    pub fn surface(rows: Vec<(Vec<f64>, Vec<f64>, f64)>, d: usize) -> Rule {
        let n = rows.len();
        let mut points = Array2::zeros((n, d));
        let mut normals = Array2::zeros((n, d));
        let mut weights = Vec::with_capacity(n);
        for (i, (p, nv, w)) in rows.into_iter().enumerate() {
            for k in 0..d {
                points[[i, k]] = p[k];
                normals[[i, k]] = nv[k];
            }
            weights.push(w);
        }
        Rule {
            points,
            weights,
            normals: Some(normals),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `Σ w_i f(x_i)`.
    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.points
            .rows()
            .into_iter()
            .zip(&self.weights)
            .map(|(p, w)| w * f(p.as_slice().expect("contiguous")))
            .sum()
    }

    pub fn concat(rules: Vec<Rule>) -> Rule {
        let d = rules.iter().map(|r| r.points.ncols()).max().unwrap_or(0);
        let surface = rules.iter().all(|r| r.normals.is_some());
        let mut rows = Vec::new();
        for r in rules {
            for (i, p) in r.points.rows().into_iter().enumerate() {
                let nv = r.normals.as_ref().map(|n| n.row(i).to_vec()).unwrap_or_default();
                rows.push((p.to_vec(), nv, r.weights[i]));
            }
        }
        if surface {
            Rule::surface(rows, d)
        } else {
            Rule::from_rows(rows.into_iter().map(|(p, _, w)| (p, w)).collect(), d)
        }
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Gauss–Legendre on `[a, b]`.
pub fn gauss_interval(a: f64, b: f64, n: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(n);
    let h = 0.5 * (b - a);
    x.iter().zip(&w).map(|(xi, wi)| (a + h * (xi + 1.0), h * wi)).collect()
}

/// Tensor Gauss rule on a box with `n` nodes per axis.
pub fn tensor_box(lower: &[f64], upper: &[f64], n: usize) -> Rule {
    let d = lower.len();
    let axes: Vec<Vec<(f64, f64)>> = (0..d).map(|k| gauss_interval(lower[k], upper[k], n)).collect();
    let mut rows = vec![(Vec::with_capacity(d), 1.0)];
    for ax in &axes {
        let mut next = Vec::with_capacity(rows.len() * ax.len());
        for (p, w) in &rows {
            for (x, wx) in ax {
                let mut q: Vec<f64> = p.clone();
                q.push(*x);
                next.push((q, w * wx));
            }
        }
        rows = next;
    }
    Rule::from_rows(rows, d)
}

/// Polar Gauss rule on an annulus sector.
pub fn annulus_sector(r0: f64, r1: f64, t0: f64, t1: f64, n: usize) -> Rule {
    let mut rows = Vec::new();
    for (r, wr) in gauss_interval(r0, r1, n) {
        for (t, wt) in gauss_interval(t0, t1, n) {
            rows.push((vec![r * t.cos(), r * t.sin()], wr * wt * r));
        }
    }
    Rule::from_rows(rows, 2)
}

fn disk(c: &Circle, n: usize) -> Vec<([f64; 2], f64)> {
    annulus_sector(0.0, c.radius, 0.0, 2.0 * PI, n)
        .points
        .rows()
        .into_iter()
        .zip(annulus_sector(0.0, c.radius, 0.0, 2.0 * PI, n).weights)
        .map(|(p, w)| ([c.center[0] + p[0], c.center[1] + p[1]], w))
        .collect()
}

/// Gauss rule on a triangle via the collapsed square.
fn triangle(a: [f64; 2], b: [f64; 2], c: [f64; 2], n: usize) -> Vec<([f64; 2], f64)> {
    let area2 = ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])).abs();
    let mut out = Vec::new();
    for (u, wu) in gauss_interval(0.0, 1.0, n) {
        for (v, wv) in gauss_interval(0.0, 1.0, n) {
            // (u, v) ↦ (u, (1−u) v), jacobian (1−u)
            let s = u;
            let t = (1.0 - u) * v;
            let p = [
                a[0] + s * (b[0] - a[0]) + t * (c[0] - a[0]),
                a[1] + s * (b[1] - a[1]) + t * (c[1] - a[1]),
            ];
            out.push((p, wu * wv * (1.0 - u) * area2));
        }
    }
    out
}

/// Ear-clipping triangulation of a simple counter-clockwise polygon.
pub fn triangulate(poly: &[[f64; 2]]) -> Vec<[[f64; 2]; 3]> {
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut idx: Vec<usize> = (0..poly.len()).collect();
    let mut tris = Vec::new();
    while idx.len() > 3 {
        let m = idx.len();
        let mut clipped = false;
        for i in 0..m {
            let (ia, ib, ic) = (idx[(i + m - 1) % m], idx[i], idx[(i + 1) % m]);
            let (a, b, c) = (poly[ia], poly[ib], poly[ic]);
            if cross(a, b, c) <= 0.0 {
                continue;
            }
            let contains_other = idx.iter().any(|&j| {
                j != ia && j != ib && j != ic && {
                    let p = poly[j];
                    cross(a, b, p) >= 0.0 && cross(b, c, p) >= 0.0 && cross(c, a, p) >= 0.0
                }
            });
            if !contains_other {
                tris.push([a, b, c]);
                idx.remove(i);
                clipped = true;
                break;
            }
        }
        assert!(clipped, "polygon is not simple");
    }
    tris.push([poly[idx[0]], poly[idx[1]], poly[idx[2]]]);
    tris
}

/// Area rule for a planar section: polygon triangles minus hole disks.
pub fn section_rule(section: &Section, n: usize) -> Vec<([f64; 2], f64)> {
    match section {
        Section::Disk(c) => disk(c, n),
        Section::Polygon { outer, holes } => {
            let mut out = Vec::new();
            for t in triangulate(outer) {
                out.extend(triangle(t[0], t[1], t[2], n));
            }
            for h in holes {
                out.extend(disk(h, n).into_iter().map(|(p, w)| (p, -w)));
            }
            out
        }
    }
}

/// Volume rule for a domain, `n` nodes per direction.
pub fn volume_rule(domain: &Domain, n: usize) -> Rule {
    match domain {
        Domain::Box { lower, upper } => tensor_box(lower, upper, n),
        Domain::AnnulusSector { r0, r1, theta0, theta1 } => annulus_sector(*r0, *r1, *theta0, *theta1, n),
        Domain::Extruded { t0, t1, section, .. } => {
            let sec = section_rule(section, n);
            let mut rows = Vec::new();
            for (t, wt) in gauss_interval(*t0, *t1, n) {
                for (p, w) in &sec {
                    rows.push((vec![t, p[0], p[1]], wt * w));
                }
            }
            Rule::from_rows(rows, 3)
        }
        Domain::Ball { center, radius } => {
            assert_eq!(center.len(), 2, "ball quadrature is only provided in 2-d");
            let sec = disk(&Circle { center: [center[0], center[1]], radius: *radius }, n);
            Rule::from_rows(sec.into_iter().map(|(p, w)| (p.to_vec(), w)).collect(), 2)
        }
    }
}

fn curve_rule(c: &Curve, n: usize) -> Vec<([f64; 2], [f64; 2], f64)> {
    let len = c.length();
    gauss_interval(0.0, 1.0, n)
        .into_iter()
        .map(|(u, w)| {
            let (p, nv) = c.at(u);
            (p, nv, w * len)
        })
        .collect()
}

/// Surface rule on the listed boundary pieces of a domain.
pub fn boundary_rule(domain: &Domain, pieces: &[usize], n: usize) -> Rule {
    let all = domain.pieces();
    let d = domain.dim();
    let mut rows = Vec::new();
    for &i in pieces {
        match &all[i].shape {
            PieceShape::Face { axis, value, upper } => {
                let Domain::Box { lower, upper: hi } = domain else { unreachable!() };
                let lo: Vec<f64> = (0..d).filter(|k| k != axis).map(|k| lower[k]).collect();
                let up: Vec<f64> = (0..d).filter(|k| k != axis).map(|k| hi[k]).collect();
                let face = tensor_box(&lo, &up, n);
                let mut nv = vec![0.0; d];
                nv[*axis] = if *upper { 1.0 } else { -1.0 };
                for (p, w) in face.points.rows().into_iter().zip(face.weights) {
                    let mut x = p.to_vec();
                    x.insert(*axis, *value);
                    rows.push((x, nv.clone(), w));
                }
            }
            PieceShape::Curve(c) => {
                for (p, nv, w) in curve_rule(c, n) {
                    rows.push((p.to_vec(), nv.to_vec(), w));
                }
            }
            PieceShape::Lateral { t0, t1, curve } => {
                for (t, wt) in gauss_interval(*t0, *t1, n) {
                    for (p, nv, w) in curve_rule(curve, n) {
                        rows.push((vec![t, p[0], p[1]], vec![0.0, nv[0], nv[1]], wt * w));
                    }
                }
            }
            PieceShape::Cap { t, upper } => {
                let Domain::Extruded { section, .. } = domain else { unreachable!() };
                for (p, w) in section_rule(section, n) {
                    rows.push((vec![*t, p[0], p[1]], vec![if *upper { 1.0 } else { -1.0 }, 0.0, 0.0], w));
                }
            }
            PieceShape::Sphere { center, radius } => {
                assert_eq!(center.len(), 2, "sphere quadrature is only provided in 2-d");
                let c = Circle { center: [center[0], center[1]], radius: *radius };
                let arc = Curve::Arc { circle: c, theta0: 0.0, theta1: 2.0 * PI, outward: true };
                for (p, nv, w) in curve_rule(&arc, n) {
                    rows.push((p.to_vec(), nv.to_vec(), w));
                }
            }
        }
    }
    Rule::surface(rows, d)
}

/// Splits a rule on a planar domain by the half-planes `a·x + b·y + c ≷ 0`
/// using Sutherland–Hodgman clipping of the square `[lo, hi]²`.
pub fn clipped_square(lo: f64, hi: f64, line: [f64; 3], n: usize) -> (Rule, Rule) {
    let square = vec![[lo, lo], [hi, lo], [hi, hi], [lo, hi]];
    let pos = clip(&square, line);
    let neg = clip(&square, [-line[0], -line[1], -line[2]]);
    let rule = |poly: Vec<[f64; 2]>| {
        let mut rows = Vec::new();
        if poly.len() >= 3 {
            for t in triangulate(&poly) {
                rows.extend(triangle(t[0], t[1], t[2], n).into_iter().map(|(p, w)| (p.to_vec(), w)));
            }
        }
        Rule::from_rows(rows, 2)
    };
    (rule(pos), rule(neg))
}

fn clip(poly: &[[f64; 2]], line: [f64; 3]) -> Vec<[f64; 2]> {
    let side = |p: [f64; 2]| line[0] * p[0] + line[1] * p[1] + line[2];
    let mut out = Vec::new();
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        let (sa, sb) = (side(a), side(b));
        if sa >= 0.0 {
            out.push(a);
        }
        if (sa >= 0.0) != (sb >= 0.0) {
            let t = sa / (sa - sb);
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..2 * n {
                let q: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "n={n} deg={deg}: {q} vs {exact}");
            }
        }
    }

    #[test]
    fn areas_of_domains() {
        let ann = annulus_sector(0.1, 1.0, 0.0, PI / 2.0, 8);
        assert!((ann.weights.iter().sum::<f64>() - PI / 4.0 * 0.99).abs() < 1e-13);
        let sec = Section::Polygon {
            outer: vec![[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]],
            holes: vec![Circle { center: [0.0, 0.0], radius: 0.5 }],
        };
        let total: f64 = section_rule(&sec, 6).iter().map(|(_, w)| w).sum();
        assert!((total - (4.0 - PI * 0.25)).abs() < 1e-12);
        let (a, b) = clipped_square(-1.0, 1.0, [-0.9, 1.0, 0.0], 4);
        let (sa, sb): (f64, f64) = (a.weights.iter().sum(), b.weights.iter().sum());
        assert!((sa - 2.0).abs() < 1e-13 && (sb - 2.0).abs() < 1e-13);
    }

    #[test]
    fn concave_polygon_triangulation_area() {
        let poly = vec![[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [1.0, 0.5], [0.0, 2.0]];
        let area: f64 = triangulate(&poly)
            .iter()
            .map(|t| 0.5 * ((t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[2][0] - t[0][0]) * (t[1][1] - t[0][1])))
            .sum();
        assert!((area - 2.5).abs() < 1e-14);
    }
}
