//! Domains, their boundary pieces, and uniform sampling of both.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("rejection sampling accepted {accepted} of {proposed} proposals; geometry is degenerate")]
    Degenerate { accepted: usize, proposed: usize },
    #[error("no boundary pieces selected")]
    EmptySelection,
    #[error("unknown boundary piece {0}")]
    UnknownPiece(usize),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
}

/// Points per RNG stream; batches are drawn chunk by chunk so results do
/// not depend on how many workers evaluate them.
pub const CHUNK: usize = 1024;

/// Independent RNG stream for `(purpose, step, chunk)` under a master seed.
pub fn derived_rng(master: u64, purpose: u64, step: u64, chunk: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&master.to_le_bytes());
    seed[8..16].copy_from_slice(&purpose.to_le_bytes());
    seed[16..24].copy_from_slice(&step.to_le_bytes());
    seed[24..].copy_from_slice(&chunk.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: [f64; 2],
    pub radius: f64,
}

/// Planar cross-section of an extruded domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Section {
    Disk(Circle),
    /// Counter-clockwise outer polygon minus disjoint circular holes.
    Polygon { outer: Vec<[f64; 2]>, holes: Vec<Circle> },
}

/// A planar curve with an attached unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Curve {
    /// Normal is `(dy, −dx)/len`, i.e. to the right of `a → b`.
    Segment { a: [f64; 2], b: [f64; 2] },
    /// Arc of angles `[theta0, theta1]`; normal points away from the
    /// center when `outward`, towards it otherwise.
    Arc { circle: Circle, theta0: f64, theta1: f64, outward: bool },
}

impl Curve {
    pub fn length(&self) -> f64 {
        match *self {
            Curve::Segment { a, b } => ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt(),
            Curve::Arc { circle, theta0, theta1, .. } => circle.radius * (theta1 - theta0),
        }
    }

    /// Point and normal at arclength fraction `u ∈ [0, 1]`.
    pub fn at(&self, u: f64) -> ([f64; 2], [f64; 2]) {
        match *self {
            Curve::Segment { a, b } => {
                let p = [a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])];
                let len = self.length();
                (p, [(b[1] - a[1]) / len, -(b[0] - a[0]) / len])
            }
            Curve::Arc { circle, theta0, theta1, outward } => {
                let th = theta0 + u * (theta1 - theta0);
                let (s, c) = th.sin_cos();
                let p = [circle.center[0] + circle.radius * c, circle.center[1] + circle.radius * s];
                let sg = if outward { 1.0 } else { -1.0 };
                (p, [sg * c, sg * s])
            }
        }
    }

    /// Euclidean distance from `p` to the curve.
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        match *self {
            Curve::Segment { a, b } => {
                let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
                let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
                ((p[0] - a[0] - t * dx).powi(2) + (p[1] - a[1] - t * dy).powi(2)).sqrt()
            }
            Curve::Arc { circle, theta0, theta1, .. } => {
                let (x, y) = (p[0] - circle.center[0], p[1] - circle.center[1]);
                let mut th = y.atan2(x);
                while th < theta0 {
                    th += 2.0 * PI;
                }
                if th <= theta1 {
                    ((x * x + y * y).sqrt() - circle.radius).abs()
                } else {
                    let (p0, _) = self.at(0.0);
                    let (p1, _) = self.at(1.0);
                    let d0 = ((p[0] - p0[0]).powi(2) + (p[1] - p0[1]).powi(2)).sqrt();
                    let d1 = ((p[0] - p1[0]).powi(2) + (p[1] - p1[1]).powi(2)).sqrt();
                    d0.min(d1)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PieceShape {
    /// Face `x_axis = value` of a box.
    Face { axis: usize, value: f64, upper: bool },
    Sphere { center: Vec<f64>, radius: f64 },
    /// Boundary curve of a planar domain.
    Curve(Curve),
    /// `[t0, t1] × curve` in `(t, x, y)`.
    Lateral { t0: f64, t1: f64, curve: Curve },
    /// `{t} × section`.
    Cap { t: f64, upper: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPiece {
    pub name: String,
    pub shape: PieceShape,
    pub measure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Domain {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    /// `r0 ≤ |x| ≤ r1`, `theta0 ≤ arg x ≤ theta1`.
    AnnulusSector { r0: f64, r1: f64, theta0: f64, theta1: f64 },
    /// `[t0, t1] × section` with coordinates `(t, x, y)`. Circles in the
    /// section boundary are split into two lateral pieces at angles
    /// `arc_split` and `arc_split + π`.
    Extruded {
        t0: f64,
        t1: f64,
        section: Section,
        #[serde(default)]
        arc_split: f64,
    },
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        / 2.0
}

fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0] {
            inside = !inside;
        }
        j = i;
    }
    inside
}

impl Section {
    pub fn area(&self) -> f64 {
        match self {
            Section::Disk(c) => PI * c.radius * c.radius,
            Section::Polygon { outer, holes } => {
                polygon_area(outer) - holes.iter().map(|h| PI * h.radius * h.radius).sum::<f64>()
            }
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        match self {
            Section::Disk(c) => (p[0] - c.center[0]).powi(2) + (p[1] - c.center[1]).powi(2) <= c.radius * c.radius,
            Section::Polygon { outer, holes } => {
                point_in_polygon(p, outer)
                    && holes
                        .iter()
                        .all(|h| (p[0] - h.center[0]).powi(2) + (p[1] - h.center[1]).powi(2) >= h.radius * h.radius)
            }
        }
    }

    fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        match self {
            Section::Disk(c) => (
                [c.center[0] - c.radius, c.center[1] - c.radius],
                [c.center[0] + c.radius, c.center[1] + c.radius],
            ),
            Section::Polygon { outer, .. } => {
                let mut lo = [f64::INFINITY; 2];
                let mut hi = [f64::NEG_INFINITY; 2];
                for v in outer {
                    for k in 0..2 {
                        lo[k] = lo[k].min(v[k]);
                        hi[k] = hi[k].max(v[k]);
                    }
                }
                (lo, hi)
            }
        }
    }

    fn validate(&self) -> Result<(), SamplerError> {
        if let Section::Polygon { outer, holes } = self {
            if outer.len() < 3 {
                return Err(SamplerError::InvalidGeometry("polygon needs at least 3 vertices".into()));
            }
            if polygon_area(outer) <= 0.0 {
                return Err(SamplerError::InvalidGeometry("outer polygon must be counter-clockwise".into()));
            }
            let edges = polygon_edges(outer);
            for (i, h) in holes.iter().enumerate() {
                if !point_in_polygon(h.center, outer) || edges.iter().any(|e| e.distance(h.center) <= h.radius) {
                    return Err(SamplerError::InvalidGeometry(format!("hole {i} is not strictly inside the polygon")));
                }
                for g in &holes[..i] {
                    let dc = ((h.center[0] - g.center[0]).powi(2) + (h.center[1] - g.center[1]).powi(2)).sqrt();
                    if dc <= h.radius + g.radius {
                        return Err(SamplerError::InvalidGeometry("holes overlap".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Boundary curves; hole circles are split into two arcs at `split` and `split + π`.
    pub fn curves(&self, split: f64) -> Vec<(String, Curve)> {
        match self {
            Section::Disk(c) => vec![
                (
                    "circle-a".into(),
                    Curve::Arc { circle: *c, theta0: split, theta1: split + PI, outward: true },
                ),
                (
                    "circle-b".into(),
                    Curve::Arc { circle: *c, theta0: split + PI, theta1: split + 2.0 * PI, outward: true },
                ),
            ],
            Section::Polygon { outer, holes } => {
                let mut out: Vec<(String, Curve)> = polygon_edges(outer)
                    .into_iter()
                    .enumerate()
                    .map(|(i, c)| (format!("edge{i}"), c))
                    .collect();
                for (i, h) in holes.iter().enumerate() {
                    out.push((
                        format!("hole{i}-a"),
                        Curve::Arc { circle: *h, theta0: split, theta1: split + PI, outward: false },
                    ));
                    out.push((
                        format!("hole{i}-b"),
                        Curve::Arc { circle: *h, theta0: split + PI, theta1: split + 2.0 * PI, outward: false },
                    ));
                }
                out
            }
        }
    }

    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<[f64; 2]>, SamplerError> {
        match self {
            Section::Disk(c) => Ok((0..n)
                .map(|_| {
                    let r = c.radius * rng.random::<f64>().sqrt();
                    let th = 2.0 * PI * rng.random::<f64>();
                    [c.center[0] + r * th.cos(), c.center[1] + r * th.sin()]
                })
                .collect()),
            Section::Polygon { .. } => {
                let (lo, hi) = self.bounding_box();
                rejection(n, rng, |rng| {
                    let p = [
                        lo[0] + (hi[0] - lo[0]) * rng.random::<f64>(),
                        lo[1] + (hi[1] - lo[1]) * rng.random::<f64>(),
                    ];
                    self.contains(p).then_some(p)
                })
            }
        }
    }
}

fn polygon_edges(outer: &[[f64; 2]]) -> Vec<Curve> {
    (0..outer.len())
        .map(|i| Curve::Segment { a: outer[i], b: outer[(i + 1) % outer.len()] })
        .collect()
}

/// Draws `n` accepted proposals; fails if the acceptance rate drops below 1e-3.
fn rejection<T>(
    n: usize,
    rng: &mut ChaCha8Rng,
    mut propose: impl FnMut(&mut ChaCha8Rng) -> Option<T>,
) -> Result<Vec<T>, SamplerError> {
    let mut out = Vec::with_capacity(n);
    let mut proposed = 0usize;
    while out.len() < n {
        proposed += 1;
        if let Some(p) = propose(rng) {
            out.push(p);
        }
        if proposed >= 10_000 && (out.len() as f64) < 1e-3 * proposed as f64 {
            return Err(SamplerError::Degenerate { accepted: out.len(), proposed });
        }
    }
    Ok(out)
}

fn unit_gaussian_direction(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn unit_ball_volume(d: usize) -> f64 {
    // V_d = π^{d/2} / Γ(d/2 + 1), via V_d = 2π/d · V_{d−2}
    let mut v = if d.is_multiple_of(2) { 1.0 } else { 2.0 };
    let mut k = if d.is_multiple_of(2) { 2 } else { 3 };
    while k <= d {
        v *= 2.0 * PI / k as f64;
        k += 2;
    }
    v
}

fn surface_of_unit_sphere(d: usize) -> f64 {
    d as f64 * unit_ball_volume(d)
}

/// Interior and boundary samples with their Monte Carlo weights.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub interior: Array2<f64>,
    /// `|Ω| / N₁`.
    pub volume_weight: f64,
    pub boundary: Array2<f64>,
    pub normals: Array2<f64>,
    /// Index of the piece each boundary sample came from.
    pub pieces: Vec<usize>,
    /// `|∂Ω'| / N₂` for the selected pieces `∂Ω'`.
    pub surface_weight: f64,
}

impl Domain {
    pub fn hypercube(a: f64, b: f64, d: usize) -> Domain {
        Domain::Box { lower: vec![a; d], upper: vec![b; d] }
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        match self {
            Domain::Box { lower, upper } => {
                if lower.len() != upper.len() || lower.is_empty() || lower.iter().zip(upper).any(|(a, b)| a >= b) {
                    return Err(SamplerError::InvalidGeometry("box needs lower < upper in every axis".into()));
                }
            }
            Domain::Ball { center, radius } => {
                if center.is_empty() || *radius <= 0.0 {
                    return Err(SamplerError::InvalidGeometry("ball needs a positive radius".into()));
                }
            }
            Domain::AnnulusSector { r0, r1, theta0, theta1 } => {
                if !(0.0 <= *r0 && r0 < r1 && theta0 < theta1 && theta1 - theta0 <= 2.0 * PI) {
                    return Err(SamplerError::InvalidGeometry("bad annulus sector".into()));
                }
            }
            Domain::Extruded { t0, t1, section, .. } => {
                if t0 >= t1 {
                    return Err(SamplerError::InvalidGeometry("time interval is empty".into()));
                }
                section.validate()?;
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Box { lower, .. } => lower.len(),
            Domain::Ball { center, .. } => center.len(),
            Domain::AnnulusSector { .. } => 2,
            Domain::Extruded { .. } => 3,
        }
    }

    pub fn volume(&self) -> f64 {
        match self {
            Domain::Box { lower, upper } => lower.iter().zip(upper).map(|(a, b)| b - a).product(),
            Domain::Ball { center, radius } => unit_ball_volume(center.len()) * radius.powi(center.len() as i32),
            Domain::AnnulusSector { r0, r1, theta0, theta1 } => 0.5 * (theta1 - theta0) * (r1 * r1 - r0 * r0),
            Domain::Extruded { t0, t1, section, .. } => (t1 - t0) * section.area(),
        }
    }

    /// Axis-aligned box enclosing the domain.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Domain::Box { lower, upper } => (lower.clone(), upper.clone()),
            Domain::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            Domain::AnnulusSector { r1, .. } => (vec![-r1, -r1], vec![*r1, *r1]),
            Domain::Extruded { t0, t1, section, .. } => {
                let (lo, hi) = section.bounding_box();
                (vec![*t0, lo[0], lo[1]], vec![*t1, hi[0], hi[1]])
            }
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let eps = 1e-12;
        match self {
            Domain::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(v, (a, b))| *v >= a - eps && *v <= b + eps),
            Domain::Ball { center, radius } => {
                x.iter().zip(center).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt() <= radius + eps
            }
            Domain::AnnulusSector { r0, r1, theta0, theta1 } => {
                let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                let mut th = x[1].atan2(x[0]);
                if th < theta0 - eps {
                    th += 2.0 * PI;
                }
                r >= r0 - eps && r <= r1 + eps && th >= theta0 - eps && th <= theta1 + eps
            }
            Domain::Extruded { t0, t1, section, .. } => {
                x[0] >= t0 - eps && x[0] <= t1 + eps && section.contains([x[1], x[2]])
            }
        }
    }

    /// Boundary pieces in a fixed order.
    pub fn pieces(&self) -> Vec<BoundaryPiece> {
        match self {
            Domain::Box { lower, upper } => {
                let d = lower.len();
                let vol = self.volume();
                let mut out = Vec::with_capacity(2 * d);
                for k in 0..d {
                    let measure = vol / (upper[k] - lower[k]);
                    out.push(BoundaryPiece {
                        name: format!("x{k}=lower"),
                        shape: PieceShape::Face { axis: k, value: lower[k], upper: false },
                        measure,
                    });
                    out.push(BoundaryPiece {
                        name: format!("x{k}=upper"),
                        shape: PieceShape::Face { axis: k, value: upper[k], upper: true },
                        measure,
                    });
                }
                out
            }
            Domain::Ball { center, radius } => {
                let d = center.len();
                vec![BoundaryPiece {
                    name: "sphere".into(),
                    shape: PieceShape::Sphere { center: center.clone(), radius: *radius },
                    measure: surface_of_unit_sphere(d) * radius.powi(d as i32 - 1),
                }]
            }
            Domain::AnnulusSector { r0, r1, theta0, theta1 } => {
                let (s0, c0) = theta0.sin_cos();
                let (s1, c1) = theta1.sin_cos();
                let origin = Circle { center: [0.0, 0.0], radius: *r1 };
                let inner = Circle { center: [0.0, 0.0], radius: *r0 };
                let curves = vec![
                    ("ray-start", Curve::Segment { a: [r0 * c0, r0 * s0], b: [r1 * c0, r1 * s0] }),
                    ("ray-end", Curve::Segment { a: [r1 * c1, r1 * s1], b: [r0 * c1, r0 * s1] }),
                    ("arc-inner", Curve::Arc { circle: inner, theta0: *theta0, theta1: *theta1, outward: false }),
                    ("arc-outer", Curve::Arc { circle: origin, theta0: *theta0, theta1: *theta1, outward: true }),
                ];
                curves
                    .into_iter()
                    .filter(|(_, c)| c.length() > 0.0)
                    .map(|(n, c)| BoundaryPiece { name: n.into(), measure: c.length(), shape: PieceShape::Curve(c) })
                    .collect()
            }
            Domain::Extruded { t0, t1, section, arc_split } => {
                let area = section.area();
                let mut out = vec![
                    BoundaryPiece { name: "t=start".into(), shape: PieceShape::Cap { t: *t0, upper: false }, measure: area },
                    BoundaryPiece { name: "t=end".into(), shape: PieceShape::Cap { t: *t1, upper: true }, measure: area },
                ];
                for (name, c) in section.curves(*arc_split) {
                    out.push(BoundaryPiece {
                        name,
                        measure: (t1 - t0) * c.length(),
                        shape: PieceShape::Lateral { t0: *t0, t1: *t1, curve: c },
                    });
                }
                out
            }
        }
    }

    fn sample_interior_chunk(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>, SamplerError> {
        Ok(match self {
            Domain::Box { lower, upper } => (0..n)
                .map(|_| lower.iter().zip(upper).map(|(a, b)| a + (b - a) * rng.random::<f64>()).collect())
                .collect(),
            Domain::Ball { center, radius } => {
                let d = center.len();
                (0..n)
                    .map(|_| {
                        let dir = unit_gaussian_direction(d, rng);
                        let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
                        dir.iter().zip(center).map(|(u, c)| c + r * u).collect()
                    })
                    .collect()
            }
            Domain::AnnulusSector { r0, r1, theta0, theta1 } => (0..n)
                .map(|_| {
                    let r = (r0 * r0 + (r1 * r1 - r0 * r0) * rng.random::<f64>()).sqrt();
                    let th = theta0 + (theta1 - theta0) * rng.random::<f64>();
                    vec![r * th.cos(), r * th.sin()]
                })
                .collect(),
            Domain::Extruded { t0, t1, section, .. } => {
                let pts = section.sample(n, rng)?;
                pts.into_iter().map(|p| vec![t0 + (t1 - t0) * rng.random::<f64>(), p[0], p[1]]).collect()
            }
        })
    }

    fn sample_piece(&self, piece: &BoundaryPiece, rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, Vec<f64>), SamplerError> {
        Ok(match &piece.shape {
            PieceShape::Face { axis, value, upper } => {
                let Domain::Box { lower, upper: hi } = self else { unreachable!() };
                let mut x: Vec<f64> = lower.iter().zip(hi).map(|(a, b)| a + (b - a) * rng.random::<f64>()).collect();
                x[*axis] = *value;
                let mut n = vec![0.0; x.len()];
                n[*axis] = if *upper { 1.0 } else { -1.0 };
                (x, n)
            }
            PieceShape::Sphere { center, radius } => {
                let dir = unit_gaussian_direction(center.len(), rng);
                let x = dir.iter().zip(center).map(|(u, c)| c + radius * u).collect();
                (x, dir)
            }
            PieceShape::Curve(c) => {
                let (p, n) = c.at(rng.random::<f64>());
                (p.to_vec(), n.to_vec())
            }
            PieceShape::Lateral { t0, t1, curve } => {
                let (p, n) = curve.at(rng.random::<f64>());
                (vec![t0 + (t1 - t0) * rng.random::<f64>(), p[0], p[1]], vec![0.0, n[0], n[1]])
            }
            PieceShape::Cap { t, upper } => {
                let Domain::Extruded { section, .. } = self else { unreachable!() };
                let p = section.sample(1, rng)?[0];
                (vec![*t, p[0], p[1]], vec![if *upper { 1.0 } else { -1.0 }, 0.0, 0.0])
            }
        })
    }

    /// `n` uniform interior points. Chunk `c` uses stream `(master, purpose, step, c)`.
    pub fn sample_interior(&self, n: usize, master: u64, purpose: u64, step: u64) -> Result<Array2<f64>, SamplerError> {
        let d = self.dim();
        let chunks: Vec<Vec<Vec<f64>>> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut rng = derived_rng(master, purpose, step, c as u64);
                let len = CHUNK.min(n - c * CHUNK);
                self.sample_interior_chunk(len, &mut rng)
            })
            .collect::<Result<_, _>>()?;
        let mut out = Array2::zeros((n, d));
        for (i, p) in chunks.into_iter().flatten().enumerate() {
            out.row_mut(i).assign(&ndarray::ArrayView1::from(&p));
        }
        Ok(out)
    }
}

/// Draws a [`SampleBatch`]: `n1` interior points, `n2` boundary points on `selection`.
pub fn sample_batch(
    domain: &Domain,
    n1: usize,
    n2: usize,
    selection: &[usize],
    master: u64,
    step: u64,
) -> Result<SampleBatch, SamplerError> {
    let interior = domain.sample_interior(n1, master, 1, step)?;
    let d = domain.dim();
    let (boundary, normals, pieces, measure) = if n2 > 0 && !selection.is_empty() {
        sample_boundary(domain, n2, selection, master, 2, step)?
    } else {
        (Array2::zeros((0, d)), Array2::zeros((0, d)), Vec::new(), 0.0)
    };
    Ok(SampleBatch {
        volume_weight: if n1 > 0 { domain.volume() / n1 as f64 } else { 0.0 },
        surface_weight: if n2 > 0 { measure / n2 as f64 } else { 0.0 },
        interior,
        boundary,
        normals,
        pieces,
    })
}

/// `n` boundary points on the selected pieces, each piece chosen with
/// probability proportional to its measure. Returns points, outward normals,
/// piece indices and the total selected measure.
pub fn sample_boundary(
    domain: &Domain,
    n: usize,
    selection: &[usize],
    master: u64,
    purpose: u64,
    step: u64,
) -> Result<(Array2<f64>, Array2<f64>, Vec<usize>, f64), SamplerError> {
    if selection.is_empty() {
        return Err(SamplerError::EmptySelection);
    }
    let pieces = domain.pieces();
    for &i in selection {
        if i >= pieces.len() {
            return Err(SamplerError::UnknownPiece(i));
        }
    }
    let total: f64 = selection.iter().map(|&i| pieces[i].measure).sum();
    let d = domain.dim();
    let chunks: Vec<Vec<(Vec<f64>, Vec<f64>, usize)>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = derived_rng(master, purpose, step, c as u64);
            let len = CHUNK.min(n - c * CHUNK);
            (0..len)
                .map(|_| {
                    let mut u = rng.random::<f64>() * total;
                    let mut pick = selection[selection.len() - 1];
                    for &i in selection {
                        if u < pieces[i].measure {
                            pick = i;
                            break;
                        }
                        u -= pieces[i].measure;
                    }
                    let (x, nrm) = domain.sample_piece(&pieces[pick], &mut rng)?;
                    Ok((x, nrm, pick))
                })
                .collect::<Result<Vec<_>, SamplerError>>()
        })
        .collect::<Result<_, _>>()?;
    let mut pts = Array2::zeros((n, d));
    let mut nrm = Array2::zeros((n, d));
    let mut idx = Vec::with_capacity(n);
    for (i, (x, nv, k)) in chunks.into_iter().flatten().enumerate() {
        pts.row_mut(i).assign(&ndarray::ArrayView1::from(&x));
        nrm.row_mut(i).assign(&ndarray::ArrayView1::from(&nv));
        idx.push(k);
    }
    Ok((pts, nrm, idx, total))
}
