//! Forward-mode input derivatives recorded onto the reverse tape.
//!
//! Given an input node `X` (`n × d`) and an output node `Y = F(X)` built from
//! row-wise operations, [`input_derivatives`] appends nodes holding
//! `∂Y/∂x_k` for every input coordinate, stacked vertically as a `dn × m`
//! array (block `k` is the derivative along `x_k`), and optionally the
//! Laplacian `Σ_k ∂²Y/∂x_k²`. Because the new nodes live on the same tape,
//! a later backward pass differentiates through them with respect to the
//! parameters.

use std::collections::HashMap;

use ndarray::Array2;

use super::graph::{Graph, Op, Var};
use super::AutodiffError;

/// Tape nodes carrying the input derivatives of one output node.
#[derive(Debug, Clone, Copy)]
pub struct InputDerivatives {
    /// `∂Y/∂x_k` stacked over `k`, shape `dn × m`. `None` if `Y` is independent of the input.
    pub gradient: Option<Var>,
    /// `ΔY`, shape `n × m`, when requested and nonzero.
    pub laplacian: Option<Var>,
}

#[derive(Clone, Copy, Default)]
struct Jet {
    t: Option<Var>,
    l: Option<Var>,
}

fn add_opt(g: &mut Graph, a: Option<Var>, b: Option<Var>) -> Option<Var> {
    match (a, b) {
        (Some(a), Some(b)) => Some(g.add(a, b)),
        (a, None) => a,
        (None, b) => b,
    }
}

/// Records `∂Y/∂x` (and `ΔY` if `laplacian`) for each output on the tape.
pub fn input_derivatives(
    g: &mut Graph,
    input: Var,
    outputs: &[Var],
    laplacian: bool,
) -> Result<Vec<InputDerivatives>, AutodiffError> {
    let (n, d) = g.shape(input);
    let last = outputs.iter().map(|v| v.0).max().unwrap_or(input.0);
    let mut jets: HashMap<usize, Jet> = HashMap::new();

    // Seed: block k of the stacked tangent is e_k in every row.
    let mut seed = Array2::zeros((d * n, d));
    for k in 0..d {
        for i in 0..n {
            seed[[k * n + i, k]] = 1.0;
        }
    }
    let seed = g.constant(seed);
    jets.insert(input.0, Jet { t: Some(seed), l: None });

    for idx in input.0 + 1..=last {
        let op = g.op(Var(idx)).clone();
        let get = |v: &Var| jets.get(&v.0).copied().unwrap_or_default();
        let depends = |v: &Var| jets.contains_key(&v.0);
        let deps_any = match &op {
            Op::Leaf(_) => false,
            Op::Concat(parts) => parts.iter().any(depends),
            Op::MatMulT(a, b)
            | Op::AddRow(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MulTiled(a, b)
            | Op::MulCol(a, b)
            | Op::Div(a, b)
            | Op::RowDot(a, b)
            | Op::MatVec(a, b, _) => depends(a) || depends(b),
            Op::Scale(a, _)
            | Op::Offset(a, _)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::ReluPow(a, _)
            | Op::Step(a)
            | Op::Square(a)
            | Op::Abs(a)
            | Op::Sqrt(a)
            | Op::Ln(a)
            | Op::SumTiles(a, _)
            | Op::Tile(a, _)
            | Op::SliceRows(a, _, _)
            | Op::Col(a, _)
            | Op::Sum(a) => depends(a),
        };
        if !deps_any {
            continue;
        }
        let y = Var(idx);
        let jet = match op {
            Op::MatMulT(x, w) => {
                if depends(&w) {
                    return Err(AutodiffError::UnsupportedPrimitive("matmul_t with input-dependent weights"));
                }
                let jx = get(&x);
                Jet {
                    t: jx.t.map(|t| g.matmul_t(t, w)),
                    l: jx.l.map(|l| g.matmul_t(l, w)),
                }
            }
            Op::AddRow(x, b) => {
                if depends(&b) {
                    return Err(AutodiffError::UnsupportedPrimitive("add_row with input-dependent bias"));
                }
                get(&x)
            }
            Op::Add(a, b) => {
                let (ja, jb) = (get(&a), get(&b));
                Jet {
                    t: add_opt(g, ja.t, jb.t),
                    l: add_opt(g, ja.l, jb.l),
                }
            }
            Op::Sub(a, b) => {
                let (ja, jb) = (get(&a), get(&b));
                let nt = jb.t.map(|t| g.neg(t));
                let nl = jb.l.map(|l| g.neg(l));
                Jet {
                    t: add_opt(g, ja.t, nt),
                    l: add_opt(g, ja.l, nl),
                }
            }
            Op::Mul(a, b) => {
                let (ja, jb) = (get(&a), get(&b));
                let t1 = jb.t.map(|t| g.mul_tiled(a, t));
                let t2 = ja.t.map(|t| g.mul_tiled(b, t));
                let t = add_opt(g, t1, t2);
                let l = if laplacian {
                    let l1 = jb.l.map(|l| g.mul(a, l));
                    let l2 = ja.l.map(|l| g.mul(b, l));
                    let cross = match (ja.t, jb.t) {
                        (Some(ta), Some(tb)) => {
                            let p = g.mul(ta, tb);
                            let s = g.sum_tiles(p, d);
                            Some(g.scale(s, 2.0))
                        }
                        _ => None,
                    };
                    let l12 = add_opt(g, l1, l2);
                    add_opt(g, l12, cross)
                } else {
                    None
                };
                Jet { t, l }
            }
            Op::MulCol(x, c) => {
                let (jx, jc) = (get(&x), get(&c));
                let t1 = jx.t.map(|t| {
                    let ct = g.tile(c, d);
                    g.mul_col(t, ct)
                });
                let t2 = jc.t.map(|t| {
                    let xt = g.tile(x, d);
                    g.mul_col(xt, t)
                });
                let t = add_opt(g, t1, t2);
                let l = if laplacian {
                    let l1 = jx.l.map(|l| g.mul_col(l, c));
                    let l2 = jc.l.map(|l| g.mul_col(x, l));
                    let cross = match (jx.t, jc.t) {
                        (Some(tx), Some(tc)) => {
                            let p = g.mul_col(tx, tc);
                            let s = g.sum_tiles(p, d);
                            Some(g.scale(s, 2.0))
                        }
                        _ => None,
                    };
                    let l12 = add_opt(g, l1, l2);
                    add_opt(g, l12, cross)
                } else {
                    None
                };
                Jet { t, l }
            }
            Op::Scale(x, c) => {
                let jx = get(&x);
                Jet {
                    t: jx.t.map(|t| g.scale(t, c)),
                    l: jx.l.map(|l| g.scale(l, c)),
                }
            }
            Op::Offset(x, _) => get(&x),
            Op::Tanh(x) => {
                let jx = get(&x);
                // σ' = 1 − y², σ'' = −2 y σ'
                let y2 = g.square(y);
                let ny2 = g.neg(y2);
                let s1 = g.offset(ny2, 1.0);
                let s2 = if laplacian {
                    let ys = g.mul(y, s1);
                    Some(g.scale(ys, -2.0))
                } else {
                    None
                };
                activation_jet(g, jx, s1, s2, d, laplacian)
            }
            Op::Relu(x) => {
                let jx = get(&x);
                let s1 = g.step(x);
                activation_jet(g, jx, s1, None, d, laplacian)
            }
            Op::ReluPow(x, k) => {
                let jx = get(&x);
                let p1 = g.relu_pow(x, k - 1);
                let s1 = g.scale(p1, k as f64);
                let s2 = if laplacian {
                    let p2 = g.relu_pow(x, k - 2);
                    Some(g.scale(p2, (k * (k - 1)) as f64))
                } else {
                    None
                };
                activation_jet(g, jx, s1, s2, d, laplacian)
            }
            Op::Step(_) => Jet::default(),
            Op::Square(x) => {
                let jx = get(&x);
                let x2 = g.scale(x, 2.0);
                let s2 = if laplacian {
                    let ones = Array2::from_elem(g.shape(x), 2.0);
                    Some(g.constant(ones))
                } else {
                    None
                };
                activation_jet(g, jx, x2, s2, d, laplacian)
            }
            Op::Col(x, j) => {
                let jx = get(&x);
                Jet {
                    t: jx.t.map(|t| g.col(t, j)),
                    l: jx.l.map(|l| g.col(l, j)),
                }
            }
            Op::Concat(parts) => {
                let jets_p: Vec<Jet> = parts.iter().map(&get).collect();
                let t = if jets_p.iter().any(|j| j.t.is_some()) {
                    let mut ts = Vec::with_capacity(parts.len());
                    for (p, j) in parts.iter().zip(&jets_p) {
                        ts.push(match j.t {
                            Some(t) => t,
                            None => {
                                let w = g.shape(*p).1;
                                g.constant(Array2::zeros((d * n, w)))
                            }
                        });
                    }
                    Some(g.concat(&ts))
                } else {
                    None
                };
                let l = if laplacian && jets_p.iter().any(|j| j.l.is_some()) {
                    let mut ls = Vec::with_capacity(parts.len());
                    for (p, j) in parts.iter().zip(&jets_p) {
                        ls.push(match j.l {
                            Some(l) => l,
                            None => {
                                let shape = g.shape(*p);
                                g.constant(Array2::zeros(shape))
                            }
                        });
                    }
                    Some(g.concat(&ls))
                } else {
                    None
                };
                Jet { t, l }
            }
            Op::MatVec(c, v, r_out) => {
                if depends(&c) {
                    return Err(AutodiffError::UnsupportedPrimitive("matvec with input-dependent coefficients"));
                }
                let jv = get(&v);
                let t = jv.t.map(|t| {
                    let ct = g.tile(c, d);
                    g.matvec(ct, t, r_out)
                });
                let l = jv.l.map(|l| g.matvec(c, l, r_out));
                Jet { t, l }
            }
            other => return Err(AutodiffError::UnsupportedPrimitive(other.name())),
        };
        if jet.t.is_some() || jet.l.is_some() {
            jets.insert(idx, jet);
        } else {
            jets.insert(idx, Jet::default());
        }
    }

    Ok(outputs
        .iter()
        .map(|o| {
            let j = jets.get(&o.0).copied().unwrap_or_default();
            InputDerivatives {
                gradient: j.t,
                laplacian: if laplacian { j.l } else { None },
            }
        })
        .collect())
}

/// Chain rule for an elementwise map with first/second derivative nodes `s1`, `s2`.
fn activation_jet(
    g: &mut Graph,
    jx: Jet,
    s1: Var,
    s2: Option<Var>,
    d: usize,
    laplacian: bool,
) -> Jet {
    let t = jx.t.map(|t| g.mul_tiled(s1, t));
    let l = if laplacian {
        let l1 = jx.l.map(|l| g.mul(s1, l));
        let l2 = match (s2, jx.t) {
            (Some(s2), Some(t)) => {
                let t2 = g.square(t);
                let q = g.sum_tiles(t2, d);
                Some(g.mul(s2, q))
            }
            _ => None,
        };
        add_opt(g, l1, l2)
    } else {
        None
    };
    Jet { t, l }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn square_of_first_coordinate() {
        let mut g = Graph::new();
        let x = g.constant(array![[3.0]]);
        let y = g.square(x);
        let dy = input_derivatives(&mut g, x, &[y], true).unwrap()[0];
        assert_eq!(g.value(y)[[0, 0]], 9.0);
        assert_eq!(g.value(dy.gradient.unwrap())[[0, 0]], 6.0);
        assert_eq!(g.value(dy.laplacian.unwrap())[[0, 0]], 2.0);
    }

    #[test]
    fn tanh_at_origin() {
        let mut g = Graph::new();
        let x = g.constant(array![[0.0]]);
        let y = g.tanh(x);
        let dy = input_derivatives(&mut g, x, &[y], false).unwrap()[0];
        assert_eq!(g.value(y)[[0, 0]], 0.0);
        assert_eq!(g.value(dy.gradient.unwrap())[[0, 0]], 1.0);
    }

    #[test]
    fn unsupported_primitive_is_named() {
        let mut g = Graph::new();
        let x = g.constant(array![[0.5, 0.2]]);
        let y = g.sqrt(x);
        let err = input_derivatives(&mut g, x, &[y], false).unwrap_err();
        assert_eq!(err, AutodiffError::UnsupportedPrimitive("sqrt"));
    }

    #[test]
    fn mixed_second_order_parameter_gradient() {
        // loss = (d/dx tanh(w x))² = (w (1 − tanh²(w x)))²
        let (w0, x0) = (0.7_f64, 0.3_f64);
        let mut g = Graph::new();
        let w = g.param(array![[w0]]);
        let x = g.constant(array![[x0]]);
        let z = g.matmul_t(x, w);
        let y = g.tanh(z);
        let dy = input_derivatives(&mut g, x, &[y], false).unwrap()[0].gradient.unwrap();
        let sq = g.square(dy);
        let loss = g.sum(sq);
        let grads = g.backward(loss, 1.0).unwrap();
        let got = grads.get(w).unwrap()[[0, 0]];
        // symbolic: L = w² s², s = sech²(wx); dL/dw = 2 w s² + w² · 2 s · ds/dw,
        // ds/dw = −2 x tanh(wx) s
        let t = (w0 * x0).tanh();
        let s = 1.0 - t * t;
        let expected = 2.0 * w0 * s * s + w0 * w0 * 2.0 * s * (-2.0 * x0 * t * s);
        assert!((got - expected).abs() < 1e-14, "{got} vs {expected}");
    }
}
