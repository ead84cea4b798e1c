//! Reverse-mode tape with forward-mode input derivatives recorded on it.

mod forward;
mod graph;
pub mod jet;

use ndarray::{Array2, Array3};
use thiserror::Error;

pub use forward::{input_derivatives, InputDerivatives};
pub use graph::{pairwise_sum, Gradients, Graph, Var};
pub use jet::Jet;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("backward requires a scalar root, got a {rows}x{cols} node")]
    NonScalarRoot { rows: usize, cols: usize },
    #[error("primitive `{0}` is not supported by forward-mode input differentiation")]
    UnsupportedPrimitive(&'static str),
}

/// Per-sample outputs with their exact input jacobians.
#[derive(Debug, Clone)]
pub struct DualBatch {
    /// `N × r`.
    pub value: Array2<f64>,
    /// `N × r × d`, entry `[i, j, k] = ∂ out_j / ∂ x_k` at sample `i`.
    pub input_jacobian: Array3<f64>,
}

/// Unstacks a `dn × r` tangent node into an `n × r × d` jacobian.
pub fn unstack_jacobian(stacked: &Array2<f64>, d: usize) -> Array3<f64> {
    let (dn, r) = stacked.dim();
    let n = dn / d;
    Array3::from_shape_fn((n, r, d), |(i, j, k)| stacked[[k * n + i, j]])
}

/// Evaluates `net_eval` on `points` (`N × d`) together with its input jacobian.
pub fn forward_dual<F>(net_eval: F, points: &Array2<f64>) -> Result<DualBatch, AutodiffError>
where
    F: FnOnce(&mut Graph, Var) -> Var,
{
    let mut g = Graph::new();
    let x = g.constant(points.clone());
    let y = net_eval(&mut g, x);
    let d = points.ncols();
    let der = input_derivatives(&mut g, x, &[y], false)?[0];
    let value = g.value(y).clone();
    let input_jacobian = match der.gradient {
        Some(t) => unstack_jacobian(g.value(t), d),
        None => Array3::zeros((value.nrows(), value.ncols(), d)),
    };
    Ok(DualBatch {
        value,
        input_jacobian,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn dual_batch_of_product() {
        // f(x, y) = x·y, jacobian (y, x)
        let pts = array![[2.0, 3.0], [-1.0, 0.5]];
        let db = forward_dual(
            |g, x| {
                let a = g.col(x, 0);
                let b = g.col(x, 1);
                g.mul(a, b)
            },
            &pts,
        )
        .unwrap();
        assert_eq!(db.value, array![[6.0], [-0.5]]);
        assert_eq!(db.input_jacobian[[0, 0, 0]], 3.0);
        assert_eq!(db.input_jacobian[[0, 0, 1]], 2.0);
        assert_eq!(db.input_jacobian[[1, 0, 0]], 0.5);
        assert_eq!(db.input_jacobian[[1, 0, 1]], -1.0);
    }
}
