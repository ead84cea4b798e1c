use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use rayon::prelude::*;

use crate::autodiff::{input_derivatives, Gradients, Graph, Jet, Var};

use super::resnet::ResNetParams;
use super::NetworkError;

/// Closed-form vector field of a point, evaluated on jets.
pub type PointFn = Arc<dyn Fn(&[Jet]) -> Vec<Jet> + Send + Sync>;

/// How many input derivatives to carry along with values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DerivOrder {
    Value,
    Gradient,
    Laplacian,
}

/// A closed-form field evaluated on a batch: values `n×r`, stacked
/// gradients `dn×r` (block `k` holds `∂_k`), Laplacians `n×r`.
#[derive(Debug, Clone)]
pub struct FieldBatch {
    pub value: Array2<f64>,
    pub gradient: Option<Array2<f64>>,
    pub laplacian: Option<Array2<f64>>,
}

impl FieldBatch {
    /// Evaluates `f` at every row of `points`.
    pub fn eval(f: &PointFn, points: &Array2<f64>, r: usize, order: DerivOrder) -> FieldBatch {
        let (n, d) = points.dim();
        let rows: Vec<Vec<Jet>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let p = points.row(i).to_vec();
                let x = if order == DerivOrder::Value {
                    Jet::point_const(&p)
                } else {
                    Jet::point(&p)
                };
                let out = f(&x);
                debug_assert_eq!(out.len(), r);
                out
            })
            .collect();
        let value = Array2::from_shape_fn((n, r), |(i, j)| rows[i][j].v);
        let gradient = (order >= DerivOrder::Gradient)
            .then(|| Array2::from_shape_fn((d * n, r), |(ki, j)| rows[ki % n][j].grad(ki / n)));
        let laplacian =
            (order >= DerivOrder::Laplacian).then(|| Array2::from_shape_fn((n, r), |(i, j)| rows[i][j].l));
        FieldBatch {
            value,
            gradient,
            laplacian,
        }
    }
}

/// The pair `(h, b)` of a hard boundary encoding `φ = h·φ̂ + b`, with one
/// mask per output component.
#[derive(Clone)]
pub struct BoundaryEncoder {
    pub mask: PointFn,
    pub lift: PointFn,
    pub output_dim: usize,
}

impl fmt::Debug for BoundaryEncoder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BoundaryEncoder(r={})", self.output_dim)
    }
}

impl BoundaryEncoder {
    pub fn new(mask: PointFn, lift: PointFn, output_dim: usize) -> Self {
        BoundaryEncoder {
            mask,
            lift,
            output_dim,
        }
    }

    /// `h ≡ 1`, `b ≡ 0`: an unconstrained network.
    pub fn free(output_dim: usize) -> Self {
        BoundaryEncoder {
            mask: Arc::new(move |_| vec![Jet::constant(1.0); output_dim]),
            lift: Arc::new(move |_| vec![Jet::constant(0.0); output_dim]),
            output_dim,
        }
    }

    /// The same scalar mask on every component and the given lift.
    pub fn scalar_mask<H, B>(mask: H, lift: B, output_dim: usize) -> Self
    where
        H: Fn(&[Jet]) -> Jet + Send + Sync + 'static,
        B: Fn(&[Jet]) -> Vec<Jet> + Send + Sync + 'static,
    {
        BoundaryEncoder {
            mask: Arc::new(move |x| vec![mask(x); output_dim]),
            lift: Arc::new(lift),
            output_dim,
        }
    }
}

/// Tape nodes of an encoded field evaluated on a batch.
#[derive(Debug, Clone)]
pub struct TracedField {
    pub value: Var,
    pub gradient: Option<Var>,
    pub laplacian: Option<Var>,
    /// Parameter leaves, in [`FieldModel::tensors`] order.
    pub params: Vec<Var>,
}

/// A trainable encoded field `φ = h ⊙ [φ̂₁, …, φ̂_J] + b`.
///
/// The networks' outputs are concatenated into the `r` components. After a
/// restart, `b` is the frozen previous model instead of the encoder's lift.
#[derive(Debug, Clone)]
pub struct FieldModel {
    pub nets: Vec<ResNetParams>,
    pub encoder: BoundaryEncoder,
    pub frozen: Option<Box<FieldModel>>,
}

impl FieldModel {
    pub fn new(nets: Vec<ResNetParams>, encoder: BoundaryEncoder) -> Result<Self, NetworkError> {
        if nets.is_empty() {
            return Err(NetworkError::InvalidConfig("a field needs at least one network".into()));
        }
        let d = nets[0].config.input_dim;
        if nets.iter().any(|n| n.config.input_dim != d) {
            return Err(NetworkError::ShapeMismatch("networks disagree on input dimension".into()));
        }
        let r: usize = nets.iter().map(|n| n.config.output_dim).sum();
        if r != encoder.output_dim {
            return Err(NetworkError::ShapeMismatch(format!(
                "networks produce {r} components, encoder expects {}",
                encoder.output_dim
            )));
        }
        Ok(FieldModel {
            nets,
            encoder,
            frozen: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.nets[0].config.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.encoder.output_dim
    }

    /// Number of frozen generations underneath this one.
    pub fn generations(&self) -> usize {
        self.frozen.as_ref().map_or(0, |f| 1 + f.generations())
    }

    /// Freezes `self` into the lift of a model built on `fresh` networks.
    pub fn restart(self, fresh: Vec<ResNetParams>) -> Result<FieldModel, NetworkError> {
        let encoder = self.encoder.clone();
        let mut m = FieldModel::new(fresh, encoder)?;
        m.frozen = Some(Box::new(self));
        Ok(m)
    }

    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        self.nets.iter().flat_map(|n| n.tensors().iter()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.nets.iter_mut().flat_map(|n| n.tensors_mut().iter_mut()).collect()
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Parameter adjoints in [`FieldModel::tensors`] order (zeros where absent).
    pub fn collect_grads(&self, grads: &Gradients, traced: &TracedField) -> Vec<Array2<f64>> {
        self.tensors()
            .iter()
            .zip(&traced.params)
            .map(|(t, v)| grads.get_or_zeros(*v, t.dim()))
            .collect()
    }

    /// Concatenated raw network outputs `φ̂`.
    pub fn raw_forward(&self, points: &Array2<f64>) -> Result<Array2<f64>, NetworkError> {
        let outs = self
            .nets
            .iter()
            .map(|n| n.forward(points))
            .collect::<Result<Vec<_>, _>>()?;
        let views: Vec<_> = outs.iter().map(|o| o.view()).collect();
        Ok(ndarray::concatenate(Axis(1), &views).expect("same row count"))
    }

    /// Lift `b` on a batch: encoder lift, or the frozen model.
    pub fn lift_batch(&self, points: &Array2<f64>, order: DerivOrder) -> Result<FieldBatch, NetworkError> {
        match &self.frozen {
            Some(f) => f.evaluate_with(points, order),
            None => Ok(FieldBatch::eval(&self.encoder.lift, points, self.output_dim(), order)),
        }
    }

    pub fn mask_batch(&self, points: &Array2<f64>, order: DerivOrder) -> FieldBatch {
        FieldBatch::eval(&self.encoder.mask, points, self.output_dim(), order)
    }

    /// Plain evaluation of `φ`.
    pub fn evaluate(&self, points: &Array2<f64>) -> Result<Array2<f64>, NetworkError> {
        let raw = self.raw_forward(points)?;
        let h = self.mask_batch(points, DerivOrder::Value).value;
        let b = self.lift_batch(points, DerivOrder::Value)?.value;
        Ok(h * raw + b)
    }

    /// Evaluation of `φ` with input derivatives up to `order`, without
    /// keeping the tape.
    pub fn evaluate_with(&self, points: &Array2<f64>, order: DerivOrder) -> Result<FieldBatch, NetworkError> {
        if order == DerivOrder::Value {
            return Ok(FieldBatch {
                value: self.evaluate(points)?,
                gradient: None,
                laplacian: None,
            });
        }
        let mut g = Graph::new();
        let x = g.constant(points.clone());
        let t = self.trace(&mut g, x, order, false)?;
        Ok(FieldBatch {
            value: g.value(t.value).clone(),
            gradient: t.gradient.map(|v| g.value(v).clone()),
            laplacian: t.laplacian.map(|v| g.value(v).clone()),
        })
    }

    /// Records `φ` (and its input derivatives up to `order`) on `g`, with
    /// parameters as trainable leaves when `trainable`.
    pub fn trace(&self, g: &mut Graph, x: Var, order: DerivOrder, trainable: bool) -> Result<TracedField, NetworkError> {
        let points = g.value(x).clone();
        let (n, d) = points.dim();
        let r = self.output_dim();
        let mut outs = Vec::with_capacity(self.nets.len());
        let mut params = Vec::new();
        for net in &self.nets {
            let (y, p) = net.trace(g, x, trainable)?;
            outs.push(y);
            params.extend(p);
        }
        let raw = g.concat(&outs);
        let mask = self.mask_batch(&points, order);
        let mut lift = self.lift_batch(&points, order)?;
        if lift.value.dim() != (n, r) {
            return Err(NetworkError::ShapeMismatch("lift has wrong shape".into()));
        }

        let h = g.constant(mask.value.clone());
        let hr = g.mul(h, raw);
        let b = g.constant(std::mem::replace(&mut lift.value, Array2::zeros((0, 0))));
        let value = g.add(hr, b);
        if order == DerivOrder::Value {
            return Ok(TracedField {
                value,
                gradient: None,
                laplacian: None,
                params,
            });
        }

        let want_lap = order == DerivOrder::Laplacian;
        let der = input_derivatives(g, x, &[raw], want_lap).map_err(NetworkError::Autodiff)?[0];
        let draw = match der.gradient {
            Some(v) => v,
            None => g.constant(Array2::zeros((d * n, r))),
        };
        let dh = g.constant(mask.gradient.expect("gradient requested"));
        let db = g.constant(lift.gradient.take().expect("gradient requested"));
        let t1 = g.mul_tiled(h, draw);
        let t2 = g.mul_tiled(raw, dh);
        let t12 = g.add(t1, t2);
        let gradient = g.add(t12, db);

        let laplacian = if want_lap {
            let lh = g.constant(mask.laplacian.expect("laplacian requested"));
            let lb = g.constant(lift.laplacian.take().expect("laplacian requested"));
            let mut acc = g.mul(raw, lh);
            if let Some(lr) = der.laplacian {
                let hl = g.mul(h, lr);
                acc = g.add(acc, hl);
            }
            let cross = g.mul(dh, draw);
            let cross = g.sum_tiles(cross, d);
            let cross = g.scale(cross, 2.0);
            acc = g.add(acc, cross);
            Some(g.add(acc, lb))
        } else {
            None
        };
        Ok(TracedField {
            value,
            gradient: Some(gradient),
            laplacian,
            params,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, InitScheme, ResNetConfig};
    use ndarray::array;

    fn tanh_net(d: usize, r: usize, seed: u64) -> ResNetParams {
        let c = ResNetConfig {
            input_dim: d,
            output_dim: r,
            width: 6,
            depth: 3,
            activation: Activation::Tanh,
        };
        ResNetParams::init(c, seed, InitScheme::XavierUniform).unwrap()
    }

    fn disk_encoder() -> BoundaryEncoder {
        BoundaryEncoder::scalar_mask(
            |x: &[Jet]| x[0].square() + x[1].square() - 1.0,
            |x: &[Jet]| vec![x[0].sin() * x[1].clone()],
            1,
        )
    }

    #[test]
    fn encoded_field_matches_lift_on_boundary() {
        let m = FieldModel::new(vec![tanh_net(2, 1, 3)], disk_encoder()).unwrap();
        let pts = Array2::from_shape_fn((50, 2), |(i, k)| {
            let t = i as f64 * 0.37;
            if k == 0 {
                t.cos()
            } else {
                t.sin()
            }
        });
        let phi = m.evaluate(&pts).unwrap();
        for (i, row) in pts.axis_iter(Axis(0)).enumerate() {
            let b = row[0].sin() * row[1];
            assert!((phi[[i, 0]] - b).abs() < 1e-12);
        }
    }

    #[test]
    fn encoded_derivatives_match_finite_differences() {
        let m = FieldModel::new(vec![tanh_net(2, 1, 5)], disk_encoder()).unwrap();
        let x = array![[0.3, -0.2], [0.55, 0.1]];
        let fb = m.evaluate_with(&x, DerivOrder::Laplacian).unwrap();
        let h = 1e-4;
        for i in 0..2 {
            let mut lap = 0.0;
            let f0 = m.evaluate(&x.slice(ndarray::s![i..i + 1, ..]).to_owned()).unwrap()[[0, 0]];
            for k in 0..2 {
                let mut xp = x.slice(ndarray::s![i..i + 1, ..]).to_owned();
                let mut xm = xp.clone();
                xp[[0, k]] += h;
                xm[[0, k]] -= h;
                let fp = m.evaluate(&xp).unwrap()[[0, 0]];
                let fm = m.evaluate(&xm).unwrap()[[0, 0]];
                let fd = (fp - fm) / (2.0 * h);
                let g = fb.gradient.as_ref().unwrap()[[k * 2 + i, 0]];
                assert!((fd - g).abs() < 1e-7, "{fd} vs {g}");
                lap += (fp - 2.0 * f0 + fm) / (h * h);
            }
            let l = fb.laplacian.as_ref().unwrap()[[i, 0]];
            assert!((lap - l).abs() < 1e-4, "{lap} vs {l}");
        }
    }

    #[test]
    fn restart_keeps_previous_field_as_lift() {
        let m = FieldModel::new(vec![tanh_net(2, 1, 1)], disk_encoder()).unwrap();
        let x = array![[0.1, 0.2], [-0.5, 0.4]];
        let before = m.evaluate(&x).unwrap();
        let fresh = tanh_net(2, 1, 2);
        let m2 = m.restart(vec![fresh.clone()]).unwrap();
        let after = m2.evaluate(&x).unwrap();
        let h = m2.mask_batch(&x, DerivOrder::Value).value;
        let expected = &before + &(h * fresh.forward(&x).unwrap());
        for (a, b) in after.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(m2.generations(), 1);
    }
}
