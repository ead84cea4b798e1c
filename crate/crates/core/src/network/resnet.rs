use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};

use super::NetworkError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    /// `max(0, x)^k`.
    ReluPow(u32),
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::ReluPow(k) => {
                if x > 0.0 {
                    x.powi(k as i32)
                } else {
                    0.0
                }
            }
        }
    }

    /// Kaiming for the ReLU family, Xavier for Tanh.
    pub fn default_init(self) -> InitScheme {
        match self {
            Activation::Tanh => InitScheme::XavierUniform,
            _ => InitScheme::KaimingUniform,
        }
    }

    fn trace(self, g: &mut Graph, z: Var) -> Var {
        match self {
            Activation::Relu => g.relu(z),
            Activation::Tanh => g.tanh(z),
            Activation::ReluPow(k) => g.relu_pow(z, k),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// `U(−√(6/fan_in), √(6/fan_in))`.
    KaimingUniform,
    /// `U(−√(6/(fan_in+fan_out)), …)`.
    XavierUniform,
}

impl InitScheme {
    pub fn bound(self, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            InitScheme::KaimingUniform => (6.0 / fan_in as f64).sqrt(),
            InitScheme::XavierUniform => (6.0 / (fan_in + fan_out) as f64).sqrt(),
        }
    }
}

/// Half-width of the uniform bias initialisation. With zero biases and no
/// input bias a ReLU network is positively homogeneous in `x`, which it
/// only unlearns slowly.
pub const BIAS_BOUND: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResNetConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    pub width: usize,
    pub depth: usize,
    pub activation: Activation,
}

impl ResNetConfig {
    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.depth == 0 || self.width == 0 || self.input_dim == 0 || self.output_dim == 0 {
            return Err(NetworkError::InvalidConfig(format!(
                "depth, width and dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        let (d, m, r, l) = (self.input_dim, self.width, self.output_dim, self.depth);
        m * d + l * (m * m + m) + m * r
    }
}

/// Parameters of the residual network.
///
/// Tensors are kept in the layout used by the tape: `V` is `m×d`, each
/// `W_ℓ` is `m×m`, each `b_ℓ` is `1×m` and the readout is stored transposed
/// as `r×m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResNetParams {
    pub config: ResNetConfig,
    tensors: Vec<Array2<f64>>,
}

impl ResNetParams {
    pub fn zeros(config: ResNetConfig) -> Result<Self, NetworkError> {
        config.validate()?;
        let (d, m, r) = (config.input_dim, config.width, config.output_dim);
        let mut tensors = vec![Array2::zeros((m, d))];
        for _ in 0..config.depth {
            tensors.push(Array2::zeros((m, m)));
            tensors.push(Array2::zeros((1, m)));
        }
        tensors.push(Array2::zeros((r, m)));
        Ok(ResNetParams { config, tensors })
    }

    /// Uniform random weights within the scheme's bound, biases uniform in
    /// `±BIAS_BOUND`.
    pub fn init(config: ResNetConfig, seed: u64, scheme: InitScheme) -> Result<Self, NetworkError> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, m, r) = (config.input_dim, config.width, config.output_dim);
        let fill = |a: &mut Array2<f64>, bound: f64, rng: &mut ChaCha8Rng| {
            a.mapv_inplace(|_| rng.random_range(-bound..=bound));
        };
        fill(&mut p.tensors[0], scheme.bound(d, m), &mut rng);
        for l in 0..config.depth {
            fill(&mut p.tensors[1 + 2 * l], scheme.bound(m, m), &mut rng);
            fill(&mut p.tensors[2 + 2 * l], BIAS_BOUND, &mut rng);
        }
        let last = p.tensors.len() - 1;
        fill(&mut p.tensors[last], scheme.bound(m, r), &mut rng);
        Ok(p)
    }

    pub fn from_tensors(config: ResNetConfig, tensors: Vec<Array2<f64>>) -> Result<Self, NetworkError> {
        let z = Self::zeros(config)?;
        if tensors.len() != z.tensors.len()
            || tensors.iter().zip(&z.tensors).any(|(a, b)| a.dim() != b.dim())
        {
            return Err(NetworkError::ShapeMismatch(
                "parameter tensors do not match the configuration".into(),
            ));
        }
        Ok(ResNetParams { config, tensors })
    }

    pub fn tensors(&self) -> &[Array2<f64>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.tensors
    }

    /// Names matching [`ResNetParams::tensors`], used by checkpoints.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = vec!["V".to_string()];
        for l in 1..=self.config.depth {
            names.push(format!("W{l}"));
            names.push(format!("b{l}"));
        }
        names.push("a".to_string());
        names
    }

    pub fn input_weight(&self) -> &Array2<f64> {
        &self.tensors[0]
    }

    pub fn layer_weight(&self, l: usize) -> &Array2<f64> {
        &self.tensors[1 + 2 * (l - 1)]
    }

    pub fn layer_bias(&self, l: usize) -> &Array2<f64> {
        &self.tensors[2 + 2 * (l - 1)]
    }

    /// Readout `a` as an `m×r` matrix.
    pub fn readout(&self) -> Array2<f64> {
        self.tensors[self.tensors.len() - 1].t().to_owned()
    }

    pub fn set_readout(&mut self, a: &Array2<f64>) {
        let last = self.tensors.len() - 1;
        self.tensors[last] = a.t().to_owned();
    }

    fn check_input(&self, cols: usize) -> Result<(), NetworkError> {
        if cols != self.config.input_dim {
            return Err(NetworkError::ShapeMismatch(format!(
                "input has {cols} columns, network expects {}",
                self.config.input_dim
            )));
        }
        Ok(())
    }

    /// Plain evaluation on an `N×d` batch, returning `N×r`.
    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>, NetworkError> {
        self.check_input(x.ncols())?;
        let act = self.config.activation;
        let h0 = x.dot(&self.tensors[0].t());
        let mut prev2 = Array2::zeros(h0.dim());
        let mut prev = h0;
        for l in 1..=self.config.depth {
            let mut z = prev.dot(&self.layer_weight(l).t());
            z += &self.layer_bias(l).row(0);
            z.mapv_inplace(|v| act.apply(v));
            if l % 2 == 0 {
                z += &prev2;
            }
            prev2 = std::mem::replace(&mut prev, z);
        }
        Ok(prev.dot(&self.tensors[self.tensors.len() - 1].t()))
    }

    /// Records the forward pass on `g`. Returns the output node and the
    /// parameter leaves in [`ResNetParams::tensors`] order; the leaves are
    /// constants unless `trainable`.
    pub fn trace(&self, g: &mut Graph, x: Var, trainable: bool) -> Result<(Var, Vec<Var>), NetworkError> {
        self.check_input(g.shape(x).1)?;
        let act = self.config.activation;
        let leaves: Vec<Var> = self
            .tensors
            .iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        let mut prev = g.matmul_t(x, leaves[0]);
        let mut prev2: Option<Var> = None;
        for l in 1..=self.config.depth {
            let z = g.matmul_t(prev, leaves[2 * l - 1]);
            let z = g.add_row(z, leaves[2 * l]);
            let mut h = act.trace(g, z);
            if l % 2 == 0 {
                if let Some(p2) = prev2 {
                    h = g.add(h, p2);
                }
            }
            prev2 = Some(prev);
            prev = h;
        }
        let out = g.matmul_t(prev, leaves[leaves.len() - 1]);
        Ok((out, leaves))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn cfg(d: usize, r: usize, m: usize, depth: usize, act: Activation) -> ResNetConfig {
        ResNetConfig {
            input_dim: d,
            output_dim: r,
            width: m,
            depth,
            activation: act,
        }
    }

    #[test]
    fn hand_evaluated_two_layer_relu() {
        let c = cfg(1, 1, 1, 2, Activation::Relu);
        let p = ResNetParams::from_tensors(
            c,
            vec![
                array![[1.0]],
                array![[1.0]],
                array![[0.0]],
                array![[1.0]],
                array![[0.0]],
                array![[1.0]],
            ],
        )
        .unwrap();
        let y = p.forward(&array![[2.0]]).unwrap();
        assert_eq!(y, array![[4.0]]);
    }

    #[test]
    fn zero_params_give_zero_output() {
        let p = ResNetParams::zeros(cfg(3, 2, 5, 7, Activation::Tanh)).unwrap();
        let y = p.forward(&array![[0.3, -0.1, 0.9]]).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn trace_matches_plain_forward() {
        let c = cfg(2, 3, 6, 5, Activation::Tanh);
        let p = ResNetParams::init(c, 7, InitScheme::XavierUniform).unwrap();
        let x = array![[0.2, -0.7], [0.9, 0.1], [-0.4, -0.4]];
        let plain = p.forward(&x).unwrap();
        let mut g = Graph::new();
        let xv = g.constant(x);
        let (y, _) = p.trace(&mut g, xv, true).unwrap();
        for (a, b) in plain.iter().zip(g.value(y).iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn wrong_input_width_is_an_error() {
        let p = ResNetParams::zeros(cfg(2, 1, 3, 2, Activation::Relu)).unwrap();
        assert!(matches!(
            p.forward(&array![[1.0, 2.0, 3.0]]),
            Err(NetworkError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn init_respects_bounds_and_seed() {
        let c = cfg(2, 1, 40, 3, Activation::Relu);
        let a = ResNetParams::init(c, 1, InitScheme::KaimingUniform).unwrap();
        let b = ResNetParams::init(c, 1, InitScheme::KaimingUniform).unwrap();
        assert_eq!(a, b);
        let bound = (6.0 / 40.0_f64).sqrt();
        for l in 1..=3 {
            assert!(a.layer_weight(l).iter().all(|w| w.abs() <= bound));
            assert!(a.layer_bias(l).iter().all(|w| w.abs() <= BIAS_BOUND));
        }
    }
}
