use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpadeError};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => super::sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative(self, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => out * (1.0 - out),
            Activation::Identity => 1.0,
        }
    }
}

/// `out = act(x W + b)` with `W` stored as `in x out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Dense>,
    #[serde(skip)]
    version: u64,
}

/// Activations from one forward pass: `acts[0]` is the input, `acts[i + 1]`
/// the output of layer `i`.
#[derive(Debug, Clone)]
pub struct Cache {
    acts: Vec<Matrix>,
    version: u64,
}

impl Cache {
    pub fn output(&self) -> &Matrix {
        self.acts.last().expect("cache holds the input at least")
    }

    pub fn activations(&self) -> &[Matrix] {
        &self.acts
    }
}

/// Parameter gradients, shaped like the layers they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Matrix, Vec<f64>)>,
}

impl Gradients {
    /// Weight then bias of every layer, in layer order.
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|&v| v == 0.0))
    }
}

impl Mlp {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(SpadeError::invalid("an MLP needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(SpadeError::DimensionMismatch {
                    expected: l.out_dim(),
                    actual: l.bias.len(),
                });
            }
            if i > 0 && layers[i - 1].out_dim() != l.in_dim() {
                return Err(SpadeError::DimensionMismatch {
                    expected: layers[i - 1].out_dim(),
                    actual: l.in_dim(),
                });
            }
            if !l.weight.is_finite() || l.bias.iter().any(|b| !b.is_finite()) {
                return Err(SpadeError::NonFinite(format!("layer {i} parameters")));
            }
        }
        Ok(Mlp { layers, version: 0 })
    }

    /// Layer `i` maps `dims[i] -> dims[i + 1]`. Weights and biases are drawn
    /// from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(SpadeError::invalid("need one activation per layer and at least two dims"));
        }
        if dims.contains(&0) {
            return Err(SpadeError::invalid("layer widths must be positive"));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
                let bias = (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect();
                Dense {
                    weight: Matrix::from_vec(fan_in, fan_out, data).expect("sized above"),
                    bias,
                    activation,
                }
            })
            .collect();
        Mlp::new(layers)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("nonempty").out_dim()
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.as_slice().len() + l.bias.len()).sum()
    }

    /// Mutable weight and bias buffers in the order of [`Gradients::slices`].
    /// Any cache taken before this call becomes stale.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.version += 1;
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Cache> {
        if x.cols() != self.in_dim() {
            return Err(SpadeError::DimensionMismatch {
                expected: self.in_dim(),
                actual: x.cols(),
            });
        }
        if !x.is_finite() {
            return Err(SpadeError::NonFinite("network input".into()));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for l in &self.layers {
            let mut z = acts.last().expect("nonempty").matmul(&l.weight);
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(&l.bias) {
                    *v = l.activation.apply(*v + b);
                }
            }
            acts.push(z);
        }
        Ok(Cache {
            acts,
            version: self.version,
        })
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        let mut cache = self.forward(x)?;
        Ok(cache.acts.pop().expect("nonempty"))
    }

    /// Gradients of a scalar loss given `upstream = dL/d(output)`. Also
    /// returns `dL/d(input)`.
    pub fn backward(&self, cache: &Cache, upstream: &Matrix) -> Result<(Gradients, Matrix)> {
        if cache.version != self.version || cache.acts.len() != self.layers.len() + 1 {
            return Err(SpadeError::invalid("stale cache: parameters changed since forward"));
        }
        let out = cache.output();
        if upstream.rows() != out.rows() || upstream.cols() != out.cols() {
            return Err(SpadeError::DimensionMismatch {
                expected: out.rows() * out.cols(),
                actual: upstream.rows() * upstream.cols(),
            });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let a_out = &cache.acts[i + 1];
            if l.activation != Activation::Identity {
                for (d, &o) in delta.as_mut_slice().iter_mut().zip(a_out.as_slice()) {
                    *d *= l.activation.derivative(o);
                }
            }
            let a_in = &cache.acts[i];
            let dw = a_in.t_matmul(&delta);
            let mut db = vec![0.0; l.out_dim()];
            for r in delta.row_iter() {
                for (s, v) in db.iter_mut().zip(r) {
                    *s += v;
                }
            }
            grads.push((dw, db));
            delta = delta.matmul_t(&l.weight);
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(w: Matrix, act: Activation) -> Mlp {
        let b = vec![0.0; w.cols()];
        Mlp::new(vec![Dense {
            weight: w,
            bias: b,
            activation: act,
        }])
        .unwrap()
    }

    #[test]
    fn identity_layer() {
        let net = single(Matrix::identity(3), Activation::Identity);
        let x = Matrix::from_rows(&[[1.0, -2.0, 3.5], [0.0, 0.1, -9.0]]).unwrap();
        assert_eq!(net.predict(&x).unwrap(), x);
    }

    #[test]
    fn zero_sigmoid() {
        let net = single(Matrix::zeros(2, 4), Activation::Sigmoid);
        let x = Matrix::from_rows(&[[1.0, 5.0], [-3.0, 2.0]]).unwrap();
        assert!(net.predict(&x).unwrap().as_slice().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn shape_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Mlp::init(&[3, 2, 1], &[Activation::Relu, Activation::Identity], &mut rng).unwrap();
        assert!(net.forward(&Matrix::zeros(2, 4)).is_err());
        let bad = Dense {
            weight: Matrix::zeros(2, 2),
            bias: vec![0.0; 2],
            activation: Activation::Relu,
        };
        let bad2 = Dense {
            weight: Matrix::zeros(3, 1),
            bias: vec![0.0],
            activation: Activation::Relu,
        };
        assert!(Mlp::new(vec![bad, bad2]).is_err());

        let cache = net.forward(&Matrix::zeros(2, 3)).unwrap();
        net.param_slices_mut()[0][0] += 1.0;
        assert!(net.backward(&cache, &Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn random_net_is_total() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let acts = [Activation::Relu, Activation::Sigmoid, Activation::Identity];
        let net = Mlp::init(&[4, 5, 3, 2], &acts, &mut rng).unwrap();
        let x = Matrix::from_vec(6, 4, (0..24).map(|i| (i as f64 - 12.0) * 100.0).collect()).unwrap();
        assert!(net.predict(&x).unwrap().is_finite());
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::init(&[3, 4, 2], &[Activation::Relu, Activation::Sigmoid], &mut rng).unwrap();
        let x = Matrix::from_vec(5, 3, (0..15).map(|i| i as f64 * 0.1).collect()).unwrap();
        let cache = net.forward(&x).unwrap();
        let (g, dx) = net.backward(&cache, &Matrix::zeros(5, 2)).unwrap();
        assert!(g.is_zero());
        assert!(dx.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_least_squares_gradient() {
        // L = mean((XW + b - Y)^2); dL/dW = 2/(n m) X^T (XW + b - Y)
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::init(&[3, 2], &[Activation::Identity], &mut rng).unwrap();
        let x = Matrix::from_vec(4, 3, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let y = Matrix::from_vec(4, 2, (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let cache = net.forward(&x).unwrap();
        let (_, g) = crate::neuralnet::mse_loss(cache.output(), &y).unwrap();
        let (grads, _) = net.backward(&cache, &g).unwrap();

        let l = &net.layers()[0];
        let mut resid = x.matmul(&l.weight);
        for r in 0..4 {
            for c in 0..2 {
                resid.row_mut(r)[c] += l.bias[c] - y.row(r)[c];
            }
        }
        let expect = x.t_matmul(&resid);
        for (a, b) in grads.layers[0].0.as_slice().iter().zip(expect.as_slice()) {
            assert!((a - 2.0 * b / 8.0).abs() < 1e-12);
        }
    }
}
