//! Fully connected ReLU networks, evaluable either directly or on a [`Graph`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{affine, Graph, NodeId, NumError, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `in × out`
    pub weight: Tensor,
    /// `1 × out`
    pub bias: Tensor,
}

impl Linear {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = Tensor::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..bound));
        let bias = Tensor::from_fn(1, fan_out, |_, _| rng.random_range(-bound..bound));
        Self { weight, bias }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(fan_in, fan_out),
            bias: Tensor::zeros(1, fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Tensor, relu: bool) -> Result<Tensor, NumError> {
        affine(x, &self.weight, &self.bias, relu)
    }
}

/// Feed-forward network with ReLU between layers and a linear output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    /// `widths = [input, hidden.., output]`. With `zero_last` the final layer
    /// starts at exactly zero, so the network outputs 0 everywhere.
    pub fn new(widths: &[usize], rng: &mut impl Rng, zero_last: bool) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        let n = widths.len() - 1;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                if zero_last && i + 1 == n {
                    Linear::zeros(w[0], w[1])
                } else {
                    Linear::init(w[0], w[1], rng)
                }
            })
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Linear>) -> Result<Self, NumError> {
        for pair in layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(NumError::Dimension {
                    op: "mlp layers",
                    left: pair[0].weight.shape(),
                    right: pair[1].weight.shape(),
                });
            }
        }
        for l in &layers {
            if l.bias.shape() != (1, l.fan_out()) {
                return Err(NumError::Dimension {
                    op: "mlp bias",
                    left: l.weight.shape(),
                    right: l.bias.shape(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(Linear::fan_out));
        w
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NumError> {
        if x.cols() != self.input_dim() {
            return Err(NumError::Dimension {
                op: "mlp forward",
                left: x.shape(),
                right: self.layers[0].weight.shape(),
            });
        }
        let last = self.layers.len() - 1;
        let mut h = self.layers[0].forward(x, last > 0)?;
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            h = layer.forward(&h, i < last)?;
        }
        Ok(h)
    }

    /// Records every weight and bias as a trainable leaf, in [`Mlp::params`] order.
    pub fn bind(&self, g: &mut Graph) -> Vec<NodeId> {
        self.params().map(|p| g.leaf(p.clone())).collect()
    }

    /// Forward pass on the tape using leaves returned by [`Mlp::bind`].
    pub fn forward_graph(&self, g: &mut Graph, x: NodeId, bound: &[NodeId]) -> Result<NodeId, NumError> {
        debug_assert_eq!(bound.len(), 2 * self.layers.len());
        let last = self.layers.len() - 1;
        let mut h = x;
        for i in 0..self.layers.len() {
            h = g.linear(h, bound[2 * i], bound[2 * i + 1], i < last)?;
        }
        Ok(h)
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn param_count(&self) -> usize {
        self.params().map(Tensor::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn direct_and_taped_forward_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::new(&[3, 16, 16, 2], &mut rng, false);
        let x = Tensor::from_fn(7, 3, |r, c| (r as f64 - 3.0) * 0.3 + c as f64 * 0.1);
        let direct = mlp.forward(&x).unwrap();

        let mut g = Graph::new();
        let xi = g.leaf(x);
        let bound = mlp.bind(&mut g);
        let out = mlp.forward_graph(&mut g, xi, &bound).unwrap();
        assert!(g.value(out).max_abs_diff(&direct) < 1e-13);
    }

    #[test]
    fn zero_last_layer_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::new(&[3, 8, 3], &mut rng, true);
        let x = Tensor::filled(4, 3, 1.7);
        assert!(mlp.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn param_count_matches_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::new(&[3, 115, 115, 3], &mut rng, true);
        assert_eq!(mlp.param_count(), 3 * 115 + 115 + 115 * 115 + 115 + 115 * 3 + 3);
        assert_eq!(mlp.widths(), vec![3, 115, 115, 3]);
    }

    #[test]
    fn mismatched_layers_are_rejected() {
        let layers = vec![Linear::zeros(3, 4), Linear::zeros(5, 1)];
        assert!(Mlp::from_layers(layers).is_err());
    }
}
