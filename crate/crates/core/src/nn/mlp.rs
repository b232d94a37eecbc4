use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Dense layer `y = act(W x + b)` with `W` stored row-major as `[out x in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    /// Gaussian weights with standard deviation `gain / sqrt(in_dim)`, zero bias.
    pub fn random<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let std = gain / (in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                std * z
            })
            .collect::<Vec<f64>>();
        Self {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn forward_into(&self, x: &[f64], y: &mut Vec<f64>) {
        y.clear();
        y.extend(self.weights.chunks_exact(self.in_dim).zip(&self.bias).map(|(row, b)| {
            let z = b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
            self.activation.apply(z)
        }));
    }
}

/// A feed-forward stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Inputs and per-layer outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    input: Vec<f64>,
    outputs: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().map(Vec::as_slice).unwrap_or(&self.input)
    }
}

/// Gradients with the same layout as the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            weights: mlp.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: mlp.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(&self.bias) {
            out.extend(w);
            out.extend(b);
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.weights
            .iter_mut()
            .chain(self.bias.iter_mut())
            .flat_map(|v| v.iter_mut())
            .for_each(|g| *g *= k);
    }
}

impl Mlp {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("an MLP needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Shape {
                    context: "adjacent layers",
                    expected: pair[0].out_dim,
                    actual: pair[1].in_dim,
                });
            }
        }
        for l in &layers {
            if l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::Shape {
                    context: "layer parameters",
                    expected: l.in_dim * l.out_dim + l.out_dim,
                    actual: l.weights.len() + l.bias.len(),
                });
            }
            crate::error::ensure_finite(&l.weights, "layer weights")?;
            crate::error::ensure_finite(&l.bias, "layer bias")?;
        }
        Ok(Self { layers })
    }

    /// `dims = [in, h1, ..., out]`; hidden layers use `hidden`, the last `output`.
    pub fn random<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        output_gain: f64,
        rng: &mut R,
    ) -> Self {
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                if i + 1 == n {
                    Layer::random(dims[i], dims[i + 1], output, output_gain, rng)
                } else {
                    Layer::random(dims[i], dims[i + 1], hidden, 1.0, rng)
                }
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape {
                context: "mlp input",
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<MlpCache> {
        self.check_input(input)?;
        let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = outputs.last().map(Vec::as_slice).unwrap_or(input);
            let mut y = Vec::with_capacity(layer.out_dim);
            layer.forward_into(x, &mut y);
            outputs.push(y);
        }
        Ok(MlpCache {
            input: input.to_vec(),
            outputs,
        })
    }

    /// Reverse-mode pass; parameter gradients are accumulated into `grads`
    /// and the gradient with respect to the input is returned.
    pub fn backward_into(&self, cache: &MlpCache, output_grad: &[f64], grads: &mut MlpGrads) -> Result<Vec<f64>> {
        if output_grad.len() != self.output_dim() {
            return Err(Error::Shape {
                context: "mlp output gradient",
                expected: self.output_dim(),
                actual: output_grad.len(),
            });
        }
        if cache.outputs.len() != self.layers.len() || cache.input.len() != self.input_dim() {
            return Err(Error::Shape {
                context: "mlp cache",
                expected: self.layers.len(),
                actual: cache.outputs.len(),
            });
        }
        let mut upstream = output_grad.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let x = if li == 0 { &cache.input } else { &cache.outputs[li - 1] };
            let y = &cache.outputs[li];
            let dz: Vec<f64> = upstream
                .iter()
                .zip(y)
                .map(|(g, &yo)| g * layer.activation.derivative_from_output(yo))
                .collect();
            let gw = &mut grads.weights[li];
            let gb = &mut grads.bias[li];
            let mut dx = vec![0.0; layer.in_dim];
            for (o, &d) in dz.iter().enumerate() {
                gb[o] += d;
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                let grow = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                for i in 0..layer.in_dim {
                    grow[i] += d * x[i];
                    dx[i] += d * row[i];
                }
            }
            upstream = dx;
        }
        Ok(upstream)
    }

    /// Convenience wrapper: forward on `input`, then backward with `output_grad`.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        let cache = self.forward_cached(input)?;
        let mut grads = MlpGrads::zeros_like(self);
        let dx = self.backward_into(&cache, output_grad, &mut grads)?;
        Ok((grads, dx))
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend(&l.weights);
            out.extend(&l.bias);
        }
    }

    /// Overwrite parameters from the front of `src`, advancing it.
    pub fn read_params(&mut self, src: &mut &[f64]) -> Result<()> {
        for l in &mut self.layers {
            let need = l.weights.len() + l.bias.len();
            if src.len() < need {
                return Err(Error::Shape {
                    context: "flat parameter vector",
                    expected: need,
                    actual: src.len(),
                });
            }
            let (w, rest) = src.split_at(l.weights.len());
            let (b, rest) = rest.split_at(l.bias.len());
            l.weights.copy_from_slice(w);
            l.bias.copy_from_slice(b);
            *src = rest;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn zero_network_outputs_zero() {
        let mlp = Mlp::new(vec![
            Layer::zeros(3, 4, Activation::Identity),
            Layer::zeros(4, 2, Activation::Identity),
        ])
        .unwrap();
        assert_eq!(mlp.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_affine_unit() {
        let mut l = Layer::zeros(1, 1, Activation::Identity);
        l.weights[0] = 2.0;
        l.bias[0] = 1.0;
        let mlp = Mlp::new(vec![l]).unwrap();
        assert_eq!(mlp.forward(&[3.0]).unwrap(), vec![7.0]);
        let (g, dx) = mlp.backward(&[3.0], &[1.0]).unwrap();
        assert_eq!(g.weights[0], vec![3.0]);
        assert_eq!(g.bias[0], vec![1.0]);
        assert_eq!(dx, vec![2.0]);
    }

    #[test]
    fn tanh_outputs_are_bounded() {
        let mut rng = seeded(3);
        let mlp = Mlp::random(&[5, 8], Activation::Tanh, Activation::Tanh, 4.0, &mut rng);
        let y = mlp.forward(&[10.0, -3.0, 2.0, 0.5, -8.0]).unwrap();
        assert!(y.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = seeded(4);
        let mlp = Mlp::random(&[3, 6, 2], Activation::Tanh, Activation::Identity, 1.0, &mut rng);
        let (g, dx) = mlp.backward(&[0.1, 0.2, 0.3], &[0.0, 0.0]).unwrap();
        assert_eq!(g, MlpGrads::zeros_like(&mlp));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_errors() {
        let mut rng = seeded(5);
        let mlp = Mlp::random(&[3, 2], Activation::Tanh, Activation::Identity, 1.0, &mut rng);
        assert!(matches!(mlp.forward(&[1.0]), Err(Error::Shape { .. })));
        assert!(matches!(
            mlp.backward(&[1.0, 2.0, 3.0], &[1.0]),
            Err(Error::Shape { .. })
        ));
        assert!(Mlp::new(vec![
            Layer::zeros(3, 4, Activation::Tanh),
            Layer::zeros(5, 1, Activation::Tanh)
        ])
        .is_err());
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = seeded(11);
        for case in 0..20 {
            let mlp = Mlp::random(&[4, 7, 3], Activation::Tanh, Activation::Identity, 1.0, &mut rng);
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let g_out: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let loss =
                |m: &Mlp, x: &[f64]| -> f64 { m.forward(x).unwrap().iter().zip(&g_out).map(|(y, g)| y * g).sum() };
            let (grads, dx) = mlp.backward(&x, &g_out).unwrap();
            let mut flat_g = Vec::new();
            grads.write_flat(&mut flat_g);
            let mut flat_p = Vec::new();
            mlp.write_params(&mut flat_p);
            let h = 1e-5;
            for k in 0..flat_p.len() {
                let mut probe = mlp.clone();
                let mut p = flat_p.clone();
                p[k] += h;
                probe.read_params(&mut p.as_slice()).unwrap();
                let up = loss(&probe, &x);
                p[k] -= 2.0 * h;
                probe.read_params(&mut p.as_slice()).unwrap();
                let down = loss(&probe, &x);
                let num = (up - down) / (2.0 * h);
                let err = (num - flat_g[k]).abs();
                assert!(
                    err <= 1e-6 || err <= 1e-4 * num.abs().max(flat_g[k].abs()),
                    "case {case} param {k}: {num} vs {}",
                    flat_g[k]
                );
            }
            for i in 0..x.len() {
                let mut xp = x.clone();
                xp[i] += h;
                let up = loss(&mlp, &xp);
                xp[i] -= 2.0 * h;
                let num = (up - loss(&mlp, &xp)) / (2.0 * h);
                assert!((num - dx[i]).abs() <= 1e-6 || (num - dx[i]).abs() <= 1e-4 * num.abs());
            }
        }
    }
}
