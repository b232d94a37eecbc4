use rand::Rng;

use super::mlp::{Activation, Mlp, MlpCache, MlpGrads};
use crate::error::{Error, Result};

/// Leading observation entries that bypass the window encoder: `v_lon, v_lat, gear`.
pub const SCALAR_FEATURES: usize = 3;

/// Encoder + trunk + head over a normalized flat observation.
///
/// The `3H` window entries go through the encoder; its features are
/// concatenated after the three scalar entries and fed to the trunk.
#[derive(Debug, Clone, PartialEq)]
pub struct Tower {
    pub encoder: Mlp,
    pub trunk: Mlp,
    pub head: Mlp,
}

#[derive(Debug, Clone)]
pub struct TowerCache {
    encoder: MlpCache,
    trunk: MlpCache,
    head: MlpCache,
}

impl TowerCache {
    pub fn output(&self) -> &[f64] {
        self.head.output()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TowerGrads {
    pub encoder: MlpGrads,
    pub trunk: MlpGrads,
    pub head: MlpGrads,
}

impl TowerGrads {
    pub fn zeros_like(t: &Tower) -> Self {
        Self {
            encoder: MlpGrads::zeros_like(&t.encoder),
            trunk: MlpGrads::zeros_like(&t.trunk),
            head: MlpGrads::zeros_like(&t.head),
        }
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        self.encoder.write_flat(out);
        self.trunk.write_flat(out);
        self.head.write_flat(out);
    }
}

impl Tower {
    /// Encoder `3H -> hidden` (tanh), trunk two `hidden` tanh layers, linear head
    /// initialized with `head_gain` (0 gives an all-zero head).
    pub fn new<R: Rng + ?Sized>(window: usize, hidden: usize, out_dim: usize, head_gain: f64, rng: &mut R) -> Self {
        let encoder = Mlp::random(&[3 * window, hidden], Activation::Tanh, Activation::Tanh, 1.0, rng);
        let trunk = Mlp::random(
            &[SCALAR_FEATURES + hidden, hidden, hidden],
            Activation::Tanh,
            Activation::Tanh,
            1.0,
            rng,
        );
        let head = Mlp::random(
            &[hidden, out_dim],
            Activation::Identity,
            Activation::Identity,
            head_gain,
            rng,
        );
        Self { encoder, trunk, head }
    }

    pub fn from_parts(encoder: Mlp, trunk: Mlp, head: Mlp) -> Result<Self> {
        if trunk.input_dim() != SCALAR_FEATURES + encoder.output_dim() {
            return Err(Error::Shape {
                context: "trunk input",
                expected: SCALAR_FEATURES + encoder.output_dim(),
                actual: trunk.input_dim(),
            });
        }
        if head.input_dim() != trunk.output_dim() {
            return Err(Error::Shape {
                context: "head input",
                expected: trunk.output_dim(),
                actual: head.input_dim(),
            });
        }
        if !encoder.input_dim().is_multiple_of(3) {
            return Err(Error::Shape {
                context: "encoder input (3H)",
                expected: 3 * (encoder.input_dim() / 3),
                actual: encoder.input_dim(),
            });
        }
        Ok(Self { encoder, trunk, head })
    }

    pub fn window(&self) -> usize {
        self.encoder.input_dim() / 3
    }

    pub fn input_dim(&self) -> usize {
        SCALAR_FEATURES + self.encoder.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.head.output_dim()
    }

    fn check(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.input_dim() {
            return Err(Error::Shape {
                context: "observation",
                expected: self.input_dim(),
                actual: z.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check(z)?;
        let feats = self.encoder.forward(&z[SCALAR_FEATURES..])?;
        let mut trunk_in = Vec::with_capacity(self.trunk.input_dim());
        trunk_in.extend_from_slice(&z[..SCALAR_FEATURES]);
        trunk_in.extend(feats);
        let h = self.trunk.forward(&trunk_in)?;
        self.head.forward(&h)
    }

    pub fn forward_cached(&self, z: &[f64]) -> Result<TowerCache> {
        self.check(z)?;
        let encoder = self.encoder.forward_cached(&z[SCALAR_FEATURES..])?;
        let mut trunk_in = Vec::with_capacity(self.trunk.input_dim());
        trunk_in.extend_from_slice(&z[..SCALAR_FEATURES]);
        trunk_in.extend_from_slice(encoder.output());
        let trunk = self.trunk.forward_cached(&trunk_in)?;
        let head = self.head.forward_cached(trunk.output())?;
        Ok(TowerCache { encoder, trunk, head })
    }

    pub fn backward_into(&self, cache: &TowerCache, output_grad: &[f64], grads: &mut TowerGrads) -> Result<()> {
        let dh = self.head.backward_into(&cache.head, output_grad, &mut grads.head)?;
        let d_trunk_in = self.trunk.backward_into(&cache.trunk, &dh, &mut grads.trunk)?;
        self.encoder
            .backward_into(&cache.encoder, &d_trunk_in[SCALAR_FEATURES..], &mut grads.encoder)?;
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.encoder.num_params() + self.trunk.num_params() + self.head.num_params()
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        self.encoder.write_params(out);
        self.trunk.write_params(out);
        self.head.write_params(out);
    }

    pub fn read_params(&mut self, src: &mut &[f64]) -> Result<()> {
        self.encoder.read_params(src)?;
        self.trunk.read_params(src)?;
        self.head.read_params(src)
    }
}
