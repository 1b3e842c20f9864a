use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{affine, Tape, Var};
use crate::error::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

/// A dense layer stored in a flat parameter vector: `out_dim x in_dim`
/// row-major weights at `offset`, then `out_dim` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub offset: usize,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }

    pub fn weights_offset(&self) -> usize {
        self.offset
    }

    pub fn bias_offset(&self) -> usize {
        self.offset + self.in_dim * self.out_dim
    }

    pub fn weights<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.offset..self.bias_offset()]
    }

    pub fn biases<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.bias_offset()..self.bias_offset() + self.out_dim]
    }
}

/// Glorot/Xavier uniform: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, out: &mut [f64]) {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for w in out {
        *w = rng.gen_range(-a..=a);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    /// Layers with widths `dims[0] -> dims[1] -> ...`, packed from `offset`.
    /// Hidden layers use `hidden`, the last layer `output`.
    pub fn new(dims: &[usize], hidden: Activation, output: Activation, offset: usize) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        let mut next = offset;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let layer = DenseLayer {
                    in_dim: w[0],
                    out_dim: w[1],
                    offset: next,
                    activation: if i + 2 == dims.len() { output } else { hidden },
                };
                next += layer.param_count();
                layer
            })
            .collect();
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    pub fn offset(&self) -> usize {
        self.layers[0].offset
    }

    /// One past the last parameter this MLP owns.
    pub fn end(&self) -> usize {
        self.offset() + self.param_count()
    }

    /// Glorot weights, zero biases.
    pub fn init<R: Rng>(&self, params: &mut [f64], rng: &mut R) {
        for l in &self.layers {
            glorot_uniform(rng, l.in_dim, l.out_dim, &mut params[l.offset..l.bias_offset()]);
            params[l.bias_offset()..l.bias_offset() + l.out_dim].fill(0.0);
        }
    }

    pub fn forward(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>, NnError> {
        if input.len() != self.in_dim() {
            return Err(NnError::Dimension {
                expected: self.in_dim(),
                got: input.len(),
            });
        }
        let mut x = input.to_vec();
        let mut out = Vec::new();
        for l in &self.layers {
            affine(l.weights(params), Some(l.biases(params)), &x, l.out_dim, &mut out);
            if l.activation == Activation::Tanh {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            std::mem::swap(&mut x, &mut out);
        }
        Ok(x)
    }

    pub fn forward_tape(&self, params: &[f64], tape: &mut Tape, input: Var) -> Result<Var, NnError> {
        let got = tape.value(input).len();
        if got != self.in_dim() {
            return Err(NnError::Dimension {
                expected: self.in_dim(),
                got,
            });
        }
        let mut x = input;
        for l in &self.layers {
            x = tape.affine(params, x, l.weights_offset(), Some(l.bias_offset()), l.out_dim)?;
            if l.activation == Activation::Tanh {
                x = tape.tanh(x);
            }
        }
        Ok(x)
    }
}
