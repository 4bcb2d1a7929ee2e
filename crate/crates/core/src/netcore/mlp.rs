use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Silu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Silu => x / (1.0 + (-x).exp()),
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s + x * s * (1.0 - s)
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Silu => "silu",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "silu" => Ok(Activation::Silu),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation, seed: u64) -> Result<Self> {
        let spec = MlpSpec {
            layer_widths,
            activation,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `[input, 64, 64, 64, output]` with SiLU.
    pub fn default_net(input: usize, output: usize, seed: u64) -> Self {
        MlpSpec {
            layer_widths: vec![input, 64, 64, 64, output],
            activation: Activation::Silu,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return domain("an MLP needs at least two layer widths");
        }
        if self.layer_widths.contains(&0) {
            return domain("layer widths must be positive");
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    /// Number of affine layers.
    pub fn depth(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.layer_widths
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Offsets of each layer's weight block and bias block in the flat vector.
    fn offsets(&self) -> Vec<(usize, usize)> {
        let mut off = 0;
        self.layer_widths
            .windows(2)
            .map(|w| {
                let wo = off;
                let bo = off + w[0] * w[1];
                off = bo + w[1];
                (wo, bo)
            })
            .collect()
    }
}

/// Flat parameter vector. Layer `l` stores its `out × in` weights row-major
/// followed by its `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    spec: MlpSpec,
    offsets: Vec<(usize, usize)>,
    values: Vec<f64>,
}

impl MlpParams {
    pub fn from_values(spec: MlpSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.num_params() {
            return domain(format!(
                "expected {} parameters, got {}",
                spec.num_params(),
                values.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return domain("parameters must be finite");
        }
        let offsets = spec.offsets();
        Ok(MlpParams {
            spec,
            offsets,
            values,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grads(&self) -> Vec<f64> {
        vec![0.0; self.values.len()]
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        let (w, b) = self.offsets[layer];
        &self.values[w..b]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        let (w, b) = self.offsets[layer];
        &mut self.values[w..b]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let (_, b) = self.offsets[layer];
        &self.values[b..b + self.spec.layer_widths[layer + 1]]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let (_, b) = self.offsets[layer];
        let n = self.spec.layer_widths[layer + 1];
        &mut self.values[b..b + n]
    }

    fn layer_dims(&self, layer: usize) -> (usize, usize) {
        (
            self.spec.layer_widths[layer],
            self.spec.layer_widths[layer + 1],
        )
    }

    /// Forward pass that keeps every layer input and pre-activation.
    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        if x.len() != self.spec.input_dim() {
            return domain(format!(
                "input length {} does not match input width {}",
                x.len(),
                self.spec.input_dim()
            ));
        }
        let depth = self.spec.depth();
        let mut inputs = Vec::with_capacity(depth);
        let mut pre = Vec::with_capacity(depth);
        let mut a = x.to_vec();
        for l in 0..depth {
            let z = self.affine(l, &a);
            let next = if l + 1 < depth {
                z.iter().map(|&v| self.spec.activation.apply(v)).collect()
            } else {
                z.clone()
            };
            inputs.push(std::mem::replace(&mut a, next));
            pre.push(z);
        }
        Ok(ForwardTrace {
            inputs,
            pre,
            output: a,
        })
    }

    fn affine(&self, layer: usize, a: &[f64]) -> Vec<f64> {
        let (n_in, n_out) = self.layer_dims(layer);
        let w = self.weights(layer);
        let b = self.bias(layer);
        (0..n_out)
            .map(|o| {
                let row = &w[o * n_in..(o + 1) * n_in];
                b[o] + row.iter().zip(a).map(|(wi, ai)| wi * ai).sum::<f64>()
            })
            .collect()
    }

    /// Reverse pass over a recorded trace. Parameter gradients are added into
    /// `grads`; the gradient with respect to the network input is returned.
    ///
    /// `hidden_grads`, when given, holds one cotangent per hidden layer (the
    /// post-activation outputs of layers `0..depth-1`), letting losses on
    /// intermediate features flow back as well.
    pub fn backward_trace(
        &self,
        trace: &ForwardTrace,
        out_grad: &[f64],
        hidden_grads: Option<&[Vec<f64>]>,
        grads: &mut [f64],
    ) -> Result<Vec<f64>> {
        let depth = self.spec.depth();
        if out_grad.len() != self.spec.output_dim() {
            return domain("output cotangent has the wrong length");
        }
        if grads.len() != self.values.len() {
            return domain("gradient buffer has the wrong length");
        }
        if let Some(h) = hidden_grads {
            if h.len() != depth - 1
                || h.iter()
                    .enumerate()
                    .any(|(l, g)| g.len() != self.spec.layer_widths[l + 1])
            {
                return domain("hidden cotangents do not match the hidden widths");
            }
        }
        // delta = d loss / d pre-activation of the current layer
        let mut delta = out_grad.to_vec();
        for l in (0..depth).rev() {
            let (n_in, n_out) = self.layer_dims(l);
            let (wo, bo) = self.offsets[l];
            let a = &trace.inputs[l];
            for o in 0..n_out {
                let d = delta[o];
                grads[bo + o] += d;
                if d != 0.0 {
                    let g = &mut grads[wo + o * n_in..wo + (o + 1) * n_in];
                    for (gi, ai) in g.iter_mut().zip(a) {
                        *gi += d * ai;
                    }
                }
            }
            let w = self.weights(l);
            let mut upstream = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d != 0.0 {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    for (u, wi) in upstream.iter_mut().zip(row) {
                        *u += d * wi;
                    }
                }
            }
            if l == 0 {
                return Ok(upstream);
            }
            if let Some(h) = hidden_grads {
                for (u, g) in upstream.iter_mut().zip(&h[l - 1]) {
                    *u += g;
                }
            }
            let z = &trace.pre[l - 1];
            delta = upstream
                .iter()
                .zip(z)
                .map(|(u, &zi)| u * self.spec.activation.derivative(zi))
                .collect();
        }
        unreachable!("depth is at least one")
    }
}

/// Everything the reverse pass needs from a forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input to each affine layer; `inputs[l]` for `l >= 1` are the hidden
    /// features after activation.
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each affine layer.
    pub pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl ForwardTrace {
    /// Post-activation hidden features, one vector per hidden layer.
    pub fn hidden_features(&self) -> &[Vec<f64>] {
        &self.inputs[1..]
    }
}

/// Zero-mean Gaussian weights with variance `1 / fan_in`; zero biases.
pub fn init_params(spec: &MlpSpec) -> Result<MlpParams> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut values = Vec::with_capacity(spec.num_params());
    for w in spec.layer_widths.windows(2) {
        let normal = Normal::new(0.0, 1.0 / (w[0] as f64).sqrt()).expect("valid std");
        values.extend((0..w[0] * w[1]).map(|_| normal.sample(&mut rng)));
        values.extend(std::iter::repeat_n(0.0, w[1]));
    }
    MlpParams::from_values(spec.clone(), values)
}

pub fn forward(params: &MlpParams, x: &[f64]) -> Result<Vec<f64>> {
    Ok(params.forward_trace(x)?.output)
}

/// Gradients of `out_grad · forward(params, x)` with respect to the
/// parameters and the input.
pub fn backward(params: &MlpParams, x: &[f64], out_grad: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let trace = params.forward_trace(x)?;
    let mut grads = params.zero_grads();
    let input_grad = params.backward_trace(&trace, out_grad, None, &mut grads)?;
    Ok((grads, input_grad))
}
