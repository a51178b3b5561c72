//! Configurable multilayer perceptron decoding encoded vectors into signals.

use rand::Rng;

use crate::autodiff::{NodeId, Tape};
use crate::error::{QffError, Result};
use crate::scalar::{c, Scalar};
use crate::tensor::{ParamId, Params};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    /// `sin(omega * x)`; `omega = 30` is the conventional default.
    Sine { omega: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputTransform {
    None,
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpConfig {
    /// Must equal the paired encoder's output width.
    pub input_width: usize,
    pub hidden_width: usize,
    /// Number of hidden layers (affine + activation); the final affine layer
    /// is in addition to these.
    pub num_layers: usize,
    pub activation: Activation,
    pub output_width: usize,
    pub output_transform: OutputTransform,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 || self.hidden_width == 0 || self.output_width == 0 {
            return Err(QffError::Config("mlp widths must be positive".into()));
        }
        if self.num_layers == 0 {
            return Err(QffError::Config("mlp needs at least one hidden layer".into()));
        }
        if let Activation::Sine { omega } = self.activation {
            if !(omega.is_finite() && omega > 0.0) {
                return Err(QffError::Config(format!(
                    "sine activation frequency must be positive and finite, got {omega}"
                )));
            }
        }
        Ok(())
    }

    /// Affine layer sizes as `(fan_in, fan_out)` pairs, hidden layers first.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.num_layers + 1);
        let mut prev = self.input_width;
        for _ in 0..self.num_layers {
            dims.push((prev, self.hidden_width));
            prev = self.hidden_width;
        }
        dims.push((prev, self.output_width));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|&(fan_in, fan_out)| fan_in * fan_out + fan_out)
            .sum()
    }
}

/// Handles of one affine layer inside a parameter store.
#[derive(Clone, Copy, Debug)]
pub struct Layer {
    /// Weight matrix stored as `fan_in x fan_out`.
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Handles of all affine layers of an MLP.
#[derive(Clone, Debug)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight, l.bias])
            .collect()
    }
}

/// Allocate and initialize MLP weights.
///
/// ReLU layers draw from the Kaiming-uniform fan-in interval
/// `(-sqrt(6/fan_in), sqrt(6/fan_in))`. Sine layers use the standard
/// sinusoidal-network scheme: first layer `(-1/fan_in, 1/fan_in)`, later
/// layers `(-sqrt(6/fan_in)/omega, sqrt(6/fan_in)/omega)`. Biases start at
/// zero. Draws are made in `f64` so `f32` and `f64` models initialized with
/// the same seed agree.
pub fn init_mlp<F: Scalar>(
    cfg: &MlpConfig,
    params: &mut Params<F>,
    rng: &mut impl Rng,
) -> Result<MlpParams> {
    cfg.validate()?;
    let mut layers = Vec::with_capacity(cfg.num_layers + 1);
    for (idx, (fan_in, fan_out)) in cfg.layer_dims().into_iter().enumerate() {
        let bound = match cfg.activation {
            Activation::Relu => (6.0 / fan_in as f64).sqrt(),
            Activation::Sine { omega } => {
                if idx == 0 {
                    1.0 / fan_in as f64
                } else {
                    (6.0 / fan_in as f64).sqrt() / omega
                }
            }
        };
        let weight: Vec<F> = (0..fan_in * fan_out)
            .map(|_| c::<F>((rng.random::<f64>() * 2.0 - 1.0) * bound))
            .collect();
        let w = params.insert(format!("layer{idx}.weight"), vec![fan_in, fan_out], weight);
        let b = params.insert(
            format!("layer{idx}.bias"),
            vec![fan_out],
            vec![F::zero(); fan_out],
        );
        layers.push(Layer { weight: w, bias: b });
    }
    Ok(MlpParams { layers })
}

/// Record the MLP forward pass on a tape. `input` is a `batch x input_width`
/// node; returns the `batch x output_width` output node.
pub fn record_forward<F: Scalar>(
    tape: &mut Tape<F>,
    params: &Params<F>,
    mlp: &MlpParams,
    cfg: &MlpConfig,
    input: NodeId,
) -> Result<NodeId> {
    if tape.value(input).cols() != cfg.input_width {
        return Err(QffError::shape(
            "mlp_forward",
            &tape.value(input).shape(),
            &[tape.value(input).rows(), cfg.input_width],
        ));
    }
    let mut h = input;
    let dims = cfg.layer_dims();
    for (idx, layer) in mlp.layers.iter().enumerate() {
        let (fan_in, fan_out) = dims[idx];
        let w = tape.leaf(params, layer.weight, fan_in, fan_out)?;
        let b = tape.leaf(params, layer.bias, 1, fan_out)?;
        let a = tape.matmul(h, w)?;
        let a = tape.broadcast_add(a, b)?;
        h = if idx < cfg.num_layers {
            match cfg.activation {
                Activation::Relu => tape.relu(a),
                Activation::Sine { omega } => tape.sine_act(a, c::<F>(omega)),
            }
        } else {
            a
        };
    }
    Ok(match cfg.output_transform {
        OutputTransform::None => h,
        OutputTransform::Sigmoid => tape.sigmoid(h),
    })
}

/// Record the forward pass together with forward-mode tangent propagation.
///
/// `tangents[d]` must hold `d input / d x_d` as a `batch x input_width` node;
/// the returned tangent nodes hold `d output / d x_d`. Everything stays on the
/// tape, so the position gradient remains differentiable w.r.t. parameters.
/// Only the identity output transform supports tangents.
pub fn record_forward_with_tangents<F: Scalar>(
    tape: &mut Tape<F>,
    params: &Params<F>,
    mlp: &MlpParams,
    cfg: &MlpConfig,
    input: NodeId,
    tangents: &[NodeId],
) -> Result<(NodeId, Vec<NodeId>)> {
    if cfg.output_transform != OutputTransform::None {
        return Err(QffError::Contract(
            "position gradients require the identity output transform".into(),
        ));
    }
    let mut h = input;
    let mut t: Vec<NodeId> = tangents.to_vec();
    let dims = cfg.layer_dims();
    for (idx, layer) in mlp.layers.iter().enumerate() {
        let (fan_in, fan_out) = dims[idx];
        let w = tape.leaf(params, layer.weight, fan_in, fan_out)?;
        let b = tape.leaf(params, layer.bias, 1, fan_out)?;
        let a = tape.matmul(h, w)?;
        let a = tape.broadcast_add(a, b)?;
        for td in t.iter_mut() {
            *td = tape.matmul(*td, w)?;
        }
        if idx < cfg.num_layers {
            match cfg.activation {
                Activation::Relu => {
                    h = tape.relu(a);
                    for td in t.iter_mut() {
                        *td = tape.relu_gate(a, *td)?;
                    }
                }
                Activation::Sine { omega } => {
                    let om = c::<F>(omega);
                    h = tape.sine_act(a, om);
                    let scaled = tape.scale(a, om);
                    let cosv = tape.cos(scaled);
                    let factor = tape.scale(cosv, om);
                    for td in t.iter_mut() {
                        *td = tape.mul(*td, factor)?;
                    }
                }
            }
        } else {
            h = a;
        }
    }
    Ok((h, t))
}
