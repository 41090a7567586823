//! Feedforward classifiers: affine layers with rectifier activations on the
//! hidden layers and identity on the output.

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::Matrix;

/// Layer widths: input dimension, hidden widths, class count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    widths: Vec<usize>,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Parameter(format!(
                "an MLP needs at least input and output widths, got {widths:?}"
            )));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::Parameter(format!("layer widths must be positive, got {widths:?}")));
        }
        Ok(Self { widths })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn classes(&self) -> usize {
        *self.widths.last().expect("validated non-empty")
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_in × fan_out`
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Weights and biases of an MLP. Also used as the container for parameter
/// gradients and momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    spec: MlpSpec,
    pub layers: Vec<Layer>,
}

/// Values retained by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    inputs: Matrix,
    /// Pre-activation of every layer, output logits last.
    pre_activations: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn layer_count(&self) -> usize {
        self.pre_activations.len()
    }

    pub fn pre_activations(&self) -> &[Matrix] {
        &self.pre_activations
    }
}

impl MlpParams {
    /// All-zero parameters shaped like `spec`.
    pub fn zeros(spec: &MlpSpec) -> Self {
        let layers = spec
            .widths
            .windows(2)
            .map(|w| Layer {
                weights: Matrix::zeros(w[0], w[1]),
                bias: vec![0.0; w[1]],
            })
            .collect();
        Self {
            spec: spec.clone(),
            layers,
        }
    }

    /// Reassembles parameters, checking that shapes chain per `spec`.
    pub fn from_layers(spec: MlpSpec, layers: Vec<Layer>) -> Result<Self> {
        if layers.len() != spec.layer_count() {
            return Err(Error::Parameter(format!(
                "expected {} layers, got {}",
                spec.layer_count(),
                layers.len()
            )));
        }
        for (l, (layer, w)) in layers.iter().zip(spec.widths.windows(2)).enumerate() {
            if layer.weights.shape() != (w[0], w[1]) || layer.bias.len() != w[1] {
                return Err(Error::Parameter(format!(
                    "layer {l}: weights {:?} / bias {} do not match widths {:?}",
                    layer.weights.shape(),
                    layer.bias.len(),
                    (w[0], w[1])
                )));
            }
            if !layer.weights.is_finite() || layer.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::NonFinite("MlpParams::from_layers"));
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    /// Parameters in a fixed order: per layer, weights row-major then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(layer.weights.as_slice());
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    /// Inverse of [`MlpParams::flatten`].
    pub fn from_flat(spec: &MlpSpec, flat: &[f64]) -> Result<Self> {
        if flat.len() != spec.param_count() {
            return Err(Error::Parameter(format!(
                "expected {} parameters, got {}",
                spec.param_count(),
                flat.len()
            )));
        }
        let mut params = Self::zeros(spec);
        let mut offset = 0;
        for layer in &mut params.layers {
            let n = layer.weights.as_slice().len();
            layer.weights.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
            let nb = layer.bias.len();
            layer.bias.copy_from_slice(&flat[offset..offset + nb]);
            offset += nb;
        }
        Ok(params)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.as_slice().iter().chain(&l.bias).copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.as_mut_slice().iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    pub fn scale(&self, factor: f64) -> MlpParams {
        let mut out = self.clone();
        out.values_mut().for_each(|v| *v *= factor);
        out
    }
}

/// He-normal weights (`N(0, 2 / fan_in)`) and zero biases.
pub fn init_params(spec: &MlpSpec, rng: &mut RngState) -> MlpParams {
    let mut params = MlpParams::zeros(spec);
    for layer in &mut params.layers {
        let std = (2.0 / layer.weights.rows() as f64).sqrt();
        for w in layer.weights.as_mut_slice() {
            *w = std * rng.normal();
        }
    }
    params
}

fn check_inputs(params: &MlpParams, inputs: &Matrix) -> Result<()> {
    if inputs.cols() != params.spec.input_dim() {
        return Err(Error::Shape {
            op: "mlp forward",
            left: inputs.shape(),
            right: (inputs.rows(), params.spec.input_dim()),
        });
    }
    Ok(())
}

fn relu(m: &Matrix) -> Matrix {
    m.map(|v| v.max(0.0))
}

/// Logits only, nothing retained.
pub fn predict(params: &MlpParams, inputs: &Matrix) -> Result<Matrix> {
    check_inputs(params, inputs)?;
    let last = params.layers.len() - 1;
    let mut act = inputs.clone();
    for (l, layer) in params.layers.iter().enumerate() {
        let pre = act.matmul(&layer.weights)?.add_row_vector(&layer.bias)?;
        act = if l == last { pre } else { relu(&pre) };
    }
    Ok(act)
}

pub fn forward(params: &MlpParams, inputs: &Matrix) -> Result<(Matrix, ForwardTrace)> {
    check_inputs(params, inputs)?;
    let mut pre_activations = Vec::with_capacity(params.layers.len());
    let mut act = inputs.clone();
    for (l, layer) in params.layers.iter().enumerate() {
        if l > 0 {
            act = relu(pre_activations.last().expect("previous layer"));
        }
        pre_activations.push(act.matmul(&layer.weights)?.add_row_vector(&layer.bias)?);
    }
    let logits = pre_activations.last().expect("at least one layer").clone();
    Ok((
        logits,
        ForwardTrace {
            inputs: inputs.clone(),
            pre_activations,
        },
    ))
}

/// Reverse-mode gradients of the parameters given `d loss / d logits`.
pub fn backward(params: &MlpParams, trace: &ForwardTrace, logit_grad: &Matrix) -> Result<MlpParams> {
    let logits = trace.pre_activations.last().expect("non-empty trace");
    if logit_grad.shape() != logits.shape() {
        return Err(Error::Shape {
            op: "mlp backward",
            left: logit_grad.shape(),
            right: logits.shape(),
        });
    }
    if trace.pre_activations.len() != params.layers.len() {
        return Err(Error::Parameter("trace does not belong to these parameters".into()));
    }
    let mut grads = MlpParams::zeros(&params.spec);
    let mut delta = logit_grad.clone();
    for l in (0..params.layers.len()).rev() {
        let input = if l == 0 {
            trace.inputs.clone()
        } else {
            relu(&trace.pre_activations[l - 1])
        };
        grads.layers[l].weights = input.t_matmul(&delta)?;
        grads.layers[l].bias = delta.sum_rows();
        if l > 0 {
            let upstream = delta.matmul_t(&params.layers[l].weights)?;
            delta = upstream.zip_map(&trace.pre_activations[l - 1], |g, z| if z > 0.0 { g } else { 0.0 })?;
        }
    }
    Ok(grads)
}
