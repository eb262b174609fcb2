//! Network structure, forward evaluation, initialization, checkpoints.
//!
//! A network is an ordered list of affine layers. Each layer stores the
//! activation applied to its *input*: the first layer's is always Identity,
//! so `z¹ = W¹x + b¹` and `z^{i+1} = W^{i+1}·σ(z^i) + b^{i+1}` thereafter.
//! The logits are the last pre-activation vector — no trailing activation.
//!
//! Convolutions are lowered to explicit dense matrices at construction, so
//! every bound-propagation and gradient formula downstream sees a uniform
//! sequence of dense affine maps. The tied kernel parameters remain the
//! source of truth; the lowered matrix is derived and kept in sync.

use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::counter;
use crate::error::{Error, Result};
use crate::tensor::{Matrix, Vector};

/// Activation applied to a layer's input vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    pub fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative frozen at the forward value; the kink at 0 reports 0.
    pub fn derivative(&self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn apply_vec(&self, z: &Vector) -> Vector {
        match self {
            Activation::Identity => z.clone(),
            Activation::Relu => Vector::new(z.iter().map(|v| v.max(0.0)).collect()),
        }
    }
}

/// Input geometry: flat feature vector, or an image for conv fronts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSpec {
    Flat(usize),
    Image {
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl InputSpec {
    pub fn dim(&self) -> usize {
        match *self {
            InputSpec::Flat(n) => n,
            InputSpec::Image {
                channels,
                height,
                width,
            } => channels * height * width,
        }
    }
}

/// One layer of an architecture description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        units: usize,
        activation: Activation,
    },
    Conv {
        out_channels: usize,
        kernel: [usize; 2],
        stride: usize,
        padding: usize,
        activation: Activation,
    },
}

/// Full architecture description; serializable for configs and checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub input: InputSpec,
    pub layers: Vec<LayerSpec>,
}

impl ArchSpec {
    /// 784-256-128-10 fully-connected classifier.
    pub fn mnist_mlp() -> Self {
        ArchSpec {
            input: InputSpec::Flat(784),
            layers: vec![
                LayerSpec::Dense {
                    units: 256,
                    activation: Activation::Identity,
                },
                LayerSpec::Dense {
                    units: 128,
                    activation: Activation::Relu,
                },
                LayerSpec::Dense {
                    units: 10,
                    activation: Activation::Relu,
                },
            ],
        }
    }

    /// Two small conv layers plus a dense head, for 28×28 grayscale input.
    pub fn tiny_conv() -> Self {
        ArchSpec {
            input: InputSpec::Image {
                channels: 1,
                height: 28,
                width: 28,
            },
            layers: vec![
                LayerSpec::Conv {
                    out_channels: 8,
                    kernel: [4, 4],
                    stride: 2,
                    padding: 0,
                    activation: Activation::Identity,
                },
                LayerSpec::Conv {
                    out_channels: 8,
                    kernel: [4, 4],
                    stride: 2,
                    padding: 0,
                    activation: Activation::Relu,
                },
                LayerSpec::Dense {
                    units: 10,
                    activation: Activation::Relu,
                },
            ],
        }
    }

    /// Simple MLP over a flat input: `dims` are the hidden/output widths.
    pub fn mlp(input_dim: usize, dims: &[usize]) -> Self {
        let layers = dims
            .iter()
            .enumerate()
            .map(|(i, &units)| LayerSpec::Dense {
                units,
                activation: if i == 0 {
                    Activation::Identity
                } else {
                    Activation::Relu
                },
            })
            .collect();
        ArchSpec {
            input: InputSpec::Flat(input_dim),
            layers,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "mnist_mlp" => Some(Self::mnist_mlp()),
            "tiny_conv" => Some(Self::tiny_conv()),
            _ => None,
        }
    }
}

/// Geometry of a conv layer plus the scatter map tying lowered-matrix
/// entries back to kernel parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvMeta {
    pub in_channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub out_channels: usize,
    pub kernel: [usize; 2],
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
    /// (lowered flat index, kernel flat index) pairs.
    index_map: Vec<(usize, usize)>,
}

impl ConvMeta {
    fn build(
        in_channels: usize,
        in_height: usize,
        in_width: usize,
        out_channels: usize,
        kernel: [usize; 2],
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let [kh, kw] = kernel;
        if kh == 0 || kw == 0 || stride == 0 || out_channels == 0 {
            return Err(Error::InvalidArchitecture(
                "conv kernel, stride and out_channels must be positive".into(),
            ));
        }
        let padded_h = in_height + 2 * padding;
        let padded_w = in_width + 2 * padding;
        if kh > padded_h || kw > padded_w {
            return Err(Error::InvalidArchitecture(format!(
                "kernel {kh}x{kw} larger than padded input {padded_h}x{padded_w}"
            )));
        }
        let out_height = (padded_h - kh) / stride + 1;
        let out_width = (padded_w - kw) / stride + 1;

        let in_dim = in_channels * in_height * in_width;
        let mut index_map = Vec::new();
        for oc in 0..out_channels {
            for oy in 0..out_height {
                for ox in 0..out_width {
                    let row = (oc * out_height + oy) * out_width + ox;
                    for ic in 0..in_channels {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if iy < 0
                                    || ix < 0
                                    || iy >= in_height as isize
                                    || ix >= in_width as isize
                                {
                                    continue; // zero padding: no parameter tie
                                }
                                let col =
                                    (ic * in_height + iy as usize) * in_width + ix as usize;
                                let kidx = ((oc * in_channels + ic) * kh + ky) * kw + kx;
                                index_map.push((row * in_dim + col, kidx));
                            }
                        }
                    }
                }
            }
        }

        Ok(ConvMeta {
            in_channels,
            in_height,
            in_width,
            out_channels,
            kernel,
            stride,
            padding,
            out_height,
            out_width,
            index_map,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_channels * self.in_height * self.in_width
    }

    pub fn out_dim(&self) -> usize {
        self.out_channels * self.out_height * self.out_width
    }

    pub fn kernel_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel[0] * self.kernel[1]
    }

    fn lower_weights(&self, kernel: &[f64]) -> Matrix {
        let mut m = Matrix::zeros(self.out_dim(), self.in_dim());
        let data = m.as_mut_slice();
        for &(li, ki) in &self.index_map {
            data[li] = kernel[ki];
        }
        m
    }

    fn lower_bias(&self, channel_bias: &[f64]) -> Vector {
        let spatial = self.out_height * self.out_width;
        let mut b = Vector::zeros(self.out_dim());
        for oc in 0..self.out_channels {
            for s in 0..spatial {
                b[oc * spatial + s] = channel_bias[oc];
            }
        }
        b
    }
}

/// Conv parameter storage: kernel + per-channel bias (the true parameters).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub meta: ConvMeta,
    pub kernel: Vec<f64>,
    pub channel_bias: Vec<f64>,
}

/// One affine layer with its input activation. `weight`/`bias` are always
/// the dense (lowered) form the propagation code consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub activation: Activation,
    weight: Matrix,
    bias: Vector,
    conv: Option<ConvParams>,
}

impl Layer {
    pub fn dense(weight: Matrix, bias: Vector, activation: Activation) -> Result<Self> {
        if weight.rows() != bias.len() {
            return Err(Error::Shape {
                op: "Layer::dense",
                expected: format!("bias of len {}", weight.rows()),
                got: format!("bias of len {}", bias.len()),
            });
        }
        Ok(Layer {
            activation,
            weight,
            bias,
            conv: None,
        })
    }

    fn conv(params: ConvParams, activation: Activation) -> Self {
        let weight = params.meta.lower_weights(&params.kernel);
        let bias = params.meta.lower_bias(&params.channel_bias);
        Layer {
            activation,
            weight,
            bias,
            conv: Some(params),
        }
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn bias(&self) -> &Vector {
        &self.bias
    }

    pub fn conv_params(&self) -> Option<&ConvParams> {
        self.conv.as_ref()
    }

    pub fn is_conv(&self) -> bool {
        self.conv.is_some()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    /// True trainable parameters: dense layers expose the lowered matrix
    /// itself; conv layers expose the kernel as (out_channels × ic·kh·kw)
    /// and the per-channel bias.
    pub fn param_weight(&self) -> Matrix {
        match &self.conv {
            None => self.weight.clone(),
            Some(c) => Matrix::new(
                c.meta.out_channels,
                c.meta.in_channels * c.meta.kernel[0] * c.meta.kernel[1],
                c.kernel.clone(),
            )
            .expect("kernel length fixed by meta"),
        }
    }

    pub fn param_bias(&self) -> Vector {
        match &self.conv {
            None => self.bias.clone(),
            Some(c) => Vector::new(c.channel_bias.clone()),
        }
    }

    /// Install new parameter values (kernel-shaped for conv layers) and
    /// refresh the lowered form.
    pub fn assign_params(&mut self, weight: Matrix, bias: Vector) -> Result<()> {
        match &mut self.conv {
            None => {
                if weight.rows() != self.weight.rows() || weight.cols() != self.weight.cols() {
                    return Err(Error::Shape {
                        op: "assign_params",
                        expected: format!("{}x{}", self.weight.rows(), self.weight.cols()),
                        got: format!("{}x{}", weight.rows(), weight.cols()),
                    });
                }
                if bias.len() != self.bias.len() {
                    return Err(Error::Shape {
                        op: "assign_params",
                        expected: format!("bias {}", self.bias.len()),
                        got: format!("bias {}", bias.len()),
                    });
                }
                self.weight = weight;
                self.bias = bias;
            }
            Some(c) => {
                if weight.as_slice().len() != c.meta.kernel_len()
                    || bias.len() != c.meta.out_channels
                {
                    return Err(Error::Shape {
                        op: "assign_params",
                        expected: format!(
                            "kernel {} / bias {}",
                            c.meta.kernel_len(),
                            c.meta.out_channels
                        ),
                        got: format!("kernel {} / bias {}", weight.as_slice().len(), bias.len()),
                    });
                }
                c.kernel = weight.as_slice().to_vec();
                c.channel_bias = bias.as_slice().to_vec();
                self.weight = c.meta.lower_weights(&c.kernel);
                self.bias = c.meta.lower_bias(&c.channel_bias);
            }
        }
        Ok(())
    }

    /// Fold gradients over the lowered matrix back onto the true parameters
    /// (sum over tied positions for conv layers; identity for dense).
    pub fn project_lowered_grads(
        &self,
        weight_grad: &Matrix,
        bias_grad: &Vector,
    ) -> (Matrix, Vector) {
        match &self.conv {
            None => (weight_grad.clone(), bias_grad.clone()),
            Some(c) => {
                let mut kg = vec![0.0; c.meta.kernel_len()];
                let wg = weight_grad.as_slice();
                for &(li, ki) in &c.meta.index_map {
                    kg[ki] += wg[li];
                }
                let spatial = c.meta.out_height * c.meta.out_width;
                let mut bg = vec![0.0; c.meta.out_channels];
                for oc in 0..c.meta.out_channels {
                    for s in 0..spatial {
                        bg[oc] += bias_grad[oc * spatial + s];
                    }
                }
                (
                    Matrix::new(
                        c.meta.out_channels,
                        c.meta.in_channels * c.meta.kernel[0] * c.meta.kernel[1],
                        kg,
                    )
                    .expect("kernel grad shape fixed by meta"),
                    Vector::new(bg),
                )
            }
        }
    }
}

/// Pre-activations of every layer for one input.
#[derive(Debug, Clone)]
pub struct ActivationTrace {
    pub input: Vector,
    pub pre_activations: Vec<Vector>,
}

impl ActivationTrace {
    pub fn logits(&self) -> &Vector {
        self.pre_activations
            .last()
            .expect("trace of a non-empty network")
    }
}

/// Feed-forward network: ordered layers over a flat input.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_dim: usize,
    layers: Vec<Layer>,
    arch: ArchSpec,
}

impl Network {
    /// Initialize from an architecture: weights uniform in
    /// ±√(6/(fan_in+fan_out)), biases zero, deterministic under `seed`.
    pub fn init(arch: &ArchSpec, seed: u64) -> Result<Self> {
        if arch.layers.is_empty() {
            return Err(Error::InvalidArchitecture("no layers".into()));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(arch.layers.len());

        // (flat dim, optional image shape) flowing through the stack
        let mut flat_dim = arch.input.dim();
        let mut image = match arch.input {
            InputSpec::Flat(_) => None,
            InputSpec::Image {
                channels,
                height,
                width,
            } => Some((channels, height, width)),
        };

        for (i, spec) in arch.layers.iter().enumerate() {
            let activation = match spec {
                LayerSpec::Dense { activation, .. } | LayerSpec::Conv { activation, .. } => {
                    *activation
                }
            };
            if i == 0 && activation != Activation::Identity {
                return Err(Error::InvalidArchitecture(
                    "first layer must use the identity input activation".into(),
                ));
            }
            match *spec {
                LayerSpec::Dense { units, .. } => {
                    if units == 0 {
                        return Err(Error::InvalidArchitecture("zero-width layer".into()));
                    }
                    let limit = (6.0 / (flat_dim + units) as f64).sqrt();
                    let dist = Uniform::new_inclusive(-limit, limit);
                    let data: Vec<f64> =
                        (0..units * flat_dim).map(|_| dist.sample(&mut rng)).collect();
                    layers.push(Layer::dense(
                        Matrix::new(units, flat_dim, data)?,
                        Vector::zeros(units),
                        activation,
                    )?);
                    flat_dim = units;
                    image = None;
                }
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    ..
                } => {
                    let (c, h, w) = image.ok_or_else(|| {
                        Error::InvalidArchitecture(
                            "conv layer requires an image-shaped input".into(),
                        )
                    })?;
                    let meta =
                        ConvMeta::build(c, h, w, out_channels, kernel, stride, padding)?;
                    let fan_in = c * kernel[0] * kernel[1];
                    let fan_out = out_channels * kernel[0] * kernel[1];
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let dist = Uniform::new_inclusive(-limit, limit);
                    let kdata: Vec<f64> =
                        (0..meta.kernel_len()).map(|_| dist.sample(&mut rng)).collect();
                    image = Some((meta.out_channels, meta.out_height, meta.out_width));
                    flat_dim = meta.out_dim();
                    let channel_bias = vec![0.0; meta.out_channels];
                    layers.push(Layer::conv(
                        ConvParams {
                            meta,
                            kernel: kdata,
                            channel_bias,
                        },
                        activation,
                    ));
                }
            }
        }

        Ok(Network {
            input_dim: arch.input.dim(),
            layers,
            arch: arch.clone(),
        })
    }

    /// Build directly from explicit dense layers (test nets, hand nets).
    pub fn from_dense_layers(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArchitecture("no layers".into()));
        }
        if layers[0].activation != Activation::Identity {
            return Err(Error::InvalidArchitecture(
                "first layer must use the identity input activation".into(),
            ));
        }
        let mut dim = input_dim;
        for (i, l) in layers.iter().enumerate() {
            if l.in_dim() != dim {
                return Err(Error::InvalidArchitecture(format!(
                    "layer {i} consumes {} but receives {dim}",
                    l.in_dim()
                )));
            }
            dim = l.out_dim();
        }
        let arch = ArchSpec {
            input: InputSpec::Flat(input_dim),
            layers: layers
                .iter()
                .map(|l| LayerSpec::Dense {
                    units: l.out_dim(),
                    activation: l.activation,
                })
                .collect(),
        };
        Ok(Network {
            input_dim,
            layers,
            arch,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim()).unwrap_or(0)
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                let w = l.param_weight();
                w.rows() * w.cols() + l.param_bias().len()
            })
            .sum()
    }

    /// Standard forward pass; one forward-shaped sweep, one product/layer.
    pub fn forward(&self, x: &Vector) -> Result<ActivationTrace> {
        if x.len() != self.input_dim {
            return Err(Error::Shape {
                op: "forward",
                expected: format!("input of len {}", self.input_dim),
                got: format!("len {}", x.len()),
            });
        }
        counter::record_fwd_pass();
        counter::record_products(self.layers.len() as u64);

        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut prev = x.clone();
        for layer in &self.layers {
            let h = layer.activation.apply_vec(&prev);
            let mut z = layer.weight.matvec(&h).expect("dims validated at build");
            for (z, b) in z.as_mut_slice().iter_mut().zip(layer.bias.iter()) {
                *z += b;
            }
            prev = z.clone();
            pre_activations.push(z);
        }
        Ok(ActivationTrace {
            input: x.clone(),
            pre_activations,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = CheckpointFile {
            format_version: FORMAT_VERSION as i64,
            arch: self.arch.clone(),
            weights: self
                .layers
                .iter()
                .map(|l| l.param_weight().as_slice().to_vec())
                .collect(),
            biases: self
                .layers
                .iter()
                .map(|l| l.param_bias().into_vec())
                .collect(),
        };
        let f = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), &file).map_err(|source| {
            Error::Json {
                path: path.display().to_string(),
                source,
            }
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let raw = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: display.clone(),
            source,
        })?;
        let value: serde_json::Value =
            serde_json::from_str(&raw).map_err(|source| Error::Json {
                path: display.clone(),
                source,
            })?;
        let got = value
            .get("format_version")
            .and_then(|v| v.as_i64())
            .unwrap_or(-1);
        if got != FORMAT_VERSION as i64 {
            return Err(Error::VersionMismatch {
                expected: FORMAT_VERSION,
                got,
            });
        }
        let file: CheckpointFile =
            serde_json::from_value(value).map_err(|source| Error::Json {
                path: display,
                source,
            })?;

        let mut net = Network::init(&file.arch, 0)?;
        if file.weights.len() != net.layers.len() || file.biases.len() != net.layers.len() {
            return Err(Error::CheckpointShape(format!(
                "{} layers declared, {} weight and {} bias blocks present",
                net.layers.len(),
                file.weights.len(),
                file.biases.len()
            )));
        }
        for (i, layer) in net.layers.iter_mut().enumerate() {
            let shape = layer.param_weight();
            let (rows, cols) = (shape.rows(), shape.cols());
            if file.weights[i].len() != rows * cols {
                return Err(Error::CheckpointShape(format!(
                    "layer {i}: expected {} weight entries, file has {}",
                    rows * cols,
                    file.weights[i].len()
                )));
            }
            if file.biases[i].len() != layer.param_bias().len() {
                return Err(Error::CheckpointShape(format!(
                    "layer {i}: expected {} bias entries, file has {}",
                    layer.param_bias().len(),
                    file.biases[i].len()
                )));
            }
            let w = Matrix::new(rows, cols, file.weights[i].clone())?;
            let b = Vector::new(file.biases[i].clone());
            if !w.all_finite() || !b.all_finite() {
                return Err(Error::CheckpointShape(format!(
                    "layer {i}: non-finite parameter in file"
                )));
            }
            layer.assign_params(w, b)?;
        }
        Ok(net)
    }
}

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: i64,
    arch: ArchSpec,
    /// Row-major true parameters per layer (kernel entries for conv).
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}
