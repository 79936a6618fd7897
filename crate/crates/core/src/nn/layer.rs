use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Cross-channel local response normalization:
/// `b_c = a_c / (bias + alpha * sum_{c' in window(c)} a_{c'}^2)^beta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrnParams {
    pub depth: usize,
    pub alpha: f64,
    pub beta: f64,
    pub bias: f64,
}

impl Default for LrnParams {
    fn default() -> Self {
        LrnParams { depth: 5, alpha: 1e-4, beta: 0.75, bias: 2.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv { kernels: usize, size: usize, stride: usize, padding: usize },
    Lrn(LrnParams),
    MaxPool { size: usize, stride: usize },
    Fc { neurons: usize },
    Relu,
    Softmax,
    SpatialSoftmax,
}

impl LayerKind {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerKind::Conv { .. } | LayerKind::Fc { .. })
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerKind::Conv { kernels, size, stride, padding } => {
                write!(f, "CON({kernels},{size},stride={stride},pad={padding})")
            }
            LayerKind::Lrn(p) => {
                write!(f, "LRN(n={},alpha={:e},beta={},k={})", p.depth, p.alpha, p.beta, p.bias)
            }
            LayerKind::MaxPool { size, stride } => write!(f, "MP({size},stride={stride})"),
            LayerKind::Fc { neurons } => write!(f, "FC({neurons})"),
            LayerKind::Relu => f.write_str("RELU"),
            LayerKind::Softmax => f.write_str("SOFTMAX"),
            LayerKind::SpatialSoftmax => f.write_str("SPATIAL_SOFTMAX"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        LayerSpec { name: name.into(), kind }
    }
}

/// Per-sample activation shape: (rows, cols, channels). Fully connected
/// outputs are reported as `1 x 1 x n`.
pub type Shape = [usize; 3];

/// Layer stack plus input extents. Parametric layers are `Conv` and `Fc`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dims: Shape,
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
}

/// Whether the network ends in a per-sample or a per-pixel softmax.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputMode {
    Classifier,
    Spatial,
}

fn conv_out(len: usize, size: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if padded < size {
        return None;
    }
    Some((padded - size) / stride + 1)
}

impl NetworkSpec {
    /// Output shape of every layer, in order. Fails on the first layer whose
    /// input extents cannot be processed.
    pub fn shape_trace(&self) -> Result<Vec<Shape>> {
        let [r, c, ch] = self.input_dims;
        if r == 0 || c == 0 || ch == 0 {
            return Err(Error::shape("input", format!("input dims {:?} must be positive", self.input_dims)));
        }
        let mut shape = self.input_dims;
        let mut trace = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shape = layer_output_shape(layer, shape)?;
            trace.push(shape);
        }
        Ok(trace)
    }

    pub fn output_shape(&self) -> Result<Shape> {
        self.shape_trace()?
            .last()
            .copied()
            .ok_or_else(|| Error::config("network has no layers"))
    }

    pub fn validate(&self) -> Result<OutputMode> {
        let trace = self.shape_trace()?;
        let last = self.layers.last().ok_or_else(|| Error::config("network has no layers"))?;
        let mode = match last.kind {
            LayerKind::Softmax => OutputMode::Classifier,
            LayerKind::SpatialSoftmax => OutputMode::Spatial,
            _ => {
                return Err(Error::config(format!(
                    "terminal layer `{}` must be SOFTMAX or SPATIAL_SOFTMAX",
                    last.name
                )))
            }
        };
        if let Some(extra) = self.layers[..self.layers.len() - 1]
            .iter()
            .find(|l| matches!(l.kind, LayerKind::Softmax | LayerKind::SpatialSoftmax))
        {
            return Err(Error::config(format!("softmax layer `{}` is not terminal", extra.name)));
        }
        let out = trace[trace.len() - 1];
        if out[2] != self.num_classes {
            return Err(Error::shape(
                last.name.clone(),
                format!("output has {} channels but num_classes is {}", out[2], self.num_classes),
            ));
        }
        if mode == OutputMode::Classifier && (out[0], out[1]) != (1, 1) {
            return Err(Error::shape(last.name.clone(), "classifier softmax expects a vector input"));
        }
        let mut names = std::collections::HashSet::new();
        for l in &self.layers {
            if !names.insert(l.name.as_str()) {
                return Err(Error::config(format!("duplicate layer name `{}`", l.name)));
            }
        }
        Ok(mode)
    }

    /// Indices of the layers that own weights and biases.
    pub fn param_layers(&self) -> Vec<usize> {
        self.layers.iter().enumerate().filter(|(_, l)| l.kind.has_params()).map(|(i, _)| i).collect()
    }

    /// The last parametric layer; the classifier head for classifier networks.
    pub fn head_index(&self) -> Option<usize> {
        self.param_layers().last().copied()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn param_count(&self) -> Result<usize> {
        let trace = self.shape_trace()?;
        let mut total = 0;
        let mut input = self.input_dims;
        for (layer, out) in self.layers.iter().zip(&trace) {
            if let Some((w, b)) = param_sizes(&layer.kind, input) {
                total += w + b;
            }
            input = *out;
        }
        Ok(total)
    }

    /// Canonical text form; the basis of the architecture digest.
    pub fn canonical(&self) -> String {
        let [r, c, ch] = self.input_dims;
        let mut s = format!("input={r}x{c}x{ch};classes={};", self.num_classes);
        for l in &self.layers {
            let _ = write!(s, "{}:{};", l.name, l.kind);
        }
        s
    }

    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.canonical().as_bytes()).into()
    }

    /// The seven-layer architecture: five convolutions, three fully connected
    /// layers, LRN after C1, C2 and C5, 3x3 stride-2 max pooling.
    pub fn full_classifier(num_classes: usize) -> Self {
        let lrn = LrnParams::default();
        let conv = |k, s, stride, pad| LayerKind::Conv { kernels: k, size: s, stride, padding: pad };
        let pool = LayerKind::MaxPool { size: 3, stride: 2 };
        NetworkSpec {
            input_dims: [227, 227, 3],
            layers: vec![
                LayerSpec::new("C1", conv(96, 11, 4, 0)),
                LayerSpec::new("relu1", LayerKind::Relu),
                LayerSpec::new("lrn1", LayerKind::Lrn(lrn)),
                LayerSpec::new("pool1", pool),
                LayerSpec::new("C2", conv(256, 5, 1, 2)),
                LayerSpec::new("relu2", LayerKind::Relu),
                LayerSpec::new("lrn2", LayerKind::Lrn(lrn)),
                LayerSpec::new("pool2", pool),
                LayerSpec::new("C3", conv(384, 3, 1, 1)),
                LayerSpec::new("relu3", LayerKind::Relu),
                LayerSpec::new("C4", conv(384, 3, 1, 1)),
                LayerSpec::new("relu4", LayerKind::Relu),
                LayerSpec::new("C5", conv(256, 3, 1, 1)),
                LayerSpec::new("relu5", LayerKind::Relu),
                LayerSpec::new("lrn5", LayerKind::Lrn(lrn)),
                LayerSpec::new("pool5", pool),
                LayerSpec::new("FC6", LayerKind::Fc { neurons: 4096 }),
                LayerSpec::new("relu6", LayerKind::Relu),
                LayerSpec::new("FC7", LayerKind::Fc { neurons: 4096 }),
                LayerSpec::new("relu7", LayerKind::Relu),
                LayerSpec::new("FC8", LayerKind::Fc { neurons: num_classes }),
                LayerSpec::new("prob", LayerKind::Softmax),
            ],
            num_classes,
        }
    }

    /// Same topology as [`NetworkSpec::full_classifier`], scaled down to a
    /// 32x32x3 input so it trains in seconds on one core.
    pub fn desk_classifier(num_classes: usize) -> Self {
        let mut spec = Self::full_classifier(num_classes);
        spec.input_dims = [32, 32, 3];
        let resize = |kind: &mut LayerKind, k: usize, s: usize, stride: usize, pad: usize| {
            *kind = LayerKind::Conv { kernels: k, size: s, stride, padding: pad };
        };
        for layer in &mut spec.layers {
            match layer.name.as_str() {
                "C1" => resize(&mut layer.kind, 16, 5, 2, 2),
                "C2" => resize(&mut layer.kind, 32, 5, 1, 2),
                "C3" => resize(&mut layer.kind, 32, 3, 1, 1),
                "C4" => resize(&mut layer.kind, 32, 3, 1, 1),
                "C5" => resize(&mut layer.kind, 32, 3, 1, 1),
                "FC6" | "FC7" => layer.kind = LayerKind::Fc { neurons: 64 },
                _ => {}
            }
        }
        spec
    }

    /// Fully convolutional flow predictor emitting an `M x N x C` spatial
    /// softmax at input resolution.
    pub fn desk_flow(rows: usize, cols: usize, clusters: usize, width: usize) -> Self {
        let conv = |k, s, pad| LayerKind::Conv { kernels: k, size: s, stride: 1, padding: pad };
        NetworkSpec {
            input_dims: [rows, cols, 3],
            layers: vec![
                LayerSpec::new("F1", conv(width, 5, 2)),
                LayerSpec::new("frelu1", LayerKind::Relu),
                LayerSpec::new("F2", conv(width, 5, 2)),
                LayerSpec::new("frelu2", LayerKind::Relu),
                LayerSpec::new("F3", conv(width, 5, 2)),
                LayerSpec::new("frelu3", LayerKind::Relu),
                LayerSpec::new("F4", conv(clusters, 1, 0)),
                LayerSpec::new("flow_prob", LayerKind::SpatialSoftmax),
            ],
            num_classes: clusters,
        }
    }
}

pub(crate) fn layer_output_shape(layer: &LayerSpec, input: Shape) -> Result<Shape> {
    let [r, c, ch] = input;
    let bad = |msg: String| Error::shape(layer.name.clone(), msg);
    match layer.kind {
        LayerKind::Conv { kernels, size, stride, padding } => {
            if kernels == 0 || size == 0 || stride == 0 {
                return Err(bad("kernels, size and stride must be >= 1".into()));
            }
            match (conv_out(r, size, stride, padding), conv_out(c, size, stride, padding)) {
                (Some(orows), Some(ocols)) => Ok([orows, ocols, kernels]),
                _ => Err(bad(format!("input {r}x{c}x{ch} is smaller than the {size}x{size} kernel"))),
            }
        }
        LayerKind::MaxPool { size, stride } => {
            if size == 0 || stride == 0 {
                return Err(bad("size and stride must be >= 1".into()));
            }
            match (conv_out(r, size, stride, 0), conv_out(c, size, stride, 0)) {
                (Some(orows), Some(ocols)) => Ok([orows, ocols, ch]),
                _ => Err(bad(format!("input {r}x{c}x{ch} is smaller than the {size}x{size} window"))),
            }
        }
        LayerKind::Fc { neurons } => {
            if neurons == 0 {
                return Err(bad("FC needs at least one neuron".into()));
            }
            Ok([1, 1, neurons])
        }
        LayerKind::Lrn(p) => {
            if p.depth == 0 {
                return Err(bad("LRN depth must be >= 1".into()));
            }
            Ok(input)
        }
        LayerKind::Relu | LayerKind::Softmax | LayerKind::SpatialSoftmax => Ok(input),
    }
}

/// (weight count, bias count) of a parametric layer given its input shape.
pub(crate) fn param_sizes(kind: &LayerKind, input: Shape) -> Option<(usize, usize)> {
    match *kind {
        LayerKind::Conv { kernels, size, .. } => Some((size * size * input[2] * kernels, kernels)),
        LayerKind::Fc { neurons } => Some((input.iter().product::<usize>() * neurons, neurons)),
        _ => None,
    }
}
