use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layer::{param_sizes, LayerKind, NetworkSpec, OutputMode, Shape};
use super::ops::{self, ConvGeom};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Weights and bias of one CONV or FC layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerParams {
    fn zeros(w: usize, b: usize) -> Self {
        LayerParams { weights: vec![0.0; w], bias: vec![0.0; b] }
    }

    pub fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }
}

/// Parameter gradients, laid out exactly like [`Network::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<LayerParams>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        let layers = net
            .params
            .iter()
            .map(|p| p.as_ref().map(|p| LayerParams::zeros(p.weights.len(), p.bias.len())))
            .collect();
        Gradients { layers }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some(a), Some(b)) = (a, b) {
                for (x, y) in a.iter_mut().zip(b.iter()) {
                    *x += y;
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for p in self.layers.iter_mut().flatten() {
            for x in p.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().flatten().all(|p| p.iter().all(|&v| v == 0.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightInit {
    /// Zero-mean Gaussian with a fixed standard deviation.
    Gaussian { std: f64 },
    /// Zero-mean Gaussian with std `sqrt(2 / fan_in)`.
    He,
}

impl Default for WeightInit {
    fn default() -> Self {
        WeightInit::Gaussian { std: 0.01 }
    }
}

impl WeightInit {
    fn std(&self, fan_in: usize) -> f64 {
        match *self {
            WeightInit::Gaussian { std } => std,
            WeightInit::He => (2.0 / fan_in as f64).sqrt(),
        }
    }
}

/// Parameters are kept on the `f32` grid so that the binary weights file
/// round-trips them exactly; all arithmetic runs in `f64`.
#[inline]
pub(crate) fn to_storage(v: f64) -> f64 {
    v as f32 as f64
}

/// Activations recorded by [`Network::forward_trace`]: the input followed
/// by every layer output.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    activations: Vec<Vec<f64>>,
    output_dims: Vec<usize>,
}

impl ForwardTrace {
    pub fn output(&self) -> Tensor {
        let data = self.activations.last().cloned().unwrap_or_default();
        Tensor::new(self.output_dims.clone(), data).expect("trace output dims")
    }

    /// Input to the terminal softmax.
    pub fn logits(&self) -> &[f64] {
        &self.activations[self.activations.len() - 2]
    }
}

/// A [`NetworkSpec`] together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    mode: OutputMode,
    /// Input shape of each layer, followed by the final output shape.
    shapes: Vec<Shape>,
    params: Vec<Option<LayerParams>>,
}

impl Network {
    /// Seeded initialization: weights from `init`, zero biases.
    pub fn new(spec: NetworkSpec, init: WeightInit, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..net.params.len() {
            net.init_layer(i, init, &mut rng)?;
        }
        Ok(net)
    }

    /// All parameters zero; the output is uniform for either softmax kind.
    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        let mode = spec.validate()?;
        let mut shapes = vec![spec.input_dims];
        shapes.extend(spec.shape_trace()?);
        let params = spec
            .layers
            .iter()
            .zip(&shapes)
            .map(|(l, &input)| param_sizes(&l.kind, input).map(|(w, b)| LayerParams::zeros(w, b)))
            .collect();
        Ok(Network { spec, mode, shapes, params })
    }

    fn init_layer(&mut self, index: usize, init: WeightInit, rng: &mut ChaCha8Rng) -> Result<()> {
        let input = self.shapes[index];
        let fan_in = match self.spec.layers[index].kind {
            LayerKind::Conv { size, .. } => size * size * input[2],
            LayerKind::Fc { .. } => input.iter().product(),
            _ => return Ok(()),
        };
        let normal = Normal::new(0.0, init.std(fan_in))
            .map_err(|e| Error::config(format!("invalid weight init: {e}")))?;
        if let Some(p) = self.params[index].as_mut() {
            for w in p.weights.iter_mut() {
                *w = to_storage(normal.sample(rng));
            }
            p.bias.fill(0.0);
        }
        Ok(())
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn mode(&self) -> OutputMode {
        self.mode
    }

    pub fn input_shape(&self) -> Shape {
        self.spec.input_dims
    }

    pub fn output_shape(&self) -> Shape {
        self.shapes[self.shapes.len() - 1]
    }

    pub fn params(&self) -> &[Option<LayerParams>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Option<LayerParams>] {
        &mut self.params
    }

    pub fn layer_params(&self, name: &str) -> Option<&LayerParams> {
        self.spec.index_of(name).and_then(|i| self.params[i].as_ref())
    }

    fn output_dims(&self) -> Vec<usize> {
        let [r, c, ch] = self.output_shape();
        match self.mode {
            OutputMode::Classifier => vec![ch],
            OutputMode::Spatial => vec![r, c, ch],
        }
    }

    fn check_input(&self, dims: &[usize]) -> Result<()> {
        let [r, c, ch] = self.spec.input_dims;
        let ok = match dims {
            [a, b, d] => [*a, *b, *d] == [r, c, ch],
            [1, a, b, d] => [*a, *b, *d] == [r, c, ch],
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::shape("input", format!("expected input dims [{r}, {c}, {ch}], got {dims:?}")))
        }
    }

    /// Inference on one sample `[rows, cols, ch]` or a batch
    /// `[batch, rows, cols, ch]`.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        if input.dims().len() == 4 && input.dims()[0] != 1 {
            let batch = input.dims()[0];
            let per = input.len() / batch.max(1);
            let sample_dims = &input.dims()[1..];
            let mut out = Vec::new();
            for chunk in input.data().chunks(per) {
                let t = Tensor::new(sample_dims.to_vec(), chunk.to_vec())?;
                out.extend(self.forward(&t)?.into_data());
            }
            let mut dims = vec![batch];
            dims.extend(self.output_dims());
            return Tensor::new(dims, out);
        }
        Ok(self.forward_trace(input)?.output())
    }

    pub fn forward_trace(&self, input: &Tensor) -> Result<ForwardTrace> {
        self.check_input(input.dims())?;
        let mut activations = Vec::with_capacity(self.spec.layers.len() + 1);
        activations.push(input.data().to_vec());
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let x = &activations[i];
            let (ishape, oshape) = (self.shapes[i], self.shapes[i + 1]);
            let mut y = vec![0.0; oshape.iter().product()];
            match layer.kind {
                LayerKind::Conv { size, stride, padding, .. } => {
                    let p = self.params[i].as_ref().expect("conv params");
                    let g = ConvGeom { input: ishape, output: oshape, size, stride, padding };
                    ops::conv_forward(&g, x, &p.weights, &p.bias, &mut y);
                }
                LayerKind::Fc { .. } => {
                    let p = self.params[i].as_ref().expect("fc params");
                    ops::fc_forward(x, &p.weights, &p.bias, &mut y);
                }
                LayerKind::Relu => ops::relu_forward(x, &mut y),
                LayerKind::Lrn(p) => ops::lrn_forward(x, ishape[2], &p, &mut y),
                LayerKind::MaxPool { size, stride } => ops::pool_forward(x, ishape, oshape, size, stride, &mut y),
                LayerKind::Softmax => ops::softmax_into(x, &mut y),
                LayerKind::SpatialSoftmax => {
                    let c = ishape[2];
                    for (xs, ys) in x.chunks_exact(c).zip(y.chunks_exact_mut(c)) {
                        ops::softmax_into(xs, ys);
                    }
                }
            }
            activations.push(y);
        }
        Ok(ForwardTrace { activations, output_dims: self.output_dims() })
    }

    fn check_trace(&self, trace: &ForwardTrace) -> Result<()> {
        let ok = trace.activations.len() == self.shapes.len()
            && trace.activations.iter().zip(&self.shapes).all(|(a, s)| a.len() == s.iter().product::<usize>());
        if ok {
            Ok(())
        } else {
            Err(Error::State("forward trace does not belong to this network".into()))
        }
    }

    /// Gradients of a scalar loss given its gradient at the network output
    /// (the softmax probabilities).
    pub fn backward(&self, trace: &ForwardTrace, output_grad: &Tensor) -> Result<Gradients> {
        self.check_trace(trace)?;
        let n = self.spec.layers.len();
        if output_grad.len() != trace.activations[n].len() {
            return Err(Error::shape(
                self.spec.layers[n - 1].name.clone(),
                format!("output gradient has {} values, expected {}", output_grad.len(), trace.activations[n].len()),
            ));
        }
        self.backprop(trace, n, output_grad.data().to_vec())
    }

    /// Like [`Network::backward`] but with the gradient taken with respect
    /// to the logits feeding the terminal softmax.
    pub fn backward_logits(&self, trace: &ForwardTrace, logits_grad: &[f64]) -> Result<Gradients> {
        self.check_trace(trace)?;
        let n = self.spec.layers.len();
        if logits_grad.len() != trace.activations[n - 1].len() {
            return Err(Error::shape(
                self.spec.layers[n - 1].name.clone(),
                format!("logit gradient has {} values, expected {}", logits_grad.len(), trace.activations[n - 1].len()),
            ));
        }
        self.backprop(trace, n - 1, logits_grad.to_vec())
    }

    /// Backpropagates `grad` (gradient w.r.t. the output of layer `top - 1`)
    /// down to the input.
    fn backprop(&self, trace: &ForwardTrace, top: usize, mut grad: Vec<f64>) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        let Some(&first_param) = self.spec.param_layers().first() else {
            return Ok(grads);
        };
        for i in (first_param..top).rev() {
            let layer = &self.spec.layers[i];
            let x = &trace.activations[i];
            let y = &trace.activations[i + 1];
            let (ishape, oshape) = (self.shapes[i], self.shapes[i + 1]);
            // below the first parametric layer the input gradient is unused
            let need_dx = i > first_param;
            let mut dx = vec![0.0; x.len()];
            match layer.kind {
                LayerKind::Conv { size, stride, padding, .. } => {
                    let p = self.params[i].as_ref().expect("conv params");
                    let g = grads.layers[i].as_mut().expect("conv grads");
                    let geom = ConvGeom { input: ishape, output: oshape, size, stride, padding };
                    let dx_opt = need_dx.then_some(dx.as_mut_slice());
                    ops::conv_backward(&geom, x, &p.weights, &grad, &mut g.weights, &mut g.bias, dx_opt);
                }
                LayerKind::Fc { .. } => {
                    let p = self.params[i].as_ref().expect("fc params");
                    let g = grads.layers[i].as_mut().expect("fc grads");
                    let dx_opt = need_dx.then_some(dx.as_mut_slice());
                    ops::fc_backward(x, &p.weights, &grad, &mut g.weights, &mut g.bias, dx_opt);
                }
                LayerKind::Relu => ops::relu_backward(x, &grad, &mut dx),
                LayerKind::Lrn(p) => ops::lrn_backward(x, ishape[2], &p, &grad, &mut dx),
                LayerKind::MaxPool { size, stride } => {
                    ops::pool_backward(x, ishape, oshape, size, stride, &grad, &mut dx)
                }
                LayerKind::Softmax => ops::softmax_backward(y, &grad, &mut dx),
                LayerKind::SpatialSoftmax => {
                    let c = ishape[2];
                    for ((ps, gs), ds) in y.chunks_exact(c).zip(grad.chunks_exact(c)).zip(dx.chunks_exact_mut(c)) {
                        ops::softmax_backward(ps, gs, ds);
                    }
                }
            }
            grad = dx;
        }
        Ok(grads)
    }

    /// Gradient of a scalar loss with respect to the input sample.
    pub fn input_gradient(&self, trace: &ForwardTrace, output_grad: &Tensor) -> Result<Vec<f64>> {
        self.check_trace(trace)?;
        let mut grad = output_grad.data().to_vec();
        for i in (0..self.spec.layers.len()).rev() {
            let layer = &self.spec.layers[i];
            let x = &trace.activations[i];
            let y = &trace.activations[i + 1];
            let (ishape, oshape) = (self.shapes[i], self.shapes[i + 1]);
            let mut dx = vec![0.0; x.len()];
            match layer.kind {
                LayerKind::Conv { size, stride, padding, .. } => {
                    let p = self.params[i].as_ref().expect("conv params");
                    let mut dw = vec![0.0; p.weights.len()];
                    let mut db = vec![0.0; p.bias.len()];
                    let geom = ConvGeom { input: ishape, output: oshape, size, stride, padding };
                    ops::conv_backward(&geom, x, &p.weights, &grad, &mut dw, &mut db, Some(&mut dx));
                }
                LayerKind::Fc { .. } => {
                    let p = self.params[i].as_ref().expect("fc params");
                    let mut dw = vec![0.0; p.weights.len()];
                    let mut db = vec![0.0; p.bias.len()];
                    ops::fc_backward(x, &p.weights, &grad, &mut dw, &mut db, Some(&mut dx));
                }
                LayerKind::Relu => ops::relu_backward(x, &grad, &mut dx),
                LayerKind::Lrn(p) => ops::lrn_backward(x, ishape[2], &p, &grad, &mut dx),
                LayerKind::MaxPool { size, stride } => {
                    ops::pool_backward(x, ishape, oshape, size, stride, &grad, &mut dx)
                }
                LayerKind::Softmax => ops::softmax_backward(y, &grad, &mut dx),
                LayerKind::SpatialSoftmax => {
                    let c = ishape[2];
                    for ((ps, gs), ds) in y.chunks_exact(c).zip(grad.chunks_exact(c)).zip(dx.chunks_exact_mut(c)) {
                        ops::softmax_backward(ps, gs, ds);
                    }
                }
            }
            grad = dx;
        }
        Ok(grad)
    }

    /// Swaps the final FC layer for a freshly initialized one with
    /// `num_classes` outputs. Every other parameter is copied unchanged.
    pub fn replace_head(&self, num_classes: usize, init: WeightInit, seed: u64) -> Result<Network> {
        let head = self.spec.head_index().ok_or_else(|| Error::config("network has no parametric layers"))?;
        if !matches!(self.spec.layers[head].kind, LayerKind::Fc { .. }) || self.mode != OutputMode::Classifier {
            return Err(Error::config(format!("layer `{}` is not an FC classifier head", self.spec.layers[head].name)));
        }
        let mut spec = self.spec.clone();
        spec.layers[head].kind = LayerKind::Fc { neurons: num_classes };
        spec.num_classes = num_classes;
        let mut net = Network::zeros(spec)?;
        for (i, p) in self.params.iter().enumerate() {
            if i != head {
                net.params[i] = p.clone();
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        net.init_layer(head, init, &mut rng)?;
        Ok(net)
    }
}
