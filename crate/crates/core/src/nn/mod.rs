//! Dense-tensor network engine: convolution, LRN, max pooling, fully
//! connected, ReLU, softmax and per-pixel softmax, with backpropagation and
//! SGD under per-layer learning-rate multipliers.

mod io;
mod layer;
mod network;
mod ops;
mod tensor;
mod train;

pub use io::{decode_weights_into, encode_weights, hex, load_weights, read_header, save_weights, WeightsHeader};
pub use layer::{LayerKind, LayerSpec, LrnParams, NetworkSpec, OutputMode, Shape};
pub use network::{ForwardTrace, Gradients, LayerParams, Network, WeightInit};
pub use tensor::Tensor;
pub use train::{FineTunePolicy, Scenario, TrainState};

pub(crate) use ops::softmax_into;
pub(crate) use tensor::argmax;
