//! Still-image action recognition through a predicted-flow + saliency
//! image domain (POF-SM).
//!
//! A static image is mapped to three channels: the horizontal and vertical
//! components of a predicted dense optical flow, and a thresholded
//! bottom-up saliency map. A compact convolutional classifier is then
//! transfer-trained on that representation.
//!
//! * [`nn`]: the network engine (layers, backprop, SGD, fine-tuning policy).
//! * [`flow`]: k-means flow codebook, label encoding and probability decoding.
//! * [`loss`]: the spatial softmax loss and its order-statistic variant.
//! * [`saliency`]: self-resemblance saliency and Otsu thresholding.
//! * [`domain`]: the POF-SM mapping and mirror augmentation.
//! * [`pipeline`]: synthetic data, manifests, training loops and evaluation.

pub mod domain;
pub mod error;
pub mod flow;
pub mod image;
pub mod loss;
pub mod nn;
pub mod pipeline;
pub mod saliency;

pub use error::{Error, Result};
