//! In-memory pipeline stages. The command-line tool and the desk
//! experiment both run through these.

use rayon::prelude::*;

use super::config::{CodebookConfig, Config};
use super::eval::{evaluate_scores, EvalReport};
use super::train::{predict_scores, train_classifier, train_flow_network, Augment, FlowSample, TrainConfig, TrainLog};
use crate::domain::{network_input, prepare_input, predict_flow, MappingConfig, PofSmImage};
use crate::error::{Error, Result};
use crate::flow::{encode_flow, FlowCodebook, FlowField};
use crate::image::Image;
use crate::nn::{Network, NetworkSpec, Scenario, Tensor};

/// Codebook over the pooled flow vectors of `flows`.
pub fn fit_codebook(flows: &[FlowField], cfg: &CodebookConfig, seed: u64) -> Result<FlowCodebook> {
    let pooled: Vec<[f64; 2]> = flows.iter().flat_map(|f| f.vectors().iter().copied()).collect();
    cfg.kmeans(seed).fit(&pooled)
}

/// Pairs each image, resized to the network input, with the cluster labels
/// of its ground-truth flow.
pub fn flow_samples(images: &[Image], flows: &[FlowField], codebook: &FlowCodebook, net: &Network) -> Result<Vec<FlowSample>> {
    if images.len() != flows.len() {
        return Err(Error::data("every image needs a ground-truth flow"));
    }
    let [r, c, _] = net.output_shape();
    images
        .par_iter()
        .zip(flows)
        .map(|(img, flow)| {
            if (flow.rows(), flow.cols()) != (r, c) {
                return Err(Error::data(format!(
                    "ground-truth flow is {}x{}, flow network output is {r}x{c}",
                    flow.rows(),
                    flow.cols()
                )));
            }
            Ok(FlowSample { input: prepare_input(img, net)?, labels: encode_flow(flow, codebook) })
        })
        .collect()
}

/// Builds and trains the flow network described by `cfg`.
pub fn train_flow(
    images: &[Image],
    flows: &[FlowField],
    codebook: &FlowCodebook,
    cfg: &Config,
) -> Result<(Network, TrainLog)> {
    let first = images.first().ok_or_else(|| Error::data("no flow training images"))?;
    let spec = cfg.flow_net.spec(first.rows(), first.cols(), codebook.clusters());
    let net = Network::new(spec, cfg.flow_train.weight_init(), cfg.seed("flow-init"))?;
    let samples = flow_samples(images, flows, codebook, &net)?;
    train_flow_network(
        net,
        &samples,
        cfg.loss.variant,
        &cfg.loss.loss_config(),
        &cfg.flow_train,
        cfg.seed("flow-train"),
    )
}

/// Fraction of moving ground-truth pixels whose most likely predicted
/// cluster equals the ground-truth cluster.
pub fn moving_pixel_accuracy(net: &Network, codebook: &FlowCodebook, images: &[Image], flows: &[FlowField]) -> Result<f64> {
    let counts = images
        .par_iter()
        .zip(flows)
        .map(|(img, flow)| {
            let pred = predict_flow(img, net)?.argmax_labels();
            let truth = encode_flow(flow, codebook);
            let mut hit = 0usize;
            let mut total = 0usize;
            for ((p, t), v) in pred.labels().iter().zip(truth.labels()).zip(flow.vectors()) {
                if v[0] != 0.0 || v[1] != 0.0 {
                    total += 1;
                    hit += usize::from(p == t);
                }
            }
            Ok((hit, total))
        })
        .collect::<Result<Vec<_>>>()?;
    let (hit, total) = counts.iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    if total == 0 {
        return Err(Error::data("no moving pixels to score"));
    }
    Ok(hit as f64 / total as f64)
}

pub fn mapping_config(flow_net: Network, codebook: FlowCodebook, cfg: &Config) -> Result<MappingConfig> {
    let mut m = MappingConfig::new(flow_net, codebook)?;
    m.decode = cfg.mapping.decode;
    m.saliency = cfg.saliency;
    m.otsu_bins = cfg.mapping.otsu_bins;
    if cfg.mapping.f_max > 0.0 {
        m.f_max = cfg.mapping.f_max;
    }
    m.validate()?;
    Ok(m)
}

/// Resamples to the classifier input size when needed and centers.
pub fn fit_input(img: Image, rows: usize, cols: usize) -> Tensor {
    if (img.rows(), img.cols()) == (rows, cols) {
        network_input(&img)
    } else {
        network_input(&img.resize_bilinear(rows, cols))
    }
}

/// Classifier inputs from mapped images.
pub fn pofsm_inputs(maps: &[PofSmImage], spec: &NetworkSpec) -> Vec<Tensor> {
    let [r, c, _] = spec.input_dims;
    maps.iter().map(|m| fit_input(m.to_image(), r, c)).collect()
}

/// Classifier inputs from raw images.
pub fn raw_inputs(images: &[Image], spec: &NetworkSpec) -> Vec<Tensor> {
    let [r, c, _] = spec.input_dims;
    images.iter().map(|m| fit_input(m.clone(), r, c)).collect()
}

fn pair(inputs: &[Tensor], labels: &[usize]) -> Result<Vec<(Tensor, usize)>> {
    if inputs.len() != labels.len() {
        return Err(Error::data("inputs and labels differ in length"));
    }
    Ok(inputs.iter().cloned().zip(labels.iter().copied()).collect())
}

/// Supervised training from a fresh initialization, every layer at the
/// base rate.
pub fn train_scratch(
    spec: NetworkSpec,
    inputs: &[Tensor],
    labels: &[usize],
    train: &TrainConfig,
    augment: Augment,
    seed: u64,
) -> Result<(Network, TrainLog)> {
    let net = Network::new(spec, train.weight_init(), seed)?;
    train_classifier(net, &train.uniform_policy(), &pair(inputs, labels)?, train, augment, seed)
}

/// Source-task pretraining on mapped inputs.
pub fn pretrain(inputs: &[Tensor], labels: &[usize], num_classes: usize, cfg: &Config) -> Result<(Network, TrainLog)> {
    let spec = cfg.classifier.spec(num_classes);
    train_scratch(spec, inputs, labels, &cfg.pretrain, Augment::MirrorPofSm, cfg.seed("pretrain"))
}

/// Replaces the head of `base` and trains under `scenario`.
pub fn finetune(
    base: &Network,
    inputs: &[Tensor],
    labels: &[usize],
    num_classes: usize,
    scenario: Scenario,
    cfg: &Config,
) -> Result<(Network, TrainLog)> {
    let net = base.replace_head(num_classes, cfg.finetune.weight_init(), cfg.seed("finetune-head"))?;
    let policy = cfg.finetune.transfer_policy().for_scenario(scenario, net.spec());
    train_classifier(net, &policy, &pair(inputs, labels)?, &cfg.finetune, Augment::MirrorPofSm, cfg.seed("finetune"))
}

pub fn evaluate_network(
    net: &Network,
    inputs: &[Tensor],
    labels: &[usize],
    classes: &[String],
    groups: &[String],
) -> Result<EvalReport> {
    if net.spec().num_classes != classes.len() {
        return Err(Error::data(format!(
            "network predicts {} classes, vocabulary has {}",
            net.spec().num_classes,
            classes.len()
        )));
    }
    evaluate_scores(&predict_scores(net, inputs)?, labels, classes, groups)
}
