//! Mini-batch SGD loops for the flow network and the classifier.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{ClusterLabelMap, SpatialProbMap};
use crate::loss::{spatial_loss_grad_logits, spatial_loss_v1, LossConfig, LossVariant, LOG_CLAMP};
use crate::nn::{FineTunePolicy, Gradients, Network, OutputMode, Tensor, TrainState, WeightInit};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    #[default]
    Gaussian,
    He,
}

/// Schedule and sampling shared by every training loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch: usize,
    pub base_lr: f64,
    pub lr_step_iters: u64,
    pub lr_gamma: f64,
    /// Rate multiplier of a freshly replaced classifier head.
    pub head_multiplier: f64,
    pub init: InitKind,
    /// Std of the Gaussian initializer.
    pub init_std: f64,
    /// Random left-right mirroring of training inputs.
    pub mirror: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 1000,
            batch: 1,
            base_lr: 0.001,
            lr_step_iters: 70_000,
            lr_gamma: 0.1,
            head_multiplier: 10.0,
            init: InitKind::Gaussian,
            init_std: 0.01,
            mirror: true,
        }
    }
}

impl TrainConfig {
    pub fn weight_init(&self) -> WeightInit {
        match self.init {
            InitKind::Gaussian => WeightInit::Gaussian { std: self.init_std },
            InitKind::He => WeightInit::He,
        }
    }

    /// Every layer at multiplier 1, head included.
    pub fn uniform_policy(&self) -> FineTunePolicy {
        FineTunePolicy::uniform(self.base_lr, self.lr_step_iters, self.lr_gamma)
    }

    /// Base schedule with `head_multiplier` on the head and no per-layer
    /// overrides yet.
    pub fn transfer_policy(&self) -> FineTunePolicy {
        FineTunePolicy { head_multiplier: self.head_multiplier, ..self.uniform_policy() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::config("batch must be >= 1"));
        }
        if !(self.init_std.is_finite() && self.init_std >= 0.0) {
            return Err(Error::config("init_std must be >= 0"));
        }
        self.transfer_policy().validate()
    }
}

/// One logged iteration: mean loss over the batch. `v1_loss` is the plain
/// spatial softmax loss of the same batch (flow training only).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iteration: u64,
    pub loss: f64,
    pub v1_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    /// Mean loss over the first and last `frac` of the iterations.
    pub fn head_tail_means(&self, frac: f64) -> Option<(f64, f64)> {
        let n = self.entries.len();
        if n == 0 {
            return None;
        }
        let m = ((n as f64 * frac).ceil() as usize).clamp(1, n);
        let mean = |s: &[LogEntry]| s.iter().map(|e| e.loss).sum::<f64>() / s.len() as f64;
        Some((mean(&self.entries[..m]), mean(&self.entries[n - m..])))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,loss,v1_loss\n");
        for e in &self.entries {
            let v1 = e.v1_loss.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", e.iteration, e.loss, v1));
        }
        out
    }
}

/// Cycles through shuffled epochs of sample indices.
struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut s = BatchSampler { order: (0..n).collect(), pos: n, rng: ChaCha8Rng::seed_from_u64(seed) };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    fn next_batch(&mut self, batch: usize) -> Vec<(usize, bool)> {
        (0..batch)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.reshuffle();
                }
                self.pos += 1;
                (self.order[self.pos - 1], rand::Rng::random_bool(&mut self.rng, 0.5))
            })
            .collect()
    }
}

/// Averages per-sample `(loss, v1, grads)` in batch order so the result is
/// independent of scheduling.
fn reduce(net: &Network, parts: Vec<(f64, Option<f64>, Gradients)>) -> (f64, Option<f64>, Gradients) {
    let n = parts.len() as f64;
    let mut total = Gradients::zeros_like(net);
    let (mut loss, mut v1, mut has_v1) = (0.0, 0.0, false);
    for (l, v, g) in &parts {
        loss += l;
        if let Some(v) = v {
            v1 += v;
            has_v1 = true;
        }
        total.add_assign(g);
    }
    total.scale(1.0 / n);
    (loss / n, has_v1.then_some(v1 / n), total)
}

/// One flow-network training example.
#[derive(Clone, Debug)]
pub struct FlowSample {
    pub input: Tensor,
    pub labels: ClusterLabelMap,
}

/// Trains a spatial-softmax network on cluster label maps.
pub fn train_flow_network(
    net: Network,
    samples: &[FlowSample],
    variant: LossVariant,
    loss_cfg: &LossConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Network, TrainLog)> {
    cfg.validate()?;
    loss_cfg.validate()?;
    if net.mode() != OutputMode::Spatial {
        return Err(Error::config("flow network must end in a spatial softmax"));
    }
    let [r, c, k] = net.output_shape();
    if let Some(s) = samples.iter().find(|s| s.labels.clusters() != k) {
        return Err(Error::config(format!(
            "codebook has {} clusters but the flow network emits {k}",
            s.labels.clusters()
        )));
    }
    if let Some(s) = samples.iter().find(|s| (s.labels.rows(), s.labels.cols()) != (r, c)) {
        return Err(Error::data(format!(
            "label map is {}x{}, flow network output is {r}x{c}",
            s.labels.rows(),
            s.labels.cols()
        )));
    }
    if samples.is_empty() && cfg.iterations > 0 {
        return Err(Error::data("no flow training samples"));
    }
    let policy = cfg.uniform_policy();
    let mut state = TrainState::new(net, seed);
    let mut sampler = BatchSampler::new(samples.len(), seed);
    let mut log = TrainLog::default();
    for it in 0..cfg.iterations {
        let picks = sampler.next_batch(cfg.batch);
        let net = &state.network;
        let parts = picks
            .par_iter()
            .map(|&(i, _)| {
                let s = &samples[i];
                let trace = net.forward_trace(&s.input)?;
                let (loss, grad) = spatial_loss_grad_logits(trace.logits(), &s.labels, variant, loss_cfg)?;
                let v1 = match variant {
                    LossVariant::V1 => loss,
                    LossVariant::V2 => spatial_loss_v1(&SpatialProbMap::from_tensor(&trace.output())?, &s.labels)?.value,
                };
                let g = net.backward_logits(&trace, &grad)?;
                Ok((loss, Some(v1), g))
            })
            .collect::<Result<Vec<_>>>()?;
        let (loss, v1, grads) = reduce(net, parts);
        log.entries.push(LogEntry { iteration: it, loss, v1_loss: v1 });
        state.sgd_step(&grads, &policy)?;
    }
    Ok((state.network, log))
}

/// Left-right mirroring applied to training inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Augment {
    None,
    /// Plain flip of every channel.
    MirrorRaw,
    /// Flip plus sign change of channel 0 (horizontal flow). Inputs are
    /// centered, so this is the `v -> 1 - v` reflection of the raw channel.
    MirrorPofSm,
}

/// Flips an `[rows, cols, ch]` tensor left-right, optionally negating
/// channel 0.
pub fn mirror_tensor(t: &Tensor, negate_first_channel: bool) -> Tensor {
    let [_, cols, ch] = [t.dims()[0], t.dims()[1], t.dims()[2]];
    let mut out = Vec::with_capacity(t.len());
    for row in t.data().chunks_exact(cols * ch) {
        for px in row.chunks_exact(ch).rev() {
            out.extend(px.iter().enumerate().map(|(i, &v)| if i == 0 && negate_first_channel { -v } else { v }));
        }
    }
    Tensor::new(t.dims().to_vec(), out).expect("same dims")
}

/// Cross-entropy training of a classifier. `policy` sets per-layer rates.
pub fn train_classifier(
    net: Network,
    policy: &FineTunePolicy,
    samples: &[(Tensor, usize)],
    cfg: &TrainConfig,
    augment: Augment,
    seed: u64,
) -> Result<(Network, TrainLog)> {
    cfg.validate()?;
    policy.validate()?;
    if net.mode() != OutputMode::Classifier {
        return Err(Error::config("classifier must end in a softmax"));
    }
    let classes = net.spec().num_classes;
    if let Some((_, y)) = samples.iter().find(|(_, y)| *y >= classes) {
        return Err(Error::data(format!("label {y} out of range for {classes} classes")));
    }
    if samples.is_empty() && cfg.iterations > 0 {
        return Err(Error::data("no classifier training samples"));
    }
    let mut state = TrainState::new(net, seed);
    let mut sampler = BatchSampler::new(samples.len(), seed);
    let mut log = TrainLog::default();
    for it in 0..cfg.iterations {
        let picks = sampler.next_batch(cfg.batch);
        let net = &state.network;
        let parts = picks
            .par_iter()
            .map(|&(i, flip)| {
                let (x, y) = &samples[i];
                let mirrored;
                let x = match (augment, flip && cfg.mirror) {
                    (Augment::MirrorRaw, true) => {
                        mirrored = mirror_tensor(x, false);
                        &mirrored
                    }
                    (Augment::MirrorPofSm, true) => {
                        mirrored = mirror_tensor(x, true);
                        &mirrored
                    }
                    _ => x,
                };
                let trace = net.forward_trace(x)?;
                let probs = trace.output().into_data();
                let loss = -probs[*y].max(LOG_CLAMP).ln();
                let mut grad = probs;
                grad[*y] -= 1.0;
                Ok((loss, None, net.backward_logits(&trace, &grad)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let (loss, _, grads) = reduce(net, parts);
        log.entries.push(LogEntry { iteration: it, loss, v1_loss: None });
        state.sgd_step(&grads, policy)?;
    }
    Ok((state.network, log))
}

/// Class probabilities for every input, in input order.
pub fn predict_scores(net: &Network, inputs: &[Tensor]) -> Result<Vec<Vec<f64>>> {
    inputs.par_iter().map(|x| Ok(net.forward(x)?.into_data())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerKind, LayerSpec, NetworkSpec};

    fn tiny_classifier() -> Network {
        let spec = NetworkSpec {
            input_dims: [2, 2, 1],
            layers: vec![
                LayerSpec::new("FC1", LayerKind::Fc { neurons: 2 }),
                LayerSpec::new("prob", LayerKind::Softmax),
            ],
            num_classes: 2,
        };
        Network::new(spec, WeightInit::Gaussian { std: 0.1 }, 3).unwrap()
    }

    #[test]
    fn classifier_loss_decreases() {
        let samples: Vec<(Tensor, usize)> = (0..8)
            .map(|i| {
                let v = if i % 2 == 0 { 1.0 } else { -1.0 };
                (Tensor::new(vec![2, 2, 1], vec![v, 0.0, 0.0, -v]).unwrap(), i % 2)
            })
            .collect();
        let cfg = TrainConfig { iterations: 200, batch: 4, base_lr: 0.5, mirror: false, ..Default::default() };
        let (_, log) = train_classifier(tiny_classifier(), &cfg.uniform_policy(), &samples, &cfg, Augment::None, 1).unwrap();
        let (first, last) = log.head_tail_means(0.1).unwrap();
        assert!(last < first * 0.5, "{first} -> {last}");
    }

    #[test]
    fn zero_iterations_keeps_weights() {
        let net = tiny_classifier();
        let cfg = TrainConfig { iterations: 0, ..Default::default() };
        let (out, log) = train_classifier(net.clone(), &cfg.uniform_policy(), &[], &cfg, Augment::None, 0).unwrap();
        assert_eq!(out, net);
        assert!(log.entries.is_empty());
    }

    #[test]
    fn out_of_range_label() {
        let cfg = TrainConfig::default();
        let s = vec![(Tensor::zeros(&[2, 2, 1]), 7)];
        assert!(matches!(
            train_classifier(tiny_classifier(), &cfg.uniform_policy(), &s, &cfg, Augment::None, 0),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn mirror_tensor_negates_channel_zero() {
        let t = Tensor::new(vec![1, 2, 2], vec![0.25, 0.1, -0.5, 0.2]).unwrap();
        assert_eq!(mirror_tensor(&t, true).data(), &[0.5, 0.2, -0.25, 0.1]);
        assert_eq!(mirror_tensor(&mirror_tensor(&t, true), true), t);
    }
}
