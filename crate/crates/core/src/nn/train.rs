use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::layer::NetworkSpec;
use super::network::{to_storage, ForwardTrace, Gradients, Network};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Learning-rate schedule plus per-layer multipliers. A multiplier of 0
/// freezes the layer; the classifier head always uses `head_multiplier`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FineTunePolicy {
    /// Multipliers keyed by layer name; parametric layers not listed use 1.
    pub multipliers: BTreeMap<String, f64>,
    pub base_lr: f64,
    pub lr_step_iters: u64,
    pub lr_gamma: f64,
    pub head_multiplier: f64,
}

impl Default for FineTunePolicy {
    fn default() -> Self {
        FineTunePolicy {
            multipliers: BTreeMap::new(),
            base_lr: 0.001,
            lr_step_iters: 70_000,
            lr_gamma: 0.1,
            head_multiplier: 10.0,
        }
    }
}

/// Transfer scenarios for a network whose head has been replaced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Every layer trains at the base rate, the head at the head rate.
    AllLayers,
    /// C1-C3 frozen, C4-FC7 at the base rate, head at the head rate.
    Top5Layers,
    /// Fixed feature extractor: only the head trains.
    HeadOnly,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::AllLayers, Scenario::Top5Layers, Scenario::HeadOnly];

    pub fn title(&self) -> &'static str {
        match self {
            Scenario::AllLayers => "Fine-tune all layers",
            Scenario::Top5Layers => "Fine-tune top 5 layers",
            Scenario::HeadOnly => "Fixed feature extractor",
        }
    }

    fn key(&self) -> &'static str {
        match self {
            Scenario::AllLayers => "all-layers",
            Scenario::Top5Layers => "top5-layers",
            Scenario::HeadOnly => "head-only",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "all-layers" | "all" => Ok(Scenario::AllLayers),
            "top5-layers" | "top5" => Ok(Scenario::Top5Layers),
            "head-only" | "head" => Ok(Scenario::HeadOnly),
            other => Err(Error::config(format!(
                "unknown scenario `{other}` (expected all-layers, top5-layers or head-only)"
            ))),
        }
    }
}

impl FineTunePolicy {
    /// Every layer, head included, at multiplier 1.
    pub fn uniform(base_lr: f64, lr_step_iters: u64, lr_gamma: f64) -> Self {
        FineTunePolicy { multipliers: BTreeMap::new(), base_lr, lr_step_iters, lr_gamma, head_multiplier: 1.0 }
    }

    /// Multipliers for `scenario` on `spec`, keeping this policy's schedule.
    pub fn for_scenario(&self, scenario: Scenario, spec: &NetworkSpec) -> Self {
        let head = spec.head_index();
        let names: Vec<&str> = spec
            .param_layers()
            .into_iter()
            .filter(|&i| Some(i) != head)
            .map(|i| spec.layers[i].name.as_str())
            .collect();
        let frozen: Vec<&str> = match scenario {
            Scenario::AllLayers => vec![],
            Scenario::Top5Layers => names.iter().copied().filter(|n| matches!(*n, "C1" | "C2" | "C3")).collect(),
            Scenario::HeadOnly => names.clone(),
        };
        let multipliers = names
            .iter()
            .map(|&n| (n.to_string(), if frozen.contains(&n) { 0.0 } else { 1.0 }))
            .collect();
        FineTunePolicy { multipliers, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr.is_finite() && self.base_lr >= 0.0) {
            return Err(Error::config(format!("base_lr must be finite and >= 0, got {}", self.base_lr)));
        }
        if self.lr_step_iters == 0 {
            return Err(Error::config("lr_step_iters must be >= 1"));
        }
        if !(self.lr_gamma.is_finite() && self.lr_gamma >= 0.0) {
            return Err(Error::config(format!("lr_gamma must be finite and >= 0, got {}", self.lr_gamma)));
        }
        let named = self.multipliers.iter().map(|(n, &m)| (n.as_str(), m));
        for (name, m) in named.chain(std::iter::once(("<head>", self.head_multiplier))) {
            if !(m.is_finite() && m >= 0.0) {
                return Err(Error::config(format!("learning-rate multiplier for `{name}` must be >= 0, got {m}")));
            }
        }
        Ok(())
    }

    /// Step-decayed base rate: `base_lr * gamma^floor(iter / step)`.
    pub fn lr_at(&self, iteration: u64) -> f64 {
        let steps = (iteration / self.lr_step_iters.max(1)) as i32;
        self.base_lr * self.lr_gamma.powi(steps)
    }

    pub fn multiplier(&self, spec: &NetworkSpec, layer: usize) -> f64 {
        if spec.head_index() == Some(layer) {
            self.head_multiplier
        } else {
            self.multipliers.get(&spec.layers[layer].name).copied().unwrap_or(1.0)
        }
    }
}

/// A network under training. Single writer: every mutating call takes
/// `&mut self`.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub network: Network,
    pub iteration: u64,
    pub rng_seed: u64,
    trace: Option<ForwardTrace>,
}

impl TrainState {
    pub fn new(network: Network, rng_seed: u64) -> Self {
        TrainState { network, iteration: 0, rng_seed, trace: None }
    }

    /// Forward pass that keeps the activations for the next backward call.
    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let trace = self.network.forward_trace(input)?;
        let out = trace.output();
        self.trace = Some(trace);
        Ok(out)
    }

    pub fn cached_trace(&self) -> Option<&ForwardTrace> {
        self.trace.as_ref()
    }

    fn trace(&self) -> Result<&ForwardTrace> {
        self.trace.as_ref().ok_or_else(|| Error::State("backward called before forward".into()))
    }

    pub fn backward(&self, output_grad: &Tensor) -> Result<Gradients> {
        self.network.backward(self.trace()?, output_grad)
    }

    pub fn backward_logits(&self, logits_grad: &[f64]) -> Result<Gradients> {
        self.network.backward_logits(self.trace()?, logits_grad)
    }

    /// `param -= lr(iter) * multiplier(layer) * grad`, then advances the
    /// iteration counter. Layers with multiplier 0 are not touched.
    pub fn sgd_step(&mut self, grads: &Gradients, policy: &FineTunePolicy) -> Result<()> {
        policy.validate()?;
        let spec = self.network.spec().clone();
        if grads.layers.len() != self.network.params().len() {
            return Err(Error::shape("gradients", "gradient layer count differs from the network"));
        }
        for (i, (p, g)) in self.network.params().iter().zip(&grads.layers).enumerate() {
            let same = match (p, g) {
                (Some(p), Some(g)) => p.weights.len() == g.weights.len() && p.bias.len() == g.bias.len(),
                (None, None) => true,
                _ => false,
            };
            if !same {
                return Err(Error::shape(spec.layers[i].name.clone(), "gradient shape differs from parameter shape"));
            }
        }
        let lr = policy.lr_at(self.iteration);
        for (i, (p, g)) in self.network.params_mut().iter_mut().zip(&grads.layers).enumerate() {
            let (Some(p), Some(g)) = (p, g) else { continue };
            let rate = lr * policy.multiplier(&spec, i);
            if rate == 0.0 {
                continue;
            }
            for (w, &d) in p.iter_mut().zip(g.iter()) {
                *w = to_storage(*w - rate * d);
            }
        }
        self.iteration += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layer::{LayerKind, LayerSpec};
    use crate::nn::network::WeightInit;

    fn scalar_net(w: f64) -> Network {
        let spec = NetworkSpec {
            input_dims: [1, 1, 1],
            layers: vec![
                LayerSpec::new("fc", LayerKind::Fc { neurons: 1 }),
                LayerSpec::new("prob", LayerKind::Softmax),
            ],
            num_classes: 1,
        };
        let mut net = Network::zeros(spec).unwrap();
        net.params_mut()[0].as_mut().unwrap().weights[0] = w;
        net
    }

    #[test]
    fn single_scalar_sgd_step() {
        let mut state = TrainState::new(scalar_net(1.0), 0);
        let mut grads = Gradients::zeros_like(&state.network);
        grads.layers[0].as_mut().unwrap().weights[0] = 2.0;
        let policy = FineTunePolicy { base_lr: 0.1, head_multiplier: 1.0, ..Default::default() };
        state.sgd_step(&grads, &policy).unwrap();
        assert_eq!(state.network.params()[0].as_ref().unwrap().weights[0], 0.8f32 as f64);
        assert_eq!(state.iteration, 1);
    }

    #[test]
    fn step_schedule() {
        let p = FineTunePolicy::default();
        assert_eq!(p.lr_at(0), 0.001);
        assert_eq!(p.lr_at(69_999), 0.001);
        assert!((p.lr_at(70_000) - 0.0001).abs() < 1e-18);
        assert!((p.lr_at(140_000) - 0.00001).abs() < 1e-18);
    }

    #[test]
    fn negative_multiplier_is_config_error() {
        let mut state = TrainState::new(scalar_net(1.0), 0);
        let grads = Gradients::zeros_like(&state.network);
        let policy = FineTunePolicy { head_multiplier: -1.0, ..Default::default() };
        assert!(matches!(state.sgd_step(&grads, &policy), Err(Error::Config(_))));
    }

    #[test]
    fn backward_before_forward_is_state_error() {
        let state = TrainState::new(scalar_net(1.0), 0);
        assert!(matches!(state.backward(&Tensor::zeros(&[1])), Err(Error::State(_))));
    }

    #[test]
    fn scenario_multipliers() {
        let spec = NetworkSpec::desk_classifier(3);
        let base = FineTunePolicy::default();
        let top5 = base.for_scenario(Scenario::Top5Layers, &spec);
        let m = |p: &FineTunePolicy, n: &str| p.multiplier(&spec, spec.index_of(n).unwrap());
        for n in ["C1", "C2", "C3"] {
            assert_eq!(m(&top5, n), 0.0);
        }
        for n in ["C4", "C5", "FC6", "FC7"] {
            assert_eq!(m(&top5, n), 1.0);
        }
        assert_eq!(m(&top5, "FC8"), 10.0);
        let head = base.for_scenario(Scenario::HeadOnly, &spec);
        assert_eq!(m(&head, "FC7"), 0.0);
        assert_eq!(m(&head, "FC8"), 10.0);
        let all = base.for_scenario(Scenario::AllLayers, &spec);
        assert_eq!(m(&all, "C1"), 1.0);
        assert_eq!("top5".parse::<Scenario>().unwrap(), Scenario::Top5Layers);
        assert!("bogus".parse::<Scenario>().is_err());
        assert_eq!(Scenario::Top5Layers.title(), "Fine-tune top 5 layers");
    }

    #[test]
    fn frozen_layers_stay_bit_identical() {
        let net = Network::new(NetworkSpec::desk_classifier(3), WeightInit::He, 5).unwrap();
        let before = net.clone();
        let mut state = TrainState::new(net, 0);
        let policy = FineTunePolicy { base_lr: 0.05, ..Default::default() }
            .for_scenario(Scenario::Top5Layers, &before.spec().clone());
        let mut grads = Gradients::zeros_like(&state.network);
        for p in grads.layers.iter_mut().flatten() {
            for v in p.iter_mut() {
                *v = 0.37;
            }
        }
        for _ in 0..10 {
            state.sgd_step(&grads, &policy).unwrap();
        }
        for n in ["C1", "C2", "C3"] {
            assert_eq!(state.network.layer_params(n), before.layer_params(n));
        }
        assert_ne!(state.network.layer_params("C4"), before.layer_params("C4"));
    }
}
