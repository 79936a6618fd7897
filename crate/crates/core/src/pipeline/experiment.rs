//! The complete source-to-target transfer experiment on synthetic scenes,
//! run in memory.

use std::time::{Duration, Instant};

use super::config::Config;
use super::eval::EvalReport;
use super::manifest::Split;
use super::stages::{
    evaluate_network, finetune, fit_codebook, mapping_config, moving_pixel_accuracy, pofsm_inputs, pretrain, raw_inputs,
    train_flow, train_scratch,
};
use super::synth::{synth_samples, SyntheticSample, SyntheticSpec};
use super::train::{Augment, TrainLog};
use crate::domain::map_batch;
use crate::error::Result;
use crate::flow::{FlowCodebook, FlowField};
use crate::image::Image;
use crate::nn::Network;

/// One synthetic task split into train and test sets.
pub struct TaskData {
    pub classes: Vec<String>,
    pub groups: Vec<String>,
    pub train: Vec<SyntheticSample>,
    pub test: Vec<SyntheticSample>,
}

impl TaskData {
    pub fn generate(spec: &SyntheticSpec) -> Result<Self> {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (s, split) in synth_samples(spec)? {
            match split {
                Split::Train => train.push(s),
                Split::Test => test.push(s),
            }
        }
        Ok(TaskData {
            classes: spec.classes.iter().map(|m| m.to_string()).collect(),
            groups: spec.classes.iter().map(|m| m.group().to_string()).collect(),
            train,
            test,
        })
    }

    fn label(&self, s: &SyntheticSample) -> usize {
        self.classes.iter().position(|c| *c == s.motion.to_string()).expect("class in vocabulary")
    }

    pub fn labels(&self, split: Split) -> Vec<usize> {
        self.samples(split).iter().map(|s| self.label(s)).collect()
    }

    pub fn samples(&self, split: Split) -> &[SyntheticSample] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn images(&self, split: Split) -> Vec<Image> {
        self.samples(split).iter().map(|s| s.image.clone()).collect()
    }

    pub fn flows(&self, split: Split) -> Vec<FlowField> {
        self.samples(split).iter().map(|s| s.flow.clone()).collect()
    }
}

/// Which arms to run besides the fine-tuned model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Baselines {
    pub scratch_pofsm: bool,
    pub scratch_rgb: bool,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub codebook: FlowCodebook,
    pub flow_net: Network,
    pub flow_log: TrainLog,
    /// Moving-pixel cluster accuracy on the held-out source scenes.
    pub flow_accuracy: f64,
    pub pretrain_log: TrainLog,
    pub pretrain_report: EvalReport,
    pub finetune_log: TrainLog,
    pub finetune: EvalReport,
    pub scratch_pofsm: Option<EvalReport>,
    pub scratch_rgb: Option<EvalReport>,
    pub stage_times: Vec<(&'static str, Duration)>,
}

/// synth, fit codebook, train flow, map, pretrain, fine-tune, evaluate.
pub fn run_experiment(cfg: &Config, baselines: Baselines) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let mut times = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &'static str, times: &mut Vec<(&'static str, Duration)>| {
        times.push((name, clock.elapsed()));
        clock = Instant::now();
    };

    let source = TaskData::generate(&cfg.source)?;
    let target = TaskData::generate(&cfg.target)?;
    lap("synth", &mut times);

    let mut train_images = source.images(Split::Train);
    train_images.extend(target.images(Split::Train));
    let mut train_flows = source.flows(Split::Train);
    train_flows.extend(target.flows(Split::Train));
    let codebook = fit_codebook(&train_flows, &cfg.codebook, cfg.seed("codebook"))?;
    lap("fit-codebook", &mut times);

    let (flow_net, flow_log) = train_flow(&train_images, &train_flows, &codebook, cfg)?;
    let flow_accuracy =
        moving_pixel_accuracy(&flow_net, &codebook, &source.images(Split::Test), &source.flows(Split::Test))?;
    lap("train-flow", &mut times);

    let mapping = mapping_config(flow_net.clone(), codebook.clone(), cfg)?;
    let map = |task: &TaskData, split| map_batch(&task.images(split), &mapping);
    let (src_train, src_test) = (map(&source, Split::Train)?, map(&source, Split::Test)?);
    let (tgt_train, tgt_test) = (map(&target, Split::Train)?, map(&target, Split::Test)?);
    lap("map", &mut times);

    let src_spec = cfg.classifier.spec(source.classes.len());
    let (base, pretrain_log) = pretrain(&pofsm_inputs(&src_train, &src_spec), &source.labels(Split::Train), source.classes.len(), cfg)?;
    let pretrain_report = evaluate_network(
        &base,
        &pofsm_inputs(&src_test, &src_spec),
        &source.labels(Split::Test),
        &source.classes,
        &source.groups,
    )?;
    lap("pretrain", &mut times);

    let n = target.classes.len();
    let tgt_spec = cfg.classifier.spec(n);
    let (train_x, test_x) = (pofsm_inputs(&tgt_train, &tgt_spec), pofsm_inputs(&tgt_test, &tgt_spec));
    let (train_y, test_y) = (target.labels(Split::Train), target.labels(Split::Test));
    let (tuned, finetune_log) = finetune(&base, &train_x, &train_y, n, cfg.classifier.scenario, cfg)?;
    lap("finetune", &mut times);
    let report = evaluate_network(&tuned, &test_x, &test_y, &target.classes, &target.groups)?;
    lap("eval", &mut times);

    let scratch_pofsm = if baselines.scratch_pofsm {
        let (net, _) = train_scratch(tgt_spec.clone(), &train_x, &train_y, &cfg.finetune, Augment::MirrorPofSm, cfg.seed("scratch-pofsm"))?;
        Some(evaluate_network(&net, &test_x, &test_y, &target.classes, &target.groups)?)
    } else {
        None
    };
    let scratch_rgb = if baselines.scratch_rgb {
        let rx = raw_inputs(&target.images(Split::Train), &tgt_spec);
        let rt = raw_inputs(&target.images(Split::Test), &tgt_spec);
        let (net, _) = train_scratch(tgt_spec, &rx, &train_y, &cfg.finetune, Augment::MirrorRaw, cfg.seed("scratch-rgb"))?;
        Some(evaluate_network(&net, &rt, &test_y, &target.classes, &target.groups)?)
    } else {
        None
    };
    lap("baselines", &mut times);

    Ok(ExperimentOutcome {
        codebook,
        flow_net,
        flow_log,
        flow_accuracy,
        pretrain_log,
        pretrain_report,
        finetune_log,
        finetune: report,
        scratch_pofsm,
        scratch_rgb,
        stage_times: times,
    })
}
