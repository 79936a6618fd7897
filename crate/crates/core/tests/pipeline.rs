//! Stage-level behavior of the training pipeline on small synthetic tasks.

use std::fs;
use std::path::Path;

use pofsm::flow::encode_flow;
use pofsm::loss::{LossConfig, LossVariant};
use pofsm::nn::{FineTunePolicy, Network, NetworkSpec, Scenario, Tensor, WeightInit};
use pofsm::pipeline::stages::{fit_codebook, flow_samples};
use pofsm::pipeline::train::{train_classifier, train_flow_network, Augment, TrainConfig};
use pofsm::pipeline::*;

fn tiny_config(seed: u64) -> Config {
    let mut cfg = Config::desk().with_seed(seed);
    cfg.source.samples_per_class = 6;
    cfg.source.test_per_class = 2;
    cfg.target.samples_per_class = 6;
    cfg.target.test_per_class = 2;
    cfg.flow_net.width = 4;
    cfg.flow_train.iterations = 5;
    cfg.pretrain.iterations = 5;
    cfg.finetune.iterations = 5;
    cfg
}

fn files_under(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_output_is_byte_identical_for_a_seed() {
    let spec = tiny_config(3).target;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = synth_generate(&spec, a.path()).unwrap();
    let mb = synth_generate(&spec, b.path()).unwrap();
    assert_eq!(ma.rows(), mb.rows());
    assert_eq!(ma.rows().len(), 18);
    let fa = files_under(a.path());
    assert_eq!(fa, files_under(b.path()));
    // image + flow per sample, plus the manifest
    assert_eq!(fa.len(), 2 * 18 + 1);

    let loaded = DatasetManifest::load(a.path().join("manifest.csv")).unwrap();
    assert_eq!(loaded.rows(), ma.rows());
    assert_eq!(loaded.split(Split::Test).count(), 6);
}

#[test]
fn different_seeds_give_different_scenes() {
    let a = TaskData::generate(&tiny_config(1).target).unwrap();
    let b = TaskData::generate(&tiny_config(2).target).unwrap();
    assert_ne!(a.images(Split::Train), b.images(Split::Train));
    assert_eq!(a.labels(Split::Train), b.labels(Split::Train));
}

fn flow_setup(clusters: usize) -> (Network, Vec<pofsm::pipeline::train::FlowSample>) {
    let mut cfg = tiny_config(0);
    cfg.codebook.clusters = clusters;
    let data = TaskData::generate(&cfg.source).unwrap();
    let flows = data.flows(Split::Train);
    let cb = fit_codebook(&flows, &cfg.codebook, 1).unwrap();
    let net = Network::new(NetworkSpec::desk_flow(32, 32, clusters, 4), WeightInit::He, 5).unwrap();
    let samples = flow_samples(&data.images(Split::Train), &flows, &cb, &net).unwrap();
    assert_eq!(samples[0].labels, encode_flow(&flows[0], &cb));
    (net, samples)
}

#[test]
fn logged_v2_loss_is_v1_over_k_when_clusters_fit_in_k() {
    let (net, samples) = flow_setup(3);
    let cfg = TrainConfig { iterations: 6, batch: 2, base_lr: 0.001, ..TrainConfig::default() };
    let (_, log) = train_flow_network(net, &samples, LossVariant::V2, &LossConfig::top_k(10), &cfg, 9).unwrap();
    assert_eq!(log.entries.len(), 6);
    for e in &log.entries {
        let v1 = e.v1_loss.unwrap();
        assert!((e.loss - v1 / 10.0).abs() <= 1e-9 * v1.max(1.0), "{} vs {}", e.loss, v1);
    }
}

#[test]
fn zero_iterations_keep_the_initialization() {
    let (net, samples) = flow_setup(3);
    let cfg = TrainConfig { iterations: 0, ..TrainConfig::default() };
    let (trained, log) = train_flow_network(net.clone(), &samples, LossVariant::V1, &LossConfig::default(), &cfg, 1).unwrap();
    assert!(log.entries.is_empty());
    assert_eq!(trained.params(), net.params());
}

#[test]
fn flow_loss_decreases() {
    let (net, samples) = flow_setup(3);
    let cfg = TrainConfig { iterations: 60, batch: 4, base_lr: 0.001, ..TrainConfig::default() };
    let (_, log) = train_flow_network(net, &samples, LossVariant::V1, &LossConfig::default(), &cfg, 2).unwrap();
    let (head, tail) = log.head_tail_means(0.2).unwrap();
    assert!(tail < head, "loss went from {head} to {tail}");
}

#[test]
fn cluster_mismatch_is_a_config_error() {
    let (_, samples) = flow_setup(3);
    let net = Network::new(NetworkSpec::desk_flow(32, 32, 4, 4), WeightInit::He, 5).unwrap();
    let cfg = TrainConfig { iterations: 1, ..TrainConfig::default() };
    let err = train_flow_network(net, &samples, LossVariant::V1, &LossConfig::default(), &cfg, 2).unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

fn classifier_samples(n: usize, classes: usize) -> Vec<(Tensor, usize)> {
    (0..n)
        .map(|i| {
            let y = i % classes;
            let data = (0..32 * 32 * 3).map(|j| ((j * (y + 1) + i) % 7) as f64 / 7.0 - 0.5).collect();
            (Tensor::new(vec![32, 32, 3], data).unwrap(), y)
        })
        .collect()
}

#[test]
fn head_only_training_changes_only_the_head() {
    let base = Network::new(NetworkSpec::desk_classifier(5), WeightInit::He, 1).unwrap();
    let net = base.replace_head(3, WeightInit::He, 2).unwrap();
    let policy = FineTunePolicy { base_lr: 0.01, ..FineTunePolicy::default() }.for_scenario(Scenario::HeadOnly, net.spec());
    let cfg = TrainConfig { iterations: 20, batch: 2, ..TrainConfig::default() };
    let (tuned, _) = train_classifier(net.clone(), &policy, &classifier_samples(12, 3), &cfg, Augment::None, 3).unwrap();
    let head = net.spec().head_index().unwrap();
    for (i, (a, b)) in net.params().iter().zip(tuned.params()).enumerate() {
        if i == head {
            assert_ne!(a, b);
        } else {
            assert_eq!(a, b, "layer {} moved", net.spec().layers[i].name);
        }
    }
}

#[test]
fn all_layers_training_moves_every_layer() {
    let net = Network::new(NetworkSpec::desk_classifier(3), WeightInit::He, 1).unwrap();
    let policy = FineTunePolicy { base_lr: 0.01, ..FineTunePolicy::default() }.for_scenario(Scenario::AllLayers, net.spec());
    let cfg = TrainConfig { iterations: 10, batch: 2, ..TrainConfig::default() };
    let (tuned, _) = train_classifier(net.clone(), &policy, &classifier_samples(12, 3), &cfg, Augment::None, 3).unwrap();
    for i in net.spec().param_layers() {
        assert_ne!(net.params()[i], tuned.params()[i], "layer {} frozen", net.spec().layers[i].name);
    }
}

#[test]
fn experiment_is_deterministic() {
    let cfg = tiny_config(4);
    let both = Baselines { scratch_pofsm: true, scratch_rgb: true };
    let a = run_experiment(&cfg, both).unwrap();
    let b = run_experiment(&cfg, both).unwrap();
    assert_eq!(a.codebook, b.codebook);
    assert_eq!(a.flow_net.params(), b.flow_net.params());
    assert_eq!(a.flow_log, b.flow_log);
    assert_eq!(a.finetune_log, b.finetune_log);
    assert_eq!(a.finetune, b.finetune);
    assert_eq!(a.scratch_pofsm, b.scratch_pofsm);
    assert_eq!(a.scratch_rgb, b.scratch_rgb);
    assert_eq!(a.finetune.samples, 6);
    assert_eq!(a.pretrain_log.entries.len(), 5);
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = Config::desk().with_seed(17);
    let back = Config::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(Config::from_toml("[general]\nseed = 17\n").unwrap().source.seed, Config::full().with_seed(17).source.seed);
}
