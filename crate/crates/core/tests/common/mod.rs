//! Shared oracles and gradient-check helpers for the integration tests.
#![allow(dead_code)]

use pofsm::flow::{ClusterLabelMap, FlowCodebook, SpatialProbMap};
use pofsm::loss::{spatial_loss_grad_logits, LossConfig, LossVariant};
use pofsm::nn::{LayerKind, LayerSpec, Network, NetworkSpec, Tensor, WeightInit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Minimum SSE over every split of `pts` into two non-empty groups.
pub fn brute_force_two_means(pts: &[[f64; 2]]) -> f64 {
    let n = pts.len();
    let mut best = f64::INFINITY;
    for mask in 1..(1u32 << (n - 1)) {
        let mut sse = 0.0;
        for side in [true, false] {
            let group: Vec<[f64; 2]> =
                (0..n).filter(|&i| ((mask >> i) & 1 == 1) == side).map(|i| pts[i]).collect();
            let m = group.len() as f64;
            let cu = group.iter().map(|p| p[0]).sum::<f64>() / m;
            let cv = group.iter().map(|p| p[1]).sum::<f64>() / m;
            sse += group.iter().map(|p| (p[0] - cu).powi(2) + (p[1] - cv).powi(2)).sum::<f64>();
        }
        best = best.min(sse);
    }
    best
}

/// SSE of `pts` against their nearest codebook centroids.
pub fn codebook_sse(cb: &FlowCodebook, pts: &[[f64; 2]]) -> f64 {
    pts.iter()
        .map(|p| {
            let c = cb.centroids()[cb.nearest(*p)];
            (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)
        })
        .sum()
}

/// Exact Otsu by integer arithmetic: between-class variance of cut `t` is
/// `(n1 s0 - n0 s1)^2 / (n0 n1 n^2)`, where `s` sums bin indices. Ties go
/// to the lowest cut.
pub fn exhaustive_otsu(values: &[f64], bins: usize) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return lo;
    }
    let idx: Vec<u128> = values
        .iter()
        .map(|&v| (((v - lo) / (hi - lo) * bins as f64).floor() as usize).min(bins - 1) as u128)
        .collect();
    let mut best: Option<(usize, u128, u128)> = None;
    for cut in 1..bins as u128 {
        let (n0, s0) = idx.iter().filter(|&&b| b < cut).fold((0u128, 0u128), |a, &b| (a.0 + 1, a.1 + b));
        let (n1, s1) = idx.iter().filter(|&&b| b >= cut).fold((0u128, 0u128), |a, &b| (a.0 + 1, a.1 + b));
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let d = (n1 * s0).abs_diff(n0 * s1);
        let (num, den) = (d * d, n0 * n1);
        if best.is_none_or(|(_, bn, bd)| num * bd > bn * den) {
            best = Some((cut as usize, num, den));
        }
    }
    let cut = best.expect("two non-empty classes").0;
    lo + (hi - lo) * cut as f64 / bins as f64
}

/// AP from its definition: for each positive, the fraction of positives
/// among the items ranked at or above it.
pub fn brute_force_ap(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n = scores.len();
    let rank = |i: usize| (0..n).filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i)).count() + 1;
    let pos: Vec<usize> = (0..n).filter(|&i| positive[i]).collect();
    if pos.is_empty() {
        return None;
    }
    let total: f64 = pos
        .iter()
        .map(|&i| {
            let r = rank(i);
            let above = pos.iter().filter(|&&j| rank(j) <= r).count();
            above as f64 / r as f64
        })
        .sum();
    Some(total / pos.len() as f64)
}

pub fn prob_map(seed: u64, rows: usize, cols: usize, k: usize) -> (SpatialProbMap, ClusterLabelMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(rows * cols * k);
    for _ in 0..rows * cols {
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f64 = raw.iter().sum();
        data.extend(raw.iter().map(|v| v / s));
    }
    let labels = (0..rows * cols).map(|_| rng.random_range(0..k as u32)).collect();
    (SpatialProbMap::new(rows, cols, k, data).unwrap(), ClusterLabelMap::new(rows, cols, k, labels).unwrap())
}

pub const EPS: f64 = 1e-4;
pub const TOL: f64 = 1e-4;
/// Below this magnitude both gradients count as zero.
pub const FLOOR: f64 = 1e-6;
pub const INSTANCES: u64 = 20;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn scalar(net: &Network, x: &Tensor, r: &[f64]) -> f64 {
    net.forward(x).unwrap().data().iter().zip(r).map(|(a, b)| a * b).sum()
}

/// Checks d(sum r * output)/d(param) and d/d(input) for one instance and
/// returns the worst relative error.
pub fn check_network(spec: NetworkSpec, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Network::new(spec, WeightInit::Gaussian { std: 0.5 }, seed).unwrap();
    let [r, c, ch] = net.input_shape();
    let x = Tensor::new(vec![r, c, ch], random_vec(&mut rng, r * c * ch, 1.0)).unwrap();
    let out_len: usize = net.output_shape().iter().product();
    let weights = random_vec(&mut rng, out_len, 1.0);
    let trace = net.forward_trace(&x).unwrap();
    let og = Tensor::new(trace.output().dims().to_vec(), weights.clone()).unwrap();
    let grads = net.backward(&trace, &og).unwrap();
    let dx = net.input_gradient(&trace, &og).unwrap();

    let mut worst: f64 = 0.0;
    for (li, layer) in grads.layers.iter().enumerate() {
        let Some(g) = layer else { continue };
        let n_w = g.weights.len();
        for k in 0..n_w + g.bias.len() {
            let analytic = if k < n_w { g.weights[k] } else { g.bias[k - n_w] };
            let eval = |delta: f64| {
                let mut n = net.clone();
                let p = n.params_mut()[li].as_mut().unwrap();
                if k < n_w {
                    p.weights[k] += delta;
                } else {
                    p.bias[k - n_w] += delta;
                }
                scalar(&n, &x, &weights)
            };
            let numeric = (eval(EPS) - eval(-EPS)) / (2.0 * EPS);
            worst = worst.max(rel_err(analytic, numeric));
        }
    }
    for k in 0..x.len() {
        let shifted = |delta: f64| {
            let mut xs = x.clone();
            xs.data_mut()[k] += delta;
            scalar(&net, &xs, &weights)
        };
        let numeric = (shifted(EPS) - shifted(-EPS)) / (2.0 * EPS);
        worst = worst.max(rel_err(dx[k], numeric));
    }
    worst
}

pub fn classifier(input: [usize; 3], body: Vec<LayerKind>, classes: usize) -> NetworkSpec {
    let mut layers: Vec<LayerSpec> =
        body.into_iter().enumerate().map(|(i, k)| LayerSpec::new(format!("L{i}"), k)).collect();
    layers.push(LayerSpec::new("head", LayerKind::Fc { neurons: classes }));
    layers.push(LayerSpec::new("prob", LayerKind::Softmax));
    NetworkSpec { input_dims: input, layers, num_classes: classes }
}

/// Random logits whose per-pixel softmax has no two probabilities within
/// `gap` of each other, so the V2 ranking is stable under perturbation.
pub fn untied_logits(rng: &mut ChaCha8Rng, pixels: usize, k: usize, gap: f64) -> Vec<f64> {
    loop {
        let logits = random_vec(rng, pixels * k, 2.0);
        let ok = logits.chunks_exact(k).all(|px| {
            let mut s = px.to_vec();
            s.sort_by(f64::total_cmp);
            s.windows(2).all(|w| w[1] - w[0] > gap)
        });
        if ok {
            return logits;
        }
    }
}

pub fn check_loss(variant: LossVariant, cfg: &LossConfig, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, cols, k) = (3, 4, 5);
    let labels: Vec<u32> = (0..rows * cols).map(|_| rng.random_range(0..k as u32)).collect();
    let labels = ClusterLabelMap::new(rows, cols, k, labels).unwrap();
    let logits = untied_logits(&mut rng, rows * cols, k, 1e-2);
    let (_, grad) = spatial_loss_grad_logits(&logits, &labels, variant, cfg).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..logits.len() {
        let f = |d: f64| {
            let mut l = logits.clone();
            l[i] += d;
            spatial_loss_grad_logits(&l, &labels, variant, cfg).unwrap().0
        };
        let numeric = (f(EPS) - f(-EPS)) / (2.0 * EPS);
        worst = worst.max(rel_err(grad[i], numeric));
    }
    worst
}


/// One small network per layer type, named by the layer under test.
pub fn layer_cases() -> Vec<(&'static str, NetworkSpec)> {
    use pofsm::nn::LrnParams;
    let conv = |kernels, size, stride, padding| LayerKind::Conv { kernels, size, stride, padding };
    // Large alpha keeps LRN far from the identity; depth 4 exercises the
    // asymmetric window.
    let lrn = |depth| LayerKind::Lrn(LrnParams { depth, alpha: 0.5, beta: 0.75, bias: 1.0 });
    vec![
        ("conv", classifier([6, 5, 2], vec![conv(3, 3, 2, 1)], 3)),
        ("fc+softmax", classifier([2, 3, 2], vec![LayerKind::Fc { neurons: 4 }], 3)),
        ("relu", classifier([5, 5, 2], vec![conv(3, 3, 1, 0), LayerKind::Relu], 2)),
        ("lrn depth 3", classifier([4, 4, 2], vec![conv(5, 3, 1, 1), lrn(3)], 2)),
        ("lrn depth 4", classifier([4, 4, 2], vec![conv(5, 3, 1, 1), lrn(4)], 2)),
        ("max pool", classifier([7, 7, 1], vec![conv(2, 1, 1, 0), LayerKind::MaxPool { size: 3, stride: 2 }], 2)),
        (
            "spatial softmax",
            NetworkSpec {
                input_dims: [4, 3, 2],
                layers: vec![
                    LayerSpec::new("F1", conv(4, 3, 1, 1)),
                    LayerSpec::new("prob", LayerKind::SpatialSoftmax),
                ],
                num_classes: 4,
            },
        ),
    ]
}

/// Worst relative error over `INSTANCES` seeds for the named layer case.
pub fn worst_layer_error(name: &str) -> f64 {
    let (_, spec) = layer_cases().into_iter().find(|(n, _)| *n == name).expect("known case");
    (0..INSTANCES).map(|seed| check_network(spec.clone(), seed)).fold(0.0, f64::max)
}

/// The V2 gradient case: K below C so some labels fall outside the
/// weighted ranks, with non-uniform weights.
pub fn v2_gradient_config() -> LossConfig {
    LossConfig { k: 3, weights: vec![0.5, 0.3, 0.2] }
}
