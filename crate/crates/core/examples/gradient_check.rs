//! Compares backpropagated gradients of a small convolutional network with
//! central finite differences.

use pofsm::nn::{LayerKind, LayerSpec, LrnParams, Network, NetworkSpec, Tensor, WeightInit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> pofsm::Result<()> {
    let spec = NetworkSpec {
        input_dims: [8, 8, 3],
        layers: vec![
            LayerSpec::new("C1", LayerKind::Conv { kernels: 4, size: 3, stride: 1, padding: 1 }),
            LayerSpec::new("relu1", LayerKind::Relu),
            LayerSpec::new("lrn1", LayerKind::Lrn(LrnParams { alpha: 0.5, ..LrnParams::default() })),
            LayerSpec::new("pool1", LayerKind::MaxPool { size: 3, stride: 2 }),
            LayerSpec::new("FC2", LayerKind::Fc { neurons: 3 }),
            LayerSpec::new("prob", LayerKind::Softmax),
        ],
        num_classes: 3,
    };
    let net = Network::new(spec, WeightInit::Gaussian { std: 0.5 }, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::new(vec![8, 8, 3], (0..192).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let label = 1;

    // cross-entropy through the softmax: d/dlogits = p - onehot
    let loss = |n: &Network| -n.forward(&x).unwrap().data()[label].ln();
    let trace = net.forward_trace(&x)?;
    let mut g = trace.output().into_data();
    g[label] -= 1.0;
    let grads = net.backward_logits(&trace, &g)?;

    let eps = 1e-4;
    for (li, layer) in net.spec().layers.iter().enumerate() {
        let Some(analytic) = &grads.layers[li] else { continue };
        let mut worst: f64 = 0.0;
        for k in 0..analytic.weights.len() {
            let shifted = |d: f64| {
                let mut n = net.clone();
                n.params_mut()[li].as_mut().unwrap().weights[k] += d;
                loss(&n)
            };
            let numeric = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
            let a = analytic.weights[k];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
        println!("{:<5} {:>4} weights, worst relative error {worst:.2e}", layer.name, analytic.weights.len());
    }
    Ok(())
}
