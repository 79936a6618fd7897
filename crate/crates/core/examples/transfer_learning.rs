//! Pretrains a classifier on one task, swaps its head and fine-tunes under
//! each transfer scenario, reporting which layers moved.

use pofsm::nn::{Network, NetworkSpec, Scenario, Tensor};
use pofsm::pipeline::train::{train_classifier, Augment, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Noise images whose class is the brightest quadrant.
fn quadrant_task(n: usize, classes: usize, seed: u64) -> Vec<(Tensor, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let y = rng.random_range(0..classes);
            let mut data = vec![0.0; 32 * 32 * 3];
            for r in 0..32 {
                for c in 0..32 {
                    let q = (r / 16) * 2 + c / 16;
                    let boost = if q == y { 0.4 } else { 0.0 };
                    for ch in 0..3 {
                        data[(r * 32 + c) * 3 + ch] = rng.random_range(-0.3..0.3) + boost;
                    }
                }
            }
            (Tensor::new(vec![32, 32, 3], data).unwrap(), y)
        })
        .collect()
}

fn accuracy(net: &Network, samples: &[(Tensor, usize)]) -> f64 {
    let ok = samples.iter().filter(|(x, y)| net.forward(x).unwrap().argmax() == *y).count();
    ok as f64 / samples.len() as f64
}

fn main() -> pofsm::Result<()> {
    let cfg = TrainConfig { iterations: 300, batch: 8, base_lr: 0.02, init: pofsm::pipeline::InitKind::He, mirror: false, ..TrainConfig::default() };
    let source = quadrant_task(200, 4, 1);
    let base = Network::new(NetworkSpec::desk_classifier(4), cfg.weight_init(), 1)?;
    let (base, _) = train_classifier(base, &cfg.uniform_policy(), &source, &cfg, Augment::None, 2)?;
    println!("source accuracy {:.3}", accuracy(&base, &quadrant_task(100, 4, 9)));

    let (target, test) = (quadrant_task(90, 3, 3), quadrant_task(60, 3, 4));
    let tune = TrainConfig { iterations: 100, base_lr: 0.01, ..cfg };
    for scenario in Scenario::ALL {
        let net = base.replace_head(3, tune.weight_init(), 5)?;
        let policy = tune.transfer_policy().for_scenario(scenario, net.spec());
        let (tuned, _) = train_classifier(net.clone(), &policy, &target, &tune, Augment::None, 6)?;
        let moved: Vec<&str> = net
            .spec()
            .param_layers()
            .into_iter()
            .filter(|&i| net.params()[i] != tuned.params()[i])
            .map(|i| net.spec().layers[i].name.as_str())
            .collect();
        println!("{:<24} target accuracy {:.3}, trained layers {moved:?}", scenario.title(), accuracy(&tuned, &test));
    }
    Ok(())
}
