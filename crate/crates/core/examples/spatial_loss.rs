//! The per-pixel spatial softmax loss and its top-K variant on a tiny map.

use pofsm::flow::{ClusterLabelMap, SpatialProbMap};
use pofsm::loss::{spatial_loss_v1, spatial_loss_v2, LossConfig};

fn main() -> pofsm::Result<()> {
    // two pixels, two clusters
    let probs = SpatialProbMap::new(1, 2, 2, vec![0.8, 0.2, 0.4, 0.6])?;
    let labels = ClusterLabelMap::new(1, 2, 2, vec![0, 1])?;
    let v1 = spatial_loss_v1(&probs, &labels)?;
    println!("full loss        {:.5}  per pixel {:?}", v1.value, v1.per_pixel);
    println!("d/dprob          {:?}", v1.grad_probs);

    // With fewer clusters than K every label is in the top K, so the
    // filtered loss is the full loss scaled by 1/K.
    let k10 = spatial_loss_v2(&probs, &labels, &LossConfig::top_k(10))?;
    println!("top-10 loss      {:.5}  (full / 10 = {:.5})", k10.value, v1.value / 10.0);

    // A label outside the top K contributes nothing.
    let probs = SpatialProbMap::new(1, 1, 4, vec![0.4, 0.3, 0.2, 0.1])?;
    for label in 0..4 {
        let l = ClusterLabelMap::new(1, 1, 4, vec![label])?;
        let v = spatial_loss_v2(&probs, &l, &LossConfig::top_k(2))?;
        println!("top-2 loss, true cluster {label}: {:.4}", v.value);
    }
    Ok(())
}
