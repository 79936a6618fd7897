//! Fits a flow codebook on the ground-truth flow of a synthetic task and
//! shows how a flow field is quantized into cluster labels.
//!
//! cargo run --release --example kmeans_codebook -- [clusters]

use pofsm::flow::{encode_flow, KMeans};
use pofsm::pipeline::{synth_samples, SyntheticSpec};

fn main() -> pofsm::Result<()> {
    let clusters: usize = std::env::args().nth(1).map_or(Ok(5), |s| s.parse()).expect("cluster count");
    let samples = synth_samples(&SyntheticSpec { samples_per_class: 20, test_per_class: 0, ..SyntheticSpec::default() })?;
    let vectors: Vec<[f64; 2]> = samples.iter().flat_map(|(s, _)| s.flow.vectors().to_vec()).collect();

    let run = KMeans { clusters, seed: 7, ..KMeans::default() }.fit_traced(&vectors)?;
    println!("{} flow vectors, {clusters} clusters, {} iterations (converged: {})", vectors.len(), run.iterations, run.converged);
    println!("SSE per step: {:?}", run.sse_history.iter().map(|v| format!("{v:.1}")).collect::<Vec<_>>());
    for (i, c) in run.codebook.centroids().iter().enumerate() {
        println!("  cluster {i}: ({:+.3}, {:+.3})", c[0], c[1]);
    }
    println!("normalization range f_max = {:.3}", run.codebook.f_max());

    let (sample, _) = &samples[0];
    let labels = encode_flow(&sample.flow, &run.codebook);
    println!("\nlabels of the first scene ({:?}, {}):", sample.shape, sample.motion);
    for r in 0..labels.rows() {
        let line: String = (0..labels.cols()).map(|c| char::from_digit(labels.get(r, c) as u32, 36).unwrap_or('?')).collect();
        println!("  {line}");
    }
    Ok(())
}
