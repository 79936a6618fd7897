//! The complete desk-scale experiment in memory: synthetic scenes, flow
//! codebook, flow network, POF-SM mapping, source pretraining, target
//! fine-tuning and the two from-scratch baselines.
//!
//! cargo run --release --example end_to_end -- [seed] [config.toml]

use pofsm::pipeline::{run_experiment, Baselines, Config};

fn main() -> pofsm::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed: u64 = args.first().map_or(Ok(0), |s| s.parse()).expect("seed");
    let cfg = match args.get(1) {
        Some(path) => Config::load(path)?,
        None => Config::desk(),
    }
    .with_seed(seed);

    let o = run_experiment(&cfg, Baselines { scratch_pofsm: true, scratch_rgb: true })?;
    for (stage, t) in &o.stage_times {
        println!("{stage:<14} {:>7.1} s", t.as_secs_f64());
    }
    println!("\ncodebook: {:?}", o.codebook.centroids().iter().map(|c| format!("({:+.2},{:+.2})", c[0], c[1])).collect::<Vec<_>>());
    println!("flow network moving-pixel accuracy {:.3}", o.flow_accuracy);
    println!("source pretraining top-1 {:.3}", o.pretrain_report.top1);
    println!("\ntarget task, {}:", cfg.classifier.scenario.title());
    print!("{}", o.finetune.to_table());
    println!("\nfrom scratch on POF-SM   top-1 {:.3}", o.scratch_pofsm.map_or(f64::NAN, |r| r.top1));
    println!("from scratch on raw RGB  top-1 {:.3}", o.scratch_rgb.map_or(f64::NAN, |r| r.top1));
    Ok(())
}
