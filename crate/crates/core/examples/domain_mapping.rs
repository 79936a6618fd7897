//! Trains a small flow network on synthetic scenes, maps a held-out scene
//! into the POF-SM domain and writes the result.
//!
//! cargo run --release --example domain_mapping -- [out_dir]

use std::path::PathBuf;

use pofsm::domain::{map_to_pofsm, mirror_augment, PofSmImage};
use pofsm::pipeline::stages::{fit_codebook, mapping_config, moving_pixel_accuracy, train_flow};
use pofsm::pipeline::{Config, Split, TaskData};

fn main() -> pofsm::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/domain_mapping".into()));
    std::fs::create_dir_all(&out).map_err(|e| pofsm::Error::Io { path: out.clone(), source: e })?;

    let mut cfg = Config::desk().with_seed(1);
    cfg.flow_train.iterations = 300;
    let data = TaskData::generate(&cfg.source)?;
    let (images, flows) = (data.images(Split::Train), data.flows(Split::Train));
    let codebook = fit_codebook(&flows, &cfg.codebook, cfg.seed("codebook"))?;
    let (net, log) = train_flow(&images, &flows, &codebook, &cfg)?;
    let (head, tail) = log.head_tail_means(0.1).unwrap_or_default();
    let acc = moving_pixel_accuracy(&net, &codebook, &data.images(Split::Test), &data.flows(Split::Test))?;
    println!("flow loss {head:.3} -> {tail:.3}; moving-pixel cluster accuracy on held-out scenes {acc:.3}");

    let mapping = mapping_config(net, codebook, &cfg)?;
    let scene = data.test.iter().find(|s| s.motion.group() == "horizontal").expect("a horizontal scene");
    let mapped = map_to_pofsm(&scene.image, &mapping)?;
    let mean = |plane: &[f32], mask: &[bool]| {
        let (s, n) = plane.iter().zip(mask).filter(|(_, &m)| m).fold((0.0, 0), |a, (&v, _)| (a.0 + v as f64, a.1 + 1));
        s / n.max(1) as f64
    };
    println!(
        "{} scene: mean pof_h on the object {:.3}, elsewhere {:.3} (0.5 = no motion)",
        scene.motion,
        mean(mapped.pof_h(), &scene.mask),
        mean(mapped.pof_h(), &scene.mask.iter().map(|m| !m).collect::<Vec<_>>())
    );

    scene.image.write_pnm(out.join("scene.ppm"))?;
    mapped.save(out.join("scene.pofsm"))?;
    mapped.write_ppm(out.join("scene_pofsm.ppm"))?;
    mirror_augment(&mapped).write_ppm(out.join("scene_mirrored.ppm"))?;
    assert_eq!(PofSmImage::load(out.join("scene.pofsm"))?, mapped);
    println!("wrote scene, mapping and mirrored mapping to {}", out.display());
    Ok(())
}
