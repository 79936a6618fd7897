use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use pofsm::domain::PofSmImage;
use pofsm::error::{Error, Result};
use pofsm::flow::FlowCodebook;
use pofsm::image::Image;
use pofsm::nn::{read_header, hex, Scenario};
use pofsm::pipeline::files::{load_flows, load_images, load_labeled, load_model, map_manifest, save_model};
use pofsm::pipeline::stages::{evaluate_network, fit_codebook, mapping_config, train_flow, train_scratch};
use pofsm::pipeline::{ingest_frames, synth_generate, Augment, Config, DatasetManifest, ManifestRow, Split};
use pofsm::saliency::thresholded_saliency;

#[derive(Parser)]
#[command(name = "pofsm", version, about = "Predicted-flow + saliency image domain for still-image action recognition")]
struct Cli {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    Source,
    Target,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic task with ground-truth flow and a manifest.
    Synth {
        #[arg(long, value_enum, default_value = "source")]
        task: Task,
    },
    /// Build a manifest from `<root>/<split>/<group>/<class>/*.ppm`.
    Ingest { root: PathBuf },
    /// Fit the flow codebook on the training flows of one or more manifests.
    FitCodebook {
        #[arg(long = "manifest", required = true)]
        manifests: Vec<PathBuf>,
    },
    /// Train the flow network.
    TrainFlow {
        #[arg(long = "manifest", required = true)]
        manifests: Vec<PathBuf>,
        #[arg(long)]
        codebook: PathBuf,
    },
    /// Map every image of a manifest into the POF-SM domain.
    Map {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
    },
    /// Train a classifier from scratch on a (mapped) manifest.
    Pretrain {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Replace the head of a pretrained classifier and fine-tune it.
    Finetune {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// all-layers, top5-layers or head-only; defaults to the config.
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Score a classifier on the test split of a manifest.
    Eval {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Dump channels of a `.pofsm` file, the saliency of an image, or the
    /// header of a weights file.
    Inspect { path: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(t) = cli.threads {
        cfg.general.threads = t;
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.general.threads)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?
        .install(|| dispatch(&cli.command, &cfg, &cli.out))
}

fn dispatch(cmd: &Command, cfg: &Config, out: &Path) -> Result<()> {
    mkdir(out)?;
    match cmd {
        Command::Synth { task } => {
            let spec = match task {
                Task::Source => &cfg.source,
                Task::Target => &cfg.target,
            };
            let m = synth_generate(spec, out)?;
            println!("wrote {} samples to {}", m.rows().len(), out.join("manifest.csv").display());
        }
        Command::Ingest { root } => {
            let m = ingest_frames(root)?;
            let rows: Vec<ManifestRow> = m
                .rows()
                .iter()
                .map(|r| ManifestRow { path: root.join(&r.path), ..r.clone() })
                .collect();
            let abs = DatasetManifest::new(out, rows)?;
            abs.save(out.join("manifest.csv"))?;
            println!("indexed {} frames in {} classes", abs.rows().len(), abs.classes().len());
        }
        Command::FitCodebook { manifests } => {
            let mut flows = Vec::new();
            for p in manifests {
                let m = DatasetManifest::load(p)?;
                let rows: Vec<&ManifestRow> = m.split(Split::Train).collect();
                flows.extend(load_flows(&m, &rows)?);
            }
            let cb = fit_codebook(&flows, &cfg.codebook, cfg.seed("codebook"))?;
            cb.save(out.join("codebook.txt"))?;
            println!("{} clusters, f_max {:.4}", cb.clusters(), cb.f_max());
        }
        Command::TrainFlow { manifests, codebook } => {
            let cb = FlowCodebook::load(codebook)?;
            let (mut images, mut flows) = (Vec::new(), Vec::new());
            for p in manifests {
                let m = DatasetManifest::load(p)?;
                let rows: Vec<&ManifestRow> = m.split(Split::Train).collect();
                images.extend(load_images(&m, &rows)?);
                flows.extend(load_flows(&m, &rows)?);
            }
            let (net, log) = train_flow(&images, &flows, &cb, cfg)?;
            let clusters: Vec<String> = (0..cb.clusters()).map(|c| c.to_string()).collect();
            save_model(&net, &clusters, &clusters, out.join("flow.weights"))?;
            write(&out.join("flow_log.csv"), &log.to_csv())?;
            if let Some((a, b)) = log.head_tail_means(0.1) {
                println!("flow loss {a:.4} -> {b:.4} over {} iterations", log.entries.len());
            }
        }
        Command::Map { manifest, flow, codebook } => {
            let m = DatasetManifest::load(manifest)?;
            let (net, _) = load_model(flow)?;
            let mapping = mapping_config(net, FlowCodebook::load(codebook)?, cfg)?;
            let mapped = map_manifest(&m, &mapping, out)?;
            println!("mapped {} images into {}", mapped.rows().len(), out.display());
        }
        Command::Pretrain { manifest } => {
            let m = DatasetManifest::load(manifest)?;
            let spec = cfg.classifier.spec(m.classes().len());
            let (x, y) = load_labeled(&m, Split::Train, m.classes(), &spec)?;
            let augment = if is_mapped(&m) { Augment::MirrorPofSm } else { Augment::MirrorRaw };
            let (net, log) = train_scratch(spec, &x, &y, &cfg.pretrain, augment, cfg.seed("pretrain"))?;
            save_model(&net, m.classes(), &m.class_groups(), out.join("pretrained.weights"))?;
            write(&out.join("pretrain_log.csv"), &log.to_csv())?;
            report_log("pretrain", &log);
        }
        Command::Finetune { weights, manifest, scenario } => {
            let scenario: Scenario = match scenario {
                Some(s) => s.parse()?,
                None => cfg.classifier.scenario,
            };
            let (base, _) = load_model(weights)?;
            let m = DatasetManifest::load(manifest)?;
            let (x, y) = load_labeled(&m, Split::Train, m.classes(), base.spec())?;
            let (net, log) = pofsm::pipeline::stages::finetune(&base, &x, &y, m.classes().len(), scenario, cfg)?;
            save_model(&net, m.classes(), &m.class_groups(), out.join("finetuned.weights"))?;
            write(&out.join("finetune_log.csv"), &log.to_csv())?;
            println!("{}", scenario.title());
            report_log("finetune", &log);
        }
        Command::Eval { weights, manifest } => {
            let (net, card) = load_model(weights)?;
            let m = DatasetManifest::load(manifest)?;
            let (x, y) = load_labeled(&m, Split::Test, &card.classes, net.spec())?;
            let report = evaluate_network(&net, &x, &y, &card.classes, &card.groups)?;
            print!("{}", report.to_table());
            write(&out.join("eval.csv"), &report.to_csv())?;
        }
        Command::Inspect { path } => inspect(path, cfg, out)?,
    }
    Ok(())
}

fn is_mapped(m: &DatasetManifest) -> bool {
    m.rows().iter().all(|r| r.path.extension().is_some_and(|e| e == "pofsm"))
}

fn report_log(name: &str, log: &pofsm::pipeline::TrainLog) {
    if let Some((a, b)) = log.head_tail_means(0.1) {
        println!("{name} loss {a:.4} -> {b:.4} over {} iterations", log.entries.len());
    }
}

fn inspect(path: &Path, cfg: &Config, out: &Path) -> Result<()> {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    match path.extension().and_then(|e| e.to_str()).unwrap_or("") {
        "pofsm" => {
            let img = PofSmImage::load(path)?;
            for (i, name) in ["pof_h", "pof_v", "sm"].iter().enumerate() {
                img.channel_image(i).write_pnm(out.join(format!("{stem}_{name}.pgm")))?;
            }
            img.write_ppm(out.join(format!("{stem}_pofsm.ppm")))?;
            println!("{}x{} POF-SM image; channels written to {}", img.rows(), img.cols(), out.display());
        }
        "weights" => {
            let h = read_header(path)?;
            println!("version {} values {} digest {}", h.version, h.count, hex(&h.digest));
            if let Ok((net, card)) = load_model(path) {
                for l in &net.spec().layers {
                    println!("{:<10} {}", l.name, l.kind);
                }
                println!("classes: {}", card.classes.join(", "));
            }
        }
        _ => {
            let img = Image::read(path)?;
            let (sal, t) = thresholded_saliency(&img, &cfg.saliency, cfg.mapping.otsu_bins)?;
            img.luminance().write_pnm(out.join(format!("{stem}_luma.pgm")))?;
            sal.write_pgm(out.join(format!("{stem}_saliency.pgm")))?;
            println!("{}x{}x{} image; Otsu tau {:.4}", img.rows(), img.cols(), img.channels(), t.tau);
        }
    }
    Ok(())
}
