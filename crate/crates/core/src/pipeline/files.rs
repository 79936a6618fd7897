//! File-backed wrappers used by the command-line tool.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, ManifestRow, Split};
use super::stages::fit_input;
use crate::domain::{map_to_pofsm, MappingConfig, PofSmImage};
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::image::Image;
use crate::nn::{load_weights, save_weights, Network, NetworkSpec, Tensor};

/// Architecture and label vocabulary stored beside a weights file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub classes: Vec<String>,
    pub groups: Vec<String>,
    pub spec: NetworkSpec,
}

pub fn card_path(weights: &Path) -> PathBuf {
    let mut name = weights.file_name().unwrap_or_default().to_os_string();
    name.push(".spec.toml");
    weights.with_file_name(name)
}

pub fn save_model(net: &Network, classes: &[String], groups: &[String], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    save_weights(net, path)?;
    let card = ModelCard { classes: classes.to_vec(), groups: groups.to_vec(), spec: net.spec().clone() };
    let text = toml::to_string(&card).map_err(|e| Error::config(e.to_string()))?;
    let cp = card_path(path);
    fs::write(&cp, text).map_err(|e| Error::io(cp, e))
}

/// Rebuilds the network from the sidecar and fills in the weights. A
/// missing file is a configuration problem.
pub fn load_model(path: impl AsRef<Path>) -> Result<(Network, ModelCard)> {
    let path = path.as_ref();
    let cp = card_path(path);
    if !path.is_file() || !cp.is_file() {
        return Err(Error::config(format!("missing weights {} or its {}", path.display(), cp.display())));
    }
    let text = fs::read_to_string(&cp).map_err(|e| Error::io(&cp, e))?;
    let card: ModelCard = toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", cp.display())))?;
    let mut net = Network::zeros(card.spec.clone())?;
    load_weights(&mut net, path)?;
    Ok((net, card))
}

pub fn load_images(m: &DatasetManifest, rows: &[&ManifestRow]) -> Result<Vec<Image>> {
    rows.par_iter().map(|r| Image::read(m.resolve(r))).collect()
}

pub fn load_flows(m: &DatasetManifest, rows: &[&ManifestRow]) -> Result<Vec<FlowField>> {
    rows.par_iter()
        .map(|r| {
            let p = m.flow_path(r);
            if !p.is_file() {
                return Err(Error::data(format!("no ground-truth flow at {}", p.display())));
            }
            FlowField::read_flo(p)
        })
        .collect()
}

/// Loads one input (`.pofsm` or an image) resized to `spec`'s input.
pub fn load_input(path: &Path, spec: &NetworkSpec) -> Result<Tensor> {
    let img = if path.extension().is_some_and(|e| e == "pofsm") {
        PofSmImage::load(path)?.to_image()
    } else {
        Image::read(path)?
    };
    let [r, c, _] = spec.input_dims;
    Ok(fit_input(img, r, c))
}

/// Inputs and label indices for one split. Labels are looked up in
/// `classes`; an unknown label is a data error.
pub fn load_labeled(
    m: &DatasetManifest,
    split: Split,
    classes: &[String],
    spec: &NetworkSpec,
) -> Result<(Vec<Tensor>, Vec<usize>)> {
    let rows: Vec<&ManifestRow> = m.split(split).collect();
    let labels = rows
        .iter()
        .map(|r| {
            classes
                .iter()
                .position(|c| *c == r.label)
                .ok_or_else(|| Error::data(format!("class `{}` is not in the training vocabulary", r.label)))
        })
        .collect::<Result<Vec<_>>>()?;
    let inputs = rows.par_iter().map(|r| load_input(&m.resolve(r), spec)).collect::<Result<Vec<_>>>()?;
    Ok((inputs, labels))
}

/// Maps every image of `m` into `out_dir`, keeping the relative layout.
/// Writes `<stem>.pofsm` (exact) and `<stem>.ppm` (preview) and returns a
/// manifest over the `.pofsm` files.
pub fn map_manifest(m: &DatasetManifest, cfg: &MappingConfig, out_dir: &Path) -> Result<DatasetManifest> {
    m.rows()
        .par_iter()
        .map(|r| {
            let img = Image::read(m.resolve(r))?;
            let mapped = map_to_pofsm(&img, cfg)?;
            let dst = out_dir.join(&r.path).with_extension("pofsm");
            let dir = dst.parent().expect("mapped path has a parent");
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            mapped.save(&dst)?;
            mapped.write_ppm(dst.with_extension("ppm"))
        })
        .collect::<Result<Vec<()>>>()?;
    let out = m.with_root_and_extension(out_dir, "pofsm");
    out.save(out_dir.join("manifest.csv"))?;
    Ok(out)
}
