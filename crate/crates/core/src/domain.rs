//! Mapping a static image into the three-channel predicted-flow + saliency
//! domain, and mirror augmentation inside that domain.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{decode_flow, normalize_flow_channel, DecodeMode, FlowCodebook, SpatialProbMap};
use crate::image::Image;
use crate::nn::{Network, OutputMode, Tensor};
use crate::saliency::{apply_threshold, otsu_threshold, saliency_map, SaliencyParams};

/// Channel values are stored on the `k / 2^24` grid. On that grid
/// `1 - v` is exact in `f32`, which makes the mirror flip an exact
/// involution.
const GRID: f64 = 16_777_216.0;

fn snap(v: f64) -> f32 {
    ((v.clamp(0.0, 1.0) * GRID).round() / GRID) as f32
}

/// Three planes in `[0, 1]`: horizontal flow, vertical flow, saliency.
#[derive(Clone, Debug, PartialEq)]
pub struct PofSmImage {
    rows: usize,
    cols: usize,
    pof_h: Vec<f32>,
    pof_v: Vec<f32>,
    sm: Vec<f32>,
}

pub const POFSM_HEADER: &str = "POFSM v1";

impl PofSmImage {
    pub fn from_planes(rows: usize, cols: usize, pof_h: &[f64], pof_v: &[f64], sm: &[f64]) -> Result<Self> {
        let n = rows * cols;
        if n == 0 || pof_h.len() != n || pof_v.len() != n || sm.len() != n {
            return Err(Error::data(format!("POF-SM planes must all hold {rows}x{cols} values")));
        }
        let all = pof_h.iter().chain(pof_v).chain(sm);
        if let Some(bad) = all.clone().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::data(format!("POF-SM value {bad} outside [0, 1]")));
        }
        let conv = |p: &[f64]| p.iter().map(|&v| snap(v)).collect();
        Ok(PofSmImage { rows, cols, pof_h: conv(pof_h), pof_v: conv(pof_v), sm: conv(sm) })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pof_h(&self) -> &[f32] {
        &self.pof_h
    }

    pub fn pof_v(&self) -> &[f32] {
        &self.pof_v
    }

    pub fn sm(&self) -> &[f32] {
        &self.sm
    }

    pub fn planes(&self) -> [&[f32]; 3] {
        [&self.pof_h, &self.pof_v, &self.sm]
    }

    /// HWC tensor with channels `(pof_h, pof_v, sm)`.
    pub fn to_tensor(&self) -> Tensor {
        let mut data = Vec::with_capacity(3 * self.pof_h.len());
        for i in 0..self.pof_h.len() {
            data.extend([self.pof_h[i] as f64, self.pof_v[i] as f64, self.sm[i] as f64]);
        }
        Tensor::new(vec![self.rows, self.cols, 3], data).expect("pofsm dims")
    }

    /// Channels as an RGB image, `(pof_h, pof_v, sm)` in `(r, g, b)`.
    pub fn to_image(&self) -> Image {
        Image::new(self.rows, self.cols, 3, self.to_tensor().into_data()).expect("pofsm dims")
    }

    pub fn channel_image(&self, ch: usize) -> Image {
        let data = self.planes()[ch].iter().map(|&v| v as f64).collect();
        Image::new(self.rows, self.cols, 1, data).expect("pofsm dims")
    }

    /// Exact form: the text line `POFSM v1 <rows> <cols>`, then the three
    /// planes as little-endian f32, plane after plane.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("{POFSM_HEADER} {} {}\n", self.rows, self.cols).into_bytes();
        for plane in self.planes() {
            for v in plane {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |msg: String| Error::Corrupt { path: path.to_path_buf(), msg };
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| corrupt("missing header line".into()))?;
        let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| corrupt("header is not text".into()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let (rows, cols) = match parts[..] {
            ["POFSM", "v1", r, c] => (
                r.parse::<usize>().map_err(|_| corrupt(format!("bad rows `{r}`")))?,
                c.parse::<usize>().map_err(|_| corrupt(format!("bad cols `{c}`")))?,
            ),
            _ => return Err(corrupt(format!("bad header `{header}`"))),
        };
        let n = rows * cols;
        let body = &bytes[nl + 1..];
        if body.len() != 12 * n || n == 0 {
            return Err(corrupt(format!("expected {} body bytes, found {}", 12 * n, body.len())));
        }
        let floats: Vec<f32> = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if floats.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(corrupt("channel value outside [0, 1]".into()));
        }
        Ok(PofSmImage {
            rows,
            cols,
            pof_h: floats[..n].to_vec(),
            pof_v: floats[n..2 * n].to_vec(),
            sm: floats[2 * n..].to_vec(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Lossy 8-bit PPM for viewing.
    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_image().write_pnm(path)
    }
}

/// Left-right flip of every channel. Horizontal motion changes sign under
/// the flip, so `pof_h` is also reflected about 0.5.
pub fn mirror_augment(img: &PofSmImage) -> PofSmImage {
    let flip = |plane: &[f32], negate: bool| -> Vec<f32> {
        let mut out = Vec::with_capacity(plane.len());
        for row in plane.chunks_exact(img.cols) {
            out.extend(row.iter().rev().map(|&v| if negate { 1.0 - v } else { v }));
        }
        out
    };
    PofSmImage {
        rows: img.rows,
        cols: img.cols,
        pof_h: flip(&img.pof_h, true),
        pof_v: flip(&img.pof_v, false),
        sm: flip(&img.sm, false),
    }
}

/// Everything needed to map an image into the POF-SM domain.
#[derive(Clone, Debug)]
pub struct MappingConfig {
    pub flow_net: Network,
    pub codebook: FlowCodebook,
    pub decode: DecodeMode,
    pub saliency: SaliencyParams,
    pub otsu_bins: usize,
    pub f_max: f64,
}

impl MappingConfig {
    /// Uses the codebook's `f_max`, expected-value decoding and default
    /// saliency settings.
    pub fn new(flow_net: Network, codebook: FlowCodebook) -> Result<Self> {
        let f_max = codebook.f_max();
        let cfg = MappingConfig {
            flow_net,
            codebook,
            decode: DecodeMode::Expected,
            saliency: SaliencyParams::default(),
            otsu_bins: 256,
            f_max,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.flow_net.mode() != OutputMode::Spatial {
            return Err(Error::config("flow network must end in a spatial softmax"));
        }
        let c = self.flow_net.output_shape()[2];
        if c != self.codebook.clusters() {
            return Err(Error::config(format!(
                "flow network emits {c} clusters but the codebook has {}",
                self.codebook.clusters()
            )));
        }
        if !(self.f_max.is_finite() && self.f_max > 0.0) {
            return Err(Error::config("f_max must be positive"));
        }
        self.saliency.validate()
    }

    /// Output resolution of the mapping: the flow network's spatial dims.
    pub fn output_dims(&self) -> (usize, usize) {
        let [r, c, _] = self.flow_net.output_shape();
        (r, c)
    }
}

/// Subtracted from every pixel value before it enters a network, so inputs
/// are centered on zero.
pub const INPUT_OFFSET: f64 = 0.5;

/// HWC tensor of `image` shifted by [`INPUT_OFFSET`].
pub fn network_input(image: &Image) -> Tensor {
    let mut t = image.to_tensor();
    for v in t.data_mut() {
        *v -= INPUT_OFFSET;
    }
    t
}

/// Resizes (bilinear), converts channels and centers to match a network
/// input.
pub fn prepare_input(image: &Image, net: &Network) -> Result<Tensor> {
    let [r, c, ch] = net.input_shape();
    let img = image.resize_bilinear(r, c);
    let img = match (img.channels(), ch) {
        (a, b) if a == b => img,
        (3, 1) => img.luminance(),
        (1, 3) => {
            let data = img.data().iter().flat_map(|&v| [v, v, v]).collect();
            Image::new(r, c, 3, data)?
        }
        (a, b) => return Err(Error::data(format!("cannot feed a {a}-channel image to a {b}-channel network"))),
    };
    Ok(network_input(&img))
}

pub fn predict_flow(image: &Image, flow_net: &Network) -> Result<SpatialProbMap> {
    if flow_net.mode() != OutputMode::Spatial {
        return Err(Error::config("flow network must end in a spatial softmax"));
    }
    let out = flow_net.forward(&prepare_input(image, flow_net)?)?;
    SpatialProbMap::from_tensor(&out)
}

/// `(pof_h, pof_v, sm)` for one image: decoded and normalized predicted
/// flow, plus the Otsu-thresholded saliency resampled to the flow grid.
pub fn map_to_pofsm(image: &Image, cfg: &MappingConfig) -> Result<PofSmImage> {
    cfg.validate()?;
    let probs = predict_flow(image, &cfg.flow_net)?;
    let flow = decode_flow(&probs, &cfg.codebook, cfg.decode)?;
    let [h, v] = normalize_flow_channel(&flow, cfg.f_max)?;
    let sal = saliency_map(image, &cfg.saliency)?;
    let t = otsu_threshold(sal.values(), cfg.otsu_bins)?;
    let sm = apply_threshold(&sal, t.tau);
    let (rows, cols) = cfg.output_dims();
    let sm = if (sm.rows(), sm.cols()) == (rows, cols) { sm } else { sm.resize(rows, cols) };
    PofSmImage::from_planes(rows, cols, &h, &v, sm.values())
}

/// Mirrors the raw image first and maps the result. Agrees with
/// [`mirror_augment`] of the mapped image when the flow network is
/// mirror-equivariant.
pub fn map_mirrored_raw(image: &Image, cfg: &MappingConfig) -> Result<PofSmImage> {
    map_to_pofsm(&image.mirror(), cfg)
}

/// Maps a batch concurrently; output order follows input order.
pub fn map_batch(images: &[Image], cfg: &MappingConfig) -> Result<Vec<PofSmImage>> {
    images.par_iter().map(|img| map_to_pofsm(img, cfg)).collect()
}
