//! Bottom-up static saliency by local self-resemblance, and Otsu
//! thresholding of the resulting map.
//!
//! Every pixel gets a feature matrix built from the descriptors of its
//! `p x p` patch. Saliency is `1 / sum_j exp(-(1 - rho_ij) / h)` over the
//! `(2r+1)^2` neighborhood, where `rho_ij` is the matrix cosine similarity
//! between the feature matrices of pixels `i` and `j`. A pixel that looks
//! like its surroundings scores low; a distinctive one scores high.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Descriptor {
    /// Steering-kernel weights from the normalized local structure tensor.
    #[default]
    Lsk,
    /// Magnitude-weighted 8-bin orientation histogram.
    GradientHist,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaliencyParams {
    /// Odd patch side `p`.
    pub patch: usize,
    /// Neighborhood radius.
    pub radius: usize,
    pub descriptor: Descriptor,
    /// Kernel temperature `h`.
    pub h: f64,
}

impl Default for SaliencyParams {
    fn default() -> Self {
        SaliencyParams { patch: 3, radius: 3, descriptor: Descriptor::Lsk, h: 0.2 }
    }
}

impl SaliencyParams {
    pub fn validate(&self) -> Result<()> {
        if self.patch < 3 || self.patch % 2 == 0 {
            return Err(Error::config(format!("patch size must be odd and >= 3, got {}", self.patch)));
        }
        if self.radius < 1 {
            return Err(Error::config("neighborhood radius must be >= 1"));
        }
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(Error::config(format!("kernel temperature must be positive, got {}", self.h)));
        }
        Ok(())
    }
}

/// Regularizer on the structure tensor, relative to its image-wide mean.
const STRUCTURE_REG: f64 = 1.0;
/// Maps with a smaller raw spread are treated as having no salient pixel.
const FLAT_SPREAD: f64 = 1e-9;

/// Per-pixel saliency in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(Error::data(format!("saliency map {rows}x{cols} has {} values", data.len())));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::data("saliency values must lie in [0, 1]"));
        }
        Ok(SaliencyMap { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    /// `(row, col)` of the maximum, first in scan order on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let i = crate::nn::argmax(&self.data);
        (i / self.cols, i % self.cols)
    }

    pub fn to_image(&self) -> Image {
        Image::new(self.rows, self.cols, 1, self.data.clone()).expect("saliency dims")
    }

    pub fn resize(&self, rows: usize, cols: usize) -> SaliencyMap {
        let data = crate::image::resize_bilinear(&self.data, self.rows, self.cols, 1, rows, cols);
        SaliencyMap { rows, cols, data: data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect() }
    }

    /// 8-bit PGM with `round(255 * s)`.
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_image().write_pnm(path)
    }
}

/// Reflect-101 index: `-1 -> 1`, `n -> n - 2`.
fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

struct Plane<'a> {
    rows: usize,
    cols: usize,
    data: &'a [f64],
}

impl Plane<'_> {
    fn at(&self, r: isize, c: isize) -> f64 {
        self.data[mirror(r, self.rows) * self.cols + mirror(c, self.cols)]
    }
}

fn gradients(p: &Plane) -> (Vec<f64>, Vec<f64>) {
    let mut gx = Vec::with_capacity(p.data.len());
    let mut gy = Vec::with_capacity(p.data.len());
    for r in 0..p.rows as isize {
        for c in 0..p.cols as isize {
            gx.push(0.5 * (p.at(r, c + 1) - p.at(r, c - 1)));
            gy.push(0.5 * (p.at(r + 1, c) - p.at(r - 1, c)));
        }
    }
    (gx, gy)
}

/// Steering matrices `[a, b, c]` (for `[[a, b], [b, c]]`) per pixel.
fn steering_matrices(rows: usize, cols: usize, gx: &[f64], gy: &[f64]) -> Vec<[f64; 3]> {
    let xx = Plane { rows, cols, data: &gx.iter().map(|g| g * g).collect::<Vec<_>>() }.box3();
    let xy = Plane { rows, cols, data: &gx.iter().zip(gy).map(|(a, b)| a * b).collect::<Vec<_>>() }.box3();
    let yy = Plane { rows, cols, data: &gy.iter().map(|g| g * g).collect::<Vec<_>>() }.box3();
    let mean_trace = xx.iter().zip(&yy).map(|(a, b)| a + b).sum::<f64>() / (rows * cols) as f64;
    if mean_trace <= 0.0 {
        return vec![[1.0, 0.0, 1.0]; rows * cols];
    }
    let reg = STRUCTURE_REG * mean_trace;
    (0..rows * cols)
        .map(|i| {
            let norm = 2.0 / (xx[i] + yy[i] + 2.0 * reg);
            [(xx[i] + reg) * norm, xy[i] * norm, (yy[i] + reg) * norm]
        })
        .collect()
}

impl Plane<'_> {
    fn box3(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.data.len());
        for r in 0..self.rows as isize {
            for c in 0..self.cols as isize {
                let mut s = 0.0;
                for dr in -1..=1 {
                    for dc in -1..=1 {
                        s += self.at(r + dr, c + dc);
                    }
                }
                out.push(s);
            }
        }
        out
    }
}

/// One descriptor vector per pixel, flattened `[pixel][dim]`.
fn descriptors(gray: &Plane, params: &SaliencyParams) -> (Vec<f64>, usize) {
    let (rows, cols) = (gray.rows, gray.cols);
    let (gx, gy) = gradients(gray);
    let half = (params.patch / 2) as isize;
    match params.descriptor {
        Descriptor::Lsk => {
            let steer = steering_matrices(rows, cols, &gx, &gy);
            let dim = params.patch * params.patch;
            let mut out = Vec::with_capacity(rows * cols * dim);
            let mut v = vec![0.0; dim];
            for r in 0..rows as isize {
                for c in 0..cols as isize {
                    let mut k = 0;
                    for dy in -half..=half {
                        for dx in -half..=half {
                            let [a, b, cc] = steer[mirror(r + dy, rows) * cols + mirror(c + dx, cols)];
                            let (x, y) = (dx as f64, dy as f64);
                            let q = a * x * x + 2.0 * b * x * y + cc * y * y;
                            v[k] = (a * cc - b * b).max(0.0).sqrt() * (-0.5 * q).exp();
                            k += 1;
                        }
                    }
                    let sum: f64 = v.iter().sum();
                    let mean = 1.0 / dim as f64;
                    out.extend(v.iter().map(|x| x / sum - mean));
                }
            }
            (out, dim)
        }
        Descriptor::GradientHist => {
            const BINS: usize = 8;
            let mag: Vec<f64> = gx.iter().zip(&gy).map(|(x, y)| x.hypot(*y)).collect();
            let mean_mag = mag.iter().sum::<f64>() / mag.len() as f64;
            let reg = STRUCTURE_REG * mean_mag * (params.patch * params.patch) as f64;
            let mut out = Vec::with_capacity(rows * cols * BINS);
            for r in 0..rows as isize {
                for c in 0..cols as isize {
                    let mut h = [0.0; BINS];
                    for dy in -half..=half {
                        for dx in -half..=half {
                            let i = mirror(r + dy, rows) * cols + mirror(c + dx, cols);
                            if mag[i] == 0.0 {
                                continue;
                            }
                            let theta = gy[i].atan2(gx[i]).rem_euclid(std::f64::consts::TAU);
                            let bin = ((theta / std::f64::consts::TAU * BINS as f64) as usize).min(BINS - 1);
                            h[bin] += mag[i];
                        }
                    }
                    let total: f64 = h.iter().sum::<f64>() + reg;
                    out.extend(h.iter().map(|v| if total > 0.0 { v / total } else { 0.0 }));
                }
            }
            (out, BINS)
        }
    }
}

/// Self-resemblance scores before min-max normalization.
pub fn raw_saliency(image: &Image, params: &SaliencyParams) -> Result<Vec<f64>> {
    params.validate()?;
    let gray = image.luminance();
    let (rows, cols) = (gray.rows(), gray.cols());
    if rows < params.patch || cols < params.patch {
        return Err(Error::data(format!(
            "image {rows}x{cols} is smaller than the {0}x{0} patch",
            params.patch
        )));
    }
    let plane = Plane { rows, cols, data: gray.data() };
    let (feat, dim) = descriptors(&plane, params);
    let half = (params.patch / 2) as isize;
    let rad = params.radius as isize;
    let f = |i: usize| &feat[i * dim..(i + 1) * dim];
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    // patch pixel indices for every pixel, and the squared Frobenius norm
    let window = |r: isize, c: isize| -> Vec<usize> {
        let mut w = Vec::with_capacity(params.patch * params.patch);
        for dy in -half..=half {
            for dx in -half..=half {
                w.push(mirror(r + dy, rows) * cols + mirror(c + dx, cols));
            }
        }
        w
    };
    let windows: Vec<Vec<usize>> =
        (0..rows as isize).flat_map(|r| (0..cols as isize).map(move |c| (r, c))).map(|(r, c)| window(r, c)).collect();
    let norms: Vec<f64> = windows.iter().map(|w| w.iter().map(|&k| dot(f(k), f(k))).sum::<f64>().sqrt()).collect();

    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows as isize {
        for c in 0..cols as isize {
            let i = r as usize * cols + c as usize;
            let mut denom = 0.0;
            for dy in -rad..=rad {
                for dx in -rad..=rad {
                    let j = mirror(r + dy, rows) * cols + mirror(c + dx, cols);
                    let rho = if norms[i] == 0.0 && norms[j] == 0.0 {
                        1.0
                    } else if norms[i] == 0.0 || norms[j] == 0.0 {
                        0.0
                    } else {
                        let inner: f64 = windows[i].iter().zip(&windows[j]).map(|(&a, &b)| dot(f(a), f(b))).sum();
                        (inner / (norms[i] * norms[j])).clamp(-1.0, 1.0)
                    };
                    denom += (-(1.0 - rho) / params.h).exp();
                }
            }
            out.push(1.0 / denom);
        }
    }
    Ok(out)
}

/// Min-max normalized self-resemblance saliency of an image (color inputs
/// are converted to luminance). A map without spread is all zeros.
pub fn saliency_map(image: &Image, params: &SaliencyParams) -> Result<SaliencyMap> {
    let raw = raw_saliency(image, params)?;
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let data = if hi - lo < FLAT_SPREAD {
        vec![0.0; raw.len()]
    } else {
        raw.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
    };
    Ok(SaliencyMap { rows: image.rows(), cols: image.cols(), data })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub tau: f64,
    pub bins: usize,
    /// Set when every value is identical and no split exists.
    pub degenerate: bool,
}

/// Relative slack under which two between-class variances count as tied.
pub const OTSU_TIE_TOLERANCE: f64 = 1e-12;

/// Otsu's threshold over a `bins`-bin histogram spanning `[min, max]` of
/// the values. Returns the lower edge of the first bin of the upper class,
/// so every value of the upper class is `>= tau` and every value of the
/// lower class is `< tau`. Ties go to the lower threshold.
pub fn otsu_threshold(values: &[f64], bins: usize) -> Result<Threshold> {
    if values.is_empty() {
        return Err(Error::data("cannot threshold an empty map"));
    }
    if bins < 2 {
        return Err(Error::config("Otsu needs at least 2 bins"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("saliency values must be finite"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Ok(Threshold { tau: lo, bins, degenerate: true });
    }
    let hist = histogram(values, bins, lo, hi);
    let n: f64 = values.len() as f64;
    let total_mass: f64 = hist.iter().enumerate().map(|(b, &h)| b as f64 * h as f64).sum();
    let (mut n0, mut m0) = (0.0, 0.0);
    let mut best: Option<(usize, f64)> = None;
    for cut in 1..bins {
        n0 += hist[cut - 1] as f64;
        m0 += (cut - 1) as f64 * hist[cut - 1] as f64;
        let n1 = n - n0;
        if n0 == 0.0 || n1 == 0.0 {
            continue;
        }
        let diff = m0 / n0 - (total_mass - m0) / n1;
        let var = n0 * n1 * diff * diff / (n * n);
        if best.is_none_or(|(_, b)| var > b * (1.0 + OTSU_TIE_TOLERANCE)) {
            best = Some((cut, var));
        }
    }
    let (cut, _) = best.expect("min and max fall in different bins");
    Ok(Threshold { tau: bin_edge(cut, bins, lo, hi), bins, degenerate: false })
}

/// Bin of `v` in a `bins`-bin histogram over `[lo, hi]`; `hi` lands in the
/// last bin.
pub fn bin_index(v: f64, bins: usize, lo: f64, hi: f64) -> usize {
    (((v - lo) / (hi - lo) * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

/// Lower edge of bin `cut`.
pub fn bin_edge(cut: usize, bins: usize, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * cut as f64 / bins as f64
}

fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<u64> {
    let mut hist = vec![0u64; bins];
    for &v in values {
        hist[bin_index(v, bins, lo, hi)] += 1;
    }
    hist
}

/// Zeroes every value strictly below `tau`; the rest pass through unchanged.
pub fn apply_threshold(map: &SaliencyMap, tau: f64) -> SaliencyMap {
    let data = map.data.iter().map(|&v| if v < tau { 0.0 } else { v }).collect();
    SaliencyMap { rows: map.rows, cols: map.cols, data }
}

/// Saliency, Otsu threshold and zeroing in one call.
pub fn thresholded_saliency(image: &Image, params: &SaliencyParams, bins: usize) -> Result<(SaliencyMap, Threshold)> {
    let map = saliency_map(image, params)?;
    let t = otsu_threshold(map.values(), bins)?;
    Ok((apply_threshold(&map, t.tau), t))
}
