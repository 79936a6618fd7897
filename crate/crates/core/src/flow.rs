//! Flow fields, the k-means motion codebook, label encoding and decoding of
//! per-pixel cluster probabilities back into flow.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Number of motion clusters used unless configured otherwise.
pub const DEFAULT_CLUSTERS: usize = 40;

/// Dense per-pixel displacement `(u, v)` in pixels per frame; `u` points
/// right and `v` points down.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    rows: usize,
    cols: usize,
    data: Vec<[f64; 2]>,
}

impl FlowField {
    pub fn new(rows: usize, cols: usize, data: Vec<[f64; 2]>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::data("flow field dims must be positive"));
        }
        if data.len() != rows * cols {
            return Err(Error::data(format!("flow field {rows}x{cols} needs {} vectors, got {}", rows * cols, data.len())));
        }
        if data.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::data("flow field contains non-finite components"));
        }
        Ok(FlowField { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        FlowField { rows, cols, data: vec![[0.0; 2]; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn vectors(&self) -> &[[f64; 2]] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> [f64; 2] {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, uv: [f64; 2]) {
        self.data[row * self.cols + col] = uv;
    }

    /// Middlebury `.flo` layout: tag 202021.25, i32 width, i32 height, then
    /// interleaved `u v` f32 pairs in row-major order (all little-endian).
    pub fn to_flo_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.data.len());
        out.extend_from_slice(&FLO_TAG.to_le_bytes());
        out.extend_from_slice(&(self.cols as i32).to_le_bytes());
        out.extend_from_slice(&(self.rows as i32).to_le_bytes());
        for [u, v] in &self.data {
            out.extend_from_slice(&(*u as f32).to_le_bytes());
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn write_flo(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_flo_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_flo(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let corrupt = |msg: &str| Error::Corrupt { path: path.to_path_buf(), msg: msg.into() };
        if bytes.len() < 12 || f32::from_le_bytes(bytes[0..4].try_into().unwrap()) != FLO_TAG {
            return Err(corrupt("missing .flo tag"));
        }
        let cols = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let rows = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if cols <= 0 || rows <= 0 {
            return Err(corrupt("non-positive flow dims"));
        }
        let (rows, cols) = (rows as usize, cols as usize);
        if bytes.len() != 12 + 8 * rows * cols {
            return Err(corrupt("flow body length does not match its dims"));
        }
        let data = bytes[12..]
            .chunks_exact(8)
            .map(|c| {
                [
                    f32::from_le_bytes(c[0..4].try_into().unwrap()) as f64,
                    f32::from_le_bytes(c[4..8].try_into().unwrap()) as f64,
                ]
            })
            .collect();
        FlowField::new(rows, cols, data)
    }
}

const FLO_TAG: f32 = 202021.25;

/// `C` motion centroids in canonical `(u, then v)` order, plus the
/// normalization range used to render flow as image channels.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowCodebook {
    centroids: Vec<[f64; 2]>,
    f_max: f64,
}

impl FlowCodebook {
    pub fn new(centroids: Vec<[f64; 2]>, f_max: f64) -> Result<Self> {
        if centroids.is_empty() {
            return Err(Error::config("codebook needs at least one centroid"));
        }
        if centroids.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::config("codebook centroids must be finite"));
        }
        if !(f_max.is_finite() && f_max > 0.0) {
            return Err(Error::config(format!("f_max must be positive, got {f_max}")));
        }
        Ok(FlowCodebook { centroids, f_max })
    }

    pub fn clusters(&self) -> usize {
        self.centroids.len()
    }

    pub fn centroids(&self) -> &[[f64; 2]] {
        &self.centroids
    }

    pub fn f_max(&self) -> f64 {
        self.f_max
    }

    pub fn with_f_max(mut self, f_max: f64) -> Result<Self> {
        if !(f_max.is_finite() && f_max > 0.0) {
            return Err(Error::config(format!("f_max must be positive, got {f_max}")));
        }
        self.f_max = f_max;
        Ok(self)
    }

    /// Nearest centroid by Euclidean distance; ties go to the lowest index.
    pub fn nearest(&self, uv: [f64; 2]) -> usize {
        nearest(&self.centroids, uv).0
    }

    /// `POFCB v1` text form: header, `C f_max`, then one `u v` line per
    /// centroid, printed with round-trip precision.
    pub fn to_text(&self) -> String {
        let mut s = format!("POFCB v1\n{} {}\n", self.clusters(), self.f_max);
        for [u, v] in &self.centroids {
            let _ = writeln!(s, "{u} {v}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("POFCB v1") {
            return Err(Error::data("codebook must start with `POFCB v1`"));
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::data(format!("bad number `{s}` in codebook: {e}")));
        let head: Vec<&str> = lines.next().unwrap_or("").split_whitespace().collect();
        let [c, f_max] = head[..] else {
            return Err(Error::data("codebook line 2 must be `C f_max`"));
        };
        let c: usize = c.parse().map_err(|_| Error::data(format!("bad cluster count `{c}`")))?;
        let mut centroids = Vec::with_capacity(c);
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [u, v] = parts[..] else {
                return Err(Error::data(format!("bad centroid line `{line}`")));
            };
            centroids.push([parse(u)?, parse(v)?]);
        }
        if centroids.len() != c {
            return Err(Error::data(format!("codebook declares {c} centroids but lists {}", centroids.len())));
        }
        FlowCodebook::new(centroids, parse(f_max)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (du, dv) = (a[0] - b[0], a[1] - b[1]);
    du * du + dv * dv
}

fn nearest(centroids: &[[f64; 2]], uv: [f64; 2]) -> (usize, f64) {
    let mut best = (0, dist2(centroids[0], uv));
    for (i, &c) in centroids.iter().enumerate().skip(1) {
        let d = dist2(c, uv);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Lloyd's k-means with k-means++ seeding over 2D flow vectors, followed
/// by Hartigan single-point refinement.
///
/// Identical samples are merged into weighted points first, which keeps
/// mostly-static flow sets cheap. An empty cluster is re-seeded at the point
/// farthest from its assigned centroid (lowest index on ties). The best of
/// `restarts` seeded runs is kept, and the result is sorted by `(u, v)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub clusters: usize,
    pub max_iters: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for KMeans {
    fn default() -> Self {
        KMeans { clusters: DEFAULT_CLUSTERS, max_iters: 100, restarts: 8, seed: 0 }
    }
}

/// Outcome of [`KMeans::fit_traced`]: the codebook and the SSE after every
/// assignment step of the winning run.
#[derive(Clone, Debug)]
pub struct KMeansRun {
    pub codebook: FlowCodebook,
    pub sse_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl KMeansRun {
    pub fn sse(&self) -> f64 {
        *self.sse_history.last().unwrap_or(&0.0)
    }
}

struct Weighted {
    points: Vec<[f64; 2]>,
    weights: Vec<f64>,
}

fn dedup(samples: &[[f64; 2]]) -> Weighted {
    let mut counts: BTreeMap<(u64, u64), usize> = BTreeMap::new();
    for s in samples {
        // canonical zero so that 0.0 and -0.0 merge
        let key = ((s[0] + 0.0).to_bits(), (s[1] + 0.0).to_bits());
        *counts.entry(key).or_default() += 1;
    }
    let mut pairs: Vec<([f64; 2], usize)> =
        counts.into_iter().map(|((u, v), n)| ([f64::from_bits(u), f64::from_bits(v)], n)).collect();
    pairs.sort_by(|a, b| a.0[0].total_cmp(&b.0[0]).then(a.0[1].total_cmp(&b.0[1])));
    Weighted { points: pairs.iter().map(|p| p.0).collect(), weights: pairs.iter().map(|p| p.1 as f64).collect() }
}

fn pick(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return 0;
    }
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if acc > target {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

fn assign(data: &Weighted, centroids: &[[f64; 2]], labels: &mut [usize], dists: &mut [f64]) -> f64 {
    let mut sse = 0.0;
    for (i, &p) in data.points.iter().enumerate() {
        let (l, d) = nearest(centroids, p);
        labels[i] = l;
        dists[i] = d;
        sse += data.weights[i] * d;
    }
    sse
}

impl KMeans {
    pub fn new(clusters: usize) -> Self {
        KMeans { clusters, ..Default::default() }
    }

    pub fn fit(&self, samples: &[[f64; 2]]) -> Result<FlowCodebook> {
        Ok(self.fit_traced(samples)?.codebook)
    }

    pub fn fit_traced(&self, samples: &[[f64; 2]]) -> Result<KMeansRun> {
        if samples.is_empty() {
            return Err(Error::config("k-means needs at least one sample"));
        }
        if samples.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::data("k-means samples must be finite"));
        }
        if self.clusters == 0 {
            return Err(Error::config("cluster count must be >= 1"));
        }
        let data = dedup(samples);
        if self.clusters > data.points.len() {
            return Err(Error::config(format!(
                "{} clusters requested but only {} distinct samples",
                self.clusters,
                data.points.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut best: Option<(Vec<[f64; 2]>, Vec<f64>, usize, bool)> = None;
        for _ in 0..self.restarts.max(1) {
            let run = self.lloyd(&data, &mut rng);
            let better = match &best {
                None => true,
                Some(b) => run.1.last() < b.1.last(),
            };
            if better {
                best = Some(run);
            }
        }
        let (mut centroids, sse_history, iterations, converged) = best.expect("at least one run");
        centroids.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        let f_max = abs_component_percentile(samples.iter().copied(), 0.99);
        Ok(KMeansRun { codebook: FlowCodebook::new(centroids, f_max)?, sse_history, iterations, converged })
    }

    fn seed_centroids(&self, data: &Weighted, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
        let mut centroids = vec![data.points[pick(rng, &data.weights)]];
        let mut d2: Vec<f64> = data.points.iter().map(|&p| dist2(p, centroids[0])).collect();
        while centroids.len() < self.clusters {
            let w: Vec<f64> = d2.iter().zip(&data.weights).map(|(d, w)| d * w).collect();
            let next = data.points[pick(rng, &w)];
            centroids.push(next);
            for (d, &p) in d2.iter_mut().zip(&data.points) {
                *d = d.min(dist2(p, next));
            }
        }
        centroids
    }

    fn lloyd(&self, data: &Weighted, rng: &mut ChaCha8Rng) -> (Vec<[f64; 2]>, Vec<f64>, usize, bool) {
        let k = self.clusters;
        let n = data.points.len();
        let mut centroids = self.seed_centroids(data, rng);
        let mut labels = vec![0; n];
        let mut dists = vec![0.0; n];
        let mut history = vec![assign(data, &centroids, &mut labels, &mut dists)];
        let mut iterations = 0;
        let mut converged = false;
        while iterations < self.max_iters {
            iterations += 1;
            let mut sums = vec![[0.0f64; 2]; k];
            let mut mass = vec![0.0f64; k];
            for ((&p, &w), &l) in data.points.iter().zip(&data.weights).zip(&labels) {
                sums[l][0] += w * p[0];
                sums[l][1] += w * p[1];
                mass[l] += w;
            }
            for j in 0..k {
                if mass[j] > 0.0 {
                    centroids[j] = [sums[j][0] / mass[j], sums[j][1] / mass[j]];
                }
            }
            for j in 0..k {
                if mass[j] > 0.0 {
                    continue;
                }
                let far = crate::nn::argmax(&dists);
                centroids[j] = data.points[far];
                dists[far] = 0.0;
                labels[far] = j;
            }
            let previous = labels.clone();
            history.push(assign(data, &centroids, &mut labels, &mut dists));
            if labels == previous {
                converged = true;
                break;
            }
        }
        if converged && hartigan(data, &mut centroids, &mut labels) {
            history.push(assign(data, &centroids, &mut labels, &mut dists));
        }
        (centroids, history, iterations, converged)
    }
}

/// Hartigan refinement of a Lloyd fixed point: moves single points between
/// clusters while that strictly lowers the SSE, updating both means after
/// each move. Escapes many Lloyd local optima. Returns whether anything
/// moved; `centroids` are left at the cluster means.
fn hartigan(data: &Weighted, centroids: &mut [[f64; 2]], labels: &mut [usize]) -> bool {
    let k = centroids.len();
    let mut mass = vec![0.0f64; k];
    let mut sums = vec![[0.0f64; 2]; k];
    for ((&p, &w), &l) in data.points.iter().zip(&data.weights).zip(labels.iter()) {
        mass[l] += w;
        sums[l][0] += w * p[0];
        sums[l][1] += w * p[1];
    }
    let mean = |s: [f64; 2], m: f64| [s[0] / m, s[1] / m];
    let mut moved_any = false;
    for _ in 0..100 {
        let mut moved = false;
        for (i, (&p, &w)) in data.points.iter().zip(&data.weights).enumerate() {
            let own = labels[i];
            let rest = mass[own] - w;
            if rest <= 0.0 {
                continue;
            }
            let removal = w * mass[own] / rest * dist2(p, mean(sums[own], mass[own]));
            let mut best: Option<(usize, f64)> = None;
            for j in (0..k).filter(|&j| j != own && mass[j] > 0.0) {
                let added = w * mass[j] / (mass[j] + w) * dist2(p, mean(sums[j], mass[j]));
                if added < removal * (1.0 - 1e-12) && best.is_none_or(|(_, b)| added < b) {
                    best = Some((j, added));
                }
            }
            if let Some((j, _)) = best {
                mass[own] -= w;
                sums[own] = [sums[own][0] - w * p[0], sums[own][1] - w * p[1]];
                mass[j] += w;
                sums[j] = [sums[j][0] + w * p[0], sums[j][1] + w * p[1]];
                labels[i] = j;
                moved = true;
            }
        }
        if !moved {
            break;
        }
        moved_any = true;
    }
    if moved_any {
        for j in 0..k {
            if mass[j] > 0.0 {
                centroids[j] = mean(sums[j], mass[j]);
            }
        }
    }
    moved_any
}

/// Convenience wrapper around [`KMeans`] with the default restart count.
pub fn kmeans_fit(samples: &[[f64; 2]], clusters: usize, max_iters: usize, seed: u64) -> Result<FlowCodebook> {
    KMeans { clusters, max_iters, seed, ..Default::default() }.fit(samples)
}

/// The `q`-quantile of `|u|` and `|v|` pooled over all vectors. Falls back to
/// the largest magnitude when the quantile is zero, and to 1 for all-zero
/// input.
pub fn abs_component_percentile(samples: impl Iterator<Item = [f64; 2]>, q: f64) -> f64 {
    let mut mags: Vec<f64> = samples.flat_map(|[u, v]| [u.abs(), v.abs()]).collect();
    if mags.is_empty() {
        return 1.0;
    }
    mags.sort_by(f64::total_cmp);
    let idx = ((q.clamp(0.0, 1.0) * (mags.len() - 1) as f64).round() as usize).min(mags.len() - 1);
    let p = mags[idx];
    if p > 0.0 {
        p
    } else if mags[mags.len() - 1] > 0.0 {
        mags[mags.len() - 1]
    } else {
        1.0
    }
}

/// Per-pixel cluster index, the ground truth of the spatial loss.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterLabelMap {
    rows: usize,
    cols: usize,
    clusters: usize,
    labels: Vec<u32>,
}

impl ClusterLabelMap {
    pub fn new(rows: usize, cols: usize, clusters: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != rows * cols {
            return Err(Error::data(format!("label map {rows}x{cols} needs {} labels, got {}", rows * cols, labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= clusters) {
            return Err(Error::data(format!("label {bad} out of range for {clusters} clusters")));
        }
        Ok(ClusterLabelMap { rows, cols, clusters, labels })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn clusters(&self) -> usize {
        self.clusters
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> usize {
        self.labels[row * self.cols + col] as usize
    }
}

pub fn encode_flow(flow: &FlowField, codebook: &FlowCodebook) -> ClusterLabelMap {
    let labels = flow.data.iter().map(|&uv| codebook.nearest(uv) as u32).collect();
    ClusterLabelMap { rows: flow.rows, cols: flow.cols, clusters: codebook.clusters(), labels }
}

/// `M x N x C` map of per-pixel cluster probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialProbMap {
    rows: usize,
    cols: usize,
    clusters: usize,
    data: Vec<f64>,
}

/// Per-pixel tolerance on the probability simplex.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

impl SpatialProbMap {
    pub fn new(rows: usize, cols: usize, clusters: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || clusters == 0 {
            return Err(Error::data("probability map dims must be positive"));
        }
        if data.len() != rows * cols * clusters {
            return Err(Error::data(format!(
                "probability map {rows}x{cols}x{clusters} needs {} values, got {}",
                rows * cols * clusters,
                data.len()
            )));
        }
        for (i, px) in data.chunks_exact(clusters).enumerate() {
            let sum: f64 = px.iter().sum();
            if px.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) || (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
                return Err(Error::data(format!("pixel {i} is not a probability distribution (sum {sum})")));
            }
        }
        Ok(SpatialProbMap { rows, cols, clusters, data })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.dims() {
            [r, c, k] | [1, r, c, k] => Self::new(r, c, k, t.data().to_vec()),
            ref d => Err(Error::data(format!("expected an M x N x C tensor, got dims {d:?}"))),
        }
    }

    pub fn uniform(rows: usize, cols: usize, clusters: usize) -> Self {
        SpatialProbMap { rows, cols, clusters, data: vec![1.0 / clusters as f64; rows * cols * clusters] }
    }

    pub fn one_hot(labels: &ClusterLabelMap) -> Self {
        let c = labels.clusters;
        let mut data = vec![0.0; labels.labels.len() * c];
        for (i, &l) in labels.labels.iter().enumerate() {
            data[i * c + l as usize] = 1.0;
        }
        SpatialProbMap { rows: labels.rows, cols: labels.cols, clusters: c, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn clusters(&self) -> usize {
        self.clusters
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.data[index * self.clusters..(index + 1) * self.clusters]
    }

    pub fn pixels(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.clusters)
    }

    /// Most likely cluster per pixel (lowest index on ties).
    pub fn argmax_labels(&self) -> ClusterLabelMap {
        let labels = self.pixels().map(|p| crate::nn::argmax(p) as u32).collect();
        ClusterLabelMap { rows: self.rows, cols: self.cols, clusters: self.clusters, labels }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    /// Probability-weighted mean of the centroids.
    #[default]
    Expected,
    /// Centroid of the most likely cluster.
    Argmax,
}

pub fn decode_flow(probs: &SpatialProbMap, codebook: &FlowCodebook, mode: DecodeMode) -> Result<FlowField> {
    if probs.clusters != codebook.clusters() {
        return Err(Error::config(format!(
            "probability map has {} clusters but the codebook has {}",
            probs.clusters,
            codebook.clusters()
        )));
    }
    let data = probs
        .pixels()
        .map(|p| match mode {
            DecodeMode::Expected => p.iter().zip(&codebook.centroids).fold([0.0, 0.0], |acc, (&w, c)| {
                [acc[0] + w * c[0], acc[1] + w * c[1]]
            }),
            DecodeMode::Argmax => codebook.centroids[crate::nn::argmax(p)],
        })
        .collect();
    Ok(FlowField { rows: probs.rows, cols: probs.cols, data })
}

/// Maps one flow component to `[0, 1]`: `clamp((x + f_max) / (2 f_max))`.
/// Zero motion lands on 0.5 exactly.
pub fn normalize_component(x: f64, f_max: f64) -> f64 {
    ((x + f_max) / (2.0 * f_max)).clamp(0.0, 1.0)
}

/// Horizontal and vertical channel planes of a flow field, row-major.
pub fn normalize_flow_channel(flow: &FlowField, f_max: f64) -> Result<[Vec<f64>; 2]> {
    if !(f_max.is_finite() && f_max > 0.0) {
        return Err(Error::config(format!("f_max must be positive, got {f_max}")));
    }
    let h = flow.data.iter().map(|uv| normalize_component(uv[0], f_max)).collect();
    let v = flow.data.iter().map(|uv| normalize_component(uv[1], f_max)).collect();
    Ok([h, v])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cluster_is_the_mean() {
        let cb = kmeans_fit(&[[1.0, 0.0], [3.0, 0.0]], 1, 10, 0).unwrap();
        assert_eq!(cb.centroids(), &[[2.0, 0.0]]);
    }

    #[test]
    fn two_clusters_split_the_groups() {
        let pts = [[0.0, 0.0], [0.0, 0.1], [5.0, 5.0], [5.0, 5.1]];
        let cb = kmeans_fit(&pts, 2, 50, 3).unwrap();
        let c = cb.centroids();
        assert!((c[0][0] - 0.0).abs() < 1e-12 && (c[0][1] - 0.05).abs() < 1e-12);
        assert!((c[1][0] - 5.0).abs() < 1e-12 && (c[1][1] - 5.05).abs() < 1e-12);
    }

    #[test]
    fn too_many_clusters_is_config_error() {
        let err = kmeans_fit(&[[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]], 3, 10, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(matches!(kmeans_fit(&[], 1, 10, 0), Err(Error::Config(_))));
    }

    #[test]
    fn default_cluster_count() {
        assert_eq!(KMeans::default().clusters, 40);
    }

    #[test]
    fn encode_ties_pick_lowest_index() {
        let cb = FlowCodebook::new(vec![[-1.0, 0.0], [1.0, 0.0], [0.0, 5.0]], 1.0).unwrap();
        let flow = FlowField::new(1, 3, vec![[0.0, 0.0], [1.0, 0.0], [0.0, 4.0]]).unwrap();
        assert_eq!(encode_flow(&flow, &cb).labels(), &[0, 1, 2]);
    }

    #[test]
    fn decode_examples() {
        let cb = FlowCodebook::new(vec![[0.0, 0.0], [4.0, 0.0]], 1.0).unwrap();
        let probs = SpatialProbMap::new(1, 1, 2, vec![0.25, 0.75]).unwrap();
        assert_eq!(decode_flow(&probs, &cb, DecodeMode::Expected).unwrap().get(0, 0), [3.0, 0.0]);
        assert_eq!(decode_flow(&probs, &cb, DecodeMode::Argmax).unwrap().get(0, 0), [4.0, 0.0]);

        let sym = FlowCodebook::new(vec![[-1.0, 0.0], [1.0, 0.0]], 1.0).unwrap();
        let uniform = SpatialProbMap::uniform(2, 2, 2);
        let flow = decode_flow(&uniform, &sym, DecodeMode::Expected).unwrap();
        assert!(flow.vectors().iter().all(|&uv| uv == [0.0, 0.0]));

        let three = SpatialProbMap::uniform(1, 1, 3);
        assert!(matches!(decode_flow(&three, &cb, DecodeMode::Expected), Err(Error::Config(_))));
    }

    #[test]
    fn one_hot_decodes_to_centroid_in_both_modes() {
        let cb = FlowCodebook::new(vec![[-2.0, 1.0], [0.5, 0.5], [3.0, -1.0]], 1.0).unwrap();
        let labels = ClusterLabelMap::new(1, 3, 3, vec![2, 0, 1]).unwrap();
        let probs = SpatialProbMap::one_hot(&labels);
        for mode in [DecodeMode::Expected, DecodeMode::Argmax] {
            let flow = decode_flow(&probs, &cb, mode).unwrap();
            assert_eq!(flow.vectors(), &[[3.0, -1.0], [-2.0, 1.0], [0.5, 0.5]]);
        }
    }

    #[test]
    fn channel_normalization() {
        let f = 2.5;
        assert_eq!(normalize_component(0.0, f), 0.5);
        assert_eq!(normalize_component(f, f), 1.0);
        assert_eq!(normalize_component(-f, f), 0.0);
        assert_eq!(normalize_component(2.0 * f, f), 1.0);
        let flow = FlowField::new(1, 1, vec![[0.0, 0.0]]).unwrap();
        assert!(normalize_flow_channel(&flow, 0.0).is_err());
    }

    #[test]
    fn codebook_text_round_trip() {
        let cb = FlowCodebook::new(vec![[-0.1, 1.0 / 3.0], [2.0, 1e-17]], 3.7).unwrap();
        let text = cb.to_text();
        assert!(text.starts_with("POFCB v1\n2 3.7\n"));
        assert_eq!(FlowCodebook::from_text(&text).unwrap(), cb);
        assert!(FlowCodebook::from_text("POFCB v2\n").is_err());
    }

    #[test]
    fn flo_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.flo");
        let flow = FlowField::new(2, 3, (0..6).map(|i| [i as f64, -(i as f64) * 0.5]).collect()).unwrap();
        flow.write_flo(&path).unwrap();
        assert_eq!(FlowField::read_flo(&path).unwrap(), flow);
    }

    #[test]
    fn invalid_simplex_rejected() {
        assert!(SpatialProbMap::new(1, 1, 2, vec![0.6, 0.6]).is_err());
        assert!(SpatialProbMap::new(1, 1, 2, vec![-0.1, 1.1]).is_err());
    }
}
