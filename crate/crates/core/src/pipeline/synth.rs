//! Synthetic scenes of a single moving object, rendered together with the
//! ground-truth flow of the object.
//!
//! Motion is visible in a still frame through a bright "head" band painted
//! on the leading edge of the object. Still objects carry no band.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, ManifestRow, Split};
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Square,
    Rect,
    Disc,
    Diamond,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Motion {
    Left,
    Right,
    Up,
    Down,
    Still,
}

impl Motion {
    pub const ALL: [Motion; 5] = [Motion::Left, Motion::Right, Motion::Up, Motion::Down, Motion::Still];

    /// Unit displacement in `(u, v)` image coordinates; `v` grows downward.
    pub fn direction(self) -> [f64; 2] {
        match self {
            Motion::Left => [-1.0, 0.0],
            Motion::Right => [1.0, 0.0],
            Motion::Up => [0.0, -1.0],
            Motion::Down => [0.0, 1.0],
            Motion::Still => [0.0, 0.0],
        }
    }

    pub fn group(self) -> &'static str {
        match self {
            Motion::Left | Motion::Right => "horizontal",
            Motion::Up | Motion::Down => "vertical",
            Motion::Still => "static",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Motion::Left => "left",
            Motion::Right => "right",
            Motion::Up => "up",
            Motion::Down => "down",
            Motion::Still => "still",
        }
    }
}

impl fmt::Display for Motion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Motion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Motion::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown motion class `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub rows: usize,
    pub cols: usize,
    /// Each sample draws its shape uniformly from this set.
    pub shapes: Vec<ShapeKind>,
    pub classes: Vec<Motion>,
    /// Std of the additive Gaussian pixel noise.
    pub noise: f64,
    /// Number of small distractor blobs per scene.
    pub clutter: usize,
    pub samples_per_class: usize,
    /// How many of each class's samples go to the test split.
    pub test_per_class: usize,
    /// Object extent in pixels, inclusive range.
    pub object_size: [usize; 2],
    /// Displacement magnitude in pixels, inclusive range.
    pub speed: [f64; 2],
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            rows: 32,
            cols: 32,
            shapes: vec![ShapeKind::Square, ShapeKind::Rect],
            classes: Motion::ALL.to_vec(),
            noise: 0.03,
            clutter: 2,
            samples_per_class: 100,
            test_per_class: 20,
            object_size: [6, 8],
            speed: [2.0, 4.0],
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Source task: squares and rectangles under all five motions.
    pub fn desk_source() -> Self {
        SyntheticSpec::default()
    }

    /// Target task: discs and diamonds moving left, right or up.
    pub fn desk_target() -> Self {
        SyntheticSpec {
            shapes: vec![ShapeKind::Disc, ShapeKind::Diamond],
            classes: vec![Motion::Left, Motion::Right, Motion::Up],
            samples_per_class: 130,
            test_per_class: 30,
            ..SyntheticSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.object_size;
        if self.shapes.is_empty() || self.classes.is_empty() {
            return Err(Error::config("synthetic spec needs at least one shape and one class"));
        }
        let mut seen = self.classes.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.classes.len() {
            return Err(Error::config("synthetic motion classes must be distinct"));
        }
        if lo < 3 || lo > hi || hi + 4 > self.rows.min(self.cols) {
            return Err(Error::config(format!(
                "object size range {lo}..={hi} does not fit a {}x{} scene",
                self.rows, self.cols
            )));
        }
        if !(self.speed[0] >= 0.0 && self.speed[0] <= self.speed[1] && self.speed[1].is_finite()) {
            return Err(Error::config("speed range must be finite and ordered"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config("noise must be non-negative"));
        }
        if self.test_per_class > self.samples_per_class {
            return Err(Error::config("test_per_class exceeds samples_per_class"));
        }
        Ok(())
    }
}

/// One rendered scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub image: Image,
    pub flow: FlowField,
    pub motion: Motion,
    pub shape: ShapeKind,
    /// Object mask, row-major.
    pub mask: Vec<bool>,
}

const HEAD_COLOR: [f64; 3] = [1.0, 0.95, 0.2];
const HEAD_DEPTH: i64 = 2;

fn inside(shape: ShapeKind, size: usize, aspect: f64, dr: f64, dc: f64) -> bool {
    // Offsets are measured from the object centre in pixels.
    let half = size as f64 / 2.0;
    match shape {
        ShapeKind::Square => dr.abs() < half && dc.abs() < half,
        ShapeKind::Rect => dr.abs() < half * aspect && dc.abs() < half,
        ShapeKind::Disc => dr * dr + dc * dc < half * half,
        ShapeKind::Diamond => dr.abs() + dc.abs() < half + 0.5,
    }
}

/// Renders one scene.
pub fn render_sample(spec: &SyntheticSpec, shape: ShapeKind, motion: Motion, rng: &mut ChaCha8Rng) -> SyntheticSample {
    let (rows, cols) = (spec.rows, spec.cols);
    let size = rng.random_range(spec.object_size[0]..=spec.object_size[1]);
    let aspect = rng.random_range(0.6..0.85);
    let speed = if spec.speed[0] == spec.speed[1] { spec.speed[0] } else { rng.random_range(spec.speed[0]..=spec.speed[1]) };
    let margin = 2.0 + size as f64 / 2.0;
    let cr = rng.random_range(margin..rows as f64 - margin);
    let cc = rng.random_range(margin..cols as f64 - margin);
    let bg = rng.random_range(0.45..0.75);
    let body = [rng.random_range(0.0..0.35), rng.random_range(0.0..0.35), rng.random_range(0.0..0.35)];
    let noise = Normal::new(0.0, spec.noise.max(1e-12)).expect("finite noise std");

    let mut img = Image::filled(rows, cols, 3, bg);
    for _ in 0..spec.clutter {
        let (r0, c0) = (rng.random_range(0..rows - 1), rng.random_range(0..cols - 1));
        let tone = rng.random_range(0.3..0.9);
        for (r, c) in [(r0, c0), (r0 + 1, c0), (r0, c0 + 1), (r0 + 1, c0 + 1)] {
            for ch in 0..3 {
                img.set(r, c, ch, tone);
            }
        }
    }

    let on = |r: i64, c: i64| -> bool {
        let dr = r as f64 + 0.5 - cr;
        let dc = c as f64 + 0.5 - cc;
        inside(shape, size, aspect, dr, dc)
    };
    let [du, dv] = motion.direction();
    let mut mask = vec![false; rows * cols];
    let mut flow = FlowField::zeros(rows, cols);
    for r in 0..rows as i64 {
        for c in 0..cols as i64 {
            if !on(r, c) {
                continue;
            }
            let idx = r as usize * cols + c as usize;
            mask[idx] = true;
            flow.set(r as usize, c as usize, [du * speed, dv * speed]);
            let ahead = motion != Motion::Still
                && (1..=HEAD_DEPTH).any(|k| !on(r + k * dv as i64, c + k * du as i64));
            let color = if ahead { HEAD_COLOR } else { body };
            for (ch, v) in color.into_iter().enumerate() {
                img.set(r as usize, c as usize, ch, v);
            }
        }
    }
    if spec.noise > 0.0 {
        for v in img.data_mut() {
            *v = (*v + noise.sample(rng)).clamp(0.0, 1.0);
        }
    }
    SyntheticSample { image: img, flow, motion, shape, mask }
}

/// Renders every sample of `spec` in manifest order: classes in the order
/// given, test samples last within each class.
pub fn synth_samples(spec: &SyntheticSpec) -> Result<Vec<(SyntheticSample, Split)>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.classes.len() * spec.samples_per_class);
    for &motion in &spec.classes {
        for i in 0..spec.samples_per_class {
            let shape = spec.shapes[rng.random_range(0..spec.shapes.len())];
            let sample = render_sample(spec, shape, motion, &mut rng);
            let split = if i < spec.samples_per_class - spec.test_per_class { Split::Train } else { Split::Test };
            out.push((sample, split));
        }
    }
    Ok(out)
}

/// Writes `<split>/<class>/<index>.ppm` plus a matching `.flo` for every
/// sample and a `manifest.csv` at the root of `out_dir`.
pub fn synth_generate(spec: &SyntheticSpec, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    let samples = synth_samples(spec)?;
    let mut rows = Vec::with_capacity(samples.len());
    for (i, (sample, split)) in samples.iter().enumerate() {
        let rel = format!("{}/{}/{:05}.ppm", split, sample.motion, i);
        let path = out_dir.join(&rel);
        let dir = path.parent().expect("sample path has a parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        sample.image.write_pnm(&path)?;
        sample.flow.write_flo(path.with_extension("flo"))?;
        rows.push(ManifestRow {
            path: rel.into(),
            label: sample.motion.to_string(),
            group: sample.motion.group().to_string(),
            split: *split,
        });
    }
    let manifest = DatasetManifest::new(out_dir, rows)?;
    manifest.save(out_dir.join("manifest.csv"))?;
    Ok(manifest)
}
