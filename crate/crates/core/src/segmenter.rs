//! Synthetic cartilage-like phantoms and a deterministic intensity-window
//! segmenter that stands in for a trained network.
//!
//! Phantoms are drawn from a ChaCha8 stream seeded with `rng_seed`, so the
//! same spec produces the same volume on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lowrank::DenseTensor3;
use crate::metrics::{LabelVolume, ProbVolume};

const MIN_DIMS: (usize, usize, usize) = (16, 16, 8);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub sheet_count: usize,
    /// Inclusive thickness range in voxels, measured along i2.
    pub thickness: [usize; 2],
    /// Mean intensity of each sheet. A single value is shared by all sheets.
    pub foreground_means: Vec<f64>,
    pub background_mean: f64,
    pub noise_sigma: f64,
    pub rng_seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [48, 48, 40],
            sheet_count: 2,
            thickness: [3, 5],
            foreground_means: vec![0.5, 0.8],
            background_mean: 0.15,
            noise_sigma: 0.03,
            rng_seed: 0,
        }
    }
}

impl PhantomSpec {
    fn sheet_mean(&self, sheet: usize) -> f64 {
        if self.foreground_means.len() == 1 {
            self.foreground_means[0]
        } else {
            self.foreground_means[sheet]
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [i1, i2, i3] = self.dims;
        if i1 < MIN_DIMS.0 || i2 < MIN_DIMS.1 || i3 < MIN_DIMS.2 {
            return Err(Error::usage(format!(
                "phantom dims {:?} below the minimum {MIN_DIMS:?}",
                self.dims
            )));
        }
        if self.sheet_count < 1 || self.sheet_count > 255 {
            return Err(Error::usage("sheet_count must lie in 1..=255"));
        }
        let [tmin, tmax] = self.thickness;
        if tmin < 1 || tmax < tmin {
            return Err(Error::usage(format!(
                "thickness range {:?} must satisfy 1 <= min <= max",
                self.thickness
            )));
        }
        if i2 / (self.sheet_count + 1) < tmax + 2 {
            return Err(Error::usage(format!(
                "{} sheets of thickness up to {tmax} do not fit in {i2} rows",
                self.sheet_count
            )));
        }
        if self.foreground_means.len() != 1 && self.foreground_means.len() != self.sheet_count {
            return Err(Error::usage(format!(
                "expected 1 or {} foreground means, got {}",
                self.sheet_count,
                self.foreground_means.len()
            )));
        }
        let intensities = self
            .foreground_means
            .iter()
            .chain(std::iter::once(&self.background_mean));
        for m in intensities {
            if !(0.0..=1.0).contains(m) {
                return Err(Error::usage(format!("mean intensity {m} outside [0, 1]")));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::usage("noise_sigma must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Smooth sheet geometry: the sheet occupies `thickness` rows along i2,
/// starting at a height that varies sinusoidally with i1 and i3.
struct Sheet {
    centre: f64,
    amp_in_plane: f64,
    phase_in_plane: f64,
    amp_slices: f64,
    phase_slices: f64,
    thickness: usize,
}

impl Sheet {
    fn first_row(&self, i1: usize, i3: usize, dims: [usize; 3]) -> i64 {
        let u = std::f64::consts::TAU * i1 as f64 / dims[0] as f64 + self.phase_in_plane;
        let v = std::f64::consts::PI * i3 as f64 / dims[2] as f64 + self.phase_slices;
        let centre = self.centre + self.amp_in_plane * u.sin() + self.amp_slices * v.sin();
        (centre - self.thickness as f64 / 2.0 + 0.5).floor() as i64
    }
}

/// Generates a noisy volume and its ground-truth labels (`1..=sheet_count`).
pub fn make_phantom(spec: &PhantomSpec) -> Result<(DenseTensor3, LabelVolume)> {
    spec.validate()?;
    let dims = spec.dims;
    let [n1, n2, n3] = dims;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);

    let gap = n2 as f64 / (spec.sheet_count + 1) as f64;
    let [tmin, tmax] = spec.thickness;
    // Keep neighbouring sheets apart and per-voxel shifts below one row.
    let budget = ((gap - tmax as f64 - 1.0) / 2.0).max(0.0);
    let max_in_plane = (0.8 * n1 as f64 / std::f64::consts::TAU).min(0.6 * budget);
    let max_slices = (0.8 * n3 as f64 / std::f64::consts::PI).min(0.4 * budget);

    let sheets: Vec<Sheet> = (0..spec.sheet_count)
        .map(|k| Sheet {
            centre: gap * (k + 1) as f64,
            amp_in_plane: max_in_plane * rng.random_range(0.5..=1.0),
            phase_in_plane: rng.random_range(0.0..std::f64::consts::TAU),
            amp_slices: max_slices * rng.random_range(0.5..=1.0),
            phase_slices: rng.random_range(0.0..std::f64::consts::TAU),
            thickness: rng.random_range(tmin..=tmax),
        })
        .collect();

    let mut labels = vec![0u8; n1 * n2 * n3];
    for (k, sheet) in sheets.iter().enumerate() {
        for i3 in 0..n3 {
            for i1 in 0..n1 {
                let start = sheet.first_row(i1, i3, dims);
                for i2 in start..start + sheet.thickness as i64 {
                    if (0..n2 as i64).contains(&i2) {
                        labels[i1 + n1 * (i2 as usize + n2 * i3)] = (k + 1) as u8;
                    }
                }
            }
        }
    }

    let intensities = labels
        .iter()
        .map(|&l| {
            let mean = if l == 0 {
                spec.background_mean
            } else {
                spec.sheet_mean(l as usize - 1)
            };
            let z: f64 = rng.sample(StandardNormal);
            (mean + spec.noise_sigma * z).clamp(0.0, 1.0)
        })
        .collect();

    Ok((
        DenseTensor3::new((n1, n2, n3), intensities)?,
        LabelVolume::new((n1, n2, n3), spec.sheet_count + 1, labels)?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StubParams {
    /// Intensity window `[lo, hi]` of each foreground class, in class order.
    pub windows: Vec<[f64; 2]>,
    /// In-plane box filter radius applied before scoring.
    pub smoothing_radius: usize,
    /// Depth, in voxels, of the predicted-region rim whose foreground score
    /// is suppressed.
    pub erosion_depth: usize,
    pub temperature: f64,
}

impl Default for StubParams {
    fn default() -> Self {
        Self {
            windows: vec![[0.35, 0.65], [0.65, 0.95]],
            smoothing_radius: 0,
            erosion_depth: 0,
            temperature: 0.05,
        }
    }
}

impl StubParams {
    pub fn class_count(&self) -> usize {
        self.windows.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.windows.is_empty() {
            return Err(Error::usage("at least one intensity window is required"));
        }
        for [lo, hi] in &self.windows {
            if !(0.0 <= *lo && lo < hi && *hi <= 1.0) {
                return Err(Error::usage(format!(
                    "intensity window [{lo}, {hi}] must satisfy 0 <= lo < hi <= 1"
                )));
            }
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::usage("temperature must be positive"));
        }
        Ok(())
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Box mean over the in-bounds part of each `(2r+1)^2` neighbourhood.
fn box_smooth(plane: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    if r == 0 {
        return plane.to_vec();
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..h {
        for x in 0..w {
            let (y0, y1) = (y.saturating_sub(r), (y + r).min(h - 1));
            let (x0, x1) = (x.saturating_sub(r), (x + r).min(w - 1));
            let mut acc = 0.0;
            for yy in y0..=y1 {
                for xx in x0..=x1 {
                    acc += plane[xx + w * yy];
                }
            }
            out[x + w * y] = acc / ((y1 - y0 + 1) * (x1 - x0 + 1)) as f64;
        }
    }
    out
}

/// One 3x3 erosion step; pixels outside the image count as set.
fn erode(mask: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for y in 0..h {
        for x in 0..w {
            if !mask[x + w * y] {
                continue;
            }
            let mut keep = true;
            'nb: for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    if !mask[xx + w * yy] {
                        keep = false;
                        break 'nb;
                    }
                }
            }
            out[x + w * y] = keep;
        }
    }
    out
}

/// Per-class scores of one slice, class-major (`scores[c][pixel]`).
fn slice_scores(plane: &[f64], w: usize, h: usize, params: &StubParams) -> Vec<Vec<f64>> {
    let clamped: Vec<f64> = plane.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let smooth = box_smooth(&clamped, w, h, params.smoothing_radius);
    let mut scores: Vec<Vec<f64>> = params
        .windows
        .iter()
        .map(|[lo, hi]| {
            let centre = 0.5 * (lo + hi);
            let half = 0.5 * (hi - lo);
            smooth
                .iter()
                .map(|v| logistic((half - (v - centre).abs()) / params.temperature))
                .collect()
        })
        .collect();

    if params.erosion_depth > 0 {
        let predicted = argmax_of(&scores, plane.len());
        for (c, class_scores) in scores.iter_mut().enumerate() {
            let region: Vec<bool> = predicted.iter().map(|&p| p == c + 1).collect();
            let mut core = region.clone();
            for _ in 0..params.erosion_depth {
                core = erode(&core, w, h);
            }
            for p in 0..region.len() {
                if region[p] && !core[p] {
                    class_scores[p] = class_scores[p].min(1.0 - class_scores[p]);
                }
            }
        }
    }
    scores
}

/// Class probabilities from foreground scores: background weight is
/// `Π (1 − s_c)`, class `c` weight is `s_c`.
fn normalise(scores: &[Vec<f64>], p: usize) -> Vec<f64> {
    let mut weights = Vec::with_capacity(scores.len() + 1);
    weights.push(scores.iter().map(|s| 1.0 - s[p]).product::<f64>());
    weights.extend(scores.iter().map(|s| s[p]));
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total).collect()
}

fn argmax_of(scores: &[Vec<f64>], n: usize) -> Vec<usize> {
    (0..n)
        .map(|p| {
            let probs = normalise(scores, p);
            let mut best = 0;
            for c in 1..probs.len() {
                if probs[c] > probs[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Scores every voxel against the class intensity windows and returns a
/// probability volume with `windows.len() + 1` classes (class 0 background).
/// Works slice by slice; input intensities are clamped to `[0, 1]`.
pub fn stub_segment(volume: &DenseTensor3, params: &StubParams) -> Result<ProbVolume> {
    params.validate()?;
    let (w, h, slices) = volume.dims();
    let plane = w * h;
    let classes = params.class_count();
    let per_slice: Vec<Vec<f64>> = (0..slices)
        .into_par_iter()
        .map(|i3| {
            let scores = slice_scores(volume.slice(i3), w, h, params);
            let mut out = vec![0.0; plane * classes];
            for p in 0..plane {
                for (c, prob) in normalise(&scores, p).into_iter().enumerate() {
                    out[c * plane + p] = prob;
                }
            }
            out
        })
        .collect();

    let n = plane * slices;
    let mut data = vec![0.0; n * classes];
    for (i3, slice) in per_slice.iter().enumerate() {
        for c in 0..classes {
            data[c * n + i3 * plane..c * n + (i3 + 1) * plane]
                .copy_from_slice(&slice[c * plane..(c + 1) * plane]);
        }
    }
    ProbVolume::new(volume.dims(), classes, data)
}
