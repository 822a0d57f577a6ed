use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_size(width: usize, height: usize, len: usize, what: &str) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::usage(format!("{what} must have positive size")));
    }
    if width * height != len {
        return Err(Error::usage(format!(
            "{what} of {width}x{height} needs {} values, got {len}",
            width * height
        )));
    }
    Ok(())
}

/// Single-channel image with intensities in `[0, 1]`, stored row-major
/// (`x + width * y`).
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage2D {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage2D {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        check_size(width, height, pixels.len(), "image")?;
        if let Some(i) = pixels
            .iter()
            .position(|p| !p.is_finite() || *p < 0.0 || *p > 1.0)
        {
            return Err(Error::usage(format!(
                "pixel {i} has intensity {} outside [0, 1]",
                pixels[i]
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.pixels[x + self.width * y]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask2D {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask2D {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        check_size(width, height, bits.len(), "mask")?;
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum TrimapLabel {
    Background = 0,
    Unknown = 1,
    Foreground = 2,
}

impl TrimapLabel {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(TrimapLabel::Background),
            1 => Some(TrimapLabel::Unknown),
            2 => Some(TrimapLabel::Foreground),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trimap2D {
    width: usize,
    height: usize,
    labels: Vec<TrimapLabel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrimapCounts {
    pub foreground: usize,
    pub background: usize,
    pub unknown: usize,
}

impl Trimap2D {
    pub fn new(width: usize, height: usize, labels: Vec<TrimapLabel>) -> Result<Self> {
        check_size(width, height, labels.len(), "trimap")?;
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[TrimapLabel] {
        &self.labels
    }

    pub fn counts(&self) -> TrimapCounts {
        let mut c = TrimapCounts::default();
        for l in &self.labels {
            match l {
                TrimapLabel::Foreground => c.foreground += 1,
                TrimapLabel::Background => c.background += 1,
                TrimapLabel::Unknown => c.unknown += 1,
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaMatte2D {
    width: usize,
    height: usize,
    alpha: Vec<f64>,
}

impl AlphaMatte2D {
    pub fn new(width: usize, height: usize, alpha: Vec<f64>) -> Result<Self> {
        check_size(width, height, alpha.len(), "alpha matte")?;
        if let Some(i) = alpha
            .iter()
            .position(|a| !a.is_finite() || *a < 0.0 || *a > 1.0)
        {
            return Err(Error::usage(format!("alpha {i} = {} outside [0, 1]", alpha[i])));
        }
        Ok(Self {
            width,
            height,
            alpha,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }
}

/// Matting parameters. `window_radius = 1` gives 3x3 windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatteParams {
    pub window_radius: usize,
    /// Regulariser added to each window variance as `eps / |window|`.
    pub eps: f64,
    /// Weight of the trimap constraints.
    pub lambda: f64,
    /// Relative residual at which conjugate gradient stops.
    pub solver_tol: f64,
    pub solver_max_iter: usize,
    pub alpha_threshold: f64,
}

impl Default for MatteParams {
    fn default() -> Self {
        Self {
            window_radius: 1,
            eps: 1e-5,
            lambda: 100.0,
            solver_tol: 1e-7,
            solver_max_iter: 2000,
            alpha_threshold: 0.5,
        }
    }
}

impl MatteParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_radius < 1 {
            return Err(Error::usage("window_radius must be at least 1"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::usage(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::usage(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.solver_tol > 0.0) {
            return Err(Error::usage("solver_tol must be positive"));
        }
        if self.solver_max_iter < 1 {
            return Err(Error::usage("solver_max_iter must be at least 1"));
        }
        if !(self.alpha_threshold > 0.0 && self.alpha_threshold < 1.0) {
            return Err(Error::usage(format!(
                "alpha_threshold must lie in (0, 1), got {}",
                self.alpha_threshold
            )));
        }
        Ok(())
    }
}
