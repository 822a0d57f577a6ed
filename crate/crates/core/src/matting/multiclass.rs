//! One-vs-rest matting of every tissue class in a slice, fused by argmax.

use super::image::{AlphaMatte2D, BinaryMask2D, GrayImage2D, MatteParams, Trimap2D};
use super::laplacian::{build_laplacian, MattingLaplacian};
use super::solve::{solve_alpha, SolveReport};
use super::trimap::generate_trimap;
use crate::error::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-5;

/// Per-class probability planes of one slice; class index varies slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbSlice {
    width: usize,
    height: usize,
    classes: usize,
    data: Vec<f64>,
}

impl ClassProbSlice {
    pub fn new(width: usize, height: usize, classes: usize, data: Vec<f64>) -> Result<Self> {
        if classes < 2 {
            return Err(Error::usage(format!("need at least 2 classes, got {classes}")));
        }
        let n = width * height;
        if n == 0 || data.len() != n * classes {
            return Err(Error::usage(format!(
                "{classes} classes of {width}x{height} need {} values, got {}",
                n * classes,
                data.len()
            )));
        }
        for p in 0..n {
            let mut sum = 0.0;
            for c in 0..classes {
                let v = data[c * n + p];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::usage(format!(
                        "probability {v} at pixel {p}, class {c} outside [0, 1]"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::usage(format!(
                    "probabilities at pixel {p} sum to {sum}"
                )));
            }
        }
        Ok(Self {
            width,
            height,
            classes,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn prob(&self, class: usize, pixel: usize) -> f64 {
        self.data[class * self.width * self.height + pixel]
    }

    /// Most probable class per pixel; ties go to the lowest class index.
    pub fn argmax(&self) -> Vec<u8> {
        let n = self.width * self.height;
        (0..n)
            .map(|p| {
                let mut best = 0;
                for c in 1..self.classes {
                    if self.prob(c, p) > self.prob(best, p) {
                        best = c;
                    }
                }
                best as u8
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSlice {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
}

/// Matting outcome of one foreground class.
#[derive(Debug, Clone)]
pub struct ClassMatte {
    pub class: usize,
    pub trimap: Trimap2D,
    pub alpha: AlphaMatte2D,
    /// `None` when the trimap had no unknown pixels and the solve was skipped.
    pub report: Option<SolveReport>,
}

#[derive(Debug, Clone)]
pub struct SliceMatte {
    pub labels: LabelSlice,
    /// One entry per foreground class `1..C`.
    pub classes: Vec<ClassMatte>,
}

fn class_mask(argmax: &[u8], class: usize, width: usize, height: usize) -> Result<BinaryMask2D> {
    BinaryMask2D::new(
        width,
        height,
        argmax.iter().map(|&l| l as usize == class).collect(),
    )
}

/// For each foreground class, builds a trimap from the two paths' argmax
/// masks and solves its alpha matte on `img`. The final label of a pixel is
/// the class with the largest alpha, or background if no alpha exceeds
/// `params.alpha_threshold`.
pub fn matte_slice_multiclass(
    img: &GrayImage2D,
    probs_source: &ClassProbSlice,
    probs_lowrank: &ClassProbSlice,
    params: &MatteParams,
) -> Result<SliceMatte> {
    params.validate()?;
    let (w, h) = (img.width(), img.height());
    for probs in [probs_source, probs_lowrank] {
        if (probs.width(), probs.height()) != (w, h) {
            return Err(Error::usage(format!(
                "probability slice {}x{} does not match image {w}x{h}",
                probs.width(),
                probs.height()
            )));
        }
    }
    if probs_source.classes() != probs_lowrank.classes() {
        return Err(Error::usage(format!(
            "class counts differ between paths: {} vs {}",
            probs_source.classes(),
            probs_lowrank.classes()
        )));
    }

    let source_labels = probs_source.argmax();
    let lowrank_labels = probs_lowrank.argmax();
    let mut laplacian: Option<MattingLaplacian> = None;
    let mut classes = Vec::with_capacity(probs_source.classes() - 1);

    for class in 1..probs_source.classes() {
        let trimap = generate_trimap(
            &class_mask(&source_labels, class, w, h)?,
            &class_mask(&lowrank_labels, class, w, h)?,
        )?;
        if trimap.counts().unknown == 0 {
            let alpha = trimap
                .labels()
                .iter()
                .map(|l| if *l == super::TrimapLabel::Foreground { 1.0 } else { 0.0 })
                .collect();
            classes.push(ClassMatte {
                class,
                alpha: AlphaMatte2D::new(w, h, alpha)?,
                trimap,
                report: None,
            });
            continue;
        }
        if laplacian.is_none() {
            laplacian = Some(build_laplacian(img, params)?);
        }
        let lap = laplacian.as_ref().expect("built above");
        let solution = solve_alpha(lap, &trimap, params)?;
        classes.push(ClassMatte {
            class,
            alpha: solution.matte,
            trimap,
            report: Some(solution.report),
        });
    }

    let labels = (0..w * h)
        .map(|p| {
            let mut best: Option<(usize, f64)> = None;
            for cm in &classes {
                let a = cm.alpha.alpha()[p];
                if best.is_none_or(|(_, b)| a > b) {
                    best = Some((cm.class, a));
                }
            }
            match best {
                Some((c, a)) if a > params.alpha_threshold => c as u8,
                _ => 0,
            }
        })
        .collect();

    Ok(SliceMatte {
        labels: LabelSlice {
            width: w,
            height: h,
            labels,
        },
        classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(labels: &[u8], classes: usize, w: usize, h: usize) -> ClassProbSlice {
        let n = w * h;
        let mut data = vec![0.0; n * classes];
        for (p, &l) in labels.iter().enumerate() {
            data[l as usize * n + p] = 1.0;
        }
        ClassProbSlice::new(w, h, classes, data).unwrap()
    }

    fn banded(w: usize, h: usize, rows: std::ops::Range<usize>, class: u8) -> Vec<u8> {
        (0..w * h)
            .map(|p| if rows.contains(&(p / w)) { class } else { 0 })
            .collect()
    }

    #[test]
    fn identical_paths_reproduce_argmax() {
        let (w, h) = (10, 10);
        let mut labels = banded(w, h, 3..6, 1);
        for p in 70..80 {
            labels[p] = 2;
        }
        let probs = one_hot(&labels, 3, w, h);
        let img = GrayImage2D::new(w, h, vec![0.3; w * h]).unwrap();
        let out = matte_slice_multiclass(&img, &probs, &probs, &MatteParams::default()).unwrap();
        assert_eq!(out.labels.labels, labels);
        assert!(out.classes.iter().all(|c| c.report.is_none()));
    }

    #[test]
    fn background_only_gives_background() {
        let (w, h) = (6, 6);
        let probs = one_hot(&vec![0; w * h], 3, w, h);
        let img = GrayImage2D::new(w, h, vec![0.5; w * h]).unwrap();
        let out = matte_slice_multiclass(&img, &probs, &probs, &MatteParams::default()).unwrap();
        assert!(out.labels.labels.iter().all(|l| *l == 0));
    }

    #[test]
    fn disagreement_ring_is_resolved_by_intensity() {
        // Tissue occupies rows 3..7; the source path misses its outer rows.
        let (w, h) = (12, 12);
        let truth = banded(w, h, 3..7, 1);
        let source = banded(w, h, 4..6, 1);
        let pixels = truth.iter().map(|&l| if l == 1 { 0.8 } else { 0.2 }).collect();
        let img = GrayImage2D::new(w, h, pixels).unwrap();
        let out = matte_slice_multiclass(
            &img,
            &one_hot(&source, 2, w, h),
            &one_hot(&truth, 2, w, h),
            &MatteParams::default(),
        )
        .unwrap();
        assert_eq!(out.labels.labels, truth);
        for p in 0..w * h {
            if out.labels.labels[p] != source[p] {
                let row = p / w;
                assert!(row == 3 || row == 6, "changed pixel {p} outside the ring");
            }
        }
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let img = GrayImage2D::new(4, 4, vec![0.5; 16]).unwrap();
        let a = one_hot(&vec![0; 16], 2, 4, 4);
        let b = one_hot(&vec![0; 16], 3, 4, 4);
        assert!(matches!(
            matte_slice_multiclass(&img, &a, &b, &MatteParams::default()),
            Err(Error::Usage(_))
        ));
        assert!(ClassProbSlice::new(2, 1, 2, vec![0.5, 0.5, 0.6, 0.5]).is_err());
    }
}
