use super::image::{AlphaMatte2D, BinaryMask2D, Trimap2D, TrimapLabel};
use crate::error::{Error, Result};

/// Superimposes two binary predictions: both set is foreground, neither set is
/// background, disagreement is unknown.
pub fn generate_trimap(pred_source: &BinaryMask2D, pred_lowrank: &BinaryMask2D) -> Result<Trimap2D> {
    if (pred_source.width(), pred_source.height()) != (pred_lowrank.width(), pred_lowrank.height()) {
        return Err(Error::usage(format!(
            "prediction sizes differ: {}x{} vs {}x{}",
            pred_source.width(),
            pred_source.height(),
            pred_lowrank.width(),
            pred_lowrank.height()
        )));
    }
    let labels = pred_source
        .bits()
        .iter()
        .zip(pred_lowrank.bits())
        .map(|(&s, &t)| match (s, t) {
            (true, true) => TrimapLabel::Foreground,
            (false, false) => TrimapLabel::Background,
            _ => TrimapLabel::Unknown,
        })
        .collect();
    Trimap2D::new(pred_source.width(), pred_source.height(), labels)
}

/// Strict threshold: a pixel is set iff `alpha > threshold`.
pub fn alpha_to_mask(alpha: &AlphaMatte2D, threshold: f64) -> Result<BinaryMask2D> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::usage(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    BinaryMask2D::new(
        alpha.width(),
        alpha.height(),
        alpha.alpha().iter().map(|a| *a > threshold).collect(),
    )
}
