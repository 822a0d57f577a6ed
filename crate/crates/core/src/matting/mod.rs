//! Trimap fusion of two segmentation paths and alpha-matte refinement.
//!
//! Agreement between the paths fixes the foreground and background; the
//! disagreement band is resolved by minimising the matting-Laplacian energy
//! of the alpha matte on the source image subject to the trimap constraints.

mod image;
mod laplacian;
mod multiclass;
mod solve;
mod trimap;

pub use image::{
    AlphaMatte2D, BinaryMask2D, GrayImage2D, MatteParams, Trimap2D, TrimapCounts, TrimapLabel,
};
pub use laplacian::{build_laplacian, CsrMatrix, MattingLaplacian};
pub use multiclass::{matte_slice_multiclass, ClassMatte, ClassProbSlice, LabelSlice, SliceMatte};
pub use solve::{
    conjugate_gradient, constraint_system, solve_alpha, AlphaSolution, CgOutcome, SolveReport,
};
pub use trimap::{alpha_to_mask, generate_trimap};
