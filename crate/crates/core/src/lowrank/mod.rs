//! Low-rank Tucker reconstruction of MRI-like volumes.
//!
//! A volume `(I1, I2, S)` is cut along its slice axis into consecutive,
//! non-overlapping blocks. Each block is decomposed with full spatial rank and
//! a truncated slice rank, then rebuilt from its Tucker model. Only the slice
//! mode is compressed, so in-plane structure is kept while slice-to-slice
//! redundancy is removed.

mod tensor;
mod tucker;

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use tensor::{fold, mode_product, unfold, DenseTensor3, Dims, Matrix};
pub use tucker::{hooi, hosvd, tucker_reconstruct, HooiOutcome, TuckerFactors, TuckerRank};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LowRankConfig {
    /// Slices per block.
    pub block_depth: usize,
    /// Retained rank along the slice axis of each block.
    pub slice_rank: usize,
    pub hooi_tol: f64,
    pub hooi_max_iter: usize,
}

impl Default for LowRankConfig {
    fn default() -> Self {
        Self {
            block_depth: 10,
            slice_rank: 3,
            hooi_tol: 1e-7,
            hooi_max_iter: 50,
        }
    }
}

impl LowRankConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_depth < 1 {
            return Err(Error::usage("block_depth must be at least 1"));
        }
        if self.slice_rank < 1 {
            return Err(Error::usage("slice_rank must be at least 1"));
        }
        if !(self.hooi_tol > 0.0) {
            return Err(Error::usage(format!(
                "hooi_tol must be positive, got {}",
                self.hooi_tol
            )));
        }
        if self.hooi_max_iter < 1 {
            return Err(Error::usage("hooi_max_iter must be at least 1"));
        }
        Ok(())
    }
}

/// Consecutive slice ranges of at most `block_depth` slices covering `0..slices`.
pub fn block_ranges(slices: usize, block_depth: usize) -> Vec<Range<usize>> {
    (0..slices)
        .step_by(block_depth.max(1))
        .map(|start| start..(start + block_depth).min(slices))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSummary {
    pub slices: Range<usize>,
    pub ranks: TuckerRank,
    pub iterations: usize,
    pub fit: f64,
}

pub fn blockwise_lowrank(volume: &DenseTensor3, cfg: &LowRankConfig) -> Result<DenseTensor3> {
    blockwise_lowrank_with_summary(volume, cfg).map(|(v, _)| v)
}

/// Like [`blockwise_lowrank`], also returning one summary per processed block.
///
/// Blocks run on the current rayon pool; results are collected in slice order
/// so the output does not depend on the pool size.
pub fn blockwise_lowrank_with_summary(
    volume: &DenseTensor3,
    cfg: &LowRankConfig,
) -> Result<(DenseTensor3, Vec<BlockSummary>)> {
    cfg.validate()?;
    let (i1, i2, slices) = volume.dims();
    let blocks: Vec<Result<(DenseTensor3, BlockSummary)>> = block_ranges(slices, cfg.block_depth)
        .into_par_iter()
        .map(|range| {
            let block = volume.slab(range.clone())?;
            let ranks = TuckerRank(i1, i2, cfg.slice_rank.min(range.len()));
            let out = hooi(&block, ranks, cfg)?;
            let rebuilt = out.factors.reconstruct()?;
            Ok((
                rebuilt,
                BlockSummary {
                    slices: range,
                    ranks,
                    iterations: out.iterations,
                    fit: out.final_fit(),
                },
            ))
        })
        .collect();

    let mut parts = Vec::with_capacity(blocks.len());
    let mut summaries = Vec::with_capacity(blocks.len());
    for b in blocks {
        let (part, summary) = b?;
        parts.push(part);
        summaries.push(summary);
    }
    Ok((DenseTensor3::concat_slices(&parts)?, summaries))
}
