//! Sparse matting Laplacian built from local linear intensity models.

use super::image::{GrayImage2D, MatteParams};
use crate::error::{Error, Result};
use crate::lowrank::Matrix;

/// Compressed sparse row matrix with sorted column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[span.clone()].binary_search(&j) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yi = acc;
        }
    }

    /// `self + diag(d)`. Every row must already store its diagonal entry.
    pub fn with_added_diagonal(&self, d: &[f64]) -> CsrMatrix {
        let mut out = self.clone();
        for (i, di) in d.iter().enumerate() {
            let span = self.row_ptr[i]..self.row_ptr[i + 1];
            if let Ok(k) = self.col_idx[span.clone()].binary_search(&i) {
                out.values[span.start + k] += di;
            }
        }
        out
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Exact (bitwise) symmetry check.
    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| self.get(j, i) == v))
    }
}

/// The matting Laplacian of one image. Row/column `i` is pixel `x + width * y`.
#[derive(Debug, Clone, PartialEq)]
pub struct MattingLaplacian {
    width: usize,
    height: usize,
    matrix: CsrMatrix,
}

impl MattingLaplacian {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dim(&self) -> usize {
        self.matrix.n
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }
}

/// Accumulates the window affinities
/// `W_ij = Σ_k (1/|N_k|) (1 + (I_i − μ_k)(I_j − μ_k) / (σ²_k + eps/|N_k|))`
/// over every full window `N_k` containing both pixels, and returns `L = D − W`
/// with `D_ii = Σ_{j≠i} W_ij`.
pub fn build_laplacian(img: &GrayImage2D, params: &MatteParams) -> Result<MattingLaplacian> {
    params.validate()?;
    let r = params.window_radius;
    let side = 2 * r + 1;
    let (w, h) = (img.width(), img.height());
    if w < side || h < side {
        return Err(Error::usage(format!(
            "image {w}x{h} is smaller than one {side}x{side} window"
        )));
    }

    // Each pixel couples only to pixels within 2r in both directions, so the
    // affinities live in a fixed stencil of (4r+1)^2 slots per pixel.
    let reach = 2 * r;
    let span = 2 * reach + 1;
    let slots = span * span;
    let n = w * h;
    let mut affinity = vec![0.0f64; n * slots];
    let mut touched = vec![false; n * slots];
    let slot = |dx: isize, dy: isize| -> usize {
        (dy + reach as isize) as usize * span + (dx + reach as isize) as usize
    };

    let window_size = (side * side) as f64;
    let mut coords = Vec::with_capacity(side * side);
    let mut dev = Vec::with_capacity(side * side);
    for cy in r..h - r {
        for cx in r..w - r {
            coords.clear();
            dev.clear();
            for y in cy - r..=cy + r {
                for x in cx - r..=cx + r {
                    coords.push((x, y));
                    dev.push(img.at(x, y));
                }
            }
            let mean = dev.iter().sum::<f64>() / window_size;
            for d in dev.iter_mut() {
                *d -= mean;
            }
            let var = dev.iter().map(|d| d * d).sum::<f64>() / window_size;
            let inv = 1.0 / (var + params.eps / window_size);

            for a in 0..coords.len() {
                for b in a + 1..coords.len() {
                    let wab = (1.0 + dev[a] * dev[b] * inv) / window_size;
                    let (xa, ya) = coords[a];
                    let (xb, yb) = coords[b];
                    let pa = xa + w * ya;
                    let pb = xb + w * yb;
                    let dx = xb as isize - xa as isize;
                    let dy = yb as isize - ya as isize;
                    let ab = pa * slots + slot(dx, dy);
                    let ba = pb * slots + slot(-dx, -dy);
                    affinity[ab] += wab;
                    affinity[ba] += wab;
                    touched[ab] = true;
                    touched[ba] = true;
                }
            }
        }
    }

    let centre = slot(0, 0);
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    for y in 0..h {
        for x in 0..w {
            let p = x + w * y;
            let row = &affinity[p * slots..(p + 1) * slots];
            let row_touched = &touched[p * slots..(p + 1) * slots];
            let degree: f64 = row
                .iter()
                .zip(row_touched)
                .filter(|(_, t)| **t)
                .map(|(v, _)| *v)
                .sum();
            // Slots are ordered by (dy, dx), which is increasing column order.
            for s in 0..slots {
                if s == centre {
                    col_idx.push(p);
                    values.push(degree);
                    continue;
                }
                if !row_touched[s] {
                    continue;
                }
                let dx = (s % span) as isize - reach as isize;
                let dy = (s / span) as isize - reach as isize;
                let q = (x as isize + dx) as usize + w * (y as isize + dy) as usize;
                col_idx.push(q);
                values.push(-row[s]);
            }
            row_ptr.push(col_idx.len());
        }
    }

    Ok(MattingLaplacian {
        width: w,
        height: h,
        matrix: CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> GrayImage2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage2D::new(w, h, (0..w * h).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    /// Direct evaluation of the window affinity formula on a single window.
    fn single_window_affinity(pixels: &[f64], eps: f64) -> Vec<Vec<f64>> {
        let n = pixels.len() as f64;
        let mean = pixels.iter().sum::<f64>() / n;
        let var = pixels.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
        pixels
            .iter()
            .map(|pi| {
                pixels
                    .iter()
                    .map(|pj| (1.0 + (pi - mean) * (pj - mean) / (var + eps / n)) / n)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn three_by_three_matches_direct_formula() {
        let pixels: Vec<f64> = (0..9).map(|i| i as f64 / 8.0).collect();
        let img = GrayImage2D::new(3, 3, pixels.clone()).unwrap();
        let params = MatteParams::default();
        let lap = build_laplacian(&img, &params).unwrap();
        let w = single_window_affinity(&pixels, params.eps);
        for i in 0..9 {
            let degree: f64 = (0..9).filter(|&j| j != i).map(|j| w[i][j]).sum();
            assert!((lap.matrix().get(i, i) - degree).abs() < 1e-12);
            for j in 0..9 {
                if i != j {
                    assert!((lap.matrix().get(i, j) + w[i][j]).abs() < 1e-12, "entry ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn constant_image_uses_uniform_affinities() {
        let img = GrayImage2D::new(5, 4, vec![0.4; 20]).unwrap();
        let lap = build_laplacian(&img, &MatteParams::default()).unwrap();
        let m = lap.matrix();
        // Pixels (1,1) and (2,1) share the windows centred at (1..=2, 1..=2).
        let i = 1 + 5;
        let j = 2 + 5;
        assert!((m.get(i, j) + 4.0 / 9.0).abs() < 1e-12);
        let mut ones = vec![0.0; 20];
        m.mul_vec(&vec![1.0; 20], &mut ones);
        assert!(ones.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn structure_on_random_image() {
        let img = random_image(9, 7, 3);
        let lap = build_laplacian(&img, &MatteParams::default()).unwrap();
        let m = lap.matrix();
        assert!(m.is_symmetric());
        for i in 0..m.dim() {
            let s: f64 = m.row(i).map(|(_, v)| v).sum();
            assert!(s.abs() <= 1e-8);
        }
        let eig = nalgebra::SymmetricEigen::new(m.to_dense());
        assert!(eig.eigenvalues.min() > -1e-8);
    }

    #[test]
    fn image_too_small() {
        let img = GrayImage2D::new(2, 5, vec![0.1; 10]).unwrap();
        assert!(matches!(
            build_laplacian(&img, &MatteParams::default()),
            Err(Error::Usage(_))
        ));
        let img = GrayImage2D::new(3, 3, vec![0.1; 9]).unwrap();
        let bad = MatteParams {
            eps: 0.0,
            ..Default::default()
        };
        assert!(matches!(build_laplacian(&img, &bad), Err(Error::Usage(_))));
    }

    #[test]
    fn sparsity_stays_within_stencil() {
        let img = random_image(8, 8, 4);
        let lap = build_laplacian(&img, &MatteParams::default()).unwrap();
        let m = lap.matrix();
        for i in 0..m.dim() {
            let (xi, yi) = (i % 8, i / 8);
            for (j, _) in m.row(i) {
                let (xj, yj) = (j % 8, j / 8);
                assert!(xi.abs_diff(xj) <= 2 && yi.abs_diff(yj) <= 2);
            }
        }
    }
}
