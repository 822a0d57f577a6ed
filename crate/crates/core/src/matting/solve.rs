use super::image::{AlphaMatte2D, MatteParams, Trimap2D, TrimapLabel};
use super::laplacian::{CsrMatrix, MattingLaplacian};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradient for a symmetric positive definite
/// `a`, started from `x = 0`. Fails with [`Error::Convergence`] if the relative
/// residual `‖b − ax‖ / ‖b‖` is still above `tol` after `max_iter` steps.
pub fn conjugate_gradient(
    a: &CsrMatrix,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, CgOutcome)> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::usage(format!(
            "right-hand side has {} entries, matrix is {n}x{n}",
            b.len()
        )));
    }
    let mut x = vec![0.0; n];
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return Ok((
            x,
            CgOutcome {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, m)| r * m).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut residual = 1.0;

    for it in 0..max_iter {
        a.mul_vec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Numeric(format!(
                "conjugate gradient met non-positive curvature {pap:.3e} at iteration {it}"
            )));
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        residual = dot(&r, &r).sqrt() / b_norm;
        if residual <= tol {
            return Ok((
                x,
                CgOutcome {
                    iterations: it + 1,
                    relative_residual: residual,
                },
            ));
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Convergence {
        iterations: max_iter,
        residual,
        tolerance: tol,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub relative_residual: f64,
    /// Largest distance of any raw alpha outside `[0, 1]` before clamping.
    pub max_overshoot: f64,
}

#[derive(Debug, Clone)]
pub struct AlphaSolution {
    pub matte: AlphaMatte2D,
    /// Solver output before clamping to `[0, 1]`.
    pub raw: Vec<f64>,
    pub report: SolveReport,
}

impl AlphaSolution {
    /// Largest `|raw α − target|` over the trimap's constrained pixels.
    pub fn constraint_deviation(&self, trimap: &Trimap2D) -> f64 {
        self.raw
            .iter()
            .zip(trimap.labels())
            .filter_map(|(a, l)| match l {
                TrimapLabel::Foreground => Some((a - 1.0).abs()),
                TrimapLabel::Background => Some(a.abs()),
                TrimapLabel::Unknown => None,
            })
            .fold(0.0, f64::max)
    }
}

/// Constraint diagonal `D_S` and target vector `b_S` of a trimap.
pub fn constraint_system(trimap: &Trimap2D) -> (Vec<f64>, Vec<f64>) {
    trimap
        .labels()
        .iter()
        .map(|l| match l {
            TrimapLabel::Foreground => (1.0, 1.0),
            TrimapLabel::Background => (1.0, 0.0),
            TrimapLabel::Unknown => (0.0, 0.0),
        })
        .unzip()
}

/// Solves `(L + λ D_S) α = λ b_S` and clamps the result to `[0, 1]`.
pub fn solve_alpha(
    laplacian: &MattingLaplacian,
    trimap: &Trimap2D,
    params: &MatteParams,
) -> Result<AlphaSolution> {
    params.validate()?;
    if (laplacian.width(), laplacian.height()) != (trimap.width(), trimap.height()) {
        return Err(Error::usage(format!(
            "Laplacian is for a {}x{} image, trimap is {}x{}",
            laplacian.width(),
            laplacian.height(),
            trimap.width(),
            trimap.height()
        )));
    }
    let counts = trimap.counts();
    if counts.foreground + counts.background == 0 {
        return Err(Error::InfeasibleTrimap);
    }

    let (mask, target) = constraint_system(trimap);
    let penalty: Vec<f64> = mask.iter().map(|m| m * params.lambda).collect();
    let rhs: Vec<f64> = target.iter().map(|t| t * params.lambda).collect();
    let system = laplacian.matrix().with_added_diagonal(&penalty);
    let (raw, cg) = conjugate_gradient(&system, &rhs, params.solver_tol, params.solver_max_iter)?;

    let max_overshoot = raw
        .iter()
        .map(|a| (a - 1.0).max(-a).max(0.0))
        .fold(0.0, f64::max);
    let clamped = raw.iter().map(|a| a.clamp(0.0, 1.0)).collect();
    Ok(AlphaSolution {
        matte: AlphaMatte2D::new(trimap.width(), trimap.height(), clamped)?,
        raw,
        report: SolveReport {
            iterations: cg.iterations,
            relative_residual: cg.relative_residual,
            max_overshoot,
        },
    })
}
