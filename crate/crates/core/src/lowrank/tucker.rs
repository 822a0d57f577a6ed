//! Tucker decomposition of 3-mode tensors: HOSVD initialisation and
//! higher-order orthogonal iteration (HOOI).

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use super::tensor::{mode_product, unfold, DenseTensor3, Dims, Matrix};
use super::LowRankConfig;
use crate::error::{Error, Result};

const EIGEN_MAX_ITER: usize = 10_000;

/// Multilinear rank `(R1, R2, R3)` of a Tucker model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TuckerRank(pub usize, pub usize, pub usize);

impl TuckerRank {
    pub fn full(dims: Dims) -> Self {
        TuckerRank(dims.0, dims.1, dims.2)
    }

    pub fn get(&self, mode: usize) -> usize {
        match mode {
            1 => self.0,
            2 => self.1,
            _ => self.2,
        }
    }

    pub fn validate_for(&self, dims: Dims) -> Result<()> {
        let pairs = [(self.0, dims.0), (self.1, dims.1), (self.2, dims.2)];
        for (mode, (r, i)) in pairs.into_iter().enumerate() {
            if r == 0 || r > i {
                return Err(Error::usage(format!(
                    "rank {r} for mode {} must lie in 1..={i}",
                    mode + 1
                )));
            }
        }
        Ok(())
    }
}

/// Core tensor plus one orthonormal factor matrix per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerFactors {
    pub core: DenseTensor3,
    /// `factors[n]` is `I_{n+1} x R_{n+1}` with orthonormal columns.
    pub factors: [Matrix; 3],
}

impl TuckerFactors {
    pub fn ranks(&self) -> TuckerRank {
        TuckerRank::full(self.core.dims())
    }

    /// Largest entry of `|UₙᵀUₙ − I|` over the three factors.
    pub fn orthonormality_defect(&self) -> f64 {
        self.factors
            .iter()
            .map(|u| {
                let g = u.transpose() * u;
                let id = Matrix::identity(g.nrows(), g.ncols());
                (g - id).amax()
            })
            .fold(0.0, f64::max)
    }

    /// `core ×₁ U1 ×₂ U2 ×₃ U3`.
    pub fn reconstruct(&self) -> Result<DenseTensor3> {
        for (n, u) in self.factors.iter().enumerate() {
            if u.ncols() != self.core.dim(n + 1) {
                return Err(Error::usage(format!(
                    "factor {} has {} columns but the core has {} along that mode",
                    n + 1,
                    u.ncols(),
                    self.core.dim(n + 1)
                )));
            }
        }
        let t = mode_product(&self.core, &self.factors[0], 1)?;
        let t = mode_product(&t, &self.factors[1], 2)?;
        mode_product(&t, &self.factors[2], 3)
    }
}

pub fn tucker_reconstruct(f: &TuckerFactors) -> Result<DenseTensor3> {
    f.reconstruct()
}

#[derive(Debug, Clone)]
pub struct HooiOutcome {
    pub factors: TuckerFactors,
    /// Number of full sweeps over the three modes.
    pub iterations: usize,
    /// `‖core‖ / ‖t‖` after each sweep.
    pub fit_history: Vec<f64>,
}

impl HooiOutcome {
    pub fn final_fit(&self) -> f64 {
        self.fit_history.last().copied().unwrap_or(1.0)
    }
}

/// Leading `rank` left singular vectors of `a`, taken as the dominant
/// eigenvectors of `a aᵀ`. Ties in the spectrum keep the lower index first.
pub(crate) fn leading_left_singular_vectors(a: &Matrix, rank: usize) -> Result<Matrix> {
    let rows = a.nrows();
    let gram = a * a.transpose();
    let eig = SymmetricEigen::try_new(gram, f64::EPSILON, EIGEN_MAX_ITER).ok_or_else(|| {
        Error::Numeric(format!(
            "symmetric eigensolver did not converge on a {rows}x{rows} Gram matrix (max |entry| {:.3e})",
            a.amax()
        ))
    })?;
    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut u = Matrix::zeros(rows, rank);
    for (col, &src) in order.iter().take(rank).enumerate() {
        u.set_column(col, &eig.eigenvectors.column(src));
    }
    Ok(u)
}

fn project_all(t: &DenseTensor3, factors: &[Matrix; 3]) -> Result<DenseTensor3> {
    let c = mode_product(t, &factors[0].transpose(), 1)?;
    let c = mode_product(&c, &factors[1].transpose(), 2)?;
    mode_product(&c, &factors[2].transpose(), 3)
}

/// `t` projected onto every factor except mode `skip`.
fn project_except(t: &DenseTensor3, factors: &[Matrix; 3], skip: usize) -> Result<DenseTensor3> {
    let mut y = t.clone();
    for mode in 1..=3 {
        if mode != skip {
            y = mode_product(&y, &factors[mode - 1].transpose(), mode)?;
        }
    }
    Ok(y)
}

fn basis_factors(dims: Dims, ranks: TuckerRank) -> [Matrix; 3] {
    [
        Matrix::identity(dims.0, ranks.0),
        Matrix::identity(dims.1, ranks.1),
        Matrix::identity(dims.2, ranks.2),
    ]
}

fn zero_decomposition(dims: Dims, ranks: TuckerRank) -> Result<TuckerFactors> {
    Ok(TuckerFactors {
        core: DenseTensor3::zeros((ranks.0, ranks.1, ranks.2))?,
        factors: basis_factors(dims, ranks),
    })
}

pub fn hosvd(t: &DenseTensor3, ranks: TuckerRank) -> Result<TuckerFactors> {
    ranks.validate_for(t.dims())?;
    if t.frobenius_norm() == 0.0 {
        return zero_decomposition(t.dims(), ranks);
    }
    let factors = [
        leading_left_singular_vectors(&unfold(t, 1)?, ranks.0)?,
        leading_left_singular_vectors(&unfold(t, 2)?, ranks.1)?,
        leading_left_singular_vectors(&unfold(t, 3)?, ranks.2)?,
    ];
    let core = project_all(t, &factors)?;
    Ok(TuckerFactors { core, factors })
}

/// Refines a HOSVD initialisation by alternating leading-subspace updates of
/// each mode. Stops once a sweep improves the fit by at most `cfg.hooi_tol`,
/// or after `cfg.hooi_max_iter` sweeps.
pub fn hooi(t: &DenseTensor3, ranks: TuckerRank, cfg: &LowRankConfig) -> Result<HooiOutcome> {
    let (tol, max_iter) = (cfg.hooi_tol, cfg.hooi_max_iter);
    if max_iter == 0 {
        return Err(Error::usage("HOOI needs at least one sweep"));
    }
    if !(tol > 0.0) {
        return Err(Error::usage(format!("HOOI tolerance must be positive, got {tol}")));
    }
    ranks.validate_for(t.dims())?;
    let norm = t.frobenius_norm();
    if norm == 0.0 {
        return Ok(HooiOutcome {
            factors: zero_decomposition(t.dims(), ranks)?,
            iterations: 1,
            fit_history: vec![1.0],
        });
    }

    let TuckerFactors {
        mut core,
        mut factors,
    } = hosvd(t, ranks)?;
    let mut prev_fit = core.frobenius_norm() / norm;
    let mut fit_history = Vec::new();
    let mut iterations = 0;

    while iterations < max_iter {
        for mode in 1..=3 {
            let y = project_except(t, &factors, mode)?;
            factors[mode - 1] = leading_left_singular_vectors(&unfold(&y, mode)?, ranks.get(mode))?;
        }
        core = project_all(t, &factors)?;
        iterations += 1;
        let fit = core.frobenius_norm() / norm;
        fit_history.push(fit);
        if fit - prev_fit <= tol {
            break;
        }
        prev_fit = fit;
    }

    Ok(HooiOutcome {
        factors: TuckerFactors { core, factors },
        iterations,
        fit_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(tol: f64, max_iter: usize) -> LowRankConfig {
        LowRankConfig {
            hooi_tol: tol,
            hooi_max_iter: max_iter,
            ..LowRankConfig::default()
        }
    }

    fn random_tensor(dims: Dims, seed: u64) -> DenseTensor3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseTensor3::from_fn(dims, |_, _, _| rng.random_range(-1.0..1.0)).unwrap()
    }

    fn rank_one(a: &[f64], b: &[f64], c: &[f64]) -> DenseTensor3 {
        DenseTensor3::from_fn((a.len(), b.len(), c.len()), |i, j, k| a[i] * b[j] * c[k]).unwrap()
    }

    fn unit(v: &[f64]) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    }

    #[test]
    fn full_rank_hosvd_reconstructs() {
        let t = random_tensor((4, 5, 3), 1);
        let f = hosvd(&t, TuckerRank::full(t.dims())).unwrap();
        assert!(t.relative_error(&f.reconstruct().unwrap()) < 1e-10);
        assert!(f.orthonormality_defect() < 1e-10);
    }

    #[test]
    fn rank_one_core_has_unit_magnitude() {
        let t = rank_one(&unit(&[1., 2., 3.]), &unit(&[0.5, -1.0]), &unit(&[2., 0., 1., 1.]));
        let f = hosvd(&t, TuckerRank(1, 1, 1)).unwrap();
        assert!((f.core.data()[0].abs() - 1.0).abs() < 1e-10);
        assert!(t.relative_error(&f.reconstruct().unwrap()) < 1e-6);
    }

    #[test]
    fn rank_bounds_are_checked() {
        let t = random_tensor((3, 3, 3), 2);
        assert!(matches!(hosvd(&t, TuckerRank(4, 1, 1)), Err(Error::Usage(_))));
        assert!(matches!(hosvd(&t, TuckerRank(0, 1, 1)), Err(Error::Usage(_))));
        assert!(matches!(hooi(&t, TuckerRank(1, 1, 1), &cfg(1e-7, 0)), Err(Error::Usage(_))));
    }

    #[test]
    fn hooi_on_model_matched_input_stops_after_one_sweep() {
        let t = rank_one(&unit(&[1., -2., 0.5]), &unit(&[3., 1., 1.]), &unit(&[1., 1.]));
        let out = hooi(&t, TuckerRank(1, 1, 1), &cfg(1e-7, 50)).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(t.relative_error(&out.factors.reconstruct().unwrap()) < 1e-6);
    }

    #[test]
    fn zero_tensor_convention() {
        let t = DenseTensor3::zeros((3, 4, 2)).unwrap();
        let out = hooi(&t, TuckerRank(2, 2, 1), &cfg(1e-7, 50)).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.fit_history, vec![1.0]);
        assert!(out.factors.core.data().iter().all(|v| *v == 0.0));
        assert_eq!(out.factors.factors[1], Matrix::identity(4, 2));
    }

    #[test]
    fn hooi_fit_is_monotone_and_beats_hosvd() {
        for seed in 0..5 {
            let t = random_tensor((6, 6, 6), 100 + seed);
            let ranks = TuckerRank(2, 2, 2);
            let hosvd_fit = hosvd(&t, ranks).unwrap().core.frobenius_norm() / t.frobenius_norm();
            let out = hooi(&t, ranks, &cfg(1e-12, 50)).unwrap();
            let mut prev = hosvd_fit;
            for &f in &out.fit_history {
                assert!(f >= prev - 1e-10, "fit decreased: {prev} -> {f}");
                prev = f;
            }
            assert!(out.final_fit() >= hosvd_fit - 1e-12);
            assert!(out.factors.orthonormality_defect() < 1e-8);
        }
    }

    #[test]
    fn energy_split_holds() {
        let t = random_tensor((5, 6, 4), 9);
        let f = hosvd(&t, TuckerRank(3, 2, 2)).unwrap();
        let x_hat = f.reconstruct().unwrap();
        let total = t.frobenius_norm().powi(2);
        let split = f.core.frobenius_norm().powi(2) + t.distance(&x_hat).powi(2);
        assert!((total - split).abs() <= 1e-6 * total);
    }

    #[test]
    fn reconstruct_rejects_mismatched_factors() {
        let f = TuckerFactors {
            core: DenseTensor3::zeros((2, 2, 2)).unwrap(),
            factors: [Matrix::identity(3, 2), Matrix::identity(3, 3), Matrix::identity(3, 2)],
        };
        assert!(matches!(f.reconstruct(), Err(Error::Usage(_))));
    }

    #[test]
    fn identity_factors_reconstruct_core() {
        let t = random_tensor((3, 2, 4), 5);
        let f = TuckerFactors {
            core: t.clone(),
            factors: [Matrix::identity(3, 3), Matrix::identity(2, 2), Matrix::identity(4, 4)],
        };
        assert_eq!(tucker_reconstruct(&f).unwrap(), t);
    }
}
