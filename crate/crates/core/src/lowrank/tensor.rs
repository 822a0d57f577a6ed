//! Dense 3-mode tensors and the mode-n matricization/product primitives.
//!
//! Storage is i1-fastest: element `(i1, i2, i3)` lives at
//! `i1 + I1 * (i2 + I2 * i3)`. The mode-n unfolding places `i_n` on the rows
//! and orders columns so that the lower-numbered remaining mode varies fastest.

use std::ops::Range;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

pub type Dims = (usize, usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor3 {
    dims: Dims,
    data: Vec<f64>,
}

impl DenseTensor3 {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        check_dims(dims)?;
        let expected = dims.0 * dims.1 * dims.2;
        if data.len() != expected {
            return Err(Error::usage(format!(
                "tensor of dims {dims:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite tensor element at flat index {pos}"
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Dims) -> Result<Self> {
        check_dims(dims)?;
        Ok(Self {
            dims,
            data: vec![0.0; dims.0 * dims.1 * dims.2],
        })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        check_dims(dims)?;
        let mut data = Vec::with_capacity(dims.0 * dims.1 * dims.2);
        for i3 in 0..dims.2 {
            for i2 in 0..dims.1 {
                for i1 in 0..dims.0 {
                    data.push(f(i1, i2, i3));
                }
            }
        }
        Self::new(dims, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn dim(&self, mode: usize) -> usize {
        match mode {
            1 => self.dims.0,
            2 => self.dims.1,
            _ => self.dims.2,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, i1: usize, i2: usize, i3: usize) -> usize {
        i1 + self.dims.0 * (i2 + self.dims.1 * i3)
    }

    #[inline]
    pub fn get(&self, i1: usize, i2: usize, i3: usize) -> f64 {
        self.data[self.index(i1, i2, i3)]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Frobenius norm of `self - other`.
    pub fn distance(&self, other: &DenseTensor3) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// `distance(other) / ‖self‖`, or the absolute distance for a zero tensor.
    pub fn relative_error(&self, other: &DenseTensor3) -> f64 {
        let norm = self.frobenius_norm();
        let d = self.distance(other);
        if norm > 0.0 {
            d / norm
        } else {
            d
        }
    }

    /// Copies the consecutive mode-3 slices in `range` into a new tensor.
    pub fn slab(&self, range: Range<usize>) -> Result<DenseTensor3> {
        if range.start >= range.end || range.end > self.dims.2 {
            return Err(Error::usage(format!(
                "slab {range:?} out of bounds for {} slices",
                self.dims.2
            )));
        }
        let plane = self.dims.0 * self.dims.1;
        Ok(DenseTensor3 {
            dims: (self.dims.0, self.dims.1, range.len()),
            data: self.data[range.start * plane..range.end * plane].to_vec(),
        })
    }

    /// Mode-3 slice `i3` as an i1-fastest plane.
    pub fn slice(&self, i3: usize) -> &[f64] {
        let plane = self.dims.0 * self.dims.1;
        &self.data[i3 * plane..(i3 + 1) * plane]
    }

    /// Concatenates tensors along mode 3. All parts must share (I1, I2).
    pub fn concat_slices(parts: &[DenseTensor3]) -> Result<DenseTensor3> {
        let first = parts
            .first()
            .ok_or_else(|| Error::usage("cannot concatenate zero slabs"))?;
        let (i1, i2, _) = first.dims;
        let mut depth = 0;
        let mut data = Vec::new();
        for p in parts {
            if (p.dims.0, p.dims.1) != (i1, i2) {
                return Err(Error::usage(format!(
                    "slab dims {:?} do not match ({i1}, {i2}, _)",
                    p.dims
                )));
            }
            depth += p.dims.2;
            data.extend_from_slice(&p.data);
        }
        Ok(DenseTensor3 {
            dims: (i1, i2, depth),
            data,
        })
    }
}

fn check_dims(dims: Dims) -> Result<()> {
    if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
        return Err(Error::usage(format!("tensor dims must be positive, got {dims:?}")));
    }
    Ok(())
}

fn check_mode(mode: usize) -> Result<()> {
    if !(1..=3).contains(&mode) {
        return Err(Error::usage(format!("mode must be 1, 2 or 3, got {mode}")));
    }
    Ok(())
}

fn dim_of(dims: Dims, mode: usize) -> usize {
    match mode {
        1 => dims.0,
        2 => dims.1,
        _ => dims.2,
    }
}

/// (row, column) of element `(i1, i2, i3)` in the mode-`mode` unfolding.
#[inline]
fn unfold_position(dims: Dims, mode: usize, i1: usize, i2: usize, i3: usize) -> (usize, usize) {
    match mode {
        1 => (i1, i2 + dims.1 * i3),
        2 => (i2, i1 + dims.0 * i3),
        _ => (i3, i1 + dims.0 * i2),
    }
}

pub fn unfold(t: &DenseTensor3, mode: usize) -> Result<Matrix> {
    check_mode(mode)?;
    let dims = t.dims;
    let rows = dim_of(dims, mode);
    let cols = t.len() / rows;
    let mut m = Matrix::zeros(rows, cols);
    let mut flat = 0;
    for i3 in 0..dims.2 {
        for i2 in 0..dims.1 {
            for i1 in 0..dims.0 {
                let (r, c) = unfold_position(dims, mode, i1, i2, i3);
                m[(r, c)] = t.data[flat];
                flat += 1;
            }
        }
    }
    Ok(m)
}

pub fn fold(m: &Matrix, mode: usize, dims: Dims) -> Result<DenseTensor3> {
    check_mode(mode)?;
    check_dims(dims)?;
    let rows = dim_of(dims, mode);
    let total = dims.0 * dims.1 * dims.2;
    if m.nrows() != rows || m.ncols() * rows != total {
        return Err(Error::usage(format!(
            "matrix of shape {}x{} cannot fold into dims {dims:?} along mode {mode}",
            m.nrows(),
            m.ncols()
        )));
    }
    let mut data = Vec::with_capacity(total);
    for i3 in 0..dims.2 {
        for i2 in 0..dims.1 {
            for i1 in 0..dims.0 {
                let (r, c) = unfold_position(dims, mode, i1, i2, i3);
                data.push(m[(r, c)]);
            }
        }
    }
    DenseTensor3::new(dims, data)
}

/// The n-mode product `t ×ₙ m`: every mode-n fiber of `t` is multiplied by `m`.
pub fn mode_product(t: &DenseTensor3, m: &Matrix, mode: usize) -> Result<DenseTensor3> {
    check_mode(mode)?;
    if m.ncols() != t.dim(mode) {
        return Err(Error::usage(format!(
            "mode-{mode} product needs a matrix with {} columns, got {}x{}",
            t.dim(mode),
            m.nrows(),
            m.ncols()
        )));
    }
    let mut dims = t.dims;
    match mode {
        1 => dims.0 = m.nrows(),
        2 => dims.1 = m.nrows(),
        _ => dims.2 = m.nrows(),
    }
    let product = m * unfold(t, mode)?;
    fold(&product, mode, dims)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counting() -> DenseTensor3 {
        DenseTensor3::from_fn((2, 2, 2), |a, b, c| (a + 2 * b + 4 * c) as f64).unwrap()
    }

    #[test]
    fn unfold_mode1_column_order() {
        let m = unfold(&counting(), 1).unwrap();
        let expected = Matrix::from_row_slice(2, 4, &[0., 2., 4., 6., 1., 3., 5., 7.]);
        assert_eq!(m, expected);
    }

    #[test]
    fn unfold_modes_2_and_3() {
        let t = counting();
        // mode 2: columns (i1, i3) with i1 fastest
        let m2 = unfold(&t, 2).unwrap();
        assert_eq!(m2, Matrix::from_row_slice(2, 4, &[0., 1., 4., 5., 2., 3., 6., 7.]));
        let m3 = unfold(&t, 3).unwrap();
        assert_eq!(m3, Matrix::from_row_slice(2, 4, &[0., 1., 2., 3., 4., 5., 6., 7.]));
    }

    #[test]
    fn fold_inverts_unfold_example() {
        let m = Matrix::from_row_slice(2, 4, &[0., 2., 4., 6., 1., 3., 5., 7.]);
        assert_eq!(fold(&m, 1, (2, 2, 2)).unwrap(), counting());
    }

    #[test]
    fn single_element_tensor() {
        let t = DenseTensor3::new((1, 1, 1), vec![3.5]).unwrap();
        for mode in 1..=3 {
            let m = unfold(&t, mode).unwrap();
            assert_eq!(m.shape(), (1, 1));
            assert_eq!(m[(0, 0)], 3.5);
            assert_eq!(fold(&m, mode, (1, 1, 1)).unwrap(), t);
        }
    }

    #[test]
    fn invalid_mode_and_shape() {
        let t = counting();
        assert!(matches!(unfold(&t, 0), Err(Error::Usage(_))));
        assert!(matches!(unfold(&t, 4), Err(Error::Usage(_))));
        let m = Matrix::zeros(3, 4);
        assert!(matches!(fold(&m, 1, (2, 2, 2)), Err(Error::Usage(_))));
        assert!(matches!(
            mode_product(&t, &Matrix::zeros(2, 3), 1),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn mode_product_sums_over_slices() {
        let ones = Matrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let r = mode_product(&counting(), &ones, 3).unwrap();
        assert_eq!(r.dims(), (2, 2, 1));
        // rows i1, columns i2: [[4, 8], [6, 10]]
        assert_eq!(r.get(0, 0, 0), 4.0);
        assert_eq!(r.get(0, 1, 0), 8.0);
        assert_eq!(r.get(1, 0, 0), 6.0);
        assert_eq!(r.get(1, 1, 0), 10.0);
    }

    #[test]
    fn mode_product_identity_and_scaling() {
        let t = DenseTensor3::from_fn((3, 4, 5), |a, b, c| (a * 7 + b * 3 + c) as f64 * 0.1).unwrap();
        for mode in 1..=3 {
            let n = t.dim(mode);
            let id = Matrix::identity(n, n);
            assert_eq!(mode_product(&t, &id, mode).unwrap(), t);
            let doubled = mode_product(&t, &(id * 2.0), mode).unwrap();
            for (a, b) in doubled.data().iter().zip(t.data()) {
                assert_eq!(*a, 2.0 * b);
            }
        }
    }

    #[test]
    fn rejects_non_finite_and_wrong_length() {
        assert!(DenseTensor3::new((1, 1, 2), vec![0.0, f64::NAN]).is_err());
        assert!(DenseTensor3::new((2, 1, 1), vec![0.0]).is_err());
        assert!(DenseTensor3::zeros((0, 1, 1)).is_err());
    }

    #[test]
    fn slab_and_concat_round_trip() {
        let t = DenseTensor3::from_fn((3, 2, 7), |a, b, c| (a + 10 * b + 100 * c) as f64).unwrap();
        let parts = vec![t.slab(0..3).unwrap(), t.slab(3..6).unwrap(), t.slab(6..7).unwrap()];
        assert_eq!(DenseTensor3::concat_slices(&parts).unwrap(), t);
        assert!(t.slab(5..9).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn tensor_strategy() -> impl Strategy<Value = DenseTensor3> {
            (1usize..=5, 1usize..=6, 1usize..=7).prop_flat_map(|(a, b, c)| {
                proptest::collection::vec(-10.0f64..10.0, a * b * c)
                    .prop_map(move |data| DenseTensor3::new((a, b, c), data).unwrap())
            })
        }

        proptest! {
            #[test]
            fn fold_unfold_are_inverse(t in tensor_strategy(), mode in 1usize..=3) {
                let m = unfold(&t, mode).unwrap();
                prop_assert_eq!(m.nrows(), t.dim(mode));
                let back = fold(&m, mode, t.dims()).unwrap();
                prop_assert_eq!(&back, &t);
                prop_assert_eq!(unfold(&back, mode).unwrap(), m);
            }
        }
    }
}
