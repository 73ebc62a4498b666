//! Dense row-major tensors and the few linear-algebra kernels the rest of
//! the crate is built on.
//!
//! Every reduction here runs in a fixed order, so identical inputs give
//! bit-identical outputs on every run.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::penalty::GroupIndex;
use crate::rng::SeededRng;

/// Element type of a [`Tensor`]. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    const NAME: &'static str;

    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T: Scalar = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return dim_err(format!("zero-sized dimension in shape {shape:?}"));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return dim_err(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// 2-D convenience constructor from nested rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return dim_err("ragged rows");
        }
        Self::new(vec![r, c], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Number of elements per leading-axis slice.
    pub fn row_len(&self) -> usize {
        self.data.len() / self.shape[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return dim_err(format!("cannot reshape {:?} into {shape:?}", self.shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn same_shape(&self, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return dim_err(format!("{:?} vs {:?}", self.shape, other.shape));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: T, x: &Tensor<T>) -> Result<()> {
        self.same_shape(x)?;
        axpy(a, &x.data, &mut self.data);
        Ok(())
    }

    pub fn scale(&mut self, a: T) {
        self.data.iter_mut().for_each(|v| *v *= a);
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a - b)
                .collect(),
        })
    }

    pub fn sq_norm(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v * v)
    }

    pub fn norm(&self) -> T {
        self.sq_norm().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|v| !v.is_zero()).count()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<f64> {
        self.same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }
}

/// Matrix product `a · b` for 2-D tensors.
///
/// Each output entry accumulates its `k` terms left to right starting from
/// zero, exactly like the textbook triple loop.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = dims2(a)?;
    let (k2, n) = dims2(b)?;
    if k != k2 {
        return dim_err(format!("matmul inner dims {k} vs {k2}"));
    }
    let mut out = vec![T::zero(); m * n];
    gemm_nn(m, k, n, &a.data, &b.data, &mut out);
    Tensor::new(vec![m, n], out)
}

fn dims2<T: Scalar>(t: &Tensor<T>) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => dim_err(format!("expected a matrix, got shape {s:?}")),
    }
}

/// `c[m×n] += a[m×k] · b[k×n]`, row-major slices.
pub fn gemm_nn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip.is_zero() {
                continue;
            }
            axpy(aip, &b[p * n..(p + 1) * n], c_row);
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`, row-major slices.
pub fn gemm_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`, row-major slices.
pub fn gemm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a[p * m + i];
            if api.is_zero() {
                continue;
            }
            axpy(api, b_row, &mut c[i * n..(i + 1) * n]);
        }
    }
}

#[inline]
pub fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with eight interleaved partial sums combined in a fixed
/// order; deterministic, and lets the compiler vectorize.
#[inline]
pub fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = [T::zero(); 8];
    let xc = x.chunks_exact(8);
    let yc = y.chunks_exact(8);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for l in 0..8 {
            acc[l] += a[l] * b[l];
        }
    }
    let mut tail = T::zero();
    for (a, b) in xr.iter().zip(yr) {
        tail += *a * *b;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Euclidean norm of every group of `t`'s elements.
pub fn group_l2_norm<T: Scalar>(t: &Tensor<T>, groups: &GroupIndex) -> Result<Tensor<T>> {
    groups.check_len(t.len())?;
    let g = groups.num_groups();
    if g == 0 {
        return Err(Error::Argument("group index has no groups".into()));
    }
    let data = t.data();
    let norms = (0..g)
        .map(|gi| {
            groups
                .members(gi)
                .fold(T::zero(), |acc, i| acc + data[i] * data[i])
                .sqrt()
        })
        .collect();
    Tensor::new(vec![g], norms)
}

/// I.i.d. zero-mean Gaussian entries with standard deviation `sqrt(2 / fan_in)`.
pub fn gaussian_init<T: Scalar>(rng: &mut SeededRng, shape: &[usize], fan_in: usize) -> Result<Tensor<T>> {
    if fan_in == 0 {
        return Err(Error::Argument("fan_in must be positive".into()));
    }
    let std = (2.0 / fan_in as f64).sqrt();
    Ok(Tensor::from_fn(shape, |_| T::of(std * rng.normal())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        Tensor::from_fn(&[m, n], |idx| {
            let (i, j) = (idx / n, idx % n);
            let mut s = 0.0;
            for p in 0..k {
                s += a.data()[i * k + p] * b.data()[p * n + j];
            }
            s
        })
    }

    #[test]
    fn matmul_small_cases() {
        let id = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let v = Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        assert_eq!(matmul(&id, &v).unwrap(), v);

        let a = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(matmul(&a, &v).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_exactly() {
        let mut rng = SeededRng::new(7);
        let a = Tensor::from_fn(&[5, 7], |_| rng.normal());
        let b = Tensor::from_fn(&[7, 3], |_| rng.normal());
        assert_eq!(matmul(&a, &b).unwrap(), naive(&a, &b));
    }

    #[test]
    fn matmul_rejects_bad_shapes() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn identity_is_exact_both_sides() {
        let mut rng = SeededRng::new(3);
        let a = Tensor::from_fn(&[4, 4], |_| rng.normal());
        let id = Tensor::from_fn(&[4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
        assert_eq!(matmul(&id, &a).unwrap(), a);
        assert_eq!(matmul(&a, &id).unwrap(), a);
    }

    #[test]
    fn transposed_kernels_agree_with_matmul() {
        let mut rng = SeededRng::new(11);
        let (m, k, n) = (4, 9, 6);
        let a: Vec<f64> = (0..m * k).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.normal()).collect();
        let mut want = vec![0.0; m * n];
        gemm_nn(m, k, n, &a, &b, &mut want);

        // b transposed to n×k
        let bt: Vec<f64> = (0..n * k).map(|i| b[(i % k) * n + i / k]).collect();
        let mut got = vec![0.0; m * n];
        gemm_nt(m, k, n, &a, &bt, &mut got);
        for (x, y) in got.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        let at: Vec<f64> = (0..k * m).map(|i| a[(i % m) * k + i / m]).collect();
        let mut got = vec![0.0; m * n];
        gemm_tn(m, k, n, &at, &b, &mut got);
        assert_eq!(got, want);
    }

    #[test]
    fn group_norm_cases() {
        let z = Tensor::<f64>::zeros(&[2, 3]);
        let g = GroupIndex::blocks(2, 3);
        assert_eq!(group_l2_norm(&z, &g).unwrap().data(), &[0.0, 0.0]);

        let t = Tensor::new(vec![2], vec![3.0, 4.0]).unwrap();
        let one = GroupIndex::blocks(1, 2);
        assert_eq!(group_l2_norm(&t, &one).unwrap().data(), &[5.0]);
    }

    #[test]
    fn group_norm_random_partition_matches_direct_sum() {
        let mut rng = SeededRng::new(5);
        let t = Tensor::from_fn(&[30], |_| rng.normal());
        let mut idx: Vec<usize> = (0..30).collect();
        rng.shuffle(&mut idx);
        let parts: Vec<Vec<usize>> = idx.chunks(7).map(<[usize]>::to_vec).collect();
        let groups = GroupIndex::explicit(parts.clone(), 30).unwrap();
        let got = group_l2_norm(&t, &groups).unwrap();
        for (g, members) in parts.iter().enumerate() {
            let mut s = 0.0;
            for &i in members {
                s += t.data()[i] * t.data()[i];
            }
            assert!((got.data()[g] - s.sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn group_norm_out_of_range() {
        let t = Tensor::<f64>::zeros(&[4]);
        let bad = GroupIndex::blocks(2, 3);
        assert!(matches!(group_l2_norm(&t, &bad), Err(Error::Index(_))));
    }

    #[test]
    fn gaussian_init_statistics() {
        let mut rng = SeededRng::new(1234);
        let t: Tensor = gaussian_init(&mut rng, &[100_000], 50).unwrap();
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let want = (2.0f64 / 50.0).sqrt();
        assert!((var.sqrt() / want - 1.0).abs() < 0.02, "std {}", var.sqrt());
        assert!(mean.abs() < 0.01 * want * 5.0);
    }

    #[test]
    fn gaussian_init_is_deterministic() {
        let a: Tensor = gaussian_init(&mut SeededRng::new(9), &[3, 4], 2).unwrap();
        let b: Tensor = gaussian_init(&mut SeededRng::new(9), &[3, 4], 2).unwrap();
        assert_eq!(a, b);
        assert!(gaussian_init::<f64>(&mut SeededRng::new(9), &[3], 0).is_err());
    }
}
