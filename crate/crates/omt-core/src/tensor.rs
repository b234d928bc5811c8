//! Dense row-major tensors over `f32` (fast) or `f64` (verification).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// Element type for all numeric work. `f32` is the training precision,
/// `f64` the verification precision.
pub trait Scalar:
    num_traits::Float + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Dense tensor: a shape and row-major data, always finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Build from shape and data; rejects length mismatches and non-finite values.
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero dimension in shape {shape:?}")));
        }
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} wants {numel} values, got {}",
                data.len()
            )));
        }
        let t = Tensor { shape, data };
        t.check_finite("from_vec")?;
        Ok(t)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![T::zero(); numel] }
    }

    pub fn filled(shape: Vec<usize>, v: T) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![v; numel] }
    }

    /// 1x1 tensor holding a single value.
    pub fn scalar(v: T) -> Self {
        Tensor { shape: vec![1, 1], data: vec![v] }
    }

    /// Row vector [1 x d].
    pub fn row(data: Vec<T>) -> Self {
        Tensor { shape: vec![1, data.len()], data }
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Value of a 1x1 tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::Shape(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Rows/cols of a rank-2 tensor; rank-1 is treated as a single row.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.len() {
            1 => Ok((1, self.shape[0])),
            2 => Ok((self.shape[0], self.shape[1])),
            _ => Err(Error::Shape(format!(
                "expected rank <= 2, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn is_finite_all(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.is_finite_all() {
            Ok(())
        } else {
            Err(Error::NonFinite(String::from(what)))
        }
    }

    /// Cast elementwise through f64.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    // ── kernels ──────────────────────────────────────────────────────

    /// Matrix product [m x k] * [k x n] -> [m x n].
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, k) = self.dims2()?;
        let (k2, n) = rhs.dims2()?;
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner dims {k} vs {k2} (shapes {:?} x {:?})",
                self.shape, rhs.shape
            )));
        }
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &a) in arow.iter().enumerate() {
                let brow = &rhs.data[p * n..(p + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow.iter()) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(Tensor { shape: vec![m, n], data: out })
    }

    pub fn transpose(&self) -> Result<Tensor<T>> {
        let (r, c) = self.dims2()?;
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor { shape: vec![c, r], data: out })
    }

    fn zip_same_shape(&self, rhs: &Tensor<T>, what: &str) -> Result<()> {
        if self.shape != rhs.shape {
            return Err(Error::Shape(format!(
                "{what}: shapes {:?} vs {:?}",
                self.shape, rhs.shape
            )));
        }
        Ok(())
    }

    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_same_shape(rhs, "add")?;
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_same_shape(rhs, "sub")?;
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_same_shape(rhs, "mul")?;
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| a * b)
            .collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    pub fn scale(&self, k: T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| v * k).collect(),
        }
    }

    pub fn relu(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| v.max(T::zero())).collect(),
        }
    }

    /// Natural log; errors on any non-positive entry.
    pub fn ln(&self) -> Result<Tensor<T>> {
        if self.data.iter().any(|&v| v <= T::zero()) {
            return Err(Error::NonFinite(String::from("ln of non-positive value")));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| v.ln()).collect(),
        })
    }

    /// Sum of all entries as a 1x1 tensor.
    pub fn sum(&self) -> Tensor<T> {
        let s = self.data.iter().fold(T::zero(), |acc, &v| acc + v);
        Tensor::scalar(s)
    }

    /// Add a [1 x c] row to every row of an [r x c] matrix. The one broadcast
    /// this kernel set allows.
    pub fn add_row(&self, row: &Tensor<T>) -> Result<Tensor<T>> {
        let (r, c) = self.dims2()?;
        let (rr, rc) = row.dims2()?;
        if rr != 1 || rc != c {
            return Err(Error::Shape(format!(
                "add_row: matrix {:?} with row {:?}",
                self.shape, row.shape
            )));
        }
        let mut data = self.data.clone();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] = data[i * c + j] + row.data[j];
            }
        }
        Ok(Tensor { shape: vec![r, c], data })
    }

    /// Horizontal concatenation of two matrices with equal row counts.
    pub fn concat_cols(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let (r, c1) = self.dims2()?;
        let (r2, c2) = rhs.dims2()?;
        if r != r2 {
            return Err(Error::Shape(format!(
                "concat_cols: row counts {r} vs {r2}"
            )));
        }
        let mut data = Vec::with_capacity(r * (c1 + c2));
        for i in 0..r {
            data.extend_from_slice(&self.data[i * c1..(i + 1) * c1]);
            data.extend_from_slice(&rhs.data[i * c2..(i + 1) * c2]);
        }
        Ok(Tensor { shape: vec![r, c1 + c2], data })
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor<T>> {
        let (r, c) = self.dims2()?;
        if start + len > c || len == 0 {
            return Err(Error::Shape(format!(
                "slice_cols {start}..{} of {c} cols",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&self.data[i * c + start..i * c + start + len]);
        }
        Ok(Tensor { shape: vec![r, len], data })
    }

    /// Row-wise softmax with a column mask. Masked columns get probability
    /// exactly 0; each row of survivors sums to 1. Errors if the mask kills
    /// an entire row.
    pub fn masked_softmax(&self, mask: &[bool]) -> Result<Tensor<T>> {
        let (r, c) = self.dims2()?;
        if mask.len() != c {
            return Err(Error::Shape(format!(
                "mask length {} for {c} columns",
                mask.len()
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::NonFinite(String::from(
                "masked_softmax: all columns masked",
            )));
        }
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &self.data[i * c..(i + 1) * c];
            let mut max = T::neg_infinity();
            for (j, &v) in row.iter().enumerate() {
                if mask[j] && v > max {
                    max = v;
                }
            }
            let mut denom = T::zero();
            for j in 0..c {
                if mask[j] {
                    let e = (row[j] - max).exp();
                    data[i * c + j] = e;
                    denom = denom + e;
                }
            }
            for j in 0..c {
                if mask[j] {
                    data[i * c + j] = data[i * c + j] / denom;
                }
            }
        }
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    /// Row-wise layer normalization with affine gain/bias of width c.
    /// Population variance; eps guards the zero-variance case.
    pub fn layer_norm(&self, gain: &Tensor<T>, bias: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
        let (r, c) = self.dims2()?;
        let check = |t: &Tensor<T>, what: &str| -> Result<()> {
            let (tr, tc) = t.dims2()?;
            if tr != 1 || tc != c {
                return Err(Error::Shape(format!(
                    "layer_norm {what}: {:?} for width {c}",
                    t.shape
                )));
            }
            Ok(())
        };
        check(gain, "gain")?;
        check(bias, "bias")?;
        let inv_c = T::one() / T::from_usize(c);
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &self.data[i * c..(i + 1) * c];
            let mean = row.iter().fold(T::zero(), |a, &v| a + v) * inv_c;
            let var = row
                .iter()
                .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
                * inv_c;
            let inv_sigma = T::one() / (var + eps).sqrt();
            for j in 0..c {
                let xhat = (row[j] - mean) * inv_sigma;
                data[i * c + j] = gain.data[j] * xhat + bias.data[j];
            }
        }
        Ok(Tensor { shape: self.shape.clone(), data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(shape: Vec<usize>, data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn from_vec_rejects_mismatch_and_nonfinite() {
        assert!(Tensor::<f64>::from_vec(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::<f64>::from_vec(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::<f64>::from_vec(vec![0], vec![]).is_err());
    }

    #[test]
    fn matmul_identity() {
        let i3 = t64(
            vec![3, 3],
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        );
        let b = t64(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(i3.matmul(&b).unwrap(), b);
    }

    #[test]
    fn matmul_annihilator() {
        let a = t64(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let z = Tensor::<f64>::zeros(vec![2, 3]);
        assert_eq!(a.matmul(&z).unwrap(), Tensor::zeros(vec![2, 3]));
    }

    #[test]
    fn matmul_hand_case() {
        // [[1,2],[3,4]] x [[1],[1]] = [[3],[7]]
        let a = t64(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = t64(vec![2, 1], vec![1.0, 1.0]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = t64(vec![2, 3], vec![0.0; 6]);
        let b = t64(vec![2, 2], vec![0.0; 4]);
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn masked_softmax_uniform() {
        let s = Tensor::<f64>::zeros(vec![1, 4]);
        let y = s.masked_softmax(&[true; 4]).unwrap();
        for &v in y.data() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_softmax_single_survivor() {
        let s = t64(vec![1, 2], vec![17.0, -3.0]);
        let y = s.masked_softmax(&[true, false]).unwrap();
        assert_eq!(y.data(), &[1.0, 0.0]);
    }

    #[test]
    fn masked_softmax_closed_form() {
        let s = t64(vec![1, 2], vec![0.0, 3.0f64.ln()]);
        let y = s.masked_softmax(&[true, true]).unwrap();
        assert!((y.data()[0] - 0.25).abs() < 1e-12);
        assert!((y.data()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn masked_softmax_all_masked_errors() {
        let s = Tensor::<f64>::zeros(vec![1, 3]);
        assert!(s.masked_softmax(&[false; 3]).is_err());
    }

    #[test]
    fn masked_softmax_rows_sum_to_one() {
        let s = t64(vec![3, 4], (0..12).map(|i| i as f64 * 0.37 - 2.0).collect());
        let mask = [true, false, true, true];
        let y = s.masked_softmax(&mask).unwrap();
        for i in 0..3 {
            let row = &y.data()[i * 4..(i + 1) * 4];
            assert_eq!(row[1], 0.0);
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_constant_input() {
        let x = Tensor::<f64>::filled(vec![1, 5], 3.2);
        let g = Tensor::<f64>::filled(vec![1, 5], 1.0);
        let b = Tensor::<f64>::zeros(vec![1, 5]);
        let y = x.layer_norm(&g, &b, 1e-5).unwrap();
        for &v in y.data() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_already_normalized() {
        let x = t64(vec![1, 2], vec![1.0, -1.0]);
        let g = Tensor::<f64>::filled(vec![1, 2], 1.0);
        let b = Tensor::<f64>::zeros(vec![1, 2]);
        let y = x.layer_norm(&g, &b, 1e-12).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-6);
        assert!((y.data()[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn layer_norm_gain_zero_collapses_to_bias() {
        let x = t64(vec![1, 3], vec![0.3, -4.0, 2.5]);
        let g = Tensor::<f64>::zeros(vec![1, 3]);
        let b = t64(vec![1, 3], vec![7.0, 8.0, 9.0]);
        let y = x.layer_norm(&g, &b, 1e-5).unwrap();
        assert_eq!(y.data(), &[7.0, 8.0, 9.0]);
    }

    #[test]
    fn concat_and_slice_roundtrip() {
        let a = t64(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = t64(vec![2, 1], vec![5.0, 6.0]);
        let c = a.concat_cols(&b).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        assert_eq!(c.slice_cols(0, 2).unwrap(), a);
        assert_eq!(c.slice_cols(2, 1).unwrap(), b);
    }
}
