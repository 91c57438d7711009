use serde::{Deserialize, Serialize};

use super::NumError;

/// Dense row-major `f64` tensor.
///
/// Most operations in this crate work on rank-2 tensors; a rank-0 tensor
/// (empty shape, one element) is the scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumError> {
        if shape.contains(&0) {
            return Err(NumError::Contract(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NumError::Contract(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: Vec::new(), data: vec![value] }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; len] }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, NumError> {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(m * n);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != n {
                return Err(NumError::Contract(format!(
                    "row {i} has length {} but row 0 has length {n}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![m, n], data)
    }

    /// A `1 × n` row vector.
    pub fn row(values: Vec<f64>) -> Result<Self, NumError> {
        let n = values.len();
        Self::new(vec![1, n], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64, NumError> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(NumError::Contract(format!(
                "expected a scalar, got shape {:?}",
                self.shape
            )))
        }
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let cols = self.cols();
        self.data[i * cols + j] = value;
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows()).map(|i| self.row_slice(i).to_vec()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn require_matrix(&self, op: &'static str) -> Result<(), NumError> {
        if self.shape.len() == 2 {
            Ok(())
        } else {
            Err(NumError::Contract(format!(
                "{op} expects a matrix, got shape {:?}",
                self.shape
            )))
        }
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, NumError> {
        self.require_matrix("matmul")?;
        other.require_matrix("matmul")?;
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(NumError::shape("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor { shape: vec![m, n], data: out })
    }

    pub fn transpose(&self) -> Result<Tensor, NumError> {
        self.require_matrix("transpose")?;
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor { shape: vec![n, m], data: out })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Elementwise combination with equal-shape or scalar broadcasting.
    pub fn zip_with(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, NumError> {
        if self.shape == other.shape {
            let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
            Ok(Tensor { shape: self.shape.clone(), data })
        } else if other.is_scalar() {
            let b = other.data[0];
            Ok(self.map(|a| f(a, b)))
        } else if self.is_scalar() {
            let a = self.data[0];
            Ok(other.map(|b| f(a, b)))
        } else {
            Err(NumError::shape(op, &self.shape, &other.shape))
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor, NumError> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor, NumError> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn relu(&self) -> Tensor {
        self.map(relu)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(sigmoid)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Row-wise softmax. Masked entries (`false`) come out as exactly zero.
    pub fn softmax_rows(&self, mask: Option<&[bool]>) -> Result<Tensor, NumError> {
        self.require_matrix("softmax_rows")?;
        let (m, n) = (self.shape[0], self.shape[1]);
        if let Some(mask) = mask {
            if mask.len() != m * n {
                return Err(NumError::shape("softmax_rows mask", &self.shape, &[mask.len()]));
            }
        }
        let keep = |idx: usize| mask.is_none_or(|mk| mk[idx]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &self.data[i * n..(i + 1) * n];
            if !(0..n).any(|j| keep(i * n + j)) {
                return Err(NumError::DegenerateRow { row: i });
            }
            let max = (0..n)
                .filter(|&j| keep(i * n + j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() || row.iter().enumerate().any(|(j, v)| keep(i * n + j) && v.is_nan()) {
                // Overflowed scores: poison the row so the loss reports divergence.
                for j in (0..n).filter(|&j| keep(i * n + j)) {
                    out[i * n + j] = f64::NAN;
                }
                continue;
            }
            let mut total = 0.0;
            for j in 0..n {
                if keep(i * n + j) {
                    let e = (row[j] - max).exp();
                    out[i * n + j] = e;
                    total += e;
                }
            }
            for v in &mut out[i * n..(i + 1) * n] {
                *v /= total;
            }
        }
        Ok(Tensor { shape: vec![m, n], data: out })
    }
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Logistic function, evaluated through `exp(x)` for negative inputs so that
/// large negative arguments underflow gracefully instead of producing NaN.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul() {
        let a = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(Tensor::identity(2).matmul(&a).unwrap(), a);
    }

    #[test]
    fn selector_matmul() {
        let a = Tensor::from_rows(&[[1.0, 0.0]]).unwrap();
        let b = Tensor::from_rows(&[[0.0], [5.0]]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[0.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn relu_sign_cases() {
        let t = Tensor::row(vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(t.relu().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn sigmoid_symmetry_point_and_tail() {
        assert_eq!(sigmoid(0.0), 0.5);
        let v = sigmoid(-745.0);
        assert!(v > 0.0 && v <= 1e-300, "{v}");
        // The naive formula loses the value entirely.
        assert_eq!(1.0 / (1.0 + 745f64.exp()), 0.0);
        for k in 0..=600 {
            let x = -30.0 + k as f64 * 0.1;
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() <= 1e-15);
        }
    }

    #[test]
    fn softmax_uniform_and_masked() {
        let t = Tensor::row(vec![0.0, 0.0, 0.0]).unwrap();
        let s = t.softmax_rows(None).unwrap();
        for &v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let t = Tensor::row(vec![10.0, 10.0]).unwrap();
        let s = t.softmax_rows(Some(&[true, false])).unwrap();
        assert_eq!(s.data(), &[1.0, 0.0]);
    }

    #[test]
    fn softmax_fully_masked_row_is_an_error() {
        let t = Tensor::zeros(&[2, 2]);
        let err = t.softmax_rows(Some(&[true, true, false, false])).unwrap_err();
        assert!(matches!(err, NumError::DegenerateRow { row: 1 }));
    }

    #[test]
    fn softmax_overflowed_row_turns_nan() {
        let t = Tensor::from_rows(&[vec![f64::INFINITY, 1.0], vec![f64::NAN, 0.0], vec![0.0, 0.0]]).unwrap();
        let s = t.softmax_rows(Some(&[true, true, true, true, true, false])).unwrap();
        assert!(s.data()[..4].iter().all(|v| v.is_nan()));
        assert_eq!(&s.data()[4..], &[1.0, 0.0]);
    }

    #[test]
    fn softplus_matches_naive_in_range() {
        for k in -20..=20 {
            let x = k as f64 * 0.5;
            assert!((softplus(x) - (1.0 + x.exp()).ln()).abs() < 1e-12);
        }
        assert_eq!(softplus(1000.0), 1000.0);
    }
}
