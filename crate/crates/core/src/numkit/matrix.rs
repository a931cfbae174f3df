use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Like [`Matrix::new`] but also rejects NaN/Inf. Used for anything read from disk.
    pub fn new_finite(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value {} at row {} col {}",
                data[pos],
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Matrix::new(rows, cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Matrix {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Matrix {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::InvalidArgument(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Matrix::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        matmul_into(self, other, &mut out);
        Ok(out)
    }

    /// Elementwise sum; `other` may also be a single row broadcast over all rows.
    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        if self.shape() == other.shape() {
            for (a, b) in self.data.iter_mut().zip(&other.data) {
                *a += b;
            }
            Ok(())
        } else if other.rows == 1 && other.cols == self.cols {
            for r in 0..self.rows {
                for (a, b) in self.row_mut(r).iter_mut().zip(&other.data) {
                    *a += b;
                }
            }
            Ok(())
        } else {
            Err(Error::Dimension {
                op: "add",
                left: self.shape(),
                right: other.shape(),
            })
        }
    }

    pub fn scale(&self, k: f64) -> Matrix {
        self.map(|v| v * k)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }
}

/// `out += a * b`, with shapes already checked. The i-k-j loop order keeps the
/// inner loop contiguous in both `b` and `out`.
pub(crate) fn matmul_into(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    let n = b.cols;
    for i in 0..a.rows {
        let arow = &a.data[i * a.cols..(i + 1) * a.cols];
        let orow = &mut out.data[i * n..(i + 1) * n];
        for (k, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[k * n..(k + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Matrix) -> Matrix {
    x.map(sigmoid_scalar)
}

pub fn tanh(x: &Matrix) -> Matrix {
    x.map(f64::tanh)
}

pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| v.max(0.0))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Probability clamp applied before every log.
pub const PROB_EPS: f64 = 1e-7;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Binary cross-entropy of one prediction against a 0/1 target.
pub fn bce(pred: f64, target: f64) -> f64 {
    let p = clamp_prob(pred);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::rng::RngState;

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_hand_cases() {
        let i = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(i.matmul(&b).unwrap(), b);
        let row = Matrix::row_vector(vec![1.0, 2.0]);
        let col = Matrix::new(2, 1, vec![3.0, 4.0]).unwrap();
        assert_eq!(row.matmul(&col).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = RngState::new(11);
        let a = rng.normal_matrix(7, 5, 1.0);
        let b = rng.normal_matrix(5, 3, 1.0);
        let got = a.matmul(&b).unwrap();
        let want = naive(&a, &b);
        for (g, w) in got.data().iter().zip(want.data()) {
            assert!((g - w).abs() < 1e-12);
        }
        for seed in 0..20 {
            let mut rng = RngState::new(seed);
            let (m, k, n) = (
                1 + rng.below(32),
                1 + rng.below(32),
                1 + rng.below(32),
            );
            let a = rng.normal_matrix(m, k, 1.0);
            let b = rng.normal_matrix(k, n, 1.0);
            let got = a.matmul(&b).unwrap();
            let want = naive(&a, &b);
            for (g, w) in got.data().iter().zip(want.data()) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("(2, 3)"), "{err}");
    }

    #[test]
    fn nonlinearities() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        let s = softmax_rows(&Matrix::row_vector(vec![1.0, 1.0, 1.0]));
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let s = softmax_rows(&Matrix::row_vector(vec![1000.0, 0.0]));
        assert!(s.is_finite());
        assert!((s.data()[0] - 1.0).abs() < 1e-12);
        assert!(s.data()[1] < 1e-300 || s.data()[1] == 0.0);
        let t = tanh(&Matrix::row_vector(vec![-50.0, 0.0, 50.0]));
        assert!(t.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn bce_values() {
        assert!((bce(0.5, 1.0) - std::f64::consts::LN_2).abs() < 1e-12);
        let near = bce(1.0 - PROB_EPS, 1.0);
        assert!(near > 0.0 && near < 2e-7);
        assert!((bce(0.2, 0.0) - (-(0.8f64).ln())).abs() < 1e-15);
        // clamped at the boundary, so finite
        assert!(bce(0.0, 1.0).is_finite());
    }

    #[test]
    fn new_finite_rejects_nan() {
        assert!(Matrix::new_finite(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::new_finite(1, 2, vec![1.0, f64::INFINITY]).is_err());
        assert!(Matrix::new(2, 2, vec![0.0; 3]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn softmax_rows_sum_to_one_and_shift_invariant(
            logits in proptest::collection::vec(-50.0f64..50.0, 1..12),
            shift in -100.0f64..100.0,
        ) {
            let a = softmax_rows(&Matrix::row_vector(logits.clone()));
            let b = softmax_rows(&Matrix::row_vector(logits.iter().map(|v| v + shift).collect()));
            proptest::prop_assert!((a.sum() - 1.0).abs() < 1e-9);
            for (x, y) in a.data().iter().zip(b.data()) {
                proptest::prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
