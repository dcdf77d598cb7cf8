use ndarray::{Array2, ArrayView1};

use super::ReprError;

/// Row-major matrix of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix(Array2<f64>);

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix(Array2::zeros((rows, cols)))
    }

    pub fn identity(n: usize) -> Self {
        DenseMatrix(Array2::eye(n))
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, ReprError> {
        if data.len() != rows * cols {
            return Err(ReprError::Dimension {
                context: "matrix data".into(),
                expected: rows * cols,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ReprError::NonFinite("matrix data".into()));
        }
        Ok(DenseMatrix(
            Array2::from_shape_vec((rows, cols), data).expect("length checked"),
        ))
    }

    pub fn from_array(a: Array2<f64>) -> Self {
        DenseMatrix(a.as_standard_layout().into_owned())
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.0[[r, c]]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.0[[r, c]] = v;
    }

    pub fn row(&self, r: usize) -> ArrayView1<'_, f64> {
        self.0.row(r)
    }

    pub fn row_vec(&self, r: usize) -> Vec<f64> {
        self.0.row(r).to_vec()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn as_array_mut(&mut self) -> &mut Array2<f64> {
        &mut self.0
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }

    /// Row-major copy of the values.
    pub fn data(&self) -> Vec<f64> {
        self.0.iter().copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix, ReprError> {
        if self.cols() != other.rows() {
            return Err(ReprError::Dimension {
                context: "matmul".into(),
                expected: self.cols(),
                found: other.rows(),
            });
        }
        Ok(DenseMatrix(self.0.dot(&other.0)))
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix::from_array(self.0.t().to_owned())
    }

    /// New matrix whose row `i` is row `perm[i]` of `self`.
    pub fn permute_rows(&self, perm: &[usize]) -> DenseMatrix {
        let mut out = Array2::zeros((perm.len(), self.cols()));
        for (i, &p) in perm.iter().enumerate() {
            out.row_mut(i).assign(&self.0.row(p));
        }
        DenseMatrix(out)
    }
}
