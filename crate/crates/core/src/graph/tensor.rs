use crate::error::{Error, Result};

fn check_finite(data: &[f64], what: &str) -> Result<()> {
    for (i, v) in data.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Tensor(format!(
                "{what} contains non-finite value {v} at index {i}"
            )));
        }
    }
    Ok(())
}

/// Dense vector of `f64`. All entries are finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor1 {
    data: Vec<f64>,
}

impl Tensor1 {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        check_finite(&data, "vector")?;
        Ok(Tensor1 { data })
    }

    pub fn zeros(len: usize) -> Self {
        Tensor1 {
            data: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Dense row-major matrix of `f64`. All entries are finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                op: "Tensor2::new",
                detail: format!("{rows}x{cols} matrix needs {} values, got {}", rows * cols, data.len()),
            });
        }
        check_finite(&data, "matrix")?;
        Ok(Tensor2 { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2 {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `out = self * x` (matrix-vector product).
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            for (w, xv) in row.iter().zip(x) {
                acc += w * xv;
            }
            out[r] = acc;
        }
    }
}

/// A parameter value: either a vector or a matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    Vec(Tensor1),
    Mat(Tensor2),
}

impl Tensor {
    pub fn data(&self) -> &[f64] {
        match self {
            Tensor::Vec(t) => t.as_slice(),
            Tensor::Mat(t) => t.as_slice(),
        }
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        match self {
            Tensor::Vec(t) => t.as_mut_slice(),
            Tensor::Mat(t) => t.as_mut_slice(),
        }
    }

    pub fn len(&self) -> usize {
        self.data().len()
    }

    pub fn is_empty(&self) -> bool {
        self.data().is_empty()
    }

    pub fn as_mat(&self) -> Option<&Tensor2> {
        match self {
            Tensor::Mat(t) => Some(t),
            Tensor::Vec(_) => None,
        }
    }

    pub fn as_vec(&self) -> Option<&Tensor1> {
        match self {
            Tensor::Vec(t) => Some(t),
            Tensor::Mat(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        assert!(Tensor1::new(vec![1.0, f64::NAN]).is_err());
        assert!(Tensor1::new(vec![f64::INFINITY]).is_err());
        assert!(Tensor2::new(1, 2, vec![0.0, f64::NEG_INFINITY]).is_err());
        assert!(Tensor1::new(vec![1.0, -2.5]).is_ok());
    }

    #[test]
    fn matrix_shape_must_match_data() {
        assert!(Tensor2::new(2, 3, vec![0.0; 5]).is_err());
        assert!(Tensor2::new(2, 3, vec![0.0; 6]).is_ok());
    }

    #[test]
    fn matvec_identity_and_general() {
        let eye = Tensor2::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let mut out = [0.0; 2];
        eye.matvec(&[2.0, 3.0], &mut out);
        assert_eq!(out, [2.0, 3.0]);

        let m = Tensor2::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        m.matvec(&[1.0, 1.0], &mut out);
        assert_eq!(out, [3.0, 7.0]);
    }
}
