use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    /// Panics if `values.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(
            values.len(),
            rows * cols,
            "matrix of {rows}x{cols} needs {} values",
            rows * cols
        );
        Self { rows, cols, values }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            assert_eq!(row.len(), cols, "ragged rows");
            values.extend_from_slice(row);
        }
        Self {
            rows: rows.len(),
            cols,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    /// Entries drawn i.i.d. from N(0, std²).
    pub fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
        let values = (0..rows * cols).map(|_| normal.sample(rng)).collect();
        Self { rows, cols, values }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, so zero-width matrices yield no rows
        self.values.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn fill(&mut self, v: f64) {
        self.values.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `y = self · x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.iter_rows().map(|row| dot(row, x)).collect()
    }

    /// `y = selfᵀ · x`.
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.rows);
        let mut y = vec![0.0; self.cols];
        for (row, &xi) in self.iter_rows().zip(x) {
            axpy(xi, row, &mut y);
        }
        y
    }

    /// `self += alpha · a bᵀ`.
    pub fn add_outer(&mut self, alpha: f64, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        let cols = self.cols;
        for (i, &ai) in a.iter().enumerate() {
            if ai == 0.0 {
                continue;
            }
            axpy(alpha * ai, b, &mut self.values[i * cols..(i + 1) * cols]);
        }
    }

    /// `self += alpha · other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &DenseMatrix) {
        assert_eq!(self.shape(), other.shape());
        axpy(alpha, &other.values, &mut self.values);
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|x| *x *= alpha);
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha · x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; `None` when either vector has norm below `eps`.
pub fn cosine(a: &[f64], b: &[f64], eps: f64) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na < eps || nb < eps {
        return None;
    }
    Some((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_and_transpose_agree_with_hand_values() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        assert_eq!(m.matvec(&[1.0, -1.0]), vec![-1.0, -1.0, -1.0]);
        assert_eq!(m.matvec_t(&[1.0, 0.0, 1.0]), vec![6.0, 8.0]);
    }

    #[test]
    fn add_outer_accumulates() {
        let mut m = DenseMatrix::zeros(2, 2);
        m.add_outer(2.0, &[1.0, 3.0], &[1.0, -1.0]);
        assert_eq!(m.as_slice(), &[2.0, -2.0, 6.0, -6.0]);
    }

    #[test]
    fn cosine_rejects_zero_vectors() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0], 1e-12), None);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 2.0], 1e-12), Some(0.0));
    }

    #[test]
    #[should_panic(expected = "needs 4 values")]
    fn from_vec_checks_length() {
        DenseMatrix::from_vec(2, 2, vec![1.0]);
    }
}
