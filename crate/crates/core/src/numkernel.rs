//! Dense row-major matrices, cosine similarity with its backward pass, the
//! (masked) squared Frobenius distance and a central-difference gradient
//! checker used to verify every hand-derived gradient in the crate.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Lower bound applied to row norms before dividing.
pub const NORM_EPS: f64 = 1e-12;

/// Central-difference step used by [`grad_check`].
pub const GRAD_CHECK_STEP: f64 = 1e-5;

// Below this many multiply-adds the rayon split costs more than it saves.
const PAR_THRESHOLD: usize = 1 << 16;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape(format!("row {i} has {} columns, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Entries drawn i.i.d. from N(0, std²).
    pub fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("standard deviation must be finite and non-negative");
        let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
        Self { rows, cols, data }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size; a 0-column matrix has no data anyway
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn gather_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: indices.len(), cols: self.cols, data }
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    fn check_same_shape(&self, other: &Matrix, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul: {}x{} · {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let n = other.cols;
        let mut out = Matrix::zeros(self.rows, n);
        let kernel = |(i, out_row): (usize, &mut [f64])| {
            let a = self.row(i);
            for (k, &a_ik) in a.iter().enumerate() {
                if a_ik == 0.0 {
                    continue;
                }
                let b = other.row(k);
                for (o, &b_kj) in out_row.iter_mut().zip(b) {
                    *o += a_ik * b_kj;
                }
            }
        };
        if n == 0 {
            return Ok(out);
        }
        if self.rows * self.cols * n >= PAR_THRESHOLD {
            out.data.par_chunks_mut(n).enumerate().for_each(kernel);
        } else {
            out.data.chunks_mut(n).enumerate().for_each(kernel);
        }
        Ok(out)
    }

    /// `self · otherᵀ`, i.e. all pairwise row dot products.
    pub fn matmul_nt(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::Shape(format!(
                "matmul_nt: {}x{} · ({}x{})ᵀ",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let n = other.rows;
        let mut out = Matrix::zeros(self.rows, n);
        if n == 0 {
            return Ok(out);
        }
        let kernel = |(i, out_row): (usize, &mut [f64])| {
            let a = self.row(i);
            for (j, o) in out_row.iter_mut().enumerate() {
                *o = dot(a, other.row(j));
            }
        };
        if self.rows * self.cols * n >= PAR_THRESHOLD {
            out.data.par_chunks_mut(n).enumerate().for_each(kernel);
        } else {
            out.data.chunks_mut(n).enumerate().for_each(kernel);
        }
        Ok(out)
    }

    /// `selfᵀ · other`.
    pub fn matmul_tn(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Shape(format!(
                "matmul_tn: ({}x{})ᵀ · {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let a = self.row(r);
            let b = other.row(r);
            for (i, &a_ri) in a.iter().enumerate() {
                if a_ri == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b_rj) in out_row.iter_mut().zip(b) {
                    *o += a_ri * b_rj;
                }
            }
        }
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        self.check_same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// `self += alpha · other`.
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) -> Result<()> {
        self.check_same_shape(other, "axpy")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "sub")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "hadamard")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn scaled(&self, alpha: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * alpha).collect() }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn frob_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SimilarityKind {
    #[default]
    Cosine,
    NegEuclidean,
}

/// Row-normalizes `m`, returning the unit rows and the guarded norms.
pub fn normalize_rows(m: &Matrix) -> (Matrix, Vec<f64>) {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for i in 0..m.rows() {
        let row = out.row_mut(i);
        let n = dot(row, row).sqrt().max(NORM_EPS);
        row.iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    (out, norms)
}

/// Pulls a gradient w.r.t. normalized rows back to the raw rows:
/// `dx = (g − ⟨g, x̂⟩ x̂) / ‖x‖`.
pub fn normalize_rows_backward(unit: &Matrix, norms: &[f64], grad_unit: &Matrix) -> Matrix {
    let mut out = grad_unit.clone();
    for i in 0..unit.rows() {
        let u = unit.row(i);
        let g = out.row_mut(i);
        let proj = dot(g, u);
        let n = norms[i];
        for (gv, &uv) in g.iter_mut().zip(u) {
            *gv = (*gv - proj * uv) / n;
        }
    }
    out
}

/// Forward state of `Cos(B, D) = B̂ D̂ᵀ`, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct CosineCache {
    pub left_unit: Matrix,
    pub left_norms: Vec<f64>,
    pub right_unit: Matrix,
    pub right_norms: Vec<f64>,
    pub value: Matrix,
}

impl CosineCache {
    pub fn forward(left: &Matrix, right: &Matrix) -> Result<Self> {
        if left.cols() != right.cols() {
            return Err(Error::Shape(format!(
                "cosine: row widths {} and {} differ",
                left.cols(),
                right.cols()
            )));
        }
        let (left_unit, left_norms) = normalize_rows(left);
        let (right_unit, right_norms) = normalize_rows(right);
        let value = left_unit.matmul_nt(&right_unit)?;
        Ok(Self { left_unit, left_norms, right_unit, right_norms, value })
    }

    /// Gradients w.r.t. the raw left and right inputs given `dL/dCos`.
    pub fn backward(&self, grad: &Matrix) -> Result<(Matrix, Matrix)> {
        let g_left_unit = grad.matmul(&self.right_unit)?;
        let g_right_unit = grad.matmul_tn(&self.left_unit)?;
        Ok((
            normalize_rows_backward(&self.left_unit, &self.left_norms, &g_left_unit),
            normalize_rows_backward(&self.right_unit, &self.right_norms, &g_right_unit),
        ))
    }
}

/// Pairwise cosine similarities between the rows of `left` and `right`.
pub fn cosine_matrix(left: &Matrix, right: &Matrix) -> Result<Matrix> {
    Ok(CosineCache::forward(left, right)?.value)
}

/// Pairwise similarities under the chosen kind. `NegEuclidean` yields
/// `−‖b_i − d_j‖²`.
pub fn similarity_matrix(left: &Matrix, right: &Matrix, kind: SimilarityKind) -> Result<Matrix> {
    match kind {
        SimilarityKind::Cosine => cosine_matrix(left, right),
        SimilarityKind::NegEuclidean => {
            let cross = left.matmul_nt(right)?;
            let ln: Vec<f64> = left.row_iter().map(|r| dot(r, r)).collect();
            let rn: Vec<f64> = right.row_iter().map(|r| dot(r, r)).collect();
            Ok(Matrix::from_fn(left.rows(), right.rows(), |i, j| -(ln[i] + rn[j] - 2.0 * cross[(i, j)]).max(0.0)))
        }
    }
}

/// Forward state of a similarity matrix under either kind of ρ.
#[derive(Debug, Clone)]
pub enum SimilarityCache {
    Cosine(CosineCache),
    NegEuclidean { left: Matrix, right: Matrix, value: Matrix },
}

impl SimilarityCache {
    pub fn forward(kind: SimilarityKind, left: &Matrix, right: &Matrix) -> Result<Self> {
        match kind {
            SimilarityKind::Cosine => Ok(Self::Cosine(CosineCache::forward(left, right)?)),
            SimilarityKind::NegEuclidean => {
                let cross = left.matmul_nt(right)?;
                let ln: Vec<f64> = left.row_iter().map(|r| dot(r, r)).collect();
                let rn: Vec<f64> = right.row_iter().map(|r| dot(r, r)).collect();
                let value = Matrix::from_fn(left.rows(), right.rows(), |i, j| 2.0 * cross[(i, j)] - ln[i] - rn[j]);
                Ok(Self::NegEuclidean { left: left.clone(), right: right.clone(), value })
            }
        }
    }

    pub fn value(&self) -> &Matrix {
        match self {
            Self::Cosine(c) => &c.value,
            Self::NegEuclidean { value, .. } => value,
        }
    }

    /// Gradients w.r.t. the raw left and right inputs.
    pub fn backward(&self, grad: &Matrix) -> Result<(Matrix, Matrix)> {
        match self {
            Self::Cosine(c) => c.backward(grad),
            Self::NegEuclidean { left, right, .. } => {
                // s_ij = 2⟨l_i, r_j⟩ − ‖l_i‖² − ‖r_j‖²
                let mut gl = grad.matmul(right)?.scaled(2.0);
                let mut gr = grad.matmul_tn(left)?.scaled(2.0);
                for i in 0..left.rows() {
                    let rs: f64 = grad.row(i).iter().sum();
                    for (g, &l) in gl.row_mut(i).iter_mut().zip(left.row(i)) {
                        *g -= 2.0 * rs * l;
                    }
                }
                for j in 0..right.rows() {
                    let cs: f64 = (0..grad.rows()).map(|i| grad[(i, j)]).sum();
                    for (g, &r) in gr.row_mut(j).iter_mut().zip(right.row(j)) {
                        *g -= 2.0 * cs * r;
                    }
                }
                Ok((gl, gr))
            }
        }
    }
}

/// `Σ_ij mask_ij (x_ij − y_ij)²`; an absent mask means all ones.
pub fn frob_sq_distance(x: &Matrix, y: &Matrix, mask: Option<&Matrix>) -> Result<f64> {
    x.check_same_shape(y, "frob_sq_distance")?;
    match mask {
        None => Ok(x.data.iter().zip(&y.data).map(|(a, b)| (a - b) * (a - b)).sum()),
        Some(m) => {
            x.check_same_shape(m, "frob_sq_distance mask")?;
            Ok(x.data
                .iter()
                .zip(&y.data)
                .zip(&m.data)
                .map(|((a, b), w)| w * (a - b) * (a - b))
                .sum())
        }
    }
}

/// Compares the analytic gradient returned by `loss_and_grad` against central
/// differences at `point`. Returns the largest entrywise
/// `|analytic − numeric| / max(1, |analytic| + |numeric|)`.
pub fn grad_check<F>(loss_and_grad: F, point: &Matrix) -> Result<f64>
where
    F: Fn(&Matrix) -> (f64, Matrix),
{
    let (loss, analytic) = loss_and_grad(point);
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss {loss} at the check point")));
    }
    point.check_same_shape(&analytic, "grad_check gradient")?;
    let mut probe = point.clone();
    let mut worst: f64 = 0.0;
    for idx in 0..point.data.len() {
        let orig = probe.data[idx];
        probe.data[idx] = orig + GRAD_CHECK_STEP;
        let (up, _) = loss_and_grad(&probe);
        probe.data[idx] = orig - GRAD_CHECK_STEP;
        let (down, _) = loss_and_grad(&probe);
        probe.data[idx] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("loss at perturbation of entry {idx}")));
        }
        let numeric = (up - down) / (2.0 * GRAD_CHECK_STEP);
        let a = analytic.data[idx];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1.0);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn loop_cosine(b: &Matrix, d: &Matrix) -> Matrix {
        Matrix::from_fn(b.rows(), d.rows(), |i, j| {
            let mut num = 0.0;
            let mut nb = 0.0;
            let mut nd = 0.0;
            for k in 0..b.cols() {
                num += b[(i, k)] * d[(j, k)];
                nb += b[(i, k)] * b[(i, k)];
                nd += d[(j, k)] * d[(j, k)];
            }
            num / (nb.sqrt() * nd.sqrt())
        })
    }

    #[test]
    fn cosine_of_identity() {
        let i2 = Matrix::identity(2);
        assert_eq!(cosine_matrix(&i2, &i2).unwrap(), i2);
    }

    #[test]
    fn cosine_is_scale_invariant() {
        let b = Matrix::from_rows(&[[2.0, 0.0]]).unwrap();
        let d = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        assert_eq!(cosine_matrix(&b, &d).unwrap()[(0, 0)], 1.0);
    }

    #[test]
    fn cosine_matches_pairwise_loop() {
        let mut r = rng(1);
        let b = Matrix::gaussian(4, 3, 1.0, &mut r);
        let d = Matrix::gaussian(4, 3, 1.0, &mut r);
        let fast = cosine_matrix(&b, &d).unwrap();
        assert!(fast.max_abs_diff(&loop_cosine(&b, &d)) < 1e-12);
    }

    #[test]
    fn cosine_zero_row_is_guarded() {
        let b = Matrix::from_rows(&[[0.0, 0.0], [1.0, 1.0]]).unwrap();
        let c = cosine_matrix(&b, &b).unwrap();
        assert!(c.is_finite());
        assert_eq!(c[(0, 0)], 0.0);
        assert!((c[(1, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_rejects_width_mismatch() {
        let b = Matrix::zeros(2, 3);
        let d = Matrix::zeros(2, 4);
        assert!(matches!(cosine_matrix(&b, &d), Err(Error::Shape(_))));
    }

    #[test]
    fn neg_euclidean_similarity() {
        let b = Matrix::from_rows(&[[0.0, 0.0], [3.0, 4.0]]).unwrap();
        let s = similarity_matrix(&b, &b, SimilarityKind::NegEuclidean).unwrap();
        assert_eq!(s[(0, 1)], -25.0);
        assert_eq!(s[(1, 1)], 0.0);
    }

    #[test]
    fn frob_examples() {
        let x = Matrix::identity(2);
        let y = Matrix::filled(2, 2, 1.0);
        assert_eq!(frob_sq_distance(&x, &x, None).unwrap(), 0.0);
        assert_eq!(frob_sq_distance(&x, &y, None).unwrap(), 2.0);
        assert!(frob_sq_distance(&x, &Matrix::zeros(2, 3), None).is_err());
        assert!(frob_sq_distance(&x, &y, Some(&Matrix::zeros(3, 3))).is_err());
    }

    #[test]
    fn masked_frob_matches_loop() {
        let mut r = rng(2);
        let x = Matrix::gaussian(5, 5, 1.0, &mut r);
        let y = Matrix::gaussian(5, 5, 1.0, &mut r);
        let mask = Matrix::from_fn(5, 5, |_, _| if r.random_bool(0.5) { 1.0 } else { 0.0 });
        let mut expected = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                if mask[(i, j)] == 1.0 {
                    expected += (x[(i, j)] - y[(i, j)]).powi(2);
                }
            }
        }
        let got = frob_sq_distance(&x, &y, Some(&mask)).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn grad_check_on_squared_norm() {
        let x = Matrix::gaussian(4, 3, 1.0, &mut rng(3));
        let err = grad_check(|m| (m.frob_norm_sq(), m.scaled(2.0)), &x).unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn grad_check_flags_wrong_gradient() {
        let x = Matrix::gaussian(3, 3, 1.0, &mut rng(4));
        let err = grad_check(|m| (m.frob_norm_sq(), m.scaled(3.0)), &x).unwrap();
        assert!(err > 0.1);
    }

    #[test]
    fn grad_check_rejects_non_finite() {
        let x = Matrix::filled(1, 1, 0.0);
        let res = grad_check(|m| (1.0 / m[(0, 0)], Matrix::zeros(1, 1)), &x);
        assert!(matches!(res, Err(Error::NonFinite(_))));
    }

    #[test]
    fn cosine_backward_passes_grad_check() {
        let mut r = rng(5);
        let d = Matrix::gaussian(3, 4, 1.0, &mut r);
        let w = Matrix::gaussian(5, 3, 1.0, &mut r);
        let b = Matrix::gaussian(5, 4, 1.0, &mut r);
        let f = |m: &Matrix| {
            let cache = CosineCache::forward(m, &d).unwrap();
            let loss = cache.value.hadamard(&w).unwrap().sum();
            let (gl, _) = cache.backward(&w).unwrap();
            (loss, gl)
        };
        assert!(grad_check(f, &b).unwrap() < 1e-6);
    }

    #[test]
    fn neg_euclidean_backward_passes_grad_check() {
        let mut r = rng(7);
        let d = Matrix::gaussian(3, 4, 1.0, &mut r);
        let w = Matrix::gaussian(5, 3, 1.0, &mut r);
        let b = Matrix::gaussian(5, 4, 1.0, &mut r);
        let left = |m: &Matrix| {
            let cache = SimilarityCache::forward(SimilarityKind::NegEuclidean, m, &d).unwrap();
            let loss = cache.value().hadamard(&w).unwrap().sum();
            (loss, cache.backward(&w).unwrap().0)
        };
        assert!(grad_check(left, &b).unwrap() < 1e-6);
        let right = |m: &Matrix| {
            let cache = SimilarityCache::forward(SimilarityKind::NegEuclidean, &b, m).unwrap();
            let loss = cache.value().hadamard(&w).unwrap().sum();
            (loss, cache.backward(&w).unwrap().1)
        };
        assert!(grad_check(right, &d).unwrap() < 1e-6);
    }

    #[test]
    fn matmul_variants_agree() {
        let mut r = rng(6);
        let a = Matrix::gaussian(4, 3, 1.0, &mut r);
        let b = Matrix::gaussian(5, 3, 1.0, &mut r);
        let nt = a.matmul_nt(&b).unwrap();
        let plain = a.matmul(&b.transpose()).unwrap();
        assert!(nt.max_abs_diff(&plain) < 1e-12);
        let tn = a.transpose().matmul(&a).unwrap();
        assert!(tn.max_abs_diff(&a.matmul_tn(&a).unwrap()) < 1e-12);
    }

    proptest! {
        #[test]
        fn cosine_unit_diagonal_and_bounds(seed in any::<u64>(), n in 1usize..8, d in 1usize..6) {
            let b = Matrix::gaussian(n, d, 1.0, &mut rng(seed));
            let c = cosine_matrix(&b, &b).unwrap();
            for i in 0..n {
                prop_assert!((c[(i, i)] - 1.0).abs() < 1e-9);
                for j in 0..n {
                    prop_assert!(c[(i, j)].abs() <= 1.0 + 1e-9);
                }
            }
        }

        #[test]
        fn cosine_row_scaling_invariance(seed in any::<u64>(), scale in 0.01f64..100.0) {
            let mut r = rng(seed);
            let b = Matrix::gaussian(4, 3, 1.0, &mut r);
            let d = Matrix::gaussian(3, 3, 1.0, &mut r);
            let mut scaled = b.clone();
            for i in 0..4 {
                let s = scale * (i as f64 + 1.0);
                scaled.row_mut(i).iter_mut().for_each(|v| *v *= s);
            }
            let a = cosine_matrix(&b, &d).unwrap();
            let c = cosine_matrix(&scaled, &d).unwrap();
            prop_assert!(a.max_abs_diff(&c) < 1e-12);
        }

        #[test]
        fn frob_symmetric_non_negative(seed in any::<u64>()) {
            let mut r = rng(seed);
            let x = Matrix::gaussian(3, 4, 1.0, &mut r);
            let y = Matrix::gaussian(3, 4, 1.0, &mut r);
            let a = frob_sq_distance(&x, &y, None).unwrap();
            let b = frob_sq_distance(&y, &x, None).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
