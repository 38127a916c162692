//! Trainable helpers used only while distilling: the projection heads `f_k`
//! that map student rows into teacher space, and the assignment network `v`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::Adam;
use crate::numkernel::Matrix;

/// Two-layer MLP `[d_in → hidden → d_out]` with a ReLU in between.
///
/// Parameters live in one flat buffer laid out as `w1 (hidden×d_in)`,
/// `b1 (hidden)`, `w2 (d_out×hidden)`, `b2 (d_out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    d_in: usize,
    hidden: usize,
    d_out: usize,
    params: Vec<f64>,
}

/// Forward state kept for the backward pass.
#[derive(Debug, Clone)]
pub struct HeadCache {
    input: Matrix,
    hidden: Matrix,
    pub output: Matrix,
}

impl ProjectionHead {
    /// Shape `[d_s → (d_s + d_t)/2 → d_t]`.
    pub fn for_dims<R: Rng + ?Sized>(d_student: usize, d_teacher: usize, rng: &mut R) -> Self {
        Self::init(d_student, (d_student + d_teacher) / 2, d_teacher, rng)
    }

    /// Uniform `±1/sqrt(fan_in)` initialization for weights and biases.
    pub fn init<R: Rng + ?Sized>(d_in: usize, hidden: usize, d_out: usize, rng: &mut R) -> Self {
        let mut head = Self { d_in, hidden, d_out, params: vec![0.0; hidden * d_in + hidden + d_out * hidden + d_out] };
        let b1 = 1.0 / (d_in.max(1) as f64).sqrt();
        let b2 = 1.0 / (hidden.max(1) as f64).sqrt();
        let (_, layer1_end, _) = head.offsets();
        for (k, p) in head.params.iter_mut().enumerate() {
            let bound = if k < layer1_end { b1 } else { b2 };
            *p = rng.random_range(-bound..bound);
        }
        head
    }

    pub fn from_parts(w1: &Matrix, b1: &[f64], w2: &Matrix, b2: &[f64]) -> Result<Self> {
        let (hidden, d_in) = w1.shape();
        let d_out = w2.rows();
        if b1.len() != hidden || w2.cols() != hidden || b2.len() != d_out {
            return Err(Error::Shape("inconsistent projection head parts".into()));
        }
        let mut params = w1.data().to_vec();
        params.extend_from_slice(b1);
        params.extend_from_slice(w2.data());
        params.extend_from_slice(b2);
        Ok(Self { d_in, hidden, d_out, params })
    }

    /// `x ↦ relu(x) − relu(−x) = x` with a hidden width of `2d`.
    pub fn identity(d: usize) -> Self {
        let w1 = Matrix::from_fn(2 * d, d, |h, i| match (h < d, h % d == i) {
            (true, true) => 1.0,
            (false, true) => -1.0,
            _ => 0.0,
        });
        let w2 = Matrix::from_fn(d, 2 * d, |o, h| match (h < d, h % d == o) {
            (true, true) => 1.0,
            (false, true) => -1.0,
            _ => 0.0,
        });
        Self::from_parts(&w1, &vec![0.0; 2 * d], &w2, &vec![0.0; d]).expect("identity shapes")
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let w1 = self.hidden * self.d_in;
        let b1 = w1 + self.hidden;
        let w2 = b1 + self.d_out * self.hidden;
        (w1, b1, w2)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.d_in, self.hidden, self.d_out)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn w1(&self) -> Matrix {
        let (w1, _, _) = self.offsets();
        Matrix::new(self.hidden, self.d_in, self.params[..w1].to_vec()).unwrap()
    }

    fn w2(&self) -> Matrix {
        let (_, b1, w2) = self.offsets();
        Matrix::new(self.d_out, self.hidden, self.params[b1..w2].to_vec()).unwrap()
    }

    pub fn forward(&self, input: &Matrix) -> Result<HeadCache> {
        if input.cols() != self.d_in {
            return Err(Error::Shape(format!("head expects width {}, got {}", self.d_in, input.cols())));
        }
        let (w1_end, b1_end, w2_end) = self.offsets();
        let mut hidden = input.matmul_nt(&self.w1())?;
        let b1 = &self.params[w1_end..b1_end];
        for r in 0..hidden.rows() {
            for (h, &b) in hidden.row_mut(r).iter_mut().zip(b1) {
                *h = (*h + b).max(0.0);
            }
        }
        let mut output = hidden.matmul_nt(&self.w2())?;
        let b2 = &self.params[w2_end..];
        for r in 0..output.rows() {
            for (o, &b) in output.row_mut(r).iter_mut().zip(b2) {
                *o += b;
            }
        }
        Ok(HeadCache { input: input.clone(), hidden, output })
    }

    /// Returns `(dL/dinput, dL/dparams)` given `dL/doutput`.
    pub fn backward(&self, cache: &HeadCache, grad_out: &Matrix) -> Result<(Matrix, Vec<f64>)> {
        let (w1_end, b1_end, w2_end) = self.offsets();
        let mut grads = vec![0.0; self.params.len()];
        // layer 2
        let gw2 = grad_out.matmul_tn(&cache.hidden)?;
        grads[b1_end..w2_end].copy_from_slice(gw2.data());
        for r in 0..grad_out.rows() {
            for (g, &v) in grads[w2_end..].iter_mut().zip(grad_out.row(r)) {
                *g += v;
            }
        }
        let mut g_hidden = grad_out.matmul(&self.w2())?;
        for (g, &h) in g_hidden.data_mut().iter_mut().zip(cache.hidden.data()) {
            if h <= 0.0 {
                *g = 0.0;
            }
        }
        // layer 1
        let gw1 = g_hidden.matmul_tn(&cache.input)?;
        grads[..w1_end].copy_from_slice(gw1.data());
        for r in 0..g_hidden.rows() {
            for (g, &v) in grads[w1_end..b1_end].iter_mut().zip(g_hidden.row(r)) {
                *g += v;
            }
        }
        let g_input = g_hidden.matmul(&self.w1())?;
        Ok((g_input, grads))
    }
}

/// One linear layer `d_t → K` followed by a softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentNetwork {
    d_in: usize,
    groups: usize,
    /// `weights (K×d_in)` followed by `bias (K)`.
    params: Vec<f64>,
}

impl AssignmentNetwork {
    pub fn init<R: Rng + ?Sized>(d_in: usize, groups: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (d_in.max(1) as f64).sqrt();
        let params = (0..groups * d_in + groups).map(|_| rng.random_range(-bound..bound)).collect();
        Self { d_in, groups, params }
    }

    /// A network with zero weights: every entity gets the uniform distribution.
    pub fn uniform(d_in: usize, groups: usize) -> Self {
        Self { d_in, groups, params: vec![0.0; groups * d_in + groups] }
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn weights(&self) -> Matrix {
        Matrix::new(self.groups, self.d_in, self.params[..self.groups * self.d_in].to_vec()).unwrap()
    }

    /// Row-wise assignment probabilities `α = softmax(E W^T + b)`.
    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        if input.cols() != self.d_in {
            return Err(Error::Shape(format!("assignment net expects width {}, got {}", self.d_in, input.cols())));
        }
        let mut logits = input.matmul_nt(&self.weights())?;
        let bias = &self.params[self.groups * self.d_in..];
        for r in 0..logits.rows() {
            let row = logits.row_mut(r);
            for (l, &b) in row.iter_mut().zip(bias) {
                *l += b;
            }
            softmax_in_place(row);
        }
        Ok(logits)
    }

    /// Parameter gradient given `dL/dα`, with `alpha` the forward output.
    pub fn backward(&self, input: &Matrix, alpha: &Matrix, grad_alpha: &Matrix) -> Result<Vec<f64>> {
        let g_logits = softmax_backward(alpha, grad_alpha);
        let gw = g_logits.matmul_tn(input)?;
        let mut grads = gw.into_data();
        let mut gb = vec![0.0; self.groups];
        for r in 0..g_logits.rows() {
            for (g, &v) in gb.iter_mut().zip(g_logits.row(r)) {
                *g += v;
            }
        }
        grads.extend(gb);
        Ok(grads)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// Row-wise softmax Jacobian-vector product: `y ⊙ (g − ⟨g, y⟩)`.
pub(crate) fn softmax_backward(y: &Matrix, grad: &Matrix) -> Matrix {
    let mut out = grad.clone();
    for r in 0..y.rows() {
        let yr = y.row(r);
        let g = out.row_mut(r);
        let inner: f64 = g.iter().zip(yr).map(|(a, b)| a * b).sum();
        for (gv, &yv) in g.iter_mut().zip(yr) {
            *gv = yv * (*gv - inner);
        }
    }
    out
}

/// A parameter buffer paired with its Adam state.
#[derive(Debug, Clone)]
pub struct Trainable<T> {
    pub module: T,
    opt: Adam,
}

impl Trainable<ProjectionHead> {
    pub fn new(module: ProjectionHead) -> Self {
        let opt = Adam::new(module.num_params());
        Self { module, opt }
    }

    pub fn step(&mut self, grads: &[f64], lr: f64) {
        self.opt.step(self.module.params_mut(), grads, lr);
    }
}

impl Trainable<AssignmentNetwork> {
    pub fn new(module: AssignmentNetwork) -> Self {
        let opt = Adam::new(module.params().len());
        Self { module, opt }
    }

    pub fn step(&mut self, grads: &[f64], lr: f64) {
        self.opt.step(self.module.params_mut(), grads, lr);
    }
}
