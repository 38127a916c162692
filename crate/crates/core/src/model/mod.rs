//! BPR matrix factorization: the base recommender used for both the teacher
//! and the student.

mod adam;
mod checkpoint;
mod train;

use std::collections::HashMap;

use rand::Rng;

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::numkernel::{dot, Matrix};

pub use adam::{Adam, SparseAdam, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use checkpoint::{CHECKPOINT_MAGIC, checksum_of};
pub use train::{
    train, train_with_validator, DistillHook, DistillOutput, EarlyStopping, EpochRecord, StopDecision, TrainConfig,
    TrainHistory, DEFAULT_MAX_EPOCHS, DEFAULT_PATIENCE, TEACHER_DIM,
};

pub const INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub users: Matrix,
    pub items: Matrix,
}

impl EmbeddingModel {
    /// Gaussian N(0, 0.01²) initialization.
    pub fn init<R: Rng + ?Sized>(num_users: usize, num_items: usize, dim: usize, rng: &mut R) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be at least 1".into()));
        }
        let users = Matrix::gaussian(num_users, dim, INIT_STD, rng);
        let items = Matrix::gaussian(num_items, dim, INIT_STD, rng);
        Ok(Self { users, items })
    }

    pub fn from_tables(users: Matrix, items: Matrix) -> Result<Self> {
        if users.cols() != items.cols() || users.cols() == 0 {
            return Err(Error::Shape(format!(
                "user width {} and item width {} must match and be non-zero",
                users.cols(),
                items.cols()
            )));
        }
        Ok(Self { users, items })
    }

    pub fn dim(&self) -> usize {
        self.users.cols()
    }

    pub fn num_users(&self) -> usize {
        self.users.rows()
    }

    pub fn num_items(&self) -> usize {
        self.items.rows()
    }

    pub fn score(&self, user: usize, item: usize) -> Result<f64> {
        if user >= self.num_users() || item >= self.num_items() {
            return Err(Error::Index(format!(
                "score({user}, {item}) on a {}-user, {}-item model",
                self.num_users(),
                self.num_items()
            )));
        }
        Ok(dot(self.users.row(user), self.items.row(item)))
    }

    /// Scores of every item for one user.
    pub fn score_all(&self, user: usize) -> Vec<f64> {
        let u = self.users.row(user);
        self.items.row_iter().map(|q| dot(u, q)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.users.is_finite() && self.items.is_finite()
    }
}

/// Gradient rows for a subset of a table, kept in first-touch order.
#[derive(Debug, Clone, PartialEq)]
pub struct RowGrads {
    dim: usize,
    rows: Vec<usize>,
    slots: HashMap<usize, usize>,
    data: Vec<f64>,
}

impl RowGrads {
    pub fn new(dim: usize) -> Self {
        Self { dim, rows: Vec::new(), slots: HashMap::new(), data: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Zero-initialized on first access.
    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        let slot = *self.slots.entry(row).or_insert_with(|| {
            self.rows.push(row);
            self.data.resize(self.data.len() + self.dim, 0.0);
            self.rows.len() - 1
        });
        &mut self.data[slot * self.dim..(slot + 1) * self.dim]
    }

    pub fn get(&self, row: usize) -> Option<&[f64]> {
        self.slots.get(&row).map(|&s| &self.data[s * self.dim..(s + 1) * self.dim])
    }

    pub fn touched(&self) -> &[usize] {
        &self.rows
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.rows.iter().copied().zip(self.data.chunks_exact(self.dim.max(1)))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `self += alpha · other`, touching any rows only `other` has.
    pub fn add_scaled(&mut self, alpha: f64, other: &RowGrads) {
        for (r, g) in other.iter() {
            for (a, b) in self.row_mut(r).iter_mut().zip(g) {
                *a += alpha * b;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct BprGrads {
    pub users: RowGrads,
    pub items: RowGrads,
}

/// `−(1/B) Σ ln σ(x_ui − x_uj) + l2 · Σ_{touched rows} ‖row‖²`, with gradients
/// for the rows that appear in the batch.
pub fn bpr_loss_and_grad(model: &EmbeddingModel, batch: &Batch, l2_reg: f64) -> Result<(f64, BprGrads)> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let dim = model.dim();
    let inv_b = 1.0 / batch.len() as f64;
    let mut grads = BprGrads { users: RowGrads::new(dim), items: RowGrads::new(dim) };
    let mut loss = 0.0;
    for ((&u, &i), &j) in batch.users.iter().zip(&batch.pos_items).zip(&batch.neg_items) {
        let pu = model.users.row(u);
        let qi = model.items.row(i);
        let qj = model.items.row(j);
        let x = dot(pu, qi) - dot(pu, qj);
        // −ln σ(x) = softplus(−x)
        loss += softplus(-x) * inv_b;
        let c = -sigmoid(-x) * inv_b;
        {
            let gu = grads.users.row_mut(u);
            for k in 0..dim {
                gu[k] += c * (qi[k] - qj[k]);
            }
        }
        for (item, sign) in [(i, 1.0), (j, -1.0)] {
            let g = grads.items.row_mut(item);
            for k in 0..dim {
                g[k] += sign * c * pu[k];
            }
        }
    }
    if l2_reg > 0.0 {
        for (table, g) in [(&model.users, &mut grads.users), (&model.items, &mut grads.items)] {
            for &r in g.rows.clone().iter() {
                let row = table.row(r);
                loss += l2_reg * dot(row, row);
                for (gv, &v) in g.row_mut(r).iter_mut().zip(row) {
                    *gv += 2.0 * l2_reg * v;
                }
            }
        }
    }
    Ok((loss, grads))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
