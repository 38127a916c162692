use std::collections::HashSet;

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::{EmbeddingModel, RowGrads};
use crate::numkernel::Matrix;

/// The distinct entities of a batch: users in order of first appearance,
/// then items (positives and negatives pooled) likewise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchEntities {
    pub users: Vec<usize>,
    pub items: Vec<usize>,
}

fn dedup(ids: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut seen = HashSet::new();
    ids.filter(|id| seen.insert(*id)).collect()
}

impl BatchEntities {
    pub fn from_batch(batch: &Batch) -> Self {
        let users = dedup(batch.users.iter().copied());
        let items = dedup(batch.pos_items.iter().zip(&batch.neg_items).flat_map(|(&p, &n)| [p, n]));
        Self { users, items }
    }

    pub fn len(&self) -> usize {
        self.users.len() + self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stacks the selected user rows over the selected item rows.
    pub fn gather(&self, model: &EmbeddingModel) -> Matrix {
        let mut data = model.users.gather_rows(&self.users).into_data();
        data.extend(model.items.gather_rows(&self.items).into_data());
        Matrix::new(self.len(), model.dim(), data).expect("gathered rows")
    }

    /// Splits a gradient over the stacked rows back into per-table row
    /// gradients.
    pub fn scatter(&self, grad: &Matrix) -> (RowGrads, RowGrads) {
        let mut users = RowGrads::new(grad.cols());
        let mut items = RowGrads::new(grad.cols());
        for (r, &u) in self.users.iter().enumerate() {
            users.row_mut(u).copy_from_slice(grad.row(r));
        }
        let offset = self.users.len();
        for (r, &i) in self.items.iter().enumerate() {
            items.row_mut(i).copy_from_slice(grad.row(offset + r));
        }
        (users, items)
    }
}

/// Teacher and student rows of the batch entities, aligned row by row.
pub fn gather_batch_entities(
    batch: &Batch,
    teacher: &EmbeddingModel,
    student: &EmbeddingModel,
) -> Result<(BatchEntities, Matrix, Matrix)> {
    if teacher.num_users() != student.num_users() || teacher.num_items() != student.num_items() {
        return Err(Error::Shape(format!(
            "teacher covers {}x{} entities, student {}x{}",
            teacher.num_users(),
            teacher.num_items(),
            student.num_users(),
            student.num_items()
        )));
    }
    let entities = BatchEntities::from_batch(batch);
    let et = entities.gather(teacher);
    let es = entities.gather(student);
    Ok((entities, et, es))
}
