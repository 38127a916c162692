use log::{debug, info};

use crate::data::{sample_batches, Batch, SplitDataset, TrainIndex, DEFAULT_BATCH_SIZE};
use crate::error::{Error, Result};
use crate::eval::{full_ranking_eval, EvalTarget};
use crate::seed::{substream, STREAM_BATCHES};

use super::{bpr_loss_and_grad, EmbeddingModel, RowGrads, SparseAdam};

pub const DEFAULT_MAX_EPOCHS: usize = 500;
pub const DEFAULT_PATIENCE: usize = 20;
pub const TEACHER_DIM: usize = 200;
pub const VALIDATION_CUTOFF: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2_reg: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Student-to-teacher dimension ratio.
    pub phi: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            l2_reg: 1e-5,
            max_epochs: DEFAULT_MAX_EPOCHS,
            patience: DEFAULT_PATIENCE,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
            phi: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(self.l2_reg >= 0.0 && self.l2_reg.is_finite()) {
            return Err(Error::Config(format!("l2_reg must be >= 0, got {}", self.l2_reg)));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.phi > 0.0 && self.phi <= 1.0) {
            return Err(Error::Config(format!("phi must lie in (0, 1], got {}", self.phi)));
        }
        Ok(())
    }

    /// `round(phi · teacher_dim)`, at least 1.
    pub fn student_dim(&self, teacher_dim: usize) -> usize {
        ((self.phi * teacher_dim as f64).round() as usize).max(1)
    }
}

/// Distillation loss and the gradient it sends back into the student tables.
#[derive(Debug, Clone)]
pub struct DistillOutput {
    pub loss: f64,
    pub users: RowGrads,
    pub items: RowGrads,
}

/// A source of `L_TD` for the combined objective `L_base + λ_TD · L_TD`.
///
/// Implementations own and update any auxiliary parameters (projection heads,
/// assignment network). The returned row gradients are unscaled; the trainer
/// multiplies them by [`DistillHook::lambda`].
pub trait DistillHook {
    fn lambda(&self) -> f64;

    fn distill(&mut self, batch: &Batch, student: &EmbeddingModel, learning_rate: f64) -> Result<DistillOutput>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops once the metric has failed to strictly improve for `patience`
/// consecutive observations.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: None, best_epoch: 0, stale: 0 }
    }

    pub fn observe(&mut self, epoch: usize, metric: f64) -> StopDecision {
        if self.best.is_none_or(|b| metric > b) {
            self.best = Some(metric);
            self.best_epoch = epoch;
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean base loss per batch.
    pub base_loss: f64,
    /// Mean distillation loss per batch (0 without a distiller).
    pub distill_loss: f64,
    pub validation: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_validation: f64,
    pub stopped_early: bool,
}

/// Trains with early stopping on validation Recall@50 and returns the
/// best-validation model.
pub fn train(
    model: EmbeddingModel,
    split: &SplitDataset,
    cfg: &TrainConfig,
    distiller: Option<&mut dyn DistillHook>,
) -> Result<(EmbeddingModel, TrainHistory)> {
    train_with_validator(model, split, cfg, distiller, |m| {
        let r = full_ranking_eval(m, split, &[VALIDATION_CUTOFF], EvalTarget::Validation)?;
        Ok(r.recall[0])
    })
}

pub fn train_with_validator<V>(
    mut model: EmbeddingModel,
    split: &SplitDataset,
    cfg: &TrainConfig,
    mut distiller: Option<&mut dyn DistillHook>,
    mut validate: V,
) -> Result<(EmbeddingModel, TrainHistory)>
where
    V: FnMut(&EmbeddingModel) -> Result<f64>,
{
    cfg.validate()?;
    if model.num_users() != split.num_users() || model.num_items() != split.num_items() {
        return Err(Error::Shape(format!(
            "model covers {}x{} entities, data {}x{}",
            model.num_users(),
            model.num_items(),
            split.num_users(),
            split.num_items()
        )));
    }
    let index = TrainIndex::new(&split.train);
    let mut rng = substream(cfg.seed, STREAM_BATCHES);
    let mut user_opt = SparseAdam::new(model.num_users(), model.dim());
    let mut item_opt = SparseAdam::new(model.num_items(), model.dim());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.clone();
    let mut history = TrainHistory::default();

    for epoch in 1..=cfg.max_epochs {
        let (mut base_sum, mut td_sum, mut batches) = (0.0, 0.0, 0usize);
        for batch in sample_batches(&split.train, &index, cfg.batch_size, &mut rng)? {
            let batch = batch?;
            let (base, mut grads) = bpr_loss_and_grad(&model, &batch, cfg.l2_reg)?;
            let mut td = 0.0;
            if let Some(hook) = distiller.as_deref_mut() {
                let out = hook.distill(&batch, &model, cfg.learning_rate)?;
                let lambda = hook.lambda();
                grads.users.add_scaled(lambda, &out.users);
                grads.items.add_scaled(lambda, &out.items);
                td = out.loss;
            }
            if !base.is_finite() || !td.is_finite() || !grads.users.is_finite() || !grads.items.is_finite() {
                return Err(Error::NonFinite(format!(
                    "epoch {epoch}, batch {}: base loss {base}, distillation loss {td}",
                    batches + 1
                )));
            }
            user_opt.step(&mut model.users, &grads.users, cfg.learning_rate);
            item_opt.step(&mut model.items, &grads.items, cfg.learning_rate);
            base_sum += base;
            td_sum += td;
            batches += 1;
        }
        let metric = validate(&model)?;
        let record = EpochRecord {
            epoch,
            base_loss: base_sum / batches.max(1) as f64,
            distill_loss: td_sum / batches.max(1) as f64,
            validation: metric,
        };
        info!(
            "epoch {epoch}: base {:.5} td {:.5} val recall@50 {metric:.4}",
            record.base_loss, record.distill_loss
        );
        history.epochs.push(record);
        match stopper.observe(epoch, metric) {
            StopDecision::Improved => best = model.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                debug!("no improvement for {} epochs, stopping at epoch {epoch}", cfg.patience);
                history.stopped_early = true;
                break;
            }
        }
    }
    history.best_epoch = stopper.best_epoch();
    history.best_validation = stopper.best().unwrap_or(0.0);
    Ok((best, history))
}
