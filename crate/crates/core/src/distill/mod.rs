//! Distillation from a frozen teacher into a smaller student: hint
//! regression (FitNet), distillation experts (DE), full topology (FTD) and
//! hierarchical topology (HTD).

mod assign;
mod entities;
mod heads;
mod losses;
mod topology;

use std::fmt;
use std::str::FromStr;

use log::debug;
use rand_chacha::ChaCha8Rng;

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::{DistillHook, DistillOutput, EmbeddingModel};
use crate::numkernel::{Matrix, SimilarityKind};
use crate::seed::{substream, STREAM_GUMBEL, STREAM_HEADS, STREAM_KMEANS};

pub use assign::{
    assign_groups, gumbel_noise, gumbel_softmax, kmeans_assign, AssignmentMatrix, GumbelAssignment, KMeans, KMeansFit,
};
pub use entities::{gather_batch_entities, BatchEntities};
pub use heads::{AssignmentNetwork, HeadCache, ProjectionHead, Trainable};
pub use losses::{de_loss, ftd_loss, hint_loss, htd_loss, DeOutput, FtdOutput, HintOutput, HtdOutput, HtdParams};
pub use topology::{
    group_mask, group_topology, prototypes, relation_counts, GroupRelations, GroupTopology, Normalization,
    RelationCounts,
};

pub const DEFAULT_LAMBDA_TD: f64 = 1e-3;
pub const DEFAULT_GAMMA: f64 = 0.5;
pub const DEFAULT_GROUPS: usize = 30;
pub const DEFAULT_TAU: f64 = 0.1;
pub const DEFAULT_KMEANS_ITERATIONS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    #[default]
    None,
    FitNet,
    De,
    Ftd,
    Htd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Assigner {
    #[default]
    Learned,
    KMeans,
}

macro_rules! keyword_enum {
    ($ty:ty, $what:literal, $($variant:path => $name:literal),+ $(,)?) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($name => Ok($variant),)+
                    _ => Err(Error::Config(format!(
                        concat!("unknown ", $what, " {:?} (expected one of: {})"),
                        s,
                        [$($name),+].join(", ")
                    ))),
                }
            }
        }
    };
}

keyword_enum!(Method, "method", Method::None => "none", Method::FitNet => "fitnet", Method::De => "de",
    Method::Ftd => "ftd", Method::Htd => "htd");
keyword_enum!(Assigner, "assigner", Assigner::Learned => "learned", Assigner::KMeans => "kmeans");
keyword_enum!(GroupTopology, "group topology", GroupTopology::ProtoEntity => "proto_entity",
    GroupTopology::ProtoProto => "proto_proto");
keyword_enum!(SimilarityKind, "similarity", SimilarityKind::Cosine => "cosine",
    SimilarityKind::NegEuclidean => "neg_euclidean");

#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    pub method: Method,
    pub lambda_td: f64,
    pub gamma: f64,
    pub num_groups: usize,
    pub tau: f64,
    pub group_topology: GroupTopology,
    pub assigner: Assigner,
    pub similarity: SimilarityKind,
    /// Use plain sums instead of per-term means.
    pub raw_sums: bool,
    /// Feed `ln α` instead of `α` to the Gumbel-Softmax.
    pub log_alpha: bool,
    pub kmeans_iterations: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            method: Method::None,
            lambda_td: DEFAULT_LAMBDA_TD,
            gamma: DEFAULT_GAMMA,
            num_groups: DEFAULT_GROUPS,
            tau: DEFAULT_TAU,
            group_topology: GroupTopology::default(),
            assigner: Assigner::default(),
            similarity: SimilarityKind::default(),
            raw_sums: false,
            log_alpha: false,
            kmeans_iterations: DEFAULT_KMEANS_ITERATIONS,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_td >= 0.0 && self.lambda_td.is_finite()) {
            return Err(Error::Config(format!("lambda_td must be >= 0, got {}", self.lambda_td)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if self.num_groups == 0 {
            return Err(Error::Config("num_groups must be at least 1".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        Ok(())
    }

    pub fn normalization(&self) -> Normalization {
        if self.raw_sums {
            Normalization::RawSums
        } else {
            Normalization::Mean
        }
    }

    fn htd_params(&self, gamma: f64) -> HtdParams {
        HtdParams {
            gamma,
            group_topology: self.group_topology,
            similarity: self.similarity,
            normalization: self.normalization(),
        }
    }
}

enum GroupSource {
    Learned { net: Trainable<AssignmentNetwork>, rng: ChaCha8Rng },
    KMeans(KMeans),
}

/// Holds the frozen teacher plus every auxiliary parameter a method trains.
pub struct Distiller {
    cfg: DistillConfig,
    teacher: EmbeddingModel,
    heads: Vec<Trainable<ProjectionHead>>,
    groups: Option<GroupSource>,
}

impl fmt::Debug for Distiller {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Distiller")
            .field("cfg", &self.cfg)
            .field("teacher_dim", &self.teacher.dim())
            .field("heads", &self.heads.len())
            .finish()
    }
}

impl Distiller {
    pub fn new(cfg: DistillConfig, teacher: EmbeddingModel, student_dim: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if cfg.method == Method::None {
            return Err(Error::Config("method none has nothing to distill".into()));
        }
        let d_t = teacher.dim();
        let mut head_rng = substream(seed, STREAM_HEADS);
        let num_heads = match cfg.method {
            Method::FitNet => 1,
            Method::De | Method::Htd => cfg.num_groups,
            Method::Ftd | Method::None => 0,
        };
        let heads = (0..num_heads)
            .map(|_| Trainable::<ProjectionHead>::new(ProjectionHead::for_dims(student_dim, d_t, &mut head_rng)))
            .collect();
        let groups = match (cfg.method, cfg.assigner) {
            (Method::De | Method::Htd, Assigner::Learned) => Some(GroupSource::Learned {
                net: Trainable::<AssignmentNetwork>::new(AssignmentNetwork::init(d_t, cfg.num_groups, &mut head_rng)),
                rng: substream(seed, STREAM_GUMBEL),
            }),
            (Method::De | Method::Htd, Assigner::KMeans) => {
                let pooled = stack(&teacher.users, &teacher.items);
                let fit = KMeans::fit(&pooled, cfg.num_groups, cfg.kmeans_iterations, &mut substream(seed, STREAM_KMEANS))?;
                debug!("k-means fit: sse trace {:?}", fit.sse_trace);
                Some(GroupSource::KMeans(fit.model))
            }
            _ => None,
        };
        Ok(Self { cfg, teacher, heads, groups })
    }

    pub fn config(&self) -> &DistillConfig {
        &self.cfg
    }

    pub fn teacher(&self) -> &EmbeddingModel {
        &self.teacher
    }

    pub fn heads(&self) -> impl Iterator<Item = &ProjectionHead> {
        self.heads.iter().map(|h| &h.module)
    }

    fn head_modules(&self) -> Vec<ProjectionHead> {
        self.heads.iter().map(|h| h.module.clone()).collect()
    }

    fn step_heads(&mut self, grads: &[Vec<f64>], lr: f64) {
        for (head, g) in self.heads.iter_mut().zip(grads) {
            head.step(g, lr);
        }
    }

    /// Distillation loss of one batch and its gradient w.r.t. the batch
    /// entity rows of the student; updates heads and the assignment network.
    fn distill_rows(&mut self, et: &Matrix, es: &Matrix, lr: f64) -> Result<(f64, Matrix)> {
        let norm = self.cfg.normalization();
        match self.cfg.method {
            Method::None => Ok((0.0, Matrix::zeros(es.rows(), es.cols()))),
            Method::FitNet => {
                let out = hint_loss(et, es, &self.heads[0].module, norm)?;
                self.heads[0].step(&out.head_grads, lr);
                Ok((out.loss, out.grad_student))
            }
            Method::Ftd => {
                let out = ftd_loss(et, es, self.cfg.similarity, norm)?;
                Ok((out.loss, out.grad_student))
            }
            Method::De | Method::Htd => {
                let gamma = if self.cfg.method == Method::De { 0.0 } else { self.cfg.gamma };
                let params = self.cfg.htd_params(gamma);
                let heads = self.head_modules();
                match self.groups.as_mut().expect("grouped methods carry a group source") {
                    GroupSource::KMeans(km) => {
                        let assignment = km.assignment(et)?;
                        let out = htd_loss(et, es, &assignment, &heads, &params, false)?;
                        self.step_heads(&out.head_grads, lr);
                        Ok((out.loss, out.grad_student))
                    }
                    GroupSource::Learned { net, rng } => {
                        let sample = assign_groups(et, &net.module, self.cfg.tau, self.cfg.log_alpha, rng)?;
                        let out = htd_loss(et, es, &sample.assignment, &heads, &params, true)?;
                        let grad_z = out.grad_assignment.as_ref().expect("requested");
                        let grad_alpha = sample.backward_to_alpha(grad_z);
                        let net_grads = net.module.backward(et, &sample.alpha, &grad_alpha)?;
                        net.step(&net_grads, lr);
                        self.step_heads(&out.head_grads, lr);
                        Ok((out.loss, out.grad_student))
                    }
                }
            }
        }
    }
}

impl DistillHook for Distiller {
    fn lambda(&self) -> f64 {
        self.cfg.lambda_td
    }

    fn distill(&mut self, batch: &Batch, student: &EmbeddingModel, learning_rate: f64) -> Result<DistillOutput> {
        let (entities, et, es) = gather_batch_entities(batch, &self.teacher, student)?;
        let (loss, grad) = self.distill_rows(&et, &es, learning_rate)?;
        let (users, items) = entities.scatter(&grad);
        Ok(DistillOutput { loss, users, items })
    }
}

fn stack(top: &Matrix, bottom: &Matrix) -> Matrix {
    let mut data = top.data().to_vec();
    data.extend_from_slice(bottom.data());
    Matrix::new(top.rows() + bottom.rows(), top.cols(), data).expect("same width")
}

/// `None` for `Method::None`, otherwise a distiller around `teacher`.
pub fn build_distiller(
    cfg: &DistillConfig,
    teacher: EmbeddingModel,
    student_dim: usize,
    seed: u64,
) -> Result<Option<Distiller>> {
    match cfg.method {
        Method::None => {
            cfg.validate()?;
            Ok(None)
        }
        _ => Distiller::new(cfg.clone(), teacher, student_dim, seed).map(Some),
    }
}
