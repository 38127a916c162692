//! Distillation losses and their exact gradients.
//!
//! Every loss takes teacher rows `E_t` (constants) and student rows `E_s`
//! aligned row by row, and returns the gradient w.r.t. `E_s` together with
//! the gradients of any head or assignment parameters it uses.

use crate::error::{Error, Result};
use crate::numkernel::{Matrix, SimilarityCache, SimilarityKind};

use super::assign::AssignmentMatrix;
use super::heads::ProjectionHead;
use super::topology::{group_topology, prototypes, relation_counts, GroupTopology, Normalization};

#[derive(Debug, Clone)]
pub struct HintOutput {
    pub loss: f64,
    pub grad_student: Matrix,
    pub head_grads: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DeOutput {
    pub loss: f64,
    pub grad_student: Matrix,
    /// One gradient buffer per head; zeros for heads with no members.
    pub head_grads: Vec<Vec<f64>>,
    /// `dL/dZ`, present when requested.
    pub grad_assignment: Option<Matrix>,
}

#[derive(Debug, Clone)]
pub struct FtdOutput {
    pub loss: f64,
    pub grad_student: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HtdParams {
    pub gamma: f64,
    pub group_topology: GroupTopology,
    pub similarity: SimilarityKind,
    pub normalization: Normalization,
}

impl Default for HtdParams {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            group_topology: GroupTopology::default(),
            similarity: SimilarityKind::default(),
            normalization: Normalization::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HtdOutput {
    pub loss: f64,
    pub group_level: f64,
    pub entity_level: f64,
    pub hint: f64,
    pub grad_student: Matrix,
    pub head_grads: Vec<Vec<f64>>,
    pub grad_assignment: Option<Matrix>,
}

fn check_aligned(et: &Matrix, es: &Matrix) -> Result<()> {
    if et.rows() != es.rows() {
        return Err(Error::Shape(format!("{} teacher rows but {} student rows", et.rows(), es.rows())));
    }
    Ok(())
}

/// `c · Σ mask (s − t)²` and its gradient w.r.t. `s`.
fn masked_sq_diff(s: &Matrix, t: &Matrix, mask: Option<&Matrix>, c: f64) -> (f64, Matrix) {
    let mut grad = Matrix::zeros(s.rows(), s.cols());
    let mut loss = 0.0;
    for (idx, g) in grad.data_mut().iter_mut().enumerate() {
        let w = mask.map_or(1.0, |m| m.data()[idx]);
        if w != 0.0 {
            let d = s.data()[idx] - t.data()[idx];
            loss += w * d * d;
            *g = 2.0 * c * w * d;
        }
    }
    (c * loss, grad)
}

/// `Σ_i ‖e_i^t − f(e_i^s)‖²`, averaged over rows unless `RawSums`.
pub fn hint_loss(et: &Matrix, es: &Matrix, head: &ProjectionHead, norm: Normalization) -> Result<HintOutput> {
    check_aligned(et, es)?;
    let cache = head.forward(es)?;
    let (loss, grad_out) = masked_sq_diff(&cache.output, et, None, norm.factor(et.rows()));
    let (grad_student, head_grads) = head.backward(&cache, &grad_out)?;
    Ok(HintOutput { loss, grad_student, head_grads })
}

/// `Σ_i ‖e_i^t − Σ_k z_ik f_k(e_i^s)‖²`, averaged over rows unless `RawSums`.
///
/// With `want_assignment_grad`, every head runs on every row so that
/// `dL/dz_ik = ⟨dL/dmix_i, f_k(e_i^s)⟩` is available.
pub fn de_loss(
    et: &Matrix,
    es: &Matrix,
    assignment: &AssignmentMatrix,
    heads: &[ProjectionHead],
    norm: Normalization,
    want_assignment_grad: bool,
) -> Result<DeOutput> {
    check_aligned(et, es)?;
    let b = et.rows();
    if assignment.num_entities() != b || heads.len() != assignment.num_groups() {
        return Err(Error::Shape(format!(
            "{b} rows and {} heads against an assignment of {} entities into {} groups",
            heads.len(),
            assignment.num_entities(),
            assignment.num_groups()
        )));
    }
    let members: Vec<Vec<usize>> = (0..heads.len()).map(|k| assignment.members(k)).collect();

    let mut mix = Matrix::zeros(b, et.cols());
    let mut caches = Vec::with_capacity(heads.len());
    for (head, rows) in heads.iter().zip(&members) {
        if rows.is_empty() {
            caches.push(None);
            continue;
        }
        let cache = head.forward(&es.gather_rows(rows))?;
        for (r, &i) in rows.iter().enumerate() {
            mix.row_mut(i).copy_from_slice(cache.output.row(r));
        }
        caches.push(Some(cache));
    }
    let (loss, grad_mix) = masked_sq_diff(&mix, et, None, norm.factor(b));

    let mut grad_student = Matrix::zeros(b, es.cols());
    let mut head_grads = Vec::with_capacity(heads.len());
    for ((head, rows), cache) in heads.iter().zip(&members).zip(&caches) {
        let Some(cache) = cache else {
            head_grads.push(vec![0.0; head.num_params()]);
            continue;
        };
        let (g_in, g_params) = head.backward(cache, &grad_mix.gather_rows(rows))?;
        for (r, &i) in rows.iter().enumerate() {
            grad_student.row_mut(i).copy_from_slice(g_in.row(r));
        }
        head_grads.push(g_params);
    }

    let grad_assignment = if want_assignment_grad {
        let mut gz = Matrix::zeros(b, heads.len());
        for (k, head) in heads.iter().enumerate() {
            let out = head.forward(es)?.output;
            for i in 0..b {
                gz[(i, k)] = crate::numkernel::dot(grad_mix.row(i), out.row(i));
            }
        }
        Some(gz)
    } else {
        None
    };
    Ok(DeOutput { loss, grad_student, head_grads, grad_assignment })
}

/// `‖Aᵗ − Aˢ‖²_F` over the full `b×b` similarity matrices, averaged over
/// `b²` entries unless `RawSums`.
pub fn ftd_loss(et: &Matrix, es: &Matrix, kind: SimilarityKind, norm: Normalization) -> Result<FtdOutput> {
    check_aligned(et, es)?;
    let b = et.rows();
    let at = SimilarityCache::forward(kind, et, et)?;
    let as_ = SimilarityCache::forward(kind, es, es)?;
    let (loss, grad_a) = masked_sq_diff(as_.value(), at.value(), None, norm.factor(b * b));
    let (mut grad_student, right) = as_.backward(&grad_a)?;
    grad_student.add_assign(&right)?;
    Ok(FtdOutput { loss, grad_student })
}

/// `γ·(‖Hᵗ − Hˢ‖² + ‖M⊙(Aᵗ − Aˢ)‖²) + (1 − γ)·DE`.
///
/// The assignment is a constant of the topology terms; only the DE term
/// reports a gradient w.r.t. `Z`.
pub fn htd_loss(
    et: &Matrix,
    es: &Matrix,
    assignment: &AssignmentMatrix,
    heads: &[ProjectionHead],
    params: &HtdParams,
    want_assignment_grad: bool,
) -> Result<HtdOutput> {
    check_aligned(et, es)?;
    if assignment.num_entities() != et.rows() {
        return Err(Error::Shape(format!(
            "{} rows against an assignment of {} entities",
            et.rows(),
            assignment.num_entities()
        )));
    }
    let gamma = params.gamma;
    let mut grad_student = Matrix::zeros(es.rows(), es.cols());
    let (mut group_level, mut entity_level) = (0.0, 0.0);

    if gamma > 0.0 {
        let counts = relation_counts(assignment, params.group_topology);
        let kind = params.similarity;

        // group level
        let pt = prototypes(et, &assignment.z_norm)?;
        let ps = prototypes(es, &assignment.z_norm)?;
        let ht = group_topology(&pt, et, params.group_topology, assignment, kind)?;
        let hs = group_topology(&ps, es, params.group_topology, assignment, kind)?;
        let c_group = params.normalization.factor(counts.group_level);
        let (lg, grad_h) = masked_sq_diff(hs.value(), ht.value(), Some(&hs.mask), c_group);
        group_level = lg;
        let (left, right) = hs.cache.backward(&grad_h)?;
        let grad_p = match params.group_topology {
            GroupTopology::ProtoEntity => {
                grad_student.axpy(gamma, &right)?;
                left
            }
            GroupTopology::ProtoProto => {
                let mut g = left;
                g.add_assign(&right)?;
                g
            }
        };
        grad_student.axpy(gamma, &assignment.z_norm.matmul(&grad_p)?)?;

        // entity level, inside each group
        let at = SimilarityCache::forward(kind, et, et)?;
        let as_ = SimilarityCache::forward(kind, es, es)?;
        let c_entity = params.normalization.factor(counts.entity_level);
        let (le, grad_a) = masked_sq_diff(as_.value(), at.value(), Some(&assignment.mask), c_entity);
        entity_level = le;
        let (left, right) = as_.backward(&grad_a)?;
        grad_student.axpy(gamma, &left)?;
        grad_student.axpy(gamma, &right)?;
    }

    let (hint, head_grads, grad_assignment) = if gamma < 1.0 {
        let w = 1.0 - gamma;
        let de = de_loss(et, es, assignment, heads, params.normalization, want_assignment_grad)?;
        grad_student.axpy(w, &de.grad_student)?;
        let head_grads = de.head_grads.into_iter().map(|g| g.into_iter().map(|v| w * v).collect()).collect();
        (de.loss, head_grads, de.grad_assignment.map(|g| g.scaled(w)))
    } else {
        let zeros = heads.iter().map(|h| vec![0.0; h.num_params()]).collect();
        let gz = want_assignment_grad.then(|| Matrix::zeros(et.rows(), assignment.num_groups()));
        (0.0, zeros, gz)
    };

    let loss = gamma * (group_level + entity_level) + (1.0 - gamma) * hint;
    Ok(HtdOutput { loss, group_level, entity_level, hint, grad_student, head_grads, grad_assignment })
}
