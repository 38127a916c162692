//! How well does the student keep the teacher's neighborhoods?
//!
//! For each entity, a reference set is chosen in teacher space (its most
//! similar entities, or a uniform random sample). Softmax over the cosine
//! similarities to that set gives a teacher distribution `p` and a student
//! distribution `q` over the same entities; the report holds the mean
//! `KL(p ‖ q)` for each kind of set.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::EmbeddingModel;
use crate::numkernel::{dot, normalize_rows, Matrix};

pub const PROBE_SET_SIZE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProbeEntities {
    Users,
    #[default]
    Items,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlProbeReport {
    pub most_similar: f64,
    pub random: f64,
    pub entities: usize,
}

pub fn probe_entities(model: &EmbeddingModel, which: ProbeEntities) -> Matrix {
    match which {
        ProbeEntities::Users => model.users.clone(),
        ProbeEntities::Items => model.items.clone(),
        ProbeEntities::Both => {
            let mut data = model.users.data().to_vec();
            data.extend_from_slice(model.items.data());
            Matrix::new(model.num_users() + model.num_items(), model.dim(), data).expect("stacked tables")
        }
    }
}

/// Mean KL divergence between teacher and student similarity distributions
/// over `num_neighbors` nearest and `num_random` random reference entities.
pub fn kl_topology_probe<R: Rng + ?Sized>(
    teacher: &Matrix,
    student: &Matrix,
    num_neighbors: usize,
    num_random: usize,
    rng: &mut R,
) -> Result<KlProbeReport> {
    let n = teacher.rows();
    if student.rows() != n {
        return Err(Error::Shape(format!("teacher has {n} entities, student {}", student.rows())));
    }
    let needed = num_neighbors.max(num_random) + 1;
    if n < needed {
        return Err(Error::Data(format!("probe needs at least {needed} entities, got {n}")));
    }
    if num_neighbors == 0 || num_random == 0 {
        return Err(Error::Config("probe set sizes must be at least 1".into()));
    }

    // random sets are drawn up front so the result does not depend on thread scheduling
    let random_sets: Vec<Vec<usize>> = (0..n)
        .map(|i| sample(rng, n - 1, num_random).into_iter().map(|j| if j >= i { j + 1 } else { j }).collect())
        .collect();

    let (t_unit, _) = normalize_rows(teacher);
    let (s_unit, _) = normalize_rows(student);

    let per_entity: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let ti = t_unit.row(i);
            let si = s_unit.row(i);
            let mut sims: Vec<(f64, usize)> =
                (0..n).filter(|&j| j != i).map(|j| (dot(ti, t_unit.row(j)), j)).collect();
            // descending similarity, ties by index
            sims.select_nth_unstable_by(num_neighbors - 1, |a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let nearest: Vec<usize> = sims[..num_neighbors].iter().map(|&(_, j)| j).collect();
            let kl_for = |set: &[usize]| {
                let p: Vec<f64> = set.iter().map(|&j| dot(ti, t_unit.row(j))).collect();
                let q: Vec<f64> = set.iter().map(|&j| dot(si, s_unit.row(j))).collect();
                kl_of_softmax(&p, &q)
            };
            (kl_for(&nearest), kl_for(&random_sets[i]))
        })
        .collect();

    let most_similar = per_entity.iter().map(|e| e.0).sum::<f64>() / n as f64;
    let random = per_entity.iter().map(|e| e.1).sum::<f64>() / n as f64;
    Ok(KlProbeReport { most_similar, random, entities: n })
}

/// `KL(softmax(p) ‖ softmax(q))` from logits, clamped at zero.
pub(crate) fn kl_of_softmax(p_logits: &[f64], q_logits: &[f64]) -> f64 {
    let log_p = log_softmax(p_logits);
    let log_q = log_softmax(q_logits);
    let kl: f64 = log_p.iter().zip(&log_q).map(|(lp, lq)| lp.exp() * (lp - lq)).sum();
    kl.max(0.0)
}

fn log_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}
