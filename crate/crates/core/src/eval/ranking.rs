use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::SplitDataset;
use crate::error::{Error, Result};
use crate::model::EmbeddingModel;

pub const DEFAULT_CUTOFFS: [usize; 3] = [10, 20, 50];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalTarget {
    /// Rank the validation item; mask train items.
    Validation,
    /// Rank the test item; mask train and validation items.
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub cutoffs: Vec<usize>,
    /// Mean Recall@N, aligned with `cutoffs`.
    pub recall: Vec<f64>,
    /// Mean NDCG@N, aligned with `cutoffs`.
    pub ndcg: Vec<f64>,
    /// 1-based rank of the held-out item per user; `None` when skipped.
    pub ranks: Vec<Option<usize>>,
    pub evaluated_users: usize,
}

impl RankingResult {
    fn rows(&self) -> Vec<(String, f64)> {
        let mut rows = Vec::new();
        for (k, &n) in self.cutoffs.iter().enumerate() {
            rows.push((format!("recall@{n}"), self.recall[k]));
        }
        for (k, &n) in self.cutoffs.iter().enumerate() {
            rows.push((format!("ndcg@{n}"), self.ndcg[k]));
        }
        rows
    }

    /// `metric=recall@50 value=0.2803` lines, recall first.
    pub fn metric_lines(&self) -> Vec<String> {
        self.rows().into_iter().map(|(m, v)| format!("metric={m} value={v:.4}")).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (m, v) in self.rows() {
            writeln!(out, "{m},{v}").unwrap();
        }
        out
    }

    pub fn recall_at(&self, n: usize) -> Option<f64> {
        self.cutoffs.iter().position(|&c| c == n).map(|k| self.recall[k])
    }

    pub fn ndcg_at(&self, n: usize) -> Option<f64> {
        self.cutoffs.iter().position(|&c| c == n).map(|k| self.ndcg[k])
    }
}

pub fn recall_at(rank: usize, n: usize) -> f64 {
    if rank <= n {
        1.0
    } else {
        0.0
    }
}

/// NDCG@N with a single relevant item: `1 / log2(rank + 1)` inside the cutoff.
pub fn ndcg_at(rank: usize, n: usize) -> f64 {
    if rank <= n {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

/// Ranks each user's held-out item against every item the user has not
/// observed. Ties count against the held-out item.
pub fn full_ranking_eval(
    model: &EmbeddingModel,
    split: &SplitDataset,
    cutoffs: &[usize],
    target: EvalTarget,
) -> Result<RankingResult> {
    if model.num_users() != split.num_users() || model.num_items() != split.num_items() {
        return Err(Error::Shape(format!(
            "model covers {}x{} entities, split {}x{}",
            model.num_users(),
            model.num_items(),
            split.num_users(),
            split.num_items()
        )));
    }
    let train = split.train.items_by_user();
    let ranks: Vec<Option<usize>> = (0..split.num_users())
        .into_par_iter()
        .map(|u| {
            let held = match target {
                EvalTarget::Validation => split.validation[u],
                EvalTarget::Test => split.test[u],
            }?;
            let scores = model.score_all(u);
            let mut excluded = vec![false; scores.len()];
            train[u].iter().for_each(|&i| excluded[i] = true);
            if target == EvalTarget::Test {
                if let Some(v) = split.validation[u] {
                    excluded[v] = true;
                }
            }
            let s = scores[held];
            let above = scores
                .iter()
                .enumerate()
                .filter(|&(j, &sj)| j != held && !excluded[j] && sj >= s)
                .count();
            Some(above + 1)
        })
        .collect();

    let evaluated: Vec<usize> = ranks.iter().flatten().copied().collect();
    if evaluated.is_empty() {
        return Err(Error::Data("no user has a held-out item to evaluate".into()));
    }
    let n_users = evaluated.len() as f64;
    let recall = cutoffs.iter().map(|&n| evaluated.iter().map(|&r| recall_at(r, n)).sum::<f64>() / n_users).collect();
    let ndcg = cutoffs.iter().map(|&n| evaluated.iter().map(|&r| ndcg_at(r, n)).sum::<f64>() / n_users).collect();
    Ok(RankingResult { cutoffs: cutoffs.to_vec(), recall, ndcg, ranks, evaluated_users: evaluated.len() })
}
