//! Preference-group assignment: the one-hot matrix `Z` and what derives from
//! it, Gumbel-Softmax sampling from the assignment network, and K-means.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numkernel::{dot, Matrix};

use super::heads::{softmax_backward, softmax_in_place, AssignmentNetwork};

/// One-hot group assignment of `b` entities into `K` groups.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix {
    /// `b×K`, one 1 per row.
    pub z: Matrix,
    /// `Z` with each non-empty column divided by its group size.
    pub z_norm: Matrix,
    /// `Z Zᵀ`: `m_ij = 1` iff entities `i` and `j` share a group.
    pub mask: Matrix,
    pub group_sizes: Vec<usize>,
    pub labels: Vec<usize>,
}

impl AssignmentMatrix {
    pub fn from_labels(labels: &[usize], num_groups: usize) -> Result<Self> {
        if num_groups == 0 {
            return Err(Error::Config("number of groups must be at least 1".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_groups) {
            return Err(Error::Index(format!("group label {bad} with only {num_groups} groups")));
        }
        let b = labels.len();
        let mut group_sizes = vec![0usize; num_groups];
        labels.iter().for_each(|&l| group_sizes[l] += 1);
        let z = Matrix::from_fn(b, num_groups, |i, k| if labels[i] == k { 1.0 } else { 0.0 });
        let z_norm = Matrix::from_fn(b, num_groups, |i, k| if labels[i] == k { 1.0 / group_sizes[k] as f64 } else { 0.0 });
        let mask = Matrix::from_fn(b, b, |i, j| if labels[i] == labels[j] { 1.0 } else { 0.0 });
        Ok(Self { z, z_norm, mask, group_sizes, labels: labels.to_vec() })
    }

    pub fn num_groups(&self) -> usize {
        self.group_sizes.len()
    }

    pub fn num_entities(&self) -> usize {
        self.labels.len()
    }

    pub fn members(&self, group: usize) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|&(_, &l)| l == group).map(|(i, _)| i).collect()
    }
}

/// Draws standard Gumbel noise `−ln(−ln u)`.
pub fn gumbel_noise<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        -(-u.ln()).ln()
    })
}

/// `softmax((α + g)/τ)` row-wise, or `softmax((ln α + g)/τ)` when
/// `log_alpha` is set.
pub fn gumbel_softmax(alpha: &Matrix, noise: &Matrix, tau: f64, log_alpha: bool) -> Matrix {
    let mut out = Matrix::from_fn(alpha.rows(), alpha.cols(), |i, k| {
        let a = alpha[(i, k)];
        let a = if log_alpha { a.max(f64::MIN_POSITIVE).ln() } else { a };
        (a + noise[(i, k)]) / tau
    });
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

/// Result of sampling group assignments from the assignment network.
#[derive(Debug, Clone)]
pub struct GumbelAssignment {
    pub assignment: AssignmentMatrix,
    /// Assignment probabilities `α`.
    pub alpha: Matrix,
    /// The relaxed sample; the straight-through backward pass goes through it.
    pub soft: Matrix,
    pub tau: f64,
    pub log_alpha: bool,
}

impl GumbelAssignment {
    /// Maps `dL/dZ` (taken as `dL/d soft`) back to `dL/dα`.
    pub fn backward_to_alpha(&self, grad_z: &Matrix) -> Matrix {
        let mut g = softmax_backward(&self.soft, grad_z);
        g.scale(1.0 / self.tau);
        if self.log_alpha {
            for (gv, &a) in g.data_mut().iter_mut().zip(self.alpha.data()) {
                *gv /= a.max(f64::MIN_POSITIVE);
            }
        }
        g
    }
}

/// Samples hard groups for the teacher rows `teacher` through `net`.
pub fn assign_groups<R: Rng + ?Sized>(
    teacher: &Matrix,
    net: &AssignmentNetwork,
    tau: f64,
    log_alpha: bool,
    rng: &mut R,
) -> Result<GumbelAssignment> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("tau must be > 0, got {tau}")));
    }
    let alpha = net.forward(teacher)?;
    let noise = gumbel_noise(alpha.rows(), alpha.cols(), rng);
    let soft = gumbel_softmax(&alpha, &noise, tau, log_alpha);
    let labels: Vec<usize> = soft.row_iter().map(argmax).collect();
    let assignment = AssignmentMatrix::from_labels(&labels, net.groups())?;
    Ok(GumbelAssignment { assignment, alpha, soft, tau, log_alpha })
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's K-means with k-means++ seeding.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Matrix,
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub model: KMeans,
    pub labels: Vec<usize>,
    /// Within-cluster sum of squares after every assignment step.
    pub sse_trace: Vec<f64>,
}

impl KMeans {
    pub fn fit<R: Rng + ?Sized>(data: &Matrix, k: usize, iterations: usize, rng: &mut R) -> Result<KMeansFit> {
        let n = data.rows();
        if k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if n < k {
            return Err(Error::Data(format!("cannot form {k} clusters from {n} points")));
        }
        let mut centroids = seed_plus_plus(data, k, rng);
        let mut labels = vec![usize::MAX; n];
        let mut sse_trace = Vec::new();
        for _ in 0..iterations.max(1) {
            let (new_labels, dists) = nearest(&centroids, data);
            sse_trace.push(dists.iter().sum());
            let changed = new_labels != labels;
            labels = new_labels;
            if !changed {
                break;
            }
            // update step
            let mut sums = Matrix::zeros(k, data.cols());
            let mut counts = vec![0usize; k];
            for (i, &l) in labels.iter().enumerate() {
                counts[l] += 1;
                for (s, &v) in sums.row_mut(l).iter_mut().zip(data.row(i)) {
                    *s += v;
                }
            }
            let mut taken = vec![false; n];
            for c in 0..k {
                if counts[c] > 0 {
                    let inv = 1.0 / counts[c] as f64;
                    for (dst, &s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                        *dst = s * inv;
                    }
                } else {
                    // empty cluster: move it onto the worst-served point
                    let far = (0..n)
                        .filter(|&i| !taken[i])
                        .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                        .expect("n >= k leaves a free point");
                    taken[far] = true;
                    centroids.row_mut(c).copy_from_slice(data.row(far));
                }
            }
        }
        Ok(KMeansFit { model: KMeans { centroids }, labels, sse_trace })
    }

    pub fn num_groups(&self) -> usize {
        self.centroids.rows()
    }

    pub fn assign(&self, data: &Matrix) -> Vec<usize> {
        nearest(&self.centroids, data).0
    }

    pub fn assignment(&self, data: &Matrix) -> Result<AssignmentMatrix> {
        AssignmentMatrix::from_labels(&self.assign(data), self.num_groups())
    }
}

fn nearest(centroids: &Matrix, data: &Matrix) -> (Vec<usize>, Vec<f64>) {
    let cn: Vec<f64> = centroids.row_iter().map(|c| dot(c, c)).collect();
    let cross = data.matmul_nt(centroids).expect("same width");
    let mut labels = Vec::with_capacity(data.rows());
    let mut dists = Vec::with_capacity(data.rows());
    for i in 0..data.rows() {
        let x = data.row(i);
        let xn = dot(x, x);
        let (mut best, mut best_d) = (0, f64::INFINITY);
        for c in 0..centroids.rows() {
            let d = (xn + cn[c] - 2.0 * cross[(i, c)]).max(0.0);
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        labels.push(best);
        dists.push(sq_dist(x, centroids.row(best)));
    }
    (labels, dists)
}

fn seed_plus_plus<R: Rng + ?Sized>(data: &Matrix, k: usize, rng: &mut R) -> Matrix {
    let n = data.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(data.row(i), data.row(chosen[0]))).collect();
    while chosen.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // every point coincides with a chosen centroid
            Err(_) => (0..n).find(|i| !chosen.contains(i)).expect("n >= k"),
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(data.row(i), data.row(next)));
        }
    }
    data.gather_rows(&chosen)
}

/// Fits K-means on `teacher` and returns the resulting assignment.
pub fn kmeans_assign<R: Rng + ?Sized>(teacher: &Matrix, k: usize, iterations: usize, rng: &mut R) -> Result<AssignmentMatrix> {
    let fit = KMeans::fit(teacher, k, iterations, rng)?;
    AssignmentMatrix::from_labels(&fit.labels, k)
}
