//! Prototypes and group-level relations.

use crate::error::{Error, Result};
use crate::numkernel::{Matrix, SimilarityCache, SimilarityKind};

use super::assign::AssignmentMatrix;

/// Which relations summarize the topology across groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GroupTopology {
    /// Prototype to prototype, `K×K`.
    ProtoProto,
    /// Prototype to every entity of the other groups, `K×b`.
    #[default]
    ProtoEntity,
}

/// How a squared-distance term is scaled before it enters a loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// Divide by the number of supervised entries (rows for hint terms).
    #[default]
    Mean,
    /// Plain sums.
    RawSums,
}

impl Normalization {
    pub fn factor(self, count: usize) -> f64 {
        match self {
            Self::Mean if count == 0 => 0.0,
            Self::Mean => 1.0 / count as f64,
            Self::RawSums => 1.0,
        }
    }
}

/// `P = Z̃ᵀ E`: row `k` is the mean of the rows assigned to group `k`, or zero
/// for an empty group.
pub fn prototypes(e: &Matrix, z_norm: &Matrix) -> Result<Matrix> {
    if e.rows() != z_norm.rows() {
        return Err(Error::Shape(format!("{} entities but {} assignment rows", e.rows(), z_norm.rows())));
    }
    z_norm.matmul_tn(e)
}

/// Group-level relation matrix with the entries that take part in the loss.
#[derive(Debug, Clone)]
pub struct GroupRelations {
    pub cache: SimilarityCache,
    pub mask: Matrix,
}

impl GroupRelations {
    pub fn value(&self) -> &Matrix {
        self.cache.value()
    }
}

/// Supervised entries of the group-level matrix. Rows of empty groups are
/// always off. `ProtoEntity` drops each group's own members; `ProtoProto`
/// keeps each unordered pair once.
pub fn group_mask(variant: GroupTopology, assignment: &AssignmentMatrix) -> Matrix {
    let sizes = &assignment.group_sizes;
    let k = sizes.len();
    match variant {
        GroupTopology::ProtoEntity => Matrix::from_fn(k, assignment.num_entities(), |g, j| {
            if sizes[g] > 0 && assignment.labels[j] != g {
                1.0
            } else {
                0.0
            }
        }),
        GroupTopology::ProtoProto => {
            Matrix::from_fn(k, k, |g, m| if g < m && sizes[g] > 0 && sizes[m] > 0 { 1.0 } else { 0.0 })
        }
    }
}

pub fn group_topology(
    p: &Matrix,
    e: &Matrix,
    variant: GroupTopology,
    assignment: &AssignmentMatrix,
    kind: SimilarityKind,
) -> Result<GroupRelations> {
    if p.rows() != assignment.num_groups() || e.rows() != assignment.num_entities() {
        return Err(Error::Shape(format!(
            "{}x{} prototypes/entities against an assignment of {} entities into {} groups",
            p.rows(),
            e.rows(),
            assignment.num_entities(),
            assignment.num_groups()
        )));
    }
    let cache = match variant {
        GroupTopology::ProtoEntity => SimilarityCache::forward(kind, p, e)?,
        GroupTopology::ProtoProto => SimilarityCache::forward(kind, p, p)?,
    };
    Ok(GroupRelations { cache, mask: group_mask(variant, assignment) })
}

/// Number of relations each part of a topology loss supervises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelationCounts {
    /// `Σ_k |G_k|²`.
    pub entity_level: usize,
    pub group_level: usize,
    /// `b²`, what the full topology would supervise.
    pub full: usize,
}

pub fn relation_counts(assignment: &AssignmentMatrix, variant: GroupTopology) -> RelationCounts {
    let b = assignment.num_entities();
    let sizes = &assignment.group_sizes;
    let nonempty = sizes.iter().filter(|&&s| s > 0).count();
    let group_level = match variant {
        GroupTopology::ProtoEntity => sizes.iter().filter(|&&s| s > 0).map(|&s| b - s).sum(),
        GroupTopology::ProtoProto => nonempty * nonempty.saturating_sub(1) / 2,
    };
    RelationCounts { entity_level: sizes.iter().map(|s| s * s).sum(), group_level, full: b * b }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::frob_sq_distance;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels_3_4() -> AssignmentMatrix {
        AssignmentMatrix::from_labels(&[0, 1, 0, 1, 1, 0, 1], 2).unwrap()
    }

    #[test]
    fn one_group_per_entity_gives_back_rows() {
        let e = Matrix::gaussian(4, 3, 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        let a = AssignmentMatrix::from_labels(&[2, 0, 3, 1], 4).unwrap();
        let p = prototypes(&e, &a.z_norm).unwrap();
        for (i, &l) in a.labels.iter().enumerate() {
            assert_eq!(p.row(l), e.row(i));
        }
    }

    #[test]
    fn single_group_prototype_is_mean() {
        let e = Matrix::gaussian(5, 3, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        let a = AssignmentMatrix::from_labels(&[0; 5], 1).unwrap();
        let p = prototypes(&e, &a.z_norm).unwrap();
        for c in 0..3 {
            let mean = (0..5).map(|i| e[(i, c)]).sum::<f64>() / 5.0;
            assert!((p[(0, c)] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_prototypes_have_unit_relations() {
        let p = Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0]]).unwrap();
        let e = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let a = AssignmentMatrix::from_labels(&[0, 1], 2).unwrap();
        let h = group_topology(&p, &e, GroupTopology::ProtoProto, &a, SimilarityKind::Cosine).unwrap();
        assert!(h.value().max_abs_diff(&Matrix::filled(2, 2, 1.0)) < 1e-12);
    }

    #[test]
    fn single_group_excludes_everything() {
        let e = Matrix::gaussian(6, 3, 1.0, &mut ChaCha8Rng::seed_from_u64(2));
        let a = AssignmentMatrix::from_labels(&[0; 6], 1).unwrap();
        let p = prototypes(&e, &a.z_norm).unwrap();
        let ht = group_topology(&p, &e, GroupTopology::ProtoEntity, &a, SimilarityKind::Cosine).unwrap();
        assert_eq!(ht.mask.sum(), 0.0);
        let other = Matrix::gaussian(1, 6, 1.0, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(frob_sq_distance(ht.value(), &other, Some(&ht.mask)).unwrap(), 0.0);
    }

    #[test]
    fn relation_counts_for_groups_of_three_and_four() {
        let a = labels_3_4();
        let pe = relation_counts(&a, GroupTopology::ProtoEntity);
        assert_eq!((pe.entity_level, pe.group_level, pe.full), (9 + 16, 3 + 4, 49));
        assert_eq!(group_mask(GroupTopology::ProtoEntity, &a).sum(), 7.0);
        let pp = relation_counts(&a, GroupTopology::ProtoProto);
        assert_eq!(pp.group_level, 1);
        assert_eq!(group_mask(GroupTopology::ProtoProto, &a).sum(), 1.0);
    }

    #[test]
    fn empty_group_rows_are_masked() {
        let a = AssignmentMatrix::from_labels(&[0, 0, 2], 3).unwrap();
        let m = group_mask(GroupTopology::ProtoEntity, &a);
        assert!(m.row(1).iter().all(|&v| v == 0.0));
        assert_eq!(m.row(0), [0.0, 0.0, 1.0]);
        let pp = group_mask(GroupTopology::ProtoProto, &a);
        assert_eq!(pp.sum(), 1.0);
        assert_eq!(pp[(0, 2)], 1.0);
    }

    #[test]
    fn normalization_factors() {
        assert_eq!(Normalization::Mean.factor(4), 0.25);
        assert_eq!(Normalization::Mean.factor(0), 0.0);
        assert_eq!(Normalization::RawSums.factor(4), 1.0);
    }

    proptest! {
        #[test]
        fn prototypes_match_group_means(seed in any::<u64>(), b in 1usize..15, k in 1usize..5) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let labels: Vec<usize> = (0..b).map(|_| r.random_range(0..k)).collect();
            let a = AssignmentMatrix::from_labels(&labels, k).unwrap();
            let e = Matrix::gaussian(b, 3, 1.0, &mut r);
            let p = prototypes(&e, &a.z_norm).unwrap();
            for g in 0..k {
                let members = a.members(g);
                for c in 0..3 {
                    let want = if members.is_empty() {
                        0.0
                    } else {
                        members.iter().map(|&i| e[(i, c)]).sum::<f64>() / members.len() as f64
                    };
                    prop_assert!((p[(g, c)] - want).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn prototypes_are_linear(seed in any::<u64>(), b in 1usize..12, k in 1usize..4) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let labels: Vec<usize> = (0..b).map(|_| r.random_range(0..k)).collect();
            let a = AssignmentMatrix::from_labels(&labels, k).unwrap();
            let e1 = Matrix::gaussian(b, 4, 1.0, &mut r);
            let e2 = Matrix::gaussian(b, 4, 1.0, &mut r);
            let mut sum = e1.clone();
            sum.add_assign(&e2).unwrap();
            let mut lhs = prototypes(&e1, &a.z_norm).unwrap();
            lhs.add_assign(&prototypes(&e2, &a.z_norm).unwrap()).unwrap();
            prop_assert!(lhs.max_abs_diff(&prototypes(&sum, &a.z_norm).unwrap()) < 1e-12);
        }
    }
}
