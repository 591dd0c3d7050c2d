use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::ClusterPartition;

const NONE: u32 = u32::MAX;

/// Which within-cluster pairs `(p, q)` of positions carry a possibly
/// non-zero error covariance.
#[derive(Clone, Default)]
pub enum PairRestriction {
    /// Every within-cluster pair.
    #[default]
    None,
    /// Pairs at most `max_lag` positions apart, as under an MA(q) error.
    Band { max_lag: usize },
    /// Arbitrary predicate on `(cluster, position p, position q)`.
    Custom(Arc<dyn Fn(usize, usize, usize) -> bool + Send + Sync>),
}

impl fmt::Debug for PairRestriction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PairRestriction::None => write!(f, "None"),
            PairRestriction::Band { max_lag } => write!(f, "Band {{ max_lag: {max_lag} }}"),
            PairRestriction::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl PairRestriction {
    fn admits(&self, cluster: usize, p: usize, q: usize) -> bool {
        match self {
            PairRestriction::None => true,
            PairRestriction::Band { max_lag } => p.abs_diff(q) <= *max_lag,
            PairRestriction::Custom(f) => f(cluster, p, q),
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, PairRestriction::None)
    }
}

/// One ordered within-cluster pair of observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub cluster: usize,
    pub i: usize,
    pub j: usize,
}

/// Enumeration of the admissible ordered within-cluster pairs: cluster by
/// cluster, then `i` outer and `j` inner in observation order.
#[derive(Debug, Clone)]
pub struct PairIndex {
    pairs: Vec<Pair>,
    n: usize,
    groups: Vec<Vec<usize>>,
    positions: Vec<usize>,
    membership: Vec<usize>,
    /// Per cluster, an s × s row-major table from positions to pair index.
    lookup: Vec<Vec<u32>>,
    restricted: bool,
}

pub fn build_pair_index(
    partition: &ClusterPartition,
    restriction: &PairRestriction,
) -> Result<PairIndex> {
    let positions = partition.positions();
    let mut pairs = Vec::new();
    let mut lookup = Vec::with_capacity(partition.n_clusters());
    for (g, members) in partition.groups.iter().enumerate() {
        let s = members.len();
        for p in 0..s {
            if !restriction.admits(g, p, p) {
                return Err(Error::DiagonalRestricted {
                    cluster: g,
                    position: p,
                });
            }
            for q in 0..p {
                if restriction.admits(g, p, q) != restriction.admits(g, q, p) {
                    let (p, q) = if restriction.admits(g, p, q) {
                        (p, q)
                    } else {
                        (q, p)
                    };
                    return Err(Error::AsymmetricRestriction { cluster: g, p, q });
                }
            }
        }
        let mut table = vec![NONE; s * s];
        for (p, &i) in members.iter().enumerate() {
            for (q, &j) in members.iter().enumerate() {
                if restriction.admits(g, p, q) {
                    let idx = u32::try_from(pairs.len()).expect("pair count exceeds u32 range");
                    table[p * s + q] = idx;
                    pairs.push(Pair { cluster: g, i, j });
                }
            }
        }
        lookup.push(table);
    }
    Ok(PairIndex {
        pairs,
        n: partition.n_obs(),
        groups: partition.groups.clone(),
        positions,
        membership: partition.membership.clone(),
        lookup,
        restricted: !restriction.is_none(),
    })
}

impl PairIndex {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn n_obs(&self) -> usize {
        self.n
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn is_restricted(&self) -> bool {
        self.restricted
    }

    /// Position of each observation within its cluster.
    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    /// Cluster index of each observation.
    pub fn membership(&self) -> &[usize] {
        &self.membership
    }

    /// Index of the pair `(i, j)`, if both observations share a cluster and
    /// the pair is admissible.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let g = self.membership[i];
        if self.membership[j] != g {
            return None;
        }
        let s = self.groups[g].len();
        let idx = self.lookup[g][self.positions[i] * s + self.positions[j]];
        (idx != NONE).then_some(idx as usize)
    }

    /// Index of the swapped pair `(j, i)`.
    pub fn swap(&self, a: usize) -> usize {
        let p = self.pairs[a];
        self.position(p.j, p.i).expect("restrictions are symmetric")
    }

    /// Plain `(i, j)` tuples, in index order.
    pub fn as_tuples(&self) -> Vec<(usize, usize)> {
        self.pairs.iter().map(|p| (p.i, p.j)).collect()
    }

    /// Unordered view: one representative `(i, j)` with `i` at or before `j`
    /// in the cluster for each swap orbit.
    pub fn collapsed(&self) -> CollapsedPairs {
        let mut reps = Vec::new();
        let mut of_ordered = vec![usize::MAX; self.pairs.len()];
        for (a, p) in self.pairs.iter().enumerate() {
            if self.positions[p.i] <= self.positions[p.j] {
                of_ordered[a] = reps.len();
                reps.push(a);
            }
        }
        for a in 0..self.pairs.len() {
            if of_ordered[a] == usize::MAX {
                of_ordered[a] = of_ordered[self.swap(a)];
            }
        }
        CollapsedPairs { reps, of_ordered }
    }
}

/// Unordered pairs; each represents `(i, j)` and `(j, i)` together.
#[derive(Debug, Clone)]
pub struct CollapsedPairs {
    /// Ordered-pair index of each representative.
    pub reps: Vec<usize>,
    /// Unordered index of every ordered pair.
    pub of_ordered: Vec<usize>,
}

impl CollapsedPairs {
    pub fn len(&self) -> usize {
        self.reps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reps.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::partition_clusters;

    #[test]
    fn two_clusters_of_two() {
        let idx =
            build_pair_index(&partition_clusters(&[0, 0, 1, 1]), &PairRestriction::None).unwrap();
        assert_eq!(idx.len(), 8);
        assert_eq!(
            idx.pairs()[1],
            Pair {
                cluster: 0,
                i: 0,
                j: 1
            }
        );
        assert_eq!(
            idx.pairs()[2],
            Pair {
                cluster: 0,
                i: 1,
                j: 0
            }
        );
        assert_eq!(idx.position(2, 3), Some(5));
        assert_eq!(idx.position(0, 3), None);
        assert_eq!(idx.swap(5), 6);
    }

    #[test]
    fn singletons() {
        let idx = build_pair_index(
            &partition_clusters(&[0, 1, 2, 3, 4]),
            &PairRestriction::None,
        )
        .unwrap();
        assert_eq!(idx.len(), 5);
        assert!(idx.pairs().iter().all(|p| p.i == p.j));
    }

    #[test]
    fn band_restriction_on_cluster_of_three() {
        let idx = build_pair_index(
            &partition_clusters(&[0, 0, 0]),
            &PairRestriction::Band { max_lag: 1 },
        )
        .unwrap();
        // 3 × 3 grid without the two corner pairs (0, 2) and (2, 0)
        let brute = (0..3usize)
            .flat_map(|p| (0..3usize).map(move |q| (p, q)))
            .filter(|&(p, q)| p.abs_diff(q) <= 1)
            .count();
        assert_eq!(brute, 7);
        assert_eq!(idx.len(), 7);
        assert_eq!(idx.position(0, 2), None);
        assert!(idx.is_restricted());
    }

    #[test]
    fn diagonal_exclusion_is_an_error() {
        let r = PairRestriction::Custom(Arc::new(|_, p, q| p != q || p != 1));
        let err = build_pair_index(&partition_clusters(&[0, 0, 0]), &r).unwrap_err();
        assert_eq!(
            err,
            Error::DiagonalRestricted {
                cluster: 0,
                position: 1
            }
        );
    }

    #[test]
    fn asymmetric_restriction_is_an_error() {
        let r = PairRestriction::Custom(Arc::new(|_, p, q| p >= q));
        let err = build_pair_index(&partition_clusters(&[0, 0]), &r).unwrap_err();
        assert!(matches!(err, Error::AsymmetricRestriction { .. }));
    }

    #[test]
    fn collapsed_counts() {
        let idx = build_pair_index(
            &partition_clusters(&[0, 0, 0, 1, 1]),
            &PairRestriction::None,
        )
        .unwrap();
        let c = idx.collapsed();
        assert_eq!(c.len(), 6 + 3);
        for a in 0..idx.len() {
            assert_eq!(c.of_ordered[a], c.of_ordered[idx.swap(a)]);
        }
    }
}
