use std::collections::HashMap;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outcome, regressors of interest, nuisance controls and cluster labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub y: Vec<f64>,
    /// n × d regressors of interest.
    pub x: Mat<f64>,
    /// n × K controls. May have zero columns.
    pub w: Mat<f64>,
    pub cluster_id: Vec<i64>,
    pub x_names: Vec<String>,
    pub w_names: Vec<String>,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x: Mat<f64>, w: Mat<f64>, cluster_id: Vec<i64>) -> Result<Self> {
        let x_names = (0..x.ncols()).map(|j| format!("x{}", j + 1)).collect();
        let w_names = (0..w.ncols()).map(|j| format!("w{}", j + 1)).collect();
        Self::with_names(y, x, w, cluster_id, x_names, w_names)
    }

    pub fn with_names(
        y: Vec<f64>,
        x: Mat<f64>,
        w: Mat<f64>,
        cluster_id: Vec<i64>,
        x_names: Vec<String>,
        w_names: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::InvalidInput("dataset has no observations".into()));
        }
        if x.ncols() == 0 {
            return Err(Error::InvalidInput(
                "at least one regressor of interest is required".into(),
            ));
        }
        if x.nrows() != n || w.nrows() != n || cluster_id.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "y has {n} rows, x {}, w {}, cluster ids {}",
                x.nrows(),
                w.nrows(),
                cluster_id.len()
            )));
        }
        if x_names.len() != x.ncols() || w_names.len() != w.ncols() {
            return Err(Error::DimensionMismatch(
                "column name count does not match column count".into(),
            ));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("y[{i}] is not finite")));
        }
        for (name, m) in [("x", &x), ("w", &w)] {
            for j in 0..m.ncols() {
                for i in 0..n {
                    if !m[(i, j)].is_finite() {
                        return Err(Error::InvalidInput(format!(
                            "{name}[{i}, {j}] is not finite"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            y,
            x,
            w,
            cluster_id,
            x_names,
            w_names,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn k(&self) -> usize {
        self.w.ncols()
    }
}

/// Partition of the observations into clusters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterPartition {
    /// Observation indices of each cluster, in observation order.
    pub groups: Vec<Vec<usize>>,
    pub sizes: Vec<usize>,
    /// Original label of each cluster.
    pub labels: Vec<i64>,
    /// Cluster index of every observation.
    pub membership: Vec<usize>,
}

impl ClusterPartition {
    pub fn n_clusters(&self) -> usize {
        self.groups.len()
    }

    pub fn n_obs(&self) -> usize {
        self.membership.len()
    }

    pub fn max_size(&self) -> usize {
        self.sizes.iter().copied().max().unwrap_or(0)
    }

    /// Position of each observation within its cluster.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.n_obs()];
        for g in &self.groups {
            for (p, &i) in g.iter().enumerate() {
                pos[i] = p;
            }
        }
        pos
    }

    /// Balanced partition of `n` observations into contiguous blocks of
    /// `size`, with the last block taking any remainder.
    pub fn contiguous(n: usize, size: usize) -> Self {
        assert!(size > 0, "cluster size must be positive");
        let ids: Vec<i64> = (0..n).map(|i| (i / size) as i64).collect();
        partition_clusters(&ids)
    }
}

/// Groups observations by cluster label. Clusters are ordered by first
/// appearance of their label; observation order is kept within each cluster.
pub fn partition_clusters(cluster_id: &[i64]) -> ClusterPartition {
    let mut index: HashMap<i64, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut labels = Vec::new();
    let mut membership = Vec::with_capacity(cluster_id.len());
    for (i, &id) in cluster_id.iter().enumerate() {
        let g = *index.entry(id).or_insert_with(|| {
            groups.push(Vec::new());
            labels.push(id);
            groups.len() - 1
        });
        groups[g].push(i);
        membership.push(g);
    }
    let sizes = groups.iter().map(Vec::len).collect();
    ClusterPartition {
        groups,
        sizes,
        labels,
        membership,
    }
}
