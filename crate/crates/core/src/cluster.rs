use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{DbError, Result};

/// Maps units to clusters. Clusters are ordered by ascending id, which fixes
/// the row order of every cluster-level vector and matrix in the crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterIndex {
    ids: Vec<i64>,
    membership: Vec<usize>,
    sizes: Vec<usize>,
}

impl ClusterIndex {
    pub fn new(unit_ids: &[i64]) -> Result<Self> {
        if unit_ids.is_empty() {
            return Err(DbError::Input("no cluster ids supplied".into()));
        }
        let mut order: BTreeMap<i64, usize> = BTreeMap::new();
        for &id in unit_ids {
            order.entry(id).or_insert(0);
        }
        for (pos, slot) in order.values_mut().enumerate() {
            *slot = pos;
        }
        let membership: Vec<usize> = unit_ids.iter().map(|id| order[id]).collect();
        let mut sizes = vec![0; order.len()];
        for &c in &membership {
            sizes[c] += 1;
        }
        Ok(Self { ids: order.into_keys().collect(), membership, sizes })
    }

    pub fn n_units(&self) -> usize {
        self.membership.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[i64] {
        &self.ids
    }

    /// Cluster position (0-based, ascending id order) of every unit.
    pub fn membership(&self) -> &[usize] {
        &self.membership
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn same_cluster(&self, i: usize, j: usize) -> bool {
        self.membership[i] == self.membership[j]
    }

    /// Within-cluster totals of a unit-level vector.
    pub fn totals(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_clusters()];
        for (&c, &x) in self.membership.iter().zip(v) {
            out[c] += x;
        }
        out
    }

    /// Within-cluster means, broadcast back to units.
    pub fn unit_means(&self, v: &[f64]) -> Vec<f64> {
        let tot = self.totals(v);
        self.membership.iter().map(|&c| tot[c] / self.sizes[c] as f64).collect()
    }

    /// Collapse a unit-level assignment to cluster level, rejecting assignments
    /// that split a cluster.
    pub fn cluster_assignment(&self, z: &[bool]) -> Result<Vec<bool>> {
        let mut out: Vec<Option<bool>> = vec![None; self.n_clusters()];
        for (i, (&c, &zi)) in self.membership.iter().zip(z).enumerate() {
            match out[c] {
                None => out[c] = Some(zi),
                Some(prev) if prev != zi => {
                    return Err(DbError::Input(format!(
                        "unit {i} disagrees with the rest of cluster {}",
                        self.ids[c]
                    )))
                }
                _ => {}
            }
        }
        Ok(out.into_iter().map(|v| v.unwrap_or(false)).collect())
    }

    pub fn expand_assignment(&self, zc: &[bool]) -> Vec<bool> {
        self.membership.iter().map(|&c| zc[c]).collect()
    }
}
