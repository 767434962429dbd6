//! Density-based clustering (DBSCAN) over an arbitrary distance function.
//!
//! A point is core when at least `min_pts` points, itself included, lie
//! within `eps`. Clusters are numbered in order of their lowest core point,
//! and a border point reachable from several clusters joins the lowest id.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusteringParams {
    pub eps: f64,
    pub min_pts: usize,
}

impl Default for ClusteringParams {
    fn default() -> Self {
        ClusteringParams {
            eps: 0.2,
            min_pts: 3,
        }
    }
}

impl ClusteringParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::Config("eps must be positive".into()));
        }
        if self.min_pts < 2 {
            return Err(Error::Config("min_pts must be at least 2".into()));
        }
        Ok(())
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Cluster id per point; `None` marks noise.
pub fn dbscan<P, D>(points: &[P], params: ClusteringParams, dist: D) -> Vec<Option<usize>>
where
    P: Sync,
    D: Fn(&P, &P) -> f64 + Sync,
{
    let n = points.len();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .filter(|&j| dist(&points[i], &points[j]) <= params.eps)
                .collect()
        })
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= params.min_pts).collect();
    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    for seed in 0..n {
        if !core[seed] || label[seed].is_some() {
            continue;
        }
        let id = next;
        next += 1;
        label[seed] = Some(id);
        let mut stack = vec![seed];
        while let Some(p) = stack.pop() {
            for &q in &neighbors[p] {
                if label[q].is_none() {
                    label[q] = Some(id);
                    if core[q] {
                        stack.push(q);
                    }
                }
            }
        }
    }
    label
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(eps: f64, min_pts: usize) -> ClusteringParams {
        ClusteringParams { eps, min_pts }
    }

    #[test]
    fn two_blobs() {
        let mut pts = Vec::new();
        for i in 0..10 {
            let d = i as f64 * 0.01;
            pts.push(vec![d, 0.0]);
            pts.push(vec![5.0 + d, 5.0]);
        }
        let l = dbscan(&pts, params(0.5, 3), |a, b| euclidean(a, b));
        assert!(l.iter().all(|x| x.is_some()));
        assert_eq!(l[0], Some(0));
        assert_eq!(l[1], Some(1));
        assert!(l.iter().step_by(2).all(|&x| x == Some(0)));
    }

    #[test]
    fn degenerate_inputs() {
        let same = vec![vec![1.0]; 5];
        assert!(dbscan(&same, params(0.1, 2), |a, b| euclidean(a, b))
            .iter()
            .all(|&x| x == Some(0)));
        let three = vec![vec![0.0], vec![0.1], vec![0.2]];
        assert!(dbscan(&three, params(1.0, 4), |a, b| euclidean(a, b))
            .iter()
            .all(|x| x.is_none()));
        let none: Vec<Vec<f64>> = vec![];
        assert!(dbscan(&none, params(1.0, 2), |a, b| euclidean(a, b)).is_empty());
        assert!(params(0.0, 3).validate().is_err());
        assert!(params(1.0, 1).validate().is_err());
    }
}
