//! DBSCAN over unit-norm sentence embeddings with cosine distance.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

const MODULE: &str = "cluster";
const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DbscanConfig {
    /// Cosine-distance radius, `d(u, v) = 1 - u·v`.
    pub eps: f64,
    /// Neighbours (including the point itself) needed for a core point.
    pub min_pts: usize,
}

impl Default for DbscanConfig {
    fn default() -> Self {
        DbscanConfig { eps: 0.05, min_pts: 2 }
    }
}

impl DbscanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps <= 2.0) {
            return Err(Error::parameter(MODULE, format!("eps must be in (0, 2], got {}", self.eps)));
        }
        if self.min_pts == 0 {
            return Err(Error::parameter(MODULE, "min_pts must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClusterLabel {
    Cluster(usize),
    Noise,
}

impl ClusterLabel {
    pub fn cluster(self) -> Option<usize> {
        match self {
            ClusterLabel::Cluster(c) => Some(c),
            ClusterLabel::Noise => None,
        }
    }
}

/// Cluster label per input point, indexed by position.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClusterAssignment {
    pub labels: Vec<ClusterLabel>,
    pub num_clusters: usize,
}

impl ClusterAssignment {
    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|l| **l == ClusterLabel::Noise).count()
    }

    /// Member indices of every cluster, in cluster-id order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clusters];
        for (i, l) in self.labels.iter().enumerate() {
            if let ClusterLabel::Cluster(c) = l {
                out[*c].push(i);
            }
        }
        out
    }
}

pub fn cosine_distance(u: &[f64], v: &[f64]) -> f64 {
    1.0 - linalg::dot(u, v)
}

/// Brute-force neighbourhoods: for each point, every index within `eps`
/// (itself included), ascending.
fn neighbourhoods(points: &[Vec<f64>], eps: f64) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut nb: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for i in 0..n {
        for j in i + 1..n {
            if cosine_distance(&points[i], &points[j]) <= eps {
                nb[i].push(j);
                nb[j].push(i);
            }
        }
    }
    for list in &mut nb {
        list.sort_unstable();
    }
    nb
}

/// Classic DBSCAN with points scanned in index order.
///
/// A border point reachable from several clusters joins the first cluster
/// whose expansion reaches it.
pub fn dbscan(points: &[Vec<f64>], config: &DbscanConfig) -> Result<ClusterAssignment> {
    config.validate()?;
    let Some(first) = points.first() else {
        return Ok(ClusterAssignment::default());
    };
    let dim = first.len();
    for (i, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(Error::input(
                MODULE,
                format!("point {i} has dimension {}, expected {dim}", p.len()),
            ));
        }
        let norm = linalg::l2_norm(p);
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::input(MODULE, format!("point {i} is not unit norm ({norm})")));
        }
    }

    let nb = neighbourhoods(points, config.eps);
    let is_core = |i: usize| nb[i].len() >= config.min_pts;

    let mut labels: Vec<Option<ClusterLabel>> = vec![None; points.len()];
    let mut next_cluster = 0;
    let mut queue = VecDeque::new();
    for p in 0..points.len() {
        if labels[p].is_some() {
            continue;
        }
        if !is_core(p) {
            labels[p] = Some(ClusterLabel::Noise);
            continue;
        }
        let c = ClusterLabel::Cluster(next_cluster);
        next_cluster += 1;
        labels[p] = Some(c);
        queue.extend(nb[p].iter().copied());
        while let Some(q) = queue.pop_front() {
            match labels[q] {
                Some(ClusterLabel::Noise) => labels[q] = Some(c),
                None => {
                    labels[q] = Some(c);
                    if is_core(q) {
                        queue.extend(nb[q].iter().copied());
                    }
                }
                Some(ClusterLabel::Cluster(_)) => {}
            }
        }
    }

    Ok(ClusterAssignment {
        labels: labels.into_iter().map(|l| l.unwrap_or(ClusterLabel::Noise)).collect(),
        num_clusters: next_cluster,
    })
}

/// Debug CSV: `record_id,cluster_id,nn_distance` with noise written as `-1`.
pub fn write_debug_csv<W: Write>(
    out: W,
    record_ids: &[usize],
    points: &[Vec<f64>],
    assignment: &ClusterAssignment,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::io(MODULE, e.into());
    w.write_record(["record_id", "cluster_id", "nn_distance"]).map_err(io)?;
    for (i, label) in assignment.labels.iter().enumerate() {
        let nn = points
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, q)| cosine_distance(&points[i], q))
            .fold(f64::INFINITY, f64::min);
        let cid = label.cluster().map_or(-1, |c| c as i64);
        w.write_record([record_ids[i].to_string(), cid.to_string(), format!("{nn:.6}")])
            .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(MODULE, e))
}
