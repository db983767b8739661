//! Per-floor segmentation and cross-trajectory floor numbering.
//!
//! Within a trajectory, points are clustered on their barometer reading with
//! a 1-D DBSCAN and cut into maximal runs of equal cluster label; the points
//! between runs of different clusters (stairs, lifts) are kept as gaps.
//! Across trajectories, segments are grouped by average-linkage clustering
//! on the Jaccard distance of their WiFi MAC sets, and groups are numbered
//! from the highest mean pressure (floor 1) upwards.

use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logio::Bssid;
use crate::pdr::PdrTrajectory;

#[derive(Debug, Error)]
pub enum FloorError {
    #[error("DBSCAN produced {found} pressure clusters, more than the allowed {max}")]
    TooManyClusters { found: usize, max: usize },
    #[error("invalid floor clustering parameter: {0}")]
    Parameter(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FloorConfig {
    pub eps_hpa: f64,
    pub min_pts: usize,
    pub cut: f64,
    pub max_clusters: usize,
}

impl Default for FloorConfig {
    fn default() -> Self {
        Self {
            eps_hpa: 0.1,
            min_pts: 10,
            cut: 0.7,
            max_clusters: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySegment {
    pub parent_id: String,
    /// Half-open range of point indices in the parent trajectory.
    pub point_range: Range<usize>,
    pub mean_pressure: Option<f64>,
    pub mac_set: BTreeSet<Bssid>,
    pub floor: Option<u32>,
    /// Set when the trajectory had no barometer data and was not split.
    pub no_pressure: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub segments: Vec<TrajectorySegment>,
    /// Point ranges between segments that belong to no floor.
    pub gaps: Vec<Range<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorAssignment {
    /// Floor (1-based) for each input segment, in input order.
    pub segment_floor: Vec<u32>,
    /// Mean pressure per floor; entry `k` is floor `k + 1`.
    pub floor_pressure: Vec<Option<f64>>,
}

impl FloorAssignment {
    pub fn floor_count(&self) -> usize {
        self.floor_pressure.len()
    }

    pub fn is_pressure_ordered(&self) -> bool {
        let known: Vec<f64> = self.floor_pressure.iter().flatten().copied().collect();
        known.windows(2).all(|w| w[0] > w[1])
    }
}

/// DBSCAN over scalar values: `None` marks noise, clusters are numbered by
/// first occurrence in the input. Neighbourhoods include the point itself.
pub fn dbscan_1d(values: &[f64], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();

    // neighbourhood sizes by two pointers over the sorted values
    let mut core = vec![false; n];
    let (mut lo, mut hi) = (0usize, 0usize);
    for r in 0..n {
        while sorted[r] - sorted[lo] > eps {
            lo += 1;
        }
        if hi < r {
            hi = r;
        }
        while hi + 1 < n && sorted[hi + 1] - sorted[r] <= eps {
            hi += 1;
        }
        core[r] = hi - lo + 1 >= min_pts;
    }

    // consecutive core points closer than eps share a component
    let mut comp = vec![usize::MAX; n];
    let mut discovery: Vec<usize> = Vec::new(); // smallest original index per component
    let mut last_core: Option<usize> = None;
    for r in 0..n {
        if !core[r] {
            continue;
        }
        match last_core {
            Some(q) if sorted[r] - sorted[q] <= eps => {
                comp[r] = comp[q];
                let c = comp[r];
                discovery[c] = discovery[c].min(order[r]);
            }
            _ => {
                comp[r] = discovery.len();
                discovery.push(order[r]);
            }
        }
        last_core = Some(r);
    }

    // border points join the reachable component that an index-order scan
    // would have discovered first
    let mut prev_core: Vec<Option<usize>> = vec![None; n];
    let mut next_core: Vec<Option<usize>> = vec![None; n];
    let mut seen = None;
    for r in 0..n {
        if core[r] {
            seen = Some(r);
        }
        prev_core[r] = seen;
    }
    seen = None;
    for r in (0..n).rev() {
        if core[r] {
            seen = Some(r);
        }
        next_core[r] = seen;
    }
    let mut raw: Vec<Option<usize>> = vec![None; n];
    for r in 0..n {
        raw[order[r]] = if core[r] {
            Some(comp[r])
        } else {
            let left = prev_core[r].filter(|&q| sorted[r] - sorted[q] <= eps).map(|q| comp[q]);
            let right = next_core[r].filter(|&q| sorted[q] - sorted[r] <= eps).map(|q| comp[q]);
            match (left, right) {
                (Some(a), Some(b)) => Some(if discovery[a] <= discovery[b] { a } else { b }),
                (a, b) => a.or(b),
            }
        };
    }
    canonicalize(&raw)
}

fn canonicalize(raw: &[Option<usize>]) -> Vec<Option<usize>> {
    let mut map = std::collections::HashMap::new();
    raw.iter()
        .map(|l| {
            l.map(|c| {
                let next = map.len();
                *map.entry(c).or_insert(next)
            })
        })
        .collect()
}

pub fn jaccard(a: &BTreeSet<Bssid>, b: &BTreeSet<Bssid>) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => {
            let inter = a.intersection(b).count();
            inter as f64 / (a.len() + b.len() - inter) as f64
        }
    }
}

fn mac_set(traj: &PdrTrajectory, range: &Range<usize>) -> BTreeSet<Bssid> {
    let pts = &traj.points[range.clone()];
    let (t0, t1) = (pts[0].t, pts[pts.len() - 1].t);
    traj.wifi_batches
        .iter()
        .filter(|b| b.t >= t0 && b.t <= t1)
        .flat_map(|b| b.rss.keys().copied())
        .collect()
}

fn make_segment(traj: &PdrTrajectory, range: Range<usize>, no_pressure: bool) -> TrajectorySegment {
    let pressures: Vec<f64> = traj.points[range.clone()].iter().filter_map(|p| p.baro_hpa).collect();
    let mean_pressure = if pressures.is_empty() {
        None
    } else {
        Some(pressures.iter().sum::<f64>() / pressures.len() as f64)
    };
    TrajectorySegment {
        parent_id: traj.source_id.clone(),
        mac_set: mac_set(traj, &range),
        point_range: range,
        mean_pressure,
        floor: None,
        no_pressure,
    }
}

/// Cuts a trajectory into per-floor segments. Noise points lying between
/// two stretches of the same cluster are absorbed into it; any other noise
/// becomes part of a gap.
pub fn segment_trajectory(traj: &PdrTrajectory, cfg: &FloorConfig) -> Result<Segmentation, FloorError> {
    if !(cfg.eps_hpa > 0.0) || cfg.min_pts == 0 {
        return Err(FloorError::Parameter(format!(
            "eps_hpa must be > 0 and min_pts >= 1 (got {}, {})",
            cfg.eps_hpa, cfg.min_pts
        )));
    }
    let n = traj.points.len();
    if n == 0 {
        return Ok(Segmentation { segments: vec![], gaps: vec![] });
    }
    let pressures: Option<Vec<f64>> = traj.points.iter().map(|p| p.baro_hpa).collect();
    let Some(pressures) = pressures else {
        log::warn!("{}: no barometer data, keeping one segment", traj.source_id);
        return Ok(Segmentation {
            segments: vec![make_segment(traj, 0..n, true)],
            gaps: vec![],
        });
    };

    let mut labels = dbscan_1d(&pressures, cfg.eps_hpa, cfg.min_pts);
    let clusters = labels.iter().flatten().max().map_or(0, |m| m + 1);
    if clusters > cfg.max_clusters {
        return Err(FloorError::TooManyClusters {
            found: clusters,
            max: cfg.max_clusters,
        });
    }

    let mut i = 0;
    while i < n {
        if labels[i].is_some() {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && labels[i].is_none() {
            i += 1;
        }
        let before = start.checked_sub(1).and_then(|j| labels[j]);
        let after = labels.get(i).copied().flatten();
        if before.is_some() && before == after {
            labels[start..i].fill(before);
        }
    }

    let mut segments = Vec::new();
    let mut gaps = Vec::new();
    let mut i = 0;
    while i < n {
        let start = i;
        let label = labels[i];
        while i < n && labels[i] == label {
            i += 1;
        }
        match label {
            Some(_) => segments.push(make_segment(traj, start..i, false)),
            None => gaps.push(start..i),
        }
    }
    Ok(Segmentation { segments, gaps })
}

/// Average-linkage clustering of segments on `1 - jaccard`. Clusters merge
/// while the closest pair is nearer than `cut`, or until `target` clusters
/// remain when a floor count is given.
pub fn cluster_floors(
    segments: &[TrajectorySegment],
    cut: f64,
    target: Option<usize>,
) -> Result<FloorAssignment, FloorError> {
    if target == Some(0) {
        return Err(FloorError::Parameter("floor count must be at least 1".into()));
    }
    let n = segments.len();
    let dist: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| 1.0 - jaccard(&segments[i].mac_set, &segments[j].mac_set)).collect())
        .collect();
    let key = |i: usize| (segments[i].parent_id.as_str(), segments[i].point_range.start);

    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    loop {
        if clusters.len() <= 1 || target.is_some_and(|k| clusters.len() <= k) {
            break;
        }
        let cluster_key = |c: &Vec<usize>| c.iter().map(|&i| key(i)).min().unwrap();
        let mut best: Option<(f64, _, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in (a + 1)..clusters.len() {
                let mut sum = 0.0;
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        sum += dist[i][j];
                    }
                }
                let link = sum / (clusters[a].len() * clusters[b].len()) as f64;
                let (ka, kb) = (cluster_key(&clusters[a]), cluster_key(&clusters[b]));
                let pair = if ka <= kb { (ka, kb) } else { (kb, ka) };
                let better = match &best {
                    None => true,
                    Some((l, p, _, _)) => link < *l || (link == *l && pair < *p),
                };
                if better {
                    best = Some((link, pair, a, b));
                }
            }
        }
        let (link, _, a, b) = best.unwrap();
        if target.is_none() && !(link < cut) {
            break;
        }
        let merged = clusters.remove(b);
        clusters[a].extend(merged);
    }

    let mut groups: Vec<(Option<f64>, (&str, usize), Vec<usize>)> = clusters
        .into_iter()
        .map(|c| {
            let means: Vec<f64> = c.iter().filter_map(|&i| segments[i].mean_pressure).collect();
            let mean = if means.is_empty() {
                None
            } else {
                Some(means.iter().sum::<f64>() / means.len() as f64)
            };
            let k = c.iter().map(|&i| key(i)).min().unwrap();
            (mean, k, c)
        })
        .collect();
    // highest pressure first; groups without pressure go last
    groups.sort_by(|a, b| match (a.0, b.0) {
        (Some(x), Some(y)) => y.total_cmp(&x).then(a.1.cmp(&b.1)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.1.cmp(&b.1),
    });

    let mut segment_floor = vec![0u32; n];
    let mut floor_pressure = Vec::with_capacity(groups.len());
    for (f, (mean, _, members)) in groups.into_iter().enumerate() {
        for i in members {
            segment_floor[i] = f as u32 + 1;
        }
        floor_pressure.push(mean);
    }
    let assignment = FloorAssignment {
        segment_floor,
        floor_pressure,
    };
    if !assignment.is_pressure_ordered() {
        log::warn!("two floors share the same mean pressure");
    }
    Ok(assignment)
}
