//! Turning points and chain graphs.
//!
//! A sliding window anchored at the last turning point accumulates the
//! direction change of each following step relative to the first step out
//! of the anchor. When that change exceeds ε and the window already holds
//! at least `window_min` points, the previous point becomes a turning point
//! and the new anchor. Turning points that follow each other at the minimum
//! spacing the window allows mark a stretch of frequent turning; the
//! trajectory is split there and pieces that end up too short are dropped.
//! Each remaining piece becomes a chain graph whose edges are the summed
//! step vectors between consecutive vertices.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::angle::wrap;
use crate::floors::TrajectorySegment;
use crate::logio::Bssid;
use crate::pdr::PdrTrajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TurningConfig {
    #[serde(rename = "epsilon_rad")]
    pub epsilon: f64,
    pub window_min: usize,
    #[serde(rename = "min_len_m")]
    pub min_subtraj_len: f64,
}

impl Default for TurningConfig {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            window_min: 4,
            min_subtraj_len: 5.0,
        }
    }
}

impl TurningConfig {
    /// Largest vertex spacing treated as "turning again right away".
    pub fn split_spacing(&self) -> usize {
        self.window_min.saturating_sub(1).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainVertex {
    /// Point index within the segment.
    pub origin_index: usize,
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub rss: Option<BTreeMap<Bssid, i32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainEdge {
    pub dx: f64,
    pub dy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainGraph {
    pub parent_id: String,
    /// Index of the source segment within its trajectory.
    pub segment: usize,
    pub floor: Option<u32>,
    pub vertices: Vec<ChainVertex>,
    /// `edges[j]` joins `vertices[j]` and `vertices[j + 1]`.
    pub edges: Vec<ChainEdge>,
}

fn direction(a: [f64; 2], b: [f64; 2]) -> Option<f64> {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    (dx != 0.0 || dy != 0.0).then(|| dy.atan2(dx))
}

/// Direction change of the step into `p` relative to the first step out of
/// `anchor`, folded into `[0, π]`. Zero-length steps count as no change.
pub fn accumulated_turn(points: &[[f64; 2]], anchor: usize, p: usize) -> f64 {
    match (
        direction(points[anchor], points[anchor + 1]),
        direction(points[p - 1], points[p]),
    ) {
        (Some(base), Some(d)) => wrap(d - base).abs(),
        _ => 0.0,
    }
}

/// Vertex indices: 0, the detected turning points and the last index.
pub fn detect_turning_points(points: &[[f64; 2]], cfg: &TurningConfig) -> Vec<usize> {
    let n = points.len();
    let mut v = vec![0];
    if n < 2 {
        return v;
    }
    let mut anchor = 0;
    let mut window_len = 1;
    for p in 1..n {
        if p == anchor + 1 {
            window_len += 1;
            continue;
        }
        let alpha = accumulated_turn(points, anchor, p);
        if alpha > cfg.epsilon && window_len >= cfg.window_min {
            anchor = p - 1;
            v.push(anchor);
            window_len = 2;
        } else {
            window_len += 1;
        }
    }
    if *v.last().unwrap() != n - 1 {
        v.push(n - 1);
    }
    v
}

/// Splits the vertex list wherever two vertices are at most
/// [`TurningConfig::split_spacing`] apart.
pub fn split_frequent_turnings(vertices: &[usize], cfg: &TurningConfig) -> Vec<Vec<usize>> {
    let gap = cfg.split_spacing();
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for &v in vertices {
        if let Some(&last) = current.last() {
            if v - last <= gap {
                out.push(std::mem::take(&mut current));
            }
        }
        current.push(v);
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

fn path_length(step_vectors: &[[f64; 2]], from: usize, to: usize) -> f64 {
    step_vectors[from..to].iter().map(|u| u[0].hypot(u[1])).sum()
}

/// Builds one chain graph from segment-local vertex indices. `offset` is the
/// segment's first point in the trajectory.
pub fn build_chain_graph(
    traj: &PdrTrajectory,
    offset: usize,
    vertices: &[usize],
    parent_id: &str,
    segment: usize,
    floor: Option<u32>,
) -> Option<ChainGraph> {
    if vertices.len() < 2 {
        return None;
    }
    let chain_vertices = vertices
        .iter()
        .map(|&v| {
            let p = &traj.points[offset + v];
            ChainVertex {
                origin_index: v,
                x: p.x,
                y: p.y,
                t: p.t,
                rss: p.wifi_ref.map(|b| traj.wifi_batches[b].rss.clone()),
            }
        })
        .collect();
    let edges = vertices
        .windows(2)
        .map(|w| {
            let (mut dx, mut dy) = (0.0, 0.0);
            for u in &traj.step_vectors[offset + w[0]..offset + w[1]] {
                dx += u[0];
                dy += u[1];
            }
            ChainEdge { dx, dy }
        })
        .collect();
    Some(ChainGraph {
        parent_id: parent_id.to_owned(),
        segment,
        floor,
        vertices: chain_vertices,
        edges,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SegmentGraphs {
    pub graphs: Vec<ChainGraph>,
    /// Sub-trajectories removed for being too short or having a single vertex.
    pub dropped: usize,
}

pub fn featurize_segment(
    traj: &PdrTrajectory,
    seg: &TrajectorySegment,
    segment: usize,
    cfg: &TurningConfig,
) -> SegmentGraphs {
    let range = seg.point_range.clone();
    let offset = range.start;
    let points: Vec<[f64; 2]> = traj.points[range].iter().map(|p| [p.x, p.y]).collect();
    if points.len() < 2 {
        return SegmentGraphs { graphs: vec![], dropped: 1 };
    }
    let vertices = detect_turning_points(&points, cfg);
    let mut out = SegmentGraphs::default();
    for piece in split_frequent_turnings(&vertices, cfg) {
        let long_enough = piece.len() >= 2
            && path_length(&traj.step_vectors, offset + piece[0], offset + piece[piece.len() - 1])
                >= cfg.min_subtraj_len;
        match long_enough
            .then(|| build_chain_graph(traj, offset, &piece, &seg.parent_id, segment, seg.floor))
            .flatten()
        {
            Some(g) => out.graphs.push(g),
            None => out.dropped += 1,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pdr::{PdrPoint, WifiBatch};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn walk(headings: &[f64], stride: f64) -> Vec<[f64; 2]> {
        let mut p = vec![[0.0, 0.0]];
        for h in headings {
            let last = *p.last().unwrap();
            p.push([last[0] + stride * h.cos(), last[1] + stride * h.sin()]);
        }
        p
    }

    fn trajectory(headings: &[f64], stride: f64) -> PdrTrajectory {
        let mut points = vec![PdrPoint { x: 0.0, y: 0.0, t: 0.0, step_index: 0, baro_hpa: None, wifi_ref: Some(0) }];
        let mut step_vectors = Vec::new();
        for (k, h) in headings.iter().enumerate() {
            let u = crate::pdr::step_vector(stride, *h);
            let last = points.last().unwrap();
            points.push(PdrPoint {
                x: last.x + u[0],
                y: last.y + u[1],
                t: (k + 1) as f64 * 0.6,
                step_index: k + 1,
                baro_hpa: None,
                wifi_ref: (k < 3).then_some(0),
            });
            step_vectors.push(u);
        }
        PdrTrajectory {
            source_id: "t".into(),
            points,
            step_vectors,
            wifi_batches: vec![WifiBatch { t: 0.0, rss: [(Bssid([1, 2, 3, 4, 5, 6]), -40)].into_iter().collect() }],
        }
    }

    fn whole(traj: &PdrTrajectory) -> TrajectorySegment {
        TrajectorySegment {
            parent_id: traj.source_id.clone(),
            point_range: 0..traj.points.len(),
            mean_pressure: None,
            mac_set: Default::default(),
            floor: Some(2),
            no_pressure: true,
        }
    }

    /// Direct evaluation: for every point after the anchor, recompute the
    /// turn from scratch and fire at the first qualifying one.
    fn oracle(points: &[[f64; 2]], cfg: &TurningConfig) -> Vec<usize> {
        let mut v = vec![0];
        let mut anchor = 0;
        let mut p = 2;
        while p < points.len() {
            let window = p - anchor;
            let base = (points[anchor + 1][1] - points[anchor][1]).atan2(points[anchor + 1][0] - points[anchor][0]);
            let d = (points[p][1] - points[p - 1][1]).atan2(points[p][0] - points[p - 1][0]);
            let mut diff = (d - base).rem_euclid(std::f64::consts::TAU);
            if diff > std::f64::consts::PI {
                diff = std::f64::consts::TAU - diff;
            }
            if diff > cfg.epsilon && window >= cfg.window_min {
                anchor = p - 1;
                v.push(anchor);
                p = anchor + 2;
            } else {
                p += 1;
            }
        }
        if *v.last().unwrap() != points.len() - 1 {
            v.push(points.len() - 1);
        }
        v
    }

    #[test]
    fn collinear_points_have_only_ends() {
        let p = walk(&[0.0; 15], 0.7);
        assert_eq!(detect_turning_points(&p, &TurningConfig::default()), vec![0, 15]);
    }

    #[test]
    fn l_shape_has_one_corner() {
        let mut h = vec![FRAC_PI_2; 10];
        h.extend([0.0; 10]);
        let p = walk(&h, 0.7);
        let cfg = TurningConfig::default();
        let v = detect_turning_points(&p, &cfg);
        assert_eq!(v, oracle(&p, &cfg));
        assert_eq!(v.len(), 3);
        assert!((v[1] as i64 - 10).abs() <= 1);

        let t = trajectory(&h, 0.7);
        let g = featurize_segment(&t, &whole(&t), 0, &cfg);
        assert_eq!(g.graphs.len(), 1);
        let e = &g.graphs[0].edges;
        assert!((e[0].dx).abs() < 1e-9 && (e[0].dy - 7.0).abs() < 1e-9);
        assert!((e[1].dx - 7.0).abs() < 1e-9 && e[1].dy.abs() < 1e-9);
    }

    #[test]
    fn jittered_straight_walk_has_no_turns() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let h: Vec<f64> = (0..40).map(|_| 0.8 + rng.gen_range(-0.3..=0.3)).collect();
            let v = detect_turning_points(&walk(&h, 0.7), &TurningConfig::default());
            assert_eq!(v, vec![0, 40]);
        }
    }

    #[test]
    fn detection_matches_oracle_on_random_walks() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..300 {
            let n = rng.gen_range(2..60);
            let h: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.2..3.2)).collect();
            let cfg = TurningConfig {
                epsilon: rng.gen_range(0.3..2.0),
                window_min: rng.gen_range(1..7),
                min_subtraj_len: 5.0,
            };
            let p = walk(&h, 0.7);
            assert_eq!(detect_turning_points(&p, &cfg), oracle(&p, &cfg));
        }
    }

    #[test]
    fn interior_vertices_exceeded_epsilon() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h: Vec<f64> = (0..200).map(|_| rng.gen_range(-3.2..3.2)).collect();
        let p = walk(&h, 0.7);
        let cfg = TurningConfig::default();
        let v = detect_turning_points(&p, &cfg);
        for w in v.windows(2).take(v.len().saturating_sub(2)) {
            assert!(accumulated_turn(&p, w[0], w[1] + 1) > cfg.epsilon);
            assert!(w[1] - w[0] >= cfg.window_min - 1);
        }
    }

    #[test]
    fn split_examples() {
        let cfg = TurningConfig::default();
        assert_eq!(split_frequent_turnings(&[0, 5, 12], &cfg), vec![vec![0, 5, 12]]);
        assert_eq!(split_frequent_turnings(&[0, 5, 6, 12], &cfg), vec![vec![0, 5], vec![6, 12]]);
        let tight = TurningConfig { window_min: 1, ..cfg };
        assert_eq!(split_frequent_turnings(&[0, 5, 6, 12], &tight), vec![vec![0, 5], vec![6, 12]]);
        assert_eq!(split_frequent_turnings(&[0, 4, 8], &tight), vec![vec![0, 4, 8]]);
    }

    #[test]
    fn zigzag_walk_is_dropped() {
        let h: Vec<f64> = (0..60).map(|k| if (k / 3) % 2 == 0 { 0.0 } else { 2.0 }).collect();
        let t = trajectory(&h, 0.7);
        let g = featurize_segment(&t, &whole(&t), 0, &TurningConfig::default());
        assert!(g.graphs.is_empty());
        assert!(g.dropped > 0);
    }

    #[test]
    fn straight_segment_gives_single_edge() {
        let t = trajectory(&[0.3; 20], 0.7);
        let g = featurize_segment(&t, &whole(&t), 0, &TurningConfig::default());
        assert_eq!(g.graphs.len(), 1);
        let graph = &g.graphs[0];
        assert_eq!(graph.vertices.len(), 2);
        assert_eq!(graph.edges.len(), 1);
        assert_eq!(graph.floor, Some(2));
        let end = t.points.last().unwrap();
        assert_eq!(graph.edges[0].dx, end.x);
        assert_eq!(graph.edges[0].dy, end.y);
        assert!(graph.vertices[0].rss.is_some());
        assert!(graph.vertices[1].rss.is_none());
    }

    #[test]
    fn three_corner_corridor_has_five_vertices() {
        let mut h = Vec::new();
        for leg in [0.0, FRAC_PI_2, 0.0, -FRAC_PI_2] {
            h.extend([leg; 12]);
        }
        let t = trajectory(&h, 0.7);
        let g = featurize_segment(&t, &whole(&t), 0, &TurningConfig::default());
        assert_eq!(g.graphs.len(), 1);
        let idx: Vec<usize> = g.graphs[0].vertices.iter().map(|v| v.origin_index).collect();
        assert_eq!(idx, vec![0, 12, 24, 36, 48]);
    }

    #[test]
    fn short_walk_is_dropped() {
        let t = trajectory(&[0.0; 5], 0.7);
        let g = featurize_segment(&t, &whole(&t), 0, &TurningConfig::default());
        assert!(g.graphs.is_empty());
        assert_eq!(g.dropped, 1);
    }
}
