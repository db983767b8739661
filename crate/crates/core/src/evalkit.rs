//! Scoring against synthetic ground truth and parameter sweeps.
//!
//! Turning points are scored per segment: detected interior vertices of
//! the chain graphs are matched one-to-one to true corners by increasing
//! distance, within a radius. True corners are located on the estimated
//! trajectory through their timestamps, so detection is judged on the same
//! dead-reckoned coordinates it ran on. Segment end points are never
//! counted on either side.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::featurize::{featurize_segment, ChainGraph, TurningConfig};
use crate::pdr::nearest_index;
use crate::pipeline::TrajectoryRun;
use crate::synth::GroundTruth;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurningScore {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub match_radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TurningCounts {
    pub true_positives: usize,
    pub detected: usize,
    pub truth: usize,
}

impl TurningCounts {
    pub fn add(&mut self, other: TurningCounts) {
        self.true_positives += other.true_positives;
        self.detected += other.detected;
        self.truth += other.truth;
    }

    /// Precision is 1 with nothing detected and recall is 1 with nothing to
    /// find.
    pub fn score(&self, match_radius: f64) -> TurningScore {
        let precision = if self.detected == 0 {
            1.0
        } else {
            self.true_positives as f64 / self.detected as f64
        };
        let recall = if self.truth == 0 {
            1.0
        } else {
            self.true_positives as f64 / self.truth as f64
        };
        let f_measure = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        TurningScore {
            precision,
            recall,
            f_measure,
            match_radius,
        }
    }
}

/// Greedy one-to-one matching, closest pairs first (ties by index).
pub fn match_turnings(detected: &[[f64; 2]], truth: &[[f64; 2]], radius: f64) -> TurningCounts {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, d) in detected.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            let dist = (d[0] - t[0]).hypot(d[1] - t[1]);
            if dist <= radius {
                pairs.push((dist, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_d = vec![false; detected.len()];
    let mut used_t = vec![false; truth.len()];
    let mut tp = 0;
    for (_, i, j) in pairs {
        if !used_d[i] && !used_t[j] {
            used_d[i] = true;
            used_t[j] = true;
            tp += 1;
        }
    }
    TurningCounts {
        true_positives: tp,
        detected: detected.len(),
        truth: truth.len(),
    }
}

pub fn score_turnings(detected: &[[f64; 2]], truth: &[[f64; 2]], radius: f64) -> TurningScore {
    match_turnings(detected, truth, radius).score(radius)
}

/// Fraction of segments on the right floor; 1 for no segments.
pub fn score_floors(assigned: &[u32], truth: &[u32]) -> f64 {
    assert_eq!(assigned.len(), truth.len(), "one true floor per segment");
    if assigned.is_empty() {
        return 1.0;
    }
    let hits = assigned.iter().zip(truth).filter(|(a, t)| a == t).count();
    hits as f64 / assigned.len() as f64
}

fn point_index_at(run: &TrajectoryRun, t: f64) -> Option<usize> {
    let times: Vec<f64> = run.trajectory.points.iter().map(|p| p.t).collect();
    nearest_index(&times, t)
}

/// Majority true floor over each segment's points (stairs ignored).
pub fn segment_true_floors(run: &TrajectoryRun, truth: &GroundTruth) -> Vec<Option<u32>> {
    run.segments
        .iter()
        .map(|seg| {
            let mut votes = std::collections::BTreeMap::<u32, usize>::new();
            for p in &run.trajectory.points[seg.point_range.clone()] {
                let k = nearest_index(&truth.point_times, p.t).unwrap_or(0);
                if let Some(f) = truth.point_floors[k] {
                    *votes.entry(f).or_default() += 1;
                }
            }
            votes.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).map(|(f, _)| f)
        })
        .collect()
}

/// Assigned and true floor per segment, for the segments that have both.
pub fn floor_pairs(run: &TrajectoryRun, truth: &GroundTruth) -> (Vec<u32>, Vec<u32>) {
    run.segments
        .iter()
        .zip(segment_true_floors(run, truth))
        .filter_map(|(s, t)| Some((s.floor?, t?)))
        .unzip()
}

/// True corners located on the estimated trajectory, grouped by the
/// segment whose interior they fall in. Corners on segment ends or in gaps
/// are left out.
pub fn truth_corners_by_segment(run: &TrajectoryRun, truth: &GroundTruth) -> Vec<Vec<[f64; 2]>> {
    let mut out = vec![Vec::new(); run.segments.len()];
    for &c in &truth.corners {
        let Some(k) = point_index_at(run, truth.point_times[c]) else {
            continue;
        };
        for (s, seg) in run.segments.iter().enumerate() {
            let r = &seg.point_range;
            if k > r.start && k + 1 < r.end {
                let p = &run.trajectory.points[k];
                out[s].push([p.x, p.y]);
            }
        }
    }
    out
}

/// Interior vertices of graphs cut from a segment of `point_count` points.
pub fn detected_corners(graphs: &[ChainGraph], point_count: usize) -> Vec<[f64; 2]> {
    graphs
        .iter()
        .flat_map(|g| g.vertices.iter())
        .filter(|v| v.origin_index > 0 && v.origin_index + 1 < point_count)
        .map(|v| [v.x, v.y])
        .collect()
}

/// A processed trajectory with its ground truth, ready for re-scoring.
pub struct EvalCase {
    pub run: TrajectoryRun,
    pub truth: GroundTruth,
    truth_corners: Vec<Vec<[f64; 2]>>,
}

impl EvalCase {
    pub fn new(run: TrajectoryRun, truth: GroundTruth) -> Self {
        let truth_corners = truth_corners_by_segment(&run, &truth);
        Self {
            run,
            truth,
            truth_corners,
        }
    }

    pub fn turning_counts(&self, cfg: &TurningConfig, radius: f64) -> TurningCounts {
        let mut total = TurningCounts::default();
        for (s, seg) in self.run.segments.iter().enumerate() {
            let graphs = featurize_segment(&self.run.trajectory, seg, s, cfg).graphs;
            let detected = detected_corners(&graphs, seg.point_range.len());
            total.add(match_turnings(&detected, &self.truth_corners[s], radius));
        }
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub window: usize,
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
    pub counts: TurningCounts,
}

/// Re-runs turning-point detection for every `(ε, window)` cell over the
/// whole corpus. Rows come out ordered by ε, then window.
pub fn sweep(
    cases: &[EvalCase],
    epsilons: &[f64],
    windows: &[usize],
    base: &TurningConfig,
    radius: f64,
) -> Vec<SweepRow> {
    let cells: Vec<(f64, usize)> = epsilons
        .iter()
        .flat_map(|&e| windows.iter().map(move |&w| (e, w)))
        .collect();
    cells
        .par_iter()
        .map(|&(epsilon, window)| {
            let cfg = TurningConfig {
                epsilon,
                window_min: window,
                ..base.clone()
            };
            let mut counts = TurningCounts::default();
            for case in cases {
                counts.add(case.turning_counts(&cfg, radius));
            }
            let s = counts.score(radius);
            SweepRow {
                epsilon,
                window,
                precision: s.precision,
                recall: s.recall,
                f: s.f_measure,
                counts,
            }
        })
        .collect()
}

/// Grid `start, start + step, ...` up to `end` inclusive, rounded to
/// avoid accumulated drift.
pub fn grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    let n = ((end - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| ((start + step * i as f64) * 1e9).round() / 1e9).collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "epsilon,window,precision,recall,f")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.epsilon, r.window, r.precision, r.recall, r.f)?;
    }
    Ok(())
}

/// Whitespace-separated columns for gnuplot, one blank-line-separated block
/// per window size.
pub fn write_sweep_dat<W: Write>(rows: &[SweepRow], mut w: W) -> std::io::Result<()> {
    let mut windows: Vec<usize> = rows.iter().map(|r| r.window).collect();
    windows.sort_unstable();
    windows.dedup();
    writeln!(w, "# epsilon precision recall f")?;
    for (i, win) in windows.iter().enumerate() {
        if i > 0 {
            writeln!(w)?;
            writeln!(w)?;
        }
        writeln!(w, "# window {win}")?;
        for r in rows.iter().filter(|r| r.window == *win) {
            writeln!(w, "{:.3} {:.6} {:.6} {:.6}", r.epsilon, r.precision, r.recall, r.f)?;
        }
    }
    Ok(())
}
