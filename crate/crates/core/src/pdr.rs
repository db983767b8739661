//! Dead-reckoning integration of steps into a 2-D trajectory.
//!
//! Positions are `(x, y)` with x pointing to magnetic north and y to east,
//! so a heading θ (azimuth from north towards east) moves a step of length
//! S by `(S cos θ, S sin θ)`.
//!
//! Step vectors are snapped to a fixed dyadic grid of 2⁻⁴⁰ m before they
//! are summed. Sums of grid values are exact (for trajectories within a few
//! thousand kilometres), so every point is exactly the sum of the step
//! vectors before it and any run of step vectors adds up bit-for-bit to the
//! difference of its end points.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::logio::{rss_map, Bssid, PressureSample, SensorLog, WifiObservation};
use crate::stepdetect::Step;

const GRID: f64 = 1099511627776.0; // 2^40
pub const WIFI_BATCH_GAP_S: f64 = 0.5;
pub const WIFI_MATCH_S: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdrPoint {
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub step_index: usize,
    pub baro_hpa: Option<f64>,
    /// Index into [`PdrTrajectory::wifi_batches`].
    pub wifi_ref: Option<usize>,
}

/// One WiFi scan burst: the strongest reading per access point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WifiBatch {
    pub t: f64,
    pub rss: BTreeMap<Bssid, i32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdrTrajectory {
    pub source_id: String,
    pub points: Vec<PdrPoint>,
    pub step_vectors: Vec<[f64; 2]>,
    pub wifi_batches: Vec<WifiBatch>,
}

impl PdrTrajectory {
    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.points.iter().map(|p| [p.x, p.y]).collect()
    }
}

pub fn pdr_update(prev: (f64, f64), stride: f64, theta: f64) -> (f64, f64) {
    (prev.0 + stride * theta.cos(), prev.1 + stride * theta.sin())
}

fn snap(v: f64) -> f64 {
    (v * GRID).round() / GRID
}

/// Displacement of one step, on the summation grid.
pub fn step_vector(stride: f64, theta: f64) -> [f64; 2] {
    let (x, y) = pdr_update((0.0, 0.0), stride, theta);
    [snap(x), snap(y)]
}

/// Groups observations whose successive gaps are below
/// [`WIFI_BATCH_GAP_S`]. A batch is timed by its first observation.
pub fn wifi_batches(wifi: &[WifiObservation]) -> Vec<WifiBatch> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=wifi.len() {
        let split = i == wifi.len()
            || wifi[i].app_timestamp - wifi[i - 1].app_timestamp >= WIFI_BATCH_GAP_S;
        if split && start < i {
            out.push(WifiBatch {
                t: wifi[start].app_timestamp,
                rss: rss_map(&wifi[start..i]),
            });
            start = i;
        }
    }
    out
}

/// Index of the time-sorted `times` entry nearest to `t`; ties go to the
/// earlier entry.
pub fn nearest_index(times: &[f64], t: f64) -> Option<usize> {
    if times.is_empty() {
        return None;
    }
    let i = times.partition_point(|&x| x < t);
    if i == 0 {
        return Some(0);
    }
    if i == times.len() {
        return Some(times.len() - 1);
    }
    if t - times[i - 1] <= times[i] - t {
        Some(i - 1)
    } else {
        Some(i)
    }
}

pub fn nearest_batch(batches: &[WifiBatch], times: &[f64], t: f64) -> Option<usize> {
    nearest_index(times, t).filter(|&i| (batches[i].t - t).abs() <= WIFI_MATCH_S)
}

fn nearest_pressure(baro: &[PressureSample], times: &[f64], t: f64) -> Option<f64> {
    nearest_index(times, t).map(|i| baro[i].hpa)
}

/// Folds the steps into a trajectory starting at the origin. Point 0 is
/// timed at the first step's peak and point k at step k's valley.
pub fn integrate(steps: &[Step], log: &SensorLog) -> PdrTrajectory {
    let batches = wifi_batches(&log.wifi);
    let batch_times: Vec<f64> = batches.iter().map(|b| b.t).collect();
    let baro_times: Vec<f64> = log.baro.iter().map(|b| b.app_timestamp).collect();
    let annotate = |x: f64, y: f64, t: f64, k: usize| PdrPoint {
        x,
        y,
        t,
        step_index: k,
        baro_hpa: nearest_pressure(&log.baro, &baro_times, t),
        wifi_ref: nearest_batch(&batches, &batch_times, t),
    };

    let t0 = steps.first().map_or_else(
        || log.accel.first().map_or(0.0, |a| a.app_timestamp),
        |s| s.peak_time,
    );
    let mut points = vec![annotate(0.0, 0.0, t0, 0)];
    let mut step_vectors = Vec::with_capacity(steps.len());
    let (mut x, mut y) = (0.0, 0.0);
    for (k, s) in steps.iter().enumerate() {
        let u = step_vector(s.stride_m, s.heading_rad);
        x += u[0];
        y += u[1];
        step_vectors.push(u);
        points.push(annotate(x, y, s.valley_time, k + 1));
    }
    PdrTrajectory {
        source_id: log.source_id.clone(),
        points,
        step_vectors,
        wifi_batches: batches,
    }
}
