//! Adaptive jerk/pace step detection on the accelerometer magnitude.
//!
//! Peaks and valleys are found with a hysteresis zig-zag on the smoothed
//! magnitude. Each peak and the valley that follows it form a candidate
//! step. A candidate is accepted when both its jerk (peak minus valley) and
//! its pace (time since the previous accepted peak) reach the current
//! thresholds. Accepted `(jerk, pace)` pairs go into a bounded FIFO and the
//! thresholds follow `update_ratio * mean(buffer)`, clamped to the
//! configured floors (and the pace ceiling).

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::logio::MotionSample;
use crate::stride::{Gait, StrideFeatures};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagnitudePoint {
    pub t: f64,
    pub mag: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepConfig {
    pub jerk_init: f64,
    pub jerk_floor: f64,
    pub pace_init: f64,
    pub pace_floor: f64,
    pub pace_ceiling: f64,
    pub buffer_capacity: usize,
    pub update_ratio: f64,
    pub smooth_window: usize,
    /// Minimum rise/fall that separates a peak from a valley (m/s²).
    pub min_prominence: f64,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            jerk_init: 1.0,
            jerk_floor: 0.6,
            pace_init: 0.25,
            pace_floor: 0.2,
            pace_ceiling: 2.0,
            buffer_capacity: 10,
            update_ratio: 0.5,
            smooth_window: 5,
            min_prominence: 0.2,
        }
    }
}

/// The running thresholds and the buffer of accepted `(jerk, pace)` pairs.
#[derive(Debug, Clone)]
pub struct AdaptiveThresholds {
    pub jerk_threshold: f64,
    pub pace_threshold: f64,
    buffer: VecDeque<(f64, f64)>,
    capacity: usize,
    cfg: StepConfig,
}

impl AdaptiveThresholds {
    pub fn new(cfg: &StepConfig) -> Self {
        let mut t = Self {
            jerk_threshold: cfg.jerk_init,
            pace_threshold: cfg.pace_init,
            buffer: VecDeque::with_capacity(cfg.buffer_capacity),
            capacity: cfg.buffer_capacity.max(1),
            cfg: cfg.clone(),
        };
        t.clamp();
        t
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    fn clamp(&mut self) {
        self.jerk_threshold = self.jerk_threshold.max(self.cfg.jerk_floor);
        self.pace_threshold = self
            .pace_threshold
            .max(self.cfg.pace_floor)
            .min(self.cfg.pace_ceiling.max(self.cfg.pace_floor));
    }

    pub fn accept(&mut self, jerk: f64, pace: f64) {
        if self.buffer.len() == self.capacity {
            self.buffer.pop_front();
        }
        self.buffer.push_back((jerk, pace));
        let n = self.buffer.len() as f64;
        let (sj, sp) = self
            .buffer
            .iter()
            .fold((0.0, 0.0), |(a, b), &(j, p)| (a + j, b + p));
        self.jerk_threshold = self.cfg.update_ratio * sj / n;
        self.pace_threshold = self.cfg.update_ratio * sp / n;
        self.clamp();
    }

    pub fn reset(&mut self) {
        *self = Self::new(&self.cfg);
    }
}

/// One detected footfall.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub peak_index: usize,
    pub valley_index: usize,
    pub peak_time: f64,
    pub valley_time: f64,
    pub jerk: f64,
    pub pace: f64,
    pub features: Option<StrideFeatures>,
    pub gait: Option<Gait>,
    pub stride_m: f64,
    pub heading_rad: f64,
}

/// Euclidean norm of each sample followed by a centred moving average of
/// `smooth_window` samples (shrunk at the edges).
pub fn magnitude_series(accel: &[MotionSample], smooth_window: usize) -> Vec<MagnitudePoint> {
    let raw: Vec<f64> = accel
        .iter()
        .map(|s| {
            let [x, y, z] = s.values;
            (x * x + y * y + z * z).sqrt()
        })
        .collect();
    let smoothed = moving_average(&raw, smooth_window);
    accel
        .iter()
        .zip(smoothed)
        .map(|(s, mag)| MagnitudePoint {
            t: s.app_timestamp,
            mag,
        })
        .collect()
}

fn moving_average(x: &[f64], width: usize) -> Vec<f64> {
    if width <= 1 || x.is_empty() {
        return x.to_vec();
    }
    let half_lo = (width - 1) / 2;
    let half_hi = width - 1 - half_lo;
    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half_lo);
            let hi = (i + half_hi).min(x.len() - 1);
            let window = &x[lo..=hi];
            // exact for constant windows; the prefix sum is only used for long windows
            if window.len() <= 16 {
                window.iter().sum::<f64>() / window.len() as f64
            } else {
                (prefix[hi + 1] - prefix[lo]) / window.len() as f64
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extremum {
    Peak(usize),
    Valley(usize),
}

/// Alternating peaks and valleys whose rise/fall relative to the previous
/// extremum is at least `prominence`.
pub fn extrema(mag: &[MagnitudePoint], prominence: f64) -> Vec<Extremum> {
    #[derive(PartialEq)]
    enum Dir {
        Unknown,
        Rising,
        Falling,
    }
    let mut out = Vec::new();
    if mag.is_empty() {
        return out;
    }
    let (mut hi, mut lo) = (0usize, 0usize);
    let mut dir = Dir::Unknown;
    for i in 1..mag.len() {
        let v = mag[i].mag;
        match dir {
            Dir::Unknown => {
                if v > mag[hi].mag {
                    hi = i;
                }
                if v < mag[lo].mag {
                    lo = i;
                }
                if mag[hi].mag - mag[lo].mag >= prominence {
                    if hi > lo {
                        out.push(Extremum::Valley(lo));
                        dir = Dir::Rising;
                    } else {
                        out.push(Extremum::Peak(hi));
                        dir = Dir::Falling;
                    }
                }
            }
            Dir::Rising => {
                if v > mag[hi].mag {
                    hi = i;
                } else if mag[hi].mag - v >= prominence {
                    out.push(Extremum::Peak(hi));
                    dir = Dir::Falling;
                    lo = i;
                }
            }
            Dir::Falling => {
                if v < mag[lo].mag {
                    lo = i;
                } else if v - mag[lo].mag >= prominence {
                    out.push(Extremum::Valley(lo));
                    dir = Dir::Rising;
                    hi = i;
                }
            }
        }
    }
    // the last valley is still pending when the signal ends
    if dir == Dir::Falling {
        if let Some(Extremum::Peak(p)) = out.last() {
            if mag[*p].mag - mag[lo].mag >= prominence && lo > *p {
                out.push(Extremum::Valley(lo));
            }
        }
    }
    out
}

/// Runs the adaptive detector over a magnitude series.
pub fn detect_steps(mag: &[MagnitudePoint], cfg: &StepConfig) -> Vec<Step> {
    let ext = extrema(mag, cfg.min_prominence);
    let mut thresholds = AdaptiveThresholds::new(cfg);
    let mut steps: Vec<Step> = Vec::new();

    for pair in ext.windows(2) {
        let (Extremum::Peak(p), Extremum::Valley(v)) = (pair[0], pair[1]) else {
            continue;
        };
        let peak_time = mag[p].t;
        let valley_time = mag[v].t;
        let jerk = mag[p].mag - mag[v].mag;
        if !(jerk > 0.0) || !(valley_time > peak_time) {
            continue;
        }
        let previous = steps.last().map(|s| s.peak_time);
        // a long pause starts a new walking bout with fresh thresholds
        let bout_start = match previous {
            None => true,
            Some(prev) if peak_time - prev > cfg.pace_ceiling => {
                thresholds.reset();
                true
            }
            Some(_) => false,
        };
        let pace = match previous {
            Some(prev) if !bout_start => peak_time - prev,
            _ => valley_time - peak_time,
        };
        if jerk < thresholds.jerk_threshold {
            continue;
        }
        // the first step of a bout has no predecessor to measure pace against
        if !bout_start && pace < thresholds.pace_threshold {
            continue;
        }
        thresholds.accept(jerk, pace);
        steps.push(Step {
            peak_index: p,
            valley_index: v,
            peak_time,
            valley_time,
            jerk,
            pace,
            features: None,
            gait: None,
            stride_m: 0.0,
            heading_rad: 0.0,
        });
    }
    steps
}

/// Sample index range `[start, end]` (inclusive) that spans step `k`: from its
/// peak to the next step's peak, or for the last step to its valley plus the
/// peak-to-valley span again.
pub fn step_window(steps: &[Step], k: usize, n_samples: usize) -> (usize, usize) {
    let s = &steps[k];
    let end = match steps.get(k + 1) {
        // a following step more than two nominal periods away belongs to another bout
        Some(next) if next.peak_index - s.peak_index <= 4 * (s.valley_index - s.peak_index) => {
            next.peak_index
        }
        _ => s.valley_index + (s.valley_index - s.peak_index),
    };
    (s.peak_index, end.min(n_samples.saturating_sub(1)).max(s.valley_index))
}
