//! Synthetic walks with ground truth.
//!
//! A [`WalkScript`] lists straight walking segments (floor, gait, heading,
//! step count). Consecutive segments on different floors are joined by a
//! straight stair run. The walk is rendered at 100 Hz into accelerometer,
//! gyroscope and magnetometer streams, a 10 Hz barometer and WiFi scan
//! bursts, together with the true steps, points, floors and corners.
//!
//! Each step is one cosine period of vertical and forward acceleration that
//! starts at its peak, so the valley falls half a period later. The phone
//! yaw follows the walking direction and turns over 0.1 s around each step
//! boundary.

use std::f64::consts::PI;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angle::wrap;
use crate::heading::{earth_to_level, unlevel, STANDARD_GRAVITY};
use crate::logio::{Bssid, MotionSample, PressureSample, SensorLog, WifiObservation};
use crate::pdr::step_vector;
use crate::stepdetect::{magnitude_series, StepConfig};
use crate::stride::{extract_features, Gait, StrideFeatures, StrideTable};

pub const SAMPLE_RATE_HZ: f64 = 100.0;
pub const BARO_RATE_HZ: f64 = 10.0;
pub const SEA_LEVEL_HPA: f64 = 1013.25;
pub const HPA_PER_M: f64 = 0.12;
pub const FLOOR_HEIGHT_M: f64 = 3.3;
/// Horizontal and vertical (up) components of the geomagnetic field, µT.
pub const FIELD_NORTH_UT: f64 = 20.0;
pub const FIELD_UP_UT: f64 = -45.0;
const LEAD_S: f64 = 1.0;
const YAW_RAMP_S: f64 = 0.1;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid walk script: {0}")]
    Invalid(String),
    #[error("walk script: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptSegment {
    pub floor: u32,
    pub gait: Gait,
    /// Azimuth from north towards east, radians.
    pub heading: f64,
    pub step_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApPools {
    pub aps_per_floor: usize,
    pub per_scan: usize,
    /// Probability that a scan slot reports an access point of another floor.
    pub leakage: f64,
    pub scan_interval_s: f64,
}

impl Default for ApPools {
    fn default() -> Self {
        Self {
            aps_per_floor: 30,
            per_scan: 10,
            leakage: 0.1,
            scan_interval_s: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub accel: f64,
    pub gyro: f64,
    pub magn: f64,
    pub baro: f64,
    /// Half-width of the uniform per-step heading wobble, radians.
    pub heading_jitter: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            accel: 0.1,
            gyro: 0.01,
            magn: 0.3,
            baro: 0.02,
            heading_jitter: 0.0,
        }
    }
}

impl NoiseConfig {
    pub fn none() -> Self {
        Self {
            accel: 0.0,
            gyro: 0.0,
            magn: 0.0,
            baro: 0.0,
            heading_jitter: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkScript {
    pub source_id: String,
    pub seed: u64,
    pub segments: Vec<ScriptSegment>,
    pub ap_pools: ApPools,
    pub noise: NoiseConfig,
    pub stride_table: StrideTable,
    /// Constant barometer offset of this phone, hPa.
    pub baro_bias: f64,
    /// Angle between the phone's forward axis and the walking direction.
    pub phone_yaw_offset: f64,
    pub phone_roll: f64,
    pub phone_pitch: f64,
    /// Steps per stair run between adjacent floors.
    pub stair_steps: usize,
    pub start_time: f64,
    /// Heading changes at least this large between segments are corners.
    pub corner_threshold: f64,
}

impl Default for WalkScript {
    fn default() -> Self {
        Self {
            source_id: "synthetic".into(),
            seed: 0,
            segments: Vec::new(),
            ap_pools: ApPools::default(),
            noise: NoiseConfig::default(),
            stride_table: StrideTable::default(),
            baro_bias: 0.0,
            phone_yaw_offset: 0.0,
            phone_roll: 0.0,
            phone_pitch: 0.0,
            stair_steps: 8,
            start_time: 1.0,
            corner_threshold: 1.0,
        }
    }
}

impl WalkScript {
    pub fn from_toml_str(text: &str) -> Result<Self, SynthError> {
        let s: WalkScript = toml::from_str(text).map_err(|e| SynthError::Format(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("walk scripts are representable as TOML")
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Invalid(m));
        if self.segments.is_empty() {
            return bad("no segments".into());
        }
        for (i, s) in self.segments.iter().enumerate() {
            if s.step_count == 0 {
                return bad(format!("segment {i} has no steps"));
            }
            if s.floor == 0 || s.floor > 200 {
                return bad(format!("segment {i}: floor must be in 1..=200"));
            }
            if !s.heading.is_finite() {
                return bad(format!("segment {i}: heading must be finite"));
            }
        }
        let p = &self.ap_pools;
        if !(0.0..1.0).contains(&p.leakage) {
            return bad(format!("leakage must be in [0, 1), got {}", p.leakage));
        }
        if p.aps_per_floor == 0 || p.aps_per_floor > 255 || p.per_scan > p.aps_per_floor {
            return bad("need 1..=255 access points per floor and per_scan <= aps_per_floor".into());
        }
        if !(p.scan_interval_s > 0.5) {
            return bad("scan_interval_s must exceed 0.5 s".into());
        }
        let n = &self.noise;
        for (name, v) in [("accel", n.accel), ("gyro", n.gyro), ("magn", n.magn), ("baro", n.baro)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("noise.{name} must be a finite non-negative number"));
            }
        }
        if !(0.0..PI / 2.0).contains(&n.heading_jitter) {
            return bad("noise.heading_jitter must be in [0, pi/2)".into());
        }
        if !(self.phone_yaw_offset.abs() < PI / 2.0) {
            return bad("phone_yaw_offset must be within (-pi/2, pi/2)".into());
        }
        if !(self.phone_roll.abs() <= PI / 3.0 && self.phone_pitch.abs() <= PI / 3.0) {
            return bad("phone tilt must be within 60 degrees".into());
        }
        if !self.baro_bias.is_finite() || !(self.start_time >= 0.0 && self.start_time.is_finite()) {
            return bad("baro_bias and start_time must be finite (start_time >= 0)".into());
        }
        if self.stair_steps == 0 {
            return bad("stair_steps must be at least 1".into());
        }
        for g in Gait::ALL {
            let v = self.stride_table.get(g);
            if !(v > 0.0 && v <= 2.0) {
                return bad(format!("stride for {g} must be in (0, 2]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct GaitShape {
    period: f64,
    vertical: f64,
    forward: f64,
}

fn gait_shape(g: Gait) -> GaitShape {
    let (period, vertical) = match g {
        Gait::Slow => (0.9, 2.0),
        Gait::Normal => (0.6, 2.5),
        Gait::Fast => (0.4, 3.0),
    };
    GaitShape {
        period,
        vertical,
        forward: 0.4 * vertical,
    }
}

pub fn floor_pressure(floor: u32) -> f64 {
    SEA_LEVEL_HPA - HPA_PER_M * (floor as f64 - 1.0) * FLOOR_HEIGHT_M
}

pub fn bssid_for(floor: u32, ap: usize) -> Bssid {
    Bssid([0x02, 0x54, 0x46, (floor >> 8) as u8, floor as u8, ap as u8])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub source_id: String,
    pub step_peak_times: Vec<f64>,
    pub step_valley_times: Vec<f64>,
    pub step_gaits: Vec<Gait>,
    pub step_headings: Vec<f64>,
    pub step_strides: Vec<f64>,
    /// Point k follows k steps; point 0 is timed at the first peak.
    pub points: Vec<[f64; 2]>,
    pub point_times: Vec<f64>,
    /// `None` on stairs.
    pub point_floors: Vec<Option<u32>>,
    /// Point indices where the walking direction turns by at least the
    /// corner threshold.
    pub corners: Vec<usize>,
    /// Number of maximal stretches walked on one floor.
    pub floor_visits: usize,
}

#[derive(Debug, Clone, Copy)]
struct PlannedStep {
    gait: Gait,
    heading: f64,
    nominal: f64,
    // fractional floor level at the start and end of the step
    level: (f64, f64),
    stair: bool,
}

fn plan(script: &WalkScript, rng: &mut ChaCha8Rng) -> (Vec<PlannedStep>, Vec<usize>) {
    let mut steps: Vec<PlannedStep> = Vec::new();
    let mut corners = Vec::new();
    let jitter = script.noise.heading_jitter;
    let wobble = |rng: &mut ChaCha8Rng| if jitter > 0.0 { rng.gen_range(-jitter..=jitter) } else { 0.0 };
    let mut prev: Option<&ScriptSegment> = None;
    for seg in &script.segments {
        if let Some(p) = prev {
            if p.floor != seg.floor {
                let runs = (p.floor as i64 - seg.floor as i64).unsigned_abs() as usize * script.stair_steps;
                for j in 0..runs {
                    let (a, b) = (p.floor as f64, seg.floor as f64);
                    let f = |x: f64| a + (b - a) * x / runs as f64;
                    steps.push(PlannedStep {
                        gait: Gait::Normal,
                        heading: wrap(p.heading + wobble(rng)),
                        nominal: p.heading,
                        level: (f(j as f64), f(j as f64 + 1.0)),
                        stair: true,
                    });
                }
            }
            if wrap(seg.heading - p.heading).abs() >= script.corner_threshold {
                corners.push(steps.len());
            }
        }
        for _ in 0..seg.step_count {
            let l = seg.floor as f64;
            steps.push(PlannedStep {
                gait: seg.gait,
                heading: wrap(seg.heading + wobble(rng)),
                nominal: seg.heading,
                level: (l, l),
                stair: false,
            });
        }
        prev = Some(seg);
    }
    (steps, corners)
}

fn noise(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).unwrap().sample(rng)
    } else {
        0.0
    }
}

fn level_pressure(level: f64) -> f64 {
    SEA_LEVEL_HPA - HPA_PER_M * (level - 1.0) * FLOOR_HEIGHT_M
}

/// Renders a script into a sensor log and its ground truth.
pub fn generate(script: &WalkScript) -> Result<(SensorLog, GroundTruth), SynthError> {
    script.validate()?;
    let mut plan_rng = ChaCha8Rng::seed_from_u64(script.seed);
    let mut sensor_rng = ChaCha8Rng::seed_from_u64(script.seed);
    sensor_rng.set_stream(1);
    let mut wifi_rng = ChaCha8Rng::seed_from_u64(script.seed);
    wifi_rng.set_stream(2);

    let (planned, corners) = plan(script, &mut plan_rng);
    let shapes: Vec<GaitShape> = planned.iter().map(|s| gait_shape(s.gait)).collect();

    // peak times
    let walk_start = script.start_time + LEAD_S;
    let mut peaks = Vec::with_capacity(planned.len());
    let mut t = walk_start + shapes[0].period / 4.0;
    for s in &shapes {
        peaks.push(t);
        t += s.period;
    }
    let last = planned.len() - 1;
    let walk_end = peaks[last] + 0.75 * shapes[last].period;
    let end_time = walk_end + LEAD_S;

    // step active at time t: the last one whose peak is not after t
    let step_at = |t: f64| -> usize { peaks.partition_point(|&p| p <= t).saturating_sub(1) };
    let yaw_at = |t: f64| -> f64 {
        let k = step_at(t);
        let base = planned[k].heading;
        // turn over a short window centred on each step boundary
        let (from, to, centre) = if k + 1 < planned.len() && t > peaks[k + 1] - YAW_RAMP_S / 2.0 {
            (base, planned[k + 1].heading, peaks[k + 1])
        } else if k > 0 && t < peaks[k] + YAW_RAMP_S / 2.0 {
            (planned[k - 1].heading, base, peaks[k])
        } else {
            (base, base, peaks[k])
        };
        let frac = ((t - (centre - YAW_RAMP_S / 2.0)) / YAW_RAMP_S).clamp(0.0, 1.0);
        wrap(from + wrap(to - from) * frac + script.phone_yaw_offset)
    };
    let level_at = |t: f64| -> f64 {
        if t < peaks[0] {
            return planned[0].level.0;
        }
        let k = step_at(t);
        let s = &planned[k];
        let span = shapes[k].period;
        let frac = ((t - peaks[k]) / span).clamp(0.0, 1.0);
        s.level.0 + (s.level.1 - s.level.0) * frac
    };

    let (roll, pitch) = (script.phone_roll, script.phone_pitch);
    let to_phone = |n: f64, e: f64, u: f64, yaw: f64| {
        let h = earth_to_level([n, e], yaw);
        unlevel([h[0], h[1], u], roll, pitch)
    };

    let mut log = SensorLog {
        source_id: script.source_id.clone(),
        ..SensorLog::default()
    };
    let n_samples = ((end_time - script.start_time) * SAMPLE_RATE_HZ).round() as usize + 1;
    let mut prev_yaw: Option<f64> = None;
    let nz = &script.noise;
    for i in 0..n_samples {
        let t = script.start_time + i as f64 / SAMPLE_RATE_HZ;
        let (c, k) = if t < walk_start || t > walk_end {
            (0.0, 0)
        } else if t < peaks[0] {
            ((2.0 * PI * (t - peaks[0]) / shapes[0].period).cos(), 0)
        } else {
            let k = step_at(t);
            ((2.0 * PI * (t - peaks[k]) / shapes[k].period).cos(), k)
        };
        let (h, shape) = (planned[k].heading, shapes[k]);
        let yaw = yaw_at(t);
        let a = to_phone(
            c * shape.forward * h.cos(),
            c * shape.forward * h.sin(),
            STANDARD_GRAVITY + c * shape.vertical,
            yaw,
        );
        let rate = prev_yaw.map_or(0.0, |p| wrap(yaw - p) * SAMPLE_RATE_HZ);
        prev_yaw = Some(yaw);
        // yaw grows clockwise from above: the body turns about its down axis
        let w = to_phone(0.0, 0.0, -rate, yaw);
        let m = to_phone(FIELD_NORTH_UT, 0.0, FIELD_UP_UT, yaw);
        let sample = |v: [f64; 3], sigma: f64, rng: &mut ChaCha8Rng| MotionSample {
            app_timestamp: t,
            sensor_timestamp: t,
            values: [v[0] + noise(rng, sigma), v[1] + noise(rng, sigma), v[2] + noise(rng, sigma)],
            accuracy: 3,
        };
        log.accel.push(sample(a, nz.accel, &mut sensor_rng));
        log.gyro.push(sample(w, nz.gyro, &mut sensor_rng));
        log.magn.push(sample(m, nz.magn, &mut sensor_rng));
    }

    let n_baro = ((end_time - script.start_time) * BARO_RATE_HZ).floor() as usize + 1;
    for i in 0..n_baro {
        let t = script.start_time + i as f64 / BARO_RATE_HZ;
        log.baro.push(PressureSample {
            app_timestamp: t,
            sensor_timestamp: t,
            hpa: level_pressure(level_at(t)) + script.baro_bias + noise(&mut sensor_rng, nz.baro),
            accuracy: 0,
        });
    }

    let max_floor = script.segments.iter().map(|s| s.floor).max().unwrap();
    let pools = &script.ap_pools;
    let mut ts = script.start_time + 0.5;
    while ts < end_time {
        let floor = level_at(ts).round().max(1.0) as u32;
        let picks = sample_indices(&mut wifi_rng, pools.aps_per_floor, pools.per_scan).into_vec();
        for (slot, ap) in picks.into_iter().enumerate() {
            let (f, ap) = if max_floor > 1 && wifi_rng.gen::<f64>() < pools.leakage {
                let mut other = wifi_rng.gen_range(1..max_floor);
                if other >= floor {
                    other += 1;
                }
                (other, wifi_rng.gen_range(0..pools.aps_per_floor))
            } else {
                (floor, ap)
            };
            let t = ts + slot as f64 * 0.01;
            log.wifi.push(WifiObservation {
                app_timestamp: t,
                sensor_timestamp: t,
                ssid: format!("floor{f}-ap{ap}"),
                bssid: bssid_for(f, ap),
                frequency: 2412 + 5 * (ap as u32 % 13),
                rssi: wifi_rng.gen_range(-90..=-40),
            });
        }
        ts += pools.scan_interval_s;
    }
    log.wifi.sort_by(|a, b| a.app_timestamp.total_cmp(&b.app_timestamp));

    let strides: Vec<f64> = planned.iter().map(|s| script.stride_table.get(s.gait)).collect();
    let mut points = vec![[0.0, 0.0]];
    for (s, len) in planned.iter().zip(&strides) {
        let u = step_vector(*len, s.heading);
        let p = *points.last().unwrap();
        points.push([p[0] + u[0], p[1] + u[1]]);
    }
    let valleys: Vec<f64> = peaks.iter().zip(&shapes).map(|(p, s)| p + s.period / 2.0).collect();
    let mut point_times = vec![peaks[0]];
    point_times.extend(&valleys);
    let floor_of = |s: &PlannedStep| (!s.stair).then_some(s.level.0 as u32);
    let mut point_floors = vec![floor_of(&planned[0])];
    point_floors.extend(planned.iter().map(floor_of));
    let mut floor_visits = 0;
    let mut prev: Option<Option<u32>> = None;
    for f in planned.iter().map(floor_of) {
        if f.is_some() && prev != Some(f) {
            floor_visits += 1;
        }
        prev = Some(f);
    }

    let truth = GroundTruth {
        source_id: script.source_id.clone(),
        step_peak_times: peaks,
        step_valley_times: valleys,
        step_gaits: planned.iter().map(|s| s.gait).collect(),
        step_headings: planned.iter().map(|s| s.heading).collect(),
        step_strides: strides,
        points,
        point_times,
        point_floors,
        corners,
        floor_visits,
    };
    debug_assert!(planned.iter().all(|s| s.nominal.is_finite()));
    Ok((log, truth))
}

/// Labelled step features measured on a rendered log at the true step
/// windows.
pub fn labeled_features(log: &SensorLog, truth: &GroundTruth) -> Vec<(StrideFeatures, Gait)> {
    let mag = magnitude_series(&log.accel, StepConfig::default().smooth_window);
    let times: Vec<f64> = mag.iter().map(|m| m.t).collect();
    let index_of = |t: f64| crate::pdr::nearest_index(&times, t).unwrap_or(0);
    let n = truth.step_peak_times.len();
    (0..n)
        .map(|k| {
            let start = index_of(truth.step_peak_times[k]);
            let end_t = truth
                .step_peak_times
                .get(k + 1)
                .copied()
                .unwrap_or(2.0 * truth.step_valley_times[k] - truth.step_peak_times[k]);
            let end = index_of(end_t).max(start);
            (extract_features(&mag[start..=end]), truth.step_gaits[k])
        })
        .collect()
}

fn seg(floor: u32, gait: Gait, heading: f64, step_count: usize) -> ScriptSegment {
    ScriptSegment {
        floor,
        gait,
        heading,
        step_count,
    }
}

/// Walks one floor visit: legs joined by corners, with an occasional
/// two-step swerve that is not a corner.
fn floor_visit(
    out: &mut Vec<ScriptSegment>,
    rng: &mut ChaCha8Rng,
    floor: u32,
    gait: Gait,
    heading: &mut f64,
    legs: usize,
) {
    const CORNERS: [f64; 6] = [1.2, 1.25, 1.3, PI / 2.0, 1.9, 2.2];
    for leg in 0..legs {
        if leg > 0 {
            let turn = CORNERS[rng.gen_range(0..CORNERS.len())];
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            *heading = wrap(*heading + sign * turn);
        }
        let len = rng.gen_range(14..=18);
        if rng.gen_bool(0.6) {
            let swerve = rng.gen_range(0.5..=0.55) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let before = rng.gen_range(6..=8);
            out.push(seg(floor, gait, *heading, before));
            out.push(seg(floor, gait, wrap(*heading + swerve), 2));
            out.push(seg(floor, gait, *heading, len - before - 2));
        } else {
            out.push(seg(floor, gait, *heading, len));
        }
    }
}

/// The standard evaluation corpus: three phones walking a three-floor
/// building, each visiting every floor, with per-phone barometer bias and
/// cross-floor WiFi leakage.
pub fn default_corpus() -> Vec<WalkScript> {
    let plans: [(&str, &[(u32, Gait)], f64); 3] = [
        ("walk-a", &[(1, Gait::Normal), (2, Gait::Normal), (3, Gait::Normal)], 0.35),
        ("walk-b", &[(3, Gait::Slow), (2, Gait::Normal), (1, Gait::Normal)], -0.45),
        ("walk-c", &[(2, Gait::Normal), (1, Gait::Fast), (2, Gait::Normal), (3, Gait::Normal)], 0.1),
    ];
    plans
        .iter()
        .enumerate()
        .map(|(i, (id, visits, bias))| {
            let seed = 1000 + i as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let mut heading = rng.gen_range(-PI..PI);
            let mut segments = Vec::new();
            for &(floor, gait) in visits.iter() {
                floor_visit(&mut segments, &mut rng, floor, gait, &mut heading, 4);
            }
            WalkScript {
                source_id: (*id).into(),
                seed,
                segments,
                noise: NoiseConfig {
                    heading_jitter: 0.15,
                    ..NoiseConfig::default()
                },
                baro_bias: *bias,
                phone_yaw_offset: 0.2 * i as f64 - 0.2,
                ..WalkScript::default()
            }
        })
        .collect()
}
