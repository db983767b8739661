//! Phone attitude and walking direction.
//!
//! Conventions: the phone body frame is x forward (towards the top edge),
//! y left, z up, so a phone lying flat reads `(0, 0, +g)` on the
//! accelerometer. Azimuths are measured from magnetic north towards east, in
//! radians, and horizontal Earth vectors are written `[north, east]`.
//!
//! Gravity is re-measured whenever the accelerometer magnitude is close to
//! `g` and is carried between those moments by the gyroscope. The yaw comes
//! from the tilt-compensated magnetometer while its short-term changes agree
//! with the gyroscope, and from gyroscope integration otherwise. The walking
//! direction of a step is the principal axis of the horizontal linear
//! acceleration, oriented to agree with the phone yaw.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::angle::{circular_mean, wrap};
use crate::logio::MotionSample;
use crate::stepdetect::{step_window, Step};

pub const STANDARD_GRAVITY: f64 = 9.80665;

/// Both the gyroscope and magnetometer azimuth changes below this over a
/// correlation window count as "no rotation", which trivially agrees.
const QUIESCENT_RAD: f64 = 0.1;
const MIN_PCA_SAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadingConfig {
    /// Accelerometer readings within this distance of `g` (m/s²) re-measure gravity.
    pub g_tol: f64,
    pub corr_gate: f64,
    pub corr_window_s: f64,
    pub pca_min_ratio: f64,
}

impl Default for HeadingConfig {
    fn default() -> Self {
        Self {
            g_tol: 0.3,
            corr_gate: 0.8,
            corr_window_s: 1.0,
            pca_min_ratio: 1.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeState {
    /// Unit vector pointing up, in phone coordinates.
    pub gravity_vec: [f64; 3],
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub last_update_time: f64,
    pub mag_trust: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DegradedMode {
    pub no_gyro: bool,
    pub no_magn: bool,
}

/// One attitude per accelerometer sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AttitudeTrack {
    pub states: Vec<AttitudeState>,
    pub degraded: DegradedMode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadingEstimate {
    pub phone_yaw: f64,
    pub motion_heading: f64,
    /// Ratio of the first to the second covariance eigenvalue.
    pub pca_confidence: f64,
    pub low_confidence: bool,
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn scale(v: [f64; 3], k: f64) -> [f64; 3] {
    [v[0] * k, v[1] * k, v[2] * k]
}

/// Roll and pitch of a phone whose up direction (in phone coordinates) is `g`.
pub fn roll_pitch(g: [f64; 3]) -> (f64, f64) {
    let roll = g[1].atan2(g[2]);
    let pitch = (-g[0]).atan2((g[1] * g[1] + g[2] * g[2]).sqrt());
    (roll, pitch)
}

/// Rotates a phone-frame vector into the level frame (x forward, y left,
/// z up, no tilt).
pub fn level(v: [f64; 3], roll: f64, pitch: f64) -> [f64; 3] {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let y = cr * v[1] - sr * v[2];
    let z = sr * v[1] + cr * v[2];
    [cp * v[0] + sp * z, y, -sp * v[0] + cp * z]
}

/// Inverse of [`level`].
pub fn unlevel(v: [f64; 3], roll: f64, pitch: f64) -> [f64; 3] {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let x = cp * v[0] - sp * v[2];
    let z = sp * v[0] + cp * v[2];
    [x, cr * v[1] + sr * z, -sr * v[1] + cr * z]
}

/// Level-frame horizontal components to `[north, east]` for a phone with
/// the given yaw.
pub fn level_to_earth(h: [f64; 2], yaw: f64) -> [f64; 2] {
    let (s, c) = yaw.sin_cos();
    [h[0] * c + h[1] * s, h[0] * s - h[1] * c]
}

/// `[north, east]` to level-frame horizontal components. The map is its own
/// inverse.
pub fn earth_to_level(ne: [f64; 2], yaw: f64) -> [f64; 2] {
    level_to_earth(ne, yaw)
}

/// Tilt-compensated compass yaw; `None` for a zero-magnitude reading.
pub fn tilt_compensated_yaw(m: [f64; 3], roll: f64, pitch: f64) -> Option<f64> {
    if !(norm(m) > 0.0) {
        return None;
    }
    let h = level(m, roll, pitch);
    if h[0] == 0.0 && h[1] == 0.0 {
        return None;
    }
    Some(wrap(h[1].atan2(h[0])))
}

/// Yaw for one magnetometer sample. An untrusted magnetometer or a zero
/// reading keeps the previous yaw advanced by the gyroscope.
pub fn estimate_yaw(state: &AttitudeState, m: [f64; 3], gyro_yaw_delta: f64) -> f64 {
    let dead_reckoned = wrap(state.yaw + gyro_yaw_delta);
    if !state.mag_trust {
        return dead_reckoned;
    }
    tilt_compensated_yaw(m, state.roll, state.pitch).unwrap_or(dead_reckoned)
}

/// Rotates the phone-frame vector `g` by the frame rotation `omega * dt`
/// (a world-fixed vector seen from a rotating body turns the other way).
fn rotate_with_gyro(g: [f64; 3], omega: [f64; 3], dt: f64) -> [f64; 3] {
    let rate = norm(omega);
    let angle = rate * dt;
    if !(angle > 0.0) {
        return g;
    }
    let k = scale(omega, 1.0 / rate);
    let (s, c) = (-angle).sin_cos();
    let kxg = cross(k, g);
    let kdg = dot(k, g);
    let r = [
        g[0] * c + kxg[0] * s + k[0] * kdg * (1.0 - c),
        g[1] * c + kxg[1] * s + k[1] * kdg * (1.0 - c),
        g[2] * c + kxg[2] * s + k[2] * kdg * (1.0 - c),
    ];
    let n = norm(r);
    scale(r, 1.0 / n)
}

struct TrustWindow {
    span: f64,
    gate: f64,
    // (time, cumulative gyro azimuth, unwrapped magnetometer azimuth)
    history: VecDeque<(f64, f64, f64)>,
}

impl TrustWindow {
    fn push(&mut self, t: f64, gyro_cum: f64, mag_unwrapped: f64) -> bool {
        self.history.push_back((t, gyro_cum, mag_unwrapped));
        while let Some(&(t0, _, _)) = self.history.front() {
            if t - t0 > self.span {
                self.history.pop_front();
            } else {
                break;
            }
        }
        self.trusted()
    }

    fn trusted(&self) -> bool {
        if self.history.len() < 2 {
            return true;
        }
        let (_, g0, m0) = self.history[0];
        let (mut sgm, mut sgg, mut smm) = (0.0, 0.0, 0.0);
        let (mut gmax, mut mmax) = (0.0f64, 0.0f64);
        for &(_, g, m) in self.history.iter().skip(1) {
            let (dg, dm) = (g - g0, m - m0);
            sgm += dg * dm;
            sgg += dg * dg;
            smm += dm * dm;
            gmax = gmax.max(dg.abs());
            mmax = mmax.max(dm.abs());
        }
        if gmax < QUIESCENT_RAD && mmax < QUIESCENT_RAD {
            return true;
        }
        if sgg == 0.0 || smm == 0.0 {
            return false;
        }
        sgm / (sgg * smm).sqrt() > self.gate
    }
}

/// Tracks gravity, roll/pitch and yaw at every accelerometer sample.
///
/// Without a gyroscope gravity only moves at quasi-static moments and the
/// magnetometer is used unchecked; without a magnetometer the yaw is pure
/// gyroscope integration from zero. Both cases are flagged in the result.
pub fn track_gravity(
    accel: &[MotionSample],
    gyro: &[MotionSample],
    magn: &[MotionSample],
    cfg: &HeadingConfig,
) -> AttitudeTrack {
    let degraded = DegradedMode {
        no_gyro: gyro.is_empty(),
        no_magn: magn.is_empty(),
    };
    let mut states = Vec::with_capacity(accel.len());
    let Some(first) = accel.first() else {
        return AttitudeTrack { states, degraded };
    };

    let mut g = match norm(first.values) {
        n if n > 0.0 => scale(first.values, 1.0 / n),
        _ => [0.0, 0.0, 1.0],
    };
    let mut yaw: Option<f64> = None;
    let mut gi = 0usize;
    let mut last_gyro_t = first.app_timestamp;
    let mut mi = 0usize;
    let mut gyro_cum = 0.0;
    let mut mag_unwrapped: Option<(f64, f64)> = None; // (last wrapped, unwrapped)
    let mut window = TrustWindow {
        span: cfg.corr_window_s,
        gate: cfg.corr_gate,
        history: VecDeque::new(),
    };

    for a in accel {
        let t = a.app_timestamp;
        let mut gyro_delta = 0.0;
        while gi < gyro.len() && gyro[gi].app_timestamp <= t {
            let dt = (gyro[gi].app_timestamp - last_gyro_t).max(0.0);
            let omega = gyro[gi].values;
            // azimuth grows clockwise seen from above, i.e. about -up
            gyro_delta -= dot(omega, g) * dt;
            g = rotate_with_gyro(g, omega, dt);
            last_gyro_t = gyro[gi].app_timestamp;
            gi += 1;
        }
        gyro_cum += gyro_delta;

        let an = norm(a.values);
        if an > 0.0 && (an - STANDARD_GRAVITY).abs() <= cfg.g_tol {
            g = scale(a.values, 1.0 / an);
        }
        let (roll, pitch) = roll_pitch(g);

        while mi + 1 < magn.len() && magn[mi + 1].app_timestamp <= t {
            mi += 1;
        }
        let m = magn
            .get(mi)
            .filter(|s| s.app_timestamp <= t || mi == 0)
            .map(|s| s.values);
        let mag_yaw = m.and_then(|m| tilt_compensated_yaw(m, roll, pitch));

        let mag_trust = match mag_yaw {
            Some(my) => {
                let unwrapped = match mag_unwrapped {
                    Some((prev, u)) => u + wrap(my - prev),
                    None => my,
                };
                mag_unwrapped = Some((my, unwrapped));
                if degraded.no_gyro {
                    true
                } else {
                    window.push(t, gyro_cum, unwrapped)
                }
            }
            None => false,
        };

        let state = AttitudeState {
            gravity_vec: g,
            roll,
            pitch,
            yaw: yaw.unwrap_or(0.0),
            last_update_time: t,
            mag_trust,
        };
        let new_yaw = match (yaw, mag_yaw) {
            (None, Some(my)) => my,
            (None, None) => wrap(gyro_delta),
            (Some(_), _) => estimate_yaw(&state, m.unwrap_or([0.0; 3]), gyro_delta),
        };
        yaw = Some(new_yaw);
        states.push(AttitudeState {
            yaw: new_yaw,
            ..state
        });
    }
    AttitudeTrack { states, degraded }
}

/// Walking direction from a window of horizontal linear acceleration given
/// as `[north, east]` samples.
pub fn motion_direction(window: &[[f64; 2]], phone_yaw: f64, min_ratio: f64) -> HeadingEstimate {
    let fallback = |ratio: f64| HeadingEstimate {
        phone_yaw,
        motion_heading: wrap(phone_yaw),
        pca_confidence: ratio,
        low_confidence: true,
    };
    if window.len() < MIN_PCA_SAMPLES {
        return fallback(1.0);
    }
    let n = window.len() as f64;
    let mn = window.iter().map(|v| v[0]).sum::<f64>() / n;
    let me = window.iter().map(|v| v[1]).sum::<f64>() / n;
    let (mut cnn, mut cee, mut cne) = (0.0, 0.0, 0.0);
    for v in window {
        let (dn, de) = (v[0] - mn, v[1] - me);
        cnn += dn * dn;
        cee += de * de;
        cne += dn * de;
    }
    let (cnn, cee, cne) = (cnn / n, cee / n, cne / n);
    let half_trace = 0.5 * (cnn + cee);
    let radius = (0.25 * (cnn - cee).powi(2) + cne * cne).sqrt();
    let (l1, l2) = (half_trace + radius, (half_trace - radius).max(0.0));
    let ratio = if !(l1 > 0.0) {
        1.0
    } else if l2 > 0.0 {
        l1 / l2
    } else {
        f64::MAX
    };
    if !(ratio >= min_ratio) || !(l1 > 0.0) {
        return fallback(ratio.max(1.0));
    }
    let axis = 0.5 * (2.0 * cne).atan2(cnn - cee);
    let heading = if wrap(axis - phone_yaw).abs() > std::f64::consts::FRAC_PI_2 {
        wrap(axis + std::f64::consts::PI)
    } else {
        wrap(axis)
    };
    HeadingEstimate {
        phone_yaw,
        motion_heading: heading,
        pca_confidence: ratio,
        low_confidence: false,
    }
}

/// Earth-frame horizontal linear acceleration `[north, east]` at every
/// accelerometer sample.
pub fn horizontal_linear_accel(accel: &[MotionSample], track: &AttitudeTrack) -> Vec<[f64; 2]> {
    accel
        .iter()
        .zip(&track.states)
        .map(|(a, s)| {
            let lin = [
                a.values[0] - STANDARD_GRAVITY * s.gravity_vec[0],
                a.values[1] - STANDARD_GRAVITY * s.gravity_vec[1],
                a.values[2] - STANDARD_GRAVITY * s.gravity_vec[2],
            ];
            let l = level(lin, s.roll, s.pitch);
            level_to_earth([l[0], l[1]], s.yaw)
        })
        .collect()
}

/// One heading per step, computed over the samples that span the step. A
/// low-confidence step reuses the previous step's heading (the first one
/// falls back to the phone yaw).
pub fn step_headings(
    steps: &[Step],
    accel: &[MotionSample],
    track: &AttitudeTrack,
    cfg: &HeadingConfig,
) -> Vec<HeadingEstimate> {
    let horizontal = horizontal_linear_accel(accel, track);
    let mut out: Vec<HeadingEstimate> = Vec::with_capacity(steps.len());
    for k in 0..steps.len() {
        let (lo, hi) = step_window(steps, k, accel.len());
        let phone_yaw = circular_mean(track.states[lo..=hi].iter().map(|s| s.yaw)).unwrap_or(0.0);
        let mut est = motion_direction(&horizontal[lo..=hi], phone_yaw, cfg.pca_min_ratio);
        if est.low_confidence {
            if let Some(prev) = out.last() {
                est.motion_heading = prev.motion_heading;
            }
        }
        out.push(est);
    }
    out
}
