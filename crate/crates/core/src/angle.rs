//! Angle helpers shared by the heading and turning-point code.

use std::f64::consts::{PI, TAU};

/// Wraps an angle into `[-π, π]`.
///
/// `π` maps to `π` and `-π` maps to `-π`, so the function is idempotent.
pub fn wrap(angle: f64) -> f64 {
    if (-PI..=PI).contains(&angle) {
        return angle;
    }
    let mut a = angle.rem_euclid(TAU);
    if a > PI {
        a -= TAU;
    }
    a
}

/// Absolute angular difference folded into `[0, π]`.
pub fn abs_diff(a: f64, b: f64) -> f64 {
    wrap(a - b).abs()
}

/// Circular mean of a set of angles; `None` when the input is empty or the
/// resultant vector vanishes.
pub fn circular_mean(angles: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut s, mut c, mut n) = (0.0, 0.0, 0usize);
    for a in angles {
        s += a.sin();
        c += a.cos();
        n += 1;
    }
    if n == 0 || (s == 0.0 && c == 0.0) {
        return None;
    }
    Some(s.atan2(c))
}
