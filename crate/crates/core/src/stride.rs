//! Gait classification and stride-length lookup.
//!
//! Each step is described by four features computed over the magnitude
//! samples it spans. A two-level linear classifier first separates `slow`
//! from `{normal, fast}` and then `normal` from `fast`; the stride length is
//! read from a per-gait table. A score of exactly zero goes to the side with
//! the longer stride.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stepdetect::MagnitudePoint;

pub const FEATURE_COUNT: usize = 4;

#[derive(Debug, Error)]
pub enum StrideError {
    #[error("invalid gait model: {0}")]
    Model(String),
    #[error("gait model file {path}: {message}")]
    ModelFile { path: String, message: String },
    #[error("cannot train gait model: {0}")]
    Training(String),
    #[error("gait labels: {0}")]
    Labels(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gait {
    Slow,
    Normal,
    Fast,
}

impl Gait {
    pub const ALL: [Gait; 3] = [Gait::Slow, Gait::Normal, Gait::Fast];
}

impl fmt::Display for Gait {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gait::Slow => "slow",
            Gait::Normal => "normal",
            Gait::Fast => "fast",
        })
    }
}

impl FromStr for Gait {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "slow" => Ok(Gait::Slow),
            "normal" => Ok(Gait::Normal),
            "fast" => Ok(Gait::Fast),
            other => Err(format!("unknown gait {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrideFeatures {
    pub stride_duration: f64,
    pub accel_variance: f64,
    pub accel_peak: f64,
    pub accel_rms: f64,
}

impl StrideFeatures {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.stride_duration,
            self.accel_variance,
            self.accel_peak,
            self.accel_rms,
        ]
    }
}

/// Features over the magnitude samples of one step. Panics on an empty
/// window.
pub fn extract_features(window: &[MagnitudePoint]) -> StrideFeatures {
    assert!(!window.is_empty(), "feature window must not be empty");
    let n = window.len() as f64;
    let mean = window.iter().map(|p| p.mag).sum::<f64>() / n;
    let variance = window.iter().map(|p| (p.mag - mean).powi(2)).sum::<f64>() / n;
    let peak = window.iter().map(|p| p.mag).fold(f64::NEG_INFINITY, f64::max);
    let rms = (window.iter().map(|p| p.mag * p.mag).sum::<f64>() / n).sqrt();
    StrideFeatures {
        stride_duration: window[window.len() - 1].t - window[0].t,
        accel_variance: variance,
        accel_peak: peak,
        accel_rms: rms,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearSeparator {
    pub weights: [f64; FEATURE_COUNT],
    pub bias: f64,
}

impl LinearSeparator {
    pub fn score(&self, x: &[f64; FEATURE_COUNT]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    fn constant(positive: bool) -> Self {
        Self {
            weights: [0.0; FEATURE_COUNT],
            bias: if positive { 1.0 } else { -1.0 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrideTable {
    pub slow: f64,
    pub normal: f64,
    pub fast: f64,
}

impl Default for StrideTable {
    fn default() -> Self {
        Self {
            slow: 0.50,
            normal: 0.70,
            fast: 0.90,
        }
    }
}

impl StrideTable {
    pub fn get(&self, gait: Gait) -> f64 {
        match gait {
            Gait::Slow => self.slow,
            Gait::Normal => self.normal,
            Gait::Fast => self.fast,
        }
    }
}

/// `l1` separates slow (negative) from normal/fast (positive); `l2`
/// separates normal (negative) from fast (positive).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaitModel {
    pub l1: LinearSeparator,
    pub l2: LinearSeparator,
    pub table: StrideTable,
}

impl Default for GaitModel {
    /// Cadence-only separators: steps longer than 0.75 s are slow, shorter
    /// than 0.5 s are fast.
    fn default() -> Self {
        Self {
            l1: LinearSeparator {
                weights: [-1.0, 0.0, 0.0, 0.0],
                bias: 0.75,
            },
            l2: LinearSeparator {
                weights: [-1.0, 0.0, 0.0, 0.0],
                bias: 0.5,
            },
            table: StrideTable::default(),
        }
    }
}

impl GaitModel {
    pub fn validate(&self) -> Result<(), StrideError> {
        for (name, sep) in [("l1", &self.l1), ("l2", &self.l2)] {
            if !sep.bias.is_finite() || sep.weights.iter().any(|w| !w.is_finite()) {
                return Err(StrideError::Model(format!("{name} has non-finite coefficients")));
            }
        }
        for g in Gait::ALL {
            let v = self.table.get(g);
            if !(v > 0.0 && v <= 2.0) {
                return Err(StrideError::Model(format!(
                    "stride for {g} must be in (0, 2] m, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, StrideError> {
        let model: GaitModel = toml::from_str(text).map_err(|e| StrideError::Model(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("gait model is always representable as TOML")
    }

    pub fn load(path: &Path) -> Result<Self, StrideError> {
        let text = std::fs::read_to_string(path).map_err(|e| StrideError::ModelFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text).map_err(|e| StrideError::ModelFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

pub fn classify_gait(f: &StrideFeatures, model: &GaitModel) -> Gait {
    let x = f.to_array();
    if model.l1.score(&x) < 0.0 {
        Gait::Slow
    } else if model.l2.score(&x) < 0.0 {
        Gait::Normal
    } else {
        Gait::Fast
    }
}

pub fn stride_length(gait: Gait, model: &GaitModel) -> f64 {
    model.table.get(gait)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainReport {
    pub samples: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    /// Hinge-loss penalty of the soft-margin SVM.
    pub c: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            c: 10.0,
            max_epochs: 2000,
            tolerance: 1e-6,
            seed: 7,
        }
    }
}

/// Fits both levels with a soft-margin linear SVM (dual coordinate descent on
/// standardized features) and folds the standardization back into the
/// weights, so the stored model works on raw features.
pub fn train_gait_model(
    labeled: &[(StrideFeatures, Gait)],
    table: StrideTable,
    opts: &TrainOptions,
) -> Result<(GaitModel, TrainReport), StrideError> {
    let mut present: Vec<Gait> = labeled.iter().map(|(_, g)| *g).collect();
    present.sort();
    present.dedup();
    if present.len() < 2 {
        return Err(StrideError::Training(format!(
            "need at least two gait classes, found {}",
            present.len()
        )));
    }
    if labeled
        .iter()
        .any(|(f, _)| f.to_array().iter().any(|v| !v.is_finite()))
    {
        return Err(StrideError::Training("non-finite feature value".into()));
    }

    let l1_set: Vec<([f64; FEATURE_COUNT], f64)> = labeled
        .iter()
        .map(|(f, g)| (f.to_array(), if *g == Gait::Slow { -1.0 } else { 1.0 }))
        .collect();
    let l2_set: Vec<([f64; FEATURE_COUNT], f64)> = labeled
        .iter()
        .filter(|(_, g)| *g != Gait::Slow)
        .map(|(f, g)| (f.to_array(), if *g == Gait::Fast { 1.0 } else { -1.0 }))
        .collect();

    let model = GaitModel {
        l1: fit_level(&l1_set, opts, 0),
        l2: fit_level(&l2_set, opts, 1),
        table,
    };
    model.validate()?;
    let correct = labeled
        .iter()
        .filter(|(f, g)| classify_gait(f, &model) == *g)
        .count();
    Ok((
        model,
        TrainReport {
            samples: labeled.len(),
            accuracy: correct as f64 / labeled.len() as f64,
        },
    ))
}

fn fit_level(set: &[([f64; FEATURE_COUNT], f64)], opts: &TrainOptions, level: u64) -> LinearSeparator {
    let positives = set.iter().filter(|(_, y)| *y > 0.0).count();
    if positives == set.len() || positives == 0 {
        // one class (or nothing) reaches this level: always answer that class
        return LinearSeparator::constant(positives > 0 || set.is_empty());
    }

    let n = set.len() as f64;
    let mut mean = [0.0; FEATURE_COUNT];
    let mut std = [0.0; FEATURE_COUNT];
    for (x, _) in set {
        for k in 0..FEATURE_COUNT {
            mean[k] += x[k] / n;
        }
    }
    for (x, _) in set {
        for k in 0..FEATURE_COUNT {
            std[k] += (x[k] - mean[k]).powi(2) / n;
        }
    }
    for s in std.iter_mut() {
        *s = s.sqrt();
    }
    const DIM: usize = FEATURE_COUNT + 1;
    let scaled: Vec<([f64; DIM], f64)> = set
        .iter()
        .map(|(x, y)| {
            let mut z = [0.0; DIM];
            for k in 0..FEATURE_COUNT {
                z[k] = if std[k] > 0.0 { (x[k] - mean[k]) / std[k] } else { 0.0 };
            }
            z[FEATURE_COUNT] = 1.0;
            (z, *y)
        })
        .collect();

    let mut w = [0.0; DIM];
    let mut alpha = vec![0.0; scaled.len()];
    let mut order: Vec<usize> = (0..scaled.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(level));
    for _ in 0..opts.max_epochs {
        order.shuffle(&mut rng);
        let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
        for &i in &order {
            let (x, y) = &scaled[i];
            let q: f64 = x.iter().map(|v| v * v).sum();
            let g = y * dot(&w, x) - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == opts.c {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg.abs() > 1e-12 {
                let old = alpha[i];
                alpha[i] = (old - g / q).clamp(0.0, opts.c);
                let step = (alpha[i] - old) * y;
                for k in 0..DIM {
                    w[k] += step * x[k];
                }
            }
        }
        if pg_max - pg_min < opts.tolerance {
            break;
        }
    }

    let mut weights = [0.0; FEATURE_COUNT];
    let mut bias = w[FEATURE_COUNT];
    for k in 0..FEATURE_COUNT {
        if std[k] > 0.0 {
            weights[k] = w[k] / std[k];
            bias -= w[k] * mean[k] / std[k];
        }
    }
    LinearSeparator { weights, bias }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    stride_duration: f64,
    accel_variance: f64,
    accel_peak: f64,
    accel_rms: f64,
    gait: Gait,
}

/// Reads a labeled-feature CSV with header
/// `stride_duration,accel_variance,accel_peak,accel_rms,gait`.
pub fn read_labels<R: std::io::Read>(reader: R) -> Result<Vec<(StrideFeatures, Gait)>, StrideError> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize::<LabelRow>()
        .enumerate()
        .map(|(i, row)| {
            let row = row.map_err(|e| StrideError::Labels(format!("row {}: {e}", i + 1)))?;
            Ok((
                StrideFeatures {
                    stride_duration: row.stride_duration,
                    accel_variance: row.accel_variance,
                    accel_peak: row.accel_peak,
                    accel_rms: row.accel_rms,
                },
                row.gait,
            ))
        })
        .collect()
}

pub fn write_labels<W: std::io::Write>(
    labeled: &[(StrideFeatures, Gait)],
    writer: W,
) -> Result<(), StrideError> {
    let mut wtr = csv::Writer::from_writer(writer);
    for (f, g) in labeled {
        wtr.serialize(LabelRow {
            stride_duration: f.stride_duration,
            accel_variance: f.accel_variance,
            accel_peak: f.accel_peak,
            accel_rms: f.accel_rms,
            gait: *g,
        })
        .map_err(|e| StrideError::Labels(e.to_string()))?;
    }
    wtr.flush().map_err(|e| StrideError::Labels(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::PI;

    fn pts(values: &[(f64, f64)]) -> Vec<MagnitudePoint> {
        values.iter().map(|&(t, mag)| MagnitudePoint { t, mag }).collect()
    }

    #[test]
    fn constant_window_features() {
        let w: Vec<_> = (0..=50).map(|i| MagnitudePoint { t: 3.0 + i as f64 * 0.01, mag: 9.81 }).collect();
        let f = extract_features(&w);
        assert!((f.stride_duration - 0.5).abs() < 1e-12);
        assert!(f.accel_variance.abs() < 1e-20);
        assert_eq!(f.accel_peak, 9.81);
        assert!((f.accel_rms - 9.81).abs() < 1e-12);
    }

    #[test]
    fn two_point_window_features() {
        let f = extract_features(&pts(&[(0.0, 8.0), (1.0, 12.0)]));
        assert_eq!(f.stride_duration, 1.0);
        assert_eq!(f.accel_peak, 12.0);
        assert_eq!(f.accel_variance, 4.0);
        assert_eq!(f.accel_rms, ((64.0 + 144.0) / 2.0f64).sqrt());
    }

    #[test]
    fn sinusoid_variance_is_half_amplitude_squared() {
        let amp = 2.5;
        let w: Vec<_> = (0..=60)
            .map(|i| {
                let t = i as f64 / 100.0;
                MagnitudePoint { t, mag: 9.81 + amp * (2.0 * PI * t / 0.6).cos() }
            })
            .collect();
        let f = extract_features(&w);
        let expected = amp * amp / 2.0;
        assert!((f.accel_variance - expected).abs() / expected < 0.05, "{}", f.accel_variance);
    }

    #[test]
    fn features_are_time_shift_invariant() {
        let a = pts(&[(0.0, 8.0), (0.3, 10.0), (0.6, 12.0)]);
        let b: Vec<_> = a.iter().map(|p| MagnitudePoint { t: p.t + 1000.0, mag: p.mag }).collect();
        let (fa, fb) = (extract_features(&a), extract_features(&b));
        assert!((fa.stride_duration - fb.stride_duration).abs() < 1e-9);
        assert_eq!(fa.accel_variance, fb.accel_variance);
        assert_eq!(fa.accel_rms, fb.accel_rms);
    }

    #[test]
    fn zero_score_goes_to_longer_stride_side() {
        let model = GaitModel {
            l1: LinearSeparator { weights: [0.0; 4], bias: 0.0 },
            l2: LinearSeparator { weights: [0.0; 4], bias: -1.0 },
            table: StrideTable::default(),
        };
        let f = StrideFeatures { stride_duration: 0.5, accel_variance: 1.0, accel_peak: 11.0, accel_rms: 9.9 };
        assert_eq!(classify_gait(&f, &model), Gait::Normal);
        let model = GaitModel { l2: LinearSeparator { weights: [0.0; 4], bias: 0.0 }, ..model };
        assert_eq!(classify_gait(&f, &model), Gait::Fast);
    }

    #[test]
    fn default_table_lookup() {
        let m = GaitModel::default();
        assert_eq!(stride_length(Gait::Slow, &m), 0.50);
        assert_eq!(stride_length(Gait::Normal, &m), 0.70);
        assert_eq!(stride_length(Gait::Fast, &m), 0.90);
    }

    #[test]
    fn default_model_separates_cadences() {
        let m = GaitModel::default();
        let f = |d, v| StrideFeatures { stride_duration: d, accel_variance: v, accel_peak: 12.0, accel_rms: 10.0 };
        assert_eq!(classify_gait(&f(0.9, 1.5), &m), Gait::Slow);
        assert_eq!(classify_gait(&f(0.6, 3.0), &m), Gait::Normal);
        assert_eq!(classify_gait(&f(0.4, 4.5), &m), Gait::Fast);
    }

    fn cluster(rng: &mut ChaCha8Rng, center: [f64; 4], spread: f64, n: usize, g: Gait) -> Vec<(StrideFeatures, Gait)> {
        (0..n)
            .map(|_| {
                let mut v = center;
                for x in v.iter_mut() {
                    *x += rng.gen_range(-spread..spread);
                }
                (StrideFeatures { stride_duration: v[0], accel_variance: v[1], accel_peak: v[2], accel_rms: v[3] }, g)
            })
            .collect()
    }

    #[test]
    fn separable_two_cluster_training_is_perfect() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut data = cluster(&mut rng, [0.9, 1.5, 11.0, 9.9], 0.05, 40, Gait::Slow);
        data.extend(cluster(&mut rng, [0.4, 4.5, 13.5, 10.2], 0.05, 40, Gait::Fast));
        let (model, report) = train_gait_model(&data, StrideTable::default(), &TrainOptions::default()).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.samples, 80);
        model.validate().unwrap();
    }

    #[test]
    fn conflicting_labels_do_not_crash() {
        let f = StrideFeatures { stride_duration: 0.6, accel_variance: 2.0, accel_peak: 12.0, accel_rms: 10.0 };
        let data = vec![(f, Gait::Slow), (f, Gait::Normal)];
        let (_, report) = train_gait_model(&data, StrideTable::default(), &TrainOptions::default()).unwrap();
        assert_eq!(report.accuracy, 0.5);
    }

    #[test]
    fn single_class_is_an_error() {
        let f = StrideFeatures { stride_duration: 0.6, accel_variance: 2.0, accel_peak: 12.0, accel_rms: 10.0 };
        assert!(matches!(
            train_gait_model(&[(f, Gait::Fast)], StrideTable::default(), &TrainOptions::default()),
            Err(StrideError::Training(_))
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut data = cluster(&mut rng, [0.9, 1.5, 11.0, 9.9], 0.2, 30, Gait::Slow);
        data.extend(cluster(&mut rng, [0.6, 3.0, 12.3, 10.0], 0.2, 30, Gait::Normal));
        data.extend(cluster(&mut rng, [0.4, 4.5, 13.5, 10.2], 0.2, 30, Gait::Fast));
        let a = train_gait_model(&data, StrideTable::default(), &TrainOptions::default()).unwrap();
        let b = train_gait_model(&data, StrideTable::default(), &TrainOptions::default()).unwrap();
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn model_file_round_trip_and_validation() {
        let m = GaitModel::default();
        let text = m.to_toml_string();
        assert!(text.contains("[l1]") && text.contains("[table]"));
        assert_eq!(GaitModel::from_toml_str(&text).unwrap(), m);
        let bad = text.replace("fast = 0.9", "fast = -0.9");
        assert!(GaitModel::from_toml_str(&bad).is_err());
    }

    #[test]
    fn labels_csv_round_trip() {
        let f = StrideFeatures { stride_duration: 0.6, accel_variance: 2.0, accel_peak: 12.0, accel_rms: 10.0 };
        let mut buf = Vec::new();
        write_labels(&[(f, Gait::Normal)], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("stride_duration,accel_variance,accel_peak,accel_rms,gait\n"));
        assert_eq!(read_labels(buf.as_slice()).unwrap(), vec![(f, Gait::Normal)]);
    }

    proptest! {
        #[test]
        fn classification_is_invariant_to_positive_scaling(
            k in 0.01f64..100.0,
            w1 in proptest::array::uniform4(-3.0f64..3.0), b1 in -3.0f64..3.0,
            w2 in proptest::array::uniform4(-3.0f64..3.0), b2 in -3.0f64..3.0,
            x in proptest::array::uniform4(0.0f64..15.0),
        ) {
            let m = GaitModel {
                l1: LinearSeparator { weights: w1, bias: b1 },
                l2: LinearSeparator { weights: w2, bias: b2 },
                table: StrideTable::default(),
            };
            let scale = |s: LinearSeparator| LinearSeparator { weights: s.weights.map(|w| w * k), bias: s.bias * k };
            let scaled = GaitModel { l1: scale(m.l1), l2: scale(m.l2), ..m };
            let f = StrideFeatures { stride_duration: x[0], accel_variance: x[1], accel_peak: x[2], accel_rms: x[3] };
            let (s1, s2) = (m.l1.score(&f.to_array()), m.l2.score(&f.to_array()));
            // rounding can flip a sign only when the score is essentially zero
            prop_assume!(s1.abs() > 1e-9 && s2.abs() > 1e-9);
            prop_assert_eq!(classify_gait(&f, &m), classify_gait(&f, &scaled));
            let s = stride_length(classify_gait(&f, &m), &m);
            prop_assert!(s > 0.0 && s <= 2.0);
        }
    }
}
