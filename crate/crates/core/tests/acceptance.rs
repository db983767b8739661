//! Acceptance gate: one PASS/FAIL line per criterion at pinned tolerances.
//! Exits non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use trackforge::angle::wrap;
use trackforge::config::PipelineConfig;
use trackforge::evalkit::{floor_pairs, grid, score_floors, sweep, write_sweep_csv, EvalCase};
use trackforge::featurize::{build_chain_graph, detect_turning_points, TurningConfig};
use trackforge::floors::{dbscan_1d, jaccard};
use trackforge::heading::{motion_direction, roll_pitch, tilt_compensated_yaw, STANDARD_GRAVITY};
use trackforge::logio::{parse_log, serialize_log, Bssid, MotionSample, SensorLog};
use trackforge::pdr::integrate;
use trackforge::pipeline::{cases_from_corpus, run_pipeline};
use trackforge::stepdetect::{detect_steps, magnitude_series, Step, StepConfig};
use trackforge::stride::GaitModel;
use trackforge::synth::{default_corpus, generate, GroundTruth, ScriptSegment, WalkScript};

type Outcome = Result<String, String>;

fn corpus() -> Vec<(SensorLog, GroundTruth)> {
    default_corpus().iter().map(|s| generate(s).unwrap()).collect()
}

fn default_cases() -> Vec<EvalCase> {
    cases_from_corpus(corpus(), &PipelineConfig::default(), &GaitModel::default()).unwrap()
}

fn floor_accuracy() -> Outcome {
    let cases = default_cases();
    let (mut assigned, mut truth) = (Vec::new(), Vec::new());
    let mut floors = BTreeSet::new();
    for c in &cases {
        let (a, t) = floor_pairs(&c.run, &c.truth);
        assigned.extend(a);
        truth.extend(t);
        floors.extend(c.run.segments.iter().filter_map(|s| s.floor));
    }
    let acc = score_floors(&assigned, &truth);
    let msg = format!("accuracy {acc} over {} segments, {} floors", truth.len(), floors.len());
    if acc == 1.0 && floors.len() == 3 && !truth.is_empty() {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn turning_sweep() -> Outcome {
    let cases = default_cases();
    let eps = grid(0.6, 1.4, 0.1);
    let rows = sweep(&cases, &eps, &[4], &TurningConfig::default(), 2.0);
    let best = rows.iter().map(|r| r.f).fold(f64::NEG_INFINITY, f64::max);
    let argmax: Vec<f64> = rows.iter().filter(|r| r.f == best).map(|r| r.epsilon).collect();
    let at_one = rows.iter().find(|r| r.epsilon == 1.0).ok_or("no row for epsilon 1.0")?;
    let msg = format!(
        "max F {best:.4} at epsilon {argmax:?}; at (1.0, 4): P {:.4} R {:.4} F {:.4} ({} detected, {} true)",
        at_one.precision, at_one.recall, at_one.f, at_one.counts.detected, at_one.counts.truth
    );
    if at_one.f == best && at_one.precision == 1.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn random_steps(rng: &mut ChaCha8Rng, n: usize) -> Vec<Step> {
    let mut heading: f64 = rng.gen_range(-PI..PI);
    (0..n)
        .map(|k| {
            if rng.gen_bool(0.1) {
                heading += rng.gen_range(-2.5..2.5);
            }
            let t = 1.0 + 0.6 * k as f64;
            Step {
                peak_index: 0,
                valley_index: 0,
                peak_time: t,
                valley_time: t + 0.3,
                jerk: 1.0,
                pace: 0.6,
                features: None,
                gait: None,
                stride_m: rng.gen_range(0.3..1.2),
                heading_rad: heading + rng.gen_range(-0.3..0.3),
            }
        })
        .collect()
}

fn telescoping() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let log = SensorLog::default();
    let mut edges = 0usize;
    for case in 0..1000 {
        let n = rng.gen_range(2..120);
        let traj = integrate(&random_steps(&mut rng, n), &log);
        let pts = traj.positions();
        let v = detect_turning_points(&pts, &TurningConfig::default());
        let g = build_chain_graph(&traj, 0, &v, "t", 0, None).ok_or("no graph")?;
        for (j, e) in g.edges.iter().enumerate() {
            let (a, b) = (&g.vertices[j], &g.vertices[j + 1]);
            if e.dx.to_bits() != (b.x - a.x).to_bits() || e.dy.to_bits() != (b.y - a.y).to_bits() {
                return Err(format!("case {case} edge {j}: {e:?} vs ({}, {})", b.x - a.x, b.y - a.y));
            }
            edges += 1;
        }
        let (sx, sy) = g.edges.iter().fold((0.0, 0.0), |(x, y), e| (x + e.dx, y + e.dy));
        let (first, last) = (&g.vertices[0], g.vertices.last().unwrap());
        if sx != last.x - first.x || sy != last.y - first.y {
            return Err(format!("case {case}: edge sum ({sx}, {sy}) differs from displacement"));
        }
    }
    Ok(format!("1000 segments, {edges} edges bitwise equal"))
}

/// Textbook DBSCAN: visit points in input order and grow each cluster
/// from its first core point.
fn dbscan_oracle(values: &[f64], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = values.len();
    let neighbours = |i: usize| -> Vec<usize> { (0..n).filter(|&j| (values[j] - values[i]).abs() <= eps).collect() };
    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut seen = vec![false; n];
    let mut clusters = 0;
    for i in 0..n {
        if seen[i] {
            continue;
        }
        seen[i] = true;
        let start = neighbours(i);
        if start.len() < min_pts {
            continue;
        }
        label[i] = Some(clusters);
        let mut frontier = start;
        while let Some(j) = frontier.pop() {
            if label[j].is_none() {
                label[j] = Some(clusters);
            }
            if !seen[j] {
                seen[j] = true;
                let nj = neighbours(j);
                if nj.len() >= min_pts {
                    frontier.extend(nj);
                }
            }
        }
        clusters += 1;
    }
    let mut rename = Vec::new();
    label
        .iter()
        .map(|l| {
            l.map(|c| match rename.iter().position(|&r| r == c) {
                Some(k) => k,
                None => {
                    rename.push(c);
                    rename.len() - 1
                }
            })
        })
        .collect()
}

fn oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..200 {
        let n = rng.gen_range(0..=60);
        let centres: Vec<f64> = (0..rng.gen_range(1..5)).map(|_| 1000.0 + rng.gen_range(0.0..2.0)).collect();
        let values: Vec<f64> = (0..n)
            .map(|_| {
                let c = centres[rng.gen_range(0..centres.len())];
                // quantized so that exact-eps distances occur
                c + (rng.gen_range(-10..=10) as f64) * 0.025
            })
            .collect();
        let eps = [0.05, 0.1, 0.2][rng.gen_range(0..3)];
        let min_pts = rng.gen_range(1..8);
        let got = dbscan_1d(&values, eps, min_pts);
        let want = dbscan_oracle(&values, eps, min_pts);
        if got != want {
            return Err(format!("dbscan instance {case} (n {n}, eps {eps}, min_pts {min_pts}) differs"));
        }
    }
    for case in 0..1000 {
        let set = |rng: &mut ChaCha8Rng| -> Vec<Bssid> {
            (0..rng.gen_range(0..15)).map(|_| Bssid([2, 0, 0, 0, 0, rng.gen_range(0..20)])).collect()
        };
        let (a, b) = (set(&mut rng), set(&mut rng));
        let mut ua: Vec<Bssid> = Vec::new();
        for x in &a {
            if !ua.contains(x) {
                ua.push(*x);
            }
        }
        let mut ub: Vec<Bssid> = Vec::new();
        for x in &b {
            if !ub.contains(x) {
                ub.push(*x);
            }
        }
        let inter = ua.iter().filter(|x| ub.contains(x)).count();
        let union = ua.len() + ub.len() - inter;
        let want = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
        let got = jaccard(&a.iter().copied().collect(), &b.iter().copied().collect());
        if got != want {
            return Err(format!("jaccard pair {case}: {got} vs {want}"));
        }
    }
    Ok("200 DBSCAN instances and 1000 Jaccard pairs identical".into())
}

fn sinusoid_steps(sigma: f64, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).unwrap();
    let accel: Vec<MotionSample> = (0..1000)
        .map(|i| {
            let t = i as f64 / 100.0;
            let mut v = [0.0, 0.0, STANDARD_GRAVITY + 3.0 * (TAU * 2.0 * t).sin()];
            if sigma > 0.0 {
                for c in v.iter_mut() {
                    *c += noise.sample(&mut rng);
                }
            }
            MotionSample {
                app_timestamp: t,
                sensor_timestamp: t,
                values: v,
                accuracy: 3,
            }
        })
        .collect();
    let cfg = StepConfig::default();
    detect_steps(&magnitude_series(&accel, cfg.smooth_window), &cfg).len()
}

fn step_detection() -> Outcome {
    let clean = sinusoid_steps(0.0, 0);
    let noisy: Vec<usize> = (1..=5).map(|s| sinusoid_steps(0.5, s)).collect();
    let msg = format!("noiseless {clean}, sigma 0.5: {noisy:?}");
    if clean.abs_diff(20) <= 1 && noisy.iter().all(|&n| n.abs_diff(20) <= 2) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn steps_with(headings: &[f64], stride: f64) -> Vec<Step> {
    headings
        .iter()
        .enumerate()
        .map(|(k, &h)| {
            let t = 1.0 + 0.6 * k as f64;
            Step {
                peak_index: 0,
                valley_index: 0,
                peak_time: t,
                valley_time: t + 0.3,
                jerk: 1.0,
                pace: 0.6,
                features: None,
                gait: None,
                stride_m: stride,
                heading_rad: h,
            }
        })
        .collect()
}

fn pdr_closure() -> Outcome {
    let log = SensorLog::default();
    let square: Vec<f64> = (0..40).map(|k| (k / 10) as f64 * FRAC_PI_2).collect();
    let end = integrate(&steps_with(&square, 0.7), &log).points.last().unwrap().clone();
    let closure = end.x.hypot(end.y);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let h: Vec<f64> = (0..50).map(|_| rng.gen_range(-PI..PI)).collect();
        let offset = rng.gen_range(-PI..PI);
        let turned: Vec<f64> = h.iter().map(|x| x + offset).collect();
        let a = integrate(&steps_with(&h, 0.8), &log).positions();
        let b = integrate(&steps_with(&turned, 0.8), &log).positions();
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                let da = (a[i][0] - a[j][0]).hypot(a[i][1] - a[j][1]);
                let db = (b[i][0] - b[j][0]).hypot(b[i][1] - b[j][1]);
                worst = worst.max((da - db).abs());
            }
        }
    }
    let msg = format!("square closure {closure:.3e} m, worst pairwise distance change {worst:.3e} m");
    if closure <= 1e-9 && worst <= 1e-9 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn rx(a: f64, v: [f64; 3]) -> [f64; 3] {
    let (s, c) = a.sin_cos();
    [v[0], c * v[1] - s * v[2], s * v[1] + c * v[2]]
}

fn ry(a: f64, v: [f64; 3]) -> [f64; 3] {
    let (s, c) = a.sin_cos();
    [c * v[0] + s * v[2], v[1], -s * v[0] + c * v[2]]
}

/// A world vector `[north, east, up]` seen by a phone (x forward, y left,
/// z up) facing azimuth `yaw`, pitched nose-up by `pitch` and rolled by
/// `roll`.
fn phone_reading(world: [f64; 3], yaw: f64, pitch: f64, roll: f64) -> [f64; 3] {
    let (s, c) = yaw.sin_cos();
    let level = [world[0] * c + world[1] * s, world[0] * s - world[1] * c, world[2]];
    rx(-roll, ry(-pitch, level))
}

fn heading() -> Outcome {
    let field = [20.0, 0.0, -45.0];
    let mut worst_tilt: f64 = 0.0;
    for yi in 0..24 {
        let yaw = -PI + yi as f64 * TAU / 24.0 + 0.01;
        let flat = tilt_compensated_yaw(phone_reading(field, yaw, 0.0, 0.0), 0.0, 0.0).ok_or("flat")?;
        for deg in -30..=30 {
            let roll = (deg as f64).to_radians();
            for pdeg in [-30.0f64, -10.0, 0.0, 15.0, 30.0] {
                let pitch = pdeg.to_radians();
                let up = phone_reading([0.0, 0.0, STANDARD_GRAVITY], yaw, pitch, roll);
                let (r, p) = roll_pitch(up);
                let m = phone_reading(field, yaw, pitch, roll);
                let tilted = tilt_compensated_yaw(m, r, p).ok_or("tilted")?;
                worst_tilt = worst_tilt.max(wrap(tilted - flat).abs());
            }
        }
    }

    // one step window (0.6 s at 100 Hz) oscillating along the heading, with
    // additive noise of 10% of the amplitude on each axis
    let pca_error = |rng: &mut ChaCha8Rng, h: f64| -> Result<f64, String> {
        let amp = 2.0;
        let noise = Normal::new(0.0, 0.1 * amp).unwrap();
        let window: Vec<[f64; 2]> = (0..60)
            .map(|i| {
                let s = amp * (TAU * i as f64 / 60.0).sin();
                [s * h.cos() + noise.sample(&mut *rng), s * h.sin() + noise.sample(&mut *rng)]
            })
            .collect();
        let est = motion_direction(&window, h + rng.gen_range(-1.0..1.0), 1.2);
        if est.low_confidence {
            return Err(format!("PCA fell back for heading {h}"));
        }
        Ok(wrap(est.motion_heading - h).abs())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let scripted = pca_error(&mut rng, 0.7)?;
    let mut spread = Vec::new();
    for _ in 0..200 {
        let h = rng.gen_range(-PI..PI);
        spread.push(pca_error(&mut rng, h)?);
    }
    spread.sort_by(f64::total_cmp);
    let within = spread.iter().filter(|&&e| e <= 0.05).count();
    let msg = format!(
        "tilt error {worst_tilt:.3e} rad (roll/pitch to 30 deg); PCA error {scripted:.4} rad at heading 0.7 \
         (200 random headings: median {:.4}, max {:.4}, {within}/200 within 0.05)",
        spread[100], spread[199]
    );
    if worst_tilt <= 1e-6 && scripted <= 0.05 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn mutate(rng: &mut ChaCha8Rng, text: &[u8]) -> Vec<u8> {
    let mut out = text.to_vec();
    match rng.gen_range(0..7) {
        0 => {
            let i = rng.gen_range(0..out.len());
            out[i] = rng.gen();
        }
        1 => {
            let i = rng.gen_range(0..out.len());
            out.remove(i);
        }
        2 => {
            let i = rng.gen_range(0..out.len());
            let junk: Vec<u8> = (0..rng.gen_range(1..12)).map(|_| rng.gen()).collect();
            out.splice(i..i, junk);
        }
        3 => out.truncate(rng.gen_range(0..out.len())),
        4 => {
            let i = rng.gen_range(0..out.len());
            let piece: &[u8] = [&b";;;"[..], b"\t", b"NaN", b"-inf", b"1e999", b"\n\n", b"::", b";9999999999999999999"]
                [rng.gen_range(0..8)];
            out.splice(i..i, piece.iter().copied());
        }
        5 => {
            let lines: Vec<&[u8]> = text.split(|&b| b == b'\n').collect();
            let a = rng.gen_range(0..lines.len());
            let b = rng.gen_range(0..lines.len());
            let mut v: Vec<&[u8]> = lines.clone();
            v.swap(a, b);
            out = v.join(&b'\n');
        }
        _ => {
            let i = rng.gen_range(0..out.len());
            if out[i] == b';' {
                out[i] = b',';
            } else {
                out.insert(i, b';');
            }
        }
    }
    out
}

fn small_script() -> WalkScript {
    WalkScript {
        source_id: "fuzz".into(),
        seed: 9,
        segments: vec![ScriptSegment {
            floor: 1,
            gait: trackforge::stride::Gait::Normal,
            heading: 0.4,
            step_count: 2,
        }],
        ..default_corpus()[0].clone()
    }
}

fn parser() -> Outcome {
    let mut logs = 0;
    for (log, _) in corpus() {
        let text = serialize_log(&log).map_err(|e| e.to_string())?;
        let back = parse_log(text.as_bytes(), &log.source_id).map_err(|e| e.to_string())?;
        if back != log {
            return Err(format!("{} does not round-trip", log.source_id));
        }
        if serialize_log(&back).map_err(|e| e.to_string())? != text {
            return Err(format!("{} re-serializes differently", log.source_id));
        }
        logs += 1;
    }

    let (log, _) = generate(&small_script()).map_err(|e| e.to_string())?;
    let full = serialize_log(&log).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = full.lines().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut ok, mut errors, mut panics) = (0, 0, 0);
    for _ in 0..10_000 {
        let start = rng.gen_range(0..lines.len().saturating_sub(40).max(1));
        let sample = lines[start..(start + 40).min(lines.len())].join("\n");
        let bytes = mutate(&mut rng, sample.as_bytes());
        match catch_unwind(|| parse_log(&bytes, "fuzz").map(|_| ())) {
            Ok(Ok(())) => ok += 1,
            Ok(Err(_)) => errors += 1,
            Err(_) => panics += 1,
        }
    }
    let msg = format!(
        "{logs} logs round-trip; 10000 mutations: {ok} parsed, {errors} structured errors, {panics} panics"
    );
    if panics == 0 && logs == 3 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn determinism() -> Outcome {
    let run_once = || -> Result<(Vec<Vec<u8>>, Vec<u8>), String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let input = dir.path().join("in");
        std::fs::create_dir(&input).map_err(|e| e.to_string())?;
        for script in default_corpus() {
            let (log, truth) = generate(&script).map_err(|e| e.to_string())?;
            std::fs::write(input.join(format!("{}.tsl", script.source_id)), serialize_log(&log).unwrap())
                .map_err(|e| e.to_string())?;
            std::fs::write(
                input.join(format!("{}.truth.json", script.source_id)),
                serde_json::to_vec(&truth).unwrap(),
            )
            .map_err(|e| e.to_string())?;
        }
        let out = dir.path().join("out");
        let cfg = PipelineConfig::default();
        run_pipeline(&input, &out, &cfg).map_err(|e| e.to_string())?;
        let mut docs = Vec::new();
        for script in default_corpus() {
            docs.push(std::fs::read(out.join(format!("{}.graphs.json", script.source_id))).map_err(|e| e.to_string())?);
        }
        docs.push(std::fs::read(out.join("report.json")).map_err(|e| e.to_string())?);
        let cases = trackforge::pipeline::prepare_cases(&input, &cfg).map_err(|e| e.to_string())?;
        let rows = sweep(&cases, &grid(0.6, 1.4, 0.1), &[2, 3, 4, 5, 6], &cfg.turn, 2.0);
        let mut table = Vec::new();
        write_sweep_csv(&rows, &mut table).unwrap();
        Ok((docs, table))
    };
    let (a_docs, a_table) = run_once()?;
    let (b_docs, b_table) = run_once()?;
    let bytes: usize = a_docs.iter().map(Vec::len).sum();
    let msg = format!("{} documents ({bytes} bytes) and a {}-byte sweep table", a_docs.len(), a_table.len());
    if a_docs == b_docs && a_table == b_table {
        Ok(msg)
    } else {
        Err(format!("outputs differ: {msg}"))
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 floor classification accuracy = 1.0 on the default corpus", floor_accuracy),
        ("2 turning sweep: F maximal at epsilon 1.0, precision 1.0 at (1.0, 4)", turning_sweep),
        ("3 chain-graph edges telescope bitwise over 1000 segments", telescoping),
        ("4 DBSCAN and Jaccard match brute-force oracles", oracles),
        ("5 step count 20 +/- 1 noiseless, +/- 10% at sigma 0.5", step_detection),
        ("6 PDR square closure and rotation invariance within 1e-9 m", pdr_closure),
        ("7 tilt-compensated yaw within 1e-6 rad, PCA within 0.05 rad", heading),
        ("8 parser round-trip and mutation fuzzing", parser),
        ("9 identical outputs across two runs", determinism),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let text = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {text}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    let _ = std::panic::take_hook();
    println!("{} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
