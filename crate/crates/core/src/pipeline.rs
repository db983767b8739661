//! End-to-end processing: sensor logs in, chain graphs and a run report out.
//!
//! Each log goes through step detection, gait/stride estimation, heading
//! estimation, dead reckoning and per-floor segmentation independently (in
//! parallel). Floor numbering then looks at the segments of all logs at
//! once, after which every segment is featurized.

use std::ops::Range;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{FloorCount, PipelineConfig};
use crate::error::{Error, Result};
use crate::evalkit::{floor_pairs, score_floors, EvalCase, TurningCounts};
use crate::featurize::{featurize_segment, ChainGraph};
use crate::floors::{cluster_floors, segment_trajectory, FloorAssignment, TrajectorySegment};
use crate::heading::{step_headings, track_gravity, DegradedMode};
use crate::logio::{parse_log, write_chain_graphs, SensorLog};
use crate::pdr::{integrate, PdrTrajectory};
use crate::stepdetect::{detect_steps, magnitude_series, step_window, Step};
use crate::stride::{classify_gait, extract_features, stride_length, GaitModel};
use crate::synth::GroundTruth;

pub const LOG_EXTENSION: &str = "tsl";

/// Everything computed for one log before floor numbering.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRun {
    pub source_id: String,
    pub steps: Vec<Step>,
    pub trajectory: PdrTrajectory,
    pub segments: Vec<TrajectorySegment>,
    pub gaps: Vec<Range<usize>>,
    pub degraded: DegradedMode,
    /// Steps whose PCA direction was ambiguous and reused the previous heading.
    pub heading_fallbacks: usize,
}

pub fn process_log(log: &SensorLog, cfg: &PipelineConfig, model: &GaitModel) -> Result<TrajectoryRun> {
    let mag = magnitude_series(&log.accel, cfg.step.smooth_window);
    let mut steps = detect_steps(&mag, &cfg.step);

    for k in 0..steps.len() {
        let (lo, hi) = step_window(&steps, k, mag.len());
        let features = extract_features(&mag[lo..=hi]);
        let gait = classify_gait(&features, model);
        steps[k].features = Some(features);
        steps[k].gait = Some(gait);
        steps[k].stride_m = stride_length(gait, model);
    }

    let track = track_gravity(&log.accel, &log.gyro, &log.magn, &cfg.heading);
    if track.degraded.no_gyro || track.degraded.no_magn {
        log::warn!(
            "{}: degraded heading (gyroscope missing: {}, magnetometer missing: {})",
            log.source_id,
            track.degraded.no_gyro,
            track.degraded.no_magn
        );
    }
    let headings = step_headings(&steps, &log.accel, &track, &cfg.heading);
    let mut heading_fallbacks = 0;
    for (s, h) in steps.iter_mut().zip(&headings) {
        s.heading_rad = h.motion_heading;
        heading_fallbacks += h.low_confidence as usize;
    }

    let trajectory = integrate(&steps, log);
    let seg = segment_trajectory(&trajectory, &cfg.floor.clustering())?;
    log::info!(
        "{}: {} steps, {} segments, {} gaps",
        log.source_id,
        steps.len(),
        seg.segments.len(),
        seg.gaps.len()
    );
    Ok(TrajectoryRun {
        source_id: log.source_id.clone(),
        steps,
        trajectory,
        segments: seg.segments,
        gaps: seg.gaps,
        degraded: track.degraded,
        heading_fallbacks,
    })
}

/// Numbers floors across all runs and writes the floor into every segment.
pub fn assign_floors(runs: &mut [TrajectoryRun], cfg: &PipelineConfig) -> Result<FloorAssignment> {
    let all: Vec<TrajectorySegment> = runs.iter().flat_map(|r| r.segments.iter().cloned()).collect();
    let target = match cfg.floor.floors {
        FloorCount::Auto => None,
        FloorCount::Fixed(k) => Some(k),
    };
    let assignment = cluster_floors(&all, cfg.floor.cut, target)?;
    let mut i = 0;
    for run in runs.iter_mut() {
        for seg in run.segments.iter_mut() {
            seg.floor = Some(assignment.segment_floor[i]);
            i += 1;
        }
    }
    Ok(assignment)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunGraphs {
    pub graphs: Vec<ChainGraph>,
    pub dropped: usize,
}

pub fn featurize_run(run: &TrajectoryRun, cfg: &PipelineConfig) -> RunGraphs {
    let mut out = RunGraphs::default();
    for (s, seg) in run.segments.iter().enumerate() {
        let g = featurize_segment(&run.trajectory, seg, s, &cfg.turn);
        out.graphs.extend(g.graphs);
        out.dropped += g.dropped;
    }
    out
}

/// In-memory result for a set of already parsed logs.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub runs: Vec<TrajectoryRun>,
    pub assignment: FloorAssignment,
    pub graphs: Vec<RunGraphs>,
}

pub fn run_logs(logs: &[SensorLog], cfg: &PipelineConfig, model: &GaitModel) -> Result<PipelineOutput> {
    let mut runs = logs
        .par_iter()
        .map(|log| process_log(log, cfg, model))
        .collect::<Result<Vec<_>>>()?;
    let assignment = assign_floors(&mut runs, cfg)?;
    let graphs = runs.par_iter().map(|r| featurize_run(r, cfg)).collect();
    Ok(PipelineOutput {
        runs,
        assignment,
        graphs,
    })
}

pub fn load_model(cfg: &PipelineConfig) -> Result<GaitModel> {
    match &cfg.gait_model {
        Some(p) => Ok(GaitModel::load(p)?),
        None => Ok(GaitModel::default()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileReport {
    pub file: String,
    pub source: String,
    pub error: Option<String>,
    pub steps: usize,
    pub segments: usize,
    pub gaps: usize,
    pub graphs: usize,
    pub dropped_subtrajectories: usize,
    pub heading_fallbacks: usize,
    pub no_gyro: bool,
    pub no_magn: bool,
    pub floors_visited: Vec<u32>,
    pub floor_accuracy: Option<f64>,
    pub turning: Option<TurningCounts>,
}

impl FileReport {
    fn failed(file: String, error: String) -> Self {
        Self {
            source: file.clone(),
            file,
            error: Some(error),
            steps: 0,
            segments: 0,
            gaps: 0,
            graphs: 0,
            dropped_subtrajectories: 0,
            heading_fallbacks: 0,
            no_gyro: false,
            no_magn: false,
            floors_visited: vec![],
            floor_accuracy: None,
            turning: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Totals {
    pub files: usize,
    pub failed: usize,
    pub steps: usize,
    pub segments: usize,
    pub floors: usize,
    pub graphs: usize,
    pub dropped_subtrajectories: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub files: Vec<FileReport>,
    pub totals: Totals,
    /// Mean pressure per floor, floor 1 first.
    pub floor_pressures: Vec<Option<f64>>,
    /// Over all segments of logs that came with ground truth.
    pub floor_accuracy: Option<f64>,
    pub turning: Option<TurningCounts>,
    pub turning_precision: Option<f64>,
    pub turning_recall: Option<f64>,
    pub turning_f: Option<f64>,
}

/// Sorted `*.tsl` files of a directory.
pub fn list_logs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == LOG_EXTENSION))
        .collect();
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

pub fn truth_path(log_path: &Path) -> PathBuf {
    log_path.with_file_name(format!("{}.truth.json", stem(log_path)))
}

pub fn read_truth(path: &Path) -> Result<GroundTruth> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// A log that parsed, with its optional ground truth.
pub struct LoadedLog {
    pub path: PathBuf,
    pub log: SensorLog,
    pub truth: Option<GroundTruth>,
}

/// Reads every log of a directory. Unreadable files come back as errors
/// in the second list; having no readable log at all is fatal.
pub fn load_dir(dir: &Path) -> Result<(Vec<LoadedLog>, Vec<FileReport>)> {
    let files = list_logs(dir)?;
    let results: Vec<std::result::Result<LoadedLog, FileReport>> = files
        .par_iter()
        .map(|path| {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            let bytes = std::fs::read(path).map_err(|e| FileReport::failed(name.clone(), e.to_string()))?;
            let log = parse_log(&bytes, &stem(path)).map_err(|e| FileReport::failed(name.clone(), e.to_string()))?;
            if log.accel.is_empty() {
                return Err(FileReport::failed(name, "no accelerometer samples".into()));
            }
            let tp = truth_path(path);
            let truth = if tp.is_file() {
                match read_truth(&tp) {
                    Ok(t) => Some(t),
                    Err(e) => {
                        log::warn!("{}: ignoring unreadable ground truth: {e}", tp.display());
                        None
                    }
                }
            } else {
                None
            };
            Ok(LoadedLog {
                path: path.clone(),
                log,
                truth,
            })
        })
        .collect();
    let mut loaded = Vec::new();
    let mut failed = Vec::new();
    for r in results {
        match r {
            Ok(l) => loaded.push(l),
            Err(f) => {
                log::error!("{}: {}", f.file, f.error.as_deref().unwrap_or(""));
                failed.push(f);
            }
        }
    }
    if loaded.is_empty() {
        return Err(Error::NoInput(dir.display().to_string()));
    }
    Ok((loaded, failed))
}

/// Runs the whole pipeline on a directory and writes
/// `<stem>.graphs.json` per log plus `report.json` into `output`.
pub fn run_pipeline(input: &Path, output: &Path, cfg: &PipelineConfig) -> Result<RunReport> {
    let model = load_model(cfg)?;
    let (loaded, failed) = load_dir(input)?;

    let processed: Vec<(usize, Result<TrajectoryRun>)> = loaded
        .par_iter()
        .enumerate()
        .map(|(i, l)| (i, process_log(&l.log, cfg, &model)))
        .collect();
    let mut reports = failed;
    let mut ok: Vec<(usize, TrajectoryRun)> = Vec::new();
    for (i, r) in processed {
        match r {
            Ok(run) => ok.push((i, run)),
            Err(e) => {
                let name = loaded[i].path.file_name().unwrap().to_string_lossy().into_owned();
                log::error!("{name}: {e}");
                reports.push(FileReport::failed(name, e.to_string()));
            }
        }
    }
    if ok.is_empty() {
        return Err(Error::NoInput(input.display().to_string()));
    }
    let mut runs: Vec<TrajectoryRun> = ok.iter().map(|(_, r)| r.clone()).collect();
    let assignment = assign_floors(&mut runs, cfg)?;
    let graphs: Vec<RunGraphs> = runs.par_iter().map(|r| featurize_run(r, cfg)).collect();

    std::fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    let mut all_assigned = Vec::new();
    let mut all_true = Vec::new();
    let mut turning_total: Option<TurningCounts> = None;
    for ((i, _), (run, rg)) in ok.iter().zip(runs.iter().zip(&graphs)) {
        let l = &loaded[*i];
        let name = l.path.file_name().unwrap().to_string_lossy().into_owned();
        let out_path = output.join(format!("{}.graphs.json", stem(&l.path)));
        let file = std::fs::File::create(&out_path).map_err(|e| Error::io(&out_path, e))?;
        write_chain_graphs(&rg.graphs, &run.source_id, std::io::BufWriter::new(file))?;

        let (floor_accuracy, turning) = match &l.truth {
            Some(truth) => {
                let (assigned, true_floors) = floor_pairs(run, truth);
                all_assigned.extend(&assigned);
                all_true.extend(&true_floors);
                let case = EvalCase::new(run.clone(), truth.clone());
                let counts = case.turning_counts(&cfg.turn, cfg.eval.match_radius_m);
                turning_total.get_or_insert_with(TurningCounts::default).add(counts);
                (Some(score_floors(&assigned, &true_floors)), Some(counts))
            }
            None => (None, None),
        };
        let mut floors_visited: Vec<u32> = run.segments.iter().filter_map(|s| s.floor).collect();
        floors_visited.dedup();
        reports.push(FileReport {
            file: name,
            source: run.source_id.clone(),
            error: None,
            steps: run.steps.len(),
            segments: run.segments.len(),
            gaps: run.gaps.len(),
            graphs: rg.graphs.len(),
            dropped_subtrajectories: rg.dropped,
            heading_fallbacks: run.heading_fallbacks,
            no_gyro: run.degraded.no_gyro,
            no_magn: run.degraded.no_magn,
            floors_visited,
            floor_accuracy,
            turning,
        });
    }
    reports.sort_by(|a, b| a.file.cmp(&b.file));

    let totals = Totals {
        files: reports.len(),
        failed: reports.iter().filter(|r| r.error.is_some()).count(),
        steps: reports.iter().map(|r| r.steps).sum(),
        segments: reports.iter().map(|r| r.segments).sum(),
        floors: assignment.floor_count(),
        graphs: reports.iter().map(|r| r.graphs).sum(),
        dropped_subtrajectories: reports.iter().map(|r| r.dropped_subtrajectories).sum(),
    };
    let score = turning_total.map(|c| c.score(cfg.eval.match_radius_m));
    let report = RunReport {
        files: reports,
        totals,
        floor_pressures: assignment.floor_pressure.clone(),
        floor_accuracy: (!all_true.is_empty()).then(|| score_floors(&all_assigned, &all_true)),
        turning: turning_total,
        turning_precision: score.map(|s| s.precision),
        turning_recall: score.map(|s| s.recall),
        turning_f: score.map(|s| s.f_measure),
    };
    let report_path = output.join("report.json");
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    std::fs::write(&report_path, text).map_err(|e| Error::io(&report_path, e))?;
    Ok(report)
}

/// Loads a directory of logs with ground truth and runs everything up to
/// floor numbering, for scoring and sweeps.
pub fn prepare_cases(input: &Path, cfg: &PipelineConfig) -> Result<Vec<EvalCase>> {
    let model = load_model(cfg)?;
    let (loaded, _) = load_dir(input)?;
    let with_truth: Vec<&LoadedLog> = loaded.iter().filter(|l| l.truth.is_some()).collect();
    if with_truth.is_empty() {
        return Err(Error::NoInput(format!("{} (no logs with ground truth)", input.display())));
    }
    let logs: Vec<SensorLog> = with_truth.iter().map(|l| l.log.clone()).collect();
    let mut runs = logs
        .par_iter()
        .map(|log| process_log(log, cfg, &model))
        .collect::<Result<Vec<_>>>()?;
    assign_floors(&mut runs, cfg)?;
    Ok(runs
        .into_iter()
        .zip(with_truth)
        .map(|(run, l)| EvalCase::new(run, l.truth.clone().unwrap()))
        .collect())
}

/// In-memory counterpart of [`prepare_cases`] for generated corpora.
pub fn cases_from_corpus(
    corpus: Vec<(SensorLog, GroundTruth)>,
    cfg: &PipelineConfig,
    model: &GaitModel,
) -> Result<Vec<EvalCase>> {
    let (logs, truths): (Vec<SensorLog>, Vec<GroundTruth>) = corpus.into_iter().unzip();
    let mut runs = logs
        .par_iter()
        .map(|log| process_log(log, cfg, model))
        .collect::<Result<Vec<_>>>()?;
    assign_floors(&mut runs, cfg)?;
    Ok(runs.into_iter().zip(truths).map(|(r, t)| EvalCase::new(r, t)).collect())
}
