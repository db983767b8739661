use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use trackforge::config::{FloorCount, PipelineConfig};
use trackforge::error::{Error, Result};
use trackforge::evalkit::{grid, sweep, write_sweep_csv, write_sweep_dat};
use trackforge::logio::write_log;
use trackforge::pipeline::{prepare_cases, run_pipeline};
use trackforge::stride::{read_labels, train_gait_model, write_labels, StrideTable, TrainOptions};
use trackforge::synth::{default_corpus, generate, labeled_features, WalkScript};

#[derive(Parser)]
#[command(name = "trackforge", version, about = "Featured indoor motion trajectories from smartphone sensor logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Process every .tsl log of a directory into chain graphs.
    Run(Common),
    /// Render walk scripts (or the built-in corpus) into logs with ground truth.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Walk script file; repeat for several. Without it the default corpus is written.
        #[arg(long = "script")]
        scripts: Vec<PathBuf>,
    },
    /// Score floor assignment and turning points against ground truth.
    Eval(Common),
    /// Sweep turning-point parameters and write sweep.csv and sweep.dat.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.6)]
        eps_start: f64,
        #[arg(long, default_value_t = 1.4)]
        eps_end: f64,
        #[arg(long, default_value_t = 0.1)]
        eps_step: f64,
        /// Window sizes to sweep; defaults to the configured window only.
        #[arg(long = "windows", value_delimiter = ',')]
        windows: Vec<usize>,
    },
    /// Train the two-level gait classifier from a labelled feature CSV.
    TrainGait {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Shuffle seed for the solver.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args, Clone, Default)]
struct Common {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, alias = "out")]
    output: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    floors: Option<FloorCount>,
    #[arg(long)]
    gait_model: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = &self.input {
            cfg.input = Some(v.clone());
        }
        if let Some(v) = &self.output {
            cfg.output = Some(v.clone());
        }
        if let Some(v) = self.epsilon {
            cfg.turn.epsilon = v;
        }
        if let Some(v) = self.window {
            cfg.turn.window_min = v;
        }
        if let Some(v) = self.floors {
            cfg.floor.floors = v;
        }
        if let Some(v) = &self.gait_model {
            cfg.gait_model = Some(v.clone());
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| {
        Error::Config(trackforge::config::ConfigError::Invalid {
            key: flag.into(),
            message: "is required (flag or config file)".into(),
        })
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_run(common: &Common) -> Result<ExitCode> {
    let cfg = common.config()?;
    let input = required(&cfg.input, "input")?;
    let output = required(&cfg.output, "output")?;
    let report = run_pipeline(input, output, &cfg)?;
    let t = &report.totals;
    println!(
        "{} files ({} failed), {} steps, {} segments, {} floors, {} graphs, {} dropped",
        t.files, t.failed, t.steps, t.segments, t.floors, t.graphs, t.dropped_subtrajectories
    );
    if let Some(a) = report.floor_accuracy {
        println!("floor accuracy {a:.4}");
    }
    Ok(if t.failed > 0 { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn cmd_synth(common: &Common, scripts: &[PathBuf]) -> Result<ExitCode> {
    let cfg = common.config()?;
    let output = required(&cfg.output, "output")?;
    let mut walks = Vec::new();
    if scripts.is_empty() {
        walks = default_corpus();
    } else {
        for p in scripts {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            walks.push(WalkScript::from_toml_str(&text)?);
        }
    }
    for w in &mut walks {
        w.seed = w.seed.wrapping_add(cfg.seed);
    }
    create_dir(output)?;
    let mut labels = Vec::new();
    for w in &walks {
        let (log, truth) = generate(w)?;
        let log_path = output.join(format!("{}.tsl", w.source_id));
        write_log(&log, create_file(&log_path)?)?;
        write_json(&output.join(format!("{}.truth.json", w.source_id)), &truth)?;
        labels.extend(labeled_features(&log, &truth));
        println!("{}: {} steps", log_path.display(), truth.step_peak_times.len());
    }
    write_labels(&labels, create_file(&output.join("gait_labels.csv"))?)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(common: &Common) -> Result<ExitCode> {
    let cfg = common.config()?;
    let input = required(&cfg.input, "input")?;
    let cases = prepare_cases(input, &cfg)?;
    let radius = cfg.eval.match_radius_m;
    let mut assigned = Vec::new();
    let mut truth = Vec::new();
    let mut counts = trackforge::evalkit::TurningCounts::default();
    for c in &cases {
        let (a, t) = trackforge::evalkit::floor_pairs(&c.run, &c.truth);
        assigned.extend(a);
        truth.extend(t);
        counts.add(c.turning_counts(&cfg.turn, radius));
    }
    let floor_accuracy = trackforge::evalkit::score_floors(&assigned, &truth);
    let s = counts.score(radius);
    println!("floor accuracy {floor_accuracy:.4} over {} segments", truth.len());
    println!(
        "turning points (epsilon {}, window {}): precision {:.4} recall {:.4} f {:.4}",
        cfg.turn.epsilon, cfg.turn.window_min, s.precision, s.recall, s.f_measure
    );
    if let Some(out) = &cfg.output {
        create_dir(out)?;
        write_json(
            &out.join("eval.json"),
            &serde_json::json!({
                "floor_accuracy": floor_accuracy,
                "segments": truth.len(),
                "turning": s,
                "counts": counts,
            }),
        )?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(common: &Common, start: f64, end: f64, step: f64, windows: &[usize]) -> Result<ExitCode> {
    let cfg = common.config()?;
    let input = required(&cfg.input, "input")?;
    let output = required(&cfg.output, "output")?;
    if !(step > 0.0 && end >= start) {
        return Err(Error::Config(trackforge::config::ConfigError::Invalid {
            key: "eps-step".into(),
            message: "needs a positive step and eps-end >= eps-start".into(),
        }));
    }
    let cases = prepare_cases(input, &cfg)?;
    let windows = if windows.is_empty() { vec![cfg.turn.window_min] } else { windows.to_vec() };
    let rows = sweep(&cases, &grid(start, end, step), &windows, &cfg.turn, cfg.eval.match_radius_m);
    create_dir(output)?;
    let csv_path = output.join("sweep.csv");
    write_sweep_csv(&rows, create_file(&csv_path)?).map_err(|e| Error::io(&csv_path, e))?;
    let dat_path = output.join("sweep.dat");
    write_sweep_dat(&rows, create_file(&dat_path)?).map_err(|e| Error::io(&dat_path, e))?;
    for r in &rows {
        println!("{:.2} {} P {:.4} R {:.4} F {:.4}", r.epsilon, r.window, r.precision, r.recall, r.f);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(labels: &Path, out: &Path, seed: Option<u64>) -> Result<ExitCode> {
    let file = File::open(labels).map_err(|e| Error::io(labels, e))?;
    let data = read_labels(file)?;
    let mut opts = TrainOptions::default();
    if let Some(seed) = seed {
        opts.seed = seed;
    }
    let (model, report) = train_gait_model(&data, StrideTable::default(), &opts)?;
    std::fs::write(out, model.to_toml_string()).map_err(|e| Error::io(out, e))?;
    println!(
        "trained on {} samples, training accuracy {:.4}",
        report.samples, report.accuracy
    );
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TRACKFORGE_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::Synth { common, scripts } => cmd_synth(common, scripts),
        Command::Eval(c) => cmd_eval(c),
        Command::Sweep {
            common,
            eps_start,
            eps_end,
            eps_step,
            windows,
        } => cmd_sweep(common, *eps_start, *eps_end, *eps_step, windows),
        Command::TrainGait { labels, out, seed } => cmd_train(labels, out, *seed),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
