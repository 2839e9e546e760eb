use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mvo::config::RunConfig;
use mvo::error::{ConfigError, Error};
use mvo::eval::{evaluate, EvalOptions, ErrorReport};
use mvo::pipeline::{run_sequence, Method, WindowDump};
use mvo::sim::{generate_scene, SceneTruth};
use mvo::tracklet::{read_jsonl, write_jsonl, Tracklet};

/// Multimotion visual odometry on simulated stereo tracklets.
#[derive(Parser)]
#[command(name = "mvo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate tracklets and ground truth from a scene config.
    Simulate(Common),
    /// Segment and estimate every window of a tracklet file.
    Run(Common),
    /// Same as `run` with sequential RANSAC in place of the joint labeling.
    Baseline(Common),
    /// Score saved dumps against the truth file.
    Evaluate(Common),
    /// simulate, run, baseline and evaluate in one go.
    All(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// Scene config (JSON) with an optional "pipeline" block.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Window length in frames.
    #[arg(long)]
    window: Option<usize>,
    /// Frames between window starts.
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long, default_value = "mvo_out")]
    output: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Tracklet file to read instead of <output>/tracklets.jsonl.
    #[arg(long)]
    tracklets: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(c) => Failure::Usage(c.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::Runtime(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (Command::Simulate(common)
    | Command::Run(common)
    | Command::Baseline(common)
    | Command::Evaluate(common)
    | Command::All(common)) = &cli.command;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| dispatch(&cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: &Command) -> Result<(), Failure> {
    match command {
        Command::Simulate(c) => {
            let config = load_config(c)?;
            simulate(c, &config)
        }
        Command::Run(c) => {
            let config = load_config(c)?;
            run(c, &config, Method::Mvo)
        }
        Command::Baseline(c) => {
            let config = load_config(c)?;
            run(c, &config, Method::Baseline)
        }
        Command::Evaluate(c) => {
            let options = match &c.config {
                Some(_) => eval_options(&load_config(c)?),
                None => EvalOptions::default(),
            };
            evaluate_outputs(c, &options)
        }
        Command::All(c) => {
            let config = load_config(c)?;
            simulate(c, &config)?;
            run(c, &config, Method::Mvo)?;
            run(c, &config, Method::Baseline)?;
            evaluate_outputs(c, &eval_options(&config))
        }
    }
}

fn load_config(c: &Common) -> Result<RunConfig, Failure> {
    let path = c
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage("--config <PATH> is required for this command".into()))?;
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("--config {}: {e}", path.display())))?;
    let mut config = RunConfig::from_json(&text)
        .map_err(|e| Failure::Usage(format!("--config {}: {e}", path.display())))?;
    if let Some(seed) = c.seed {
        config.scene.seed = seed;
    }
    if let Some(w) = c.window {
        config.pipeline.window = w;
    }
    if let Some(s) = c.stride {
        config.pipeline.stride = s;
    }
    config.validate()?;
    Ok(config)
}

fn eval_options(config: &RunConfig) -> EvalOptions {
    EvalOptions {
        calibration_frames: config.pipeline.calibration_frames,
        min_support_points: config.pipeline.energy.min_support_points,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let file = File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn simulate(c: &Common, config: &RunConfig) -> Result<(), Failure> {
    let (tracklets, truth) = generate_scene(&config.scene, config.scene.seed)?;
    let path = c.output.join("tracklets.jsonl");
    let mut w = create(&path)?;
    write_jsonl(&mut w, &tracklets).map_err(io_err(&path))?;
    w.flush().map_err(io_err(&path))?;
    write_json(&c.output.join("truth.json"), &truth)
}

fn tracklet_path(c: &Common) -> PathBuf {
    c.tracklets.clone().unwrap_or_else(|| c.output.join("tracklets.jsonl"))
}

fn load_tracklets(c: &Common, config: &RunConfig) -> Result<Vec<Tracklet>, Failure> {
    let path = tracklet_path(c);
    let file = File::open(&path).map_err(io_err(&path))?;
    read_jsonl(BufReader::new(file), &config.scene.intrinsics, config.scene.min_disparity)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn method_dir(c: &Common, method: Method) -> PathBuf {
    c.output.join(match method {
        Method::Mvo => "run",
        Method::Baseline => "baseline",
    })
}

fn run(c: &Common, config: &RunConfig, method: Method) -> Result<(), Failure> {
    let tracklets = load_tracklets(c, config)?;
    let dumps = run_sequence(
        &tracklets,
        config.scene.frames,
        &config.scene.intrinsics,
        &config.pipeline,
        method,
        config.scene.seed,
    )?;
    let dir = method_dir(c, method);
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
    }
    for dump in &dumps {
        write_json(&dir.join(format!("window_{:04}.json", dump.window)), dump)?;
        write_trajectories(&dir.join(format!("window_{:04}", dump.window)), dump)?;
    }
    Ok(())
}

fn write_trajectories(dir: &Path, dump: &WindowDump) -> Result<(), Failure> {
    let (camera, labels) = dump.trajectories();
    if let Some(camera) = camera {
        let path = dir.join("camera.csv");
        let mut w = create(&path)?;
        camera.write_csv(&mut w, dump.start).map_err(io_err(&path))?;
        w.flush().map_err(io_err(&path))?;
    }
    for (ego, geo) in labels {
        let path = dir.join(format!("label_{}.csv", ego.label));
        let mut w = create(&path)?;
        ego.write_csv(&mut w, dump.start).map_err(io_err(&path))?;
        if let Some(geo) = geo {
            geo.write_csv(&mut w, dump.start).map_err(io_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
    }
    Ok(())
}

fn load_dumps(dir: &Path) -> Result<Vec<WindowDump>, Failure> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "json")
                && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("window_"))
        })
        .collect();
    paths.sort();
    let mut dumps: Vec<WindowDump> = paths.iter().map(|p| read_json(p)).collect::<Result<_, _>>()?;
    dumps.sort_by_key(|d| d.window);
    Ok(dumps)
}

#[derive(serde::Serialize)]
struct Report {
    mvo: Option<ErrorReport>,
    baseline: Option<ErrorReport>,
}

fn evaluate_outputs(c: &Common, options: &EvalOptions) -> Result<(), Failure> {
    let truth: SceneTruth = read_json(&c.output.join("truth.json"))?;
    // Evaluation only needs ids and observed frames, so any intrinsics do.
    let path = tracklet_path(c);
    let file = File::open(&path).map_err(io_err(&path))?;
    let tracklets = read_jsonl(BufReader::new(file), &Default::default(), 0.0)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;

    let mut report = Report {
        mvo: None,
        baseline: None,
    };
    for method in [Method::Mvo, Method::Baseline] {
        let dir = method_dir(c, method);
        if !dir.is_dir() {
            continue;
        }
        let dumps = load_dumps(&dir)?;
        let r = evaluate(&dumps, &truth, &tracklets, options);
        let errors = match method {
            Method::Mvo => c.output.join("errors"),
            Method::Baseline => dir.join("errors"),
        };
        for m in &r.motions {
            let path = errors.join(format!("{}.csv", m.name));
            let mut w = create(&path)?;
            m.write_csv(&mut w).map_err(io_err(&path))?;
            w.flush().map_err(io_err(&path))?;
        }
        match method {
            Method::Mvo => report.mvo = Some(r),
            Method::Baseline => report.baseline = Some(r),
        }
    }
    if report.mvo.is_none() && report.baseline.is_none() {
        return Err(Failure::Runtime(format!(
            "no run/ or baseline/ dumps under {}",
            c.output.display()
        )));
    }
    write_json(&c.output.join("report.json"), &report)
}
