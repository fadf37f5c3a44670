//! Command-line entry points, one per pipeline stage, plus the HTTP service.

pub mod server;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use visdemand_core::exec::Execution;
use visdemand_core::features::{
    balance_undersample, filter_dataset, read_dataset, trips_to_rows, write_dataset, Dataset, DatasetFilter,
    FeatureConfig, FeatureVector,
};
use visdemand_core::models::{Forest, ForestConfig, Task, TrainingSet};
use visdemand_core::reports::{
    at_stage, data_hash, emit_plot_data, run_experiment, DataSource, ExperimentConfig, ReportError, Stage,
};
use visdemand_core::segmentation::{assemble_engagements, DropStats, SegmentConfig};
use visdemand_core::shap::TreeExplainer;
use visdemand_core::synthgen::{generate_corpus, inject_artifacts, ArtifactSpec, GeneratorSpec};
use visdemand_core::telemetry::{ingest_dir, write_trip, LogFormat, TripLog};

#[derive(Debug, Parser)]
#[command(
    name = "visdemand",
    version,
    about = "Visual demand of touchscreen interactions while driving"
)]
pub struct Cli {
    /// Run every stage on one thread.
    #[arg(long, global = true)]
    pub serial: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and validate a directory of trip logs.
    Ingest(IngestArgs),
    /// Split trips into engagements with their driving windows and glances.
    Segment(SegmentArgs),
    /// Build the feature dataset from trip logs.
    Featurize(FeaturizeArgs),
    /// Fit a random forest for one task.
    Train(TrainArgs),
    /// Run a full experiment and write its report.
    Evaluate(EvaluateArgs),
    /// SHAP values of one feature vector.
    Explain(ExplainArgs),
    /// Generate synthetic trip logs with planted effects; per-session ground
    /// truth goes to `ground_truth/sessions.json` under the output directory.
    Synth(SynthArgs),
    /// Serve predictions and explanations over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    LongGlance,
    Tgd,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::LongGlance => Task::Classification,
            TaskArg::Tgd => Task::Regression,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Jsonl,
    Tsv,
}

impl From<FormatArg> for LogFormat {
    fn from(f: FormatArg) -> LogFormat {
        match f {
            FormatArg::Jsonl => LogFormat::Jsonl,
            FormatArg::Tsv => LogFormat::Tsv,
        }
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Rewrite every trip here in canonical form.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "jsonl")]
    pub format: FormatArg,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    pub delta_t_max_ms: i64,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 41)]
    pub n_cap: u32,
    #[arg(long, default_value_t = 10_000)]
    pub delta_t_max_ms: i64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub task: TaskArg,
    /// Dataset written by `featurize`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Forest size; defaults to the task's tuned configuration.
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Experiment config (JSON); omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Use this log directory instead of the configured source.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the size of both forests.
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for force, beeswarm and dependence plot data.
    #[arg(long)]
    pub emit_plot_data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// JSON object with all 25 named features.
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Generator spec (JSON); omitted fields take their defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub trips: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "jsonl")]
    pub format: FormatArg,
    /// Artifacts injected per trip.
    #[arg(long, default_value_t = 0)]
    pub tracking_losses: usize,
    #[arg(long, default_value_t = 0)]
    pub micro_glances: usize,
    #[arg(long, default_value_t = 0)]
    pub blinks: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub long_glance: PathBuf,
    #[arg(long)]
    pub tgd: PathBuf,
    /// Training dataset; supplies feature ranges and background rows.
    #[arg(long)]
    pub data: PathBuf,
    /// Rows explained for the global views.
    #[arg(long, default_value_t = 500)]
    pub background: usize,
    #[arg(long, env = "VISDEMAND_PORT", default_value_t = 8080)]
    pub port: u16,
}

fn exec(cli: &Cli) -> Execution {
    if cli.serial {
        Execution::Serial
    } else {
        Execution::Parallel
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("output serializes")
}

fn emit(out: Option<&Path>, text: &str, stage: Stage) -> Result<(), ReportError> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| at_stage(stage)(format!("{}: {e}", p.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, stage: Stage) -> Result<T, ReportError> {
    let err = |e: String| at_stage(stage)(format!("{}: {e}", path.display()));
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| err(e.to_string()))
}

fn load_dataset(path: &Path, stage: Stage) -> Result<Dataset, ReportError> {
    let file = std::fs::File::open(path).map_err(|e| at_stage(stage)(format!("{}: {e}", path.display())))?;
    read_dataset(std::io::BufReader::new(file)).map_err(|e| at_stage(stage)(format!("{}: {e}", path.display())))
}

fn load_forest(path: &Path) -> Result<Forest, ReportError> {
    Forest::load(path).map_err(|e| at_stage(Stage::Explain)(format!("{}: {e}", path.display())))
}

fn ingest(dir: &Path) -> Result<Vec<TripLog>, ReportError> {
    ingest_dir(dir).map_err(at_stage(Stage::Ingest))
}

#[derive(Debug, Serialize)]
struct IngestSummary {
    trips: usize,
    touch_events: usize,
    glance_segments: usize,
    driving_samples: usize,
    state_events: usize,
    data_hash: String,
}

fn write_trips(trips: &[TripLog], dir: &Path, format: LogFormat, stage: Stage) -> Result<(), ReportError> {
    let io = |e: std::io::Error| at_stage(stage)(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    for (i, t) in trips.iter().enumerate() {
        let path = dir.join(format!("trip_{i:05}.{}", format.extension()));
        std::fs::write(&path, write_trip(t, format)).map_err(io)?;
    }
    Ok(())
}

fn cmd_ingest(a: &IngestArgs) -> Result<(), ReportError> {
    let trips = ingest(&a.input)?;
    if let Some(out) = &a.out {
        write_trips(&trips, out, a.format.into(), Stage::Ingest)?;
    }
    let summary = IngestSummary {
        trips: trips.len(),
        touch_events: trips.iter().map(|t| t.touch.len()).sum(),
        glance_segments: trips.iter().map(|t| t.glances.len()).sum(),
        driving_samples: trips.iter().map(|t| t.driving.len()).sum(),
        state_events: trips.iter().map(|t| t.states.len()).sum(),
        data_hash: data_hash(&trips),
    };
    emit(None, &to_json(&summary), Stage::Ingest)
}

fn segment_config(delta_t_max_ms: i64) -> Result<SegmentConfig, ReportError> {
    if delta_t_max_ms <= 0 {
        return Err(at_stage(Stage::Segment)("--delta-t-max-ms must be positive"));
    }
    Ok(SegmentConfig {
        delta_t_max_ms,
        ..SegmentConfig::default()
    })
}

fn cmd_segment(a: &SegmentArgs) -> Result<(), ReportError> {
    #[derive(Serialize)]
    struct Output<'a> {
        stats: DropStats,
        engagements: Vec<&'a visdemand_core::segmentation::SecondaryTaskEngagement>,
    }
    let cfg = segment_config(a.delta_t_max_ms)?;
    let trips = ingest(&a.input)?;
    let mut stats = DropStats::default();
    let mut all = Vec::new();
    for t in &trips {
        let (e, s) = assemble_engagements(t, &cfg);
        stats.merge(&s);
        all.extend(e);
    }
    let out = Output {
        stats,
        engagements: all.iter().collect(),
    };
    emit(a.out.as_deref(), &to_json(&out), Stage::Segment)
}

fn cmd_featurize(a: &FeaturizeArgs, exec: Execution) -> Result<(), ReportError> {
    let trips = ingest(&a.input)?;
    let cfg = FeatureConfig {
        segment: segment_config(a.delta_t_max_ms)?,
        ..FeatureConfig::default()
    };
    let (rows, seg) = trips_to_rows(&trips, &cfg, exec);
    let filter = DatasetFilter {
        n_cap: a.n_cap,
        ..DatasetFilter::default()
    };
    let mut ds = filter_dataset(rows, &filter);
    ds.provenance.segmentation = seg;
    let file =
        std::fs::File::create(&a.out).map_err(|e| at_stage(Stage::Featurize)(format!("{}: {e}", a.out.display())))?;
    write_dataset(&ds, std::io::BufWriter::new(file)).map_err(at_stage(Stage::Featurize))?;
    eprintln!(
        "{} rows; provenance {}",
        ds.len(),
        serde_json::to_string(&ds.provenance).expect("serializes")
    );
    Ok(())
}

fn cmd_train(a: &TrainArgs, exec: Execution) -> Result<(), ReportError> {
    let task: Task = a.task.into();
    let ds = load_dataset(&a.data, Stage::Train)?;
    let ds = match task {
        Task::Classification => balance_undersample(&ds, a.seed).map_err(at_stage(Stage::Train))?,
        Task::Regression => ds,
    };
    let data = TrainingSet::from_dataset(&ds, task).map_err(at_stage(Stage::Train))?;
    let mut cfg = ForestConfig::for_task(task);
    cfg.seed = a.seed;
    if let Some(n) = a.trees {
        cfg.n_estimators = n;
    }
    if let Some(d) = a.max_depth {
        cfg.max_depth = d;
    }
    let forest = Forest::fit(&data, &cfg, exec).map_err(at_stage(Stage::Train))?;
    forest
        .save(&a.out)
        .map_err(|e| at_stage(Stage::Train)(format!("{}: {e}", a.out.display())))?;
    eprintln!("trained {} trees on {} rows", forest.trees.len(), data.len());
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs, exec: Execution) -> Result<(), ReportError> {
    let mut cfg: ExperimentConfig = match &a.config {
        Some(p) => read_json(p, Stage::Evaluate)?,
        None => ExperimentConfig::default(),
    };
    if let Some(dir) = &a.input {
        cfg.source = DataSource::Logs { dir: dir.clone() };
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(n) = a.trees {
        cfg.classification_forest.n_estimators = n;
        cfg.regression_forest.n_estimators = n;
    }
    let report = run_experiment(&cfg, exec)?;
    for t in &report.tasks {
        for r in &t.ranking {
            eprintln!("{:?}\t{}\t{}\t{:.4}\t{:.4}", t.task, r.rank, r.model, r.mean, r.std);
        }
    }
    if let Some(dir) = &a.emit_plot_data {
        emit_plot_data(&report, dir)?;
    }
    emit(a.out.as_deref(), &report.to_json(), Stage::Report)
}

fn cmd_explain(a: &ExplainArgs) -> Result<(), ReportError> {
    let forest = load_forest(&a.model)?;
    let fv: FeatureVector = read_json(&a.instance, Stage::Explain)?;
    let expl = TreeExplainer::new(&forest)
        .and_then(|e| e.explain(&fv.to_row()))
        .map_err(at_stage(Stage::Explain))?;
    emit(a.out.as_deref(), &expl.to_json(), Stage::Explain)
}

fn cmd_synth(a: &SynthArgs, exec: Execution) -> Result<(), ReportError> {
    let mut spec: GeneratorSpec = match &a.spec {
        Some(p) => read_json(p, Stage::Synth)?,
        None => GeneratorSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let corpus = generate_corpus(&spec, a.trips, exec).map_err(at_stage(Stage::Synth))?;
    let trips: Vec<TripLog> = corpus
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let artifacts = ArtifactSpec {
                tracking_losses: a.tracking_losses,
                micro_glances: a.micro_glances,
                blinks: a.blinks,
                seed: spec.seed ^ i as u64,
                ..ArtifactSpec::default()
            };
            inject_artifacts(&g.trip, &artifacts).0
        })
        .collect();
    write_trips(&trips, &a.out, a.format.into(), Stage::Synth)?;
    let truth: Vec<_> = corpus.iter().map(|g| (&g.trip.trip_id, &g.truth)).collect();
    let truth_dir = a.out.join("ground_truth");
    std::fs::create_dir_all(&truth_dir).map_err(at_stage(Stage::Synth))?;
    emit(Some(&truth_dir.join("sessions.json")), &to_json(&truth), Stage::Synth)
}

fn cmd_serve(a: &ServeArgs, exec: Execution) -> Result<(), ReportError> {
    let lg = load_forest(&a.long_glance)?;
    let tgd = load_forest(&a.tgd)?;
    let ds = load_dataset(&a.data, Stage::Serve)?;
    let bundle = server::ModelBundle::new(lg, tgd, &ds, a.background, exec).map_err(at_stage(Stage::Serve))?;
    eprintln!("model version {} listening on port {}", bundle.version(), a.port);
    let state = server::AppState::new(Some(bundle));
    tokio::runtime::Runtime::new()
        .and_then(|rt| rt.block_on(server::serve(state, a.port)))
        .map_err(at_stage(Stage::Serve))
}

pub fn run(cli: &Cli) -> Result<(), ReportError> {
    let exec = exec(cli);
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Segment(a) => cmd_segment(a),
        Command::Featurize(a) => cmd_featurize(a, exec),
        Command::Train(a) => cmd_train(a, exec),
        Command::Evaluate(a) => cmd_evaluate(a, exec),
        Command::Explain(a) => cmd_explain(a),
        Command::Synth(a) => cmd_synth(a, exec),
        Command::Serve(a) => cmd_serve(a, exec),
    }
}
