//! End-to-end experiments: logs or synthetic trips in, model comparison,
//! summary statistics and explanation plot data out.
//!
//! Reports carry no timestamps or paths of the machine they ran on, so a
//! rerun with the same data, config and seeds reproduces them byte for byte.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::exec::{derive_seed, Execution};
use crate::features::{
    balance_undersample, filter_dataset, summary_stats, trips_to_rows, ColumnSummary, Dataset, DatasetFilter,
    FeatureConfig, Provenance, StdKind,
};
use crate::models::{
    cross_validate, CvScheme, FittedModel, ForestConfig, MetricsReport, ModelSpec, Task, TrainingSet,
    DEFAULT_REPETITIONS,
};
use crate::shap::{
    beeswarm_data, dependence_data, force_data, BeeswarmRow, DependenceData, ForceData, TreeExplainer,
    DEFAULT_BEESWARM_TOP_K,
};
use crate::synthgen::{generate_corpus, GeneratorSpec};
use crate::telemetry::{ingest_dir, write_trip, LogFormat, TripLog};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Synth,
    Segment,
    Featurize,
    Train,
    Evaluate,
    Explain,
    Report,
    Serve,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Ingest => "ingest",
            Stage::Synth => "synth",
            Stage::Segment => "segment",
            Stage::Featurize => "featurize",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Explain => "explain",
            Stage::Report => "report",
            Stage::Serve => "serve",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("[{stage}] {message}")]
    Stage { stage: Stage, message: String },
    #[error("model comparison needs at least 2 models, got {0}")]
    TooFewModels(usize),
}

/// Wraps any displayable error with the pipeline stage it came from.
pub fn at_stage<E: fmt::Display>(stage: Stage) -> impl Fn(E) -> ReportError {
    move |e| ReportError::Stage {
        stage,
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DataSource {
    /// A directory of trip log files.
    Logs {
        dir: PathBuf,
    },
    Synthetic {
        spec: GeneratorSpec,
        trips: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainConfig {
    /// Rows explained for the global summary (first rows of the task set).
    pub max_instances: usize,
    /// Force-plot payloads for this many leading rows.
    pub force_examples: usize,
    pub force_top_k: usize,
    pub beeswarm_top_k: usize,
    /// Features to emit dependence data for; empty means the three most
    /// important.
    pub dependence_features: Vec<String>,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            max_instances: 1_000,
            force_examples: 5,
            force_top_k: 8,
            beeswarm_top_k: DEFAULT_BEESWARM_TOP_K,
            dependence_features: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub features: FeatureConfig,
    pub filter: DatasetFilter,
    pub tasks: Vec<Task>,
    pub classification_forest: ForestConfig,
    pub regression_forest: ForestConfig,
    pub cv_repetitions: usize,
    pub explain: ExplainConfig,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            source: DataSource::Synthetic {
                spec: GeneratorSpec::default(),
                trips: 60,
            },
            features: FeatureConfig::default(),
            filter: DatasetFilter::default(),
            tasks: vec![Task::Classification, Task::Regression],
            classification_forest: ForestConfig::long_glance(),
            regression_forest: ForestConfig::tgd(),
            cv_repetitions: DEFAULT_REPETITIONS,
            explain: ExplainConfig::default(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn model_specs(&self, task: Task) -> Vec<ModelSpec> {
        let forest = match task {
            Task::Classification => self.classification_forest.clone(),
            Task::Regression => self.regression_forest.clone(),
        };
        vec![ModelSpec::Baseline, ModelSpec::Linear, ModelSpec::RandomForest(forest)]
    }

    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the canonical JSONL rendering of every trip, in order.
pub fn data_hash(trips: &[TripLog]) -> String {
    let mut h = Sha256::new();
    for t in trips {
        h.update(write_trip(t, LogFormat::Jsonl).as_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub rank: usize,
    pub model: String,
    pub mean: f64,
    pub std: f64,
}

/// Orders models best first by mean metric (accuracy descending, MAE
/// ascending); equal means are ordered by model name.
pub fn compare_models(metrics: &[MetricsReport]) -> Result<Vec<RankingRow>, ReportError> {
    if metrics.len() < 2 {
        return Err(ReportError::TooFewModels(metrics.len()));
    }
    let mut sorted: Vec<&MetricsReport> = metrics.iter().collect();
    sorted.sort_by(|a, b| {
        let by_metric = if a.metric.higher_is_better() {
            b.mean.total_cmp(&a.mean)
        } else {
            a.mean.total_cmp(&b.mean)
        };
        by_metric.then_with(|| a.model.cmp(&b.model))
    });
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, m)| RankingRow {
            rank: i + 1,
            model: m.model.clone(),
            mean: m.mean,
            std: m.std,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub mean_abs_shap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationExport {
    pub base_value: f64,
    pub instances: usize,
    pub importance: Vec<FeatureImportance>,
    pub force: Vec<ForceData>,
    pub beeswarm: Vec<BeeswarmRow>,
    pub dependence: Vec<DependenceData>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: Task,
    pub rows: usize,
    /// (negative, positive) after balancing; regression reports the raw
    /// long-glance split.
    pub class_counts: (usize, usize),
    pub cv: CvScheme,
    pub metrics: Vec<MetricsReport>,
    pub ranking: Vec<RankingRow>,
    pub explanations: ExplanationExport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub data_hash: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub provenance: Provenance,
    pub summary: Vec<ColumnSummary>,
    pub tasks: Vec<TaskReport>,
    /// Hash of this report with this field empty.
    pub report_hash: String,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    fn seal(mut self) -> Self {
        self.report_hash.clear();
        self.report_hash = sha256_hex(self.to_json().as_bytes());
        self
    }

    pub fn task(&self, task: Task) -> Option<&TaskReport> {
        self.tasks.iter().find(|t| t.task == task)
    }
}

pub fn load_trips(source: &DataSource, exec: Execution) -> Result<Vec<TripLog>, ReportError> {
    match source {
        DataSource::Logs { dir } => ingest_dir(dir).map_err(at_stage(Stage::Ingest)),
        DataSource::Synthetic { spec, trips } => Ok(generate_corpus(spec, *trips, exec)
            .map_err(at_stage(Stage::Synth))?
            .into_iter()
            .map(|g| g.trip)
            .collect()),
    }
}

/// Rows of the dataset the given task trains on: the balanced set for
/// classification, all rows for regression.
pub fn task_set(ds: &Dataset, task: Task, seed: u64) -> Result<TrainingSet, ReportError> {
    match task {
        Task::Classification => {
            let balanced = balance_undersample(ds, seed).map_err(at_stage(Stage::Featurize))?;
            TrainingSet::from_dataset(&balanced, task).map_err(at_stage(Stage::Featurize))
        }
        Task::Regression => TrainingSet::from_dataset(ds, task).map_err(at_stage(Stage::Featurize)),
    }
}

fn explain_task(
    forest_model: &FittedModel,
    data: &TrainingSet,
    cfg: &ExplainConfig,
    exec: Execution,
) -> Result<ExplanationExport, ReportError> {
    let FittedModel::RandomForest(forest) = forest_model else {
        unreachable!("explanations are computed for the forest");
    };
    let explainer = TreeExplainer::new(forest).map_err(at_stage(Stage::Explain))?;
    let n = data.len().min(cfg.max_instances);
    let idx: Vec<usize> = (0..n).collect();
    let subset = data.x.select_rows(&idx);
    let expl = explainer.explain_all(&subset, exec).map_err(at_stage(Stage::Explain))?;
    let summary = crate::shap::GlobalSummary::from_explanations(&expl).map_err(at_stage(Stage::Explain))?;
    let dep_features: Vec<usize> = if cfg.dependence_features.is_empty() {
        summary.ranking.iter().take(3).copied().collect()
    } else {
        cfg.dependence_features
            .iter()
            .map(|name| summary.feature_index(name))
            .collect::<Result<_, _>>()
            .map_err(at_stage(Stage::Explain))?
    };
    let dependence = if summary.n_instances() >= crate::shap::MIN_DEPENDENCE_INSTANCES {
        dep_features
            .into_iter()
            .map(|j| dependence_data(&summary, j))
            .collect::<Result<_, _>>()
            .map_err(at_stage(Stage::Explain))?
    } else {
        Vec::new()
    };
    Ok(ExplanationExport {
        base_value: summary.base_value,
        instances: n,
        importance: summary
            .ranking
            .iter()
            .map(|&j| FeatureImportance {
                feature: summary.feature_names[j].clone(),
                mean_abs_shap: summary.importance[j],
            })
            .collect(),
        force: expl
            .iter()
            .take(cfg.force_examples)
            .map(|e| force_data(e, cfg.force_top_k))
            .collect(),
        beeswarm: beeswarm_data(&summary, cfg.beeswarm_top_k),
        dependence,
    })
}

/// Runs ingest (or generation), featurization, cross-validated comparison of
/// baseline, linear and forest models, and forest explanations for every
/// configured task.
pub fn run_experiment(config: &ExperimentConfig, exec: Execution) -> Result<ExperimentReport, ReportError> {
    let trips = load_trips(&config.source, exec)?;
    let data_hash = data_hash(&trips);
    let (rows, seg_stats) = trips_to_rows(&trips, &config.features, exec);
    let mut ds = filter_dataset(rows, &config.filter);
    ds.provenance.segmentation = seg_stats;
    if ds.is_empty() {
        return Err(ReportError::Stage {
            stage: Stage::Featurize,
            message: "no engagements survived segmentation and filtering".into(),
        });
    }
    let summary = summary_stats(&ds, StdKind::Sample).map_err(at_stage(Stage::Featurize))?;

    let mut tasks = Vec::new();
    for (t_idx, &task) in config.tasks.iter().enumerate() {
        let task_seed = derive_seed(config.seed, t_idx as u64, 1);
        let data = task_set(&ds, task, task_seed)?;
        let scheme = match task {
            Task::Classification => CvScheme::Stratified10Fold,
            Task::Regression => CvScheme::Repeated10Fold {
                repetitions: config.cv_repetitions,
            },
        };
        let specs = config.model_specs(task);
        let metrics = specs
            .iter()
            .map(|spec| cross_validate(&data, spec, scheme, task_seed, exec))
            .collect::<Result<Vec<_>, _>>()
            .map_err(at_stage(Stage::Evaluate))?;
        let ranking = compare_models(&metrics)?;
        let forest_spec = specs.last().expect("forest spec");
        let forest = FittedModel::fit(forest_spec, &data, task_seed, exec).map_err(at_stage(Stage::Train))?;
        let explanations = explain_task(&forest, &data, &config.explain, exec)?;
        let positives = data.y.iter().filter(|&&v| v == 1.0).count();
        let class_counts = match task {
            Task::Classification => (data.len() - positives, positives),
            Task::Regression => ds.class_counts(),
        };
        tasks.push(TaskReport {
            task,
            rows: data.len(),
            class_counts,
            cv: scheme,
            metrics,
            ranking,
            explanations,
        });
    }

    Ok(ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config_hash: config.hash(),
        data_hash,
        seed: config.seed,
        config: config.clone(),
        provenance: ds.provenance,
        summary,
        tasks,
        report_hash: String::new(),
    }
    .seal())
}

fn task_slug(task: Task) -> &'static str {
    match task {
        Task::Classification => "long_glance",
        Task::Regression => "tgd",
    }
}

/// Writes force, beeswarm and dependence payloads as one JSON file each and
/// returns the written paths.
pub fn emit_plot_data(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let io = at_stage(Stage::Report);
    std::fs::create_dir_all(dir).map_err(&io)?;
    let mut written = Vec::new();
    let mut write = |name: String, json: String| -> Result<(), ReportError> {
        let path = dir.join(name);
        std::fs::write(&path, json).map_err(&io)?;
        written.push(path);
        Ok(())
    };
    for t in &report.tasks {
        let slug = task_slug(t.task);
        let e = &t.explanations;
        write(format!("force_{slug}.json"), pretty(&e.force))?;
        write(format!("beeswarm_{slug}.json"), pretty(&e.beeswarm))?;
        write(format!("importance_{slug}.json"), pretty(&e.importance))?;
        for d in &e.dependence {
            write(format!("dependence_{slug}_{}.json", d.name), pretty(d))?;
        }
    }
    Ok(written)
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("plot data serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Metric;

    fn report(model: &str, mean: f64, metric: Metric) -> MetricsReport {
        MetricsReport::from_folds(model, metric, vec![mean, mean])
    }

    #[test]
    fn lower_mae_ranks_first() {
        let rows = compare_models(&[
            report("baseline", 4378.0, Metric::MaeMs),
            report("random_forest", 2437.0, Metric::MaeMs),
        ])
        .unwrap();
        assert_eq!(rows[0].model, "random_forest");
        assert_eq!((rows[0].rank, rows[1].rank), (1, 2));
    }

    #[test]
    fn higher_accuracy_ranks_first_and_ties_by_name() {
        let rows = compare_models(&[
            report("zeta", 0.6, Metric::Accuracy),
            report("alpha", 0.6, Metric::Accuracy),
            report("mid", 0.7, Metric::Accuracy),
        ])
        .unwrap();
        let names: Vec<&str> = rows.iter().map(|r| r.model.as_str()).collect();
        assert_eq!(names, vec!["mid", "alpha", "zeta"]);
    }

    #[test]
    fn single_model_is_an_error() {
        assert_eq!(
            compare_models(&[report("only", 1.0, Metric::MaeMs)]),
            Err(ReportError::TooFewModels(1))
        );
    }

    #[test]
    fn stage_tags_in_messages() {
        let e = at_stage(Stage::Ingest)("bad line");
        assert_eq!(e.to_string(), "[ingest] bad line");
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
