//! Metrics, sample generation and experiment runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assessment::{build_task_graph, ValueMask, ValueWeights};
use crate::domain::{ActionId, AdmissibleActionSet, NodeId, Setup, ValueBreakdown};
use crate::grounding::{EmbeddingProvider, Grounder, GroundingError};
use crate::num::Score;
use crate::perception::{
    consolidate_history, write_jsonl, AnnotatedVideo, ClipPredictionFile, NormalizedSample, PerceptionError, Split,
    Vocabulary,
};
use crate::proposer::prompt::shot_limit;
use crate::proposer::{BackendError, CompletionBackend, InContextExample, Proposer, SamplingConfig};
use crate::search::{Planner, SearchConfig, SearchConfigError, SearchTrace};

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("plan lengths differ: predicted {pred}, ground truth {gt}")]
    LengthMismatch { pred: usize, gt: usize },
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Grounding(#[from] GroundingError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Config(#[from] SearchConfigError),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn same_length(pred: &[ActionId], gt: &[ActionId]) -> Result<(), EvaluationError> {
    if pred.len() != gt.len() {
        return Err(EvaluationError::LengthMismatch { pred: pred.len(), gt: gt.len() });
    }
    Ok(())
}

/// 1 when the plans are identical in order, else 0.
pub fn success_rate<S: Score>(pred: &[ActionId], gt: &[ActionId]) -> Result<S, EvaluationError> {
    same_length(pred, gt)?;
    Ok(if pred == gt { S::one() } else { S::zero() })
}

/// Fraction of positions where the plans agree.
pub fn mean_accuracy<S: Score>(pred: &[ActionId], gt: &[ActionId]) -> Result<S, EvaluationError> {
    same_length(pred, gt)?;
    if gt.is_empty() {
        return Ok(S::one());
    }
    let hits = pred.iter().zip(gt).filter(|(a, b)| a == b).count();
    Ok(S::of_usize(hits) / S::of_usize(gt.len()))
}

/// Intersection over union of the two plans taken as sets of unique actions.
pub fn mean_iou<S: Score>(pred: &[ActionId], gt: &[ActionId]) -> Result<S, EvaluationError> {
    same_length(pred, gt)?;
    let p = pred.iter().collect::<BTreeSet<_>>();
    let g = gt.iter().collect::<BTreeSet<_>>();
    let union = p.union(&g).count();
    if union == 0 {
        return Ok(S::one());
    }
    Ok(S::of_usize(p.intersection(&g).count()) / S::of_usize(union))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Score")]
pub struct SampleMetrics<S> {
    pub sr: S,
    pub macc: S,
    pub miou: S,
}

pub fn sample_metrics<S: Score>(pred: &[ActionId], gt: &[ActionId]) -> Result<SampleMetrics<S>, EvaluationError> {
    Ok(SampleMetrics { sr: success_rate(pred, gt)?, macc: mean_accuracy(pred, gt)?, miou: mean_iou(pred, gt)? })
}

/// Means over the samples that completed, plus coverage of the whole set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Score")]
pub struct MetricSummary<S> {
    pub sr: S,
    pub macc: S,
    pub miou: S,
    pub sample_count: usize,
    pub failed: usize,
}

impl<S: Score> MetricSummary<S> {
    pub fn coverage(&self) -> f64 {
        let total = self.sample_count + self.failed;
        if total == 0 {
            return 1.0;
        }
        self.sample_count as f64 / total as f64
    }
}

/// Arithmetic means of per-sample metrics; failures only count toward coverage.
pub fn aggregate<S: Score>(metrics: &[Option<SampleMetrics<S>>]) -> MetricSummary<S> {
    let done = metrics.iter().flatten().collect::<Vec<_>>();
    let n = done.len();
    let mean = |f: fn(&SampleMetrics<S>) -> S| {
        if n == 0 {
            S::zero()
        } else {
            done.iter().map(|m| f(m)).sum::<S>() / S::of_usize(n)
        }
    };
    MetricSummary {
        sr: mean(|m| m.sr),
        macc: mean(|m| m.macc),
        miou: mean(|m| m.miou),
        sample_count: n,
        failed: metrics.len() - n,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Score")]
pub struct MetricReport<S> {
    pub overall: MetricSummary<S>,
    pub by_horizon: BTreeMap<usize, MetricSummary<S>>,
}

/// Where the observed steps of a sample come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistorySource {
    /// Perception outputs stored with each video (clip or step predictions).
    #[default]
    Predicted,
    /// Annotated steps.
    GroundTruth,
}

impl std::str::FromStr for HistorySource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "predicted" => Ok(Self::Predicted),
            "ground_truth" | "gt" => Ok(Self::GroundTruth),
            other => Err(format!("unknown history source {other:?} (expected predicted or ground_truth)")),
        }
    }
}

/// A video or window that produced no sample, and why.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedSample {
    pub video_id: String,
    pub reason: String,
}

/// Cuts test videos into evaluation samples.
///
/// VPA: every step boundary with at least one step before it and `horizon` steps after it.
/// PP: every window of `horizon` consecutive steps; start and goal are its first and last step.
pub fn make_samples(
    videos: &[AnnotatedVideo],
    vocab: &Vocabulary,
    setup: Setup,
    horizon: usize,
    history: HistorySource,
) -> Result<(Vec<NormalizedSample>, Vec<SkippedSample>), EvaluationError> {
    let min_horizon = if setup == Setup::Pp { 2 } else { 1 };
    if horizon < min_horizon {
        return Err(EvaluationError::Invalid(format!("{setup} samples need horizon >= {min_horizon}")));
    }
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    let skip = |skipped: &mut Vec<SkippedSample>, v: &AnnotatedVideo, reason: String| {
        log::info!("skipping {}: {reason}", v.video_id);
        skipped.push(SkippedSample { video_id: v.video_id.clone(), reason });
    };
    for v in videos.iter().filter(|v| v.split == Split::Test) {
        let actions = v.actions();
        let needed = if setup == Setup::Vpa { horizon + 1 } else { horizon };
        if actions.len() < needed {
            skip(&mut skipped, v, format!("{} annotated steps, {setup} at T={horizon} needs {needed}", actions.len()));
            continue;
        }
        let base = NormalizedSample {
            sample_id: String::new(),
            task_name: v.task_name.clone(),
            goal: v.goal.clone(),
            setup,
            horizon,
            split: Split::Test,
            history: None,
            start_step: None,
            goal_step: None,
            ground_truth_plan: Vec::new(),
        };
        match setup {
            Setup::Vpa => {
                let vocab_set = vocab.for_task(&v.task_name)?;
                for cut in 1..=actions.len() - horizon {
                    let observed = match history {
                        HistorySource::GroundTruth => actions[..cut].to_vec(),
                        HistorySource::Predicted => {
                            let Some(clips) = &v.clips else {
                                skip(&mut skipped, v, "no clip predictions for a predicted history".into());
                                break;
                            };
                            let boundary = v.steps[cut].start_sec;
                            let file = ClipPredictionFile {
                                video_id: v.video_id.clone(),
                                clips: clips.iter().filter(|c| c.end_sec <= boundary).cloned().collect(),
                            };
                            match consolidate_history(&file, &vocab_set)? {
                                crate::domain::Observation::History { steps } => steps.iter().map(|s| s.action).collect(),
                                crate::domain::Observation::StartImageStep { .. } => unreachable!("history kind"),
                            }
                        }
                    };
                    samples.push(NormalizedSample {
                        sample_id: format!("{}/vpa/T{horizon}/c{cut}", v.video_id),
                        history: Some(observed),
                        ground_truth_plan: actions[cut..cut + horizon].to_vec(),
                        ..base.clone()
                    });
                }
            }
            Setup::Pp => {
                for start in 0..=actions.len() - horizon {
                    let end = start + horizon - 1;
                    let (s, g) = match history {
                        HistorySource::GroundTruth => (actions[start], actions[end]),
                        HistorySource::Predicted => match &v.step_predictions {
                            Some(p) if p.len() == actions.len() => (p[start], p[end]),
                            Some(p) => {
                                skip(&mut skipped, v, format!("{} step predictions for {} steps", p.len(), actions.len()));
                                break;
                            }
                            None => {
                                skip(&mut skipped, v, "no step predictions for predicted start/goal".into());
                                break;
                            }
                        },
                    };
                    samples.push(NormalizedSample {
                        sample_id: format!("{}/pp/T{horizon}/w{start}", v.video_id),
                        start_step: Some(s),
                        goal_step: Some(g),
                        ground_truth_plan: actions[start..=end].to_vec(),
                        ..base.clone()
                    });
                }
            }
        }
    }
    Ok((samples, skipped))
}

/// The first `n` training videos of a task, by video id.
pub fn training_examples<'a>(videos: &'a [AnnotatedVideo], task: &str, n: usize) -> Vec<&'a AnnotatedVideo> {
    let mut train = videos.iter().filter(|v| v.split == Split::Train && v.task_name == task).collect::<Vec<_>>();
    train.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    train.truncate(n);
    train
}

/// Everything fixed for one run apart from the backends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound = "S: Score")]
pub struct ExperimentConfig<S> {
    pub setup: Setup,
    pub horizon: usize,
    /// Training plans per task used for the prompt and the task graph; 0 is zero-shot.
    pub shots: usize,
    pub history: HistorySource,
    pub search: SearchConfig<S>,
    pub sampling: SamplingConfig,
    /// Samples evaluated concurrently.
    pub max_in_flight: usize,
}

impl<S: Score> Default for ExperimentConfig<S> {
    fn default() -> Self {
        Self {
            setup: Setup::Vpa,
            horizon: 3,
            shots: 0,
            history: HistorySource::Predicted,
            search: SearchConfig::default(),
            sampling: SamplingConfig::default(),
            max_in_flight: 8,
        }
    }
}

/// One line of `results.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Score")]
pub struct ResultRecord<S> {
    pub sample_id: String,
    pub setup: Setup,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub pred: Vec<ActionId>,
    pub gt: Vec<ActionId>,
    pub sr: Option<S>,
    pub macc: Option<S>,
    pub miou: Option<S>,
    /// Scores of the steps on the selected path, first step first.
    pub value_breakdowns: Vec<ValueBreakdown<S>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl<S: Score> ResultRecord<S> {
    pub fn metrics(&self) -> Option<SampleMetrics<S>> {
        Some(SampleMetrics { sr: self.sr?, macc: self.macc?, miou: self.miou? })
    }
}

/// One line of `traces.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Score")]
pub struct TraceRecord<S> {
    pub sample_id: String,
    pub trace: Option<SearchTrace<S>>,
}

/// Settings that identify a run, written at the top of every report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Score")]
pub struct ReportHeader<S> {
    pub setup: Setup,
    pub horizon: usize,
    pub shots: usize,
    pub history: HistorySource,
    pub mask: String,
    /// Value functions that actually contribute: the mask minus anything disabled by the data.
    pub enabled_components: Vec<String>,
    pub weights: ValueWeights<S>,
    pub k_samples: usize,
    pub beam_width: usize,
    pub seed: u64,
    pub backend: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Score")]
pub struct RunReport<S> {
    pub header: ReportHeader<S>,
    pub metrics: MetricReport<S>,
}

pub struct RunOutput<S: Score> {
    pub report: RunReport<S>,
    pub results: Vec<ResultRecord<S>>,
    pub traces: Vec<TraceRecord<S>>,
}

/// Path breakdowns from the root to the selected leaf of a trace.
pub fn selected_breakdowns<S: Score>(trace: &SearchTrace<S>) -> Vec<ValueBreakdown<S>> {
    let nodes = trace
        .depths
        .iter()
        .flat_map(|d| d.nodes.iter())
        .map(|n| (n.node, n))
        .collect::<BTreeMap<NodeId, _>>();
    let mut out = Vec::new();
    let mut cur = trace.selected;
    while let Some(id) = cur {
        let n = nodes[&id];
        out.push(n.values);
        cur = n.parent;
    }
    out.reverse();
    out
}

/// A dataset plus the services needed to plan over it.
pub struct Experiment<'a, S: Score> {
    pub videos: &'a [AnnotatedVideo],
    pub vocab: &'a Vocabulary,
    pub backend: Arc<dyn CompletionBackend>,
    pub embeddings: Arc<dyn EmbeddingProvider>,
    pub backend_label: String,
    pub config: ExperimentConfig<S>,
}

impl<S: Score> Experiment<'_, S> {
    /// Planner for one task: its vocabulary, few-shot examples and task graph.
    pub fn planner_for(&self, task: &str) -> Result<Planner<S>, EvaluationError> {
        let actions: AdmissibleActionSet = self.vocab.for_task(task)?;
        let grounder = Grounder::new(&actions, self.embeddings.clone())?;
        let train = training_examples(self.videos, task, self.config.shots);
        let describe = |v: &AnnotatedVideo| -> Result<InContextExample, EvaluationError> {
            let plan = v
                .actions()
                .iter()
                .map(|&a| {
                    self.vocab
                        .description_of(a)
                        .map(str::to_string)
                        .ok_or_else(|| EvaluationError::Invalid(format!("video {} uses unknown action {a}", v.video_id)))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(InContextExample { goal: v.goal.clone(), plan })
        };
        let examples = train
            .iter()
            .take(shot_limit(self.config.setup))
            .map(|v| describe(v))
            .collect::<Result<Vec<_>, _>>()?;
        let graph = build_task_graph(&train.iter().map(|v| v.actions()).collect::<Vec<_>>());
        let proposer = Proposer::new(self.backend.clone(), self.config.sampling.clone())?;
        Ok(Planner::new(proposer, Arc::new(grounder), self.config.search.clone())?
            .with_task_graph(Arc::new(graph))
            .with_examples(examples))
    }

    fn header(&self, enabled: Vec<String>) -> ReportHeader<S> {
        let search = &self.config.search;
        ReportHeader {
            setup: self.config.setup,
            horizon: self.config.horizon,
            shots: self.config.shots,
            history: self.config.history,
            mask: search.mask.to_string(),
            enabled_components: enabled,
            weights: search.weights.masked(search.mask),
            k_samples: search.k_samples,
            beam_width: search.beam_width,
            seed: search.seed,
            backend: self.backend_label.clone(),
        }
    }

    /// Plans every sample and scores it against its ground truth.
    pub fn run(&self, samples: &[NormalizedSample]) -> Result<RunOutput<S>, EvaluationError> {
        let tasks = samples.iter().map(|s| s.task_name.clone()).collect::<BTreeSet<_>>();
        let mut planners = BTreeMap::new();
        for task in &tasks {
            planners.insert(task.clone(), self.planner_for(task)?);
        }
        let enabled = match planners.values().next() {
            Some(p) => p.enabled_components(),
            None => {
                // No samples: report what the mask would enable on this dataset.
                let mut names = self.config.search.mask.components().into_iter().map(String::from).collect::<Vec<_>>();
                if self.config.shots == 0 {
                    names.retain(|c| c != "TG");
                }
                names
            }
        };

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.max_in_flight.max(1))
            .build()
            .map_err(|e| EvaluationError::Invalid(e.to_string()))?;
        let outcomes: Vec<(ResultRecord<S>, TraceRecord<S>)> = pool.install(|| {
            samples.par_iter().map(|sample| self.run_sample(&planners[&sample.task_name], sample)).collect()
        });
        let (results, traces): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();

        let mut by_h: BTreeMap<usize, Vec<Option<SampleMetrics<S>>>> = BTreeMap::new();
        for r in &results {
            by_h.entry(r.horizon).or_default().push(r.metrics());
        }
        let overall = aggregate(&results.iter().map(ResultRecord::metrics).collect::<Vec<_>>());
        let by_horizon = by_h.into_iter().map(|(h, m)| (h, aggregate(&m))).collect();
        Ok(RunOutput {
            report: RunReport { header: self.header(enabled), metrics: MetricReport { overall, by_horizon } },
            results,
            traces,
        })
    }

    fn run_sample(&self, planner: &Planner<S>, sample: &NormalizedSample) -> (ResultRecord<S>, TraceRecord<S>) {
        let mut record = ResultRecord {
            sample_id: sample.sample_id.clone(),
            setup: sample.setup,
            horizon: sample.horizon,
            pred: Vec::new(),
            gt: sample.ground_truth_plan.clone(),
            sr: None,
            macc: None,
            miou: None,
            value_breakdowns: Vec::new(),
            error: None,
        };
        let query = match sample.to_query(planner.actions()) {
            Ok(q) => q,
            Err(e) => {
                record.error = Some(e.to_string());
                return (record, TraceRecord { sample_id: sample.sample_id.clone(), trace: None });
            }
        };
        match planner.plan(&query) {
            Ok((plan, trace)) => {
                record.pred = plan.ids();
                match sample_metrics::<S>(&record.pred, &record.gt) {
                    Ok(m) => {
                        record.sr = Some(m.sr);
                        record.macc = Some(m.macc);
                        record.miou = Some(m.miou);
                    }
                    Err(e) => record.error = Some(e.to_string()),
                }
                record.value_breakdowns = selected_breakdowns(&trace);
                (record, TraceRecord { sample_id: sample.sample_id.clone(), trace: Some(trace) })
            }
            Err(e) => {
                log::warn!("sample {} failed: {e}", sample.sample_id);
                record.error = Some(e.to_string());
                let trace = e.trace().cloned();
                (record, TraceRecord { sample_id: sample.sample_id.clone(), trace })
            }
        }
    }
}

fn pct<S: Score>(v: S) -> String {
    format!("{:.2}", v.as_f64() * 100.0)
}

/// Plain-text results table with one row per horizon.
pub fn summary_table<S: Score>(report: &RunReport<S>) -> String {
    let h = &report.header;
    let mut out = String::new();
    let _ = writeln!(out, "setup: {}  shots: {}  history: {:?}", h.setup, h.shots, h.history);
    let _ = writeln!(out, "enabled: {}  K: {}  beam: {}  seed: {}", h.enabled_components.join(","), h.k_samples, h.beam_width, h.seed);
    let _ = writeln!(out);
    let _ = writeln!(out, "| T | SR | mAcc | mIoU | samples | failed |");
    let _ = writeln!(out, "|---|----|------|------|---------|--------|");
    for (t, m) in &report.metrics.by_horizon {
        let _ = writeln!(out, "| {t} | {} | {} | {} | {} | {} |", pct(m.sr), pct(m.macc), pct(m.miou), m.sample_count, m.failed);
    }
    out
}

/// Writes `results.jsonl`, `traces.jsonl`, `report.json` and `summary.md`.
pub fn write_run<S: Score>(dir: &Path, output: &RunOutput<S>) -> Result<(), EvaluationError> {
    std::fs::create_dir_all(dir)?;
    write_jsonl(&dir.join("results.jsonl"), &output.results)?;
    write_jsonl(&dir.join("traces.jsonl"), &output.traces)?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&output.report)? + "\n")?;
    std::fs::write(dir.join("summary.md"), summary_table(&output.report))?;
    Ok(())
}

/// One row of an ablation sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub row: usize,
    pub mask: String,
    pub enabled_components: Vec<String>,
}

/// Runs the experiment once per mask, writing each run under `dir/row<i>`.
pub fn run_ablation<S: Score>(
    experiment: &Experiment<'_, S>,
    samples: &[NormalizedSample],
    masks: &[ValueMask],
    dir: Option<&Path>,
) -> Result<(Vec<AblationRow>, Vec<RunReport<S>>), EvaluationError> {
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for (i, mask) in masks.iter().enumerate() {
        let mut config = experiment.config.clone();
        config.search.mask = *mask;
        let run = Experiment {
            videos: experiment.videos,
            vocab: experiment.vocab,
            backend: experiment.backend.clone(),
            embeddings: experiment.embeddings.clone(),
            backend_label: experiment.backend_label.clone(),
            config,
        };
        let out = run.run(samples)?;
        if let Some(d) = dir {
            write_run(&d.join(format!("row{}", i + 1)), &out)?;
        }
        rows.push(AblationRow {
            row: i + 1,
            mask: mask.to_string(),
            enabled_components: out.report.header.enabled_components.clone(),
        });
        reports.push(out.report);
    }
    Ok((rows, reports))
}
