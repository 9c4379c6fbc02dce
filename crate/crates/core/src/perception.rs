//! Ingestion of precomputed visual-model outputs and the normalized dataset files.
//!
//! Nothing here runs a vision model. Clip-level predictions (VPA) and start/goal step
//! predictions (PP) arrive as files and are turned into [`Observation`]s.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::domain::{ActionId, AdmissibleActionSet, DomainError, GoalSpec, Observation, Setup, Step};

pub mod import;

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error("clip {clip} of video {video_id}: action {action} is not in the vocabulary")]
    UnknownClipAction { video_id: String, clip: usize, action: ActionId },
    #[error("clip {clip} of video {video_id}: {reason}")]
    BadClip { video_id: String, clip: usize, reason: String },
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("{path}:{line}: {source}")]
    Parse { path: String, line: usize, source: serde_json::Error },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One fixed-length window classified by the video model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipPrediction {
    pub start_sec: f64,
    pub end_sec: f64,
    pub action: ActionId,
    /// Carried through; planning uses the hard prediction only.
    #[serde(default = "full_confidence")]
    pub confidence: f64,
}

fn full_confidence() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipPredictionFile {
    pub video_id: String,
    pub clips: Vec<ClipPrediction>,
}

impl ClipPredictionFile {
    pub fn validate(&self) -> Result<(), PerceptionError> {
        let bad = |clip: usize, reason: String| PerceptionError::BadClip {
            video_id: self.video_id.clone(),
            clip,
            reason,
        };
        for (i, c) in self.clips.iter().enumerate() {
            if c.end_sec.partial_cmp(&c.start_sec) != Some(std::cmp::Ordering::Greater) {
                return Err(bad(i, format!("empty window [{}, {}]", c.start_sec, c.end_sec)));
            }
            if !(0.0..=1.0).contains(&c.confidence) {
                return Err(bad(i, format!("confidence {} outside [0, 1]", c.confidence)));
            }
            if i > 0 && c.start_sec < self.clips[i - 1].end_sec {
                return Err(bad(i, "clips overlap or are not sorted by start time".into()));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PerceptionError> {
        let text = std::fs::read_to_string(path)?;
        let file: Self = serde_json::from_str(&text)
            .map_err(|e| PerceptionError::Parse { path: path.display().to_string(), line: e.line(), source: e })?;
        file.validate()?;
        Ok(file)
    }
}

/// Collapses runs of consecutive clips with the same predicted action into one history step.
pub fn consolidate_history(
    clips: &ClipPredictionFile,
    vocab: &AdmissibleActionSet,
) -> Result<Observation, PerceptionError> {
    let mut steps: Vec<Step> = Vec::new();
    for (i, clip) in clips.clips.iter().enumerate() {
        let step = vocab.step(clip.action).map_err(|_| PerceptionError::UnknownClipAction {
            video_id: clips.video_id.clone(),
            clip: i,
            action: clip.action,
        })?;
        if steps.last().map(|s| s.action) != Some(clip.action) {
            steps.push(step);
        }
    }
    Ok(Observation::History { steps })
}

/// Start and goal step predicted from the two images of a PP sample.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepPredictionFile {
    pub sample_id: String,
    pub start_step: ActionId,
    pub goal_step: ActionId,
}

impl StepPredictionFile {
    /// Parses one record, naming the offending field on schema errors.
    pub fn from_json(text: &str) -> Result<Self, PerceptionError> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| PerceptionError::Schema { path: "$".into(), message: e.to_string() })?;
        Self::from_value(&value)
    }

    pub fn from_value(value: &Value) -> Result<Self, PerceptionError> {
        let obj = value
            .as_object()
            .ok_or_else(|| PerceptionError::Schema { path: "$".into(), message: "expected an object".into() })?;
        let field = |name: &str| {
            obj.get(name).ok_or_else(|| PerceptionError::Schema {
                path: format!("$.{name}"),
                message: "missing field".into(),
            })
        };
        let index = |name: &str| -> Result<ActionId, PerceptionError> {
            field(name)?.as_u64().map(|v| ActionId(v as usize)).ok_or_else(|| PerceptionError::Schema {
                path: format!("$.{name}"),
                message: "expected a non-negative integer action index".into(),
            })
        };
        let sample_id = field("sample_id")?
            .as_str()
            .ok_or_else(|| PerceptionError::Schema { path: "$.sample_id".into(), message: "expected a string".into() })?
            .to_string();
        Ok(Self { sample_id, start_step: index("start_step")?, goal_step: index("goal_step")? })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain struct serializes")
    }
}

/// Turns a PP step prediction into the start observation and goal.
pub fn load_pp_observation(
    file: &StepPredictionFile,
    vocab: &AdmissibleActionSet,
) -> Result<(Observation, GoalSpec), PerceptionError> {
    let start = vocab.step(file.start_step)?;
    let goal = vocab.step(file.goal_step)?;
    Ok((Observation::StartImageStep { step: start }, GoalSpec::GoalImageStep { step: goal }))
}

/// One row of the vocabulary file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub index: usize,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_name: Option<String>,
}

/// Every admissible action of a dataset, optionally grouped by task.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub entries: Vec<VocabEntry>,
}

impl Vocabulary {
    pub fn load(path: &Path) -> Result<Self, PerceptionError> {
        Ok(Self { entries: read_jsonl(path)? })
    }

    pub fn save(&self, path: &Path) -> Result<(), PerceptionError> {
        write_jsonl(path, &self.entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// All actions as one set; fails if two tasks share a description.
    pub fn global(&self) -> Result<AdmissibleActionSet, PerceptionError> {
        Ok(AdmissibleActionSet::from_indexed(
            self.entries.iter().map(|e| (ActionId(e.index), e.description.clone())).collect(),
        )?)
    }

    /// The admissible set for one task, or the global set when entries carry no task names.
    pub fn for_task(&self, task: &str) -> Result<AdmissibleActionSet, PerceptionError> {
        if self.entries.iter().all(|e| e.task_name.is_none()) {
            return self.global();
        }
        let entries = self
            .entries
            .iter()
            .filter(|e| e.task_name.as_deref() == Some(task))
            .map(|e| (ActionId(e.index), e.description.clone()))
            .collect::<Vec<_>>();
        if entries.is_empty() {
            return Err(PerceptionError::Schema {
                path: "task_name".into(),
                message: format!("no vocabulary entries for task {task:?}"),
            });
        }
        Ok(AdmissibleActionSet::scoped(task, entries)?)
    }

    /// Description of a global index.
    pub fn description_of(&self, id: ActionId) -> Option<&str> {
        self.entries.get(id.0).filter(|e| e.index == id.0).map(|e| e.description.as_str())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    #[default]
    Test,
}

/// One annotated step segment of a video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedStep {
    pub action: ActionId,
    pub start_sec: f64,
    pub end_sec: f64,
}

/// One video of the imported dataset, with its ground-truth step sequence and any
/// precomputed perception outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedVideo {
    pub video_id: String,
    pub task_name: String,
    pub goal: String,
    #[serde(default)]
    pub split: Split,
    pub steps: Vec<AnnotatedStep>,
    /// Per-clip action predictions covering the video.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clips: Option<Vec<ClipPrediction>>,
    /// Image-classifier prediction for each annotated step, aligned with `steps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_predictions: Option<Vec<ActionId>>,
}

impl AnnotatedVideo {
    pub fn actions(&self) -> Vec<ActionId> {
        self.steps.iter().map(|s| s.action).collect()
    }
}

/// One evaluation sample in the normalized line-delimited format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedSample {
    pub sample_id: String,
    pub task_name: String,
    /// Task-level goal description.
    pub goal: String,
    pub setup: Setup,
    pub horizon: usize,
    #[serde(default)]
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<Vec<ActionId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_step: Option<ActionId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_step: Option<ActionId>,
    pub ground_truth_plan: Vec<ActionId>,
}

impl NormalizedSample {
    pub fn to_query(&self, vocab: &AdmissibleActionSet) -> Result<crate::domain::PlanningQuery, PerceptionError> {
        let missing = |field: &str| PerceptionError::Schema {
            path: format!("{}.{field}", self.sample_id),
            message: format!("required for {} samples", self.setup),
        };
        let query = match self.setup {
            Setup::Vpa => {
                let history = self.history.as_ref().ok_or_else(|| missing("history"))?;
                let steps = history.iter().map(|&a| vocab.step(a)).collect::<Result<Vec<_>, _>>()?;
                crate::domain::PlanningQuery::vpa(&self.task_name, &self.goal, steps, self.horizon)?
            }
            Setup::Pp => {
                let file = StepPredictionFile {
                    sample_id: self.sample_id.clone(),
                    start_step: self.start_step.ok_or_else(|| missing("start_step"))?,
                    goal_step: self.goal_step.ok_or_else(|| missing("goal_step"))?,
                };
                let (observation, goal) = load_pp_observation(&file, vocab)?;
                crate::domain::PlanningQuery::new(observation, goal, self.horizon, &self.task_name, Setup::Pp)?
            }
        };
        Ok(query)
    }
}

/// Reads one JSON record per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PerceptionError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| PerceptionError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            source: e,
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), PerceptionError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Loads every `*.json` clip prediction file of a directory, keyed by video id.
pub fn load_clip_predictions(dir: &Path) -> Result<BTreeMap<String, ClipPredictionFile>, PerceptionError> {
    let mut out = BTreeMap::new();
    let mut paths = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("json"))
        .collect::<Vec<_>>();
    paths.sort();
    for p in paths {
        let f = ClipPredictionFile::load(&p)?;
        out.insert(f.video_id.clone(), f);
    }
    Ok(out)
}

/// Loads a line-delimited step prediction file keyed by sample id.
pub fn load_step_predictions(path: &Path) -> Result<BTreeMap<String, StepPredictionFile>, PerceptionError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = StepPredictionFile::from_json(line).map_err(|e| match e {
            PerceptionError::Schema { path: p, message } => {
                PerceptionError::Schema { path: format!("line {}: {p}", i + 1), message }
            }
            other => other,
        })?;
        out.insert(rec.sample_id.clone(), rec);
    }
    Ok(out)
}
