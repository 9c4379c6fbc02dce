//! Converters from the raw COIN and CrossTask annotation layouts to [`AnnotatedVideo`] records.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::{AnnotatedStep, AnnotatedVideo, PerceptionError, Split, VocabEntry, Vocabulary};
use crate::domain::{normalize_description, ActionId};

/// A converted dataset: the videos plus the vocabulary their step ids refer to.
#[derive(Clone, Debug, Default)]
pub struct ImportedDataset {
    pub videos: Vec<AnnotatedVideo>,
    pub vocabulary: Vocabulary,
}

impl ImportedDataset {
    /// Writes `videos.jsonl` and `vocab.jsonl` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), PerceptionError> {
        std::fs::create_dir_all(dir)?;
        super::write_jsonl(&dir.join("videos.jsonl"), &self.videos)?;
        self.vocabulary.save(&dir.join("vocab.jsonl"))
    }
}

/// `AssembleBed` -> `assemble bed`.
pub fn split_camel_case(name: &str) -> String {
    let mut out = String::with_capacity(name.len() + 4);
    let mut prev_lower = false;
    for ch in name.chars() {
        if ch.is_uppercase() && prev_lower {
            out.push(' ');
        }
        prev_lower = ch.is_lowercase() || ch.is_ascii_digit();
        out.extend(ch.to_lowercase());
    }
    normalize_description(&out.replace('_', " "))
}

#[derive(Deserialize)]
struct CoinRoot {
    database: BTreeMap<String, CoinVideo>,
}

#[derive(Deserialize)]
struct CoinVideo {
    class: String,
    subset: String,
    annotation: Vec<CoinSegment>,
}

#[derive(Deserialize)]
struct CoinSegment {
    id: String,
    segment: [f64; 2],
    label: String,
}

/// Converts a `COIN.json` annotation file.
///
/// Step ids are renumbered contiguously in ascending COIN step-id order, each tagged with its
/// task class. Videos whose `subset` is `training` go to the train split.
pub fn import_coin(path: &Path) -> Result<ImportedDataset, PerceptionError> {
    let text = std::fs::read_to_string(path)?;
    let root: CoinRoot = serde_json::from_str(&text)
        .map_err(|e| PerceptionError::Parse { path: path.display().to_string(), line: e.line(), source: e })?;

    // (task, normalized label) -> smallest raw COIN id seen
    let mut raw_steps: BTreeMap<(String, String), i64> = BTreeMap::new();
    for (vid, video) in &root.database {
        for (i, seg) in video.annotation.iter().enumerate() {
            let raw_id = seg.id.trim().parse::<i64>().map_err(|_| PerceptionError::Schema {
                path: format!("database.{vid}.annotation[{i}].id"),
                message: format!("expected an integer step id, got {:?}", seg.id),
            })?;
            let key = (video.class.clone(), normalize_description(&seg.label));
            let e = raw_steps.entry(key).or_insert(raw_id);
            *e = (*e).min(raw_id);
        }
    }
    let mut ordered = raw_steps.into_iter().collect::<Vec<_>>();
    ordered.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let mut index_of = BTreeMap::new();
    let mut vocabulary = Vocabulary::default();
    for (i, ((task, label), _)) in ordered.into_iter().enumerate() {
        vocabulary.entries.push(VocabEntry { index: i, description: label.clone(), task_name: Some(task.clone()) });
        index_of.insert((task, label), ActionId(i));
    }

    let mut videos = Vec::with_capacity(root.database.len());
    for (vid, video) in root.database {
        let mut segments = video.annotation;
        segments.sort_by(|a, b| a.segment[0].total_cmp(&b.segment[0]));
        let steps = segments
            .iter()
            .map(|s| AnnotatedStep {
                action: index_of[&(video.class.clone(), normalize_description(&s.label))],
                start_sec: s.segment[0],
                end_sec: s.segment[1],
            })
            .collect();
        videos.push(AnnotatedVideo {
            video_id: vid,
            goal: split_camel_case(&video.class),
            task_name: video.class,
            split: if video.subset == "training" { Split::Train } else { Split::Test },
            steps,
            clips: None,
            step_predictions: None,
        });
    }
    Ok(ImportedDataset { videos, vocabulary })
}

struct CrossTaskTask {
    id: String,
    name: String,
    steps: Vec<String>,
}

fn parse_crosstask_tasks(text: &str) -> Result<Vec<CrossTaskTask>, PerceptionError> {
    let lines = text.lines().map(str::trim).collect::<Vec<_>>();
    let mut tasks = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].is_empty() {
            i += 1;
            continue;
        }
        if i + 4 >= lines.len() {
            return Err(PerceptionError::Schema {
                path: format!("tasks_primary.txt:{}", i + 1),
                message: "truncated task block (expected id, name, url, step count, steps)".into(),
            });
        }
        let count = lines[i + 3].parse::<usize>().map_err(|_| PerceptionError::Schema {
            path: format!("tasks_primary.txt:{}", i + 4),
            message: format!("expected a step count, got {:?}", lines[i + 3]),
        })?;
        let steps = lines[i + 4].split(',').map(normalize_description).collect::<Vec<_>>();
        if steps.len() != count {
            return Err(PerceptionError::Schema {
                path: format!("tasks_primary.txt:{}", i + 5),
                message: format!("declared {count} steps, found {}", steps.len()),
            });
        }
        tasks.push(CrossTaskTask { id: lines[i].to_string(), name: lines[i + 1].to_string(), steps });
        i += 5;
    }
    Ok(tasks)
}

/// Converts a CrossTask release directory.
///
/// Expects `tasks_primary.txt` and `annotations/<task>_<video>.csv` (1-based step, start, end).
/// When `videos_val.csv` is present its videos form the test split and all others train;
/// otherwise every video is test.
pub fn import_crosstask(dir: &Path) -> Result<ImportedDataset, PerceptionError> {
    let tasks = parse_crosstask_tasks(&std::fs::read_to_string(dir.join("tasks_primary.txt"))?)?;
    let mut vocabulary = Vocabulary::default();
    let mut base: BTreeMap<String, (usize, &CrossTaskTask)> = BTreeMap::new();
    for task in &tasks {
        base.insert(task.id.clone(), (vocabulary.entries.len(), task));
        for s in &task.steps {
            let index = vocabulary.entries.len();
            vocabulary.entries.push(VocabEntry { index, description: s.clone(), task_name: Some(task.name.clone()) });
        }
    }

    let val_path = dir.join("videos_val.csv");
    let val: Option<std::collections::BTreeSet<String>> = if val_path.exists() {
        Some(
            std::fs::read_to_string(&val_path)?
                .lines()
                .filter_map(|l| l.split(',').nth(1).map(|v| v.trim().to_string()))
                .collect(),
        )
    } else {
        None
    };

    let mut files = std::fs::read_dir(dir.join("annotations"))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("csv"))
        .collect::<Vec<_>>();
    files.sort();

    let mut videos = Vec::with_capacity(files.len());
    for file in files {
        let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let Some((task_id, video_id)) = stem.split_once('_') else {
            return Err(PerceptionError::Schema {
                path: file.display().to_string(),
                message: "annotation file name must be <task>_<video>.csv".into(),
            });
        };
        let Some(&(offset, task)) = base.get(task_id) else {
            log::warn!("skipping {}: task {task_id} not in tasks_primary.txt", file.display());
            continue;
        };
        let mut steps = Vec::new();
        for (ln, line) in std::fs::read_to_string(&file)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let schema = |m: String| PerceptionError::Schema { path: format!("{}:{}", file.display(), ln + 1), message: m };
            let cols = line.split(',').map(str::trim).collect::<Vec<_>>();
            if cols.len() < 3 {
                return Err(schema(format!("expected step,start,end; got {line:?}")));
            }
            let step = cols[0].parse::<usize>().map_err(|_| schema(format!("bad step index {:?}", cols[0])))?;
            if step == 0 || step > task.steps.len() {
                return Err(schema(format!("step index {step} outside 1..={}", task.steps.len())));
            }
            let start_sec = cols[1].parse::<f64>().map_err(|_| schema(format!("bad start {:?}", cols[1])))?;
            let end_sec = cols[2].parse::<f64>().map_err(|_| schema(format!("bad end {:?}", cols[2])))?;
            steps.push(AnnotatedStep { action: ActionId(offset + step - 1), start_sec, end_sec });
        }
        steps.sort_by(|a, b| a.start_sec.total_cmp(&b.start_sec));
        let split = match &val {
            Some(v) if !v.contains(video_id) => Split::Train,
            _ => Split::Test,
        };
        videos.push(AnnotatedVideo {
            video_id: video_id.to_string(),
            task_name: task.name.clone(),
            goal: normalize_description(&task.name),
            split,
            steps,
            clips: None,
            step_predictions: None,
        });
    }
    Ok(ImportedDataset { videos, vocabulary })
}
