//! Synthetic procedural worlds and a simulated language-model backend.
//!
//! A world is a first-order transition graph over `C` generated actions. Every action has one
//! dominant successor whose probability beats all the others, and each task's canonical plan
//! follows dominant successors from its first step. The [`OracleBackend`] answers the planner's
//! real prompts from that graph, blurred by a noise level in `[0, 1]`.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;
use std::path::Path;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::assessment::{build_task_graph, ValueMask, ValueWeights};
use crate::domain::{ActionId, AdmissibleActionSet, PlanningQuery, Setup};
use crate::evaluation::{sample_metrics, selected_breakdowns, ResultRecord};
use crate::grounding::{normalize_text, CachedVector, EmbeddingCache, EmbeddingProvider, Grounder, HashEmbedder};
use crate::perception::{write_jsonl, AnnotatedStep, ClipPrediction, AnnotatedVideo, Split, VocabEntry, Vocabulary};
use crate::proposer::mock::choice;
use crate::proposer::prompt::{parse_prompt, PromptKind};
use crate::proposer::{
    BackendError, CompletionBackend, CompletionRequest, CompletionResponse, InContextExample, Proposer, SamplingConfig,
};
use crate::search::{PathAggregation, Planner, SearchConfig};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulator configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Perception(#[from] crate::perception::PerceptionError),
    #[error(transparent)]
    Grounding(#[from] crate::grounding::GroundingError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Search(#[from] crate::search::SearchConfigError),
}

const VERBS: [&str; 16] = [
    "open", "close", "cut", "pour", "stir", "wipe", "attach", "remove", "fold", "press", "rinse", "tighten", "lift",
    "measure", "spread", "check",
];
const NOUNS: [&str; 16] = [
    "lid", "board", "pipe", "bottle", "cable", "panel", "bowl", "screw", "sheet", "valve", "brush", "frame", "hose",
    "filter", "drawer", "wheel",
];

/// Deterministic RNG keyed by any sequence of byte strings.
pub fn keyed_rng(parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Generation parameters beyond the essentials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldParams {
    pub seed: u64,
    pub actions: usize,
    pub branching: usize,
    pub min_plan_len: usize,
    pub max_plan_len: usize,
    pub tasks: usize,
    /// Probability of each action's dominant successor.
    pub dominant: f64,
    /// Random walks per task emitted as training videos.
    pub train_per_task: usize,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            seed: 0,
            actions: 8,
            branching: 3,
            min_plan_len: 5,
            max_plan_len: 8,
            tasks: 4,
            dominant: 0.6,
            train_per_task: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub name: String,
    pub goal: String,
    pub canonical: Vec<ActionId>,
}

/// Serialized form of a world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub params: WorldParams,
    pub descriptions: Vec<String>,
    /// `successors[x]` lists `(y, G(y|x))`, dominant first.
    pub successors: Vec<Vec<(ActionId, f64)>>,
    pub tasks: Vec<SyntheticTask>,
}

/// Builds a world from a seed; equal parameters always give the same world.
pub fn generate_world(seed: u64, actions: usize, branching: usize, horizon_range: RangeInclusive<usize>) -> Result<SyntheticWorld, SimError> {
    generate_world_with(WorldParams {
        seed,
        actions,
        branching,
        min_plan_len: *horizon_range.start(),
        max_plan_len: *horizon_range.end(),
        ..WorldParams::default()
    })
}

pub fn generate_world_with(params: WorldParams) -> Result<SyntheticWorld, SimError> {
    let c = params.actions;
    let b = params.branching;
    if c < 2 {
        return Err(SimError::Config(format!("need at least 2 actions, got {c}")));
    }
    if c > VERBS.len() * NOUNS.len() {
        return Err(SimError::Config(format!("at most {} actions are supported", VERBS.len() * NOUNS.len())));
    }
    if b < 1 || b > c {
        return Err(SimError::Config(format!("branching must lie in 1..={c}, got {b}")));
    }
    if params.min_plan_len < 1 || params.min_plan_len > params.max_plan_len {
        return Err(SimError::Config(format!(
            "plan length range {}..={} is empty",
            params.min_plan_len, params.max_plan_len
        )));
    }
    if params.tasks < 1 {
        return Err(SimError::Config("need at least one task".into()));
    }
    let minor = if b > 1 { (1.0 - params.dominant) / (b - 1) as f64 } else { 0.0 };
    let dominant = if b == 1 { 1.0 } else { params.dominant };
    if !(dominant > minor && dominant <= 1.0) {
        return Err(SimError::Config(format!(
            "dominant weight {} must exceed the minor weight {minor} and be at most 1",
            params.dominant
        )));
    }

    let mut rng = keyed_rng(&[b"world", &params.seed.to_le_bytes()]);
    let mut names = VERBS.iter().flat_map(|v| NOUNS.iter().map(move |n| format!("{v} the {n}"))).collect::<Vec<_>>();
    names.shuffle(&mut rng);
    names.truncate(c);

    let mut successors = Vec::with_capacity(c);
    for x in 0..c {
        let mut others = (0..c).filter(|&y| y != x).collect::<Vec<_>>();
        others.shuffle(&mut rng);
        let mut chosen = others.into_iter().take(b).collect::<Vec<_>>();
        if chosen.len() < b {
            // branching == C: the action may follow itself, but never as the dominant successor
            chosen.push(x);
        }
        let row = chosen
            .into_iter()
            .enumerate()
            .map(|(i, y)| (ActionId(y), if i == 0 { dominant } else { minor }))
            .collect::<Vec<_>>();
        assert!(row.iter().skip(1).all(|&(_, p)| p < row[0].1), "dominant successor must beat every other successor");
        assert_ne!(row[0].0, ActionId(x), "dominant successor must differ from the action");
        successors.push(row);
    }

    let mut starts = (0..c).collect::<Vec<_>>();
    starts.shuffle(&mut rng);
    let tasks = (0..params.tasks)
        .map(|i| {
            let len = rng.random_range(params.min_plan_len..=params.max_plan_len);
            let mut plan = vec![ActionId(starts[i % c])];
            while plan.len() < len {
                plan.push(successors[plan.last().unwrap().0][0].0);
            }
            let last = &names[plan.last().unwrap().0];
            SyntheticTask { name: format!("task{i}"), goal: format!("finish by doing {last}"), canonical: plan }
        })
        .collect();
    Ok(SyntheticWorld { params, descriptions: names, successors, tasks })
}

impl SyntheticWorld {
    pub fn len(&self) -> usize {
        self.descriptions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptions.is_empty()
    }

    pub fn actions(&self) -> AdmissibleActionSet {
        AdmissibleActionSet::new(self.descriptions.iter().map(String::as_str)).expect("generated names are unique")
    }

    /// True transition probability G(to | from).
    pub fn transition(&self, from: ActionId, to: ActionId) -> f64 {
        self.successors[from.0].iter().find(|(y, _)| *y == to).map_or(0.0, |(_, p)| *p)
    }

    /// Proposal distribution after `from`: the true graph mixed with a uniform distribution.
    pub fn proposal_distribution(&self, from: Option<ActionId>, noise: f64) -> Vec<f64> {
        let c = self.len() as f64;
        (0..self.len())
            .map(|y| {
                let g = from.map_or(1.0 / c, |x| self.transition(x, ActionId(y)));
                (1.0 - noise) * g + noise / c
            })
            .collect()
    }

    /// Geometric-mean step likelihood of `plan` after `anchor`, clamped away from 0 and 1.
    pub fn plan_likelihood(&self, anchor: Option<ActionId>, plan: &[ActionId]) -> f64 {
        if plan.is_empty() {
            return 0.5;
        }
        let mut log = 0.0;
        let mut prev = anchor;
        for &a in plan {
            let p = prev.map_or(1.0 / self.len() as f64, |x| self.transition(x, a));
            log += p.max(1e-300).ln();
            prev = Some(a);
        }
        (log / plan.len() as f64).exp().clamp(1e-9, 1.0 - 1e-9)
    }

    fn walk(&self, start: ActionId, len: usize, rng: &mut ChaCha8Rng) -> Vec<ActionId> {
        let mut plan = vec![start];
        while plan.len() < len {
            let row = &self.successors[plan.last().unwrap().0];
            let dist = WeightedIndex::new(row.iter().map(|(_, p)| *p)).expect("rows have positive weights");
            plan.push(row[rng.sample(&dist)].0);
        }
        plan
    }

    /// One test video per task (its canonical plan) and `train_per_task` random walks per task.
    pub fn videos(&self) -> Vec<AnnotatedVideo> {
        let mut rng = keyed_rng(&[b"videos", &self.params.seed.to_le_bytes()]);
        let mut out = Vec::new();
        let make = |id: String, task: &SyntheticTask, split: Split, plan: &[ActionId]| AnnotatedVideo {
            video_id: id,
            task_name: task.name.clone(),
            goal: task.goal.clone(),
            split,
            steps: plan
                .iter()
                .enumerate()
                .map(|(i, &a)| AnnotatedStep { action: a, start_sec: 10.0 * i as f64, end_sec: 10.0 * i as f64 + 9.0 })
                .collect(),
            // perfect perception: nine one-second clips inside every step
            clips: Some(
                plan.iter()
                    .enumerate()
                    .flat_map(|(i, &a)| {
                        (0..9).map(move |j| {
                            let start = 10.0 * i as f64 + j as f64;
                            ClipPrediction { start_sec: start, end_sec: start + 1.0, action: a, confidence: 1.0 }
                        })
                    })
                    .collect(),
            ),
            step_predictions: Some(plan.to_vec()),
        };
        for task in &self.tasks {
            out.push(make(format!("{}-test", task.name), task, Split::Test, &task.canonical));
            for j in 0..self.params.train_per_task {
                let plan = self.walk(task.canonical[0], task.canonical.len(), &mut rng);
                out.push(make(format!("{}-train{j:03}", task.name), task, Split::Train, &plan));
            }
        }
        out
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary {
            entries: self
                .descriptions
                .iter()
                .enumerate()
                .map(|(i, d)| VocabEntry { index: i, description: d.clone(), task_name: None })
                .collect(),
        }
    }

    /// Writes `world.json`, `videos.jsonl` and `vocab.jsonl`.
    pub fn save(&self, dir: &Path) -> Result<(), SimError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("world.json"), serde_json::to_string_pretty(self)? + "\n")?;
        write_jsonl(&dir.join("videos.jsonl"), &self.videos())?;
        self.vocabulary().save(&dir.join("vocab.jsonl"))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Backend answering proposal and evaluation prompts from a world's true graph.
///
/// Proposals are drawn from `(1 - noise) * G + noise * uniform`, each token scored with the log
/// of the drawn action's probability. Evaluations report YES with probability
/// `(1 - noise) * L + noise * u`, where `L` is the geometric-mean likelihood of the planned
/// steps and `u` is uniform. Answers depend only on the request seed and prompt text.
pub struct OracleBackend {
    world: Arc<SyntheticWorld>,
    actions: AdmissibleActionSet,
    noise: f64,
}

impl OracleBackend {
    pub fn new(world: Arc<SyntheticWorld>, noise: f64) -> Self {
        let actions = world.actions();
        Self { world, actions, noise: noise.clamp(0.0, 1.0) }
    }

    fn id(&self, text: &str) -> Result<ActionId, BackendError> {
        self.actions
            .lookup(text)
            .ok_or_else(|| BackendError::Protocol(format!("prompt mentions unknown step {text:?}")))
    }
}

impl CompletionBackend for OracleBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let parsed = parse_prompt(&request.prompt)
            .ok_or_else(|| BackendError::Protocol("prompt has no task block".into()))?;
        let seed = request.seed.unwrap_or(0).to_le_bytes();
        match parsed.kind {
            Some(PromptKind::NextAction) => {
                let last = parsed.last_step().map(|s| self.id(s)).transpose()?;
                let q = self.world.proposal_distribution(last, self.noise);
                let dist = WeightedIndex::new(&q).expect("proposal weights are positive");
                let mut rng = keyed_rng(&[b"propose", &seed, &(request.n as u64).to_le_bytes(), request.prompt.as_bytes()]);
                let choices = (0..request.n)
                    .map(|i| {
                        let y = rng.sample(&dist);
                        let text = &self.world.descriptions[y];
                        let lp = q[y].ln();
                        choice(i, text, vec![lp; text.split_whitespace().count()], BTreeMap::new())
                    })
                    .collect();
                Ok(CompletionResponse { choices })
            }
            Some(PromptKind::PlanEvaluation) => {
                let anchor = parsed.anchor().map(|s| self.id(s)).transpose()?;
                let planned = parsed.planned.iter().map(|s| self.id(s)).collect::<Result<Vec<_>, _>>()?;
                let likelihood = self.world.plan_likelihood(anchor, &planned);
                let u: f64 = keyed_rng(&[b"evaluate", &seed, request.prompt.as_bytes()]).random();
                let p = ((1.0 - self.noise) * likelihood + self.noise * u).clamp(1e-9, 1.0 - 1e-9);
                let top = [("YES".to_string(), p.ln()), ("NO".to_string(), (1.0 - p).ln())].into_iter().collect();
                let answer = if p >= 0.5 { "YES" } else { "NO" };
                Ok(CompletionResponse { choices: vec![choice(0, answer, vec![p.max(1.0 - p).ln()], top)] })
            }
            None => Err(BackendError::Protocol("prompt has no answer cue".into())),
        }
    }
}

/// Embedding provider for a world: exact descriptions are precomputed, anything else is hashed.
pub fn world_embeddings(world: &SyntheticWorld) -> Arc<dyn EmbeddingProvider> {
    let hasher = HashEmbedder::default();
    let texts = world.descriptions.iter().map(|d| normalize_text(d)).collect::<Vec<_>>();
    let vectors = hasher.embed(&texts).expect("hash embedding cannot fail");
    let mut cache = EmbeddingCache::in_memory(texts.into_iter().zip(vectors).map(|(text, vector)| CachedVector { text, vector }));
    cache.set_backing(Box::new(hasher));
    Arc::new(cache)
}

/// Settings for simulated planning runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub world: WorldParams,
    pub worlds: usize,
    pub queries_per_world: usize,
    pub noise: f64,
    pub setup: Setup,
    pub horizon: usize,
    /// Largest horizon the queries must support; keeps query draws identical across horizons.
    pub max_horizon: usize,
    pub k_samples: usize,
    pub beam_width: usize,
    pub shots: usize,
    pub mask: ValueMask,
    pub reject_repeats: bool,
    pub path_aggregation: PathAggregation,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            world: WorldParams::default(),
            worlds: 10,
            queries_per_world: 50,
            noise: 0.3,
            setup: Setup::Vpa,
            horizon: 3,
            max_horizon: 4,
            k_samples: 5,
            beam_width: 3,
            shots: 0,
            mask: ValueMask::ALL,
            reject_repeats: true,
            path_aggregation: PathAggregation::Sum,
            seed: 0,
        }
    }
}

/// One simulated query: where it cuts which canonical plan, and its sampling seed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimQuery {
    pub world: usize,
    pub task: usize,
    pub cut: usize,
    pub seed: u64,
}

/// Mean success rate with its standard error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub sr: f64,
    pub standard_error: f64,
    pub queries: usize,
    pub failed: usize,
}

pub fn summarize(records: &[ResultRecord<f64>]) -> SimSummary {
    let n = records.len();
    let wins = records.iter().map(|r| r.sr.unwrap_or(0.0)).collect::<Vec<_>>();
    let mean = if n == 0 { 0.0 } else { wins.iter().sum::<f64>() / n as f64 };
    let var = if n < 2 { 0.0 } else { wins.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1) as f64 };
    SimSummary {
        sr: mean,
        standard_error: (var / n.max(1) as f64).sqrt(),
        queries: n,
        failed: records.iter().filter(|r| r.error.is_some()).count(),
    }
}

/// A generated world with everything needed to plan in it.
pub struct SimWorld {
    pub world: Arc<SyntheticWorld>,
    pub grounder: Arc<Grounder<f64>>,
    pub videos: Vec<AnnotatedVideo>,
}

impl SimWorld {
    pub fn new(world: SyntheticWorld) -> Result<Self, SimError> {
        let actions = world.actions();
        let grounder = Arc::new(Grounder::new(&actions, world_embeddings(&world))?);
        let videos = world.videos();
        Ok(Self { world: Arc::new(world), grounder, videos })
    }
}

/// Worlds `0..config.worlds`, each seeded from the run seed.
pub fn build_worlds(config: &SimConfig) -> Result<Vec<SimWorld>, SimError> {
    (0..config.worlds)
        .map(|w| {
            let params = WorldParams { seed: config.seed.wrapping_mul(1_000_003).wrapping_add(w as u64), ..config.world.clone() };
            SimWorld::new(generate_world_with(params)?)
        })
        .collect()
}

/// Draws the queries of every world; the draw ignores beam width and horizon.
pub fn draw_queries(worlds: &[SimWorld], config: &SimConfig) -> Result<Vec<SimQuery>, SimError> {
    let reach = config.max_horizon.max(config.horizon);
    let mut out = Vec::new();
    for (w, sw) in worlds.iter().enumerate() {
        let mut rng = keyed_rng(&[b"queries", &config.seed.to_le_bytes(), &(w as u64).to_le_bytes()]);
        for _ in 0..config.queries_per_world {
            let task = rng.random_range(0..sw.world.tasks.len());
            let len = sw.world.tasks[task].canonical.len();
            // VPA needs one observed step before the window; PP starts the window at the cut.
            let (lo, hi) = match config.setup {
                Setup::Vpa => (1, len.checked_sub(reach)),
                Setup::Pp => (0, len.checked_sub(reach)),
            };
            let hi = hi.filter(|&h| h >= lo).ok_or_else(|| {
                SimError::Config(format!("canonical plans of length {len} are too short for horizon {reach}"))
            })?;
            out.push(SimQuery { world: w, task, cut: rng.random_range(lo..=hi), seed: rng.random() });
        }
    }
    Ok(out)
}

fn search_config(config: &SimConfig, seed: u64) -> SearchConfig<f64> {
    SearchConfig {
        k_samples: config.k_samples,
        beam_width: config.beam_width,
        path_aggregation: config.path_aggregation,
        seed,
        reject_repeats: config.reject_repeats,
        weights: match config.setup {
            Setup::Vpa => ValueWeights::vpa(),
            Setup::Pp => ValueWeights::pp(),
        },
        mask: config.mask,
        parallel: false,
        ..SearchConfig::default()
    }
}

/// Plans one query and scores it against the canonical continuation.
pub fn run_query(sw: &SimWorld, query: &SimQuery, config: &SimConfig) -> Result<ResultRecord<f64>, SimError> {
    let world = &sw.world;
    let task = &world.tasks[query.task];
    let actions = sw.grounder.actions();
    let t = config.horizon;
    let (planning_query, gt) = match config.setup {
        Setup::Vpa => {
            let history = task.canonical[..query.cut].iter().map(|&a| actions.step(a)).collect::<Result<Vec<_>, _>>().map_err(|e| SimError::Config(e.to_string()))?;
            let q = PlanningQuery::vpa(&task.name, &task.goal, history, t).map_err(|e| SimError::Config(e.to_string()))?;
            (q, task.canonical[query.cut..query.cut + t].to_vec())
        }
        Setup::Pp => {
            let window = &task.canonical[query.cut..query.cut + t];
            let step = |a: ActionId| actions.step(a).map_err(|e| SimError::Config(e.to_string()));
            let q = PlanningQuery::pp(&task.name, step(window[0])?, step(window[t - 1])?, t).map_err(|e| SimError::Config(e.to_string()))?;
            (q, window.to_vec())
        }
    };

    let train = crate::evaluation::training_examples(&sw.videos, &task.name, config.shots);
    let graph = build_task_graph(&train.iter().map(|v| v.actions()).collect::<Vec<_>>());
    let examples = train
        .iter()
        .take(crate::proposer::prompt::shot_limit(config.setup))
        .map(|v| InContextExample {
            goal: v.goal.clone(),
            plan: v.actions().iter().map(|a| world.descriptions[a.0].clone()).collect(),
        })
        .collect();
    let backend = Arc::new(OracleBackend::new(world.clone(), config.noise));
    let proposer = Proposer::new(backend, SamplingConfig::default())?;
    let planner = Planner::new(proposer, sw.grounder.clone(), search_config(config, query.seed))?
        .with_task_graph(Arc::new(graph))
        .with_examples(examples);

    let mut record = ResultRecord {
        sample_id: format!("w{}/{}/c{}/s{}", query.world, task.name, query.cut, query.seed),
        setup: config.setup,
        horizon: t,
        pred: Vec::new(),
        gt,
        sr: None,
        macc: None,
        miou: None,
        value_breakdowns: Vec::new(),
        error: None,
    };
    match planner.plan(&planning_query) {
        Ok((plan, trace)) => {
            record.pred = plan.ids();
            let m = sample_metrics::<f64>(&record.pred, &record.gt).expect("plans have the query horizon");
            record.sr = Some(m.sr);
            record.macc = Some(m.macc);
            record.miou = Some(m.miou);
            record.value_breakdowns = selected_breakdowns(&trace);
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    Ok(record)
}

/// Runs every query in parallel; records come back in query order.
pub fn run_queries(worlds: &[SimWorld], queries: &[SimQuery], config: &SimConfig) -> Result<Vec<ResultRecord<f64>>, SimError> {
    queries.par_iter().map(|q| run_query(&worlds[q.world], q, config)).collect()
}

/// Generates worlds and queries, then runs them.
pub fn simulate(config: &SimConfig) -> Result<(SimSummary, Vec<ResultRecord<f64>>), SimError> {
    let worlds = build_worlds(config)?;
    let queries = draw_queries(&worlds, config)?;
    let records = run_queries(&worlds, &queries, config)?;
    Ok((summarize(&records), records))
}

/// One point of a parameter sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub parameter: String,
    pub value: f64,
    pub summary: SimSummary,
}

/// Sweepable settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Beam width (K̃); raises K to match when needed.
    KBeam,
    /// Samples per expansion (K).
    KSamples,
    Horizon,
    Noise,
}

impl std::str::FromStr for SweepParameter {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "k_beam" | "beam" => Ok(Self::KBeam),
            "k" | "k_samples" => Ok(Self::KSamples),
            "horizon" | "t" => Ok(Self::Horizon),
            "noise" => Ok(Self::Noise),
            other => Err(SimError::Config(format!("unknown sweep parameter {other:?}"))),
        }
    }
}

/// Parses `name=v1,v2,...`.
pub fn parse_sweep(spec: &str) -> Result<(SweepParameter, Vec<f64>), SimError> {
    let (name, values) = spec.split_once('=').ok_or_else(|| SimError::Config(format!("sweep {spec:?} lacks '='")))?;
    let values = values
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| SimError::Config(format!("sweep value {v:?}: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((name.trim().parse()?, values))
}

/// A sweep point with the records behind it.
pub type SweepRun = (SweepPoint, Vec<ResultRecord<f64>>);

/// Runs the same queries under every value of one parameter.
pub fn sweep(
    base: &SimConfig,
    parameter: SweepParameter,
    values: &[f64],
) -> Result<Vec<SweepRun>, SimError> {
    let worlds = build_worlds(base)?;
    let mut draw = base.clone();
    if parameter == SweepParameter::Horizon {
        draw.max_horizon = values.iter().fold(base.max_horizon, |m, &v| m.max(v as usize));
    }
    let queries = draw_queries(&worlds, &draw)?;
    let mut out = Vec::new();
    for &value in values {
        let mut config = draw.clone();
        match parameter {
            SweepParameter::KBeam => {
                config.beam_width = value as usize;
                config.k_samples = config.k_samples.max(config.beam_width);
            }
            SweepParameter::KSamples => {
                config.k_samples = value as usize;
                config.beam_width = config.beam_width.min(config.k_samples);
            }
            SweepParameter::Horizon => config.horizon = value as usize,
            SweepParameter::Noise => config.noise = value,
        }
        let records = run_queries(&worlds, &queries, &config)?;
        let name = serde_json::to_value(parameter)?.as_str().unwrap_or_default().to_string();
        out.push((SweepPoint { parameter: name, value, summary: summarize(&records) }, records));
    }
    Ok(out)
}
