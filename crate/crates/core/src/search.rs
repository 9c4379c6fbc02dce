//! Propose, assess and prune: breadth-first beam search over grounded candidate actions.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assessment::{
    combine, generation_score, partial_plan_score, task_graph_score, AssessmentError, TaskGraph, ValueMask,
    ValueWeights, Values, DEFAULT_EPSILON,
};
use crate::domain::{
    plan_from_node, ActionId, ActionPlan, AdmissibleActionSet, DomainError, NodeId, PlanningQuery, SearchTree, Setup,
    Step, ValueBreakdown,
};
use crate::grounding::{Grounder, GroundingError};
use crate::num::{cmp_scores, Score};
use crate::proposer::{build_next_action_prompt, build_plan_evaluation_prompt, BackendError, InContextExample, Proposer};

/// Largest number of complete paths the exhaustive oracle will enumerate.
pub const ORACLE_PATH_LIMIT: f64 = 1e6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathAggregation {
    /// Sum of combined step scores along the path.
    #[default]
    Sum,
    /// Combined score of the newest step only.
    LastStep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound = "S: Score")]
pub struct SearchConfig<S> {
    /// Samples drawn per expansion (K).
    pub k_samples: usize,
    /// Partial plans kept per depth (K̃).
    pub beam_width: usize,
    pub path_aggregation: PathAggregation,
    pub seed: u64,
    /// Reject a candidate equal to the step before it unless the task graph has seen that repeat.
    pub reject_repeats: bool,
    /// Floor probability for unseen task-graph transitions.
    pub epsilon: S,
    pub weights: ValueWeights<S>,
    pub mask: ValueMask,
    /// Expand the beams of one depth concurrently.
    pub parallel: bool,
}

impl<S: Score> Default for SearchConfig<S> {
    fn default() -> Self {
        Self {
            k_samples: 10,
            beam_width: 3,
            path_aggregation: PathAggregation::Sum,
            seed: 0,
            reject_repeats: true,
            epsilon: S::of(DEFAULT_EPSILON),
            weights: ValueWeights::vpa(),
            mask: ValueMask::ALL,
            parallel: true,
        }
    }
}

impl<S: Score> SearchConfig<S> {
    /// Defaults with the weight preset of `setup`.
    pub fn for_setup(setup: Setup) -> Self {
        let weights = match setup {
            Setup::Vpa => ValueWeights::vpa(),
            Setup::Pp => ValueWeights::pp(),
        };
        Self { weights, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), SearchConfigError> {
        if self.k_samples < 1 {
            return Err(SearchConfigError::Invalid("k_samples must be at least 1".into()));
        }
        if self.beam_width < 1 || self.beam_width > self.k_samples {
            return Err(SearchConfigError::Invalid(format!(
                "beam_width must lie in 1..={} (k_samples), got {}",
                self.k_samples, self.beam_width
            )));
        }
        if !(self.epsilon > S::zero() && self.epsilon <= S::one()) {
            return Err(SearchConfigError::Invalid(format!("epsilon must lie in (0, 1], got {}", self.epsilon)));
        }
        if self.mask.is_empty() {
            return Err(SearchConfigError::Invalid("at least one value function must be enabled".into()));
        }
        self.weights.validate()?;
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchConfigError {
    #[error("invalid search configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Weights(#[from] AssessmentError),
}

/// One candidate child in the trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Score")]
pub struct TraceNode<S> {
    pub node: NodeId,
    pub parent: Option<NodeId>,
    pub action: ActionId,
    pub description: String,
    /// Raw text of the sample that won the same-action merge; absent for forced steps.
    pub sample_text: Option<String>,
    /// Samples that grounded to this action in this expansion.
    pub merged_samples: usize,
    pub forced: bool,
    pub values: ValueBreakdown<S>,
    pub path_value: S,
    /// Score used for ranking under the configured path aggregation.
    pub rank_value: S,
    pub kept: bool,
}

/// A sample that never became a node.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRejection {
    pub parent: Option<NodeId>,
    pub sample_index: usize,
    pub text: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Score")]
pub struct TraceDepth<S> {
    pub depth: usize,
    pub nodes: Vec<TraceNode<S>>,
    pub rejected: Vec<TraceRejection>,
}

/// Everything the search looked at, in a stable order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Score")]
pub struct SearchTrace<S> {
    pub setup: Setup,
    pub horizon: usize,
    pub anchor: Option<ActionId>,
    pub k_samples: usize,
    pub beam_width: usize,
    pub weights: ValueWeights<S>,
    pub enabled: Vec<String>,
    pub proposal_batches: usize,
    pub evaluation_calls: usize,
    pub depths: Vec<TraceDepth<S>>,
    pub selected: Option<NodeId>,
    pub plan: Vec<ActionId>,
}

impl<S: Score> SearchTrace<S> {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }

    pub fn kept_per_depth(&self) -> Vec<usize> {
        self.depths.iter().map(|d| d.nodes.iter().filter(|n| n.kept).count()).collect()
    }
}

#[derive(Debug, Error)]
pub enum SearchError<S: Score> {
    #[error(transparent)]
    Config(#[from] SearchConfigError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("backend failure at depth {depth}: {source}")]
    Backend {
        depth: usize,
        #[source]
        source: BackendError,
        trace: Box<SearchTrace<S>>,
    },
    #[error("grounding failed for every sample at depth {depth}: {first}")]
    Grounding { depth: usize, first: GroundingError, trace: Box<SearchTrace<S>> },
    #[error("no admissible candidate survived at depth {depth}")]
    NoCandidates { depth: usize, trace: Box<SearchTrace<S>> },
    #[error("vocabulary for task {task:?} does not match the grounding index")]
    VocabularyMismatch { task: String },
    #[error("exhaustive enumeration of {paths:e} paths exceeds the limit of {ORACLE_PATH_LIMIT:e}")]
    OracleTooLarge { paths: f64 },
}

impl<S: Score> SearchError<S> {
    /// The partial trace, when the failure happened mid-search.
    pub fn trace(&self) -> Option<&SearchTrace<S>> {
        match self {
            SearchError::Backend { trace, .. }
            | SearchError::Grounding { trace, .. }
            | SearchError::NoCandidates { trace, .. } => Some(trace),
            _ => None,
        }
    }
}

/// A scored child produced by one expansion, before it joins the tree.
#[derive(Clone, Debug)]
struct Child<S> {
    action: ActionId,
    sample_text: Option<String>,
    merged: usize,
    forced: bool,
    values: ValueBreakdown<S>,
}

#[derive(Debug, Default)]
struct Expansion<S> {
    children: Vec<Child<S>>,
    rejected: Vec<(usize, String, String)>,
    proposal_batches: usize,
    evaluation_calls: usize,
}

enum ExpandError {
    Backend(BackendError),
    Ungrounded(GroundingError, Vec<(usize, String, String)>),
}

/// Beam-search planner over one admissible vocabulary.
pub struct Planner<S: Score> {
    proposer: Proposer,
    grounder: Arc<Grounder<S>>,
    graph: Arc<TaskGraph>,
    examples: Vec<InContextExample>,
    config: SearchConfig<S>,
}

impl<S: Score> Planner<S> {
    pub fn new(mut proposer: Proposer, grounder: Arc<Grounder<S>>, config: SearchConfig<S>) -> Result<Self, SearchConfigError> {
        config.validate()?;
        proposer.config.seed = Some(config.seed);
        Ok(Self { proposer, grounder, graph: Arc::new(TaskGraph::default()), examples: Vec::new(), config })
    }

    pub fn with_task_graph(mut self, graph: Arc<TaskGraph>) -> Self {
        self.graph = graph;
        self
    }

    pub fn with_examples(mut self, examples: Vec<InContextExample>) -> Self {
        self.examples = examples;
        self
    }

    pub fn config(&self) -> &SearchConfig<S> {
        &self.config
    }

    pub fn actions(&self) -> &AdmissibleActionSet {
        self.grounder.actions()
    }

    /// Weights actually applied: the mask removes components, and an empty task graph
    /// removes the graph term. Nothing is renormalized.
    pub fn effective_weights(&self) -> ValueWeights<S> {
        let mut w = self.config.weights.masked(self.config.mask);
        if self.graph.is_empty() {
            w.task_graph = S::zero();
        }
        w
    }

    /// Names of the value functions that contribute to the score.
    pub fn enabled_components(&self) -> Vec<String> {
        let w = self.effective_weights();
        let mut out = Vec::new();
        for (name, on) in [
            ("G", self.config.mask.generation && w.generation > S::zero()),
            ("M", self.config.mask.mapping && w.mapping > S::zero()),
            ("TG", self.config.mask.task_graph && w.task_graph > S::zero()),
            ("P", self.config.mask.partial_plan && w.partial_plan > S::zero()),
        ] {
            if on {
                out.push(name.to_string());
            }
        }
        out
    }

    /// Number of searched depths; procedural planning fixes the first step to the start.
    fn search_depth(query: &PlanningQuery) -> usize {
        match query.setup {
            Setup::Vpa => query.horizon,
            Setup::Pp => query.horizon - 1,
        }
    }

    fn steps(&self, ids: &[ActionId]) -> Result<Vec<Step>, DomainError> {
        ids.iter().map(|&id| self.actions().step(id)).collect()
    }

    fn check_query(&self, query: &PlanningQuery) -> Result<(), SearchError<S>> {
        query.validate()?;
        let actions = self.actions();
        let scope_ok = actions.task_scope().is_none_or(|t| t == query.task_name);
        if !scope_ok {
            return Err(SearchError::VocabularyMismatch { task: query.task_name.clone() });
        }
        for id in [query.start_step(), query.goal_step()].into_iter().flatten().map(|s| s.action) {
            if !actions.contains(id) {
                return Err(DomainError::UnknownAction(id).into());
            }
        }
        Ok(())
    }

    fn score(&self, query: &PlanningQuery, prefix: &[ActionId], action: ActionId, g: S, m: S, w: &ValueWeights<S>) -> Result<(ValueBreakdown<S>, bool), ExpandError> {
        let mut path = prefix.to_vec();
        path.push(action);
        let task_graph = if w.task_graph > S::zero() {
            task_graph_score(&self.graph, &path, query.observation.anchor(), self.config.epsilon)
        } else {
            S::zero()
        };
        let mut called = false;
        let partial_plan = if w.partial_plan > S::zero() {
            let steps = self.steps(&path).expect("grounded actions belong to the vocabulary");
            let prompt = build_plan_evaluation_prompt(query, &steps);
            let (yes, no) = self.proposer.evaluate_yes_no(&prompt).map_err(ExpandError::Backend)?;
            called = true;
            partial_plan_score(S::of(yes), S::of(no))
        } else {
            S::zero()
        };
        let generation = if w.generation > S::zero() { g } else { S::zero() };
        let mapping = if w.mapping > S::zero() { m } else { S::zero() };
        let combined = combine(Values { generation, mapping, task_graph, partial_plan }, w);
        Ok((ValueBreakdown { generation, mapping, partial_plan, task_graph, combined }, called))
    }

    /// Proposes, grounds, filters, merges and scores the children of one partial plan.
    fn expand(&self, query: &PlanningQuery, prefix: &[ActionId], forced: bool) -> Result<Expansion<S>, ExpandError> {
        let w = self.effective_weights();
        let mut out = Expansion::default();
        if forced {
            let goal = query.goal_step().expect("forced steps only occur in procedural planning").action;
            let (values, called) = self.score(query, prefix, goal, S::zero(), S::one(), &w)?;
            out.evaluation_calls += called as usize;
            out.children.push(Child { action: goal, sample_text: None, merged: 0, forced: true, values });
            return Ok(out);
        }

        let steps = self.steps(prefix).expect("prefix actions belong to the vocabulary");
        let prompt = build_next_action_prompt(query, &steps, &self.examples);
        let samples = self
            .proposer
            .sample_candidates(&prompt, self.config.k_samples, self.proposer.config.temperature)
            .map_err(ExpandError::Backend)?;
        out.proposal_batches += 1;

        let previous = prefix.last().copied().or(query.observation.anchor());
        // action -> (pre-score, sample index, generation, mapping, merged count)
        let mut best: BTreeMap<ActionId, (S, usize, S, S, usize)> = BTreeMap::new();
        let mut first_error = None;
        let mut grounded_any = false;
        for (i, sample) in samples.iter().enumerate() {
            let (action, mapping) = match self.grounder.ground(&sample.text) {
                Ok(hit) => hit,
                Err(e) => {
                    out.rejected.push((i, sample.text.clone(), format!("grounding: {e}")));
                    first_error.get_or_insert(e);
                    continue;
                }
            };
            grounded_any = true;
            if self.config.reject_repeats && Some(action) == previous && self.graph.count(action, action) == 0 {
                out.rejected.push((i, sample.text.clone(), format!("repeats previous step {action}")));
                continue;
            }
            let lps = sample.token_logprobs.iter().map(|&x| S::of(x)).collect::<Vec<_>>();
            let generation = generation_score(&lps);
            let pre = w.generation * generation + w.mapping * mapping;
            best.entry(action)
                .and_modify(|e| {
                    e.4 += 1;
                    if cmp_scores(pre, e.0) == Ordering::Greater {
                        *e = (pre, i, generation, mapping, e.4);
                    }
                })
                .or_insert((pre, i, generation, mapping, 1));
        }
        if !grounded_any {
            return Err(ExpandError::Ungrounded(first_error.unwrap_or(GroundingError::EmptyText), out.rejected));
        }
        for (action, (_, index, generation, mapping, merged)) in best {
            let (values, called) = self.score(query, prefix, action, generation, mapping, &w)?;
            out.evaluation_calls += called as usize;
            out.children.push(Child {
                action,
                sample_text: Some(samples[index].text.clone()),
                merged,
                forced: false,
                values,
            });
        }
        Ok(out)
    }

    fn rank_value(&self, tree: &SearchTree<S>, node: NodeId) -> S {
        let n = tree.node(node);
        match self.config.path_aggregation {
            PathAggregation::Sum => n.path_value,
            PathAggregation::LastStep => n.step_value,
        }
    }

    fn empty_trace(&self, query: &PlanningQuery) -> SearchTrace<S> {
        SearchTrace {
            setup: query.setup,
            horizon: query.horizon,
            anchor: query.observation.anchor(),
            k_samples: self.config.k_samples,
            beam_width: self.config.beam_width,
            weights: self.effective_weights(),
            enabled: self.enabled_components(),
            proposal_batches: 0,
            evaluation_calls: 0,
            depths: Vec::new(),
            selected: None,
            plan: Vec::new(),
        }
    }

    /// Runs the beam search and returns the best plan with the full trace.
    pub fn plan(&self, query: &PlanningQuery) -> Result<(ActionPlan, SearchTrace<S>), SearchError<S>> {
        self.check_query(query)?;
        let depth_limit = Self::search_depth(query);
        let mut tree = SearchTree::<S>::new();
        let mut trace = self.empty_trace(query);
        let mut frontier: Vec<Option<NodeId>> = vec![None];
        let mut last_layer = Vec::new();

        for depth in 1..=depth_limit {
            let forced = query.setup == Setup::Pp && depth == depth_limit;
            let prefixes = frontier.iter().map(|p| p.map(|n| tree.actions_to(n)).unwrap_or_default()).collect::<Vec<_>>();
            let run = |prefix: &Vec<ActionId>| self.expand(query, prefix, forced);
            let results: Vec<_> = if self.config.parallel && prefixes.len() > 1 {
                prefixes.par_iter().map(run).collect()
            } else {
                prefixes.iter().map(run).collect()
            };

            let mut layer = TraceDepth { depth, nodes: Vec::new(), rejected: Vec::new() };
            let mut children = Vec::new();
            let mut failure = None;
            for (parent, result) in frontier.iter().zip(results) {
                match result {
                    Ok(exp) => {
                        trace.proposal_batches += exp.proposal_batches;
                        trace.evaluation_calls += exp.evaluation_calls;
                        for (sample_index, text, reason) in exp.rejected {
                            layer.rejected.push(TraceRejection { parent: *parent, sample_index, text, reason });
                        }
                        for child in exp.children {
                            let node = match parent {
                                None => tree.add_root(child.action, child.values.combined),
                                Some(p) => tree.add_child(*p, child.action, child.values.combined),
                            };
                            children.push((node, child));
                        }
                    }
                    Err(ExpandError::Ungrounded(first, rejected)) => {
                        for (sample_index, text, reason) in rejected {
                            layer.rejected.push(TraceRejection { parent: *parent, sample_index, text, reason });
                        }
                        failure.get_or_insert(ExpandError::Ungrounded(first, Vec::new()));
                    }
                    Err(e) => {
                        failure.get_or_insert(e);
                    }
                }
            }
            if let Some(e) = failure {
                trace.depths.push(layer);
                return Err(match e {
                    ExpandError::Backend(source) => SearchError::Backend { depth, source, trace: Box::new(trace) },
                    ExpandError::Ungrounded(first, _) => SearchError::Grounding { depth, first, trace: Box::new(trace) },
                });
            }
            if children.is_empty() {
                trace.depths.push(layer);
                return Err(SearchError::NoCandidates { depth, trace: Box::new(trace) });
            }

            let mut order = children.iter().map(|(n, _)| *n).collect::<Vec<_>>();
            order.sort_by(|&a, &b| self.prune_order(&tree, a, b));
            let kept = order.iter().take(self.config.beam_width).copied().collect::<Vec<_>>();
            for (node, child) in &children {
                let n = tree.node(*node);
                layer.nodes.push(TraceNode {
                    node: *node,
                    parent: n.parent,
                    action: child.action,
                    description: self.actions().description(child.action).unwrap_or_default().to_string(),
                    sample_text: child.sample_text.clone(),
                    merged_samples: child.merged,
                    forced: child.forced,
                    values: child.values,
                    path_value: n.path_value,
                    rank_value: self.rank_value(&tree, *node),
                    kept: kept.contains(node),
                });
            }
            trace.depths.push(layer);
            last_layer = order;
            frontier = kept.into_iter().map(Some).collect();
        }

        // Every leaf competes for the final answer, pruned or not.
        let best = *last_layer
            .iter()
            .min_by(|&&a, &&b| self.final_order(&tree, a, b))
            .expect("the last layer is non-empty");
        let mut ids = tree.actions_to(best);
        let searched = plan_from_node(&tree, best, depth_limit, self.actions())?;
        let plan = match query.start_step() {
            Some(start) if query.setup == Setup::Pp => {
                ids.insert(0, start.action);
                let mut steps = vec![start.clone()];
                steps.extend(searched.steps);
                ActionPlan::new(steps)
            }
            _ => searched,
        };
        trace.selected = Some(best);
        trace.plan = ids;
        Ok((plan, trace))
    }

    /// Pruning order: higher score, then lower action, then lower parent chain (nearest first).
    fn prune_order(&self, tree: &SearchTree<S>, a: NodeId, b: NodeId) -> Ordering {
        cmp_scores(self.rank_value(tree, b), self.rank_value(tree, a)).then_with(|| {
            let mut pa = tree.actions_to(a);
            let mut pb = tree.actions_to(b);
            pa.reverse();
            pb.reverse();
            pa.cmp(&pb)
        })
    }

    /// Final selection order: higher score, then lexicographically smaller plan.
    fn final_order(&self, tree: &SearchTree<S>, a: NodeId, b: NodeId) -> Ordering {
        cmp_scores(self.rank_value(tree, b), self.rank_value(tree, a)).then_with(|| tree.actions_to(a).cmp(&tree.actions_to(b)))
    }
}

/// Scores every complete path with the planner's own scorer and returns the best one.
///
/// Ties go to the lexicographically smallest plan. Paths through rejected or never-proposed
/// actions do not exist, exactly as in the beam search.
pub fn exhaustive_oracle<S: Score>(planner: &Planner<S>, query: &PlanningQuery) -> Result<(ActionPlan, S), SearchError<S>> {
    planner.check_query(query)?;
    let depth_limit = Planner::<S>::search_depth(query);
    let paths = (planner.actions().len() as f64).powi(depth_limit as i32);
    if paths > ORACLE_PATH_LIMIT {
        return Err(SearchError::OracleTooLarge { paths });
    }

    struct Walk<'a, S: Score> {
        planner: &'a Planner<S>,
        query: &'a PlanningQuery,
        depth_limit: usize,
        best: Option<(S, Vec<ActionId>)>,
    }

    impl<S: Score> Walk<'_, S> {
        fn visit(&mut self, prefix: &mut Vec<ActionId>, path_value: S) -> Result<(), SearchError<S>> {
            let depth = prefix.len() + 1;
            let forced = self.query.setup == Setup::Pp && depth == self.depth_limit;
            let exp = self.planner.expand(self.query, prefix, forced).map_err(|e| {
                let trace = Box::new(self.planner.empty_trace(self.query));
                match e {
                    ExpandError::Backend(source) => SearchError::Backend { depth, source, trace },
                    ExpandError::Ungrounded(first, _) => SearchError::Grounding { depth, first, trace },
                }
            })?;
            for child in exp.children {
                let value = match self.planner.config.path_aggregation {
                    PathAggregation::Sum => path_value + child.values.combined,
                    PathAggregation::LastStep => child.values.combined,
                };
                prefix.push(child.action);
                if depth == self.depth_limit {
                    let better = match &self.best {
                        None => true,
                        Some((v, p)) => match cmp_scores(value, *v) {
                            Ordering::Greater => true,
                            Ordering::Equal => prefix.as_slice() < p.as_slice(),
                            Ordering::Less => false,
                        },
                    };
                    if better {
                        self.best = Some((value, prefix.clone()));
                    }
                } else {
                    self.visit(prefix, value)?;
                }
                prefix.pop();
            }
            Ok(())
        }
    }

    let mut walk = Walk { planner, query, depth_limit, best: None };
    walk.visit(&mut Vec::new(), S::zero())?;
    let (value, mut ids) = walk.best.ok_or_else(|| SearchError::NoCandidates {
        depth: depth_limit,
        trace: Box::new(planner.empty_trace(query)),
    })?;
    if query.setup == Setup::Pp {
        ids.insert(0, query.start_step().expect("procedural queries carry a start step").action);
    }
    Ok((ActionPlan::from_ids(&ids, planner.actions())?, value))
}
