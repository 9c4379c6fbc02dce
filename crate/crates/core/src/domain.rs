//! Core data types shared by every stage of the planner.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Score;

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("action description at index {0} is empty")]
    EmptyDescription(usize),
    #[error("duplicate action description {0:?}")]
    DuplicateDescription(String),
    #[error("action {0} appears twice")]
    DuplicateId(ActionId),
    #[error("action indices must be contiguous from 0; found {found} at position {position}")]
    NonContiguous { position: usize, found: usize },
    #[error("action {0} is not in the admissible set")]
    UnknownAction(ActionId),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("node depth {depth} does not match the expected plan length {expected}")]
    DepthMismatch { depth: usize, expected: usize },
}

/// Index of a categorical action within its vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub usize);

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Lowercases and collapses runs of whitespace.
pub fn normalize_description(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// The actions a plan may contain, each with a normalized text description.
///
/// A full vocabulary has ids `0..C`. A task-scoped set keeps the global ids of its members,
/// so its ids are sorted but need not be contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmissibleActionSet {
    actions: Vec<(ActionId, String)>,
    task_scope: Option<String>,
    by_description: HashMap<String, ActionId>,
}

impl AdmissibleActionSet {
    /// Builds a full vocabulary; descriptions get ids `0..n` in order.
    pub fn new<I, T>(descriptions: I) -> Result<Self, DomainError>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<str>,
    {
        let entries = descriptions
            .into_iter()
            .enumerate()
            .map(|(i, d)| (ActionId(i), d.as_ref().to_string()))
            .collect::<Vec<_>>();
        Self::build(entries, None, true)
    }

    /// Builds a full vocabulary from explicit `(id, description)` pairs; ids must be `0..n`.
    pub fn from_indexed(entries: Vec<(ActionId, String)>) -> Result<Self, DomainError> {
        Self::build(entries, None, true)
    }

    /// Builds a task-scoped subset. Ids are global and only need to be distinct.
    pub fn scoped(task: impl Into<String>, mut entries: Vec<(ActionId, String)>) -> Result<Self, DomainError> {
        entries.sort_by_key(|(id, _)| *id);
        Self::build(entries, Some(task.into()), false)
    }

    fn build(
        entries: Vec<(ActionId, String)>,
        task_scope: Option<String>,
        contiguous: bool,
    ) -> Result<Self, DomainError> {
        let mut actions = Vec::with_capacity(entries.len());
        let mut by_description = HashMap::with_capacity(entries.len());
        for (position, (id, raw)) in entries.into_iter().enumerate() {
            if contiguous && id.0 != position {
                return Err(DomainError::NonContiguous { position, found: id.0 });
            }
            if !contiguous && actions.last().map(|(p, _): &(ActionId, String)| *p) == Some(id) {
                return Err(DomainError::DuplicateId(id));
            }
            let description = normalize_description(&raw);
            if description.is_empty() {
                return Err(DomainError::EmptyDescription(id.0));
            }
            if by_description.insert(description.clone(), id).is_some() {
                return Err(DomainError::DuplicateDescription(description));
            }
            actions.push((id, description));
        }
        Ok(Self { actions, task_scope, by_description })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn task_scope(&self) -> Option<&str> {
        self.task_scope.as_deref()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ActionId, &str)> + '_ {
        self.actions.iter().map(|(id, d)| (*id, d.as_str()))
    }

    pub fn ids(&self) -> impl Iterator<Item = ActionId> + '_ {
        self.actions.iter().map(|(id, _)| *id)
    }

    pub fn contains(&self, id: ActionId) -> bool {
        self.position(id).is_some()
    }

    /// Position of `id` within this set's ordering.
    pub fn position(&self, id: ActionId) -> Option<usize> {
        self.actions.binary_search_by_key(&id, |(a, _)| *a).ok()
    }

    pub fn description(&self, id: ActionId) -> Option<&str> {
        self.position(id).map(|p| self.actions[p].1.as_str())
    }

    /// Exact lookup by (normalized) description.
    pub fn lookup(&self, description: &str) -> Option<ActionId> {
        self.by_description.get(&normalize_description(description)).copied()
    }

    pub fn step(&self, id: ActionId) -> Result<Step, DomainError> {
        self.description(id)
            .map(|d| Step { action: id, description: d.to_string() })
            .ok_or(DomainError::UnknownAction(id))
    }
}

/// One action together with the description shown to the language model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub action: ActionId,
    pub description: String,
}

/// What the planner knows about the current state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observation {
    /// Consolidated action history, oldest first (VPA).
    History { steps: Vec<Step> },
    /// Predicted start step (PP).
    StartImageStep { step: Step },
}

impl Observation {
    /// The step the first planned action is conditioned on.
    pub fn anchor(&self) -> Option<ActionId> {
        match self {
            Observation::History { steps } => steps.last().map(|s| s.action),
            Observation::StartImageStep { step } => Some(step.action),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GoalSpec {
    Text { text: String },
    GoalImageStep { step: Step },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setup {
    Vpa,
    Pp,
}

impl fmt::Display for Setup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setup::Vpa => "vpa",
            Setup::Pp => "pp",
        })
    }
}

impl std::str::FromStr for Setup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "vpa" => Ok(Setup::Vpa),
            "pp" => Ok(Setup::Pp),
            other => Err(format!("unknown setup {other:?} (expected vpa or pp)")),
        }
    }
}

/// One planning problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanningQuery {
    pub observation: Observation,
    pub goal: GoalSpec,
    pub horizon: usize,
    pub task_name: String,
    pub setup: Setup,
}

impl PlanningQuery {
    pub fn vpa(
        task_name: impl Into<String>,
        goal: impl Into<String>,
        history: Vec<Step>,
        horizon: usize,
    ) -> Result<Self, DomainError> {
        Self::new(
            Observation::History { steps: history },
            GoalSpec::Text { text: goal.into() },
            horizon,
            task_name,
            Setup::Vpa,
        )
    }

    pub fn pp(task_name: impl Into<String>, start: Step, goal: Step, horizon: usize) -> Result<Self, DomainError> {
        Self::new(
            Observation::StartImageStep { step: start },
            GoalSpec::GoalImageStep { step: goal },
            horizon,
            task_name,
            Setup::Pp,
        )
    }

    pub fn new(
        observation: Observation,
        goal: GoalSpec,
        horizon: usize,
        task_name: impl Into<String>,
        setup: Setup,
    ) -> Result<Self, DomainError> {
        let query = Self { observation, goal, horizon, task_name: task_name.into(), setup };
        query.validate()?;
        Ok(query)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.horizon < 1 {
            return Err(DomainError::InvalidQuery("horizon must be at least 1".into()));
        }
        match (self.setup, &self.observation, &self.goal) {
            (Setup::Vpa, Observation::History { .. }, GoalSpec::Text { .. }) => Ok(()),
            (Setup::Pp, Observation::StartImageStep { .. }, GoalSpec::GoalImageStep { .. }) => {
                if self.horizon < 2 {
                    Err(DomainError::InvalidQuery(
                        "procedural planning needs horizon >= 2 (start and goal are plan steps)".into(),
                    ))
                } else {
                    Ok(())
                }
            }
            (Setup::Vpa, _, _) => Err(DomainError::InvalidQuery(
                "VPA queries need a history observation and a text goal".into(),
            )),
            (Setup::Pp, _, _) => Err(DomainError::InvalidQuery(
                "PP queries need a start step observation and a goal step".into(),
            )),
        }
    }

    /// Text used for the goal in prompts.
    pub fn goal_text(&self) -> &str {
        match &self.goal {
            GoalSpec::Text { text } => text,
            GoalSpec::GoalImageStep { step } => &step.description,
        }
    }

    pub fn goal_step(&self) -> Option<&Step> {
        match &self.goal {
            GoalSpec::GoalImageStep { step } => Some(step),
            GoalSpec::Text { .. } => None,
        }
    }

    pub fn start_step(&self) -> Option<&Step> {
        match &self.observation {
            Observation::StartImageStep { step } => Some(step),
            Observation::History { .. } => None,
        }
    }
}

/// A predicted or ground-truth sequence of actions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionPlan {
    pub steps: Vec<Step>,
}

impl ActionPlan {
    pub fn new(steps: Vec<Step>) -> Self {
        Self { steps }
    }

    pub fn from_ids(ids: &[ActionId], actions: &AdmissibleActionSet) -> Result<Self, DomainError> {
        ids.iter().map(|&id| actions.step(id)).collect::<Result<Vec<_>, _>>().map(Self::new)
    }

    pub fn ids(&self) -> Vec<ActionId> {
        self.steps.iter().map(|s| s.action).collect()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// The four value-function outputs for one candidate and their weighted combination.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Score")]
pub struct ValueBreakdown<S> {
    pub generation: S,
    pub mapping: S,
    pub partial_plan: S,
    pub task_graph: S,
    pub combined: S,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

/// A partial plan ending in `action`, linked to its predecessor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Score")]
pub struct SearchNode<S> {
    pub id: NodeId,
    pub depth: usize,
    pub action: ActionId,
    pub parent: Option<NodeId>,
    pub step_value: S,
    pub path_value: S,
}

/// Arena owning every node created during one search.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(bound = "S: Score")]
pub struct SearchTree<S> {
    nodes: Vec<SearchNode<S>>,
}

impl<S: Score> SearchTree<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn add_root(&mut self, action: ActionId, step_value: S) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(SearchNode { id, depth: 1, action, parent: None, step_value, path_value: step_value });
        id
    }

    pub fn add_child(&mut self, parent: NodeId, action: ActionId, step_value: S) -> NodeId {
        let (depth, base) = {
            let p = &self.nodes[parent.0];
            (p.depth + 1, p.path_value)
        };
        let id = NodeId(self.nodes.len());
        self.nodes.push(SearchNode {
            id,
            depth,
            action,
            parent: Some(parent),
            step_value,
            path_value: base + step_value,
        });
        id
    }

    pub fn node(&self, id: NodeId) -> &SearchNode<S> {
        &self.nodes[id.0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[SearchNode<S>] {
        &self.nodes
    }

    /// Root-to-node actions in chronological order.
    pub fn actions_to(&self, id: NodeId) -> Vec<ActionId> {
        let mut out = Vec::with_capacity(self.nodes[id.0].depth);
        let mut cur = Some(id);
        while let Some(n) = cur {
            let node = &self.nodes[n.0];
            out.push(node.action);
            cur = node.parent;
        }
        out.reverse();
        out
    }
}

/// Backtracks from a leaf at depth `expected_depth` to the full plan.
pub fn plan_from_node<S: Score>(
    tree: &SearchTree<S>,
    node: NodeId,
    expected_depth: usize,
    actions: &AdmissibleActionSet,
) -> Result<ActionPlan, DomainError> {
    let depth = tree.node(node).depth;
    if depth != expected_depth {
        return Err(DomainError::DepthMismatch { depth, expected: expected_depth });
    }
    ActionPlan::from_ids(&tree.actions_to(node), actions)
}
