//! Value functions scoring each grounded candidate, and the few-shot task graph.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::ActionId;
use crate::num::Score;

/// Probability assigned to any transition the graph has never counted.
pub const DEFAULT_EPSILON: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssessmentError {
    #[error("weight {name} = {value} must be finite and non-negative")]
    BadWeight { name: &'static str, value: f64 },
    #[error("unknown value component {0:?} (expected G, M, TG or P)")]
    UnknownComponent(String),
    #[error("unknown weight preset {0:?} (expected vpa or pp)")]
    UnknownPreset(String),
}

/// First-order transition counts between consecutive steps of example plans.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TaskGraph {
    counts: BTreeMap<(ActionId, ActionId), u64>,
    row_totals: BTreeMap<ActionId, u64>,
    built_from: usize,
}

impl TaskGraph {
    pub fn count(&self, from: ActionId, to: ActionId) -> u64 {
        self.counts.get(&(from, to)).copied().unwrap_or(0)
    }

    pub fn row_total(&self, from: ActionId) -> u64 {
        self.row_totals.get(&from).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &BTreeMap<(ActionId, ActionId), u64> {
        &self.counts
    }

    /// Number of example plans the graph was counted from.
    pub fn built_from(&self) -> usize {
        self.built_from
    }

    /// True when there is not a single counted transition.
    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Unsmoothed G(to | from); `None` when `from` has no outgoing counts.
    pub fn probability<S: Score>(&self, from: ActionId, to: ActionId) -> Option<S> {
        let total = self.row_total(from);
        (total > 0).then(|| S::of_usize(self.count(from, to) as usize) / S::of_usize(total as usize))
    }

    pub fn successors(&self, from: ActionId) -> impl Iterator<Item = (ActionId, u64)> + '_ {
        self.counts.range((from, ActionId(0))..=(from, ActionId(usize::MAX))).map(|(&(_, y), &c)| (y, c))
    }
}

/// Counts adjacent pairs across all plans.
pub fn build_task_graph(plans: &[Vec<ActionId>]) -> TaskGraph {
    let mut graph = TaskGraph { built_from: plans.len(), ..TaskGraph::default() };
    for plan in plans {
        for pair in plan.windows(2) {
            *graph.counts.entry((pair[0], pair[1])).or_insert(0) += 1;
            *graph.row_totals.entry(pair[0]).or_insert(0) += 1;
        }
    }
    graph
}

/// Mean token log-probability of one sampled description.
///
/// # Panics
/// If `token_logprobs` is empty.
pub fn generation_score<S: Score>(token_logprobs: &[S]) -> S {
    assert!(!token_logprobs.is_empty(), "generation score needs at least one token");
    token_logprobs.iter().copied().sum::<S>() / S::of_usize(token_logprobs.len())
}

/// Two-way softmax probability of YES, evaluated without overflow.
///
/// # Panics
/// If either input is not finite.
pub fn partial_plan_score<S: Score>(yes: S, no: S) -> S {
    assert!(yes.is_finite() && no.is_finite(), "YES/NO scores must be finite, got ({yes}, {no})");
    let m = yes.max(no);
    let ey = (yes - m).exp();
    let en = (no - m).exp();
    ey / (ey + en)
}

/// Product of graph transition probabilities along `plan`, the first step conditioned on `anchor`.
///
/// Unseen transitions, unknown predecessors and a missing anchor contribute `epsilon`.
/// An empty graph scores 0.
pub fn task_graph_score<S: Score>(graph: &TaskGraph, plan: &[ActionId], anchor: Option<ActionId>, epsilon: S) -> S {
    if graph.is_empty() {
        return S::zero();
    }
    let mut prev = anchor;
    let mut product = S::one();
    for &step in plan {
        let factor = prev
            .and_then(|x| graph.probability::<S>(x, step))
            .filter(|p| *p > S::zero())
            .unwrap_or(epsilon);
        product = product * factor;
        prev = Some(step);
    }
    product
}

/// Relative weight of each value function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Score")]
pub struct ValueWeights<S> {
    pub generation: S,
    pub mapping: S,
    pub task_graph: S,
    pub partial_plan: S,
}

impl<S: Score> ValueWeights<S> {
    pub fn new(generation: S, mapping: S, task_graph: S, partial_plan: S) -> Result<Self, AssessmentError> {
        let w = Self { generation, mapping, task_graph, partial_plan };
        w.validate()?;
        Ok(w)
    }

    /// Weights for visual planning for assistance.
    pub fn vpa() -> Self {
        Self { generation: S::of(0.2), mapping: S::of(0.1), task_graph: S::of(0.1), partial_plan: S::of(0.7) }
    }

    /// Weights for procedural planning.
    pub fn pp() -> Self {
        Self { generation: S::of(0.1), mapping: S::of(0.1), task_graph: S::of(0.3), partial_plan: S::of(0.5) }
    }

    pub fn preset(name: &str) -> Result<Self, AssessmentError> {
        match name.to_ascii_lowercase().as_str() {
            "vpa" => Ok(Self::vpa()),
            "pp" => Ok(Self::pp()),
            other => Err(AssessmentError::UnknownPreset(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), AssessmentError> {
        for (name, value) in [
            ("generation", self.generation),
            ("mapping", self.mapping),
            ("task_graph", self.task_graph),
            ("partial_plan", self.partial_plan),
        ] {
            if !(value.is_finite() && value >= S::zero()) {
                return Err(AssessmentError::BadWeight { name, value: value.as_f64() });
            }
        }
        Ok(())
    }

    /// Zeroes the weight of every disabled component; the rest keep their values.
    pub fn masked(self, mask: ValueMask) -> Self {
        let keep = |on: bool, w: S| if on { w } else { S::zero() };
        Self {
            generation: keep(mask.generation, self.generation),
            mapping: keep(mask.mapping, self.mapping),
            task_graph: keep(mask.task_graph, self.task_graph),
            partial_plan: keep(mask.partial_plan, self.partial_plan),
        }
    }
}

/// The four raw value-function outputs for one candidate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Score")]
pub struct Values<S> {
    pub generation: S,
    pub mapping: S,
    pub task_graph: S,
    pub partial_plan: S,
}

impl<S: Score> Values<S> {
    pub fn scaled(self, alpha: S) -> Self {
        Self {
            generation: self.generation * alpha,
            mapping: self.mapping * alpha,
            task_graph: self.task_graph * alpha,
            partial_plan: self.partial_plan * alpha,
        }
    }
}

/// Weighted sum of the four values. Raw scales are combined as is.
pub fn combine<S: Score>(v: Values<S>, w: &ValueWeights<S>) -> S {
    w.generation * v.generation + w.mapping * v.mapping + w.task_graph * v.task_graph + w.partial_plan * v.partial_plan
}

/// Which value functions take part in scoring.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ValueMask {
    pub generation: bool,
    pub mapping: bool,
    pub task_graph: bool,
    pub partial_plan: bool,
}

impl ValueMask {
    pub const ALL: ValueMask = ValueMask { generation: true, mapping: true, task_graph: true, partial_plan: true };

    /// The eight component subsets of the value-function ablation table, in row order.
    pub const ABLATION_ROWS: [ValueMask; 8] = [
        ValueMask { generation: true, mapping: false, task_graph: false, partial_plan: false },
        ValueMask { generation: false, mapping: true, task_graph: false, partial_plan: false },
        ValueMask { generation: false, mapping: false, task_graph: true, partial_plan: false },
        ValueMask { generation: false, mapping: false, task_graph: false, partial_plan: true },
        ValueMask { generation: true, mapping: true, task_graph: true, partial_plan: false },
        ValueMask { generation: true, mapping: true, task_graph: false, partial_plan: true },
        ValueMask { generation: true, mapping: false, task_graph: true, partial_plan: true },
        ValueMask::ALL,
    ];

    pub fn components(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.generation {
            out.push("G");
        }
        if self.mapping {
            out.push("M");
        }
        if self.task_graph {
            out.push("TG");
        }
        if self.partial_plan {
            out.push("P");
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.components().is_empty()
    }
}

impl Default for ValueMask {
    fn default() -> Self {
        Self::ALL
    }
}

impl fmt::Display for ValueMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.components().join(","))
    }
}

impl FromStr for ValueMask {
    type Err = AssessmentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut seen = BTreeSet::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let canon = part.to_ascii_uppercase();
            match canon.as_str() {
                "G" | "M" | "TG" | "P" => {
                    seen.insert(canon);
                }
                _ => return Err(AssessmentError::UnknownComponent(part.to_string())),
            }
        }
        Ok(Self {
            generation: seen.contains("G"),
            mapping: seen.contains("M"),
            task_graph: seen.contains("TG"),
            partial_plan: seen.contains("P"),
        })
    }
}
