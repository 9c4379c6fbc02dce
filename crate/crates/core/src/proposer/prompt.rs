//! Prompt templates for next-action proposal and partial-plan evaluation.
//!
//! Rendering is a pure function of its inputs. [`parse_prompt`] reads the query block back,
//! which lets simulated backends answer from the exact text a live model would see.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::domain::{Observation, PlanningQuery, Setup, Step};

pub const PROPOSAL_HEADER: &str = "You are a helpful assistant that plans the steps of procedural tasks.\n\
Given a goal, what has been done so far, and the steps planned so far, write the single next step.\n\
Answer with a short step description only.";

pub const EVALUATION_HEADER: &str = "You are a helpful assistant that checks plans for procedural tasks.\n\
Decide whether the planned steps are a sound way to make progress toward the goal.";

pub const EVALUATION_QUESTION: &str =
    "Question: Are the planned steps correct and in a sensible order for reaching the goal? Answer YES or NO.";

const QUERY_MARKER: &str = "Task";
const NEXT_STEP_CUE: &str = "Next step:";
const ANSWER_CUE: &str = "Answer:";

/// Maximum in-context examples that fit the prompt for each setup.
pub fn shot_limit(setup: Setup) -> usize {
    match setup {
        Setup::Vpa => 3,
        Setup::Pp => 10,
    }
}

/// A (goal, plan) demonstration drawn from the training split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InContextExample {
    pub goal: String,
    pub plan: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    NextAction,
    PlanEvaluation,
}

fn numbered(out: &mut String, items: impl IntoIterator<Item = impl AsRef<str>>) {
    let mut any = false;
    for (i, item) in items.into_iter().enumerate() {
        let _ = writeln!(out, "{}. {}", i + 1, item.as_ref());
        any = true;
    }
    if !any {
        out.push_str("none\n");
    }
}

fn query_block(out: &mut String, query: &PlanningQuery, partial: &[Step]) {
    out.push_str(QUERY_MARKER);
    out.push('\n');
    match (&query.observation, query.setup) {
        (Observation::History { steps }, _) => {
            let _ = writeln!(out, "Goal: {}", query.goal_text());
            out.push_str("Completed steps:\n");
            numbered(out, steps.iter().map(|s| s.description.as_str()));
        }
        (Observation::StartImageStep { step }, _) => {
            let _ = writeln!(out, "Start step: {}", step.description);
            let _ = writeln!(out, "Final step: {}", query.goal_text());
        }
    }
    out.push_str("Planned steps:\n");
    numbered(out, partial.iter().map(|s| s.description.as_str()));
}

/// Renders the next-action proposal prompt.
pub fn build_next_action_prompt(query: &PlanningQuery, partial: &[Step], examples: &[InContextExample]) -> String {
    let mut out = String::with_capacity(512 + 64 * (partial.len() + examples.len() * 6));
    out.push_str(PROPOSAL_HEADER);
    out.push_str("\n\n");
    for (i, ex) in examples.iter().enumerate() {
        let _ = writeln!(out, "Example {}", i + 1);
        let _ = writeln!(out, "Goal: {}", ex.goal);
        out.push_str("Plan:\n");
        numbered(&mut out, &ex.plan);
        out.push('\n');
    }
    query_block(&mut out, query, partial);
    out.push_str(NEXT_STEP_CUE);
    out
}

/// Renders the YES/NO partial-plan evaluation prompt; `partial` includes the candidate step.
pub fn build_plan_evaluation_prompt(query: &PlanningQuery, partial: &[Step]) -> String {
    let mut out = String::with_capacity(512 + 64 * partial.len());
    out.push_str(EVALUATION_HEADER);
    out.push_str("\n\n");
    query_block(&mut out, query, partial);
    out.push_str(EVALUATION_QUESTION);
    out.push('\n');
    out.push_str(ANSWER_CUE);
    out
}

/// The query block of a rendered prompt.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParsedPrompt {
    pub kind: Option<PromptKind>,
    pub goal: Option<String>,
    pub start_step: Option<String>,
    pub final_step: Option<String>,
    pub completed: Vec<String>,
    pub planned: Vec<String>,
    pub example_count: usize,
}

impl ParsedPrompt {
    /// The most recent known step: last planned, else last completed, else the start step.
    pub fn last_step(&self) -> Option<&str> {
        self.planned
            .last()
            .or(self.completed.last())
            .or(self.start_step.as_ref())
            .map(String::as_str)
    }

    /// The step the plan continues from, ignoring planned steps.
    pub fn anchor(&self) -> Option<&str> {
        self.completed.last().or(self.start_step.as_ref()).map(String::as_str)
    }
}

/// Reads back the query block of a prompt produced by this module.
pub fn parse_prompt(prompt: &str) -> Option<ParsedPrompt> {
    let lines = prompt.lines().collect::<Vec<_>>();
    let start = lines.iter().rposition(|l| *l == QUERY_MARKER)?;
    let mut parsed = ParsedPrompt {
        example_count: lines[..start].iter().filter(|l| l.starts_with("Example ")).count(),
        ..ParsedPrompt::default()
    };
    enum Section {
        None,
        Completed,
        Planned,
    }
    let mut section = Section::None;
    for line in &lines[start + 1..] {
        if let Some(rest) = line.strip_prefix("Goal: ") {
            parsed.goal = Some(rest.to_string());
            section = Section::None;
        } else if let Some(rest) = line.strip_prefix("Start step: ") {
            parsed.start_step = Some(rest.to_string());
            section = Section::None;
        } else if let Some(rest) = line.strip_prefix("Final step: ") {
            parsed.final_step = Some(rest.to_string());
            section = Section::None;
        } else if *line == "Completed steps:" {
            section = Section::Completed;
        } else if *line == "Planned steps:" {
            section = Section::Planned;
        } else if *line == NEXT_STEP_CUE {
            parsed.kind = Some(PromptKind::NextAction);
            section = Section::None;
        } else if *line == ANSWER_CUE {
            parsed.kind = Some(PromptKind::PlanEvaluation);
            section = Section::None;
        } else if line.starts_with("Question:") || *line == "none" {
            continue;
        } else if let Some((num, text)) = line.split_once(". ") {
            if num.chars().all(|c| c.is_ascii_digit()) {
                match section {
                    Section::Completed => parsed.completed.push(text.to_string()),
                    Section::Planned => parsed.planned.push(text.to_string()),
                    Section::None => {}
                }
            }
        }
    }
    Some(parsed)
}
