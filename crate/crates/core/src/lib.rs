//! Goal-oriented procedural planning with a language model in the loop.
//!
//! A planner samples candidate next steps from a completion backend, grounds each to an
//! admissible action by embedding similarity, scores it with four value functions and keeps
//! the best partial plans in a breadth-first beam until the horizon is reached.
//!
//! Everything numeric is generic over [`Score`] (`f32` or `f64`); the aliases below fix `f64`.

pub mod assessment;
pub mod domain;
pub mod evaluation;
pub mod grounding;
pub mod num;
pub mod perception;
pub mod proposer;
pub mod search;
pub mod simulator;

pub use domain::{ActionId, ActionPlan, AdmissibleActionSet, PlanningQuery, Setup, Step};
pub use num::Score;

pub type ValueBreakdown = domain::ValueBreakdown<f64>;
pub type ValueWeights = assessment::ValueWeights<f64>;
pub type SearchConfig = search::SearchConfig<f64>;
pub type SearchTrace = search::SearchTrace<f64>;
pub type Planner = search::Planner<f64>;
pub type Grounder = grounding::Grounder<f64>;
