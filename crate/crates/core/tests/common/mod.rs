//! Fixtures shared by the integration tests.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use goalplan::assessment::{build_task_graph, ValueWeights};
use goalplan::grounding::{Grounder, HashEmbedder};
use goalplan::proposer::mock::choice;
use goalplan::proposer::prompt::{parse_prompt, PromptKind};
use goalplan::proposer::{BackendError, CompletionRequest, CompletionResponse, FnBackend, Proposer, SamplingConfig};
use goalplan::search::{exhaustive_oracle, Planner, SearchConfig};
use goalplan::simulator::keyed_rng;
use goalplan::{ActionId, AdmissibleActionSet, PlanningQuery, Setup};

pub const NAMES: [&str; 5] = ["open the lid", "pour the water", "stir the bowl", "wipe the board", "close the valve"];

/// Backend that proposes every action once and scores by hashing the full partial plan.
pub fn exhaustive_backend(fixture: u64, c: usize) -> Arc<FnBackend<impl Fn(&CompletionRequest) -> Result<CompletionResponse, BackendError> + Send + Sync>> {
    Arc::new(FnBackend(move |req: &CompletionRequest| {
        let parsed = parse_prompt(&req.prompt).ok_or_else(|| BackendError::Protocol("unparseable".into()))?;
        let key = format!("{}|{}", parsed.anchor().unwrap_or(""), parsed.planned.join("|"));
        let choices = match parsed.kind {
            Some(PromptKind::NextAction) => (0..req.n)
                .map(|i| {
                    let name = NAMES[i % c];
                    let mut rng = keyed_rng(&[b"gen", &fixture.to_le_bytes(), key.as_bytes(), name.as_bytes()]);
                    let lp = -rng.random_range(0.05..3.0);
                    choice(i, name, vec![lp; name.split_whitespace().count()], BTreeMap::new())
                })
                .collect(),
            Some(PromptKind::PlanEvaluation) => {
                let mut rng = keyed_rng(&[b"eval", &fixture.to_le_bytes(), key.as_bytes()]);
                let yes: f64 = rng.random_range(-4.0..0.0);
                let no: f64 = rng.random_range(-4.0..0.0);
                let top = [("YES".to_string(), yes), ("NO".to_string(), no)].into_iter().collect();
                vec![choice(0, "YES", vec![yes], top)]
            }
            None => return Err(BackendError::Protocol("no cue".into())),
        };
        Ok(CompletionResponse { choices })
    }))
}

/// Plans one random fixture and compares the result with the exhaustive oracle.
///
/// The beam defaults to K̃ = K = C; `width_override` replaces K̃.
pub fn oracle_fixture(fixture: u64, width_override: Option<usize>) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(fixture);
    let c = rng.random_range(2..=5usize);
    let setup = if rng.random_bool(0.5) { Setup::Vpa } else { Setup::Pp };
    let t = match setup {
        Setup::Vpa => rng.random_range(1..=4usize),
        Setup::Pp => rng.random_range(2..=4usize),
    };
    let actions = AdmissibleActionSet::new(NAMES[..c].iter().copied()).unwrap();
    let step = |i: usize| actions.step(ActionId(i)).unwrap();
    let query = match setup {
        Setup::Vpa => PlanningQuery::vpa("task", "finish the job", vec![step(rng.random_range(0..c))], t).unwrap(),
        Setup::Pp => PlanningQuery::pp("task", step(rng.random_range(0..c)), step(rng.random_range(0..c)), t).unwrap(),
    };
    let graph = build_task_graph(
        &(0..3).map(|_| (0..4).map(|_| ActionId(rng.random_range(0..c))).collect()).collect::<Vec<Vec<_>>>(),
    );
    let grounder = Arc::new(Grounder::<f64>::new(&actions, Arc::new(HashEmbedder::default())).unwrap());
    let width = width_override.unwrap_or(c);
    // extra samples cycle through the vocabulary again and merge into the same children
    let config = SearchConfig {
        k_samples: width.max(c),
        beam_width: width,
        weights: if setup == Setup::Vpa { ValueWeights::vpa() } else { ValueWeights::pp() },
        reject_repeats: false,
        parallel: false,
        ..SearchConfig::default()
    };
    let proposer = Proposer::new(exhaustive_backend(fixture, c), SamplingConfig::default()).unwrap();
    let planner = Planner::new(proposer, grounder, config).unwrap().with_task_graph(Arc::new(graph));
    let searched = planner.plan(&query).map(|(p, _)| p.ids());
    let oracle = exhaustive_oracle(&planner, &query).map(|(p, _)| p.ids());
    match (searched, oracle) {
        (Ok(a), Ok(b)) => (a == b, format!("fixture {fixture} {setup} C={c} T={t}")),
        (a, b) => (false, format!("fixture {fixture}: search {:?} oracle {:?}", a.err(), b.err())),
    }
}

