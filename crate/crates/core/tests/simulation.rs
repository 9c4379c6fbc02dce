//! Simulator-driven checks of the search and evaluation pipeline.

use std::sync::Arc;

use goalplan::assessment::ValueMask;
use goalplan::evaluation::{make_samples, Experiment, ExperimentConfig, HistorySource};
use goalplan::proposer::{RecordingBackend, ReplayBackend};
use goalplan::search::SearchConfig;
use goalplan::simulator::{generate_world_with, simulate, world_embeddings, OracleBackend, SimConfig, WorldParams};
use goalplan::Setup;

fn uniform_noise(reject_repeats: bool) -> (f64, f64, f64) {
    let c = 5;
    let t = 2;
    let config = SimConfig {
        world: WorldParams { actions: c, branching: 2, ..WorldParams::default() },
        worlds: 20,
        queries_per_world: 100,
        noise: 1.0,
        horizon: t,
        max_horizon: t,
        reject_repeats,
        ..SimConfig::default()
    };
    let (summary, _) = simulate(&config).unwrap();
    let choices = if reject_repeats { c - 1 } else { c };
    let expected = (1.0 / choices as f64).powi(t as i32);
    let se = (expected * (1.0 - expected) / summary.queries as f64).sqrt();
    (summary.sr, expected, se)
}

#[test]
fn uniform_noise_reduces_success_to_chance() {
    let (sr, expected, se) = uniform_noise(false);
    assert!((sr - expected).abs() <= 3.0 * se, "SR {sr} vs (1/C)^T = {expected} ± {se}");
}

#[test]
fn uniform_noise_with_repeat_rejection_is_chance_over_the_other_actions() {
    let (sr, expected, se) = uniform_noise(true);
    assert!((sr - expected).abs() <= 3.0 * se, "SR {sr} vs (1/(C-1))^T = {expected} ± {se}");
}

#[test]
fn all_four_values_do_at_least_as_well_as_plan_evaluation_alone() {
    let base = SimConfig { worlds: 20, queries_per_world: 25, noise: 0.3, shots: 5, ..SimConfig::default() };
    let only_p = ValueMask { generation: false, mapping: false, task_graph: false, partial_plan: true };
    let (p, _) = simulate(&SimConfig { mask: only_p, ..base.clone() }).unwrap();
    let (all, _) = simulate(&SimConfig { mask: ValueMask::ALL, ..base }).unwrap();
    assert!(all.sr >= p.sr, "all four {} < P only {}", all.sr, p.sr);
}

fn chain_experiment(setup: Setup) -> (goalplan::simulator::SyntheticWorld, ExperimentConfig<f64>) {
    let world = generate_world_with(WorldParams { seed: 4, actions: 7, branching: 1, train_per_task: 2, ..WorldParams::default() }).unwrap();
    let config = ExperimentConfig {
        setup,
        horizon: 3,
        shots: 2,
        history: HistorySource::Predicted,
        search: SearchConfig { k_samples: 4, ..SearchConfig::for_setup(setup) },
        ..ExperimentConfig::default()
    };
    (world, config)
}

#[test]
fn noiseless_oracle_solves_deterministic_chains_end_to_end() {
    for setup in [Setup::Vpa, Setup::Pp] {
        let (world, config) = chain_experiment(setup);
        let videos = world.videos();
        let vocab = world.vocabulary();
        let (samples, _) = make_samples(&videos, &vocab, setup, 3, HistorySource::Predicted).unwrap();
        assert!(!samples.is_empty());
        let experiment = Experiment {
            videos: &videos,
            vocab: &vocab,
            backend: Arc::new(OracleBackend::new(Arc::new(world.clone()), 0.0)),
            embeddings: world_embeddings(&world),
            backend_label: "sim".into(),
            config,
        };
        let out = experiment.run(&samples).unwrap();
        assert_eq!(out.report.metrics.overall.sr, 1.0, "{setup}");
        assert_eq!(out.report.metrics.overall.failed, 0);
    }
}

#[test]
fn replaying_a_recorded_run_gives_the_same_report() {
    let (world, config) = chain_experiment(Setup::Vpa);
    let videos = world.videos();
    let vocab = world.vocabulary();
    let (samples, _) = make_samples(&videos, &vocab, Setup::Vpa, 3, HistorySource::Predicted).unwrap();
    let recorder = Arc::new(RecordingBackend::new(OracleBackend::new(Arc::new(world.clone()), 0.4)));
    let live = Experiment {
        videos: &videos,
        vocab: &vocab,
        backend: recorder.clone(),
        embeddings: world_embeddings(&world),
        backend_label: "fixture".into(),
        config: config.clone(),
    }
    .run(&samples)
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("replay.jsonl");
    recorder.save(&path).unwrap();
    let replayed = Experiment {
        videos: &videos,
        vocab: &vocab,
        backend: Arc::new(ReplayBackend::load(&path).unwrap()),
        embeddings: world_embeddings(&world),
        backend_label: "fixture".into(),
        config,
    }
    .run(&samples)
    .unwrap();
    assert_eq!(live.report, replayed.report);
    assert_eq!(live.results, replayed.results);
}
