use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use goalplan::assessment::{ValueMask, ValueWeights};
use goalplan::evaluation::{
    make_samples, run_ablation, summary_table, write_run, Experiment, ExperimentConfig, HistorySource, TraceRecord,
};
use goalplan::grounding::{EmbeddingCache, EmbeddingProvider, HashEmbedder, HttpEmbeddings};
use goalplan::perception::{import, read_jsonl, write_jsonl, AnnotatedVideo, NormalizedSample, Vocabulary};
use goalplan::proposer::{
    CompletionBackend, HttpBackend, HttpBackendConfig, MockBackend, MockFixture, RecordingBackend, ReplayBackend,
};
use goalplan::search::SearchConfig;
use goalplan::simulator::{self, OracleBackend, SimConfig, SyntheticWorld, WorldParams};
use goalplan::Setup;

#[derive(Parser)]
#[command(name = "plan", version, about = "Goal-conditioned procedural planning with beam search over LLM proposals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan every sample of a dataset and score the plans.
    Run(RunArgs),
    /// Repeat a run once per value-function mask.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Components to enable, e.g. `G,M,TG,P`; repeat for several rows. Defaults to the eight standard rows.
        #[arg(long = "mask")]
        masks: Vec<ValueMask>,
    },
    /// Print the search trace of one sample from a finished run.
    Trace {
        #[arg(long)]
        sample: String,
        /// Run directory holding `traces.jsonl`.
        #[arg(long, default_value = "out")]
        run: PathBuf,
    },
    /// Plan in generated worlds with a simulated backend.
    Simulate(SimArgs),
    /// Convert raw annotations into `videos.jsonl` and `vocab.jsonl`.
    Import {
        format: ImportFormat,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the normalized samples a run would use.
    Samples {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_parser = parse_setup)]
        setup: Setup,
        #[arg(long)]
        horizon: usize,
        #[arg(long, default_value = "predicted")]
        history: HistorySource,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ImportFormat {
    Coin,
    Crosstask,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum WeightPreset {
    Vpa,
    Pp,
    Custom,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML file with defaults for any of the options below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_setup)]
    setup: Option<Setup>,
    /// Directory with `videos.jsonl` and `vocab.jsonl`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Vocabulary file; defaults to `<dataset>/vocab.jsonl`.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Normalized samples to plan instead of deriving them from the dataset.
    #[arg(long)]
    samples: Option<PathBuf>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long)]
    history: Option<HistorySource>,
    #[arg(long)]
    weights: Option<WeightPreset>,
    /// Custom weights as `G,M,TG,P`.
    #[arg(long)]
    custom_weights: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Completion backend: an http(s) URL, `mock`, `replay` or `sim`.
    #[arg(long)]
    backend: Option<String>,
    /// Fixture file for the mock and replay backends.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// World file for the `sim` backend.
    #[arg(long)]
    world: Option<PathBuf>,
    #[arg(long)]
    noise: Option<f64>,
    /// Save every backend exchange to this replay file.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Embedding service URL; hashed embeddings are used when absent.
    #[arg(long)]
    embeddings: Option<String>,
    #[arg(long)]
    embedding_cache: Option<PathBuf>,
    #[arg(long)]
    max_in_flight: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Defaults read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    setup: Option<Setup>,
    dataset: Option<PathBuf>,
    vocab: Option<PathBuf>,
    samples: Option<PathBuf>,
    horizon: Option<usize>,
    shots: Option<usize>,
    history: Option<HistorySource>,
    weights: Option<WeightPreset>,
    custom_weights: Option<ValueWeights<f64>>,
    k: Option<usize>,
    beam: Option<usize>,
    seed: Option<u64>,
    backend: Option<String>,
    fixtures: Option<PathBuf>,
    world: Option<PathBuf>,
    noise: Option<f64>,
    embeddings: Option<String>,
    embedding_cache: Option<PathBuf>,
    max_in_flight: Option<usize>,
    out: Option<PathBuf>,
    search: Option<SearchConfig<f64>>,
    http: Option<HttpBackendConfig>,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    actions: usize,
    #[arg(long, default_value_t = 3)]
    branching: usize,
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    #[arg(long, default_value_t = 0.6)]
    dominant: f64,
    #[arg(long, default_value_t = 10)]
    worlds: usize,
    #[arg(long, default_value_t = 50)]
    queries: usize,
    #[arg(long, default_value_t = 3)]
    horizon: usize,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 3)]
    beam: usize,
    #[arg(long, default_value = "vpa", value_parser = parse_setup)]
    setup: Setup,
    #[arg(long, default_value_t = 0)]
    shots: usize,
    #[arg(long, default_value = "G,M,TG,P")]
    mask: ValueMask,
    /// Allow a step to repeat the one before it.
    #[arg(long)]
    allow_repeats: bool,
    /// Sweep one setting, e.g. `k_beam=1,2,3,5`, `k=5,10`, `horizon=1,3,4` or `noise=0,0.3`.
    #[arg(long)]
    sweep: Option<String>,
    #[arg(long, default_value = "sim-out")]
    out: PathBuf,
}

fn parse_setup(s: &str) -> Result<Setup, String> {
    match s.to_ascii_lowercase().as_str() {
        "vpa" => Ok(Setup::Vpa),
        "pp" => Ok(Setup::Pp),
        other => Err(format!("unknown setup {other:?}; expected vpa or pp")),
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(args) => run(args, None),
        Command::Ablate { run: args, masks } => {
            let masks = if masks.is_empty() { ValueMask::ABLATION_ROWS.to_vec() } else { masks };
            run(args, Some(masks))
        }
        Command::Trace { sample, run } => trace(&run, &sample),
        Command::Simulate(args) => simulate(args),
        Command::Import { format, annotations, out } => {
            let data = match format {
                ImportFormat::Coin => import::import_coin(&annotations)?,
                ImportFormat::Crosstask => import::import_crosstask(&annotations)?,
            };
            data.save(&out)?;
            println!("imported {} videos and {} actions into {}", data.videos.len(), data.vocabulary.len(), out.display());
            Ok(())
        }
        Command::Samples { dataset, setup, horizon, history, out } => {
            let (videos, vocab) = load_dataset(&dataset, None)?;
            let (samples, skipped) = make_samples(&videos, &vocab, setup, horizon, history)?;
            write_jsonl(&out, &samples)?;
            println!("wrote {} samples ({} videos skipped)", samples.len(), skipped.len());
            Ok(())
        }
    }
}

fn load_dataset(dir: &Path, vocab: Option<&Path>) -> Result<(Vec<AnnotatedVideo>, Vocabulary)> {
    let videos_path = dir.join("videos.jsonl");
    let videos = read_jsonl(&videos_path).with_context(|| format!("reading {}", videos_path.display()))?;
    let vocab_path = vocab.map(Path::to_path_buf).unwrap_or_else(|| dir.join("vocab.jsonl"));
    let vocab = Vocabulary::load(&vocab_path).with_context(|| format!("reading {}", vocab_path.display()))?;
    Ok((videos, vocab))
}

fn env(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.is_empty())
}

fn parse_weights(text: &str) -> Result<ValueWeights<f64>> {
    let parts = text.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<Vec<_>, _>>()?;
    let [g, m, tg, p] = parts[..] else { bail!("custom weights need four values G,M,TG,P, got {text:?}") };
    Ok(ValueWeights::new(g, m, tg, p)?)
}

type Recorder = Arc<RecordingBackend<Arc<dyn CompletionBackend>>>;

struct Backend {
    inner: Arc<dyn CompletionBackend>,
    label: String,
    recorder: Option<(Recorder, PathBuf)>,
}

fn backend(args: &RunArgs, file: &FileConfig) -> Result<Backend> {
    let kind = args
        .backend
        .clone()
        .or_else(|| file.backend.clone())
        .or_else(|| env("PLAN_BACKEND_URL"))
        .context("no backend given; pass --backend or set PLAN_BACKEND_URL")?;
    let fixtures = || args.fixtures.clone().or_else(|| file.fixtures.clone()).context("this backend needs --fixtures");
    let (inner, label): (Arc<dyn CompletionBackend>, String) = match kind.as_str() {
        "mock" => {
            let path = fixtures()?;
            (Arc::new(MockBackend::new(MockFixture::load(&path)?)), format!("mock:{}", path.display()))
        }
        "replay" => {
            let path = fixtures()?;
            (Arc::new(ReplayBackend::load(&path)?), format!("replay:{}", path.display()))
        }
        "sim" => {
            let path = args.world.clone().or_else(|| file.world.clone()).context("the sim backend needs --world")?;
            let noise = args.noise.or(file.noise).unwrap_or(0.0);
            let world = SyntheticWorld::load(&path)?;
            (Arc::new(OracleBackend::new(Arc::new(world), noise)), format!("sim:noise={noise}"))
        }
        url if url.starts_with("http://") || url.starts_with("https://") => {
            let mut config = file.http.clone().unwrap_or_default();
            config.url = url.to_string();
            if let Some(model) = env("PLAN_MODEL") {
                config.model = model;
            }
            config.api_key = env("PLAN_BACKEND_TOKEN");
            let label = format!("http:{}", config.model);
            (Arc::new(HttpBackend::connect(config)?), label)
        }
        other => bail!("unknown backend {other:?}; expected a URL, mock, replay or sim"),
    };
    match &args.record {
        Some(path) => {
            let rec = Arc::new(RecordingBackend::new(inner));
            Ok(Backend { inner: rec.clone(), label, recorder: Some((rec, path.clone())) })
        }
        None => Ok(Backend { inner, label, recorder: None }),
    }
}

fn embeddings(args: &RunArgs, file: &FileConfig) -> Result<Arc<dyn EmbeddingProvider>> {
    let url = args.embeddings.clone().or_else(|| file.embeddings.clone()).or_else(|| env("PLAN_EMBEDDING_URL"));
    let base: Box<dyn EmbeddingProvider> = match url {
        Some(url) => Box::new(HttpEmbeddings::new(url, env("PLAN_BACKEND_TOKEN"))),
        None => Box::new(HashEmbedder::default()),
    };
    Ok(match args.embedding_cache.clone().or_else(|| file.embedding_cache.clone()) {
        Some(path) => Arc::new(EmbeddingCache::open(&path, Some(base))?),
        None => Arc::from(base),
    })
}

fn run(args: RunArgs, masks: Option<Vec<ValueMask>>) -> Result<()> {
    let file: FileConfig = match &args.config {
        Some(path) => toml::from_str(&fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)
            .with_context(|| format!("parsing {}", path.display()))?,
        None => FileConfig::default(),
    };
    let setup = args.setup.or(file.setup).context("--setup is required")?;
    let dataset = args.dataset.clone().or_else(|| file.dataset.clone()).context("--dataset is required")?;
    let vocab_path = args.vocab.clone().or_else(|| file.vocab.clone());
    let (videos, vocab) = load_dataset(&dataset, vocab_path.as_deref())?;
    let horizon = args.horizon.or(file.horizon).unwrap_or(3);
    let history = args.history.or(file.history).unwrap_or_default();

    let mut search = file.search.clone().unwrap_or_else(|| SearchConfig::for_setup(setup));
    // weights follow the setup unless chosen explicitly
    search.weights = match args.weights.or(file.weights) {
        None if setup == Setup::Pp => ValueWeights::pp(),
        None | Some(WeightPreset::Vpa) => ValueWeights::vpa(),
        Some(WeightPreset::Pp) => ValueWeights::pp(),
        Some(WeightPreset::Custom) => match (&args.custom_weights, file.custom_weights) {
            (Some(text), _) => parse_weights(text)?,
            (None, Some(w)) => w,
            (None, None) => bail!("--weights custom needs --custom-weights G,M,TG,P"),
        },
    };
    if let Some(k) = args.k.or(file.k) {
        search.k_samples = k;
    }
    if let Some(beam) = args.beam.or(file.beam) {
        search.beam_width = beam;
    }
    if let Some(seed) = args.seed.or(file.seed) {
        search.seed = seed;
    }
    let config = ExperimentConfig {
        setup,
        horizon,
        shots: args.shots.or(file.shots).unwrap_or(0),
        history,
        search,
        max_in_flight: args.max_in_flight.or(file.max_in_flight).unwrap_or(8),
        ..ExperimentConfig::default()
    };

    let samples: Vec<NormalizedSample> = match args.samples.clone().or_else(|| file.samples.clone()) {
        Some(path) => read_jsonl(&path).with_context(|| format!("reading {}", path.display()))?,
        None => {
            let (samples, skipped) = make_samples(&videos, &vocab, setup, horizon, history)?;
            for s in &skipped {
                log::info!("skipped {}: {}", s.video_id, s.reason);
            }
            if !skipped.is_empty() {
                eprintln!("{} videos skipped; set RUST_LOG=info for reasons", skipped.len());
            }
            samples
        }
    };
    let backend = backend(&args, &file)?;
    let experiment = Experiment {
        videos: &videos,
        vocab: &vocab,
        backend: backend.inner.clone(),
        embeddings: embeddings(&args, &file)?,
        backend_label: backend.label.clone(),
        config,
    };
    let out = args.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from("out"));

    match masks {
        None => {
            let output = experiment.run(&samples)?;
            write_run(&out, &output)?;
            print!("{}", summary_table(&output.report));
        }
        Some(masks) => {
            let (rows, reports) = run_ablation(&experiment, &samples, &masks, Some(&out))?;
            fs::write(out.join("ablation.json"), serde_json::to_string_pretty(&rows)? + "\n")?;
            for (row, report) in rows.iter().zip(&reports) {
                let m = &report.metrics.overall;
                println!(
                    "row {} [{}]: SR {:.2} mAcc {:.2} mIoU {:.2}",
                    row.row,
                    row.enabled_components.join(","),
                    100.0 * m.sr,
                    100.0 * m.macc,
                    100.0 * m.miou
                );
            }
        }
    }
    if let Some((rec, path)) = &backend.recorder {
        rec.save(path)?;
        eprintln!("recorded {} exchanges to {}", rec.len(), path.display());
    }
    Ok(())
}

fn trace(run: &Path, sample: &str) -> Result<()> {
    let path = run.join("traces.jsonl");
    let traces: Vec<TraceRecord<f64>> = read_jsonl(&path).with_context(|| format!("reading {}", path.display()))?;
    let record = traces
        .into_iter()
        .find(|t| t.sample_id == sample)
        .with_context(|| format!("no sample {sample:?} in {}", path.display()))?;
    match record.trace {
        Some(t) => println!("{}", serde_json::to_string_pretty(&t)?),
        None => bail!("sample {sample:?} has no trace"),
    }
    Ok(())
}

fn simulate(args: SimArgs) -> Result<()> {
    let config = SimConfig {
        world: WorldParams {
            actions: args.actions,
            branching: args.branching,
            dominant: args.dominant,
            ..WorldParams::default()
        },
        worlds: args.worlds,
        queries_per_world: args.queries,
        noise: args.noise,
        setup: args.setup,
        horizon: args.horizon,
        max_horizon: args.horizon,
        k_samples: args.k,
        beam_width: args.beam,
        shots: args.shots,
        mask: args.mask,
        reject_repeats: !args.allow_repeats,
        seed: args.seed,
        ..SimConfig::default()
    };
    fs::create_dir_all(&args.out)?;
    let first = simulator::build_worlds(&SimConfig { worlds: 1, ..config.clone() })?;
    if let Some(w) = first.first() {
        w.world.save(&args.out.join("world0"))?;
    }

    let (parameter, values) = match &args.sweep {
        Some(spec) => simulator::parse_sweep(spec)?,
        None => (simulator::SweepParameter::KBeam, vec![args.beam as f64]),
    };
    let points = simulator::sweep(&config, parameter, &values)?;
    let mut table = String::from("parameter\tvalue\tsr\tstandard_error\tqueries\tfailed\n");
    for (point, records) in &points {
        let dir = args.out.join(format!("{}={}", point.parameter, point.value));
        fs::create_dir_all(&dir)?;
        write_jsonl(&dir.join("results.jsonl"), records)?;
        let s = &point.summary;
        table.push_str(&format!(
            "{}\t{}\t{:.6}\t{:.6}\t{}\t{}\n",
            point.parameter, point.value, s.sr, s.standard_error, s.queries, s.failed
        ));
    }
    fs::write(args.out.join("sweep.tsv"), &table)?;
    print!("{table}");
    Ok(())
}
