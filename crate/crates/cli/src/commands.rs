use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vqbe_bench::{resolve_target, run_experiment, BenchError, ExperimentSpec};
use vqbe_core::datagen::{derive_seed, generate, GenSpec};
use vqbe_core::synth::{default_executor, HyperFile, SynthesisError};
use vqbe_core::{
    emit_sql, match_reference, parse, DatasetFormat, DslError, GroundTruthOracle, Hyperparams, Label, LabelOracle,
    LabeledPool, NoiseSpec, NoisyOracle, Query, SearchConfig, SegmentStore, Synthesis,
};
use vqbe_server::api::VidLabel;
use vqbe_server::AppState;

use crate::prompt::PromptOracle;
use crate::{BenchArgs, Command, ExecuteArgs, GenerateArgs, OracleKind, ServeArgs, Space, SynthesizeArgs};

#[derive(Debug)]
pub enum CliError {
    User(String),
    Internal(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::User(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

fn user(e: impl fmt::Display) -> CliError {
    CliError::User(e.to_string())
}

fn internal(e: impl fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

impl From<DslError> for CliError {
    fn from(e: DslError) -> Self {
        user(e)
    }
}

impl From<SynthesisError> for CliError {
    fn from(e: SynthesisError) -> Self {
        match e {
            SynthesisError::Exec(_) => internal(e),
            _ => user(e),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Spec(_) | BenchError::Query(_) | BenchError::Json(_) => user(e),
            BenchError::Io(_) | BenchError::Csv(_) => internal(e),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate(a) => cmd_generate(a),
        Command::Execute(a) => cmd_execute(a),
        Command::EmitSql { query } => {
            let registry = default_executor().registry().clone();
            let q = parse(&query, &registry)?;
            let sql = emit_sql(&q, &registry).map_err(user)?;
            print_out(&sql)
        }
        Command::Synthesize(a) => cmd_synthesize(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Serve(a) => cmd_serve(a),
    }
}

fn print_out(text: &str) -> Result<()> {
    let mut out = io::stdout().lock();
    writeln!(out, "{}", text.trim_end_matches('\n')).map_err(internal)
}

fn load_store(path: &Path, format: Option<&str>) -> Result<SegmentStore> {
    let format = match format {
        Some(f) => f.parse::<DatasetFormat>().map_err(user)?,
        None if path.is_dir() => DatasetFormat::CsvDir,
        None => DatasetFormat::Jsonl,
    };
    SegmentStore::load(path, format).map_err(|e| user(format!("{}: {e}", path.display())))
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let base = if a.pairs { GenSpec::pairs(a.segments, a.seed) } else { GenSpec::default() };
    let spec = GenSpec {
        n_segments: a.segments,
        seed: a.seed,
        frames_per_segment: a.frames.unwrap_or(base.frames_per_segment),
        ..base
    };
    spec.validate().map_err(user)?;
    let format = a.format.parse::<DatasetFormat>().map_err(user)?;
    let store = generate(&spec);
    match (format, &a.out) {
        (DatasetFormat::Jsonl, None) => {
            let mut out = BufWriter::new(io::stdout().lock());
            store.write_jsonl(&mut out).map_err(internal)?;
            out.flush().map_err(internal)?;
        }
        (DatasetFormat::Jsonl, Some(path)) => {
            let file = fs::File::create(path).map_err(|e| user(format!("{}: {e}", path.display())))?;
            let mut w = BufWriter::new(file);
            store.write_jsonl(&mut w).map_err(internal)?;
            w.flush().map_err(internal)?;
        }
        (DatasetFormat::CsvDir, Some(dir)) => store.write_csv_dir(dir).map_err(|e| user(format!("{}: {e}", dir.display())))?,
        (DatasetFormat::CsvDir, None) => return Err(user("csv-dir output needs --out")),
    }
    if let Some(path) = &a.out {
        eprintln!("wrote {} segments to {}", store.len(), path.display());
    }
    Ok(())
}

fn cmd_execute(a: ExecuteArgs) -> Result<()> {
    let store = load_store(&a.dataset, a.format.as_deref())?;
    let ex = default_executor().with_workers(a.workers).map_err(user)?;
    let q = parse(&a.query, ex.registry())?;
    let vids: Vec<&str> = store.vids().collect();
    let matching: Vec<String> = if q.window.is_some() {
        // windows are only supported by the reference matcher
        let mut m = Vec::new();
        for s in store.segments() {
            if match_reference(&q, s, ex.registry()).map_err(user)?.is_some() {
                m.push(s.vid.clone());
            }
        }
        m
    } else {
        ex.execute(&q, &store, &vids).map_err(internal)?.into_iter().collect()
    };
    let mut out = BufWriter::new(io::stdout().lock());
    for v in matching {
        writeln!(out, "{v}").map_err(internal)?;
    }
    out.flush().map_err(internal)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| user(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| user(format!("{}: {e}", path.display())))
}

fn search_space(a: &SynthesizeArgs, target: Option<&Query>) -> (SearchConfig, Hyperparams) {
    match a.search {
        Some(Space::SceneGraph) => (SearchConfig::scene_graph(), Hyperparams::scene_graph()),
        Some(Space::Trajectory) => (SearchConfig::trajectory(), Hyperparams::trajectory()),
        // duration refinement only pays off when the target has durations
        None => match target {
            Some(t) if t.graphs.iter().all(|g| g.duration <= 1) => (SearchConfig::trajectory().without_durations(), Hyperparams::trajectory()),
            _ => (SearchConfig::trajectory(), Hyperparams::trajectory()),
        },
    }
}

/// Initial labels as the labeler sees them: `pos` positives and `neg`
/// negatives drawn uniformly by `seed`.
fn draw_initial(store: &SegmentStore, oracle: &mut dyn LabelOracle, pos: usize, neg: usize, seed: u64) -> Result<LabeledPool> {
    let mut vids: Vec<&str> = store.vids().collect();
    vids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (mut p, mut n) = (Vec::new(), Vec::new());
    for v in vids {
        if p.len() == pos && n.len() == neg {
            break;
        }
        match oracle.label(v).map_err(internal)? {
            Label::Pos if p.len() < pos => p.push(v),
            Label::Neg if n.len() < neg => n.push(v),
            _ => {}
        }
    }
    if p.len() < pos || n.len() < neg {
        return Err(user(format!("dataset has only {} positive and {} negative segments for the target", p.len(), n.len())));
    }
    p.sort_unstable();
    n.sort_unstable();
    Ok(LabeledPool::initial(p.into_iter().map(|v| (v, Label::Pos)).chain(n.into_iter().map(|v| (v, Label::Neg))))?)
}

fn cmd_synthesize(a: SynthesizeArgs) -> Result<()> {
    let store = Arc::new(match &a.data.dataset {
        Some(path) => load_store(path, a.data.format.as_deref())?,
        None => generate(&GenSpec::pairs(a.segments, a.seed)),
    });
    let ex = default_executor().with_workers(a.workers).map_err(user)?;
    let target = match &a.target {
        Some(t) => Some(resolve_target(t, ex.registry())?.1),
        None => None,
    };
    let (mut config, mut hyper) = search_space(&a, target.as_ref());
    if let Some(path) = &a.config {
        read_json::<HyperFile>(path)?.apply(&mut config, &mut hyper);
    }
    hyper.seed = a.seed;
    if let Some(b) = a.budget {
        hyper.b = b;
    }

    let mut oracle: Box<dyn LabelOracle> = match (a.oracle, &target) {
        (OracleKind::Interactive, _) => Box::new(PromptOracle::new(io::BufReader::new(io::stdin()))),
        (_, None) => return Err(user("--target is required for the ground-truth and noisy oracles")),
        (kind, Some(t)) => {
            let base = GroundTruthOracle::new(t, store.clone(), ex.clone()).map_err(user)?;
            if kind == OracleKind::Noisy {
                let noise = NoiseSpec {
                    fn_rate: a.fn_rate,
                    fp_rate: a.fp_rate,
                    seed: derive_seed(a.seed, 1),
                };
                noise.validate().map_err(user)?;
                Box::new(NoisyOracle::new(base, noise))
            } else {
                Box::new(base)
            }
        }
    };
    let initial = match &a.labels {
        Some(path) => {
            let labels: Vec<VidLabel> = read_json(path)?;
            LabeledPool::initial(labels.into_iter().map(|l| (l.vid, l.label)))?
        }
        None if a.oracle == OracleKind::Interactive => return Err(user("the interactive oracle needs --labels")),
        None => draw_initial(&store, oracle.as_mut(), a.initial_pos, a.initial_neg, derive_seed(a.seed, 2))?,
    };
    for e in initial.entries() {
        if store.get(&e.vid).is_none() {
            return Err(user(format!("unknown segment {}", e.vid)));
        }
    }
    let result = Synthesis::new(&store, config, hyper, ex)
        .observer(|p| {
            let best = p.top.first().map(|e| e.query.as_str()).unwrap_or("-");
            eprintln!("iteration {}: {}/{} labels, best {best}", p.iteration, p.labels_used, p.budget);
        })
        .run(initial, oracle.as_mut())?;
    print_out(&serde_json::to_string_pretty(&result).map_err(internal)?)
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let text = fs::read_to_string(&a.experiment).map_err(|e| user(format!("{}: {e}", a.experiment.display())))?;
    let mut spec = ExperimentSpec::from_json(&text)?;
    if let Some(w) = a.workers {
        spec.workers = w;
    }
    let report = run_experiment(&spec)?;
    if let Some(dir) = &a.out {
        for name in report.write_dir(dir)? {
            eprintln!("wrote {}", dir.join(name).display());
        }
    }
    print_out(&report.to_json()?)
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let mut datasets = BTreeMap::new();
    for entry in &a.datasets {
        let (name, path) = entry.split_once('=').ok_or_else(|| user(format!("expected NAME=PATH, got {entry:?}")))?;
        if name.is_empty() {
            return Err(user(format!("empty dataset name in {entry:?}")));
        }
        let store = load_store(Path::new(path), None)?;
        eprintln!("loaded {} segments as {name}", store.len());
        datasets.insert(name.to_string(), Arc::new(store));
    }
    let state = AppState::with_options(datasets, a.event_log.as_deref(), a.workers).map_err(user)?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(internal)?;
    rt.block_on(vqbe_server::serve(a.addr, state)).map_err(user)
}
