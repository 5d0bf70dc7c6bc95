//! The `relgt` command line: `synth`, `build-graph`, `sample`, `train`,
//! `eval`, `ablate` and `grad-check`.
//!
//! Domain errors exit with status 1 and a single JSON line on stderr,
//! `{"error": <kind>, "message": <text>}`; usage errors exit with status 2.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{build_graph, EntityGraph};
use crate::model::Model;
use crate::rng::tag;
use crate::sampler::{leakage_audit, sample_many, ContextRecord, SeedRequest};
use crate::schema::{load_database, load_schema, Database, RelationalSchema};
use crate::synth::{generate, SignalKind, SynthSpec};
use crate::toy::{grad_check_blocks, Toy};
use crate::train::{
    ablate, evaluate_split, format_table, k_sweep, read_labels, resolve_labels, standard_ablations,
    train_observed, Prepared, TaskSpec, TrainConfig,
};

#[derive(Debug, Parser)]
#[command(name = "relgt", version, about = "Relational graph transformer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic database with a planted label rule.
    Synth(SynthArgs),
    /// Ingest a database and write the entity-graph snapshot.
    BuildGraph(BuildGraphArgs),
    /// Sample seed contexts from a graph snapshot and write them as JSONL.
    Sample(SampleArgs),
    /// Train a model and write a run directory.
    Train(TrainArgs),
    /// Score a trained run on a split.
    Eval(EvalArgs),
    /// Retrain with each component removed, or sweep the context size.
    Ablate(AblateArgs),
    /// Finite-difference check of every model block on a toy batch.
    GradCheck(GradCheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON synthetic spec; flags override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub signal: Option<SignalKind>,
    #[arg(long)]
    pub customers: Option<usize>,
    #[arg(long)]
    pub products: Option<usize>,
    #[arg(long)]
    pub transactions: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Leave out the post-cutoff bait transactions.
    #[arg(long)]
    pub no_bait: bool,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Directory holding `schema.json` and one CSV per table.
    #[arg(long)]
    pub data: PathBuf,
    /// Manifest path, default `<data>/schema.json`.
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

impl DataArgs {
    fn schema_path(&self) -> PathBuf {
        self.schema.clone().unwrap_or_else(|| self.data.join("schema.json"))
    }

    fn load(&self) -> Result<(RelationalSchema, Database)> {
        let schema = load_schema(&self.schema_path())?;
        let db = load_database(&schema, &self.data)?;
        Ok((schema, db))
    }
}

#[derive(Debug, Args)]
pub struct BuildGraphArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Snapshot path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Graph snapshot written by `build-graph`.
    #[arg(long)]
    pub graph: PathBuf,
    /// `all:<table>` for every node of a table, or a CSV with columns
    /// `node` and optional `as_of` (seconds).
    #[arg(long)]
    pub seeds: String,
    /// As-of time for seeds that have neither a timestamp nor an `as_of`.
    #[arg(long)]
    pub as_of: Option<i64>,
    #[arg(long, default_value_t = 32)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Model and optimizer settings. Precedence: flags, then `--config`, then
/// `--paper-defaults` or the desk defaults.
#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// JSON file with any subset of the training configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from the large-scale settings (K 300, 4096 centroids, lr 1e-4).
    #[arg(long)]
    pub paper_defaults: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Number of global centroids.
    #[arg(long)]
    pub centroids: Option<usize>,
    #[arg(long)]
    pub no_global: bool,
    #[arg(long)]
    pub no_gnn_pe: bool,
    #[arg(long)]
    pub no_type: bool,
    #[arg(long)]
    pub no_hop: bool,
    #[arg(long)]
    pub no_time: bool,
    /// Feed relative times to the subgraph GNN instead of noise.
    #[arg(long)]
    pub stpe: bool,
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<TrainConfig> {
        let base = if self.paper_defaults {
            TrainConfig::paper()
        } else {
            TrainConfig::default()
        };
        let mut cfg = match &self.config {
            None => base,
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let patch: Value = serde_json::from_str(&text)
                    .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
                let mut v = serde_json::to_value(&base).expect("config serializes");
                merge(&mut v, patch);
                serde_json::from_value(v)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
        };
        macro_rules! set {
            ($field:expr, $flag:expr) => {
                if let Some(v) = $flag {
                    $field = v;
                }
            };
        }
        set!(cfg.seed, self.seed);
        set!(cfg.k, self.k);
        set!(cfg.epochs, self.epochs);
        set!(cfg.batch_size, self.batch_size);
        set!(cfg.lr, self.lr);
        set!(cfg.patience, self.patience);
        set!(cfg.model.tokenizer.d, self.d);
        set!(cfg.model.layers, self.layers);
        set!(cfg.model.heads, self.heads);
        set!(cfg.model.dropout, self.dropout);
        set!(cfg.model.centroids, self.centroids);
        let a = &mut cfg.model.tokenizer.ablation;
        a.no_global |= self.no_global;
        a.no_gnn_pe |= self.no_gnn_pe;
        a.no_type |= self.no_type;
        a.no_hop |= self.no_hop;
        a.no_time |= self.no_time;
        a.stpe |= self.stpe;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Data directory; optional when `--manifest` is given.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<PathBuf>,
    /// Rerun exactly the run recorded in this manifest.
    #[arg(long, conflicts_with_all = ["data", "config", "paper_defaults"])]
    pub manifest: Option<PathBuf>,
    /// Run directory to create.
    #[arg(long)]
    pub out: PathBuf,
    /// Print metric records as they are produced.
    #[arg(long, short)]
    pub verbose: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub task: Option<PathBuf>,
    /// Comma-separated context sizes; replaces the component ablations.
    #[arg(long, value_delimiter = ',')]
    pub k_sweep: Option<Vec<usize>>,
    /// Output directory for `ablation.json` and `ablation.txt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
}

/// Everything needed to repeat a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub data: PathBuf,
    pub schema: PathBuf,
    pub task: PathBuf,
    pub config: TrainConfig,
    /// SHA-256 of every input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(v).expect("value serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// A task with its database, graph and resolved labels.
pub struct Loaded {
    pub schema: RelationalSchema,
    pub db: Database,
    pub graph: EntityGraph,
    pub task: TaskSpec,
    pub labels: Vec<crate::train::LabeledExample>,
}

pub fn load_task(data: &Path, schema: &Path, task: &Path) -> Result<Loaded> {
    let schema_spec = load_schema(schema)?;
    let db = load_database(&schema_spec, data)?;
    let graph = build_graph(&db, &schema_spec);
    let task_spec = TaskSpec::load(task)?;
    let label_path = task.parent().unwrap_or(Path::new(".")).join(&task_spec.labels);
    let rows = read_labels(&label_path)?;
    let labels = resolve_labels(&rows, &task_spec, &db, &graph)?;
    Ok(Loaded {
        schema: schema_spec,
        db,
        graph,
        task: task_spec,
        labels,
    })
}

impl RunManifest {
    pub fn new(data: &Path, schema: &Path, task: &Path, config: TrainConfig) -> Result<Self> {
        let loaded_task = TaskSpec::load(task)?;
        let schema_spec = load_schema(schema)?;
        let mut files: Vec<PathBuf> = vec![schema.to_path_buf(), task.to_path_buf()];
        files.push(task.parent().unwrap_or(Path::new(".")).join(&loaded_task.labels));
        files.extend(schema_spec.tables.iter().map(|t| data.join(format!("{}.csv", t.name))));
        let mut inputs = BTreeMap::new();
        for f in files {
            inputs.insert(f.display().to_string(), sha256_file(&f)?);
        }
        Ok(Self {
            tool: "relgt".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: config.seed,
            data: data.to_path_buf(),
            schema: schema.to_path_buf(),
            task: task.to_path_buf(),
            config,
            inputs,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    /// Fails if any recorded input changed since the manifest was written.
    pub fn verify_inputs(&self) -> Result<()> {
        for (path, digest) in &self.inputs {
            let now = sha256_file(Path::new(path))?;
            if &now != digest {
                return Err(Error::Config(format!("input {path} changed since the run was recorded")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub dataset: String,
    pub task: String,
    pub metric: String,
    pub value: f64,
}

/// Writes the manifest, trains, then writes `metrics.jsonl`,
/// `timing.jsonl`, `model.ckpt` and `summary.json` into `out`.
pub fn run_train(manifest: &RunManifest, out: &Path, verbose: bool) -> Result<Summary> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join("run_manifest.json"), manifest)?;
    let l = load_task(&manifest.data, &manifest.schema, &manifest.task)?;
    let prepared = Prepared::new(&l.graph, &l.db, &l.task, &l.labels);
    for w in &prepared.split.warnings {
        eprintln!("warning: {w}");
    }
    let outcome = train_observed(&prepared, &manifest.config, &mut |r| {
        if verbose {
            eprintln!("epoch {:>3} {:<5} {} = {:.6}", r.epoch, r.split, r.metric_name, r.value);
        }
    })?;
    write_jsonl(&out.join("metrics.jsonl"), &outcome.log)?;
    write_jsonl(&out.join("timing.jsonl"), &outcome.timings)?;
    outcome.model.save(&out.join("model.ckpt"))?;
    let summary = Summary {
        dataset: l.task.dataset.clone(),
        task: l.task.name.clone(),
        metric: l.task.kind.metric_name().into(),
        value: outcome.test.unwrap_or(outcome.best_val),
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

fn task_path(data: &Path, task: &Option<PathBuf>) -> PathBuf {
    task.clone().unwrap_or_else(|| data.join("task.json"))
}

fn cmd_synth(a: &SynthArgs) -> Result<Value> {
    let mut spec: SynthSpec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", p.display())))?
        }
        None => SynthSpec::default(),
    };
    if let Some(v) = a.signal {
        spec.signal = v;
    }
    if let Some(v) = a.customers {
        spec.customers = v;
    }
    if let Some(v) = a.products {
        spec.products = v;
    }
    if let Some(v) = a.transactions {
        spec.transactions = v;
    }
    if let Some(v) = a.noise {
        spec.noise = v;
    }
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    spec.bait &= !a.no_bait;
    let data = generate(&spec)?;
    data.write(&a.out)?;
    write_json(&a.out.join("synth_spec.json"), &spec)?;
    let positives = data.labels.iter().filter(|l| l.label > 0.5).count();
    Ok(json!({
        "out": a.out,
        "signal": spec.signal.name(),
        "rows": data.tables.iter().map(|t| t.rows.len()).collect::<Vec<_>>(),
        "labels": data.labels.len(),
        "positives": positives,
        "bait_rows": data.bait_rows,
    }))
}

fn cmd_build_graph(a: &BuildGraphArgs) -> Result<Value> {
    let (schema, db) = a.data.load()?;
    let g = build_graph(&db, &schema);
    g.save(&a.out)?;
    Ok(json!({
        "out": a.out,
        "nodes": g.node_count(),
        "edges": g.edge_count(),
        "types": g.type_names(),
        "relations": g.relation_names(),
    }))
}

fn seed_requests(g: &EntityGraph, seeds: &str, as_of: Option<i64>) -> Result<Vec<SeedRequest>> {
    if let Some(name) = seeds.strip_prefix("all:") {
        let t = g
            .type_names()
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Config(format!("no table named {name:?} in the graph")))?;
        return g.type_range(t).map(|v| SeedRequest::resolve(g, v, as_of)).collect();
    }
    let path = Path::new(seeds);
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Parse(format!("{seeds}: {e}")))?;
    let header = r.headers().map_err(|e| Error::Parse(format!("{seeds}: {e}")))?.clone();
    let node_col = header
        .iter()
        .position(|h| h == "node")
        .ok_or_else(|| Error::Parse(format!("{seeds}: missing column \"node\"")))?;
    let time_col = header.iter().position(|h| h == "as_of");
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(format!("{seeds}: {e}")))?;
        let bad = |what: &str| Error::Parse(format!("{seeds} row {}: bad {what}", i + 1));
        let node: u32 = rec[node_col].trim().parse().map_err(|_| bad("node"))?;
        if node as usize >= g.node_count() {
            return Err(Error::Config(format!("seed {node} is not a node of the graph")));
        }
        let t = match time_col.map(|c| rec[c].trim()) {
            Some(s) if !s.is_empty() => Some(s.parse().map_err(|_| bad("as_of"))?),
            _ => as_of,
        };
        out.push(SeedRequest::resolve(g, node, t)?);
    }
    Ok(out)
}

fn cmd_sample(a: &SampleArgs) -> Result<Value> {
    let g = EntityGraph::load(&a.graph)?;
    let reqs = seed_requests(&g, &a.seeds, a.as_of)?;
    let ctxs = sample_many(&g, &reqs, a.k, a.seed, &[tag::SAMPLE])?;
    let f = fs::File::create(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut w = std::io::BufWriter::new(f);
    for c in &ctxs {
        let line = serde_json::to_string(&ContextRecord::from(c)).expect("record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(&a.out, e))?;
    }
    w.flush().map_err(|e| Error::io(&a.out, e))?;
    Ok(json!({
        "out": a.out,
        "contexts": ctxs.len(),
        "k": a.k,
        "fallback_tokens": ctxs.iter().map(|c| c.fallback_count()).sum::<usize>(),
        "leakage_violations": leakage_audit(&ctxs, &g),
    }))
}

fn cmd_train(a: &TrainArgs) -> Result<Value> {
    let manifest = match &a.manifest {
        Some(p) => {
            let mut m = RunManifest::load(p)?;
            m.verify_inputs()?;
            if let Some(seed) = a.config.seed {
                m.config.seed = seed;
                m.seed = seed;
            }
            m
        }
        None => {
            let data = a
                .data
                .clone()
                .ok_or_else(|| Error::Config("either --data or --manifest is required".into()))?;
            let schema = a.schema.clone().unwrap_or_else(|| data.join("schema.json"));
            let task = task_path(&data, &a.task);
            RunManifest::new(&data, &schema, &task, a.config.resolve()?)?
        }
    };
    let s = run_train(&manifest, &a.out, a.verbose)?;
    Ok(serde_json::to_value(s).expect("summary serializes"))
}

fn cmd_eval(a: &EvalArgs) -> Result<Value> {
    let m = RunManifest::load(&a.run.join("run_manifest.json"))?;
    let l = load_task(&m.data, &m.schema, &m.task)?;
    let model = Model::load(&a.run.join("model.ckpt"), &l.db)?;
    let prepared = Prepared::new(&l.graph, &l.db, &l.task, &l.labels);
    let cfg = TrainConfig {
        model: model.config,
        ..m.config.clone()
    };
    let v = evaluate_split(&model, &prepared, &cfg, &a.split)?;
    Ok(json!({
        "dataset": l.task.dataset,
        "task": l.task.name,
        "split": a.split,
        "metric": l.task.kind.metric_name(),
        "value": v,
    }))
}

fn cmd_ablate(a: &AblateArgs) -> Result<Value> {
    let l = load_task(&a.data.data, &a.data.schema_path(), &task_path(&a.data.data, &a.task))?;
    let cfg = a.config.resolve()?;
    let prepared = Prepared::new(&l.graph, &l.db, &l.task, &l.labels);
    let (title, rows) = match &a.k_sweep {
        Some(ks) => (
            format!("K sweep, % of K={} performance", cfg.k),
            k_sweep(&prepared, &cfg, ks)?,
        ),
        None => (
            "Relative change (%) vs. full model".to_string(),
            ablate(&prepared, &cfg, &standard_ablations())?,
        ),
    };
    let table = format_table(&title, &rows);
    print!("{table}");
    if let Some(out) = &a.out {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        write_json(&out.join("ablation.json"), &rows)?;
        fs::write(out.join("ablation.txt"), &table).map_err(|e| Error::io(out, e))?;
    }
    Ok(json!({ "rows": rows }))
}

fn cmd_grad_check(a: &GradCheckArgs) -> Result<Value> {
    let toy = Toy::new(a.seed)?;
    let blocks = grad_check_blocks(&toy, a.step);
    let worst = blocks.iter().map(|b| b.1).fold(0.0, f64::max);
    let report = json!({
        "blocks": blocks.iter().map(|(n, e)| json!({"block": n, "max_relative_error": e})).collect::<Vec<_>>(),
        "max_relative_error": worst,
        "tolerance": a.tolerance,
    });
    if worst >= a.tolerance {
        return Err(Error::Config(format!(
            "gradient check failed: max relative error {worst:.3e} >= {:.0e}",
            a.tolerance
        )));
    }
    Ok(report)
}

pub fn execute(cli: &Cli) -> Result<Value> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::BuildGraph(a) => cmd_build_graph(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::GradCheck(a) => cmd_grad_check(a),
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("output serializes"));
            0
        }
        Err(e) => {
            eprintln!("{}", json!({"error": e.kind(), "message": e.to_string()}));
            1
        }
    }
}
