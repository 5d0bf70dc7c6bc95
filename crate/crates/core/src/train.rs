//! Tasks, temporal splits, the optimization loop and evaluation metrics.

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::EntityGraph;
use crate::model::{self, Centroids, Model, ModelConfig};
use crate::rng::{self, tag};
use crate::sampler::{sample_many, SeedRequest};
use crate::schema::{column_statistics, parse_timestamp, ColumnStats, Database, StringTable};
use crate::tensor::{Tape, Tensor};
use crate::tokenizer::{self, Ablation, PeNoise, TokenSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Classification,
    Regression,
}

impl TaskKind {
    pub fn metric_name(self) -> &'static str {
        match self {
            TaskKind::Classification => "auc",
            TaskKind::Regression => "mae",
        }
    }

    pub fn higher_is_better(self) -> bool {
        self == TaskKind::Classification
    }
}

/// Split boundaries in seconds. A label belongs to the first split whose
/// cutoff is `>=` its as-of time; labels after `test` (when given) are
/// dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cutoffs {
    pub train: i64,
    pub val: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub dataset: String,
    pub name: String,
    pub kind: TaskKind,
    pub target_table: String,
    /// Label file with columns `entity_id, as_of, label`, relative to the
    /// task file.
    #[serde(default = "default_labels")]
    pub labels: String,
    pub cutoffs: Cutoffs,
}

fn default_labels() -> String {
    "labels.csv".into()
}

impl TaskSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let task: TaskSpec = serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.cutoffs;
        if c.train >= c.val || c.test.is_some_and(|t| c.val >= t) {
            return Err(Error::Task(format!(
                "cutoffs must increase: train {} val {} test {:?}",
                c.train, c.val, c.test
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub entity: String,
    pub node: u32,
    pub as_of: i64,
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelRow {
    pub entity: String,
    pub as_of: i64,
    pub label: f64,
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRow>> {
    let st = StringTable::read_csv(path)?;
    let col = |name: &str| {
        st.header.iter().position(|h| h == name).ok_or_else(|| {
            Error::Task(format!("label file {} lacks column {name:?}", path.display()))
        })
    };
    let (e, t, l) = (col("entity_id")?, col("as_of")?, col("label")?);
    st.rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let as_of = parse_timestamp(&r[t]).ok_or_else(|| {
                Error::Parse(format!("label row {i}: bad as_of {:?}", r[t]))
            })?;
            let label: f64 = r[l]
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("label row {i}: bad label {:?}", r[l])))?;
            Ok(LabelRow {
                entity: r[e].clone(),
                as_of,
                label,
            })
        })
        .collect()
}

pub fn write_labels(path: &Path, rows: &[LabelRow]) -> Result<()> {
    StringTable {
        header: vec!["entity_id".into(), "as_of".into(), "label".into()],
        rows: rows
            .iter()
            .map(|r| vec![r.entity.clone(), r.as_of.to_string(), format!("{}", r.label)])
            .collect(),
    }
    .write_csv(path)
}

/// Resolves label rows to graph nodes of the task's target table.
pub fn resolve_labels(
    rows: &[LabelRow],
    task: &TaskSpec,
    db: &Database,
    g: &EntityGraph,
) -> Result<Vec<LabeledExample>> {
    let t = db
        .tables
        .iter()
        .position(|t| t.name == task.target_table)
        .ok_or_else(|| Error::Task(format!("unknown target table {:?}", task.target_table)))?;
    rows.iter()
        .map(|r| {
            let row = db.tables[t].row_of(&r.entity).ok_or_else(|| {
                Error::Task(format!("label entity {:?} not in {}", r.entity, task.target_table))
            })?;
            if !r.label.is_finite() {
                return Err(Error::Task(format!("label of {:?} is not finite", r.entity)));
            }
            if task.kind == TaskKind::Classification && r.label != 0.0 && r.label != 1.0 {
                return Err(Error::Task(format!("classification label {} is not 0/1", r.label)));
            }
            Ok(LabeledExample {
                entity: r.entity.clone(),
                node: g.node_id(t, row),
                as_of: r.as_of,
                label: r.label,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Split {
    pub train: Vec<LabeledExample>,
    pub val: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    /// Non-fatal notes such as empty splits.
    pub warnings: Vec<String>,
}

pub fn temporal_split(labels: &[LabeledExample], c: Cutoffs) -> Split {
    let mut s = Split::default();
    for l in labels {
        if l.as_of <= c.train {
            s.train.push(l.clone());
        } else if l.as_of <= c.val {
            s.val.push(l.clone());
        } else if c.test.is_none_or(|t| l.as_of <= t) {
            s.test.push(l.clone());
        }
    }
    for (name, part) in [("train", &s.train), ("val", &s.val), ("test", &s.test)] {
        if part.is_empty() {
            s.warnings.push(format!("EmptySplit: {name} split has no labels"));
        }
    }
    s
}

/// Area under the ROC curve as the Mann-Whitney statistic: the share of
/// (positive, negative) pairs ranked correctly, ties counting one half.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len(), "auc: scores and labels differ in length");
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = labels.iter().filter(|&&y| y > 0.5).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels(format!(
            "AUC needs both classes, got {n_pos} positive and {n_neg} negative"
        )));
    }
    // Rank sum of positives with average ranks for ties, kept in doubled
    // integers so the result is exact.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let twice_avg = (i + 1 + j + 1) as u128;
        let pos = idx[i..=j].iter().filter(|&&k| labels[k] > 0.5).count() as u128;
        twice_rank_sum += pos * twice_avg;
        i = j + 1;
    }
    let np = n_pos as u128;
    let twice_u = twice_rank_sum - np * (np + 1);
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

pub fn mae(predictions: &[f64], labels: &[f64]) -> f64 {
    assert_eq!(predictions.len(), labels.len(), "mae: length mismatch");
    if predictions.is_empty() {
        return 0.0;
    }
    predictions.iter().zip(labels).map(|(p, y)| (p - y).abs()).sum::<f64>() / labels.len() as f64
}

pub fn metric(kind: TaskKind, predictions: &[f64], labels: &[f64]) -> Result<f64> {
    match kind {
        TaskKind::Classification => auc(predictions, labels),
        TaskKind::Regression => Ok(mae(predictions, labels)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Tokens per context.
    pub k: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 32,
            batch_size: 64,
            epochs: 30,
            lr: 1e-3,
            patience: 10,
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// The large-scale settings: K 300, 4096 centroids, lr 1e-4.
    pub fn paper() -> Self {
        let mut c = Self {
            k: 300,
            lr: 1e-4,
            ..Self::default()
        };
        c.model.centroids = 4096;
        c.model.layers = 4;
        c.model.dropout = 0.3;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!("K = {} must be at least 2", self.k)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} is invalid", self.lr)));
        }
        self.model.validate()
    }

    pub fn with_ablation(&self, ablation: Ablation) -> Self {
        let mut c = self.clone();
        c.model.tokenizer.ablation = ablation;
        c
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Tensor::zeros(g.rows(), g.cols())).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            assert_eq!(p.shape(), g.shape(), "gradient shape for parameter {i}");
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let m = m.iter_mut();
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *w -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

/// A resolved, split task over an ingested database.
pub struct Prepared<'a> {
    pub graph: &'a EntityGraph,
    pub db: &'a Database,
    pub kind: TaskKind,
    pub stats: ColumnStats,
    pub split: Split,
}

impl<'a> Prepared<'a> {
    pub fn new(
        graph: &'a EntityGraph,
        db: &'a Database,
        task: &TaskSpec,
        labels: &[LabeledExample],
    ) -> Self {
        Self {
            graph,
            db,
            kind: task.kind,
            stats: column_statistics(db, task.cutoffs.train),
            split: temporal_split(labels, task.cutoffs),
        }
    }

    fn token_sets(
        &self,
        examples: &[LabeledExample],
        k: usize,
        master: u64,
        keys: &[u64],
        cfg: &ModelConfig,
    ) -> Result<Vec<TokenSet>> {
        let reqs = examples
            .iter()
            .map(|e| SeedRequest::resolve(self.graph, e.node, Some(e.as_of)))
            .collect::<Result<Vec<_>>>()?;
        let ctxs = sample_many(self.graph, &reqs, k, master, keys)?;
        Ok(ctxs
            .iter()
            .map(|c| TokenSet::prepare(c, self.graph, self.db, &self.stats, &cfg.tokenizer))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub sets: Vec<TokenSet>,
    pub targets: Vec<f64>,
    pub pe_stream: u64,
}

/// Training batches of one epoch: a seeded shuffle of the train split,
/// contexts freshly sampled per batch.
pub fn epoch_batches(p: &Prepared<'_>, cfg: &TrainConfig, epoch: usize) -> Result<Vec<Batch>> {
    let mut order: Vec<usize> = (0..p.split.train.len()).collect();
    {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng::stream(cfg.seed, &[tag::SHUFFLE, epoch as u64]));
    }
    order
        .chunks(cfg.batch_size)
        .enumerate()
        .map(|(b, idx)| {
            let ex: Vec<LabeledExample> = idx.iter().map(|&i| p.split.train[i].clone()).collect();
            let keys = [tag::SAMPLE, epoch as u64, b as u64];
            Ok(Batch {
                sets: p.token_sets(&ex, cfg.k, cfg.seed, &keys, &cfg.model)?,
                targets: ex.iter().map(|e| e.label).collect(),
                pe_stream: rng::derive_seed(cfg.seed, &[tag::PE, epoch as u64, b as u64]),
            })
        })
        .collect()
}

/// Seed-token rows of the feature element for a batch, without gradients.
pub fn seed_features(model: &Model, sets: &[TokenSet]) -> Tensor {
    let mut tape = Tape::new();
    let p = model.params.encoder.map(&mut |t| tape.constant_ref(t));
    let h = tokenizer::encode_features(&mut tape, &p, sets, model.config.d());
    let k = sets.first().map_or(0, TokenSet::k);
    let rows: Vec<usize> = sets.iter().enumerate().map(|(s, t)| s * k + t.seed_index).collect();
    let v = tape.gather_rows(h, &rows);
    tape.value(v).clone()
}

/// One optimizer step on a batch; returns the mean loss. Centroids are
/// updated afterwards from the batch's seed features.
pub fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    batch: &Batch,
    kind: TaskKind,
    dropout_stream: u64,
    batch_id: usize,
) -> Result<f64> {
    let n = batch.sets.len();
    let k = batch.sets.first().map_or(0, TokenSet::k);
    let pe = tokenizer::pe_inputs(&batch.sets, PeNoise::Train { stream: batch.pe_stream });
    let mut drop_rng = rng::stream(dropout_stream, &[]);
    let (loss_value, grads, seed_feats) = {
        let mut tape = Tape::new();
        let bound = model::bind(&mut tape, &model.params);
        let out = model::forward(
            &mut tape,
            &bound,
            &model.centroids.c,
            &batch.sets,
            &pe,
            &model.config,
            Some(&mut drop_rng),
        );
        let loss = match kind {
            TaskKind::Classification => {
                let s = tape.bce_with_logits_sum(out.predictions, &batch.targets);
                tape.scale(s, 1.0 / n as f64)
            }
            TaskKind::Regression => {
                let y = tape.constant(Tensor::from_vec(n, 1, batch.targets.clone()));
                let diff = tape.sub(out.predictions, y);
                let a = tape.abs(diff);
                tape.mean(a)
            }
        };
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { batch: batch_id });
        }
        let mut g = tape.backward(loss)?;
        let grads: Vec<Tensor> = bound.flatten().into_iter().map(|&v| g.take(v)).collect();
        let rows: Vec<usize> = batch
            .sets
            .iter()
            .enumerate()
            .map(|(s, t)| s * k + t.seed_index)
            .collect();
        let feats = tape.gather_rows(out.tokens.h_feat, &rows);
        (value, grads, tape.value(feats).clone())
    };
    adam.step(&mut model.params.flatten_mut(), &grads);
    model.centroids.update(&seed_feats);
    Ok(loss_value)
}

/// Eval-mode predictions: contexts and PE inputs are keyed by the master
/// seed and the seed node, so repeated calls agree exactly.
pub fn predict(
    model: &Model,
    p: &Prepared<'_>,
    examples: &[LabeledExample],
    cfg: &TrainConfig,
    split_tag: u64,
) -> Result<Vec<f64>> {
    let sets = p.token_sets(examples, cfg.k, cfg.seed, &[tag::EVAL_SAMPLE, split_tag], &model.config)?;
    let mut out = Vec::with_capacity(sets.len());
    for chunk in sets.chunks(cfg.batch_size.max(1)) {
        let pe = tokenizer::pe_inputs(chunk, PeNoise::Eval { seed: cfg.seed });
        out.extend(model.predict(chunk, &pe));
    }
    Ok(out)
}

pub fn evaluate(
    model: &Model,
    p: &Prepared<'_>,
    examples: &[LabeledExample],
    cfg: &TrainConfig,
    split_tag: u64,
) -> Result<f64> {
    let preds = predict(model, p, examples, cfg, split_tag)?;
    let labels: Vec<f64> = examples.iter().map(|e| e.label).collect();
    metric(p.kind, &preds, &labels)
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub split: String,
    pub metric_name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub epoch: usize,
    pub wall_ms: u64,
}

pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub model: Model,
    pub log: Vec<MetricRecord>,
    pub timings: Vec<TimingRecord>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub test: Option<f64>,
}

const VAL_TAG: u64 = 1;
const TEST_TAG: u64 = 2;

/// Trains with early stopping on the validation metric and scores the
/// best checkpoint on the test split.
pub fn train(p: &Prepared<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_observed(p, cfg, &mut |_| {})
}

/// [`train`], reporting each metric record as soon as it exists.
pub fn train_observed(
    p: &Prepared<'_>,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&MetricRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if p.split.train.is_empty() {
        return Err(Error::Task("train split is empty".into()));
    }
    let mut model = Model::init(p.db, cfg.model, &mut rng::stream(cfg.seed, &[tag::INIT]))?;
    let mut adam = Adam::new(cfg.lr);
    let higher = p.kind.higher_is_better();
    let mut log = Vec::new();
    let mut timings = Vec::new();
    let mut best: Option<(usize, f64, Model)> = None;
    let mut since_best = 0;
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let batches = epoch_batches(p, cfg, epoch)?;
        let mut total = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            if step == 0 {
                let feats = seed_features(&model, &batch.sets);
                model.centroids = Centroids::init_from(
                    &feats,
                    cfg.model.centroids,
                    cfg.model.ema_decay,
                    &mut rng::stream(cfg.seed, &[tag::CENTROIDS]),
                );
            }
            let drop = rng::derive_seed(cfg.seed, &[tag::DROPOUT, epoch as u64, b as u64]);
            total += train_step(&mut model, &mut adam, batch, p.kind, drop, step)?;
            step += 1;
        }
        log.push(MetricRecord {
            epoch,
            split: "train".into(),
            metric_name: "loss".into(),
            value: total / batches.len() as f64,
        });
        observer(&log[log.len() - 1]);
        let val = if p.split.val.is_empty() {
            None
        } else {
            let v = evaluate(&model, p, &p.split.val, cfg, VAL_TAG)?;
            log.push(MetricRecord {
                epoch,
                split: "val".into(),
                metric_name: p.kind.metric_name().into(),
                value: v,
            });
            observer(&log[log.len() - 1]);
            Some(v)
        };
        timings.push(TimingRecord {
            epoch,
            wall_ms: start.elapsed().as_millis() as u64,
        });
        let improved = match (&best, val) {
            (None, _) => true,
            (Some(_), None) => true,
            (Some((_, bv, _)), Some(v)) => {
                if higher {
                    v > *bv
                } else {
                    v < *bv
                }
            }
        };
        if improved {
            best = Some((epoch, val.unwrap_or(f64::NAN), model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    let (best_epoch, best_val, model) = best.expect("at least one epoch ran");
    let test = if p.split.test.is_empty() {
        None
    } else {
        let t = evaluate(&model, p, &p.split.test, cfg, TEST_TAG)?;
        log.push(MetricRecord {
            epoch: best_epoch,
            split: "test".into(),
            metric_name: p.kind.metric_name().into(),
            value: t,
        });
        observer(&log[log.len() - 1]);
        Some(t)
    };
    Ok(TrainOutcome {
        model,
        log,
        timings,
        best_epoch,
        best_val,
        test,
    })
}

/// Scores a trained model on a named split (`val` or `test`).
pub fn evaluate_split(model: &Model, p: &Prepared<'_>, cfg: &TrainConfig, split: &str) -> Result<f64> {
    let (ex, tag) = match split {
        "val" => (&p.split.val, VAL_TAG),
        "test" => (&p.split.test, TEST_TAG),
        "train" => (&p.split.train, 0),
        other => return Err(Error::Config(format!("unknown split {other:?}"))),
    };
    if ex.is_empty() {
        return Err(Error::Task(format!("{split} split is empty")));
    }
    evaluate(model, p, ex, cfg, tag)
}

/// One row of an ablation or K-sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub metric_name: String,
    pub value: f64,
    /// Ablations: signed relative change in percent, negative when the
    /// variant performs worse. K-sweep: performance as a percentage of the
    /// baseline K.
    pub relative_pct: f64,
}

/// Relative change of `value` against `base`, negative when worse.
pub fn relative_change_pct(kind: TaskKind, base: f64, value: f64) -> f64 {
    let delta = if kind.higher_is_better() { value - base } else { base - value };
    100.0 * delta / base.abs().max(f64::MIN_POSITIVE)
}

/// `value` as a share of `base` in percent, above 100 when better.
pub fn relative_performance_pct(kind: TaskKind, base: f64, value: f64) -> f64 {
    if kind.higher_is_better() {
        100.0 * (value / base)
    } else {
        100.0 * (base / value)
    }
}

/// Every single-switch ablation, in table order.
pub fn standard_ablations() -> Vec<Ablation> {
    let one = |f: fn(&mut Ablation)| {
        let mut a = Ablation::default();
        f(&mut a);
        a
    };
    vec![
        Ablation::default(),
        one(|a| a.no_global = true),
        one(|a| a.no_gnn_pe = true),
        one(|a| a.no_type = true),
        one(|a| a.no_hop = true),
        one(|a| a.no_time = true),
        one(|a| a.stpe = true),
    ]
}

fn score(o: &TrainOutcome) -> f64 {
    o.test.unwrap_or(o.best_val)
}

/// Trains the baseline and each variant with the same seed and reports
/// the relative change of the test metric (validation if there is no
/// test split).
pub fn ablate(p: &Prepared<'_>, cfg: &TrainConfig, variants: &[Ablation]) -> Result<Vec<AblationRow>> {
    let mut cache: HashMap<String, f64> = HashMap::new();
    let mut run = |a: Ablation| -> Result<f64> {
        let key = a.label();
        if let Some(&v) = cache.get(&key) {
            return Ok(v);
        }
        let v = score(&train(p, &cfg.with_ablation(a))?);
        cache.insert(key, v);
        Ok(v)
    };
    let base = run(cfg.model.tokenizer.ablation)?;
    variants
        .iter()
        .map(|&a| {
            let v = run(a)?;
            Ok(AblationRow {
                variant: a.label(),
                metric_name: p.kind.metric_name().into(),
                value: v,
                relative_pct: relative_change_pct(p.kind, base, v),
            })
        })
        .collect()
}

/// Trains once per context size; the configured `k` is the 100% row.
pub fn k_sweep(p: &Prepared<'_>, cfg: &TrainConfig, ks: &[usize]) -> Result<Vec<AblationRow>> {
    let mut values: Vec<(usize, f64)> = Vec::new();
    let mut get = |k: usize| -> Result<f64> {
        if let Some(&(_, v)) = values.iter().find(|(kk, _)| *kk == k) {
            return Ok(v);
        }
        let v = score(&train(p, &TrainConfig { k, ..cfg.clone() })?);
        values.push((k, v));
        Ok(v)
    };
    let base = get(cfg.k)?;
    ks.iter()
        .map(|&k| {
            let v = get(k)?;
            Ok(AblationRow {
                variant: format!("K={k}"),
                metric_name: p.kind.metric_name().into(),
                value: v,
                relative_pct: relative_performance_pct(p.kind, base, v),
            })
        })
        .collect()
}

/// Fixed-width text rendering of an ablation table.
pub fn format_table(title: &str, rows: &[AblationRow]) -> String {
    let mut s = format!("{title}\n{:<20} {:>10} {:>12}\n", "variant", "metric", "relative %");
    for r in rows {
        s.push_str(&format!(
            "{:<20} {:>10.4} {:>+12.2}\n",
            r.variant, r.value, r.relative_pct
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(as_of: i64) -> LabeledExample {
        LabeledExample {
            entity: as_of.to_string(),
            node: 0,
            as_of,
            label: 0.0,
        }
    }

    #[test]
    fn split_windows_use_the_earlier_split_on_ties() {
        let labels: Vec<_> = (1..=10).map(ex).collect();
        let s = temporal_split(&labels, Cutoffs { train: 7, val: 8, test: None });
        let days = |v: &[LabeledExample]| v.iter().map(|e| e.as_of).collect::<Vec<_>>();
        assert_eq!(days(&s.train), (1..=7).collect::<Vec<_>>());
        assert_eq!(days(&s.val), vec![8]);
        assert_eq!(days(&s.test), vec![9, 10]);
        assert!(s.warnings.is_empty());

        let s = temporal_split(&labels, Cutoffs { train: 100, val: 200, test: None });
        assert_eq!(s.train.len(), 10);
        assert_eq!(s.warnings.len(), 2);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.1], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.2, 0.4, 0.6, 0.8], &[0.0, 1.0, 0.0, 1.0]).unwrap(), 0.75);
        assert_eq!(auc(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[1.0, 1.0]), Err(Error::DegenerateLabels(_))));
    }

    #[test]
    fn mae_of_exact_predictions_is_zero() {
        assert_eq!(mae(&[1.0, 2.5], &[1.0, 2.5]), 0.0);
        assert_eq!(mae(&[1.0, 2.0], &[0.0, 4.0]), 1.5);
    }

    #[test]
    fn adam_with_zero_lr_keeps_parameters() {
        let mut p = Tensor::from_rows(&[vec![1.0, -2.0]]);
        let before = p.clone();
        let mut adam = Adam::new(0.0);
        adam.step(&mut [&mut p], &[Tensor::from_rows(&[vec![0.3, 7.0]])]);
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Tensor::from_rows(&[vec![1.0, 1.0]]);
        let mut adam = Adam::new(0.1);
        adam.step(&mut [&mut p], &[Tensor::from_rows(&[vec![5.0, -0.01]])]);
        assert!((p.get(0, 0) - 0.9).abs() < 1e-6);
        assert!((p.get(0, 1) - 1.1).abs() < 1e-4);
    }

    #[test]
    fn relative_tables() {
        assert_eq!(relative_change_pct(TaskKind::Classification, 0.8, 0.8), 0.0);
        assert!((relative_change_pct(TaskKind::Classification, 0.8, 0.6) + 25.0).abs() < 1e-12);
        assert!((relative_change_pct(TaskKind::Regression, 2.0, 3.0) + 50.0).abs() < 1e-12);
        assert_eq!(relative_performance_pct(TaskKind::Classification, 0.8, 0.8), 100.0);
    }
}
