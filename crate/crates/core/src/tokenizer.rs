//! Multi-element token encoding.
//!
//! Each context node becomes the mix of five `d`-dimensional elements:
//!
//! 1. features: per-column encoders, summed and scaled by `1/sqrt(#columns)`
//! 2. type: column `type(v)` of `W_type` (`d x |T|`)
//! 3. hop: column `hop(v)` of `W_hop` (`d x 4`, the last column is fallback)
//! 4. relative time: `W_time * clip(rel_time / time_scale)`
//! 5. subgraph PE: a 2-layer mean-aggregation GNN over the context's local
//!    adjacency, fed with fresh standard-normal node inputs
//!
//! The enabled elements are concatenated in that order and multiplied by the
//! mixing matrix `O`. With the spatio-temporal option the time element is
//! dropped and the GNN is fed the relative times instead of noise.
//!
//! Matrices act on row vectors: a token embedding is `concat · O` with `O`
//! of shape `(#elements · d) x d`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::graph::EntityGraph;
use crate::rng::{self, tag};
use crate::sampler::{SampledContext, HOP_VOCAB};
use crate::schema::{ColumnStats, ColumnValues, Database};
use crate::tensor::{Tape, Tensor, Var};

/// Width of the random node inputs of the subgraph PE.
pub const PE_INPUT_DIM: usize = 1;

/// Component switches, one per removable element or branch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub no_global: bool,
    pub no_gnn_pe: bool,
    pub no_type: bool,
    pub no_hop: bool,
    pub no_time: bool,
    /// Feed relative times to the subgraph GNN and drop the time element.
    pub stpe: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Element {
    Feat,
    Type,
    Hop,
    Time,
    Pe,
}

impl Ablation {
    /// Enabled elements in concatenation order.
    pub fn elements(&self) -> Vec<Element> {
        let mut out = vec![Element::Feat];
        if !self.no_type {
            out.push(Element::Type);
        }
        if !self.no_hop {
            out.push(Element::Hop);
        }
        if !self.no_time && !self.stpe {
            out.push(Element::Time);
        }
        if self.stpe || !self.no_gnn_pe {
            out.push(Element::Pe);
        }
        out
    }

    /// Short label such as `no-time+no-hop`, `full` when nothing is off.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        for (on, name) in [
            (self.no_global, "no-global"),
            (self.no_gnn_pe, "no-gnn-pe"),
            (self.no_type, "no-type"),
            (self.no_hop, "no-hop"),
            (self.no_time, "no-time"),
            (self.stpe, "stpe"),
        ] {
            if on {
                parts.push(name);
            }
        }
        if parts.is_empty() {
            "full".into()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub d: usize,
    pub n_buckets: usize,
    /// Seconds per time unit.
    pub time_scale: f64,
    /// Relative times are clipped to `±time_clip` units.
    pub time_clip: f64,
    pub ablation: Ablation,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            d: 64,
            n_buckets: 1 << 14,
            time_scale: 86_400.0,
            time_clip: 365.0,
            ablation: Ablation::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnEncoder<T> {
    /// `z * weight + bias`, each `1 x d`.
    Numeric { weight: T, bias: T },
    /// Embedding table, one row per dictionary code.
    Categorical { table: T },
    /// Hashed token buckets, `n_buckets x d`.
    Text { buckets: T },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableEncoder<T> {
    pub columns: Vec<ColumnEncoder<T>>,
    /// Added once per missing value, `1 x d`.
    pub null: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnPeParams<T> {
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub tables: Vec<TableEncoder<T>>,
    /// `d x |T|`
    pub w_type: T,
    /// `d x 4`
    pub w_hop: T,
    /// `d x 1`
    pub w_time: T,
    pub pe: GnnPeParams<T>,
    /// `(#elements · d) x d`
    pub mix: T,
}

/// Entries drawn i.i.d. from `N(0, std^2)`.
pub fn normal(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| std * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect::<Vec<f64>>(),
    )
}

impl EncoderParams<Tensor> {
    /// Random initialization sized from the database's tables and
    /// dictionaries.
    pub fn init(db: &Database, cfg: &TokenizerConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.d;
        let tables = db
            .tables
            .iter()
            .map(|t| TableEncoder {
                columns: t
                    .columns
                    .iter()
                    .map(|c| match &c.values {
                        ColumnValues::Numeric { .. } => ColumnEncoder::Numeric {
                            weight: normal(1, d, 1.0, rng),
                            bias: Tensor::zeros(1, d),
                        },
                        ColumnValues::Categorical { dictionary, .. } => ColumnEncoder::Categorical {
                            table: normal(dictionary.len(), d, 1.0, rng),
                        },
                        ColumnValues::Text { .. } => ColumnEncoder::Text {
                            buckets: normal(cfg.n_buckets, d, 1.0, rng),
                        },
                    })
                    .collect(),
                null: normal(1, d, 1.0, rng),
            })
            .collect();
        let n_elem = cfg.ablation.elements().len();
        Self {
            tables,
            w_type: normal(d, db.tables.len(), 1.0, rng),
            w_hop: normal(d, HOP_VOCAB, 1.0, rng),
            w_time: normal(d, 1, 1.0 / cfg.time_clip.sqrt(), rng),
            pe: GnnPeParams {
                w1: normal(PE_INPUT_DIM, d, 1.0, rng),
                b1: Tensor::zeros(1, d),
                w2: normal(d, d, (1.0 / d as f64).sqrt(), rng),
                b2: Tensor::zeros(1, d),
            },
            mix: normal(n_elem * d, d, (1.0 / (n_elem * d) as f64).sqrt(), rng),
        }
    }
}

impl<T> EncoderParams<T> {
    pub fn map<'s, U>(&'s self, f: &mut dyn FnMut(&'s T) -> U) -> EncoderParams<U> {
        EncoderParams {
            tables: self
                .tables
                .iter()
                .map(|t| TableEncoder {
                    columns: t
                        .columns
                        .iter()
                        .map(|c| match c {
                            ColumnEncoder::Numeric { weight, bias } => ColumnEncoder::Numeric {
                                weight: f(weight),
                                bias: f(bias),
                            },
                            ColumnEncoder::Categorical { table } => {
                                ColumnEncoder::Categorical { table: f(table) }
                            }
                            ColumnEncoder::Text { buckets } => {
                                ColumnEncoder::Text { buckets: f(buckets) }
                            }
                        })
                        .collect(),
                    null: f(&t.null),
                })
                .collect(),
            w_type: f(&self.w_type),
            w_hop: f(&self.w_hop),
            w_time: f(&self.w_time),
            pe: GnnPeParams {
                w1: f(&self.pe.w1),
                b1: f(&self.pe.b1),
                w2: f(&self.pe.w2),
                b2: f(&self.pe.b2),
            },
            mix: f(&self.mix),
        }
    }

    /// Visits every parameter with a stable dotted name, in the same order
    /// as [`EncoderParams::map`].
    pub fn visit_mut<'s>(&'s mut self, f: &mut dyn FnMut(String, &'s mut T)) {
        for (ti, t) in self.tables.iter_mut().enumerate() {
            for (ci, c) in t.columns.iter_mut().enumerate() {
                match c {
                    ColumnEncoder::Numeric { weight, bias } => {
                        f(format!("feat.{ti}.{ci}.weight"), weight);
                        f(format!("feat.{ti}.{ci}.bias"), bias);
                    }
                    ColumnEncoder::Categorical { table } => f(format!("feat.{ti}.{ci}.table"), table),
                    ColumnEncoder::Text { buckets } => f(format!("feat.{ti}.{ci}.buckets"), buckets),
                }
            }
            f(format!("feat.{ti}.null"), &mut t.null);
        }
        f("type".into(), &mut self.w_type);
        f("hop".into(), &mut self.w_hop);
        f("time".into(), &mut self.w_time);
        f("pe.w1".into(), &mut self.pe.w1);
        f("pe.b1".into(), &mut self.pe.b1);
        f("pe.w2".into(), &mut self.pe.w2);
        f("pe.b2".into(), &mut self.pe.b2);
        f("mix".into(), &mut self.mix);
    }
}

/// Which parameter a feature entry reads from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FeatureSlot {
    NumericWeight { table: usize, column: usize },
    NumericBias { table: usize, column: usize },
    Categorical { table: usize, column: usize },
    Text { table: usize, column: usize },
    Null { table: usize },
}

/// One term of a node's feature sum: `weight * param[slot].row(row)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureEntry {
    pub token: usize,
    pub slot: FeatureSlot,
    pub row: usize,
    pub weight: f64,
}

/// The raw elements of one sampled context, ready to encode.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSet {
    pub seed: u32,
    pub seed_index: usize,
    pub types: Vec<usize>,
    pub hops: Vec<usize>,
    /// Clipped relative time in units of `time_scale`.
    pub time_units: Vec<f64>,
    pub features: Vec<FeatureEntry>,
    /// `D^-1 (A + I)`, row-major `K x K`.
    pub propagation: Vec<f64>,
}

impl TokenSet {
    pub fn k(&self) -> usize {
        self.types.len()
    }

    pub fn prepare(
        ctx: &SampledContext,
        g: &EntityGraph,
        db: &Database,
        stats: &ColumnStats,
        cfg: &TokenizerConfig,
    ) -> Self {
        let k = ctx.k();
        let mut features = Vec::new();
        for (j, &v) in ctx.tokens.iter().enumerate() {
            let (table, row) = g.table_row(v);
            node_features(db, stats, cfg.n_buckets, table, row, j, &mut features);
        }
        Self {
            seed: ctx.seed,
            seed_index: ctx.seed_index,
            types: ctx.tokens.iter().map(|&v| g.node_type(v) as usize).collect(),
            hops: ctx.hops.iter().map(|&h| h as usize).collect(),
            time_units: ctx
                .rel_time
                .iter()
                .map(|&dt| time_units(dt, cfg.time_scale, cfg.time_clip))
                .collect(),
            features,
            propagation: mean_propagation(&ctx.local_adjacency, k),
        }
    }
}

pub fn time_units(rel_time: i64, scale: f64, clip: f64) -> f64 {
    (rel_time as f64 / scale).clamp(-clip, clip)
}

/// `D^-1 (A + I)` for a row-major boolean adjacency.
pub fn mean_propagation(adj: &[bool], k: usize) -> Vec<f64> {
    let mut p = vec![0.0; k * k];
    for a in 0..k {
        let deg = 1 + (0..k).filter(|&b| b != a && adj[a * k + b]).count();
        let w = 1.0 / deg as f64;
        for b in 0..k {
            if a == b || adj[a * k + b] {
                p[a * k + b] = w;
            }
        }
    }
    p
}

/// Lowercased alphanumeric runs.
pub fn text_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// 64-bit FNV-1a, stable across platforms and releases.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn node_features(
    db: &Database,
    stats: &ColumnStats,
    n_buckets: usize,
    table: usize,
    row: usize,
    token: usize,
    out: &mut Vec<FeatureEntry>,
) {
    let t = &db.tables[table];
    if t.columns.is_empty() {
        return;
    }
    let scale = 1.0 / (t.columns.len() as f64).sqrt();
    let mut push = |slot, row, weight| {
        out.push(FeatureEntry {
            token,
            slot,
            row,
            weight,
        })
    };
    for (column, c) in t.columns.iter().enumerate() {
        let null = FeatureSlot::Null { table };
        match &c.values {
            ColumnValues::Numeric { values, missing } => {
                if missing[row] {
                    push(null, 0, scale);
                } else {
                    let s = stats.get(table, column);
                    let z = (values[row] - s.mean) / s.std;
                    push(FeatureSlot::NumericWeight { table, column }, 0, z * scale);
                    push(FeatureSlot::NumericBias { table, column }, 0, scale);
                }
            }
            ColumnValues::Categorical { codes, .. } => {
                let code = codes[row] as usize;
                if code == 0 {
                    push(null, 0, scale);
                } else {
                    push(FeatureSlot::Categorical { table, column }, code, scale);
                }
            }
            ColumnValues::Text { values } => match &values[row] {
                None => push(null, 0, scale),
                Some(text) => {
                    let toks: Vec<String> = text_tokens(text).collect();
                    if !toks.is_empty() {
                        let w = scale / (toks.len() as f64).sqrt();
                        for tok in toks {
                            let b = (fnv1a(tok.as_bytes()) % n_buckets as u64) as usize;
                            push(FeatureSlot::Text { table, column }, b, w);
                        }
                    }
                }
            },
        }
    }
}

/// How the subgraph PE draws its node inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeNoise {
    /// Fresh inputs per forward pass, keyed by a training stream.
    Train { stream: u64 },
    /// Inputs keyed by `(eval seed, seed node)`, identical on every call.
    Eval { seed: u64 },
}

/// Standard-normal PE inputs for a batch of token sets, `(N·K) x 1`.
pub fn pe_inputs(sets: &[TokenSet], noise: PeNoise) -> Tensor {
    let k = sets.first().map_or(0, TokenSet::k);
    let mut z = Vec::with_capacity(sets.len() * k * PE_INPUT_DIM);
    for (i, s) in sets.iter().enumerate() {
        let mut r = match noise {
            PeNoise::Train { stream } => rng::stream(stream, &[tag::PE, i as u64]),
            PeNoise::Eval { seed } => rng::stream(seed, &[tag::EVAL_PE, s.seed as u64]),
        };
        z.extend((0..k * PE_INPUT_DIM).map(|_| -> f64 { StandardNormal.sample(&mut r) }));
    }
    Tensor::from_vec(sets.len() * k, PE_INPUT_DIM, z)
}

/// Encoded elements of a batch; every tensor is `(N·K) x d`, rows grouped
/// by context.
#[derive(Debug, Clone, Copy)]
pub struct TokenBatch {
    pub h_token: Var,
    pub h_feat: Var,
    pub h_type: Option<Var>,
    pub h_hop: Option<Var>,
    pub h_time: Option<Var>,
    pub h_pe: Option<Var>,
}

/// Feature element: sum of every feature entry's parameter row.
pub fn encode_features(
    tape: &mut Tape<'_>,
    params: &EncoderParams<Var>,
    sets: &[TokenSet],
    d: usize,
) -> Var {
    let k = sets.first().map_or(0, TokenSet::k);
    let rows = sets.len() * k;
    let mut groups: BTreeMap<FeatureSlot, Vec<(usize, usize, f64)>> = BTreeMap::new();
    for (s, set) in sets.iter().enumerate() {
        for e in &set.features {
            groups
                .entry(e.slot)
                .or_default()
                .push((s * k + e.token, e.row, e.weight));
        }
    }
    let mut acc: Option<Var> = None;
    for (slot, entries) in groups {
        let param = match slot {
            FeatureSlot::NumericWeight { table, column } => match &params.tables[table].columns[column] {
                ColumnEncoder::Numeric { weight, .. } => *weight,
                _ => unreachable!("slot kind matches column kind"),
            },
            FeatureSlot::NumericBias { table, column } => match &params.tables[table].columns[column] {
                ColumnEncoder::Numeric { bias, .. } => *bias,
                _ => unreachable!("slot kind matches column kind"),
            },
            FeatureSlot::Categorical { table, column } => match &params.tables[table].columns[column] {
                ColumnEncoder::Categorical { table } => *table,
                _ => unreachable!("slot kind matches column kind"),
            },
            FeatureSlot::Text { table, column } => match &params.tables[table].columns[column] {
                ColumnEncoder::Text { buckets } => *buckets,
                _ => unreachable!("slot kind matches column kind"),
            },
            FeatureSlot::Null { table } => params.tables[table].null,
        };
        let part = tape.sparse_matmul(rows, entries, param);
        acc = Some(match acc {
            Some(a) => tape.add(a, part),
            None => part,
        });
    }
    acc.unwrap_or_else(|| tape.constant(Tensor::zeros(rows, d)))
}

/// Selects column `ids[i]` of a `d x n` weight for every row.
pub fn encode_onehot(tape: &mut Tape<'_>, weight: Var, ids: &[usize]) -> Var {
    let n = tape.value(weight).cols();
    for &i in ids {
        assert!(i < n, "category {i} out of range for {n} columns");
    }
    let wt = tape.transpose(weight);
    tape.embedding_lookup(wt, ids)
}

pub fn encode_type(tape: &mut Tape<'_>, w_type: Var, types: &[usize]) -> Var {
    encode_onehot(tape, w_type, types)
}

pub fn encode_hop(tape: &mut Tape<'_>, w_hop: Var, hops: &[usize]) -> Var {
    encode_onehot(tape, w_hop, hops)
}

/// `units[j] * W_time^T` per row; `units` are already scaled and clipped.
pub fn encode_time(tape: &mut Tape<'_>, w_time: Var, units: &[f64]) -> Var {
    let col = tape.constant(Tensor::from_vec(units.len(), 1, units.to_vec()));
    let wt = tape.transpose(w_time);
    tape.matmul(col, wt)
}

/// Two mean-aggregation layers over stacked `K x K` propagation blocks:
/// `H1 = relu(P Z W1 + b1)`, `out = P H1 W2 + b2`.
pub fn gnn_pe(
    tape: &mut Tape<'_>,
    params: &GnnPeParams<Var>,
    propagation: Var,
    inputs: Var,
    k: usize,
) -> Var {
    let zw = tape.matmul(inputs, params.w1);
    let m1 = tape.block_matmul(propagation, zw, k);
    let pre = tape.add_bias(m1, params.b1);
    let h1 = tape.relu(pre);
    let m2 = tape.block_matmul(propagation, h1, k);
    let out = tape.matmul(m2, params.w2);
    tape.add_bias(out, params.b2)
}

/// Concatenates the element tensors in the given order and applies `O`.
pub fn combine(tape: &mut Tape<'_>, elements: &[Var], mix: Var) -> Var {
    let width: usize = elements.iter().map(|&e| tape.value(e).cols()).sum();
    let rows = tape.value(mix).rows();
    assert_eq!(
        width, rows,
        "mixing matrix has {rows} rows for {width} concatenated columns"
    );
    let cat = tape.concat_cols(elements);
    tape.matmul(cat, mix)
}

/// Encodes a batch of token sets of equal `K`.
pub fn encode(
    tape: &mut Tape<'_>,
    params: &EncoderParams<Var>,
    sets: &[TokenSet],
    pe_noise: &Tensor,
    cfg: &TokenizerConfig,
) -> TokenBatch {
    let k = sets.first().map_or(0, TokenSet::k);
    assert!(sets.iter().all(|s| s.k() == k), "token sets must share K");
    let ab = cfg.ablation;
    let h_feat = encode_features(tape, params, sets, cfg.d);
    let mut elements = vec![h_feat];

    let h_type = (!ab.no_type).then(|| {
        let types: Vec<usize> = sets.iter().flat_map(|s| s.types.iter().copied()).collect();
        encode_type(tape, params.w_type, &types)
    });
    let h_hop = (!ab.no_hop).then(|| {
        let hops: Vec<usize> = sets.iter().flat_map(|s| s.hops.iter().copied()).collect();
        encode_hop(tape, params.w_hop, &hops)
    });
    let units: Vec<f64> = sets.iter().flat_map(|s| s.time_units.iter().copied()).collect();
    let h_time = (!ab.no_time && !ab.stpe).then(|| encode_time(tape, params.w_time, &units));
    let h_pe = (ab.stpe || !ab.no_gnn_pe).then(|| {
        let prop: Vec<f64> = sets.iter().flat_map(|s| s.propagation.iter().copied()).collect();
        let prop = tape.constant(Tensor::from_vec(sets.len() * k, k, prop));
        let inputs = if ab.stpe {
            tape.constant(Tensor::from_vec(units.len(), 1, units.clone()))
        } else {
            tape.constant(pe_noise.clone())
        };
        gnn_pe(tape, &params.pe, prop, inputs, k)
    });
    elements.extend([h_type, h_hop, h_time, h_pe].into_iter().flatten());
    let h_token = combine(tape, &elements, params.mix);
    TokenBatch {
        h_token,
        h_feat,
        h_type,
        h_hop,
        h_time,
        h_pe,
    }
}
