//! Synthetic customers / products / transactions databases with planted
//! label rules.
//!
//! Each customer gets one label at an as-of time. Its transactions before
//! the as-of time are arranged so that exactly one property decides the
//! label, while everything else is drawn from label-independent
//! distributions:
//!
//! | signal | label is 1 iff |
//! |---|---|
//! | `temporal_churn` | no transaction in the last `churn_window_days` |
//! | `structural_pattern` | two of the customer's transactions share a product |
//! | `type_signal` | the customer has at least `threshold` transactions |
//! | `mixed` | at least two of the three properties above hold |
//!
//! For `structural_pattern` both classes have the same number of
//! transactions and exactly one distinct product: positives buy it in every
//! transaction, negatives in one transaction while the others carry no
//! product. Only the shape of the local subgraph differs.
//!
//! With `bait` on, every labeled customer also gets one transaction dated
//! after every cutoff whose amount encodes the label. Bait rows come last
//! in the transactions table.

use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::schema::{
    ColumnKind, ColumnSpec, Database, ForeignKey, RelationalSchema, StringTable, TableSpec,
};
use crate::train::{write_labels, Cutoffs, LabelRow, TaskKind, TaskSpec};

pub const DAY: i64 = 86_400;
/// 2023-01-01T00:00:00Z
pub const EPOCH: i64 = 1_672_531_200;
const HISTORY_DAYS: i64 = 120;
const MARGIN_DAYS: i64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    TemporalChurn,
    StructuralPattern,
    TypeSignal,
    Mixed,
}

impl SignalKind {
    pub const ALL: [SignalKind; 4] = [
        SignalKind::TemporalChurn,
        SignalKind::StructuralPattern,
        SignalKind::TypeSignal,
        SignalKind::Mixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SignalKind::TemporalChurn => "temporal_churn",
            SignalKind::StructuralPattern => "structural_pattern",
            SignalKind::TypeSignal => "type_signal",
            SignalKind::Mixed => "mixed",
        }
    }
}

impl std::str::FromStr for SignalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown signal kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub customers: usize,
    pub products: usize,
    /// Regular (non-bait) transactions in total; each customer gets about
    /// `transactions / customers`, rounded to an even number.
    pub transactions: usize,
    pub horizon_days: i64,
    pub signal: SignalKind,
    /// Probability of replacing a label by a fair coin.
    pub noise: f64,
    /// Probability that a planted property holds.
    pub positive_rate: f64,
    pub churn_window_days: i64,
    pub bait: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            customers: 600,
            products: 60,
            transactions: 4_800,
            horizon_days: 365,
            signal: SignalKind::TemporalChurn,
            noise: 0.0,
            positive_rate: 0.5,
            churn_window_days: 30,
            bait: true,
            seed: 0,
        }
    }
}

/// Per-customer transaction counts implied by a spec.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TxCounts {
    pub base: usize,
    pub low: usize,
    pub high: usize,
    /// `type_signal` positives have at least this many transactions.
    pub threshold: usize,
}

fn even(n: usize) -> usize {
    (n / 2 * 2).max(2)
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.customers == 0 || self.products == 0 || self.transactions == 0 {
            return Err(Error::Config("synthetic counts must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(Error::Config(format!("noise {} outside [0, 1)", self.noise)));
        }
        if !(0.0..=1.0).contains(&self.positive_rate) {
            return Err(Error::Config(format!("positive rate {} outside [0, 1]", self.positive_rate)));
        }
        if self.horizon_days < 2 * HISTORY_DAYS {
            return Err(Error::Config(format!(
                "horizon must be at least {} days",
                2 * HISTORY_DAYS
            )));
        }
        if self.churn_window_days <= 2 * MARGIN_DAYS || self.churn_window_days + 2 * MARGIN_DAYS >= HISTORY_DAYS {
            return Err(Error::Config(format!(
                "churn window must lie in ({}, {}) days",
                2 * MARGIN_DAYS,
                HISTORY_DAYS - 2 * MARGIN_DAYS
            )));
        }
        let c = self.tx_counts();
        if self.products < c.high {
            return Err(Error::Config(format!(
                "{} products cannot give {} distinct products per customer",
                self.products, c.high
            )));
        }
        Ok(())
    }

    pub fn tx_counts(&self) -> TxCounts {
        let base = even(self.transactions / self.customers.max(1));
        let low = even(base / 2);
        let high = even(base * 3 / 2).max(low + 2);
        TxCounts {
            base,
            low,
            high,
            threshold: (low + high) / 2,
        }
    }

    pub fn cutoffs(&self) -> Cutoffs {
        let h = self.horizon_days * DAY;
        Cutoffs {
            train: EPOCH + h * 8 / 10,
            val: EPOCH + h * 9 / 10,
            test: Some(EPOCH + h),
        }
    }
}

pub struct SynthData {
    pub schema: RelationalSchema,
    /// In schema order.
    pub tables: Vec<StringTable>,
    pub labels: Vec<LabelRow>,
    pub task: TaskSpec,
    pub bait_rows: usize,
}

impl SynthData {
    pub fn database(&self) -> Result<Database> {
        Database::from_string_tables(&self.schema, &self.tables)
    }

    /// Writes `schema.json`, one CSV per table, `labels.csv` and
    /// `task.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        put("schema.json", self.schema.to_json())?;
        for (spec, t) in self.schema.tables.iter().zip(&self.tables) {
            t.write_csv(&dir.join(format!("{}.csv", spec.name)))?;
        }
        write_labels(&dir.join("labels.csv"), &self.labels)?;
        put(
            "task.json",
            serde_json::to_string_pretty(&self.task).expect("task serializes"),
        )
    }
}

pub fn shop_schema() -> RelationalSchema {
    let col = |name: &str, kind| ColumnSpec {
        name: name.into(),
        kind,
    };
    let fk = |column: &str, target: &str| ForeignKey {
        column: column.into(),
        target_table: target.into(),
    };
    RelationalSchema {
        tables: vec![
            TableSpec {
                name: "customers".into(),
                primary_key: "customer_id".into(),
                foreign_keys: vec![],
                timestamp_column: None,
                columns: vec![
                    col("customer_id", ColumnKind::Categorical),
                    col("age", ColumnKind::Numeric),
                    col("segment", ColumnKind::Categorical),
                ],
            },
            TableSpec {
                name: "products".into(),
                primary_key: "product_id".into(),
                foreign_keys: vec![],
                timestamp_column: None,
                columns: vec![
                    col("product_id", ColumnKind::Categorical),
                    col("price", ColumnKind::Numeric),
                    col("category", ColumnKind::Categorical),
                    col("title", ColumnKind::Text),
                ],
            },
            TableSpec {
                name: "transactions".into(),
                primary_key: "transaction_id".into(),
                foreign_keys: vec![fk("customer_id", "customers"), fk("product_id", "products")],
                timestamp_column: Some("timestamp".into()),
                columns: vec![
                    col("transaction_id", ColumnKind::Categorical),
                    col("customer_id", ColumnKind::Categorical),
                    col("product_id", ColumnKind::Categorical),
                    col("amount", ColumnKind::Numeric),
                    col("timestamp", ColumnKind::Numeric),
                ],
            },
        ],
    }
}

const SEGMENTS: [&str; 3] = ["basic", "plus", "pro"];
const WORDS: [&str; 16] = [
    "red", "blue", "green", "classic", "sport", "deluxe", "mini", "max", "shoe", "lamp", "mug",
    "chair", "jacket", "phone", "case", "kit",
];

/// Planted properties of one customer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
struct Bits {
    churn: bool,
    shared: bool,
    heavy: bool,
}

fn label_of(kind: SignalKind, b: Bits) -> bool {
    match kind {
        SignalKind::TemporalChurn => b.churn,
        SignalKind::StructuralPattern => b.shared,
        SignalKind::TypeSignal => b.heavy,
        SignalKind::Mixed => (b.churn as u8 + b.shared as u8 + b.heavy as u8) >= 2,
    }
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let schema = shop_schema();
    let counts = spec.tx_counts();
    let kind = spec.signal;
    let cut = spec.cutoffs();
    let horizon = spec.horizon_days * DAY;
    let rng_for = |part: u64| rng::stream(spec.seed, &[tag::SYNTH, part]);

    let mut r = rng_for(0);
    let customers = StringTable {
        header: vec!["customer_id".into(), "age".into(), "segment".into()],
        rows: (0..spec.customers)
            .map(|i| {
                let age = if r.random_bool(0.05) {
                    String::new()
                } else {
                    r.random_range(18..80).to_string()
                };
                let seg = if r.random_bool(0.05) {
                    String::new()
                } else {
                    SEGMENTS[r.random_range(0..SEGMENTS.len())].to_string()
                };
                vec![format!("c{i}"), age, seg]
            })
            .collect(),
    };

    let mut r = rng_for(1);
    let price = LogNormal::new(3.0, 0.7).expect("valid log-normal");
    let products = StringTable {
        header: vec![
            "product_id".into(),
            "price".into(),
            "category".into(),
            "title".into(),
        ],
        rows: (0..spec.products)
            .map(|i| {
                let title: Vec<&str> = (0..3).map(|_| WORDS[r.random_range(0..WORDS.len())]).collect();
                vec![
                    format!("p{i}"),
                    format!("{:.2}", price.sample(&mut r)),
                    format!("cat{}", r.random_range(0..8)),
                    title.join(" "),
                ]
            })
            .collect(),
    };

    let mut r = rng_for(2);
    let amount = LogNormal::new(3.0, 0.5).expect("valid log-normal");
    let mut tx_rows: Vec<Vec<String>> = Vec::new();
    let mut labels = Vec::with_capacity(spec.customers);
    let p = spec.positive_rate;
    let window = spec.churn_window_days * DAY;
    for c in 0..spec.customers {
        let as_of = EPOCH + horizon / 2 + r.random_range(0..=horizon / 2);
        let planted = |r: &mut rng::StreamRng, k: SignalKind| {
            (kind == k || kind == SignalKind::Mixed) && r.random_bool(p)
        };
        let bits = Bits {
            churn: planted(&mut r, SignalKind::TemporalChurn),
            shared: planted(&mut r, SignalKind::StructuralPattern),
            heavy: planted(&mut r, SignalKind::TypeSignal),
        };
        let n = match kind {
            SignalKind::TypeSignal | SignalKind::Mixed => {
                if bits.heavy {
                    counts.high
                } else {
                    counts.low
                }
            }
            _ => counts.base,
        };

        let start = as_of - HISTORY_DAYS * DAY;
        let mut times: Vec<i64> = match kind {
            SignalKind::TemporalChurn | SignalKind::Mixed => {
                if bits.churn {
                    let last = as_of - window - MARGIN_DAYS * DAY;
                    (0..n).map(|_| r.random_range(start..=last)).collect()
                } else {
                    let latest = r.random_range(as_of - window + MARGIN_DAYS * DAY..=as_of);
                    let mut t: Vec<i64> = (1..n).map(|_| r.random_range(start..=latest)).collect();
                    t.push(latest);
                    t
                }
            }
            _ => (0..n).map(|_| r.random_range(start..=as_of)).collect(),
        };
        times.sort_unstable();

        let distinct = |r: &mut rng::StreamRng, m: usize| -> Vec<usize> {
            index::sample(r, spec.products, m).into_vec()
        };
        let products_of: Vec<Option<usize>> = match kind {
            SignalKind::StructuralPattern | SignalKind::Mixed => {
                let hub = r.random_range(0..spec.products);
                if bits.shared {
                    vec![Some(hub); n]
                } else {
                    let j = r.random_range(0..n);
                    (0..n).map(|i| (i == j).then_some(hub)).collect()
                }
            }
            _ => distinct(&mut r, n).into_iter().map(Some).collect(),
        };

        for (t, q) in times.iter().zip(products_of) {
            tx_rows.push(vec![
                String::new(),
                format!("c{c}"),
                q.map(|q| format!("p{q}")).unwrap_or_default(),
                format!("{:.2}", amount.sample(&mut r)),
                t.to_string(),
            ]);
        }

        let mut label = label_of(kind, bits);
        if spec.noise > 0.0 && r.random_bool(spec.noise) {
            label = r.random_bool(0.5);
        }
        labels.push(LabelRow {
            entity: format!("c{c}"),
            as_of,
            label: if label { 1.0 } else { 0.0 },
        });
    }

    let mut bait_rows = 0;
    if spec.bait {
        let mut r = rng_for(3);
        let after = cut.test.expect("synthetic tasks have a test cutoff");
        for l in &labels {
            tx_rows.push(vec![
                String::new(),
                l.entity.clone(),
                String::new(),
                format!("{:.2}", 1000.0 + 1000.0 * l.label),
                (after + DAY + r.random_range(0..30 * DAY)).to_string(),
            ]);
            bait_rows += 1;
        }
    }
    for (i, row) in tx_rows.iter_mut().enumerate() {
        row[0] = format!("t{i}");
    }
    let transactions = StringTable {
        header: vec![
            "transaction_id".into(),
            "customer_id".into(),
            "product_id".into(),
            "amount".into(),
            "timestamp".into(),
        ],
        rows: tx_rows,
    };

    Ok(SynthData {
        schema,
        tables: vec![customers, products, transactions],
        labels,
        task: TaskSpec {
            dataset: format!("synth-{}", kind.name()),
            name: kind.name().into(),
            kind: TaskKind::Classification,
            target_table: "customers".into(),
            labels: "labels.csv".into(),
            cutoffs: cut,
        },
        bait_rows,
    })
}
