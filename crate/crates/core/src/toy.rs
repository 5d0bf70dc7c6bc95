//! A small end-to-end fixture (synthetic shop, four contexts of eight
//! tokens, `d = 16`, one layer) and finite-difference checks of every model
//! block on it.

use crate::error::Result;
use crate::graph::{build_graph, EntityGraph};
use crate::model::{self, ModelConfig, ModelParams};
use crate::rng::{self, tag};
use crate::sampler::{sample_many, SeedRequest};
use crate::schema::{column_statistics, Database};
use crate::synth::{generate, SignalKind, SynthSpec};
use crate::tensor::{grad_check, Tape, Tensor, Var};
use crate::tokenizer::{self, normal, PeNoise, TokenSet, TokenizerConfig};

pub struct Toy {
    pub db: Database,
    pub graph: EntityGraph,
    pub config: ModelConfig,
    pub params: ModelParams<Tensor>,
    pub centroids: Tensor,
    pub sets: Vec<TokenSet>,
    pub pe_noise: Tensor,
    pub targets: Vec<f64>,
}

impl Toy {
    pub const K: usize = 8;
    pub const BATCH: usize = 4;

    pub fn new(seed: u64) -> Result<Self> {
        let data = generate(&SynthSpec {
            customers: 12,
            products: 10,
            transactions: 48,
            signal: SignalKind::Mixed,
            seed,
            ..Default::default()
        })?;
        let db = data.database()?;
        let graph = build_graph(&db, &data.schema);
        let config = ModelConfig {
            tokenizer: TokenizerConfig {
                d: 16,
                n_buckets: 16,
                ..Default::default()
            },
            layers: 1,
            heads: 2,
            dropout: 0.0,
            centroids: 4,
            ema_decay: 0.99,
        };
        let mut r = rng::stream(seed, &[tag::INIT]);
        let mut params = ModelParams::init(&db, &config, &mut r);
        // Move the pooling weights off their special starting values so the
        // context-mean path carries gradient.
        params.w_seed = Tensor::scalar(0.8);
        params.w_ctx = Tensor::scalar(0.4);
        let centroids = normal(config.centroids, config.d(), 1.0, &mut r);
        let stats = column_statistics(&db, data.task.cutoffs.train);
        let reqs: Vec<SeedRequest> = data.labels[..Self::BATCH]
            .iter()
            .map(|l| {
                let row = db.tables[0].row_of(&l.entity).expect("labeled customer");
                SeedRequest::resolve(&graph, graph.node_id(0, row), Some(l.as_of))
            })
            .collect::<Result<_>>()?;
        let ctxs = sample_many(&graph, &reqs, Self::K, seed, &[tag::SAMPLE])?;
        let sets: Vec<TokenSet> = ctxs
            .iter()
            .map(|c| TokenSet::prepare(c, &graph, &db, &stats, &config.tokenizer))
            .collect();
        let pe_noise = tokenizer::pe_inputs(&sets, PeNoise::Eval { seed });
        let targets = data.labels[..Self::BATCH].iter().map(|l| l.label).collect();
        Ok(Self {
            db,
            graph,
            config,
            params,
            centroids,
            sets,
            pe_noise,
            targets,
        })
    }

    fn rows(&self) -> usize {
        self.sets.len() * Self::K
    }
}

/// Fixed pseudo-random weights for reducing a block output to a scalar.
fn probe(rows: usize, cols: usize, seed: u64) -> Tensor {
    normal(rows, cols, 1.0, &mut rng::stream(seed, &[0xfeed]))
}

fn weighted_sum(tape: &mut Tape<'_>, x: Var, w: &Tensor) -> Var {
    let w = tape.constant(w.clone());
    let prod = tape.mul(x, w);
    tape.sum(prod)
}

/// Largest relative error of each block's gradients against central
/// differences with step `h`.
pub fn grad_check_blocks(toy: &Toy, h: f64) -> Vec<(&'static str, f64)> {
    let cfg = toy.config;
    let d = cfg.d();
    let k = Toy::K;
    let n = toy.sets.len();
    let mut out = Vec::new();

    let enc: Vec<Tensor> = {
        let mut v = Vec::new();
        let mut e = toy.params.encoder.clone();
        e.visit_mut(&mut |_, t| v.push(t.clone()));
        v
    };
    let w_tok = probe(toy.rows(), d, 1);
    out.push((
        "encoders",
        grad_check(
            |tape, vars| {
                let p = toy.params.encoder.map(&mut |_| ());
                let mut it = vars.iter();
                let p = p.map(&mut |_| *it.next().expect("one var per tensor"));
                let b = tokenizer::encode(tape, &p, &toy.sets, &toy.pe_noise, &cfg.tokenizer);
                weighted_sum(tape, b.h_token, &w_tok)
            },
            &enc,
            h,
        ),
    ));

    let layer = &toy.params.layers[0];
    let x0 = normal(toy.rows(), d, 1.0, &mut rng::stream(2, &[]));
    let mut local: Vec<Tensor> = vec![x0];
    local.extend(
        [
            &layer.ln1_gain, &layer.ln1_bias, &layer.wq, &layer.wk, &layer.wv, &layer.wo,
            &layer.ln2_gain, &layer.ln2_bias, &layer.ff1_w, &layer.ff1_b, &layer.ff2_w, &layer.ff2_b,
        ]
        .into_iter()
        .cloned(),
    );
    let w_loc = probe(toy.rows(), d, 3);
    let seed_index: Vec<usize> = toy.sets.iter().map(|s| s.seed_index).collect();
    let pool_w = [toy.params.w_seed.clone(), toy.params.w_ctx.clone()];
    local.extend(pool_w.iter().cloned());
    let w_pool = probe(n, d, 4);
    out.push((
        "local",
        grad_check(
            |tape, v| {
                let p = model::LayerParams {
                    ln1_gain: v[1],
                    ln1_bias: v[2],
                    wq: v[3],
                    wk: v[4],
                    wv: v[5],
                    wo: v[6],
                    ln2_gain: v[7],
                    ln2_bias: v[8],
                    ff1_w: v[9],
                    ff1_b: v[10],
                    ff2_w: v[11],
                    ff2_b: v[12],
                };
                let y = model::local_layer(tape, &p, v[0], k, cfg.heads, 0.0, &mut None);
                let pooled = model::pool(tape, v[13], v[14], y, k, &seed_index);
                let a = weighted_sum(tape, y, &w_loc);
                let b = weighted_sum(tape, pooled, &w_pool);
                tape.add(a, b)
            },
            &local,
            h,
        ),
    ));

    let q0 = normal(n, d, 1.0, &mut rng::stream(5, &[]));
    let global = vec![
        q0,
        toy.params.gq.clone(),
        toy.params.gk.clone(),
        toy.params.gv.clone(),
    ];
    let w_glob = probe(n, d, 6);
    out.push((
        "global",
        grad_check(
            |tape, v| {
                let c = tape.constant(toy.centroids.clone());
                let g = model::global_attention(tape, v[0], c, v[1], v[2], v[3]);
                weighted_sum(tape, g, &w_glob)
            },
            &global,
            h,
        ),
    ));

    let mut r = rng::stream(7, &[]);
    let output = vec![
        normal(n, d, 1.0, &mut r),
        normal(n, d, 1.0, &mut r),
        toy.params.out1_w.clone(),
        toy.params.out1_b.clone(),
        toy.params.out2_w.clone(),
        toy.params.out2_b.clone(),
        toy.params.head_w.clone(),
        toy.params.head_b.clone(),
    ];
    out.push((
        "output",
        grad_check(
            |tape, v| {
                let skeleton = toy.params.map(&mut |_| v[0]);
                let p = ModelParams {
                    out1_w: v[2],
                    out1_b: v[3],
                    out2_w: v[4],
                    out2_b: v[5],
                    head_w: v[6],
                    head_b: v[7],
                    ..skeleton
                };
                let ho = model::output_ffn(tape, &p, v[0], v[1]);
                let y = model::head(tape, &p, ho);
                let s = tape.bce_with_logits_sum(y, &toy.targets);
                tape.scale(s, 1.0 / n as f64)
            },
            &output,
            h,
        ),
    ));

    let all: Vec<Tensor> = toy.params.flatten().into_iter().cloned().collect();
    out.push((
        "full",
        grad_check(
            |tape, v| {
                let p = toy.params.rebuild(v);
                let f = model::forward(tape, &p, &toy.centroids, &toy.sets, &toy.pe_noise, &cfg, None);
                let s = tape.bce_with_logits_sum(f.predictions, &toy.targets);
                tape.scale(s, 1.0 / n as f64)
            },
            &all,
            h,
        ),
    ));
    out
}
