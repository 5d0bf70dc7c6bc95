//! The graph transformer: local attention over each context's tokens, a
//! learnable seed/context pool, cross-attention to EMA K-Means centroids,
//! an output FFN and a scalar head.
//!
//! Contexts are processed as a stack: every per-token tensor is `(N·K) x d`
//! with the rows of context `s` at `s*K .. (s+1)*K`. Attention scores live in
//! stacked `K x K` blocks, so contexts never attend to each other.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::Database;
use crate::tensor::{Tape, Tensor, Var};
use crate::tokenizer::{self, normal, EncoderParams, TokenBatch, TokenSet, TokenizerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub tokenizer: TokenizerConfig,
    pub layers: usize,
    pub heads: usize,
    pub dropout: f64,
    pub centroids: usize,
    pub ema_decay: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            tokenizer: TokenizerConfig::default(),
            layers: 4,
            heads: 4,
            dropout: 0.3,
            centroids: 64,
            ema_decay: 0.99,
        }
    }
}

impl ModelConfig {
    pub fn d(&self) -> usize {
        self.tokenizer.d
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d();
        if d == 0 || self.heads == 0 || d % self.heads != 0 {
            return Err(Error::Config(format!(
                "{} heads do not divide d = {d}",
                self.heads
            )));
        }
        if self.layers == 0 {
            return Err(Error::Config("at least one transformer layer is required".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.centroids == 0 {
            return Err(Error::Config("at least one centroid is required".into()));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(Error::Config(format!("EMA decay {} outside (0, 1)", self.ema_decay)));
        }
        if self.tokenizer.n_buckets == 0 || self.tokenizer.time_scale <= 0.0 {
            return Err(Error::Config("n_buckets and time_scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub ln1_gain: T,
    pub ln1_bias: T,
    pub wq: T,
    pub wk: T,
    pub wv: T,
    pub wo: T,
    pub ln2_gain: T,
    pub ln2_bias: T,
    pub ff1_w: T,
    pub ff1_b: T,
    pub ff2_w: T,
    pub ff2_b: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub encoder: EncoderParams<T>,
    pub layers: Vec<LayerParams<T>>,
    /// `1 x 1` pooling weights.
    pub w_seed: T,
    pub w_ctx: T,
    pub gq: T,
    pub gk: T,
    pub gv: T,
    /// `2d x d`
    pub out1_w: T,
    pub out1_b: T,
    /// `d x d`
    pub out2_w: T,
    pub out2_b: T,
    /// `d x 1`
    pub head_w: T,
    pub head_b: T,
}

impl ModelParams<Tensor> {
    pub fn init(db: &Database, cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.d();
        let s = |n: usize| (1.0 / n as f64).sqrt();
        let encoder = EncoderParams::init(db, &cfg.tokenizer, rng);
        let layers = (0..cfg.layers)
            .map(|_| LayerParams {
                ln1_gain: Tensor::full(1, d, 1.0),
                ln1_bias: Tensor::zeros(1, d),
                wq: normal(d, d, s(d), rng),
                wk: normal(d, d, s(d), rng),
                wv: normal(d, d, s(d), rng),
                wo: normal(d, d, s(d), rng),
                ln2_gain: Tensor::full(1, d, 1.0),
                ln2_bias: Tensor::zeros(1, d),
                ff1_w: normal(d, 4 * d, s(d / 2), rng),
                ff1_b: Tensor::zeros(1, 4 * d),
                ff2_w: normal(4 * d, d, s(4 * d), rng),
                ff2_b: Tensor::zeros(1, d),
            })
            .collect();
        Self {
            encoder,
            layers,
            w_seed: Tensor::scalar(1.0),
            w_ctx: Tensor::scalar(0.0),
            gq: normal(d, d, s(d), rng),
            gk: normal(d, d, s(d), rng),
            gv: normal(d, d, s(d), rng),
            out1_w: normal(2 * d, d, s(d), rng),
            out1_b: Tensor::zeros(1, d),
            out2_w: normal(d, d, s(d / 2), rng),
            out2_b: Tensor::zeros(1, d),
            head_w: normal(d, 1, s(d), rng),
            head_b: Tensor::zeros(1, 1),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.flatten().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|t| t.is_finite())
    }
}

impl<T> ModelParams<T> {
    pub fn map<'s, U>(&'s self, f: &mut dyn FnMut(&'s T) -> U) -> ModelParams<U> {
        ModelParams {
            encoder: self.encoder.map(f),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    ln1_gain: f(&l.ln1_gain),
                    ln1_bias: f(&l.ln1_bias),
                    wq: f(&l.wq),
                    wk: f(&l.wk),
                    wv: f(&l.wv),
                    wo: f(&l.wo),
                    ln2_gain: f(&l.ln2_gain),
                    ln2_bias: f(&l.ln2_bias),
                    ff1_w: f(&l.ff1_w),
                    ff1_b: f(&l.ff1_b),
                    ff2_w: f(&l.ff2_w),
                    ff2_b: f(&l.ff2_b),
                })
                .collect(),
            w_seed: f(&self.w_seed),
            w_ctx: f(&self.w_ctx),
            gq: f(&self.gq),
            gk: f(&self.gk),
            gv: f(&self.gv),
            out1_w: f(&self.out1_w),
            out1_b: f(&self.out1_b),
            out2_w: f(&self.out2_w),
            out2_b: f(&self.out2_b),
            head_w: f(&self.head_w),
            head_b: f(&self.head_b),
        }
    }

    /// Every parameter with its checkpoint name, in [`ModelParams::map`]
    /// order.
    pub fn visit_mut<'s>(&'s mut self, f: &mut dyn FnMut(String, &'s mut T)) {
        self.encoder.visit_mut(&mut |n, t| f(format!("encoder.{n}"), t));
        for (i, l) in self.layers.iter_mut().enumerate() {
            for (n, t) in [
                ("ln1_gain", &mut l.ln1_gain),
                ("ln1_bias", &mut l.ln1_bias),
                ("wq", &mut l.wq),
                ("wk", &mut l.wk),
                ("wv", &mut l.wv),
                ("wo", &mut l.wo),
                ("ln2_gain", &mut l.ln2_gain),
                ("ln2_bias", &mut l.ln2_bias),
                ("ff1_w", &mut l.ff1_w),
                ("ff1_b", &mut l.ff1_b),
                ("ff2_w", &mut l.ff2_w),
                ("ff2_b", &mut l.ff2_b),
            ] {
                f(format!("layer.{i}.{n}"), t);
            }
        }
        for (n, t) in [
            ("pool.w_seed", &mut self.w_seed),
            ("pool.w_ctx", &mut self.w_ctx),
            ("global.q", &mut self.gq),
            ("global.k", &mut self.gk),
            ("global.v", &mut self.gv),
            ("out.1.w", &mut self.out1_w),
            ("out.1.b", &mut self.out1_b),
            ("out.2.w", &mut self.out2_w),
            ("out.2.b", &mut self.out2_b),
            ("head.w", &mut self.head_w),
            ("head.b", &mut self.head_b),
        ] {
            f(n.to_owned(), t);
        }
    }

    pub fn names(&self) -> Vec<String> {
        let mut skeleton = self.map(&mut |_| ());
        let mut out = Vec::new();
        skeleton.visit_mut(&mut |n, _| out.push(n));
        out
    }

    pub fn flatten(&self) -> Vec<&T> {
        let mut out = Vec::new();
        self.map(&mut |t| out.push(t));
        out
    }

    pub fn flatten_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        self.visit_mut(&mut |_, t| out.push(t));
        out
    }

    /// Same structure, filled from `values` in flatten order.
    pub fn rebuild<U: Clone>(&self, values: &[U]) -> ModelParams<U> {
        let mut it = values.iter();
        let out = self.map(&mut |_| it.next().expect("too few values").clone());
        assert!(it.next().is_none(), "too many values");
        out
    }
}

/// Binds every parameter as a trainable leaf.
pub fn bind<'a>(tape: &mut Tape<'a>, params: &'a ModelParams<Tensor>) -> ModelParams<Var> {
    params.map(&mut |t| tape.param(t))
}

/// EMA K-Means state.
#[derive(Debug, Clone, PartialEq)]
pub struct Centroids {
    /// `B x d`
    pub c: Tensor,
    pub counts: Vec<f64>,
    pub sums: Tensor,
    pub decay: f64,
}

const EMA_EPS: f64 = 1e-8;

impl Centroids {
    /// Starts from given vectors with unit pseudo-counts, so `c = sums /
    /// counts` holds from the first step.
    pub fn new(c: Tensor, decay: f64) -> Self {
        Self {
            counts: vec![1.0; c.rows()],
            sums: c.clone(),
            c,
            decay,
        }
    }

    /// Picks `b` starting centroids among the rows of `features` by
    /// k-means++ seeding. If there are fewer rows than centroids the rest
    /// are copies of chosen rows plus small Gaussian noise.
    pub fn init_from(features: &Tensor, b: usize, decay: f64, rng: &mut impl Rng) -> Self {
        let (n, d) = (features.rows(), features.cols());
        assert!(n > 0, "centroid init needs at least one feature row");
        let mut picks: Vec<usize> = vec![rng.random_range(0..n)];
        let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(features.row(i), features.row(picks[0]))).collect();
        while picks.len() < b.min(n) {
            let total: f64 = dist.iter().sum();
            if total <= 0.0 {
                break;
            }
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            picks.push(pick);
            for (i, di) in dist.iter_mut().enumerate() {
                *di = di.min(sq_dist(features.row(i), features.row(pick)));
            }
        }
        let mut c = Tensor::zeros(b, d);
        for j in 0..b {
            let src = features.row(picks[j % picks.len()]);
            let noisy = j >= picks.len();
            for (o, &v) in c.row_mut(j).iter_mut().zip(src) {
                let e: f64 = if noisy { StandardNormal.sample(rng) } else { 0.0 };
                *o = v + 1e-3 * e;
            }
        }
        Self::new(c, decay)
    }

    pub fn len(&self) -> usize {
        self.c.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.c.rows() == 0
    }

    /// Index of the nearest centroid, ties to the lowest index.
    pub fn assign(&self, x: &[f64]) -> usize {
        (0..self.len())
            .map(|b| (b, sq_dist(x, self.c.row(b))))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
            .0
    }

    /// One EMA K-Means step on a batch of feature rows. Clusters that
    /// receive no rows are left untouched.
    pub fn update(&mut self, features: &Tensor) {
        let (b, d) = (self.len(), self.c.cols());
        assert_eq!(features.cols(), d, "feature width {} vs centroid width {d}", features.cols());
        let mut n = vec![0usize; b];
        let mut s = Tensor::zeros(b, d);
        for i in 0..features.rows() {
            let x = features.row(i);
            let j = self.assign(x);
            n[j] += 1;
            for (o, v) in s.row_mut(j).iter_mut().zip(x) {
                *o += v;
            }
        }
        let m = self.decay;
        for j in 0..b {
            if n[j] == 0 {
                continue;
            }
            self.counts[j] = m * self.counts[j] + (1.0 - m) * n[j] as f64;
            let inv = 1.0 / self.counts[j].max(EMA_EPS);
            for c in 0..d {
                let sum = m * self.sums.get(j, c) + (1.0 - m) * s.get(j, c);
                self.sums.set(j, c, sum);
                self.c.set(j, c, sum * inv);
            }
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Intermediate values of one batched forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub tokens: TokenBatch,
    /// `(N·K) x d` outputs of the last layer.
    pub token_out: Var,
    pub h_local: Var,
    pub h_global: Var,
    pub h_output: Var,
    /// `N x 1` logits or regression values.
    pub predictions: Var,
}

/// Dropout randomness for a training pass; `None` means eval mode.
pub type DropoutRng<'r> = Option<&'r mut crate::rng::StreamRng>;

const LN_EPS: f64 = 1e-5;

/// One pre-norm transformer layer over stacked contexts of `k` tokens.
pub fn local_layer(
    tape: &mut Tape<'_>,
    p: &LayerParams<Var>,
    x: Var,
    k: usize,
    heads: usize,
    dropout: f64,
    rng: &mut DropoutRng<'_>,
) -> Var {
    let d = tape.value(x).cols();
    let dh = d / heads;
    let xn = tape.layer_norm(x, p.ln1_gain, p.ln1_bias, LN_EPS);
    let q = tape.matmul(xn, p.wq);
    let kk = tape.matmul(xn, p.wk);
    let v = tape.matmul(xn, p.wv);
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (a, b) = (h * dh, (h + 1) * dh);
        let qh = tape.slice_cols(q, a, b);
        let kh = tape.slice_cols(kk, a, b);
        let vh = tape.slice_cols(v, a, b);
        let scores = tape.block_matmul_nt(qh, kh, k);
        let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
        let attn = tape.softmax_rows(scores);
        outs.push(tape.block_matmul(attn, vh, k));
    }
    let cat = if heads == 1 { outs[0] } else { tape.concat_cols(&outs) };
    let att = tape.matmul(cat, p.wo);
    let att = apply_dropout(tape, att, dropout, rng);
    let x = tape.add(x, att);

    let xn = tape.layer_norm(x, p.ln2_gain, p.ln2_bias, LN_EPS);
    let hidden = tape.matmul(xn, p.ff1_w);
    let hidden = tape.add_bias(hidden, p.ff1_b);
    let hidden = tape.relu(hidden);
    let ff = tape.matmul(hidden, p.ff2_w);
    let ff = tape.add_bias(ff, p.ff2_b);
    let ff = apply_dropout(tape, ff, dropout, rng);
    tape.add(x, ff)
}

fn apply_dropout(tape: &mut Tape<'_>, x: Var, p: f64, rng: &mut DropoutRng<'_>) -> Var {
    match rng {
        Some(r) => tape.dropout(x, p, &mut **r, true),
        None => x,
    }
}

/// `w_seed * out[seed] + w_ctx * mean_j out[j]` per context.
pub fn pool(
    tape: &mut Tape<'_>,
    w_seed: Var,
    w_ctx: Var,
    token_out: Var,
    k: usize,
    seed_index: &[usize],
) -> Var {
    let rows: Vec<usize> = seed_index.iter().enumerate().map(|(s, &i)| s * k + i).collect();
    let seed = tape.gather_rows(token_out, &rows);
    let mean = tape.segment_mean(token_out, k);
    let a = tape.scale_by(w_seed, seed);
    let b = tape.scale_by(w_ctx, mean);
    tape.add(a, b)
}

/// Single-head cross-attention from each query row to the centroids.
pub fn global_attention(tape: &mut Tape<'_>, query: Var, centroids: Var, gq: Var, gk: Var, gv: Var) -> Var {
    let d = tape.value(query).cols();
    let q = tape.matmul(query, gq);
    let keys = tape.matmul(centroids, gk);
    let values = tape.matmul(centroids, gv);
    let kt = tape.transpose(keys);
    let scores = tape.matmul(q, kt);
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt());
    let attn = tape.softmax_rows(scores);
    tape.matmul(attn, values)
}

/// `relu(concat(h_local, h_global) W1 + b1) W2 + b2`.
pub fn output_ffn(tape: &mut Tape<'_>, p: &ModelParams<Var>, h_local: Var, h_global: Var) -> Var {
    let cat = tape.concat_cols(&[h_local, h_global]);
    let h = tape.matmul(cat, p.out1_w);
    let h = tape.add_bias(h, p.out1_b);
    let h = tape.relu(h);
    let h = tape.matmul(h, p.out2_w);
    tape.add_bias(h, p.out2_b)
}

pub fn head(tape: &mut Tape<'_>, p: &ModelParams<Var>, h_output: Var) -> Var {
    let y = tape.matmul(h_output, p.head_w);
    tape.add_bias(y, p.head_b)
}

/// Full batched forward. Centroids enter as a constant: they receive no
/// gradient and are updated separately.
pub fn forward(
    tape: &mut Tape<'_>,
    p: &ModelParams<Var>,
    centroids: &Tensor,
    sets: &[TokenSet],
    pe_noise: &Tensor,
    cfg: &ModelConfig,
    mut dropout: DropoutRng<'_>,
) -> Forward {
    let k = sets.first().map_or(0, TokenSet::k);
    let tokens = tokenizer::encode(tape, &p.encoder, sets, pe_noise, &cfg.tokenizer);
    let mut x = tokens.h_token;
    for layer in &p.layers {
        x = local_layer(tape, layer, x, k, cfg.heads, cfg.dropout, &mut dropout);
    }
    let seed_index: Vec<usize> = sets.iter().map(|s| s.seed_index).collect();
    let h_local = pool(tape, p.w_seed, p.w_ctx, x, k, &seed_index);
    let h_global = if cfg.tokenizer.ablation.no_global {
        tape.constant(Tensor::zeros(sets.len(), cfg.d()))
    } else {
        let c = tape.constant(centroids.clone());
        global_attention(tape, h_local, c, p.gq, p.gk, p.gv)
    };
    let h_output = output_ffn(tape, p, h_local, h_global);
    let predictions = head(tape, p, h_output);
    Forward {
        tokens,
        token_out: x,
        h_local,
        h_global,
        h_output,
        predictions,
    }
}

/// Parameters, centroids and the configuration they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams<Tensor>,
    pub centroids: Centroids,
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"RGT1";
const CHECKPOINT_VERSION: u32 = 1;

impl Model {
    /// Fresh model; centroids start at zero until the first training batch
    /// replaces them.
    pub fn init(db: &Database, cfg: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let params = ModelParams::init(db, &cfg, rng);
        let centroids = Centroids::new(Tensor::zeros(cfg.centroids, cfg.d()), cfg.ema_decay);
        Ok(Self {
            config: cfg,
            params,
            centroids,
        })
    }

    /// Eval-mode predictions for a batch.
    pub fn predict(&self, sets: &[TokenSet], pe_noise: &Tensor) -> Vec<f64> {
        let mut tape = Tape::new();
        let p = self.params.map(&mut |t| tape.constant_ref(t));
        let out = forward(&mut tape, &p, &self.centroids.c, sets, pe_noise, &self.config, None);
        tape.value(out.predictions).data().to_vec()
    }

    /// Binary checkpoint: magic, version, config JSON, a name/shape table,
    /// then every tensor as little-endian f64 in table order.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let config = serde_json::to_string(&self.config).expect("config serializes");
        let mut entries: Vec<(String, &Tensor)> = self
            .params
            .names()
            .into_iter()
            .zip(self.params.flatten())
            .collect();
        let counts = Tensor::row_vector(self.centroids.counts.clone());
        let decay = Tensor::scalar(self.centroids.decay);
        entries.push(("centroids.c".into(), &self.centroids.c));
        entries.push(("centroids.counts".into(), &counts));
        entries.push(("centroids.sums".into(), &self.centroids.sums));
        entries.push(("centroids.decay".into(), &decay));

        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        write_bytes(&mut w, config.as_bytes())?;
        w.write_all(&(entries.len() as u32).to_le_bytes())?;
        for (name, t) in &entries {
            write_bytes(&mut w, name.as_bytes())?;
            w.write_all(&(t.rows() as u64).to_le_bytes())?;
            w.write_all(&(t.cols() as u64).to_le_bytes())?;
        }
        for (_, t) in &entries {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    }

    /// Reads a checkpoint. The database fixes the encoder structure; every
    /// tensor name and shape must match it.
    pub fn read_checkpoint<R: Read>(mut r: R, db: &Database) -> Result<Self> {
        let bad = |m: String| Error::Format(m);
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("not a model checkpoint".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let config: ModelConfig = serde_json::from_slice(&read_bytes(&mut r)?)
            .map_err(|e| bad(format!("checkpoint config: {e}")))?;
        let mut model = Model::init(db, config, &mut crate::rng::stream(0, &[]))?;
        let n = read_u32(&mut r)? as usize;
        let mut table = Vec::with_capacity(n);
        for _ in 0..n {
            let name = String::from_utf8(read_bytes(&mut r)?).map_err(|e| bad(e.to_string()))?;
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            table.push((name, rows, cols));
        }
        let mut tensors = Vec::with_capacity(n);
        for (name, rows, cols) in table {
            let mut data = vec![0.0; rows * cols];
            let mut buf = [0u8; 8];
            for v in &mut data {
                read_exact(&mut r, &mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
            tensors.push((name, Tensor::from_vec(rows, cols, data)));
        }

        let b = model.config.centroids;
        let expected = model.params.names();
        if tensors.len() != expected.len() + 4 {
            return Err(bad(format!(
                "checkpoint has {} tensors, model expects {}",
                tensors.len(),
                expected.len() + 4
            )));
        }
        let mut it = tensors.into_iter();
        let mut mismatch = None;
        model.params.visit_mut(&mut |name, slot| {
            let (n, t) = it.next().expect("length checked");
            if mismatch.is_none() && (n != name || t.shape() != slot.shape()) {
                mismatch = Some(format!("tensor {n} {:?} does not fit {name} {:?}", t.shape(), slot.shape()));
            }
            *slot = t;
        });
        if let Some(m) = mismatch {
            return Err(bad(m));
        }
        let mut take = |name: &str, shape: [usize; 2]| -> Result<Tensor> {
            let (n, t) = it.next().expect("length checked");
            if n != name || t.shape() != shape {
                return Err(bad(format!("expected {name} {shape:?}, found {n} {:?}", t.shape())));
            }
            Ok(t)
        };
        let d = model.config.d();
        let c = take("centroids.c", [b, d])?;
        let counts = take("centroids.counts", [1, b])?.into_vec();
        let sums = take("centroids.sums", [b, d])?;
        let decay = take("centroids.decay", [1, 1])?.item();
        model.centroids = Centroids {
            c,
            counts,
            sums,
            decay,
        };
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_checkpoint(std::io::BufWriter::new(f))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, db: &Database) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint(std::io::BufReader::new(f), db)
    }
}

fn write_bytes<W: Write>(w: &mut W, b: &[u8]) -> std::io::Result<()> {
    w.write_all(&(b.len() as u32).to_le_bytes())?;
    w.write_all(b)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_bytes<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    let n = read_u32(r)? as usize;
    if n > 1 << 24 {
        return Err(Error::Format(format!("implausible field length {n}")));
    }
    let mut b = vec![0u8; n];
    read_exact(r, &mut b)?;
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centroid_fixed_point() {
        let c = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]);
        let mut cents = Centroids::new(c.clone(), 0.99);
        cents.update(&c);
        assert!(cents.c.max_abs_diff(&c) < 1e-15);
    }

    #[test]
    fn single_centroid_follows_ema_recurrence() {
        let mut cents = Centroids::new(Tensor::row_vector(vec![0.0]), 0.9);
        let batch = Tensor::from_vec(4, 1, vec![2.0; 4]);
        let (mut count, mut sum) = (1.0f64, 0.0f64);
        for _ in 0..20 {
            cents.update(&batch);
            count = 0.9 * count + 0.1 * 4.0;
            sum = 0.9 * sum + 0.1 * 8.0;
            assert!((cents.c.item() - sum / count).abs() < 1e-12);
        }
        assert!((cents.c.item() - 2.0).abs() < 0.3);
    }

    #[test]
    fn empty_clusters_are_untouched() {
        let c = Tensor::from_rows(&[vec![0.0], vec![10.0]]);
        let mut cents = Centroids::new(c, 0.5);
        cents.update(&Tensor::from_vec(2, 1, vec![1.0, 1.0]));
        assert_eq!(cents.c.get(1, 0), 10.0);
        assert_eq!(cents.counts[1], 1.0);
        // sum 0.5 * 0 + 0.5 * 2, count 0.5 * 1 + 0.5 * 2
        assert!((cents.c.get(0, 0) - 1.0 / 1.5).abs() < 1e-12);
    }

    #[test]
    fn kmeans_pp_init_spreads_out() {
        let f = Tensor::from_rows(&[vec![0.0], vec![0.01], vec![5.0], vec![5.01], vec![-5.0]]);
        let mut r = crate::rng::stream(3, &[]);
        let cents = Centroids::init_from(&f, 3, 0.99, &mut r);
        let mut v: Vec<f64> = (0..3).map(|i| cents.c.get(i, 0).round()).collect();
        v.sort_by(f64::total_cmp);
        assert_eq!(v, vec![-5.0, 0.0, 5.0]);
        let padded = Centroids::init_from(&Tensor::row_vector(vec![1.0]), 3, 0.99, &mut r);
        assert_eq!(padded.len(), 3);
        assert!((padded.c.get(2, 0) - 1.0).abs() < 0.01);
    }

    #[test]
    fn global_attention_with_one_centroid_returns_its_value() {
        let c = Tensor::row_vector(vec![0.5, -1.0]);
        let wv = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let wq = Tensor::from_rows(&[vec![0.3, 0.1], vec![-0.2, 0.7]]);
        let q = Tensor::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5]]);
        let mut tape = Tape::new();
        let (qv, cv) = (tape.constant_ref(&q), tape.constant_ref(&c));
        let (a, b, v) = (tape.param(&wq), tape.param(&wq), tape.param(&wv));
        let out = global_attention(&mut tape, qv, cv, a, b, v);
        let expect = c.matmul(&wv);
        for r in 0..2 {
            assert_eq!(tape.value(out).row(r), expect.row(0));
        }
    }
}
