use proptest::prelude::*;
use relgt::graph::build_graph;
use relgt::rng;
use relgt::sampler::SampledContext;
use relgt::schema::{column_statistics, Database, RelationalSchema, StringTable};
use relgt::tensor::{Tape, Tensor};
use relgt::tokenizer::{
    combine, encode, encode_features, encode_time, gnn_pe, normal, pe_inputs, Ablation, ColumnEncoder,
    EncoderParams, GnnPeParams, PeNoise, TokenSet, TokenizerConfig,
};
use relgt::toy::Toy;

const SCHEMA: &str = r#"{"tables": [
  {"name": "solo", "primary_key": "id", "columns": [
    {"name": "id", "kind": "categorical"}, {"name": "y", "kind": "numeric"}]},
  {"name": "cats", "primary_key": "id", "columns": [
    {"name": "id", "kind": "categorical"}, {"name": "c", "kind": "categorical"}]},
  {"name": "pair", "primary_key": "id", "columns": [
    {"name": "id", "kind": "categorical"}, {"name": "x", "kind": "numeric"}, {"name": "c", "kind": "categorical"}]},
  {"name": "docs", "primary_key": "id", "columns": [
    {"name": "id", "kind": "categorical"}, {"name": "t", "kind": "text"}]}
]}"#;

fn table(header: &[&str], rows: &[&[&str]]) -> StringTable {
    StringTable {
        header: header.iter().map(|s| s.to_string()).collect(),
        rows: rows.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect(),
    }
}

fn fixture() -> (RelationalSchema, Database) {
    let schema = RelationalSchema::from_json(SCHEMA).unwrap();
    let raw = [
        table(&["id", "y"], &[&["s0", "1"], &["s1", "3"], &["s2", "2"], &["s3", ""]]),
        table(&["id", "c"], &[&["c0", "a"], &["c1", "b"], &["c2", "c"], &["c3", ""]]),
        table(&["id", "x", "c"], &[&["p0", "1", "u"], &["p1", "3", "v"]]),
        table(&["id", "t"], &[&["d0", "Red red Shoe"], &["d1", "!!!"]]),
    ];
    let db = Database::from_string_tables(&schema, &raw).unwrap();
    (schema, db)
}

const D: usize = 4;

fn cfg() -> TokenizerConfig {
    TokenizerConfig { d: D, n_buckets: 64, ..Default::default() }
}

/// `h_feat` of one node as a single-token context.
fn feat_of(db: &Database, schema: &RelationalSchema, params: &EncoderParams<Tensor>, table: usize, row: usize) -> Vec<f64> {
    let g = build_graph(db, schema);
    let v = g.node_id(table, row);
    let ctx = SampledContext {
        seed: v,
        seed_time: 0,
        tokens: vec![v],
        hops: vec![0],
        rel_time: vec![0],
        local_adjacency: vec![false],
        seed_index: 0,
    };
    let set = TokenSet::prepare(&ctx, &g, db, &column_statistics(db, i64::MAX), &cfg());
    let mut tape = Tape::new();
    let p = params.map(&mut |t| tape.constant_ref(t));
    let h = encode_features(&mut tape, &p, &[set], D);
    tape.value(h).data().to_vec()
}

fn numeric_weight(p: &EncoderParams<Tensor>, table: usize, column: usize) -> Vec<f64> {
    match &p.tables[table].columns[column] {
        ColumnEncoder::Numeric { weight, .. } => weight.data().to_vec(),
        _ => panic!("not numeric"),
    }
}

fn categorical_row(p: &EncoderParams<Tensor>, table: usize, column: usize, row: usize) -> Vec<f64> {
    match &p.tables[table].columns[column] {
        ColumnEncoder::Categorical { table } => table.row(row).to_vec(),
        _ => panic!("not categorical"),
    }
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

#[test]
fn feature_encoder_examples() {
    let (schema, db) = fixture();
    let params = EncoderParams::init(&db, &cfg(), &mut rng::stream(1, &[]));

    // y = 2 is the column mean.
    assert!(close(&feat_of(&db, &schema, &params, 0, 2), &[0.0; D]));

    // Dictionary codes start at 1 in first-appearance order, so "c" is code 3.
    assert!(close(&feat_of(&db, &schema, &params, 1, 2), &categorical_row(&params, 1, 0, 3)));

    // x = 3 has z = 1; "v" is code 2.
    let w = numeric_weight(&params, 2, 0);
    let e = categorical_row(&params, 2, 1, 2);
    let want: Vec<f64> = w.iter().zip(&e).map(|(a, b)| (a + b) / 2f64.sqrt()).collect();
    assert!(close(&feat_of(&db, &schema, &params, 2, 1), &want));

    // Missing values read the table's null row.
    assert!(close(&feat_of(&db, &schema, &params, 0, 3), params.tables[0].null.data()));
    assert!(close(&feat_of(&db, &schema, &params, 1, 3), params.tables[1].null.data()));
}

#[test]
fn text_is_a_scaled_sum_of_hashed_buckets() {
    let (schema, db) = fixture();
    let params = EncoderParams::init(&db, &cfg(), &mut rng::stream(2, &[]));
    let ColumnEncoder::Text { buckets } = &params.tables[3].columns[0] else {
        panic!("text column");
    };
    let mut want = [0.0; D];
    for tok in ["red", "red", "shoe"] {
        let row = buckets.row((fnv1a64(tok.as_bytes()) % 64) as usize);
        for (o, v) in want.iter_mut().zip(row) {
            *o += v / 3f64.sqrt();
        }
    }
    assert!(close(&feat_of(&db, &schema, &params, 3, 0), &want));
    // Text without word characters has no tokens and encodes to zero.
    assert!(close(&feat_of(&db, &schema, &params, 3, 1), &[0.0; D]));
}

#[test]
fn time_encoding_examples() {
    let units = [-1.0, 0.0, -365.0];
    let mut tape = Tape::new();
    let w = tape.constant(Tensor::full(3, 1, 1.0));
    let h = encode_time(&mut tape, w, &units);
    assert_eq!(tape.value(h).row(0), &[-1.0; 3]);
    assert_eq!(tape.value(h).row(1), &[0.0; 3]);
    assert_eq!(tape.value(h).row(2), &[-365.0; 3]);
    assert_eq!(relgt::tokenizer::time_units(-86_400, 86_400.0, 365.0), -1.0);
    assert_eq!(relgt::tokenizer::time_units(-1_000_000_000, 86_400.0, 365.0), -365.0);
}

fn run_pe(params: &GnnPeParams<Tensor>, prop: &[f64], z: &[f64], k: usize) -> Tensor {
    let mut tape = Tape::new();
    let p = GnnPeParams {
        w1: tape.constant_ref(&params.w1),
        b1: tape.constant_ref(&params.b1),
        w2: tape.constant_ref(&params.w2),
        b2: tape.constant_ref(&params.b2),
    };
    let pv = tape.constant(Tensor::from_vec(k, k, prop.to_vec()));
    let zv = tape.constant(Tensor::from_vec(k, 1, z.to_vec()));
    let out = gnn_pe(&mut tape, &p, pv, zv, k);
    tape.value(out).clone()
}

#[test]
fn gnn_pe_examples() {
    let k = 3;
    let edgeless = relgt::tokenizer::mean_propagation(&[false; 9], k);
    let z = [0.7, -1.2, 2.0];
    let pass = GnnPeParams {
        w1: Tensor::from_rows(&[vec![1.0, 0.0]]),
        b1: Tensor::zeros(1, 2),
        w2: Tensor::identity(2),
        b2: Tensor::zeros(1, 2),
    };
    let h = run_pe(&pass, &edgeless, &z, k);
    for j in 0..k {
        assert_eq!(h.row(j), &[z[j].max(0.0), 0.0]);
    }

    let zero = GnnPeParams {
        w1: Tensor::zeros(1, 2),
        b1: Tensor::zeros(1, 2),
        w2: Tensor::zeros(2, 2),
        b2: Tensor::from_rows(&[vec![0.25, -4.0]]),
    };
    let mut adj = vec![false; 9];
    adj[1] = true;
    adj[3] = true;
    let h = run_pe(&zero, &relgt::tokenizer::mean_propagation(&adj, k), &z, k);
    for j in 0..k {
        assert_eq!(h.row(j), &[0.25, -4.0]);
    }

    // Path 0-1 with pass-through weights: node 0 averages over {0, 1}
    // twice.
    let h = run_pe(&pass, &relgt::tokenizer::mean_propagation(&adj, k), &z, k);
    let h1 = [(0.7f64 - 1.2) / 2.0, (0.7f64 - 1.2) / 2.0, 2.0].map(|v| v.max(0.0));
    assert!((h.get(0, 0) - (h1[0] + h1[1]) / 2.0).abs() < 1e-15);
    assert!((h.get(2, 0) - h1[2]).abs() < 1e-15);
}

fn toy_batch(toy: &Toy, ablation: Ablation, mix: Option<Tensor>) -> Tensor {
    let mut cfg = toy.config.tokenizer;
    cfg.ablation = ablation;
    let mut params = toy.params.encoder.clone();
    if let Some(m) = mix {
        params.mix = m;
    }
    let mut tape = Tape::new();
    let p = params.map(&mut |t| tape.constant_ref(t));
    let b = encode(&mut tape, &p, &toy.sets, &toy.pe_noise, &cfg);
    tape.value(b.h_token).clone()
}

#[test]
fn removing_an_element_equals_zeroing_its_mixing_rows() {
    let toy = Toy::new(4).unwrap();
    let d = toy.config.d();
    let full = &toy.params.encoder.mix;
    let cases: [(usize, fn(&mut Ablation)); 4] = [
        (1, |a| a.no_type = true),
        (2, |a| a.no_hop = true),
        (3, |a| a.no_time = true),
        (4, |a| a.no_gnn_pe = true),
    ];
    for (slot, off) in cases {
        let mut zeroed = full.clone();
        for r in slot * d..(slot + 1) * d {
            zeroed.row_mut(r).fill(0.0);
        }
        let masked = toy_batch(&toy, Ablation::default(), Some(zeroed));

        let kept: Vec<Vec<f64>> = (0..5 * d)
            .filter(|r| r / d != slot)
            .map(|r| full.row(r).to_vec())
            .collect();
        let mut ab = Ablation::default();
        off(&mut ab);
        let removed = toy_batch(&toy, ab, Some(Tensor::from_rows(&kept)));
        assert!(masked.max_abs_diff(&removed) < 1e-12, "slot {slot}");
    }
}

#[test]
fn spatio_temporal_mode_uses_times_as_pe_inputs() {
    let toy = Toy::new(5).unwrap();
    let d = toy.config.d();
    let st = Ablation { stpe: true, ..Default::default() };
    let four: Vec<Vec<f64>> = (0..4 * d).map(|r| toy.params.encoder.mix.row(r).to_vec()).collect();
    let mix = Tensor::from_rows(&four);

    // The PE noise is ignored in this mode.
    let a = toy_batch(&toy, st, Some(mix.clone()));
    let mut other = Toy::new(5).unwrap();
    other.pe_noise = normal(other.pe_noise.rows(), 1, 3.0, &mut rng::stream(9, &[]));
    let b = toy_batch(&other, st, Some(mix));
    assert_eq!(a, b);

    // Zero times and zero biases give a zero PE element.
    let mut tape = Tape::new();
    let pe = &toy.params.encoder.pe;
    let p = GnnPeParams {
        w1: tape.constant_ref(&pe.w1),
        b1: tape.constant(Tensor::zeros(1, d)),
        w2: tape.constant_ref(&pe.w2),
        b2: tape.constant(Tensor::zeros(1, d)),
    };
    let prop = tape.constant(Tensor::from_vec(Toy::K, Toy::K, toy.sets[0].propagation.clone()));
    let z = tape.constant(Tensor::zeros(Toy::K, 1));
    let h = gnn_pe(&mut tape, &p, prop, z, Toy::K);
    assert!(tape.value(h).data().iter().all(|&v| v == 0.0));

    // Two unconnected nodes: each output depends on its own time only.
    let w1 = Tensor::from_rows(&[vec![1.0, -1.0]]);
    let params = GnnPeParams { w1, b1: Tensor::from_rows(&[vec![0.5, 0.5]]), w2: Tensor::identity(2), b2: Tensor::zeros(1, 2) };
    let h = run_pe(&params, &[1.0, 0.0, 0.0, 1.0], &[-2.0, 3.0], 2);
    assert_eq!(h.row(0), &[0.0, 2.5]);
    assert_eq!(h.row(1), &[3.5, 0.0]);
}

#[test]
fn combine_matches_a_hand_product() {
    let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![0.0, -1.0]]);
    let b = Tensor::from_rows(&[vec![3.0, 0.5], vec![2.0, 1.0]]);
    let o = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0], vec![-1.0, 1.0], vec![0.5, 0.5]]);
    let mut tape = Tape::new();
    let (av, bv, ov) = (tape.constant_ref(&a), tape.constant_ref(&b), tape.constant_ref(&o));
    let h = combine(&mut tape, &[av, bv], ov);
    let mut want = Tensor::zeros(2, 2);
    for r in 0..2 {
        let cat = [a.row(r), b.row(r)].concat();
        for c in 0..2 {
            want.set(r, c, (0..4).map(|i| cat[i] * o.get(i, c)).sum());
        }
    }
    assert_eq!(tape.value(h), &want);

    let z = Tensor::zeros(2, 2);
    let zv = tape.constant_ref(&z);
    let h = combine(&mut tape, &[zv, zv], ov);
    assert!(tape.value(h).data().iter().all(|&v| v == 0.0));

    let i2 = Tensor::identity(2);
    let iv = tape.constant_ref(&i2);
    let h = combine(&mut tape, &[av], iv);
    assert_eq!(tape.value(h), &a);
}

#[test]
#[should_panic(expected = "mixing matrix")]
fn combine_rejects_a_wrong_width() {
    let a = Tensor::zeros(2, 2);
    let o = Tensor::zeros(3, 2);
    let mut tape = Tape::new();
    let (av, ov) = (tape.constant_ref(&a), tape.constant_ref(&o));
    combine(&mut tape, &[av], ov);
}

#[test]
fn eval_inputs_are_keyed_by_seed_node() {
    let toy = Toy::new(6).unwrap();
    let a = pe_inputs(&toy.sets, PeNoise::Eval { seed: 1 });
    assert_eq!(a, pe_inputs(&toy.sets, PeNoise::Eval { seed: 1 }));
    // Reordering the batch moves each context's inputs with it.
    let rev: Vec<TokenSet> = toy.sets.iter().rev().cloned().collect();
    let b = pe_inputs(&rev, PeNoise::Eval { seed: 1 });
    let k = Toy::K;
    let n = toy.sets.len();
    for i in 0..n {
        for j in 0..k {
            assert_eq!(a.get(i * k + j, 0), b.get((n - 1 - i) * k + j, 0));
        }
    }
    let t1 = pe_inputs(&toy.sets, PeNoise::Train { stream: 1 });
    let t2 = pe_inputs(&toy.sets, PeNoise::Train { stream: 2 });
    assert_ne!(t1, t2);

    let h1 = toy_batch(&toy, Ablation::default(), None);
    let h2 = toy_batch(&toy, Ablation::default(), None);
    assert_eq!(format!("{h1:?}"), format!("{h2:?}"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encoder_outputs_stay_finite(
        times in proptest::collection::vec(any::<i64>(), Toy::K),
        noise in proptest::collection::vec(-1e6f64..1e6, Toy::K * Toy::BATCH),
        stpe in any::<bool>(),
    ) {
        let mut toy = Toy::new(0).unwrap();
        let c = toy.config.tokenizer;
        for s in &mut toy.sets {
            s.time_units = times.iter().map(|&t| relgt::tokenizer::time_units(t, c.time_scale, c.time_clip)).collect();
        }
        toy.pe_noise = Tensor::from_vec(noise.len(), 1, noise);
        let ab = Ablation { stpe, ..Default::default() };
        let mix = if stpe {
            Some(Tensor::from_rows(&(0..4 * c.d).map(|r| toy.params.encoder.mix.row(r).to_vec()).collect::<Vec<_>>()))
        } else {
            None
        };
        let h = toy_batch(&toy, ab, mix);
        prop_assert!(h.is_finite());
    }
}
