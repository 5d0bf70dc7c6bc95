//! Encodes one sampled context into token vectors and shows how much each
//! element contributes.
//!
//! ```text
//! cargo run --example tokenize
//! ```

use relgt::graph::build_graph;
use relgt::rng::{self, tag};
use relgt::sampler::{sample_context, SeedRequest};
use relgt::schema::column_statistics;
use relgt::synth::{generate, SynthSpec};
use relgt::tensor::Tape;
use relgt::tokenizer::{encode, normal, EncoderParams, TokenSet, TokenizerConfig};

fn main() -> relgt::Result<()> {
    let spec = SynthSpec { customers: 100, transactions: 800, ..Default::default() };
    let data = generate(&spec)?;
    let db = data.database()?;
    let g = build_graph(&db, &data.schema);
    let stats = column_statistics(&db, spec.cutoffs().train);

    let cfg = TokenizerConfig::default();
    let k = 8;
    let seed = g.type_range(data.schema.table_index("transactions").unwrap()).start;
    let req = SeedRequest::resolve(&g, seed, None)?;
    let ctx = sample_context(&g, req, k, &mut rng::stream(0, &[tag::SAMPLE]))?;
    let set = TokenSet::prepare(&ctx, &g, &db, &stats, &cfg);
    println!("types {:?}", set.types);
    println!("hops  {:?}", set.hops);
    println!("time  {:?}", set.time_units.iter().map(|t| format!("{t:.1}")).collect::<Vec<_>>());

    let params = EncoderParams::init(&db, &cfg, &mut rng::stream(0, &[tag::INIT]));
    let noise = normal(k, 1, 1.0, &mut rng::stream(0, &[tag::PE]));
    let mut tape = Tape::new();
    let vars = params.map(&mut |t| tape.param(t));
    let batch = encode(&mut tape, &vars, std::slice::from_ref(&set), &noise, &cfg);
    let named = [
        ("feat", Some(batch.h_feat)),
        ("type", batch.h_type),
        ("hop", batch.h_hop),
        ("time", batch.h_time),
        ("pe", batch.h_pe),
        ("token", Some(batch.h_token)),
    ];
    for (name, v) in named {
        if let Some(v) = v {
            let t = tape.value(v);
            println!("{name:<6} {}x{} norm {:.3}", t.rows(), t.cols(), t.norm());
        }
    }
    Ok(())
}
