//! Samples leakage-free contexts around transaction seeds and prints one in
//! full.
//!
//! ```text
//! cargo run --release --example sample_contexts -- [k]
//! ```

use relgt::graph::build_graph;
use relgt::rng::tag;
use relgt::sampler::{leakage_audit, sample_many, SeedRequest};
use relgt::synth::{generate, SynthSpec};

fn main() -> relgt::Result<()> {
    let k: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(16);
    let data = generate(&SynthSpec::default())?;
    let db = data.database()?;
    let g = build_graph(&db, &data.schema);

    let tx = data.schema.table_index("transactions").expect("shop schema");
    let requests = g
        .type_range(tx)
        .map(|v| SeedRequest::resolve(&g, v, None))
        .collect::<relgt::Result<Vec<_>>>()?;
    let start = std::time::Instant::now();
    let contexts = sample_many(&g, &requests, k, 0, &[tag::SAMPLE])?;
    let fallback: usize = contexts.iter().map(|c| c.fallback_count()).sum();
    println!(
        "{} contexts of {k} tokens in {:.2?}, {fallback} fallback tokens, {} leaked",
        contexts.len(),
        start.elapsed(),
        leakage_audit(&contexts, &g)
    );

    let c = &contexts[0];
    println!("seed {} at t={}", c.seed, c.seed_time);
    for (j, &v) in c.tokens.iter().enumerate() {
        let kind = &g.type_names()[g.node_type(v) as usize];
        println!("  {j:>2} node {v:>5} {kind:<13} hop {} dt {:>+9}s", c.hops[j], c.rel_time[j]);
    }
    println!("local edges: {:?}", c.edges());
    Ok(())
}
