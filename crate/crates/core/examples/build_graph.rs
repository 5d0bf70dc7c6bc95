//! Turns a relational database into an entity graph and round-trips it
//! through the binary snapshot format.
//!
//! ```text
//! cargo run --example build_graph
//! ```

use std::collections::BTreeMap;

use relgt::graph::{build_graph, EntityGraph};
use relgt::synth::{generate, SynthSpec};

fn main() -> relgt::Result<()> {
    let data = generate(&SynthSpec { customers: 300, transactions: 2400, ..Default::default() })?;
    let db = data.database()?;
    let g = build_graph(&db, &data.schema);
    println!("{} nodes, {} edges", g.node_count(), g.edge_count());
    println!("relations: {:?}", g.relation_names());

    for (t, name) in g.type_names().iter().enumerate() {
        let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
        for v in g.type_range(t) {
            *hist.entry(g.degree(v)).or_default() += 1;
        }
        let max = hist.keys().last().copied().unwrap_or(0);
        let mean = g.type_range(t).map(|v| g.degree(v)).sum::<usize>() as f64 / g.type_range(t).len() as f64;
        println!("{name:<14} degree mean {mean:>6.2} max {max}");
    }

    let mut bytes = Vec::new();
    g.write_snapshot(&mut bytes).expect("in-memory write");
    let back = EntityGraph::read_snapshot(bytes.as_slice())?;
    println!("snapshot {} bytes, identical after reload: {}", bytes.len(), back == g);
    Ok(())
}
