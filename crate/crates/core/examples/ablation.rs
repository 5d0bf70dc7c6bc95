//! Trains every ablation variant on one synthetic task and prints the
//! relative change table, then sweeps the context size.
//!
//! ```text
//! cargo run --release --example ablation -- [signal] [epochs]
//! ```

use relgt::graph::build_graph;
use relgt::synth::{generate, SignalKind, SynthSpec};
use relgt::train::{ablate, format_table, k_sweep, resolve_labels, standard_ablations, Prepared, TrainConfig};

fn main() -> relgt::Result<()> {
    let mut args = std::env::args().skip(1);
    let signal: SignalKind = args.next().map(|s| s.parse()).transpose()?.unwrap_or(SignalKind::Mixed);
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);

    let data = generate(&SynthSpec { signal, customers: 400, transactions: 3200, ..Default::default() })?;
    let db = data.database()?;
    let graph = build_graph(&db, &data.schema);
    let labels = resolve_labels(&data.labels, &data.task, &db, &graph)?;
    let prepared = Prepared::new(&graph, &db, &data.task, &labels);
    let cfg = TrainConfig { epochs, ..Default::default() };

    let rows = ablate(&prepared, &cfg, &standard_ablations())?;
    print!("{}", format_table(&format!("{} ablations", signal.name()), &rows));
    let rows = k_sweep(&prepared, &cfg, &[8, 16, 32, 64])?;
    print!("{}", format_table("context size", &rows));
    Ok(())
}
