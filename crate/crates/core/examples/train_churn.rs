//! Trains the graph transformer on a synthetic churn task whose label is
//! decided only by the recency of a customer's transactions.
//!
//! ```text
//! cargo run --release --example train_churn -- [signal] [--no-time] [--no-gnn-pe]
//! ```

use relgt::graph::build_graph;
use relgt::synth::{generate, SignalKind, SynthSpec};
use relgt::train::{resolve_labels, train_observed, Prepared, TrainConfig};

fn main() -> relgt::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let signal = args
        .iter()
        .find(|a| a.chars().all(|c| c.is_ascii_lowercase() || c == '_'))
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(SignalKind::TemporalChurn);
    let customers = args
        .iter()
        .position(|a| a == "--customers")
        .and_then(|i| args.get(i + 1))
        .and_then(|v| v.parse().ok())
        .unwrap_or(600);
    let data = generate(&SynthSpec {
        signal,
        customers,
        transactions: customers * 8,
        ..Default::default()
    })?;
    let db = data.database()?;
    let graph = build_graph(&db, &data.schema);
    let labels = resolve_labels(&data.labels, &data.task, &db, &graph)?;
    let prepared = Prepared::new(&graph, &db, &data.task, &labels);

    let mut cfg = TrainConfig::default();
    let ab = &mut cfg.model.tokenizer.ablation;
    ab.no_time = args.iter().any(|a| a == "--no-time");
    ab.no_gnn_pe = args.iter().any(|a| a == "--no-gnn-pe");
    println!(
        "{}: {} train / {} val / {} test labels, ablation {}",
        data.task.dataset,
        prepared.split.train.len(),
        prepared.split.val.len(),
        prepared.split.test.len(),
        ab.label()
    );
    let start = std::time::Instant::now();
    let out = train_observed(&prepared, &cfg, &mut |r| {
        println!(
            "[{:>6.1}s] epoch {:>2} {:<5} {:<4} {:.4}",
            start.elapsed().as_secs_f64(),
            r.epoch,
            r.split,
            r.metric_name,
            r.value
        )
    })?;
    println!("best epoch {} val {:.4} test {:?}", out.best_epoch, out.best_val, out.test);
    Ok(())
}
