use std::collections::HashMap;
use std::path::Path;

use relgt::synth::{generate, SignalKind, SynthSpec, DAY};
use relgt::train::{read_labels, TaskSpec};

struct Tx {
    customer: String,
    product: Option<String>,
    time: i64,
}

fn read_transactions(dir: &Path) -> Vec<Tx> {
    let mut r = csv::Reader::from_path(dir.join("transactions.csv")).unwrap();
    let h = r.headers().unwrap().clone();
    let col = |name: &str| h.iter().position(|c| c == name).unwrap();
    let (c, p, t) = (col("customer_id"), col("product_id"), col("timestamp"));
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            Tx {
                customer: rec[c].to_string(),
                product: (!rec[p].is_empty()).then(|| rec[p].to_string()),
                time: rec[t].parse().unwrap(),
            }
        })
        .collect()
}

/// The label rule recomputed from the written files.
fn relabel(spec: &SynthSpec, dir: &Path) -> Vec<f64> {
    let txs = read_transactions(dir);
    let mut by_customer: HashMap<&str, Vec<&Tx>> = HashMap::new();
    for t in &txs {
        by_customer.entry(&t.customer).or_default().push(t);
    }
    let threshold = spec.tx_counts().threshold;
    read_labels(&dir.join("labels.csv"))
        .unwrap()
        .iter()
        .map(|l| {
            let past: Vec<&&Tx> = by_customer[l.entity.as_str()]
                .iter()
                .filter(|t| t.time <= l.as_of)
                .collect();
            let churn = past.iter().all(|t| t.time <= l.as_of - spec.churn_window_days * DAY);
            let mut seen = HashMap::new();
            let shared = past
                .iter()
                .filter_map(|t| t.product.as_deref())
                .any(|p| seen.insert(p, ()).is_some());
            let heavy = past.len() >= threshold;
            let label = match spec.signal {
                SignalKind::TemporalChurn => churn,
                SignalKind::StructuralPattern => shared,
                SignalKind::TypeSignal => heavy,
                SignalKind::Mixed => [churn, shared, heavy].iter().filter(|&&b| b).count() >= 2,
            };
            f64::from(u8::from(label))
        })
        .collect()
}

#[test]
fn labels_follow_the_rule_recomputed_from_the_files() {
    for signal in SignalKind::ALL {
        let spec = SynthSpec { signal, customers: 300, transactions: 2400, seed: 3, ..Default::default() };
        let dir = tempfile::tempdir().unwrap();
        generate(&spec).unwrap().write(dir.path()).unwrap();
        let emitted: Vec<f64> = read_labels(&dir.path().join("labels.csv"))
            .unwrap()
            .iter()
            .map(|l| l.label)
            .collect();
        assert_eq!(relabel(&spec, dir.path()), emitted, "{}", signal.name());

        let prevalence = emitted.iter().sum::<f64>() / emitted.len() as f64;
        // Four standard errors of a fair coin over 300 draws.
        assert!((prevalence - 0.5).abs() < 4.0 * (0.25f64 / 300.0).sqrt(), "{} {prevalence}", signal.name());
    }
}

#[test]
fn noise_flips_only_some_labels() {
    let spec = SynthSpec { noise: 0.4, customers: 400, transactions: 3200, ..Default::default() };
    let dir = tempfile::tempdir().unwrap();
    generate(&spec).unwrap().write(dir.path()).unwrap();
    let rule = relabel(&spec, dir.path());
    let emitted: Vec<f64> = read_labels(&dir.path().join("labels.csv"))
        .unwrap()
        .iter()
        .map(|l| l.label)
        .collect();
    let flipped = rule.iter().zip(&emitted).filter(|(a, b)| a != b).count() as f64 / 400.0;
    // A coin replaces 40% of labels and disagrees half of the time.
    assert!((flipped - 0.2).abs() < 0.08, "{flipped}");
}

#[test]
fn no_shared_products_means_no_positives() {
    let spec = SynthSpec {
        signal: SignalKind::StructuralPattern,
        positive_rate: 0.0,
        customers: 100,
        transactions: 800,
        ..Default::default()
    };
    let data = generate(&spec).unwrap();
    assert!(data.labels.iter().all(|l| l.label == 0.0));
}

#[test]
fn written_directory_is_complete_and_deterministic() {
    let spec = SynthSpec { customers: 50, transactions: 400, ..Default::default() };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate(&spec).unwrap().write(a.path()).unwrap();
    generate(&spec).unwrap().write(b.path()).unwrap();
    for f in ["schema.json", "customers.csv", "products.csv", "transactions.csv", "labels.csv", "task.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let task = TaskSpec::load(&a.path().join("task.json")).unwrap();
    let c = spec.cutoffs();
    assert_eq!(task.cutoffs, c);
    assert!(c.train < c.val && c.val < c.test.unwrap());
}

#[test]
fn bait_reveals_the_label_only_after_the_test_cutoff() {
    let spec = SynthSpec { customers: 80, transactions: 640, ..Default::default() };
    let data = generate(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    data.write(dir.path()).unwrap();
    let test = spec.cutoffs().test.unwrap();
    let txs = read_transactions(dir.path());
    let late: Vec<&Tx> = txs.iter().filter(|t| t.time > test).collect();
    assert_eq!(late.len(), data.bait_rows);
    assert_eq!(late.len(), data.labels.len());
    assert!(data.labels.iter().all(|l| l.as_of <= test));
}
