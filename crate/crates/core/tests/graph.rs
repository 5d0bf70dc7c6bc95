use proptest::prelude::*;
use relgt::graph::build_graph;
use relgt::schema::column_statistics;
use relgt::synth::{generate, SynthSpec};

fn spec(customers: usize, per: usize, seed: u64) -> SynthSpec {
    SynthSpec { customers, products: 30, transactions: customers * per, seed, ..Default::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn graph_invariants(customers in 2usize..40, per in 1usize..6, seed in 0u64..1000) {
        let data = generate(&spec(customers, per * 2, seed)).unwrap();
        let db = data.database().unwrap();
        let g = build_graph(&db, &data.schema);

        prop_assert_eq!(g.node_count(), db.total_rows());
        let fkeys: usize = db.tables.iter()
            .flat_map(|t| &t.foreign_keys)
            .map(|fk| fk.rows.iter().filter(|&&r| r >= 0).count())
            .sum();
        prop_assert_eq!(g.edge_count(), fkeys);
        let degrees: usize = (0..g.node_count() as u32).map(|v| g.degree(v)).sum();
        prop_assert_eq!(degrees, 2 * g.edge_count());

        for t in 0..g.type_count() {
            prop_assert!(g.type_range(t).all(|v| g.node_type(v) as usize == t));
        }
        for v in 0..g.node_count() as u32 {
            let ids: Vec<u32> = g.neighbors(v).iter().map(|n| n.node).collect();
            prop_assert!(ids.windows(2).all(|w| w[0] <= w[1]));
        }
        prop_assert!(build_graph(&db, &data.schema) == g);
    }

    #[test]
    fn statistics_ignore_rows_after_the_cutoff(seed in 0u64..1000, bump in 1.0f64..1e6) {
        let s = spec(30, 8, seed);
        let cutoff = s.cutoffs().train;
        let base = generate(&s).unwrap();
        let mut edited = generate(&s).unwrap();
        let tx = &mut edited.tables[2];
        let ts = tx.header.iter().position(|h| h == "timestamp").unwrap();
        let amount = tx.header.iter().position(|h| h == "amount").unwrap();
        for row in &mut tx.rows {
            if row[ts].parse::<i64>().unwrap() > cutoff {
                row[amount] = format!("{bump}");
            }
        }
        let a = column_statistics(&base.database().unwrap(), cutoff);
        let b = column_statistics(&edited.database().unwrap(), cutoff);
        prop_assert_eq!(a, b);
    }
}
