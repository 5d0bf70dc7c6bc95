//! Writes a synthetic shop database to disk, then reads it back through the
//! schema manifest and prints what the ingester recovered.
//!
//! ```text
//! cargo run --example ingest_csv -- [out_dir]
//! ```

use std::path::PathBuf;

use relgt::schema::{column_statistics, load_database, load_schema, ColumnValues};
use relgt::synth::{generate, SynthSpec};

fn main() -> relgt::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("relgt-ingest"));
    let spec = SynthSpec { customers: 200, transactions: 1600, ..Default::default() };
    generate(&spec)?.write(&dir)?;

    let schema = load_schema(&dir.join("schema.json"))?;
    let db = load_database(&schema, &dir)?;
    let stats = column_statistics(&db, spec.cutoffs().train);
    for (t, table) in db.tables.iter().enumerate() {
        println!("{} ({} rows)", table.name, table.num_rows);
        for fk in &table.foreign_keys {
            let nulls = fk.rows.iter().filter(|&&r| r < 0).count();
            println!("  fk {} -> {} ({nulls} null)", fk.column, db.tables[fk.target].name);
        }
        for (c, col) in table.columns.iter().enumerate() {
            match &col.values {
                ColumnValues::Numeric { .. } => {
                    let s = stats.get(t, c);
                    println!("  numeric {:<12} mean {:>10.3} std {:>10.3}", col.name, s.mean, s.std);
                }
                ColumnValues::Categorical { dictionary, .. } => {
                    println!("  categorical {:<8} {} codes", col.name, dictionary.len());
                }
                ColumnValues::Text { values } => {
                    let present = values.iter().flatten().count();
                    println!("  text {:<15} {present} present", col.name);
                }
            }
        }
    }
    println!("wrote {}", dir.display());
    Ok(())
}
