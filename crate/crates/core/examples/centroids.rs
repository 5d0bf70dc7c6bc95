//! Runs the EMA K-Means codebook on a stream of three Gaussian blobs and
//! prints how the centroids settle.
//!
//! ```text
//! cargo run --example centroids
//! ```

use rand_distr::{Distribution, Normal};
use relgt::model::Centroids;
use relgt::rng::{self, tag};
use relgt::tensor::Tensor;

fn main() {
    let centers = [[0.0, 0.0], [1.5, 0.0], [0.0, 1.5]];
    let noise = Normal::new(0.0, 0.05).unwrap();
    let mut r = rng::stream(0, &[tag::CENTROIDS]);
    let batch = |r: &mut rng::StreamRng| {
        let rows: Vec<Vec<f64>> = (0..64)
            .map(|i| centers[i % 3].iter().map(|c| c + noise.sample(r)).collect())
            .collect();
        Tensor::from_rows(&rows)
    };

    let first = batch(&mut r);
    let mut c = Centroids::init_from(&first, 3, 0.99, &mut r);
    for step in 0..=200 {
        c.update(&batch(&mut r));
        if step % 50 == 0 {
            let pts: Vec<String> = (0..c.len())
                .map(|i| format!("({:.3}, {:.3})", c.c.get(i, 0), c.c.get(i, 1)))
                .collect();
            println!("step {step:>3}: {}", pts.join(" "));
        }
    }
    for p in centers {
        println!("{p:?} -> centroid {}", c.assign(&p));
    }
}
