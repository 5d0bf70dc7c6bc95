//! Checks reverse-mode gradients against central differences, first on a
//! two-layer network built directly on the tape and then block by block on
//! a toy graph transformer.
//!
//! ```text
//! cargo run --release --example grad_check
//! ```

use relgt::rng;
use relgt::tensor::grad_check;
use relgt::tokenizer::normal;
use relgt::toy::{grad_check_blocks, Toy};

fn main() -> relgt::Result<()> {
    let mut r = rng::stream(7, &[]);
    let x = normal(5, 3, 1.0, &mut r);
    let params = [normal(3, 4, 0.5, &mut r), normal(4, 1, 0.5, &mut r)];
    let err = grad_check(
        |tape, p| {
            let x = tape.constant(x.clone());
            let h = tape.matmul(x, p[0]);
            let h = tape.relu(h);
            let y = tape.matmul(h, p[1]);
            let y = tape.transpose(y);
            let y = tape.softmax_rows(y);
            let sq = tape.mul(y, y);
            tape.sum(sq)
        },
        &params,
        1e-5,
    );
    println!("{:<20} {err:.3e}", "mlp");

    let toy = Toy::new(0)?;
    for (block, err) in grad_check_blocks(&toy, 1e-5) {
        println!("{block:<20} {err:.3e}");
    }
    Ok(())
}
