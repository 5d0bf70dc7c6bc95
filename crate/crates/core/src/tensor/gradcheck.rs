use super::{Tape, Tensor, Var};

/// `|a - b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of `f` against central differences with
/// step `h`, coordinate by coordinate, and returns the largest relative
/// error. `f` must be deterministic: freeze any randomness it consumes.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64) -> f64
where
    F: for<'t> Fn(&mut Tape<'t>, &[Var]) -> Var,
{
    let analytic: Vec<Tensor> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
        let loss = f(&mut tape, &vars);
        let grads = tape.backward(loss).expect("grad_check needs a scalar loss");
        vars.iter().map(|&v| grads.wrt(v)).collect()
    };

    let eval = |ps: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p)).collect();
        let loss = f(&mut tape, &vars);
        tape.value(loss).item()
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut worst = 0.0f64;
    for p in 0..params.len() {
        for i in 0..params[p].len() {
            let orig = params[p].data()[i];
            work[p].data_mut()[i] = orig + h;
            let up = eval(&work);
            work[p].data_mut()[i] = orig - h;
            let down = eval(&work);
            work[p].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(analytic[p].data()[i], numeric));
        }
    }
    worst
}
