//! Central finite differences for gradient tests.

use alloc::vec::Vec;

use super::{Graph, Matrix, Var};

pub const STEP: f64 = 1e-5;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Largest relative error between reverse-mode and central-difference gradients of
/// the scalar built by `build` with respect to every entry of every input.
pub fn max_rel_error<F>(inputs: &[Matrix], build: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let eval = |values: &[Matrix]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|m| g.param(m.clone())).collect();
        let out = build(&mut g, &vars);
        g.scalar(out)
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|m| g.param(m.clone())).collect();
    let out = build(&mut g, &vars);
    let grads = g.backward(out).unwrap();

    let mut worst: f64 = 0.0;
    let mut work: Vec<Matrix> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[i], input.shape());
        for k in 0..input.len() {
            let orig = input.as_slice()[k];
            work[i].as_mut_slice()[k] = orig + STEP;
            let up = eval(&work);
            work[i].as_mut_slice()[k] = orig - STEP;
            let down = eval(&work);
            work[i].as_mut_slice()[k] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic.as_slice()[k], numeric));
        }
    }
    worst
}
