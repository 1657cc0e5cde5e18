//! Central finite-difference verification of backward rules.
//!
//! Used by the unit tests and by the invariant-check CLI subcommand. The
//! scalar function under test is rebuilt on a fresh tape for every
//! evaluation, so the numeric path never shares state with the analytic one.

use ndarray::Array2;

use super::{Tape, Var};
use crate::error::Result;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Outcome of a gradient comparison for one input tensor.
#[derive(Debug)]
pub struct GradReport {
    pub max_abs_diff: f64,
    pub max_rel_diff: f64,
}

/// A scalar-valued computation rebuilt per evaluation: receives a tape and a
/// leaf handle per input (in order) and returns the scalar under test.
pub type ScalarFn<'a> = dyn Fn(&Tape, &[Var]) -> Result<Var> + 'a;

/// Compares analytic gradients against central finite differences.
///
/// Relative error is measured against `max(|analytic|, |numeric|, 1)`
/// entrywise.
pub fn check_gradients(
    inputs: &[Array2<f64>],
    step: f64,
    build: &ScalarFn,
) -> Result<Vec<GradReport>> {
    let analytic: Vec<Array2<f64>> = {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
        let loss = build(&tape, &vars)?;
        let grads = tape.backward(&loss)?;
        vars.iter().map(|v| grads.get(v)).collect()
    };

    let eval = |inputs: &[Array2<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
        let loss = build(&tape, &vars)?;
        Ok(loss.value()[[0, 0]])
    };

    let mut reports = Vec::new();
    for (which, grad) in analytic.iter().enumerate() {
        let mut max_abs = 0.0f64;
        let mut max_rel = 0.0f64;
        let (r, c) = (inputs[which].nrows(), inputs[which].ncols());
        for i in 0..r {
            for j in 0..c {
                let mut plus = inputs.to_vec();
                plus[which][[i, j]] += step;
                let mut minus = inputs.to_vec();
                minus[which][[i, j]] -= step;
                let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * step);
                let a = grad[[i, j]];
                let abs = (a - numeric).abs();
                let rel = abs / a.abs().max(numeric.abs()).max(1.0);
                max_abs = max_abs.max(abs);
                max_rel = max_rel.max(rel);
            }
        }
        reports.push(GradReport {
            max_abs_diff: max_abs,
            max_rel_diff: max_rel,
        });
    }
    Ok(reports)
}

/// True when every input's gradient matches finite differences within
/// `rel_tol`.
pub fn gradients_match(inputs: &[Array2<f64>], rel_tol: f64, build: &ScalarFn) -> Result<bool> {
    let reports = check_gradients(inputs, FD_STEP, build)?;
    Ok(reports.iter().all(|r| r.max_rel_diff < rel_tol))
}
