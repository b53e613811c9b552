//! Central finite-difference checks of tape gradients.

use ndarray::Array2;

use super::tape::{Tape, Var};
use crate::error::Result;

pub const GRADCHECK_H: f64 = 1e-6;

/// Gradients below this magnitude are compared in absolute terms.
pub const GRADCHECK_FLOOR: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADCHECK_FLOOR)
}

/// Builds `f` on a fresh tape with `inputs` as parameters, compares every
/// analytic partial with a central difference of step `h`, and returns the
/// largest relative error.
pub fn check_gradients<'a, F>(inputs: &[Array2<f64>], f: F, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<'a>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Array2<f64>]| -> Result<(f64, Vec<Array2<f64>>)> {
        let mut tape = Tape::new();
        let vars = values
            .iter()
            .enumerate()
            .map(|(k, v)| tape.param(k, v))
            .collect::<Result<Vec<_>>>()?;
        let loss = f(&mut tape, &vars)?;
        let grads = tape.backward(loss, values.len())?;
        Ok((tape.value(loss)[[0, 0]], grads))
    };
    let (_, analytic) = eval(inputs)?;
    let mut worst = 0.0f64;
    let mut work = inputs.to_vec();
    for k in 0..inputs.len() {
        for idx in 0..inputs[k].len() {
            let pos = (idx / inputs[k].ncols(), idx % inputs[k].ncols());
            let orig = inputs[k][pos];
            work[k][pos] = orig + h;
            let (up, _) = eval(&work)?;
            work[k][pos] = orig - h;
            let (down, _) = eval(&work)?;
            work[k][pos] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = if analytic[k].is_empty() { 0.0 } else { analytic[k][pos] };
            worst = worst.max(relative_error(a, numeric));
        }
    }
    Ok(worst)
}
