//! Central finite-difference gradient checking.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Gradients below this magnitude are compared absolutely.
pub const DEFAULT_FLOOR: f64 = 1e-6;

/// `(f(x + h) - f(x - h)) / 2h` for every scalar of every input.
pub fn numeric_gradients(values: &[Tensor], mut f: impl FnMut(&[Tensor]) -> f64, h: f64) -> Vec<Tensor> {
    let mut work = values.to_vec();
    let mut out = Vec::with_capacity(values.len());
    for i in 0..values.len() {
        let mut g = Tensor::zeros(values[i].shape());
        for k in 0..values[i].numel() {
            let orig = values[i].data()[k];
            work[i].data_mut()[k] = orig + h;
            let plus = f(&work);
            work[i].data_mut()[k] = orig - h;
            let minus = f(&work);
            work[i].data_mut()[k] = orig;
            g.data_mut()[k] = (plus - minus) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

/// Largest `|a - n| / max(|a|, |n|, floor)` over all elements.
pub fn max_relative_error(analytic: &[Tensor], numeric: &[Tensor], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| a.data().iter().zip(n.data()))
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Compares tape gradients of the scalar built by `build` against central
/// differences with step `h`; returns the largest relative error.
pub fn check(inputs: &[Tensor], build: impl Fn(&mut Tape, &[Var]) -> Result<Var>, h: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    let mut err = None;
    let numeric = numeric_gradients(
        inputs,
        |vals| {
            let mut tape = Tape::inference();
            let vars: Vec<Var> = vals.iter().map(|t| tape.variable(t.clone())).collect();
            match build(&mut tape, &vars) {
                Ok(l) => tape.value(l).item(),
                Err(e) => {
                    err.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        h,
    );
    if let Some(e) = err {
        return Err(e);
    }
    Ok(max_relative_error(&analytic, &numeric, DEFAULT_FLOOR))
}
