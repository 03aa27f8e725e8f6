//! Mask application, multi-resolution resynthesis and the training loss as
//! tape operations.

use std::f64::consts::LN_10;
use std::sync::Arc;

use rayon::prelude::*;
use stemkit_core::dsp::{istft, istft_adjoint, rms_db, Spectrogram};
use stemkit_core::metrics::{ACTIVITY_FLOOR_DB, EPS};
use stemkit_neural::{Tape, Tensor, Var};

use crate::error::{config_err, Result};

/// Sum over resolutions of `istft(M_{j,i} ⊙ Y_i)` for every source `j`.
///
/// `masks[i]` is `[N × S·F_i]` with source `j` in columns `j·F_i..`.
pub fn reconstruct(specs: &[Spectrogram], masks: &[&[f64]], num_sources: usize, length: usize) -> Vec<Vec<f64>> {
    (0..num_sources)
        .into_par_iter()
        .map(|j| source_estimate(specs, masks, num_sources, j, length))
        .collect()
}

fn source_estimate(specs: &[Spectrogram], masks: &[&[f64]], num_sources: usize, j: usize, length: usize) -> Vec<f64> {
    let mut out = vec![0.0; length];
    for (spec, mask) in specs.iter().zip(masks) {
        let f = spec.num_bins();
        let mut masked = Spectrogram::zeros(spec.num_frames, spec.config.clone());
        for n in 0..spec.num_frames {
            let m = &mask[n * num_sources * f + j * f..n * num_sources * f + (j + 1) * f];
            for (k, (&y, &w)) in spec.frame(n).iter().zip(m).enumerate() {
                masked.bins[n * f + k] = y * w;
            }
        }
        for (o, v) in out.iter_mut().zip(istft(&masked, length)) {
            *o += v;
        }
    }
    out
}

/// Appends the resynthesis of a batch to the tape.
///
/// `specs[b][i]` is the mixture spectrogram of item `b` at resolution `i`;
/// `masks[i]` is `[B·N × S·F_i]`. The result is `[B·S × length]`, row
/// `b·S + j` holding source `j` of item `b`.
pub fn reconstruct_op(
    tape: &mut Tape,
    specs: Arc<Vec<Vec<Spectrogram>>>,
    masks: &[Var],
    num_sources: usize,
    length: usize,
) -> Result<Var> {
    let batch = specs.len();
    let frames = specs.first().and_then(|s| s.first()).map_or(0, |s| s.num_frames);
    for (i, &m) in masks.iter().enumerate() {
        let f = specs[0][i].num_bins();
        if tape.shape(m) != [batch * frames, num_sources * f] {
            return Err(config_err("masks", format!("resolution {i} has shape {:?}", tape.shape(m))));
        }
    }
    let mask_data: Vec<&[f64]> = masks.iter().map(|&m| tape.value(m).data()).collect();
    let rows: Vec<Vec<f64>> = (0..batch)
        .into_par_iter()
        .flat_map_iter(|b| {
            // each item owns a contiguous block of rows in every mask
            let item: Vec<&[f64]> = mask_data
                .iter()
                .zip(&specs[b])
                .map(|(m, s)| {
                    let w = num_sources * s.num_bins();
                    &m[b * frames * w..(b + 1) * frames * w]
                })
                .collect();
            reconstruct(&specs[b], &item, num_sources, length)
        })
        .collect();
    let value = Tensor::new(&[batch * num_sources, length], rows.concat())?;
    let n_res = masks.len();
    Ok(tape.custom(masks, value, move |g, _, _| {
        (0..n_res)
            .map(|i| {
                let f = specs[0][i].num_bins();
                let w = num_sources * f;
                let mut grad = vec![0.0; batch * frames * w];
                grad.par_chunks_mut(frames * w).enumerate().for_each(|(b, gb)| {
                    let spec = &specs[b][i];
                    for j in 0..num_sources {
                        let row = &g.data()[(b * num_sources + j) * length..(b * num_sources + j + 1) * length];
                        let adj = istft_adjoint(row, &spec.config, frames);
                        for n in 0..frames {
                            for k in 0..f {
                                let y = spec.bins[n * f + k];
                                let a = adj[n * f + k];
                                gb[n * w + j * f + k] = a.re * y.re + a.im * y.im;
                            }
                        }
                    }
                });
                Some(Tensor::new(&[batch * frames, w], grad).expect("mask gradient shape"))
            })
            .collect()
    }))
}

/// Keeps the loss differentiable when an estimate is orthogonal to its
/// reference.
const LOSS_GUARD: f64 = 1e-12;

/// Whether a reference chunk counts as silent for the loss.
pub fn is_silent(reference: &[f64]) -> bool {
    rms_db(reference) <= ACTIVITY_FLOOR_DB
}

/// Per-term loss and its gradient with respect to the estimate.
fn term(est: &[f64], reference: &[f64]) -> (f64, Vec<f64>) {
    let k = 10.0 / LN_10;
    if is_silent(reference) {
        // energy penalty 10·log10(mean(x̂²) + ε)
        let n = est.len() as f64;
        let p = est.iter().map(|v| v * v).sum::<f64>() / n + EPS;
        let grad = est.iter().map(|&v| k * 2.0 * v / (n * p)).collect();
        return (10.0 * p.log10(), grad);
    }
    let rr: f64 = reference.iter().map(|v| v * v).sum();
    let sr: f64 = est.iter().zip(reference).map(|(a, b)| a * b).sum();
    let alpha = sr / rr;
    let a = alpha * alpha * rr;
    let b: f64 = est.iter().zip(reference).map(|(&s, &r)| (alpha * r - s).powi(2)).sum();
    let num = a + LOSS_GUARD;
    let den = b + EPS * a + LOSS_GUARD;
    let loss = -10.0 * (num / den).log10();
    // dA/ds = 2α·r ; dB/ds = 2s − dA/ds
    let grad = est
        .iter()
        .zip(reference)
        .map(|(&s, &r)| {
            let da = 2.0 * alpha * r;
            let db = 2.0 * s - da;
            -k * (da / num - (db + EPS * da) / den)
        })
        .collect();
    (loss, grad)
}

/// Negative SI-SDR averaged over every (item, source) row, with silent
/// references scored by the energy penalty instead. `references` holds one
/// row per estimate row.
pub fn loss_op(tape: &mut Tape, estimates: Var, references: Arc<Vec<Vec<f64>>>) -> Result<Var> {
    let (rows, len) = match tape.shape(estimates) {
        [r, l] => (*r, *l),
        s => return Err(config_err("estimates", format!("expected a matrix, got {s:?}"))),
    };
    if references.len() != rows || references.iter().any(|r| r.len() != len) {
        return Err(config_err("references", "one reference row per estimate row is required"));
    }
    let data = tape.value(estimates).data();
    let terms: Vec<(f64, Vec<f64>)> = (0..rows)
        .into_par_iter()
        .map(|r| term(&data[r * len..(r + 1) * len], &references[r]))
        .collect();
    let loss = terms.iter().map(|t| t.0).sum::<f64>() / rows as f64;
    let mut grad = Vec::with_capacity(rows * len);
    for (_, g) in terms {
        grad.extend(g.into_iter().map(|v| v / rows as f64));
    }
    let grad = Tensor::new(&[rows, len], grad)?;
    Ok(tape.custom(&[estimates], Tensor::scalar(loss), move |g, _, _| {
        let s = g.item();
        vec![Some(grad.map(|v| v * s))]
    }))
}
