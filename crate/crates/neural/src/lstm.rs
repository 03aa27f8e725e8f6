//! Fused bidirectional LSTM over whole sequences with backpropagation
//! through time.
//!
//! Sequences are stored as `[B·T × features]` with row `b * T + t`. The
//! output row holds the forward hidden state followed by the backward one.

use rayon::prelude::*;

use crate::error::{shape_err, Result};
use crate::kernels::{self, dot};
use crate::ops::sigmoid;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Parameters of one direction: `w_ih [4H×In]`, `w_hh [4H×H]`, `b_ih [4H]`,
/// `b_hh [4H]`, gates ordered (i, f, g, o).
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub b_ih: Var,
    pub b_hh: Var,
}

struct Dims {
    batch: usize,
    steps: usize,
    input: usize,
    hidden: usize,
}

/// Activations kept for the backward pass.
struct Trace {
    /// Activated gates `[B·T × 4H]`.
    gates: Vec<f64>,
    cell: Vec<f64>,
    hidden: Vec<f64>,
}

fn order(steps: usize, reverse: bool) -> impl Iterator<Item = usize> {
    (0..steps).map(move |s| if reverse { steps - 1 - s } else { s })
}

fn run_direction(x: &[f64], w_ih: &[f64], w_hh: &[f64], b_ih: &[f64], b_hh: &[f64], d: &Dims, reverse: bool) -> Trace {
    let (h4, hs) = (4 * d.hidden, d.hidden);
    let rows = d.batch * d.steps;
    let mut gates = kernels::matmul_nt(x, w_ih, rows, d.input, h4);
    for row in gates.chunks_mut(h4) {
        for j in 0..h4 {
            row[j] += b_ih[j] + b_hh[j];
        }
    }
    let mut cell = vec![0.0; rows * hs];
    let mut hidden = vec![0.0; rows * hs];
    let per_item = |(gb, (cb, hb)): (&mut [f64], (&mut [f64], &mut [f64]))| {
        let mut h_prev = vec![0.0; hs];
        let mut c_prev = vec![0.0; hs];
        for t in order(d.steps, reverse) {
            let g = &mut gb[t * h4..(t + 1) * h4];
            for (j, gj) in g.iter_mut().enumerate() {
                *gj += dot(&w_hh[j * hs..(j + 1) * hs], &h_prev);
            }
            for k in 0..hs {
                g[k] = sigmoid(g[k]);
                g[hs + k] = sigmoid(g[hs + k]);
                g[2 * hs + k] = g[2 * hs + k].tanh();
                g[3 * hs + k] = sigmoid(g[3 * hs + k]);
                let c = g[hs + k] * c_prev[k] + g[k] * g[2 * hs + k];
                c_prev[k] = c;
                h_prev[k] = g[3 * hs + k] * c.tanh();
            }
            cb[t * hs..(t + 1) * hs].copy_from_slice(&c_prev);
            hb[t * hs..(t + 1) * hs].copy_from_slice(&h_prev);
        }
    };
    let items = gates
        .chunks_mut(d.steps * h4)
        .zip(cell.chunks_mut(d.steps * hs).zip(hidden.chunks_mut(d.steps * hs)));
    if d.batch > 1 {
        items.collect::<Vec<_>>().into_par_iter().for_each(per_item);
    } else {
        items.for_each(per_item);
    }
    Trace { gates, cell, hidden }
}

struct DirGrads {
    dx: Vec<f64>,
    dw_ih: Vec<f64>,
    dw_hh: Vec<f64>,
    db: Vec<f64>,
}

/// `dh_out` is `[B·T × 2H]`; this direction reads columns `col..col + H`.
fn backprop_direction(
    x: &[f64],
    w_ih: &[f64],
    w_hh: &[f64],
    trace: &Trace,
    dh_out: &[f64],
    col: usize,
    d: &Dims,
    reverse: bool,
) -> DirGrads {
    let (h4, hs) = (4 * d.hidden, d.hidden);
    let rows = d.batch * d.steps;
    let mut dgates = vec![0.0; rows * h4];
    let mut h_prev_all = vec![0.0; rows * hs];
    let per_item = |(b, (dg, hp)): (usize, (&mut [f64], &mut [f64]))| {
        let base = b * d.steps;
        let mut dh_next = vec![0.0; hs];
        let mut dc_next = vec![0.0; hs];
        let seq: Vec<usize> = order(d.steps, reverse).collect();
        for (s, &t) in seq.iter().enumerate().rev() {
            let prev = (s > 0).then(|| seq[s - 1]);
            let r = base + t;
            let g = &trace.gates[r * h4..(r + 1) * h4];
            let c = &trace.cell[r * hs..(r + 1) * hs];
            let dgt = &mut dg[t * h4..(t + 1) * h4];
            for k in 0..hs {
                let (i, f, gg, o) = (g[k], g[hs + k], g[2 * hs + k], g[3 * hs + k]);
                let c_prev = prev.map_or(0.0, |p| trace.cell[(base + p) * hs + k]);
                let tc = c[k].tanh();
                let dh = dh_out[r * 2 * hs + col + k] + dh_next[k];
                let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
                dgt[k] = dc * gg * i * (1.0 - i);
                dgt[hs + k] = dc * c_prev * f * (1.0 - f);
                dgt[2 * hs + k] = dc * i * (1.0 - gg * gg);
                dgt[3 * hs + k] = dh * tc * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            for (j, &gj) in dgt.iter().enumerate() {
                if gj != 0.0 {
                    for (dn, w) in dh_next.iter_mut().zip(&w_hh[j * hs..(j + 1) * hs]) {
                        *dn += gj * w;
                    }
                }
            }
            if let Some(p) = prev {
                hp[t * hs..(t + 1) * hs].copy_from_slice(&trace.hidden[(base + p) * hs..(base + p + 1) * hs]);
            }
        }
    };
    let items = dgates
        .chunks_mut(d.steps * h4)
        .zip(h_prev_all.chunks_mut(d.steps * hs))
        .enumerate();
    if d.batch > 1 {
        items.collect::<Vec<_>>().into_par_iter().for_each(per_item);
    } else {
        items.for_each(per_item);
    }
    DirGrads {
        dx: kernels::matmul_nn(&dgates, w_ih, rows, h4, d.input),
        dw_ih: kernels::matmul_tn(&dgates, x, rows, h4, d.input),
        dw_hh: kernels::matmul_tn(&dgates, &h_prev_all, rows, h4, hs),
        db: kernels::col_sums(&dgates, h4),
    }
}

impl Tape {
    /// Bidirectional LSTM layer over `batch` sequences of `steps` frames.
    pub fn bilstm(&mut self, x: Var, batch: usize, steps: usize, fwd: LstmVars, bwd: LstmVars) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let w = self.shape(fwd.w_hh).to_vec();
        let (rows, input) = match xs.as_slice() {
            [r, c] => (*r, *c),
            _ => return Err(shape_err("bilstm", &xs, &w)),
        };
        if rows != batch * steps || batch == 0 || steps == 0 {
            return Err(shape_err("bilstm", &xs, &[batch, steps]));
        }
        let hidden = w.get(1).copied().unwrap_or(0);
        for dir in [fwd, bwd] {
            let ok = self.shape(dir.w_ih) == [4 * hidden, input]
                && self.shape(dir.w_hh) == [4 * hidden, hidden]
                && self.shape(dir.b_ih) == [4 * hidden]
                && self.shape(dir.b_hh) == [4 * hidden];
            if !ok || hidden == 0 {
                return Err(shape_err("bilstm", &xs, self.shape(dir.w_ih)));
            }
        }
        let d = Dims {
            batch,
            steps,
            input,
            hidden,
        };
        let dat = |v: Var| self.value(v).data();
        let (xd, f, b) = (
            dat(x),
            [dat(fwd.w_ih), dat(fwd.w_hh), dat(fwd.b_ih), dat(fwd.b_hh)],
            [dat(bwd.w_ih), dat(bwd.w_hh), dat(bwd.b_ih), dat(bwd.b_hh)],
        );
        let (tf, tb) = rayon::join(
            || run_direction(xd, f[0], f[1], f[2], f[3], &d, false),
            || run_direction(xd, b[0], b[1], b[2], b[3], &d, true),
        );
        let mut out = Vec::with_capacity(rows * 2 * hidden);
        for r in 0..rows {
            out.extend_from_slice(&tf.hidden[r * hidden..(r + 1) * hidden]);
            out.extend_from_slice(&tb.hidden[r * hidden..(r + 1) * hidden]);
        }
        let value = Tensor::new(&[rows, 2 * hidden], out)?;
        let inputs = [x, fwd.w_ih, fwd.w_hh, fwd.b_ih, fwd.b_hh, bwd.w_ih, bwd.w_hh, bwd.b_ih, bwd.b_hh];
        Ok(self.custom(&inputs, value, move |g, ins, _| {
            let (gf, gb) = rayon::join(
                || backprop_direction(ins[0].data(), ins[1].data(), ins[2].data(), &tf, g.data(), 0, &d, false),
                || backprop_direction(ins[0].data(), ins[5].data(), ins[6].data(), &tb, g.data(), d.hidden, &d, true),
            );
            let mut dx = gf.dx;
            for (a, b) in dx.iter_mut().zip(&gb.dx) {
                *a += b;
            }
            let t = |shape: &[usize], data: Vec<f64>| Some(Tensor::new(shape, data).expect("shape"));
            let (h4, hs, inp) = (4 * d.hidden, d.hidden, d.input);
            vec![
                t(&[rows, inp], dx),
                t(&[h4, inp], gf.dw_ih),
                t(&[h4, hs], gf.dw_hh),
                t(&[h4], gf.db.clone()),
                t(&[h4], gf.db),
                t(&[h4, inp], gb.dw_ih),
                t(&[h4, hs], gb.dw_hh),
                t(&[h4], gb.db.clone()),
                t(&[h4], gb.db),
            ]
        }))
    }
}
