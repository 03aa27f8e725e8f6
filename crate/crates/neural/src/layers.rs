//! Parameter storage and the layers built on the tape.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NeuralError, Result};
use crate::lstm::LstmVars;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    /// Running statistics are stored but not optimized.
    pub trainable: bool,
}

/// Named parameters in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    f32_exact: bool,
}

fn round_f32(t: &mut Tensor) {
    t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// When set, every stored value is rounded to the nearest `f32`, so a
    /// 32-bit checkpoint holds the exact state.
    pub fn set_f32_exact(&mut self, on: bool) {
        self.f32_exact = on;
        if on {
            self.entries.iter_mut().for_each(|e| round_f32(&mut e.tensor));
        }
    }

    pub fn f32_exact(&self) -> bool {
        self.f32_exact
    }

    pub fn add(&mut self, name: impl Into<String>, mut tensor: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        if self.f32_exact {
            round_f32(&mut tensor);
        }
        self.entries.push(ParamEntry {
            name,
            tensor,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn set(&mut self, id: ParamId, mut tensor: Tensor) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.tensor.shape() != tensor.shape() {
            return Err(crate::error::shape_err("param set", entry.tensor.shape(), tensor.shape()));
        }
        if self.f32_exact {
            round_f32(&mut tensor);
        }
        entry.tensor = tensor;
        Ok(())
    }

    /// In-place update followed by `f32` rounding when enabled.
    pub fn update(&mut self, id: ParamId, f: impl FnOnce(&mut [f64])) {
        let exact = self.f32_exact;
        let t = &mut self.entries[id.0].tensor;
        f(t.data_mut());
        if exact {
            round_f32(t);
        }
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.tensor.numel()).sum()
    }

    pub fn var(&self, tape: &mut Tape, id: ParamId) -> Var {
        let e = &self.entries[id.0];
        if e.trainable {
            tape.param(id, e.tensor.clone())
        } else {
            tape.leaf(e.tensor.clone())
        }
    }

    /// Replaces values by name; every stored parameter must be present
    /// with the same shape.
    pub fn load_named<'a>(&mut self, tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<()> {
        let mut seen = vec![false; self.entries.len()];
        for (name, t) in tensors {
            let Some(id) = self.find(name) else { continue };
            self.set(id, t.clone())?;
            seen[id.0] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(NeuralError::Checkpoint(format!("missing parameter {}", self.entries[i].name)));
        }
        Ok(())
    }
}

/// Per-call forward state: whether batch statistics are used, and the
/// running-statistic updates collected on the way.
#[derive(Debug, Default)]
pub struct ForwardCtx {
    pub train: bool,
    pub stat_updates: Vec<(ParamId, Tensor)>,
}

impl ForwardCtx {
    pub fn train() -> Self {
        Self {
            train: true,
            stat_updates: Vec::new(),
        }
    }

    pub fn eval() -> Self {
        Self::default()
    }

    /// Writes the collected running statistics into `store`.
    pub fn commit(self, store: &mut ParamStore) -> Result<()> {
        for (id, t) in self.stat_updates {
            store.set(id, t)?;
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}

/// Fully connected layer with weight `[out×in]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self {
            weight: store.add(format!("{name}.weight"), uniform(rng, &[output, input], bound), true),
            bias: store.add(format!("{name}.bias"), uniform(rng, &[output], bound), true),
            input,
            output,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = store.var(tape, self.weight);
        let b = store.var(tape, self.bias);
        tape.linear(x, w, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub features: usize,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub const MOMENTUM: f64 = 0.1;
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, features: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::filled(&[features], 1.0), true),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[features]), true),
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(&[features]), false),
            running_var: store.add(format!("{name}.running_var"), Tensor::filled(&[features], 1.0), false),
            features,
            momentum: Self::MOMENTUM,
            eps: Self::EPS,
        }
    }

    /// Normalizes each feature over all rows. In training mode the batch
    /// statistics are used and running-statistic updates are queued on
    /// `ctx`; otherwise the stored running statistics are used.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, ctx: &mut ForwardCtx, x: Var) -> Result<Var> {
        let g = store.var(tape, self.gamma);
        let b = store.var(tape, self.beta);
        if !ctx.train {
            let mean = store.get(self.running_mean).data();
            let var = store.get(self.running_var).data();
            return tape.batch_norm_eval(x, g, b, mean, var, self.eps);
        }
        let rows = tape.shape(x)[0] as f64;
        let (y, mean, var) = tape.batch_norm_train(x, g, b, self.eps)?;
        let m = self.momentum;
        let unbias = if rows > 1.0 { rows / (rows - 1.0) } else { 1.0 };
        let rm = store.get(self.running_mean).data();
        let rv = store.get(self.running_var).data();
        let new_mean = rm.iter().zip(&mean).map(|(r, b)| (1.0 - m) * r + m * b).collect();
        let new_var = rv.iter().zip(&var).map(|(r, b)| (1.0 - m) * r + m * b * unbias).collect();
        ctx.stat_updates.push((self.running_mean, Tensor::new(&[self.features], new_mean)?));
        ctx.stat_updates.push((self.running_var, Tensor::new(&[self.features], new_var)?));
        Ok(y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
}

impl LstmParams {
    /// Uniform `±1/√fan_in` weights; the forget-gate slice of `b_ih` starts
    /// at 1 and `b_hh` at 0.
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let w_ih = uniform(rng, &[4 * hidden, input], 1.0 / (input as f64).sqrt());
        let w_hh = uniform(rng, &[4 * hidden, hidden], 1.0 / (hidden as f64).sqrt());
        let b_ih = Tensor::from_fn(&[4 * hidden], |j| if (hidden..2 * hidden).contains(&j) { 1.0 } else { 0.0 });
        Self {
            w_ih: store.add(format!("{name}.w_ih"), w_ih, true),
            w_hh: store.add(format!("{name}.w_hh"), w_hh, true),
            b_ih: store.add(format!("{name}.b_ih"), b_ih, true),
            b_hh: store.add(format!("{name}.b_hh"), Tensor::zeros(&[4 * hidden]), true),
        }
    }

    pub fn vars(&self, tape: &mut Tape, store: &ParamStore) -> LstmVars {
        LstmVars {
            w_ih: store.var(tape, self.w_ih),
            w_hh: store.var(tape, self.w_hh),
            b_ih: store.var(tape, self.b_ih),
            b_hh: store.var(tape, self.b_hh),
        }
    }
}

/// Bidirectional LSTM; the output has `2 * hidden` features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiLstm {
    pub forward: LstmParams,
    pub backward: LstmParams,
    pub input: usize,
    pub hidden: usize,
}

impl BiLstm {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            forward: LstmParams::new(store, &format!("{name}.fwd"), input, hidden, rng),
            backward: LstmParams::new(store, &format!("{name}.bwd"), input, hidden, rng),
            input,
            hidden,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, batch: usize, steps: usize) -> Result<Var> {
        let f = self.forward.vars(tape, store);
        let b = self.backward.vars(tape, store);
        tape.bilstm(x, batch, steps, f, b)
    }
}
