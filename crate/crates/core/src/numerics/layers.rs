//! Parameterized building blocks recorded onto a [`Tape`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Result<Self> {
        let w = store.register_uniform(&format!("{name}.w"), &[out_dim, in_dim], in_dim, rng)?;
        let b = store.register_uniform(&format!("{name}.b"), &[out_dim], in_dim, rng)?;
        Ok(Self { w, b, in_dim, out_dim })
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.linear(self.w, Some(self.b), x)
    }
}

/// Layer sizes plus one activation per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub layers: Vec<(usize, Activation)>,
}

impl MlpSpec {
    /// `depth` layers: hidden layers use `hidden_act`, the last one `out_act`.
    pub fn uniform(
        input: usize,
        hidden: usize,
        output: usize,
        depth: usize,
        hidden_act: Activation,
        out_act: Activation,
    ) -> Self {
        let mut layers = vec![(hidden, hidden_act); depth.saturating_sub(1)];
        layers.push((output, out_act));
        Self { input, layers }
    }

    pub fn output(&self) -> usize {
        self.layers.last().map(|l| l.0).unwrap_or(self.input)
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<(Linear, Activation)>,
}

impl Mlp {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, spec: &MlpSpec, rng: &mut R) -> Result<Self> {
        if spec.layers.is_empty() {
            return Err(Error::Config(format!("MLP `{name}` has no layers")));
        }
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut input = spec.input;
        for (i, &(out, act)) in spec.layers.iter().enumerate() {
            layers.push((Linear::new(store, &format!("{name}.{i}"), input, out, rng)?, act));
            input = out;
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].0.in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().0.out_dim
    }

    pub fn last_layer(&self) -> Linear {
        self.layers.last().unwrap().0
    }

    /// Affine map plus activation per layer.
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.apply_with_mask(tape, x, &mut |_, _| None)
    }

    /// Like [`Mlp::apply`], with `mask(layer, dim)` optionally supplying a
    /// multiplicative mask for each hidden layer's output.
    pub fn apply_with_mask(
        &self,
        tape: &mut Tape,
        x: Var,
        mask: &mut dyn FnMut(usize, usize) -> Option<Vec<f64>>,
    ) -> Result<Var> {
        if tape.dim(x) != self.input_dim() {
            return Err(Error::shape(
                tape.store().name(self.layers[0].0.w).to_string(),
                &[self.input_dim()],
                &[tape.dim(x)],
            ));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, (lin, act)) in self.layers.iter().enumerate() {
            h = lin.apply(tape, h)?;
            h = act.apply(tape, h);
            if i < last {
                if let Some(m) = mask(i, lin.out_dim) {
                    h = tape.mul_const(h, m);
                }
            }
        }
        Ok(h)
    }
}

/// Inverted-dropout mask: kept units are scaled by 1/(1-rate).
pub fn dropout_mask<R: Rng>(rng: &mut R, dim: usize, rate: f64) -> Vec<f64> {
    let keep = 1.0 - rate;
    (0..dim)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct LstmCell {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

/// `(h, c)` pair of an LSTM.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmCell {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let fan_in = input + hidden;
        let w = store.register_uniform(&format!("{name}.w"), &[4 * hidden, fan_in], fan_in, rng)?;
        let b = store.register_uniform(&format!("{name}.b"), &[4 * hidden], fan_in, rng)?;
        Ok(Self { w, b, input, hidden })
    }

    pub fn zero_state(&self, tape: &mut Tape) -> LstmState {
        LstmState {
            h: tape.zeros(self.hidden),
            c: tape.zeros(self.hidden),
        }
    }

    /// One step of the standard LSTM recurrence. Returns the new state; the
    /// output is `state.h`.
    pub fn step(&self, tape: &mut Tape, state: LstmState, input: Var) -> Result<LstmState> {
        if tape.dim(state.h) != self.hidden {
            return Err(Error::shape("lstm.h", &[self.hidden], &[tape.dim(state.h)]));
        }
        if tape.dim(state.c) != self.hidden {
            return Err(Error::shape("lstm.c", &[self.hidden], &[tape.dim(state.c)]));
        }
        if tape.dim(input) != self.input {
            return Err(Error::shape("lstm.input", &[self.input], &[tape.dim(input)]));
        }
        let hc = tape.lstm(self.w, self.b, input, state.h, state.c)?;
        let h = tape.slice(hc, 0, self.hidden);
        let c = tape.slice(hc, self.hidden, self.hidden);
        Ok(LstmState { h, c })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Embedding {
    pub table: ParamId,
    pub rows: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, rows: usize, dim: usize, rng: &mut R) -> Result<Self> {
        // one-hot input: fan-in of a single active unit
        let table = store.register_uniform(name, &[rows, dim], 1, rng)?;
        Ok(Self { table, rows, dim })
    }

    pub fn lookup(&self, tape: &mut Tape, row: usize) -> Result<Var> {
        if row >= self.rows {
            return Err(Error::Contract(format!(
                "embedding row {row} out of range ({} rows)",
                self.rows
            )));
        }
        Ok(tape.embed(self.table, row))
    }
}
