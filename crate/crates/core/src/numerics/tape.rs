//! Dynamically recorded reverse-mode tape over 1-d values.
//!
//! Parameters are read straight out of a borrowed [`ParamStore`]; their
//! gradients are accumulated into a [`Grads`] buffer on `backward`.

use super::params::{Grads, ParamId, ParamStore};
use super::tensor::{dot, log_softmax_unchecked, matvec, matvec_t_acc, outer_acc, softmax_unchecked};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param(ParamId),
    Embed {
        table: ParamId,
        row: usize,
    },
    Linear {
        w: ParamId,
        b: Option<ParamId>,
        x: Var,
    },
    Lstm {
        w: ParamId,
        b: ParamId,
        x: Var,
        h: Var,
        c: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MulConst(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Square(Var),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Mean(Vec<Var>),
    Sum(Var),
    Dot(Var, Var),
    Softmax(Var),
    LogSoftmax(Var),
    Pick(Var, usize),
    MixRows {
        weights: Var,
        dim: usize,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
    // op-specific cache: LSTM gates, constant masks, mixed rows
    aux: Vec<f64>,
}

pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.push_aux(value, op, Vec::new())
    }

    fn push_aux(&mut self, value: Vec<f64>, op: Op, aux: Vec<f64>) -> Var {
        self.nodes.push(Node { value, op, aux });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = &self.nodes[v.0].value;
        debug_assert_eq!(val.len(), 1);
        val[0]
    }

    pub fn dim(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Const)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.constant(vec![0.0; n])
    }

    /// A whole parameter tensor as a flat vector.
    pub fn param(&mut self, id: ParamId) -> Var {
        let v = self.store.get(id).values().to_vec();
        self.push(v, Op::Param(id))
    }

    /// Row `row` of a 2-d parameter table.
    pub fn embed(&mut self, table: ParamId, row: usize) -> Var {
        let t = self.store.get(table);
        let v = t.row(row).to_vec();
        self.push(v, Op::Embed { table, row })
    }

    /// `W x + b` with `W` shaped `[out, in]`.
    pub fn linear(&mut self, w: ParamId, b: Option<ParamId>, x: Var) -> Result<Var> {
        let wt = self.store.get(w);
        let (rows, cols) = (wt.rows(), wt.cols());
        let xin = &self.nodes[x.0].value;
        if wt.shape().len() != 2 || xin.len() != cols {
            return Err(Error::shape(self.store.name(w), &[rows, xin.len()], wt.shape()));
        }
        let mut out = vec![0.0; rows];
        matvec(wt.values(), rows, cols, xin, &mut out);
        if let Some(b) = b {
            let bt = self.store.get(b);
            if bt.len() != rows {
                return Err(Error::shape(self.store.name(b), &[rows], bt.shape()));
            }
            out.iter_mut().zip(bt.values()).for_each(|(o, bb)| *o += bb);
        }
        Ok(self.push(out, Op::Linear { w, b, x }))
    }

    /// Fused LSTM cell. `w` is `[4H, I+H]` over `[x; h]`, gate order i, f, g, o.
    /// Returns a node holding `[h'; c']`.
    pub fn lstm(&mut self, w: ParamId, b: ParamId, x: Var, h: Var, c: Var) -> Result<Var> {
        let hidden = self.dim(h);
        let wt = self.store.get(w);
        let input = self.dim(x);
        if self.dim(c) != hidden {
            return Err(Error::shape("lstm.c", &[hidden], &[self.dim(c)]));
        }
        if wt.shape() != [4 * hidden, input + hidden] {
            return Err(Error::shape(
                self.store.name(w),
                &[4 * hidden, input + hidden],
                wt.shape(),
            ));
        }
        let bt = self.store.get(b);
        if bt.len() != 4 * hidden {
            return Err(Error::shape(self.store.name(b), &[4 * hidden], bt.shape()));
        }
        let mut xh = Vec::with_capacity(input + hidden);
        xh.extend_from_slice(&self.nodes[x.0].value);
        xh.extend_from_slice(&self.nodes[h.0].value);
        let mut z = vec![0.0; 4 * hidden];
        matvec(wt.values(), 4 * hidden, input + hidden, &xh, &mut z);
        z.iter_mut().zip(bt.values()).for_each(|(a, bb)| *a += bb);
        let cprev = &self.nodes[c.0].value;
        // aux layout: i, f, g, o activations then tanh(c')
        let mut aux = vec![0.0; 5 * hidden];
        let mut out = vec![0.0; 2 * hidden];
        for k in 0..hidden {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[hidden + k]);
            let g = z[2 * hidden + k].tanh();
            let o = sigmoid(z[3 * hidden + k]);
            let cn = f * cprev[k] + i * g;
            let tc = cn.tanh();
            aux[k] = i;
            aux[hidden + k] = f;
            aux[2 * hidden + k] = g;
            aux[3 * hidden + k] = o;
            aux[4 * hidden + k] = tc;
            out[k] = o * tc;
            out[hidden + k] = cn;
        }
        Ok(self.push_aux(out, Op::Lstm { w, b, x, h, c }, aux))
    }

    fn binary(&self, a: Var, b: Var) -> (&[f64], &[f64]) {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.len(), vb.len(), "elementwise op on mismatched dims");
        (va, vb)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = self.binary(a, b);
        let v = va.iter().zip(vb).map(|(x, y)| x + y).collect();
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = self.binary(a, b);
        let v = va.iter().zip(vb).map(|(x, y)| x - y).collect();
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = self.binary(a, b);
        let v = va.iter().zip(vb).map(|(x, y)| x * y).collect();
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.nodes[a.0].value.iter().map(|x| x * k).collect();
        self.push(v, Op::Scale(a, k))
    }

    pub fn add_const(&mut self, a: Var, c: &[f64]) -> Var {
        let va = &self.nodes[a.0].value;
        assert_eq!(va.len(), c.len());
        let v = va.iter().zip(c).map(|(x, y)| x + y).collect();
        self.push(v, Op::AddConst(a))
    }

    /// Elementwise product with a constant (used for dropout masks).
    pub fn mul_const(&mut self, a: Var, c: Vec<f64>) -> Var {
        let va = &self.nodes[a.0].value;
        assert_eq!(va.len(), c.len());
        let v = va.iter().zip(&c).map(|(x, y)| x * y).collect();
        self.push_aux(v, Op::MulConst(a), c)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.iter().map(|&x| sigmoid(x)).collect();
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.iter().map(|x| x.tanh()).collect();
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.iter().map(|&x| x.max(0.0)).collect();
        self.push(v, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.iter().map(|x| x.exp()).collect();
        self.push(v, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.iter().map(|x| x * x).collect();
        self.push(v, Op::Square(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let n = parts.iter().map(|p| self.dim(*p)).sum();
        let mut v = Vec::with_capacity(n);
        for p in parts {
            v.extend_from_slice(&self.nodes[p.0].value);
        }
        self.push(v, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.nodes[x.0].value[start..start + len].to_vec();
        self.push(v, Op::Slice { x, start })
    }

    /// Elementwise mean of equally sized vectors.
    pub fn mean(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "mean of no vectors");
        let n = self.dim(parts[0]);
        let mut v = vec![0.0; n];
        for p in parts {
            let pv = &self.nodes[p.0].value;
            assert_eq!(pv.len(), n);
            v.iter_mut().zip(pv).for_each(|(a, b)| *a += b);
        }
        let k = parts.len() as f64;
        v.iter_mut().for_each(|a| *a /= k);
        self.push(v, Op::Mean(parts.to_vec()))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().sum();
        self.push(vec![s], Op::Sum(a))
    }

    /// Sum of scalars in a fixed order.
    pub fn sum_scalars(&mut self, xs: &[Var]) -> Var {
        match xs {
            [] => self.constant(vec![0.0]),
            [x] => *x,
            _ => {
                let c = self.concat(xs);
                self.sum(c)
            }
        }
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = self.binary(a, b);
        let s = dot(va, vb);
        self.push(vec![s], Op::Dot(a, b))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let v = softmax_unchecked(&self.nodes[a.0].value);
        self.push(v, Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let v = log_softmax_unchecked(&self.nodes[a.0].value);
        self.push(v, Op::LogSoftmax(a))
    }

    /// Entry `idx` as a scalar.
    pub fn pick(&mut self, a: Var, idx: usize) -> Var {
        let v = self.nodes[a.0].value[idx];
        self.push(vec![v], Op::Pick(a, idx))
    }

    /// `Σ_j w_j · rows_j` where `rows` is a constant `n × dim` matrix.
    pub fn mix_rows(&mut self, weights: Var, rows: &[f64], dim: usize) -> Var {
        let w = &self.nodes[weights.0].value;
        assert_eq!(w.len() * dim, rows.len());
        let mut v = vec![0.0; dim];
        for (j, wj) in w.iter().enumerate() {
            let r = &rows[j * dim..(j + 1) * dim];
            v.iter_mut().zip(r).for_each(|(a, b)| *a += wj * b);
        }
        self.push_aux(v, Op::MixRows { weights, dim }, rows.to_vec())
    }

    /// Back-propagates from scalar `loss`, adding `scale · ∂loss/∂θ` into `grads`.
    /// `grads` must have a slot for every parameter the tape touched.
    pub fn backward_scaled(&self, loss: Var, scale: f64, grads: &mut Grads) -> Result<()> {
        if self.dim(loss) != 1 {
            return Err(Error::Contract("backward from a non-scalar node".into()));
        }
        let mut g: Vec<Vec<f64>> = vec![Vec::new(); loss.0 + 1];
        g[loss.0] = vec![scale];

        fn acc(g: &mut [Vec<f64>], v: Var, n: usize) -> &mut [f64] {
            let slot = &mut g[v.0];
            if slot.is_empty() {
                *slot = vec![0.0; n];
            }
            slot
        }

        for idx in (0..=loss.0).rev() {
            let gi = std::mem::take(&mut g[idx]);
            if gi.is_empty() {
                continue;
            }
            let node = &self.nodes[idx];
            match &node.op {
                Op::Const => {}
                Op::Param(id) => {
                    grads.slot_mut(*id).iter_mut().zip(&gi).for_each(|(a, b)| *a += b);
                }
                Op::Embed { table, row } => {
                    let d = gi.len();
                    grads.slot_mut(*table)[row * d..(row + 1) * d]
                        .iter_mut()
                        .zip(&gi)
                        .for_each(|(a, b)| *a += b);
                }
                Op::Linear { w, b, x } => {
                    let wt = self.store.get(*w);
                    let cols = wt.cols();
                    let xv = &self.nodes[x.0].value;
                    outer_acc(grads.slot_mut(*w), cols, &gi, xv);
                    if let Some(b) = b {
                        grads.slot_mut(*b).iter_mut().zip(&gi).for_each(|(a, bb)| *a += bb);
                    }
                    if !matches!(self.nodes[x.0].op, Op::Const) {
                        matvec_t_acc(wt.values(), cols, &gi, acc(&mut g, *x, cols));
                    }
                }
                Op::Lstm { w, b, x, h, c } => {
                    let hidden = gi.len() / 2;
                    let a = &node.aux;
                    let cprev = &self.nodes[c.0].value;
                    let mut dz = vec![0.0; 4 * hidden];
                    let mut dc_prev = vec![0.0; hidden];
                    for k in 0..hidden {
                        let (i, f, gg, o, tc) = (
                            a[k],
                            a[hidden + k],
                            a[2 * hidden + k],
                            a[3 * hidden + k],
                            a[4 * hidden + k],
                        );
                        let dh = gi[k];
                        let dc = gi[hidden + k] + dh * o * (1.0 - tc * tc);
                        dz[k] = dc * gg * i * (1.0 - i);
                        dz[hidden + k] = dc * cprev[k] * f * (1.0 - f);
                        dz[2 * hidden + k] = dc * i * (1.0 - gg * gg);
                        dz[3 * hidden + k] = dh * tc * o * (1.0 - o);
                        dc_prev[k] = dc * f;
                    }
                    let wt = self.store.get(*w);
                    let cols = wt.cols();
                    let xv = &self.nodes[x.0].value;
                    let hv = &self.nodes[h.0].value;
                    let input = xv.len();
                    let mut xh = Vec::with_capacity(cols);
                    xh.extend_from_slice(xv);
                    xh.extend_from_slice(hv);
                    outer_acc(grads.slot_mut(*w), cols, &dz, &xh);
                    grads.slot_mut(*b).iter_mut().zip(&dz).for_each(|(q, d)| *q += d);
                    let mut dxh = vec![0.0; cols];
                    matvec_t_acc(wt.values(), cols, &dz, &mut dxh);
                    acc(&mut g, *x, input)
                        .iter_mut()
                        .zip(&dxh[..input])
                        .for_each(|(q, d)| *q += d);
                    acc(&mut g, *h, hidden)
                        .iter_mut()
                        .zip(&dxh[input..])
                        .for_each(|(q, d)| *q += d);
                    acc(&mut g, *c, hidden)
                        .iter_mut()
                        .zip(&dc_prev)
                        .for_each(|(q, d)| *q += d);
                }
                Op::Add(a, b) => {
                    let n = gi.len();
                    acc(&mut g, *a, n).iter_mut().zip(&gi).for_each(|(q, d)| *q += d);
                    acc(&mut g, *b, n).iter_mut().zip(&gi).for_each(|(q, d)| *q += d);
                }
                Op::Sub(a, b) => {
                    let n = gi.len();
                    acc(&mut g, *a, n).iter_mut().zip(&gi).for_each(|(q, d)| *q += d);
                    acc(&mut g, *b, n).iter_mut().zip(&gi).for_each(|(q, d)| *q -= d);
                }
                Op::Mul(a, b) => {
                    let n = gi.len();
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let da: Vec<f64> = gi.iter().zip(vb).map(|(d, y)| d * y).collect();
                    let db: Vec<f64> = gi.iter().zip(va).map(|(d, x)| d * x).collect();
                    acc(&mut g, *a, n).iter_mut().zip(&da).for_each(|(q, d)| *q += d);
                    acc(&mut g, *b, n).iter_mut().zip(&db).for_each(|(q, d)| *q += d);
                }
                Op::Scale(a, k) => {
                    acc(&mut g, *a, gi.len())
                        .iter_mut()
                        .zip(&gi)
                        .for_each(|(q, d)| *q += k * d);
                }
                Op::AddConst(a) => {
                    acc(&mut g, *a, gi.len()).iter_mut().zip(&gi).for_each(|(q, d)| *q += d);
                }
                Op::MulConst(a) => {
                    acc(&mut g, *a, gi.len())
                        .iter_mut()
                        .zip(gi.iter().zip(&node.aux))
                        .for_each(|(q, (d, m))| *q += d * m);
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    acc(&mut g, *a, gi.len())
                        .iter_mut()
                        .zip(gi.iter().zip(y))
                        .for_each(|(q, (d, y))| *q += d * y * (1.0 - y));
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    acc(&mut g, *a, gi.len())
                        .iter_mut()
                        .zip(gi.iter().zip(y))
                        .for_each(|(q, (d, y))| *q += d * (1.0 - y * y));
                }
                Op::Relu(a) => {
                    let y = &node.value;
                    acc(&mut g, *a, gi.len())
                        .iter_mut()
                        .zip(gi.iter().zip(y))
                        .for_each(|(q, (d, y))| {
                            if *y > 0.0 {
                                *q += d
                            }
                        });
                }
                Op::Exp(a) => {
                    let y = &node.value;
                    acc(&mut g, *a, gi.len())
                        .iter_mut()
                        .zip(gi.iter().zip(y))
                        .for_each(|(q, (d, y))| *q += d * y);
                }
                Op::Square(a) => {
                    let x = &self.nodes[a.0].value;
                    acc(&mut g, *a, gi.len())
                        .iter_mut()
                        .zip(gi.iter().zip(x))
                        .for_each(|(q, (d, x))| *q += 2.0 * d * x);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.dim(*p);
                        acc(&mut g, *p, n)
                            .iter_mut()
                            .zip(&gi[off..off + n])
                            .for_each(|(q, d)| *q += d);
                        off += n;
                    }
                }
                Op::Slice { x, start } => {
                    let n = self.dim(*x);
                    acc(&mut g, *x, n)[*start..start + gi.len()]
                        .iter_mut()
                        .zip(&gi)
                        .for_each(|(q, d)| *q += d);
                }
                Op::Mean(parts) => {
                    let k = 1.0 / parts.len() as f64;
                    for p in parts {
                        acc(&mut g, *p, gi.len())
                            .iter_mut()
                            .zip(&gi)
                            .for_each(|(q, d)| *q += k * d);
                    }
                }
                Op::Sum(a) => {
                    let d = gi[0];
                    let n = self.dim(*a);
                    acc(&mut g, *a, n).iter_mut().for_each(|q| *q += d);
                }
                Op::Dot(a, b) => {
                    let d = gi[0];
                    let n = self.dim(*a);
                    let (va, vb) = (self.nodes[a.0].value.clone(), self.nodes[b.0].value.clone());
                    acc(&mut g, *a, n).iter_mut().zip(&vb).for_each(|(q, y)| *q += d * y);
                    acc(&mut g, *b, n).iter_mut().zip(&va).for_each(|(q, x)| *q += d * x);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let s = dot(&gi, y);
                    acc(&mut g, *a, gi.len())
                        .iter_mut()
                        .zip(gi.iter().zip(y))
                        .for_each(|(q, (d, y))| *q += y * (d - s));
                }
                Op::LogSoftmax(a) => {
                    let y = &node.value;
                    let s: f64 = gi.iter().sum();
                    acc(&mut g, *a, gi.len())
                        .iter_mut()
                        .zip(gi.iter().zip(y))
                        .for_each(|(q, (d, ly))| *q += d - ly.exp() * s);
                }
                Op::Pick(a, i) => {
                    let n = self.dim(*a);
                    acc(&mut g, *a, n)[*i] += gi[0];
                }
                Op::MixRows { weights, dim } => {
                    let rows = &node.aux;
                    let n = self.dim(*weights);
                    let dw: Vec<f64> = (0..n).map(|j| dot(&gi, &rows[j * dim..(j + 1) * dim])).collect();
                    acc(&mut g, *weights, n).iter_mut().zip(&dw).for_each(|(q, d)| *q += d);
                }
            }
        }
        Ok(())
    }

    pub fn backward(&self, loss: Var, grads: &mut Grads) -> Result<()> {
        self.backward_scaled(loss, 1.0, grads)
    }
}
