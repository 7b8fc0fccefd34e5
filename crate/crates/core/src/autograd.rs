//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every forward pass records onto a fresh [`Tape`]. Parameters live in a
//! [`ParamStore`] and enter the tape as leaves; [`Tape::backward`] returns
//! gradients for every node, from which [`Gradients::param_grad`] picks out
//! parameter gradients. Batches of token sequences are stored as stacked
//! row blocks: a batch of `B` sequences of `S` tokens is a `(B·S)×D`
//! matrix, and the block-aware ops (attention, token mixing, pooling) take
//! the block height explicitly.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Coarse role of a parameter tensor; freeze policies select on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    PatchEmbedding,
    Positional,
    LayerNorm,
    Attention,
    FeedForward,
    Linear,
    Adapter,
    Mixer,
    Head,
    Vocabulary,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Array2<f64>,
    pub group: ParamGroup,
    pub trainable: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>, group: ParamGroup) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            group,
            trainable: true,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Scalar count over the given ids.
    pub fn count(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|id| self.params[id.0].value.len()).sum()
    }

    pub fn count_trainable(&self, ids: &[ParamId]) -> usize {
        ids.iter()
            .filter(|id| self.params[id.0].trainable)
            .map(|id| self.params[id.0].value.len())
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// `a + t` where `t` is tiled over row blocks of height `t.rows` and,
    /// when `t` has one column, broadcast across columns.
    AddBroadcast(Var, Var),
    Gelu(Var),
    Relu(Var),
    Tanh(Var),
    Square(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<f64>,
        inv_std: Array1<f64>,
    },
    Reshape(Var),
    SliceRows(Var, usize),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        block: usize,
        heads: usize,
        probs: Vec<Array2<f64>>,
    },
    BlockLeftMatMul {
        m: Var,
        x: Var,
        block: usize,
    },
    BlockInterleave {
        a: Var,
        a_block: usize,
        b: Var,
        b_block: usize,
    },
    BlockMean {
        x: Var,
        block: usize,
    },
    SumAll(Var),
    MeanAll(Var),
    SoftmaxXent {
        logits: Var,
        labels: Vec<usize>,
        probs: Array2<f64>,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    param_nodes: Vec<Option<Var>>,
}

impl Gradients {
    pub fn grad(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    pub fn param_grad(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.param_nodes
            .get(id.0)
            .copied()
            .flatten()
            .and_then(|v| self.grads[v.0].as_ref())
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Scalar GELU (tanh form), exposed for probes and tests.
pub fn gelu_scalar(x: f64) -> f64 {
    gelu(x)
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
}

fn accumulate(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
    match slot {
        Some(existing) => *existing += &g,
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Inserts a parameter leaf; repeated calls for the same id share a node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if self.param_nodes.len() <= id.0 {
            self.param_nodes.resize(id.0 + 1, None);
        }
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param);
        self.param_nodes[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b).t());
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) - self.value(b);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        self.push(out, Op::Scale(a, c))
    }

    pub fn add_broadcast(&mut self, a: Var, t: Var) -> Var {
        let (rows, cols) = self.value(a).dim();
        let (tr, tc) = self.value(t).dim();
        assert!(tr > 0 && rows % tr == 0, "broadcast rows {tr} do not tile {rows}");
        assert!(tc == cols || tc == 1, "broadcast cols {tc} vs {cols}");
        let mut out = self.value(a).clone();
        let tv = &self.nodes[t.0].value;
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let trow = tv.row(i % tr);
            if tc == 1 {
                let c = trow[0];
                row.mapv_inplace(|x| x + c);
            } else {
                row += &trow;
            }
        }
        self.push(out, Op::AddBroadcast(a, t))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(gelu);
        self.push(out, Op::Gelu(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x * x);
        self.push(out, Op::Square(a))
    }

    /// Row-wise layer normalization with gain and bias (both `1×D`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let d = xv.ncols() as f64;
        let mean = xv.sum_axis(Axis(1)) / d;
        let mut xhat = xv.clone();
        let mut inv_std = Array1::zeros(xv.nrows());
        for (i, mut row) in xhat.rows_mut().into_iter().enumerate() {
            let m = mean[i];
            row.mapv_inplace(|v| v - m);
            let var = row.iter().map(|v| v * v).sum::<f64>() / d;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[i] = is;
            row.mapv_inplace(|v| v * is);
        }
        let g = self.value(gamma).row(0).to_owned();
        let b = self.value(beta).row(0).to_owned();
        let mut out = xhat.clone();
        for mut row in out.rows_mut() {
            row *= &g;
            row += &b;
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Row-major reshape preserving element order.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let v = self.value(a);
        assert_eq!(v.len(), rows * cols, "reshape size mismatch");
        let flat: Vec<f64> = v.iter().copied().collect();
        let out = Array2::from_shape_vec((rows, cols), flat).expect("reshape");
        self.push(out, Op::Reshape(a))
    }

    /// Rows `start..start + len` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(out, Op::SliceRows(a, start))
    }

    /// Multi-head scaled dot-product self-attention applied independently
    /// to each row block of height `block`. `q`, `k`, `v` are already
    /// projected; heads split the columns evenly.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, block: usize, heads: usize, causal: bool) -> Var {
        let (rows, d) = self.value(q).dim();
        assert!(rows % block == 0 && d % heads == 0);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Array2::zeros((rows, d));
        let mut probs = Vec::with_capacity(rows / block * heads);
        for b in 0..rows / block {
            let r = b * block..(b + 1) * block;
            for h in 0..heads {
                let c = h * dh..(h + 1) * dh;
                let qb = self.nodes[q.0].value.slice(s![r.clone(), c.clone()]);
                let kb = self.nodes[k.0].value.slice(s![r.clone(), c.clone()]);
                let vb = self.nodes[v.0].value.slice(s![r.clone(), c.clone()]);
                let mut p = qb.dot(&kb.t()) * scale;
                if causal {
                    for i in 0..block {
                        for j in i + 1..block {
                            p[[i, j]] = f64::NEG_INFINITY;
                        }
                    }
                }
                softmax_rows(&mut p);
                out.slice_mut(s![r.clone(), c]).assign(&p.dot(&vb));
                probs.push(p);
            }
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                block,
                heads,
                probs,
            },
        )
    }

    /// For each row block `X_b` of height `block`, computes `M · X_b`.
    pub fn block_left_matmul(&mut self, m: Var, x: Var, block: usize) -> Var {
        let mv = self.value(m);
        let xv = self.value(x);
        assert_eq!(mv.ncols(), block);
        assert_eq!(xv.nrows() % block, 0);
        let blocks = xv.nrows() / block;
        let out_block = mv.nrows();
        let mut out = Array2::zeros((blocks * out_block, xv.ncols()));
        for b in 0..blocks {
            let xb = xv.slice(s![b * block..(b + 1) * block, ..]);
            out.slice_mut(s![b * out_block..(b + 1) * out_block, ..])
                .assign(&mv.dot(&xb));
        }
        self.push(out, Op::BlockLeftMatMul { m, x, block })
    }

    /// Per block: stacks `a_i` (height `a_block`) above `b_i` (height `b_block`).
    pub fn block_interleave(&mut self, a: Var, a_block: usize, b: Var, b_block: usize) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.ncols(), bv.ncols());
        let blocks = bv.nrows() / b_block;
        assert_eq!(av.nrows(), blocks * a_block);
        let h = a_block + b_block;
        let mut out = Array2::zeros((blocks * h, bv.ncols()));
        for i in 0..blocks {
            out.slice_mut(s![i * h..i * h + a_block, ..])
                .assign(&av.slice(s![i * a_block..(i + 1) * a_block, ..]));
            out.slice_mut(s![i * h + a_block..(i + 1) * h, ..])
                .assign(&bv.slice(s![i * b_block..(i + 1) * b_block, ..]));
        }
        self.push(
            out,
            Op::BlockInterleave {
                a,
                a_block,
                b,
                b_block,
            },
        )
    }

    /// Mean over the rows of each block.
    pub fn block_mean(&mut self, x: Var, block: usize) -> Var {
        let xv = self.value(x);
        let blocks = xv.nrows() / block;
        let mut out = Array2::zeros((blocks, xv.ncols()));
        for b in 0..blocks {
            let m = xv
                .slice(s![b * block..(b + 1) * block, ..])
                .mean_axis(Axis(0))
                .expect("non-empty block");
            out.row_mut(b).assign(&m);
        }
        self.push(out, Op::BlockMean { x, block })
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Array2::from_elem((1, 1), s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.sum() / v.len() as f64;
        self.push(Array2::from_elem((1, 1), m), Op::MeanAll(a))
    }

    /// Mean cross-entropy of row-wise softmax against integer labels.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Var {
        let mut probs = self.value(logits).clone();
        assert_eq!(probs.nrows(), labels.len());
        softmax_rows(&mut probs);
        let n = labels.len() as f64;
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &c)| -(probs[[i, c]].max(1e-300)).ln())
            .sum::<f64>()
            / n;
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    /// Convenience: mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: Array2<f64>) -> Var {
        let t = self.constant(target);
        let d = self.sub(pred, t);
        let sq = self.square(d);
        self.mean_all(sq)
    }

    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let shape = self.value(loss).dim();
        grads[loss.0] = Some(Array2::ones(shape));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients {
            grads,
            param_nodes: self.param_nodes.clone(),
        }
    }

    fn propagate(&self, idx: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let val = |v: Var| -> &Array2<f64> { &self.nodes[v.0].value };
        match &self.nodes[idx].op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                accumulate(&mut grads[a.0], g.dot(&val(*b).t()));
                accumulate(&mut grads[b.0], val(*a).t().dot(g));
            }
            Op::MatMulT(a, b) => {
                accumulate(&mut grads[a.0], g.dot(val(*b)));
                accumulate(&mut grads[b.0], g.t().dot(val(*a)));
            }
            Op::Add(a, b) => {
                accumulate(&mut grads[a.0], g.clone());
                accumulate(&mut grads[b.0], g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(&mut grads[a.0], g.clone());
                accumulate(&mut grads[b.0], -g);
            }
            Op::Mul(a, b) => {
                accumulate(&mut grads[a.0], g * val(*b));
                accumulate(&mut grads[b.0], g * val(*a));
            }
            Op::Scale(a, c) => accumulate(&mut grads[a.0], g * *c),
            Op::AddBroadcast(a, t) => {
                accumulate(&mut grads[a.0], g.clone());
                let (tr, tc) = val(*t).dim();
                let mut gt = Array2::zeros((tr, tc));
                for (i, row) in g.rows().into_iter().enumerate() {
                    if tc == 1 {
                        gt[[i % tr, 0]] += row.sum();
                    } else {
                        let mut dst = gt.row_mut(i % tr);
                        dst += &row;
                    }
                }
                accumulate(&mut grads[t.0], gt);
            }
            Op::Gelu(a) => {
                let mut d = val(*a).mapv(gelu_grad);
                d *= g;
                accumulate(&mut grads[a.0], d);
            }
            Op::Relu(a) => {
                let mut d = val(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                d *= g;
                accumulate(&mut grads[a.0], d);
            }
            Op::Tanh(a) => {
                let mut d = self.nodes[idx].value.mapv(|y| 1.0 - y * y);
                d *= g;
                accumulate(&mut grads[a.0], d);
            }
            Op::Square(a) => accumulate(&mut grads[a.0], g * &(val(*a) * 2.0)),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gam = val(*gamma).row(0).to_owned();
                accumulate(&mut grads[gamma.0], (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                accumulate(&mut grads[beta.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                let d = xhat.ncols() as f64;
                let mut dx = Array2::zeros(xhat.dim());
                Zip::from(dx.rows_mut())
                    .and(g.rows())
                    .and(xhat.rows())
                    .and(inv_std)
                    .for_each(|mut dxr, gr, xr, &is| {
                        let dxhat = &gr * &gam;
                        let m1 = dxhat.sum() / d;
                        let m2 = (&dxhat * &xr).sum() / d;
                        Zip::from(&mut dxr)
                            .and(&dxhat)
                            .and(&xr)
                            .for_each(|o, &dh, &xh| *o = is * (dh - m1 - xh * m2));
                    });
                accumulate(&mut grads[x.0], dx);
            }
            Op::Reshape(a) => {
                let (r, c) = val(*a).dim();
                let flat: Vec<f64> = g.iter().copied().collect();
                accumulate(&mut grads[a.0], Array2::from_shape_vec((r, c), flat).expect("reshape"));
            }
            Op::SliceRows(a, start) => {
                let mut da = Array2::zeros(val(*a).dim());
                da.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                accumulate(&mut grads[a.0], da);
            }
            Op::Attention {
                q,
                k,
                v,
                block,
                heads,
                probs,
            } => {
                let (rows, d) = val(*q).dim();
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut dq = Array2::zeros((rows, d));
                let mut dk = Array2::zeros((rows, d));
                let mut dv = Array2::zeros((rows, d));
                for b in 0..rows / block {
                    let r = b * block..(b + 1) * block;
                    for h in 0..*heads {
                        let c = h * dh..(h + 1) * dh;
                        let p = &probs[b * heads + h];
                        let go = g.slice(s![r.clone(), c.clone()]);
                        let qb = val(*q).slice(s![r.clone(), c.clone()]);
                        let kb = val(*k).slice(s![r.clone(), c.clone()]);
                        let vb = val(*v).slice(s![r.clone(), c.clone()]);
                        dv.slice_mut(s![r.clone(), c.clone()]).assign(&p.t().dot(&go));
                        let dp = go.dot(&vb.t());
                        let mut ds = p * &dp;
                        for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                            let dot: f64 = row.sum();
                            Zip::from(&mut row).and(&prow).for_each(|x, &pv| *x -= pv * dot);
                        }
                        ds *= scale;
                        dq.slice_mut(s![r.clone(), c.clone()]).assign(&ds.dot(&kb));
                        dk.slice_mut(s![r.clone(), c]).assign(&ds.t().dot(&qb));
                    }
                }
                accumulate(&mut grads[q.0], dq);
                accumulate(&mut grads[k.0], dk);
                accumulate(&mut grads[v.0], dv);
            }
            Op::BlockLeftMatMul { m, x, block } => {
                let mv = val(*m);
                let xv = val(*x);
                let out_block = mv.nrows();
                let blocks = xv.nrows() / block;
                let mut dm = Array2::zeros(mv.dim());
                let mut dx = Array2::zeros(xv.dim());
                for b in 0..blocks {
                    let gb = g.slice(s![b * out_block..(b + 1) * out_block, ..]);
                    let xb = xv.slice(s![b * block..(b + 1) * block, ..]);
                    dm += &gb.dot(&xb.t());
                    dx.slice_mut(s![b * block..(b + 1) * block, ..])
                        .assign(&mv.t().dot(&gb));
                }
                accumulate(&mut grads[m.0], dm);
                accumulate(&mut grads[x.0], dx);
            }
            Op::BlockInterleave {
                a,
                a_block,
                b,
                b_block,
            } => {
                let h = a_block + b_block;
                let blocks = g.nrows() / h;
                let mut da = Array2::zeros(val(*a).dim());
                let mut db = Array2::zeros(val(*b).dim());
                for i in 0..blocks {
                    da.slice_mut(s![i * a_block..(i + 1) * a_block, ..])
                        .assign(&g.slice(s![i * h..i * h + a_block, ..]));
                    db.slice_mut(s![i * b_block..(i + 1) * b_block, ..])
                        .assign(&g.slice(s![i * h + a_block..(i + 1) * h, ..]));
                }
                accumulate(&mut grads[a.0], da);
                accumulate(&mut grads[b.0], db);
            }
            Op::BlockMean { x, block } => {
                let xv = val(*x);
                let mut dx = Array2::zeros(xv.dim());
                let inv = 1.0 / *block as f64;
                for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
                    row.assign(&(&g.row(i / block) * inv));
                }
                accumulate(&mut grads[x.0], dx);
            }
            Op::SumAll(a) => {
                let c = g[[0, 0]];
                accumulate(&mut grads[a.0], Array2::from_elem(val(*a).dim(), c));
            }
            Op::MeanAll(a) => {
                let v = val(*a);
                let c = g[[0, 0]] / v.len() as f64;
                accumulate(&mut grads[a.0], Array2::from_elem(v.dim(), c));
            }
            Op::SoftmaxXent {
                logits,
                labels,
                probs,
            } => {
                let n = labels.len() as f64;
                let mut d = probs.clone();
                for (i, &c) in labels.iter().enumerate() {
                    d[[i, c]] -= 1.0;
                }
                d *= g[[0, 0]] / n;
                accumulate(&mut grads[logits.0], d);
            }
        }
    }
}

/// Adam with bias correction. Only parameters flagged trainable are touched,
/// so frozen tensors stay bit-identical across steps.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Option<Array2<f64>>>,
    v: Vec<Option<Array2<f64>>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.t += 1;
        if self.m.len() < store.len() {
            self.m.resize(store.len(), None);
            self.v.resize(store.len(), None);
        }
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for id in store.ids().collect::<Vec<_>>() {
            if !store.get(id).trainable {
                continue;
            }
            let Some(g) = grads.param_grad(id) else { continue };
            let m = self.m[id.0].get_or_insert_with(|| Array2::zeros(g.dim()));
            let v = self.v[id.0].get_or_insert_with(|| Array2::zeros(g.dim()));
            let (b1, b2) = (self.beta1, self.beta2);
            Zip::from(&mut *m).and(&mut *v).and(g).for_each(|m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
            });
            let (lr, eps) = (self.lr, self.eps);
            Zip::from(&mut store.get_mut(id).value)
                .and(&*m)
                .and(&*v)
                .for_each(|w, &m, &v| *w -= lr * (m / bc1) / ((v / bc2).sqrt() + eps));
        }
    }
}

/// Dense row-major copy of a view, used to turn slices into tape constants.
pub fn owned(view: ArrayView2<'_, f64>) -> Array2<f64> {
    view.to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    /// Central differences of `f` with respect to every entry of every
    /// parameter, compared against the tape gradient.
    fn check_grads(store: &mut ParamStore, f: &dyn Fn(&mut Tape, &ParamStore) -> Var) {
        let mut tape = Tape::new();
        let loss = f(&mut tape, store);
        let grads = tape.backward(loss);
        for id in store.ids().collect::<Vec<_>>() {
            let analytic = grads.param_grad(id).cloned().unwrap();
            let shape = store.value(id).dim();
            for i in 0..shape.0 {
                for j in 0..shape.1 {
                    let orig = store.value(id)[[i, j]];
                    let h = 1e-5 * orig.abs().max(1.0);
                    store.get_mut(id).value[[i, j]] = orig + h;
                    let mut t1 = Tape::new();
                    let l1 = f(&mut t1, store);
                    let up = t1.value(l1)[[0, 0]];
                    store.get_mut(id).value[[i, j]] = orig - h;
                    let mut t2 = Tape::new();
                    let l2 = f(&mut t2, store);
                    let down = t2.value(l2)[[0, 0]];
                    store.get_mut(id).value[[i, j]] = orig;
                    let numeric = (up - down) / (2.0 * h);
                    let a = analytic[[i, j]];
                    let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                    assert!(err < 1e-4, "{} [{i},{j}]: analytic {a} numeric {numeric}", store.get(id).name);
                }
            }
        }
    }

    #[test]
    fn attention_and_layernorm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let x = store.add("x", rand_mat(&mut rng, 6, 4), ParamGroup::Linear);
        let wq = store.add("wq", rand_mat(&mut rng, 4, 4), ParamGroup::Attention);
        let wk = store.add("wk", rand_mat(&mut rng, 4, 4), ParamGroup::Attention);
        let wv = store.add("wv", rand_mat(&mut rng, 4, 4), ParamGroup::Attention);
        let g = store.add("g", rand_mat(&mut rng, 1, 4), ParamGroup::LayerNorm);
        let b = store.add("b", rand_mat(&mut rng, 1, 4), ParamGroup::LayerNorm);
        let probe = rand_mat(&mut rng, 6, 4);
        for causal in [false, true] {
            let probe = probe.clone();
            check_grads(&mut store, &move |t, s| {
                let xv = t.param(s, x);
                let gv = t.param(s, g);
                let bv = t.param(s, b);
                let n = t.layer_norm(xv, gv, bv);
                let q = {
                    let w = t.param(s, wq);
                    t.matmul(n, w)
                };
                let k = {
                    let w = t.param(s, wk);
                    t.matmul(n, w)
                };
                let v = {
                    let w = t.param(s, wv);
                    t.matmul(n, w)
                };
                let a = t.attention(q, k, v, 3, 2, causal);
                let a = t.gelu(a);
                let p = t.constant(probe.clone());
                let m = t.mul(a, p);
                t.sum_all(m)
            });
        }
    }

    #[test]
    fn block_ops_and_xent_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let a = store.add("a", rand_mat(&mut rng, 4, 3), ParamGroup::Linear);
        let b = store.add("b", rand_mat(&mut rng, 6, 3), ParamGroup::Linear);
        let m = store.add("m", rand_mat(&mut rng, 2, 5), ParamGroup::Mixer);
        let bias = store.add("bias", rand_mat(&mut rng, 2, 1), ParamGroup::Mixer);
        let w = store.add("w", rand_mat(&mut rng, 6, 3), ParamGroup::Head);
        check_grads(&mut store, &|t, s| {
            let av = t.param(s, a);
            let bv = t.param(s, b);
            let x = t.block_interleave(av, 2, bv, 3);
            let mv = t.param(s, m);
            let y = t.block_left_matmul(mv, x, 5);
            let bb = t.param(s, bias);
            let y = t.add_broadcast(y, bb);
            let y = t.tanh(y);
            let r = t.reshape(y, 2, 6);
            let wv = t.param(s, w);
            let logits = t.matmul(r, wv);
            let pooled = t.block_mean(y, 2);
            let sq = t.square(pooled);
            let extra = t.mean_all(sq);
            let xe = t.softmax_xent(logits, &[1, 2]);
            t.add(xe, extra)
        });
    }

    #[test]
    fn add_broadcast_tiles_blocks() {
        let mut t = Tape::new();
        let a = t.constant(Array2::zeros((4, 2)));
        let p = t.constant(array![[1.0, 2.0], [3.0, 4.0]]);
        let y = t.add_broadcast(a, p);
        assert_eq!(t.value(y), &array![[1.0, 2.0], [3.0, 4.0], [1.0, 2.0], [3.0, 4.0]]);
    }

    #[test]
    fn adam_skips_frozen() {
        let mut store = ParamStore::new();
        let a = store.add("a", array![[1.0, 2.0]], ParamGroup::Linear);
        let b = store.add("b", array![[3.0, 4.0]], ParamGroup::LayerNorm);
        store.get_mut(a).trainable = false;
        let before = store.value(a).clone();
        let mut adam = Adam::new(0.1);
        for _ in 0..5 {
            let mut t = Tape::new();
            let av = t.param(&store, a);
            let bv = t.param(&store, b);
            let s = t.mul(av, bv);
            let l = t.sum_all(s);
            let g = t.backward(l);
            adam.step(&mut store, &g);
        }
        assert_eq!(store.value(a), &before);
        assert!(store.value(b)[[0, 0]] < 3.0);
    }
}
