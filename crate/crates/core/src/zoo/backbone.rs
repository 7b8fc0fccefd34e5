use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::checkpoint::Checkpoint;
use super::variant::{VariantKind, VariantSpec};
use crate::autograd::{ParamGroup, ParamId, ParamStore, Tape, Var};
use crate::error::{config, Error, Result};

pub(crate) fn normal_matrix(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Array2<f64> {
    let n = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_fn((rows, cols), |_| n.sample(rng))
}

pub(crate) fn uniform_matrix(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Array2<f64> {
    let u = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Array2::from_shape_fn((rows, cols), |_| u.sample(rng))
}

fn xavier(d_in: usize, d_out: usize, rng: &mut impl Rng) -> Array2<f64> {
    uniform_matrix(d_in, d_out, (6.0 / (d_in + d_out) as f64).sqrt(), rng)
}

/// Low-rank adapter factors attached to a [`Dense`] layer. `a` is
/// `d_in×r` (seeded), `b` is `r×d_out` (zero at attachment).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoraIds {
    pub a: ParamId,
    pub b: ParamId,
    pub rank: usize,
    pub scale: f64,
}

/// Affine map `x·W + b` with the weight stored `d_in×d_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub lora: Option<LoraIds>,
}

impl Dense {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.w);
        let mut y = tape.matmul(x, w);
        if let Some(l) = self.lora {
            let a = tape.param(store, l.a);
            let b = tape.param(store, l.b);
            let xa = tape.matmul(x, a);
            let xab = tape.matmul(xa, b);
            let delta = tape.scale(xab, l.scale);
            y = tape.add(y, delta);
        }
        let b = tape.param(store, self.b);
        tape.add_broadcast(y, b)
    }

    /// `W + (alpha/r)·A·B` in the stored `d_in×d_out` layout.
    pub fn effective_weight(&self, store: &ParamStore) -> Array2<f64> {
        let mut w = store.value(self.w).clone();
        if let Some(l) = self.lora {
            w += &(store.value(l.a).dot(store.value(l.b)) * l.scale);
        }
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormIds {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormIds {
    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layer_norm(x, g, b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttention {
    pub q: Dense,
    pub k: Dense,
    pub v: Dense,
    pub proj: Dense,
    pub heads: usize,
    pub causal: bool,
}

impl SelfAttention {
    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, block: usize) -> Var {
        let q = self.q.forward(tape, store, x);
        let k = self.k.forward(tape, store, x);
        let v = self.v.forward(tape, store, x);
        let a = tape.attention(q, k, v, block, self.heads, self.causal);
        self.proj.forward(tape, store, a)
    }

    pub fn projections(&self) -> [&Dense; 4] {
        [&self.q, &self.k, &self.v, &self.proj]
    }

    fn projections_mut(&mut self) -> [&mut Dense; 4] {
        [&mut self.q, &mut self.k, &mut self.v, &mut self.proj]
    }
}

/// Pre-norm decoder block: `x + attn(ln1(x))`, then `x + mlp(ln2(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GptBlock {
    pub ln_1: LayerNormIds,
    pub attn: SelfAttention,
    pub ln_2: LayerNormIds,
    pub fc: Dense,
    pub fc_proj: Dense,
}

/// Post-norm encoder layer: `ln1(x + attn(x))`, then `ln2(x + ffn(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub attn: SelfAttention,
    pub ln_1: LayerNormIds,
    pub ff1: Dense,
    pub ff2: Dense,
    pub ln_2: LayerNormIds,
}

#[derive(Debug, Clone, PartialEq)]
enum Layers {
    Identity,
    Linear { dense: Dense, ln: LayerNormIds },
    Att { layers: Vec<(SelfAttention, LayerNormIds)> },
    Trans { layers: Vec<EncoderLayer> },
    Gpt { wpe: ParamId, blocks: Vec<GptBlock>, ln_f: LayerNormIds },
}

/// Token-to-token map `S×D → S×D` standing in for the language model.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub kind: VariantKind,
    pub width: usize,
    pub heads: usize,
    pub depth: usize,
    layers: Layers,
    params: Vec<ParamId>,
}

/// Copies of the token matrices entering and leaving the backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshots {
    pub pre: Array2<f64>,
    pub post: Array2<f64>,
}

/// Canonical tensor names and shapes of the transformer backbone, as used
/// by checkpoints.
pub fn gpt_tensor_shapes(depth: usize, width: usize, positions: usize) -> Vec<(String, (usize, usize), ParamGroup)> {
    let d = width;
    let mut v = vec![("wpe".to_string(), (positions, d), ParamGroup::Positional)];
    for i in 0..depth {
        let p = format!("h.{i}");
        let mut push = |n: &str, shape, g| v.push((format!("{p}.{n}"), shape, g));
        push("ln_1.weight", (1, d), ParamGroup::LayerNorm);
        push("ln_1.bias", (1, d), ParamGroup::LayerNorm);
        for proj in ["q", "k", "v", "proj"] {
            push(&format!("attn.{proj}.weight"), (d, d), ParamGroup::Attention);
            push(&format!("attn.{proj}.bias"), (1, d), ParamGroup::Attention);
        }
        push("ln_2.weight", (1, d), ParamGroup::LayerNorm);
        push("ln_2.bias", (1, d), ParamGroup::LayerNorm);
        push("mlp.fc.weight", (d, 4 * d), ParamGroup::FeedForward);
        push("mlp.fc.bias", (1, 4 * d), ParamGroup::FeedForward);
        push("mlp.proj.weight", (4 * d, d), ParamGroup::FeedForward);
        push("mlp.proj.bias", (1, d), ParamGroup::FeedForward);
    }
    v.push(("ln_f.weight".into(), (1, d), ParamGroup::LayerNorm));
    v.push(("ln_f.bias".into(), (1, d), ParamGroup::LayerNorm));
    v
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    ids: Vec<ParamId>,
}

impl Builder<'_> {
    fn add(&mut self, name: String, value: Array2<f64>, group: ParamGroup) -> ParamId {
        let id = self.store.add(name, value, group);
        self.ids.push(id);
        id
    }

    fn dense(&mut self, name: &str, w: Array2<f64>, group: ParamGroup) -> Dense {
        let d_out = w.ncols();
        Dense {
            w: self.add(format!("{name}.weight"), w, group),
            b: self.add(format!("{name}.bias"), Array2::zeros((1, d_out)), group),
            lora: None,
        }
    }

    fn ln(&mut self, name: &str, d: usize) -> LayerNormIds {
        LayerNormIds {
            gamma: self.add(format!("{name}.weight"), Array2::ones((1, d)), ParamGroup::LayerNorm),
            beta: self.add(format!("{name}.bias"), Array2::zeros((1, d)), ParamGroup::LayerNorm),
        }
    }

    fn attention(&mut self, name: &str, d: usize, heads: usize, causal: bool, rng: &mut impl Rng) -> SelfAttention {
        let mut mk = |n: &str, rng: &mut _| self.dense(&format!("{name}.{n}"), xavier(d, d, rng), ParamGroup::Attention);
        SelfAttention {
            q: mk("q", rng),
            k: mk("k", rng),
            v: mk("v", rng),
            proj: mk("proj", rng),
            heads,
            causal,
        }
    }
}

/// Hands out tensors in canonical order while registering them.
struct Feed<'s> {
    shapes: &'s [(String, (usize, usize), ParamGroup)],
    values: std::vec::IntoIter<Array2<f64>>,
    idx: usize,
}

impl Feed<'_> {
    fn next(&mut self, bld: &mut Builder) -> ParamId {
        let (name, _, group) = &self.shapes[self.idx];
        self.idx += 1;
        bld.add(name.clone(), self.values.next().expect("shape list"), *group)
    }

    fn dense(&mut self, bld: &mut Builder) -> Dense {
        Dense {
            w: self.next(bld),
            b: self.next(bld),
            lora: None,
        }
    }

    fn ln(&mut self, bld: &mut Builder) -> LayerNormIds {
        LayerNormIds {
            gamma: self.next(bld),
            beta: self.next(bld),
        }
    }
}

impl Backbone {
    /// Registers the backbone's parameters in `store`. `seq_len` is the
    /// token count the backbone will see.
    pub fn build(
        store: &mut ParamStore,
        spec: &VariantSpec,
        width: usize,
        seq_len: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        spec.validate(width)?;
        let d = width;
        let heads = spec.effective_heads(d);
        let mut bld = Builder { store, ids: Vec::new() };
        let (layers, depth) = match spec.kind {
            VariantKind::Nollm => (Layers::Identity, 0),
            VariantKind::Linear => {
                let dense = bld.dense("linear", xavier(d, d, rng), ParamGroup::Linear);
                let ln = bld.ln("linear.ln", d);
                (Layers::Linear { dense, ln }, 0)
            }
            VariantKind::Att => {
                let depth = spec.effective_depth();
                let layers = (0..depth)
                    .map(|i| {
                        let a = bld.attention(&format!("att.{i}"), d, heads, false, rng);
                        let ln = bld.ln(&format!("att.{i}.ln"), d);
                        (a, ln)
                    })
                    .collect();
                (Layers::Att { layers }, depth)
            }
            VariantKind::Trans => {
                let depth = spec.effective_depth();
                let layers = (0..depth)
                    .map(|i| {
                        let p = format!("enc.{i}");
                        let attn = bld.attention(&format!("{p}.attn"), d, heads, false, rng);
                        let ln_1 = bld.ln(&format!("{p}.ln_1"), d);
                        let ff1 = bld.dense(&format!("{p}.ff1"), xavier(d, 4 * d, rng), ParamGroup::FeedForward);
                        let ff2 = bld.dense(&format!("{p}.ff2"), xavier(4 * d, d, rng), ParamGroup::FeedForward);
                        let ln_2 = bld.ln(&format!("{p}.ln_2"), d);
                        EncoderLayer {
                            attn,
                            ln_1,
                            ff1,
                            ff2,
                            ln_2,
                        }
                    })
                    .collect();
                (Layers::Trans { layers }, depth)
            }
            VariantKind::Random | VariantKind::Llm => {
                let ckpt = match (&spec.kind, &spec.checkpoint) {
                    (VariantKind::Llm, Some(path)) => Some(Checkpoint::load(path)?),
                    _ => None,
                };
                let (depth, positions) = match &ckpt {
                    Some(c) => {
                        let depth = c.block_count();
                        if let Some(want) = spec.depth {
                            if want != depth {
                                return config(format!("spec depth {want} but checkpoint has {depth} blocks"));
                            }
                        }
                        let pos = c.tensors.get("wpe").map(|t| t.nrows()).ok_or_else(|| Error::Checkpoint {
                            message: "missing positional table".into(),
                            tensors: vec!["wpe".into()],
                        })?;
                        (depth, pos)
                    }
                    None => (spec.effective_depth(), spec.max_positions.unwrap_or(seq_len)),
                };
                if positions < seq_len {
                    return Err(Error::Checkpoint {
                        message: format!("positional table has {positions} rows, need {seq_len}"),
                        tensors: vec!["wpe".into()],
                    });
                }
                let shapes = gpt_tensor_shapes(depth, d, positions);
                let values = match &ckpt {
                    Some(c) => c.take_validated(&shapes)?,
                    None => shapes
                        .iter()
                        .map(|(name, (r, c), _)| {
                            if name.ends_with(".bias") {
                                Array2::zeros((*r, *c))
                            } else if name.contains("ln_") {
                                Array2::ones((*r, *c))
                            } else if name == "wpe" {
                                normal_matrix(*r, *c, 0.01, rng)
                            } else {
                                normal_matrix(*r, *c, 0.02, rng)
                            }
                        })
                        .collect(),
                };
                let mut feed = Feed {
                    shapes: &shapes,
                    values: values.into_iter(),
                    idx: 0,
                };
                let wpe = feed.next(&mut bld);
                let mut blocks = Vec::with_capacity(depth);
                for _ in 0..depth {
                    let ln_1 = feed.ln(&mut bld);
                    let attn = SelfAttention {
                        q: feed.dense(&mut bld),
                        k: feed.dense(&mut bld),
                        v: feed.dense(&mut bld),
                        proj: feed.dense(&mut bld),
                        heads,
                        causal: true,
                    };
                    let ln_2 = feed.ln(&mut bld);
                    let fc = feed.dense(&mut bld);
                    let fc_proj = feed.dense(&mut bld);
                    blocks.push(GptBlock {
                        ln_1,
                        attn,
                        ln_2,
                        fc,
                        fc_proj,
                    });
                }
                let ln_f = feed.ln(&mut bld);
                (Layers::Gpt { wpe, blocks, ln_f }, depth)
            }
        };
        Ok(Self {
            kind: spec.kind,
            width: d,
            heads,
            depth,
            layers,
            params: bld.ids,
        })
    }

    pub fn param_ids(&self) -> &[ParamId] {
        &self.params
    }

    pub fn attention_layers(&self) -> Vec<&SelfAttention> {
        match &self.layers {
            Layers::Identity | Layers::Linear { .. } => Vec::new(),
            Layers::Att { layers } => layers.iter().map(|(a, _)| a).collect(),
            Layers::Trans { layers } => layers.iter().map(|l| &l.attn).collect(),
            Layers::Gpt { blocks, .. } => blocks.iter().map(|b| &b.attn).collect(),
        }
    }

    fn attention_layers_mut(&mut self) -> Vec<&mut SelfAttention> {
        match &mut self.layers {
            Layers::Identity | Layers::Linear { .. } => Vec::new(),
            Layers::Att { layers } => layers.iter_mut().map(|(a, _)| a).collect(),
            Layers::Trans { layers } => layers.iter_mut().map(|l| &mut l.attn).collect(),
            Layers::Gpt { blocks, .. } => blocks.iter_mut().map(|b| &mut b.attn).collect(),
        }
    }

    /// Attaches rank-`r` adapters to every attention projection. Existing
    /// adapters are kept.
    pub(crate) fn attach_lora(&mut self, store: &mut ParamStore, r: usize, alpha: f64, rng: &mut impl Rng) -> Result<usize> {
        let mut added = Vec::new();
        let mut count = 0;
        for attn in self.attention_layers_mut() {
            for dense in attn.projections_mut() {
                count += 1;
                if dense.lora.is_some() {
                    continue;
                }
                let base = store.get(dense.w).name.trim_end_matches(".weight").to_string();
                let (d_in, d_out) = store.value(dense.w).dim();
                if r > d_in.min(d_out) {
                    return config(format!("LoRA rank {r} exceeds min({d_out}, {d_in})"));
                }
                let a = store.add(
                    format!("{base}.lora_a"),
                    uniform_matrix(d_in, r, 1.0 / (d_in as f64).sqrt(), rng),
                    ParamGroup::Adapter,
                );
                let b = store.add(format!("{base}.lora_b"), Array2::zeros((r, d_out)), ParamGroup::Adapter);
                added.extend([a, b]);
                dense.lora = Some(LoraIds {
                    a,
                    b,
                    rank: r,
                    scale: alpha / r as f64,
                });
            }
        }
        self.params.extend(added);
        Ok(count)
    }

    /// Forward over `(B·S)×D` stacked sequences of `seq_len` tokens each.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, seq_len: usize) -> Var {
        match &self.layers {
            Layers::Identity => x,
            Layers::Linear { dense, ln } => {
                let y = dense.forward(tape, store, x);
                ln.forward(tape, store, y)
            }
            Layers::Att { layers } => {
                let mut h = x;
                for (attn, ln) in layers {
                    let a = attn.forward(tape, store, h, seq_len);
                    let s = tape.add(h, a);
                    h = ln.forward(tape, store, s);
                }
                h
            }
            Layers::Trans { layers } => {
                let mut h = x;
                for l in layers {
                    let a = l.attn.forward(tape, store, h, seq_len);
                    let s = tape.add(h, a);
                    h = l.ln_1.forward(tape, store, s);
                    let f = l.ff1.forward(tape, store, h);
                    let f = tape.gelu(f);
                    let f = l.ff2.forward(tape, store, f);
                    let s = tape.add(h, f);
                    h = l.ln_2.forward(tape, store, s);
                }
                h
            }
            Layers::Gpt { wpe, blocks, ln_f } => {
                let mut pos = tape.param(store, *wpe);
                if tape.value(pos).nrows() != seq_len {
                    pos = tape.slice_rows(pos, 0, seq_len);
                }
                let mut h = tape.add_broadcast(x, pos);
                for b in blocks {
                    let n = b.ln_1.forward(tape, store, h);
                    let a = b.attn.forward(tape, store, n, seq_len);
                    h = tape.add(h, a);
                    let n = b.ln_2.forward(tape, store, h);
                    let f = b.fc.forward(tape, store, n);
                    let f = tape.gelu(f);
                    let f = b.fc_proj.forward(tape, store, f);
                    h = tape.add(h, f);
                }
                ln_f.forward(tape, store, h)
            }
        }
    }

    /// Single-sequence forward on plain values, returning the output and
    /// copies of the tokens before and after the backbone.
    pub fn forward_tokens(&self, store: &ParamStore, tokens: &Array2<f64>) -> Result<(Array2<f64>, Snapshots)> {
        if tokens.ncols() != self.width {
            return Err(Error::Shape(format!(
                "tokens have width {}, backbone expects {}",
                tokens.ncols(),
                self.width
            )));
        }
        if let Layers::Gpt { wpe, .. } = &self.layers {
            let rows = store.value(*wpe).nrows();
            if tokens.nrows() > rows {
                return Err(Error::Shape(format!("{} tokens exceed {rows} positions", tokens.nrows())));
            }
        }
        let mut tape = Tape::new();
        let x = tape.constant(tokens.clone());
        let y = self.forward(&mut tape, store, x, tokens.nrows());
        let post = tape.value(y).clone();
        Ok((
            post.clone(),
            Snapshots {
                pre: tokens.clone(),
                post,
            },
        ))
    }

    /// Weight tensors of the `Linear` variant, for tests and probes.
    pub fn linear_parts(&self) -> Option<(&Dense, &LayerNormIds)> {
        match &self.layers {
            Layers::Linear { dense, ln } => Some((dense, ln)),
            _ => None,
        }
    }

    /// Every parameter, with canonical names, for checkpoint export.
    pub fn to_checkpoint(&self, store: &ParamStore) -> Checkpoint {
        let mut c = Checkpoint::default();
        for &id in &self.params {
            let p = store.get(id);
            c.tensors.insert(p.name.clone(), p.value.clone());
        }
        c
    }
}
