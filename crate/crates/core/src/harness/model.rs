use ndarray::{s, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamGroup, ParamId, ParamStore, Tape, Var};
use crate::error::{config, Error, Result};
use crate::heads::{ClassifyHead, FlattenHead};
use crate::series::{decompose_additive, instance_normalize, patch_count, STD_GUARD};
use crate::zoo::{
    build_variant_into, select_prototypes, Backbone, DecompositionSpec, Mixer, PrototypeBank, TrainableMask, VariantKind,
    VariantSpec,
};

const DEFAULT_BANK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadSpec {
    /// One row of `out` values per (sample, channel).
    Flatten { out: usize },
    /// One row of class scores per sample.
    Classify { classes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub lookback: usize,
    pub patch_len: usize,
    pub stride: usize,
    pub width: usize,
    pub n_vars: usize,
    pub head: HeadSpec,
}

#[derive(Debug, Clone)]
enum Head {
    Flatten(FlattenHead),
    Classify(ClassifyHead),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub trainable: usize,
    pub total: usize,
    pub backbone_trainable: usize,
    pub backbone_total: usize,
}

/// Output of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    /// `(B·V)×out` in the input scale, or `B×C` class scores.
    pub out: Var,
    /// Tokens entering and leaving the backbone (first component).
    pub pre: Var,
    pub post: Var,
}

/// Patch embedding, optional decomposition / prototypes / mixer, backbone
/// and task head, with window-level per-channel normalization around it.
#[derive(Debug, Clone)]
pub struct TsModel {
    pub store: ParamStore,
    pub backbone: Backbone,
    pub backbone_mask: TrainableMask,
    pub shape: ModelShape,
    embeds: Vec<(ParamId, ParamId)>,
    mixer: Option<Mixer>,
    bank: Option<PrototypeBank>,
    k: usize,
    patches: usize,
    seq: usize,
    decomposition: Option<DecompositionSpec>,
    head: Head,
}

impl TsModel {
    pub fn build(shape: ModelShape, variant: &VariantSpec, seed: u64) -> Result<Self> {
        let d = shape.width;
        let patches = patch_count(shape.lookback, shape.patch_len, shape.stride)?;
        let mech = &variant.mechanisms;
        if let Some(dec) = mech.decomposition {
            if dec.kernel % 2 == 0 || dec.kernel > shape.lookback || dec.period == 0 {
                return config(format!(
                    "decomposition kernel {} must be odd and at most {}, period positive",
                    dec.kernel, shape.lookback
                ));
            }
        }
        let bank = match mech.prototypes {
            None => None,
            Some(_) => Some(match (&variant.checkpoint, variant.kind) {
                (Some(dir), VariantKind::Llm) => PrototypeBank::from_checkpoint(dir, d)?,
                _ => PrototypeBank::random(mech.bank_size.unwrap_or(DEFAULT_BANK), d, seed ^ 0x9e37_79b9)?,
            }),
        };
        let k = mech.prototypes.unwrap_or(0);
        if let Some(b) = &bank {
            if k == 0 || k > b.len() {
                return config(format!("cannot select {k} of {} prototypes", b.len()));
            }
        }
        let seq = mech.mixer.map_or(k + patches, |m| m.m);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let components = if mech.decomposition.is_some() { 3 } else { 1 };
        let bound = 1.0 / (shape.patch_len as f64).sqrt();
        let embeds = (0..components)
            .map(|c| {
                let w = Array2::from_shape_fn((shape.patch_len, d), |_| rng.random_range(-bound..=bound));
                (
                    store.add(format!("embed.{c}.weight"), w, ParamGroup::PatchEmbedding),
                    store.add(format!("embed.{c}.bias"), Array2::zeros((1, d)), ParamGroup::PatchEmbedding),
                )
            })
            .collect();
        let (backbone, backbone_mask) = build_variant_into(&mut store, variant, d, seq, &mut rng)?;
        let mixer = match mech.mixer {
            Some(spec) => Some(Mixer::build(&mut store, spec, k, patches, d, &mut rng)?),
            None => None,
        };
        let head = match shape.head {
            HeadSpec::Flatten { out } => Head::Flatten(FlattenHead::build(&mut store, "head", seq, d, out, &mut rng)),
            HeadSpec::Classify { classes } => {
                Head::Classify(ClassifyHead::build(&mut store, seq, shape.n_vars, d, classes, &mut rng)?)
            }
        };
        Ok(Self {
            store,
            backbone,
            backbone_mask,
            shape,
            embeds,
            mixer,
            bank,
            k,
            patches,
            seq,
            decomposition: mech.decomposition,
            head,
        })
    }

    pub fn seq_len(&self) -> usize {
        self.seq
    }

    pub fn bank(&self) -> Option<&PrototypeBank> {
        self.bank.as_ref()
    }

    pub fn param_counts(&self) -> ParamCounts {
        let ids: Vec<ParamId> = self.store.ids().collect();
        ParamCounts {
            trainable: self.store.count_trainable(&ids),
            total: self.store.count(&ids),
            backbone_trainable: self.backbone_mask.trainable,
            backbone_total: self.backbone_mask.total,
        }
    }

    /// `inputs` are `L×V` windows; `observed` marks known cells with 1.
    pub fn forward(&self, tape: &mut Tape, inputs: &[ArrayView2<'_, f64>], observed: Option<&[Array2<f64>]>) -> Result<Forward> {
        let ModelShape {
            lookback: l,
            patch_len: p,
            stride,
            width: d,
            n_vars: v,
            ..
        } = self.shape;
        let b = inputs.len();
        if b == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        if let Some(obs) = observed {
            if obs.len() != b {
                return Err(Error::Shape(format!("{} masks for {b} windows", obs.len())));
            }
        }
        let mut means = Vec::with_capacity(b * v);
        let mut stds = Vec::with_capacity(b * v);
        let mut normed = Vec::with_capacity(b);
        for (i, x) in inputs.iter().enumerate() {
            if x.dim() != (l, v) {
                return Err(Error::Shape(format!("window {:?}, model expects {:?}", x.dim(), (l, v))));
            }
            let mut z = Array2::zeros((l, v));
            for c in 0..v {
                let col = x.column(c);
                let (mean, std) = match observed {
                    None => {
                        let (n, st) = instance_normalize(&col.to_vec());
                        z.column_mut(c).assign(&ndarray::Array1::from(n));
                        (st.mean, if st.guarded { 1.0 } else { st.std })
                    }
                    Some(obs) => {
                        let m = obs[i].column(c);
                        let cnt = m.sum();
                        if cnt == 0.0 {
                            (0.0, 1.0)
                        } else {
                            let mean = col.iter().zip(m).map(|(a, w)| a * w).sum::<f64>() / cnt;
                            let var = col.iter().zip(m).map(|(a, w)| w * (a - mean).powi(2)).sum::<f64>() / cnt;
                            let sd = var.sqrt();
                            let sd = if sd < STD_GUARD { 1.0 } else { sd };
                            for t in 0..l {
                                z[[t, c]] = m[t] * (col[t] - mean) / sd;
                            }
                            (mean, sd)
                        }
                    }
                };
                means.push(mean);
                stds.push(std);
            }
            normed.push(z);
        }
        let comps: Vec<Vec<Array2<f64>>> = match self.decomposition {
            None => vec![normed],
            Some(dec) => {
                let mut parts = vec![Vec::with_capacity(b), Vec::with_capacity(b), Vec::with_capacity(b)];
                for z in &normed {
                    let t = decompose_additive(z.view(), dec.period, dec.kernel)?;
                    parts[0].push(t.trend);
                    parts[1].push(t.seasonal);
                    parts[2].push(t.residual);
                }
                parts
            }
        };

        let s_tok = self.patches;
        let mut total: Option<Var> = None;
        let mut snap = None;
        for (ci, comp) in comps.iter().enumerate() {
            let patches = Array2::from_shape_fn((b * v * s_tok, p), |(r, j)| {
                let t = r % s_tok;
                let c = (r / s_tok) % v;
                let bi = r / (s_tok * v);
                comp[bi][[t * stride + j, c]]
            });
            let (w, bias) = self.embeds[ci];
            let x = tape.constant(patches);
            let w = tape.param(&self.store, w);
            let bias = tape.param(&self.store, bias);
            let e = tape.matmul(x, w);
            let tokens = tape.add_broadcast(e, bias);
            let protos = match &self.bank {
                None => None,
                Some(bank) => {
                    let tv = tape.value(tokens);
                    let mut rows = Array2::zeros((b * v * self.k, d));
                    for blk in 0..b * v {
                        let sel = select_prototypes(&tv.slice(s![blk * s_tok..(blk + 1) * s_tok, ..]).to_owned(), bank, self.k)?;
                        rows.slice_mut(s![blk * self.k..(blk + 1) * self.k, ..]).assign(&sel.prototypes);
                    }
                    Some(tape.constant(rows))
                }
            };
            let input = match (&self.mixer, protos) {
                (Some(mx), pr) => {
                    let pr = pr.unwrap_or_else(|| tape.constant(Array2::zeros((0, d))));
                    mx.forward(tape, &self.store, pr, tokens)
                }
                (None, Some(pr)) => tape.block_interleave(pr, self.k, tokens, s_tok),
                (None, None) => tokens,
            };
            let post = self.backbone.forward(tape, &self.store, input, self.seq);
            if snap.is_none() {
                snap = Some((input, post));
            }
            let out = match &self.head {
                Head::Flatten(h) => h.forward(tape, &self.store, post),
                Head::Classify(h) => h.forward(tape, &self.store, post),
            };
            total = Some(match total {
                None => out,
                Some(t) => tape.add(t, out),
            });
        }
        let mut out = total.expect("at least one component");
        if let Head::Flatten(h) = &self.head {
            let n = h.out;
            let sd = Array2::from_shape_fn((b * v, n), |(r, _)| stds[r]);
            let mu = Array2::from_shape_fn((b * v, n), |(r, _)| means[r]);
            let sd = tape.constant(sd);
            let mu = tape.constant(mu);
            let scaled = tape.mul(out, sd);
            out = tape.add(scaled, mu);
        }
        let (pre, post) = snap.expect("at least one component");
        Ok(Forward { out, pre, post })
    }

    /// Forward on plain values without keeping the tape.
    pub fn predict(&self, inputs: &[ArrayView2<'_, f64>], observed: Option<&[Array2<f64>]>) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, inputs, observed)?;
        Ok(tape.value(f.out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{FreezePolicy, MixerSpec};

    fn shape(head: HeadSpec) -> ModelShape {
        ModelShape {
            lookback: 32,
            patch_len: 8,
            stride: 4,
            width: 8,
            n_vars: 2,
            head,
        }
    }

    fn windows(b: usize, seed: u64) -> Vec<Array2<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..b)
            .map(|_| Array2::from_shape_fn((32, 2), |_| rng.random_range(-2.0..2.0)))
            .collect()
    }

    fn views(w: &[Array2<f64>]) -> Vec<ArrayView2<'_, f64>> {
        w.iter().map(|a| a.view()).collect()
    }

    #[test]
    fn output_shapes() {
        let w = windows(3, 0);
        let m = TsModel::build(shape(HeadSpec::Flatten { out: 5 }), &VariantSpec::new(VariantKind::Trans).with_depth(1), 0).unwrap();
        assert_eq!(m.predict(&views(&w), None).unwrap().dim(), (6, 5));
        let c = TsModel::build(shape(HeadSpec::Classify { classes: 4 }), &VariantSpec::new(VariantKind::Linear), 0).unwrap();
        assert_eq!(c.predict(&views(&w), None).unwrap().dim(), (3, 4));
    }

    #[test]
    fn batch_rows_are_independent() {
        let w = windows(4, 1);
        let m = TsModel::build(shape(HeadSpec::Flatten { out: 3 }), &VariantSpec::new(VariantKind::Att).with_depth(1), 2).unwrap();
        let all = m.predict(&views(&w), None).unwrap();
        let one = m.predict(&views(&w[2..3]), None).unwrap();
        let diff = (&all.slice(s![4..6, ..]) - &one).mapv(f64::abs).sum();
        assert!(diff < 1e-12);
    }

    #[test]
    fn scale_equivariant_output() {
        // window-level normalization makes a shifted and scaled input give
        // the same shift and scale on the output
        let w = windows(2, 3);
        let m = TsModel::build(shape(HeadSpec::Flatten { out: 4 }), &VariantSpec::new(VariantKind::Nollm), 4).unwrap();
        let y = m.predict(&views(&w), None).unwrap();
        let moved: Vec<Array2<f64>> = w.iter().map(|a| a * 3.0 + 7.0).collect();
        let y2 = m.predict(&views(&moved), None).unwrap();
        assert!((&y2 - &(&y * 3.0 + 7.0)).mapv(f64::abs).sum() < 1e-9);
    }

    #[test]
    fn mechanisms_add_parameters() {
        let base = VariantSpec::new(VariantKind::Random).with_depth(1).with_heads(2);
        let sh = shape(HeadSpec::Flatten { out: 4 });
        let plain = TsModel::build(sh, &base, 0).unwrap();
        let mut with_proto = base.clone();
        with_proto.mechanisms.prototypes = Some(3);
        let proto = TsModel::build(sh, &with_proto, 0).unwrap();
        assert_eq!(proto.seq_len(), plain.seq_len() + 3);
        let mut with_mixer = with_proto.clone();
        with_mixer.mechanisms.mixer = Some(MixerSpec {
            m: 4,
            ..MixerSpec::default()
        });
        let mixed = TsModel::build(sh, &with_mixer, 0).unwrap();
        assert_eq!(mixed.seq_len(), 4);
        let mut with_dec = base.clone();
        with_dec.mechanisms.decomposition = Some(DecompositionSpec { period: 8, kernel: 5 });
        let dec = TsModel::build(sh, &with_dec, 0).unwrap();
        assert!(dec.param_counts().total > plain.param_counts().total);
        let w = windows(2, 5);
        for m in [&proto, &mixed, &dec] {
            assert!(m.predict(&views(&w), None).unwrap().iter().all(|x| x.is_finite()));
        }
        let mut mixer_only = base.clone();
        mixer_only.mechanisms.mixer = Some(MixerSpec {
            m: 4,
            ..MixerSpec::default()
        });
        let mo = TsModel::build(sh, &mixer_only, 0).unwrap();
        assert!(mo.param_counts().total > plain.param_counts().total);
        assert!(mo.predict(&views(&w), None).unwrap().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn frozen_backbone_counts() {
        let sh = shape(HeadSpec::Flatten { out: 4 });
        let m = TsModel::build(sh, &VariantSpec::new(VariantKind::Trans).with_depth(1).with_policy(FreezePolicy::FullFreeze), 0).unwrap();
        let c = m.param_counts();
        assert_eq!(c.backbone_trainable, 0);
        assert!(c.trainable < c.total);
        assert_eq!(c.total - c.trainable, c.backbone_total);
    }

    #[test]
    fn masked_cells_do_not_leak() {
        let w = windows(1, 6);
        let m = TsModel::build(shape(HeadSpec::Flatten { out: 32 }), &VariantSpec::new(VariantKind::Linear), 1).unwrap();
        let mut obs = Array2::ones((32, 2));
        obs[[5, 0]] = 0.0;
        obs[[9, 1]] = 0.0;
        let mut changed = w[0].clone();
        changed[[5, 0]] = 1e3;
        changed[[9, 1]] = -1e3;
        let a = m.predict(&[w[0].view()], Some(&[obs.clone()])).unwrap();
        let b = m.predict(&[changed.view()], Some(&[obs])).unwrap();
        assert_eq!(a, b);
    }
}
