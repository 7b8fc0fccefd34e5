//! Small next-token pretraining run that produces a checkpoint for the
//! `llm` variant when no external weights are available.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backbone::{normal_matrix, Backbone};
use super::variant::{FreezePolicy, VariantKind, VariantSpec};
use crate::autograd::{Adam, ParamGroup, ParamStore, Tape};
use crate::error::{config, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub vocab: usize,
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    pub seq_len: usize,
    /// Rows of the saved positional table.
    pub positions: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            vocab: 64,
            width: 32,
            depth: 2,
            heads: 4,
            seq_len: 32,
            positions: 128,
            steps: 300,
            batch: 8,
            lr: 3e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub uniform_loss: f64,
}

/// Sparse Markov chain: each token has three preferred successors.
struct Language {
    next: Vec<[usize; 3]>,
}

impl Language {
    fn new(vocab: usize, rng: &mut impl Rng) -> Self {
        let next = (0..vocab)
            .map(|_| [rng.random_range(0..vocab), rng.random_range(0..vocab), rng.random_range(0..vocab)])
            .collect();
        Self { next }
    }

    fn sample(&self, len: usize, rng: &mut impl Rng) -> Vec<usize> {
        let mut t = rng.random_range(0..self.next.len());
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(t);
            let u: f64 = rng.random();
            t = match u {
                u if u < 0.6 => self.next[t][0],
                u if u < 0.85 => self.next[t][1],
                u if u < 0.95 => self.next[t][2],
                _ => rng.random_range(0..self.next.len()),
            };
        }
        out
    }
}

/// Trains a causal transformer with tied input/output embeddings and writes
/// its checkpoint (including the `wte` vocabulary table) to `out`.
pub fn pretrain_checkpoint(cfg: &PretrainConfig, out: &Path) -> Result<PretrainReport> {
    if cfg.vocab < 2 || cfg.seq_len < 2 || cfg.positions < cfg.seq_len || cfg.steps == 0 || cfg.batch == 0 {
        return config("pretraining needs vocab ≥ 2, seq_len ≥ 2, positions ≥ seq_len and non-zero steps/batch");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lang = Language::new(cfg.vocab, &mut rng);
    let mut store = ParamStore::new();
    let wte = store.add("wte", normal_matrix(cfg.vocab, cfg.width, 0.1, &mut rng), ParamGroup::Vocabulary);
    let mut spec = VariantSpec::new(VariantKind::Random)
        .with_depth(cfg.depth)
        .with_heads(cfg.heads)
        .with_policy(FreezePolicy::None);
    spec.max_positions = Some(cfg.positions);
    let backbone = Backbone::build(&mut store, &spec, cfg.width, cfg.seq_len - 1, &mut rng)?;
    let s = cfg.seq_len - 1;
    let mut adam = Adam::new(cfg.lr);
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let seqs: Vec<Vec<usize>> = (0..cfg.batch).map(|_| lang.sample(cfg.seq_len, &mut rng)).collect();
        let inputs: Vec<usize> = seqs.iter().flat_map(|q| q[..s].iter().copied()).collect();
        let labels: Vec<usize> = seqs.iter().flat_map(|q| q[1..].iter().copied()).collect();
        let mut onehot = Array2::zeros((inputs.len(), cfg.vocab));
        for (i, &t) in inputs.iter().enumerate() {
            onehot[[i, t]] = 1.0;
        }
        let mut tape = Tape::new();
        let table = tape.param(&store, wte);
        let oh = tape.constant(onehot);
        let x = tape.matmul(oh, table);
        let h = backbone.forward(&mut tape, &store, x, s);
        let logits = tape.matmul_t(h, table);
        let loss = tape.softmax_xent(logits, &labels);
        losses.push(tape.value(loss)[[0, 0]]);
        let g = tape.backward(loss);
        adam.step(&mut store, &g);
    }
    let mut ckpt = backbone.to_checkpoint(&store);
    ckpt.tensors.insert("wte".into(), store.value(wte).clone());
    ckpt.save(out)?;
    let tail = losses.len().min(20);
    Ok(PretrainReport {
        initial_loss: losses[0],
        final_loss: losses[losses.len() - tail..].iter().sum::<f64>() / tail as f64,
        uniform_loss: (cfg.vocab as f64).ln(),
    })
}
