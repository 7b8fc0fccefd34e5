use ndarray::Array2;
use rand::Rng;

use super::backbone::uniform_matrix;
use super::variant::{Activation, MixerSpec};
use crate::autograd::{ParamGroup, ParamId, ParamStore, Tape, Var};
use crate::error::{config, Error, Result};

/// Two mixing MLPs: across tokens (`K+S → h → m`), then across features
/// (`D → h₂ → D`).
#[derive(Debug, Clone, PartialEq)]
pub struct Mixer {
    pub spec: MixerSpec,
    pub k: usize,
    pub s: usize,
    pub width: usize,
    /// `h×(K+S)`, `h×1`, `m×h`, `m×1`.
    pub m1: ParamId,
    pub b1: ParamId,
    pub m2: ParamId,
    pub b2: ParamId,
    /// `D×h₂`, `1×h₂`, `h₂×D`, `1×D`.
    pub w3: ParamId,
    pub b3: ParamId,
    pub w4: ParamId,
    pub b4: ParamId,
}

fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    uniform_matrix(rows, cols, (6.0 / (rows + cols) as f64).sqrt(), rng)
}

impl Mixer {
    pub fn build(store: &mut ParamStore, spec: MixerSpec, k: usize, s: usize, width: usize, rng: &mut impl Rng) -> Result<Self> {
        let n = k + s;
        if spec.m == 0 || spec.m > n {
            return config(format!("mixer output count {} must lie in 1..={n}", spec.m));
        }
        if spec.token_hidden == 0 || spec.feature_hidden == Some(0) {
            return config("mixer hidden widths must be positive");
        }
        let h = spec.token_hidden;
        let h2 = spec.feature_hidden.unwrap_or(2 * width);
        let mut add = |name: &str, v: Array2<f64>| store.add(format!("mixer.{name}"), v, ParamGroup::Mixer);
        Ok(Self {
            m1: add("m1", glorot(h, n, rng)),
            b1: add("b1", Array2::zeros((h, 1))),
            m2: add("m2", glorot(spec.m, h, rng)),
            b2: add("b2", Array2::zeros((spec.m, 1))),
            w3: add("w3", glorot(width, h2, rng)),
            b3: add("b3", Array2::zeros((1, h2))),
            w4: add("w4", glorot(h2, width, rng)),
            b4: add("b4", Array2::zeros((1, width))),
            spec,
            k,
            s,
            width,
        })
    }

    pub fn param_ids(&self) -> [ParamId; 8] {
        [self.m1, self.b1, self.m2, self.b2, self.w3, self.b3, self.w4, self.b4]
    }

    fn act(&self, tape: &mut Tape, x: Var) -> Var {
        match self.spec.activation {
            Activation::Gelu => tape.gelu(x),
        }
    }

    /// `prototypes` is `(B·K)×D`, `tokens` is `(B·S)×D`; returns `(B·m)×D`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, prototypes: Var, tokens: Var) -> Var {
        let n = self.k + self.s;
        let x = tape.block_interleave(prototypes, self.k, tokens, self.s);
        let m1 = tape.param(store, self.m1);
        let b1 = tape.param(store, self.b1);
        let m2 = tape.param(store, self.m2);
        let b2 = tape.param(store, self.b2);
        let h = tape.block_left_matmul(m1, x, n);
        let h = tape.add_broadcast(h, b1);
        let h = self.act(tape, h);
        let t = tape.block_left_matmul(m2, h, self.spec.token_hidden);
        let t = tape.add_broadcast(t, b2);
        let w3 = tape.param(store, self.w3);
        let b3 = tape.param(store, self.b3);
        let w4 = tape.param(store, self.w4);
        let b4 = tape.param(store, self.b4);
        let f = tape.matmul(t, w3);
        let f = tape.add_broadcast(f, b3);
        let f = self.act(tape, f);
        let f = tape.matmul(f, w4);
        tape.add_broadcast(f, b4)
    }

    /// Fuses one `K×D` prototype matrix with one `S×D` token matrix into `m×D`.
    pub fn fuse(&self, store: &ParamStore, prototypes: &Array2<f64>, tokens: &Array2<f64>) -> Result<Array2<f64>> {
        if prototypes.ncols() != tokens.ncols() || tokens.ncols() != self.width {
            return Err(Error::Shape(format!(
                "prototype width {} and token width {} must both be {}",
                prototypes.ncols(),
                tokens.ncols(),
                self.width
            )));
        }
        if prototypes.nrows() != self.k || tokens.nrows() != self.s {
            return Err(Error::Shape(format!(
                "expected {}+{} rows, got {}+{}",
                self.k,
                self.s,
                prototypes.nrows(),
                tokens.nrows()
            )));
        }
        let mut tape = Tape::new();
        let p = tape.constant(prototypes.clone());
        let t = tape.constant(tokens.clone());
        let y = self.forward(&mut tape, store, p, t);
        Ok(tape.value(y).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn output_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let mx = Mixer::build(&mut store, MixerSpec::default(), 10, 11, 8, &mut rng).unwrap();
        let y = mx.fuse(&store, &rand_mat(&mut rng, 10, 8), &rand_mat(&mut rng, 11, 8)).unwrap();
        assert_eq!(y.dim(), (16, 8));
        assert!(mx.fuse(&store, &rand_mat(&mut rng, 10, 7), &rand_mat(&mut rng, 11, 8)).is_err());
    }

    #[test]
    fn zero_in_zero_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let mx = Mixer::build(&mut store, MixerSpec::default(), 10, 6, 8, &mut rng).unwrap();
        let y = mx.fuse(&store, &Array2::zeros((10, 8)), &Array2::zeros((6, 8))).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn m_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let spec = MixerSpec { m: 12, ..MixerSpec::default() };
        assert!(Mixer::build(&mut store, spec, 5, 6, 4, &mut rng).is_err());
        assert!(Mixer::build(&mut store, MixerSpec { m: 0, ..spec }, 5, 6, 4, &mut rng).is_err());
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let spec = MixerSpec {
            m: 3,
            token_hidden: 6,
            feature_hidden: Some(5),
            activation: Activation::Gelu,
        };
        let mx = Mixer::build(&mut store, spec, 4, 5, 8, &mut rng).unwrap();
        // non-zero biases so their gradients are exercised away from zero
        for id in [mx.b1, mx.b2, mx.b3, mx.b4] {
            let shape = store.value(id).dim();
            store.get_mut(id).value = rand_mat(&mut rng, shape.0, shape.1) * 0.3;
        }
        let protos = rand_mat(&mut rng, 2 * 4, 8);
        let toks = rand_mat(&mut rng, 2 * 5, 8);
        let target = rand_mat(&mut rng, 2 * 3, 8);
        let loss_of = |store: &ParamStore, tape: &mut Tape| {
            let p = tape.constant(protos.clone());
            let t = tape.constant(toks.clone());
            let y = mx.forward(tape, store, p, t);
            tape.mse(y, target.clone())
        };
        let mut tape = Tape::new();
        let loss = loss_of(&store, &mut tape);
        let grads = tape.backward(loss);
        let eval = |store: &ParamStore| {
            let mut t = Tape::new();
            let l = loss_of(store, &mut t);
            t.value(l)[[0, 0]]
        };
        let mut worst: f64 = 0.0;
        for id in mx.param_ids() {
            let analytic = grads.param_grad(id).unwrap().clone();
            let (r, c) = analytic.dim();
            for i in 0..r {
                for j in 0..c {
                    let theta = store.value(id)[[i, j]];
                    let h = 1e-5 * theta.abs().max(1.0);
                    store.get_mut(id).value[[i, j]] = theta + h;
                    let up = eval(&store);
                    store.get_mut(id).value[[i, j]] = theta - h;
                    let down = eval(&store);
                    store.get_mut(id).value[[i, j]] = theta;
                    let numeric = (up - down) / (2.0 * h);
                    let a = analytic[[i, j]];
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                    worst = worst.max(rel);
                }
            }
        }
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }
}
