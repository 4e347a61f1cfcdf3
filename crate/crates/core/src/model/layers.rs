//! Parameterised building blocks. Each block owns [`ParamId`]s into a
//! [`ParamStore`] and applies itself on a tape through a [`Bound`] view.

use rand_chacha::ChaCha8Rng;

use super::params::{linear_bound, uniform, Bound, ParamId, ParamStore};
use crate::diffcore::{nn, DeformLayout, Tape, Tensor, Var};
use crate::error::Result;

pub(crate) const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d_in: usize, d_out: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), uniform(rng, &[d_in, d_out], linear_bound(d_in)));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[d_out]));
        Linear { weight, bias }
    }

    /// Weight and bias start at zero.
    pub fn zeros(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), Tensor::zeros(&[d_in, d_out]));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[d_out]));
        Linear { weight, bias }
    }

    pub fn apply(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        nn::linear(tape, x, p.var(self.weight), p.var(self.bias))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), Tensor::ones(&[d]));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[d]));
        LayerNorm { gain, bias }
    }

    pub fn apply(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        tape.layer_norm(x, p.var(self.gain), p.var(self.bias), LN_EPS)
    }
}

/// Two-layer GELU feed-forward block.
#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize, d_ffn: usize) -> Self {
        FeedForward {
            up: Linear::new(store, rng, &format!("{name}.up"), d, d_ffn),
            down: Linear::new(store, rng, &format!("{name}.down"), d_ffn, d),
        }
    }

    pub fn apply(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let h = self.up.apply(tape, p, x)?;
        let h = tape.gelu(h);
        self.down.apply(tape, p, h)
    }
}

/// Multi-scale deformable attention over a stack of temporal levels.
#[derive(Clone, Debug)]
pub struct DeformAttn {
    pub offsets: Linear,
    pub weights: Linear,
    pub value: Linear,
    pub out: Linear,
    pub heads: usize,
    pub levels: usize,
    pub points: usize,
}

impl DeformAttn {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d: usize,
        heads: usize,
        levels: usize,
        points: usize,
    ) -> Self {
        let slots = heads * levels * points;
        DeformAttn {
            offsets: Linear::zeros(store, &format!("{name}.offsets"), d, slots),
            weights: Linear::new(store, rng, &format!("{name}.weights"), d, slots),
            value: Linear::new(store, rng, &format!("{name}.value"), d, d),
            out: Linear::new(store, rng, &format!("{name}.out"), d, d),
            heads,
            levels,
            points,
        }
    }

    /// `query: [n, d]`; `reference: [n, 1]` normalised to `[0, 1]`;
    /// `memory: [sum T_l, d]` with the levels stacked as in `layout`.
    ///
    /// Slot `(h, l, k)` of query `q` samples level `l` at
    /// `reference[q] * (T_l - 1) + offset[q, slot]`.
    pub fn apply(
        &self,
        tape: &mut Tape,
        p: &Bound,
        query: Var,
        reference: Var,
        memory: Var,
        layout: &DeformLayout,
    ) -> Result<Var> {
        let n = tape.shape(query)[0];
        let slots = layout.slots();
        let offsets = self.offsets.apply(tape, p, query)?;

        let mut span = vec![0.0; slots];
        for h in 0..layout.heads {
            for l in 0..layout.levels() {
                for k in 0..layout.points {
                    span[layout.slot(h, l, k)] = layout.level_sizes[l].saturating_sub(1) as f64;
                }
            }
        }
        let span = tape.constant(Tensor::matrix(1, slots, span)?);
        let base = tape.matmul(reference, span)?;
        let locs = tape.add(base, offsets)?;

        let logits = self.weights.apply(tape, p, query)?;
        let per_head = tape.reshape(logits, &[n * layout.heads, layout.levels() * layout.points])?;
        let attn = tape.softmax(per_head, 1)?;
        let attn = tape.reshape(attn, &[n, slots])?;

        let values = self.value.apply(tape, p, memory)?;
        let sampled = tape.deform_sample(values, locs, attn, layout)?;
        self.out.apply(tape, p, sampled)
    }
}

/// Dense multi-head attention.
#[derive(Clone, Debug)]
pub struct SelfAttn {
    pub q: Linear,
    /// Keys carry no bias: softmax is invariant to it, so it would never
    /// receive gradient.
    pub k: ParamId,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl SelfAttn {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize, heads: usize) -> Self {
        SelfAttn {
            q: Linear::new(store, rng, &format!("{name}.q"), d, d),
            k: store.add(format!("{name}.k.weight"), uniform(rng, &[d, d], linear_bound(d))),
            v: Linear::new(store, rng, &format!("{name}.v"), d, d),
            out: Linear::new(store, rng, &format!("{name}.out"), d, d),
            heads,
        }
    }

    /// Queries and keys come from `qk`, values from `x`; both `[n, d]`.
    pub fn apply(&self, tape: &mut Tape, p: &Bound, qk: Var, x: Var) -> Result<Var> {
        let d = tape.shape(x)[1];
        let dh = d / self.heads;
        let q = self.q.apply(tape, p, qk)?;
        let k = tape.matmul(qk, p.var(self.k))?;
        let v = self.v.apply(tape, p, x)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.narrow(q, 1, h * dh, dh)?;
            let kh = tape.narrow(k, 1, h * dh, dh)?;
            let vh = tape.narrow(v, 1, h * dh, dh)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax(scores, 1)?;
            heads.push(tape.matmul(attn, vh)?);
        }
        let joined = tape.concat(&heads, 1)?;
        self.out.apply(tape, p, joined)
    }
}

/// `[T, d]` sinusoidal position table.
pub fn sinusoidal_positions(t: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; t * d];
    for pos in 0..t {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::from_parts(vec![t, d], data)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn layout(sizes: Vec<usize>, m: usize, k: usize) -> DeformLayout {
        DeformLayout::new(sizes, m, k)
    }

    #[test]
    fn one_hot_attention_at_grid_point_picks_one_value() {
        // M=1, L=1, K=2; weight logits push all mass onto point 1
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = 2;
        let attn = DeformAttn::new(&mut store, &mut rng, "a", d, 1, 1, 2);
        *store.get_mut(attn.weights.weight) = Tensor::zeros(&[d, 2]);
        *store.get_mut(attn.weights.bias) = Tensor::vector(vec![-200.0, 200.0]);
        *store.get_mut(attn.value.weight) = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let out_w = store.get(attn.out.weight).clone();

        let mem = Tensor::matrix(5, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]).unwrap();
        let mut t = Tape::new();
        let p = store.bind(&mut t);
        let q = t.constant(Tensor::matrix(1, 2, vec![0.3, -0.1]).unwrap());
        let r = t.constant(Tensor::matrix(1, 1, vec![0.5]).unwrap());
        let m = t.constant(mem);
        let y = attn.apply(&mut t, &p, q, r, m, &layout(vec![5], 1, 2)).unwrap();
        // reference 0.5 * 4 = row 2 = [5, 6]
        let expect: Vec<f64> = (0..2).map(|j| 5.0 * out_w.data()[j] + 6.0 * out_w.data()[2 + j]).collect();
        let got = t.value(y).data();
        assert!((got[0] - expect[0]).abs() < 1e-12 && (got[1] - expect[1]).abs() < 1e-12);
    }

    #[test]
    fn zero_values_give_zero_output() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let attn = DeformAttn::new(&mut store, &mut rng, "a", 4, 2, 2, 2);
        *store.get_mut(attn.value.weight) = Tensor::zeros(&[4, 4]);
        let mut t = Tape::new();
        let p = store.bind(&mut t);
        let q = t.constant(uniform(&mut rng, &[3, 4], 2.0));
        let r = t.constant(Tensor::matrix(3, 1, vec![0.1, 0.5, 0.9]).unwrap());
        let m = t.constant(uniform(&mut rng, &[6, 4], 1.0));
        let y = attn.apply(&mut t, &p, q, r, m, &layout(vec![4, 2], 2, 2)).unwrap();
        assert!(t.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_head_matches_scalar_formula() {
        // M=1, L=1, K=2 with non-zero offsets
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 3;
        let attn = DeformAttn::new(&mut store, &mut rng, "a", d, 1, 1, 2);
        *store.get_mut(attn.offsets.weight) = uniform(&mut rng, &[d, 2], 1.0);
        *store.get_mut(attn.offsets.bias) = Tensor::vector(vec![0.37, -0.81]);
        let mem = uniform(&mut rng, &[6, d], 1.0);
        let qv = uniform(&mut rng, &[1, d], 1.0);
        let rv = 0.43;

        let mut t = Tape::new();
        let p = store.bind(&mut t);
        let q = t.constant(qv.clone());
        let r = t.constant(Tensor::matrix(1, 1, vec![rv]).unwrap());
        let m = t.constant(mem.clone());
        let y = attn.apply(&mut t, &p, q, r, m, &layout(vec![6], 1, 2)).unwrap();

        let lin = |w: &Tensor, b: &Tensor, x: &[f64]| -> Vec<f64> {
            let (din, dout) = (w.rows(), w.cols());
            (0..dout)
                .map(|j| b.data()[j] + (0..din).map(|i| x[i] * w.data()[i * dout + j]).sum::<f64>())
                .collect()
        };
        let g = |id| store.get(id);
        let off = lin(g(attn.offsets.weight), g(attn.offsets.bias), qv.data());
        let logit = lin(g(attn.weights.weight), g(attn.weights.bias), qv.data());
        let z = logit[0].exp() + logit[1].exp();
        let w = [logit[0].exp() / z, logit[1].exp() / z];
        let mut acc = vec![0.0; d];
        for k in 0..2 {
            let pos = rv * 5.0 + off[k];
            if !(0.0..=5.0).contains(&pos) {
                continue;
            }
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(5);
            let f = pos - i0 as f64;
            let r0 = lin(g(attn.value.weight), g(attn.value.bias), mem.row(i0));
            let r1 = lin(g(attn.value.weight), g(attn.value.bias), mem.row(i1));
            for c in 0..d {
                acc[c] += w[k] * ((1.0 - f) * r0[c] + f * r1[c]);
            }
        }
        let expect = lin(g(attn.out.weight), g(attn.out.bias), &acc);
        for (a, b) in t.value(y).data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn sinusoid_table_shape_and_first_row() {
        let pe = sinusoidal_positions(4, 6);
        assert_eq!(pe.shape(), &[4, 6]);
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!((pe.row(1)[0] - 1f64.sin()).abs() < 1e-15);
    }
}
