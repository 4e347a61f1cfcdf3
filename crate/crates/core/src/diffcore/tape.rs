//! Define-by-run reverse-mode tape.
//!
//! Every primitive appends one node holding its output value. `backward`
//! walks the nodes in reverse insertion order, which is a valid reverse
//! topological order because a node's inputs always exist before it.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use super::tensor::{axis_split, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicUsize = AtomicUsize::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: usize,
    idx: usize,
}

/// Geometry of a multi-level deformable sampling call.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformLayout {
    /// First row of each level inside the stacked value matrix.
    pub level_starts: Vec<usize>,
    /// Number of rows (temporal length) of each level.
    pub level_sizes: Vec<usize>,
    pub heads: usize,
    pub points: usize,
}

impl DeformLayout {
    pub fn new(level_sizes: Vec<usize>, heads: usize, points: usize) -> Self {
        let mut level_starts = Vec::with_capacity(level_sizes.len());
        let mut acc = 0;
        for &s in &level_sizes {
            level_starts.push(acc);
            acc += s;
        }
        DeformLayout {
            level_starts,
            level_sizes,
            heads,
            points,
        }
    }

    pub fn levels(&self) -> usize {
        self.level_sizes.len()
    }

    pub fn total_rows(&self) -> usize {
        self.level_sizes.iter().sum()
    }

    /// Sampling slots per query: heads × levels × points.
    pub fn slots(&self) -> usize {
        self.heads * self.levels() * self.points
    }

    /// Slot index of (head, level, point); head-major.
    pub fn slot(&self, head: usize, level: usize, point: usize) -> usize {
        (head * self.levels() + level) * self.points + point
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Minimum(Var, Var),
    Maximum(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Gelu(Var),
    Exp(Var),
    Ln(Var),
    LogSigmoid(Var),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Sum(Var),
    MaxRows(Var, Vec<usize>),
    Reshape(Var),
    Transpose(Var),
    Concat(Vec<Var>, usize),
    Narrow(Var, usize, usize),
    GatherRows(Var, Vec<usize>),
    Select(Var, Vec<usize>),
    Interp(Var, Var),
    Deform {
        values: Var,
        locs: Var,
        weights: Var,
        layout: DeformLayout,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded forward computation. One backward pass per recording.
pub struct Tape {
    id: usize,
    nodes: Vec<Node>,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss with respect to every `requires_grad` leaf.
#[derive(Debug)]
pub struct Gradients {
    tape: usize,
    grads: HashMap<usize, Tensor>,
}

impl Gradients {
    /// Gradient of a leaf. Leaves the loss does not depend on get zeros.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(&var.idx)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Linear interpolation geometry for one sample position.
///
/// Returns `(i0, i1, frac, slope_lo, slope_hi)` where the value is
/// `(1 - frac) * row[i0] + frac * row[i1]` and the position derivative is
/// `row[slope_hi] - row[slope_lo]`; `None` when out of range.
fn interp_geometry(pos: f64, len: usize) -> Option<(usize, usize, f64, usize, usize)> {
    let top = (len - 1) as f64;
    if !(pos >= 0.0 && pos <= top) {
        return None;
    }
    let i0 = (pos.floor() as usize).min(len - 1);
    let frac = pos - i0 as f64;
    let i1 = (i0 + 1).min(len - 1);
    let (lo, hi) = if len == 1 {
        (0, 0)
    } else if i0 + 1 < len {
        (i0, i0 + 1)
    } else {
        // pos == len-1 exactly: left-sided slope
        (len - 2, len - 1)
    };
    Some((i0, i1, frac, lo, hi))
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, v: Var) -> &Node {
        assert_eq!(v.tape, self.id, "variable used on a foreign tape");
        &self.nodes[v.idx]
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.node(v).value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(
            value.is_finite(),
            "non-finite output from {:?}",
            std::mem::discriminant(&op)
        );
        let idx = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { tape: self.id, idx }
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.node(v).requires_grad)
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(format!("matmul {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::from_parts(va.shape().to_vec(), data);
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "minimum", |x, y| if y < x { y } else { x }, Op::Minimum(a, b))
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "maximum", |x, y| if y > x { y } else { x }, Op::Maximum(a, b))
    }

    /// `x[.., n] + bias[n]`, broadcasting over leading axes.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x);
        let sb = self.shape(bias);
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(Error::shape(format!("add_row {sx:?} + {sb:?}")));
        }
        let n = sb[0];
        let b = self.value(bias).data();
        let data: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[i % n])
            .collect();
        let t = Tensor::from_parts(sx.to_vec(), data);
        let rg = self.rg(&[x, bias]);
        Ok(self.push(t, Op::AddRow(x, bias), rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(x);
        let t = Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|&a| f(a)).collect());
        let rg = self.rg(&[x]);
        self.push(t, op, rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |a| a * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |a| a + c, Op::AddScalar(x))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |a| a.max(0.0), Op::Relu(x))
    }

    /// Tanh approximation of the Gaussian error linear unit.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, |a| gelu_parts(a).0, Op::Gelu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Ln(x))
    }

    /// `ln(sigmoid(x))`, stable for large |x|.
    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, log_sigmoid, Op::LogSigmoid(x))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let out = self.softmax_values(x, axis, false)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Softmax(x, axis), rg))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let out = self.softmax_values(x, axis, true)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::LogSoftmax(x, axis), rg))
    }

    fn softmax_values(&self, x: Var, axis: usize, log: bool) -> Result<Tensor> {
        let v = self.value(x);
        if axis >= v.ndim() {
            return Err(Error::shape(format!("softmax axis {axis} on {:?}", v.shape())));
        }
        let (outer, n, inner) = axis_split(v.shape(), axis);
        let src = v.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for j in 0..inner {
                let at = |i: usize| (o * n + i) * inner + j;
                let max = (0..n).map(|i| src[at(i)]).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = (0..n).map(|i| (src[at(i)] - max).exp()).sum();
                for i in 0..n {
                    out[at(i)] = if log {
                        src[at(i)] - max - z.ln()
                    } else {
                        (src[at(i)] - max).exp() / z
                    };
                }
            }
        }
        Ok(Tensor::from_parts(v.shape().to_vec(), out))
    }

    /// Normalizes over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::invalid("layer_norm eps must be > 0"));
        }
        let sx = self.shape(x).to_vec();
        let d = *sx.last().ok_or_else(|| Error::shape("layer_norm on scalar"))?;
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::shape(format!(
                "layer_norm gain/bias {:?}/{:?} for width {d}",
                self.shape(gain),
                self.shape(bias)
            )));
        }
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = src.len() / d;
        let mut xhat = vec![0.0; src.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..d {
                let xh = (row[c] - mean) * rs;
                xhat[r * d + c] = xh;
                out[r * d + c] = xh * g[c] + b[c];
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            Tensor::from_parts(sx, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Column-wise maximum of a matrix (max-pool over rows): `[m, n] -> [n]`.
    pub fn max_rows(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.ndim() != 2 {
            return Err(Error::shape(format!("max_rows on {:?}", v.shape())));
        }
        let (m, n) = (v.rows(), v.cols());
        let mut arg = vec![0usize; n];
        let mut out = v.row(0).to_vec();
        for r in 1..m {
            for (c, &val) in v.row(r).iter().enumerate() {
                if val > out[c] {
                    out[c] = val;
                    arg[c] = r;
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::vector(out), Op::MaxRows(x, arg), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if shape.iter().product::<usize>() != v.numel() || shape.contains(&0) {
            return Err(Error::shape(format!("reshape {:?} -> {shape:?}", v.shape())));
        }
        let t = v.clone().reshaped(shape.to_vec());
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.ndim() != 2 {
            return Err(Error::shape(format!("transpose on {:?}", v.shape())));
        }
        let t = transpose_raw(v.data(), v.rows(), v.cols());
        let shape = vec![v.cols(), v.rows()];
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(shape, t), Op::Transpose(x), rg))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::shape("concat of nothing"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape(format!("concat axis {axis} on {base:?}")));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            if s.len() != base.len()
                || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::shape(format!("concat {base:?} with {s:?}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let v = self.value(x);
                let n = v.shape()[axis];
                out.extend_from_slice(&v.data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.rg(xs);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Concat(xs.to_vec(), axis), rg))
    }

    /// `len` consecutive entries along `axis` starting at `start`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        let s = v.shape();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(Error::shape(format!("narrow({axis}, {start}, {len}) on {s:?}")));
        }
        let (outer, n, inner) = axis_split(s, axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&v.data()[base..base + len * inner]);
        }
        let mut shape = s.to_vec();
        shape[axis] = len;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Narrow(x, axis, start), rg))
    }

    /// Rows of a matrix by index (repeats allowed): `[m, n] -> [k, n]`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if v.ndim() != 2 || idx.is_empty() {
            return Err(Error::shape(format!("gather_rows on {:?}", v.shape())));
        }
        let (m, n) = (v.rows(), v.cols());
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            if i >= m {
                return Err(Error::shape(format!("row {i} out of {m}")));
            }
            out.extend_from_slice(v.row(i));
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_parts(vec![idx.len(), n], out),
            Op::GatherRows(x, idx.to_vec()),
            rg,
        ))
    }

    /// Entries by flat row-major index: `-> [k]`.
    pub fn select(&mut self, x: Var, flat: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if flat.is_empty() {
            return Err(Error::shape("select of nothing"));
        }
        let mut out = Vec::with_capacity(flat.len());
        for &i in flat {
            out.push(
                *v.data()
                    .get(i)
                    .ok_or_else(|| Error::shape(format!("flat index {i} out of {}", v.numel())))?,
            );
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::vector(out), Op::Select(x, flat.to_vec()), rg))
    }

    /// Linearly interpolated row of `seq` (`[T, d]`) at fractional position
    /// `pos` (scalar). Positions outside `[0, T-1]` give the zero vector.
    pub fn interp_sample(&mut self, seq: Var, pos: Var) -> Result<Var> {
        let s = self.value(seq);
        if s.ndim() != 2 || self.value(pos).numel() != 1 {
            return Err(Error::shape(format!(
                "interp_sample seq {:?} pos {:?}",
                s.shape(),
                self.shape(pos)
            )));
        }
        let p = self.value(pos).data()[0];
        let out = interp_row(s, p);
        let rg = self.rg(&[seq, pos]);
        Ok(self.push(Tensor::vector(out), Op::Interp(seq, pos), rg))
    }

    /// Multi-level deformable sampling.
    ///
    /// `values` is `[sum T_l, d]` (levels stacked), `locs` and `weights` are
    /// `[n, heads*levels*points]`. Output row `q`, channel block of head `h`:
    /// `sum_{l,k} weights[q, slot] * interp(level l, head-h channels, locs[q, slot])`.
    pub fn deform_sample(&mut self, values: Var, locs: Var, weights: Var, layout: &DeformLayout) -> Result<Var> {
        let v = self.value(values);
        let lo = self.value(locs);
        let w = self.value(weights);
        if v.ndim() != 2 || v.rows() != layout.total_rows() || !v.cols().is_multiple_of(layout.heads) {
            return Err(Error::shape(format!(
                "deform_sample values {:?} for levels {:?} heads {}",
                v.shape(),
                layout.level_sizes,
                layout.heads
            )));
        }
        if lo.ndim() != 2 || lo.cols() != layout.slots() || w.shape() != lo.shape() {
            return Err(Error::shape(format!(
                "deform_sample locs {:?} weights {:?}, slots {}",
                lo.shape(),
                w.shape(),
                layout.slots()
            )));
        }
        let d = v.cols();
        let dh = d / layout.heads;
        let n = lo.rows();
        let mut out = vec![0.0; n * d];
        for q in 0..n {
            for h in 0..layout.heads {
                for l in 0..layout.levels() {
                    let start = layout.level_starts[l];
                    let len = layout.level_sizes[l];
                    for k in 0..layout.points {
                        let slot = layout.slot(h, l, k);
                        let Some((i0, i1, frac, _, _)) = interp_geometry(lo.row(q)[slot], len) else {
                            continue;
                        };
                        let wt = w.row(q)[slot];
                        let r0 = &v.row(start + i0)[h * dh..(h + 1) * dh];
                        let r1 = &v.row(start + i1)[h * dh..(h + 1) * dh];
                        let dst = &mut out[q * d + h * dh..q * d + (h + 1) * dh];
                        for c in 0..dh {
                            dst[c] += wt * ((1.0 - frac) * r0[c] + frac * r1[c]);
                        }
                    }
                }
            }
        }
        let rg = self.rg(&[values, locs, weights]);
        Ok(self.push(
            Tensor::from_parts(vec![n, d], out),
            Op::Deform {
                values,
                locs,
                weights,
                layout: layout.clone(),
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar `loss`. Consumes the recording.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::StaleTape);
        }
        if loss.tape != self.id || loss.idx >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        let ls = self.nodes[loss.idx].value.shape();
        if self.nodes[loss.idx].value.numel() != 1 {
            return Err(Error::NonScalarLoss(ls.to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.idx + 1];
        grads[loss.idx] = Some(vec![1.0]);
        let mut leaves = HashMap::new();

        for idx in (0..=loss.idx).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                if matches!(node.op, Op::Leaf) {
                    leaves.insert(idx, Tensor::zeros(node.value.shape()));
                }
                continue;
            };
            self.backprop_node(idx, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                leaves.insert(idx, Tensor::from_parts(node.value.shape().to_vec(), g));
            }
        }
        // leaves recorded after the loss cannot influence it
        for (idx, node) in self.nodes.iter().enumerate().skip(loss.idx + 1) {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                leaves.insert(idx, Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads: leaves,
        })
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.idx].value.data();
        let wants = |v: Var| nodes[v.idx].requires_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.idx].requires_grad {
                return;
            }
            let slot = grads[v.idx].get_or_insert_with(|| vec![0.0; nodes[v.idx].value.numel()]);
            f(slot);
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let sa = nodes[a.idx].value.shape();
                let (m, k) = (sa[0], sa[1]);
                let n = nodes[b.idx].value.shape()[1];
                if wants(*a) {
                    // dA = G B^T
                    let bt = transpose_raw(val(*b), k, n);
                    let da = matmul_raw(g, &bt, m, n, k);
                    acc(*a, &mut |s| add_into(s, &da));
                }
                if wants(*b) {
                    // dB = A^T G
                    let at = transpose_raw(val(*a), m, k);
                    let db = matmul_raw(&at, g, k, m, n);
                    acc(*b, &mut |s| add_into(s, &db));
                }
            }
            Op::Add(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(d, gi)| *d -= gi));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * vb[i];
                    }
                });
                acc(*b, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * va[i];
                    }
                });
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] / vb[i];
                    }
                });
                acc(*b, &mut |s| {
                    for i in 0..s.len() {
                        s[i] -= g[i] * va[i] / (vb[i] * vb[i]);
                    }
                });
            }
            Op::Minimum(a, b) | Op::Maximum(a, b) => {
                let is_min = matches!(node.op, Op::Minimum(..));
                let (va, vb) = (val(*a), val(*b));
                let pick_b = |i: usize| if is_min { vb[i] < va[i] } else { vb[i] > va[i] };
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        if !pick_b(i) {
                            s[i] += g[i];
                        }
                    }
                });
                acc(*b, &mut |s| {
                    for i in 0..s.len() {
                        if pick_b(i) {
                            s[i] += g[i];
                        }
                    }
                });
            }
            Op::AddRow(x, bias) => {
                acc(*x, &mut |s| add_into(s, g));
                acc(*bias, &mut |s| {
                    let n = s.len();
                    for (i, gi) in g.iter().enumerate() {
                        s[i % n] += gi;
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &mut |s| s.iter_mut().zip(g).for_each(|(d, gi)| *d += gi * c)),
            Op::AddScalar(x) => acc(*x, &mut |s| add_into(s, g)),
            Op::Sigmoid(x) => acc(*x, &mut |s| {
                for i in 0..s.len() {
                    s[i] += g[i] * out[i] * (1.0 - out[i]);
                }
            }),
            Op::Tanh(x) => acc(*x, &mut |s| {
                for i in 0..s.len() {
                    s[i] += g[i] * (1.0 - out[i] * out[i]);
                }
            }),
            Op::Gelu(x) => {
                let vx = val(*x);
                acc(*x, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * gelu_parts(vx[i]).1;
                    }
                })
            }
            Op::Relu(x) => {
                let vx = val(*x);
                acc(*x, &mut |s| {
                    for i in 0..s.len() {
                        if vx[i] > 0.0 {
                            s[i] += g[i];
                        }
                    }
                })
            }
            Op::Exp(x) => acc(*x, &mut |s| {
                for i in 0..s.len() {
                    s[i] += g[i] * out[i];
                }
            }),
            Op::Ln(x) => {
                let vx = val(*x);
                acc(*x, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] / vx[i];
                    }
                })
            }
            Op::LogSigmoid(x) => {
                let vx = val(*x);
                acc(*x, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * sigmoid(-vx[i]);
                    }
                })
            }
            Op::Softmax(x, axis) | Op::LogSoftmax(x, axis) => {
                let log = matches!(node.op, Op::LogSoftmax(..));
                let (outer, n, inner) = axis_split(node.value.shape(), *axis);
                acc(*x, &mut |s| {
                    for o in 0..outer {
                        for j in 0..inner {
                            let at = |i: usize| (o * n + i) * inner + j;
                            if log {
                                let gsum: f64 = (0..n).map(|i| g[at(i)]).sum();
                                for i in 0..n {
                                    s[at(i)] += g[at(i)] - out[at(i)].exp() * gsum;
                                }
                            } else {
                                let dot: f64 = (0..n).map(|i| g[at(i)] * out[at(i)]).sum();
                                for i in 0..n {
                                    s[at(i)] += out[at(i)] * (g[at(i)] - dot);
                                }
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gv = val(*gain);
                let d = gv.len();
                let rows = g.len() / d;
                acc(*gain, &mut |s| {
                    for r in 0..rows {
                        for c in 0..d {
                            s[c] += g[r * d + c] * xhat[r * d + c];
                        }
                    }
                });
                acc(*bias, &mut |s| {
                    for r in 0..rows {
                        for c in 0..d {
                            s[c] += g[r * d + c];
                        }
                    }
                });
                acc(*x, &mut |s| {
                    for r in 0..rows {
                        let row = r * d..(r + 1) * d;
                        let dxhat: Vec<f64> = row.clone().map(|i| g[i] * gv[i - r * d]).collect();
                        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dx = dxhat
                            .iter()
                            .zip(&xhat[row.clone()])
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            / d as f64;
                        for c in 0..d {
                            s[r * d + c] += rstd[r] * (dxhat[c] - mean_d - xhat[r * d + c] * mean_dx);
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |s| s.iter_mut().for_each(|d| *d += g[0])),
            Op::MaxRows(x, arg) => {
                let n = arg.len();
                acc(*x, &mut |s| {
                    for (c, &r) in arg.iter().enumerate() {
                        s[r * n + c] += g[c];
                    }
                })
            }
            Op::Reshape(x) => acc(*x, &mut |s| add_into(s, g)),
            Op::Transpose(x) => {
                let sh = node.value.shape();
                let gt = transpose_raw(g, sh[0], sh[1]);
                acc(*x, &mut |s| add_into(s, &gt));
            }
            Op::Concat(xs, axis) => {
                let (outer, total, inner) = axis_split(node.value.shape(), *axis);
                let mut offset = 0;
                for &x in xs {
                    let n = nodes[x.idx].value.shape()[*axis];
                    acc(x, &mut |s| {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * n * inner;
                            for i in 0..n * inner {
                                s[dst + i] += g[src + i];
                            }
                        }
                    });
                    offset += n;
                }
            }
            Op::Narrow(x, axis, start) => {
                let src_shape = nodes[x.idx].value.shape();
                let (outer, n, inner) = axis_split(src_shape, *axis);
                let len = node.value.shape()[*axis];
                acc(*x, &mut |s| {
                    for o in 0..outer {
                        let base = (o * n + start) * inner;
                        for i in 0..len * inner {
                            s[base + i] += g[o * len * inner + i];
                        }
                    }
                })
            }
            Op::GatherRows(x, idx) => {
                let n = node.value.shape()[1];
                acc(*x, &mut |s| {
                    for (k, &r) in idx.iter().enumerate() {
                        for c in 0..n {
                            s[r * n + c] += g[k * n + c];
                        }
                    }
                })
            }
            Op::Select(x, flat) => acc(*x, &mut |s| {
                for (k, &i) in flat.iter().enumerate() {
                    s[i] += g[k];
                }
            }),
            Op::Interp(seq, pos) => {
                let sv = &nodes[seq.idx].value;
                let p = val(*pos)[0];
                if let Some((i0, i1, frac, lo, hi)) = interp_geometry(p, sv.rows()) {
                    let d = sv.cols();
                    acc(*seq, &mut |s| {
                        for c in 0..d {
                            s[i0 * d + c] += g[c] * (1.0 - frac);
                            s[i1 * d + c] += g[c] * frac;
                        }
                    });
                    let slope: f64 = (0..d).map(|c| g[c] * (sv.row(hi)[c] - sv.row(lo)[c])).sum();
                    acc(*pos, &mut |s| s[0] += slope);
                }
            }
            Op::Deform {
                values,
                locs,
                weights,
                layout,
            } => self.backprop_deform(g, *values, *locs, *weights, layout, grads),
        }
    }

    fn backprop_deform(
        &self,
        g: &[f64],
        values: Var,
        locs: Var,
        weights: Var,
        layout: &DeformLayout,
        grads: &mut [Option<Vec<f64>>],
    ) {
        let v = &self.nodes[values.idx].value;
        let lo = &self.nodes[locs.idx].value;
        let w = &self.nodes[weights.idx].value;
        let d = v.cols();
        let dh = d / layout.heads;
        let slots = layout.slots();
        let n = lo.rows();
        let want = |x: Var| self.nodes[x.idx].requires_grad;
        let mut dv = want(values).then(|| vec![0.0; v.numel()]);
        let mut dl = want(locs).then(|| vec![0.0; lo.numel()]);
        let mut dw = want(weights).then(|| vec![0.0; w.numel()]);

        for q in 0..n {
            for h in 0..layout.heads {
                let gq = &g[q * d + h * dh..q * d + (h + 1) * dh];
                for l in 0..layout.levels() {
                    let start = layout.level_starts[l];
                    let len = layout.level_sizes[l];
                    for k in 0..layout.points {
                        let slot = layout.slot(h, l, k);
                        let Some((i0, i1, frac, s_lo, s_hi)) = interp_geometry(lo.row(q)[slot], len) else {
                            continue;
                        };
                        let wt = w.row(q)[slot];
                        let r0 = &v.row(start + i0)[h * dh..(h + 1) * dh];
                        let r1 = &v.row(start + i1)[h * dh..(h + 1) * dh];
                        if let Some(dw) = dw.as_mut() {
                            let sample: f64 = (0..dh).map(|c| gq[c] * ((1.0 - frac) * r0[c] + frac * r1[c])).sum();
                            dw[q * slots + slot] += sample;
                        }
                        if let Some(dl) = dl.as_mut() {
                            let a = &v.row(start + s_lo)[h * dh..(h + 1) * dh];
                            let b = &v.row(start + s_hi)[h * dh..(h + 1) * dh];
                            let slope: f64 = (0..dh).map(|c| gq[c] * (b[c] - a[c])).sum();
                            dl[q * slots + slot] += wt * slope;
                        }
                        if let Some(dv) = dv.as_mut() {
                            for c in 0..dh {
                                dv[(start + i0) * d + h * dh + c] += wt * (1.0 - frac) * gq[c];
                                dv[(start + i1) * d + h * dh + c] += wt * frac * gq[c];
                            }
                        }
                    }
                }
            }
        }
        for (var, delta) in [(values, dv), (locs, dl), (weights, dw)] {
            if let Some(delta) = delta {
                let slot = grads[var.idx].get_or_insert_with(|| vec![0.0; delta.len()]);
                add_into(slot, &delta);
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// `(gelu(x), gelu'(x))` for the tanh approximation.
fn gelu_parts(x: f64) -> (f64, f64) {
    const K: f64 = 0.797_884_560_802_865_4;
    const C: f64 = 0.044_715;
    let t = (K * (x + C * x * x * x)).tanh();
    let value = 0.5 * x * (1.0 + t);
    let slope = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * K * (1.0 + 3.0 * C * x * x);
    (value, slope)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sigmoid(x: f64) -> f64 {
    // ln σ(x) = -softplus(-x)
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Row of `seq` interpolated at `pos`; zeros outside `[0, T-1]`.
pub fn interp_row(seq: &Tensor, pos: f64) -> Vec<f64> {
    let d = seq.cols();
    match interp_geometry(pos, seq.rows()) {
        None => vec![0.0; d],
        Some((i0, i1, frac, _, _)) => {
            if frac == 0.0 {
                return seq.row(i0).to_vec();
            }
            let (r0, r1) = (seq.row(i0), seq.row(i1));
            (0..d).map(|c| (1.0 - frac) * r0[c] + frac * r1[c]).collect()
        }
    }
}
