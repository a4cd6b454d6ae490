//! Tensor-level reverse-mode autodiff.
//!
//! Every primitive applied through [`Tape`] appends a node holding its output
//! value and whatever it needs for the backward rule. [`Tape::backward`] walks
//! the nodes in exact reverse order and accumulates gradients additively, so a
//! value consumed twice receives the sum of both contributions.

use std::collections::HashMap;
use std::sync::Arc;

use super::param::{ParamId, ParamSet};
use super::tensor::DenseTensor;
use crate::error::{Error, Result};
use crate::spatial::knn::nearest_one;
use crate::types::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Submanifold convolution rules: for every kernel slot, the (output cell,
/// input cell) pairs that contribute through that slot.
#[derive(Debug, Clone)]
pub struct Rulebook {
    pub n_cells: usize,
    pub slots: Vec<Vec<(usize, usize)>>,
}

enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Relu(Var),
    Tanh(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ExpandLast { x: Var, k: usize },
    Reshape(Var),
    SwapLast2 { x: Var, outer: usize, a: usize, b: usize },
    ConcatCols { parts: Vec<(Var, usize)> },
    IndexRows { x: Var, idx: Arc<Vec<usize>> },
    GatherNeighbors { src: Var, idx: Arc<Vec<usize>>, k: usize },
    ScatterMean { x: Var, seg: Arc<Vec<usize>>, counts: Arc<Vec<usize>> },
    SparseConv { x: Var, w: Var, b: Option<Var>, rules: Arc<Rulebook> },
    Ssmp { x: Var, argmax: Vec<usize> },
    RelSegmentMax { center: Var, key: Var, alpha: Var, idx: Arc<Vec<usize>>, k: usize, argmax: Vec<u32> },
    Softmax { x: Var, outer: usize, n: usize, inner: usize },
    SumAxis { x: Var, outer: usize, n: usize, inner: usize },
    Sum(Var),
    Chamfer { pred: Var, gt: Arc<Vec<Point>>, nn_pred: Vec<usize>, nn_gt: Vec<usize> },
}

struct Node {
    value: DenseTensor,
    op: Op,
    requires_grad: bool,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Grads {
    grads: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    frozen: HashMap<ParamId, Option<Var>>,
}

/// Row-major GEMM, `c = a·b + beta·c`, with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every element the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn grad_buf<'g>(
    grads: &'g mut [Option<Vec<f64>>],
    nodes: &[Node],
    v: Var,
) -> Option<&'g mut Vec<f64>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &DenseTensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: DenseTensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, mut t: DenseTensor) -> Var {
        t.grad = None;
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable input; nothing upstream of it is traced.
    pub fn constant(&mut self, mut t: DenseTensor) -> Var {
        t.grad = None;
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Binds a parameter once per tape; repeated uses share one node.
    /// Parameters marked with [`Tape::freeze`] bind as constants.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        if let Some(slot) = self.frozen.get(&id) {
            if let Some(v) = slot {
                return *v;
            }
            let v = self.frozen_param(params, id);
            self.frozen.insert(id, Some(v));
            return v;
        }
        let v = self.leaf(params.get(id).tensor.clone());
        self.params.insert(id, v);
        v
    }

    /// Binds a parameter as a constant (frozen).
    pub fn frozen_param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        self.constant(params.get(id).tensor.clone())
    }

    /// Marks parameters that later `param` calls should not differentiate.
    pub fn freeze(&mut self, ids: impl IntoIterator<Item = ParamId>) {
        for id in ids {
            self.frozen.entry(id).or_insert(None);
        }
    }

    pub fn bound_params(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.params.iter().map(|(k, v)| (*k, *v))
    }

    // ---------------------------------------------------------------- forward

    /// `y = x·W + b` over the rows of `x` (`x`: N×in, `W`: in×out, `b`: out).
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.value(x);
        let ws = self.value(w);
        if ws.shape().len() != 2 || xs.last_dim() != ws.shape()[0] {
            return Err(Error::Shape(format!(
                "linear: input {:?} vs weight {:?}",
                xs.shape(),
                ws.shape()
            )));
        }
        let (din, dout) = (ws.shape()[0], ws.shape()[1]);
        let n = xs.len() / din;
        let mut out = vec![0.0; n * dout];
        if let Some(b) = b {
            let bs = self.value(b);
            if bs.len() != dout {
                return Err(Error::Shape(format!("linear: bias {:?} vs out {dout}", bs.shape())));
            }
            for row in out.chunks_exact_mut(dout) {
                row.copy_from_slice(bs.data());
            }
        }
        gemm(n, din, dout, xs.data(), (din, 1), ws.data(), (dout, 1), &mut out, 1.0);
        let mut shape = xs.shape().to_vec();
        *shape.last_mut().unwrap() = dout;
        let value = DenseTensor::from_parts_unchecked(shape, out);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(value, Op::Linear { x, w, b }, &inputs))
    }

    fn map_unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let xs = self.value(x);
        let data = xs.data().iter().map(|&v| f(v)).collect();
        let value = DenseTensor::from_parts_unchecked(xs.shape().to_vec(), data);
        self.push(value, op, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map_unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map_unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map_unary(x, |v| v * c, Op::Scale(x, c))
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Shape(format!(
                "elementwise: {:?} vs {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = DenseTensor::from_parts_unchecked(av.shape().to_vec(), data);
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Repeats every element `k` times along a new trailing axis.
    pub fn expand_last(&mut self, x: Var, k: usize) -> Var {
        let xs = self.value(x);
        let mut data = Vec::with_capacity(xs.len() * k);
        for &v in xs.data() {
            data.extend(std::iter::repeat_n(v, k));
        }
        let mut shape = xs.shape().to_vec();
        shape.push(k);
        let value = DenseTensor::from_parts_unchecked(shape, data);
        self.push(value, Op::ExpandLast { x, k }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// `outer×a×b → outer×b×a`, treating the tensor as 3-D over its last two axes.
    pub fn swap_last2(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x);
        let s = xs.shape();
        if s.len() < 2 {
            return Err(Error::Shape(format!("swap_last2 needs rank >= 2, got {s:?}")));
        }
        let (a, b) = (s[s.len() - 2], s[s.len() - 1]);
        let outer = xs.len() / (a * b);
        let src = xs.data();
        let mut data = vec![0.0; xs.len()];
        for o in 0..outer {
            let base = o * a * b;
            for i in 0..a {
                for j in 0..b {
                    data[base + j * a + i] = src[base + i * b + j];
                }
            }
        }
        let mut shape = s.to_vec();
        let r = shape.len();
        shape.swap(r - 2, r - 1);
        let value = DenseTensor::from_parts_unchecked(shape, data);
        Ok(self.push(value, Op::SwapLast2 { x, outer, a, b }, &[x]))
    }

    /// Concatenates 2-D tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = self.value(p);
            if v.shape().len() != 2 || v.rows() != rows {
                return Err(Error::Shape(format!("concat: part {:?}, rows {rows}", v.shape())));
            }
            widths.push(v.shape()[1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..rows {
                data[r * total + off..r * total + off + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let value = DenseTensor::from_parts_unchecked(vec![rows, total], data);
        let op = Op::ConcatCols { parts: parts.iter().copied().zip(widths).collect() };
        Ok(self.push(value, op, parts))
    }

    /// `out[i] = x[idx[i]]` over leading-axis rows.
    pub fn index_rows(&mut self, x: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        let xs = self.value(x);
        let (n, c) = (xs.rows(), xs.row_len());
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::Invalid(format!("row index {bad} out of range {n}")));
        }
        if idx.is_empty() {
            return Err(Error::Shape("index_rows with no indices".into()));
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            data.extend_from_slice(&xs.data()[i * c..(i + 1) * c]);
        }
        let mut shape = xs.shape().to_vec();
        shape[0] = idx.len();
        let value = DenseTensor::from_parts_unchecked(shape, data);
        Ok(self.push(value, Op::IndexRows { x, idx }, &[x]))
    }

    /// `out[q, :, j] = src[idx[q·k + j], :]`; result is M×C×K.
    pub fn gather_neighbors(&mut self, src: Var, idx: Arc<Vec<usize>>, k: usize) -> Result<Var> {
        let s = self.value(src);
        if s.shape().len() != 2 || k == 0 || !idx.len().is_multiple_of(k) || idx.is_empty() {
            return Err(Error::Shape(format!("gather_neighbors: src {:?}, k {k}", s.shape())));
        }
        let (n, c) = (s.rows(), s.shape()[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::Invalid(format!("neighbor index {bad} out of range {n}")));
        }
        let m = idx.len() / k;
        let sd = s.data();
        let mut data = vec![0.0; m * c * k];
        for q in 0..m {
            for j in 0..k {
                let row = &sd[idx[q * k + j] * c..][..c];
                for (ch, &v) in row.iter().enumerate() {
                    data[(q * c + ch) * k + j] = v;
                }
            }
        }
        let value = DenseTensor::from_parts_unchecked(vec![m, c, k], data);
        Ok(self.push(value, Op::GatherNeighbors { src, idx, k }, &[src]))
    }

    /// Segment mean over rows: `out[s] = mean{x[i] : seg[i] = s}`.
    pub fn scatter_mean(&mut self, x: Var, seg: Arc<Vec<usize>>, n_seg: usize) -> Result<Var> {
        let xs = self.value(x);
        if seg.len() != xs.rows() {
            return Err(Error::Shape(format!("scatter_mean: {} segments for {} rows", seg.len(), xs.rows())));
        }
        let c = xs.row_len();
        let mut counts = vec![0usize; n_seg];
        let mut data = vec![0.0; n_seg * c];
        for (i, &s) in seg.iter().enumerate() {
            if s >= n_seg {
                return Err(Error::Invalid(format!("segment {s} out of range {n_seg}")));
            }
            counts[s] += 1;
            add_into(&mut data[s * c..(s + 1) * c], &xs.data()[i * c..(i + 1) * c]);
        }
        for (s, &cnt) in counts.iter().enumerate() {
            if cnt == 0 {
                return Err(Error::Invalid(format!("segment {s} is empty")));
            }
            let inv = 1.0 / cnt as f64;
            data[s * c..(s + 1) * c].iter_mut().for_each(|v| *v *= inv);
        }
        let value = DenseTensor::from_parts_unchecked(vec![n_seg, c], data);
        Ok(self.push(value, Op::ScatterMean { x, seg, counts: Arc::new(counts) }, &[x]))
    }

    /// Submanifold sparse convolution over cell rows of `x` (cells×C_in).
    /// `w` is slots×C_in×C_out.
    pub fn sparse_conv(&mut self, x: Var, w: Var, b: Option<Var>, rules: Arc<Rulebook>) -> Result<Var> {
        let xs = self.value(x);
        let ws = self.value(w);
        let wshape = ws.shape();
        if wshape.len() != 3
            || wshape[0] != rules.slots.len()
            || xs.shape().len() != 2
            || wshape[1] != xs.shape()[1]
            || xs.rows() != rules.n_cells
        {
            return Err(Error::Shape(format!(
                "sparse_conv: input {:?}, kernel {:?}, {} cells",
                xs.shape(),
                wshape,
                rules.n_cells
            )));
        }
        let (cin, cout) = (wshape[1], wshape[2]);
        let mut out = vec![0.0; rules.n_cells * cout];
        if let Some(b) = b {
            let bs = self.value(b);
            if bs.len() != cout {
                return Err(Error::Shape("sparse_conv: bias width".into()));
            }
            for row in out.chunks_exact_mut(cout) {
                row.copy_from_slice(bs.data());
            }
        }
        let mut gathered = Vec::new();
        let mut prod = Vec::new();
        for (slot, pairs) in rules.slots.iter().enumerate() {
            if pairs.is_empty() {
                continue;
            }
            let kern = &ws.data()[slot * cin * cout..(slot + 1) * cin * cout];
            gathered.clear();
            for &(_, i) in pairs {
                gathered.extend_from_slice(&xs.data()[i * cin..(i + 1) * cin]);
            }
            prod.clear();
            prod.resize(pairs.len() * cout, 0.0);
            gemm(pairs.len(), cin, cout, &gathered, (cin, 1), kern, (cout, 1), &mut prod, 0.0);
            for (p, &(o, _)) in pairs.iter().enumerate() {
                add_into(&mut out[o * cout..(o + 1) * cout], &prod[p * cout..(p + 1) * cout]);
            }
        }
        let value = DenseTensor::from_parts_unchecked(vec![rules.n_cells, cout], out);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(value, Op::SparseConv { x, w, b, rules }, &inputs))
    }

    /// Serial-segment max pooling: N×C×K → N×C×(segments), max over each
    /// contiguous run of K/segments neighbors. Ties resolve to the first position.
    pub fn ssmp(&mut self, x: Var, segments: usize) -> Result<Var> {
        let xs = self.value(x);
        let k = xs.last_dim();
        if segments == 0 || !k.is_multiple_of(segments) {
            return Err(Error::Config(format!("segment count {segments} does not divide K={k}")));
        }
        let len = k / segments;
        let rows = xs.len() / k;
        let mut data = Vec::with_capacity(rows * segments);
        let mut argmax = Vec::with_capacity(rows * segments);
        for r in 0..rows {
            let row = &xs.data()[r * k..(r + 1) * k];
            for s in 0..segments {
                let mut best = s * len;
                for j in s * len + 1..(s + 1) * len {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                data.push(row[best]);
                argmax.push(r * k + best);
            }
        }
        let mut shape = xs.shape().to_vec();
        *shape.last_mut().unwrap() = segments;
        let value = DenseTensor::from_parts_unchecked(shape, data);
        Ok(self.push(value, Op::Ssmp { x, argmax }, &[x]))
    }

    /// Relative neighbor features pooled per serial segment, without
    /// materializing the M×C×K intermediate:
    /// `out[q,s,c] = max_{j∈seg s} center[q,c] − key[idx[q,j],c] + alpha[q·K+j,c]`.
    /// `center` is M×C, `key` N×C, `alpha` (M·K)×C; output is M×segments×C.
    /// Equals `swap_last2(ssmp(expand(center) − gather(key) + swap(alpha)))`.
    pub fn rel_segment_max(
        &mut self,
        center: Var,
        key: Var,
        alpha: Var,
        idx: Arc<Vec<usize>>,
        k: usize,
        segments: usize,
    ) -> Result<Var> {
        let (cs, ks, al) = (self.value(center), self.value(key), self.value(alpha));
        if cs.shape().len() != 2 || ks.shape().len() != 2 || al.shape().len() != 2 {
            return Err(Error::Shape("rel_segment_max expects matrices".into()));
        }
        let (m, c) = (cs.rows(), cs.shape()[1]);
        if k == 0 || idx.len() != m * k || ks.shape()[1] != c || al.shape() != [m * k, c] {
            return Err(Error::Shape(format!(
                "rel_segment_max: center {:?}, key {:?}, alpha {:?}, {} indices, k {k}",
                cs.shape(),
                ks.shape(),
                al.shape(),
                idx.len()
            )));
        }
        if segments == 0 || !k.is_multiple_of(segments) {
            return Err(Error::Config(format!("segment count {segments} does not divide K={k}")));
        }
        let n = ks.rows();
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::Invalid(format!("neighbor index {bad} out of range {n}")));
        }
        let len = k / segments;
        let (cd, kd, ad) = (cs.data(), ks.data(), al.data());
        let mut data = vec![f64::NEG_INFINITY; m * segments * c];
        let mut argmax = vec![0u32; m * segments * c];
        for q in 0..m {
            let crow = &cd[q * c..][..c];
            for s in 0..segments {
                let out = &mut data[(q * segments + s) * c..][..c];
                let arg = &mut argmax[(q * segments + s) * c..][..c];
                for j in s * len..(s + 1) * len {
                    let krow = &kd[idx[q * k + j] * c..][..c];
                    let arow = &ad[(q * k + j) * c..][..c];
                    for ch in 0..c {
                        let v = crow[ch] - krow[ch] + arow[ch];
                        // Strict comparison keeps the first maximum.
                        if j == s * len || v > out[ch] {
                            out[ch] = v;
                            arg[ch] = j as u32;
                        }
                    }
                }
            }
        }
        let value = DenseTensor::from_parts_unchecked(vec![m, segments, c], data);
        Ok(self.push(value, Op::RelSegmentMax { center, key, alpha, idx, k, argmax }, &[center, key, alpha]))
    }

    fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
        if axis >= shape.len() {
            return Err(Error::Shape(format!("axis {axis} out of range for {shape:?}")));
        }
        let outer = shape[..axis].iter().product();
        let inner = shape[axis + 1..].iter().product();
        Ok((outer, shape[axis], inner))
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xs = self.value(x);
        let (outer, n, inner) = Self::axis_split(xs.shape(), axis)?;
        let src = xs.data();
        let mut data = vec![0.0; xs.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..n {
                    let e = (src[at(j)] - max).exp();
                    data[at(j)] = e;
                    total += e;
                }
                for j in 0..n {
                    data[at(j)] /= total;
                }
            }
        }
        let value = DenseTensor::from_parts_unchecked(xs.shape().to_vec(), data);
        Ok(self.push(value, Op::Softmax { x, outer, n, inner }, &[x]))
    }

    /// Sums out `axis`.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xs = self.value(x);
        let (outer, n, inner) = Self::axis_split(xs.shape(), axis)?;
        let src = xs.data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                add_into(&mut data[o * inner..(o + 1) * inner], &src[(o * n + j) * inner..][..inner]);
            }
        }
        let mut shape = xs.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let value = DenseTensor::from_parts_unchecked(shape, data);
        Ok(self.push(value, Op::SumAxis { x, outer, n, inner }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(DenseTensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Symmetric Chamfer distance between the rows of `pred` (N×3) and a fixed
    /// target cloud.
    pub fn chamfer(&mut self, pred: Var, gt: Arc<Vec<Point>>) -> Result<Var> {
        let pv = self.value(pred);
        if pv.shape().len() != 2 || pv.shape()[1] != 3 {
            return Err(Error::Shape(format!("chamfer: prediction {:?} is not N×3", pv.shape())));
        }
        if gt.is_empty() {
            return Err(Error::Invalid("chamfer against an empty cloud".into()));
        }
        let pts: Vec<Point> = pv.data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let (value, nn_pred, nn_gt) = crate::pipeline::loss::chamfer_terms(&pts, &gt, nearest_one);
        let op = Op::Chamfer { pred, gt, nn_pred, nn_gt };
        Ok(self.push(DenseTensor::scalar(value), op, &[pred]))
    }

    // --------------------------------------------------------------- backward

    /// Reverse sweep from a scalar node. Gradients are returned for leaves only.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        let nodes = &self.nodes;
        for i in (0..=loss.0).rev() {
            if !nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            // Only leaf gradients are kept; intermediates are freed as the sweep passes.
            if matches!(nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Grads { grads })
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        let val = |v: Var| &nodes[v.0].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xs, ws) = (val(*x), val(*w));
                let (din, dout) = (ws.shape()[0], ws.shape()[1]);
                let n = xs.len() / din;
                if let Some(gb) = b.and_then(|b| grad_buf(grads, nodes, b)) {
                    for row in g.chunks_exact(dout) {
                        add_into(gb, row);
                    }
                }
                if let Some(gw) = grad_buf(grads, nodes, *w) {
                    // dW += xᵀ·dy
                    gemm(din, n, dout, xs.data(), (1, din), g, (dout, 1), gw, 1.0);
                }
                if let Some(gx) = grad_buf(grads, nodes, *x) {
                    // dx += dy·Wᵀ
                    gemm(n, dout, din, g, (dout, 1), ws.data(), (1, dout), gx, 1.0);
                }
            }
            Op::Relu(x) => {
                if let Some(gx) = grad_buf(grads, nodes, *x) {
                    for ((d, &gv), &xv) in gx.iter_mut().zip(g).zip(val(*x).data()) {
                        if xv > 0.0 {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(gx) = grad_buf(grads, nodes, *x) {
                    for ((d, &gv), &y) in gx.iter_mut().zip(g).zip(out.data()) {
                        *d += gv * (1.0 - y * y);
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = grad_buf(grads, nodes, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = grad_buf(grads, nodes, *b) {
                    add_into(gb, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = grad_buf(grads, nodes, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = grad_buf(grads, nodes, *b) {
                    gb.iter_mut().zip(g).for_each(|(d, s)| *d -= s);
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = grad_buf(grads, nodes, *a) {
                    for ((d, &gv), &bv) in ga.iter_mut().zip(g).zip(val(*b).data()) {
                        *d += gv * bv;
                    }
                }
                if let Some(gb) = grad_buf(grads, nodes, *b) {
                    for ((d, &gv), &av) in gb.iter_mut().zip(g).zip(val(*a).data()) {
                        *d += gv * av;
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(gx) = grad_buf(grads, nodes, *x) {
                    gx.iter_mut().zip(g).for_each(|(d, s)| *d += c * s);
                }
            }
            Op::ExpandLast { x, k } => {
                if let Some(gx) = grad_buf(grads, nodes, *x) {
                    for (d, chunk) in gx.iter_mut().zip(g.chunks_exact(*k)) {
                        *d += chunk.iter().sum::<f64>();
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = grad_buf(grads, nodes, *x) {
                    add_into(gx, g);
                }
            }
            Op::SwapLast2 { x, outer, a, b } => {
                if let Some(gx) = grad_buf(grads, nodes, *x) {
                    for o in 0..*outer {
                        let base = o * a * b;
                        for i in 0..*a {
                            for j in 0..*b {
                                gx[base + i * b + j] += g[base + j * a + i];
                            }
                        }
                    }
                }
            }
            Op::ConcatCols { parts } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let rows = out.rows();
                let mut off = 0;
                for &(p, w) in parts {
                    if let Some(gp) = grad_buf(grads, nodes, p) {
                        for r in 0..rows {
                            add_into(&mut gp[r * w..(r + 1) * w], &g[r * total + off..][..w]);
                        }
                    }
                    off += w;
                }
            }
            Op::IndexRows { x, idx } => {
                let c = out.row_len();
                if let Some(gx) = grad_buf(grads, nodes, *x) {
                    for (r, &src) in idx.iter().enumerate() {
                        add_into(&mut gx[src * c..(src + 1) * c], &g[r * c..(r + 1) * c]);
                    }
                }
            }
            Op::GatherNeighbors { src, idx, k } => {
                let c = out.shape()[1];
                if let Some(gs) = grad_buf(grads, nodes, *src) {
                    let m = idx.len() / k;
                    for q in 0..m {
                        for j in 0..*k {
                            let row = idx[q * k + j] * c;
                            for ch in 0..c {
                                gs[row + ch] += g[(q * c + ch) * k + j];
                            }
                        }
                    }
                }
            }
            Op::ScatterMean { x, seg, counts } => {
                let c = out.row_len();
                if let Some(gx) = grad_buf(grads, nodes, *x) {
                    for (i, &s) in seg.iter().enumerate() {
                        let inv = 1.0 / counts[s] as f64;
                        for (d, &gv) in gx[i * c..(i + 1) * c].iter_mut().zip(&g[s * c..(s + 1) * c]) {
                            *d += gv * inv;
                        }
                    }
                }
            }
            Op::SparseConv { x, w, b, rules } => {
                let (xs, ws) = (val(*x), val(*w));
                let (cin, cout) = (ws.shape()[1], ws.shape()[2]);
                if let Some(gb) = b.and_then(|b| grad_buf(grads, nodes, b)) {
                    for row in g.chunks_exact(cout) {
                        add_into(gb, row);
                    }
                }
                let need_w = nodes[w.0].requires_grad;
                let need_x = nodes[x.0].requires_grad;
                let mut gathered = Vec::new();
                let mut gout = Vec::new();
                let mut gin = Vec::new();
                for (slot, pairs) in rules.slots.iter().enumerate() {
                    if pairs.is_empty() {
                        continue;
                    }
                    gout.clear();
                    for &(o, _) in pairs {
                        gout.extend_from_slice(&g[o * cout..(o + 1) * cout]);
                    }
                    if need_w {
                        gathered.clear();
                        for &(_, i) in pairs {
                            gathered.extend_from_slice(&xs.data()[i * cin..(i + 1) * cin]);
                        }
                        let gw = grad_buf(grads, nodes, *w).unwrap();
                        let gk = &mut gw[slot * cin * cout..(slot + 1) * cin * cout];
                        gemm(cin, pairs.len(), cout, &gathered, (1, cin), &gout, (cout, 1), gk, 1.0);
                    }
                    if need_x {
                        let kern = &ws.data()[slot * cin * cout..(slot + 1) * cin * cout];
                        gin.clear();
                        gin.resize(pairs.len() * cin, 0.0);
                        gemm(pairs.len(), cout, cin, &gout, (cout, 1), kern, (1, cout), &mut gin, 0.0);
                        let gx = grad_buf(grads, nodes, *x).unwrap();
                        for (p, &(_, i)) in pairs.iter().enumerate() {
                            add_into(&mut gx[i * cin..(i + 1) * cin], &gin[p * cin..(p + 1) * cin]);
                        }
                    }
                }
            }
            Op::Ssmp { x, argmax } => {
                if let Some(gx) = grad_buf(grads, nodes, *x) {
                    for (&pos, &gv) in argmax.iter().zip(g) {
                        gx[pos] += gv;
                    }
                }
            }
            Op::RelSegmentMax { center, key, alpha, idx, k, argmax } => {
                let (m, segments, c) = (out.shape()[0], out.shape()[1], out.shape()[2]);
                if let Some(gc) = grad_buf(grads, nodes, *center) {
                    for q in 0..m {
                        for s in 0..segments {
                            let row = &g[(q * segments + s) * c..][..c];
                            add_into(&mut gc[q * c..(q + 1) * c], row);
                        }
                    }
                }
                if let Some(gk) = grad_buf(grads, nodes, *key) {
                    for (o, (&j, &gv)) in argmax.iter().zip(g).enumerate() {
                        let (q, ch) = (o / (segments * c), o % c);
                        gk[idx[q * k + j as usize] * c + ch] -= gv;
                    }
                }
                if let Some(ga) = grad_buf(grads, nodes, *alpha) {
                    for (o, (&j, &gv)) in argmax.iter().zip(g).enumerate() {
                        let (q, ch) = (o / (segments * c), o % c);
                        ga[(q * k + j as usize) * c + ch] += gv;
                    }
                }
            }
            Op::Softmax { x, outer, n, inner } => {
                if let Some(gx) = grad_buf(grads, nodes, *x) {
                    let y = out.data();
                    for o in 0..*outer {
                        for i in 0..*inner {
                            let at = |j: usize| (o * n + j) * inner + i;
                            let dot: f64 = (0..*n).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..*n {
                                gx[at(j)] += y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                }
            }
            Op::SumAxis { x, outer, n, inner } => {
                if let Some(gx) = grad_buf(grads, nodes, *x) {
                    for o in 0..*outer {
                        for j in 0..*n {
                            add_into(&mut gx[(o * n + j) * inner..][..*inner], &g[o * inner..(o + 1) * inner]);
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = grad_buf(grads, nodes, *x) {
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Chamfer { pred, gt, nn_pred, nn_gt } => {
                if let Some(gp) = grad_buf(grads, nodes, *pred) {
                    let p = val(*pred).data();
                    let inv_p = 2.0 * g[0] / nn_pred.len() as f64;
                    let inv_q = 2.0 * g[0] / nn_gt.len() as f64;
                    for (i, &j) in nn_pred.iter().enumerate() {
                        for a in 0..3 {
                            gp[i * 3 + a] += inv_p * (p[i * 3 + a] - gt[j][a]);
                        }
                    }
                    for (j, &i) in nn_gt.iter().enumerate() {
                        for a in 0..3 {
                            gp[i * 3 + a] += inv_q * (p[i * 3 + a] - gt[j][a]);
                        }
                    }
                }
            }
        }
    }
}
