use std::collections::HashMap;

use super::{strides, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Concat(Vec<Var>, usize),
    Slice { input: Var, axis: usize, start: usize },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    Elu(Var, f64),
    Exp(Var),
    SoftmaxSubset(Var, Vec<usize>),
    MaskedSoftmax(Var, Vec<bool>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar loss with respect to every leaf that required them.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    by_leaf: HashMap<Var, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.by_leaf.get(&var).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }
}

/// Records primitive operations in evaluation order so that gradients can be
/// replayed in reverse.
///
/// Ops whose inputs do not require gradients are stored as plain constants,
/// which makes inference on a tape cheap. A tape is a single-threaded
/// evaluation context.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Maps a flat output index to the flat index of a broadcast input.
enum IndexMap {
    Identity,
    Modulo(usize),
    Table(Vec<usize>),
}

impl IndexMap {
    fn new(input: &[usize], out: &[usize]) -> Self {
        if input == out {
            return IndexMap::Identity;
        }
        let in_len: usize = input.iter().product();
        if out.ends_with(input) {
            return IndexMap::Modulo(in_len.max(1));
        }
        let n = out.len();
        let offset = n - input.len();
        let in_strides = strides(input);
        let eff: Vec<usize> = (0..n)
            .map(|i| {
                if i < offset || input[i - offset] == 1 {
                    0
                } else {
                    in_strides[i - offset]
                }
            })
            .collect();
        let total: usize = out.iter().product();
        let mut table = Vec::with_capacity(total);
        let mut counter = vec![0usize; n];
        let mut pos = 0usize;
        for _ in 0..total {
            table.push(pos);
            for d in (0..n).rev() {
                counter[d] += 1;
                pos += eff[d];
                if counter[d] < out[d] {
                    break;
                }
                pos -= eff[d] * counter[d];
                counter[d] = 0;
            }
        }
        IndexMap::Table(table)
    }

    #[inline]
    fn get(&self, o: usize) -> usize {
        match self {
            IndexMap::Identity => o,
            IndexMap::Modulo(m) => o % m,
            IndexMap::Table(t) => t[o],
        }
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        match (da, db) {
            (x, y) if x == y => out.push(x),
            (1, y) => out.push(y),
            (x, 1) => out.push(x),
            _ => return None,
        }
    }
    Some(out)
}

/// Splits `shape` at `axis` into (outer, extent, inner) element counts.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// out[m,n] += a[m,k] · b[k,n]
fn matmul_kernel(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    gemm(m, k, n, a, (k, 1), b, (n, 1), out);
}

/// ga[m,k] += g[m,n] · bᵀ
fn matmul_grad_lhs(g: &[f64], b: &[f64], ga: &mut [f64], m: usize, k: usize, n: usize) {
    gemm(m, n, k, g, (n, 1), b, (1, n), ga);
}

/// gb[k,n] += aᵀ · g[m,n]
fn matmul_grad_rhs(g: &[f64], a: &[f64], gb: &mut [f64], m: usize, k: usize, n: usize) {
    gemm(k, m, n, a, (1, k), g, (n, 1), gb);
}

/// c[m,n] += a[m,k] · b[k,n] with row/column strides for `a` and `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), c: &mut [f64]) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the strides address only elements inside the checked lengths.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Numerically stable softmax of `x` restricted to the positions in `active`.
fn softmax_into(x: &[f64], active: impl Iterator<Item = usize> + Clone, out: &mut [f64]) {
    let max = active
        .clone()
        .map(|i| x[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for i in active.clone() {
        let e = (x[i] - max).exp();
        out[i] = e;
        total += e;
    }
    for i in active {
        out[i] /= total;
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

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    /// Records a leaf. Leaves with `requires_grad` receive gradients from
    /// [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn broadcast_binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let out_shape = broadcast_shape(&sa, &sb).ok_or_else(|| TensorError::Shape {
            op: name,
            shapes: vec![sa.clone(), sb.clone()],
        })?;
        let ia = IndexMap::new(&sa, &out_shape);
        let ib = IndexMap::new(&sb, &out_shape);
        let total: usize = out_shape.iter().product();
        let da = self.value(a).data();
        let db = self.value(b).data();
        let data: Vec<f64> = (0..total).map(|o| f(da[ia.get(o)], db[ib.get(o)])).collect();
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, op, &[a, b]))
    }

    /// Elementwise sum with broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Hadamard product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a);
        let data = v.data().iter().map(|x| x * factor).collect();
        let value = Tensor {
            shape: v.shape().to_vec(),
            data,
        };
        self.push(value, Op::Scale(a, factor), &[a])
    }

    /// `a + c` for a scalar constant `c`.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a);
        let data = v.data().iter().map(|x| x + c).collect();
        let value = Tensor {
            shape: v.shape().to_vec(),
            data,
        };
        self.push(value, Op::Offset(a), &[a])
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.offset(neg, 1.0)
    }

    /// `[m,k] · [k,n] -> [m,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::Shape {
                op: "matmul",
                shapes: vec![sa, sb],
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_kernel(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// `[b,m,k] · [b,k,n] -> [b,m,n]`
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(TensorError::Shape {
                op: "bmm",
                shapes: vec![sa, sb],
            });
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; batch * m * n];
        let da = self.value(a).data();
        let db = self.value(b).data();
        for i in 0..batch {
            matmul_kernel(
                &da[i * m * k..(i + 1) * m * k],
                &db[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let value = Tensor::new(vec![batch, m, n], out)?;
        Ok(self.push(value, Op::BatchMatMul(a, b), &[a, b]))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| TensorError::Shape {
            op: "concat",
            shapes: vec![],
        })?;
        let base = self.shape(*first).to_vec();
        let shape_err = |tape: &Tape| TensorError::Shape {
            op: "concat",
            shapes: inputs.iter().map(|v| tape.shape(*v).to_vec()).collect(),
        };
        if axis >= base.len() {
            return Err(shape_err(self));
        }
        let mut extent = 0;
        for v in inputs {
            let s = self.shape(*v);
            if s.len() != base.len()
                || s.iter()
                    .zip(&base)
                    .enumerate()
                    .any(|(d, (x, y))| d != axis && x != y)
            {
                return Err(shape_err(self));
            }
            extent += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = extent;
        let (outer, _, inner) = axis_split(&out_shape, axis);
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for v in inputs {
                let chunk = self.shape(*v)[axis] * inner;
                data.extend_from_slice(&self.value(*v).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, Op::Concat(inputs.to_vec(), axis), inputs))
    }

    /// The half-open range `start..start+len` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(TensorError::Shape {
                op: "slice",
                shapes: vec![s, vec![axis, start, len]],
            });
        }
        let (outer, ext, inner) = axis_split(&s, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * ext * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = s;
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(
            value,
            Op::Slice {
                input: a,
                axis,
                start,
            },
            &[a],
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshaped(shape.to_vec())?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    /// Flattens to one dimension.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let len = self.value(a).len();
        self.reshape(a, &[len])
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let mut seen = vec![false; s.len()];
        if perm.len() != s.len() || perm.iter().any(|&p| p >= s.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::Shape {
                op: "permute",
                shapes: vec![s, perm.to_vec()],
            });
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
        let map = permute_map(&s, perm);
        let src = self.value(a).data();
        let data = map.iter().map(|&i| src[i]).collect();
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, Op::Permute(a, perm.to_vec()), &[a]))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let n = self.shape(a).len();
        if n < 2 {
            return Err(TensorError::Shape {
                op: "transpose",
                shapes: vec![self.shape(a).to_vec()],
            });
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.swap(n - 2, n - 1);
        self.permute(a, &perm)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(TensorError::Domain {
                op: "mean",
                reason: "empty tensor".into(),
            });
        }
        let m = v.data().iter().sum::<f64>() / v.len() as f64;
        Ok(self.push(Tensor::scalar(m), Op::Mean(a), &[a]))
    }

    /// Sums out `axis`, removing it from the shape.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() {
            return Err(TensorError::Shape {
                op: "sum_axis",
                shapes: vec![s, vec![axis]],
            });
        }
        let (outer, ext, inner) = axis_split(&s, axis);
        let src = self.value(a).data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for e in 0..ext {
                let base = (o * ext + e) * inner;
                for i in 0..inner {
                    data[o * inner + i] += src[base + i];
                }
            }
        }
        let mut out_shape = s;
        out_shape.remove(axis);
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, Op::SumAxis(a, axis), &[a]))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(a);
        let value = Tensor {
            shape: v.shape().to_vec(),
            data: v.data().iter().map(|&x| f(x)).collect(),
        };
        self.push(value, op, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    /// `max(x, slope·x)` for `0 < slope < 1`.
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(
            a,
            move |x| if x > 0.0 { x } else { slope * x },
            Op::LeakyRelu(a, slope),
        )
    }

    pub fn elu(&mut self, a: Var, alpha: f64) -> Var {
        self.unary(
            a,
            move |x| if x > 0.0 { x } else { alpha * x.exp_m1() },
            Op::Elu(a, alpha),
        )
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    /// Softmax of a vector over the listed positions only; every other
    /// position is exactly zero.
    pub fn softmax_over_subset(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 1 {
            return Err(TensorError::Shape {
                op: "softmax_over_subset",
                shapes: vec![s],
            });
        }
        if indices.is_empty() {
            return Err(TensorError::Domain {
                op: "softmax_over_subset",
                reason: "empty subset".into(),
            });
        }
        let mut seen = vec![false; s[0]];
        for &i in indices {
            if i >= s[0] || std::mem::replace(&mut seen[i], true) {
                return Err(TensorError::Domain {
                    op: "softmax_over_subset",
                    reason: format!("index {i} out of range or repeated for length {}", s[0]),
                });
            }
        }
        let mut out = vec![0.0; s[0]];
        softmax_into(self.value(a).data(), indices.iter().copied(), &mut out);
        let value = Tensor::new(s, out)?;
        Ok(self.push(value, Op::SoftmaxSubset(a, indices.to_vec()), &[a]))
    }

    /// Row-wise softmax over the last axis restricted to `mask`-true entries.
    /// Rows without any true entry come out all zero.
    pub fn masked_softmax(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let len = self.value(a).len();
        if s.is_empty() || mask.len() != len {
            return Err(TensorError::Shape {
                op: "masked_softmax",
                shapes: vec![s, vec![mask.len()]],
            });
        }
        let cols = *s.last().unwrap();
        let mut out = vec![0.0; len];
        if cols > 0 {
            let src = self.value(a).data();
            for (r, (row_out, row_mask)) in out.chunks_mut(cols).zip(mask.chunks(cols)).enumerate() {
                if !row_mask.iter().any(|&m| m) {
                    continue;
                }
                let row = &src[r * cols..(r + 1) * cols];
                let active = row_mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i);
                softmax_into(row, active, row_out);
            }
        }
        let value = Tensor::new(s, out)?;
        Ok(self.push(value, Op::MaskedSoftmax(a, mask.to_vec()), &[a]))
    }

    /// Reverse pass from a scalar `loss`. Returns gradients for every leaf
    /// that required them and clears the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(TensorError::Contract("backward on an empty tape".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let mut out = Gradients::default();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, g, &mut grads, &mut out);
        }
        self.nodes.clear();
        Ok(out)
    }

    fn backprop_node(
        &self,
        idx: usize,
        g: Vec<f64>,
        grads: &mut [Option<Vec<f64>>],
        out: &mut Gradients,
    ) {
        let nodes = &self.nodes;
        let node = &nodes[idx];
        let y = node.value.data();
        macro_rules! slot {
            ($v:expr) => {
                grad_slot(nodes, grads, $v)
            };
        }
        match &node.op {
            Op::Leaf => {
                if node.requires_grad {
                    out.by_leaf.insert(Var(idx), g);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let out_shape = node.value.shape();
                let sa = nodes[a.0].value.shape().to_vec();
                let sb = nodes[b.0].value.shape().to_vec();
                if let Some(ga) = slot!(*a) {
                    let map = IndexMap::new(&sa, out_shape);
                    for (o, gv) in g.iter().enumerate() {
                        ga[map.get(o)] += gv;
                    }
                }
                if let Some(gb) = slot!(*b) {
                    let map = IndexMap::new(&sb, out_shape);
                    for (o, gv) in g.iter().enumerate() {
                        gb[map.get(o)] += sign * gv;
                    }
                }
            }
            Op::Mul(a, b) => {
                let out_shape = node.value.shape();
                let sa = nodes[a.0].value.shape();
                let sb = nodes[b.0].value.shape();
                let ia = IndexMap::new(sa, out_shape);
                let ib = IndexMap::new(sb, out_shape);
                let da = nodes[a.0].value.data();
                let db = nodes[b.0].value.data();
                if let Some(ga) = slot!(*a) {
                    for (o, gv) in g.iter().enumerate() {
                        ga[ia.get(o)] += gv * db[ib.get(o)];
                    }
                }
                if let Some(gb) = slot!(*b) {
                    for (o, gv) in g.iter().enumerate() {
                        gb[ib.get(o)] += gv * da[ia.get(o)];
                    }
                }
            }
            Op::Scale(a, f) => {
                if let Some(ga) = slot!(*a) {
                    for (x, gv) in ga.iter_mut().zip(&g) {
                        *x += f * gv;
                    }
                }
            }
            Op::Offset(a) | Op::Reshape(a) => {
                if let Some(ga) = slot!(*a) {
                    for (x, gv) in ga.iter_mut().zip(&g) {
                        *x += gv;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let sa = nodes[a.0].value.shape();
                let sb = nodes[b.0].value.shape();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let da = nodes[a.0].value.data();
                let db = nodes[b.0].value.data();
                if let Some(ga) = slot!(*a) {
                    matmul_grad_lhs(&g, db, ga, m, k, n);
                }
                if let Some(gb) = slot!(*b) {
                    matmul_grad_rhs(&g, da, gb, m, k, n);
                }
            }
            Op::BatchMatMul(a, b) => {
                let sa = nodes[a.0].value.shape();
                let sb = nodes[b.0].value.shape();
                let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                let da = nodes[a.0].value.data();
                let db = nodes[b.0].value.data();
                if let Some(ga) = slot!(*a) {
                    for i in 0..batch {
                        matmul_grad_lhs(
                            &g[i * m * n..(i + 1) * m * n],
                            &db[i * k * n..(i + 1) * k * n],
                            &mut ga[i * m * k..(i + 1) * m * k],
                            m,
                            k,
                            n,
                        );
                    }
                }
                if let Some(gb) = slot!(*b) {
                    for i in 0..batch {
                        matmul_grad_rhs(
                            &g[i * m * n..(i + 1) * m * n],
                            &da[i * m * k..(i + 1) * m * k],
                            &mut gb[i * k * n..(i + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                }
            }
            Op::Concat(inputs, axis) => {
                let (outer, ext, inner) = axis_split(node.value.shape(), *axis);
                let mut offset = 0;
                for v in inputs {
                    let chunk = nodes[v.0].value.shape()[*axis] * inner;
                    if let Some(gv) = slot!(*v) {
                        for o in 0..outer {
                            let src = &g[o * ext * inner + offset..o * ext * inner + offset + chunk];
                            for (x, s) in gv[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                *x += s;
                            }
                        }
                    }
                    offset += chunk;
                }
            }
            Op::Slice { input, axis, start } => {
                let in_shape = nodes[input.0].value.shape().to_vec();
                let len = node.value.shape()[*axis];
                if let Some(ga) = slot!(*input) {
                    let (outer, ext, inner) = axis_split(&in_shape, *axis);
                    for o in 0..outer {
                        let base = o * ext * inner + start * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        for (x, s) in ga[base..base + len * inner].iter_mut().zip(src) {
                            *x += s;
                        }
                    }
                }
            }
            Op::Permute(a, perm) => {
                let in_shape = nodes[a.0].value.shape().to_vec();
                if let Some(ga) = slot!(*a) {
                    for (o, &i) in permute_map(&in_shape, perm).iter().enumerate() {
                        ga[i] += g[o];
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = slot!(*a) {
                    for x in ga.iter_mut() {
                        *x += g[0];
                    }
                }
            }
            Op::Mean(a) => {
                if let Some(ga) = slot!(*a) {
                    let share = g[0] / ga.len() as f64;
                    for x in ga.iter_mut() {
                        *x += share;
                    }
                }
            }
            Op::SumAxis(a, axis) => {
                let in_shape = nodes[a.0].value.shape().to_vec();
                if let Some(ga) = slot!(*a) {
                    let (outer, ext, inner) = axis_split(&in_shape, *axis);
                    for o in 0..outer {
                        for e in 0..ext {
                            let base = (o * ext + e) * inner;
                            for i in 0..inner {
                                ga[base + i] += g[o * inner + i];
                            }
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = slot!(*a) {
                    for ((x, gv), yv) in ga.iter_mut().zip(&g).zip(y) {
                        *x += gv * yv * (1.0 - yv);
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = slot!(*a) {
                    for ((x, gv), yv) in ga.iter_mut().zip(&g).zip(y) {
                        *x += gv * (1.0 - yv * yv);
                    }
                }
            }
            Op::LeakyRelu(a, slope) => {
                let input = nodes[a.0].value.data();
                if let Some(ga) = slot!(*a) {
                    for ((x, gv), xv) in ga.iter_mut().zip(&g).zip(input) {
                        *x += if *xv > 0.0 { *gv } else { slope * gv };
                    }
                }
            }
            Op::Elu(a, alpha) => {
                let input = nodes[a.0].value.data();
                if let Some(ga) = slot!(*a) {
                    for (((x, gv), xv), yv) in ga.iter_mut().zip(&g).zip(input).zip(y) {
                        *x += if *xv > 0.0 { *gv } else { gv * (yv + alpha) };
                    }
                }
            }
            Op::Exp(a) => {
                if let Some(ga) = slot!(*a) {
                    for ((x, gv), yv) in ga.iter_mut().zip(&g).zip(y) {
                        *x += gv * yv;
                    }
                }
            }
            Op::SoftmaxSubset(a, indices) => {
                if let Some(ga) = slot!(*a) {
                    let dot: f64 = indices.iter().map(|&i| g[i] * y[i]).sum();
                    for &i in indices {
                        ga[i] += y[i] * (g[i] - dot);
                    }
                }
            }
            Op::MaskedSoftmax(a, mask) => {
                let cols = *node.value.shape().last().unwrap();
                if let Some(ga) = slot!(*a) {
                    for r in 0..(y.len() / cols.max(1)) {
                        let range = r * cols..(r + 1) * cols;
                        let m = &mask[range.clone()];
                        let (yr, gr) = (&y[range.clone()], &g[range.clone()]);
                        let dot: f64 = (0..cols).filter(|&j| m[j]).map(|j| gr[j] * yr[j]).sum();
                        for j in (0..cols).filter(|&j| m[j]) {
                            ga[r * cols + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
        }
    }
}

fn grad_slot<'a>(
    nodes: &[Node],
    grads: &'a mut [Option<Vec<f64>>],
    v: Var,
) -> Option<&'a mut Vec<f64>> {
    let n = &nodes[v.0];
    if !n.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n.value.len()]))
}

/// For each output position of `permute(shape, perm)`, the source flat index.
fn permute_map(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let eff: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total: usize = out_shape.iter().product();
    let n = out_shape.len();
    let mut map = Vec::with_capacity(total);
    let mut counter = vec![0usize; n];
    let mut pos = 0usize;
    for _ in 0..total {
        map.push(pos);
        for d in (0..n).rev() {
            counter[d] += 1;
            pos += eff[d];
            if counter[d] < out_shape[d] {
                break;
            }
            pos -= eff[d] * counter[d];
            counter[d] = 0;
        }
    }
    map
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
