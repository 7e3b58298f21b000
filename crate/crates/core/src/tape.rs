//! Recorded-tape reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] owns every intermediate value produced during a forward pass.
//! Nodes are appended in evaluation order, so the node list is always
//! topologically sorted and [`Tape::backward`] is a single reverse sweep.
//! Parameters are bound lazily from a borrowed [`ParamStore`]; each parameter
//! maps to exactly one leaf node per tape.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::{ParamGrads, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How an operand of a broadcasting op maps output positions to its own.
#[derive(Clone, Debug)]
enum IndexMap {
    Identity,
    /// Operand is a trailing block repeated over leading axes.
    Modulo(usize),
    /// Operand is a leading block, constant across trailing axes.
    Div(usize),
    /// Operand is one contiguous block of axes: `(i / inner) % block`.
    Strided { inner: usize, block: usize },
    Table(Vec<usize>),
}

impl IndexMap {
    #[inline]
    fn at(&self, i: usize) -> usize {
        match self {
            IndexMap::Identity => i,
            IndexMap::Modulo(n) => i % n,
            IndexMap::Div(n) => i / n,
            IndexMap::Strided { inner, block } => (i / inner) % block,
            IndexMap::Table(t) => t[i],
        }
    }

    fn is_identity(&self) -> bool {
        matches!(self, IndexMap::Identity)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinKind {
    fn name(self) -> &'static str {
        match self {
            BinKind::Add => "add",
            BinKind::Sub => "sub",
            BinKind::Mul => "mul",
            BinKind::Div => "div",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Sigmoid,
    Tanh,
    Relu,
    Elu,
    Abs,
    Exp,
    Log,
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Sigmoid => "sigmoid",
            Unary::Tanh => "tanh",
            Unary::Relu => "relu",
            Unary::Elu => "elu",
            Unary::Abs => "abs",
            Unary::Exp => "exp",
            Unary::Log => "log",
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Sigmoid => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            Unary::Tanh => x.tanh(),
            Unary::Relu => x.max(0.0),
            Unary::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Unary::Abs => x.abs(),
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
        }
    }

    /// Derivative given input `x` and output `y`.
    #[inline]
    fn deriv(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Tanh => 1.0 - y * y,
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
        }
    }
}

/// `(outer, len, inner)` decomposition of a shape around one axis.
#[derive(Clone, Copy, Debug)]
struct AxisSplit {
    outer: usize,
    len: usize,
    inner: usize,
}

impl AxisSplit {
    fn of(shape: &[usize], axis: usize) -> Self {
        AxisSplit {
            outer: shape[..axis].iter().product(),
            len: shape[axis],
            inner: shape[axis + 1..].iter().product(),
        }
    }

    #[inline]
    fn base(&self, o: usize, r: usize) -> usize {
        o * self.len * self.inner + r
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    Binary {
        kind: BinKind,
        a: usize,
        b: usize,
        ma: IndexMap,
        mb: IndexMap,
    },
    Blend {
        a: usize,
        b: usize,
        w: usize,
        mw: IndexMap,
    },
    Scale(usize, f64),
    AddScalar(usize),
    MatMul {
        a: usize,
        b: usize,
        trans_b: bool,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose {
        a: usize,
        rows: usize,
        cols: usize,
    },
    Reshape(usize),
    Concat {
        inputs: Vec<usize>,
        lens: Vec<usize>,
        outer: usize,
        inner: usize,
    },
    Slice {
        a: usize,
        split: AxisSplit,
        start: usize,
        len: usize,
    },
    Softmax {
        a: usize,
        split: AxisSplit,
    },
    LogSoftmax {
        a: usize,
        split: AxisSplit,
    },
    MaskedSoftmax {
        logits: usize,
        mask: usize,
        split: AxisSplit,
        ratio: Vec<f64>,
    },
    Cumsum {
        a: usize,
        split: AxisSplit,
        reverse: bool,
    },
    Unary(Unary, usize),
    Sum {
        a: usize,
        split: AxisSplit,
        mean: bool,
    },
    SumAll(usize),
    LayerNorm {
        a: usize,
        dim: usize,
        rstd: Vec<f64>,
    },
    Embedding {
        table: usize,
        ids: Vec<usize>,
        dim: usize,
    },
    RepeatInterleave {
        a: usize,
        times: usize,
    },
    Pick {
        a: usize,
        idx: Vec<usize>,
        cols: usize,
    },
}

#[derive(Clone, Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// A forward computation recorded for reverse-mode differentiation.
pub struct Tape<'p> {
    params: Option<&'p ParamStore>,
    bound: HashMap<ParamId, Var>,
    param_of: HashMap<usize, ParamId>,
    nodes: Vec<Node>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn padded(shape: &[usize], rank: usize) -> Vec<usize> {
    let mut p = vec![1; rank - shape.len()];
    p.extend_from_slice(shape);
    p
}

fn index_map(px: &[usize], out: &[usize]) -> IndexMap {
    if px == out {
        return IndexMap::Identity;
    }
    let numel: usize = px.iter().product();
    if numel == 1 {
        return IndexMap::Modulo(1);
    }
    let first = px.iter().position(|&d| d != 1).unwrap_or(px.len());
    if px[first..] == out[first..] {
        return IndexMap::Modulo(numel);
    }
    let last = px.iter().rposition(|&d| d != 1).unwrap_or(0);
    if px[..=last] == out[..=last] {
        return IndexMap::Div(out[last + 1..].iter().product());
    }
    if px[first..=last] == out[first..=last] {
        return IndexMap::Strided {
            inner: out[last + 1..].iter().product(),
            block: numel,
        };
    }
    // General case: walk the output with an odometer.
    let rank = out.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for d in (0..rank).rev() {
        strides[d] = if px[d] == 1 { 0 } else { acc };
        acc *= px[d];
    }
    let total: usize = out.iter().product();
    let mut table = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    for _ in 0..total {
        table.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    IndexMap::Table(table)
}

fn broadcast_shapes(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let pa = padded(a, rank);
    let pb = padded(b, rank);
    pa.iter()
        .zip(&pb)
        .map(|(&x, &y)| {
            if x == y || y == 1 {
                Ok(x)
            } else if x == 1 {
                Ok(y)
            } else {
                Err(Error::shape(op, &[a, b]))
            }
        })
        .collect()
}

/// `c = a * b (+ beta * c)` for row/column-strided operands.
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
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides describe views that lie inside the given slices;
    // every caller passes buffers sized m*k, k*n and m*n respectively.
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

fn grad_buf(grads: &mut [Vec<f64>], idx: usize, len: usize) -> &mut Vec<f64> {
    let g = &mut grads[idx];
    if g.is_empty() {
        g.resize(len, 0.0);
    }
    g
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape {
            params: None,
            bound: HashMap::new(),
            param_of: HashMap::new(),
            nodes: Vec::new(),
        }
    }

    /// Tape that can bind parameters from `store`.
    pub fn with_params(store: &'p ParamStore) -> Self {
        Tape {
            params: Some(store),
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape node holds a valid tensor")
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, name: &'static str, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let id = self.nodes.len();
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric { op: name, node: id });
        }
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Ok(Var(id))
    }

    fn needs(&self, v: usize) -> bool {
        self.nodes[v].needs_grad
    }

    // ---- leaves -------------------------------------------------------

    /// Input tensor. When `requires_grad` is set, [`Gradients::wrt`] returns
    /// its total derivative (zero if unreachable from the loss).
    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Result<Var> {
        let shape = t.shape().to_vec();
        self.push("leaf", shape, t.into_data(), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.leaf(t, false)
    }

    /// Leaf bound to a parameter of the store this tape was built with.
    /// Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let store = self.params.expect("tape was created without a parameter store");
        let t = store.get(id);
        let v = self
            .push("param", t.shape().to_vec(), t.data().to_vec(), Op::Param, true)
            .expect("parameters are finite");
        self.bound.insert(id, v);
        self.param_of.insert(v.0, id);
        v
    }

    // ---- elementwise --------------------------------------------------

    fn binary(&mut self, kind: BinKind, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        let out = broadcast_shapes(kind.name(), sa, sb)?;
        let rank = out.len();
        let ma = index_map(&padded(sa, rank), &out);
        let mb = index_map(&padded(sb, rank), &out);
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let total: usize = out.iter().product();
        let f = |x: f64, y: f64| match kind {
            BinKind::Add => x + y,
            BinKind::Sub => x - y,
            BinKind::Mul => x * y,
            BinKind::Div => x / y,
        };
        let value: Vec<f64> = if ma.is_identity() && mb.is_identity() {
            va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect()
        } else {
            (0..total).map(|i| f(va[ma.at(i)], vb[mb.at(i)])).collect()
        };
        let needs = self.needs(a.0) || self.needs(b.0);
        self.push(
            kind.name(),
            out,
            value,
            Op::Binary {
                kind,
                a: a.0,
                b: b.0,
                ma,
                mb,
            },
            needs,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Sub, a, b)
    }

    /// Elementwise product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Div, a, b)
    }

    /// `a * (1 - w) + b * w`, with `w` broadcast against `a` and `b`. A `w`
    /// of exactly 0 or 1 selects `a` or `b` bit-for-bit.
    pub fn blend(&mut self, a: Var, b: Var, w: Var) -> Result<Var> {
        let (sa, sb, sw) = (
            &self.nodes[a.0].shape,
            &self.nodes[b.0].shape,
            &self.nodes[w.0].shape,
        );
        if sa != sb {
            return Err(Error::shape("blend", &[sa, sb, sw]));
        }
        let out = broadcast_shapes("blend", sa, sw)?;
        if &out != sa {
            return Err(Error::shape("blend", &[sa, sb, sw]));
        }
        let mw = index_map(&padded(sw, out.len()), &out);
        let (va, vb, vw) = (
            &self.nodes[a.0].value,
            &self.nodes[b.0].value,
            &self.nodes[w.0].value,
        );
        let value = (0..va.len())
            .map(|i| {
                let t = vw[mw.at(i)];
                va[i] * (1.0 - t) + vb[i] * t
            })
            .collect();
        let needs = self.needs(a.0) || self.needs(b.0) || self.needs(w.0);
        self.push(
            "blend",
            out,
            value,
            Op::Blend {
                a: a.0,
                b: b.0,
                w: w.0,
                mw,
            },
            needs,
        )
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = self.nodes[a.0].value.iter().map(|x| x * s).collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a.0);
        self.push("scale", shape, value, Op::Scale(a.0, s), needs)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = self.nodes[a.0].value.iter().map(|x| x + s).collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a.0);
        self.push("add_scalar", shape, value, Op::AddScalar(a.0), needs)
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let neg = self.scale(a, -1.0)?;
        self.add_scalar(neg, 1.0)
    }

    fn unary(&mut self, u: Unary, a: Var) -> Result<Var> {
        let value = self.nodes[a.0].value.iter().map(|&x| u.apply(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a.0);
        self.push(u.name(), shape, value, Op::Unary(u, a.0), needs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Tanh, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Relu, a)
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Elu, a)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Abs, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Log, a)
    }

    // ---- linear algebra and layout -------------------------------------

    /// Matrix product of 2-D tensors `[m, k] x [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a * b^T` for `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let name = if trans_b { "matmul_nt" } else { "matmul" };
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        let (m, k, n) = match (sa.as_slice(), sb.as_slice(), trans_b) {
            ([m, k], [k2, n], false) if k == k2 => (*m, *k, *n),
            ([m, k], [n, k2], true) if k == k2 => (*m, *k, *n),
            _ => return Err(Error::shape(name, &[sa, sb])),
        };
        let mut value = vec![0.0; m * n];
        let bstr = if trans_b { (1, k) } else { (n, 1) };
        gemm(
            m,
            k,
            n,
            &self.nodes[a.0].value,
            (k, 1),
            &self.nodes[b.0].value,
            bstr,
            &mut value,
            0.0,
        );
        let needs = self.needs(a.0) || self.needs(b.0);
        self.push(
            name,
            vec![m, n],
            value,
            Op::MatMul {
                a: a.0,
                b: b.0,
                trans_b,
                m,
                k,
                n,
            },
            needs,
        )
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = match self.nodes[a.0].shape.as_slice() {
            [r, c] => (*r, *c),
            s => return Err(Error::shape("transpose", &[s])),
        };
        let va = &self.nodes[a.0].value;
        let mut value = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                value[j * rows + i] = va[i * cols + j];
            }
        }
        let needs = self.needs(a.0);
        self.push(
            "transpose",
            vec![cols, rows],
            value,
            Op::Transpose { a: a.0, rows, cols },
            needs,
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let sa = &self.nodes[a.0].shape;
        if shape.iter().product::<usize>() != sa.iter().product::<usize>() || shape.contains(&0) {
            return Err(Error::shape("reshape", &[sa, shape]));
        }
        let value = self.nodes[a.0].value.clone();
        let needs = self.needs(a.0);
        self.push("reshape", shape.to_vec(), value, Op::Reshape(a.0), needs)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let base = self.nodes[first.0].shape.clone();
        if axis >= base.len() {
            return Err(Error::shape("concat", &[&base]));
        }
        let mut lens = Vec::with_capacity(inputs.len());
        for v in inputs {
            let s = &self.nodes[v.0].shape;
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !ok {
                let shapes: Vec<&[usize]> =
                    inputs.iter().map(|v| self.nodes[v.0].shape.as_slice()).collect();
                return Err(Error::shape("concat", &shapes));
            }
            lens.push(s[axis]);
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let total_len: usize = lens.iter().sum();
        let mut value = Vec::with_capacity(outer * total_len * inner);
        for o in 0..outer {
            for (v, &len) in inputs.iter().zip(&lens) {
                let src = &self.nodes[v.0].value;
                value.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total_len;
        let needs = inputs.iter().any(|v| self.needs(v.0));
        self.push(
            "concat",
            shape,
            value,
            Op::Concat {
                inputs: inputs.iter().map(|v| v.0).collect(),
                lens,
                outer,
                inner,
            },
            needs,
        )
    }

    /// `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let sa = self.nodes[a.0].shape.clone();
        if axis >= sa.len() || len == 0 || start + len > sa[axis] {
            return Err(Error::shape("slice", &[&sa, &[axis, start, len]]));
        }
        let split = AxisSplit::of(&sa, axis);
        let src = &self.nodes[a.0].value;
        let mut value = Vec::with_capacity(split.outer * len * split.inner);
        for o in 0..split.outer {
            let b = split.base(o, 0) + start * split.inner;
            value.extend_from_slice(&src[b..b + len * split.inner]);
        }
        let mut shape = sa;
        shape[axis] = len;
        let needs = self.needs(a.0);
        self.push(
            "slice",
            shape,
            value,
            Op::Slice {
                a: a.0,
                split,
                start,
                len,
            },
            needs,
        )
    }

    /// Each entry along the last axis repeated `times` times in place.
    pub fn repeat_interleave(&mut self, a: Var, times: usize) -> Result<Var> {
        let sa = self.nodes[a.0].shape.clone();
        if sa.is_empty() || times == 0 {
            return Err(Error::shape("repeat_interleave", &[&sa]));
        }
        let value: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .flat_map(|&x| std::iter::repeat_n(x, times))
            .collect();
        let mut shape = sa;
        *shape.last_mut().expect("non-empty") *= times;
        let needs = self.needs(a.0);
        self.push(
            "repeat_interleave",
            shape,
            value,
            Op::RepeatInterleave { a: a.0, times },
            needs,
        )
    }

    // ---- normalizations and reductions ---------------------------------

    fn check_axis(&self, op: &'static str, a: Var, axis: usize) -> Result<AxisSplit> {
        let sa = &self.nodes[a.0].shape;
        if axis >= sa.len() {
            return Err(Error::shape(op, &[sa, &[axis]]));
        }
        Ok(AxisSplit::of(sa, axis))
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let split = self.check_axis("softmax", a, axis)?;
        let src = &self.nodes[a.0].value;
        let mut value = vec![0.0; src.len()];
        for o in 0..split.outer {
            for r in 0..split.inner {
                let b = split.base(o, r);
                let at = |j: usize| b + j * split.inner;
                let mx = (0..split.len).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..split.len {
                    let e = (src[at(j)] - mx).exp();
                    value[at(j)] = e;
                    sum += e;
                }
                for j in 0..split.len {
                    value[at(j)] /= sum;
                }
            }
        }
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a.0);
        self.push("softmax", shape, value, Op::Softmax { a: a.0, split }, needs)
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let split = self.check_axis("log_softmax", a, axis)?;
        let src = &self.nodes[a.0].value;
        let mut value = vec![0.0; src.len()];
        for o in 0..split.outer {
            for r in 0..split.inner {
                let b = split.base(o, r);
                let at = |j: usize| b + j * split.inner;
                let mx = (0..split.len).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + (0..split.len).map(|j| (src[at(j)] - mx).exp()).sum::<f64>().ln();
                for j in 0..split.len {
                    value[at(j)] = src[at(j)] - lse;
                }
            }
        }
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a.0);
        self.push("log_softmax", shape, value, Op::LogSoftmax { a: a.0, split }, needs)
    }

    /// Softmax whose unnormalized weights are multiplied by a soft `mask`
    /// (same shape as `logits`) before renormalizing:
    /// `p_i = exp(l_i - max l) m_i / sum_j exp(l_j - max l) m_j`.
    /// Gradients flow into both the logits and the mask.
    pub fn masked_softmax(&mut self, logits: Var, mask: Var, axis: usize) -> Result<Var> {
        let split = self.check_axis("masked_softmax", logits, axis)?;
        let (sl, sm) = (&self.nodes[logits.0].shape, &self.nodes[mask.0].shape);
        if sl != sm {
            return Err(Error::shape("masked_softmax", &[sl, sm]));
        }
        let (src, msk) = (&self.nodes[logits.0].value, &self.nodes[mask.0].value);
        let mut value = vec![0.0; src.len()];
        let mut ratio = vec![0.0; src.len()];
        for o in 0..split.outer {
            for r in 0..split.inner {
                let b = split.base(o, r);
                let at = |j: usize| b + j * split.inner;
                let mx = (0..split.len).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..split.len {
                    let e = (src[at(j)] - mx).exp();
                    ratio[at(j)] = e;
                    sum += e * msk[at(j)];
                }
                if sum <= 0.0 {
                    return Err(Error::contract(
                        "masked_softmax: every position is masked (division by zero)",
                    ));
                }
                for j in 0..split.len {
                    value[at(j)] = ratio[at(j)] * msk[at(j)] / sum;
                    ratio[at(j)] /= sum;
                }
            }
        }
        let shape = sl.clone();
        let needs = self.needs(logits.0) || self.needs(mask.0);
        self.push(
            "masked_softmax",
            shape,
            value,
            Op::MaskedSoftmax {
                logits: logits.0,
                mask: mask.0,
                split,
                ratio,
            },
            needs,
        )
    }

    /// Inclusive cumulative sum along `axis`; `reverse` sums from the end.
    pub fn cumsum(&mut self, a: Var, axis: usize, reverse: bool) -> Result<Var> {
        let split = self.check_axis("cumsum", a, axis)?;
        let src = &self.nodes[a.0].value;
        let mut value = vec![0.0; src.len()];
        for o in 0..split.outer {
            for r in 0..split.inner {
                let b = split.base(o, r);
                let mut acc = 0.0;
                for step in 0..split.len {
                    let j = if reverse { split.len - 1 - step } else { step };
                    acc += src[b + j * split.inner];
                    value[b + j * split.inner] = acc;
                }
            }
        }
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a.0);
        self.push(
            "cumsum",
            shape,
            value,
            Op::Cumsum {
                a: a.0,
                split,
                reverse,
            },
            needs,
        )
    }

    fn reduce(&mut self, a: Var, axis: usize, mean: bool) -> Result<Var> {
        let name = if mean { "mean" } else { "sum" };
        let split = self.check_axis(name, a, axis)?;
        let src = &self.nodes[a.0].value;
        let mut value = vec![0.0; split.outer * split.inner];
        for o in 0..split.outer {
            for r in 0..split.inner {
                let b = split.base(o, r);
                let s: f64 = (0..split.len).map(|j| src[b + j * split.inner]).sum();
                value[o * split.inner + r] = if mean { s / split.len as f64 } else { s };
            }
        }
        let mut shape = self.nodes[a.0].shape.clone();
        shape[axis] = 1;
        let needs = self.needs(a.0);
        self.push(name, shape, value, Op::Sum { a: a.0, split, mean }, needs)
    }

    /// Sum along `axis`, keeping it with extent 1.
    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(a, axis, false)
    }

    /// Mean along `axis`, keeping it with extent 1.
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(a, axis, true)
    }

    /// Sum of every entry as a scalar.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s = self.nodes[a.0].value.iter().sum();
        let needs = self.needs(a.0);
        self.push("sum_all", vec![], vec![s], Op::SumAll(a.0), needs)
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.nodes[a.0].value.len() as f64;
        let s = self.sum_all(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Normalizes each vector along the last axis to zero mean and unit
    /// variance, with `eps` inside the square root. No affine transform.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let sa = &self.nodes[a.0].shape;
        let dim = *sa.last().ok_or_else(|| Error::shape("layer_norm", &[sa]))?;
        let src = &self.nodes[a.0].value;
        let rows = src.len() / dim;
        let mut value = vec![0.0; src.len()];
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let x = &src[r * dim..(r + 1) * dim];
            let mu = x.iter().sum::<f64>() / dim as f64;
            let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / dim as f64;
            let s = 1.0 / (var + eps).sqrt();
            for (o, v) in value[r * dim..(r + 1) * dim].iter_mut().zip(x) {
                *o = (v - mu) * s;
            }
            rstd.push(s);
        }
        let shape = sa.clone();
        let needs = self.needs(a.0);
        self.push(
            "layer_norm",
            shape,
            value,
            Op::LayerNorm { a: a.0, dim, rstd },
            needs,
        )
    }

    // ---- indexing -----------------------------------------------------

    /// Rows of a `[vocab, dim]` table, one per id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, dim) = match self.nodes[table.0].shape.as_slice() {
            [r, d] => (*r, *d),
            s => return Err(Error::shape("embedding_lookup", &[s])),
        };
        if ids.is_empty() {
            return Err(Error::contract("embedding_lookup with no ids"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::Vocab { id: bad, size: rows });
        }
        let src = &self.nodes[table.0].value;
        let mut value = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            value.extend_from_slice(&src[i * dim..(i + 1) * dim]);
        }
        let needs = self.needs(table.0);
        self.push(
            "embedding_lookup",
            vec![ids.len(), dim],
            value,
            Op::Embedding {
                table: table.0,
                ids: ids.to_vec(),
                dim,
            },
            needs,
        )
    }

    /// `out[r] = a[r, idx[r]]` for a 2-D `a`.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (rows, cols) = match self.nodes[a.0].shape.as_slice() {
            [r, c] => (*r, *c),
            s => return Err(Error::shape("pick", &[s])),
        };
        if idx.len() != rows {
            return Err(Error::shape("pick", &[&[rows, cols], &[idx.len()]]));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= cols) {
            return Err(Error::contract(format!("pick index {bad} out of {cols} columns")));
        }
        let src = &self.nodes[a.0].value;
        let value = idx.iter().enumerate().map(|(r, &c)| src[r * cols + c]).collect();
        let needs = self.needs(a.0);
        self.push(
            "pick",
            vec![rows],
            value,
            Op::Pick {
                a: a.0,
                idx: idx.to_vec(),
                cols,
            },
            needs,
        )
    }

    /// Mean negative log-likelihood of `targets` under row-wise logits.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lp = self.log_softmax(logits, 1)?;
        let picked = self.pick(lp, targets)?;
        let m = self.mean_all(picked)?;
        self.scale(m, -1.0)
    }

    // ---- backward -----------------------------------------------------

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); loss.0 + 1];
        grads[loss.0] = vec![1.0];
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || grads[i].is_empty() {
                continue;
            }
            if matches!(node.op, Op::Leaf | Op::Param) {
                continue;
            }
            let g = std::mem::take(&mut grads[i]);
            self.backprop_node(node, &g, &mut grads);
        }
        let mut leaves = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf | Op::Param) && node.needs_grad {
                let g = grads
                    .get_mut(i)
                    .map(std::mem::take)
                    .filter(|g| !g.is_empty())
                    .unwrap_or_else(|| vec![0.0; node.value.len()]);
                leaves.insert(i, Tensor::new(node.shape.clone(), g).expect("grad shape"));
            }
        }
        Ok(Gradients {
            leaves,
            params: self.param_of.clone(),
        })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Vec<f64>]) {
        let val = |k: usize| -> &[f64] { &self.nodes[k].value };
        let len = |k: usize| self.nodes[k].value.len();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Binary { kind, a, b, ma, mb } => {
                let (a, b) = (*a, *b);
                let (va, vb) = (val(a), val(b));
                if self.needs(a) {
                    let ga = grad_buf(grads, a, len(a));
                    for (i, &gi) in g.iter().enumerate() {
                        let (ia, ib) = (ma.at(i), mb.at(i));
                        ga[ia] += match kind {
                            BinKind::Add | BinKind::Sub => gi,
                            BinKind::Mul => gi * vb[ib],
                            BinKind::Div => gi / vb[ib],
                        };
                    }
                }
                if self.needs(b) {
                    let gb = grad_buf(grads, b, len(b));
                    for (i, &gi) in g.iter().enumerate() {
                        let (ia, ib) = (ma.at(i), mb.at(i));
                        gb[ib] += match kind {
                            BinKind::Add => gi,
                            BinKind::Sub => -gi,
                            BinKind::Mul => gi * va[ia],
                            BinKind::Div => -gi * va[ia] / (vb[ib] * vb[ib]),
                        };
                    }
                }
            }
            Op::Blend { a, b, w, mw } => {
                let (a, b, w) = (*a, *b, *w);
                let vw = val(w);
                if self.needs(a) {
                    let ga = grad_buf(grads, a, len(a));
                    for (i, &gi) in g.iter().enumerate() {
                        ga[i] += gi * (1.0 - vw[mw.at(i)]);
                    }
                }
                if self.needs(b) {
                    let gb = grad_buf(grads, b, len(b));
                    for (i, &gi) in g.iter().enumerate() {
                        gb[i] += gi * vw[mw.at(i)];
                    }
                }
                if self.needs(w) {
                    let (va, vb) = (val(a), val(b));
                    let gw = grad_buf(grads, w, len(w));
                    for (i, &gi) in g.iter().enumerate() {
                        gw[mw.at(i)] += gi * (vb[i] - va[i]);
                    }
                }
            }
            Op::Scale(a, s) => {
                let ga = grad_buf(grads, *a, len(*a));
                for (x, gi) in ga.iter_mut().zip(g) {
                    *x += gi * s;
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                let ga = grad_buf(grads, *a, len(*a));
                for (x, gi) in ga.iter_mut().zip(g) {
                    *x += gi;
                }
            }
            Op::MatMul {
                a,
                b,
                trans_b,
                m,
                k,
                n,
            } => {
                let (a, b, m, k, n) = (*a, *b, *m, *k, *n);
                if self.needs(a) {
                    // dA[m,k] = G[m,n] * B^T
                    let bstr = if *trans_b { (k, 1) } else { (1, n) };
                    let vb = val(b);
                    let ga = grad_buf(grads, a, m * k);
                    gemm(m, n, k, g, (n, 1), vb, bstr, ga, 1.0);
                }
                if self.needs(b) {
                    let va = val(a);
                    if *trans_b {
                        // dB[n,k] = G^T * A
                        let gb = grad_buf(grads, b, n * k);
                        gemm(n, m, k, g, (1, n), va, (k, 1), gb, 1.0);
                    } else {
                        // dB[k,n] = A^T * G
                        let gb = grad_buf(grads, b, k * n);
                        gemm(k, m, n, va, (1, k), g, (n, 1), gb, 1.0);
                    }
                }
            }
            Op::Transpose { a, rows, cols } => {
                let ga = grad_buf(grads, *a, rows * cols);
                for i in 0..*rows {
                    for j in 0..*cols {
                        ga[i * cols + j] += g[j * rows + i];
                    }
                }
            }
            Op::Concat {
                inputs,
                lens,
                outer,
                inner,
            } => {
                let total: usize = lens.iter().sum();
                let mut offset = 0;
                for (&inp, &l) in inputs.iter().zip(lens) {
                    if self.needs(inp) {
                        let gi = grad_buf(grads, inp, outer * l * inner);
                        for o in 0..*outer {
                            let src = o * total * inner + offset * inner;
                            let dst = o * l * inner;
                            for t in 0..l * inner {
                                gi[dst + t] += g[src + t];
                            }
                        }
                    }
                    offset += l;
                }
            }
            Op::Slice {
                a,
                split,
                start,
                len: l,
            } => {
                let ga = grad_buf(grads, *a, split.outer * split.len * split.inner);
                for o in 0..split.outer {
                    let dst = split.base(o, 0) + start * split.inner;
                    let src = o * l * split.inner;
                    for t in 0..l * split.inner {
                        ga[dst + t] += g[src + t];
                    }
                }
            }
            Op::Softmax { a, split } => {
                let y = &node.value;
                let ga = grad_buf(grads, *a, y.len());
                for o in 0..split.outer {
                    for r in 0..split.inner {
                        let b = split.base(o, r);
                        let at = |j: usize| b + j * split.inner;
                        let dot: f64 = (0..split.len).map(|j| y[at(j)] * g[at(j)]).sum();
                        for j in 0..split.len {
                            ga[at(j)] += y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax { a, split } => {
                let y = &node.value;
                let ga = grad_buf(grads, *a, y.len());
                for o in 0..split.outer {
                    for r in 0..split.inner {
                        let b = split.base(o, r);
                        let at = |j: usize| b + j * split.inner;
                        let gs: f64 = (0..split.len).map(|j| g[at(j)]).sum();
                        for j in 0..split.len {
                            ga[at(j)] += g[at(j)] - y[at(j)].exp() * gs;
                        }
                    }
                }
            }
            Op::MaskedSoftmax {
                logits,
                mask,
                split,
                ratio,
            } => {
                let y = &node.value;
                let mut dot = vec![0.0; split.outer * split.inner];
                for o in 0..split.outer {
                    for r in 0..split.inner {
                        let b = split.base(o, r);
                        dot[o * split.inner + r] = (0..split.len)
                            .map(|j| y[b + j * split.inner] * g[b + j * split.inner])
                            .sum();
                    }
                }
                let each = |f: &mut dyn FnMut(usize, f64)| {
                    for o in 0..split.outer {
                        for r in 0..split.inner {
                            let b = split.base(o, r);
                            let d = dot[o * split.inner + r];
                            for j in 0..split.len {
                                f(b + j * split.inner, d);
                            }
                        }
                    }
                };
                if self.needs(*logits) {
                    let gl = grad_buf(grads, *logits, y.len());
                    each(&mut |i, d| gl[i] += y[i] * (g[i] - d));
                }
                if self.needs(*mask) {
                    let gm = grad_buf(grads, *mask, y.len());
                    each(&mut |i, d| gm[i] += ratio[i] * (g[i] - d));
                }
            }
            Op::Cumsum { a, split, reverse } => {
                let ga = grad_buf(grads, *a, node.value.len());
                for o in 0..split.outer {
                    for r in 0..split.inner {
                        let b = split.base(o, r);
                        let mut acc = 0.0;
                        // adjoint of an inclusive scan is the scan in the other direction
                        for step in 0..split.len {
                            let j = if *reverse { step } else { split.len - 1 - step };
                            acc += g[b + j * split.inner];
                            ga[b + j * split.inner] += acc;
                        }
                    }
                }
            }
            Op::Unary(u, a) => {
                let x = val(*a);
                let y = &node.value;
                let ga = grad_buf(grads, *a, y.len());
                for i in 0..y.len() {
                    ga[i] += g[i] * u.deriv(x[i], y[i]);
                }
            }
            Op::Sum { a, split, mean } => {
                let scale = if *mean { 1.0 / split.len as f64 } else { 1.0 };
                let ga = grad_buf(grads, *a, split.outer * split.len * split.inner);
                for o in 0..split.outer {
                    for r in 0..split.inner {
                        let b = split.base(o, r);
                        let gi = g[o * split.inner + r] * scale;
                        for j in 0..split.len {
                            ga[b + j * split.inner] += gi;
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                let ga = grad_buf(grads, *a, len(*a));
                for x in ga.iter_mut() {
                    *x += g[0];
                }
            }
            Op::LayerNorm { a, dim, rstd } => {
                let y = &node.value;
                let ga = grad_buf(grads, *a, y.len());
                let d = *dim as f64;
                for (r, s) in rstd.iter().enumerate() {
                    let rg = &g[r * dim..(r + 1) * dim];
                    let ry = &y[r * dim..(r + 1) * dim];
                    let mg = rg.iter().sum::<f64>() / d;
                    let mgy = rg.iter().zip(ry).map(|(a, b)| a * b).sum::<f64>() / d;
                    for k in 0..*dim {
                        ga[r * dim + k] += s * (rg[k] - mg - ry[k] * mgy);
                    }
                }
            }
            Op::Embedding { table, ids, dim } => {
                let gt = grad_buf(grads, *table, len(*table));
                for (r, &id) in ids.iter().enumerate() {
                    for k in 0..*dim {
                        gt[id * dim + k] += g[r * dim + k];
                    }
                }
            }
            Op::RepeatInterleave { a, times } => {
                let ga = grad_buf(grads, *a, len(*a));
                for (j, x) in ga.iter_mut().enumerate() {
                    *x += g[j * times..(j + 1) * times].iter().sum::<f64>();
                }
            }
            Op::Pick { a, idx, cols } => {
                let ga = grad_buf(grads, *a, len(*a));
                for (r, &c) in idx.iter().enumerate() {
                    ga[r * cols + c] += g[r];
                }
            }
        }
    }
}

/// Result of [`Tape::backward`]: derivatives for every leaf that requires
/// gradients.
#[derive(Debug, Clone)]
pub struct Gradients {
    leaves: HashMap<usize, Tensor>,
    params: HashMap<usize, ParamId>,
}

impl Gradients {
    /// Gradient of a leaf created with `requires_grad` (or a bound parameter).
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v.0)
    }

    /// Gradients aligned with `store`; parameters never bound on the tape get
    /// zeros.
    pub fn param_grads(&self, store: &ParamStore) -> ParamGrads {
        let mut out = ParamGrads::zeros_like(store);
        let mut tensors: Vec<Tensor> = out.iter().cloned().collect();
        for (node, id) in &self.params {
            if let Some(g) = self.leaves.get(node) {
                tensors[id.index()] = g.clone();
            }
        }
        out = ParamGrads::from_vec(tensors);
        out
    }
}
