use super::{ParamId, ParamStore, Tensor, COSINE_EPS};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Leaf,
    Param(ParamId),
    Gather { param: ParamId, rows: Vec<usize> },
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Vec<f64>),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    AddColBias(Var, Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Row(Var, usize),
    StackCols(Vec<Var>),
    Tile(Var),
    Cosine(Var, Var),
    MaskedSoftmax(Var, Vec<bool>),
    Sum(Var),
    CrossEntropy(Var, usize),
    SoftmaxCrossEntropy(Var, usize),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of one forward computation.
///
/// Nodes are appended as operations execute, so every node's inputs precede
/// it. [`Tape::backward`] walks the record in reverse once; a second call is
/// a usage error until [`Tape::reset`].
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
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

    /// Clears the record so the tape can be reused for a new forward pass.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.consumed = false;
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of a leaf (or any node) after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Number of recorded cosine operations.
    pub fn count_cosines(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::Cosine(..)))
            .count()
    }

    /// Which inputs of every ReLU on the tape are positive, in tape order.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for n in &self.nodes {
            if let Op::Relu(a) = n.op {
                out.extend(self.nodes[a.0].value.data().iter().map(|&x| x > 0.0));
            }
        }
        out
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn out(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).expect("op produced inconsistent tensor")
    }

    // ---------------------------------------------------------------- leaves

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// A leaf whose gradient is kept on the tape.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let mut value = store.value(id).clone();
        value.grad = None;
        self.push(value, Op::Param(id), true)
    }

    /// Row-gather from a parameter matrix; output is `[rows.len() × d]`.
    pub fn gather(&mut self, store: &ParamStore, id: ParamId, rows: &[usize]) -> Result<Var> {
        let table = store.value(id);
        if table.shape().len() != 2 || rows.is_empty() {
            return Err(Error::Contract("gather needs a matrix and at least one row".into()));
        }
        let n = table.rows();
        let d = table.cols();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            if r >= n {
                return Err(Error::Bounds {
                    what: "embedding table",
                    index: r,
                    len: n,
                });
            }
            data.extend_from_slice(table.row(r));
        }
        let value = Self::out(vec![rows.len(), d], data);
        Ok(self.push(
            value,
            Op::Gather {
                param: id,
                rows: rows.to_vec(),
            },
            true,
        ))
    }

    // ---------------------------------------------------------------- linear

    /// `a[m×k] · b[k×n]`, or matrix-vector when `b` is 1-D.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 2 || sb.is_empty() || sb.len() > 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", &sa, &sb));
        }
        let (m, k) = (sa[0], sa[1]);
        let n = if sb.len() == 2 { sb[1] } else { 1 };
        let mut out = vec![0.0; m * n];
        matmul_into(self.data(a), self.data(b), &mut out, m, k, n);
        let shape = if sb.len() == 2 { vec![m, n] } else { vec![m] };
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Self::out(shape, out), Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(Error::dim("transpose", &s, &[]));
        }
        let (r, c) = (s[0], s[1]);
        let src = self.data(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let ng = self.ng(a);
        Ok(self.push(Self::out(vec![c, r], out), Op::Transpose(a), ng))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(a).numel() {
            return Err(Error::dim("reshape", self.shape(a), shape));
        }
        let data = self.data(a).to_vec();
        let ng = self.ng(a);
        Ok(self.push(Self::out(shape.to_vec(), data), Op::Reshape(a), ng))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a) || self.ng(b);
        self.push(Self::out(shape, data), op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Elementwise product with a constant array (dropout masks).
    pub fn mul_const(&mut self, a: Var, c: Vec<f64>) -> Result<Var> {
        if c.len() != self.value(a).numel() {
            return Err(Error::dim("mul_const", self.shape(a), &[c.len()]));
        }
        let data = self.data(a).iter().zip(&c).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a);
        Ok(self.push(Self::out(shape, data), Op::MulConst(a, c), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data = self.data(a).iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a);
        self.push(Self::out(shape, data), Op::Scale(a, c), ng)
    }

    /// `a * s` where `s` is a one-element tensor on the tape.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(Error::dim("scale_by", self.shape(a), self.shape(s)));
        }
        let k = self.data(s)[0];
        let data = self.data(a).iter().map(|x| x * k).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a) || self.ng(s);
        Ok(self.push(Self::out(shape, data), Op::ScaleBy(a, s), ng))
    }

    /// Adds vector `b[m]` to every column of `a[m×n]` (or to a vector `a[m]`).
    pub fn add_col_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sb.len() != 1 || sa.is_empty() || sa.len() > 2 || sa[0] != sb[0] {
            return Err(Error::dim("add_col_bias", &sa, &sb));
        }
        let n = if sa.len() == 2 { sa[1] } else { 1 };
        let bias = self.data(b);
        let data = self
            .data(a)
            .iter()
            .enumerate()
            .map(|(idx, x)| x + bias[idx / n])
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Self::out(sa, data), Op::AddColBias(a, b), ng))
    }

    // ----------------------------------------------------------- elementwise

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let data = self.data(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a);
        self.push(Self::out(shape, data), op, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    // --------------------------------------------------------------- layout

    /// Concatenates 1-D tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of nothing".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            if self.shape(p).len() != 1 {
                return Err(Error::dim("concat", self.shape(p), &[]));
            }
            data.extend_from_slice(self.data(p));
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        let n = data.len();
        Ok(self.push(Self::out(vec![n], data), Op::Concat(parts.to_vec()), ng))
    }

    /// Contiguous sub-range of a 1-D tensor.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 1 || len == 0 || start + len > s[0] {
            return Err(Error::dim("slice", s, &[start, len]));
        }
        let data = self.data(a)[start..start + len].to_vec();
        let ng = self.ng(a);
        Ok(self.push(Self::out(vec![len], data), Op::Slice(a, start), ng))
    }

    /// Row `r` of a matrix as a 1-D tensor.
    pub fn row(&mut self, a: Var, r: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 || r >= s[0] {
            return Err(Error::dim("row", s, &[r]));
        }
        let data = self.value(a).row(r).to_vec();
        let c = s[1];
        let ng = self.ng(a);
        Ok(self.push(Self::out(vec![c], data), Op::Row(a, r), ng))
    }

    /// Stacks equal-length vectors as the columns of a `[d × n]` matrix.
    pub fn stack_cols(&mut self, cols: &[Var]) -> Result<Var> {
        let Some(&first) = cols.first() else {
            return Err(Error::Contract("stack_cols of nothing".into()));
        };
        let d_shape = self.shape(first).to_vec();
        if d_shape.len() != 1 {
            return Err(Error::dim("stack_cols", &d_shape, &[]));
        }
        let d = d_shape[0];
        let n = cols.len();
        let mut data = vec![0.0; d * n];
        for (j, &c) in cols.iter().enumerate() {
            if self.shape(c) != d_shape.as_slice() {
                return Err(Error::dim("stack_cols", &d_shape, self.shape(c)));
            }
            for (r, &x) in self.data(c).iter().enumerate() {
                data[r * n + j] = x;
            }
        }
        let ng = cols.iter().any(|&c| self.ng(c));
        Ok(self.push(Self::out(vec![d, n], data), Op::StackCols(cols.to_vec()), ng))
    }

    /// Repeats vector `a[d]` as `n` columns: `[d × n]`.
    pub fn tile(&mut self, a: Var, n: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 1 || n == 0 {
            return Err(Error::dim("tile", s, &[n]));
        }
        let d = s[0];
        let src = self.data(a);
        let mut data = Vec::with_capacity(d * n);
        for &x in src {
            data.extend(std::iter::repeat_n(x, n));
        }
        let ng = self.ng(a);
        Ok(self.push(Self::out(vec![d, n], data), Op::Tile(a), ng))
    }

    // ------------------------------------------------------------ reductions

    /// Cosine similarity as a one-element tensor; zero when either norm is
    /// at most [`COSINE_EPS`].
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a).len() != 1 || self.shape(a) != self.shape(b) {
            return Err(Error::dim("cosine", self.shape(a), self.shape(b)));
        }
        let c = cosine_value(self.data(a), self.data(b));
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::scalar(c), Op::Cosine(a, b), ng))
    }

    /// Softmax over unmasked positions; masked positions are exactly zero.
    pub fn masked_softmax(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 1 || s[0] != mask.len() {
            return Err(Error::dim("masked_softmax", s, &[mask.len()]));
        }
        let out = masked_softmax_values(self.data(a), mask)?;
        let ng = self.ng(a);
        let n = out.len();
        Ok(self.push(
            Self::out(vec![n], out),
            Op::MaskedSoftmax(a, mask.to_vec()),
            ng,
        ))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let mask = vec![true; self.value(a).numel()];
        self.masked_softmax(a, &mask)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.data(a).iter().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// `-ln p[gold]` for a probability vector `p`.
    pub fn cross_entropy(&mut self, probs: Var, gold: usize) -> Result<Var> {
        let n = self.value(probs).numel();
        if self.shape(probs).len() != 1 || gold >= n {
            return Err(Error::Bounds {
                what: "class distribution",
                index: gold,
                len: n,
            });
        }
        let loss = -self.data(probs)[gold].ln();
        let ng = self.ng(probs);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy(probs, gold), ng))
    }

    /// `-ln softmax(logits)[gold]`, evaluated through log-sum-exp.
    pub fn softmax_cross_entropy(&mut self, logits: Var, gold: usize) -> Result<Var> {
        let n = self.value(logits).numel();
        if self.shape(logits).len() != 1 || gold >= n {
            return Err(Error::Bounds {
                what: "class distribution",
                index: gold,
                len: n,
            });
        }
        let x = self.data(logits);
        let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let loss = lse - x[gold];
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy(logits, gold),
            ng,
        ))
    }

    // -------------------------------------------------------------- backward

    /// Reverse sweep from a one-element `loss`.
    ///
    /// Parameter gradients are added into `store`; gradients of every other
    /// node stay on the tape and can be read with [`Tape::grad`].
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.consumed {
            return Err(Error::Usage(
                "backward already ran on this tape; reset it first".into(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &g, &mut grads, store);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(
        &self,
        i: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        store: &mut ParamStore,
    ) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Constant | Op::Leaf => {}
            Op::Param(id) => store.accumulate(*id, g),
            Op::Gather { param, rows } => {
                let d = node.value.cols();
                for (k, &r) in rows.iter().enumerate() {
                    store.accumulate_row(*param, r, &g[k * d..(k + 1) * d]);
                }
            }
            Op::MatMul(a, b) => {
                let sa = self.shape(*a);
                let (m, k) = (sa[0], sa[1]);
                let n = if self.shape(*b).len() == 2 {
                    self.shape(*b)[1]
                } else {
                    1
                };
                if self.ng(*a) && n == 1 {
                    // outer product g · bᵀ
                    let bd = self.data(*b);
                    let ga = self.acc(grads, *a);
                    for (gv, garow) in g.iter().zip(ga.chunks_exact_mut(k)) {
                        if *gv != 0.0 {
                            for (dst, bv) in garow.iter_mut().zip(bd) {
                                *dst += gv * bv;
                            }
                        }
                    }
                } else if self.ng(*a) {
                    // dA = G · Bᵀ
                    let bd = self.data(*b);
                    let ga = self.acc(grads, *a);
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for c in 0..k {
                            let brow = &bd[c * n..(c + 1) * n];
                            ga[r * k + c] += dot(grow, brow);
                        }
                    }
                }
                if self.ng(*b) && n == 1 {
                    // Aᵀ · g
                    let ad = self.data(*a);
                    let gb = self.acc(grads, *b);
                    for (gv, arow) in g.iter().zip(ad.chunks_exact(k)) {
                        for (dst, av) in gb.iter_mut().zip(arow) {
                            *dst += av * gv;
                        }
                    }
                } else if self.ng(*b) {
                    // dB = Aᵀ · G
                    let ad = self.data(*a);
                    let gb = self.acc(grads, *b);
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for c in 0..k {
                            let av = ad[r * k + c];
                            if av == 0.0 {
                                continue;
                            }
                            for (dst, gv) in gb[c * n..(c + 1) * n].iter_mut().zip(grow) {
                                *dst += av * gv;
                            }
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                let s = node.value.shape();
                let (r, c) = (s[0], s[1]);
                let ga = self.acc(grads, *a);
                // output is [r × c], input was [c × r]
                for i in 0..r {
                    for j in 0..c {
                        ga[j * r + i] += g[i * c + j];
                    }
                }
            }
            Op::Reshape(a) => add_into(self.acc(grads, *a), g),
            Op::Add(a, b) => {
                if self.ng(*a) {
                    add_into(self.acc(grads, *a), g);
                }
                if self.ng(*b) {
                    add_into(self.acc(grads, *b), g);
                }
            }
            Op::Sub(a, b) => {
                if self.ng(*a) {
                    add_into(self.acc(grads, *a), g);
                }
                if self.ng(*b) {
                    for (dst, gv) in self.acc(grads, *b).iter_mut().zip(g) {
                        *dst -= gv;
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let bd = self.data(*b);
                    for ((dst, gv), bv) in self.acc(grads, *a).iter_mut().zip(g).zip(bd) {
                        *dst += gv * bv;
                    }
                }
                if self.ng(*b) {
                    let ad = self.data(*a);
                    for ((dst, gv), av) in self.acc(grads, *b).iter_mut().zip(g).zip(ad) {
                        *dst += gv * av;
                    }
                }
            }
            Op::MulConst(a, c) => {
                for ((dst, gv), cv) in self.acc(grads, *a).iter_mut().zip(g).zip(c) {
                    *dst += gv * cv;
                }
            }
            Op::Scale(a, c) => {
                for (dst, gv) in self.acc(grads, *a).iter_mut().zip(g) {
                    *dst += gv * c;
                }
            }
            Op::ScaleBy(a, s) => {
                let k = self.data(*s)[0];
                if self.ng(*a) {
                    for (dst, gv) in self.acc(grads, *a).iter_mut().zip(g) {
                        *dst += gv * k;
                    }
                }
                if self.ng(*s) {
                    let total = dot(g, self.data(*a));
                    self.acc(grads, *s)[0] += total;
                }
            }
            Op::AddColBias(a, b) => {
                if self.ng(*a) {
                    add_into(self.acc(grads, *a), g);
                }
                if self.ng(*b) {
                    let m = self.shape(*b)[0];
                    let n = g.len() / m;
                    let gb = self.acc(grads, *b);
                    for r in 0..m {
                        gb[r] += g[r * n..(r + 1) * n].iter().sum::<f64>();
                    }
                }
            }
            Op::Relu(a) => {
                let x = self.data(*a);
                for ((dst, gv), xv) in self.acc(grads, *a).iter_mut().zip(g).zip(x) {
                    if *xv > 0.0 {
                        *dst += gv;
                    }
                }
            }
            Op::Tanh(a) => {
                for ((dst, gv), yv) in self.acc(grads, *a).iter_mut().zip(g).zip(y) {
                    *dst += gv * (1.0 - yv * yv);
                }
            }
            Op::Sigmoid(a) => {
                for ((dst, gv), yv) in self.acc(grads, *a).iter_mut().zip(g).zip(y) {
                    *dst += gv * yv * (1.0 - yv);
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    if self.ng(p) {
                        add_into(self.acc(grads, p), &g[off..off + n]);
                    }
                    off += n;
                }
            }
            Op::Slice(a, start) => {
                let n = g.len();
                add_into(&mut self.acc(grads, *a)[*start..start + n], g);
            }
            Op::Row(a, r) => {
                let c = g.len();
                add_into(&mut self.acc(grads, *a)[r * c..(r + 1) * c], g);
            }
            Op::StackCols(cols) => {
                let n = cols.len();
                for (j, &c) in cols.iter().enumerate() {
                    if !self.ng(c) {
                        continue;
                    }
                    for (r, dst) in self.acc(grads, c).iter_mut().enumerate() {
                        *dst += g[r * n + j];
                    }
                }
            }
            Op::Tile(a) => {
                let n = node.value.cols();
                for (r, dst) in self.acc(grads, *a).iter_mut().enumerate() {
                    *dst += g[r * n..(r + 1) * n].iter().sum::<f64>();
                }
            }
            Op::Cosine(a, b) => {
                let (av, bv) = (self.data(*a), self.data(*b));
                let na = dot(av, av).sqrt();
                let nb = dot(bv, bv).sqrt();
                if na <= COSINE_EPS || nb <= COSINE_EPS {
                    return;
                }
                let c = y[0];
                let gs = g[0];
                if self.ng(*a) {
                    let ga = self.acc(grads, *a);
                    for k in 0..av.len() {
                        ga[k] += gs * (bv[k] / (na * nb) - c * av[k] / (na * na));
                    }
                }
                if self.ng(*b) {
                    let gb = self.acc(grads, *b);
                    for k in 0..bv.len() {
                        gb[k] += gs * (av[k] / (na * nb) - c * bv[k] / (nb * nb));
                    }
                }
            }
            Op::MaskedSoftmax(a, mask) => {
                let s: f64 = y
                    .iter()
                    .zip(g)
                    .zip(mask)
                    .filter(|(_, &m)| m)
                    .map(|((yv, gv), _)| yv * gv)
                    .sum();
                let ga = self.acc(grads, *a);
                for k in 0..y.len() {
                    if mask[k] {
                        ga[k] += y[k] * (g[k] - s);
                    }
                }
            }
            Op::Sum(a) => {
                let gs = g[0];
                for dst in self.acc(grads, *a).iter_mut() {
                    *dst += gs;
                }
            }
            Op::CrossEntropy(p, gold) => {
                let pv = self.data(*p)[*gold];
                self.acc(grads, *p)[*gold] -= g[0] / pv;
            }
            Op::SoftmaxCrossEntropy(logits, gold) => {
                let x = self.data(*logits);
                let probs = masked_softmax_values(x, &vec![true; x.len()])
                    .expect("nonempty logits");
                let gs = g[0];
                let gl = self.acc(grads, *logits);
                for k in 0..probs.len() {
                    let onehot = if k == *gold { 1.0 } else { 0.0 };
                    gl[k] += gs * (probs[k] - onehot);
                }
            }
        }
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> &'g mut Vec<f64> {
        let n = self.value(v).numel();
        grads[v.0].get_or_insert_with(|| vec![0.0; n])
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    if n == 1 {
        for (o, arow) in out.iter_mut().zip(a.chunks_exact(k)) {
            *o += dot(arow, b);
        }
        return;
    }
    for r in 0..m {
        let orow = &mut out[r * n..(r + 1) * n];
        for c in 0..k {
            let av = a[r * k + c];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[c * n..(c + 1) * n]) {
                *o += av * bv;
            }
        }
    }
}

pub(crate) fn cosine_value(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na <= COSINE_EPS || nb <= COSINE_EPS {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

pub(crate) fn masked_softmax_values(x: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    let m = x
        .iter()
        .zip(mask)
        .filter(|(_, &live)| live)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Err(Error::InvalidMask);
    }
    let mut out: Vec<f64> = x
        .iter()
        .zip(mask)
        .map(|(v, &live)| if live { (v - m).exp() } else { 0.0 })
        .collect();
    let z: f64 = out.iter().sum();
    for o in &mut out {
        *o /= z;
    }
    Ok(out)
}
