//! Define-by-run reverse-mode differentiation over small dense tensors.
//!
//! Node values are computed eagerly as the graph is built, so building a
//! graph *is* the forward pass. Nodes are appended in topological order,
//! which makes reverse creation order a valid reverse topological order.

use rand::Rng;

use crate::scalar::Scalar;

use super::tensor::{matvec, Tensor};
use super::{NumericsError, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(ParamId),
    Row { table: ParamId, row: usize },
    MatVec { m: NodeId, x: NodeId },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Concat(Vec<NodeId>),
    Mean(Vec<NodeId>),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Log(NodeId),
    Dropout { x: NodeId, mask: Vec<T> },
    Sum(NodeId),
    BceWithLogits { logits: NodeId, targets: Vec<T> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::Row { .. } => "row",
            Op::MatVec { .. } => "matvec",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Concat(_) => "concat",
            Op::Mean(_) => "mean",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Log(_) => "log",
            Op::Dropout { .. } => "dropout",
            Op::Sum(_) => "sum",
            Op::BceWithLogits { .. } => "bce_with_logits",
        }
    }
}

struct Node<T> {
    op: Op<T>,
    // Empty for parameter leaves; their value lives in the store.
    value: Tensor<T>,
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    grads: Vec<Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self {
            grads: store
                .iter()
                .map(|(_, t)| Tensor::zeros(t.shape().to_vec()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id.index()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.grads[id.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.grads.iter()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn zero(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(T::zero()));
    }

    pub fn scale(&mut self, k: T) {
        self.grads.iter_mut().for_each(|g| g.scale(k));
    }

    pub fn global_norm(&self) -> T {
        self.grads
            .iter()
            .flat_map(|g| g.data().iter())
            .map(|v| *v * *v)
            .sum::<T>()
            .sqrt()
    }

    /// Index of the first parameter whose gradient holds a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.grads.iter().position(|g| !g.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.grads
            .iter()
            .all(|g| g.data().iter().all(|v| *v == T::zero()))
    }
}

/// A computation graph borrowing its trainable parameters.
pub struct Graph<'p, T> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: Vec<Option<NodeId>>,
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        match &self.nodes[id.0].op {
            Op::Param(p) => self.params.get(*p),
            _ => &self.nodes[id.0].value,
        }
    }

    pub fn scalar(&self, id: NodeId) -> T {
        self.value(id).data()[0]
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn mismatch(&self, op: &'static str, expected: &[usize], got: &[usize]) -> NumericsError {
        NumericsError::ShapeMismatch {
            node: format!("#{} {}", self.nodes.len(), op),
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }

    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Input, value)
    }

    pub fn vector(&mut self, data: Vec<T>) -> NodeId {
        self.input(Tensor::vector(data))
    }

    /// Parameter leaf; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.index()] {
            return n;
        }
        let n = self.push(Op::Param(id), Tensor::zeros(vec![0]));
        self.param_nodes[id.index()] = Some(n);
        n
    }

    /// Row `row` of a `[rows, cols]` parameter table, as a vector.
    pub fn row(&mut self, table: ParamId, row: usize) -> Result<NodeId, NumericsError> {
        let t = self.params.get(table);
        if t.shape().len() != 2 || row >= t.rows() {
            return Err(self.mismatch("row", &[row + 1, t.cols()], t.shape()));
        }
        let v = Tensor::vector(t.row(row).to_vec());
        Ok(self.push(Op::Row { table, row }, v))
    }

    pub fn matvec(&mut self, m: NodeId, x: NodeId) -> Result<NodeId, NumericsError> {
        let (mv, xv) = (self.value(m), self.value(x));
        if mv.shape().len() != 2 || xv.shape().len() != 1 || mv.cols() != xv.len() {
            return Err(self.mismatch("matvec", &[mv.rows(), xv.len()], mv.shape()));
        }
        let rows = mv.rows();
        let mut out = vec![T::zero(); rows];
        matvec(mv.data(), rows, mv.cols(), xv.data(), &mut out);
        Ok(self.push(Op::MatVec { m, x }, Tensor::vector(out)))
    }

    fn zip_with(
        &mut self,
        a: NodeId,
        b: NodeId,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<NodeId, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(self.mismatch(op.name(), av.shape(), bv.shape()));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let v = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(op, v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// `W x + b`
    pub fn affine(&mut self, w: ParamId, x: NodeId, b: ParamId) -> Result<NodeId, NumericsError> {
        let w = self.param(w);
        let b = self.param(b);
        let wx = self.matvec(w, x)?;
        self.add(wx, b)
    }

    fn map(&mut self, a: NodeId, op: Op<T>, f: impl Fn(T) -> T) -> NodeId {
        let av = self.value(a);
        let data = av.data().iter().map(|x| f(*x)).collect();
        let v = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        self.push(op, v)
    }

    pub fn scale(&mut self, a: NodeId, k: T) -> NodeId {
        self.map(a, Op::Scale(a, k), |x| x * k)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Tanh(a), |x| x.tanh())
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Log(a), |x| x.ln())
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, NumericsError> {
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.shape().len() != 1 {
                return Err(self.mismatch("concat", &[v.len()], v.shape()));
            }
            data.extend_from_slice(v.data());
        }
        Ok(self.push(Op::Concat(parts.to_vec()), Tensor::vector(data)))
    }

    /// Elementwise mean of equally shaped nodes.
    pub fn mean(&mut self, parts: &[NodeId]) -> Result<NodeId, NumericsError> {
        let Some(&first) = parts.first() else {
            return Err(NumericsError::EmptyOperands("mean"));
        };
        let shape = self.value(first).shape().to_vec();
        let mut acc = vec![T::zero(); self.value(first).len()];
        for &p in parts {
            let v = self.value(p);
            if v.shape() != shape.as_slice() {
                return Err(self.mismatch("mean", &shape, v.shape()));
            }
            for (a, x) in acc.iter_mut().zip(v.data()) {
                *a += *x;
            }
        }
        let n = T::of(parts.len() as f64);
        acc.iter_mut().for_each(|a| *a /= n);
        let v = Tensor::new(shape, acc)?;
        Ok(self.push(Op::Mean(parts.to_vec()), v))
    }

    /// Inverted dropout: each coordinate is zeroed with probability `rate`
    /// and survivors are scaled by `1 / (1 - rate)`. A zero rate is the identity.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: NodeId, rate: f64, rng: &mut R) -> NodeId {
        if rate <= 0.0 {
            return x;
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(v, m)| *v * *m).collect();
        let v = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(Op::Dropout { x, mask }, v)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    /// Summed binary cross-entropy of `sigmoid(logits)` against `targets`,
    /// evaluated in the overflow-free softplus form.
    pub fn bce_with_logits(
        &mut self,
        logits: NodeId,
        targets: Vec<T>,
    ) -> Result<NodeId, NumericsError> {
        let lv = self.value(logits);
        if lv.len() != targets.len() {
            return Err(self.mismatch("bce_with_logits", &[targets.len()], lv.shape()));
        }
        let loss = lv
            .data()
            .iter()
            .zip(&targets)
            .map(|(z, t)| softplus(*z) - *t * *z)
            .sum();
        Ok(self.push(Op::BceWithLogits { logits, targets }, Tensor::scalar(loss)))
    }

    /// Accumulates d`loss`/d`param` into `grads` for every parameter reachable from `loss`.
    pub fn backward(&self, loss: NodeId, grads: &mut Gradients<T>) -> Result<(), NumericsError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(NumericsError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut adj: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        adj.resize_with(loss.0 + 1, || None);
        adj[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(p) => {
                    for (d, v) in grads.get_mut(*p).data_mut().iter_mut().zip(&g) {
                        *d += *v;
                    }
                }
                Op::Row { table, row } => {
                    let t = grads.get_mut(*table);
                    let cols = t.cols();
                    let dst = &mut t.data_mut()[row * cols..(row + 1) * cols];
                    for (d, v) in dst.iter_mut().zip(&g) {
                        *d += *v;
                    }
                }
                Op::MatVec { m, x } => {
                    let mv = self.value(*m);
                    let xv = self.value(*x);
                    let (rows, cols) = (mv.rows(), mv.cols());
                    // dm += g xᵀ
                    {
                        let dm = slot(&mut adj, *m, rows * cols);
                        for r in 0..rows {
                            let gr = g[r];
                            if gr == T::zero() {
                                continue;
                            }
                            let dst = &mut dm[r * cols..(r + 1) * cols];
                            for (d, xi) in dst.iter_mut().zip(xv.data()) {
                                *d += gr * *xi;
                            }
                        }
                    }
                    // dx += mᵀ g
                    let dx = slot(&mut adj, *x, cols);
                    for r in 0..rows {
                        let gr = g[r];
                        if gr == T::zero() {
                            continue;
                        }
                        for (d, w) in dx.iter_mut().zip(mv.row(r)) {
                            *d += gr * *w;
                        }
                    }
                }
                Op::Add(a, b) => {
                    accumulate(slot(&mut adj, *a, g.len()), &g, T::one());
                    accumulate(slot(&mut adj, *b, g.len()), &g, T::one());
                }
                Op::Sub(a, b) => {
                    accumulate(slot(&mut adj, *a, g.len()), &g, T::one());
                    accumulate(slot(&mut adj, *b, g.len()), &g, -T::one());
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    {
                        let da = slot(&mut adj, *a, g.len());
                        for ((d, gi), bi) in da.iter_mut().zip(&g).zip(bv) {
                            *d += *gi * *bi;
                        }
                    }
                    let db = slot(&mut adj, *b, g.len());
                    for ((d, gi), ai) in db.iter_mut().zip(&g).zip(av) {
                        *d += *gi * *ai;
                    }
                }
                Op::Scale(a, k) => accumulate(slot(&mut adj, *a, g.len()), &g, *k),
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        accumulate(slot(&mut adj, *p, n), &g[off..off + n], T::one());
                        off += n;
                    }
                }
                Op::Mean(parts) => {
                    let k = T::one() / T::of(parts.len() as f64);
                    for p in parts {
                        accumulate(slot(&mut adj, *p, g.len()), &g, k);
                    }
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    let da = slot(&mut adj, *a, g.len());
                    for ((d, gi), yi) in da.iter_mut().zip(&g).zip(y) {
                        *d += *gi * *yi * (T::one() - *yi);
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    let da = slot(&mut adj, *a, g.len());
                    for ((d, gi), yi) in da.iter_mut().zip(&g).zip(y) {
                        *d += *gi * (T::one() - *yi * *yi);
                    }
                }
                Op::Log(a) => {
                    let x = self.value(*a).data();
                    let da = slot(&mut adj, *a, g.len());
                    for ((d, gi), xi) in da.iter_mut().zip(&g).zip(x) {
                        *d += *gi / *xi;
                    }
                }
                Op::Dropout { x, mask } => {
                    let dx = slot(&mut adj, *x, g.len());
                    for ((d, gi), m) in dx.iter_mut().zip(&g).zip(mask) {
                        *d += *gi * *m;
                    }
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    let da = slot(&mut adj, *a, n);
                    da.iter_mut().for_each(|d| *d += g[0]);
                }
                Op::BceWithLogits { logits, targets } => {
                    let z = self.value(*logits).data();
                    let dz = slot(&mut adj, *logits, z.len());
                    for ((d, zi), t) in dz.iter_mut().zip(z).zip(targets) {
                        *d += g[0] * (sigmoid(*zi) - *t);
                    }
                }
            }
        }
        Ok(())
    }
}

fn slot<T: Scalar>(adj: &mut [Option<Vec<T>>], id: NodeId, len: usize) -> &mut Vec<T> {
    adj[id.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn accumulate<T: Scalar>(dst: &mut [T], src: &[T], k: T) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += k * *s;
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}
