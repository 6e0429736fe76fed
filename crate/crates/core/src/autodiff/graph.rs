use std::borrow::Cow;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{Gradients, ParamId, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A user-defined differentiable op.
///
/// `backward` returns one gradient per input, each shaped like that input.
pub trait CustomOp<T>: Send + Sync {
    fn name(&self) -> &str;
    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>>;
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Tensor<T>>;
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    GatherRow(ParamId, usize),
    MatMul(NodeId, NodeId),
    MatVec(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    AddScalar(NodeId, T),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Log(NodeId),
    Softmax(NodeId),
    Concat(Vec<NodeId>),
    Stack(Vec<NodeId>),
    Sum(NodeId),
    Dot(NodeId, NodeId),
    Index(NodeId, usize),
    Clamp(NodeId, T, T),
    Custom(Box<dyn CustomOp<T>>, Vec<NodeId>),
}

struct Node<'s, T: Clone> {
    value: Cow<'s, Tensor<T>>,
    op: Op<T>,
}

/// Dynamic computation graph for one example.
///
/// Parameter nodes borrow their values from the store; everything else is
/// owned by the graph and dropped with it.
pub struct Graph<'s, T: Scalar> {
    store: Option<&'s ParamStore<T>>,
    nodes: Vec<Node<'s, T>>,
    grads: Vec<Option<Tensor<T>>>,
    param_nodes: HashMap<ParamId, NodeId>,
}

impl<'s, T: Scalar> Default for Graph<'s, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'s, T: Scalar> Graph<'s, T> {
    pub fn new() -> Self {
        Graph {
            store: None,
            nodes: Vec::new(),
            grads: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn with_params(store: &'s ParamStore<T>) -> Self {
        Graph {
            store: Some(store),
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// First element of a node's value; meant for scalar nodes.
    pub fn scalar(&self, id: NodeId) -> T {
        self.nodes[id.0].value.item()
    }

    /// Gradient of the last `backward` loss with respect to a node, if the
    /// node was reached.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    fn push(&mut self, value: Cow<'s, Tensor<T>>, op: Op<T>, name: &'static str) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn params(&self) -> Result<&'s ParamStore<T>> {
        self.store
            .ok_or_else(|| Error::Contract("graph has no parameter store".into()))
    }

    /// Input or constant leaf.
    pub fn input(&mut self, value: Tensor<T>) -> Result<NodeId> {
        self.push(Cow::Owned(value), Op::Leaf, "input")
    }

    pub fn param(&mut self, id: ParamId) -> Result<NodeId> {
        if let Some(&node) = self.param_nodes.get(&id) {
            return Ok(node);
        }
        let store = self.params()?;
        if id.0 >= store.len() {
            return Err(Error::Index {
                index: id.0,
                len: store.len(),
            });
        }
        let node = self.push(Cow::Borrowed(store.get(id)), Op::Param(id), "param")?;
        self.param_nodes.insert(id, node);
        Ok(node)
    }

    /// Row `row` of a 2-d parameter as a vector.
    pub fn gather_row(&mut self, id: ParamId, row: usize) -> Result<NodeId> {
        let table = self.params()?.get(id);
        if table.shape().len() != 2 {
            return Err(Error::dim("gather_row", table.shape(), &[row]));
        }
        if row >= table.rows() {
            return Err(Error::Index {
                index: row,
                len: table.rows(),
            });
        }
        let value = Tensor::vector(table.row(row).to_vec());
        self.push(Cow::Owned(value), Op::GatherRow(id, row), "gather_row")
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.cols() != bv.rows() {
            return Err(Error::dim("matmul", av.shape(), bv.shape()));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![T::zero(); m * n];
        let (ad, bd) = (av.data(), bv.data());
        for i in 0..m {
            for p in 0..k {
                let aip = ad[i * k + p];
                if aip == T::zero() {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &b) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                    *o += aip * b;
                }
            }
        }
        let value = Tensor::matrix(m, n, out)?;
        self.push(Cow::Owned(value), Op::MatMul(a, b), "matmul")
    }

    /// `w [m×k] · x [k] -> [m]`.
    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let (wv, xv) = (self.value(w), self.value(x));
        if wv.shape().len() != 2 || xv.shape().len() != 1 || wv.cols() != xv.len() {
            return Err(Error::dim("matvec", wv.shape(), xv.shape()));
        }
        let xd = xv.data();
        let out: Vec<T> = (0..wv.rows())
            .map(|r| wv.row(r).iter().zip(xd).fold(T::zero(), |acc, (&a, &b)| acc + a * b))
            .collect();
        self.push(Cow::Owned(Tensor::vector(out)), Op::MatVec(w, x), "matvec")
    }

    fn zip_same(&self, op: &'static str, a: NodeId, b: NodeId, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::dim(op, av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.zip_same("add", a, b, |x, y| x + y)?;
        self.push(Cow::Owned(v), Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.zip_same("sub", a, b, |x, y| x - y)?;
        self.push(Cow::Owned(v), Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.zip_same("mul", a, b, |x, y| x * y)?;
        self.push(Cow::Owned(v), Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> Result<NodeId> {
        let v = self.value(a).map(|x| x * c);
        self.push(Cow::Owned(v), Op::Scale(a, c), "scale")
    }

    pub fn add_scalar(&mut self, a: NodeId, c: T) -> Result<NodeId> {
        let v = self.value(a).map(|x| x + c);
        self.push(Cow::Owned(v), Op::AddScalar(a, c), "add_scalar")
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: NodeId) -> Result<NodeId> {
        let neg = self.scale(a, -T::one())?;
        self.add_scalar(neg, T::one())
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(sigmoid);
        self.push(Cow::Owned(v), Op::Sigmoid(a), "sigmoid")
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(T::tanh);
        self.push(Cow::Owned(v), Op::Tanh(a), "tanh")
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        if let Some(bad) = av.data().iter().find(|&&x| x <= T::zero()) {
            return Err(Error::Domain {
                op: "log",
                msg: format!("non-positive argument {bad}"),
            });
        }
        let v = av.map(T::ln);
        self.push(Cow::Owned(v), Op::Log(a), "log")
    }

    /// Softmax over a 1-d tensor, with max subtraction.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        if av.shape().len() != 1 || av.is_empty() {
            return Err(Error::dim("softmax", av.shape(), &[1]));
        }
        let v = Tensor::vector(softmax_slice(av.data()));
        self.push(Cow::Owned(v), Op::Softmax(a), "softmax")
    }

    /// Concatenates 1-d tensors.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero tensors".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            if pv.shape().len() != 1 {
                return Err(Error::dim("concat", pv.shape(), &[pv.len()]));
            }
            data.extend_from_slice(pv.data());
        }
        self.push(Cow::Owned(Tensor::vector(data)), Op::Concat(parts.to_vec()), "concat")
    }

    /// Packs scalar nodes into a 1-d tensor.
    pub fn stack(&mut self, items: &[NodeId]) -> Result<NodeId> {
        if items.is_empty() {
            return Err(Error::Contract("stack of zero scalars".into()));
        }
        let mut data = Vec::with_capacity(items.len());
        for &i in items {
            let iv = self.value(i);
            if iv.len() != 1 {
                return Err(Error::dim("stack", iv.shape(), &[]));
            }
            data.push(iv.item());
        }
        self.push(Cow::Owned(Tensor::vector(data)), Op::Stack(items.to_vec()), "stack")
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Cow::Owned(Tensor::scalar(s)), Op::Sum(a), "sum")
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::dim("dot", av.shape(), bv.shape()));
        }
        let s = av.data().iter().zip(bv.data()).fold(T::zero(), |acc, (&x, &y)| acc + x * y);
        self.push(Cow::Owned(Tensor::scalar(s)), Op::Dot(a, b), "dot")
    }

    pub fn index(&mut self, a: NodeId, i: usize) -> Result<NodeId> {
        let av = self.value(a);
        if i >= av.len() {
            return Err(Error::Index { index: i, len: av.len() });
        }
        let v = Tensor::scalar(av.data()[i]);
        self.push(Cow::Owned(v), Op::Index(a, i), "index")
    }

    /// Elementwise clamp; the gradient passes only where `lo <= x <= hi`.
    pub fn clamp(&mut self, a: NodeId, lo: T, hi: T) -> Result<NodeId> {
        let v = self.value(a).map(|x| x.max(lo).min(hi));
        self.push(Cow::Owned(v), Op::Clamp(a, lo, hi), "clamp")
    }

    pub fn custom(&mut self, op: Box<dyn CustomOp<T>>, inputs: &[NodeId]) -> Result<NodeId> {
        let vals: Vec<&Tensor<T>> = inputs.iter().map(|&i| self.value(i)).collect();
        let v = op.forward(&vals)?;
        self.push(Cow::Owned(v), Op::Custom(op, inputs.to_vec()), "custom")
    }

    /// Reverse pass from a scalar loss.
    ///
    /// Node gradients are recomputed from scratch on every call; parameter
    /// gradients are added into `grads`, so repeated calls accumulate there.
    /// Frozen parameters still pass gradient through but receive none.
    pub fn backward(&mut self, loss: NodeId, grads: Option<&mut Gradients<T>>) -> Result<()> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut node_grads: Vec<Option<Tensor<T>>> = Vec::new();
        node_grads.resize_with(self.nodes.len(), || None);
        node_grads[loss.0] = Some(lv.map(|_| T::one()));
        let mut param_grads = grads;

        for i in (0..=loss.0).rev() {
            let Some(g) = node_grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            let out = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::Param(pid) => {
                    if let Some(pg) = param_grads.as_deref_mut() {
                        if self.store.is_some_and(|s| s.is_trainable(*pid)) {
                            pg.get_mut(*pid).add_assign(&g);
                        }
                    }
                }
                Op::GatherRow(pid, row) => {
                    if let Some(pg) = param_grads.as_deref_mut() {
                        if self.store.is_some_and(|s| s.is_trainable(*pid)) {
                            let table = pg.get_mut(*pid);
                            let cols = table.cols();
                            let dst = &mut table.data_mut()[row * cols..(row + 1) * cols];
                            for (d, &x) in dst.iter_mut().zip(g.data()) {
                                *d += x;
                            }
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    let (ad, bd, gd) = (av.data(), bv.data(), g.data());
                    let mut da = vec![T::zero(); m * k];
                    let mut db = vec![T::zero(); k * n];
                    for r in 0..m {
                        for p in 0..k {
                            let mut acc = T::zero();
                            for c in 0..n {
                                acc += gd[r * n + c] * bd[p * n + c];
                                db[p * n + c] += ad[r * k + p] * gd[r * n + c];
                            }
                            da[r * k + p] = acc;
                        }
                    }
                    accumulate(&mut node_grads, *a, av.shape(), &da);
                    accumulate(&mut node_grads, *b, bv.shape(), &db);
                }
                Op::MatVec(w, x) => {
                    let (wv, xv) = (self.value(*w), self.value(*x));
                    let (m, k) = (wv.rows(), wv.cols());
                    let (wd, xd, gd) = (wv.data(), xv.data(), g.data());
                    let mut dw = vec![T::zero(); m * k];
                    let mut dx = vec![T::zero(); k];
                    for r in 0..m {
                        let gr = gd[r];
                        if gr == T::zero() {
                            continue;
                        }
                        let wrow = &wd[r * k..(r + 1) * k];
                        let dwrow = &mut dw[r * k..(r + 1) * k];
                        for c in 0..k {
                            dwrow[c] = gr * xd[c];
                            dx[c] += gr * wrow[c];
                        }
                    }
                    accumulate(&mut node_grads, *w, wv.shape(), &dw);
                    accumulate(&mut node_grads, *x, xv.shape(), &dx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut node_grads, *a, g.shape(), g.data());
                    accumulate(&mut node_grads, *b, g.shape(), g.data());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut node_grads, *a, g.shape(), g.data());
                    let neg: Vec<T> = g.data().iter().map(|&x| -x).collect();
                    accumulate(&mut node_grads, *b, g.shape(), &neg);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da: Vec<T> = g.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
                    let db: Vec<T> = g.data().iter().zip(av.data()).map(|(&x, &y)| x * y).collect();
                    accumulate(&mut node_grads, *a, g.shape(), &da);
                    accumulate(&mut node_grads, *b, g.shape(), &db);
                }
                Op::Scale(a, c) => {
                    let da: Vec<T> = g.data().iter().map(|&x| x * *c).collect();
                    accumulate(&mut node_grads, *a, g.shape(), &da);
                }
                Op::AddScalar(a, _) => accumulate(&mut node_grads, *a, g.shape(), g.data()),
                Op::Sigmoid(a) => {
                    let da: Vec<T> = g
                        .data()
                        .iter()
                        .zip(out.data())
                        .map(|(&x, &y)| x * y * (T::one() - y))
                        .collect();
                    accumulate(&mut node_grads, *a, g.shape(), &da);
                }
                Op::Tanh(a) => {
                    let da: Vec<T> = g
                        .data()
                        .iter()
                        .zip(out.data())
                        .map(|(&x, &y)| x * (T::one() - y * y))
                        .collect();
                    accumulate(&mut node_grads, *a, g.shape(), &da);
                }
                Op::Log(a) => {
                    let av = self.value(*a);
                    let da: Vec<T> = g.data().iter().zip(av.data()).map(|(&x, &y)| x / y).collect();
                    accumulate(&mut node_grads, *a, g.shape(), &da);
                }
                Op::Softmax(a) => {
                    let y = out.data();
                    let gy = g.data().iter().zip(y).fold(T::zero(), |acc, (&x, &p)| acc + x * p);
                    let da: Vec<T> = g.data().iter().zip(y).map(|(&x, &p)| p * (x - gy)).collect();
                    accumulate(&mut node_grads, *a, g.shape(), &da);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let pv = self.value(p);
                        let n = pv.len();
                        accumulate(&mut node_grads, p, pv.shape(), &g.data()[off..off + n]);
                        off += n;
                    }
                }
                Op::Stack(items) => {
                    for (j, &it) in items.iter().enumerate() {
                        accumulate(&mut node_grads, it, self.value(it).shape(), &g.data()[j..j + 1]);
                    }
                }
                Op::Sum(a) => {
                    let av = self.value(*a);
                    let da = vec![g.item(); av.len()];
                    accumulate(&mut node_grads, *a, av.shape(), &da);
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let gs = g.item();
                    let da: Vec<T> = bv.data().iter().map(|&y| gs * y).collect();
                    let db: Vec<T> = av.data().iter().map(|&x| gs * x).collect();
                    accumulate(&mut node_grads, *a, av.shape(), &da);
                    accumulate(&mut node_grads, *b, bv.shape(), &db);
                }
                Op::Index(a, j) => {
                    let av = self.value(*a);
                    let mut da = vec![T::zero(); av.len()];
                    da[*j] = g.item();
                    accumulate(&mut node_grads, *a, av.shape(), &da);
                }
                Op::Clamp(a, lo, hi) => {
                    let av = self.value(*a);
                    let da: Vec<T> = g
                        .data()
                        .iter()
                        .zip(av.data())
                        .map(|(&x, &v)| if v >= *lo && v <= *hi { x } else { T::zero() })
                        .collect();
                    accumulate(&mut node_grads, *a, g.shape(), &da);
                }
                Op::Custom(op, inputs) => {
                    let vals: Vec<&Tensor<T>> = inputs.iter().map(|&p| self.value(p)).collect();
                    let dins = op.backward(&vals, out, &g);
                    if dins.len() != inputs.len() {
                        return Err(Error::Contract(format!(
                            "custom op {} returned {} gradients for {} inputs",
                            op.name(),
                            dins.len(),
                            inputs.len()
                        )));
                    }
                    for (&p, d) in inputs.iter().zip(&dins) {
                        accumulate(&mut node_grads, p, d.shape(), d.data());
                    }
                }
            }
            node_grads[i] = Some(g);
        }
        self.grads = node_grads;
        Ok(())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], id: NodeId, shape: &[usize], delta: &[T]) {
    match &mut grads[id.0] {
        Some(t) => {
            for (a, &b) in t.data_mut().iter_mut().zip(delta) {
                *a += b;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), delta.to_vec()).expect("gradient shape"));
        }
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_slice<T: Scalar>(xs: &[T]) -> Vec<T> {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = xs.iter().map(|&x| (x - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}
