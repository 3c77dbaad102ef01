//! Recorded reverse-mode compute graph.
//!
//! A [`Graph`] borrows a [`ParamStore`] immutably while it records the forward
//! pass. [`Graph::backward`] consumes the graph, visits the recorded operations
//! in exact reverse order, accumulates parameter gradients into a
//! [`GradStore`] and frees each node's value as soon as it is no longer
//! needed. Shape mismatches inside graph ops are programming errors and panic;
//! model entry points validate widths before recording.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels;
use super::params::{GradStore, ParamId, ParamStore};
use super::{Result, Tensor, TensorError};
use crate::scalar::Scalar;

/// Handle to a node recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var },
    Affine { w: Var, x: Var, b: Option<Var> },
    AffineRows { x: Var, w: Var, b: Var },
    VecMat { x: Var, a: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    Square(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Sum(Var),
    Mean(Var),
    Pick { x: Var, index: usize },
    Dot(Var, Var),
    AddN(Vec<Var>),
    GatherRows { src: Var, ids: Vec<usize> },
    StackRows(Vec<Var>),
    RowMean(Var),
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Tensor<T>, inv_std: Vec<T>, train: bool },
    Dropout { x: Var, mask: Tensor<T> },
    Bce { o: Var, targets: Vec<T>, eps: T },
}

struct Node<T> {
    value: Option<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Statistics of one training-mode batch normalization call, for updating
/// running averages.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

pub struct Graph<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
    train: bool,
    rng: ChaCha8Rng,
    fault: Option<TensorError>,
}

impl<'p, T: Scalar> Graph<'p, T> {
    /// Evaluation-mode graph with gradient recording enabled.
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            grad_enabled: true,
            train: false,
            rng: ChaCha8Rng::seed_from_u64(0),
            fault: None,
        }
    }

    /// Training-mode graph: dropout is active and draws from a seeded stream.
    pub fn training(params: &'p ParamStore<T>, seed: u64) -> Self {
        let mut g = Self::new(params);
        g.train = true;
        g.rng = ChaCha8Rng::seed_from_u64(seed);
        g
    }

    /// Graph that records values only; `backward` produces no gradients.
    pub fn inference(params: &'p ParamStore<T>) -> Self {
        let mut g = Self::new(params);
        g.grad_enabled = false;
        g
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    /// Restarts the dropout stream; used to make per-example randomness
    /// independent of how examples are grouped into graphs.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// First numeric fault recorded during the forward pass, if any.
    pub fn check(&self) -> Result<()> {
        match &self.fault {
            Some(e) => Err(e.clone()),
            None => Ok(()),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            (None, _) => panic!("value of node {} already released", v.0),
        }
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v).item()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        if self.fault.is_none() && !value.is_finite() {
            self.fault = Some(TensorError::NonFinite { op: name.to_string() });
        }
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad: needs_grad && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    fn any(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.needs(*v))
    }

    // ----- leaves -----------------------------------------------------------

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push("constant", value, Op::Leaf, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    /// Copy of `x` that blocks gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let v = self.value(x).clone();
        self.constant(v)
    }

    // ----- linear algebra ---------------------------------------------------

    /// `[m, k] × [k, n] → [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(
            sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0],
            "matmul shape mismatch {sa:?} x {sb:?}"
        );
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        kernels::matmul(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let needs = self.any(&[a, b]);
        self.push("matmul", Tensor::from_parts(vec![m, n], out), Op::MatMul { a, b }, needs)
    }

    /// `w[m, n] · x[n] (+ b[m]) → [m]`.
    pub fn affine(&mut self, w: Var, x: Var, b: Option<Var>) -> Var {
        let sw = self.shape(w).to_vec();
        let n = self.value(x).len();
        assert!(sw.len() == 2 && sw[1] == n, "affine shape mismatch {sw:?} · [{n}]");
        let m = sw[0];
        let mut out = match b {
            Some(b) => {
                assert_eq!(self.value(b).len(), m, "affine bias length");
                self.value(b).data().to_vec()
            }
            None => vec![T::zero(); m],
        };
        kernels::matvec(self.value(w).data(), self.value(x).data(), &mut out, n);
        let needs = self.any(&[w, x]) || b.is_some_and(|b| self.needs(b));
        self.push("affine", Tensor::vector(out), Op::Affine { w, x, b }, needs)
    }

    /// Row-batched affine map: `x[B, in] · w[out, in]ᵀ + b[out] → [B, out]`.
    pub fn affine_rows(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        assert!(
            sx.len() == 2 && sw.len() == 2 && sx[1] == sw[1] && self.value(b).len() == sw[0],
            "affine_rows shape mismatch {sx:?} · {sw:?}ᵀ"
        );
        let (rows, inp, outw) = (sx[0], sx[1], sw[0]);
        let bias = self.value(b).data();
        let mut out = Vec::with_capacity(rows * outw);
        for _ in 0..rows {
            out.extend_from_slice(bias);
        }
        kernels::matmul_nt(self.value(x).data(), self.value(w).data(), &mut out, rows, inp, outw);
        let needs = self.any(&[x, w, b]);
        self.push(
            "affine_rows",
            Tensor::from_parts(vec![rows, outw], out),
            Op::AffineRows { x, w, b },
            needs,
        )
    }

    /// `x[m] · a[m, n] → [n]` (that is, `aᵀ x`).
    pub fn vecmat(&mut self, x: Var, a: Var) -> Var {
        let sa = self.shape(a).to_vec();
        let m = self.value(x).len();
        assert!(sa.len() == 2 && sa[0] == m, "vecmat shape mismatch [{m}] · {sa:?}");
        let n = sa[1];
        let mut out = vec![T::zero(); n];
        kernels::matvec_t(self.value(a).data(), self.value(x).data(), &mut out, n);
        let needs = self.any(&[x, a]);
        self.push("vecmat", Tensor::vector(out), Op::VecMat { x, a }, needs)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).len(), self.value(b).len(), "dot length mismatch");
        let d = kernels::dot(self.value(a).data(), self.value(b).data());
        let needs = self.any(&[a, b]);
        self.push("dot", Tensor::scalar(d), Op::Dot(a, b), needs)
    }

    // ----- elementwise ------------------------------------------------------

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "{name} shape mismatch");
        let out: Vec<T> = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let shape = ta.shape().to_vec();
        let needs = self.any(&[a, b]);
        self.push(name, Tensor::from_parts(shape, out), op, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, name: &'static str, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let t = self.value(x);
        let out: Vec<T> = t.data().iter().map(|v| f(*v)).collect();
        let shape = t.shape().to_vec();
        let needs = self.needs(x);
        self.push(name, Tensor::from_parts(shape, out), op, needs)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.map("scale", x, |v| v * c, Op::Scale(x, c))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map("sigmoid", x, kernels::sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map("tanh", x, T::tanh, Op::Tanh(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.map("square", x, |v| v * v, Op::Square(x))
    }

    /// Natural log; a nonpositive input records a domain fault.
    pub fn log(&mut self, x: Var) -> Var {
        if self.fault.is_none() && self.value(x).data().iter().any(|v| *v <= T::zero()) {
            self.fault = Some(TensorError::Domain {
                op: "log",
                detail: "nonpositive input".into(),
            });
        }
        self.map("log", x, T::ln, Op::Log(x))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let mut out = vec![T::zero(); t.len()];
        kernels::softmax(t.data(), &mut out);
        let needs = self.needs(x);
        self.push("softmax", Tensor::vector(out), Op::Softmax(x), needs)
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let mut out = vec![T::zero(); t.len()];
        kernels::log_softmax(t.data(), &mut out);
        let needs = self.needs(x);
        self.push("log_softmax", Tensor::vector(out), Op::LogSoftmax(x), needs)
    }

    /// Multiplies by a fixed inverted-dropout mask in training mode; identity
    /// otherwise or when `rate == 0`.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Var {
        assert!((0.0..1.0).contains(&rate), "dropout rate must lie in [0, 1)");
        if !self.train || rate == 0.0 {
            return x;
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let shape = self.shape(x).to_vec();
        let n = self.value(x).len();
        let mask: Vec<T> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let out: Vec<T> = self.value(x).data().iter().zip(&mask).map(|(v, m)| *v * *m).collect();
        let mask = Tensor::from_parts(shape.clone(), mask);
        let needs = self.needs(x);
        self.push("dropout", Tensor::from_parts(shape, out), Op::Dropout { x, mask }, needs)
    }

    // ----- structure --------------------------------------------------------

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(self.value(*p).data());
        }
        let needs = self.any(parts);
        self.push("concat", Tensor::vector(out), Op::Concat(parts.to_vec()), needs)
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.value(x).data()[start..start + len].to_vec();
        let needs = self.needs(x);
        self.push("slice", Tensor::vector(out), Op::Slice { x, start }, needs)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let needs = self.needs(x);
        self.push("sum", Tensor::scalar(s), Op::Sum(x), needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s: T = t.data().iter().copied().sum::<T>() / T::lit(t.len() as f64);
        let needs = self.needs(x);
        self.push("mean", Tensor::scalar(s), Op::Mean(x), needs)
    }

    pub fn pick(&mut self, x: Var, index: usize) -> Var {
        let v = self.value(x).data()[index];
        let needs = self.needs(x);
        self.push("pick", Tensor::scalar(v), Op::Pick { x, index }, needs)
    }

    /// Elementwise sum of same-shape nodes.
    pub fn add_n(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "add_n of nothing");
        let shape = self.shape(parts[0]).to_vec();
        let mut out = self.value(parts[0]).data().to_vec();
        for p in &parts[1..] {
            let t = self.value(*p);
            assert_eq!(t.shape(), &shape[..], "add_n shape mismatch");
            for (o, v) in out.iter_mut().zip(t.data()) {
                *o += *v;
            }
        }
        let needs = self.any(parts);
        self.push("add_n", Tensor::from_parts(shape, out), Op::AddN(parts.to_vec()), needs)
    }

    /// Row `id` of a matrix as a vector.
    pub fn row(&mut self, src: Var, id: usize) -> Var {
        let t = self.value(src);
        assert!(t.shape().len() == 2 && id < t.rows(), "row {id} out of range {:?}", t.shape());
        let out = t.row(id).to_vec();
        let needs = self.needs(src);
        self.push("row", Tensor::vector(out), Op::GatherRows { src, ids: vec![id] }, needs)
    }

    /// Rows `ids` of a matrix as a `[ids.len(), cols]` matrix, or entries of a
    /// vector as a vector. Gradients scatter-add back onto exactly those rows.
    pub fn gather_rows(&mut self, src: Var, ids: &[usize]) -> Var {
        let t = self.value(src);
        let (rows, cols) = (t.rows(), t.cols());
        let is_vec = t.shape().len() == 1;
        let (rows, cols) = if is_vec { (t.len(), 1) } else { (rows, cols) };
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            assert!(i < rows, "gather index {i} out of range {rows}");
            out.extend_from_slice(&t.data()[i * cols..(i + 1) * cols]);
        }
        let shape = if is_vec { vec![ids.len()] } else { vec![ids.len(), cols] };
        let needs = self.needs(src);
        self.push(
            "gather_rows",
            Tensor::from_parts(shape, out),
            Op::GatherRows { src, ids: ids.to_vec() },
            needs,
        )
    }

    /// Stacks equal-length vectors into a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty(), "stack_rows of nothing");
        let n = self.value(rows[0]).len();
        let mut out = Vec::with_capacity(rows.len() * n);
        for r in rows {
            let t = self.value(*r);
            assert_eq!(t.len(), n, "stack_rows width mismatch");
            out.extend_from_slice(t.data());
        }
        let needs = self.any(rows);
        self.push(
            "stack_rows",
            Tensor::from_parts(vec![rows.len(), n], out),
            Op::StackRows(rows.to_vec()),
            needs,
        )
    }

    /// Mean over the rows of a `[m, n]` matrix.
    pub fn row_mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (m, n) = (t.rows(), t.cols());
        let mut out = vec![T::zero(); n];
        for i in 0..m {
            for (o, v) in out.iter_mut().zip(t.row(i)) {
                *o += *v;
            }
        }
        let inv = T::one() / T::lit(m as f64);
        for o in &mut out {
            *o *= inv;
        }
        let needs = self.needs(x);
        self.push("row_mean", Tensor::vector(out), Op::RowMean(x), needs)
    }

    /// Batch normalization over the rows of `x[B, n]` using batch statistics
    /// (biased variance). Returns the statistics for running averages.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> (Var, BatchStats<T>) {
        let t = self.value(x);
        let (b, n) = (t.rows(), t.cols());
        let inv_b = T::one() / T::lit(b as f64);
        let mut mean = vec![T::zero(); n];
        for i in 0..b {
            for (m, v) in mean.iter_mut().zip(t.row(i)) {
                *m += *v;
            }
        }
        mean.iter_mut().for_each(|m| *m *= inv_b);
        let mut var = vec![T::zero(); n];
        for i in 0..b {
            for ((s, v), m) in var.iter_mut().zip(t.row(i)).zip(&mean) {
                *s += (*v - *m) * (*v - *m);
            }
        }
        var.iter_mut().for_each(|s| *s *= inv_b);
        let inv_std: Vec<T> = var.iter().map(|s| T::one() / (*s + T::lit(eps)).sqrt()).collect();
        let y = self.normalize(x, gamma, beta, &mean, inv_std, true);
        (y, BatchStats { mean, var })
    }

    /// Batch normalization with frozen statistics: a fixed affine map of `x`.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], var: &[T], eps: f64) -> Var {
        let inv_std: Vec<T> = var.iter().map(|s| T::one() / (*s + T::lit(eps)).sqrt()).collect();
        self.normalize(x, gamma, beta, mean, inv_std, false)
    }

    fn normalize(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], inv_std: Vec<T>, train: bool) -> Var {
        let t = self.value(x);
        let shape = t.shape().to_vec();
        let (b, n) = (t.rows(), t.cols());
        let (g, be) = (self.value(gamma).data(), self.value(beta).data());
        assert!(g.len() == n && be.len() == n && mean.len() == n, "batch_norm width mismatch");
        let mut xhat = Vec::with_capacity(b * n);
        let mut out = Vec::with_capacity(b * n);
        for i in 0..b {
            for (j, v) in t.row(i).iter().enumerate() {
                let h = (*v - mean[j]) * inv_std[j];
                xhat.push(h);
                out.push(g[j] * h + be[j]);
            }
        }
        let needs = self.any(&[x, gamma, beta]);
        let xhat = Tensor::from_parts(shape.clone(), xhat);
        self.push(
            "batch_norm",
            Tensor::from_parts(shape, out),
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train },
            needs,
        )
    }

    /// Summed binary cross-entropy of probabilities `o` against fixed targets,
    /// with `o` clamped to `[eps, 1 - eps]`.
    pub fn bce(&mut self, o: Var, targets: &[T], eps: T) -> Var {
        let t = self.value(o);
        assert_eq!(t.len(), targets.len(), "bce length mismatch");
        let one = T::one();
        let mut loss = T::zero();
        for (p, y) in t.data().iter().zip(targets) {
            let p = p.max(eps).min(one - eps);
            loss -= *y * p.ln() + (one - *y) * (one - p).ln();
        }
        let needs = self.needs(o);
        self.push(
            "bce",
            Tensor::scalar(loss),
            Op::Bce { o, targets: targets.to_vec(), eps },
            needs,
        )
    }

    // ----- backward ---------------------------------------------------------

    /// Propagates d(loss)/d(·) in exact reverse recording order, accumulating
    /// parameter gradients into `grads`. The graph is consumed and its
    /// activations are released as the sweep passes them.
    pub fn backward(self, loss: Var, grads: &mut GradStore<T>) -> Result<()> {
        self.check()?;
        let loss_shape = self.shape(loss).to_vec();
        if self.value(loss).len() != 1 {
            return Err(TensorError::NotScalar(loss_shape));
        }
        let params = self.params;
        let mut nodes = self.nodes;
        nodes.truncate(loss.0 + 1);
        let mut node_grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(nodes.len());
        node_grads.resize_with(nodes.len(), || None);
        if !nodes[loss.0].needs_grad {
            return Ok(());
        }
        node_grads[loss.0] = Some(Tensor::full(&loss_shape, T::one()));

        for i in (0..nodes.len()).rev() {
            let Some(g) = node_grads[i].take() else {
                nodes[i].value = None;
                continue;
            };
            {
                let mut ctx = Backprop {
                    params,
                    nodes: &nodes,
                    node_grads: &mut node_grads,
                    grads,
                };
                ctx.propagate(i, g.data());
            }
            nodes[i].value = None;
        }
        Ok(())
    }
}

struct Backprop<'a, 'p, T: Scalar> {
    params: &'p ParamStore<T>,
    nodes: &'a [Node<T>],
    node_grads: &'a mut [Option<Tensor<T>>],
    grads: &'a mut GradStore<T>,
}

impl<T: Scalar> Backprop<'_, '_, T> {
    fn val(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            (None, _) => panic!("node {} released before its consumers", v.0),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Mutable gradient slot of `v`: the parameter's buffer for parameter
    /// nodes, a lazily zeroed node buffer otherwise.
    fn slot(&mut self, v: Var) -> &mut [T] {
        if let Op::Param(id) = self.nodes[v.0].op {
            return self.grads.get_mut(id).data_mut();
        }
        if self.node_grads[v.0].is_none() {
            let shape = self.val(v).shape().to_vec();
            self.node_grads[v.0] = Some(Tensor::zeros(&shape));
        }
        self.node_grads[v.0].as_mut().unwrap().data_mut()
    }

    fn add_into(&mut self, v: Var, g: &[T]) {
        if self.wants(v) {
            for (s, x) in self.slot(v).iter_mut().zip(g) {
                *s += *x;
            }
        }
    }

    fn propagate(&mut self, i: usize, g: &[T]) {
        let nodes = self.nodes;
        let node = &nodes[i];
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul { a, b } => {
                let (sa, sb) = (self.val(*a).shape().to_vec(), self.val(*b).shape().to_vec());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.wants(*a) {
                    let bv = nodes_value(self.nodes, self.params, *b);
                    kernels::matmul_nt(g, bv.data(), self.slot(*a), m, n, k);
                }
                if self.wants(*b) {
                    let av = nodes_value(self.nodes, self.params, *a);
                    kernels::matmul_tn(av.data(), g, self.slot(*b), m, k, n);
                }
            }
            Op::Affine { w, x, b } => {
                let n = self.val(*x).len();
                if self.wants(*w) {
                    let xv = nodes_value(self.nodes, self.params, *x);
                    kernels::outer_acc(g, xv.data(), self.slot(*w), n);
                }
                if self.wants(*x) {
                    let wv = nodes_value(self.nodes, self.params, *w);
                    kernels::matvec_t(wv.data(), g, self.slot(*x), n);
                }
                if let Some(b) = b {
                    self.add_into(*b, g);
                }
            }
            Op::AffineRows { x, w, b } => {
                let (sx, sw) = (self.val(*x).shape().to_vec(), self.val(*w).shape().to_vec());
                let (rows, inp, outw) = (sx[0], sx[1], sw[0]);
                if self.wants(*x) {
                    let wv = nodes_value(self.nodes, self.params, *w);
                    kernels::matmul(g, wv.data(), self.slot(*x), rows, outw, inp);
                }
                if self.wants(*w) {
                    let xv = nodes_value(self.nodes, self.params, *x);
                    kernels::matmul_tn(g, xv.data(), self.slot(*w), rows, outw, inp);
                }
                if self.wants(*b) {
                    let slot = self.slot(*b);
                    for r in 0..rows {
                        for (s, v) in slot.iter_mut().zip(&g[r * outw..(r + 1) * outw]) {
                            *s += *v;
                        }
                    }
                }
            }
            Op::VecMat { x, a } => {
                let n = self.val(*a).cols();
                if self.wants(*x) {
                    let av = nodes_value(self.nodes, self.params, *a);
                    kernels::matvec(av.data(), g, self.slot(*x), n);
                }
                if self.wants(*a) {
                    let xv = nodes_value(self.nodes, self.params, *x);
                    kernels::outer_acc(xv.data(), g, self.slot(*a), n);
                }
            }
            Op::Add(a, b) => {
                self.add_into(*a, g);
                self.add_into(*b, g);
            }
            Op::Sub(a, b) => {
                self.add_into(*a, g);
                if self.wants(*b) {
                    for (s, x) in self.slot(*b).iter_mut().zip(g) {
                        *s -= *x;
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let bv = nodes_value(self.nodes, self.params, *b);
                    for ((s, x), y) in self.slot(*a).iter_mut().zip(g).zip(bv.data()) {
                        *s += *x * *y;
                    }
                }
                if self.wants(*b) {
                    let av = nodes_value(self.nodes, self.params, *a);
                    for ((s, x), y) in self.slot(*b).iter_mut().zip(g).zip(av.data()) {
                        *s += *x * *y;
                    }
                }
            }
            Op::Scale(x, c) => {
                if self.wants(*x) {
                    for (s, v) in self.slot(*x).iter_mut().zip(g) {
                        *s += *v * *c;
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = node.value.as_ref().unwrap();
                if self.wants(*x) {
                    for ((s, v), yv) in self.slot(*x).iter_mut().zip(g).zip(y.data()) {
                        *s += *v * *yv * (T::one() - *yv);
                    }
                }
            }
            Op::Tanh(x) => {
                let y = node.value.as_ref().unwrap();
                if self.wants(*x) {
                    for ((s, v), yv) in self.slot(*x).iter_mut().zip(g).zip(y.data()) {
                        *s += *v * (T::one() - *yv * *yv);
                    }
                }
            }
            Op::Log(x) => {
                if self.wants(*x) {
                    let xv = nodes_value(self.nodes, self.params, *x);
                    for ((s, v), xi) in self.slot(*x).iter_mut().zip(g).zip(xv.data()) {
                        *s += *v / *xi;
                    }
                }
            }
            Op::Square(x) => {
                if self.wants(*x) {
                    let xv = nodes_value(self.nodes, self.params, *x);
                    let two = T::lit(2.0);
                    for ((s, v), xi) in self.slot(*x).iter_mut().zip(g).zip(xv.data()) {
                        *s += two * *v * *xi;
                    }
                }
            }
            Op::Softmax(x) => {
                let y = node.value.as_ref().unwrap();
                if self.wants(*x) {
                    let gy = kernels::dot(g, y.data());
                    for ((s, v), yv) in self.slot(*x).iter_mut().zip(g).zip(y.data()) {
                        *s += *yv * (*v - gy);
                    }
                }
            }
            Op::LogSoftmax(x) => {
                let y = node.value.as_ref().unwrap();
                if self.wants(*x) {
                    let total: T = g.iter().copied().sum();
                    for ((s, v), yv) in self.slot(*x).iter_mut().zip(g).zip(y.data()) {
                        *s += *v - yv.exp() * total;
                    }
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = self.val(*p).len();
                    self.add_into(*p, &g[off..off + len]);
                    off += len;
                }
            }
            Op::Slice { x, start } => {
                if self.wants(*x) {
                    let slot = self.slot(*x);
                    for (s, v) in slot[*start..*start + g.len()].iter_mut().zip(g) {
                        *s += *v;
                    }
                }
            }
            Op::Sum(x) => {
                if self.wants(*x) {
                    let g0 = g[0];
                    self.slot(*x).iter_mut().for_each(|s| *s += g0);
                }
            }
            Op::Mean(x) => {
                if self.wants(*x) {
                    let n = self.val(*x).len();
                    let g0 = g[0] / T::lit(n as f64);
                    self.slot(*x).iter_mut().for_each(|s| *s += g0);
                }
            }
            Op::Pick { x, index } => {
                if self.wants(*x) {
                    self.slot(*x)[*index] += g[0];
                }
            }
            Op::Dot(a, b) => {
                if self.wants(*a) {
                    let bv = nodes_value(self.nodes, self.params, *b);
                    kernels::axpy(g[0], bv.data(), self.slot(*a));
                }
                if self.wants(*b) {
                    let av = nodes_value(self.nodes, self.params, *a);
                    kernels::axpy(g[0], av.data(), self.slot(*b));
                }
            }
            Op::AddN(parts) => {
                for p in parts {
                    self.add_into(*p, g);
                }
            }
            Op::GatherRows { src, ids } => {
                if self.wants(*src) {
                    let cols = g.len() / ids.len().max(1);
                    let slot = self.slot(*src);
                    for (r, &id) in ids.iter().enumerate() {
                        for (s, v) in slot[id * cols..(id + 1) * cols].iter_mut().zip(&g[r * cols..(r + 1) * cols]) {
                            *s += *v;
                        }
                    }
                }
            }
            Op::StackRows(rows) => {
                let n = g.len() / rows.len();
                for (r, v) in rows.iter().enumerate() {
                    self.add_into(*v, &g[r * n..(r + 1) * n]);
                }
            }
            Op::RowMean(x) => {
                if self.wants(*x) {
                    let m = self.val(*x).rows();
                    let inv = T::one() / T::lit(m as f64);
                    let slot = self.slot(*x);
                    let n = g.len();
                    for r in 0..m {
                        for (s, v) in slot[r * n..(r + 1) * n].iter_mut().zip(g) {
                            *s += *v * inv;
                        }
                    }
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let (b, n) = (xhat.rows(), xhat.cols());
                let mut sum_g = vec![T::zero(); n];
                let mut sum_gx = vec![T::zero(); n];
                for r in 0..b {
                    for j in 0..n {
                        let gv = g[r * n + j];
                        sum_g[j] += gv;
                        sum_gx[j] += gv * xhat.data()[r * n + j];
                    }
                }
                self.add_into(*beta, &sum_g);
                self.add_into(*gamma, &sum_gx);
                if self.wants(*x) {
                    let gam = nodes_value(self.nodes, self.params, *gamma).data();
                    let bt = T::lit(b as f64);
                    let slot = self.slot(*x);
                    for r in 0..b {
                        for j in 0..n {
                            let idx = r * n + j;
                            let scale = gam[j] * inv_std[j];
                            slot[idx] += if *train {
                                scale / bt * (bt * g[idx] - sum_g[j] - xhat.data()[idx] * sum_gx[j])
                            } else {
                                scale * g[idx]
                            };
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if self.wants(*x) {
                    for ((s, v), m) in self.slot(*x).iter_mut().zip(g).zip(mask.data()) {
                        *s += *v * *m;
                    }
                }
            }
            Op::Bce { o, targets, eps } => {
                if self.wants(*o) {
                    let ov = nodes_value(self.nodes, self.params, *o);
                    let one = T::one();
                    let g0 = g[0];
                    for ((s, p), y) in self.slot(*o).iter_mut().zip(ov.data()).zip(targets) {
                        if *p > *eps && *p < one - *eps {
                            *s += g0 * (-*y / *p + (one - *y) / (one - *p));
                        }
                    }
                }
            }
        }
    }
}

fn nodes_value<'a, T: Scalar>(nodes: &'a [Node<T>], params: &'a ParamStore<T>, v: Var) -> &'a Tensor<T> {
    let node = &nodes[v.0];
    match (&node.value, &node.op) {
        (Some(t), _) => t,
        (None, Op::Param(id)) => params.get(*id),
        (None, _) => panic!("node {} released before its consumers", v.0),
    }
}
