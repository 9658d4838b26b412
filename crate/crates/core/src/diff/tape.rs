//! Tensor-level reverse-mode differentiation.
//!
//! Every operation appends a node holding its value. Nodes are appended in
//! evaluation order, so walking them backwards is a valid reverse
//! topological order. Parameters are bound from a [`ParamStore`] by name and
//! receive gradients; everything else is a constant or an intermediate.

use indexmap::IndexMap;

use super::kernels;
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::scalar::Scalar;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<T> {
    Constant,
    Param,
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        k: usize,
    },
    Conv1dOneHot {
        hot: Vec<u32>,
        channels: usize,
        w: Var,
        b: Option<Var>,
        k: usize,
    },
    Add(Var, Var),
    Hadamard(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    MeanPool(Var),
    MeanOf(Vec<Var>),
    Mse(Var, Var),
    SqDist(Var, Var),
    TwoClassNll {
        d_target: Var,
        d_null: Var,
        target_label: bool,
    },
    Scale(Var, T),
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
}

/// Recorded computation graph.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: IndexMap<String, Var>,
}

/// Gradients of a scalar with respect to every parameter bound on the tape,
/// keyed by parameter name in binding order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    grads: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn from_map(grads: IndexMap<String, Tensor<T>>) -> Self {
        Self { grads }
    }

    /// `self += scale · other`, adding entries missing from `self`.
    pub fn accumulate(&mut self, other: &Gradients<T>, scale: T) {
        for (name, g) in &other.grads {
            match self.grads.get_mut(name) {
                Some(acc) => {
                    for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += scale * v;
                    }
                }
                None => {
                    self.grads.insert(name.clone(), g.map(|v| v * scale));
                }
            }
        }
    }

    pub fn empty() -> Self {
        Self {
            grads: IndexMap::new(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.values().all(Tensor::is_finite)
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: IndexMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Position to later [`rewind`](Self::rewind) to.
    pub fn checkpoint(&self) -> usize {
        self.nodes.len()
    }

    /// Drops every node recorded after `mark`. Parameters bound before the
    /// mark stay bound.
    pub fn rewind(&mut self, mark: usize) {
        self.nodes.truncate(mark);
        self.params.retain(|_, v| v.0 < mark);
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Constant, value)
    }

    /// Binds parameter `name` from `store`; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let value = store
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"))
            .clone();
        let v = self.push(Op::Param, value);
        self.params.insert(name.to_string(), v);
        v
    }

    /// Binds every parameter of `store` in insertion order.
    pub fn bind_all(&mut self, store: &ParamStore<T>) {
        for name in store.names() {
            self.param(store, name);
        }
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.get(name).copied()
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        assert_eq!(xs.len(), 2, "conv1d input must be L×Cin, got {xs:?}");
        assert_eq!(ws.len(), 3, "conv1d kernel must be k×Cin×Cout, got {ws:?}");
        let (len, cin) = (xs[0], xs[1]);
        let (k, wcin, cout) = (ws[0], ws[1], ws[2]);
        assert!(k % 2 == 1, "conv1d kernel width must be odd, got {k}");
        assert_eq!(cin, wcin, "conv1d channel mismatch");
        if let Some(b) = b {
            assert_eq!(self.value(b).shape(), [cout], "conv1d bias shape");
        }
        let mut out = Tensor::zeros(&[len, cout]);
        kernels::conv1d(
            self.value(x).data(),
            len,
            cin,
            self.value(w).data(),
            k,
            cout,
            b.map(|b| self.value(b).data()),
            out.data_mut(),
        );
        self.push(Op::Conv1d { x, w, b, k }, out)
    }

    /// Convolution whose input is the one-hot matrix with `hot[p]` set at
    /// row `p`. The input is data, so only `w` and `b` receive gradients.
    pub fn conv1d_onehot(&mut self, hot: &[u32], channels: usize, w: Var, b: Option<Var>) -> Var {
        let ws = self.value(w).shape();
        assert_eq!(ws.len(), 3, "conv1d kernel must be k×Cin×Cout, got {ws:?}");
        let (k, wcin, cout) = (ws[0], ws[1], ws[2]);
        assert!(k % 2 == 1, "conv1d kernel width must be odd, got {k}");
        assert_eq!(channels, wcin, "conv1d channel mismatch");
        assert!(
            hot.iter().all(|&h| (h as usize) < channels),
            "one-hot index out of range"
        );
        let mut out = Tensor::zeros(&[hot.len(), cout]);
        kernels::conv1d_onehot(
            hot,
            channels,
            self.value(w).data(),
            k,
            cout,
            b.map(|b| self.value(b).data()),
            out.data_mut(),
        );
        self.push(
            Op::Conv1dOneHot {
                hot: hot.to_vec(),
                channels,
                w,
                b,
                k,
            },
            out,
        )
    }

    fn zip_same(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "elementwise shape mismatch");
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_same(a, b, |x, y| x + y);
        self.push(Op::Add(a, b), out)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_same(a, b, |x, y| x * y);
        self.push(Op::Hadamard(a, b), out)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(kernels::sigmoid);
        self.push(Op::Sigmoid(x), out)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(T::tanh);
        self.push(Op::Tanh(x), out)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(Op::Scale(x, s), out)
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xs, ws, bs) = (
            self.value(x).shape(),
            self.value(w).shape(),
            self.value(b).shape(),
        );
        assert_eq!(xs.len(), 1, "dense input must be a vector");
        assert_eq!(ws, [xs[0], bs[0]], "dense weight shape");
        let mut out = Tensor::zeros(bs);
        kernels::dense(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            out.data_mut(),
        );
        self.push(Op::Dense { x, w, b }, out)
    }

    /// Mean over the leading (position) axis of an `L × C` tensor.
    pub fn mean_pool(&mut self, x: Var) -> Var {
        let xs = self.value(x).shape();
        assert_eq!(xs.len(), 2, "mean_pool input must be L×C");
        let (rows, cols) = (xs[0], xs[1]);
        assert!(rows > 0, "mean_pool over zero rows");
        let mut out = Tensor::zeros(&[cols]);
        kernels::mean_rows(self.value(x).data(), rows, cols, out.data_mut());
        self.push(Op::MeanPool(x), out)
    }

    /// Elementwise arithmetic mean of equally shaped tensors.
    pub fn mean_of(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "mean of an empty sequence");
        let shape = self.value(xs[0]).shape().to_vec();
        let mut acc = Tensor::zeros(&shape);
        for &x in xs {
            let t = self.value(x);
            assert_eq!(t.shape(), &shape[..], "mean_of shape mismatch");
            for (a, &v) in acc.data_mut().iter_mut().zip(t.data()) {
                *a += v;
            }
        }
        let inv = T::one() / T::of(xs.len() as f64);
        let out = acc.map(|v| v * inv);
        self.push(Op::MeanOf(xs.to_vec()), out)
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "mse shape mismatch");
        let n = T::of(ta.len() as f64);
        let s = ta
            .data()
            .iter()
            .zip(tb.data())
            .fold(T::zero(), |s, (&x, &y)| s + (x - y) * (x - y));
        self.push(Op::Mse(a, b), Tensor::scalar(s / n))
    }

    /// Squared Euclidean distance.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "sq_dist shape mismatch");
        let s = ta
            .data()
            .iter()
            .zip(tb.data())
            .fold(T::zero(), |s, (&x, &y)| s + (x - y) * (x - y));
        self.push(Op::SqDist(a, b), Tensor::scalar(s))
    }

    /// `−log softmax(−d)[label]` over the two distances.
    pub fn two_class_nll(&mut self, d_target: Var, d_null: Var, target_label: bool) -> Var {
        let (loss, _) = kernels::two_class_nll(
            self.value(d_target).item(),
            self.value(d_null).item(),
            target_label,
        );
        self.push(
            Op::TwoClassNll {
                d_target,
                d_null,
                target_label,
            },
            Tensor::scalar(loss),
        )
    }

    /// Reverse sweep from the scalar `loss`. Returns a gradient for every
    /// bound parameter, zero where the loss does not depend on it.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(
            self.value(loss).len(),
            1,
            "backward needs a scalar loss, got shape {:?}",
            self.value(loss).shape()
        );
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::new(self.value(loss).shape(), vec![T::one()]));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let mut out = IndexMap::with_capacity(self.params.len());
        for (name, &v) in &self.params {
            let g = grads
                .get_mut(v.0)
                .and_then(Option::take)
                .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()));
            out.insert(name.clone(), g);
        }
        Gradients { grads: out }
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        match &self.nodes[i].op {
            Op::Constant | Op::Param => {}
            Op::Conv1d { x, w, b, k } => {
                let (xs, ws) = (self.value(*x).shape(), self.value(*w).shape());
                let (len, cin, cout) = (xs[0], xs[1], ws[2]);
                let mut gx = self.needs(*x).then(|| vec![T::zero(); len * cin]);
                let mut gw = self.needs(*w).then(|| vec![T::zero(); self.value(*w).len()]);
                let mut gb = b
                    .filter(|b| self.needs(*b))
                    .map(|_| vec![T::zero(); cout]);
                kernels::conv1d_backward(
                    self.value(*x).data(),
                    len,
                    cin,
                    self.value(*w).data(),
                    *k,
                    cout,
                    gd,
                    gx.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                self.deposit(grads, *x, gx);
                self.deposit(grads, *w, gw);
                if let Some(b) = b {
                    self.deposit(grads, *b, gb);
                }
            }
            Op::Conv1dOneHot {
                hot,
                channels,
                w,
                b,
                k,
            } => {
                let cout = self.value(*w).shape()[2];
                let mut gw = vec![T::zero(); self.value(*w).len()];
                let mut gb = b
                    .filter(|b| self.needs(*b))
                    .map(|_| vec![T::zero(); cout]);
                kernels::conv1d_onehot_backward(
                    hot,
                    *channels,
                    *k,
                    cout,
                    gd,
                    &mut gw,
                    gb.as_deref_mut(),
                );
                if self.needs(*w) {
                    self.deposit(grads, *w, Some(gw));
                }
                if let Some(b) = b {
                    self.deposit(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.deposit(grads, *a, Some(gd.to_vec()));
                self.deposit(grads, *b, Some(gd.to_vec()));
            }
            Op::Hadamard(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let ga = gd.iter().zip(vb).map(|(&g, &y)| g * y).collect();
                let gb = gd.iter().zip(va).map(|(&g, &x)| g * x).collect();
                self.deposit(grads, *a, Some(ga));
                self.deposit(grads, *b, Some(gb));
            }
            Op::Sigmoid(x) => {
                let y = self.nodes[i].value.data();
                let gx = gd
                    .iter()
                    .zip(y)
                    .map(|(&g, &s)| g * s * (T::one() - s))
                    .collect();
                self.deposit(grads, *x, Some(gx));
            }
            Op::Tanh(x) => {
                let y = self.nodes[i].value.data();
                let gx = gd
                    .iter()
                    .zip(y)
                    .map(|(&g, &t)| g * (T::one() - t * t))
                    .collect();
                self.deposit(grads, *x, Some(gx));
            }
            Op::Scale(x, s) => {
                let gx = gd.iter().map(|&g| g * *s).collect();
                self.deposit(grads, *x, Some(gx));
            }
            Op::Dense { x, w, b } => {
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let m = gd.len();
                let gx = (0..xv.len())
                    .map(|r| {
                        wv[r * m..(r + 1) * m]
                            .iter()
                            .zip(gd)
                            .fold(T::zero(), |s, (&w, &g)| s + w * g)
                    })
                    .collect();
                let mut gw = vec![T::zero(); wv.len()];
                for (r, &x) in xv.iter().enumerate() {
                    for (gw, &g) in gw[r * m..(r + 1) * m].iter_mut().zip(gd) {
                        *gw = x * g;
                    }
                }
                self.deposit(grads, *x, Some(gx));
                self.deposit(grads, *w, Some(gw));
                self.deposit(grads, *b, Some(gd.to_vec()));
            }
            Op::MeanPool(x) => {
                let xs = self.value(*x).shape();
                let (rows, cols) = (xs[0], xs[1]);
                let inv = T::one() / T::of(rows as f64);
                let mut gx = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    gx.extend(gd.iter().map(|&g| g * inv));
                }
                self.deposit(grads, *x, Some(gx));
            }
            Op::MeanOf(xs) => {
                let inv = T::one() / T::of(xs.len() as f64);
                for &x in xs {
                    self.deposit(grads, x, Some(gd.iter().map(|&g| g * inv).collect()));
                }
            }
            Op::Mse(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let c = gd[0] * T::of(2.0) / T::of(va.len() as f64);
                let ga: Vec<T> = va.iter().zip(vb).map(|(&x, &y)| c * (x - y)).collect();
                let gb = ga.iter().map(|&v| -v).collect();
                self.deposit(grads, *a, Some(ga));
                self.deposit(grads, *b, Some(gb));
            }
            Op::SqDist(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let c = gd[0] * T::of(2.0);
                let ga: Vec<T> = va.iter().zip(vb).map(|(&x, &y)| c * (x - y)).collect();
                let gb = ga.iter().map(|&v| -v).collect();
                self.deposit(grads, *a, Some(ga));
                self.deposit(grads, *b, Some(gb));
            }
            Op::TwoClassNll {
                d_target,
                d_null,
                target_label,
            } => {
                let (_, p_t) = kernels::two_class_nll(
                    self.value(*d_target).item(),
                    self.value(*d_null).item(),
                    *target_label,
                );
                let p_n = T::one() - p_t;
                let (gt, gn) = if *target_label {
                    (T::one() - p_t, -p_n)
                } else {
                    (-p_t, T::one() - p_n)
                };
                self.deposit(grads, *d_target, Some(vec![gd[0] * gt]));
                self.deposit(grads, *d_null, Some(vec![gd[0] * gn]));
            }
        }
    }

    /// Whether gradient flowing into `v` can reach a parameter.
    fn needs(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Constant)
    }

    fn deposit(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Option<Vec<T>>) {
        let Some(g) = g else { return };
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, x) in acc.data_mut().iter_mut().zip(g) {
                    *a += x;
                }
            }
            slot @ None => *slot = Some(Tensor::new(self.value(v).shape(), g)),
        }
    }
}
