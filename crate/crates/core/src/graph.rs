//! Tape-based reverse-mode differentiation over [`Mat`] values.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards is a
//! valid reverse topological order. Parameters are referenced by index into a
//! borrowed parameter slice and their gradients are returned per index.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Mat;

pub const LAYER_NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    Gather { table: usize, ids: Vec<usize> },
    MatMul(NodeId, NodeId),
    MatMulBt(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    /// Adds a constant; the gradient passes through unchanged.
    AddConst(NodeId),
    Scale(NodeId, f64),
    Gelu(NodeId),
    Softmax(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    Mean(Vec<NodeId>),
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        probs: Mat,
    },
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
}

/// A forward computation recorded for differentiation.
pub struct Graph<'p> {
    params: &'p [Mat],
    nodes: Vec<Node>,
    /// Node of each parameter, created on first use.
    param_nodes: Vec<Option<NodeId>>,
    mean_count: usize,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    pub params: Vec<Option<Mat>>,
    nodes: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient flowing into an intermediate node, if any reached it.
    pub fn node(&self, id: NodeId) -> Option<&Mat> {
        self.nodes[id.0].as_ref()
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::tanh(SQRT_2_OVER_PI * (x + GELU_C * x * x * x)))
}

fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    let t = libm::tanh(u);
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p [Mat]) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
            mean_count: 0,
        }
    }

    fn push(&mut self, value: Mat, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        match self.nodes[id.0].op {
            Op::Param(i) => &self.params[i],
            _ => &self.nodes[id.0].value,
        }
    }

    /// Number of candidate-mean nodes recorded so far.
    pub fn mean_count(&self) -> usize {
        self.mean_count
    }

    pub fn input(&mut self, value: Mat) -> NodeId {
        self.push(value, Op::Input)
    }

    /// The node of parameter `index`; its value is read from the parameter slice.
    pub fn param(&mut self, index: usize) -> NodeId {
        if let Some(id) = self.param_nodes[index] {
            return id;
        }
        let id = self.push(Mat::zeros(0, 0), Op::Param(index));
        self.param_nodes[index] = Some(id);
        id
    }

    /// Rows of parameter `table` selected by `ids`.
    pub fn gather(&mut self, table: usize, ids: &[usize]) -> NodeId {
        let t = &self.params[table];
        let mut out = Mat::zeros(ids.len(), t.cols);
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(id));
        }
        self.push(out, Op::Gather { table, ids: ids.to_vec() })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a * b^T`
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul_bt(self.value(b));
        self.push(v, Op::MatMulBt(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    /// Add a `1 x cols` row vector to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        let r = self.value(row);
        assert_eq!((1, v.cols), r.shape(), "add_row shape");
        for i in 0..v.rows {
            for (x, b) in v.row_mut(i).iter_mut().zip(&r.data) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    pub fn add_const(&mut self, a: NodeId, c: &Mat) -> NodeId {
        let mut v = self.value(a).clone();
        v.add_assign(c);
        self.push(v, Op::AddConst(a))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let mut v = self.value(a).clone();
        v.scale_assign(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        for x in &mut v.data {
            *x = gelu(*x);
        }
        self.push(v, Op::Gelu(a))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        for r in 0..v.rows {
            softmax_in_place(v.row_mut(r));
        }
        self.push(v, Op::Softmax(a))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (both `1 x cols`).
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut xhat = Mat::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let (mean, var) = mean_var(xv.row(r));
            let is = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
            inv_std.push(is);
            for (h, v) in xhat.row_mut(r).iter_mut().zip(xv.row(r)) {
                *h = (v - mean) * is;
            }
        }
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut out = xhat.clone();
        for r in 0..rows {
            for ((o, gv), bv) in out.row_mut(r).iter_mut().zip(&g.data).zip(&b.data) {
                *o = *o * gv + bv;
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Arithmetic mean of same-shape nodes.
    pub fn mean(&mut self, items: &[NodeId]) -> NodeId {
        assert!(!items.is_empty(), "mean of nothing");
        let mut v = self.value(items[0]).clone();
        for &i in &items[1..] {
            v.add_assign(self.value(i));
        }
        let n = items.len() as f64;
        for x in &mut v.data {
            *x /= n;
        }
        self.mean_count += 1;
        self.push(v, Op::Mean(items.to_vec()))
    }

    /// Mean negative log-likelihood of `targets` (one per row) under row-wise softmax.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> NodeId {
        let lv = self.value(logits);
        assert_eq!(lv.rows, targets.len(), "one target per row");
        let mut probs = lv.clone();
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = lv.row(r);
            total -= log_softmax_at(row, t);
            softmax_in_place(probs.row_mut(r));
        }
        let loss = Mat::from_vec(1, 1, vec![total / targets.len() as f64]);
        self.push(
            loss,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Reverse pass from scalar node `root`.
    pub fn backward(&self, root: NodeId) -> Gradients {
        assert_eq!(self.value(root).shape(), (1, 1), "backward from a scalar");
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        let mut pgrads: Vec<Option<Mat>> = vec![None; self.params.len()];
        grads[root.0] = Some(Mat::from_vec(1, 1, vec![1.0]));

        fn acc(slot: &mut Option<Mat>, g: Mat) {
            match slot {
                Some(s) => s.add_assign(&g),
                None => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(p) => acc(&mut pgrads[*p], g.clone()),
                Op::Gather { table, ids } => {
                    let t = &self.params[*table];
                    let slot = pgrads[*table].get_or_insert_with(|| Mat::zeros(t.rows, t.cols));
                    for (r, &id) in ids.iter().enumerate() {
                        for (s, v) in slot.row_mut(id).iter_mut().zip(g.row(r)) {
                            *s += v;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_bt(self.value(*b));
                    let gb = self.value(*a).matmul_at(&g);
                    acc(&mut grads[a.0], ga);
                    acc(&mut grads[b.0], gb);
                }
                Op::MatMulBt(a, b) => {
                    let ga = g.matmul(self.value(*b));
                    let gb = g.matmul_at(self.value(*a));
                    acc(&mut grads[a.0], ga);
                    acc(&mut grads[b.0], gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads[a.0], g.clone());
                    acc(&mut grads[b.0], g.clone());
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads[row.0], g.sum_rows());
                    acc(&mut grads[a.0], g.clone());
                }
                Op::AddConst(a) => acc(&mut grads[a.0], g.clone()),
                Op::Scale(a, s) => {
                    let mut ga = g.clone();
                    ga.scale_assign(*s);
                    acc(&mut grads[a.0], ga);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let mut ga = g.clone();
                    for (gv, xv) in ga.data.iter_mut().zip(&x.data) {
                        *gv *= gelu_grad(*xv);
                    }
                    acc(&mut grads[a.0], ga);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut ga = g.clone();
                    for r in 0..y.rows {
                        let yr = y.row(r);
                        let dot: f64 = ga.row(r).iter().zip(yr).map(|(d, y)| d * y).sum();
                        for (d, yv) in ga.row_mut(r).iter_mut().zip(yr) {
                            *d = yv * (*d - dot);
                        }
                    }
                    acc(&mut grads[a.0], ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gamma);
                    let (rows, cols) = xhat.shape();
                    let mut dgamma = Mat::zeros(1, cols);
                    let dbeta = g.sum_rows();
                    let mut dx = Mat::zeros(rows, cols);
                    for r in 0..rows {
                        let gr = g.row(r);
                        let hr = xhat.row(r);
                        for c in 0..cols {
                            dgamma.data[c] += gr[c] * hr[c];
                        }
                        let dxhat: Vec<f64> = gr.iter().zip(&gv.data).map(|(a, b)| a * b).collect();
                        let m1 = dxhat.iter().sum::<f64>() / cols as f64;
                        let m2 = dxhat.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
                        for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                            *d = inv_std[r] * (dxhat[c] - m1 - hr[c] * m2);
                        }
                    }
                    acc(&mut grads[gamma.0], dgamma);
                    acc(&mut grads[beta.0], dbeta);
                    acc(&mut grads[x.0], dx);
                }
                Op::Mean(items) => {
                    let mut share = g.clone();
                    share.scale_assign(1.0 / items.len() as f64);
                    for i in items {
                        acc(&mut grads[i.0], share.clone());
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let scale = g.data[0] / targets.len() as f64;
                    let mut gl = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        let row = gl.row_mut(r);
                        row[t] -= 1.0;
                        for v in row.iter_mut() {
                            *v *= scale;
                        }
                    }
                    acc(&mut grads[logits.0], gl);
                }
            }
            grads[idx] = Some(g);
        }
        Gradients {
            params: pgrads,
            nodes: grads,
        }
    }
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `log softmax(row)[t]`
pub fn log_softmax_at(row: &[f64], t: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + libm::log(row.iter().map(|v| libm::exp(v - max)).sum::<f64>());
    row[t] - lse
}

/// Full log-softmax of a row.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + libm::log(row.iter().map(|v| libm::exp(v - max)).sum::<f64>());
    row.iter().map(|v| v - lse).collect()
}
