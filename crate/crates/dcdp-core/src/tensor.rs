//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tape`] owns every tensor created during a forward pass as a node in a
//! flat arena; operations push new nodes that reference their parents by
//! index, so the arena order is already a topological order. [`Tape::backward`]
//! walks it once in reverse, applying each op's vector-Jacobian product.
//!
//! Conventions:
//! - values are `f64` throughout; every op output is checked finite and the
//!   tape panics with the op name otherwise,
//! - shape mismatches panic (they are programming errors, not runtime data),
//! - broadcasting is limited to scalar-tensor multiply and row-bias addition,
//! - a tape is confined to one thread; independent tapes never share state.

use crate::kernels;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorId(pub(crate) usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(TensorId, TensorId),
    /// matrix [r,c] + row bias [c]
    AddBias(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    /// elementwise multiply by a single-element tensor
    MulScalarT(TensorId, TensorId),
    /// multiply by a compile-time constant
    Scale(TensorId, f64),
    Matmul {
        a: TensorId,
        b: TensorId,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose(TensorId),
    Reshape(TensorId),
    Concat {
        parts: Vec<TensorId>,
        axis: usize,
    },
    /// column range [start, end) of a 2-D tensor
    SliceCols {
        a: TensorId,
        start: usize,
        end: usize,
    },
    Exp(TensorId),
    Log(TensorId),
    Tanh(TensorId),
    Relu(TensorId),
    Sigmoid(TensorId),
    /// softmax over the last axis of a 2-D tensor
    Softmax(TensorId),
    Sum(TensorId),
    Mean(TensorId),
    /// column means of a 2-D tensor -> [1, c]
    MeanAxis0(TensorId),
    Conv2d {
        input: TensorId,
        weight: TensorId,
        bias: TensorId,
        stride: usize,
        pad: usize,
    },
    AvgPool2d {
        input: TensorId,
        k: usize,
        stride: usize,
    },
    /// row `index` of a [n, d] table -> [1, d]
    Embed {
        table: TensorId,
        index: usize,
    },
}

struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Arena of tensors recorded during one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a leaf tensor. `requires_grad` marks it as a differentiation
    /// target for [`Tape::backward`].
    pub fn leaf(&mut self, data: Vec<f64>, shape: &[usize], requires_grad: bool) -> TensorId {
        assert_eq!(
            data.len(),
            numel(shape),
            "leaf data length {} != shape {:?}",
            data.len(),
            shape
        );
        assert!(data.iter().all(|v| v.is_finite()), "non-finite leaf data");
        self.push(data, shape.to_vec(), Op::Leaf, requires_grad)
    }

    pub fn scalar(&mut self, v: f64) -> TensorId {
        self.leaf(vec![v], &[1], false)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> TensorId {
        self.leaf(vec![0.0; numel(shape)], shape, false)
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: TensorId) -> f64 {
        assert_eq!(self.nodes[id.0].data.len(), 1, "value() needs a scalar tensor");
        self.nodes[id.0].data[0]
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, op: Op, requires_grad: bool) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node { data, shape, grad: None, requires_grad, op });
        id
    }

    fn rg(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    fn check_finite(&self, id: TensorId, opname: &str) -> TensorId {
        if self.nodes[id.0].data.iter().any(|v| !v.is_finite()) {
            panic!("non-finite output of op `{opname}` (shape {:?})", self.nodes[id.0].shape);
        }
        id
    }

    // ── elementwise and arithmetic ──────────────────────────────────────

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let data: Vec<f64> =
            self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(&[a, b]);
        let id = self.push(data, shape, Op::Add(a, b), rg);
        self.check_finite(id, "add")
    }

    /// `a` is [r, c]; `bias` is [c] or [1, c], added to every row.
    pub fn add_bias(&mut self, a: TensorId, bias: TensorId) -> TensorId {
        let (r, c) = self.dims2(a, "add_bias");
        assert_eq!(numel(self.shape(bias)), c, "add_bias: bias length != cols");
        let mut data = self.data(a).to_vec();
        let bdat = &self.nodes[bias.0].data;
        for row in 0..r {
            for col in 0..c {
                data[row * c + col] += bdat[col];
            }
        }
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(&[a, bias]);
        let id = self.push(data, shape, Op::AddBias(a, bias), rg);
        self.check_finite(id, "add_bias")
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> TensorId {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let data: Vec<f64> =
            self.data(a).iter().zip(self.data(b)).map(|(x, y)| x - y).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(&[a, b]);
        let id = self.push(data, shape, Op::Sub(a, b), rg);
        self.check_finite(id, "sub")
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let data: Vec<f64> =
            self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(&[a, b]);
        let id = self.push(data, shape, Op::Mul(a, b), rg);
        self.check_finite(id, "mul")
    }

    /// Elementwise multiply by a single-element tensor (the one broadcast
    /// allowed besides row bias).
    pub fn mul_scalar_t(&mut self, a: TensorId, s: TensorId) -> TensorId {
        assert_eq!(numel(self.shape(s)), 1, "mul_scalar_t: scalar operand must have 1 element");
        let sv = self.nodes[s.0].data[0];
        let data: Vec<f64> = self.data(a).iter().map(|x| x * sv).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(&[a, s]);
        let id = self.push(data, shape, Op::MulScalarT(a, s), rg);
        self.check_finite(id, "mul_scalar_t")
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        assert!(c.is_finite(), "scale: non-finite constant");
        let data: Vec<f64> = self.data(a).iter().map(|x| x * c).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(&[a]);
        let id = self.push(data, shape, Op::Scale(a, c), rg);
        self.check_finite(id, "scale")
    }

    // ── linear algebra and shape ────────────────────────────────────────

    fn dims2(&self, a: TensorId, op: &str) -> (usize, usize) {
        let s = self.shape(a);
        assert_eq!(s.len(), 2, "{op}: expected 2-D tensor, got shape {s:?}");
        (s[0], s[1])
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (m, k) = self.dims2(a, "matmul");
        let (k2, n) = self.dims2(b, "matmul");
        assert_eq!(k, k2, "matmul: inner dims {k} vs {k2}");
        let mut data = vec![0.0; m * n];
        kernels::matmul(self.data(a), self.data(b), m, k, n, &mut data);
        let rg = self.rg(&[a, b]);
        let id = self.push(data, vec![m, n], Op::Matmul { a, b, m, k, n }, rg);
        self.check_finite(id, "matmul")
    }

    pub fn transpose(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.dims2(a, "transpose");
        let mut data = vec![0.0; r * c];
        kernels::transpose(self.data(a), r, c, &mut data);
        let rg = self.rg(&[a]);
        self.push(data, vec![c, r], Op::Transpose(a), rg)
    }

    pub fn reshape(&mut self, a: TensorId, shape: &[usize]) -> TensorId {
        assert_eq!(
            numel(self.shape(a)),
            numel(shape),
            "reshape: element count mismatch {:?} -> {:?}",
            self.shape(a),
            shape
        );
        let data = self.data(a).to_vec();
        let rg = self.rg(&[a]);
        self.push(data, shape.to_vec(), Op::Reshape(a), rg)
    }

    /// Concatenate 2-D tensors along `axis` (0 = stack rows, 1 = widen rows).
    pub fn concat(&mut self, parts: &[TensorId], axis: usize) -> TensorId {
        assert!(!parts.is_empty(), "concat: empty input");
        assert!(axis < 2, "concat: axis must be 0 or 1");
        let (r0, c0) = self.dims2(parts[0], "concat");
        if axis == 0 {
            let mut rows = 0;
            let mut data = Vec::new();
            for &p in parts {
                let (r, c) = self.dims2(p, "concat");
                assert_eq!(c, c0, "concat axis 0: column mismatch");
                rows += r;
                data.extend_from_slice(self.data(p));
            }
            let rg = self.rg(parts);
            self.push(data, vec![rows, c0], Op::Concat { parts: parts.to_vec(), axis }, rg)
        } else {
            let mut cols = 0;
            for &p in parts {
                let (r, c) = self.dims2(p, "concat");
                assert_eq!(r, r0, "concat axis 1: row mismatch");
                cols += c;
            }
            let mut data = vec![0.0; r0 * cols];
            let mut off = 0;
            for &p in parts {
                let (_, c) = self.dims2(p, "concat");
                let pd = self.data(p);
                for row in 0..r0 {
                    data[row * cols + off..row * cols + off + c]
                        .copy_from_slice(&pd[row * c..(row + 1) * c]);
                }
                off += c;
            }
            let rg = self.rg(parts);
            self.push(data, vec![r0, cols], Op::Concat { parts: parts.to_vec(), axis }, rg)
        }
    }

    /// Columns [start, end) of a 2-D tensor.
    pub fn slice_cols(&mut self, a: TensorId, start: usize, end: usize) -> TensorId {
        let (r, c) = self.dims2(a, "slice_cols");
        assert!(start < end && end <= c, "slice_cols: bad range {start}..{end} of {c}");
        let w = end - start;
        let mut data = vec![0.0; r * w];
        let ad = self.data(a);
        for row in 0..r {
            data[row * w..(row + 1) * w].copy_from_slice(&ad[row * c + start..row * c + end]);
        }
        let rg = self.rg(&[a]);
        self.push(data, vec![r, w], Op::SliceCols { a, start, end }, rg)
    }

    // ── nonlinearities ─────────────────────────────────────────────────

    pub fn exp(&mut self, a: TensorId) -> TensorId {
        let data: Vec<f64> = self.data(a).iter().map(|x| x.exp()).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(&[a]);
        let id = self.push(data, shape, Op::Exp(a), rg);
        self.check_finite(id, "exp")
    }

    pub fn log(&mut self, a: TensorId) -> TensorId {
        let data: Vec<f64> = self.data(a).iter().map(|x| x.ln()).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(&[a]);
        let id = self.push(data, shape, Op::Log(a), rg);
        self.check_finite(id, "log")
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        let data: Vec<f64> = self.data(a).iter().map(|x| x.tanh()).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(&[a]);
        self.push(data, shape, Op::Tanh(a), rg)
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let data: Vec<f64> =
            self.data(a).iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(&[a]);
        self.push(data, shape, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let data: Vec<f64> = self.data(a).iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(&[a]);
        self.push(data, shape, Op::Sigmoid(a), rg)
    }

    /// Softmax over the last axis of a 2-D tensor (1-D is treated as one row).
    pub fn softmax(&mut self, a: TensorId) -> TensorId {
        let s = self.shape(a).to_vec();
        let (r, c) = match s.len() {
            1 => (1, s[0]),
            2 => (s[0], s[1]),
            _ => panic!("softmax: expected 1-D or 2-D tensor, got {s:?}"),
        };
        let mut data = vec![0.0; r * c];
        kernels::softmax_rows(self.data(a), r, c, &mut data);
        let rg = self.rg(&[a]);
        let id = self.push(data, s, Op::Softmax(a), rg);
        self.check_finite(id, "softmax")
    }

    // ── reductions ─────────────────────────────────────────────────────

    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let s: f64 = self.data(a).iter().sum();
        let rg = self.rg(&[a]);
        let id = self.push(vec![s], vec![1], Op::Sum(a), rg);
        self.check_finite(id, "sum")
    }

    pub fn mean(&mut self, a: TensorId) -> TensorId {
        let n = self.data(a).len() as f64;
        let s: f64 = self.data(a).iter().sum();
        let rg = self.rg(&[a]);
        let id = self.push(vec![s / n], vec![1], Op::Mean(a), rg);
        self.check_finite(id, "mean")
    }

    /// Column means of a 2-D tensor -> [1, c].
    pub fn mean_axis0(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.dims2(a, "mean_axis0");
        let mut data = vec![0.0; c];
        let ad = self.data(a);
        for row in 0..r {
            for col in 0..c {
                data[col] += ad[row * c + col];
            }
        }
        for v in data.iter_mut() {
            *v /= r as f64;
        }
        let rg = self.rg(&[a]);
        let id = self.push(data, vec![1, c], Op::MeanAxis0(a), rg);
        self.check_finite(id, "mean_axis0")
    }

    /// Mean squared error between same-shape tensors, as a composite.
    pub fn mse(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let d = self.sub(a, b);
        let sq = self.mul(d, d);
        self.mean(sq)
    }

    // ── structured ops ─────────────────────────────────────────────────

    /// input [ci,h,w], weight [co,ci,kh,kw], bias [co] -> [co,oh,ow].
    pub fn conv2d(
        &mut self,
        input: TensorId,
        weight: TensorId,
        bias: TensorId,
        stride: usize,
        pad: usize,
    ) -> TensorId {
        let ishape = self.shape(input).to_vec();
        let wshape = self.shape(weight).to_vec();
        assert_eq!(ishape.len(), 3, "conv2d: input must be [ci,h,w]");
        assert_eq!(wshape.len(), 4, "conv2d: weight must be [co,ci,kh,kw]");
        assert!(stride >= 1, "conv2d: stride must be >= 1");
        let (ci, h, w) = (ishape[0], ishape[1], ishape[2]);
        let (co, ci2, kh, kw) = (wshape[0], wshape[1], wshape[2], wshape[3]);
        assert_eq!(ci, ci2, "conv2d: channel mismatch");
        assert_eq!(numel(self.shape(bias)), co, "conv2d: bias length != out channels");
        let oh = kernels::conv_out_dim(h, kh, stride, pad);
        let ow = kernels::conv_out_dim(w, kw, stride, pad);
        let mut data = vec![0.0; co * oh * ow];
        kernels::conv2d(
            self.data(input),
            self.data(weight),
            self.data(bias),
            ci,
            h,
            w,
            co,
            kh,
            kw,
            stride,
            pad,
            &mut data,
        );
        let rg = self.rg(&[input, weight, bias]);
        let id = self.push(
            data,
            vec![co, oh, ow],
            Op::Conv2d { input, weight, bias, stride, pad },
            rg,
        );
        self.check_finite(id, "conv2d")
    }

    /// input [c,h,w] -> [c,oh,ow]; windows fully inside, no padding.
    pub fn avg_pool2d(&mut self, input: TensorId, k: usize, stride: usize) -> TensorId {
        let ishape = self.shape(input).to_vec();
        assert_eq!(ishape.len(), 3, "avg_pool2d: input must be [c,h,w]");
        let (c, h, w) = (ishape[0], ishape[1], ishape[2]);
        assert!(k <= h && k <= w, "avg_pool2d: kernel larger than input");
        let oh = (h - k) / stride + 1;
        let ow = (w - k) / stride + 1;
        let mut data = vec![0.0; c * oh * ow];
        kernels::avg_pool2d(self.data(input), c, h, w, k, stride, &mut data);
        let rg = self.rg(&[input]);
        let id = self.push(data, vec![c, oh, ow], Op::AvgPool2d { input, k, stride }, rg);
        self.check_finite(id, "avg_pool2d")
    }

    /// Row `index` of a [n, d] table -> [1, d].
    pub fn embed(&mut self, table: TensorId, index: usize) -> TensorId {
        let (n, d) = self.dims2(table, "embed");
        assert!(index < n, "embed: index {index} out of range {n}");
        let data = self.data(table)[index * d..(index + 1) * d].to_vec();
        let rg = self.rg(&[table]);
        self.push(data, vec![1, d], Op::Embed { table, index }, rg)
    }

    // ── backward ───────────────────────────────────────────────────────

    /// Reverse-mode sweep from a scalar `loss`. Gradients accumulate on every
    /// `requires_grad` ancestor; each node is visited exactly once, in
    /// reverse arena order.
    pub fn backward(&mut self, loss: TensorId) {
        assert_eq!(self.nodes[loss.0].data.len(), 1, "backward: loss must be scalar");
        assert!(self.nodes[loss.0].data[0].is_finite(), "backward: non-finite loss");
        for node in self.nodes.iter_mut() {
            if node.requires_grad {
                node.grad = Some(vec![0.0; node.data.len()]);
            } else {
                node.grad = None;
            }
        }
        if !self.nodes[loss.0].requires_grad {
            return;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let grad = match &self.nodes[i].grad {
                Some(g) => g.clone(),
                None => continue,
            };
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.accum(a, &grad);
                    self.accum(b, &grad);
                }
                Op::AddBias(a, bias) => {
                    self.accum(a, &grad);
                    let (r, c) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                    let mut gb = vec![0.0; c];
                    for row in 0..r {
                        for col in 0..c {
                            gb[col] += grad[row * c + col];
                        }
                    }
                    self.accum(bias, &gb);
                }
                Op::Sub(a, b) => {
                    self.accum(a, &grad);
                    let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
                    self.accum(b, &neg);
                }
                Op::Mul(a, b) => {
                    let ga: Vec<f64> =
                        grad.iter().zip(self.nodes[b.0].data.iter()).map(|(g, v)| g * v).collect();
                    let gb: Vec<f64> =
                        grad.iter().zip(self.nodes[a.0].data.iter()).map(|(g, v)| g * v).collect();
                    self.accum(a, &ga);
                    self.accum(b, &gb);
                }
                Op::MulScalarT(a, s) => {
                    let sv = self.nodes[s.0].data[0];
                    let ga: Vec<f64> = grad.iter().map(|g| g * sv).collect();
                    let gs: f64 =
                        grad.iter().zip(self.nodes[a.0].data.iter()).map(|(g, v)| g * v).sum();
                    self.accum(a, &ga);
                    self.accum(s, &[gs]);
                }
                Op::Scale(a, c) => {
                    let ga: Vec<f64> = grad.iter().map(|g| g * c).collect();
                    self.accum(a, &ga);
                }
                Op::Matmul { a, b, m, k, n } => {
                    // dA = dC @ B^T, dB = A^T @ dC
                    let mut bt = vec![0.0; k * n];
                    kernels::transpose(&self.nodes[b.0].data, k, n, &mut bt);
                    let mut ga = vec![0.0; m * k];
                    kernels::matmul(&grad, &bt, m, n, k, &mut ga);
                    let mut at = vec![0.0; m * k];
                    kernels::transpose(&self.nodes[a.0].data, m, k, &mut at);
                    let mut gb = vec![0.0; k * n];
                    kernels::matmul(&at, &grad, k, m, n, &mut gb);
                    self.accum(a, &ga);
                    self.accum(b, &gb);
                }
                Op::Transpose(a) => {
                    let (r, c) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
                    let mut ga = vec![0.0; r * c];
                    kernels::transpose(&grad, r, c, &mut ga);
                    self.accum(a, &ga);
                }
                Op::Reshape(a) => {
                    self.accum(a, &grad);
                }
                Op::Concat { parts, axis } => {
                    if axis == 0 {
                        let mut off = 0;
                        for p in parts {
                            let n = self.nodes[p.0].data.len();
                            let gp = grad[off..off + n].to_vec();
                            self.accum(p, &gp);
                            off += n;
                        }
                    } else {
                        let rows = self.nodes[i].shape[0];
                        let cols = self.nodes[i].shape[1];
                        let mut off = 0;
                        for p in parts {
                            let c = self.nodes[p.0].shape[1];
                            let mut gp = vec![0.0; rows * c];
                            for row in 0..rows {
                                gp[row * c..(row + 1) * c].copy_from_slice(
                                    &grad[row * cols + off..row * cols + off + c],
                                );
                            }
                            self.accum(p, &gp);
                            off += c;
                        }
                    }
                }
                Op::SliceCols { a, start, end } => {
                    let (r, c) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                    let w = end - start;
                    let mut ga = vec![0.0; r * c];
                    for row in 0..r {
                        ga[row * c + start..row * c + end]
                            .copy_from_slice(&grad[row * w..(row + 1) * w]);
                    }
                    self.accum(a, &ga);
                }
                Op::Exp(a) => {
                    let ga: Vec<f64> =
                        grad.iter().zip(self.nodes[i].data.iter()).map(|(g, y)| g * y).collect();
                    self.accum(a, &ga);
                }
                Op::Log(a) => {
                    let ga: Vec<f64> =
                        grad.iter().zip(self.nodes[a.0].data.iter()).map(|(g, x)| g / x).collect();
                    self.accum(a, &ga);
                }
                Op::Tanh(a) => {
                    let ga: Vec<f64> = grad
                        .iter()
                        .zip(self.nodes[i].data.iter())
                        .map(|(g, t)| g * (1.0 - t * t))
                        .collect();
                    self.accum(a, &ga);
                }
                Op::Relu(a) => {
                    let ga: Vec<f64> = grad
                        .iter()
                        .zip(self.nodes[a.0].data.iter())
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect();
                    self.accum(a, &ga);
                }
                Op::Sigmoid(a) => {
                    let ga: Vec<f64> = grad
                        .iter()
                        .zip(self.nodes[i].data.iter())
                        .map(|(g, s)| g * s * (1.0 - s))
                        .collect();
                    self.accum(a, &ga);
                }
                Op::Softmax(a) => {
                    // ds_j = s_j (g_j - sum_k g_k s_k), rowwise
                    let s = &self.nodes[i].data;
                    let shape = &self.nodes[i].shape;
                    let (r, c) = if shape.len() == 1 { (1, shape[0]) } else { (shape[0], shape[1]) };
                    let mut ga = vec![0.0; r * c];
                    for row in 0..r {
                        let srow = &s[row * c..(row + 1) * c];
                        let grow = &grad[row * c..(row + 1) * c];
                        let dot: f64 = srow.iter().zip(grow).map(|(sv, gv)| sv * gv).sum();
                        for col in 0..c {
                            ga[row * c + col] = srow[col] * (grow[col] - dot);
                        }
                    }
                    self.accum(a, &ga);
                }
                Op::Sum(a) => {
                    let ga = vec![grad[0]; self.nodes[a.0].data.len()];
                    self.accum(a, &ga);
                }
                Op::Mean(a) => {
                    let n = self.nodes[a.0].data.len() as f64;
                    let ga = vec![grad[0] / n; self.nodes[a.0].data.len()];
                    self.accum(a, &ga);
                }
                Op::MeanAxis0(a) => {
                    let (r, c) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                    let mut ga = vec![0.0; r * c];
                    for row in 0..r {
                        for col in 0..c {
                            ga[row * c + col] = grad[col] / r as f64;
                        }
                    }
                    self.accum(a, &ga);
                }
                Op::Conv2d { input, weight, bias, stride, pad } => {
                    self.conv2d_backward(i, input, weight, bias, stride, pad, &grad);
                }
                Op::AvgPool2d { input, k, stride } => {
                    let ishape = self.nodes[input.0].shape.clone();
                    let (c, h, w) = (ishape[0], ishape[1], ishape[2]);
                    let oh = (h - k) / stride + 1;
                    let ow = (w - k) / stride + 1;
                    let inv = 1.0 / (k * k) as f64;
                    let mut ga = vec![0.0; c * h * w];
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let g = grad[ch * oh * ow + oy * ow + ox] * inv;
                                for ky in 0..k {
                                    let row = ch * h * w + (oy * stride + ky) * w + ox * stride;
                                    for kx in 0..k {
                                        ga[row + kx] += g;
                                    }
                                }
                            }
                        }
                    }
                    self.accum(input, &ga);
                }
                Op::Embed { table, index } => {
                    let (_, d) = (self.nodes[table.0].shape[0], self.nodes[table.0].shape[1]);
                    if self.nodes[table.0].requires_grad {
                        let gt = self.nodes[table.0].grad.as_mut().unwrap();
                        for col in 0..d {
                            gt[index * d + col] += grad[col];
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv2d_backward(
        &mut self,
        out: usize,
        input: TensorId,
        weight: TensorId,
        bias: TensorId,
        stride: usize,
        pad: usize,
        grad: &[f64],
    ) {
        let ishape = self.nodes[input.0].shape.clone();
        let wshape = self.nodes[weight.0].shape.clone();
        let oshape = self.nodes[out].shape.clone();
        let (ci, h, w) = (ishape[0], ishape[1], ishape[2]);
        let (co, _, kh, kw) = (wshape[0], wshape[1], wshape[2], wshape[3]);
        let (oh, ow) = (oshape[1], oshape[2]);

        let mut gi = vec![0.0; ci * h * w];
        let mut gw = vec![0.0; co * ci * kh * kw];
        let mut gb = vec![0.0; co];
        let idata = &self.nodes[input.0].data;
        let wdata = &self.nodes[weight.0].data;

        for oc in 0..co {
            let wbase = oc * ci * kh * kw;
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = grad[oc * oh * ow + oy * ow + ox];
                    if g == 0.0 {
                        continue;
                    }
                    gb[oc] += g;
                    let iy0 = (oy * stride) as isize - pad as isize;
                    let ix0 = (ox * stride) as isize - pad as isize;
                    for ic in 0..ci {
                        let ibase = ic * h * w;
                        let kbase = wbase + ic * kh * kw;
                        for ky in 0..kh {
                            let iy = iy0 + ky as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let irow = ibase + iy as usize * w;
                            let krow = kbase + ky * kw;
                            for kx in 0..kw {
                                let ix = ix0 + kx as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                gw[krow + kx] += g * idata[irow + ix as usize];
                                gi[irow + ix as usize] += g * wdata[krow + kx];
                            }
                        }
                    }
                }
            }
        }
        self.accum(input, &gi);
        self.accum(weight, &gw);
        self.accum(bias, &gb);
    }

    fn accum(&mut self, id: TensorId, g: &[f64]) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let grad = self.nodes[id.0].grad.as_mut().unwrap();
        debug_assert_eq!(grad.len(), g.len());
        for (a, b) in grad.iter_mut().zip(g.iter()) {
            *a += b;
        }
    }
}

// ── gradient checking ──────────────────────────────────────────────────

/// Compare reverse-mode gradients of `f` against central finite differences
/// at `x`. `f` must rebuild the same deterministic graph on every call and
/// return a scalar loss. Returns the max relative error over elements where
/// either gradient exceeds 1e-6 in magnitude.
pub fn grad_check<F>(f: F, x: &[f64], shape: &[usize], h: f64) -> f64
where
    F: Fn(&mut Tape, TensorId) -> TensorId,
{
    grad_check_multi(
        |tape, ids| f(tape, ids[0]),
        &[(x.to_vec(), shape.to_vec())],
        h,
    )
}

/// Multi-parameter variant of [`grad_check`]; `params` supplies
/// (data, shape) for each leaf handed to `f` in order.
pub fn grad_check_multi<F>(f: F, params: &[(Vec<f64>, Vec<usize>)], h: f64) -> f64
where
    F: Fn(&mut Tape, &[TensorId]) -> TensorId,
{
    let mut tape = Tape::new();
    let ids: Vec<TensorId> =
        params.iter().map(|(d, s)| tape.leaf(d.clone(), s, true)).collect();
    let loss = f(&mut tape, &ids);
    tape.backward(loss);
    let analytic: Vec<Vec<f64>> =
        ids.iter().map(|&id| tape.grad(id).unwrap().to_vec()).collect();

    let eval = |data: &[(Vec<f64>, Vec<usize>)]| -> f64 {
        let mut t = Tape::new();
        let ids: Vec<TensorId> = data.iter().map(|(d, s)| t.leaf(d.clone(), s, true)).collect();
        let l = f(&mut t, &ids);
        t.value(l)
    };

    let mut max_rel: f64 = 0.0;
    for p in 0..params.len() {
        for i in 0..params[p].0.len() {
            let mut plus = params.to_vec();
            plus[p].0[i] += h;
            let mut minus = params.to_vec();
            minus[p].0[i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic[p][i];
            let denom = a.abs().max(numeric.abs());
            if denom > 1e-6 {
                max_rel = max_rel.max((a - numeric).abs() / denom);
            }
        }
    }
    max_rel
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn rand_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.range(-1.5, 1.5)).collect()
    }

    #[test]
    fn matmul_identity() {
        let mut t = Tape::new();
        let eye = t.leaf(vec![1.0, 0.0, 0.0, 1.0], &[2, 2], false);
        let v = t.leaf(vec![3.0, 4.0], &[2, 1], false);
        let r = t.matmul(eye, v);
        assert_eq!(t.data(r), &[3.0, 4.0]);
    }

    #[test]
    fn softmax_symmetry_and_oracle() {
        let mut t = Tape::new();
        let a = t.leaf(vec![0.0, 0.0], &[1, 2], false);
        let s = t.softmax(a);
        assert_eq!(t.data(s), &[0.5, 0.5]);

        // scalar oracle e^x / sum e^x
        let b = t.leaf(vec![1.0, 0.0], &[1, 2], false);
        let s2 = t.softmax(b);
        let e = 1.0_f64.exp();
        let oracle = [e / (e + 1.0), 1.0 / (e + 1.0)];
        assert!((t.data(s2)[0] - 0.7311).abs() < 1e-4);
        assert!((t.data(s2)[1] - 0.2689).abs() < 1e-4);
        assert!((t.data(s2)[0] - oracle[0]).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one_strictly_positive() {
        let mut rng = Rng::new(11);
        for _ in 0..50 {
            let mut t = Tape::new();
            let x = t.leaf(rand_vec(&mut rng, 12), &[3, 4], false);
            let s = t.softmax(x);
            for row in 0..3 {
                let sum: f64 = t.data(s)[row * 4..(row + 1) * 4].iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
            assert!(t.data(s).iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn backward_sum_is_ones() {
        let mut t = Tape::new();
        let x = t.leaf(vec![1.0, 2.0, 3.0], &[3], true);
        let l = t.sum(x);
        t.backward(l);
        assert_eq!(t.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_mse_analytic() {
        // mse(x, 0) with x=[2]: d/dx mean(x^2) = 2x = 4
        let mut t = Tape::new();
        let x = t.leaf(vec![2.0], &[1], true);
        let zero = t.leaf(vec![0.0], &[1], false);
        let l = t.mse(x, zero);
        t.backward(l);
        assert!((t.grad(x).unwrap()[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn backward_sum_of_softmax_is_zero() {
        let mut t = Tape::new();
        let x = t.leaf(vec![0.3, -1.2, 2.0, 0.1], &[1, 4], true);
        let s = t.softmax(x);
        let l = t.sum(s);
        t.backward(l);
        for g in t.grad(x).unwrap() {
            assert!(g.abs() < 1e-10, "softmax sum grad should vanish, got {g}");
        }
    }

    #[test]
    fn grad_check_sum_of_squares() {
        let mut rng = Rng::new(5);
        let x = rand_vec(&mut rng, 10);
        let err = grad_check(
            |t, id| {
                let sq = t.mul(id, id);
                t.sum(sq)
            },
            &x,
            &[10],
            1e-5,
        );
        assert!(err < 1e-6, "err {err}");
    }

    #[test]
    fn grad_check_every_primitive() {
        let rng = Rng::new(17);
        for trial in 0..20 {
            let seed_off = trial as u64;
            let mut r = rng.derive(seed_off);
            // add / sub / mul / scale / bias over 2x3
            let a = rand_vec(&mut r, 6);
            let b = rand_vec(&mut r, 6);
            let bias = rand_vec(&mut r, 3);
            let err = grad_check_multi(
                |t, ids| {
                    let s = t.add(ids[0], ids[1]);
                    let d = t.sub(s, ids[1]);
                    let m = t.mul(d, ids[0]);
                    let sc = t.scale(m, 0.7);
                    let wb = t.add_bias(sc, ids[2]);
                    t.sum(wb)
                },
                &[
                    (a.clone(), vec![2, 3]),
                    (b.clone(), vec![2, 3]),
                    (bias.clone(), vec![3]),
                ],
                1e-5,
            );
            assert!(err < 1e-4, "elementwise err {err}");

            // matmul + transpose + reshape + slice + concat
            let m1 = rand_vec(&mut r, 6);
            let m2 = rand_vec(&mut r, 8);
            let err = grad_check_multi(
                |t, ids| {
                    let p = t.matmul(ids[0], ids[1]); // [3,2]x[2,4] -> [3,4]
                    let tr = t.transpose(p); // [4,3]
                    let rs = t.reshape(tr, &[3, 4]);
                    let sl = t.slice_cols(rs, 1, 3); // [3,2]
                    let cat = t.concat(&[sl, sl], 1); // [3,4]
                    let cat2 = t.concat(&[cat, cat], 0); // [6,4]
                    t.mean(cat2)
                },
                &[(m1.clone(), vec![3, 2]), (m2.clone(), vec![2, 4])],
                1e-5,
            );
            assert!(err < 1e-4, "matmul chain err {err}");

            // nonlinearities
            let x = rand_vec(&mut r, 8);
            let err = grad_check(
                |t, id| {
                    let e = t.exp(id);
                    let lg = t.log(e); // = id, keeps log in the graph with safe input
                    let th = t.tanh(lg);
                    let rl = t.relu(th);
                    let sg = t.sigmoid(rl);
                    let sm = t.softmax(sg);
                    t.sum(sm)
                },
                &x,
                &[2, 4],
                1e-5,
            );
            assert!(err < 1e-4, "nonlinearity err {err}");

            // conv2d + avg_pool + mean_axis0 + embed + mul_scalar_t
            let img = rand_vec(&mut r, 2 * 6 * 6);
            let w = rand_vec(&mut r, 3 * 2 * 3 * 3);
            let cb = rand_vec(&mut r, 3);
            let alpha = rand_vec(&mut r, 1);
            let table = rand_vec(&mut r, 4 * 5);
            let err = grad_check_multi(
                |t, ids| {
                    let c = t.conv2d(ids[0], ids[1], ids[2], 2, 1); // [3,3,3]
                    let pl = t.avg_pool2d(c, 3, 3); // [3,1,1]
                    let fl = t.reshape(pl, &[1, 3]);
                    let sc = t.mul_scalar_t(fl, ids[3]);
                    let emb = t.embed(ids[4], 2); // [1,5]
                    let joined = t.concat(&[sc, emb], 1); // [1,8]
                    let rows = t.concat(&[joined, joined], 0); // [2,8]
                    let pooled = t.mean_axis0(rows); // [1,8]
                    t.sum(pooled)
                },
                &[
                    (img.clone(), vec![2, 6, 6]),
                    (w.clone(), vec![3, 2, 3, 3]),
                    (cb.clone(), vec![3]),
                    (alpha.clone(), vec![1]),
                    (table.clone(), vec![4, 5]),
                ],
                1e-5,
            );
            assert!(err < 1e-4, "structured op err {err}");
        }
    }

    #[test]
    fn determinism_bit_identical() {
        let run = || {
            let mut rng = Rng::new(99);
            let mut t = Tape::new();
            let x = t.leaf(rand_vec(&mut rng, 12), &[3, 4], true);
            let w = t.leaf(rand_vec(&mut rng, 8), &[4, 2], true);
            let y = t.matmul(x, w);
            let s = t.softmax(y);
            let l = t.mean(s);
            t.backward(l);
            (t.data(s).to_vec(), t.grad(x).unwrap().to_vec())
        };
        let (d1, g1) = run();
        let (d2, g2) = run();
        assert!(d1.iter().zip(&d2).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(g1.iter().zip(&g2).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    #[should_panic(expected = "shape mismatch")]
    fn add_shape_mismatch_panics() {
        let mut t = Tape::new();
        let a = t.leaf(vec![1.0, 2.0], &[2], false);
        let b = t.leaf(vec![1.0, 2.0, 3.0], &[3], false);
        t.add(a, b);
    }

    #[test]
    #[should_panic(expected = "non-finite")]
    fn non_finite_output_panics() {
        let mut t = Tape::new();
        let a = t.leaf(vec![1e308, 1e308], &[2], false);
        let b = t.leaf(vec![1e308, 1e308], &[2], false);
        t.add(a, b);
    }

    #[test]
    fn dag_reuse_accumulates() {
        // y = x*x + x*x reuses the same product node twice via add
        let mut t = Tape::new();
        let x = t.leaf(vec![3.0], &[1], true);
        let sq = t.mul(x, x);
        let y = t.add(sq, sq);
        let l = t.sum(y);
        t.backward(l);
        // d/dx 2x^2 = 4x = 12
        assert!((t.grad(x).unwrap()[0] - 12.0).abs() < 1e-12);
    }
}
