//! Reverse-mode autodiff on a flat tape.
//!
//! Every tensor lives in an arena owned by [`Tape`] and is addressed by a
//! [`TensorId`]. Recording an op appends the output node plus enough saved
//! state to run the backward pass in reverse order. A tape is built fresh for
//! every rollout segment, so no graph reuse or reference counting is needed.
//!
//! Ops only record themselves when at least one input requires gradients;
//! pure inference pays for the forward arithmetic and nothing else.

use std::rc::Rc;

use crate::scalar::Scalar;

pub mod checkpoint;
pub mod optim;

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub struct TensorId(pub(crate) usize);

enum Storage<S> {
    Owned(Vec<S>),
    Shared(Rc<Vec<S>>),
}

impl<S> Storage<S> {
    fn as_slice(&self) -> &[S] {
        match self {
            Storage::Owned(v) => v,
            Storage::Shared(v) => v,
        }
    }
}

struct Node<S> {
    storage: Storage<S>,
    shape: Vec<usize>,
    requires_grad: bool,
}

/// One bilinear sample: four flattened spatial indices and their weights.
#[derive(Clone)]
pub struct Tap<S> {
    pub idx: [u32; 4],
    pub w: [S; 4],
}

/// Saved geometry for the backward pass of a surface-distance node. The
/// closest-point query against any supported primitive reduces to one of
/// these canonical forms.
#[derive(Clone, Debug)]
pub enum Surface<S> {
    /// Flat boundary; distance grows along `normal`.
    Plane { normal: [S; 3] },
    /// Closest point lies on a sphere about a fixed center; `m` is the
    /// distance from the query point to that center and `u` the unit vector
    /// away from it.
    Point { m: S, u: [S; 3] },
    /// Closest point lies on a vertical axis; `m` and `u` are the horizontal
    /// distance and unit offset from the axis.
    Line { m: S, u: [S; 3] },
}

#[derive(Clone, Copy)]
struct ConvDims {
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

#[derive(Clone)]
enum Op<S> {
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Div { a: usize, b: usize },
    Scale { x: usize, k: S },
    AddConst { x: usize },
    MulScalarT { x: usize, s: usize },
    Sum { x: usize },
    Mean { x: usize },
    Square { x: usize },
    Sqrt { x: usize },
    Tanh { x: usize },
    Sigmoid { x: usize },
    Softplus { x: usize },
    Relu { x: usize },
    LeakyRelu { x: usize, slope: S },
    SmoothL1 { x: usize },
    Concat { parts: Vec<(usize, usize)> },
    Slice { x: usize, offset: usize },
    Reshape { x: usize },
    Linear { w: usize, x: usize, b: Option<usize> },
    Matmul { a: usize, b: usize, m: usize, k: usize, n: usize },
    AddBias { x: usize, b: usize, rows: usize, cols: usize },
    Conv2d { x: usize, w: usize, b: usize, stride: usize, pad: (usize, usize), circular: bool, dims: ConvDims },
    GridSample { x: usize, taps: Rc<Vec<Tap<S>>>, ch: usize, plane: usize },
    SurfaceDist { p: usize, surf: Surface<S> },
}

pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    ops: Vec<(usize, Op<S>)>,
    grads: Vec<Option<Vec<S>>>,
    pinned: usize,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), ops: Vec::new(), grads: Vec::new(), pinned: 0 }
    }

    // ── Node management ──────────────────────────────────────────────────

    fn push(&mut self, data: Vec<S>, shape: Vec<usize>, requires_grad: bool, op: Option<Op<S>>) -> TensorId {
        let id = self.nodes.len();
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        self.nodes.push(Node { storage: Storage::Owned(data), shape, requires_grad });
        if requires_grad {
            if let Some(op) = op {
                self.ops.push((id, op));
            }
        }
        TensorId(id)
    }

    /// Constant input; never receives gradients.
    pub fn leaf(&mut self, data: Vec<S>, shape: &[usize]) -> TensorId {
        self.push(data, shape.to_vec(), false, None)
    }

    /// Differentiable input owned by the tape.
    pub fn var(&mut self, data: Vec<S>, shape: &[usize]) -> TensorId {
        self.push(data, shape.to_vec(), true, None)
    }

    /// Input backed by external storage (model parameters).
    pub fn shared_leaf(&mut self, data: Rc<Vec<S>>, shape: &[usize], requires_grad: bool) -> TensorId {
        let id = self.nodes.len();
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "shared leaf length {} does not match shape {:?}",
            data.len(),
            shape
        );
        self.nodes.push(Node { storage: Storage::Shared(data), shape: shape.to_vec(), requires_grad });
        TensorId(id)
    }

    /// 1-element constant.
    pub fn scalar(&mut self, v: S) -> TensorId {
        self.leaf(vec![v], &[1])
    }

    /// Marks everything registered so far as surviving [`Tape::truncate`].
    pub fn seal_params(&mut self) {
        assert!(self.ops.is_empty(), "seal_params must come before any recorded op");
        self.pinned = self.nodes.len();
    }

    /// Drops all history except pinned leaves. Each id in `keep` is copied
    /// into a fresh detached leaf; the new ids are returned in order.
    pub fn truncate(&mut self, keep: &[TensorId]) -> Vec<TensorId> {
        let kept: Vec<(Vec<S>, Vec<usize>)> = keep
            .iter()
            .map(|&t| (self.data(t).to_vec(), self.shape(t).to_vec()))
            .collect();
        self.nodes.truncate(self.pinned);
        self.ops.clear();
        self.grads.clear();
        kept.into_iter().map(|(d, s)| self.leaf(d, &s)).collect()
    }

    /// Copy of `x` with no gradient history.
    pub fn detach(&mut self, x: TensorId) -> TensorId {
        let d = self.data(x).to_vec();
        let s = self.shape(x).to_vec();
        self.leaf(d, &s)
    }

    pub fn data(&self, t: TensorId) -> &[S] {
        self.nodes[t.0].storage.as_slice()
    }

    pub fn shape(&self, t: TensorId) -> &[usize] {
        &self.nodes[t.0].shape
    }

    pub fn numel(&self, t: TensorId) -> usize {
        self.data(t).len()
    }

    /// Value of a 1-element tensor.
    pub fn item(&self, t: TensorId) -> S {
        let d = self.data(t);
        assert_eq!(d.len(), 1, "item() on tensor of {} elements", d.len());
        d[0]
    }

    pub fn requires_grad(&self, t: TensorId) -> bool {
        self.nodes[t.0].requires_grad
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn any_grad(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    fn rg(&self, t: TensorId) -> bool {
        self.nodes[t.0].requires_grad
    }

    // ── Elementwise and reduction ops ────────────────────────────────────

    fn same_shape(&self, a: TensorId, b: TensorId, what: &str) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{}: shape mismatch {:?} vs {:?}",
            what,
            self.shape(a),
            self.shape(b)
        );
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.same_shape(a, b, "add");
        let out: Vec<S> = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.any_grad(&[a.0, b.0]);
        self.push(out, shape, rg, Some(Op::Add { a: a.0, b: b.0 }))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.same_shape(a, b, "sub");
        let out: Vec<S> = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x - y).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.any_grad(&[a.0, b.0]);
        self.push(out, shape, rg, Some(Op::Sub { a: a.0, b: b.0 }))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.same_shape(a, b, "mul");
        let out: Vec<S> = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.any_grad(&[a.0, b.0]);
        self.push(out, shape, rg, Some(Op::Mul { a: a.0, b: b.0 }))
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.same_shape(a, b, "div");
        let out: Vec<S> = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x / y).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.any_grad(&[a.0, b.0]);
        self.push(out, shape, rg, Some(Op::Div { a: a.0, b: b.0 }))
    }

    pub fn scale(&mut self, x: TensorId, k: S) -> TensorId {
        let out: Vec<S> = self.data(x).iter().map(|&v| v * k).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(out, shape, rg, Some(Op::Scale { x: x.0, k }))
    }

    pub fn add_const(&mut self, x: TensorId, k: S) -> TensorId {
        let out: Vec<S> = self.data(x).iter().map(|&v| v + k).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(out, shape, rg, Some(Op::AddConst { x: x.0 }))
    }

    /// Multiply every element of `x` by the 1-element tensor `s`.
    pub fn mul_scalar_t(&mut self, x: TensorId, s: TensorId) -> TensorId {
        assert_eq!(self.numel(s), 1, "mul_scalar_t: scale tensor must have 1 element");
        let sv = self.data(s)[0];
        let out: Vec<S> = self.data(x).iter().map(|&v| v * sv).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.any_grad(&[x.0, s.0]);
        self.push(out, shape, rg, Some(Op::MulScalarT { x: x.0, s: s.0 }))
    }

    pub fn sum(&mut self, x: TensorId) -> TensorId {
        let mut acc = S::zero();
        for &v in self.data(x) {
            acc = acc + v;
        }
        let rg = self.rg(x);
        self.push(vec![acc], vec![1], rg, Some(Op::Sum { x: x.0 }))
    }

    pub fn mean(&mut self, x: TensorId) -> TensorId {
        let n = self.numel(x);
        assert!(n > 0, "mean of empty tensor");
        let mut acc = S::zero();
        for &v in self.data(x) {
            acc = acc + v;
        }
        let rg = self.rg(x);
        self.push(vec![acc / S::c(n as f64)], vec![1], rg, Some(Op::Mean { x: x.0 }))
    }

    pub fn square(&mut self, x: TensorId) -> TensorId {
        let out: Vec<S> = self.data(x).iter().map(|&v| v * v).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(out, shape, rg, Some(Op::Square { x: x.0 }))
    }

    pub fn sqrt(&mut self, x: TensorId) -> TensorId {
        let out: Vec<S> = self.data(x).iter().map(|&v| v.sqrt()).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(out, shape, rg, Some(Op::Sqrt { x: x.0 }))
    }

    pub fn tanh(&mut self, x: TensorId) -> TensorId {
        let out: Vec<S> = self.data(x).iter().map(|&v| v.tanh()).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(out, shape, rg, Some(Op::Tanh { x: x.0 }))
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        let out: Vec<S> = self.data(x).iter().map(|&v| sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(out, shape, rg, Some(Op::Sigmoid { x: x.0 }))
    }

    pub fn softplus(&mut self, x: TensorId) -> TensorId {
        let out: Vec<S> = self.data(x).iter().map(|&v| softplus(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(out, shape, rg, Some(Op::Softplus { x: x.0 }))
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let z = S::zero();
        let out: Vec<S> = self.data(x).iter().map(|&v| if v > z { v } else { z }).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(out, shape, rg, Some(Op::Relu { x: x.0 }))
    }

    pub fn leaky_relu(&mut self, x: TensorId, slope: S) -> TensorId {
        let z = S::zero();
        let out: Vec<S> = self.data(x).iter().map(|&v| if v > z { v } else { v * slope }).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(out, shape, rg, Some(Op::LeakyRelu { x: x.0, slope }))
    }

    /// Elementwise smooth L1 with threshold 1: 0.5 x^2 inside, |x| - 0.5 outside.
    pub fn smooth_l1(&mut self, x: TensorId) -> TensorId {
        let one = S::one();
        let half = S::c(0.5);
        let out: Vec<S> = self
            .data(x)
            .iter()
            .map(|&v| if v.abs() < one { half * v * v } else { v.abs() - half })
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(out, shape, rg, Some(Op::SmoothL1 { x: x.0 }))
    }

    /// Concatenates flat tensors in order.
    pub fn concat(&mut self, parts: &[TensorId]) -> TensorId {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let mut out = Vec::new();
        let mut sizes = Vec::with_capacity(parts.len());
        for &p in parts {
            out.extend_from_slice(self.data(p));
            sizes.push((p.0, self.numel(p)));
        }
        let n = out.len();
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(out, vec![n], rg, Some(Op::Concat { parts: sizes }))
    }

    /// Contiguous range of a flat tensor.
    pub fn slice(&mut self, x: TensorId, offset: usize, len: usize) -> TensorId {
        let d = self.data(x);
        assert!(
            offset + len <= d.len(),
            "slice {}..{} out of bounds for {} elements",
            offset,
            offset + len,
            d.len()
        );
        let out = d[offset..offset + len].to_vec();
        let rg = self.rg(x);
        self.push(out, vec![len], rg, Some(Op::Slice { x: x.0, offset }))
    }

    /// Same data, new shape.
    pub fn reshape(&mut self, x: TensorId, shape: &[usize]) -> TensorId {
        let d = self.data(x).to_vec();
        assert_eq!(d.len(), shape.iter().product::<usize>(), "reshape: {} elements into shape {:?}", d.len(), shape);
        let rg = self.rg(x);
        self.push(d, shape.to_vec(), rg, Some(Op::Reshape { x: x.0 }))
    }

    // ── Dense / conv ops ─────────────────────────────────────────────────

    /// y = W x + b with W of shape [out, in].
    pub fn linear(&mut self, w: TensorId, x: TensorId, b: Option<TensorId>) -> TensorId {
        let ws = self.shape(w).to_vec();
        assert_eq!(ws.len(), 2, "linear: weight must be 2-D, got {:?}", ws);
        let (o, i) = (ws[0], ws[1]);
        assert_eq!(self.numel(x), i, "linear: input has {} elements, weight expects {}", self.numel(x), i);
        if let Some(b) = b {
            assert_eq!(self.numel(b), o, "linear: bias has {} elements, weight produces {}", self.numel(b), o);
        }
        let wd = self.data(w);
        let xd = self.data(x);
        let mut out = vec![S::zero(); o];
        for (r, dst) in out.iter_mut().enumerate() {
            let row = &wd[r * i..(r + 1) * i];
            let mut acc = S::zero();
            for (&wv, &xv) in row.iter().zip(xd) {
                acc = acc + wv * xv;
            }
            *dst = acc;
        }
        if let Some(b) = b {
            let bd = self.data(b);
            for (dst, &bv) in out.iter_mut().zip(bd) {
                *dst = *dst + bv;
            }
        }
        let mut ids = vec![w.0, x.0];
        if let Some(b) = b {
            ids.push(b.0);
        }
        let rg = self.any_grad(&ids);
        self.push(out, vec![o], rg, Some(Op::Linear { w: w.0, x: x.0, b: b.map(|t| t.0) }))
    }

    /// C = A B with explicit dims; inputs are validated by element count so
    /// callers can treat logical reshapes as free.
    pub fn matmul(&mut self, a: TensorId, b: TensorId, m: usize, k: usize, n: usize) -> TensorId {
        assert_eq!(self.numel(a), m * k, "matmul: lhs has {} elements, expected {}x{}", self.numel(a), m, k);
        assert_eq!(self.numel(b), k * n, "matmul: rhs has {} elements, expected {}x{}", self.numel(b), k, n);
        let ad = self.data(a);
        let bd = self.data(b);
        let mut out = vec![S::zero(); m * n];
        for r in 0..m {
            let arow = &ad[r * k..(r + 1) * k];
            let orow = &mut out[r * n..(r + 1) * n];
            for (kk, &av) in arow.iter().enumerate() {
                let brow = &bd[kk * n..(kk + 1) * n];
                for (dst, &bv) in orow.iter_mut().zip(brow) {
                    *dst = *dst + av * bv;
                }
            }
        }
        let rg = self.any_grad(&[a.0, b.0]);
        self.push(out, vec![m, n], rg, Some(Op::Matmul { a: a.0, b: b.0, m, k, n }))
    }

    /// x[rows, cols] + b[rows] broadcast along columns.
    pub fn add_bias(&mut self, x: TensorId, b: TensorId) -> TensorId {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 2, "add_bias: input must be 2-D, got {:?}", xs);
        let (rows, cols) = (xs[0], xs[1]);
        assert_eq!(self.numel(b), rows, "add_bias: bias has {} elements for {} rows", self.numel(b), rows);
        let xd = self.data(x);
        let bd = self.data(b);
        let mut out = vec![S::zero(); rows * cols];
        for r in 0..rows {
            let bv = bd[r];
            for (dst, &xv) in out[r * cols..(r + 1) * cols].iter_mut().zip(&xd[r * cols..(r + 1) * cols]) {
                *dst = xv + bv;
            }
        }
        let rg = self.any_grad(&[x.0, b.0]);
        self.push(out, vec![rows, cols], rg, Some(Op::AddBias { x: x.0, b: b.0, rows, cols }))
    }

    /// 2-D convolution over [C, H, W] input with [O, C, kh, kw] weights.
    ///
    /// `circular` wraps the width axis (longitude); the height axis is always
    /// zero padded by `pad.0`. With `circular` false both axes zero pad.
    pub fn conv2d(
        &mut self,
        x: TensorId,
        w: TensorId,
        b: TensorId,
        stride: usize,
        pad: (usize, usize),
        circular: bool,
    ) -> TensorId {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 3, "conv2d: input must be [C, H, W], got {:?}", xs);
        assert_eq!(ws.len(), 4, "conv2d: weight must be [O, C, kh, kw], got {:?}", ws);
        let (c, h, wdt) = (xs[0], xs[1], xs[2]);
        let (o, wc, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        assert_eq!(c, wc, "conv2d: input has {} channels, weight expects {}", c, wc);
        assert_eq!(self.numel(b), o, "conv2d: bias has {} elements for {} filters", self.numel(b), o);
        assert!(stride >= 1, "conv2d: stride must be >= 1");
        if circular {
            assert!(kw <= wdt, "conv2d: circular kernel width {} exceeds input width {}", kw, wdt);
        }
        let (ph, pw) = pad;
        assert!(
            h + 2 * ph >= kh && wdt + 2 * pw >= kw,
            "conv2d: kernel {}x{} too large for padded input {}x{}",
            kh,
            kw,
            h + 2 * ph,
            wdt + 2 * pw
        );
        let ho = (h + 2 * ph - kh) / stride + 1;
        let wo = (wdt + 2 * pw - kw) / stride + 1;
        let dims = ConvDims { c, h, w: wdt, o, kh, kw, ho, wo };

        let xd = self.data(x);
        let wd = self.data(w);
        let bd = self.data(b);
        let mut out = vec![S::zero(); o * ho * wo];
        conv2d_forward(xd, wd, bd, &dims, stride, pad, circular, &mut out);

        let rg = self.any_grad(&[x.0, w.0, b.0]);
        self.push(
            out,
            vec![o, ho, wo],
            rg,
            Some(Op::Conv2d { x: x.0, w: w.0, b: b.0, stride, pad, circular, dims }),
        )
    }

    /// Bilinear gather at continuous pixel coordinates (row, col).
    ///
    /// Rows clamp at the poles; columns wrap when `wrap_width` is set,
    /// otherwise clamp. Gradients flow to the input values only.
    pub fn grid_sample_bilinear(&mut self, x: TensorId, coords: &[[f64; 2]], wrap_width: bool) -> TensorId {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 3, "grid_sample: input must be [C, H, W], got {:?}", xs);
        let taps = Rc::new(bilinear_taps(coords, xs[1], xs[2], wrap_width));
        let n = coords.len();
        self.grid_sample_taps(x, taps, &[xs[0], n])
    }

    /// Gather with precomputed taps. `out_shape` must hold C * taps.len()
    /// elements laid out sample-major within each channel.
    pub fn grid_sample_taps(&mut self, x: TensorId, taps: Rc<Vec<Tap<S>>>, out_shape: &[usize]) -> TensorId {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 3, "grid_sample: input must be [C, H, W], got {:?}", xs);
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let plane = h * w;
        let n = taps.len();
        assert_eq!(
            out_shape.iter().product::<usize>(),
            c * n,
            "grid_sample: out shape {:?} does not hold {} samples x {} channels",
            out_shape,
            n,
            c
        );
        let xd = self.data(x);
        let mut out = vec![S::zero(); c * n];
        for ch in 0..c {
            let src = &xd[ch * plane..(ch + 1) * plane];
            let dst = &mut out[ch * n..(ch + 1) * n];
            for (d, t) in dst.iter_mut().zip(taps.iter()) {
                *d = src[t.idx[0] as usize] * t.w[0]
                    + src[t.idx[1] as usize] * t.w[1]
                    + src[t.idx[2] as usize] * t.w[2]
                    + src[t.idx[3] as usize] * t.w[3];
            }
        }
        let rg = self.rg(x);
        self.push(out, out_shape.to_vec(), rg, Some(Op::GridSample { x: x.0, taps, ch: c, plane }))
    }

    /// Single GRU step. Gate layout follows [reset; update; candidate] rows in
    /// the stacked weights: w_ih [3H, D], w_hh [3H, H], biases [3H].
    pub fn gru_cell(
        &mut self,
        x: TensorId,
        h: TensorId,
        w_ih: TensorId,
        w_hh: TensorId,
        b_ih: TensorId,
        b_hh: TensorId,
    ) -> TensorId {
        let hidden = self.numel(h);
        assert_eq!(
            self.shape(w_ih)[0],
            3 * hidden,
            "gru_cell: w_ih rows {} != 3 * hidden {}",
            self.shape(w_ih)[0],
            3 * hidden
        );
        assert_eq!(
            self.shape(w_hh)[0],
            3 * hidden,
            "gru_cell: w_hh rows {} != 3 * hidden {}",
            self.shape(w_hh)[0],
            3 * hidden
        );
        let gi = self.linear(w_ih, x, Some(b_ih));
        let gh = self.linear(w_hh, h, Some(b_hh));
        let gi_r = self.slice(gi, 0, hidden);
        let gi_z = self.slice(gi, hidden, hidden);
        let gi_n = self.slice(gi, 2 * hidden, hidden);
        let gh_r = self.slice(gh, 0, hidden);
        let gh_z = self.slice(gh, hidden, hidden);
        let gh_n = self.slice(gh, 2 * hidden, hidden);
        let pre_r = self.add(gi_r, gh_r);
        let r = self.sigmoid(pre_r);
        let pre_z = self.add(gi_z, gh_z);
        let z = self.sigmoid(pre_z);
        let rgh = self.mul(r, gh_n);
        let pre_n = self.add(gi_n, rgh);
        let n = self.tanh(pre_n);
        let zh = self.mul(z, h);
        let zn = self.mul(z, n);
        let n_part = self.sub(n, zn);
        self.add(n_part, zh)
    }

    /// Records a surface-distance node: output [d, dir_x, dir_y, dir_z] for
    /// query point `p`. The caller supplies the forward value and the
    /// canonical surface for the backward pass.
    pub fn surface_dist(&mut self, p: TensorId, value: [S; 4], surf: Surface<S>) -> TensorId {
        assert_eq!(self.numel(p), 3, "surface_dist: query point must have 3 elements");
        let rg = self.rg(p);
        self.push(value.to_vec(), vec![4], rg, Some(Op::SurfaceDist { p: p.0, surf }))
    }

    // ── Backward ─────────────────────────────────────────────────────────

    /// Reverse pass from a scalar root. Gradients of earlier backward calls
    /// are discarded; read results per leaf with [`Tape::grad`].
    pub fn backward(&mut self, root: TensorId) {
        assert_eq!(self.numel(root), 1, "backward: root must be scalar, got {} elements", self.numel(root));
        assert!(
            self.nodes[root.0].requires_grad,
            "backward: root does not depend on any differentiable input"
        );
        self.grads.clear();
        self.grads.resize_with(self.nodes.len(), || None);
        self.grads[root.0] = Some(vec![S::one()]);

        for oi in (0..self.ops.len()).rev() {
            let (out_id, op) = {
                let (id, ref op) = self.ops[oi];
                (id, op.clone())
            };
            let g = match self.grads[out_id].take() {
                Some(g) => g,
                None => continue,
            };
            self.backward_op(out_id, &op, &g);
            self.grads[out_id] = Some(g);
        }
    }

    fn grad_buf(&mut self, id: usize) -> &mut Vec<S> {
        if self.grads[id].is_none() {
            let n = self.nodes[id].storage.as_slice().len();
            self.grads[id] = Some(vec![S::zero(); n]);
        }
        self.grads[id].as_mut().unwrap()
    }

    /// Gradient of a node after [`Tape::backward`]; `None` if it did not
    /// participate.
    pub fn grad(&self, t: TensorId) -> Option<&[S]> {
        self.grads.get(t.0).and_then(|g| g.as_deref())
    }

    /// Gradient with non-participating leaves reported as zeros.
    pub fn grad_or_zeros(&self, t: TensorId) -> Vec<S> {
        match self.grad(t) {
            Some(g) => g.to_vec(),
            None => vec![S::zero(); self.numel(t)],
        }
    }

    fn node_data(&self, id: usize) -> Vec<S> {
        self.nodes[id].storage.as_slice().to_vec()
    }

    fn backward_op(&mut self, out_id: usize, op: &Op<S>, g: &[S]) {
        match *op {
            Op::Add { a, b } => {
                if self.nodes[a].requires_grad {
                    axpy(self.grad_buf(a), g, S::one());
                }
                if self.nodes[b].requires_grad {
                    axpy(self.grad_buf(b), g, S::one());
                }
            }
            Op::Sub { a, b } => {
                if self.nodes[a].requires_grad {
                    axpy(self.grad_buf(a), g, S::one());
                }
                if self.nodes[b].requires_grad {
                    axpy(self.grad_buf(b), g, -S::one());
                }
            }
            Op::Mul { a, b } => {
                if self.nodes[a].requires_grad {
                    let bd = self.node_data(b);
                    mul_accum(self.grad_buf(a), g, &bd);
                }
                if self.nodes[b].requires_grad {
                    let ad = self.node_data(a);
                    mul_accum(self.grad_buf(b), g, &ad);
                }
            }
            Op::Div { a, b } => {
                let bd = self.node_data(b);
                if self.nodes[a].requires_grad {
                    let buf = self.grad_buf(a);
                    for i in 0..g.len() {
                        buf[i] = buf[i] + g[i] / bd[i];
                    }
                }
                if self.nodes[b].requires_grad {
                    let ad = self.node_data(a);
                    let buf = self.grad_buf(b);
                    for i in 0..g.len() {
                        buf[i] = buf[i] - g[i] * ad[i] / (bd[i] * bd[i]);
                    }
                }
            }
            Op::Scale { x, k } => {
                if self.nodes[x].requires_grad {
                    axpy(self.grad_buf(x), g, k);
                }
            }
            Op::AddConst { x } => {
                if self.nodes[x].requires_grad {
                    axpy(self.grad_buf(x), g, S::one());
                }
            }
            Op::MulScalarT { x, s } => {
                let sv = self.node_data(s)[0];
                if self.nodes[x].requires_grad {
                    axpy(self.grad_buf(x), g, sv);
                }
                if self.nodes[s].requires_grad {
                    let xd = self.node_data(x);
                    let mut acc = S::zero();
                    for (&gv, &xv) in g.iter().zip(&xd) {
                        acc = acc + gv * xv;
                    }
                    let buf = self.grad_buf(s);
                    buf[0] = buf[0] + acc;
                }
            }
            Op::Sum { x } => {
                if self.nodes[x].requires_grad {
                    let gv = g[0];
                    for slot in self.grad_buf(x).iter_mut() {
                        *slot = *slot + gv;
                    }
                }
            }
            Op::Mean { x } => {
                if self.nodes[x].requires_grad {
                    let n = self.nodes[x].storage.as_slice().len();
                    let gv = g[0] / S::c(n as f64);
                    for slot in self.grad_buf(x).iter_mut() {
                        *slot = *slot + gv;
                    }
                }
            }
            Op::Square { x } => {
                if self.nodes[x].requires_grad {
                    let xd = self.node_data(x);
                    let buf = self.grad_buf(x);
                    let two = S::c(2.0);
                    for i in 0..g.len() {
                        buf[i] = buf[i] + two * g[i] * xd[i];
                    }
                }
            }
            Op::Sqrt { x } => {
                if self.nodes[x].requires_grad {
                    let yd = self.node_data(out_id);
                    let buf = self.grad_buf(x);
                    let half = S::c(0.5);
                    for i in 0..g.len() {
                        buf[i] = buf[i] + half * g[i] / yd[i];
                    }
                }
            }
            Op::Tanh { x } => {
                if self.nodes[x].requires_grad {
                    let yd = self.node_data(out_id);
                    let buf = self.grad_buf(x);
                    for i in 0..g.len() {
                        buf[i] = buf[i] + g[i] * (S::one() - yd[i] * yd[i]);
                    }
                }
            }
            Op::Sigmoid { x } => {
                if self.nodes[x].requires_grad {
                    let yd = self.node_data(out_id);
                    let buf = self.grad_buf(x);
                    for i in 0..g.len() {
                        buf[i] = buf[i] + g[i] * yd[i] * (S::one() - yd[i]);
                    }
                }
            }
            Op::Softplus { x } => {
                if self.nodes[x].requires_grad {
                    let xd = self.node_data(x);
                    let buf = self.grad_buf(x);
                    for i in 0..g.len() {
                        buf[i] = buf[i] + g[i] * sigmoid(xd[i]);
                    }
                }
            }
            Op::Relu { x } => {
                if self.nodes[x].requires_grad {
                    let xd = self.node_data(x);
                    let buf = self.grad_buf(x);
                    for i in 0..g.len() {
                        if xd[i] > S::zero() {
                            buf[i] = buf[i] + g[i];
                        }
                    }
                }
            }
            Op::LeakyRelu { x, slope } => {
                if self.nodes[x].requires_grad {
                    let xd = self.node_data(x);
                    let buf = self.grad_buf(x);
                    for i in 0..g.len() {
                        let k = if xd[i] > S::zero() { S::one() } else { slope };
                        buf[i] = buf[i] + g[i] * k;
                    }
                }
            }
            Op::SmoothL1 { x } => {
                if self.nodes[x].requires_grad {
                    let xd = self.node_data(x);
                    let buf = self.grad_buf(x);
                    for i in 0..g.len() {
                        let d = if xd[i].abs() < S::one() { xd[i] } else { xd[i].signum() };
                        buf[i] = buf[i] + g[i] * d;
                    }
                }
            }
            Op::Concat { ref parts } => {
                let mut off = 0;
                for &(pid, len) in parts {
                    if self.nodes[pid].requires_grad {
                        let seg = g[off..off + len].to_vec();
                        axpy(self.grad_buf(pid), &seg, S::one());
                    }
                    off += len;
                }
            }
            Op::Slice { x, offset } => {
                if self.nodes[x].requires_grad {
                    let buf = self.grad_buf(x);
                    for (slot, &gv) in buf[offset..offset + g.len()].iter_mut().zip(g) {
                        *slot = *slot + gv;
                    }
                }
            }
            Op::Reshape { x } => {
                if self.nodes[x].requires_grad {
                    axpy(self.grad_buf(x), g, S::one());
                }
            }
            Op::Linear { w, x, b } => {
                let o = g.len();
                let i = self.nodes[x].storage.as_slice().len();
                if self.nodes[w].requires_grad {
                    let xd = self.node_data(x);
                    let buf = self.grad_buf(w);
                    for r in 0..o {
                        let gv = g[r];
                        let row = &mut buf[r * i..(r + 1) * i];
                        for (slot, &xv) in row.iter_mut().zip(&xd) {
                            *slot = *slot + gv * xv;
                        }
                    }
                }
                if self.nodes[x].requires_grad {
                    let wd = self.node_data(w);
                    let buf = self.grad_buf(x);
                    for r in 0..o {
                        let gv = g[r];
                        let row = &wd[r * i..(r + 1) * i];
                        for (slot, &wv) in buf.iter_mut().zip(row) {
                            *slot = *slot + gv * wv;
                        }
                    }
                }
                if let Some(b) = b {
                    if self.nodes[b].requires_grad {
                        axpy(self.grad_buf(b), g, S::one());
                    }
                }
            }
            Op::Matmul { a, b, m, k, n } => {
                if self.nodes[a].requires_grad {
                    let bd = self.node_data(b);
                    let buf = self.grad_buf(a);
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        let arow = &mut buf[r * k..(r + 1) * k];
                        for (kk, slot) in arow.iter_mut().enumerate() {
                            let brow = &bd[kk * n..(kk + 1) * n];
                            let mut acc = S::zero();
                            for (&gv, &bv) in grow.iter().zip(brow) {
                                acc = acc + gv * bv;
                            }
                            *slot = *slot + acc;
                        }
                    }
                }
                if self.nodes[b].requires_grad {
                    let ad = self.node_data(a);
                    let buf = self.grad_buf(b);
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        let arow = &ad[r * k..(r + 1) * k];
                        for (kk, &av) in arow.iter().enumerate() {
                            let brow = &mut buf[kk * n..(kk + 1) * n];
                            for (slot, &gv) in brow.iter_mut().zip(grow) {
                                *slot = *slot + av * gv;
                            }
                        }
                    }
                }
            }
            Op::AddBias { x, b, rows, cols } => {
                if self.nodes[x].requires_grad {
                    axpy(self.grad_buf(x), g, S::one());
                }
                if self.nodes[b].requires_grad {
                    let buf = self.grad_buf(b);
                    for r in 0..rows {
                        let mut acc = S::zero();
                        for &gv in &g[r * cols..(r + 1) * cols] {
                            acc = acc + gv;
                        }
                        buf[r] = buf[r] + acc;
                    }
                }
            }
            Op::Conv2d { x, w, b, stride, pad, circular, dims } => {
                if self.nodes[b].requires_grad {
                    let plane = dims.ho * dims.wo;
                    let buf = self.grad_buf(b);
                    for o in 0..dims.o {
                        let mut acc = S::zero();
                        for &gv in &g[o * plane..(o + 1) * plane] {
                            acc = acc + gv;
                        }
                        buf[o] = buf[o] + acc;
                    }
                }
                if self.nodes[w].requires_grad {
                    let xd = self.node_data(x);
                    let buf = self.grad_buf(w);
                    conv2d_grad_w(&xd, g, &dims, stride, pad, circular, buf);
                }
                if self.nodes[x].requires_grad {
                    let wd = self.node_data(w);
                    let buf = self.grad_buf(x);
                    conv2d_grad_x(&wd, g, &dims, stride, pad, circular, buf);
                }
            }
            Op::GridSample { x, ref taps, ch, plane } => {
                if self.nodes[x].requires_grad {
                    let taps = Rc::clone(taps);
                    let n = taps.len();
                    let buf = self.grad_buf(x);
                    for c in 0..ch {
                        let base = c * plane;
                        let gs = &g[c * n..(c + 1) * n];
                        for (t, &gv) in taps.iter().zip(gs) {
                            for j in 0..4 {
                                let i = base + t.idx[j] as usize;
                                buf[i] = buf[i] + gv * t.w[j];
                            }
                        }
                    }
                }
            }
            Op::SurfaceDist { p, ref surf } => {
                if self.nodes[p].requires_grad {
                    let surf = surf.clone();
                    let gd = g[0];
                    let gdir = [g[1], g[2], g[3]];
                    let buf = self.grad_buf(p);
                    match surf {
                        Surface::Plane { normal } => {
                            for i in 0..3 {
                                buf[i] = buf[i] + gd * normal[i];
                            }
                        }
                        Surface::Point { m, u } => {
                            // d = |p - c| - r and dir = -u with u = (p - c)/m.
                            let udotg = u[0] * gdir[0] + u[1] * gdir[1] + u[2] * gdir[2];
                            for i in 0..3 {
                                let ddir = -(gdir[i] - u[i] * udotg) / m;
                                buf[i] = buf[i] + gd * u[i] + ddir;
                            }
                        }
                        Surface::Line { m, u } => {
                            // Only the horizontal offset moves the closest point.
                            let udotg = u[0] * gdir[0] + u[1] * gdir[1];
                            for i in 0..2 {
                                let ddir = -(gdir[i] - u[i] * udotg) / m;
                                buf[i] = buf[i] + gd * u[i] + ddir;
                            }
                        }
                    }
                }
            }
        }
    }
}

// ── Shared math helpers ──────────────────────────────────────────────────

fn axpy<S: Scalar>(buf: &mut [S], g: &[S], k: S) {
    for (slot, &gv) in buf.iter_mut().zip(g) {
        *slot = *slot + gv * k;
    }
}

fn mul_accum<S: Scalar>(buf: &mut [S], g: &[S], other: &[S]) {
    for ((slot, &gv), &ov) in buf.iter_mut().zip(g).zip(other) {
        *slot = *slot + gv * ov;
    }
}

pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Overflow-safe ln(1 + e^x).
pub fn softplus<S: Scalar>(x: S) -> S {
    let zero = S::zero();
    let big = if x > zero { x } else { zero };
    big + (-(x.abs())).exp().ln_1p()
}

/// Bilinear corner indices and weights for continuous (row, col) coordinates.
pub fn bilinear_taps<S: Scalar>(coords: &[[f64; 2]], h: usize, w: usize, wrap_width: bool) -> Vec<Tap<S>> {
    assert!(h >= 1 && w >= 1, "grid_sample: empty input plane");
    let mut taps = Vec::with_capacity(coords.len());
    for &[r, c] in coords {
        let r0 = r.floor();
        let c0 = c.floor();
        let fr = r - r0;
        let fc = c - c0;
        let i0 = (r0 as i64).clamp(0, h as i64 - 1) as usize;
        let i1 = (r0 as i64 + 1).clamp(0, h as i64 - 1) as usize;
        let (j0, j1);
        if wrap_width {
            j0 = (c0 as i64).rem_euclid(w as i64) as usize;
            j1 = (c0 as i64 + 1).rem_euclid(w as i64) as usize;
        } else {
            j0 = (c0 as i64).clamp(0, w as i64 - 1) as usize;
            j1 = (c0 as i64 + 1).clamp(0, w as i64 - 1) as usize;
        }
        taps.push(Tap {
            idx: [(i0 * w + j0) as u32, (i0 * w + j1) as u32, (i1 * w + j0) as u32, (i1 * w + j1) as u32],
            w: [
                S::c((1.0 - fr) * (1.0 - fc)),
                S::c((1.0 - fr) * fc),
                S::c(fr * (1.0 - fc)),
                S::c(fr * fc),
            ],
        });
    }
    taps
}

// ── Convolution kernels ──────────────────────────────────────────────────

#[allow(clippy::too_many_arguments)]
fn conv2d_forward<S: Scalar>(
    x: &[S],
    w: &[S],
    b: &[S],
    d: &ConvDims,
    stride: usize,
    pad: (usize, usize),
    circular: bool,
    out: &mut [S],
) {
    let (ph, pw) = pad;
    let oplane = d.ho * d.wo;
    for o in 0..d.o {
        let bias = b[o];
        for slot in out[o * oplane..(o + 1) * oplane].iter_mut() {
            *slot = bias;
        }
    }
    for o in 0..d.o {
        for c in 0..d.c {
            for ki in 0..d.kh {
                for kj in 0..d.kw {
                    let wv = w[((o * d.c + c) * d.kh + ki) * d.kw + kj];
                    for oi in 0..d.ho {
                        let ii = (oi * stride + ki) as i64 - ph as i64;
                        if ii < 0 || ii >= d.h as i64 {
                            continue;
                        }
                        let row0 = (c * d.h + ii as usize) * d.w;
                        let in_row = &x[row0..row0 + d.w];
                        let out_row = &mut out[(o * d.ho + oi) * d.wo..(o * d.ho + oi + 1) * d.wo];
                        if stride == 1 && !circular {
                            let lo = pw.saturating_sub(kj);
                            let hi = (d.w + pw - kj).min(d.wo);
                            if lo < hi {
                                let src = &in_row[lo + kj - pw..hi + kj - pw];
                                for (slot, &xv) in out_row[lo..hi].iter_mut().zip(src) {
                                    *slot = *slot + wv * xv;
                                }
                            }
                        } else {
                            for (oj, slot) in out_row.iter_mut().enumerate() {
                                let jj = (oj * stride + kj) as i64 - pw as i64;
                                let jj = if circular {
                                    jj.rem_euclid(d.w as i64) as usize
                                } else if jj < 0 || jj >= d.w as i64 {
                                    continue;
                                } else {
                                    jj as usize
                                };
                                *slot = *slot + wv * in_row[jj];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_grad_w<S: Scalar>(
    x: &[S],
    g: &[S],
    d: &ConvDims,
    stride: usize,
    pad: (usize, usize),
    circular: bool,
    gw: &mut [S],
) {
    let (ph, pw) = pad;
    for o in 0..d.o {
        for c in 0..d.c {
            for ki in 0..d.kh {
                for kj in 0..d.kw {
                    let mut acc = S::zero();
                    for oi in 0..d.ho {
                        let ii = (oi * stride + ki) as i64 - ph as i64;
                        if ii < 0 || ii >= d.h as i64 {
                            continue;
                        }
                        let row0 = (c * d.h + ii as usize) * d.w;
                        let in_row = &x[row0..row0 + d.w];
                        let g_row = &g[(o * d.ho + oi) * d.wo..(o * d.ho + oi + 1) * d.wo];
                        for (oj, &gv) in g_row.iter().enumerate() {
                            let jj = (oj * stride + kj) as i64 - pw as i64;
                            let jj = if circular {
                                jj.rem_euclid(d.w as i64) as usize
                            } else if jj < 0 || jj >= d.w as i64 {
                                continue;
                            } else {
                                jj as usize
                            };
                            acc = acc + gv * in_row[jj];
                        }
                    }
                    let slot = &mut gw[((o * d.c + c) * d.kh + ki) * d.kw + kj];
                    *slot = *slot + acc;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_grad_x<S: Scalar>(
    w: &[S],
    g: &[S],
    d: &ConvDims,
    stride: usize,
    pad: (usize, usize),
    circular: bool,
    gx: &mut [S],
) {
    let (ph, pw) = pad;
    for o in 0..d.o {
        for c in 0..d.c {
            for ki in 0..d.kh {
                for kj in 0..d.kw {
                    let wv = w[((o * d.c + c) * d.kh + ki) * d.kw + kj];
                    for oi in 0..d.ho {
                        let ii = (oi * stride + ki) as i64 - ph as i64;
                        if ii < 0 || ii >= d.h as i64 {
                            continue;
                        }
                        let row0 = (c * d.h + ii as usize) * d.w;
                        let g_row = &g[(o * d.ho + oi) * d.wo..(o * d.ho + oi + 1) * d.wo];
                        for (oj, &gv) in g_row.iter().enumerate() {
                            let jj = (oj * stride + kj) as i64 - pw as i64;
                            let jj = if circular {
                                jj.rem_euclid(d.w as i64) as usize
                            } else if jj < 0 || jj >= d.w as i64 {
                                continue;
                            } else {
                                jj as usize
                            };
                            gx[row0 + jj] = gx[row0 + jj] + wv * gv;
                        }
                    }
                }
            }
        }
    }
}
