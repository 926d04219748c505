//! Differentiable tensor kernels for the enhancer models.
//!
//! A `Graph` is a flat tape of `Tensor` nodes. Forward ops append nodes;
//! `backward` walks the tape in reverse and accumulates gradients into every
//! node that requires them. The op set is exactly what the generator and
//! discriminator need: 1D convolutions (plain and transposed, bias-free),
//! PReLU, tanh, batch normalization, dense layers, channel concatenation,
//! and the scalar reductions used by the losses.
//!
//! Everything is generic over `f32`/`f64`; training runs in single precision,
//! gradient checking in double.

mod conv;
mod optim;

pub use optim::{rmsprop_step, RmsPropState};

use std::fmt;

use num_traits::Float;
use thiserror::Error;

/// Scalar element type for tensors. Implemented for `f32` and `f64`.
pub trait Element:
    Float
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::iter::Sum
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Element for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: {msg}")]
    Shape { op: &'static str, msg: String },
    #[error("backward requires a rank-0 scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("batchnorm1d requires more than one element per channel (N*L > 1)")]
    DegenerateBatchNorm,
    #[error("rmsprop_step: {0}")]
    Optimizer(String),
}

fn shape_err(op: &'static str, msg: String) -> TensorError {
    TensorError::Shape { op, msg }
}

/// Handle into a `Graph`'s node arena.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct TensorId(usize);

/// One node of the tape: a value plus the op that produced it.
pub struct Tensor<T: Element> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    /// Leaves: set by the caller. Derived nodes: true when any input requires
    /// a gradient, so backward knows which subgraphs to visit.
    pub requires_grad: bool,
    pub grad: Option<Vec<T>>,
    op: Op<T>,
}

impl<T: Element> Tensor<T> {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

enum Op<T: Element> {
    Leaf,
    Conv1d {
        x: TensorId,
        w: TensorId,
        stride: usize,
        pad: usize,
    },
    ConvT1d {
        x: TensorId,
        w: TensorId,
        stride: usize,
        pad: usize,
    },
    Prelu {
        x: TensorId,
        alpha: TensorId,
    },
    Tanh {
        x: TensorId,
    },
    BatchNorm {
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: T,
        mean: Vec<T>,
        var: Vec<T>,
    },
    Dense {
        x: TensorId,
        w: TensorId,
        b: TensorId,
    },
    ConcatChannels {
        a: TensorId,
        b: TensorId,
    },
    Reshape {
        x: TensorId,
    },
    L1Loss {
        a: TensorId,
        b: TensorId,
    },
    SubScalar {
        x: TensorId,
    },
    Square {
        x: TensorId,
    },
    Scale {
        x: TensorId,
        c: T,
    },
    Add {
        a: TensorId,
        b: TensorId,
    },
    SumAll {
        x: TensorId,
    },
    MeanAll {
        x: TensorId,
    },
}

/// Per-pass gradient scratch: one slot per tape node, lazily zero-filled.
fn grad_slot<'a, T: Element>(
    scratch: &'a mut [Option<Vec<T>>],
    id: TensorId,
    numel: usize,
) -> &'a mut Vec<T> {
    scratch[id.0].get_or_insert_with(|| vec![T::zero(); numel])
}

fn add_grad<T: Element>(scratch: &mut [Option<Vec<T>>], id: TensorId, src: &[T]) {
    let slot = grad_slot(scratch, id, src.len());
    for (a, b) in slot.iter_mut().zip(src) {
        *a += *b;
    }
}

/// Tape of tensor nodes. Ops append; `backward` walks the tape in reverse.
pub struct Graph<T: Element> {
    nodes: Vec<Tensor<T>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    /// Insert an input node. Set `requires_grad` for trainable parameters.
    pub fn leaf(&mut self, data: Vec<T>, shape: Vec<usize>, requires_grad: bool) -> TensorId {
        let numel: usize = shape.iter().product();
        assert_eq!(data.len(), numel, "leaf data length must match shape");
        self.push(data, shape, requires_grad, Op::Leaf)
    }

    pub fn scalar_leaf(&mut self, v: T, requires_grad: bool) -> TensorId {
        self.leaf(vec![v], vec![], requires_grad)
    }

    fn push(&mut self, data: Vec<T>, shape: Vec<usize>, requires_grad: bool, op: Op<T>) -> TensorId {
        // Ops must not produce NaN/Inf from finite inputs.
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite value produced by a tensor op"
        );
        let id = TensorId(self.nodes.len());
        self.nodes.push(Tensor {
            shape,
            data,
            requires_grad,
            grad: None,
            op,
        });
        id
    }

    pub fn tensor(&self, id: TensorId) -> &Tensor<T> {
        &self.nodes[id.0]
    }

    /// Nodes currently on the tape; pair with `truncate` for repeated
    /// inference over fixed leaves.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop every node from `mark` onward. Ids handed out since the matching
    /// `len()` call become invalid; earlier ids keep their meaning, so bound
    /// parameters survive while per-window activations are reclaimed.
    pub fn truncate(&mut self, mark: usize) {
        self.nodes.truncate(mark);
    }

    pub fn data(&self, id: TensorId) -> &[T] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn grad(&self, id: TensorId) -> Option<&[T]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Drop all accumulated gradients.
    pub fn clear_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn requires(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    // ── Layer ops ───────────────────────────────────────────────────────

    /// Bias-free 1D cross-correlation. `x`: N x C_in x L, `w`: C_out x C_in x K.
    /// Output length is floor((L + 2*pad - K)/stride) + 1.
    pub fn conv1d(
        &mut self,
        x: TensorId,
        w: TensorId,
        stride: usize,
        pad: usize,
    ) -> Result<TensorId, TensorError> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 3 || ws.len() != 3 {
            return Err(shape_err(
                "conv1d",
                format!("expected rank-3 input and weight, got {:?} and {:?}", xs, ws),
            ));
        }
        let (n, c_in, l) = (xs[0], xs[1], xs[2]);
        let (c_out, w_cin, k) = (ws[0], ws[1], ws[2]);
        if w_cin != c_in {
            return Err(shape_err(
                "conv1d",
                format!("input has {} channels but weight expects {}", c_in, w_cin),
            ));
        }
        if k % 2 == 0 {
            return Err(shape_err(
                "conv1d",
                format!("kernel size {} must be odd so symmetric padding is possible", k),
            ));
        }
        if l + 2 * pad < k {
            return Err(shape_err(
                "conv1d",
                format!("padded length {} shorter than kernel {}", l + 2 * pad, k),
            ));
        }
        let l_out = (l + 2 * pad - k) / stride + 1;
        let mut out = vec![T::zero(); n * c_out * l_out];
        conv::conv1d_forward(
            self.data(x),
            self.data(w),
            &mut out,
            conv::ConvDims {
                n,
                c_in,
                l_in: l,
                c_out,
                k,
                stride,
                pad,
                l_out,
            },
        );
        let req = self.requires(x) || self.requires(w);
        Ok(self.push(out, vec![n, c_out, l_out], req, Op::Conv1d { x, w, stride, pad }))
    }

    /// Bias-free 1D transposed convolution, the linear adjoint of `conv1d`.
    /// `x`: N x C_in x L, `w`: C_in x C_out x K.
    /// Output length is (L-1)*stride - 2*pad + K + output_pad.
    pub fn conv1d_transposed(
        &mut self,
        x: TensorId,
        w: TensorId,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Result<TensorId, TensorError> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 3 || ws.len() != 3 {
            return Err(shape_err(
                "conv1d_transposed",
                format!("expected rank-3 input and weight, got {:?} and {:?}", xs, ws),
            ));
        }
        let (n, c_in, l) = (xs[0], xs[1], xs[2]);
        let (w_cin, c_out, k) = (ws[0], ws[1], ws[2]);
        if w_cin != c_in {
            return Err(shape_err(
                "conv1d_transposed",
                format!("input has {} channels but weight expects {}", c_in, w_cin),
            ));
        }
        if output_pad >= stride {
            return Err(shape_err(
                "conv1d_transposed",
                format!("output_pad {} must be < stride {}", output_pad, stride),
            ));
        }
        let expanded = (l - 1) * stride + k + output_pad;
        if expanded < 2 * pad {
            return Err(shape_err(
                "conv1d_transposed",
                format!("padding {} too large for expanded length {}", pad, expanded),
            ));
        }
        let l_out = expanded - 2 * pad;
        let mut out = vec![T::zero(); n * c_out * l_out];
        conv::conv1d_transposed_forward(
            self.data(x),
            self.data(w),
            &mut out,
            conv::ConvDims {
                n,
                c_in,
                l_in: l,
                c_out,
                k,
                stride,
                pad,
                l_out,
            },
        );
        let req = self.requires(x) || self.requires(w);
        Ok(self.push(out, vec![n, c_out, l_out], req, Op::ConvT1d { x, w, stride, pad }))
    }

    /// Parametric ReLU with one learnable slope per channel (axis 1).
    pub fn prelu(&mut self, x: TensorId, alpha: TensorId) -> Result<TensorId, TensorError> {
        let xs = self.shape(x);
        if xs.len() < 2 {
            return Err(shape_err(
                "prelu",
                format!("expected rank >= 2 input, got {:?}", xs),
            ));
        }
        let channels = xs[1];
        let als = self.shape(alpha);
        if als != [channels] {
            return Err(shape_err(
                "prelu",
                format!("alpha shape {:?} does not match {} channels", als, channels),
            ));
        }
        let n = xs[0];
        let inner: usize = xs[2..].iter().product();
        let xv = self.data(x);
        let av = self.data(alpha);
        let mut out = vec![T::zero(); xv.len()];
        for b in 0..n {
            for c in 0..channels {
                let a = av[c];
                let base = (b * channels + c) * inner;
                for i in 0..inner {
                    let v = xv[base + i];
                    out[base + i] = if v >= T::zero() { v } else { a * v };
                }
            }
        }
        let shape = xs.to_vec();
        let req = self.requires(x) || self.requires(alpha);
        Ok(self.push(out, shape, req, Op::Prelu { x, alpha }))
    }

    /// Elementwise tanh; output lies in [-1, 1].
    pub fn tanh(&mut self, x: TensorId) -> TensorId {
        let out: Vec<T> = self.data(x).iter().map(|v| v.tanh()).collect();
        let shape = self.shape(x).to_vec();
        let req = self.requires(x);
        self.push(out, shape, req, Op::Tanh { x })
    }

    /// Batch normalization over the N and L axes, batch-statistics mode only.
    /// `x`: N x C x L, `gamma`/`beta`: C.
    pub fn batchnorm1d(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: T,
    ) -> Result<TensorId, TensorError> {
        let xs = self.shape(x);
        if xs.len() != 3 {
            return Err(shape_err(
                "batchnorm1d",
                format!("expected rank-3 input, got {:?}", xs),
            ));
        }
        let (n, c, l) = (xs[0], xs[1], xs[2]);
        if n * l <= 1 {
            return Err(TensorError::DegenerateBatchNorm);
        }
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err(
                "batchnorm1d",
                format!(
                    "gamma {:?} / beta {:?} do not match {} channels",
                    self.shape(gamma),
                    self.shape(beta),
                    c
                ),
            ));
        }
        let m = T::from_f64((n * l) as f64);
        let xv = self.data(x);
        // Statistics sum a per-item partial for each batch element. Keeping
        // the per-item folds intact makes a two-item batch swap commute
        // bitwise (IEEE addition of the two partials is commutative), which
        // the discriminator's permutation property relies on.
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for b in 0..n {
                let base = (b * c + ch) * l;
                let mut p = T::zero();
                for i in 0..l {
                    p += xv[base + i];
                }
                s += p;
            }
            mean[ch] = s / m;
        }
        for ch in 0..c {
            let mu = mean[ch];
            let mut s = T::zero();
            for b in 0..n {
                let base = (b * c + ch) * l;
                let mut p = T::zero();
                for i in 0..l {
                    let d = xv[base + i] - mu;
                    p += d * d;
                }
                s += p;
            }
            var[ch] = s / m;
        }
        let gv = self.data(gamma);
        let bv = self.data(beta);
        let mut out = vec![T::zero(); xv.len()];
        for ch in 0..c {
            let inv_std = (var[ch] + eps).sqrt().recip();
            let (g, bb) = (gv[ch], bv[ch]);
            for b in 0..n {
                let base = (b * c + ch) * l;
                for i in 0..l {
                    out[base + i] = g * (xv[base + i] - mean[ch]) * inv_std + bb;
                }
            }
        }
        let shape = xs.to_vec();
        let req = self.requires(x) || self.requires(gamma) || self.requires(beta);
        Ok(self.push(
            out,
            shape,
            req,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                eps,
                mean,
                var,
            },
        ))
    }

    /// Affine map with bias. `x`: N x F_in, `w`: F_out x F_in, `b`: F_out.
    pub fn dense(&mut self, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 {
            return Err(shape_err(
                "dense",
                format!("expected rank-2 input and weight, got {:?} and {:?}", xs, ws),
            ));
        }
        let (n, f_in) = (xs[0], xs[1]);
        let (f_out, w_fin) = (ws[0], ws[1]);
        if w_fin != f_in {
            return Err(shape_err(
                "dense",
                format!("input has {} features but weight expects {}", f_in, w_fin),
            ));
        }
        if bs != [f_out] {
            return Err(shape_err(
                "dense",
                format!("bias shape {:?} does not match {} outputs", bs, f_out),
            ));
        }
        let xv = self.data(x);
        let wv = self.data(w);
        let bv = self.data(b);
        let mut out = vec![T::zero(); n * f_out];
        for row in 0..n {
            let xrow = &xv[row * f_in..(row + 1) * f_in];
            for fo in 0..f_out {
                let wrow = &wv[fo * f_in..(fo + 1) * f_in];
                let mut acc = bv[fo];
                for fi in 0..f_in {
                    acc += xrow[fi] * wrow[fi];
                }
                out[row * f_out + fo] = acc;
            }
        }
        let req = self.requires(x) || self.requires(w) || self.requires(b);
        Ok(self.push(out, vec![n, f_out], req, Op::Dense { x, w, b }))
    }

    /// Stack two feature maps along the channel axis.
    /// `a`: N x C_a x L, `b`: N x C_b x L -> N x (C_a+C_b) x L.
    pub fn concat_channels(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (asph, bsph) = (self.shape(a), self.shape(b));
        if asph.len() != 3 || bsph.len() != 3 {
            return Err(shape_err(
                "concat_channels",
                format!("expected rank-3 inputs, got {:?} and {:?}", asph, bsph),
            ));
        }
        if asph[0] != bsph[0] || asph[2] != bsph[2] {
            return Err(shape_err(
                "concat_channels",
                format!("batch/length mismatch: {:?} vs {:?}", asph, bsph),
            ));
        }
        let (n, ca, l) = (asph[0], asph[1], asph[2]);
        let cb = bsph[1];
        let av = self.data(a);
        let bv = self.data(b);
        let mut out = vec![T::zero(); n * (ca + cb) * l];
        for row in 0..n {
            let dst = row * (ca + cb) * l;
            out[dst..dst + ca * l].copy_from_slice(&av[row * ca * l..(row + 1) * ca * l]);
            out[dst + ca * l..dst + (ca + cb) * l]
                .copy_from_slice(&bv[row * cb * l..(row + 1) * cb * l]);
        }
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(out, vec![n, ca + cb, l], req, Op::ConcatChannels { a, b }))
    }

    /// View the same values under a new shape with equal element count.
    pub fn reshape(&mut self, x: TensorId, shape: Vec<usize>) -> Result<TensorId, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[x.0].numel() {
            return Err(shape_err(
                "reshape",
                format!(
                    "cannot view {:?} ({} values) as {:?} ({} values)",
                    self.shape(x),
                    self.nodes[x.0].numel(),
                    shape,
                    numel
                ),
            ));
        }
        let data = self.data(x).to_vec();
        let req = self.requires(x);
        Ok(self.push(data, shape, req, Op::Reshape { x }))
    }

    /// Mean absolute difference, reduced over every element.
    pub fn l1_loss(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                "l1_loss",
                format!("shape mismatch: {:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let av = self.data(a);
        let bv = self.data(b);
        let numel = T::from_f64(av.len() as f64);
        let mut s = T::zero();
        for i in 0..av.len() {
            s += (av[i] - bv[i]).abs();
        }
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(vec![s / numel], vec![], req, Op::L1Loss { a, b }))
    }

    pub fn sub_scalar(&mut self, x: TensorId, c: T) -> TensorId {
        let out: Vec<T> = self.data(x).iter().map(|v| *v - c).collect();
        let shape = self.shape(x).to_vec();
        let req = self.requires(x);
        self.push(out, shape, req, Op::SubScalar { x })
    }

    pub fn square(&mut self, x: TensorId) -> TensorId {
        let out: Vec<T> = self.data(x).iter().map(|v| *v * *v).collect();
        let shape = self.shape(x).to_vec();
        let req = self.requires(x);
        self.push(out, shape, req, Op::Square { x })
    }

    pub fn scale(&mut self, x: TensorId, c: T) -> TensorId {
        let out: Vec<T> = self.data(x).iter().map(|v| *v * c).collect();
        let shape = self.shape(x).to_vec();
        let req = self.requires(x);
        self.push(out, shape, req, Op::Scale { x, c })
    }

    /// Elementwise sum of two same-shaped tensors.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                "add",
                format!("shape mismatch: {:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let out: Vec<T> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| *x + *y)
            .collect();
        let shape = self.shape(a).to_vec();
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(out, shape, req, Op::Add { a, b }))
    }

    pub fn sum_all(&mut self, x: TensorId) -> TensorId {
        let mut s = T::zero();
        for v in self.data(x) {
            s += *v;
        }
        let req = self.requires(x);
        self.push(vec![s], vec![], req, Op::SumAll { x })
    }

    pub fn mean_all(&mut self, x: TensorId) -> TensorId {
        let numel = T::from_f64(self.nodes[x.0].numel() as f64);
        let mut s = T::zero();
        for v in self.data(x) {
            s += *v;
        }
        let req = self.requires(x);
        self.push(vec![s / numel], vec![], req, Op::MeanAll { x })
    }

    /// Read a rank-0 tensor's value.
    pub fn scalar_value(&self, id: TensorId) -> T {
        debug_assert!(self.nodes[id.0].shape.is_empty());
        self.nodes[id.0].data[0]
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse-mode sweep from a rank-0 loss. Each call propagates from a
    /// fresh seed of 1 and adds the resulting gradients into `grad`, so
    /// gradients from repeated calls sum until `clear_grads`.
    pub fn backward(&mut self, loss: TensorId) -> Result<(), TensorError> {
        let loss_node = &self.nodes[loss.0];
        if !loss_node.shape.is_empty() {
            return Err(TensorError::NonScalarLoss {
                shape: loss_node.shape.clone(),
            });
        }
        if !loss_node.requires_grad {
            return Ok(());
        }
        // Per-pass vector-Jacobian products live here, separate from the
        // accumulated `grad` fields, so earlier passes never leak into later
        // ones.
        let mut scratch: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        scratch[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = scratch[i].take() else {
                continue;
            };
            self.step_backward(i, &g, &mut scratch);
            let node = &mut self.nodes[i];
            let grad = node.grad.get_or_insert_with(|| vec![T::zero(); node.data.len()]);
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += *b;
            }
        }
        Ok(())
    }

    /// Push this node's upstream gradient `g` to its inputs' scratch slots.
    fn step_backward(&self, idx: usize, g: &[T], scratch: &mut [Option<Vec<T>>]) {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Conv1d { x, w, stride, pad } => {
                let (x, w) = (*x, *w);
                let xs = self.shape(x);
                let ws = self.shape(w);
                let dims = conv::ConvDims {
                    n: xs[0],
                    c_in: xs[1],
                    l_in: xs[2],
                    c_out: ws[0],
                    k: ws[2],
                    stride: *stride,
                    pad: *pad,
                    l_out: self.nodes[idx].shape[2],
                };
                if self.requires(x) {
                    let dx = grad_slot(scratch, x, self.nodes[x.0].numel());
                    conv::conv1d_backward_input(self.data(w), g, dx, dims);
                }
                if self.requires(w) {
                    let dw = grad_slot(scratch, w, self.nodes[w.0].numel());
                    conv::conv1d_backward_weight(self.data(x), g, dw, dims);
                }
            }
            Op::ConvT1d { x, w, stride, pad } => {
                let (x, w) = (*x, *w);
                let xs = self.shape(x);
                let ws = self.shape(w);
                let dims = conv::ConvDims {
                    n: xs[0],
                    c_in: xs[1],
                    l_in: xs[2],
                    c_out: ws[1],
                    k: ws[2],
                    stride: *stride,
                    pad: *pad,
                    l_out: self.nodes[idx].shape[2],
                };
                if self.requires(x) {
                    let dx = grad_slot(scratch, x, self.nodes[x.0].numel());
                    conv::conv1d_transposed_backward_input(self.data(w), g, dx, dims);
                }
                if self.requires(w) {
                    let dw = grad_slot(scratch, w, self.nodes[w.0].numel());
                    conv::conv1d_transposed_backward_weight(self.data(x), g, dw, dims);
                }
            }
            Op::Prelu { x, alpha } => {
                let (x, alpha) = (*x, *alpha);
                let xs = self.shape(x);
                let n = xs[0];
                let channels = xs[1];
                let inner: usize = xs[2..].iter().product();
                if self.requires(x) {
                    let xv = self.data(x);
                    let av = self.data(alpha);
                    let dx = grad_slot(scratch, x, xv.len());
                    for b in 0..n {
                        for c in 0..channels {
                            let a = av[c];
                            let base = (b * channels + c) * inner;
                            for i in 0..inner {
                                let gi = g[base + i];
                                dx[base + i] +=
                                    if xv[base + i] >= T::zero() { gi } else { a * gi };
                            }
                        }
                    }
                }
                if self.requires(alpha) {
                    let xv = self.data(x);
                    let da = grad_slot(scratch, alpha, channels);
                    for b in 0..n {
                        for c in 0..channels {
                            let base = (b * channels + c) * inner;
                            for i in 0..inner {
                                let v = xv[base + i];
                                if v < T::zero() {
                                    da[c] += g[base + i] * v;
                                }
                            }
                        }
                    }
                }
            }
            Op::Tanh { x } => {
                let x = *x;
                if self.requires(x) {
                    let yv = &self.nodes[idx].data;
                    let dx = grad_slot(scratch, x, yv.len());
                    for ((d, gi), y) in dx.iter_mut().zip(g).zip(yv) {
                        *d += *gi * (T::one() - *y * *y);
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                eps,
                mean,
                var,
            } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let xs = self.shape(x);
                let (n, c, l) = (xs[0], xs[1], xs[2]);
                let m = T::from_f64((n * l) as f64);
                let xv = self.data(x);
                let gv = self.data(gamma);

                // Per-channel reductions of the upstream gradient.
                let mut sum_g = vec![T::zero(); c];
                let mut sum_g_xhat = vec![T::zero(); c];
                let mut inv_std = vec![T::zero(); c];
                for ch in 0..c {
                    inv_std[ch] = (var[ch] + *eps).sqrt().recip();
                }
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * l;
                        for i in 0..l {
                            let xhat = (xv[base + i] - mean[ch]) * inv_std[ch];
                            sum_g[ch] += g[base + i];
                            sum_g_xhat[ch] += g[base + i] * xhat;
                        }
                    }
                }
                if self.requires(x) {
                    let dx = grad_slot(scratch, x, xv.len());
                    for b in 0..n {
                        for ch in 0..c {
                            let base = (b * c + ch) * l;
                            let scale = gv[ch] * inv_std[ch];
                            for i in 0..l {
                                let xhat = (xv[base + i] - mean[ch]) * inv_std[ch];
                                dx[base + i] += scale
                                    * (g[base + i] - sum_g[ch] / m - xhat * sum_g_xhat[ch] / m);
                            }
                        }
                    }
                }
                if self.requires(gamma) {
                    add_grad(scratch, gamma, &sum_g_xhat);
                }
                if self.requires(beta) {
                    add_grad(scratch, beta, &sum_g);
                }
            }
            Op::Dense { x, w, b } => {
                let (x, w, b) = (*x, *w, *b);
                let xs = self.shape(x);
                let (n, f_in) = (xs[0], xs[1]);
                let f_out = self.shape(w)[0];
                if self.requires(x) {
                    let wv = self.data(w);
                    let dx = grad_slot(scratch, x, n * f_in);
                    for row in 0..n {
                        for fo in 0..f_out {
                            let gi = g[row * f_out + fo];
                            let wrow = &wv[fo * f_in..(fo + 1) * f_in];
                            let drow = &mut dx[row * f_in..(row + 1) * f_in];
                            for fi in 0..f_in {
                                drow[fi] += gi * wrow[fi];
                            }
                        }
                    }
                }
                if self.requires(w) {
                    let xv = self.data(x);
                    let dw = grad_slot(scratch, w, f_out * f_in);
                    for row in 0..n {
                        let xrow = &xv[row * f_in..(row + 1) * f_in];
                        for fo in 0..f_out {
                            let gi = g[row * f_out + fo];
                            let drow = &mut dw[fo * f_in..(fo + 1) * f_in];
                            for fi in 0..f_in {
                                drow[fi] += gi * xrow[fi];
                            }
                        }
                    }
                }
                if self.requires(b) {
                    let db = grad_slot(scratch, b, f_out);
                    for row in 0..n {
                        for fo in 0..f_out {
                            db[fo] += g[row * f_out + fo];
                        }
                    }
                }
            }
            Op::ConcatChannels { a, b } => {
                let (a, b) = (*a, *b);
                let asph = self.shape(a);
                let bsph = self.shape(b);
                let (n, ca, l) = (asph[0], asph[1], asph[2]);
                let cb = bsph[1];
                if self.requires(a) {
                    let da = grad_slot(scratch, a, n * ca * l);
                    for row in 0..n {
                        let src = row * (ca + cb) * l;
                        let dst = &mut da[row * ca * l..(row + 1) * ca * l];
                        for (d, gi) in dst.iter_mut().zip(&g[src..src + ca * l]) {
                            *d += *gi;
                        }
                    }
                }
                if self.requires(b) {
                    let db = grad_slot(scratch, b, n * cb * l);
                    for row in 0..n {
                        let src = row * (ca + cb) * l + ca * l;
                        let dst = &mut db[row * cb * l..(row + 1) * cb * l];
                        for (d, gi) in dst.iter_mut().zip(&g[src..src + cb * l]) {
                            *d += *gi;
                        }
                    }
                }
            }
            Op::Reshape { x } => {
                let x = *x;
                if self.requires(x) {
                    add_grad(scratch, x, g);
                }
            }
            Op::L1Loss { a, b } => {
                let (a, b) = (*a, *b);
                let av = self.data(a);
                let bv = self.data(b);
                let scale = g[0] / T::from_f64(av.len() as f64);
                if self.requires(a) {
                    let da = grad_slot(scratch, a, av.len());
                    for i in 0..av.len() {
                        if av[i] > bv[i] {
                            da[i] += scale;
                        } else if av[i] < bv[i] {
                            da[i] -= scale;
                        }
                    }
                }
                if self.requires(b) {
                    let db = grad_slot(scratch, b, bv.len());
                    for i in 0..bv.len() {
                        if av[i] > bv[i] {
                            db[i] -= scale;
                        } else if av[i] < bv[i] {
                            db[i] += scale;
                        }
                    }
                }
            }
            Op::SubScalar { x } => {
                let x = *x;
                if self.requires(x) {
                    add_grad(scratch, x, g);
                }
            }
            Op::Square { x } => {
                let x = *x;
                if self.requires(x) {
                    let two = T::from_f64(2.0);
                    let xv = self.data(x);
                    let dx = grad_slot(scratch, x, xv.len());
                    for ((d, gi), v) in dx.iter_mut().zip(g).zip(xv) {
                        *d += two * *gi * *v;
                    }
                }
            }
            Op::Scale { x, c } => {
                let (x, c) = (*x, *c);
                if self.requires(x) {
                    let dx = grad_slot(scratch, x, g.len());
                    for (d, gi) in dx.iter_mut().zip(g) {
                        *d += *gi * c;
                    }
                }
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                if self.requires(a) {
                    add_grad(scratch, a, g);
                }
                if self.requires(b) {
                    add_grad(scratch, b, g);
                }
            }
            Op::SumAll { x } => {
                let x = *x;
                if self.requires(x) {
                    let n = self.nodes[x.0].data.len();
                    let dx = grad_slot(scratch, x, n);
                    for d in dx.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::MeanAll { x } => {
                let x = *x;
                if self.requires(x) {
                    let n = self.nodes[x.0].data.len();
                    let per = g[0] / T::from_f64(n as f64);
                    let dx = grad_slot(scratch, x, n);
                    for d in dx.iter_mut() {
                        *d += per;
                    }
                }
            }
        }
    }
}
