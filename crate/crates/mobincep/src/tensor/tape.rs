//! Reverse-mode autodiff over a per-forward operation tape.
//!
//! A [`Tape`] owns every value produced during one forward pass. Operations
//! append a [`Step`] record only when some input requires gradients, so an
//! inference pass through the same code records nothing. [`Tape::backward`]
//! replays the steps in reverse and returns gradients for every registered
//! parameter reachable from the loss.
//!
//! Step order, accumulation order and all kernel loops are fixed, so two
//! identical runs produce bitwise-identical values and gradients.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::{broadcast_shape, Scalar, Tensor};

/// Handle to a value stored on a [`Tape`]. Only meaningful for the tape
/// that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Gradients keyed by parameter name, as produced by [`Tape::backward`].
pub type GradMap<T> = BTreeMap<String, Tensor<T>>;

/// Forward-pass mode: training engages batch statistics and tape recording
/// for parameters; inference uses running statistics and records nothing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Op-kind selector for the generic [`Tape::elementwise`] entry point.
#[derive(Clone, Copy, Debug)]
pub enum ElementwiseOp<T> {
    Add,
    Sub,
    Mul,
    Div,
    Relu,
    Exp,
    Log,
    Square,
    Sqrt,
    MaxWithScalar(T),
}

/// Reduction kind for [`Tape::reduce`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

#[derive(Clone, Copy, Debug)]
enum UnOp<T> {
    Relu,
    Exp,
    Ln,
    Square,
    Sqrt,
    Neg,
    Recip,
    MaxScalar(T),
    AddScalar(T),
    MulScalar(T),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

enum Step<T> {
    Unary {
        op: UnOp<T>,
        x: Var,
        out: Var,
    },
    Binary {
        op: BinOp,
        a: Var,
        b: Var,
        out: Var,
    },
    Matmul {
        a: Var,
        b: Var,
        out: Var,
    },
    MatmulNT {
        a: Var,
        b: Var,
        out: Var,
    },
    Reduce {
        op: ReduceOp,
        x: Var,
        out: Var,
        axes: Vec<usize>,
    },
    Reshape {
        x: Var,
        out: Var,
    },
    ConcatChannels {
        parts: Vec<Var>,
        out: Var,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        out: Var,
        stride: (usize, usize),
        pad: (usize, usize),
    },
    Depthwise {
        x: Var,
        w: Var,
        out: Var,
        stride: (usize, usize),
        pad: (usize, usize),
    },
    AvgPool {
        x: Var,
        out: Var,
        window: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
    },
    GlobalAvgPool {
        x: Var,
        out: Var,
    },
}

struct Node<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    requires_grad: bool,
}

/// Records one forward pass and computes gradients on demand.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    steps: Vec<Step<T>>,
    params: Vec<(String, Var)>,
    param_names: HashSet<String>,
    grads: Vec<Option<Vec<T>>>,
    nan_guard: bool,
    nan_flag: Option<String>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            steps: Vec::new(),
            params: Vec::new(),
            param_names: HashSet::new(),
            grads: Vec::new(),
            nan_guard: false,
            nan_flag: None,
        }
    }

    /// Enable the debug check that flags the first op producing a
    /// non-finite value (see [`Tape::nan_flag`]).
    pub fn set_nan_guard(&mut self, on: bool) {
        self.nan_guard = on;
    }

    /// Name of the first op that produced NaN/Inf, if the guard is enabled.
    pub fn nan_flag(&self) -> Option<&str> {
        self.nan_flag.as_deref()
    }

    fn push_node(
        &mut self,
        shape: Vec<usize>,
        data: Vec<T>,
        requires_grad: bool,
        opname: &str,
    ) -> Var {
        if self.nan_guard && self.nan_flag.is_none() && data.iter().any(|v| !v.is_finite()) {
            self.nan_flag = Some(opname.to_string());
        }
        self.nodes.push(Node {
            shape,
            data: Arc::new(data),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Track a tensor without gradients.
    pub fn constant(&mut self, t: &Tensor<T>) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            data: Arc::new(t.data().to_vec()),
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Track a tensor as a differentiation root (no name). Used for inputs
    /// whose gradient is inspected via [`Tape::grad_of`].
    pub fn leaf(&mut self, t: &Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            data: Arc::new(t.data().to_vec()),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Register a named trainable parameter. Gradients for it appear in the
    /// map returned by [`Tape::backward`].
    pub fn param(&mut self, name: &str, t: &Tensor<T>) -> Result<Var> {
        if !self.param_names.insert(name.to_string()) {
            return Err(Error::contract(format!(
                "parameter `{name}` registered twice on one tape"
            )));
        }
        let v = self.leaf(t, true);
        self.params.push((name.to_string(), v));
        Ok(v)
    }

    /// Copy a value off the tape as a constant (stops gradient flow).
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].data.clone();
        let shape = self.nodes[v.0].shape.clone();
        self.nodes.push(Node {
            shape,
            data: t,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> Tensor<T> {
        Tensor::from_vec(&self.nodes[v.0].shape, self.nodes[v.0].data.to_vec())
            .expect("node invariant: shape matches data")
    }

    fn data(&self, v: Var) -> &[T] {
        &self.nodes[v.0].data
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    // -- elementwise ---------------------------------------------------------

    /// Generic dispatch mirroring the op-kind table; the named methods below
    /// are the ergonomic surface.
    pub fn elementwise(&mut self, op: ElementwiseOp<T>, a: Var, b: Option<Var>) -> Result<Var> {
        let binary = |b: Option<Var>| -> Result<Var> {
            b.ok_or_else(|| Error::contract("binary elementwise op needs a second operand"))
        };
        match op {
            ElementwiseOp::Add => self.add(a, binary(b)?),
            ElementwiseOp::Sub => self.sub(a, binary(b)?),
            ElementwiseOp::Mul => self.mul(a, binary(b)?),
            ElementwiseOp::Div => self.div(a, binary(b)?),
            ElementwiseOp::Relu => Ok(self.relu(a)),
            ElementwiseOp::Exp => Ok(self.exp(a)),
            ElementwiseOp::Log => Ok(self.log(a)),
            ElementwiseOp::Square => Ok(self.square(a)),
            ElementwiseOp::Sqrt => Ok(self.sqrt(a)),
            ElementwiseOp::MaxWithScalar(c) => Ok(self.max_scalar(a, c)),
        }
    }

    fn binary(&mut self, op: BinOp, a: Var, b: Var) -> Result<Var> {
        let out_shape = broadcast_shape(&self.nodes[a.0].shape, &self.nodes[b.0].shape)?;
        let f: fn(T, T) -> T = match op {
            BinOp::Add => |x, y| x + y,
            BinOp::Sub => |x, y| x - y,
            BinOp::Mul => |x, y| x * y,
            BinOp::Div => |x, y| x / y,
        };
        let data = kernels::binary_broadcast(
            self.data(a),
            &self.nodes[a.0].shape,
            self.data(b),
            &self.nodes[b.0].shape,
            &out_shape,
            f,
        );
        let rg = self.requires(a) || self.requires(b);
        let out = self.push_node(out_shape, data, rg, binop_name(op));
        if rg {
            self.steps.push(Step::Binary { op, a, b, out });
        }
        Ok(out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Add, a, b)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Sub, a, b)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Mul, a, b)
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Div, a, b)
    }

    fn unary(&mut self, op: UnOp<T>, x: Var) -> Var {
        let data: Vec<T> = match op {
            UnOp::Relu => self.data(x).iter().map(|&v| v.maximum(T::ZERO)).collect(),
            UnOp::Exp => self.data(x).iter().map(|&v| v.exp()).collect(),
            UnOp::Ln => self.data(x).iter().map(|&v| v.ln()).collect(),
            UnOp::Square => self.data(x).iter().map(|&v| v * v).collect(),
            UnOp::Sqrt => self.data(x).iter().map(|&v| v.sqrt()).collect(),
            UnOp::Neg => self.data(x).iter().map(|&v| -v).collect(),
            UnOp::Recip => self.data(x).iter().map(|&v| T::ONE / v).collect(),
            UnOp::MaxScalar(c) => self.data(x).iter().map(|&v| v.maximum(c)).collect(),
            UnOp::AddScalar(c) => self.data(x).iter().map(|&v| v + c).collect(),
            UnOp::MulScalar(c) => self.data(x).iter().map(|&v| v * c).collect(),
        };
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.requires(x);
        let out = self.push_node(shape, data, rg, unop_name(op));
        if rg {
            self.steps.push(Step::Unary { op, x, out });
        }
        out
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(UnOp::Relu, x)
    }
    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(UnOp::Exp, x)
    }
    pub fn log(&mut self, x: Var) -> Var {
        self.unary(UnOp::Ln, x)
    }
    pub fn square(&mut self, x: Var) -> Var {
        self.unary(UnOp::Square, x)
    }
    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(UnOp::Sqrt, x)
    }
    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(UnOp::Neg, x)
    }
    pub fn recip(&mut self, x: Var) -> Var {
        self.unary(UnOp::Recip, x)
    }
    pub fn max_scalar(&mut self, x: Var, c: T) -> Var {
        self.unary(UnOp::MaxScalar(c), x)
    }
    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        self.unary(UnOp::AddScalar(c), x)
    }
    pub fn mul_scalar(&mut self, x: Var, c: T) -> Var {
        self.unary(UnOp::MulScalar(c), x)
    }

    // -- linear algebra ------------------------------------------------------

    /// `[m,k] · [k,n] -> [m,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::shape(format!(
                "matmul wants rank-2 operands, got {sa:?} and {sb:?}"
            )));
        }
        if sa[1] != sb[0] {
            return Err(Error::shape(format!(
                "matmul inner extents differ: {sa:?} vs {sb:?}"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.data(a), self.data(b), m, k, n);
        let rg = self.requires(a) || self.requires(b);
        let out = self.push_node(vec![m, n], data, rg, "matmul");
        if rg {
            self.steps.push(Step::Matmul { a, b, out });
        }
        Ok(out)
    }

    /// `[m,k] · [n,k]ᵀ -> [m,n]` (right operand transposed).
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::shape(format!(
                "matmul_nt wants rank-2 operands, got {sa:?} and {sb:?}"
            )));
        }
        if sa[1] != sb[1] {
            return Err(Error::shape(format!(
                "matmul_nt inner extents differ: {sa:?} vs {sb:?}"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let data = kernels::matmul_nt(self.data(a), self.data(b), m, k, n);
        let rg = self.requires(a) || self.requires(b);
        let out = self.push_node(vec![m, n], data, rg, "matmul_nt");
        if rg {
            self.steps.push(Step::MatmulNT { a, b, out });
        }
        Ok(out)
    }

    // -- reductions / shape --------------------------------------------------

    pub fn reduce(&mut self, op: ReduceOp, x: Var, axes: &[usize], keepdims: bool) -> Result<Var> {
        let shape = self.nodes[x.0].shape.clone();
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        for &ax in &axes {
            if ax >= shape.len() {
                return Err(Error::shape(format!(
                    "reduce axis {ax} out of range for {shape:?}"
                )));
            }
        }
        if axes.is_empty() {
            axes = (0..shape.len()).collect();
        }
        let count: usize = axes.iter().map(|&ax| shape[ax]).product();
        if count == 0 {
            return Err(Error::shape("reduction over an empty extent".to_string()));
        }
        let data = match op {
            ReduceOp::Sum => kernels::reduce_sum(self.data(x), &shape, &axes),
            ReduceOp::Mean => {
                let inv = T::ONE / T::from_usize(count);
                kernels::reduce_sum(self.data(x), &shape, &axes)
                    .into_iter()
                    .map(|v| v * inv)
                    .collect()
            }
            ReduceOp::Max => kernels::reduce_max(self.data(x), &shape, &axes),
        };
        let keep_shape = kernels::reduced_shape_keepdims(&shape, &axes);
        let out_shape = if keepdims {
            keep_shape
        } else {
            shape
                .iter()
                .enumerate()
                .filter(|(d, _)| !axes.contains(d))
                .map(|(_, &e)| e)
                .collect()
        };
        let rg = self.requires(x);
        let out = self.push_node(out_shape, data, rg, "reduce");
        if rg {
            self.steps.push(Step::Reduce { op, x, out, axes });
        }
        Ok(out)
    }

    pub fn sum(&mut self, x: Var, axes: &[usize], keepdims: bool) -> Result<Var> {
        self.reduce(ReduceOp::Sum, x, axes, keepdims)
    }
    pub fn mean(&mut self, x: Var, axes: &[usize], keepdims: bool) -> Result<Var> {
        self.reduce(ReduceOp::Mean, x, axes, keepdims)
    }
    /// Scalar sum of every element.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        self.reduce(ReduceOp::Sum, x, &[], false)
    }
    /// Scalar mean of every element.
    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        self.reduce(ReduceOp::Mean, x, &[], false)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.data(x).len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} to {:?}",
                self.nodes[x.0].shape, shape
            )));
        }
        let data = self.nodes[x.0].data.clone();
        let rg = self.requires(x);
        self.nodes.push(Node {
            shape: shape.to_vec(),
            data,
            requires_grad: rg,
        });
        let out = Var(self.nodes.len() - 1);
        if rg {
            self.steps.push(Step::Reshape { x, out });
        }
        Ok(out)
    }

    /// Concatenate `[N,Ci,H,W]` tensors along the channel axis in the given
    /// order.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat of zero tensors"));
        }
        let first = self.nodes[parts[0].0].shape.clone();
        if first.len() != 4 {
            return Err(Error::shape(format!(
                "concat_channels wants rank-4 tensors, got {first:?}"
            )));
        }
        let (n, h, w) = (first[0], first[2], first[3]);
        let mut c_total = 0;
        for &p in parts {
            let s = &self.nodes[p.0].shape;
            if s.len() != 4 || s[0] != n || s[2] != h || s[3] != w {
                return Err(Error::shape(format!(
                    "concat_channels branch shapes differ: {first:?} vs {s:?}"
                )));
            }
            c_total += s[1];
        }
        let mut data = Vec::with_capacity(n * c_total * h * w);
        for img in 0..n {
            for &p in parts {
                let c = self.nodes[p.0].shape[1];
                let plane = c * h * w;
                let src = &self.nodes[p.0].data[img * plane..(img + 1) * plane];
                data.extend_from_slice(src);
            }
        }
        let rg = parts.iter().any(|&p| self.requires(p));
        let out = self.push_node(vec![n, c_total, h, w], data, rg, "concat_channels");
        if rg {
            self.steps.push(Step::ConcatChannels {
                parts: parts.to_vec(),
                out,
            });
        }
        Ok(out)
    }

    // -- spatial ops ---------------------------------------------------------

    /// Cross-correlation (no kernel flip) with zero padding.
    /// `x [N,Ci,H,W]`, `w [Co,Ci,kh,kw]`, optional `b [Co]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Var> {
        let xs = self.nodes[x.0].shape.clone();
        let ws = self.nodes[w.0].shape.clone();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::shape(format!(
                "conv2d wants rank-4 input/weight, got {xs:?}/{ws:?}"
            )));
        }
        if xs[1] != ws[1] {
            return Err(Error::shape(format!(
                "conv2d channel mismatch: input has {} channels, kernel expects {}",
                xs[1], ws[1]
            )));
        }
        if let Some(bv) = b {
            let bs = &self.nodes[bv.0].shape;
            if bs.as_slice() != [ws[0]] {
                return Err(Error::shape(format!(
                    "conv2d bias shape {bs:?}, want [{}]",
                    ws[0]
                )));
            }
        }
        let (n, ci, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (co, kh, kw) = (ws[0], ws[2], ws[3]);
        if h + 2 * pad.0 < kh || wd + 2 * pad.1 < kw {
            return Err(Error::shape(format!(
                "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * pad.0,
                wd + 2 * pad.1
            )));
        }
        let oh = kernels::conv_out_extent(h, kh, stride.0, pad.0);
        let ow = kernels::conv_out_extent(wd, kw, stride.1, pad.1);
        if oh == 0 || ow == 0 {
            return Err(Error::shape("conv2d output has a zero extent".to_string()));
        }
        let data = kernels::conv2d_forward(
            self.data(x),
            n,
            ci,
            h,
            wd,
            self.data(w),
            co,
            kh,
            kw,
            b.map(|bv| self.nodes[bv.0].data.as_slice()),
            stride,
            pad,
        );
        let rg =
            self.requires(x) || self.requires(w) || b.map(|bv| self.requires(bv)).unwrap_or(false);
        let out = self.push_node(vec![n, co, oh, ow], data, rg, "conv2d");
        if rg {
            self.steps.push(Step::Conv2d {
                x,
                w,
                b,
                out,
                stride,
                pad,
            });
        }
        Ok(out)
    }

    /// Per-channel (depthwise) cross-correlation.
    /// `x [N,C,H,W]`, `w [C,1,kh,kw]`.
    pub fn depthwise_conv2d(
        &mut self,
        x: Var,
        w: Var,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Var> {
        let xs = self.nodes[x.0].shape.clone();
        let ws = self.nodes[w.0].shape.clone();
        if xs.len() != 4 || ws.len() != 4 || ws[1] != 1 {
            return Err(Error::shape(format!(
                "depthwise conv wants x rank-4 and w [C,1,kh,kw], got {xs:?}/{ws:?}"
            )));
        }
        if xs[1] != ws[0] {
            return Err(Error::shape(format!(
                "depthwise channel mismatch: input {} vs kernels {}",
                xs[1], ws[0]
            )));
        }
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (kh, kw) = (ws[2], ws[3]);
        let oh = kernels::conv_out_extent(h, kh, stride.0, pad.0);
        let ow = kernels::conv_out_extent(wd, kw, stride.1, pad.1);
        if oh == 0 || ow == 0 {
            return Err(Error::shape(
                "depthwise conv output has a zero extent".to_string(),
            ));
        }
        let data = kernels::depthwise_forward(
            self.data(x),
            n,
            c,
            h,
            wd,
            self.data(w),
            kh,
            kw,
            stride,
            pad,
        );
        let rg = self.requires(x) || self.requires(w);
        let out = self.push_node(vec![n, c, oh, ow], data, rg, "depthwise_conv2d");
        if rg {
            self.steps.push(Step::Depthwise {
                x,
                w,
                out,
                stride,
                pad,
            });
        }
        Ok(out)
    }

    /// Mean over sliding windows; zero padding counts toward the divisor.
    pub fn avg_pool(
        &mut self,
        x: Var,
        window: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Var> {
        let xs = self.nodes[x.0].shape.clone();
        if xs.len() != 4 {
            return Err(Error::shape(format!(
                "avg_pool wants rank-4 input, got {xs:?}"
            )));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        if window.0 > h + 2 * pad.0 || window.1 > w + 2 * pad.1 {
            return Err(Error::shape(format!(
                "pool window {:?} larger than padded input {}x{}",
                window,
                h + 2 * pad.0,
                w + 2 * pad.1
            )));
        }
        let oh = kernels::conv_out_extent(h, window.0, stride.0, pad.0);
        let ow = kernels::conv_out_extent(w, window.1, stride.1, pad.1);
        let data = kernels::avg_pool_forward(self.data(x), n, c, h, w, window, stride, pad);
        let rg = self.requires(x);
        let out = self.push_node(vec![n, c, oh, ow], data, rg, "avg_pool");
        if rg {
            self.steps.push(Step::AvgPool {
                x,
                out,
                window,
                stride,
                pad,
            });
        }
        Ok(out)
    }

    /// Mean over all spatial positions per channel: `[N,C,H,W] -> [N,C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.nodes[x.0].shape.clone();
        if xs.len() != 4 {
            return Err(Error::shape(format!(
                "global_avg_pool wants rank-4 input, got {xs:?}"
            )));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let inv = T::ONE / T::from_usize(h * w);
        let mut data = Vec::with_capacity(n * c);
        for plane in self.data(x).chunks_exact(h * w) {
            let mut acc = T::ZERO;
            for &v in plane {
                acc += v;
            }
            data.push(acc * inv);
        }
        let rg = self.requires(x);
        let out = self.push_node(vec![n, c], data, rg, "global_avg_pool");
        if rg {
            self.steps.push(Step::GlobalAvgPool { x, out });
        }
        Ok(out)
    }

    // -- backward ------------------------------------------------------------

    /// Reverse sweep from a scalar loss. Returns the gradient of every
    /// registered parameter reachable from `loss`; parameters the loss does
    /// not depend on are absent from the map.
    pub fn backward(&mut self, loss: Var) -> Result<GradMap<T>> {
        if self.data(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        let mut map = GradMap::new();
        if !self.requires(loss) {
            return Ok(map); // constant loss: nothing depends on parameters
        }
        self.grads[loss.0] = Some(vec![T::ONE]);

        for si in (0..self.steps.len()).rev() {
            self.backward_step(si);
        }

        for (name, var) in &self.params {
            if let Some(g) = &self.grads[var.0] {
                map.insert(
                    name.clone(),
                    Tensor::from_vec(&self.nodes[var.0].shape, g.clone())
                        .expect("gradient shaped like its parameter"),
                );
            }
        }
        Ok(map)
    }

    /// Gradient accumulated at a leaf during the last [`Tape::backward`].
    pub fn grad_of(&self, v: Var) -> Option<Tensor<T>> {
        self.grads.get(v.0).and_then(|g| {
            g.as_ref().map(|g| {
                Tensor::from_vec(&self.nodes[v.0].shape, g.clone()).expect("gradient shape")
            })
        })
    }

    fn accumulate(&mut self, v: Var, contrib: Vec<T>) {
        if !self.requires(v) {
            return;
        }
        debug_assert_eq!(contrib.len(), self.data(v).len());
        match &mut self.grads[v.0] {
            Some(g) => {
                for (gv, cv) in g.iter_mut().zip(contrib) {
                    *gv += cv;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    fn backward_step(&mut self, si: usize) {
        // Steps only reference earlier nodes, so splitting the borrow through
        // indices is safe; every helper reads node data and writes grads.
        macro_rules! grad_out {
            ($out:expr) => {
                match &self.grads[$out.0] {
                    Some(g) => g.clone(),
                    None => return,
                }
            };
        }

        match &self.steps[si] {
            Step::Unary { op, x, out } => {
                let (op, x, out) = (*op, *x, *out);
                let g = grad_out!(out);
                let contrib: Vec<T> = match op {
                    UnOp::Relu => self
                        .data(x)
                        .iter()
                        .zip(g.iter())
                        .map(|(&v, &gv)| if v > T::ZERO { gv } else { T::ZERO })
                        .collect(),
                    UnOp::Exp => self
                        .data(out)
                        .iter()
                        .zip(g.iter())
                        .map(|(&o, &gv)| gv * o)
                        .collect(),
                    UnOp::Ln => self
                        .data(x)
                        .iter()
                        .zip(g.iter())
                        .map(|(&v, &gv)| gv / v)
                        .collect(),
                    UnOp::Square => {
                        let two = T::from_f64(2.0);
                        self.data(x)
                            .iter()
                            .zip(g.iter())
                            .map(|(&v, &gv)| two * gv * v)
                            .collect()
                    }
                    UnOp::Sqrt => {
                        // clamp the denominator so the kink at 0 yields a
                        // finite subgradient instead of Inf
                        let floor = T::from_f64(1e-12);
                        let half = T::from_f64(0.5);
                        self.data(out)
                            .iter()
                            .zip(g.iter())
                            .map(|(&o, &gv)| gv * half / o.maximum(floor))
                            .collect()
                    }
                    UnOp::Neg => g.iter().map(|&gv| -gv).collect(),
                    UnOp::Recip => self
                        .data(out)
                        .iter()
                        .zip(g.iter())
                        .map(|(&o, &gv)| -gv * o * o)
                        .collect(),
                    UnOp::MaxScalar(c) => self
                        .data(x)
                        .iter()
                        .zip(g.iter())
                        .map(|(&v, &gv)| if v > c { gv } else { T::ZERO })
                        .collect(),
                    UnOp::AddScalar(_) => g,
                    UnOp::MulScalar(c) => g.iter().map(|&gv| gv * c).collect(),
                };
                self.accumulate(x, contrib);
            }
            Step::Binary { op, a, b, out } => {
                let (op, a, b, out) = (*op, *a, *b, *out);
                let g = grad_out!(out);
                let out_shape = self.nodes[out.0].shape.clone();
                let a_shape = self.nodes[a.0].shape.clone();
                let b_shape = self.nodes[b.0].shape.clone();
                match op {
                    BinOp::Add => {
                        if self.requires(a) {
                            let ga = kernels::reduce_grad_to_shape(&g, &out_shape, &a_shape);
                            self.accumulate(a, ga);
                        }
                        if self.requires(b) {
                            let gb = kernels::reduce_grad_to_shape(&g, &out_shape, &b_shape);
                            self.accumulate(b, gb);
                        }
                    }
                    BinOp::Sub => {
                        if self.requires(a) {
                            let ga = kernels::reduce_grad_to_shape(&g, &out_shape, &a_shape);
                            self.accumulate(a, ga);
                        }
                        if self.requires(b) {
                            let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                            let gb = kernels::reduce_grad_to_shape(&neg, &out_shape, &b_shape);
                            self.accumulate(b, gb);
                        }
                    }
                    BinOp::Mul => {
                        if self.requires(a) {
                            let full = kernels::binary_broadcast(
                                &g,
                                &out_shape,
                                self.data(b),
                                &b_shape,
                                &out_shape,
                                |gv, bv| gv * bv,
                            );
                            let ga = kernels::reduce_grad_to_shape(&full, &out_shape, &a_shape);
                            self.accumulate(a, ga);
                        }
                        if self.requires(b) {
                            let full = kernels::binary_broadcast(
                                &g,
                                &out_shape,
                                self.data(a),
                                &a_shape,
                                &out_shape,
                                |gv, av| gv * av,
                            );
                            let gb = kernels::reduce_grad_to_shape(&full, &out_shape, &b_shape);
                            self.accumulate(b, gb);
                        }
                    }
                    BinOp::Div => {
                        if self.requires(a) {
                            let full = kernels::binary_broadcast(
                                &g,
                                &out_shape,
                                self.data(b),
                                &b_shape,
                                &out_shape,
                                |gv, bv| gv / bv,
                            );
                            let ga = kernels::reduce_grad_to_shape(&full, &out_shape, &a_shape);
                            self.accumulate(a, ga);
                        }
                        if self.requires(b) {
                            // d(a/b)/db = -out/b
                            let g_times_out: Vec<T> = g
                                .iter()
                                .zip(self.data(out).iter())
                                .map(|(&gv, &o)| gv * o)
                                .collect();
                            let full = kernels::binary_broadcast(
                                &g_times_out,
                                &out_shape,
                                self.data(b),
                                &b_shape,
                                &out_shape,
                                |v, bv| -v / bv,
                            );
                            let gb = kernels::reduce_grad_to_shape(&full, &out_shape, &b_shape);
                            self.accumulate(b, gb);
                        }
                    }
                }
            }
            Step::Matmul { a, b, out } => {
                let (a, b, out) = (*a, *b, *out);
                let g = grad_out!(out);
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[1];
                if self.requires(a) {
                    // ga = g · bᵀ
                    let ga = kernels::matmul_nt(&g, self.data(b), m, n, k);
                    self.accumulate(a, ga);
                }
                if self.requires(b) {
                    // gb = aᵀ · g
                    let gb = kernels::matmul_tn(self.data(a), &g, k, m, n);
                    self.accumulate(b, gb);
                }
            }
            Step::MatmulNT { a, b, out } => {
                let (a, b, out) = (*a, *b, *out);
                let g = grad_out!(out);
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[0];
                if self.requires(a) {
                    // ga = g · b
                    let ga = kernels::matmul(&g, self.data(b), m, n, k);
                    self.accumulate(a, ga);
                }
                if self.requires(b) {
                    // gb = gᵀ · a
                    let gb = kernels::matmul_tn(&g, self.data(a), n, m, k);
                    self.accumulate(b, gb);
                }
            }
            Step::Reduce { op, x, out, axes } => {
                let (op, x, out) = (*op, *x, *out);
                let axes = axes.clone();
                let g = grad_out!(out);
                let shape = self.nodes[x.0].shape.clone();
                let contrib = match op {
                    ReduceOp::Sum => kernels::reduce_sum_backward(&g, &shape, &axes, T::ONE),
                    ReduceOp::Mean => {
                        let count: usize = axes.iter().map(|&ax| shape[ax]).product();
                        kernels::reduce_sum_backward(
                            &g,
                            &shape,
                            &axes,
                            T::ONE / T::from_usize(count),
                        )
                    }
                    ReduceOp::Max => {
                        let max_vals = self.data(out).to_vec();
                        kernels::reduce_max_backward(&g, &max_vals, self.data(x), &shape, &axes)
                    }
                };
                self.accumulate(x, contrib);
            }
            Step::Reshape { x, out } => {
                let (x, out) = (*x, *out);
                let g = grad_out!(out);
                self.accumulate(x, g);
            }
            Step::ConcatChannels { parts, out } => {
                let parts = parts.clone();
                let out = *out;
                let g = grad_out!(out);
                let os = self.nodes[out.0].shape.clone();
                let (n, h, w) = (os[0], os[2], os[3]);
                let c_total = os[1];
                let mut offset = 0;
                for p in parts {
                    let c = self.nodes[p.0].shape[1];
                    if self.requires(p) {
                        let mut gp = Vec::with_capacity(n * c * h * w);
                        for img in 0..n {
                            let base = (img * c_total + offset) * h * w;
                            gp.extend_from_slice(&g[base..base + c * h * w]);
                        }
                        self.accumulate(p, gp);
                    }
                    offset += c;
                }
            }
            Step::Conv2d {
                x,
                w,
                b,
                out,
                stride,
                pad,
            } => {
                let (x, w, b, out, stride, pad) = (*x, *w, *b, *out, *stride, *pad);
                let g = grad_out!(out);
                let xs = self.nodes[x.0].shape.clone();
                let ws = self.nodes[w.0].shape.clone();
                let (gx, gw, gb) = kernels::conv2d_backward(
                    &g,
                    self.data(x),
                    xs[0],
                    xs[1],
                    xs[2],
                    xs[3],
                    self.data(w),
                    ws[0],
                    ws[2],
                    ws[3],
                    b.is_some(),
                    stride,
                    pad,
                );
                self.accumulate(x, gx);
                self.accumulate(w, gw);
                if let (Some(bv), Some(gb)) = (b, gb) {
                    self.accumulate(bv, gb);
                }
            }
            Step::Depthwise {
                x,
                w,
                out,
                stride,
                pad,
            } => {
                let (x, w, out, stride, pad) = (*x, *w, *out, *stride, *pad);
                let g = grad_out!(out);
                let xs = self.nodes[x.0].shape.clone();
                let ws = self.nodes[w.0].shape.clone();
                let (gx, gw) = kernels::depthwise_backward(
                    &g,
                    self.data(x),
                    xs[0],
                    xs[1],
                    xs[2],
                    xs[3],
                    self.data(w),
                    ws[2],
                    ws[3],
                    stride,
                    pad,
                );
                self.accumulate(x, gx);
                self.accumulate(w, gw);
            }
            Step::AvgPool {
                x,
                out,
                window,
                stride,
                pad,
            } => {
                let (x, out, window, stride, pad) = (*x, *out, *window, *stride, *pad);
                let g = grad_out!(out);
                let xs = self.nodes[x.0].shape.clone();
                let gx =
                    kernels::avg_pool_backward(&g, xs[0], xs[1], xs[2], xs[3], window, stride, pad);
                self.accumulate(x, gx);
            }
            Step::GlobalAvgPool { x, out } => {
                let (x, out) = (*x, *out);
                let g = grad_out!(out);
                let xs = self.nodes[x.0].shape.clone();
                let (h, w) = (xs[2], xs[3]);
                let inv = T::ONE / T::from_usize(h * w);
                let mut gx = Vec::with_capacity(self.data(x).len());
                for &gv in &g {
                    let spread = gv * inv;
                    gx.extend(std::iter::repeat_n(spread, h * w));
                }
                self.accumulate(x, gx);
            }
        }
    }
}

fn binop_name(op: BinOp) -> &'static str {
    match op {
        BinOp::Add => "add",
        BinOp::Sub => "sub",
        BinOp::Mul => "mul",
        BinOp::Div => "div",
    }
}

fn unop_name<T>(op: UnOp<T>) -> &'static str {
    match op {
        UnOp::Relu => "relu",
        UnOp::Exp => "exp",
        UnOp::Ln => "log",
        UnOp::Square => "square",
        UnOp::Sqrt => "sqrt",
        UnOp::Neg => "neg",
        UnOp::Recip => "recip",
        UnOp::MaxScalar(_) => "max_scalar",
        UnOp::AddScalar(_) => "add_scalar",
        UnOp::MulScalar(_) => "mul_scalar",
    }
}
