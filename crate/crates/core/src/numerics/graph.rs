//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation in execution order, so the node list
//! is topologically sorted by construction and [`Graph::backward`] can walk
//! it once in reverse. A graph supports exactly one backward pass; cached
//! activations are released afterwards and further use is an error.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::gemm::gemm;
use super::{NumericsError, Tensor};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node of a specific [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

/// Operation catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Dense,
    Conv2d,
    Relu,
    Tanh,
    Add,
    Sub,
    Mul,
    Scale,
    Offset,
    Mean,
    Sum,
    L2Norm,
    SoftmaxXent,
    GlobalAvgPool,
    CosineDistance,
}

/// Spatial parameters of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub stride: usize,
    pub padding: usize,
}

impl ConvParams {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self { stride, padding }
    }

    /// `floor((size + 2·padding − kernel) / stride) + 1`, or `None` when the
    /// padded input is smaller than the kernel.
    pub fn output_size(&self, size: usize, kernel: usize) -> Option<usize> {
        let padded = size + 2 * self.padding;
        (self.stride > 0 && padded >= kernel).then(|| (padded - kernel) / self.stride + 1)
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    batch: usize,
    in_channels: usize,
    height: usize,
    width: usize,
    out_channels: usize,
    kernel_h: usize,
    kernel_w: usize,
    out_h: usize,
    out_w: usize,
    params: ConvParams,
}

impl ConvGeometry {
    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_len(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    /// Unfolds one `C × H × W` image into a `(C·kh·kw) × (Ho·Wo)` matrix.
    fn im2col(&self, image: &[f64], cols: &mut [f64]) {
        let pixels = self.out_pixels();
        let pad = self.params.padding as isize;
        let stride = self.params.stride as isize;
        for c in 0..self.in_channels {
            let plane = &image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..self.kernel_h {
                for kj in 0..self.kernel_w {
                    let row = (c * self.kernel_h + ki) * self.kernel_w + kj;
                    let dst = &mut cols[row * pixels..(row + 1) * pixels];
                    for oy in 0..self.out_h {
                        let iy = oy as isize * stride + ki as isize - pad;
                        for ox in 0..self.out_w {
                            let ix = ox as isize * stride + kj as isize - pad;
                            dst[oy * self.out_w + ox] = if iy >= 0
                                && ix >= 0
                                && (iy as usize) < self.height
                                && (ix as usize) < self.width
                            {
                                plane[iy as usize * self.width + ix as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: scatters column gradients back onto the image.
    fn col2im(&self, cols: &[f64], image: &mut [f64]) {
        let pixels = self.out_pixels();
        let pad = self.params.padding as isize;
        let stride = self.params.stride as isize;
        for c in 0..self.in_channels {
            for ki in 0..self.kernel_h {
                for kj in 0..self.kernel_w {
                    let row = (c * self.kernel_h + ki) * self.kernel_w + kj;
                    let src = &cols[row * pixels..(row + 1) * pixels];
                    for oy in 0..self.out_h {
                        let iy = oy as isize * stride + ki as isize - pad;
                        if iy < 0 || iy as usize >= self.height {
                            continue;
                        }
                        for ox in 0..self.out_w {
                            let ix = ox as isize * stride + kj as isize - pad;
                            if ix < 0 || ix as usize >= self.width {
                                continue;
                            }
                            image[(c * self.height + iy as usize) * self.width + ix as usize] +=
                                src[oy * self.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

enum Op {
    Leaf,
    Dense {
        x: usize,
        w: usize,
        b: usize,
        rows: usize,
    },
    Conv2d {
        x: usize,
        w: usize,
        b: usize,
        geom: ConvGeometry,
        /// im2col buffers for every batch item; kept only when the kernel needs a gradient.
        cols: Vec<f64>,
    },
    Relu(usize),
    Tanh(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Mean(usize),
    Sum(usize),
    L2Norm(usize),
    SoftmaxXent {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    GlobalAvgPool {
        x: usize,
        plane: usize,
    },
    CosineDistance(usize, usize),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Dense { .. } => OpKind::Dense,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Relu(_) => OpKind::Relu,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Offset(_) => OpKind::Offset,
            Op::Mean(_) => OpKind::Mean,
            Op::Sum(_) => OpKind::Sum,
            Op::L2Norm(_) => OpKind::L2Norm,
            Op::SoftmaxXent { .. } => OpKind::SoftmaxXent,
            Op::GlobalAvgPool { .. } => OpKind::GlobalAvgPool,
            Op::CosineDistance(..) => OpKind::CosineDistance,
        }
    }
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar root with respect to every differentiable leaf.
#[derive(Debug)]
pub struct Gradients {
    graph: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `leaf`; `None` for constants, non-leaves and leaves the
    /// root does not depend on.
    pub fn get(&self, leaf: Var) -> Option<&Tensor> {
        if leaf.graph != self.graph {
            return None;
        }
        self.grads.get(leaf.index).and_then(Option::as_ref)
    }

    pub fn take(&mut self, leaf: Var) -> Option<Tensor> {
        if leaf.graph != self.graph {
            return None;
        }
        self.grads.get_mut(leaf.index).and_then(Option::take)
    }
}

/// Records a forward computation for a single reverse pass.
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
    consumed: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<(), NumericsError> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(NumericsError::NonFinite { op, index }),
        None => Ok(()),
    }
}

fn l2(data: &[f64]) -> f64 {
    data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn accumulate(slot: &mut Option<Vec<f64>>, contribution: Vec<f64>) {
    match slot {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e += c;
            }
        }
        None => *slot = Some(contribution),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Every node in creation order.
    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        (0..self.nodes.len()).map(|index| Var { graph: self.id, index })
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    fn index(&self, v: Var) -> Result<usize, NumericsError> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(NumericsError::ForeignVar);
        }
        Ok(v.index)
    }

    fn guard(&self) -> Result<(), NumericsError> {
        if self.consumed {
            Err(NumericsError::GraphConsumed)
        } else {
            Ok(())
        }
    }

    fn input(&self, v: Var) -> Result<(usize, Arc<Tensor>, bool), NumericsError> {
        self.guard()?;
        let i = self.index(v)?;
        let node = &self.nodes[i];
        Ok((i, Arc::clone(&node.value), node.requires_grad))
    }

    fn push(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        op: Op,
        requires_grad: bool,
    ) -> Result<Var, NumericsError> {
        check_finite(name, &data)?;
        let index = self.nodes.len();
        self.nodes.push(Node {
            value: Arc::new(Tensor::from_parts_unchecked(shape, data)),
            // Constant-only subgraphs never need their caches.
            op: if requires_grad { op } else { strip_cache(op) },
            requires_grad,
        });
        Ok(Var {
            graph: self.id,
            index,
        })
    }

    /// Adds a leaf. Differentiable leaves receive gradients in [`Graph::backward`].
    pub fn leaf(&mut self, value: impl Into<Arc<Tensor>>, requires_grad: bool) -> Result<Var, NumericsError> {
        self.guard()?;
        let value = value.into();
        let index = self.nodes.len();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var {
            graph: self.id,
            index,
        })
    }

    pub fn param(&mut self, value: impl Into<Arc<Tensor>>) -> Result<Var, NumericsError> {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: impl Into<Arc<Tensor>>) -> Result<Var, NumericsError> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor, NumericsError> {
        let i = self.index(v)?;
        Ok(&self.nodes[i].value)
    }

    pub fn shared_value(&self, v: Var) -> Result<Arc<Tensor>, NumericsError> {
        let i = self.index(v)?;
        Ok(Arc::clone(&self.nodes[i].value))
    }

    pub fn kind(&self, v: Var) -> Result<OpKind, NumericsError> {
        let i = self.index(v)?;
        Ok(self.nodes[i].op.kind())
    }

    pub fn requires_grad(&self, v: Var) -> Result<bool, NumericsError> {
        let i = self.index(v)?;
        Ok(self.nodes[i].requires_grad)
    }

    /// Affine map `x·W + b` with `W: (in, out)` and `b: (out)`.
    ///
    /// A rank-1 `x` of length `in` yields shape `(out)`. A higher-rank `x` is
    /// read as a batch along its first axis with the remaining axes flattened,
    /// yielding `(N, out)`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumericsError> {
        let (xi, xv, xg) = self.input(x)?;
        let (wi, wv, wg) = self.input(w)?;
        let (bi, bv, bg) = self.input(b)?;
        if wv.shape().len() != 2 {
            return Err(NumericsError::ShapeMismatch {
                op: "dense",
                detail: format!("weight must be rank 2 (in, out), got {:?}", wv.shape()),
            });
        }
        let (fan_in, fan_out) = (wv.shape()[0], wv.shape()[1]);
        if bv.shape() != [fan_out] {
            return Err(NumericsError::ShapeMismatch {
                op: "dense",
                detail: format!("bias {:?} does not match weight {:?}", bv.shape(), wv.shape()),
            });
        }
        let (rows, out_shape) = if xv.shape().len() == 1 {
            (1, vec![fan_out])
        } else {
            (xv.shape()[0], vec![xv.shape()[0], fan_out])
        };
        if xv.numel() != rows * fan_in {
            return Err(NumericsError::ShapeMismatch {
                op: "dense",
                detail: format!(
                    "input {:?} has {} features per row, weight {:?} expects {}",
                    xv.shape(),
                    xv.numel() / rows,
                    wv.shape(),
                    fan_in
                ),
            });
        }
        let mut out = vec![0.0; rows * fan_out];
        for row in out.chunks_exact_mut(fan_out) {
            row.copy_from_slice(bv.data());
        }
        gemm(rows, fan_in, fan_out, xv.data(), false, wv.data(), false, &mut out, true);
        self.push(
            "dense",
            out_shape,
            out,
            Op::Dense {
                x: xi,
                w: wi,
                b: bi,
                rows,
            },
            xg || wg || bg,
        )
    }

    /// 2-D cross-correlation of `x: (N, C, H, W)` with `w: (O, C, kh, kw)`
    /// plus per-channel bias `b: (O)`, zero padded. Output is `(N, O, Ho, Wo)`
    /// with `Ho = floor((H + 2·padding − kh) / stride) + 1`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, params: ConvParams) -> Result<Var, NumericsError> {
        let (xi, xv, xg) = self.input(x)?;
        let (wi, wv, wg) = self.input(w)?;
        let (bi, bv, bg) = self.input(b)?;
        let (xs, ws) = (xv.shape(), wv.shape());
        if xs.len() != 4 || ws.len() != 4 {
            return Err(NumericsError::ShapeMismatch {
                op: "conv2d",
                detail: format!("expected input (N,C,H,W) and kernel (O,C,kh,kw), got {xs:?} and {ws:?}"),
            });
        }
        if xs[1] != ws[1] {
            return Err(NumericsError::ShapeMismatch {
                op: "conv2d",
                detail: format!("input has {} channels, kernel {:?} expects {}", xs[1], ws, ws[1]),
            });
        }
        if bv.shape() != [ws[0]] {
            return Err(NumericsError::ShapeMismatch {
                op: "conv2d",
                detail: format!("bias {:?} does not match {} output channels", bv.shape(), ws[0]),
            });
        }
        let (out_h, out_w) = match (params.output_size(xs[2], ws[2]), params.output_size(xs[3], ws[3])) {
            (Some(h), Some(w)) => (h, w),
            _ => {
                return Err(NumericsError::ShapeMismatch {
                    op: "conv2d",
                    detail: format!(
                        "input {}x{} with padding {} and stride {} cannot hold kernel {}x{}",
                        xs[2], xs[3], params.padding, params.stride, ws[2], ws[3]
                    ),
                })
            }
        };
        let geom = ConvGeometry {
            batch: xs[0],
            in_channels: xs[1],
            height: xs[2],
            width: xs[3],
            out_channels: ws[0],
            kernel_h: ws[2],
            kernel_w: ws[3],
            out_h,
            out_w,
            params,
        };
        let patch = geom.patch_len();
        let pixels = geom.out_pixels();
        let keep_cols = wg;
        let mut cols_all = if keep_cols { vec![0.0; geom.batch * patch * pixels] } else { Vec::new() };
        let mut scratch = if keep_cols { Vec::new() } else { vec![0.0; patch * pixels] };
        let out_len = geom.out_channels * pixels;
        let mut out = vec![0.0; geom.batch * out_len];
        for n in 0..geom.batch {
            let image = &xv.data()[n * geom.in_len()..(n + 1) * geom.in_len()];
            let cols = if keep_cols {
                &mut cols_all[n * patch * pixels..(n + 1) * patch * pixels]
            } else {
                &mut scratch[..]
            };
            geom.im2col(image, cols);
            let dst = &mut out[n * out_len..(n + 1) * out_len];
            for (o, plane) in dst.chunks_exact_mut(pixels).enumerate() {
                plane.fill(bv.data()[o]);
            }
            gemm(geom.out_channels, patch, pixels, wv.data(), false, cols, false, dst, true);
        }
        self.push(
            "conv2d",
            vec![geom.batch, geom.out_channels, out_h, out_w],
            out,
            Op::Conv2d {
                x: xi,
                w: wi,
                b: bi,
                geom,
                cols: cols_all,
            },
            xg || wg || bg,
        )
    }

    fn unary(
        &mut self,
        name: &'static str,
        x: Var,
        f: impl Fn(f64) -> f64,
        op: impl FnOnce(usize) -> Op,
    ) -> Result<Var, NumericsError> {
        let (xi, xv, xg) = self.input(x)?;
        let data = xv.data().iter().map(|&v| f(v)).collect();
        self.push(name, xv.shape().to_vec(), data, op(xi), xg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.unary("relu", x, |v| v.max(0.0), Op::Relu)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.unary("tanh", x, f64::tanh, Op::Tanh)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, NumericsError> {
        self.unary("scale", x, |v| v * factor, |i| Op::Scale(i, factor))
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, x: Var, shift: f64) -> Result<Var, NumericsError> {
        self.unary("offset", x, |v| v + shift, Op::Offset)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: impl FnOnce(usize, usize) -> Op,
    ) -> Result<Var, NumericsError> {
        let (ai, av, ag) = self.input(a)?;
        let (bi, bv, bg) = self.input(b)?;
        if av.shape() != bv.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: name,
                detail: format!("{:?} vs {:?}", av.shape(), bv.shape()),
            });
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        self.push(name, av.shape().to_vec(), data, op(ai, bi), ag || bg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    /// Mean over all elements.
    pub fn mean(&mut self, x: Var) -> Result<Var, NumericsError> {
        let (xi, xv, xg) = self.input(x)?;
        let value = xv.data().iter().sum::<f64>() / xv.numel() as f64;
        self.push("mean", vec![1], vec![value], Op::Mean(xi), xg)
    }

    /// Sum over all elements.
    pub fn sum(&mut self, x: Var) -> Result<Var, NumericsError> {
        let (xi, xv, xg) = self.input(x)?;
        let value = xv.data().iter().sum::<f64>();
        self.push("sum", vec![1], vec![value], Op::Sum(xi), xg)
    }

    /// Euclidean norm over all elements. The gradient at the origin is taken as zero.
    pub fn l2norm(&mut self, x: Var) -> Result<Var, NumericsError> {
        let (xi, xv, xg) = self.input(x)?;
        self.push("l2norm", vec![1], vec![l2(xv.data())], Op::L2Norm(xi), xg)
    }

    /// `1 − a·b / (‖a‖ ‖b‖)` over all elements of two equal-shape tensors.
    pub fn cosine_distance(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ai, av, ag) = self.input(a)?;
        let (bi, bv, bg) = self.input(b)?;
        if av.shape() != bv.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "cosine_distance",
                detail: format!("{:?} vs {:?}", av.shape(), bv.shape()),
            });
        }
        let (na, nb) = (l2(av.data()), l2(bv.data()));
        if na == 0.0 || nb == 0.0 {
            return Err(NumericsError::ZeroNorm { op: "cosine_distance" });
        }
        let value = 1.0 - dot(av.data(), bv.data()) / (na * nb);
        self.push("cosine_distance", vec![1], vec![value], Op::CosineDistance(ai, bi), ag || bg)
    }

    /// Mean softmax cross-entropy. `logits` is `(K)` with one label or
    /// `(N, K)` with `N` labels, each in `0..K`.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Result<Var, NumericsError> {
        let (li, lv, lg) = self.input(logits)?;
        let (rows, classes) = match lv.shape() {
            [k] => (1, *k),
            [n, k] => (*n, *k),
            other => {
                return Err(NumericsError::ShapeMismatch {
                    op: "softmax_xent",
                    detail: format!("logits must be (K) or (N, K), got {other:?}"),
                })
            }
        };
        if labels.len() != rows {
            return Err(NumericsError::ShapeMismatch {
                op: "softmax_xent",
                detail: format!("{} labels for logits {:?}", labels.len(), lv.shape()),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(NumericsError::LabelOutOfRange { label, classes });
        }
        let mut probs = vec![0.0; rows * classes];
        let mut loss = 0.0;
        for ((row, p), &label) in lv.data().chunks_exact(classes).zip(probs.chunks_exact_mut(classes)).zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (pi, &z) in p.iter_mut().zip(row) {
                *pi = (z - max).exp();
                total += *pi;
            }
            for pi in p.iter_mut() {
                *pi /= total;
            }
            loss += total.ln() + max - row[label];
        }
        loss /= rows as f64;
        self.push(
            "softmax_xent",
            vec![1],
            vec![loss],
            Op::SoftmaxXent {
                logits: li,
                labels: labels.to_vec(),
                probs,
            },
            lg,
        )
    }

    /// Spatial mean of `(N, C, H, W)` giving `(N, C)`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, NumericsError> {
        let (xi, xv, xg) = self.input(x)?;
        let [n, c, h, w] = *xv.shape() else {
            return Err(NumericsError::ShapeMismatch {
                op: "global_avg_pool",
                detail: format!("expected (N,C,H,W), got {:?}", xv.shape()),
            });
        };
        let plane = h * w;
        let data = xv
            .data()
            .chunks_exact(plane)
            .map(|p| p.iter().sum::<f64>() / plane as f64)
            .collect();
        self.push("global_avg_pool", vec![n, c], data, Op::GlobalAvgPool { x: xi, plane }, xg)
    }

    /// Reverse pass from a scalar root. Consumes the graph.
    pub fn backward(&mut self, root: Var) -> Result<Gradients, NumericsError> {
        if self.nodes.is_empty() {
            return Err(NumericsError::NotForwarded);
        }
        self.guard()?;
        let root_index = self.index(root)?;
        let root_value = &self.nodes[root_index].value;
        if !root_value.is_scalar() {
            return Err(NumericsError::NonScalarRoot {
                shape: root_value.shape().to_vec(),
            });
        }
        self.consumed = true;

        let leaves: Vec<bool> = self.nodes.iter().map(|n| matches!(n.op, Op::Leaf)).collect();
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root_index] = Some(vec![1.0]);

        for i in (0..=root_index).rev() {
            if !self.nodes[i].requires_grad || leaves[i] {
                continue;
            }
            let Some(upstream) = grads[i].take() else { continue };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.propagate(i, &op, &upstream, &mut grads);
        }

        let mut out = Vec::with_capacity(self.nodes.len());
        for ((node, grad), is_leaf) in self.nodes.iter().zip(grads).zip(leaves) {
            let tensor = match (node.requires_grad && is_leaf, grad) {
                (true, Some(g)) => {
                    check_finite("backward", &g)?;
                    Some(Tensor::from_parts_unchecked(node.value.shape().to_vec(), g))
                }
                _ => None,
            };
            out.push(tensor);
        }
        Ok(Gradients {
            graph: self.id,
            grads: out,
        })
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    fn propagate(&self, out_index: usize, op: &Op, up: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match *op {
            Op::Leaf => {}
            Op::Dense { x, w, b, rows } => {
                let wv = self.val(w);
                let (fan_in, fan_out) = (wv.shape()[0], wv.shape()[1]);
                if self.wants(x) {
                    let mut dx = vec![0.0; rows * fan_in];
                    gemm(rows, fan_out, fan_in, up, false, wv.data(), true, &mut dx, false);
                    accumulate(&mut grads[x], dx);
                }
                if self.wants(w) {
                    let mut dw = vec![0.0; fan_in * fan_out];
                    gemm(fan_in, rows, fan_out, self.val(x).data(), true, up, false, &mut dw, false);
                    accumulate(&mut grads[w], dw);
                }
                if self.wants(b) {
                    let mut db = vec![0.0; fan_out];
                    for row in up.chunks_exact(fan_out) {
                        for (d, g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    accumulate(&mut grads[b], db);
                }
            }
            Op::Conv2d { x, w, b, geom, ref cols } => {
                let patch = geom.patch_len();
                let pixels = geom.out_pixels();
                let out_len = geom.out_channels * pixels;
                let wv = self.val(w);
                if self.wants(w) {
                    let mut dw = vec![0.0; geom.out_channels * patch];
                    for n in 0..geom.batch {
                        gemm(
                            geom.out_channels,
                            pixels,
                            patch,
                            &up[n * out_len..(n + 1) * out_len],
                            false,
                            &cols[n * patch * pixels..(n + 1) * patch * pixels],
                            true,
                            &mut dw,
                            true,
                        );
                    }
                    accumulate(&mut grads[w], dw);
                }
                if self.wants(b) {
                    let mut db = vec![0.0; geom.out_channels];
                    for item in up.chunks_exact(out_len) {
                        for (d, plane) in db.iter_mut().zip(item.chunks_exact(pixels)) {
                            *d += plane.iter().sum::<f64>();
                        }
                    }
                    accumulate(&mut grads[b], db);
                }
                if self.wants(x) {
                    let mut dx = vec![0.0; geom.batch * geom.in_len()];
                    let mut dcols = vec![0.0; patch * pixels];
                    for n in 0..geom.batch {
                        gemm(
                            patch,
                            geom.out_channels,
                            pixels,
                            wv.data(),
                            true,
                            &up[n * out_len..(n + 1) * out_len],
                            false,
                            &mut dcols,
                            false,
                        );
                        geom.col2im(&dcols, &mut dx[n * geom.in_len()..(n + 1) * geom.in_len()]);
                    }
                    accumulate(&mut grads[x], dx);
                }
            }
            Op::Relu(x) => {
                if self.wants(x) {
                    let dx = self
                        .val(x)
                        .data()
                        .iter()
                        .zip(up)
                        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[x], dx);
                }
            }
            Op::Tanh(x) => {
                if self.wants(x) {
                    let y = self.val(out_index).data();
                    let dx = y.iter().zip(up).map(|(&t, &g)| g * (1.0 - t * t)).collect();
                    accumulate(&mut grads[x], dx);
                }
            }
            Op::Add(a, b) => {
                if self.wants(a) {
                    accumulate(&mut grads[a], up.to_vec());
                }
                if self.wants(b) {
                    accumulate(&mut grads[b], up.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if self.wants(a) {
                    accumulate(&mut grads[a], up.to_vec());
                }
                if self.wants(b) {
                    accumulate(&mut grads[b], up.iter().map(|g| -g).collect());
                }
            }
            Op::Mul(a, b) => {
                if self.wants(a) {
                    let da = self.val(b).data().iter().zip(up).map(|(v, g)| v * g).collect();
                    accumulate(&mut grads[a], da);
                }
                if self.wants(b) {
                    let db = self.val(a).data().iter().zip(up).map(|(v, g)| v * g).collect();
                    accumulate(&mut grads[b], db);
                }
            }
            Op::Scale(x, factor) => {
                if self.wants(x) {
                    accumulate(&mut grads[x], up.iter().map(|g| g * factor).collect());
                }
            }
            Op::Offset(x) => {
                if self.wants(x) {
                    accumulate(&mut grads[x], up.to_vec());
                }
            }
            Op::Mean(x) => {
                if self.wants(x) {
                    let n = self.val(x).numel();
                    accumulate(&mut grads[x], vec![up[0] / n as f64; n]);
                }
            }
            Op::Sum(x) => {
                if self.wants(x) {
                    accumulate(&mut grads[x], vec![up[0]; self.val(x).numel()]);
                }
            }
            Op::L2Norm(x) => {
                if self.wants(x) {
                    let norm = self.val(out_index).data()[0];
                    let xv = self.val(x).data();
                    let dx = if norm > 0.0 {
                        xv.iter().map(|v| up[0] * v / norm).collect()
                    } else {
                        vec![0.0; xv.len()]
                    };
                    accumulate(&mut grads[x], dx);
                }
            }
            Op::CosineDistance(a, b) => {
                let (av, bv) = (self.val(a).data(), self.val(b).data());
                let (na, nb) = (l2(av), l2(bv));
                let ab = dot(av, bv);
                // d(1 − cos)/da = −(b/(|a||b|) − (a·b) a/(|a|³|b|))
                if self.wants(a) {
                    let da = av
                        .iter()
                        .zip(bv)
                        .map(|(&x, &y)| -up[0] * (y / (na * nb) - ab * x / (na * na * na * nb)))
                        .collect();
                    accumulate(&mut grads[a], da);
                }
                if self.wants(b) {
                    let db = bv
                        .iter()
                        .zip(av)
                        .map(|(&y, &x)| -up[0] * (x / (na * nb) - ab * y / (nb * nb * nb * na)))
                        .collect();
                    accumulate(&mut grads[b], db);
                }
            }
            Op::SoftmaxXent {
                logits,
                ref labels,
                ref probs,
            } => {
                if self.wants(logits) {
                    let rows = labels.len();
                    let classes = probs.len() / rows;
                    let scale = up[0] / rows as f64;
                    let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (r, &label) in labels.iter().enumerate() {
                        d[r * classes + label] -= scale;
                    }
                    accumulate(&mut grads[logits], d);
                }
            }
            Op::GlobalAvgPool { x, plane } => {
                if self.wants(x) {
                    let mut dx = Vec::with_capacity(up.len() * plane);
                    for &g in up {
                        dx.extend(std::iter::repeat_n(g / plane as f64, plane));
                    }
                    accumulate(&mut grads[x], dx);
                }
            }
        }
    }
}

fn strip_cache(op: Op) -> Op {
    match op {
        Op::Conv2d { x, w, b, geom, .. } => Op::Conv2d {
            x,
            w,
            b,
            geom,
            cols: Vec::new(),
        },
        Op::SoftmaxXent { logits, labels, .. } => Op::SoftmaxXent {
            logits,
            labels,
            probs: Vec::new(),
        },
        other => other,
    }
}
