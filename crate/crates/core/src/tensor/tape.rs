use crate::error::{Error, Result};

use super::{Scalar, Tensor};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Avg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolWindow {
    Global,
    Window { k: usize, stride: usize },
}

/// Recorded operation. Each variant stores the input handles plus whatever
/// forward-pass state its backward rule needs (argmax indices, geometry).
#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul { a: TensorId, b: TensorId },
    /// y = a * b^T with a: m×k, b: n×k.
    MatMulNt { a: TensorId, b: TensorId },
    Transpose { x: TensorId },
    Add { a: TensorId, b: TensorId },
    AddRowBias { x: TensorId, b: TensorId },
    AddChannelBias { x: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    MulScalar { x: TensorId, c: f64 },
    LeakyRelu { x: TensorId, slope: f64 },
    Sigmoid { x: TensorId },
    Abs { x: TensorId },
    SoftmaxRows { x: TensorId },
    Conv2d { x: TensorId, w: TensorId, stride: usize, pad: usize },
    Pool { x: TensorId, mode: PoolMode, window: PoolWindow, argmax: Vec<usize> },
    UpsampleNearest2 { x: TensorId },
    ConcatChannels { parts: Vec<TensorId> },
    SliceChannels { x: TensorId, from: usize, to: usize },
    TokensFromMap { x: TensorId },
    StackRows { parts: Vec<TensorId> },
    RepeatRows { v: TensorId },
    ConcatCols { a: TensorId, b: TensorId },
    MaxOverRows { x: TensorId, argmax: Vec<usize> },
    ScaleChannels { x: TensorId, g: TensorId },
    Sum { x: TensorId },
    Variance { x: TensorId },
    VarianceRows { x: TensorId },
    Reshape { x: TensorId },
    RankLoss { scores: TensorId, pos: Vec<usize>, neg: Vec<usize> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::MatMulNt { .. } => "matmul_nt",
            Op::Transpose { .. } => "transpose",
            Op::Add { .. } => "add",
            Op::AddRowBias { .. } => "add_row_bias",
            Op::AddChannelBias { .. } => "add_channel_bias",
            Op::Mul { .. } => "mul",
            Op::MulScalar { .. } => "mul_scalar",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Abs { .. } => "abs",
            Op::SoftmaxRows { .. } => "softmax_rows",
            Op::Conv2d { .. } => "conv2d",
            Op::Pool { .. } => "spatial_pool",
            Op::UpsampleNearest2 { .. } => "upsample_nearest2",
            Op::ConcatChannels { .. } => "concat_channels",
            Op::SliceChannels { .. } => "slice_channels",
            Op::TokensFromMap { .. } => "tokens_from_map",
            Op::StackRows { .. } => "stack_rows",
            Op::RepeatRows { .. } => "repeat_rows",
            Op::ConcatCols { .. } => "concat_cols",
            Op::MaxOverRows { .. } => "max_over_rows",
            Op::ScaleChannels { .. } => "scale_channels",
            Op::Sum { .. } => "sum",
            Op::Variance { .. } => "variance",
            Op::VarianceRows { .. } => "variance_rows",
            Op::Reshape { .. } => "reshape",
            Op::RankLoss { .. } => "rank_loss",
        }
    }
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

/// Record of one forward pass in topological order. A single training
/// context owns one tape; tensors it returns are immutable once recorded.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register an input tensor. Its `requires_grad` flag decides whether
    /// backward() will populate a gradient for it.
    pub fn leaf(&mut self, value: Tensor<T>) -> TensorId {
        let requires = value.requires_grad;
        self.push(value, Op::Leaf, requires)
    }

    /// Register an f32 tensor, converting to this tape's element type.
    pub fn leaf_cast(&mut self, value: &Tensor<f32>) -> TensorId {
        let mut converted = Tensor::<T> {
            shape: value.shape().to_vec(),
            data: value.data().iter().map(|&v| T::from_f32(v)).collect(),
            requires_grad: value.requires_grad,
            grad: None,
        };
        converted.requires_grad = value.requires_grad;
        self.leaf(converted)
    }

    pub fn value(&self, id: TensorId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn data(&self, id: TensorId) -> &[T] {
        self.nodes[id.0].value.data()
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Gradient populated by [`Tape::backward`]; `None` before backward or
    /// for nodes that do not require gradients.
    pub fn grad(&self, id: TensorId) -> Option<&[T]> {
        self.nodes[id.0].value.grad.as_deref()
    }

    fn requires(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> TensorId {
        debug_assert!(
            value.all_finite(),
            "non-finite values produced by op `{}`",
            op.name()
        );
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        id
    }

    // ── forward operations ──────────────────────────────────────────────

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dimension("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::ZERO; m * n];
        T::matmul_acc(self.data(a), self.data(b), &mut out, m, k, n);
        let requires = self.requires(a) || self.requires(b);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::MatMul { a, b },
            requires,
        ))
    }

    /// y = a · bᵀ for a: m×k, b: n×k. Saves materializing transposes in the
    /// attention and scoring paths.
    pub fn matmul_nt(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::dimension("matmul_nt", format!("{sa:?} x {sb:?}^T")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut out = vec![T::ZERO; m * n];
        T::matmul_nt_acc(self.data(a), self.data(b), &mut out, m, k, n);
        let requires = self.requires(a) || self.requires(b);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::MatMulNt { a, b },
            requires,
        ))
    }

    pub fn transpose(&mut self, x: TensorId) -> Result<TensorId> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::dimension("transpose", format!("need matrix, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let xd = self.data(x);
        let mut out = vec![T::ZERO; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xd[i * c + j];
            }
        }
        let requires = self.requires(x);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose { x }, requires))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dimension(
                "add",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let out: Vec<T> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let requires = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Add { a, b }, requires))
    }

    /// x: R×C plus a length-C bias added to every row.
    pub fn add_row_bias(&mut self, x: TensorId, b: TensorId) -> Result<TensorId> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sx.len() != 2 || sb != [sx[1]] {
            return Err(Error::dimension("add_row_bias", format!("{sx:?} + {sb:?}")));
        }
        let (r, c) = (sx[0], sx[1]);
        let bd = self.data(b).to_vec();
        let mut out = self.data(x).to_vec();
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] += bd[j];
            }
        }
        let requires = self.requires(x) || self.requires(b);
        Ok(self.push(Tensor::new(vec![r, c], out)?, Op::AddRowBias { x, b }, requires))
    }

    /// x: C×H×W plus a length-C bias added to every spatial position.
    pub fn add_channel_bias(&mut self, x: TensorId, b: TensorId) -> Result<TensorId> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sx.len() != 3 || sb != [sx[0]] {
            return Err(Error::dimension("add_channel_bias", format!("{sx:?} + {sb:?}")));
        }
        let (c, h, w) = (sx[0], sx[1], sx[2]);
        let bd = self.data(b).to_vec();
        let mut out = self.data(x).to_vec();
        for ch in 0..c {
            let bias = bd[ch];
            for v in &mut out[ch * h * w..(ch + 1) * h * w] {
                *v += bias;
            }
        }
        let requires = self.requires(x) || self.requires(b);
        Ok(self.push(
            Tensor::new(vec![c, h, w], out)?,
            Op::AddChannelBias { x, b },
            requires,
        ))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dimension(
                "mul",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let out: Vec<T> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let requires = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Mul { a, b }, requires))
    }

    pub fn mul_scalar(&mut self, x: TensorId, c: f64) -> TensorId {
        let cf = T::from_f64(c);
        let out: Vec<T> = self.data(x).iter().map(|&v| v * cf).collect();
        let shape = self.shape(x).to_vec();
        let requires = self.requires(x);
        self.push(
            Tensor::new(shape, out).expect("shape preserved"),
            Op::MulScalar { x, c },
            requires,
        )
    }

    /// y = x for x ≥ 0 else slope·x. The derivative at exactly 0 is 1.
    pub fn leaky_relu(&mut self, x: TensorId, slope: f64) -> Result<TensorId> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::Config(format!(
                "leaky_relu slope must be in (0,1), got {slope}"
            )));
        }
        let s = T::from_f64(slope);
        let out: Vec<T> = self
            .data(x)
            .iter()
            .map(|&v| if v >= T::ZERO { v } else { v * s })
            .collect();
        let shape = self.shape(x).to_vec();
        let requires = self.requires(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::LeakyRelu { x, slope }, requires))
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        let out: Vec<T> = self
            .data(x)
            .iter()
            .map(|&v| {
                if v >= T::ZERO {
                    T::ONE / (T::ONE + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (T::ONE + e)
                }
            })
            .collect();
        let shape = self.shape(x).to_vec();
        let requires = self.requires(x);
        self.push(
            Tensor::new(shape, out).expect("shape preserved"),
            Op::Sigmoid { x },
            requires,
        )
    }

    /// Elementwise |x| with subgradient 0 at the origin.
    pub fn abs(&mut self, x: TensorId) -> TensorId {
        let out: Vec<T> = self.data(x).iter().map(|&v| v.abs()).collect();
        let shape = self.shape(x).to_vec();
        let requires = self.requires(x);
        self.push(
            Tensor::new(shape, out).expect("shape preserved"),
            Op::Abs { x },
            requires,
        )
    }

    /// Row-wise softmax with per-row max subtraction for stability.
    pub fn softmax_rows(&mut self, x: TensorId) -> Result<TensorId> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::dimension("softmax_rows", format!("need matrix, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let xd = self.data(x);
        let mut out = vec![T::ZERO; r * c];
        for i in 0..r {
            let row = &xd[i * c..(i + 1) * c];
            let mut mx = row[0];
            for &v in row {
                mx = mx.max_s(v);
            }
            let mut denom = T::ZERO;
            for j in 0..c {
                let e = (row[j] - mx).exp();
                out[i * c + j] = e;
                denom += e;
            }
            for j in 0..c {
                out[i * c + j] = out[i * c + j] / denom;
            }
        }
        let requires = self.requires(x);
        Ok(self.push(Tensor::new(vec![r, c], out)?, Op::SoftmaxRows { x }, requires))
    }

    /// Cross-correlation of x: Cin×H×W with w: Cout×Cin×k×k.
    pub fn conv2d(&mut self, x: TensorId, w: TensorId, stride: usize, pad: usize) -> Result<TensorId> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 3 || sw.len() != 4 || sw[1] != sx[0] {
            return Err(Error::dimension("conv2d", format!("input {sx:?}, weight {sw:?}")));
        }
        if sw[2] != sw[3] {
            return Err(Error::Config(format!("conv2d kernel must be square, got {sw:?}")));
        }
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be >= 1".into()));
        }
        let (cin, h, w_in) = (sx[0], sx[1], sx[2]);
        let (cout, k) = (sw[0], sw[2]);
        let (oh, ow) = conv_out_dims(h, w_in, k, stride, pad)?;

        let cols = im2col(self.data(x), cin, h, w_in, k, stride, pad, oh, ow);
        let mut out = vec![T::ZERO; cout * oh * ow];
        // weight viewed as Cout×(Cin·k·k), columns as (Cin·k·k)×(oh·ow)
        T::matmul_acc(self.data(w), &cols, &mut out, cout, cin * k * k, oh * ow);
        let requires = self.requires(x) || self.requires(w);
        Ok(self.push(
            Tensor::new(vec![cout, oh, ow], out)?,
            Op::Conv2d { x, w, stride, pad },
            requires,
        ))
    }

    /// Spatial max/avg pooling over a C×H×W map. Global mode reduces to a
    /// length-C vector; windowed mode requires the window to tile exactly.
    pub fn spatial_pool(&mut self, x: TensorId, mode: PoolMode, window: PoolWindow) -> Result<TensorId> {
        let s = self.shape(x);
        if s.len() != 3 {
            return Err(Error::dimension("spatial_pool", format!("need C×H×W, got {s:?}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let xd = self.data(x);
        match window {
            PoolWindow::Global => {
                let hw = h * w;
                let mut out = vec![T::ZERO; c];
                let mut argmax = Vec::new();
                match mode {
                    PoolMode::Max => {
                        argmax = vec![0; c];
                        for ch in 0..c {
                            let plane = &xd[ch * hw..(ch + 1) * hw];
                            let mut best = plane[0];
                            let mut at = 0;
                            for (i, &v) in plane.iter().enumerate() {
                                if v > best {
                                    best = v;
                                    at = i;
                                }
                            }
                            out[ch] = best;
                            argmax[ch] = at;
                        }
                    }
                    PoolMode::Avg => {
                        let inv = T::ONE / T::from_usize(hw);
                        for ch in 0..c {
                            let mut acc = T::ZERO;
                            for &v in &xd[ch * hw..(ch + 1) * hw] {
                                acc += v;
                            }
                            out[ch] = acc * inv;
                        }
                    }
                }
                let requires = self.requires(x);
                Ok(self.push(
                    Tensor::new(vec![c], out)?,
                    Op::Pool { x, mode, window, argmax },
                    requires,
                ))
            }
            PoolWindow::Window { k, stride } => {
                if k == 0 || stride == 0 || h < k || w < k || (h - k) % stride != 0 || (w - k) % stride != 0 {
                    return Err(Error::Config(format!(
                        "pool window {k}x{k} stride {stride} does not tile a {h}x{w} map"
                    )));
                }
                let oh = (h - k) / stride + 1;
                let ow = (w - k) / stride + 1;
                let mut out = vec![T::ZERO; c * oh * ow];
                let mut argmax = Vec::new();
                if mode == PoolMode::Max {
                    argmax = vec![0; c * oh * ow];
                }
                let inv = T::ONE / T::from_usize(k * k);
                for ch in 0..c {
                    for oi in 0..oh {
                        for oj in 0..ow {
                            let oidx = ch * oh * ow + oi * ow + oj;
                            match mode {
                                PoolMode::Max => {
                                    let mut best = T::from_f64(f64::NEG_INFINITY);
                                    let mut at = 0;
                                    for di in 0..k {
                                        for dj in 0..k {
                                            let ii = oi * stride + di;
                                            let jj = oj * stride + dj;
                                            let idx = ch * h * w + ii * w + jj;
                                            if xd[idx] > best {
                                                best = xd[idx];
                                                at = idx;
                                            }
                                        }
                                    }
                                    out[oidx] = best;
                                    argmax[oidx] = at;
                                }
                                PoolMode::Avg => {
                                    let mut acc = T::ZERO;
                                    for di in 0..k {
                                        for dj in 0..k {
                                            let ii = oi * stride + di;
                                            let jj = oj * stride + dj;
                                            acc += xd[ch * h * w + ii * w + jj];
                                        }
                                    }
                                    out[oidx] = acc * inv;
                                }
                            }
                        }
                    }
                }
                let requires = self.requires(x);
                Ok(self.push(
                    Tensor::new(vec![c, oh, ow], out)?,
                    Op::Pool { x, mode, window, argmax },
                    requires,
                ))
            }
        }
    }

    /// Nearest-neighbour 2× upsampling of a C×H×W map.
    pub fn upsample_nearest2(&mut self, x: TensorId) -> Result<TensorId> {
        let s = self.shape(x);
        if s.len() != 3 {
            return Err(Error::dimension("upsample_nearest2", format!("need C×H×W, got {s:?}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let xd = self.data(x);
        let (oh, ow) = (h * 2, w * 2);
        let mut out = vec![T::ZERO; c * oh * ow];
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let v = xd[ch * h * w + i * w + j];
                    let base = ch * oh * ow + 2 * i * ow + 2 * j;
                    out[base] = v;
                    out[base + 1] = v;
                    out[base + ow] = v;
                    out[base + ow + 1] = v;
                }
            }
        }
        let requires = self.requires(x);
        Ok(self.push(
            Tensor::new(vec![c, oh, ow], out)?,
            Op::UpsampleNearest2 { x },
            requires,
        ))
    }

    /// Concatenate C_i×H×W maps along the channel axis, order preserved.
    pub fn concat_channels(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Usage("concat_channels of zero parts".into()));
        }
        let s0 = self.shape(parts[0]).to_vec();
        if s0.len() != 3 {
            return Err(Error::dimension("concat_channels", format!("need C×H×W, got {s0:?}")));
        }
        let (h, w) = (s0[1], s0[2]);
        let mut total_c = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 3 || s[1] != h || s[2] != w {
                return Err(Error::dimension(
                    "concat_channels",
                    format!("spatial mismatch: {s:?} vs {}x{}", h, w),
                ));
            }
            total_c += s[0];
        }
        let mut out = Vec::with_capacity(total_c * h * w);
        for &p in parts {
            out.extend_from_slice(self.data(p));
        }
        let requires = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(
            Tensor::new(vec![total_c, h, w], out)?,
            Op::ConcatChannels { parts: parts.to_vec() },
            requires,
        ))
    }

    /// Contiguous channel slice [from, to) of a C×H×W map.
    pub fn slice_channels(&mut self, x: TensorId, from: usize, to: usize) -> Result<TensorId> {
        let s = self.shape(x);
        if s.len() != 3 || from >= to || to > s[0] {
            return Err(Error::dimension(
                "slice_channels",
                format!("slice {from}..{to} of {s:?}"),
            ));
        }
        let (h, w) = (s[1], s[2]);
        let out = self.data(x)[from * h * w..to * h * w].to_vec();
        let requires = self.requires(x);
        Ok(self.push(
            Tensor::new(vec![to - from, h, w], out)?,
            Op::SliceChannels { x, from, to },
            requires,
        ))
    }

    /// View a C×H×W map as (H·W)×C tokens, one token per spatial position.
    pub fn tokens_from_map(&mut self, x: TensorId) -> Result<TensorId> {
        let s = self.shape(x);
        if s.len() != 3 {
            return Err(Error::dimension("tokens_from_map", format!("need C×H×W, got {s:?}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let hw = h * w;
        let xd = self.data(x);
        let mut out = vec![T::ZERO; hw * c];
        for ch in 0..c {
            for p in 0..hw {
                out[p * c + ch] = xd[ch * hw + p];
            }
        }
        let requires = self.requires(x);
        Ok(self.push(
            Tensor::new(vec![hw, c], out)?,
            Op::TokensFromMap { x },
            requires,
        ))
    }

    /// Stack length-C vectors into an R×C matrix, one row per input.
    pub fn stack_rows(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Usage("stack_rows of zero parts".into()));
        }
        let s0 = self.shape(parts[0]).to_vec();
        if s0.len() != 1 {
            return Err(Error::dimension("stack_rows", format!("need vectors, got {s0:?}")));
        }
        let c = s0[0];
        let mut out = Vec::with_capacity(parts.len() * c);
        for &p in parts {
            if self.shape(p) != [c] {
                return Err(Error::dimension(
                    "stack_rows",
                    format!("{:?} vs expected [{c}]", self.shape(p)),
                ));
            }
            out.extend_from_slice(self.data(p));
        }
        let requires = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(
            Tensor::new(vec![parts.len(), c], out)?,
            Op::StackRows { parts: parts.to_vec() },
            requires,
        ))
    }

    /// Broadcast a length-C vector into n identical rows.
    pub fn repeat_rows(&mut self, v: TensorId, n: usize) -> Result<TensorId> {
        let s = self.shape(v);
        if s.len() != 1 || n == 0 {
            return Err(Error::dimension("repeat_rows", format!("{s:?} x {n}")));
        }
        let c = s[0];
        let row = self.data(v).to_vec();
        let mut out = Vec::with_capacity(n * c);
        for _ in 0..n {
            out.extend_from_slice(&row);
        }
        let requires = self.requires(v);
        Ok(self.push(Tensor::new(vec![n, c], out)?, Op::RepeatRows { v }, requires))
    }

    /// Concatenate two matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(Error::dimension("concat_cols", format!("{sa:?} | {sb:?}")));
        }
        let (r, ca, cb) = (sa[0], sa[1], sb[1]);
        let (ad, bd) = (self.data(a), self.data(b));
        let mut out = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            out.extend_from_slice(&ad[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&bd[i * cb..(i + 1) * cb]);
        }
        let requires = self.requires(a) || self.requires(b);
        Ok(self.push(
            Tensor::new(vec![r, ca + cb], out)?,
            Op::ConcatCols { a, b },
            requires,
        ))
    }

    /// Column-wise max over the rows of an R×C matrix; ties break to the
    /// lowest row index.
    pub fn max_over_rows(&mut self, x: TensorId) -> Result<TensorId> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::dimension("max_over_rows", format!("need matrix, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let xd = self.data(x);
        let mut out = xd[..c].to_vec();
        let mut argmax = vec![0usize; c];
        for i in 1..r {
            for j in 0..c {
                let v = xd[i * c + j];
                if v > out[j] {
                    out[j] = v;
                    argmax[j] = i;
                }
            }
        }
        let requires = self.requires(x);
        Ok(self.push(
            Tensor::new(vec![c], out)?,
            Op::MaxOverRows { x, argmax },
            requires,
        ))
    }

    /// Multiply channel c of a C×H×W map by gate[c].
    pub fn scale_channels(&mut self, x: TensorId, g: TensorId) -> Result<TensorId> {
        let (sx, sg) = (self.shape(x), self.shape(g));
        if sx.len() != 3 || sg != [sx[0]] {
            return Err(Error::dimension("scale_channels", format!("{sx:?} * {sg:?}")));
        }
        let (c, h, w) = (sx[0], sx[1], sx[2]);
        let gd = self.data(g).to_vec();
        let mut out = self.data(x).to_vec();
        for ch in 0..c {
            let gate = gd[ch];
            for v in &mut out[ch * h * w..(ch + 1) * h * w] {
                *v *= gate;
            }
        }
        let requires = self.requires(x) || self.requires(g);
        Ok(self.push(
            Tensor::new(vec![c, h, w], out)?,
            Op::ScaleChannels { x, g },
            requires,
        ))
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&mut self, x: TensorId) -> TensorId {
        let mut acc = T::ZERO;
        for &v in self.data(x) {
            acc += v;
        }
        let requires = self.requires(x);
        self.push(Tensor::scalar(acc), Op::Sum { x }, requires)
    }

    /// Population variance of all elements, as a scalar tensor.
    pub fn variance(&mut self, x: TensorId) -> TensorId {
        let xd = self.data(x);
        let n = T::from_usize(xd.len());
        let mut mean = T::ZERO;
        for &v in xd {
            mean += v;
        }
        mean = mean / n;
        let mut acc = T::ZERO;
        for &v in xd {
            let d = v - mean;
            acc += d * d;
        }
        let requires = self.requires(x);
        self.push(Tensor::scalar(acc / n), Op::Variance { x }, requires)
    }

    /// Population variance of each row of an R×C matrix.
    pub fn variance_rows(&mut self, x: TensorId) -> Result<TensorId> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::dimension("variance_rows", format!("need matrix, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let xd = self.data(x);
        let nc = T::from_usize(c);
        let mut out = vec![T::ZERO; r];
        for i in 0..r {
            let row = &xd[i * c..(i + 1) * c];
            let mut mean = T::ZERO;
            for &v in row {
                mean += v;
            }
            mean = mean / nc;
            let mut acc = T::ZERO;
            for &v in row {
                let d = v - mean;
                acc += d * d;
            }
            out[i] = acc / nc;
        }
        let requires = self.requires(x);
        Ok(self.push(Tensor::new(vec![r], out)?, Op::VarianceRows { x }, requires))
    }

    pub fn reshape(&mut self, x: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() {
            return Err(Error::dimension(
                "reshape",
                format!("{:?} -> {:?}", self.shape(x), shape),
            ));
        }
        let out = self.data(x).to_vec();
        let requires = self.requires(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Reshape { x }, requires))
    }

    /// Pairwise logistic ranking loss over a score vector:
    /// mean over (neg j, pos k) pairs of softplus(score[j] − score[k]),
    /// evaluated with the overflow-safe softplus identity.
    pub fn rank_loss(&mut self, scores: TensorId, pos: &[usize], neg: &[usize]) -> Result<TensorId> {
        let s = self.shape(scores);
        if s.len() != 1 {
            return Err(Error::dimension("rank_loss", format!("need vector, got {s:?}")));
        }
        if pos.is_empty() || neg.is_empty() {
            return Err(Error::Usage(
                "rank_loss needs at least one positive and one negative".into(),
            ));
        }
        let len = s[0];
        if pos.iter().chain(neg).any(|&i| i >= len) {
            return Err(Error::Usage(format!("rank_loss index out of range (len {len})")));
        }
        let sd = self.data(scores);
        let mut acc = T::ZERO;
        for &j in neg {
            for &k in pos {
                let tau = sd[j] - sd[k];
                // softplus(t) = max(t, 0) + ln(1 + exp(-|t|))
                acc += tau.max_s(T::ZERO) + (-tau.abs()).exp().ln_1p();
            }
        }
        let alpha = T::ONE / T::from_usize(pos.len() * neg.len());
        let requires = self.requires(scores);
        Ok(self.push(
            Tensor::scalar(acc * alpha),
            Op::RankLoss {
                scores,
                pos: pos.to_vec(),
                neg: neg.to_vec(),
            },
            requires,
        ))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse-topological gradient accumulation from a scalar loss.
    /// Gradients of grad-requiring leaves unreachable from the loss are
    /// zero afterwards.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n)
            .map(|i| {
                if self.nodes[i].requires_grad {
                    Some(vec![T::ZERO; self.nodes[i].value.numel()])
                } else {
                    None
                }
            })
            .collect();
        if let Some(g) = grads[loss.0].as_mut() {
            g[0] = T::ONE;
        }

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                    let nn = self.shape(b)[1];
                    if let Some(ga) = grads[a.0].as_mut() {
                        // dA += G · Bᵀ
                        T::matmul_nt_acc(&g, self.nodes[b.0].value.data(), ga, m, nn, k);
                    }
                    if let Some(gb) = grads[b.0].as_mut() {
                        // dB += Aᵀ · G
                        T::matmul_tn_acc(self.nodes[a.0].value.data(), &g, gb, k, m, nn);
                    }
                }
                Op::MatMulNt { a, b } => {
                    let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                    let nn = self.shape(b)[0];
                    if let Some(ga) = grads[a.0].as_mut() {
                        // dA += G · B  (G: m×n, B: n×k)
                        T::matmul_acc(&g, self.nodes[b.0].value.data(), ga, m, nn, k);
                    }
                    if let Some(gb) = grads[b.0].as_mut() {
                        // dB += Gᵀ · A  (Gᵀ: n×m, A: m×k)
                        T::matmul_tn_acc(&g, self.nodes[a.0].value.data(), gb, nn, m, k);
                    }
                }
                Op::Transpose { x } => {
                    if let Some(gx) = grads[x.0].as_mut() {
                        let (c, r) = (self.shape(i_id(i))[0], self.shape(i_id(i))[1]);
                        for p in 0..c {
                            for q in 0..r {
                                gx[q * c + p] += g[p * r + q];
                            }
                        }
                    }
                }
                Op::Add { a, b } => {
                    if let Some(ga) = grads[a.0].as_mut() {
                        for (d, &s) in ga.iter_mut().zip(&g) {
                            *d += s;
                        }
                    }
                    if let Some(gb) = grads[b.0].as_mut() {
                        for (d, &s) in gb.iter_mut().zip(&g) {
                            *d += s;
                        }
                    }
                }
                Op::AddRowBias { x, b } => {
                    let (r, c) = (self.shape(x)[0], self.shape(x)[1]);
                    if let Some(gx) = grads[x.0].as_mut() {
                        for (d, &s) in gx.iter_mut().zip(&g) {
                            *d += s;
                        }
                    }
                    if let Some(gb) = grads[b.0].as_mut() {
                        for i2 in 0..r {
                            for j in 0..c {
                                gb[j] += g[i2 * c + j];
                            }
                        }
                    }
                }
                Op::AddChannelBias { x, b } => {
                    let s = self.shape(x);
                    let (c, hw) = (s[0], s[1] * s[2]);
                    if let Some(gx) = grads[x.0].as_mut() {
                        for (d, &s2) in gx.iter_mut().zip(&g) {
                            *d += s2;
                        }
                    }
                    if let Some(gb) = grads[b.0].as_mut() {
                        for ch in 0..c {
                            let mut acc = T::ZERO;
                            for &s2 in &g[ch * hw..(ch + 1) * hw] {
                                acc += s2;
                            }
                            gb[ch] += acc;
                        }
                    }
                }
                Op::Mul { a, b } => {
                    if let Some(ga) = grads[a.0].as_mut() {
                        let bd = self.nodes[b.0].value.data();
                        for ((d, &s), &bv) in ga.iter_mut().zip(&g).zip(bd) {
                            *d += s * bv;
                        }
                    }
                    if let Some(gb) = grads[b.0].as_mut() {
                        let ad = self.nodes[a.0].value.data();
                        for ((d, &s), &av) in gb.iter_mut().zip(&g).zip(ad) {
                            *d += s * av;
                        }
                    }
                }
                Op::MulScalar { x, c } => {
                    if let Some(gx) = grads[x.0].as_mut() {
                        let cf = T::from_f64(c);
                        for (d, &s) in gx.iter_mut().zip(&g) {
                            *d += s * cf;
                        }
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    if let Some(gx) = grads[x.0].as_mut() {
                        let sl = T::from_f64(slope);
                        let xd = self.nodes[x.0].value.data();
                        for ((d, &s), &xv) in gx.iter_mut().zip(&g).zip(xd) {
                            *d += if xv >= T::ZERO { s } else { s * sl };
                        }
                    }
                }
                Op::Sigmoid { x } => {
                    if let Some(gx) = grads[x.0].as_mut() {
                        let yd = self.nodes[i].value.data();
                        for ((d, &s), &y) in gx.iter_mut().zip(&g).zip(yd) {
                            *d += s * y * (T::ONE - y);
                        }
                    }
                }
                Op::Abs { x } => {
                    if let Some(gx) = grads[x.0].as_mut() {
                        let xd = self.nodes[x.0].value.data();
                        for ((d, &s), &xv) in gx.iter_mut().zip(&g).zip(xd) {
                            if xv > T::ZERO {
                                *d += s;
                            } else if xv < T::ZERO {
                                *d -= s;
                            }
                        }
                    }
                }
                Op::SoftmaxRows { x } => {
                    if let Some(gx) = grads[x.0].as_mut() {
                        let yd = self.nodes[i].value.data();
                        let s = self.nodes[x.0].value.shape();
                        let (r, c) = (s[0], s[1]);
                        for i2 in 0..r {
                            let y = &yd[i2 * c..(i2 + 1) * c];
                            let go = &g[i2 * c..(i2 + 1) * c];
                            let mut dot = T::ZERO;
                            for j in 0..c {
                                dot += go[j] * y[j];
                            }
                            for j in 0..c {
                                gx[i2 * c + j] += y[j] * (go[j] - dot);
                            }
                        }
                    }
                }
                Op::Conv2d { x, w, stride, pad } => {
                    let sx = self.nodes[x.0].value.shape().to_vec();
                    let sw = self.nodes[w.0].value.shape().to_vec();
                    let (cin, h, w_in) = (sx[0], sx[1], sx[2]);
                    let (cout, k) = (sw[0], sw[2]);
                    let (oh, ow) = conv_out_dims(h, w_in, k, stride, pad).expect("validated at forward");
                    let ckk = cin * k * k;
                    if grads[w.0].is_some() {
                        let cols = im2col(self.nodes[x.0].value.data(), cin, h, w_in, k, stride, pad, oh, ow);
                        let gw = grads[w.0].as_mut().expect("checked");
                        // dW += G · colsᵀ  (G: cout×(oh·ow), cols: ckk×(oh·ow))
                        T::matmul_nt_acc(&g, &cols, gw, cout, oh * ow, ckk);
                    }
                    if grads[x.0].is_some() {
                        // dcols = Wᵀ · G, then scatter back with col2im.
                        let mut dcols = vec![T::ZERO; ckk * oh * ow];
                        T::matmul_tn_acc(self.nodes[w.0].value.data(), &g, &mut dcols, ckk, cout, oh * ow);
                        let gx = grads[x.0].as_mut().expect("checked");
                        col2im_acc(&dcols, gx, cin, h, w_in, k, stride, pad, oh, ow);
                    }
                }
                Op::Pool { x, mode, window, argmax } => {
                    if let Some(gx) = grads[x.0].as_mut() {
                        let s = self.nodes[x.0].value.shape();
                        let (c, h, w) = (s[0], s[1], s[2]);
                        match (mode, window) {
                            (PoolMode::Max, _) => {
                                match window {
                                    PoolWindow::Global => {
                                        for ch in 0..c {
                                            gx[ch * h * w + argmax[ch]] += g[ch];
                                        }
                                    }
                                    PoolWindow::Window { .. } => {
                                        for (o, &src) in argmax.iter().enumerate() {
                                            gx[src] += g[o];
                                        }
                                    }
                                }
                            }
                            (PoolMode::Avg, PoolWindow::Global) => {
                                let inv = T::ONE / T::from_usize(h * w);
                                for ch in 0..c {
                                    let gv = g[ch] * inv;
                                    for d in &mut gx[ch * h * w..(ch + 1) * h * w] {
                                        *d += gv;
                                    }
                                }
                            }
                            (PoolMode::Avg, PoolWindow::Window { k, stride }) => {
                                let oh = (h - k) / stride + 1;
                                let ow = (w - k) / stride + 1;
                                let inv = T::ONE / T::from_usize(k * k);
                                for ch in 0..c {
                                    for oi in 0..oh {
                                        for oj in 0..ow {
                                            let gv = g[ch * oh * ow + oi * ow + oj] * inv;
                                            for di in 0..k {
                                                for dj in 0..k {
                                                    let ii = oi * stride + di;
                                                    let jj = oj * stride + dj;
                                                    gx[ch * h * w + ii * w + jj] += gv;
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Op::UpsampleNearest2 { x } => {
                    if let Some(gx) = grads[x.0].as_mut() {
                        let s = self.nodes[x.0].value.shape();
                        let (c, h, w) = (s[0], s[1], s[2]);
                        let (oh, ow) = (h * 2, w * 2);
                        for ch in 0..c {
                            for i2 in 0..h {
                                for j in 0..w {
                                    let base = ch * oh * ow + 2 * i2 * ow + 2 * j;
                                    gx[ch * h * w + i2 * w + j] +=
                                        g[base] + g[base + 1] + g[base + ow] + g[base + ow + 1];
                                }
                            }
                        }
                    }
                }
                Op::ConcatChannels { parts } => {
                    let mut offset = 0;
                    for p in parts {
                        let numel = self.nodes[p.0].value.numel();
                        if let Some(gp) = grads[p.0].as_mut() {
                            for (d, &s) in gp.iter_mut().zip(&g[offset..offset + numel]) {
                                *d += s;
                            }
                        }
                        offset += numel;
                    }
                }
                Op::SliceChannels { x, from, to } => {
                    if let Some(gx) = grads[x.0].as_mut() {
                        let s = self.nodes[x.0].value.shape();
                        let hw = s[1] * s[2];
                        for (d, &s2) in gx[from * hw..to * hw].iter_mut().zip(&g) {
                            *d += s2;
                        }
                    }
                }
                Op::TokensFromMap { x } => {
                    if let Some(gx) = grads[x.0].as_mut() {
                        let s = self.nodes[x.0].value.shape();
                        let (c, hw) = (s[0], s[1] * s[2]);
                        for p in 0..hw {
                            for ch in 0..c {
                                gx[ch * hw + p] += g[p * c + ch];
                            }
                        }
                    }
                }
                Op::StackRows { parts } => {
                    let c = self.nodes[i].value.shape()[1];
                    for (r, p) in parts.into_iter().enumerate() {
                        if let Some(gp) = grads[p.0].as_mut() {
                            for (d, &s) in gp.iter_mut().zip(&g[r * c..(r + 1) * c]) {
                                *d += s;
                            }
                        }
                    }
                }
                Op::RepeatRows { v } => {
                    if let Some(gv) = grads[v.0].as_mut() {
                        let c = gv.len();
                        let rows = g.len() / c;
                        for r in 0..rows {
                            for j in 0..c {
                                gv[j] += g[r * c + j];
                            }
                        }
                    }
                }
                Op::ConcatCols { a, b } => {
                    let (ra, ca) = (self.shape(a)[0], self.shape(a)[1]);
                    let cb = self.shape(b)[1];
                    if let Some(ga) = grads[a.0].as_mut() {
                        for r in 0..ra {
                            for j in 0..ca {
                                ga[r * ca + j] += g[r * (ca + cb) + j];
                            }
                        }
                    }
                    if let Some(gb) = grads[b.0].as_mut() {
                        for r in 0..ra {
                            for j in 0..cb {
                                gb[r * cb + j] += g[r * (ca + cb) + ca + j];
                            }
                        }
                    }
                }
                Op::MaxOverRows { x, argmax } => {
                    if let Some(gx) = grads[x.0].as_mut() {
                        let c = self.nodes[x.0].value.shape()[1];
                        for (j, &r) in argmax.iter().enumerate() {
                            gx[r * c + j] += g[j];
                        }
                    }
                }
                Op::ScaleChannels { x, g: gate } => {
                    let s = self.nodes[x.0].value.shape();
                    let (c, hw) = (s[0], s[1] * s[2]);
                    if let Some(gx) = grads[x.0].as_mut() {
                        let gd = self.nodes[gate.0].value.data();
                        for ch in 0..c {
                            let gv = gd[ch];
                            for (d, &s2) in gx[ch * hw..(ch + 1) * hw].iter_mut().zip(&g[ch * hw..(ch + 1) * hw]) {
                                *d += s2 * gv;
                            }
                        }
                    }
                    if let Some(gg) = grads[gate.0].as_mut() {
                        let xd = self.nodes[x.0].value.data();
                        for ch in 0..c {
                            let mut acc = T::ZERO;
                            for (idx, &s2) in g[ch * hw..(ch + 1) * hw].iter().enumerate() {
                                acc += s2 * xd[ch * hw + idx];
                            }
                            gg[ch] += acc;
                        }
                    }
                }
                Op::Sum { x } => {
                    if let Some(gx) = grads[x.0].as_mut() {
                        let gv = g[0];
                        for d in gx.iter_mut() {
                            *d += gv;
                        }
                    }
                }
                Op::Variance { x } => {
                    if let Some(gx) = grads[x.0].as_mut() {
                        let xd = self.nodes[x.0].value.data();
                        let n2 = T::from_usize(xd.len());
                        let mut mean = T::ZERO;
                        for &v in xd {
                            mean += v;
                        }
                        mean = mean / n2;
                        let scale = g[0] * (T::ONE + T::ONE) / n2;
                        for (d, &v) in gx.iter_mut().zip(xd) {
                            *d += scale * (v - mean);
                        }
                    }
                }
                Op::VarianceRows { x } => {
                    if let Some(gx) = grads[x.0].as_mut() {
                        let s = self.nodes[x.0].value.shape();
                        let (r, c) = (s[0], s[1]);
                        let xd = self.nodes[x.0].value.data();
                        let nc = T::from_usize(c);
                        let two = T::ONE + T::ONE;
                        for i2 in 0..r {
                            let row = &xd[i2 * c..(i2 + 1) * c];
                            let mut mean = T::ZERO;
                            for &v in row {
                                mean += v;
                            }
                            mean = mean / nc;
                            let scale = g[i2] * two / nc;
                            for j in 0..c {
                                gx[i2 * c + j] += scale * (row[j] - mean);
                            }
                        }
                    }
                }
                Op::Reshape { x } => {
                    if let Some(gx) = grads[x.0].as_mut() {
                        for (d, &s) in gx.iter_mut().zip(&g) {
                            *d += s;
                        }
                    }
                }
                Op::RankLoss { scores, pos, neg } => {
                    if let Some(gs) = grads[scores.0].as_mut() {
                        let sd = self.nodes[scores.0].value.data();
                        let alpha = T::ONE / T::from_usize(pos.len() * neg.len());
                        let gv = g[0] * alpha;
                        for &j in &neg {
                            for &k in &pos {
                                let tau = sd[j] - sd[k];
                                // logistic sigma(tau), overflow-safe on both sides
                                let sig = if tau >= T::ZERO {
                                    T::ONE / (T::ONE + (-tau).exp())
                                } else {
                                    let e = tau.exp();
                                    e / (T::ONE + e)
                                };
                                gs[j] += gv * sig;
                                gs[k] -= gv * sig;
                            }
                        }
                    }
                }
            }
            grads[i] = Some(g);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if node.requires_grad {
                node.value.grad = g;
            }
        }
        Ok(())
    }
}

fn i_id(i: usize) -> TensorId {
    TensorId(i)
}

fn conv_out_dims(h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Result<(usize, usize)> {
    let eff_h = h + 2 * pad;
    let eff_w = w + 2 * pad;
    if eff_h < k || eff_w < k || (eff_h - k) % stride != 0 || (eff_w - k) % stride != 0 {
        return Err(Error::Config(format!(
            "conv2d output size is not integral: input {h}x{w}, kernel {k}, stride {stride}, pad {pad}"
        )));
    }
    Ok(((eff_h - k) / stride + 1, (eff_w - k) / stride + 1))
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let mut cols = vec![T::ZERO; cin * k * k * oh * ow];
    let ohw = oh * ow;
    for ci in 0..cin {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k * k + ki * k + kj) * ohw;
                for oi in 0..oh {
                    let ii = (oi * stride + ki) as isize - pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    let src_row = ii as usize * w;
                    let dst_row = row + oi * ow;
                    for oj in 0..ow {
                        let jj = (oj * stride + kj) as isize - pad as isize;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        cols[dst_row + oj] = plane[src_row + jj as usize];
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im_acc<T: Scalar>(
    cols: &[T],
    gx: &mut [T],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) {
    let ohw = oh * ow;
    for ci in 0..cin {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k * k + ki * k + kj) * ohw;
                for oi in 0..oh {
                    let ii = (oi * stride + ki) as isize - pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    let dst_row = ci * h * w + ii as usize * w;
                    let src_row = row + oi * ow;
                    for oj in 0..ow {
                        let jj = (oj * stride + kj) as isize - pad as isize;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        gx[dst_row + jj as usize] += cols[src_row + oj];
                    }
                }
            }
        }
    }
}
