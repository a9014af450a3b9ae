use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }
    fn hw(&self) -> usize {
        self.oh * self.ow
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    BiasAdd(Var, Var),
    Matmul(Var, Var),
    Transpose(Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, cols: Vec<f64> },
    AvgPool2d { x: Var, k: usize },
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    MeanLast(Var),
    MaxLast(Var, Vec<usize>),
    NormalizeL2 { x: Var, len: usize, inner: usize, norms: Vec<f64> },
    Reshape(Var),
    Index(Var, usize),
    Crop { x: Var, r0: usize, c0: usize },
    Stack(Vec<Var>),
    Correlate(Var, Var),
    CrossEntropyRows { x: Var, targets: Vec<usize>, probs: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// index is a valid topological order for the backward sweep.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::shape(op, format!("operands {a:?} and {b:?}"))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let hw = g.hw();
    for c in 0..g.cin {
        for dy in 0..g.kh {
            for dx in 0..g.kw {
                let row = (c * g.kh + dy) * g.kw + dx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + dy) as isize - g.pad as isize;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + dx) as isize - g.pad as isize;
                        dst[oy * g.ow + ox] = if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                            x[(c * g.h + iy as usize) * g.w + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &ConvGeom, dx_out: &mut [f64]) {
    let hw = g.hw();
    for c in 0..g.cin {
        for dy in 0..g.kh {
            for dx in 0..g.kw {
                let row = (c * g.kh + dy) * g.kw + dx;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + dy) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + dx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dx_out[(c * g.h + iy as usize) * g.w + ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    /// Gradient of the last `backward` root w.r.t. `v`, if one reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let src = &self.nodes[x.0].value;
        let value = Tensor { shape: src.shape.clone(), data: src.data.iter().map(|&v| f(v)).collect() };
        let ng = self.ng(x);
        self.push(value, op, ng)
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape != tb.shape {
            return Err(shape_err(name, &ta.shape, &tb.shape));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor { shape: ta.shape.clone(), data };
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, |v| v * s, Op::Scale(x, s))
    }

    /// Elementwise product with a constant mask of the same shape.
    pub fn mul_const(&mut self, x: Var, mask: &[f64]) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        if t.data.len() != mask.len() {
            return Err(Error::shape("mul_const", format!("operand {:?} vs mask of {} values", t.shape, mask.len())));
        }
        let value = Tensor { shape: t.shape.clone(), data: t.data.iter().zip(mask).map(|(a, b)| a * b).collect() };
        let ng = self.ng(x);
        Ok(self.push(value, Op::MulConst(x, mask.to_vec()), ng))
    }

    /// `x[..., j] + b[j]`.
    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (&self.nodes[x.0].value, &self.nodes[b.0].value);
        let n = *tx.shape.last().unwrap_or(&0);
        if tb.shape != [n] {
            return Err(shape_err("bias_add", &tx.shape, &tb.shape));
        }
        let data = tx.data.iter().enumerate().map(|(i, v)| v + tb.data[i % n]).collect();
        let value = Tensor { shape: tx.shape.clone(), data };
        let ng = self.ng(x) || self.ng(b);
        Ok(self.push(value, Op::BiasAdd(x, b), ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape.len() != 2 || tb.shape.len() != 2 || ta.shape[1] != tb.shape[0] {
            return Err(shape_err("matmul", &ta.shape, &tb.shape));
        }
        let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &ta.data, false, &tb.data, false, 0.0, &mut out);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::Matmul(a, b), ng))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        if t.shape.len() != 2 {
            return Err(Error::shape("transpose", format!("operand {:?} is not 2-D", t.shape)));
        }
        let (r, c) = (t.shape[0], t.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = t.data[i * c + j];
            }
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor { shape: vec![c, r], data: out }, Op::Transpose(x), ng))
    }

    /// Batched 2-D convolution (cross-correlation): `x` is `[B,Cin,H,W]`,
    /// `w` is `[Cout,Cin,kh,kw]`, optional bias `[Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (tx, tw) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
        if tx.shape.len() != 4 || tw.shape.len() != 4 || tx.shape[1] != tw.shape[1] || stride == 0 {
            return Err(shape_err("conv2d", &tx.shape, &tw.shape));
        }
        let (batch, cin, h, wd) = (tx.shape[0], tx.shape[1], tx.shape[2], tx.shape[3]);
        let (cout, kh, kw) = (tw.shape[0], tw.shape[2], tw.shape[3]);
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(shape_err("conv2d", &tx.shape, &tw.shape));
        }
        if let Some(b) = b {
            let tb = &self.nodes[b.0].value;
            if tb.shape != [cout] {
                return Err(shape_err("conv2d bias", &tw.shape, &tb.shape));
            }
        }
        let geom = ConvGeom {
            batch,
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (wd + 2 * pad - kw) / stride + 1,
        };
        let (k, hw) = (geom.k(), geom.hw());
        let mut cols = vec![0.0; batch * k * hw];
        let mut out = vec![0.0; batch * cout * hw];
        let in_len = cin * h * wd;
        for bi in 0..batch {
            let cb = &mut cols[bi * k * hw..(bi + 1) * k * hw];
            im2col(&tx.data[bi * in_len..(bi + 1) * in_len], &geom, cb);
            gemm(cout, k, hw, &tw.data, false, cb, false, 0.0, &mut out[bi * cout * hw..(bi + 1) * cout * hw]);
        }
        if let Some(b) = b {
            let bias = &self.nodes[b.0].value.data;
            for (i, o) in out.iter_mut().enumerate() {
                *o += bias[(i / hw) % cout];
            }
        }
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        let value = Tensor { shape: vec![batch, cout, geom.oh, geom.ow], data: out };
        Ok(self.push(value, Op::Conv2d { x, w, b, geom, cols }, ng))
    }

    /// Non-overlapping average pooling over the last two axes with window `k`.
    pub fn avg_pool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        let nd = t.shape.len();
        if nd < 2 || k == 0 || t.shape[nd - 2] < k || t.shape[nd - 1] < k {
            return Err(Error::shape("avg_pool2d", format!("operand {:?} with window {k}", t.shape)));
        }
        let (h, w) = (t.shape[nd - 2], t.shape[nd - 1]);
        let (oh, ow) = (h / k, w / k);
        let outer: usize = t.shape[..nd - 2].iter().product();
        let norm = 1.0 / (k * k) as f64;
        let mut out = vec![0.0; outer * oh * ow];
        for o in 0..outer {
            for y in 0..oh * k {
                for xx in 0..ow * k {
                    out[(o * oh + y / k) * ow + xx / k] += t.data[(o * h + y) * w + xx] * norm;
                }
            }
        }
        let mut shape = t.shape.clone();
        shape[nd - 2] = oh;
        shape[nd - 1] = ow;
        let ng = self.ng(x);
        Ok(self.push(Tensor { shape, data: out }, Op::AvgPool2d { x, k }, ng))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { slope * v }, Op::LeakyRelu(x, slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0) + (-v.abs()).exp().ln_1p(), Op::Softplus(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.data.iter().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = &self.nodes[x.0].value;
        let s = t.data.iter().sum::<f64>() / t.data.len().max(1) as f64;
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Mean(x), ng)
    }

    fn last_axis(&self, op: &'static str, x: Var) -> Result<(Vec<usize>, usize)> {
        let t = &self.nodes[x.0].value;
        match t.shape.split_last() {
            Some((&n, lead)) if n > 0 => Ok((lead.to_vec(), n)),
            _ => Err(Error::shape(op, format!("operand {:?} has no last axis", t.shape))),
        }
    }

    /// Mean over the last axis.
    pub fn mean_last(&mut self, x: Var) -> Result<Var> {
        let (lead, n) = self.last_axis("mean_last", x)?;
        let t = &self.nodes[x.0].value;
        let data = t.data.chunks(n).map(|c| c.iter().sum::<f64>() / n as f64).collect();
        let ng = self.ng(x);
        Ok(self.push(Tensor { shape: lead, data }, Op::MeanLast(x), ng))
    }

    /// Maximum over the last axis; the gradient flows to the first maximiser.
    pub fn max_last(&mut self, x: Var) -> Result<Var> {
        let (lead, n) = self.last_axis("max_last", x)?;
        let t = &self.nodes[x.0].value;
        let mut arg = Vec::with_capacity(t.data.len() / n);
        let mut data = Vec::with_capacity(t.data.len() / n);
        for c in t.data.chunks(n) {
            let i = crate::radio::argmax(c);
            arg.push(i);
            data.push(c[i]);
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor { shape: lead, data }, Op::MaxLast(x, arg), ng))
    }

    /// Scales each fibre along `axis` to unit L2 norm (`x / sqrt(|x|² + 1e-12)`).
    pub fn normalize_l2(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        if axis >= t.shape.len() {
            return Err(Error::shape("normalize_l2", format!("axis {axis} of {:?}", t.shape)));
        }
        let len = t.shape[axis];
        let inner: usize = t.shape[axis + 1..].iter().product();
        let outer: usize = t.shape[..axis].iter().product();
        let mut norms = vec![0.0; outer * inner];
        let mut data = t.data.clone();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let s: f64 = (0..len).map(|j| t.data[base + j * inner].powi(2)).sum();
                let n = (s + 1e-12).sqrt();
                norms[o * inner + i] = n;
                for j in 0..len {
                    data[base + j * inner] /= n;
                }
            }
        }
        let value = Tensor { shape: t.shape.clone(), data };
        let ng = self.ng(x);
        Ok(self.push(value, Op::NormalizeL2 { x, len, inner, norms }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.nodes[x.0].value.clone().reshaped(shape)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::Reshape(x), ng))
    }

    /// Slice `i` along the leading axis.
    pub fn index(&mut self, x: Var, i: usize) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        if t.shape.is_empty() || i >= t.shape[0] {
            return Err(Error::shape("index", format!("index {i} into {:?}", t.shape)));
        }
        let value = t.index(i);
        let ng = self.ng(x);
        Ok(self.push(value, Op::Index(x, i), ng))
    }

    /// Spatial window `rows × cols` of a `[C,h,w]` array.
    pub fn crop(&mut self, x: Var, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        if t.shape.len() != 3 || rows.end > t.shape[1] || cols.end > t.shape[2] || rows.is_empty() || cols.is_empty() {
            return Err(Error::shape("crop", format!("window {rows:?}x{cols:?} of {:?}", t.shape)));
        }
        let (c, h, w) = (t.shape[0], t.shape[1], t.shape[2]);
        let (th, tw) = (rows.len(), cols.len());
        let mut data = Vec::with_capacity(c * th * tw);
        for ch in 0..c {
            for y in rows.clone() {
                let base = (ch * h + y) * w;
                data.extend_from_slice(&t.data[base + cols.start..base + cols.end]);
            }
        }
        let ng = self.ng(x);
        let value = Tensor { shape: vec![c, th, tw], data };
        Ok(self.push(value, Op::Crop { x, r0: rows.start, c0: cols.start }, ng))
    }

    /// Stacks equally shaped arrays along a new leading axis.
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or(Error::Empty("stack"))?;
        let shape0 = self.nodes[first.0].value.shape.clone();
        let mut data = Vec::new();
        for v in xs {
            let t = &self.nodes[v.0].value;
            if t.shape != shape0 {
                return Err(shape_err("stack", &shape0, &t.shape));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![xs.len()];
        shape.extend_from_slice(&shape0);
        let ng = xs.iter().any(|&v| self.ng(v));
        Ok(self.push(Tensor { shape, data }, Op::Stack(xs.to_vec()), ng))
    }

    /// Same-size 2-D cross-correlation of `x: [C,h,w]` with `t: [C,th,tw]`,
    /// summed over channels, zero padded, template anchored at `((th-1)/2, (tw-1)/2)`.
    pub fn correlate2d_same(&mut self, x: Var, t: Var) -> Result<Var> {
        let (tx, tt) = (&self.nodes[x.0].value, &self.nodes[t.0].value);
        if tx.shape.len() != 3 || tt.shape.len() != 3 || tx.shape[0] != tt.shape[0] {
            return Err(shape_err("correlate2d_same", &tx.shape, &tt.shape));
        }
        if tt.shape[1] > tx.shape[1] || tt.shape[2] > tx.shape[2] || tt.data.is_empty() {
            return Err(shape_err("correlate2d_same", &tx.shape, &tt.shape));
        }
        let out = correlate_same(&tx.data, &tx.shape, &tt.data, &tt.shape);
        let ng = self.ng(x) || self.ng(t);
        let value = Tensor { shape: vec![tx.shape[1], tx.shape[2]], data: out };
        Ok(self.push(value, Op::Correlate(x, t), ng))
    }

    /// Mean over rows of the softmax cross-entropy of `x: [B,K]` against class `targets[i]`.
    pub fn cross_entropy_rows(&mut self, x: Var, targets: &[usize]) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        if t.shape.len() != 2 || t.shape[0] != targets.len() || targets.iter().any(|&c| c >= t.shape[1]) {
            return Err(Error::shape(
                "cross_entropy_rows",
                format!("logits {:?} with {} targets", t.shape, targets.len()),
            ));
        }
        let k = t.shape[1];
        let mut probs = vec![0.0; t.data.len()];
        let mut loss = 0.0;
        for (i, row) in t.data.chunks(k).enumerate() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            for (j, v) in row.iter().enumerate() {
                probs[i * k + j] = (v - m).exp() / z;
            }
            loss += m + z.ln() - row[targets[i]];
        }
        loss /= targets.len() as f64;
        let ng = self.ng(x);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropyRows { x, targets: targets.to_vec(), probs }, ng))
    }

    fn acc(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let n = self.nodes[v.0].value.data.len();
        let g = self.grads[v.0].get_or_insert_with(|| vec![0.0; n]);
        f(g);
    }

    /// Back-propagates from the scalar `root`, replacing any previous gradients.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.0].value.data.len() != 1 {
            return Err(Error::shape("backward", format!("root {:?} is not a scalar", self.nodes[root.0].value.shape)));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(gy) = self.grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                self.grads[i] = Some(gy);
                continue;
            }
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.backprop(i, &op, &gy);
            self.nodes[i].op = op;
            self.grads[i] = Some(gy);
        }
        Ok(())
    }

    fn backprop(&mut self, i: usize, op: &Op, gy: &[f64]) {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(*a, |g| g.iter_mut().zip(gy).for_each(|(g, d)| *g += d));
                self.acc(*b, |g| g.iter_mut().zip(gy).for_each(|(g, d)| *g += d));
            }
            Op::Sub(a, b) => {
                self.acc(*a, |g| g.iter_mut().zip(gy).for_each(|(g, d)| *g += d));
                self.acc(*b, |g| g.iter_mut().zip(gy).for_each(|(g, d)| *g -= d));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.nodes[a.0].value.data.clone(), self.nodes[b.0].value.data.clone());
                self.acc(*a, |g| g.iter_mut().zip(gy).zip(&tb).for_each(|((g, d), y)| *g += d * y));
                self.acc(*b, |g| g.iter_mut().zip(gy).zip(&ta).for_each(|((g, d), x)| *g += d * x));
            }
            Op::Scale(x, s) => self.acc(*x, |g| g.iter_mut().zip(gy).for_each(|(g, d)| *g += d * s)),
            Op::MulConst(x, m) => self.acc(*x, |g| g.iter_mut().zip(gy).zip(m).for_each(|((g, d), m)| *g += d * m)),
            Op::BiasAdd(x, b) => {
                self.acc(*x, |g| g.iter_mut().zip(gy).for_each(|(g, d)| *g += d));
                self.acc(*b, |g| {
                    let n = g.len();
                    gy.iter().enumerate().for_each(|(j, d)| g[j % n] += d);
                });
            }
            Op::Matmul(a, b) => {
                let (m, k) = (self.nodes[a.0].value.shape[0], self.nodes[a.0].value.shape[1]);
                let n = self.nodes[b.0].value.shape[1];
                let ad = if self.ng(*b) { self.nodes[a.0].value.data.clone() } else { Vec::new() };
                let bd = if self.ng(*a) { self.nodes[b.0].value.data.clone() } else { Vec::new() };
                self.acc(*a, |g| gemm(m, n, k, gy, false, &bd, true, 1.0, g));
                self.acc(*b, |g| gemm(k, m, n, &ad, true, gy, false, 1.0, g));
            }
            Op::Transpose(x) => {
                let (r, c) = (self.nodes[x.0].value.shape[0], self.nodes[x.0].value.shape[1]);
                self.acc(*x, |g| {
                    for ii in 0..r {
                        for j in 0..c {
                            g[ii * c + j] += gy[j * r + ii];
                        }
                    }
                });
            }
            Op::Conv2d { x, w, b, geom, cols } => {
                let g = *geom;
                let (k, hw) = (g.k(), g.hw());
                let wdata = self.nodes[w.0].value.data.clone();
                self.acc(*w, |gw| {
                    for bi in 0..g.batch {
                        let dy = &gy[bi * g.cout * hw..(bi + 1) * g.cout * hw];
                        gemm(g.cout, hw, k, dy, false, &cols[bi * k * hw..(bi + 1) * k * hw], true, 1.0, gw);
                    }
                });
                if let Some(b) = b {
                    self.acc(*b, |gb| {
                        for (j, d) in gy.iter().enumerate() {
                            gb[(j / hw) % g.cout] += d;
                        }
                    });
                }
                self.acc(*x, |gx| {
                    let mut dcols = vec![0.0; k * hw];
                    let in_len = g.cin * g.h * g.w;
                    for bi in 0..g.batch {
                        let dy = &gy[bi * g.cout * hw..(bi + 1) * g.cout * hw];
                        gemm(k, g.cout, hw, &wdata, true, dy, false, 0.0, &mut dcols);
                        col2im(&dcols, &g, &mut gx[bi * in_len..(bi + 1) * in_len]);
                    }
                });
            }
            Op::AvgPool2d { x, k } => {
                let shape = self.nodes[x.0].value.shape.clone();
                let nd = shape.len();
                let (h, w) = (shape[nd - 2], shape[nd - 1]);
                let (oh, ow) = (h / k, w / k);
                let outer: usize = shape[..nd - 2].iter().product();
                let norm = 1.0 / (k * k) as f64;
                self.acc(*x, |g| {
                    for o in 0..outer {
                        for y in 0..oh * k {
                            for xx in 0..ow * k {
                                g[(o * h + y) * w + xx] += gy[(o * oh + y / k) * ow + xx / k] * norm;
                            }
                        }
                    }
                });
            }
            Op::Relu(x) => {
                let xs = self.nodes[x.0].value.data.clone();
                self.acc(*x, |g| g.iter_mut().zip(gy).zip(&xs).for_each(|((g, d), v)| if *v > 0.0 { *g += d }));
            }
            Op::LeakyRelu(x, s) => {
                let xs = self.nodes[x.0].value.data.clone();
                self.acc(*x, |g| {
                    g.iter_mut().zip(gy).zip(&xs).for_each(|((g, d), v)| *g += if *v > 0.0 { *d } else { s * d })
                });
            }
            Op::Sigmoid(x) | Op::Tanh(x) | Op::Exp(x) => {
                let ys = self.nodes[i].value.data.clone();
                let kind = match op {
                    Op::Sigmoid(_) => 0,
                    Op::Tanh(_) => 1,
                    _ => 2,
                };
                self.acc(*x, |g| {
                    for ((g, d), y) in g.iter_mut().zip(gy).zip(&ys) {
                        *g += d * match kind {
                            0 => y * (1.0 - y),
                            1 => 1.0 - y * y,
                            _ => *y,
                        };
                    }
                });
            }
            Op::Softplus(x) => {
                let xs = self.nodes[x.0].value.data.clone();
                self.acc(*x, |g| g.iter_mut().zip(gy).zip(&xs).for_each(|((g, d), v)| *g += d * sigmoid(*v)));
            }
            Op::Log(x) => {
                let xs = self.nodes[x.0].value.data.clone();
                self.acc(*x, |g| g.iter_mut().zip(gy).zip(&xs).for_each(|((g, d), v)| *g += d / v));
            }
            Op::Sum(x) => self.acc(*x, |g| g.iter_mut().for_each(|g| *g += gy[0])),
            Op::Mean(x) => self.acc(*x, |g| {
                let s = gy[0] / g.len() as f64;
                g.iter_mut().for_each(|g| *g += s)
            }),
            Op::MeanLast(x) => {
                let n = *self.nodes[x.0].value.shape.last().expect("checked in forward");
                self.acc(*x, |g| g.iter_mut().enumerate().for_each(|(j, g)| *g += gy[j / n] / n as f64));
            }
            Op::MaxLast(x, arg) => {
                let n = *self.nodes[x.0].value.shape.last().expect("checked in forward");
                self.acc(*x, |g| arg.iter().enumerate().for_each(|(r, &a)| g[r * n + a] += gy[r]));
            }
            Op::NormalizeL2 { x, len, inner, norms } => {
                let ys = self.nodes[i].value.data.clone();
                let (len, inner) = (*len, *inner);
                self.acc(*x, |g| {
                    for (gi, n) in norms.iter().enumerate() {
                        let base = (gi / inner) * len * inner + gi % inner;
                        let dot: f64 = (0..len).map(|j| ys[base + j * inner] * gy[base + j * inner]).sum();
                        for j in 0..len {
                            let p = base + j * inner;
                            g[p] += (gy[p] - ys[p] * dot) / n;
                        }
                    }
                });
            }
            Op::Reshape(x) => self.acc(*x, |g| g.iter_mut().zip(gy).for_each(|(g, d)| *g += d)),
            Op::Index(x, idx) => {
                let n = gy.len();
                self.acc(*x, |g| g[idx * n..(idx + 1) * n].iter_mut().zip(gy).for_each(|(g, d)| *g += d));
            }
            Op::Crop { x, r0, c0 } => {
                let (sh, sw) = (self.nodes[x.0].value.shape[1], self.nodes[x.0].value.shape[2]);
                let os = self.nodes[i].value.shape.clone();
                let (c, th, tw) = (os[0], os[1], os[2]);
                self.acc(*x, |g| {
                    for ch in 0..c {
                        for y in 0..th {
                            for xx in 0..tw {
                                g[(ch * sh + r0 + y) * sw + c0 + xx] += gy[(ch * th + y) * tw + xx];
                            }
                        }
                    }
                });
            }
            Op::Stack(xs) => {
                let n = gy.len() / xs.len();
                for (j, v) in xs.iter().enumerate() {
                    self.acc(*v, |g| g.iter_mut().zip(&gy[j * n..(j + 1) * n]).for_each(|(g, d)| *g += d));
                }
            }
            Op::Correlate(x, t) => {
                let (tx, tt) = (self.nodes[x.0].value.clone(), self.nodes[t.0].value.clone());
                let (c, h, w) = (tx.shape[0], tx.shape[1], tx.shape[2]);
                let (th, tw) = (tt.shape[1], tt.shape[2]);
                let (py, px) = ((th - 1) / 2, (tw - 1) / 2);
                let visit = |f: &mut dyn FnMut(usize, usize, f64)| {
                    for ch in 0..c {
                        for y in 0..h {
                            for xx in 0..w {
                                let d = gy[y * w + xx];
                                if d == 0.0 {
                                    continue;
                                }
                                for dy in 0..th {
                                    let iy = (y + dy) as isize - py as isize;
                                    if iy < 0 || iy as usize >= h {
                                        continue;
                                    }
                                    for dx in 0..tw {
                                        let ix = (xx + dx) as isize - px as isize;
                                        if ix >= 0 && (ix as usize) < w {
                                            f((ch * h + iy as usize) * w + ix as usize, (ch * th + dy) * tw + dx, d);
                                        }
                                    }
                                }
                            }
                        }
                    }
                };
                if self.nodes[x.0].needs_grad {
                    let mut gx = vec![0.0; tx.data.len()];
                    visit(&mut |xi, ti, d| gx[xi] += d * tt.data[ti]);
                    self.acc(*x, |g| g.iter_mut().zip(&gx).for_each(|(g, d)| *g += d));
                }
                if self.nodes[t.0].needs_grad {
                    let mut gt = vec![0.0; tt.data.len()];
                    visit(&mut |xi, ti, d| gt[ti] += d * tx.data[xi]);
                    self.acc(*t, |g| g.iter_mut().zip(&gt).for_each(|(g, d)| *g += d));
                }
            }
            Op::CrossEntropyRows { x, targets, probs } => {
                let k = probs.len() / targets.len();
                let s = gy[0] / targets.len() as f64;
                self.acc(*x, |g| {
                    for (j, (g, p)) in g.iter_mut().zip(probs).enumerate() {
                        let onehot = if targets[j / k] == j % k { 1.0 } else { 0.0 };
                        *g += s * (p - onehot);
                    }
                });
            }
        }
    }
}

/// Plain-array same-size correlation shared by the graph op and inference paths.
pub fn correlate_same(x: &[f64], xs: &[usize], t: &[f64], ts: &[usize]) -> Vec<f64> {
    let (c, h, w) = (xs[0], xs[1], xs[2]);
    let (th, tw) = (ts[1], ts[2]);
    let (py, px) = ((th - 1) / 2, (tw - 1) / 2);
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for xx in 0..w {
            let mut s = 0.0;
            for ch in 0..c {
                for dy in 0..th {
                    let iy = (y + dy) as isize - py as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for dx in 0..tw {
                        let ix = (xx + dx) as isize - px as isize;
                        if ix >= 0 && (ix as usize) < w {
                            s += x[(ch * h + iy as usize) * w + ix as usize] * t[(ch * th + dy) * tw + dx];
                        }
                    }
                }
            }
            out[y * w + xx] = s;
        }
    }
    out
}
