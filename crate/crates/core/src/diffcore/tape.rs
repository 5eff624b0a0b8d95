//! Reverse-mode differentiation tape.
//!
//! Every op appends a node holding its forward value. [`Tape::backward`]
//! walks the nodes in reverse from a scalar loss and returns a fresh
//! [`Gradients`], so one recorded forward pass can be differentiated
//! against several losses.

use std::collections::BTreeMap;

use super::kernels::{self, ConvGeom};
use super::params::{ParamGrads, ParamStore};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Default lower clamp for `log` inputs.
pub const EPS_LOG: f64 = 1e-7;

#[derive(Clone, Debug)]
enum Op<T> {
    Constant,
    Param,
    Dense { x: Var, w: Var, b: Var },
    Conv2d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    Conv2dTranspose { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    LeakyRelu { x: Var, slope: T },
    Sigmoid { x: Var },
    Tanh { x: Var },
    Exp { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: T },
    AddScalar { x: Var },
    Sum { x: Var },
    Mean { x: Var },
    Square { x: Var },
    Log { x: Var, eps: T },
    Clamp { x: Var, lo: T, hi: T },
    Reshape { x: Var },
    Concat { parts: Vec<Var>, axis: usize },
    GaussianSample { mu: Var, logvar: Var, noise: Tensor<T> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param => "param",
            Op::Dense { .. } => "dense",
            Op::Conv2d { .. } => "conv2d",
            Op::Conv2dTranspose { .. } => "conv2d_transpose",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Tanh { .. } => "tanh",
            Op::Exp { .. } => "exp",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::AddScalar { .. } => "add_scalar",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::Square { .. } => "square",
            Op::Log { .. } => "log",
            Op::Clamp { .. } => "clamp",
            Op::Reshape { .. } => "reshape",
            Op::Concat { .. } => "concat",
            Op::GaussianSample { .. } => "gaussian_sample",
        }
    }
}

/// One recorded operation and its forward value.
#[derive(Clone, Debug)]
pub struct TapeNode<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

impl<T> TapeNode<T> {
    pub fn op_kind(&self) -> &'static str {
        self.op.name()
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }
}

#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<TapeNode<T>>,
    params: BTreeMap<String, Var>,
    eps_log: T,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), params: BTreeMap::new(), eps_log: T::of(EPS_LOG) }
    }

    pub fn with_eps_log(eps_log: f64) -> Self {
        Tape { eps_log: T::of(eps_log), ..Self::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, v: Var) -> &TapeNode<T> {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Smallest |input| seen by any `leaky_relu` node, or `None` if the tape
    /// has none. Finite-difference probes closer than this to the kink stay
    /// on one linear piece.
    pub fn min_kink_distance(&self) -> Option<T> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::LeakyRelu { x, .. } => Some(x),
                _ => None,
            })
            .flat_map(|x| self.nodes[x.0].value.data().iter().map(|v| v.abs()))
            .reduce(|a, b| a.min(b))
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::overflow(op.name()));
        }
        self.nodes.push(TapeNode { op, value, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(Op::Constant, value, false)
    }

    /// Bind a parameter from `store`. Binding the same name twice returns
    /// the same node, so gradients from every use accumulate in one place.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store.get(name)?.clone();
        let v = self.push(Op::Param, value, true)?;
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// `x[N×in] · w[in×out] + b[out]`
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[0] || bs[0] != ws[1] {
            return Err(Error::validation(format!(
                "dense: incompatible shapes x{xs:?} w{ws:?} b{bs:?}"
            )));
        }
        let (n, inp, out) = (xs[0], ws[0], ws[1]);
        let mut y = vec![T::zero(); n * out];
        let bias = self.value(b).data();
        for row in y.chunks_mut(out) {
            row.copy_from_slice(bias);
        }
        kernels::matmul_nn(n, inp, out, self.value(x).data(), self.value(w).data(), &mut y);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(Op::Dense { x, w, b }, Tensor::new(vec![n, out], y)?, rg)
    }

    fn conv_shapes(&self, x: Var, w: Var, b: Var, transpose: bool) -> Result<(usize, usize, usize, usize, usize, usize)> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        let kind = if transpose { "conv2d_transpose" } else { "conv2d" };
        let ok = xs.len() == 4 && ws.len() == 4 && bs.len() == 1 && ws[2] == ws[3];
        let (cin, cout) = if ok {
            if transpose { (ws[0], ws[1]) } else { (ws[1], ws[0]) }
        } else {
            (0, 0)
        };
        if !ok || xs[1] != cin || bs[0] != cout {
            return Err(Error::validation(format!(
                "{kind}: incompatible shapes x{xs:?} w{ws:?} b{bs:?}"
            )));
        }
        Ok((xs[0], cin, xs[2], xs[3], cout, ws[2]))
    }

    /// 2-D convolution, `x[N×C×H×W]`, `w[O×C×k×k]`, `b[O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (n, cin, h, wd, cout, k) = self.conv_shapes(x, w, b, false)?;
        let g = ConvGeom::new(cin, h, wd, k, stride, pad)
            .ok_or_else(|| Error::validation(format!("conv2d: kernel {k} does not fit {h}×{wd} with pad {pad}")))?;
        let (ckk, hw) = (g.col_rows(), g.col_cols());
        let in_len = cin * h * wd;
        let mut y = vec![T::zero(); n * cout * hw];
        let (xd, wdat, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        for i in 0..n {
            let cols = kernels::im2col(&g, &xd[i * in_len..(i + 1) * in_len]);
            let yi = &mut y[i * cout * hw..(i + 1) * cout * hw];
            for (o, row) in yi.chunks_mut(hw).enumerate() {
                row.iter_mut().for_each(|v| *v = bd[o]);
            }
            kernels::matmul_nn(cout, ckk, hw, wdat, &cols, yi);
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        let value = Tensor::new(vec![n, cout, g.out_h, g.out_w], y)?;
        self.push(Op::Conv2d { x, w, b, stride, pad }, value, rg)
    }

    /// Transposed 2-D convolution (adjoint of [`Tape::conv2d`]),
    /// `x[N×C×H×W]`, `w[C×O×k×k]`, `b[O]`; output side `(H−1)·stride − 2·pad + k`.
    pub fn conv2d_transpose(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (n, cin, h, wd, cout, k) = self.conv_shapes(x, w, b, true)?;
        if stride == 0 || (h - 1) * stride + k < 2 * pad + 1 || (wd - 1) * stride + k < 2 * pad + 1 {
            return Err(Error::validation("conv2d_transpose: degenerate output size"));
        }
        let (oh, ow) = ((h - 1) * stride + k - 2 * pad, (wd - 1) * stride + k - 2 * pad);
        let g = ConvGeom::new(cout, oh, ow, k, stride, pad)
            .filter(|g| g.out_h == h && g.out_w == wd)
            .ok_or_else(|| Error::validation("conv2d_transpose: inconsistent geometry"))?;
        let (okk, hw) = (g.col_rows(), g.col_cols());
        let out_len = cout * oh * ow;
        let mut y = vec![T::zero(); n * out_len];
        let (xd, wdat, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        for i in 0..n {
            let mut cols = vec![T::zero(); okk * hw];
            kernels::matmul_tn(okk, cin, hw, wdat, &xd[i * cin * hw..(i + 1) * cin * hw], &mut cols);
            let yi = &mut y[i * out_len..(i + 1) * out_len];
            kernels::col2im(&g, &cols, yi);
            for (o, plane) in yi.chunks_mut(oh * ow).enumerate() {
                plane.iter_mut().for_each(|v| *v += bd[o]);
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        let value = Tensor::new(vec![n, cout, oh, ow], y)?;
        self.push(Op::Conv2dTranspose { x, w, b, stride, pad }, value, rg)
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var> {
        let value = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(op, value, rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let s = T::of(slope);
        self.unary(x, Op::LeakyRelu { x, slope: s }, |v| if v > T::zero() { v } else { s * v })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sigmoid { x }, |v| {
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        })
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Tanh { x }, |v| v.tanh())
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Exp { x }, |v| v.exp())
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Square { x }, |v| v * v)
    }

    /// `ln(max(x, eps_log))`
    pub fn log(&mut self, x: Var) -> Result<Var> {
        let eps = self.eps_log;
        self.unary(x, Op::Log { x, eps }, |v| v.max(eps).ln())
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let (lo, hi) = (T::of(lo), T::of(hi));
        self.unary(x, Op::Clamp { x, lo, hi }, |v| v.max(lo).min(hi))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let c = T::of(c);
        self.unary(x, Op::Scale { x, c }, |v| v * c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let c = T::of(c);
        self.unary(x, Op::AddScalar { x }, |v| v + c)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::validation(format!(
                "{}: shape mismatch {:?} vs {:?}",
                op.name(),
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(op, value, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add { a, b }, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub { a, b }, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul { a, b }, |x, y| x * y)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push(Op::Sum { x }, Tensor::scalar(s), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let s: T = v.data().iter().copied().sum();
        let m = s / T::of(v.len() as f64);
        let rg = self.rg(x);
        self.push(Op::Mean { x }, Tensor::scalar(m), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self
            .value(x)
            .reshaped(shape)
            .map_err(|_| Error::validation(format!("reshape: {:?} -> {shape:?}", self.shape(x))))?;
        let rg = self.rg(x);
        self.push(Op::Reshape { x }, value, rg)
    }

    /// Concatenate along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::validation("concat: no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::validation(format!("concat: axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                return Err(Error::validation(format!("concat: shape {s:?} incompatible with {base:?}")));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let chunk = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.value(p).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Op::Concat { parts: parts.to_vec(), axis }, Tensor::new(shape, data)?, rg)
    }

    /// `mu + exp(½·logvar) ⊙ noise`; `noise` is a constant.
    pub fn gaussian_sample(&mut self, mu: Var, logvar: Var, noise: Tensor<T>) -> Result<Var> {
        if self.shape(mu) != self.shape(logvar) || self.shape(mu) != noise.shape() {
            return Err(Error::validation(format!(
                "gaussian_sample: shapes mu{:?} logvar{:?} noise{:?}",
                self.shape(mu),
                self.shape(logvar),
                noise.shape()
            )));
        }
        let half = T::of(0.5);
        let data = self
            .value(mu)
            .data()
            .iter()
            .zip(self.value(logvar).data())
            .zip(noise.data())
            .map(|((&m, &lv), &e)| m + (half * lv).exp() * e)
            .collect();
        let value = Tensor::new(self.shape(mu).to_vec(), data)?;
        let rg = self.rg(mu) || self.rg(logvar);
        self.push(Op::GaussianSample { mu, logvar, noise }, value, rg)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::validation(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));

        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(node, &gy, &mut grads)?;
            }
            grads[i] = Some(gy);
        }
        Ok(Gradients { grads, params: self.params.clone() })
    }

    fn accum(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &TapeNode<T>, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let y = &node.value;
        let zip_map = |x: Var, f: &dyn Fn(T, T, T) -> T| -> Tensor<T> {
            let xv = self.value(x);
            let data = xv
                .data()
                .iter()
                .zip(y.data())
                .zip(gy.data())
                .map(|((&xv, &yv), &g)| f(xv, yv, g))
                .collect();
            Tensor::new(xv.shape().to_vec(), data).expect("shape preserved")
        };
        match &node.op {
            Op::Constant | Op::Param => {}
            Op::Dense { x, w, b } => {
                let (n, inp) = (self.shape(*x)[0], self.shape(*x)[1]);
                let out = self.shape(*w)[1];
                if self.rg(*x) {
                    let mut dx = vec![T::zero(); n * inp];
                    kernels::matmul_nt(n, out, inp, gy.data(), self.value(*w).data(), &mut dx);
                    self.accum(grads, *x, Tensor::new(vec![n, inp], dx)?);
                }
                if self.rg(*w) {
                    let mut dw = vec![T::zero(); inp * out];
                    kernels::matmul_tn(inp, n, out, self.value(*x).data(), gy.data(), &mut dw);
                    self.accum(grads, *w, Tensor::new(vec![inp, out], dw)?);
                }
                if self.rg(*b) {
                    let mut db = vec![T::zero(); out];
                    for row in gy.data().chunks(out) {
                        for (d, &g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    self.accum(grads, *b, Tensor::new(vec![out], db)?);
                }
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let (n, cin, h, wd, cout, k) = self.conv_shapes(*x, *w, *b, false)?;
                let g = ConvGeom::new(cin, h, wd, k, *stride, *pad).expect("validated in forward");
                let (ckk, hw, in_len) = (g.col_rows(), g.col_cols(), cin * h * wd);
                let xd = self.value(*x).data();
                let wdat = self.value(*w).data();
                let mut dx = self.rg(*x).then(|| vec![T::zero(); n * in_len]);
                let mut dw = self.rg(*w).then(|| vec![T::zero(); cout * ckk]);
                let mut db = vec![T::zero(); cout];
                for i in 0..n {
                    let gyi = &gy.data()[i * cout * hw..(i + 1) * cout * hw];
                    if let Some(dw) = dw.as_mut() {
                        let cols = kernels::im2col(&g, &xd[i * in_len..(i + 1) * in_len]);
                        kernels::matmul_nt(cout, hw, ckk, gyi, &cols, dw);
                    }
                    if let Some(dx) = dx.as_mut() {
                        let mut dcols = vec![T::zero(); ckk * hw];
                        kernels::matmul_tn(ckk, cout, hw, wdat, gyi, &mut dcols);
                        kernels::col2im(&g, &dcols, &mut dx[i * in_len..(i + 1) * in_len]);
                    }
                    for (o, plane) in gyi.chunks(hw).enumerate() {
                        db[o] += plane.iter().copied().sum::<T>();
                    }
                }
                if let Some(dx) = dx {
                    self.accum(grads, *x, Tensor::new(self.shape(*x).to_vec(), dx)?);
                }
                if let Some(dw) = dw {
                    self.accum(grads, *w, Tensor::new(self.shape(*w).to_vec(), dw)?);
                }
                self.accum(grads, *b, Tensor::new(vec![cout], db)?);
            }
            Op::Conv2dTranspose { x, w, b, stride, pad } => {
                let (n, cin, h, wd, cout, k) = self.conv_shapes(*x, *w, *b, true)?;
                let (oh, ow) = (y.shape()[2], y.shape()[3]);
                let g = ConvGeom::new(cout, oh, ow, k, *stride, *pad).expect("validated in forward");
                let (okk, hw, out_len) = (g.col_rows(), h * wd, cout * oh * ow);
                let xd = self.value(*x).data();
                let wdat = self.value(*w).data();
                let mut dx = self.rg(*x).then(|| vec![T::zero(); n * cin * hw]);
                let mut dw = self.rg(*w).then(|| vec![T::zero(); cin * okk]);
                let mut db = vec![T::zero(); cout];
                for i in 0..n {
                    let gyi = &gy.data()[i * out_len..(i + 1) * out_len];
                    let dcols = kernels::im2col(&g, gyi);
                    if let Some(dx) = dx.as_mut() {
                        kernels::matmul_nn(cin, okk, hw, wdat, &dcols, &mut dx[i * cin * hw..(i + 1) * cin * hw]);
                    }
                    if let Some(dw) = dw.as_mut() {
                        kernels::matmul_nt(cin, hw, okk, &xd[i * cin * hw..(i + 1) * cin * hw], &dcols, dw);
                    }
                    for (o, plane) in gyi.chunks(oh * ow).enumerate() {
                        db[o] += plane.iter().copied().sum::<T>();
                    }
                }
                if let Some(dx) = dx {
                    self.accum(grads, *x, Tensor::new(self.shape(*x).to_vec(), dx)?);
                }
                if let Some(dw) = dw {
                    self.accum(grads, *w, Tensor::new(self.shape(*w).to_vec(), dw)?);
                }
                self.accum(grads, *b, Tensor::new(vec![cout], db)?);
            }
            Op::LeakyRelu { x, slope } => {
                let s = *slope;
                let d = zip_map(*x, &|xv, _, g| if xv > T::zero() { g } else { s * g });
                self.accum(grads, *x, d);
            }
            Op::Sigmoid { x } => {
                let d = zip_map(*x, &|_, yv, g| g * yv * (T::one() - yv));
                self.accum(grads, *x, d);
            }
            Op::Tanh { x } => {
                let d = zip_map(*x, &|_, yv, g| g * (T::one() - yv * yv));
                self.accum(grads, *x, d);
            }
            Op::Exp { x } => {
                let d = zip_map(*x, &|_, yv, g| g * yv);
                self.accum(grads, *x, d);
            }
            Op::Square { x } => {
                let two = T::of(2.0);
                let d = zip_map(*x, &|xv, _, g| two * xv * g);
                self.accum(grads, *x, d);
            }
            Op::Log { x, eps } => {
                let e = *eps;
                let d = zip_map(*x, &|xv, _, g| if xv > e { g / xv } else { T::zero() });
                self.accum(grads, *x, d);
            }
            Op::Clamp { x, lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                let d = zip_map(*x, &|xv, _, g| if xv >= lo && xv <= hi { g } else { T::zero() });
                self.accum(grads, *x, d);
            }
            Op::Scale { x, c } => {
                let c = *c;
                self.accum(grads, *x, gy.map(|g| g * c));
            }
            Op::AddScalar { x } | Op::Reshape { x } => {
                let d = Tensor::new(self.shape(*x).to_vec(), gy.data().to_vec())?;
                self.accum(grads, *x, d);
            }
            Op::Add { a, b } => {
                self.accum(grads, *a, gy.clone());
                self.accum(grads, *b, gy.clone());
            }
            Op::Sub { a, b } => {
                self.accum(grads, *a, gy.clone());
                self.accum(grads, *b, gy.map(|g| -g));
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = Tensor::from_fn(av.shape(), |i| gy.data()[i] * bv.data()[i]);
                let db = Tensor::from_fn(bv.shape(), |i| gy.data()[i] * av.data()[i]);
                self.accum(grads, *a, da);
                self.accum(grads, *b, db);
            }
            Op::Sum { x } => {
                let g = gy.item();
                self.accum(grads, *x, Tensor::full(self.shape(*x), g));
            }
            Op::Mean { x } => {
                let n = T::of(self.value(*x).len() as f64);
                self.accum(grads, *x, Tensor::full(self.shape(*x), gy.item() / n));
            }
            Op::Concat { parts, axis } => {
                let shape = y.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let row = shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let chunk = self.shape(p)[*axis] * inner;
                    let mut d = Vec::with_capacity(outer * chunk);
                    for o in 0..outer {
                        d.extend_from_slice(&gy.data()[o * row + offset..o * row + offset + chunk]);
                    }
                    offset += chunk;
                    self.accum(grads, p, Tensor::new(self.shape(p).to_vec(), d)?);
                }
            }
            Op::GaussianSample { mu, logvar, noise } => {
                self.accum(grads, *mu, gy.clone());
                let half = T::of(0.5);
                let lv = self.value(*logvar);
                let d = Tensor::from_fn(lv.shape(), |i| {
                    gy.data()[i] * half * (half * lv.data()[i]).exp() * noise.data()[i]
                });
                self.accum(grads, *logvar, d);
            }
        }
        Ok(())
    }
}

/// Result of one reverse sweep.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: BTreeMap<String, Var>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to any node, `None` if the loss does not
    /// depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients for every parameter in `store`, in store order. Parameters
    /// not reachable from the loss get zeros.
    pub fn for_params(&self, store: &ParamStore<T>) -> ParamGrads<T> {
        let mut out = ParamGrads::zeros_like(store);
        for (name, slot) in out.entries.iter_mut() {
            if let Some(g) = self.params.get(name).and_then(|v| self.get(*v)) {
                *slot = g.clone();
            }
        }
        out
    }
}
