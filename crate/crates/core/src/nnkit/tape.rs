//! Gradient tape over a fixed vocabulary of layers.
//!
//! Every op records its inputs and (where needed) a small cache, and owns a
//! hand-derived backward rule. Parameter values are read from the borrowed
//! [`ParamStore`]; gradients come back as a [`Gradients`] set that the caller
//! folds into the store.
//!
//! Axis conventions: channel ops (`concat`, `narrow`, `film`, `group_norm`)
//! act on axis 1 of `[batch, channels, ...]`; `upsample` and `crop` act on the
//! last axis.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nnkit::param::{Gradients, ParamId, ParamStore};
use crate::nnkit::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(ParamId),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    GroupNorm {
        x: Var,
        groups: usize,
        rstd: Vec<T>,
    },
    Silu(Var),
    Tanh(Var),
    Film {
        h: Var,
        gamma: Var,
        beta: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    ScaleBatch(Var, Vec<T>),
    Concat(Vec<Var>),
    Narrow {
        x: Var,
        start: usize,
    },
    Upsample {
        x: Var,
        factor: usize,
    },
    Crop(Var),
    BroadcastRows {
        p: Var,
        coeffs: Vec<T>,
    },
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
}

struct Node<T> {
    op: Op<T>,
    value: Option<Tensor<T>>,
    needs_grad: bool,
}

pub struct Tape<'s, T: Scalar> {
    store: &'s ParamStore<T>,
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    consumed: bool,
}

const GN_EPS: f64 = 1e-5;

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `[batch, channels, inner]` view of a rank ≥ 2 shape.
fn bci(shape: &[usize]) -> (usize, usize, usize) {
    let inner = shape[2..].iter().product();
    (shape[0], shape[1], inner)
}

impl<'s, T: Scalar> Tape<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            params: HashMap::new(),
            consumed: false,
        }
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(id), _) => self.store.value(*id),
            (_, Some(t)) => t,
            _ => unreachable!("non-param node without value"),
        }
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            op,
            value: Some(value),
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant (no gradient).
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            op: Op::Input,
            value: Some(t),
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    /// `y = x·w + b` with `x: [n, in]`, `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bs != [ws[1]] {
            let mut rhs = ws.to_vec();
            rhs.extend_from_slice(bs);
            return Err(Error::shape("linear", xs, &rhs));
        }
        let (n, din, dout) = (xs[0], xs[1], ws[1]);
        let (xv, wv, bv) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * dout);
        for r in 0..n {
            let mut row = bv.to_vec();
            for i in 0..din {
                let a = xv[r * din + i];
                if a == T::zero() {
                    continue;
                }
                let wr = &wv[i * dout..(i + 1) * dout];
                for (o, &wij) in row.iter_mut().zip(wr) {
                    *o += a * wij;
                }
            }
            out.extend_from_slice(&row);
        }
        let y = Tensor::new(vec![n, dout], out)?;
        Ok(self.push(Op::Linear { x, w, b }, y, &[x, w, b]))
    }

    /// 1-D convolution, `x: [B, Cin, L]`, `w: [Cout, Cin, K]`, `b: [Cout]`,
    /// symmetric zero padding.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[1] || bs != [ws[0]] || stride == 0 {
            return Err(Error::shape("conv1d", xs, ws));
        }
        let (bn, cin, len) = (xs[0], xs[1], xs[2]);
        let (cout, k) = (ws[0], ws[2]);
        if len + 2 * pad < k {
            return Err(Error::shape("conv1d", xs, ws));
        }
        let lout = (len + 2 * pad - k) / stride + 1;
        let (xv, wv, bv) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let geom = ConvGeom {
            bn,
            cin,
            len,
            k,
            stride,
            pad,
            lout,
        };
        let cols = im2col(xv, &geom);
        let n = bn * lout;
        let ck = cin * k;
        let mut mat = vec![T::zero(); cout * n];
        for co in 0..cout {
            let orow = &mut mat[co * n..(co + 1) * n];
            orow.fill(bv[co]);
            for (j, &wj) in wv[co * ck..(co + 1) * ck].iter().enumerate() {
                if wj != T::zero() {
                    axpy(orow, wj, &cols[j * n..(j + 1) * n]);
                }
            }
        }
        let mut out = vec![T::zero(); bn * cout * lout];
        for co in 0..cout {
            for bi in 0..bn {
                out[(bi * cout + co) * lout..(bi * cout + co + 1) * lout]
                    .copy_from_slice(&mat[co * n + bi * lout..co * n + (bi + 1) * lout]);
            }
        }
        let y = Tensor::new(vec![bn, cout, lout], out)?;
        Ok(self.push(Op::Conv1d { x, w, b, stride, pad }, y, &[x, w, b]))
    }

    /// Group normalization without affine terms (FiLM supplies scale/shift).
    pub fn group_norm(&mut self, x: Var, groups: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 || groups == 0 || !xs[1].is_multiple_of(groups) {
            return Err(Error::shape("group_norm", &xs, &[groups]));
        }
        let (bn, c, inner) = bci(&xs);
        let gsize = (c / groups) * inner;
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); xv.len()];
        let mut rstd = Vec::with_capacity(bn * groups);
        let n = T::from_usize(gsize).unwrap();
        for bi in 0..bn {
            for g in 0..groups {
                let start = bi * c * inner + g * gsize;
                let seg = &xv[start..start + gsize];
                let mean = seg.iter().copied().sum::<T>() / n;
                let var = seg.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
                let r = T::one() / (var + T::lit(GN_EPS)).sqrt();
                for (o, &v) in out[start..start + gsize].iter_mut().zip(seg) {
                    *o = (v - mean) * r;
                }
                rstd.push(r);
            }
        }
        let y = Tensor::new(xs, out)?;
        Ok(self.push(Op::GroupNorm { x, groups, rstd }, y, &[x]))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v * sigmoid(v));
        self.push(Op::Silu(x), y, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.tanh());
        self.push(Op::Tanh(x), y, &[x])
    }

    /// `h·(1+γ) + β`, with `γ, β: [B, C]` broadcast over the trailing axes of `h`.
    pub fn film(&mut self, h: Var, gamma: Var, beta: Var) -> Result<Var> {
        let hs = self.shape(h).to_vec();
        let (gs, bs) = (self.shape(gamma), self.shape(beta));
        if hs.len() < 2 || gs != [hs[0], hs[1]] || bs != gs {
            return Err(Error::shape("film", &hs, gs));
        }
        let (bn, c, inner) = bci(&hs);
        let (hv, gv, bv) = (self.value(h).data(), self.value(gamma).data(), self.value(beta).data());
        let mut out = Vec::with_capacity(hv.len());
        for i in 0..bn * c {
            let (scale, shift) = (T::one() + gv[i], bv[i]);
            out.extend(hv[i * inner..(i + 1) * inner].iter().map(|&v| v * scale + shift));
        }
        let _ = bn;
        let y = Tensor::new(hs, out)?;
        Ok(self.push(Op::Film { h, gamma, beta }, y, &[h, gamma, beta]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |p, q| p + q)?;
        Ok(self.push(Op::Add(a, b), y, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |p, q| p - q)?;
        Ok(self.push(Op::Sub(a, b), y, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |p, q| p * q)?;
        Ok(self.push(Op::Mul(a, b), y, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let y = self.value(x).map(|v| v * c);
        self.push(Op::Scale(x, c), y, &[x])
    }

    /// Multiplies each leading-axis slice `b` by `scales[b]`.
    pub fn scale_batch(&mut self, x: Var, scales: Vec<T>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.is_empty() || xs[0] != scales.len() {
            return Err(Error::shape("scale_batch", &xs, &[scales.len()]));
        }
        let inner = xs[1..].iter().product::<usize>();
        let xv = self.value(x).data();
        let out = xv
            .iter()
            .enumerate()
            .map(|(i, &v)| v * scales[i / inner.max(1)])
            .collect();
        let y = Tensor::new(xs, out)?;
        Ok(self.push(Op::ScaleBatch(x, scales), y, &[x]))
    }

    /// Concatenation along axis 1.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        if first.len() < 2 {
            return Err(Error::shape("concat", &first, &[]));
        }
        let (bn, _, inner) = bci(&first);
        let mut total_c = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || s[0] != bn || s[2..] != first[2..] {
                return Err(Error::shape("concat", &first, s));
            }
            total_c += s[1];
        }
        let mut out = Vec::with_capacity(bn * total_c * inner);
        for bi in 0..bn {
            for &p in parts {
                let t = self.value(p);
                let c = t.dim(1);
                out.extend_from_slice(&t.data()[bi * c * inner..(bi + 1) * c * inner]);
            }
        }
        let mut shape = first.clone();
        shape[1] = total_c;
        let y = Tensor::new(shape, out)?;
        Ok(self.push(Op::Concat(parts.to_vec()), y, parts))
    }

    /// Channels `start..start+len` along axis 1.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 || start + len > xs[1] {
            return Err(Error::shape("narrow", &xs, &[start, len]));
        }
        let (bn, c, inner) = bci(&xs);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(bn * len * inner);
        for bi in 0..bn {
            let base = bi * c * inner + start * inner;
            out.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut shape = xs;
        shape[1] = len;
        let y = Tensor::new(shape, out)?;
        Ok(self.push(Op::Narrow { x, start }, y, &[x]))
    }

    /// Nearest-neighbour upsampling of the last axis.
    pub fn upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.is_empty() || factor == 0 {
            return Err(Error::shape("upsample", &xs, &[factor]));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(xv.len() * factor);
        for &v in xv {
            out.extend(std::iter::repeat_n(v, factor));
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() *= factor;
        let y = Tensor::new(shape, out)?;
        Ok(self.push(Op::Upsample { x, factor }, y, &[x]))
    }

    /// Keeps the first `len` entries of the last axis.
    pub fn crop(&mut self, x: Var, len: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let last = *xs.last().unwrap_or(&0);
        if len > last {
            return Err(Error::shape("crop", &xs, &[len]));
        }
        let outer = xs[..xs.len() - 1].iter().product::<usize>();
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len);
        for o in 0..outer {
            out.extend_from_slice(&xv[o * last..o * last + len]);
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = len;
        let y = Tensor::new(shape, out)?;
        Ok(self.push(Op::Crop(x), y, &[x]))
    }

    /// `out[b, :] = coeffs[b] · p` for a vector `p`.
    pub fn broadcast_rows(&mut self, p: Var, coeffs: Vec<T>) -> Result<Var> {
        let ps = self.shape(p).to_vec();
        if ps.len() != 1 {
            return Err(Error::shape("broadcast_rows", &ps, &[]));
        }
        let pv = self.value(p).data();
        let mut out = Vec::with_capacity(coeffs.len() * ps[0]);
        for &c in &coeffs {
            out.extend(pv.iter().map(|&v| v * c));
        }
        let y = Tensor::new(vec![coeffs.len(), ps[0]], out)?;
        Ok(self.push(Op::BroadcastRows { p, coeffs }, y, &[p]))
    }

    /// Swaps the last two axes of a rank-3 value.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).transpose_last2()?;
        Ok(self.push(Op::Transpose(x), y, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        self.push(Op::Sum(x), y, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).mean());
        self.push(Op::Mean(x), y, &[x])
    }

    /// Mean squared difference.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.value(a).zip_map(self.value(b), |p, q| (p - q) * (p - q))?;
        let y = Tensor::scalar(d.mean());
        Ok(self.push(Op::Mse(a, b), y, &[a, b]))
    }

    /// Reverse pass from a scalar `loss`. A tape supports one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::StaleGraph);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss).to_vec(), T::one()));
        let mut out = Gradients {
            grads: (0..self.store.len()).map(|_| None).collect(),
        };

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let contributions = self.node_backward(i, &g)?;
            if let Op::Param(id) = self.nodes[i].op {
                out.grads[id.0] = Some(g);
                continue;
            }
            for (v, d) in contributions {
                if !self.nodes[v.0].needs_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&d)?,
                    slot => *slot = Some(d),
                }
            }
        }
        Ok(out)
    }

    fn node_backward(&self, i: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[i];
        let wants = |v: &Var| self.nodes[v.0].needs_grad;
        let gv = g.data();
        let mut res = Vec::new();
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Linear { x, w, b } => {
                let (xt, wt) = (self.value(*x), self.value(*w));
                let (n, din, dout) = (xt.dim(0), xt.dim(1), wt.dim(1));
                if wants(x) {
                    let mut dx = vec![T::zero(); n * din];
                    for r in 0..n {
                        let grow = &gv[r * dout..(r + 1) * dout];
                        for ii in 0..din {
                            let wr = &wt.data()[ii * dout..(ii + 1) * dout];
                            dx[r * din + ii] = grow.iter().zip(wr).map(|(&a, &b)| a * b).sum();
                        }
                    }
                    res.push((*x, Tensor::new(vec![n, din], dx)?));
                }
                if wants(w) {
                    let mut dw = vec![T::zero(); din * dout];
                    for r in 0..n {
                        let grow = &gv[r * dout..(r + 1) * dout];
                        for ii in 0..din {
                            let a = xt.data()[r * din + ii];
                            if a == T::zero() {
                                continue;
                            }
                            for (d, &gg) in dw[ii * dout..(ii + 1) * dout].iter_mut().zip(grow) {
                                *d += a * gg;
                            }
                        }
                    }
                    res.push((*w, Tensor::new(vec![din, dout], dw)?));
                }
                if wants(b) {
                    let mut db = vec![T::zero(); dout];
                    for r in 0..n {
                        for (d, &gg) in db.iter_mut().zip(&gv[r * dout..(r + 1) * dout]) {
                            *d += gg;
                        }
                    }
                    res.push((*b, Tensor::new(vec![dout], db)?));
                }
            }
            Op::Conv1d { x, w, b, stride, pad } => {
                let (xt, wt) = (self.value(*x), self.value(*w));
                let (bn, cin, len) = (xt.dim(0), xt.dim(1), xt.dim(2));
                let (cout, k) = (wt.dim(0), wt.dim(2));
                let lout = g.dim(2);
                let geom = ConvGeom {
                    bn,
                    cin,
                    len,
                    k,
                    stride: *stride,
                    pad: *pad,
                    lout,
                };
                let n = bn * lout;
                let ck = cin * k;
                let mut gmat = vec![T::zero(); cout * n];
                for co in 0..cout {
                    for bi in 0..bn {
                        gmat[co * n + bi * lout..co * n + (bi + 1) * lout]
                            .copy_from_slice(&gv[(bi * cout + co) * lout..(bi * cout + co + 1) * lout]);
                    }
                }
                if wants(w) {
                    let cols = im2col(xt.data(), &geom);
                    let mut dw = vec![T::zero(); wt.len()];
                    for co in 0..cout {
                        let grow = &gmat[co * n..(co + 1) * n];
                        for (j, d) in dw[co * ck..(co + 1) * ck].iter_mut().enumerate() {
                            *d = dot(grow, &cols[j * n..(j + 1) * n]);
                        }
                    }
                    res.push((*w, Tensor::new(wt.shape().to_vec(), dw)?));
                }
                if wants(x) {
                    let mut dcols = vec![T::zero(); ck * n];
                    for co in 0..cout {
                        let grow = &gmat[co * n..(co + 1) * n];
                        for (j, &wj) in wt.data()[co * ck..(co + 1) * ck].iter().enumerate() {
                            if wj != T::zero() {
                                axpy(&mut dcols[j * n..(j + 1) * n], wj, grow);
                            }
                        }
                    }
                    res.push((*x, Tensor::new(xt.shape().to_vec(), col2im(&dcols, &geom))?));
                }
                if wants(b) {
                    let mut db = vec![T::zero(); cout];
                    for bi in 0..bn {
                        for (co, d) in db.iter_mut().enumerate() {
                            *d += gv[(bi * cout + co) * lout..(bi * cout + co + 1) * lout]
                                .iter()
                                .copied()
                                .sum::<T>();
                        }
                    }
                    res.push((*b, Tensor::new(vec![cout], db)?));
                }
            }
            Op::GroupNorm { x, groups, rstd } => {
                let y = node.value.as_ref().unwrap();
                let (bn, c, inner) = bci(y.shape());
                let gsize = (c / groups) * inner;
                let n = T::from_usize(gsize).unwrap();
                let mut dx = vec![T::zero(); y.len()];
                for bi in 0..bn {
                    for gi in 0..*groups {
                        let start = bi * c * inner + gi * gsize;
                        let ys = &y.data()[start..start + gsize];
                        let gs = &gv[start..start + gsize];
                        let mg = gs.iter().copied().sum::<T>() / n;
                        let mgy = gs.iter().zip(ys).map(|(&a, &b)| a * b).sum::<T>() / n;
                        let r = rstd[bi * groups + gi];
                        for ((d, &gg), &yy) in dx[start..start + gsize].iter_mut().zip(gs).zip(ys) {
                            *d = r * (gg - mg - yy * mgy);
                        }
                    }
                }
                res.push((*x, Tensor::new(y.shape().to_vec(), dx)?));
            }
            Op::Silu(x) => {
                let xt = self.value(*x);
                let dx = xt
                    .data()
                    .iter()
                    .zip(gv)
                    .map(|(&v, &gg)| {
                        let s = sigmoid(v);
                        gg * s * (T::one() + v * (T::one() - s))
                    })
                    .collect();
                res.push((*x, Tensor::new(xt.shape().to_vec(), dx)?));
            }
            Op::Tanh(x) => {
                let y = node.value.as_ref().unwrap();
                let dx = y
                    .data()
                    .iter()
                    .zip(gv)
                    .map(|(&yy, &gg)| gg * (T::one() - yy * yy))
                    .collect();
                res.push((*x, Tensor::new(y.shape().to_vec(), dx)?));
            }
            Op::Film { h, gamma, beta } => {
                let (ht, gt) = (self.value(*h), self.value(*gamma));
                let (bn, c, inner) = bci(ht.shape());
                if wants(h) {
                    let mut dh = Vec::with_capacity(ht.len());
                    for r in 0..bn * c {
                        let scale = T::one() + gt.data()[r];
                        dh.extend(gv[r * inner..(r + 1) * inner].iter().map(|&gg| gg * scale));
                    }
                    res.push((*h, Tensor::new(ht.shape().to_vec(), dh)?));
                }
                if wants(gamma) {
                    let dg = (0..bn * c)
                        .map(|r| {
                            gv[r * inner..(r + 1) * inner]
                                .iter()
                                .zip(&ht.data()[r * inner..(r + 1) * inner])
                                .map(|(&a, &b)| a * b)
                                .sum::<T>()
                        })
                        .collect();
                    res.push((*gamma, Tensor::new(vec![bn, c], dg)?));
                }
                if wants(beta) {
                    let db = (0..bn * c)
                        .map(|r| gv[r * inner..(r + 1) * inner].iter().copied().sum::<T>())
                        .collect();
                    res.push((*beta, Tensor::new(vec![bn, c], db)?));
                }
            }
            Op::Add(a, b) => {
                res.push((*a, g.clone()));
                res.push((*b, g.clone()));
            }
            Op::Sub(a, b) => {
                res.push((*a, g.clone()));
                res.push((*b, g.map(|v| -v)));
            }
            Op::Mul(a, b) => {
                if wants(a) {
                    res.push((*a, g.zip_map(self.value(*b), |p, q| p * q)?));
                }
                if wants(b) {
                    res.push((*b, g.zip_map(self.value(*a), |p, q| p * q)?));
                }
            }
            Op::Scale(x, c) => {
                let c = *c;
                res.push((*x, g.map(|v| v * c)));
            }
            Op::ScaleBatch(x, scales) => {
                let inner = (g.len() / scales.len()).max(1);
                let dx = gv.iter().enumerate().map(|(j, &v)| v * scales[j / inner]).collect();
                res.push((*x, Tensor::new(g.shape().to_vec(), dx)?));
            }
            Op::Concat(parts) => {
                let (bn, total_c, inner) = bci(g.shape());
                let mut offset = 0;
                for p in parts {
                    let ps = self.shape(*p).to_vec();
                    let c = ps[1];
                    if wants(p) {
                        let mut d = Vec::with_capacity(bn * c * inner);
                        for bi in 0..bn {
                            let base = bi * total_c * inner + offset * inner;
                            d.extend_from_slice(&gv[base..base + c * inner]);
                        }
                        res.push((*p, Tensor::new(ps, d)?));
                    }
                    offset += c;
                }
            }
            Op::Narrow { x, start } => {
                let xs = self.shape(*x).to_vec();
                let (bn, c, inner) = bci(&xs);
                let len = g.dim(1);
                let mut dx = vec![T::zero(); bn * c * inner];
                for bi in 0..bn {
                    let base = bi * c * inner + start * inner;
                    dx[base..base + len * inner].copy_from_slice(&gv[bi * len * inner..(bi + 1) * len * inner]);
                }
                res.push((*x, Tensor::new(xs, dx)?));
            }
            Op::Upsample { x, factor } => {
                let xs = self.shape(*x).to_vec();
                let dx = gv.chunks(*factor).map(|c| c.iter().copied().sum()).collect();
                res.push((*x, Tensor::new(xs, dx)?));
            }
            Op::Crop(x) => {
                let xs = self.shape(*x).to_vec();
                let last = *xs.last().unwrap();
                let len = *g.shape().last().unwrap();
                let outer = xs[..xs.len() - 1].iter().product::<usize>();
                let mut dx = vec![T::zero(); outer * last];
                for o in 0..outer {
                    dx[o * last..o * last + len].copy_from_slice(&gv[o * len..(o + 1) * len]);
                }
                res.push((*x, Tensor::new(xs, dx)?));
            }
            Op::BroadcastRows { p, coeffs } => {
                let d = g.dim(1);
                let mut dp = vec![T::zero(); d];
                for (bi, &c) in coeffs.iter().enumerate() {
                    for (acc, &gg) in dp.iter_mut().zip(&gv[bi * d..(bi + 1) * d]) {
                        *acc += c * gg;
                    }
                }
                res.push((*p, Tensor::new(vec![d], dp)?));
            }
            Op::Transpose(x) => {
                res.push((*x, g.transpose_last2()?));
            }
            Op::Sum(x) => {
                let xs = self.shape(*x).to_vec();
                res.push((*x, Tensor::full(xs, g.item())));
            }
            Op::Mean(x) => {
                let xt = self.value(*x);
                let n = T::from_usize(xt.len()).unwrap();
                res.push((*x, Tensor::full(xt.shape().to_vec(), g.item() / n)));
            }
            Op::Mse(a, b) => {
                let (at, bt) = (self.value(*a), self.value(*b));
                let n = T::from_usize(at.len()).unwrap();
                let k = T::lit(2.0) * g.item() / n;
                let da = at.zip_map(bt, |p, q| k * (p - q))?;
                if wants(b) {
                    res.push((*b, da.map(|v| -v)));
                }
                res.push((*a, da));
            }
        }
        Ok(res)
    }
}

/// Shape bookkeeping of one 1-D convolution.
struct ConvGeom {
    bn: usize,
    cin: usize,
    len: usize,
    k: usize,
    stride: usize,
    pad: usize,
    lout: usize,
}

/// Unfolds `x: [B, Cin, L]` into `[Cin·K, B·Lout]` so the convolution is a
/// single matrix product with long contiguous rows.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let n = g.bn * g.lout;
    let mut cols = vec![T::zero(); g.cin * g.k * n];
    for ci in 0..g.cin {
        for kk in 0..g.k {
            let (lo0, lo1) = conv_range(g.len, kk, g.stride, g.pad, g.lout);
            let row = &mut cols[(ci * g.k + kk) * n..(ci * g.k + kk + 1) * n];
            for bi in 0..g.bn {
                let xrow = &x[(bi * g.cin + ci) * g.len..(bi * g.cin + ci + 1) * g.len];
                let dst = &mut row[bi * g.lout..(bi + 1) * g.lout];
                for lo in lo0..lo1 {
                    dst[lo] = xrow[lo * g.stride + kk - g.pad];
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back to `[B, Cin, L]`.
fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let n = g.bn * g.lout;
    let mut x = vec![T::zero(); g.bn * g.cin * g.len];
    for ci in 0..g.cin {
        for kk in 0..g.k {
            let (lo0, lo1) = conv_range(g.len, kk, g.stride, g.pad, g.lout);
            let row = &cols[(ci * g.k + kk) * n..(ci * g.k + kk + 1) * n];
            for bi in 0..g.bn {
                let xrow = &mut x[(bi * g.cin + ci) * g.len..(bi * g.cin + ci + 1) * g.len];
                let src = &row[bi * g.lout..(bi + 1) * g.lout];
                for lo in lo0..lo1 {
                    xrow[lo * g.stride + kk - g.pad] += src[lo];
                }
            }
        }
    }
    x
}

#[inline]
fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&p, &q)| acc + p * q)
}

/// Output positions `lo` for which input index `lo*stride + k - pad` is in `[0, len)`.
#[inline]
fn conv_range(len: usize, k: usize, stride: usize, pad: usize, lout: usize) -> (usize, usize) {
    let lo0 = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let lo1 = if len + pad > k {
        ((len + pad - k).div_ceil(stride)).min(lout)
    } else {
        0
    };
    (lo0, lo1.max(lo0))
}
