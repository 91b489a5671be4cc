//! Small reverse-mode autodiff engine.
//!
//! A [`Graph`] is a tape: every op evaluates eagerly, stores its output and a
//! closure that maps the output gradient to parent gradients. Learnable
//! weights live in a [`ParamStore`] and enter a graph through
//! [`Graph::param`]; after [`Graph::backward`] their gradients are pulled back
//! with [`ParamStore::accumulate_grads`].
//!
//! Values are `f64` throughout. Checkpoints store `f32`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::seed;

pub const DEFAULT_NORM_EPS: f64 = 1e-5;
pub const PROB_FLOOR: f64 = 1e-6;
const CHECKPOINT_MAGIC: &[u8; 4] = b"VXCK";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("instance_norm needs at least 2 time steps, got {0}")]
    TooShort(usize),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateName(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn shape_err(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::Shape { op, detail: detail.into() }
}

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.iter().any(|&d| d == 0) {
            return Err(shape_err("tensor", format!("zero-sized dimension in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err("tensor", format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "tensor" });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    /// Standard normal entries from `rng`.
    pub fn randn<R: Rng>(shape: &[usize], rng: &mut R) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..n).map(|_| StandardNormal.sample(rng)).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self, TensorError> {
        Self::new(shape.to_vec(), self.data)
    }

    /// Row `i` along the leading axis, keeping the rest of the shape.
    pub fn index0(&self, i: usize) -> Tensor {
        let stride = self.data.len() / self.shape[0];
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Tensor { shape, data: self.data[i * stride..(i + 1) * stride].to_vec() }
    }

    /// Concatenates along the leading axis. All trailing dims must agree.
    pub fn stack0(parts: &[Tensor]) -> Result<Tensor, TensorError> {
        let first = parts.first().ok_or_else(|| shape_err("stack0", "no tensors"))?;
        let tail = &first.shape[1..];
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            if &p.shape[1..] != tail {
                return Err(shape_err("stack0", format!("{:?} vs {:?}", p.shape, first.shape)));
            }
            lead += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(tail);
        Ok(Tensor { shape, data })
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Handle to a parameter in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

type BackFn = Box<dyn Fn(&[Tensor], &[f64]) -> Vec<(usize, Vec<f64>)>>;

/// Eager tape for one forward/backward pass.
#[derive(Default)]
pub struct Graph {
    values: Vec<Tensor>,
    backs: Vec<Option<BackFn>>,
    requires: Vec<bool>,
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(usize, u64, ParamId)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push_leaf(&mut self, t: Tensor, requires: bool) -> Var {
        self.values.push(t);
        self.backs.push(None);
        self.requires.push(requires);
        self.grads.push(None);
        Var(self.values.len() - 1)
    }

    fn push(&mut self, op: &'static str, t: Tensor, parents: &[Var], back: BackFn) -> Result<Var, TensorError> {
        if t.data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op });
        }
        let requires = parents.iter().any(|p| self.requires[p.0]);
        self.values.push(t);
        self.backs.push(if requires { Some(back) } else { None });
        self.requires.push(requires);
        self.grads.push(None);
        Ok(Var(self.values.len() - 1))
    }

    /// Constant input (no gradient).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push_leaf(t, false)
    }

    /// Input that collects a gradient.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push_leaf(t, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.push_leaf(store.value(id).clone(), true);
        self.params.push((v.0, store.uid, id));
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let t = &self.values[loss.0];
        if t.len() != 1 {
            return Err(TensorError::NotScalar(t.shape.clone()));
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            if let Some(back) = &self.backs[i] {
                for (p, contrib) in back(&self.values, &g) {
                    if !self.requires[p] {
                        continue;
                    }
                    match &mut self.grads[p] {
                        Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                        slot => *slot = Some(contrib),
                    }
                }
            }
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        let (sa, sb) = (&self.values[a.0].shape, &self.values[b.0].shape);
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn map_unary(
        &mut self,
        op: &'static str,
        x: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Result<Var, TensorError> {
        let xt = &self.values[x.0];
        let out: Vec<f64> = xt.data.iter().map(|&v| f(v)).collect();
        let t = Tensor { shape: xt.shape.clone(), data: out.clone() };
        let xi = x.0;
        self.push(
            op,
            t,
            &[x],
            Box::new(move |vals, g| {
                let xv = &vals[xi].data;
                vec![(xi, g.iter().zip(xv).zip(&out).map(|((&g, &x), &y)| g * df(x, y)).collect())]
            }),
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.map_unary("relu", x, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var, TensorError> {
        self.map_unary(
            "leaky_relu",
            x,
            move |v| if v > 0.0 { v } else { slope * v },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        self.map_unary("sigmoid", x, |v| 1.0 / (1.0 + (-v).exp()), |_, y| y * (1.0 - y))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, TensorError> {
        self.map_unary("exp", x, f64::exp, |_, y| y)
    }

    pub fn ln(&mut self, x: Var) -> Result<Var, TensorError> {
        self.map_unary("ln", x, f64::ln, |x, _| 1.0 / x)
    }

    /// Clamp with zero gradient outside `[lo, hi]`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var, TensorError> {
        self.map_unary("clamp", x, move |v| v.clamp(lo, hi), move |x, _| if x > lo && x < hi { 1.0 } else { 0.0 })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, TensorError> {
        self.map_unary("scale", x, move |v| c * v, move |_, _| c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var, TensorError> {
        self.map_unary("add_scalar", x, move |v| v + c, |_, _| 1.0)
    }

    /// `ln(clamp(p, PROB_FLOOR, 1 - PROB_FLOOR))`.
    pub fn log_prob(&mut self, p: Var) -> Result<Var, TensorError> {
        let c = self.clamp(p, PROB_FLOOR, 1.0 - PROB_FLOOR)?;
        self.ln(c)
    }

    /// `ln(1 - clamp(p, PROB_FLOOR, 1 - PROB_FLOOR))`.
    pub fn log_one_minus_prob(&mut self, p: Var) -> Result<Var, TensorError> {
        let c = self.clamp(p, PROB_FLOOR, 1.0 - PROB_FLOOR)?;
        let neg = self.scale(c, -1.0)?;
        let q = self.add_scalar(neg, 1.0)?;
        self.ln(q)
    }

    fn zip_binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        da: impl Fn(f64, f64) -> f64 + 'static,
        db: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Result<Var, TensorError> {
        self.same_shape(op, a, b)?;
        let (at, bt) = (&self.values[a.0], &self.values[b.0]);
        let data = at.data.iter().zip(&bt.data).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor { shape: at.shape.clone(), data };
        let (ai, bi) = (a.0, b.0);
        self.push(
            op,
            t,
            &[a, b],
            Box::new(move |vals, g| {
                let (x, y) = (&vals[ai].data, &vals[bi].data);
                let ga = g.iter().zip(x.iter().zip(y)).map(|(&g, (&x, &y))| g * da(x, y)).collect();
                let gb = g.iter().zip(x.iter().zip(y)).map(|(&g, (&x, &y))| g * db(x, y)).collect();
                vec![(ai, ga), (bi, gb)]
            }),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_binary("add", a, b, |x, y| x + y, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_binary("sub", a, b, |x, y| x - y, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_binary("mul", a, b, |x, y| x * y, |_, y| y, |x, _| x)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let xt = &self.values[x.0];
        let n = xt.len();
        let t = Tensor::scalar(xt.data.iter().sum());
        let xi = x.0;
        self.push("sum", t, &[x], Box::new(move |_, g| vec![(xi, vec![g[0]; n])]))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, TensorError> {
        let n = self.values[x.0].len() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Adds scalar nodes (each of length 1).
    pub fn add_scalars(&mut self, terms: &[Var]) -> Result<Var, TensorError> {
        let mut acc = *terms.first().ok_or_else(|| shape_err("add_scalars", "no terms"))?;
        for &t in &terms[1..] {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let t = self.values[x.0].clone().reshape(shape)?;
        let xi = x.0;
        self.push("reshape", t, &[x], Box::new(move |_, g| vec![(xi, g.to_vec())]))
    }

    /// `[M,K] x [K,N] -> [M,N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (at, bt) = (&self.values[a.0], &self.values[b.0]);
        if at.shape.len() != 2 || bt.shape.len() != 2 || at.shape[1] != bt.shape[0] {
            return Err(shape_err("matmul", format!("{:?} x {:?}", at.shape, bt.shape)));
        }
        let (m, k, n) = (at.shape[0], at.shape[1], bt.shape[1]);
        let out = matmul_raw(&at.data, &bt.data, m, k, n);
        let (ai, bi) = (a.0, b.0);
        self.push(
            "matmul",
            Tensor { shape: vec![m, n], data: out },
            &[a, b],
            Box::new(move |vals, g| {
                let (a, b) = (&vals[ai].data, &vals[bi].data);
                let mut ga = vec![0.0; m * k];
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g[i * n + j] * b[p * n + j];
                            gb[p * n + j] += a[i * k + p] * g[i * n + j];
                        }
                        ga[i * k + p] = s;
                    }
                }
                vec![(ai, ga), (bi, gb)]
            }),
        )
    }

    /// `x [N,I]`, `w [O,I]`, `b [O]` -> `x wᵀ + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let (xt, wt, bt) = (&self.values[x.0], &self.values[w.0], &self.values[b.0]);
        if xt.shape.len() != 2 || wt.shape.len() != 2 || xt.shape[1] != wt.shape[1] || bt.shape != [wt.shape[0]] {
            return Err(shape_err("linear", format!("x {:?}, w {:?}, b {:?}", xt.shape, wt.shape, bt.shape)));
        }
        let (n, i_dim, o_dim) = (xt.shape[0], xt.shape[1], wt.shape[0]);
        let mut out = vec![0.0; n * o_dim];
        for r in 0..n {
            let xr = &xt.data[r * i_dim..(r + 1) * i_dim];
            for o in 0..o_dim {
                let wr = &wt.data[o * i_dim..(o + 1) * i_dim];
                out[r * o_dim + o] = bt.data[o] + dot(xr, wr);
            }
        }
        let (xi, wi, bi) = (x.0, w.0, b.0);
        self.push(
            "linear",
            Tensor { shape: vec![n, o_dim], data: out },
            &[x, w, b],
            Box::new(move |vals, g| {
                let (x, w) = (&vals[xi].data, &vals[wi].data);
                let mut gx = vec![0.0; n * i_dim];
                let mut gw = vec![0.0; o_dim * i_dim];
                let mut gb = vec![0.0; o_dim];
                for r in 0..n {
                    for o in 0..o_dim {
                        let go = g[r * o_dim + o];
                        gb[o] += go;
                        for c in 0..i_dim {
                            gx[r * i_dim + c] += go * w[o * i_dim + c];
                            gw[o * i_dim + c] += go * x[r * i_dim + c];
                        }
                    }
                }
                vec![(xi, gx), (wi, gw), (bi, gb)]
            }),
        )
    }

    /// Same-padded stride-1 1-D convolution. `x [N,C,T]`, `w [O,C,K]` (K odd), `b [O]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let (xt, wt, bt) = (&self.values[x.0], &self.values[w.0], &self.values[b.0]);
        if xt.shape.len() != 3 || wt.shape.len() != 3 || xt.shape[1] != wt.shape[1] || wt.shape[2] % 2 == 0 || bt.shape != [wt.shape[0]] {
            return Err(shape_err("conv1d", format!("x {:?}, w {:?}, b {:?}", xt.shape, wt.shape, bt.shape)));
        }
        let (n, c_in, t_len) = (xt.shape[0], xt.shape[1], xt.shape[2]);
        let (c_out, k_len) = (wt.shape[0], wt.shape[2]);
        let pad = k_len / 2;
        let mut out = vec![0.0; n * c_out * t_len];
        for s in 0..n {
            for o in 0..c_out {
                let y = &mut out[(s * c_out + o) * t_len..(s * c_out + o + 1) * t_len];
                y.iter_mut().for_each(|v| *v = bt.data[o]);
                for c in 0..c_in {
                    let xr = &xt.data[(s * c_in + c) * t_len..(s * c_in + c + 1) * t_len];
                    for k in 0..k_len {
                        let wv = wt.data[(o * c_in + c) * k_len + k];
                        let (lo, hi) = valid_range(k, pad, t_len);
                        for t in lo..hi {
                            y[t] += wv * xr[t + k - pad];
                        }
                    }
                }
            }
        }
        let (xi, wi, bi) = (x.0, w.0, b.0);
        self.push(
            "conv1d",
            Tensor { shape: vec![n, c_out, t_len], data: out },
            &[x, w, b],
            Box::new(move |vals, g| {
                let (x, w) = (&vals[xi].data, &vals[wi].data);
                let mut gx = vec![0.0; x.len()];
                let mut gw = vec![0.0; w.len()];
                let mut gb = vec![0.0; c_out];
                for s in 0..n {
                    for o in 0..c_out {
                        let gy = &g[(s * c_out + o) * t_len..(s * c_out + o + 1) * t_len];
                        gb[o] += gy.iter().sum::<f64>();
                        for c in 0..c_in {
                            let base = (s * c_in + c) * t_len;
                            for k in 0..k_len {
                                let wk = (o * c_in + c) * k_len + k;
                                let wv = w[wk];
                                let (lo, hi) = valid_range(k, pad, t_len);
                                let mut acc = 0.0;
                                for t in lo..hi {
                                    let xi_ = base + t + k - pad;
                                    acc += gy[t] * x[xi_];
                                    gx[xi_] += gy[t] * wv;
                                }
                                gw[wk] += acc;
                            }
                        }
                    }
                }
                vec![(xi, gx), (wi, gw), (bi, gb)]
            }),
        )
    }

    /// Same-padded stride-1 2-D convolution. `x [N,C,H,W]`, `w [O,C,KH,KW]` (odd kernels), `b [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let (xt, wt, bt) = (&self.values[x.0], &self.values[w.0], &self.values[b.0]);
        if xt.shape.len() != 4
            || wt.shape.len() != 4
            || xt.shape[1] != wt.shape[1]
            || wt.shape[2] % 2 == 0
            || wt.shape[3] % 2 == 0
            || bt.shape != [wt.shape[0]]
        {
            return Err(shape_err("conv2d", format!("x {:?}, w {:?}, b {:?}", xt.shape, wt.shape, bt.shape)));
        }
        let (n, c_in, h, wd) = (xt.shape[0], xt.shape[1], xt.shape[2], xt.shape[3]);
        let (c_out, kh, kw) = (wt.shape[0], wt.shape[2], wt.shape[3]);
        let (ph, pw) = (kh / 2, kw / 2);
        let plane = h * wd;
        let mut out = vec![0.0; n * c_out * plane];
        for s in 0..n {
            for o in 0..c_out {
                let y = &mut out[(s * c_out + o) * plane..(s * c_out + o + 1) * plane];
                y.iter_mut().for_each(|v| *v = bt.data[o]);
                for c in 0..c_in {
                    let xp = &xt.data[(s * c_in + c) * plane..(s * c_in + c + 1) * plane];
                    for i in 0..kh {
                        let (rlo, rhi) = valid_range(i, ph, h);
                        for j in 0..kw {
                            let wv = wt.data[((o * c_in + c) * kh + i) * kw + j];
                            let (clo, chi) = valid_range(j, pw, wd);
                            for r in rlo..rhi {
                                let yr = &mut y[r * wd..(r + 1) * wd];
                                let xr = &xp[(r + i - ph) * wd..(r + i - ph + 1) * wd];
                                for col in clo..chi {
                                    yr[col] += wv * xr[col + j - pw];
                                }
                            }
                        }
                    }
                }
            }
        }
        let (xi, wi, bi) = (x.0, w.0, b.0);
        self.push(
            "conv2d",
            Tensor { shape: vec![n, c_out, h, wd], data: out },
            &[x, w, b],
            Box::new(move |vals, g| {
                let (x, w) = (&vals[xi].data, &vals[wi].data);
                let mut gx = vec![0.0; x.len()];
                let mut gw = vec![0.0; w.len()];
                let mut gb = vec![0.0; c_out];
                for s in 0..n {
                    for o in 0..c_out {
                        let gy = &g[(s * c_out + o) * plane..(s * c_out + o + 1) * plane];
                        gb[o] += gy.iter().sum::<f64>();
                        for c in 0..c_in {
                            let base = (s * c_in + c) * plane;
                            for i in 0..kh {
                                let (rlo, rhi) = valid_range(i, ph, h);
                                for j in 0..kw {
                                    let wk = ((o * c_in + c) * kh + i) * kw + j;
                                    let wv = w[wk];
                                    let (clo, chi) = valid_range(j, pw, wd);
                                    let mut acc = 0.0;
                                    for r in rlo..rhi {
                                        let xrow = base + (r + i - ph) * wd;
                                        for col in clo..chi {
                                            let gv = gy[r * wd + col];
                                            acc += gv * x[xrow + col + j - pw];
                                            gx[xrow + col + j - pw] += gv * wv;
                                        }
                                    }
                                    gw[wk] += acc;
                                }
                            }
                        }
                    }
                }
                vec![(xi, gx), (wi, gw), (bi, gb)]
            }),
        )
    }

    /// 2x2 average pooling with stride 2 over the last two axes (odd edges dropped).
    pub fn avg_pool2d(&mut self, x: Var) -> Result<Var, TensorError> {
        let xt = &self.values[x.0];
        if xt.shape.len() != 4 || xt.shape[2] < 2 || xt.shape[3] < 2 {
            return Err(shape_err("avg_pool2d", format!("{:?}", xt.shape)));
        }
        let (n, c, h, w) = (xt.shape[0], xt.shape[1], xt.shape[2], xt.shape[3]);
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![0.0; n * c * oh * ow];
        for p in 0..n * c {
            for r in 0..oh {
                for q in 0..ow {
                    let at = |dr: usize, dq: usize| xt.data[p * h * w + (2 * r + dr) * w + 2 * q + dq];
                    out[p * oh * ow + r * ow + q] = 0.25 * (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1));
                }
            }
        }
        let xi = x.0;
        let len = xt.len();
        self.push(
            "avg_pool2d",
            Tensor { shape: vec![n, c, oh, ow], data: out },
            &[x],
            Box::new(move |_, g| {
                let mut gx = vec![0.0; len];
                for p in 0..n * c {
                    for r in 0..oh {
                        for q in 0..ow {
                            let gv = 0.25 * g[p * oh * ow + r * ow + q];
                            for (dr, dq) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                gx[p * h * w + (2 * r + dr) * w + 2 * q + dq] += gv;
                            }
                        }
                    }
                }
                vec![(xi, gx)]
            }),
        )
    }

    /// Averages over every axis after the first `keep` axes.
    pub fn mean_trailing(&mut self, x: Var, keep: usize) -> Result<Var, TensorError> {
        let xt = &self.values[x.0];
        if keep == 0 || keep >= xt.shape.len() {
            return Err(shape_err("mean_trailing", format!("keep {keep} of {:?}", xt.shape)));
        }
        let outer: usize = xt.shape[..keep].iter().product();
        let inner = xt.len() / outer;
        let out = (0..outer).map(|o| xt.data[o * inner..(o + 1) * inner].iter().sum::<f64>() / inner as f64).collect();
        let xi = x.0;
        self.push(
            "mean_trailing",
            Tensor { shape: xt.shape[..keep].to_vec(), data: out },
            &[x],
            Box::new(move |_, g| {
                let mut gx = Vec::with_capacity(outer * inner);
                for &gv in g.iter().take(outer) {
                    gx.extend(std::iter::repeat_n(gv / inner as f64, inner));
                }
                vec![(xi, gx)]
            }),
        )
    }

    /// Per-(sample, channel) normalization over time. `x [N,C,T]`, eps inside the sqrt.
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Result<Var, TensorError> {
        let xt = &self.values[x.0];
        if xt.shape.len() != 3 {
            return Err(shape_err("instance_norm", format!("expected [N,C,T], got {:?}", xt.shape)));
        }
        let t_len = xt.shape[2];
        if t_len < 2 {
            return Err(TensorError::TooShort(t_len));
        }
        let rows = xt.len() / t_len;
        let mut out = vec![0.0; xt.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let xr = &xt.data[r * t_len..(r + 1) * t_len];
            let mu = xr.iter().sum::<f64>() / t_len as f64;
            let var = xr.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / t_len as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for (o, v) in out[r * t_len..(r + 1) * t_len].iter_mut().zip(xr) {
                *o = (v - mu) * is;
            }
        }
        let xhat = out.clone();
        let xi = x.0;
        self.push(
            "instance_norm",
            Tensor { shape: xt.shape.clone(), data: out },
            &[x],
            Box::new(move |_, g| {
                let mut gx = vec![0.0; g.len()];
                let tf = t_len as f64;
                for r in 0..rows {
                    let gr = &g[r * t_len..(r + 1) * t_len];
                    let xh = &xhat[r * t_len..(r + 1) * t_len];
                    let mg = gr.iter().sum::<f64>() / tf;
                    let mgx = dot(gr, xh) / tf;
                    for t in 0..t_len {
                        gx[r * t_len + t] = inv_std[r] * (gr[t] - mg - xh[t] * mgx);
                    }
                }
                vec![(xi, gx)]
            }),
        )
    }

    /// `x [N,C,...] * gamma[N,C] + beta[N,C]`, broadcast over trailing axes.
    pub fn scale_shift_channels(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, TensorError> {
        let (xt, gt, bt) = (&self.values[x.0], &self.values[gamma.0], &self.values[beta.0]);
        if xt.shape.len() < 3 || gt.shape != xt.shape[..2] || bt.shape != xt.shape[..2] {
            return Err(shape_err("scale_shift_channels", format!("x {:?}, gamma {:?}, beta {:?}", xt.shape, gt.shape, bt.shape)));
        }
        let rows = gt.len();
        let inner = xt.len() / rows;
        let mut out = vec![0.0; xt.len()];
        for r in 0..rows {
            for i in 0..inner {
                out[r * inner + i] = xt.data[r * inner + i] * gt.data[r] + bt.data[r];
            }
        }
        let (xi, gi, bi) = (x.0, gamma.0, beta.0);
        self.push(
            "scale_shift_channels",
            Tensor { shape: xt.shape.clone(), data: out },
            &[x, gamma, beta],
            Box::new(move |vals, g| {
                let (x, gam) = (&vals[xi].data, &vals[gi].data);
                let mut gx = vec![0.0; x.len()];
                let mut gg = vec![0.0; rows];
                let mut gb = vec![0.0; rows];
                for r in 0..rows {
                    for i in 0..inner {
                        let k = r * inner + i;
                        gx[k] = g[k] * gam[r];
                        gg[r] += g[k] * x[k];
                        gb[r] += g[k];
                    }
                }
                vec![(xi, gx), (gi, gg), (bi, gb)]
            }),
        )
    }

    /// Adaptive instance normalization: `instance_norm(x)` scaled by `gamma` and shifted by `beta` per channel.
    pub fn ada_in(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, TensorError> {
        let xs = self.values[x.0].shape.clone();
        if xs.len() != 3 || self.values[gamma.0].shape != xs[..2] || self.values[beta.0].shape != xs[..2] {
            return Err(shape_err(
                "ada_in",
                format!("x {:?}, gamma {:?}, beta {:?}", xs, self.values[gamma.0].shape, self.values[beta.0].shape),
            ));
        }
        let normed = self.instance_norm(x, DEFAULT_NORM_EPS)?;
        self.scale_shift_channels(normed, gamma, beta)
    }

    /// Gathers rows of a `[K,D]` table.
    pub fn rows(&mut self, table: Var, idx: &[usize]) -> Result<Var, TensorError> {
        let tt = &self.values[table.0];
        if tt.shape.len() != 2 || idx.is_empty() {
            return Err(shape_err("rows", format!("table {:?}, {} indices", tt.shape, idx.len())));
        }
        let (k, d) = (tt.shape[0], tt.shape[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= k) {
            return Err(TensorError::Label { label: bad, classes: k });
        }
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            out.extend_from_slice(&tt.data[i * d..(i + 1) * d]);
        }
        let idx = idx.to_vec();
        let ti = table.0;
        self.push(
            "rows",
            Tensor { shape: vec![idx.len(), d], data: out },
            &[table],
            Box::new(move |_, g| {
                let mut gt = vec![0.0; k * d];
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..d {
                        gt[i * d + j] += g[r * d + j];
                    }
                }
                vec![(ti, gt)]
            }),
        )
    }

    /// Mean absolute difference.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("l1_loss", a, b)?;
        let (at, bt) = (&self.values[a.0], &self.values[b.0]);
        let n = at.len() as f64;
        let loss = at.data.iter().zip(&bt.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / n;
        let (ai, bi) = (a.0, b.0);
        self.push(
            "l1_loss",
            Tensor::scalar(loss),
            &[a, b],
            Box::new(move |vals, g| {
                let s: Vec<f64> =
                    vals[ai].data.iter().zip(&vals[bi].data).map(|(x, y)| g[0] * sign(x - y) / n).collect();
                let neg = s.iter().map(|v| -v).collect();
                vec![(ai, s), (bi, neg)]
            }),
        )
    }

    /// Mean of `-log softmax(logits)[label]` over rows. `logits [N,K]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, TensorError> {
        let lt = &self.values[logits.0];
        if lt.shape.len() != 2 || lt.shape[0] != labels.len() {
            return Err(shape_err("cross_entropy", format!("logits {:?}, {} labels", lt.shape, labels.len())));
        }
        let (n, k) = (lt.shape[0], lt.shape[1]);
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(TensorError::Label { label: bad, classes: k });
        }
        let probs = softmax_rows(&lt.data, n, k);
        let loss = labels.iter().enumerate().map(|(r, &y)| -log_softmax_at(&lt.data[r * k..(r + 1) * k], y)).sum::<f64>()
            / n as f64;
        let labels = labels.to_vec();
        let li = logits.0;
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            &[logits],
            Box::new(move |_, g| {
                let mut gl = probs.clone();
                for (r, &y) in labels.iter().enumerate() {
                    gl[r * k + y] -= 1.0;
                }
                gl.iter_mut().for_each(|v| *v *= g[0] / n as f64);
                vec![(li, gl)]
            }),
        )
    }

    /// `0.5 Σ (exp(logvar) + mu² − 1 − logvar)` summed over all non-batch axes, mean over the batch axis.
    pub fn kl_standard_normal(&mut self, mu: Var, logvar: Var) -> Result<Var, TensorError> {
        self.same_shape("kl_standard_normal", mu, logvar)?;
        let (mt, lt) = (&self.values[mu.0], &self.values[logvar.0]);
        let batch = mt.shape[0] as f64;
        let kl = mt.data.iter().zip(&lt.data).map(|(m, l)| 0.5 * (l.exp() + m * m - 1.0 - l)).sum::<f64>() / batch;
        let (mi, li) = (mu.0, logvar.0);
        self.push(
            "kl_standard_normal",
            Tensor::scalar(kl),
            &[mu, logvar],
            Box::new(move |vals, g| {
                let gm = vals[mi].data.iter().map(|m| g[0] * m / batch).collect();
                let gl = vals[li].data.iter().map(|l| g[0] * 0.5 * (l.exp() - 1.0) / batch).collect();
                vec![(mi, gm), (li, gl)]
            }),
        )
    }

    /// `mu + exp(0.5 logvar) * eps` with seeded standard-normal `eps`.
    pub fn reparameterize(&mut self, mu: Var, logvar: Var, seed: u64) -> Result<Var, TensorError> {
        self.same_shape("reparameterize", mu, logvar)?;
        let (mt, lt) = (&self.values[mu.0], &self.values[logvar.0]);
        let noise = Tensor::randn(&mt.shape, &mut seed::derived_rng(seed, "reparameterize", 0)).data;
        let out = mt.data.iter().zip(&lt.data).zip(&noise).map(|((m, l), e)| m + (0.5 * l).exp() * e).collect();
        let (mi, li) = (mu.0, logvar.0);
        self.push(
            "reparameterize",
            Tensor { shape: mt.shape.clone(), data: out },
            &[mu, logvar],
            Box::new(move |vals, g| {
                let gl = vals[li].data.iter().zip(&noise).zip(g).map(|((l, e), g)| g * 0.5 * (0.5 * l).exp() * e).collect();
                vec![(mi, g.to_vec()), (li, gl)]
            }),
        )
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Output positions `t` for which `t + k - pad` lands inside `[0, len)`.
fn valid_range(k: usize, pad: usize, len: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k);
    let hi = (len + pad).saturating_sub(k).min(len);
    (lo, hi.max(lo))
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            for j in 0..n {
                out[i * n + j] += av * b[p * n + j];
            }
        }
    }
    out
}

pub(crate) fn softmax_rows(logits: &[f64], n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * k];
    for r in 0..n {
        let row = &logits[r * k..(r + 1) * k];
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        for j in 0..k {
            out[r * k + j] = (row[j] - m).exp() / z;
        }
    }
    out
}

fn log_softmax_at(row: &[f64], y: usize) -> f64 {
    let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    row[y] - lse
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone)]
struct Param {
    name: String,
    value: Tensor,
    grad: Option<Vec<f64>>,
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Named learnable tensors with their gradients and Adam moments.
///
/// Each store carries an identity (shared by its clones) so one graph can mix
/// parameters from several stores.
#[derive(Clone)]
pub struct ParamStore {
    uid: u64,
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
    step: u64,
}

static NEXT_STORE_UID: AtomicU64 = AtomicU64::new(0);

impl Default for ParamStore {
    fn default() -> Self {
        Self { uid: NEXT_STORE_UID.fetch_add(1, Ordering::Relaxed), params: Vec::new(), by_name: HashMap::new(), step: 0 }
    }
}

/// Anything that owns a [`ParamStore`].
pub trait Parameterized {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId, TensorError> {
        if self.by_name.contains_key(name) {
            return Err(TensorError::DuplicateName(name.to_string()));
        }
        let n = value.len();
        self.params.push(Param { name: name.to_string(), value, grad: None, m: vec![0.0; n], v: vec![0.0; n] });
        self.by_name.insert(name.to_string(), self.params.len() - 1);
        Ok(ParamId(self.params.len() - 1))
    }

    /// Kaiming-uniform weights, `U(-b, b)` with `b = sqrt(6 / fan_in)`.
    pub fn kaiming<R: Rng>(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut R) -> Result<ParamId, TensorError> {
        let bound = (6.0 / fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId, TensorError> {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn id(&self, name: &str) -> Result<ParamId, TensorError> {
        self.by_name.get(name).map(|&i| ParamId(i)).ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<(), TensorError> {
        let p = &mut self.params[id.0];
        if value.shape != p.value.shape {
            return Err(shape_err("set_value", format!("`{}` is {:?}, got {:?}", p.name, p.value.shape, value.shape)));
        }
        p.value = value;
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn grad(&self, id: ParamId) -> Option<&[f64]> {
        self.params[id.0].grad.as_deref()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn n_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Adds the gradients of every parameter used in `graph`. Parameters the
    /// loss did not reach get an explicit zero gradient.
    pub fn accumulate_grads(&mut self, graph: &Graph) {
        for &(node, uid, id) in &graph.params {
            if uid != self.uid {
                continue;
            }
            let p = &mut self.params[id.0];
            let acc = p.grad.get_or_insert_with(|| vec![0.0; p.value.len()]);
            if let Some(g) = graph.grad(Var(node)) {
                acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
    }

    /// Clears gradients and Adam moments (values are kept).
    pub fn reset_optimizer(&mut self) {
        self.step = 0;
        for p in &mut self.params {
            p.grad = None;
            p.m.iter_mut().for_each(|v| *v = 0.0);
            p.v.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// One Adam update over every parameter. Each must have a gradient.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<(), TensorError> {
        if let Some(p) = self.params.iter().find(|p| p.grad.is_none()) {
            return Err(TensorError::MissingGrad(p.name.clone()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for p in &mut self.params {
            let g = p.grad.as_ref().expect("checked above");
            for i in 0..g.len() {
                p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g[i];
                p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let mh = p.m[i] / c1;
                let vh = p.v[i] / c2;
                p.value.data[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W, metadata: &str) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        write_str(&mut w, metadata)?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for p in &self.params {
            write_str(&mut w, &p.name)?;
            w.write_all(&(p.value.shape.len() as u32).to_le_bytes())?;
            for &d in &p.value.shape {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for &v in &p.value.data {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Returns the store and the metadata string written alongside it.
    pub fn read_from<R: Read>(mut r: R) -> Result<(Self, String), TensorError> {
        let bad = |m: &str| TensorError::Checkpoint(m.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
        }
        let metadata = read_str(&mut r)?;
        let count = read_u32(&mut r)?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name = read_str(&mut r)?;
            let ndim = read_u32(&mut r)? as usize;
            if ndim == 0 || ndim > 8 {
                return Err(bad("bad rank"));
            }
            let shape = (0..ndim).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let mut buf = vec![0u8; n * 4];
            r.read_exact(&mut buf).map_err(|_| bad("truncated tensor data"))?;
            let data = buf.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))).collect();
            store.add(&name, Tensor::new(shape, data)?)?;
        }
        Ok((store, metadata))
    }

    pub fn save(&self, path: &Path, metadata: &str) -> Result<(), TensorError> {
        let io = |source| TensorError::Io { path: path.display().to_string(), source };
        let f = std::fs::File::create(path).map_err(io)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w, metadata).map_err(io)?;
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<(Self, String), TensorError> {
        let f = std::fs::File::open(path).map_err(|source| TensorError::Io { path: path.display().to_string(), source })?;
        Self::read_from(std::io::BufReader::new(f))
    }

    /// Copies values from `other` for every name both stores share with equal shape.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<(), TensorError> {
        for p in &mut self.params {
            let src = other.id(&p.name)?;
            let v = other.value(src);
            if v.shape != p.value.shape {
                return Err(shape_err("load_values_from", format!("`{}`: {:?} vs {:?}", p.name, p.value.shape, v.shape)));
            }
            p.value = v.clone();
        }
        Ok(())
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, TensorError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| TensorError::Checkpoint("truncated".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String, TensorError> {
    let n = read_u32(r)? as usize;
    if n > 1 << 24 {
        return Err(TensorError::Checkpoint("string too long".into()));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b).map_err(|_| TensorError::Checkpoint("truncated".into()))?;
    String::from_utf8(b).map_err(|_| TensorError::Checkpoint("string is not utf-8".into()))
}

const GRAD_CHECK_FLOOR: f64 = 1e-6;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(GRAD_CHECK_FLOOR)
}

/// Max relative error between the backward-pass gradient of `f` at `x` and
/// central differences with step `h`. Relative error is
/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, Var) -> Result<Var, TensorError>,
{
    let mut g = Graph::new();
    let v = g.leaf(x.clone());
    let out = f(&mut g, v)?;
    g.backward(out)?;
    let analytic = g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.len()]);
    let eval = |t: Tensor| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let v = g.leaf(t);
        let out = f(&mut g, v)?;
        Ok(g.value(out).item())
    };
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data[i] += h;
        let mut minus = x.clone();
        minus.data[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    Ok(worst)
}

/// Like [`grad_check`] but over parameters. At most `per_param` evenly spaced
/// entries of each parameter are probed.
pub fn grad_check_params<F>(store: &mut ParamStore, f: F, h: f64, per_param: usize) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var, TensorError>,
{
    store.zero_grad();
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    g.backward(out)?;
    store.accumulate_grads(&g);
    let eval = |s: &ParamStore| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let out = f(&mut g, s)?;
        Ok(g.value(out).item())
    };
    let mut worst = 0.0f64;
    for pi in 0..store.params.len() {
        let n = store.params[pi].value.len();
        let stride = n.div_ceil(per_param.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let analytic = store.params[pi].grad.as_ref().map_or(0.0, |g| g[i]);
            let orig = store.params[pi].value.data[i];
            store.params[pi].value.data[i] = orig + h;
            let fp = eval(store)?;
            store.params[pi].value.data[i] = orig - h;
            let fm = eval(store)?;
            store.params[pi].value.data[i] = orig;
            worst = worst.max(rel_err(analytic, (fp - fm) / (2.0 * h)));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn randt(shape: &[usize], s: u64) -> Tensor {
        Tensor::randn(shape, &mut rng(s))
    }

    #[test]
    fn relu_example() {
        let mut g = Graph::new();
        let x = g.input(t(&[3], &[-1.0, 0.0, 2.0]));
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn identity_conv_and_matmul() {
        let x = randt(&[2, 3, 7], 1);
        let mut w = vec![0.0; 3 * 3 * 3];
        for c in 0..3 {
            w[(c * 3 + c) * 3 + 1] = 1.0;
        }
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let wv = g.input(t(&[3, 3, 3], &w));
        let bv = g.input(Tensor::zeros(&[3]));
        let y = g.conv1d(xv, wv, bv).unwrap();
        assert_eq!(g.value(y), &x);

        let a = randt(&[4, 5], 2);
        let mut eye = vec![0.0; 25];
        (0..5).for_each(|i| eye[i * 6] = 1.0);
        let av = g.input(a.clone());
        let iv = g.input(t(&[5, 5], &eye));
        let p = g.matmul(av, iv).unwrap();
        assert_eq!(g.value(p), &a);

        let bad = g.input(Tensor::zeros(&[4, 4]));
        assert!(matches!(g.matmul(av, bad), Err(TensorError::Shape { .. })));
    }

    #[test]
    fn instance_norm_examples() {
        let mut g = Graph::new();
        let c = g.input(Tensor::full(&[1, 1, 5], 3.0));
        let y = g.instance_norm(c, DEFAULT_NORM_EPS).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));

        let two = g.input(t(&[1, 1, 2], &[1.0, 3.0]));
        let y = g.instance_norm(two, DEFAULT_NORM_EPS).unwrap();
        let e = 1.0 / (1.0 + DEFAULT_NORM_EPS).sqrt();
        assert!((g.value(y).data()[0] + e).abs() < 1e-12 && (g.value(y).data()[1] - e).abs() < 1e-12);

        let r = g.input(randt(&[3, 4, 32], 5));
        let y = g.instance_norm(r, DEFAULT_NORM_EPS).unwrap();
        for row in g.value(y).data().chunks(32) {
            let mu = row.iter().sum::<f64>() / 32.0;
            let sd = (row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 32.0).sqrt();
            assert!(mu.abs() < 1e-5 && (sd - 1.0).abs() < 1e-3);
        }
        let short = g.input(Tensor::zeros(&[1, 1, 1]));
        assert!(matches!(g.instance_norm(short, 1e-5), Err(TensorError::TooShort(1))));
    }

    #[test]
    fn ada_in_examples() {
        let x = randt(&[2, 3, 16], 9);
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let ones = g.input(Tensor::full(&[2, 3], 1.0));
        let zeros = g.input(Tensor::zeros(&[2, 3]));
        let a = g.ada_in(xv, ones, zeros).unwrap();
        let n = g.instance_norm(xv, DEFAULT_NORM_EPS).unwrap();
        assert_eq!(g.value(a), g.value(n));

        let beta = g.input(randt(&[2, 3], 10));
        let a = g.ada_in(xv, zeros, beta).unwrap();
        for (r, row) in g.value(a).data().chunks(16).enumerate() {
            assert!(row.iter().all(|&v| v == g.value(beta).data()[r]));
        }

        let two = g.input(Tensor::full(&[2, 3], 2.0));
        let three = g.input(Tensor::full(&[2, 3], 3.0));
        let a = g.ada_in(xv, two, three).unwrap();
        for row in g.value(a).data().chunks(16) {
            let mu = row.iter().sum::<f64>() / 16.0;
            let sd = (row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 16.0).sqrt();
            assert!((mu - 3.0).abs() < 1e-9 && (sd - 2.0).abs() < 1e-3);
        }
        let wrong = g.input(Tensor::zeros(&[3, 2]));
        assert!(g.ada_in(xv, wrong, zeros).is_err());
    }

    #[test]
    fn loss_examples() {
        let mut g = Graph::new();
        let a = g.input(t(&[2], &[0.0, 0.0]));
        let b = g.input(t(&[2], &[1.0, -1.0]));
        let l = g.l1_loss(a, b).unwrap();
        assert_eq!(g.value(l).item(), 1.0);
        let l = g.l1_loss(a, a).unwrap();
        assert_eq!(g.value(l).item(), 0.0);

        let u = g.input(Tensor::zeros(&[3, 2]));
        let ce = g.cross_entropy(u, &[0, 1, 1]).unwrap();
        assert!((g.value(ce).item() - 2f64.ln()).abs() < 1e-12);
        let big = g.input(t(&[1, 2], &[1e3, 0.0]));
        let ce = g.cross_entropy(big, &[0]).unwrap();
        assert!(g.value(ce).item() < 1e-12);
        assert!(matches!(g.cross_entropy(big, &[2]), Err(TensorError::Label { label: 2, classes: 2 })));

        let z = g.input(Tensor::zeros(&[1, 1]));
        let kl = g.kl_standard_normal(z, z).unwrap();
        assert_eq!(g.value(kl).item(), 0.0);
        let one = g.input(Tensor::full(&[1, 1], 1.0));
        let kl = g.kl_standard_normal(one, z).unwrap();
        assert!((g.value(kl).item() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn losses_match_brute_force() {
        let (a, b) = (randt(&[3, 5], 20), randt(&[3, 5], 21));
        let mut g = Graph::new();
        let (av, bv) = (g.input(a.clone()), g.input(b.clone()));
        let l = g.l1_loss(av, bv).unwrap();
        let brute = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / 15.0;
        assert!((g.value(l).item() - brute).abs() < 1e-12);

        let labels = [4, 0, 2];
        let ce = g.cross_entropy(av, &labels).unwrap();
        let mut brute = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = &a.data()[r * 5..(r + 1) * 5];
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            brute -= (row[y].exp() / z).ln();
        }
        assert!((g.value(ce).item() - brute / 3.0).abs() < 1e-12);

        let kl = g.kl_standard_normal(av, bv).unwrap();
        let brute: f64 = a.data().iter().zip(b.data()).map(|(m, l)| 0.5 * (l.exp() + m * m - 1.0 - l)).sum::<f64>() / 3.0;
        assert!((g.value(kl).item() - brute).abs() < 1e-12);
        assert!(g.value(kl).item() >= 0.0);
    }

    #[test]
    fn reparameterize_examples() {
        let mu = randt(&[4, 3], 30);
        let mut g = Graph::new();
        let m = g.input(mu.clone());
        let tiny = g.input(Tensor::full(&[4, 3], -40.0));
        let z = g.reparameterize(m, tiny, 1).unwrap();
        assert!(g.value(z).data().iter().zip(mu.data()).all(|(a, b)| (a - b).abs() < 1e-8));
        let z2 = g.reparameterize(m, tiny, 1).unwrap();
        assert_eq!(g.value(z), g.value(z2));

        let n = 10_000;
        let zero = g.input(Tensor::zeros(&[n, 1]));
        let z = g.reparameterize(zero, zero, 7).unwrap();
        let mean = g.value(z).data().iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn stores_sharing_a_graph_keep_their_own_grads() {
        let mut a = ParamStore::new();
        let mut b = ParamStore::new();
        let pa = a.add("w", Tensor::scalar(2.0)).unwrap();
        let pb = b.add("w", Tensor::scalar(3.0)).unwrap();
        let mut g = Graph::new();
        let (va, vb) = (g.param(&a, pa), g.param(&b, pb));
        let vb2 = g.mul(vb, vb).unwrap();
        let loss = g.add(va, vb2).unwrap();
        g.backward(loss).unwrap();
        a.accumulate_grads(&g);
        b.accumulate_grads(&g);
        assert_eq!(a.grad(pa).unwrap(), &[1.0]);
        assert_eq!(b.grad(pb).unwrap(), &[6.0]);
    }

    #[test]
    fn adam_examples() {
        let mut s = ParamStore::new();
        let p = s.add("p", Tensor::scalar(1.0)).unwrap();
        assert!(matches!(s.adam_step(&AdamConfig::default()), Err(TensorError::MissingGrad(_))));

        let mut g = Graph::new();
        let pv = g.param(&s, p);
        let zero = g.scale(pv, 0.0).unwrap();
        g.backward(zero).unwrap();
        s.accumulate_grads(&g);
        s.adam_step(&AdamConfig::default()).unwrap();
        assert_eq!(s.value(p).item(), 1.0);

        let run = || {
            let mut s = ParamStore::new();
            let p = s.add("p", Tensor::scalar(1.0)).unwrap();
            let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
            for _ in 0..200 {
                s.zero_grad();
                let mut g = Graph::new();
                let pv = g.param(&s, p);
                let sq = g.mul(pv, pv).unwrap();
                g.backward(sq).unwrap();
                s.accumulate_grads(&g);
                s.adam_step(&cfg).unwrap();
            }
            s.value(p).item()
        };
        let a = run();
        assert!(a.abs() < 0.01, "{a}");
        assert_eq!(a.to_bits(), run().to_bits());
        assert!(matches!(s.add("p", Tensor::scalar(0.0)), Err(TensorError::DuplicateName(_))));
    }

    #[test]
    fn grad_check_square() {
        let x = randt(&[6], 40);
        let err = grad_check(
            |g, x| {
                let sq = g.mul(x, x)?;
                g.sum(sq)
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn every_op_passes_grad_check() {
        type Case = (&'static str, Vec<usize>, Box<dyn Fn(&mut Graph, Var) -> Result<Var, TensorError>>);
        let w1 = randt(&[4, 3, 3], 50);
        let w2 = randt(&[2, 3, 3, 3], 51);
        let lin = randt(&[5, 12], 52);
        let gamma = randt(&[2, 3], 53);
        let beta = randt(&[2, 3], 54);
        let other = randt(&[2, 3, 8], 55);
        let cases: Vec<Case> = vec![
            ("leaky_relu+sigmoid", vec![2, 3, 8], Box::new(|g, x| {
                let a = g.leaky_relu(x, 0.2)?;
                let s = g.sigmoid(a)?;
                g.sum(s)
            })),
            ("exp+ln", vec![2, 3, 8], Box::new(|g, x| {
                let e = g.exp(x)?;
                let p = g.add_scalar(e, 1.0)?;
                let l = g.ln(p)?;
                g.mean(l)
            })),
            ("conv1d", vec![2, 3, 8], Box::new(move |g, x| {
                let w = g.input(w1.clone());
                let b = g.input(Tensor::full(&[4], 0.1));
                let y = g.conv1d(x, w, b)?;
                let sq = g.mul(y, y)?;
                g.mean(sq)
            })),
            ("conv2d+pool", vec![1, 3, 6, 4], Box::new(move |g, x| {
                let w = g.input(w2.clone());
                let b = g.input(Tensor::full(&[2], 0.1));
                let y = g.conv2d(x, w, b)?;
                let p = g.avg_pool2d(y)?;
                let sq = g.mul(p, p)?;
                let m = g.mean_trailing(sq, 2)?;
                g.sum(m)
            })),
            ("linear+ce", vec![3, 12], Box::new(move |g, x| {
                let w = g.input(lin.clone());
                let b = g.input(Tensor::zeros(&[5]));
                let y = g.linear(x, w, b)?;
                g.cross_entropy(y, &[1, 4, 0])
            })),
            ("matmul", vec![3, 4], Box::new(|g, x| {
                let r = g.reshape(x, &[4, 3])?;
                let m = g.matmul(x, r)?;
                let sq = g.mul(m, m)?;
                g.sum(sq)
            })),
            ("instance_norm+ada_in", vec![2, 3, 8], Box::new(move |g, x| {
                let ga = g.input(gamma.clone());
                let be = g.input(beta.clone());
                let o = g.input(other.clone());
                let y = g.ada_in(x, ga, be)?;
                let p = g.mul(y, o)?;
                g.sum(p)
            })),
            ("l1", vec![2, 3, 8], Box::new(move |g, x| {
                let z = g.input(Tensor::zeros(&[2, 3, 8]));
                g.l1_loss(x, z)
            })),
            ("kl+reparameterize", vec![2, 4], Box::new(|g, x| {
                let half = g.scale(x, 0.5)?;
                let z = g.reparameterize(x, half, 3)?;
                let kl = g.kl_standard_normal(x, half)?;
                let zs = g.mul(z, z)?;
                let s = g.sum(zs)?;
                g.add(s, kl)
            })),
            ("log_prob", vec![5], Box::new(|g, x| {
                let p = g.sigmoid(x)?;
                let a = g.log_prob(p)?;
                let b = g.log_one_minus_prob(p)?;
                let s = g.add(a, b)?;
                g.sum(s)
            })),
            ("rows", vec![3, 2], Box::new(|g, x| {
                let r = g.rows(x, &[2, 0, 2])?;
                let sq = g.mul(r, r)?;
                g.sum(sq)
            })),
        ];
        for (i, (name, shape, f)) in cases.into_iter().enumerate() {
            let x = randt(&shape, 100 + i as u64);
            let err = grad_check(f, &x, 1e-5).unwrap();
            assert!(err < 1e-4, "{name}: {err}");
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut s = ParamStore::new();
        let mut r = rng(3);
        s.kaiming("conv.w", &[4, 3, 3], 9, &mut r).unwrap();
        s.zeros("conv.b", &[4]).unwrap();
        let mut buf = Vec::new();
        s.write_to(&mut buf, "{\"k\":1}").unwrap();
        let (back, meta) = ParamStore::read_from(&buf[..]).unwrap();
        assert_eq!(meta, "{\"k\":1}");
        for id in s.ids() {
            let other = back.id(s.name(id)).unwrap();
            let (a, b) = (s.value(id), back.value(other));
            assert_eq!(a.shape(), b.shape());
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() < 1e-6));
        }
        assert!(ParamStore::read_from(&buf[..10]).is_err());
        let mut wrong = buf.clone();
        wrong[0] = b'X';
        assert!(matches!(ParamStore::read_from(&wrong[..]), Err(TensorError::Checkpoint(_))));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }
}
