//! Dense f64 tensors and reverse-mode automatic differentiation.
//!
//! The tape is a Wengert list: operations are evaluated eagerly as the graph
//! is built, every intermediate is kept, and one reverse sweep per tape
//! produces gradients for all named parameters. The primitive set is exactly
//! what the radiance-field pipeline needs — an MLP (affine/relu/sigmoid/
//! softplus/concat), sinusoidal encodings (sin/cos of pi times x), and
//! per-ray compositing over contiguous sample segments (elementwise ops plus
//! segment cumsum/sum and row scaling). No broadcasting.

use crate::error::Error;
use crate::Result;
use std::collections::BTreeMap;

/// Row-major f64 tensor. Rank is 1 or 2 everywhere in this crate; scalars
/// are shape `[1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "Tensor::from_vec",
                format!("shape {:?} wants {} values, got {}", shape, n, data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.len(), 1);
        self.data[0]
    }

    /// Rows of a rank-2 tensor, or the length of a rank-1 tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a rank-2 tensor; 1 for rank-1.
    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1]
        } else {
            1
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Named parameter tensors, ordered by name so every iteration over the
/// store is deterministic.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn total_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::all_finite)
    }
}

/// Gradients keyed by parameter name.
pub type Gradients = BTreeMap<String, Tensor>;

/// Node handle on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    /// Leaf with no gradient.
    Constant,
    /// Leaf that receives a gradient under its name.
    Param(String),
    Affine { x: Var, w: Var, b: Var },
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Neg(Var),
    SinPi(Var),
    CosPi(Var),
    Add(Var, Var),
    Mul(Var, Var),
    ConcatCols(Var, Var),
    Sum(Var),
    Mse(Var, Var),
    SegmentCumsumExclusive { x: Var, seg: usize },
    SegmentSum { x: Var, seg: usize },
    ScaleRows { x: Var, s: Var },
    /// Bookkeeping only: same data, new shape.
    Reshape(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::Affine { .. } => "affine",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softplus(_) => "softplus",
            Op::Exp(_) => "exp",
            Op::Neg(_) => "neg",
            Op::SinPi(_) => "sin_pi",
            Op::CosPi(_) => "cos_pi",
            Op::Add(_, _) => "add",
            Op::Mul(_, _) => "mul",
            Op::ConcatCols(_, _) => "concat_cols",
            Op::Sum(_) => "sum",
            Op::Mse(_, _) => "mse",
            Op::SegmentCumsumExclusive { .. } => "segment_cumsum_exclusive",
            Op::SegmentSum { .. } => "segment_sum",
            Op::ScaleRows { .. } => "scale_rows",
            Op::Reshape(_) => "reshape",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
}

/// sin(pi * x) with the reduction `x mod 2` done exactly, so half-integer
/// arguments give exact results (sin of 0, 1/2, 1, 3/2 in turns is 0, 1, 0,
/// -1 bit-exactly).
pub fn sin_pi(x: f64) -> f64 {
    let r = x.rem_euclid(2.0);
    if r == 0.0 {
        0.0
    } else if r == 0.5 {
        1.0
    } else if r == 1.0 {
        0.0
    } else if r == 1.5 {
        -1.0
    } else {
        (std::f64::consts::PI * r).sin()
    }
}

/// cos(pi * x) with the same exact reduction as [`sin_pi`].
pub fn cos_pi(x: f64) -> f64 {
    let r = x.rem_euclid(2.0);
    if r == 0.0 {
        1.0
    } else if r == 0.5 {
        0.0
    } else if r == 1.0 {
        -1.0
    } else if r == 1.5 {
        0.0
    } else {
        (std::f64::consts::PI * r).cos()
    }
}

fn softplus(x: f64) -> f64 {
    // Stable in both tails.
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Eagerly evaluated operation tape.
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite {
                context: format!("tape node {} ({})", self.nodes.len(), op.name()),
            });
        }
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    fn shape_err(&self, op: &str, detail: String) -> Error {
        Error::shape(format!("tape node {} ({})", self.nodes.len(), op), detail)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(Op::Constant, value)
    }

    pub fn param(&mut self, name: &str, value: &Tensor) -> Result<Var> {
        self.push(Op::Param(name.to_string()), value.clone())
    }

    /// `x [m,k] . w [k,n] + b [n]`, computed row by row.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (m, k) = (xv.rows(), xv.cols());
        if wv.shape().len() != 2 || wv.rows() != k {
            return Err(self.shape_err(
                "affine",
                format!("x is [{},{}] but w is {:?}", m, k, wv.shape()),
            ));
        }
        let n = wv.cols();
        if bv.len() != n {
            return Err(self.shape_err(
                "affine",
                format!("w has {} outputs but b has {}", n, bv.len()),
            ));
        }
        let mut out = vec![0.0; m * n];
        let xd = xv.data();
        let wd = wv.data();
        let bd = bv.data();
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            row.copy_from_slice(bd);
            let xr = &xd[i * k..(i + 1) * k];
            for (kk, &xik) in xr.iter().enumerate() {
                let wr = &wd[kk * n..(kk + 1) * n];
                for (o, &wkj) in row.iter_mut().zip(wr.iter()) {
                    *o += xik * wkj;
                }
            }
        }
        self.push(Op::Affine { x, w, b }, Tensor::from_vec(vec![m, n], out)?)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let xv = self.value(x);
        let out = Tensor {
            shape: xv.shape.clone(),
            data: xv.data.iter().map(|&v| f(v)).collect(),
        };
        self.push(op, out)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| -v, Op::Neg(x))
    }

    pub fn sin_pi(&mut self, x: Var) -> Result<Var> {
        self.unary(x, sin_pi, Op::SinPi(x))
    }

    pub fn cos_pi(&mut self, x: Var) -> Result<Var> {
        self.unary(x, cos_pi, Op::CosPi(x))
    }

    fn binary_same_shape(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape != bv.shape {
            return Err(self.shape_err(
                op.name(),
                format!("{:?} vs {:?}", av.shape, bv.shape),
            ));
        }
        let out = Tensor {
            shape: av.shape.clone(),
            data: av
                .data
                .iter()
                .zip(bv.data.iter())
                .map(|(&x, &y)| f(x, y))
                .collect(),
        };
        self.push(op, out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Concatenate along columns: `[m,k1] ++ [m,k2] -> [m,k1+k2]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let m = av.rows();
        if bv.rows() != m {
            return Err(self.shape_err(
                "concat_cols",
                format!("{:?} vs {:?}", av.shape, bv.shape),
            ));
        }
        let (k1, k2) = (av.cols(), bv.cols());
        let mut out = Vec::with_capacity(m * (k1 + k2));
        for i in 0..m {
            out.extend_from_slice(&av.data[i * k1..(i + 1) * k1]);
            out.extend_from_slice(&bv.data[i * k2..(i + 1) * k2]);
        }
        self.push(
            Op::ConcatCols(a, b),
            Tensor::from_vec(vec![m, k1 + k2], out)?,
        )
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data.iter().sum();
        self.push(Op::Sum(x), Tensor::scalar(s))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape != bv.shape {
            return Err(self.shape_err(
                "mse",
                format!("{:?} vs {:?}", av.shape, bv.shape),
            ));
        }
        let n = av.len() as f64;
        let s: f64 = av
            .data
            .iter()
            .zip(bv.data.iter())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        self.push(Op::Mse(a, b), Tensor::scalar(s / n))
    }

    /// Exclusive prefix sum within each contiguous segment of length `seg`.
    pub fn segment_cumsum_exclusive(&mut self, x: Var, seg: usize) -> Result<Var> {
        let xv = self.value(x);
        if seg == 0 || xv.len() % seg != 0 || xv.shape.len() != 1 {
            return Err(self.shape_err(
                "segment_cumsum_exclusive",
                format!("shape {:?} not a multiple of segment {}", xv.shape, seg),
            ));
        }
        let mut out = vec![0.0; xv.len()];
        for (xs, os) in xv.data.chunks_exact(seg).zip(out.chunks_exact_mut(seg)) {
            let mut acc = 0.0;
            for (o, &v) in os.iter_mut().zip(xs.iter()) {
                *o = acc;
                acc += v;
            }
        }
        let shape = xv.shape.clone();
        self.push(
            Op::SegmentCumsumExclusive { x, seg },
            Tensor::from_vec(shape, out)?,
        )
    }

    /// Sum rows within each contiguous segment: `[s*b, c] -> [b, c]` (or the
    /// rank-1 analog).
    pub fn segment_sum(&mut self, x: Var, seg: usize) -> Result<Var> {
        let xv = self.value(x);
        let m = xv.rows();
        if seg == 0 || m % seg != 0 {
            return Err(self.shape_err(
                "segment_sum",
                format!("{} rows not a multiple of segment {}", m, seg),
            ));
        }
        let c = xv.cols();
        let b = m / seg;
        let mut out = vec![0.0; b * c];
        for (si, orow) in out.chunks_exact_mut(c).enumerate() {
            for r in 0..seg {
                let xrow = &xv.data[(si * seg + r) * c..(si * seg + r + 1) * c];
                for (o, &v) in orow.iter_mut().zip(xrow.iter()) {
                    *o += v;
                }
            }
        }
        let shape = if xv.shape.len() == 1 {
            vec![b]
        } else {
            vec![b, c]
        };
        self.push(Op::SegmentSum { x, seg }, Tensor::from_vec(shape, out)?)
    }

    /// Scale row `i` of `x [m,c]` by `s[i]`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(s));
        let m = xv.rows();
        if sv.shape.len() != 1 || sv.len() != m {
            return Err(self.shape_err(
                "scale_rows",
                format!("x {:?} vs s {:?}", xv.shape, sv.shape),
            ));
        }
        let c = xv.cols();
        let mut out = Vec::with_capacity(m * c);
        for (i, xrow) in xv.data.chunks_exact(c).enumerate() {
            let f = sv.data[i];
            out.extend(xrow.iter().map(|&v| v * f));
        }
        let shape = xv.shape.clone();
        self.push(Op::ScaleRows { x, s }, Tensor::from_vec(shape, out)?)
    }

    /// Same data, new shape. Element count must match.
    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let xv = self.value(x);
        if shape.iter().product::<usize>() != xv.len() {
            return Err(self.shape_err(
                "reshape",
                format!("{:?} -> {:?}", xv.shape, shape),
            ));
        }
        let out = Tensor {
            shape,
            data: xv.data.clone(),
        };
        self.push(Op::Reshape(x), out)
    }

    /// Reverse sweep from a scalar output seeded with 1.
    pub fn backward_scalar(&mut self, output: Var) -> Result<Gradients> {
        self.backward(output, &Tensor::scalar(1.0))
    }

    /// Reverse sweep from `output` with an explicit seed (same shape as the
    /// output). Returns a gradient for every parameter on the tape; params
    /// the output does not reach get zero tensors. One sweep per tape.
    pub fn backward(&mut self, output: Var, seed: &Tensor) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::Usage(
                "backward called before any forward computation".into(),
            ));
        }
        if self.backward_done {
            return Err(Error::Usage(
                "backward called twice on the same tape".into(),
            ));
        }
        if seed.shape() != self.value(output).shape() {
            return Err(Error::shape(
                "backward",
                format!(
                    "seed {:?} vs output {:?}",
                    seed.shape(),
                    self.value(output).shape()
                ),
            ));
        }
        self.backward_done = true;

        let mut adjoint: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adjoint[output.0] = Some(seed.clone());

        for idx in (0..=output.0).rev() {
            let g = match adjoint[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate_inputs(idx, &g, &mut adjoint);
            // Re-store param adjoints so they survive to collection below.
            if matches!(self.nodes[idx].op, Op::Param(_)) {
                adjoint[idx] = Some(g);
            }
        }

        let mut grads = Gradients::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Param(name) = &node.op {
                let g = adjoint[idx]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape.clone()));
                // The same parameter may appear as several leaves; fold them.
                match grads.get_mut(name) {
                    Some(acc) => {
                        for (a, b) in acc.data.iter_mut().zip(g.data.iter()) {
                            *a += b;
                        }
                    }
                    None => {
                        grads.insert(name.clone(), g);
                    }
                }
            }
        }
        Ok(grads)
    }

    fn add_adjoint(adjoint: &mut [Option<Tensor>], var: Var, shape: &[usize], add: impl FnOnce(&mut [f64])) {
        let slot = &mut adjoint[var.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(shape.to_vec()));
        }
        add(slot.as_mut().unwrap().data_mut());
    }

    fn accumulate_inputs(&self, idx: usize, g: &Tensor, adjoint: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::Affine { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (m, k) = (xv.rows(), xv.cols());
                let n = wv.cols();
                let gd = g.data();
                let xd = xv.data();
                let wd = wv.data();
                Self::add_adjoint(adjoint, *x, xv.shape(), |dx| {
                    // dx = g . w^T
                    for i in 0..m {
                        let gr = &gd[i * n..(i + 1) * n];
                        let dxr = &mut dx[i * k..(i + 1) * k];
                        for kk in 0..k {
                            let wr = &wd[kk * n..(kk + 1) * n];
                            let mut acc = 0.0;
                            for (gj, wj) in gr.iter().zip(wr.iter()) {
                                acc += gj * wj;
                            }
                            dxr[kk] += acc;
                        }
                    }
                });
                Self::add_adjoint(adjoint, *w, wv.shape(), |dw| {
                    // dw = x^T . g
                    for i in 0..m {
                        let gr = &gd[i * n..(i + 1) * n];
                        let xr = &xd[i * k..(i + 1) * k];
                        for (kk, &xik) in xr.iter().enumerate() {
                            if xik == 0.0 {
                                continue;
                            }
                            let dwr = &mut dw[kk * n..(kk + 1) * n];
                            for (dwj, &gj) in dwr.iter_mut().zip(gr.iter()) {
                                *dwj += xik * gj;
                            }
                        }
                    }
                });
                Self::add_adjoint(adjoint, *b, &[n], |db| {
                    for i in 0..m {
                        let gr = &gd[i * n..(i + 1) * n];
                        for (dbj, &gj) in db.iter_mut().zip(gr.iter()) {
                            *dbj += gj;
                        }
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                Self::add_adjoint(adjoint, *x, xv.shape(), |dx| {
                    for ((d, &xi), &gi) in dx.iter_mut().zip(xv.data()).zip(g.data()) {
                        if xi > 0.0 {
                            *d += gi;
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                let xv_shape = self.value(*x).shape().to_vec();
                Self::add_adjoint(adjoint, *x, &xv_shape, |dx| {
                    for ((d, &yi), &gi) in dx.iter_mut().zip(y.data()).zip(g.data()) {
                        *d += gi * yi * (1.0 - yi);
                    }
                });
            }
            Op::Softplus(x) => {
                let xv = self.value(*x);
                Self::add_adjoint(adjoint, *x, xv.shape(), |dx| {
                    for ((d, &xi), &gi) in dx.iter_mut().zip(xv.data()).zip(g.data()) {
                        *d += gi * sigmoid(xi);
                    }
                });
            }
            Op::Exp(x) => {
                let y = &node.value;
                let shape = self.value(*x).shape().to_vec();
                Self::add_adjoint(adjoint, *x, &shape, |dx| {
                    for ((d, &yi), &gi) in dx.iter_mut().zip(y.data()).zip(g.data()) {
                        *d += gi * yi;
                    }
                });
            }
            Op::Neg(x) => {
                let shape = self.value(*x).shape().to_vec();
                Self::add_adjoint(adjoint, *x, &shape, |dx| {
                    for (d, &gi) in dx.iter_mut().zip(g.data()) {
                        *d -= gi;
                    }
                });
            }
            Op::SinPi(x) => {
                let xv = self.value(*x);
                Self::add_adjoint(adjoint, *x, xv.shape(), |dx| {
                    for ((d, &xi), &gi) in dx.iter_mut().zip(xv.data()).zip(g.data()) {
                        *d += gi * std::f64::consts::PI * cos_pi(xi);
                    }
                });
            }
            Op::CosPi(x) => {
                let xv = self.value(*x);
                Self::add_adjoint(adjoint, *x, xv.shape(), |dx| {
                    for ((d, &xi), &gi) in dx.iter_mut().zip(xv.data()).zip(g.data()) {
                        *d -= gi * std::f64::consts::PI * sin_pi(xi);
                    }
                });
            }
            Op::Add(a, b) => {
                let shape = self.value(*a).shape().to_vec();
                Self::add_adjoint(adjoint, *a, &shape, |da| {
                    for (d, &gi) in da.iter_mut().zip(g.data()) {
                        *d += gi;
                    }
                });
                let shape = self.value(*b).shape().to_vec();
                Self::add_adjoint(adjoint, *b, &shape, |db| {
                    for (d, &gi) in db.iter_mut().zip(g.data()) {
                        *d += gi;
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                Self::add_adjoint(adjoint, *a, av.shape(), |da| {
                    for ((d, &bi), &gi) in da.iter_mut().zip(bv.data()).zip(g.data()) {
                        *d += gi * bi;
                    }
                });
                Self::add_adjoint(adjoint, *b, bv.shape(), |db| {
                    for ((d, &ai), &gi) in db.iter_mut().zip(av.data()).zip(g.data()) {
                        *d += gi * ai;
                    }
                });
            }
            Op::ConcatCols(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let m = av.rows();
                let (k1, k2) = (av.cols(), bv.cols());
                let gd = g.data();
                Self::add_adjoint(adjoint, *a, av.shape(), |da| {
                    for i in 0..m {
                        let gr = &gd[i * (k1 + k2)..i * (k1 + k2) + k1];
                        let dr = &mut da[i * k1..(i + 1) * k1];
                        for (d, &gi) in dr.iter_mut().zip(gr.iter()) {
                            *d += gi;
                        }
                    }
                });
                Self::add_adjoint(adjoint, *b, bv.shape(), |db| {
                    for i in 0..m {
                        let gr = &gd[i * (k1 + k2) + k1..(i + 1) * (k1 + k2)];
                        let dr = &mut db[i * k2..(i + 1) * k2];
                        for (d, &gi) in dr.iter_mut().zip(gr.iter()) {
                            *d += gi;
                        }
                    }
                });
            }
            Op::Sum(x) => {
                let shape = self.value(*x).shape().to_vec();
                let gi = g.item();
                Self::add_adjoint(adjoint, *x, &shape, |dx| {
                    for d in dx.iter_mut() {
                        *d += gi;
                    }
                });
            }
            Op::Mse(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let scale = 2.0 * g.item() / av.len() as f64;
                Self::add_adjoint(adjoint, *a, av.shape(), |da| {
                    for (d, (&x, &y)) in da.iter_mut().zip(av.data().iter().zip(bv.data())) {
                        *d += scale * (x - y);
                    }
                });
                Self::add_adjoint(adjoint, *b, bv.shape(), |db| {
                    for (d, (&x, &y)) in db.iter_mut().zip(av.data().iter().zip(bv.data())) {
                        *d -= scale * (x - y);
                    }
                });
            }
            Op::SegmentCumsumExclusive { x, seg } => {
                let shape = self.value(*x).shape().to_vec();
                let gd = g.data();
                let seg = *seg;
                Self::add_adjoint(adjoint, *x, &shape, |dx| {
                    // d x_j = sum of adjoints at positions after j in the segment.
                    for (gs, ds) in gd.chunks_exact(seg).zip(dx.chunks_exact_mut(seg)) {
                        let mut acc = 0.0;
                        for j in (0..seg).rev() {
                            ds[j] += acc;
                            acc += gs[j];
                        }
                    }
                });
            }
            Op::SegmentSum { x, seg } => {
                let xv = self.value(*x);
                let c = xv.cols();
                let seg = *seg;
                let gd = g.data();
                Self::add_adjoint(adjoint, *x, xv.shape(), |dx| {
                    for (si, grow) in gd.chunks_exact(c).enumerate() {
                        for r in 0..seg {
                            let drow = &mut dx[(si * seg + r) * c..(si * seg + r + 1) * c];
                            for (d, &gi) in drow.iter_mut().zip(grow.iter()) {
                                *d += gi;
                            }
                        }
                    }
                });
            }
            Op::ScaleRows { x, s } => {
                let xv = self.value(*x);
                let sv = self.value(*s);
                let c = xv.cols();
                let gd = g.data();
                Self::add_adjoint(adjoint, *x, xv.shape(), |dx| {
                    for (i, (drow, grow)) in dx
                        .chunks_exact_mut(c)
                        .zip(gd.chunks_exact(c))
                        .enumerate()
                    {
                        let f = sv.data()[i];
                        for (d, &gi) in drow.iter_mut().zip(grow.iter()) {
                            *d += gi * f;
                        }
                    }
                });
                Self::add_adjoint(adjoint, *s, sv.shape(), |ds| {
                    for (i, (xrow, grow)) in xv
                        .data()
                        .chunks_exact(c)
                        .zip(gd.chunks_exact(c))
                        .enumerate()
                    {
                        let mut acc = 0.0;
                        for (&xi, &gi) in xrow.iter().zip(grow.iter()) {
                            acc += xi * gi;
                        }
                        ds[i] += acc;
                    }
                });
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                Self::add_adjoint(adjoint, *x, &shape, |dx| {
                    for (d, &gi) in dx.iter_mut().zip(g.data()) {
                        *d += gi;
                    }
                });
            }
        }
    }
}

/// Central-difference gradient of a scalar function of the parameters:
/// `(f(p + eps) - f(p - eps)) / (2 eps)` per scalar parameter. Test oracle
/// for [`Tape::backward`]; independent of the tape (it only re-runs `f`).
pub fn finite_difference_gradient<F>(f: F, params: &ParamStore, eps: f64) -> Result<Gradients>
where
    F: Fn(&ParamStore) -> Result<f64>,
{
    if eps <= 0.0 {
        return Err(Error::Usage("finite difference eps must be > 0".into()));
    }
    let mut work = params.clone();
    let mut grads = Gradients::new();
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let n = params.get(&name).expect("name from store").len();
        let mut g = Tensor::zeros(params.get(&name).unwrap().shape().to_vec());
        for i in 0..n {
            let orig = work.get(&name).unwrap().data()[i];
            work.get_mut(&name).unwrap().data_mut()[i] = orig + eps;
            let hi = f(&work)?;
            work.get_mut(&name).unwrap().data_mut()[i] = orig - eps;
            let lo = f(&work)?;
            work.get_mut(&name).unwrap().data_mut()[i] = orig;
            g.data_mut()[i] = (hi - lo) / (2.0 * eps);
        }
        grads.insert(name, g);
    }
    Ok(grads)
}

/// Max over parameters of `|ad - fd| / max(1e-8, |fd|)`; the relative-error
/// figure the gradient checks assert on.
pub fn max_relative_error(ad: &Gradients, fd: &Gradients) -> f64 {
    let mut worst: f64 = 0.0;
    for (name, ga) in ad {
        let gf = match fd.get(name) {
            Some(g) => g,
            None => continue,
        };
        for (&a, &f) in ga.data().iter().zip(gf.data()) {
            let rel = (a - f).abs() / f.abs().max(1e-8);
            worst = worst.max(rel);
        }
    }
    worst
}
