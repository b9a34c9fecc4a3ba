//! Reverse-mode differentiation over a closed set of matrix primitives.
//!
//! A [`Tape`] records every primitive applied during a forward pass. Calling
//! [`Tape::backward`] on a `1 × 1` result walks the record in exact reverse
//! order and accumulates gradients for every parameter that was read.
//! Parameters are borrowed from a [`ParamStore`], never copied.

use crate::error::{MvarError, Result};
use crate::numerics::conv::{conv2d_backward, conv2d_pixel_major, ConvGeometry};
use crate::numerics::matrix::{
    gelu, gelu_derivative, layer_norm_with_cache, matmul, matmul_canonical, matmul_transa,
    matmul_transb, softmax_rows, DenseMatrix, LayerNormCache,
};
use crate::numerics::params::{ParamId, ParamStore};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulCanonical(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        cache: LayerNormCache,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    Transpose(Var),
    Conv2d {
        x: Var,
        kernel: Var,
        geom: ConvGeometry,
        cols: DenseMatrix,
    },
    SqError {
        pred: Var,
        target: DenseMatrix,
        weight: f64,
    },
    AbsError {
        pred: Var,
        target: DenseMatrix,
        weight: f64,
    },
    Sum(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    /// `None` for parameters, whose value lives in the store.
    value: Option<DenseMatrix>,
    op: Op,
    requires_grad: bool,
}

/// Gradient record produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    params: Vec<Option<DenseMatrix>>,
    visit_order: Vec<usize>,
}

impl Gradients {
    /// Gradient of a parameter; `None` when the parameter did not influence the output.
    pub fn param(&self, id: ParamId) -> Option<&DenseMatrix> {
        self.params.get(id.0).and_then(Option::as_ref)
    }

    /// Dense gradient buffers aligned with the store (zeros for unused tensors).
    pub fn into_dense(self, store: &ParamStore) -> Vec<DenseMatrix> {
        self.params
            .into_iter()
            .zip(store.tensors())
            .map(|(g, t)| g.unwrap_or_else(|| DenseMatrix::zeros(t.rows(), t.cols())))
            .collect()
    }

    /// Node indices in the order their backward rules ran.
    pub fn visit_order(&self) -> &[usize] {
        &self.visit_order
    }
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("only parameters are stored by reference"),
        }
    }

    fn push(&mut self, value: Option<DenseMatrix>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, value: DenseMatrix) -> Var {
        self.push(Some(value), Op::Input, false)
    }

    /// Leaf for a stored parameter. Repeated calls return the same handle so
    /// gradients from every use accumulate in one place.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(None, Op::Param(id), true);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matmul(self.value(a), self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(Some(out), Op::MatMul(a, b), rg))
    }

    /// Product whose reduction order is canonical; see [`matmul_canonical`].
    pub fn matmul_canonical(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matmul_canonical(self.value(a), self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(Some(out), Op::MatMulCanonical(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(Some(out), Op::Add(a, b), rg))
    }

    /// `x + 1·row`, broadcasting a `1 × c` row over every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let out = self.value(x).add_row(self.value(row))?;
        let rg = self.needs(&[x, row]);
        Ok(self.push(Some(out), Op::AddRow(x, row), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).scale(s);
        let rg = self.needs(&[x]);
        self.push(Some(out), Op::Scale(x, s), rg)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = gelu(self.value(x));
        let rg = self.needs(&[x]);
        self.push(Some(out), Op::Gelu(x), rg)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let out = softmax_rows(self.value(x))?;
        let rg = self.needs(&[x]);
        Ok(self.push(Some(out), Op::Softmax(x), rg))
    }

    /// Row-wise layer normalization; `gain` and `bias` are `1 × cols`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (g, b) = (self.value(gain), self.value(bias));
        if g.rows() != 1 || b.rows() != 1 {
            return Err(MvarError::shape("layer_norm gain and bias must be row vectors"));
        }
        let (out, cache) = layer_norm_with_cache(self.value(x), g.values(), b.values(), eps)?;
        let rg = self.needs(&[x, gain, bias]);
        Ok(self.push(
            Some(out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                cache,
            },
            rg,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&DenseMatrix> = parts.iter().map(|&p| self.value(p)).collect();
        let out = DenseMatrix::concat_cols(&values)?;
        let rg = self.needs(parts);
        Ok(self.push(Some(out), Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(x).slice_cols(start, len)?;
        let rg = self.needs(&[x]);
        Ok(self.push(Some(out), Op::SliceCols { x, start }, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        let rg = self.needs(&[x]);
        self.push(Some(out), Op::Transpose(x), rg)
    }

    /// Pixel-major strided convolution (see [`crate::numerics::conv`]).
    pub fn conv2d(&mut self, x: Var, kernel: Var, geom: ConvGeometry) -> Result<Var> {
        let (out, cols) = conv2d_pixel_major(self.value(x), self.value(kernel), &geom)?;
        let rg = self.needs(&[x, kernel]);
        Ok(self.push(
            Some(out),
            Op::Conv2d {
                x,
                kernel,
                geom,
                cols,
            },
            rg,
        ))
    }

    /// `weight · mean((pred − target)²)` as a `1 × 1` value.
    pub fn sq_error(&mut self, pred: Var, target: &DenseMatrix, weight: f64) -> Result<Var> {
        let diff = self.value(pred).sub(target)?;
        let n = diff.len() as f64;
        let v = weight * diff.values().iter().map(|d| d * d).sum::<f64>() / n;
        let rg = self.needs(&[pred]);
        Ok(self.push(
            Some(DenseMatrix::filled(1, 1, v)),
            Op::SqError {
                pred,
                target: target.clone(),
                weight,
            },
            rg,
        ))
    }

    /// `weight · mean(|pred − target|)` as a `1 × 1` value.
    pub fn abs_error(&mut self, pred: Var, target: &DenseMatrix, weight: f64) -> Result<Var> {
        let diff = self.value(pred).sub(target)?;
        let n = diff.len() as f64;
        let v = weight * diff.values().iter().map(|d| d.abs()).sum::<f64>() / n;
        let rg = self.needs(&[pred]);
        Ok(self.push(
            Some(DenseMatrix::filled(1, 1, v)),
            Op::AbsError {
                pred,
                target: target.clone(),
                weight,
            },
            rg,
        ))
    }

    /// Elementwise sum of same-shaped values.
    pub fn sum(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| MvarError::shape("sum of zero values"))?;
        let mut out = self.value(*first).clone();
        for &p in &parts[1..] {
            out = out.add(self.value(p))?;
        }
        let rg = self.needs(parts);
        Ok(self.push(Some(out), Op::Sum(parts.to_vec()), rg))
    }

    /// Propagates `d root / d ·` back through the record. `root` must be `1 × 1`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).shape() != (1, 1) {
            return Err(MvarError::shape(format!(
                "backward needs a scalar root, got {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; root.0 + 1];
        grads[root.0] = Some(DenseMatrix::filled(1, 1, 1.0));
        let mut param_grads: Vec<Option<DenseMatrix>> = vec![None; self.params.len()];
        let mut visit_order = Vec::new();

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            visit_order.push(idx);
            let acc = |v: Var, d: DenseMatrix, grads: &mut Vec<Option<DenseMatrix>>| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&d),
                    slot @ None => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Input => {}
                Op::Param(id) => match &mut param_grads[id.0] {
                    Some(existing) => existing.add_assign(&g),
                    slot @ None => *slot = Some(g),
                },
                Op::MatMul(a, b) | Op::MatMulCanonical(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        acc(*a, matmul_transb(&g, self.value(*b))?, &mut grads);
                    }
                    if self.nodes[b.0].requires_grad {
                        acc(*b, matmul_transa(self.value(*a), &g)?, &mut grads);
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, g, &mut grads);
                }
                Op::AddRow(x, row) => {
                    if self.nodes[row.0].requires_grad {
                        let mut col_sums = DenseMatrix::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (s, v) in col_sums.values_mut().iter_mut().zip(g.row(r)) {
                                *s += v;
                            }
                        }
                        acc(*row, col_sums, &mut grads);
                    }
                    acc(*x, g, &mut grads);
                }
                Op::Scale(x, s) => acc(*x, g.scale(*s), &mut grads),
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    let mut d = g;
                    for (dv, &xi) in d.values_mut().iter_mut().zip(xv.values()) {
                        *dv *= gelu_derivative(xi);
                    }
                    acc(*x, d, &mut grads);
                }
                Op::Softmax(x) => {
                    let y = node.value.as_ref().expect("softmax value");
                    let mut d = g;
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let dot: f64 = d.row(r).iter().zip(yr).map(|(a, b)| a * b).sum();
                        for (dv, &yi) in d.row_mut(r).iter_mut().zip(yr) {
                            *dv = yi * (*dv - dot);
                        }
                    }
                    acc(*x, d, &mut grads);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    cache,
                } => {
                    let gain_v = self.value(*gain).values();
                    let xhat = &cache.normalized;
                    let cols = g.cols();
                    if self.nodes[gain.0].requires_grad || self.nodes[bias.0].requires_grad {
                        let mut dgain = DenseMatrix::zeros(1, cols);
                        let mut dbias = DenseMatrix::zeros(1, cols);
                        for r in 0..g.rows() {
                            for c in 0..cols {
                                dgain.values_mut()[c] += g.get(r, c) * xhat.get(r, c);
                                dbias.values_mut()[c] += g.get(r, c);
                            }
                        }
                        acc(*gain, dgain, &mut grads);
                        acc(*bias, dbias, &mut grads);
                    }
                    if self.nodes[x.0].requires_grad {
                        let n = cols as f64;
                        let mut dx = DenseMatrix::zeros(g.rows(), cols);
                        for r in 0..g.rows() {
                            let dxhat: Vec<f64> =
                                g.row(r).iter().zip(gain_v).map(|(a, b)| a * b).collect();
                            let sum_d: f64 = dxhat.iter().sum();
                            let sum_dx: f64 =
                                dxhat.iter().zip(xhat.row(r)).map(|(a, b)| a * b).sum();
                            let inv = cache.inv_std[r];
                            for ((o, &d), &xh) in
                                dx.row_mut(r).iter_mut().zip(&dxhat).zip(xhat.row(r))
                            {
                                *o = inv / n * (n * d - sum_d - xh * sum_dx);
                            }
                        }
                        acc(*x, dx, &mut grads);
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        if self.nodes[p.0].requires_grad {
                            acc(p, g.slice_cols(start, w)?, &mut grads);
                        }
                        start += w;
                    }
                }
                Op::SliceCols { x, start } => {
                    let src = self.value(*x);
                    let mut d = DenseMatrix::zeros(src.rows(), src.cols());
                    for r in 0..g.rows() {
                        d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    acc(*x, d, &mut grads);
                }
                Op::Transpose(x) => acc(*x, g.transpose(), &mut grads),
                Op::Conv2d {
                    x,
                    kernel,
                    geom,
                    cols,
                } => {
                    if self.nodes[x.0].requires_grad {
                        let (dx, dk) = conv2d_backward(&g, cols, self.value(*kernel), geom)?;
                        acc(*x, dx, &mut grads);
                        acc(*kernel, dk, &mut grads);
                    } else {
                        acc(*kernel, matmul_transa(&g, cols)?, &mut grads);
                    }
                }
                Op::SqError {
                    pred,
                    target,
                    weight,
                } => {
                    let p = self.value(*pred);
                    let scale = g.get(0, 0) * weight * 2.0 / p.len() as f64;
                    let d = p.sub(target)?.scale(scale);
                    acc(*pred, d, &mut grads);
                }
                Op::AbsError {
                    pred,
                    target,
                    weight,
                } => {
                    let p = self.value(*pred);
                    let scale = g.get(0, 0) * weight / p.len() as f64;
                    let d = p.sub(target)?.map(|v| v.signum() * scale);
                    acc(*pred, d, &mut grads);
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        acc(p, g.clone(), &mut grads);
                    }
                }
            }
        }
        Ok(Gradients {
            params: param_grads,
            visit_order,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::fd::{finite_diff_gradients, max_relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Checks tape gradients of `f` (which must end in a scalar) against
    /// central differences for every parameter of `store`.
    fn check<F>(store: &ParamStore, f: F)
    where
        F: Fn(&mut Tape) -> Result<Var>,
    {
        let mut tape = Tape::new(store);
        let out = f(&mut tape).unwrap();
        let tape_grads = tape.backward(out).unwrap().into_dense(store);
        let fd = finite_diff_gradients(
            |p: &ParamStore| {
                let mut t = Tape::new(p);
                let o = f(&mut t)?;
                Ok(t.value(o).get(0, 0))
            },
            store,
            1e-5,
        )
        .unwrap();
        for ((id, name, _), (a, b)) in store.iter().zip(tape_grads.iter().zip(&fd)) {
            let err = max_relative_error(a, b, 1e-8);
            assert!(err <= 1e-4, "{name} ({id:?}): relative error {err}");
        }
    }

    /// Projects a matrix-valued result onto a fixed random direction so the
    /// check exercises every output element.
    fn contract(t: &mut Tape, v: Var, seed: u64) -> Result<Var> {
        let (r, c) = t.value(v).shape();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = random(r, c, &mut rng);
        t.sq_error(v, &target, 1.0)
    }

    const SHAPES: [(usize, usize, usize); 3] = [(1, 1, 1), (3, 4, 2), (5, 2, 6)];

    #[test]
    fn matmul_gradients() {
        for (s, &(n, k, m)) in SHAPES.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(s as u64);
            let mut store = ParamStore::new();
            let a = store.insert("a", random(n, k, &mut rng)).unwrap();
            let b = store.insert("b", random(k, m, &mut rng)).unwrap();
            check(&store, |t| {
                let (va, vb) = (t.param(a), t.param(b));
                let y = t.matmul(va, vb)?;
                contract(t, y, 9)
            });
            check(&store, |t| {
                let (va, vb) = (t.param(a), t.param(b));
                let y = t.matmul_canonical(va, vb)?;
                contract(t, y, 9)
            });
        }
    }

    #[test]
    fn elementwise_and_broadcast_gradients() {
        for (s, &(n, _, m)) in SHAPES.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(10 + s as u64);
            let mut store = ParamStore::new();
            let x = store.insert("x", random(n, m, &mut rng)).unwrap();
            let y = store.insert("y", random(n, m, &mut rng)).unwrap();
            let row = store.insert("row", random(1, m, &mut rng)).unwrap();
            check(&store, |t| {
                let (vx, vy, vr) = (t.param(x), t.param(y), t.param(row));
                let s1 = t.add(vx, vy)?;
                let s2 = t.add_row(s1, vr)?;
                let s3 = t.scale(s2, -1.7);
                let s4 = t.gelu(s3);
                let s5 = t.sum(&[s4, vx])?;
                let s6 = t.transpose(s5);
                contract(t, s6, 3)
            });
        }
    }

    #[test]
    fn softmax_and_layer_norm_gradients() {
        for (s, &(n, _, m)) in SHAPES.iter().enumerate() {
            let m = m.max(2);
            let mut rng = ChaCha8Rng::seed_from_u64(20 + s as u64);
            let mut store = ParamStore::new();
            let x = store.insert("x", random(n, m, &mut rng)).unwrap();
            let g = store.insert("gain", random(1, m, &mut rng)).unwrap();
            let b = store.insert("bias", random(1, m, &mut rng)).unwrap();
            check(&store, |t| {
                let vx = t.param(x);
                let sm = t.softmax_rows(vx)?;
                contract(t, sm, 4)
            });
            check(&store, |t| {
                let (vx, vg, vb) = (t.param(x), t.param(g), t.param(b));
                let ln = t.layer_norm(vx, vg, vb, 1e-5)?;
                contract(t, ln, 5)
            });
        }
    }

    #[test]
    fn slicing_and_concat_gradients() {
        for (s, &(n, _, m)) in SHAPES.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(30 + s as u64);
            let mut store = ParamStore::new();
            let x = store.insert("x", random(n, m + 2, &mut rng)).unwrap();
            let y = store.insert("y", random(n, m, &mut rng)).unwrap();
            check(&store, |t| {
                let (vx, vy) = (t.param(x), t.param(y));
                let sl = t.slice_cols(vx, 1, m)?;
                let c = t.concat_cols(&[vy, sl, vx])?;
                contract(t, c, 6)
            });
        }
    }

    #[test]
    fn conv_gradients() {
        let cases = [(1, 1, 4, 4, 1, 2), (2, 3, 4, 6, 3, 2), (3, 2, 6, 6, 3, 1)];
        for (s, &(cin, cout, h, w, k, stride)) in cases.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(40 + s as u64);
            let mut store = ParamStore::new();
            let x = store.insert("x", random(h * w, cin, &mut rng)).unwrap();
            let kern = store
                .insert("kernel", random(cout, cin * k * k, &mut rng))
                .unwrap();
            let geom = ConvGeometry {
                in_channels: cin,
                out_channels: cout,
                height: h,
                width: w,
                kernel: k,
                stride,
            };
            check(&store, |t| {
                let (vx, vk) = (t.param(x), t.param(kern));
                let y = t.conv2d(vx, vk, geom)?;
                contract(t, y, 7)
            });
        }
    }

    #[test]
    fn error_reductions_gradients() {
        for (s, &(n, _, m)) in SHAPES.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(50 + s as u64);
            let mut store = ParamStore::new();
            let p = store.insert("p", random(n, m, &mut rng)).unwrap();
            // keep |p - target| away from zero so |·| is differentiable here
            let target = store.get(p).map(|v| v + 0.5);
            check(&store, |t| {
                let vp = t.param(p);
                let a = t.sq_error(vp, &target, 2.5)?;
                let b = t.abs_error(vp, &target, 0.3)?;
                t.sum(&[a, b])
            });
        }
    }

    #[test]
    fn backward_visits_in_reverse_order() {
        let mut store = ParamStore::new();
        let a = store.insert("a", DenseMatrix::filled(2, 2, 0.5)).unwrap();
        let mut t = Tape::new(&store);
        let va = t.param(a);
        let b = t.gelu(va);
        let c = t.scale(b, 2.0);
        let d = t.sq_error(c, &DenseMatrix::zeros(2, 2), 1.0).unwrap();
        let grads = t.backward(d).unwrap();
        assert_eq!(grads.visit_order(), &[d.index(), c.index(), b.index(), va.index()]);
        assert_eq!(grads.param(a).unwrap().shape(), (2, 2));
    }

    #[test]
    fn shared_parameter_accumulates() {
        let mut store = ParamStore::new();
        let a = store.insert("a", DenseMatrix::filled(1, 1, 3.0)).unwrap();
        let mut t = Tape::new(&store);
        let va = t.param(a);
        let va2 = t.param(a);
        assert_eq!(va, va2);
        // f = a·a  → df/da = 2a = 6
        let sq = t.matmul(va, va2).unwrap();
        let g = t.backward(sq).unwrap();
        assert_eq!(g.param(a).unwrap().get(0, 0), 6.0);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut store = ParamStore::new();
        let a = store.insert("a", DenseMatrix::filled(2, 2, 1.0)).unwrap();
        let mut t = Tape::new(&store);
        let va = t.param(a);
        assert!(t.backward(va).is_err());
    }
}
