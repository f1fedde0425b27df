//! Core differentiable operations: linear algebra, broadcasting elementwise
//! arithmetic, activations, reductions and shape manipulation.

use super::kernels::{broadcast_index, broadcast_shape, gemm_nn, gemm_nt, gemm_tn, reduce_to_shape};
use super::tape::{BackwardArgs, Function, Tape, Var};
use super::numel;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryKind {
    Neg,
    Exp,
    Sigmoid,
    Silu,
    Softplus,
}

pub(crate) fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

pub(crate) fn softplus<F: Scalar>(x: F) -> F {
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

impl UnaryKind {
    fn apply<F: Scalar>(self, x: F) -> F {
        match self {
            UnaryKind::Neg => -x,
            UnaryKind::Exp => x.exp(),
            UnaryKind::Sigmoid => sigmoid(x),
            UnaryKind::Silu => x * sigmoid(x),
            UnaryKind::Softplus => softplus(x),
        }
    }

    fn derivative<F: Scalar>(self, x: F, y: F) -> F {
        match self {
            UnaryKind::Neg => -F::one(),
            UnaryKind::Exp => y,
            UnaryKind::Sigmoid => y * (F::one() - y),
            UnaryKind::Silu => {
                let s = sigmoid(x);
                s * (F::one() + x * (F::one() - s))
            }
            UnaryKind::Softplus => sigmoid(x),
        }
    }

    fn name(self) -> &'static str {
        match self {
            UnaryKind::Neg => "neg",
            UnaryKind::Exp => "exp",
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::Silu => "silu",
            UnaryKind::Softplus => "softplus",
        }
    }
}

struct Unary(UnaryKind);

impl<F: Scalar> Function<F> for Unary {
    fn name(&self) -> &'static str {
        self.0.name()
    }

    fn backward(&self, args: BackwardArgs<'_, F>) -> Vec<Option<Vec<F>>> {
        let x = args.inputs[0].0;
        let g = x
            .iter()
            .zip(args.output)
            .zip(args.grad)
            .map(|((&x, &y), &g)| g * self.0.derivative(x, y))
            .collect();
        vec![Some(g)]
    }
}

struct Binary(BinaryKind);

impl<F: Scalar> Function<F> for Binary {
    fn name(&self) -> &'static str {
        match self.0 {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
        }
    }

    fn backward(&self, args: BackwardArgs<'_, F>) -> Vec<Option<Vec<F>>> {
        let (a, a_shape) = args.inputs[0];
        let (b, b_shape) = args.inputs[1];
        let out = args.out_shape;
        let g = args.grad;
        let mut result = vec![None, None];
        match self.0 {
            BinaryKind::Add | BinaryKind::Sub => {
                if args.needs[0] {
                    result[0] = Some(reduce_to_shape(g, out, a_shape));
                }
                if args.needs[1] {
                    let mut gb = reduce_to_shape(g, out, b_shape);
                    if self.0 == BinaryKind::Sub {
                        gb.iter_mut().for_each(|v| *v = -*v);
                    }
                    result[1] = Some(gb);
                }
            }
            BinaryKind::Mul => {
                let ia = broadcast_index(a_shape, out);
                let ib = broadcast_index(b_shape, out);
                if args.needs[0] {
                    let mut ga = vec![F::zero(); a.len()];
                    for ((&i, &j), &gv) in ia.iter().zip(&ib).zip(g) {
                        ga[i] += gv * b[j];
                    }
                    result[0] = Some(ga);
                }
                if args.needs[1] {
                    let mut gb = vec![F::zero(); b.len()];
                    for ((&i, &j), &gv) in ia.iter().zip(&ib).zip(g) {
                        gb[j] += gv * a[i];
                    }
                    result[1] = Some(gb);
                }
            }
        }
        result
    }
}

struct Scale<F>(F);

impl<F: Scalar> Function<F> for Scale<F> {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, args: BackwardArgs<'_, F>) -> Vec<Option<Vec<F>>> {
        vec![Some(args.grad.iter().map(|&g| g * self.0).collect())]
    }
}

struct MatMul {
    m: usize,
    k: usize,
    n: usize,
}

impl<F: Scalar> Function<F> for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, args: BackwardArgs<'_, F>) -> Vec<Option<Vec<F>>> {
        let (a, a_shape) = args.inputs[0];
        let (b, b_shape) = args.inputs[1];
        let (m, k, n) = (self.m, self.k, self.n);
        let g = args.grad;
        let out_batch = &args.out_shape[..args.out_shape.len() - 2];
        let a_batch = &a_shape[..a_shape.len() - 2];
        let b_batch = &b_shape[..b_shape.len() - 2];
        let batches = numel(out_batch);
        let ia = broadcast_index(a_batch, out_batch);
        let ib = broadcast_index(b_batch, out_batch);
        let mut ga = args.needs[0].then(|| vec![F::zero(); a.len()]);
        let mut gb = args.needs[1].then(|| vec![F::zero(); b.len()]);
        for t in 0..batches {
            let gs = &g[t * m * n..(t + 1) * m * n];
            let (ao, bo) = (ia[t] * m * k, ib[t] * k * n);
            if let Some(ga) = ga.as_mut() {
                gemm_nt(gs, &b[bo..bo + k * n], &mut ga[ao..ao + m * k], m, k, n);
            }
            if let Some(gb) = gb.as_mut() {
                gemm_tn(&a[ao..ao + m * k], gs, &mut gb[bo..bo + k * n], m, k, n);
            }
        }
        vec![ga, gb]
    }
}

struct Reduce {
    axis: usize,
    mean: bool,
}

impl<F: Scalar> Function<F> for Reduce {
    fn name(&self) -> &'static str {
        if self.mean {
            "mean"
        } else {
            "sum"
        }
    }

    fn backward(&self, args: BackwardArgs<'_, F>) -> Vec<Option<Vec<F>>> {
        let shape = args.inputs[0].1;
        let (outer, len, inner) = split_axis(shape, self.axis);
        let scale = if self.mean {
            F::one() / F::of(len as f64)
        } else {
            F::one()
        };
        let mut g = vec![F::zero(); outer * len * inner];
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    g[(o * len + l) * inner + i] = args.grad[o * inner + i] * scale;
                }
            }
        }
        vec![Some(g)]
    }
}

struct SumAll {
    mean: bool,
}

impl<F: Scalar> Function<F> for SumAll {
    fn name(&self) -> &'static str {
        "sum_all"
    }

    fn backward(&self, args: BackwardArgs<'_, F>) -> Vec<Option<Vec<F>>> {
        let n = args.inputs[0].0.len();
        let mut g = args.grad[0];
        if self.mean {
            g /= F::of(n as f64);
        }
        vec![Some(vec![g; n])]
    }
}

struct Reshape;

impl<F: Scalar> Function<F> for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, args: BackwardArgs<'_, F>) -> Vec<Option<Vec<F>>> {
        vec![Some(args.grad.to_vec())]
    }
}

struct Transpose {
    rows: usize,
    cols: usize,
}

fn transpose_batched<F: Scalar>(x: &[F], rows: usize, cols: usize) -> Vec<F> {
    let mut out = vec![F::zero(); x.len()];
    for (b, chunk) in x.chunks(rows * cols).enumerate() {
        let dst = &mut out[b * rows * cols..(b + 1) * rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                dst[c * rows + r] = chunk[r * cols + c];
            }
        }
    }
    out
}

impl<F: Scalar> Function<F> for Transpose {
    fn name(&self) -> &'static str {
        "transpose"
    }

    fn backward(&self, args: BackwardArgs<'_, F>) -> Vec<Option<Vec<F>>> {
        vec![Some(transpose_batched(args.grad, self.cols, self.rows))]
    }
}

struct Narrow {
    axis: usize,
    start: usize,
}

impl<F: Scalar> Function<F> for Narrow {
    fn name(&self) -> &'static str {
        "narrow"
    }

    fn backward(&self, args: BackwardArgs<'_, F>) -> Vec<Option<Vec<F>>> {
        let shape = args.inputs[0].1;
        let (outer, len, inner) = split_axis(shape, self.axis);
        let width = args.out_shape[self.axis];
        let mut g = vec![F::zero(); outer * len * inner];
        for o in 0..outer {
            let src = &args.grad[o * width * inner..(o + 1) * width * inner];
            let dst = (o * len + self.start) * inner;
            g[dst..dst + width * inner].copy_from_slice(src);
        }
        vec![Some(g)]
    }
}

struct Concat {
    axis: usize,
}

impl<F: Scalar> Function<F> for Concat {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn backward(&self, args: BackwardArgs<'_, F>) -> Vec<Option<Vec<F>>> {
        let (outer, total, inner) = split_axis(args.out_shape, self.axis);
        let mut offset = 0;
        let mut result = Vec::with_capacity(args.inputs.len());
        for (_, shape) in &args.inputs {
            let width = shape[self.axis];
            let mut g = Vec::with_capacity(outer * width * inner);
            for o in 0..outer {
                let s = (o * total + offset) * inner;
                g.extend_from_slice(&args.grad[s..s + width * inner]);
            }
            offset += width;
            result.push(Some(g));
        }
        result
    }
}

/// Splits a shape around `axis` into (outer, axis length, inner).
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

impl<F: Scalar> Tape<F> {
    /// Batched matrix product `[..×m×k] · [..×k×n]` with broadcast batch dims.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let a_shape = self.shape(a).to_vec();
        let b_shape = self.shape(b).to_vec();
        if a_shape.len() < 2 || b_shape.len() < 2 {
            return Err(Error::shape("matmul", &a_shape, &b_shape));
        }
        let (m, k) = (a_shape[a_shape.len() - 2], a_shape[a_shape.len() - 1]);
        let (k2, n) = (b_shape[b_shape.len() - 2], b_shape[b_shape.len() - 1]);
        if k != k2 {
            return Err(Error::shape("matmul", &a_shape, &b_shape));
        }
        let a_batch = &a_shape[..a_shape.len() - 2];
        let b_batch = &b_shape[..b_shape.len() - 2];
        let out_batch = broadcast_shape(a_batch, b_batch)
            .ok_or_else(|| Error::shape("matmul", &a_shape, &b_shape))?;
        let batches = numel(&out_batch);
        let ia = broadcast_index(a_batch, &out_batch);
        let ib = broadcast_index(b_batch, &out_batch);
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![F::zero(); batches * m * n];
        for t in 0..batches {
            let (ao, bo) = (ia[t] * m * k, ib[t] * k * n);
            gemm_nn(
                &av[ao..ao + m * k],
                &bv[bo..bo + k * n],
                &mut out[t * m * n..(t + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let mut shape = out_batch;
        shape.extend([m, n]);
        self.push(out, shape, vec![a, b], Box::new(MatMul { m, k, n }))
    }

    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let a_shape = self.shape(a).to_vec();
        let b_shape = self.shape(b).to_vec();
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
        };
        let out_shape =
            broadcast_shape(&a_shape, &b_shape).ok_or_else(|| Error::shape(name, &a_shape, &b_shape))?;
        let f = |x: F, y: F| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
        };
        let (av, bv) = (self.value(a), self.value(b));
        let out: Vec<F> = if a_shape == b_shape {
            av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let ia = broadcast_index(&a_shape, &out_shape);
            let ib = broadcast_index(&b_shape, &out_shape);
            ia.iter().zip(&ib).map(|(&i, &j)| f(av[i], bv[j])).collect()
        };
        self.push(out, out_shape, vec![a, b], Box::new(Binary(kind)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn unary(&mut self, kind: UnaryKind, a: Var) -> Result<Var> {
        let out = self.value(a).iter().map(|&x| kind.apply(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(out, shape, vec![a], Box::new(Unary(kind)))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Neg, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Exp, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Sigmoid, a)
    }

    pub fn silu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Silu, a)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Softplus, a)
    }

    pub fn scale(&mut self, a: Var, factor: F) -> Result<Var> {
        let out = self.value(a).iter().map(|&x| x * factor).collect();
        let shape = self.shape(a).to_vec();
        self.push(out, shape, vec![a], Box::new(Scale(factor)))
    }

    fn reduce(&mut self, a: Var, axis: usize, mean: bool) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::Axis {
                axis,
                rank: shape.len(),
            });
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let x = self.value(a);
        let mut out = vec![F::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let row = &x[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        if mean {
            let inv = F::one() / F::of(len as f64);
            out.iter_mut().for_each(|v| *v *= inv);
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        self.push(out, out_shape, vec![a], Box::new(Reduce { axis, mean }))
    }

    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(a, axis, false)
    }

    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(a, axis, true)
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().copied().sum();
        self.push(vec![s], Vec::new(), vec![a], Box::new(SumAll { mean: false }))
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let s = x.iter().copied().sum::<F>() / F::of(x.len() as f64);
        self.push(vec![s], Vec::new(), vec![a], Box::new(SumAll { mean: true }))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        if numel(&shape) != self.value(a).len() {
            return Err(Error::shape("reshape", self.shape(a), &shape));
        }
        let out = self.value(a).to_vec();
        self.push(out, shape, vec![a], Box::new(Reshape))
    }

    /// Swaps the last two dimensions.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let r = shape.len();
        if r < 2 {
            return Err(Error::Axis { axis: 1, rank: r });
        }
        let (rows, cols) = (shape[r - 2], shape[r - 1]);
        let out = transpose_batched(self.value(a), rows, cols);
        let mut out_shape = shape;
        out_shape.swap(r - 2, r - 1);
        self.push(out, out_shape, vec![a], Box::new(Transpose { rows, cols }))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::Axis {
                axis,
                rank: shape.len(),
            });
        }
        if start + len > shape[axis] {
            return Err(Error::Index {
                id: start + len,
                limit: shape[axis],
            });
        }
        let (outer, full, inner) = split_axis(&shape, axis);
        let x = self.value(a);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * full + start) * inner;
            out.extend_from_slice(&x[s..s + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.push(out, out_shape, vec![a], Box::new(Narrow { axis, start }))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*parts.first().ok_or_else(|| Error::contract("concat of nothing"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::Axis {
                axis,
                rank: first.len(),
            });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", &first, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let w = self.shape(p)[axis];
                let x = self.value(p);
                out.extend_from_slice(&x[o * w * inner..(o + 1) * w * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        self.push(out, shape, parts.to_vec(), Box::new(Concat { axis }))
    }
}
