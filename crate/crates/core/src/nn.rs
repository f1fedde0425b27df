//! Reusable layers: embedding lookup, linear, depthwise causal convolution,
//! layer norm and the gated linear unit.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore, Session};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{BackwardArgs, Function, Tape, Var};

/// `x · W + b` with `W: [in × out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearLayer {
    /// Weights and bias drawn from uniform(−1/√in, 1/√in).
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut Rng,
    ) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        LinearLayer {
            weight: store.uniform(format!("{name}.weight"), vec![in_dim, out_dim], bound, rng),
            bias: store.uniform(format!("{name}.bias"), vec![out_dim], bound, rng),
            in_dim,
            out_dim,
        }
    }

    pub fn forward<F: Scalar>(&self, s: &mut Session<'_, F>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = s.param(self.bias);
        linear(&mut s.tape, x, w, b)
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

pub fn linear<F: Scalar>(tape: &mut Tape<F>, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    tape.add(xw, b)
}

/// Item embedding matrix with row 0 reserved for padding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: ParamId,
    pub n_items: usize,
    pub dim: usize,
}

impl EmbeddingTable {
    /// Rows drawn from normal(0, 0.02²).
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        n_items: usize,
        dim: usize,
        rng: &mut Rng,
    ) -> Self {
        EmbeddingTable {
            matrix: store.normal(name, vec![n_items + 1, dim], 0.02, rng),
            n_items,
            dim,
        }
    }

    /// Gathers rows for `ids` laid out as `[batch × len]`.
    pub fn embed<F: Scalar>(
        &self,
        s: &mut Session<'_, F>,
        ids: &[usize],
        batch: usize,
        len: usize,
    ) -> Result<Var> {
        let table = s.param(self.matrix);
        gather_rows(&mut s.tape, table, ids, &[batch, len])
    }
}

struct Gather {
    ids: Vec<usize>,
}

impl<F: Scalar> Function<F> for Gather {
    fn name(&self) -> &'static str {
        "embed"
    }

    fn backward(&self, args: BackwardArgs<'_, F>) -> Vec<Option<Vec<F>>> {
        let (table, shape) = args.inputs[0];
        let dim = shape[1];
        let mut g = vec![F::zero(); table.len()];
        for (pos, &id) in self.ids.iter().enumerate() {
            let src = &args.grad[pos * dim..(pos + 1) * dim];
            for (acc, &v) in g[id * dim..(id + 1) * dim].iter_mut().zip(src) {
                *acc += v;
            }
        }
        vec![Some(g)]
    }
}

/// Row gather from a `[rows × dim]` table. Output shape is `ids_shape × dim`.
pub fn gather_rows<F: Scalar>(
    tape: &mut Tape<F>,
    table: Var,
    ids: &[usize],
    ids_shape: &[usize],
) -> Result<Var> {
    let shape = tape.shape(table).to_vec();
    if shape.len() != 2 {
        return Err(Error::shape("embed", &shape, ids_shape));
    }
    if ids.len() != ids_shape.iter().product::<usize>() {
        return Err(Error::shape("embed", ids_shape, &[ids.len()]));
    }
    let (rows, dim) = (shape[0], shape[1]);
    if let Some(&bad) = ids.iter().find(|&&id| id >= rows) {
        return Err(Error::Index {
            id: bad,
            limit: rows - 1,
        });
    }
    let t = tape.value(table);
    let mut out = Vec::with_capacity(ids.len() * dim);
    for &id in ids {
        out.extend_from_slice(&t[id * dim..(id + 1) * dim]);
    }
    let mut out_shape = ids_shape.to_vec();
    out_shape.push(dim);
    tape.push(out, out_shape, vec![table], Box::new(Gather { ids: ids.to_vec() }))
}

/// Affine layer normalization over the last dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub shift: ParamId,
    pub dim: usize,
    pub eps: f64,
}

impl LayerNormParams {
    pub fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, dim: usize) -> Self {
        LayerNormParams {
            gain: store.constant(format!("{name}.gain"), vec![dim], 1.0),
            shift: store.constant(format!("{name}.shift"), vec![dim], 0.0),
            dim,
            eps: F::layer_norm_eps().f64(),
        }
    }

    pub fn forward<F: Scalar>(&self, s: &mut Session<'_, F>, x: Var) -> Result<Var> {
        let g = s.param(self.gain);
        let b = s.param(self.shift);
        layer_norm(&mut s.tape, x, g, b, F::of(self.eps))
    }
}

struct LayerNorm<F> {
    xhat: Vec<F>,
    inv_std: Vec<F>,
}

impl<F: Scalar> Function<F> for LayerNorm<F> {
    fn name(&self) -> &'static str {
        "layer_norm"
    }

    fn backward(&self, args: BackwardArgs<'_, F>) -> Vec<Option<Vec<F>>> {
        let gain = args.inputs[1].0;
        let d = gain.len();
        let rows = self.inv_std.len();
        let g = args.grad;
        let mut gx = args.needs[0].then(|| vec![F::zero(); rows * d]);
        let mut gg = vec![F::zero(); d];
        let mut gb = vec![F::zero(); d];
        let inv_d = F::one() / F::of(d as f64);
        for r in 0..rows {
            let gr = &g[r * d..(r + 1) * d];
            let xr = &self.xhat[r * d..(r + 1) * d];
            let mut mean_dx = F::zero();
            let mut mean_dx_x = F::zero();
            for j in 0..d {
                gg[j] += gr[j] * xr[j];
                gb[j] += gr[j];
                let dxh = gr[j] * gain[j];
                mean_dx += dxh;
                mean_dx_x += dxh * xr[j];
            }
            mean_dx *= inv_d;
            mean_dx_x *= inv_d;
            if let Some(gx) = gx.as_mut() {
                let inv = self.inv_std[r];
                for j in 0..d {
                    let dxh = gr[j] * gain[j];
                    gx[r * d + j] = inv * (dxh - mean_dx - xr[j] * mean_dx_x);
                }
            }
        }
        vec![gx, Some(gg), Some(gb)]
    }
}

/// `gain ⊙ (x − µ)/√(σ² + ε) + shift` per vector along the last dimension.
pub fn layer_norm<F: Scalar>(tape: &mut Tape<F>, x: Var, gain: Var, shift: Var, eps: F) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let d = *shape.last().ok_or_else(|| Error::shape("layer_norm", &shape, &[]))?;
    if tape.shape(gain) != [d] || tape.shape(shift) != [d] {
        return Err(Error::shape("layer_norm", &shape, tape.shape(gain)));
    }
    if eps <= F::zero() {
        return Err(Error::contract("layer norm epsilon must be positive"));
    }
    let xv = tape.value(x);
    let (gv, bv) = (tape.value(gain), tape.value(shift));
    let rows = xv.len() / d.max(1);
    let mut xhat = vec![F::zero(); xv.len()];
    let mut inv_std = vec![F::zero(); rows];
    let mut out = vec![F::zero(); xv.len()];
    let inv_d = F::one() / F::of(d as f64);
    for r in 0..rows {
        let row = &xv[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<F>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
        let inv = F::one() / (var + eps).sqrt();
        inv_std[r] = inv;
        for j in 0..d {
            let h = (row[j] - mean) * inv;
            xhat[r * d + j] = h;
            out[r * d + j] = gv[j] * h + bv[j];
        }
    }
    tape.push(out, shape, vec![x, gain, shift], Box::new(LayerNorm { xhat, inv_std }))
}

/// Per-channel causal convolution, kernels `[channels × K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1DDepthwise {
    pub kernels: ParamId,
    pub bias: ParamId,
    pub channels: usize,
    pub kernel_size: usize,
}

impl Conv1DDepthwise {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        channels: usize,
        kernel_size: usize,
        rng: &mut Rng,
    ) -> Self {
        let bound = 1.0 / (kernel_size as f64).sqrt();
        Conv1DDepthwise {
            kernels: store.uniform(format!("{name}.kernels"), vec![channels, kernel_size], bound, rng),
            bias: store.uniform(format!("{name}.bias"), vec![channels], bound, rng),
            channels,
            kernel_size,
        }
    }

    pub fn forward<F: Scalar>(&self, s: &mut Session<'_, F>, x: Var) -> Result<Var> {
        let k = s.param(self.kernels);
        let b = s.param(self.bias);
        conv1d_depthwise(&mut s.tape, x, k, b)
    }
}

struct Conv1d;

impl<F: Scalar> Function<F> for Conv1d {
    fn name(&self) -> &'static str {
        "conv1d_depthwise"
    }

    fn backward(&self, args: BackwardArgs<'_, F>) -> Vec<Option<Vec<F>>> {
        let (x, shape) = args.inputs[0];
        let (kern, kshape) = args.inputs[1];
        let (b, l, c) = (shape[0], shape[1], shape[2]);
        let k = kshape[1];
        let g = args.grad;
        let mut gx = vec![F::zero(); x.len()];
        let mut gk = vec![F::zero(); kern.len()];
        let mut gb = vec![F::zero(); c];
        for bi in 0..b {
            for t in 0..l {
                let go = &g[(bi * l + t) * c..(bi * l + t + 1) * c];
                for ch in 0..c {
                    gb[ch] += go[ch];
                }
                for j in 0..k {
                    let Some(src) = (t + j).checked_sub(k - 1) else { continue };
                    let base = (bi * l + src) * c;
                    for ch in 0..c {
                        gk[ch * k + j] += go[ch] * x[base + ch];
                        gx[base + ch] += go[ch] * kern[ch * k + j];
                    }
                }
            }
        }
        vec![Some(gx), Some(gk), Some(gb)]
    }
}

/// `y[b,t,c] = bias[c] + Σⱼ kernel[c,j] · x[b, t−(K−1)+j, c]`, zero left padding.
pub fn conv1d_depthwise<F: Scalar>(tape: &mut Tape<F>, x: Var, kernels: Var, bias: Var) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let kshape = tape.shape(kernels).to_vec();
    if shape.len() != 3 || kshape.len() != 2 || kshape[0] != shape[2] || tape.shape(bias) != [shape[2]] {
        return Err(Error::shape("conv1d_depthwise", &shape, &kshape));
    }
    let (b, l, c) = (shape[0], shape[1], shape[2]);
    let k = kshape[1];
    let (xv, kv, bv) = (tape.value(x), tape.value(kernels), tape.value(bias));
    let mut out = vec![F::zero(); xv.len()];
    for bi in 0..b {
        for t in 0..l {
            let o = &mut out[(bi * l + t) * c..(bi * l + t + 1) * c];
            o.copy_from_slice(bv);
            for j in 0..k {
                let Some(src) = (t + j).checked_sub(k - 1) else { continue };
                let base = (bi * l + src) * c;
                for ch in 0..c {
                    o[ch] += kv[ch * k + j] * xv[base + ch];
                }
            }
        }
    }
    tape.push(out, shape, vec![x, kernels, bias], Box::new(Conv1d))
}

/// Gated linear unit `(x𝐖₁ + 𝐛₁) ⊙ σ(x𝐖₂ + 𝐛₂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GluParams {
    pub value: LinearLayer,
    pub gate: LinearLayer,
}

impl GluParams {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut Rng,
    ) -> Self {
        GluParams {
            value: LinearLayer::new(store, &format!("{name}.value"), in_dim, out_dim, rng),
            gate: LinearLayer::new(store, &format!("{name}.gate"), in_dim, out_dim, rng),
        }
    }

    pub fn forward<F: Scalar>(&self, s: &mut Session<'_, F>, x: Var) -> Result<Var> {
        let w1 = s.param(self.value.weight);
        let b1 = s.param(self.value.bias);
        let w2 = s.param(self.gate.weight);
        let b2 = s.param(self.gate.bias);
        glu(&mut s.tape, x, w1, b1, w2, b2)
    }

    pub fn param_count(&self) -> usize {
        self.value.param_count() + self.gate.param_count()
    }
}

pub fn glu<F: Scalar>(tape: &mut Tape<F>, x: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Result<Var> {
    let value = linear(tape, x, w1, b1)?;
    let gate_pre = linear(tape, x, w2, b2)?;
    let gate = tape.sigmoid(gate_pre)?;
    tape.mul(value, gate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::Rng as _;

    fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = crate::rng::stream(seed, crate::rng::Stream::Init);
        (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    #[test]
    fn embed_padding_and_one_hot_rows() {
        let mut t = Tape::<f64>::new();
        let eye = t
            .variable(vec![3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
            .unwrap();
        let e0 = gather_rows(&mut t, eye, &[0], &[1, 1]).unwrap();
        assert_eq!(t.value(e0), &[1.0, 0.0, 0.0]);
        let e = gather_rows(&mut t, eye, &[2, 1], &[1, 2]).unwrap();
        assert_eq!(t.value(e), &[0.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        assert_eq!(t.shape(e), &[1, 2, 3]);
        let err = gather_rows(&mut t, eye, &[3], &[1, 1]).unwrap_err();
        assert!(matches!(err, Error::Index { id: 3, .. }));
    }

    #[test]
    fn embed_gradient_matches_one_hot_matmul() {
        let (rows, dim) = (5, 3);
        let table = rand_vec(rows * dim, 1);
        let ids = [4usize, 0, 2, 2, 1, 4];
        let mut t = Tape::<f64>::new();
        let tab = t.variable(vec![rows, dim], table.clone()).unwrap();
        let e = gather_rows(&mut t, tab, &ids, &[2, 3]).unwrap();
        let s = t.sum_all(e).unwrap();
        t.backward(s).unwrap();
        let scatter = t.grad(tab).unwrap().to_vec();

        // oracle: one-hot [6 × rows] · table, then sum
        let mut one_hot = vec![0.0; ids.len() * rows];
        for (i, &id) in ids.iter().enumerate() {
            one_hot[i * rows + id] = 1.0;
        }
        let mut t2 = Tape::<f64>::new();
        let oh = t2.constant(vec![ids.len(), rows], one_hot).unwrap();
        let tab2 = t2.variable(vec![rows, dim], table).unwrap();
        let m = t2.matmul(oh, tab2).unwrap();
        assert_eq!(t2.value(m), t.value(e));
        let s2 = t2.sum_all(m).unwrap();
        t2.backward(s2).unwrap();
        assert_eq!(t2.grad(tab2).unwrap(), scatter.as_slice());
    }

    fn ln(t: &mut Tape<f64>, x: &[f64], shape: &[usize], eps: f64) -> Vec<f64> {
        let d = *shape.last().unwrap();
        let xv = t.constant(shape.to_vec(), x.to_vec()).unwrap();
        let g = t.constant(vec![d], vec![1.0; d]).unwrap();
        let b = t.constant(vec![d], vec![0.0; d]).unwrap();
        let y = layer_norm(t, xv, g, b, eps).unwrap();
        t.value(y).to_vec()
    }

    #[test]
    fn layer_norm_edge_cases() {
        let mut t = Tape::new();
        assert_eq!(ln(&mut t, &[3.0; 4], &[4], 1e-12), vec![0.0; 4]);
        let y = ln(&mut t, &[1.0, -1.0], &[2], 1e-300);
        assert!((y[0] - 1.0).abs() < 1e-12 && (y[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_row_statistics() {
        let mut t = Tape::new();
        let x = rand_vec(24, 5);
        let y = ln(&mut t, &x, &[3, 8], 1e-12);
        for row in y.chunks(8) {
            let mean = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn layer_norm_dimension_mismatch() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(vec![2, 3], vec![0.0; 6]).unwrap();
        let g = t.constant(vec![2], vec![1.0; 2]).unwrap();
        let b = t.constant(vec![2], vec![0.0; 2]).unwrap();
        assert!(matches!(layer_norm(&mut t, x, g, b, 1e-5), Err(Error::Shape { .. })));
    }

    fn conv(x: &[f64], shape: [usize; 3], kern: &[f64], k: usize, bias: &[f64]) -> Vec<f64> {
        let mut t = Tape::new();
        let xv = t.constant(shape.to_vec(), x.to_vec()).unwrap();
        let kv = t.constant(vec![shape[2], k], kern.to_vec()).unwrap();
        let bv = t.constant(vec![shape[2]], bias.to_vec()).unwrap();
        let y = conv1d_depthwise(&mut t, xv, kv, bv).unwrap();
        t.value(y).to_vec()
    }

    #[test]
    fn conv_identity_and_shift_kernels() {
        let x: Vec<f64> = (1..=10).map(|v| v as f64).collect(); // [1,5,2]
        let ident = [0.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        assert_eq!(conv(&x, [1, 5, 2], &ident, 3, &[0.0, 0.0]), x);
        let shift = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let y = conv(&x, [1, 5, 2], &shift, 3, &[0.0, 0.0]);
        assert_eq!(y, vec![0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn conv_matches_loop_oracle() {
        let (b, l, c, k) = (2, 7, 3, 4);
        let x = rand_vec(b * l * c, 11);
        let kern = rand_vec(c * k, 12);
        let bias = rand_vec(c, 13);
        let y = conv(&x, [b, l, c], &kern, k, &bias);
        for bi in 0..b {
            for t in 0..l {
                for ch in 0..c {
                    let mut acc = bias[ch];
                    for j in 0..k {
                        let src = t as isize - (k as isize - 1) + j as isize;
                        if src >= 0 {
                            acc += kern[ch * k + j] * x[(bi * l + src as usize) * c + ch];
                        }
                    }
                    assert!((y[(bi * l + t) * c + ch] - acc).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_is_causal() {
        let (l, c, k) = (6, 2, 3);
        let x = rand_vec(l * c, 21);
        let kern = rand_vec(c * k, 22);
        let base = conv(&x, [1, l, c], &kern, k, &[0.1, -0.1]);
        for t in 0..l {
            let mut xp = x.clone();
            xp[t * c] += 0.5;
            let y = conv(&xp, [1, l, c], &kern, k, &[0.1, -0.1]);
            for s in 0..l {
                let changed = (y[s * c] - base[s * c]).abs() > 0.0;
                if s < t {
                    assert!(!changed, "position {s} changed after perturbing {t}");
                }
            }
        }
    }

    #[test]
    fn conv_channel_mismatch() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(vec![1, 4, 3], vec![0.0; 12]).unwrap();
        let k = t.constant(vec![2, 2], vec![0.0; 4]).unwrap();
        let b = t.constant(vec![2], vec![0.0; 2]).unwrap();
        assert!(conv1d_depthwise(&mut t, x, k, b).is_err());
    }

    fn glu_eval(x: &[f64], w1: &[f64], b1: &[f64], w2: &[f64], b2: &[f64], din: usize, dout: usize) -> Vec<f64> {
        let mut t = Tape::new();
        let n = x.len() / din;
        let xv = t.constant(vec![n, din], x.to_vec()).unwrap();
        let w1 = t.constant(vec![din, dout], w1.to_vec()).unwrap();
        let b1 = t.constant(vec![dout], b1.to_vec()).unwrap();
        let w2 = t.constant(vec![din, dout], w2.to_vec()).unwrap();
        let b2 = t.constant(vec![dout], b2.to_vec()).unwrap();
        let y = glu(&mut t, xv, w1, b1, w2, b2).unwrap();
        t.value(y).to_vec()
    }

    fn affine(x: &[f64], w: &[f64], b: &[f64], din: usize, dout: usize) -> Vec<f64> {
        let n = x.len() / din;
        let mut out = vec![0.0; n * dout];
        for i in 0..n {
            for j in 0..dout {
                out[i * dout + j] = b[j] + (0..din).map(|p| x[i * din + p] * w[p * dout + j]).sum::<f64>();
            }
        }
        out
    }

    #[test]
    fn glu_gate_limits() {
        let (din, dout) = (3, 2);
        let x = rand_vec(4 * din, 31);
        let w1 = rand_vec(din * dout, 32);
        let b1 = rand_vec(dout, 33);
        let lin = affine(&x, &w1, &b1, din, dout);
        let half = glu_eval(&x, &w1, &b1, &[0.0; 6], &[0.0; 2], din, dout);
        for (h, l) in half.iter().zip(&lin) {
            assert!((h - 0.5 * l).abs() < 1e-15);
        }
        let open = glu_eval(&x, &w1, &b1, &[0.0; 6], &[30.0; 2], din, dout);
        for (o, l) in open.iter().zip(&lin) {
            assert!((o - l).abs() < 1e-9);
        }
    }

    #[test]
    fn glu_matches_composition() {
        let (din, dout) = (4, 3);
        let x = rand_vec(5 * din, 41);
        let (w1, b1) = (rand_vec(din * dout, 42), rand_vec(dout, 43));
        let (w2, b2) = (rand_vec(din * dout, 44), rand_vec(dout, 45));
        let y = glu_eval(&x, &w1, &b1, &w2, &b2, din, dout);
        let a = affine(&x, &w1, &b1, din, dout);
        let g = affine(&x, &w2, &b2, din, dout);
        for i in 0..y.len() {
            let expected = a[i] * (1.0 / (1.0 + (-g[i]).exp()));
            assert!((y[i] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn init_ranges() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = crate::rng::stream(0, crate::rng::Stream::Init);
        let lin = LinearLayer::new(&mut store, "l", 16, 8, &mut rng);
        assert!(store.get(lin.weight).data().iter().all(|v| v.abs() <= 0.25));
        let emb = EmbeddingTable::new(&mut store, "e", 1000, 16, &mut rng);
        let vals = store.get(emb.matrix).data();
        let std = (vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64).sqrt();
        assert!((std - 0.02).abs() < 0.002);
        let norm = LayerNormParams::new(&mut store, "n", 4);
        assert_eq!(norm.eps, 1e-12);
        let t: &Tensor<f64> = store.get(norm.gain);
        assert_eq!(t.data(), &[1.0; 4]);
    }
}
