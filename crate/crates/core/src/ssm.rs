//! Selective state-space blocks.
//!
//! A diagonal SSM with input-dependent `B`, `C` and step size `Δ`, discretized
//! per position and run as a linear recurrence along the sequence. The block
//! wraps the scan with a causal convolution front end and a gated output, and
//! [`EchoMambaLayer`] runs one block forwards and one over the reversed
//! sequence before fusing the two.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv1DDepthwise, GluParams, LayerNormParams, LinearLayer};
use crate::params::{ParamId, ParamStore, Session};
use crate::rng::Rng;
use crate::scalar::{Precision, Scalar};
use crate::tensor::{BackwardArgs, Function, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discretization {
    /// `b̄ = (exp(ΔA) − 1)/A · B`.
    #[default]
    Zoh,
    /// `b̄ = Δ·B`.
    Euler,
}

/// How the scan output is combined before the output projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockCombine {
    /// `H ⊙ SiLU(gate)`.
    #[default]
    Gate,
    /// `SiLU(H) + X′`.
    Residual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SsmConfig {
    pub d_state: usize,
    pub kernel: usize,
    pub expand: usize,
    pub discretization: Discretization,
    pub combine: BlockCombine,
}

impl Default for SsmConfig {
    fn default() -> Self {
        SsmConfig {
            d_state: 16,
            kernel: 4,
            expand: 2,
            discretization: Discretization::Zoh,
            combine: BlockCombine::Gate,
        }
    }
}

impl SsmConfig {
    pub fn d_inner(&self, d_model: usize) -> usize {
        self.expand * d_model
    }

    /// Rank of the `Δ` projection, `⌈D_inner/16⌉`.
    pub fn dt_rank(&self, d_model: usize) -> usize {
        self.d_inner(d_model).div_ceil(16)
    }
}

/// `(expm1(z), expm1(z)/z)`, the second continuous at 0.
fn expm1_phi<F: Scalar>(z: F) -> (F, F) {
    let m = z.exp_m1();
    let phi = if z.abs() < F::of(1e-6) { F::one() + z * F::of(0.5) } else { m / z };
    (m, phi)
}

/// `φ′(z) = (z·eᶻ − expm1(z))/z²`, computed from `φ(z)` as `(eᶻ − φ)/z`.
/// Near zero the difference cancels, so a series takes over.
fn phi_prime<F: Scalar>(z: F, phi: F) -> F {
    let cutoff = match F::PRECISION {
        Precision::F64 => 1e-2,
        Precision::F32 => 1e-1,
    };
    if z.abs() < F::of(cutoff) {
        let z2 = z * z;
        F::of(0.5) + z / F::of(3.0) + z2 / F::of(8.0) + z2 * z / F::of(30.0) + z2 * z2 / F::of(144.0)
    } else {
        (F::one() + z * phi - phi) / z
    }
}

fn check_discretize_shapes(a_log: &[usize], delta: &[usize], b: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match (a_log, delta, b) {
        ([di, n], [bs, l, di2], [bs2, l2, n2]) if di == di2 && n == n2 && bs == bs2 && l == l2 => {
            Ok((*bs, *l, *di, *n))
        }
        _ => Err(Error::shape("discretize", delta, a_log)),
    }
}

fn decay_rates<F: Scalar>(a_log: &[F]) -> Vec<F> {
    a_log.iter().map(|v| -v.exp()).collect()
}

struct ZohDecay {
    dims: (usize, usize, usize, usize),
}

impl<F: Scalar> Function<F> for ZohDecay {
    fn name(&self) -> &'static str {
        "zoh_decay"
    }

    fn backward(&self, args: BackwardArgs<'_, F>) -> Vec<Option<Vec<F>>> {
        let (bs, l, di, n) = self.dims;
        let a = decay_rates(args.inputs[0].0);
        let delta = args.inputs[1].0;
        let a_bar = args.output;
        let mut g_alog = vec![F::zero(); di * n];
        let mut g_delta = vec![F::zero(); bs * l * di];
        for p in 0..bs * l {
            for d in 0..di {
                let dt = delta[p * di + d];
                let base = (p * di + d) * n;
                let mut acc = F::zero();
                for s in 0..n {
                    // ∂ā/∂Δ = ā·A and ∂ā/∂a_log = ā·Δ·A.
                    let t = args.grad[base + s] * a_bar[base + s] * a[d * n + s];
                    acc += t;
                    g_alog[d * n + s] += t * dt;
                }
                g_delta[p * di + d] = acc;
            }
        }
        vec![Some(g_alog), Some(g_delta)]
    }
}

struct ZohInput<F> {
    dims: (usize, usize, usize, usize),
    mode: Discretization,
    /// `φ(Δ·A)` per element, ZOH only.
    phi: Vec<F>,
}

impl<F: Scalar> Function<F> for ZohInput<F> {
    fn name(&self) -> &'static str {
        "zoh_input"
    }

    fn backward(&self, args: BackwardArgs<'_, F>) -> Vec<Option<Vec<F>>> {
        let (bs, l, di, n) = self.dims;
        let a = decay_rates(args.inputs[0].0);
        let delta = args.inputs[1].0;
        let b = args.inputs[2].0;
        let g = args.grad;
        let mut g_alog = vec![F::zero(); di * n];
        let mut g_delta = vec![F::zero(); bs * l * di];
        let mut g_b = vec![F::zero(); bs * l * n];
        for p in 0..bs * l {
            let bp = &b[p * n..(p + 1) * n];
            let gbp = &mut g_b[p * n..(p + 1) * n];
            for d in 0..di {
                let dt = delta[p * di + d];
                let base = (p * di + d) * n;
                let mut acc = F::zero();
                match self.mode {
                    Discretization::Euler => {
                        for s in 0..n {
                            acc += g[base + s] * bp[s];
                            gbp[s] += g[base + s] * dt;
                        }
                    }
                    Discretization::Zoh => {
                        for s in 0..n {
                            let (gv, av, phi) = (g[base + s], a[d * n + s], self.phi[base + s]);
                            let z = dt * av;
                            // ∂b̄/∂Δ = eᶻ·B, ∂b̄/∂B = Δφ, ∂b̄/∂A = Δ²φ′·B.
                            acc += gv * (F::one() + z * phi) * bp[s];
                            gbp[s] += gv * dt * phi;
                            g_alog[d * n + s] += gv * bp[s] * dt * dt * phi_prime(z, phi) * av;
                        }
                    }
                }
                g_delta[p * di + d] = acc;
            }
        }
        let g_alog = (self.mode == Discretization::Zoh).then_some(g_alog);
        vec![g_alog, Some(g_delta), Some(g_b)]
    }
}

/// Per-position discretization of the diagonal system `A = −exp(a_log)`.
///
/// Returns `(ā, b̄)`, both `[B × L × D_inner × N]`. `Δ` must be strictly
/// positive.
pub fn discretize<F: Scalar>(
    tape: &mut Tape<F>,
    a_log: Var,
    delta: Var,
    b: Var,
    mode: Discretization,
) -> Result<(Var, Var)> {
    let dims = check_discretize_shapes(tape.shape(a_log), tape.shape(delta), tape.shape(b))?;
    let (bs, l, di, n) = dims;
    let (dv, bv) = (tape.value(delta), tape.value(b));
    if let Some(bad) = dv.iter().find(|&&v| v.partial_cmp(&F::zero()) != Some(std::cmp::Ordering::Greater)) {
        return Err(Error::contract(format!("step size must be positive, got {bad}")));
    }
    let a = decay_rates(tape.value(a_log));
    let total = bs * l * di * n;
    let zoh = mode == Discretization::Zoh;
    let mut a_bar = vec![F::zero(); total];
    let mut b_bar = vec![F::zero(); total];
    let mut phis = vec![F::zero(); if zoh { total } else { 0 }];
    for (r, (ar, br)) in a_bar.chunks_exact_mut(n).zip(b_bar.chunks_exact_mut(n)).enumerate() {
        let (p, d) = (r / di, r % di);
        let dt = dv[r];
        let bp = &bv[p * n..(p + 1) * n];
        let ad = &a[d * n..(d + 1) * n];
        for s in 0..n {
            let (m, phi) = expm1_phi(dt * ad[s]);
            ar[s] = F::one() + m;
            if zoh {
                br[s] = dt * phi * bp[s];
                phis[r * n + s] = phi;
            } else {
                br[s] = dt * bp[s];
            }
        }
    }
    // exp of a nonpositive number; rounding may land exactly on 1.
    if let Some(bad) = a_bar.iter().find(|v| !(**v >= F::zero() && **v <= F::one())) {
        return Err(Error::contract(format!("decay {bad} outside [0, 1]")));
    }
    let shape = vec![bs, l, di, n];
    let a_out = tape.push(a_bar, shape.clone(), vec![a_log, delta], Box::new(ZohDecay { dims }))?;
    let b_out = tape.push(
        b_bar,
        shape,
        vec![a_log, delta, b],
        Box::new(ZohInput { dims, mode, phi: phis }),
    )?;
    Ok((a_out, b_out))
}

/// Shapes of a scan call: batch, length, channels, state size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanDims {
    pub batch: usize,
    pub len: usize,
    pub channels: usize,
    pub state: usize,
}

impl ScanDims {
    fn check<F>(&self, x: &[F], a: &[F], b: &[F], c: &[F], d: &[F]) -> Result<()> {
        let ScanDims {
            batch,
            len,
            channels,
            state,
        } = *self;
        let bl = batch * len;
        if x.len() != bl * channels
            || a.len() != bl * channels * state
            || b.len() != a.len()
            || c.len() != bl * state
            || d.len() != channels
        {
            return Err(Error::shape(
                "selective_scan",
                &[x.len(), a.len(), b.len(), c.len(), d.len()],
                &[bl * channels, bl * channels * state, bl * channels * state, bl * state, channels],
            ));
        }
        Ok(())
    }
}

/// Reference recurrence. Writes `y` and, when given, every hidden state.
#[allow(clippy::too_many_arguments)]
pub fn scan_sequential<F: Scalar>(
    dims: ScanDims,
    x: &[F],
    a_bar: &[F],
    b_bar: &[F],
    c: &[F],
    d_skip: &[F],
    y: &mut [F],
    mut states: Option<&mut [F]>,
) {
    let ScanDims {
        batch,
        len,
        channels: di,
        state: n,
    } = dims;
    // Time-major so every array is read front to back.
    let mut h = vec![F::zero(); di * n];
    for bi in 0..batch {
        h.fill(F::zero());
        for t in 0..len {
            let p = bi * len + t;
            let cs = &c[p * n..(p + 1) * n];
            for d in 0..di {
                let xv = x[p * di + d];
                let base = (p * di + d) * n;
                let hd = &mut h[d * n..(d + 1) * n];
                let (ad, bd) = (&a_bar[base..base + n], &b_bar[base..base + n]);
                let mut acc = F::zero();
                for s in 0..n {
                    hd[s] = ad[s] * hd[s] + bd[s] * xv;
                    acc += cs[s] * hd[s];
                }
                y[p * di + d] = acc + d_skip[d] * xv;
            }
            if let Some(st) = states.as_deref_mut() {
                let base = p * di * n;
                st[base..base + di * n].copy_from_slice(&h);
            }
        }
    }
}

/// Chunked scan: every block of `block` steps is scanned from a zero state
/// alongside its running decay product, then the carried-in state is added.
/// Produces the same output as [`scan_sequential`].
#[allow(clippy::too_many_arguments)]
pub fn scan_blocked<F: Scalar>(
    dims: ScanDims,
    x: &[F],
    a_bar: &[F],
    b_bar: &[F],
    c: &[F],
    d_skip: &[F],
    block: usize,
    y: &mut [F],
) -> Result<()> {
    dims.check(x, a_bar, b_bar, c, d_skip)?;
    if block == 0 {
        return Err(Error::contract("scan block size must be positive"));
    }
    let ScanDims {
        batch,
        len,
        channels: di,
        state: n,
    } = dims;
    let mut local = vec![F::zero(); block * n];
    let mut decay = vec![F::zero(); block * n];
    let mut carry = vec![F::zero(); n];
    for bi in 0..batch {
        for d in 0..di {
            carry.fill(F::zero());
            for start in (0..len).step_by(block) {
                let end = (start + block).min(len);
                // Independent of the carry: local states and decay products.
                for t in start..end {
                    let p = bi * len + t;
                    let base = (p * di + d) * n;
                    let r = (t - start) * n;
                    let xv = x[p * di + d];
                    for s in 0..n {
                        let (prev_h, prev_a) = if t == start {
                            (F::zero(), F::one())
                        } else {
                            (local[r - n + s], decay[r - n + s])
                        };
                        local[r + s] = a_bar[base + s] * prev_h + b_bar[base + s] * xv;
                        decay[r + s] = a_bar[base + s] * prev_a;
                    }
                }
                for t in start..end {
                    let p = bi * len + t;
                    let r = (t - start) * n;
                    let xv = x[p * di + d];
                    let mut acc = F::zero();
                    for s in 0..n {
                        let h = local[r + s] + decay[r + s] * carry[s];
                        acc += c[p * n + s] * h;
                    }
                    y[p * di + d] = acc + d_skip[d] * xv;
                }
                let last = (end - 1 - start) * n;
                for s in 0..n {
                    carry[s] = local[last + s] + decay[last + s] * carry[s];
                }
            }
        }
    }
    Ok(())
}

struct Scan<F> {
    dims: ScanDims,
    states: Vec<F>,
}

impl<F: Scalar> Function<F> for Scan<F> {
    fn name(&self) -> &'static str {
        "selective_scan"
    }

    fn backward(&self, args: BackwardArgs<'_, F>) -> Vec<Option<Vec<F>>> {
        let ScanDims {
            batch,
            len,
            channels: di,
            state: n,
        } = self.dims;
        let x = args.inputs[0].0;
        let a_bar = args.inputs[1].0;
        let b_bar = args.inputs[2].0;
        let c = args.inputs[3].0;
        let d_skip = args.inputs[4].0;
        let gy = args.grad;
        let h = &self.states;

        let mut gx = vec![F::zero(); x.len()];
        let mut ga = vec![F::zero(); a_bar.len()];
        let mut gb = vec![F::zero(); b_bar.len()];
        let mut gc = vec![F::zero(); c.len()];
        let mut gd = vec![F::zero(); di];
        let mut gh = vec![F::zero(); di * n];
        for bi in 0..batch {
            gh.fill(F::zero());
            for t in (0..len).rev() {
                let p = bi * len + t;
                let cs = &c[p * n..(p + 1) * n];
                let gcs = &mut gc[p * n..(p + 1) * n];
                for d in 0..di {
                    let base = (p * di + d) * n;
                    let g = gy[p * di + d];
                    let xv = x[p * di + d];
                    gd[d] += g * xv;
                    let mut gxv = g * d_skip[d];
                    let ghd = &mut gh[d * n..(d + 1) * n];
                    for s in 0..n {
                        // Carry from t+1 was already folded in below.
                        ghd[s] += g * cs[s];
                        gcs[s] += g * h[base + s];
                        gb[base + s] = ghd[s] * xv;
                        gxv += ghd[s] * b_bar[base + s];
                        if t > 0 {
                            ga[base + s] = ghd[s] * h[base - di * n + s];
                        }
                        ghd[s] *= a_bar[base + s];
                    }
                    gx[p * di + d] = gxv;
                }
            }
        }
        vec![Some(gx), Some(ga), Some(gb), Some(gc), Some(gd)]
    }
}

/// `hₜ = āₜ ⊙ hₜ₋₁ + b̄ₜ·xₜ`, `yₜ = ⟨cₜ, hₜ⟩ + D·xₜ`, from `h₀ = 0`.
///
/// `x: [B × L × Dᵢ]`, `ā, b̄: [B × L × Dᵢ × N]`, `c: [B × L × N]`,
/// `d_skip: [Dᵢ]`.
pub fn selective_scan<F: Scalar>(
    tape: &mut Tape<F>,
    x: Var,
    a_bar: Var,
    b_bar: Var,
    c: Var,
    d_skip: Var,
) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let [batch, len, channels] = shape[..] else {
        return Err(Error::shape("selective_scan", &shape, tape.shape(a_bar)));
    };
    let state = tape.shape(c).last().copied().unwrap_or(0);
    let dims = ScanDims {
        batch,
        len,
        channels,
        state,
    };
    let (xv, av, bv, cv, dv) = (
        tape.value(x),
        tape.value(a_bar),
        tape.value(b_bar),
        tape.value(c),
        tape.value(d_skip),
    );
    dims.check(xv, av, bv, cv, dv)?;
    let mut y = vec![F::zero(); xv.len()];
    let mut states = vec![F::zero(); av.len()];
    scan_sequential(dims, xv, av, bv, cv, dv, &mut y, Some(&mut states));
    tape.push(
        y,
        shape,
        vec![x, a_bar, b_bar, c, d_skip],
        Box::new(Scan { dims, states }),
    )
}

/// Reverses the valid (right-aligned) suffix of every row of a
/// `[B × L × inner]` buffer. Left padding stays in place. Involutive.
pub fn reverse_valid<T: Copy>(data: &[T], shape: &[usize], lengths: &[usize]) -> Result<Vec<T>> {
    if shape.len() < 2 || shape[0] != lengths.len() || data.len() != shape.iter().product::<usize>() {
        return Err(Error::shape("reverse_valid", shape, &[lengths.len()]));
    }
    let (batch, len) = (shape[0], shape[1]);
    let inner: usize = shape[2..].iter().product();
    if let Some(&bad) = lengths.iter().find(|&&n| n > len) {
        return Err(Error::contract(format!("valid length {bad} exceeds sequence length {len}")));
    }
    let mut out = data.to_vec();
    for (bi, &n) in lengths.iter().enumerate().take(batch) {
        let start = len - n;
        for k in 0..n {
            let src = (bi * len + start + k) * inner;
            let dst = (bi * len + len - 1 - k) * inner;
            out[dst..dst + inner].copy_from_slice(&data[src..src + inner]);
        }
    }
    Ok(out)
}

struct ReverseValid {
    lengths: Vec<usize>,
}

impl<F: Scalar> Function<F> for ReverseValid {
    fn name(&self) -> &'static str {
        "reverse_valid"
    }

    fn backward(&self, args: BackwardArgs<'_, F>) -> Vec<Option<Vec<F>>> {
        let g = reverse_valid(args.grad, args.out_shape, &self.lengths).expect("validated in forward");
        vec![Some(g)]
    }
}

/// Differentiable [`reverse_valid`].
pub fn reverse_valid_var<F: Scalar>(tape: &mut Tape<F>, x: Var, lengths: &[usize]) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let out = reverse_valid(tape.value(x), &shape, lengths)?;
    tape.push(
        out,
        shape,
        vec![x],
        Box::new(ReverseValid {
            lengths: lengths.to_vec(),
        }),
    )
}

/// Learnable state of one selective SSM block.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmParams {
    /// `log(−A)`, `[D_inner × N]`.
    pub a_log: ParamId,
    pub proj_in: LinearLayer,
    pub conv: Conv1DDepthwise,
    pub proj_bcd: LinearLayer,
    pub delta_proj: LinearLayer,
    pub proj_out: LinearLayer,
    pub d_skip: ParamId,
    pub config: SsmConfig,
    pub d_model: usize,
}

impl SsmParams {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        d_model: usize,
        config: SsmConfig,
        rng: &mut Rng,
    ) -> Self {
        use rand::Rng as _;
        let di = config.d_inner(d_model);
        let n = config.d_state;
        let r = config.dt_rank(d_model);
        let a_log_init: Vec<F> = (0..di)
            .flat_map(|_| (0..n).map(|s| F::of(((s + 1) as f64).ln())))
            .collect();
        let a_log = store.add(
            format!("{name}.a_log"),
            Tensor::new(vec![di, n], a_log_init).expect("shape matches"),
        );
        let proj_in = LinearLayer::new(store, &format!("{name}.proj_in"), d_model, 2 * di, rng);
        let conv = Conv1DDepthwise::new(store, &format!("{name}.conv"), di, config.kernel, rng);
        let proj_bcd = LinearLayer::new(store, &format!("{name}.proj_bcd"), di, 2 * n + r, rng);
        let delta_proj = LinearLayer::new(store, &format!("{name}.delta_proj"), r, di, rng);
        // Bias = softplus⁻¹(dt) with dt log-uniform in [1e-3, 1e-1].
        let (lo, hi) = (1e-3f64.ln(), 1e-1f64.ln());
        for v in store.get_mut(delta_proj.bias).data_mut() {
            let dt = rng.random_range(lo..hi).exp();
            *v = F::of(dt + (-(-dt).exp_m1()).ln());
        }
        let d_skip = store.constant(format!("{name}.d_skip"), vec![di], 1.0);
        let proj_out = LinearLayer::new(store, &format!("{name}.proj_out"), di, d_model, rng);
        SsmParams {
            a_log,
            proj_in,
            conv,
            proj_bcd,
            delta_proj,
            proj_out,
            d_skip,
            config,
            d_model,
        }
    }

    pub fn param_count(&self) -> usize {
        let di = self.config.d_inner(self.d_model);
        di * self.config.d_state
            + self.proj_in.param_count()
            + di * (self.config.kernel + 1)
            + self.proj_bcd.param_count()
            + self.delta_proj.param_count()
            + self.proj_out.param_count()
            + di
    }

    /// Input projection, causal conv + SiLU, selective scan, combine, output
    /// projection. `x: [B × L × D]`.
    pub fn forward<F: Scalar>(&self, s: &mut Session<'_, F>, x: Var) -> Result<Var> {
        let di = self.config.d_inner(self.d_model);
        let n = self.config.d_state;
        let r = self.config.dt_rank(self.d_model);
        let xz = self.proj_in.forward(s, x)?;
        let branch = s.tape.narrow(xz, 2, 0, di)?;
        let gate = s.tape.narrow(xz, 2, di, di)?;
        let conv = self.conv.forward(s, branch)?;
        let xp = s.tape.silu(conv)?;

        let bcd = self.proj_bcd.forward(s, xp)?;
        let b = s.tape.narrow(bcd, 2, 0, n)?;
        let c = s.tape.narrow(bcd, 2, n, n)?;
        let dr = s.tape.narrow(bcd, 2, 2 * n, r)?;
        let dt = self.delta_proj.forward(s, dr)?;
        let delta = s.tape.softplus(dt)?;

        let a_log = s.param(self.a_log);
        let (a_bar, b_bar) = discretize(&mut s.tape, a_log, delta, b, self.config.discretization)?;
        let d_skip = s.param(self.d_skip);
        let h = selective_scan(&mut s.tape, xp, a_bar, b_bar, c, d_skip)?;

        let combined = match self.config.combine {
            BlockCombine::Gate => {
                let g = s.tape.silu(gate)?;
                s.tape.mul(h, g)?
            }
            BlockCombine::Residual => {
                let a = s.tape.silu(h)?;
                s.tape.add(a, xp)?
            }
        };
        self.proj_out.forward(s, combined)
    }
}

/// One bidirectional layer: forward block, reverse block, fusion and GLU.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoMambaLayer {
    pub forward_block: SsmParams,
    /// Absent in unidirectional mode.
    pub reverse_block: Option<SsmParams>,
    pub fuse: Option<LinearLayer>,
    pub glu: GluParams,
    pub norm_fwd: LayerNormParams,
    pub norm_rev: Option<LayerNormParams>,
    pub norm_out: LayerNormParams,
    pub dropout: f64,
}

impl EchoMambaLayer {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        d_model: usize,
        config: SsmConfig,
        bidirectional: bool,
        dropout: f64,
        rng: &mut Rng,
    ) -> Self {
        let forward_block = SsmParams::new(store, &format!("{name}.fwd"), d_model, config, rng);
        let norm_fwd = LayerNormParams::new(store, &format!("{name}.norm_fwd"), d_model);
        let (reverse_block, norm_rev, fuse) = if bidirectional {
            (
                Some(SsmParams::new(store, &format!("{name}.rev"), d_model, config, rng)),
                Some(LayerNormParams::new(store, &format!("{name}.norm_rev"), d_model)),
                Some(LinearLayer::new(store, &format!("{name}.fuse"), 2 * d_model, d_model, rng)),
            )
        } else {
            (None, None, None)
        };
        let glu = GluParams::new(store, &format!("{name}.glu"), d_model, d_model, rng);
        let norm_out = LayerNormParams::new(store, &format!("{name}.norm_out"), d_model);
        EchoMambaLayer {
            forward_block,
            reverse_block,
            fuse,
            glu,
            norm_fwd,
            norm_rev,
            norm_out,
            dropout,
        }
    }

    pub fn is_bidirectional(&self) -> bool {
        self.reverse_block.is_some()
    }

    pub fn param_count(&self) -> usize {
        let d = self.forward_block.d_model;
        self.forward_block.param_count()
            + self.reverse_block.as_ref().map_or(0, |b| b.param_count() + 2 * d)
            + self.fuse.as_ref().map_or(0, |f| f.param_count())
            + self.glu.param_count()
            + 4 * d
    }

    /// `x: [B × L × D]` with right-aligned valid lengths.
    pub fn forward<F: Scalar>(&self, s: &mut Session<'_, F>, x: Var, lengths: &[usize]) -> Result<Var> {
        let fwd = self.forward_block.forward(s, x)?;
        let y_fwd = add_norm(s, x, fwd, &self.norm_fwd, self.dropout)?;
        let fused = match (&self.reverse_block, &self.norm_rev, &self.fuse) {
            (Some(rev), Some(norm_rev), Some(fuse)) => {
                let xr = reverse_valid_var(&mut s.tape, x, lengths)?;
                let out = rev.forward(s, xr)?;
                let yr = add_norm(s, xr, out, norm_rev, self.dropout)?;
                let y_rev = reverse_valid_var(&mut s.tape, yr, lengths)?;
                let both = s.tape.concat(&[y_fwd, y_rev], 2)?;
                fuse.forward(s, both)?
            }
            _ => y_fwd,
        };
        let refined = self.glu.forward(s, fused)?;
        add_norm(s, fused, refined, &self.norm_out, self.dropout)
    }
}

/// `LayerNorm(x + Dropout(y))`.
pub fn add_norm<F: Scalar>(
    s: &mut Session<'_, F>,
    x: Var,
    y: Var,
    norm: &LayerNormParams,
    dropout: f64,
) -> Result<Var> {
    let y = s.dropout(y, dropout)?;
    let sum = s.tape.add(x, y)?;
    norm.forward(s, sum)
}
