//! Central finite-difference checks of every backward rule, in f64.
//!
//! Each check registers its inputs as parameters, builds a scalar loss by
//! contracting the op output with a fixed random weight tensor, and compares
//! the tape gradient of every parameter with `(f(x+h) − f(x−h)) / 2h`.
//! The per-tensor error is `max|a − n| / max(max|a|, max|n|, 1e-6)`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::Result;
use crate::model::{cross_entropy, EchoMambaModel, FilterPlacement, ModelConfig};
use crate::nn::{conv1d_depthwise, gather_rows, glu, layer_norm, linear};
use crate::params::{ParamId, ParamStore, Session};
use crate::rng::{stream, Rng, Stream};
use crate::spectral::{spectral_filter, SpectralFilterLayer};
use crate::ssm::{
    discretize, reverse_valid_var, selective_scan, BlockCombine, Discretization, EchoMambaLayer, SsmConfig, SsmParams,
};
use crate::tensor::{Tensor, Var};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub max_abs_error: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub op: String,
    pub tensors: Vec<TensorCheck>,
    pub passed: bool,
}

impl CheckReport {
    pub fn worst(&self) -> f64 {
        self.tensors.iter().map(|t| t.rel_error).fold(0.0, f64::max)
    }
}

/// Compares tape and numeric gradients for every parameter in `store`.
pub fn check<B>(op: &str, store: &mut ParamStore<f64>, build: B) -> Result<CheckReport>
where
    B: Fn(&mut Session<'_, f64>) -> Result<Var>,
{
    let analytic = {
        let mut s = Session::eval(store).with_finite_checks(true);
        let loss = build(&mut s)?;
        s.backward(loss)?
    };
    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut s = Session::eval(store);
        let loss = build(&mut s)?;
        Ok(s.tape.value(loss)[0])
    };
    let ids: Vec<ParamId> = store.ids().collect();
    let mut tensors = Vec::with_capacity(ids.len());
    for id in ids {
        let n = store.get(id).numel();
        let mut numeric = vec![0.0; n];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + STEP;
            let up = eval(store)?;
            store.get_mut(id).data_mut()[i] = orig - STEP;
            let down = eval(store)?;
            store.get_mut(id).data_mut()[i] = orig;
            *slot = (up - down) / (2.0 * STEP);
        }
        let a = analytic[id.0].clone().unwrap_or_else(|| vec![0.0; n]);
        let max_abs_error = a.iter().zip(&numeric).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let scale = a
            .iter()
            .chain(&numeric)
            .map(|v| v.abs())
            .fold(1e-6, f64::max);
        tensors.push(TensorCheck {
            name: store.name(id).to_string(),
            max_abs_error,
            rel_error: max_abs_error / scale,
        });
    }
    let passed = tensors.iter().all(|t| t.rel_error < TOLERANCE);
    Ok(CheckReport {
        op: op.to_string(),
        tensors,
        passed,
    })
}

fn uniform(store: &mut ParamStore<f64>, name: &str, shape: Vec<usize>, lo: f64, hi: f64, rng: &mut Rng) -> ParamId {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    store.add(name, Tensor::new(shape, data).expect("shape matches"))
}

/// `Σ y ⊙ w` with a fixed random `w`, so every output element matters.
fn contract(s: &mut Session<'_, f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = s.tape.shape(y).to_vec();
    let mut rng = stream(seed, Stream::Bench);
    let w = (0..s.tape.value(y).len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w = s.tape.constant(shape, w)?;
    let p = s.tape.mul(y, w)?;
    s.tape.sum_all(p)
}

fn toy_batch(rng: &mut Rng, b: usize, l: usize, n_items: usize) -> Batch {
    let mut inputs = Vec::with_capacity(b);
    for i in 0..b {
        let len = if i == 0 { l } else { rng.random_range(1..=l) };
        inputs.push((0..len).map(|_| rng.random_range(1..=n_items as u32)).collect::<Vec<u32>>());
    }
    let refs: Vec<&[u32]> = inputs.iter().map(Vec::as_slice).collect();
    let targets: Vec<usize> = (0..b).map(|_| rng.random_range(1..=n_items)).collect();
    Batch::from_inputs(&refs, &targets, l).expect("valid toy batch")
}

fn toy_ssm() -> SsmConfig {
    SsmConfig {
        d_state: 2,
        kernel: 2,
        expand: 2,
        ..SsmConfig::default()
    }
}

type Case = (&'static str, Box<dyn Fn() -> Result<CheckReport>>);

fn cases() -> Vec<Case> {
    let mut v: Vec<Case> = Vec::new();

    v.push(("matmul", Box::new(|| {
        let mut rng = stream(1, Stream::Init);
        let mut st = ParamStore::new();
        let a = uniform(&mut st, "a", vec![2, 3, 4], -2.0, 2.0, &mut rng);
        let b = uniform(&mut st, "b", vec![4, 5], -2.0, 2.0, &mut rng);
        check("matmul", &mut st, |s| {
            let (a, b) = (s.param(a), s.param(b));
            let y = s.tape.matmul(a, b)?;
            contract(s, y, 1)
        })
    })));

    v.push(("broadcast add/sub/mul", Box::new(|| {
        let mut rng = stream(2, Stream::Init);
        let mut st = ParamStore::new();
        let a = uniform(&mut st, "a", vec![2, 3, 4], -2.0, 2.0, &mut rng);
        let b = uniform(&mut st, "b", vec![3, 1], -2.0, 2.0, &mut rng);
        let c = uniform(&mut st, "c", vec![4], -2.0, 2.0, &mut rng);
        check("broadcast", &mut st, |s| {
            let (a, b, c) = (s.param(a), s.param(b), s.param(c));
            let x = s.tape.add(a, b)?;
            let x = s.tape.sub(x, c)?;
            let y = s.tape.mul(x, b)?;
            contract(s, y, 2)
        })
    })));

    v.push(("unary ops", Box::new(|| {
        let mut rng = stream(3, Stream::Init);
        let mut st = ParamStore::new();
        let a = uniform(&mut st, "a", vec![3, 5], -2.0, 2.0, &mut rng);
        check("unary", &mut st, |s| {
            let a = s.param(a);
            let parts = [
                s.tape.sigmoid(a)?,
                s.tape.silu(a)?,
                s.tape.softplus(a)?,
                s.tape.exp(a)?,
                s.tape.neg(a)?,
                s.tape.scale(a, 0.37)?,
            ];
            let y = s.tape.concat(&parts, 1)?;
            contract(s, y, 3)
        })
    })));

    v.push(("reductions and shape ops", Box::new(|| {
        let mut rng = stream(4, Stream::Init);
        let mut st = ParamStore::new();
        let a = uniform(&mut st, "a", vec![2, 4, 5], -2.0, 2.0, &mut rng);
        check("reduce", &mut st, |s| {
            let a = s.param(a);
            let s0 = s.tape.sum(a, 0)?;
            let m2 = s.tape.mean(a, 2)?;
            let t = s.tape.transpose(a)?;
            let n = s.tape.narrow(t, 1, 1, 3)?;
            let r = s.tape.reshape(n, vec![6, 4])?;
            let l0 = contract(s, s0, 41)?;
            let l1 = contract(s, m2, 42)?;
            let l2 = contract(s, r, 43)?;
            let x = s.tape.add(l0, l1)?;
            let x = s.tape.add(x, l2)?;
            let mean = s.tape.mean_all(a)?;
            s.tape.add(x, mean)
        })
    })));

    v.push(("embed", Box::new(|| {
        let mut rng = stream(5, Stream::Init);
        let mut st = ParamStore::new();
        let t = uniform(&mut st, "table", vec![6, 3], -2.0, 2.0, &mut rng);
        check("embed", &mut st, |s| {
            let t = s.param(t);
            let y = gather_rows(&mut s.tape, t, &[0, 2, 5, 2, 1, 2], &[2, 3])?;
            contract(s, y, 5)
        })
    })));

    v.push(("linear", Box::new(|| {
        let mut rng = stream(6, Stream::Init);
        let mut st = ParamStore::new();
        let x = uniform(&mut st, "x", vec![2, 3, 4], -2.0, 2.0, &mut rng);
        let w = uniform(&mut st, "w", vec![4, 2], -2.0, 2.0, &mut rng);
        let b = uniform(&mut st, "b", vec![2], -2.0, 2.0, &mut rng);
        check("linear", &mut st, |s| {
            let (x, w, b) = (s.param(x), s.param(w), s.param(b));
            let y = linear(&mut s.tape, x, w, b)?;
            contract(s, y, 6)
        })
    })));

    v.push(("layer_norm", Box::new(|| {
        let mut rng = stream(7, Stream::Init);
        let mut st = ParamStore::new();
        let x = uniform(&mut st, "x", vec![3, 6], -2.0, 2.0, &mut rng);
        let g = uniform(&mut st, "gain", vec![6], -2.0, 2.0, &mut rng);
        let b = uniform(&mut st, "shift", vec![6], -2.0, 2.0, &mut rng);
        check("layer_norm", &mut st, |s| {
            let (x, g, b) = (s.param(x), s.param(g), s.param(b));
            let y = layer_norm(&mut s.tape, x, g, b, 1e-12)?;
            contract(s, y, 7)
        })
    })));

    v.push(("conv1d_depthwise", Box::new(|| {
        let mut rng = stream(8, Stream::Init);
        let mut st = ParamStore::new();
        let x = uniform(&mut st, "x", vec![2, 6, 3], -2.0, 2.0, &mut rng);
        let k = uniform(&mut st, "kernels", vec![3, 4], -2.0, 2.0, &mut rng);
        let b = uniform(&mut st, "bias", vec![3], -2.0, 2.0, &mut rng);
        check("conv1d_depthwise", &mut st, |s| {
            let (x, k, b) = (s.param(x), s.param(k), s.param(b));
            let y = conv1d_depthwise(&mut s.tape, x, k, b)?;
            contract(s, y, 8)
        })
    })));

    v.push(("glu", Box::new(|| {
        let mut rng = stream(9, Stream::Init);
        let mut st = ParamStore::new();
        let x = uniform(&mut st, "x", vec![2, 3, 4], -2.0, 2.0, &mut rng);
        let w1 = uniform(&mut st, "w1", vec![4, 3], -2.0, 2.0, &mut rng);
        let b1 = uniform(&mut st, "b1", vec![3], -2.0, 2.0, &mut rng);
        let w2 = uniform(&mut st, "w2", vec![4, 3], -2.0, 2.0, &mut rng);
        let b2 = uniform(&mut st, "b2", vec![3], -2.0, 2.0, &mut rng);
        check("glu", &mut st, |s| {
            let ids = [x, w1, b1, w2, b2].map(|id| s.param(id));
            let y = glu(&mut s.tape, ids[0], ids[1], ids[2], ids[3], ids[4])?;
            contract(s, y, 9)
        })
    })));

    for l in [6usize, 7, 8] {
        v.push(("spectral_filter", Box::new(move || {
            let mut rng = stream(10 + l as u64, Stream::Init);
            let mut st = ParamStore::new();
            let bins = l / 2 + 1;
            let x = uniform(&mut st, "x", vec![2, l, 3], -2.0, 2.0, &mut rng);
            let kr = uniform(&mut st, "k_re", vec![bins, 3], -2.0, 2.0, &mut rng);
            let ki = uniform(&mut st, "k_im", vec![bins, 3], -2.0, 2.0, &mut rng);
            check(&format!("spectral_filter L={l}"), &mut st, |s| {
                let (x, kr, ki) = (s.param(x), s.param(kr), s.param(ki));
                let y = spectral_filter(&mut s.tape, x, kr, ki)?;
                contract(s, y, 10)
            })
        })));
    }

    v.push(("filter layer", Box::new(|| {
        let mut rng = stream(11, Stream::Init);
        let mut st = ParamStore::new();
        let x = uniform(&mut st, "x", vec![2, 6, 4], -2.0, 2.0, &mut rng);
        let layer = SpectralFilterLayer::new(&mut st, "filter", 6, 4, 0.0, &mut rng);
        for id in [layer.coeff_re, layer.coeff_im] {
            st.get_mut(id).data_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        check("filter_layer_forward", &mut st, |s| {
            let x = s.param(x);
            let y = layer.forward(s, x)?;
            contract(s, y, 11)
        })
    })));

    for mode in [Discretization::Zoh, Discretization::Euler] {
        v.push(("discretize", Box::new(move || {
            let mut rng = stream(12, Stream::Init);
            let mut st = ParamStore::new();
            let a_log = uniform(&mut st, "a_log", vec![3, 2], -1.0, 1.5, &mut rng);
            let delta = uniform(&mut st, "delta", vec![2, 4, 3], 0.05, 2.0, &mut rng);
            let b = uniform(&mut st, "b", vec![2, 4, 2], -2.0, 2.0, &mut rng);
            check(&format!("discretize {mode:?}"), &mut st, |s| {
                let (a, d, b) = (s.param(a_log), s.param(delta), s.param(b));
                let (ab, bb) = discretize(&mut s.tape, a, d, b, mode)?;
                let la = contract(s, ab, 121)?;
                let lb = contract(s, bb, 122)?;
                s.tape.add(la, lb)
            })
        })));
    }

    v.push(("discretize small steps", Box::new(|| {
        // Exercises the series branches of the input-matrix derivative.
        let mut rng = stream(13, Stream::Init);
        let mut st = ParamStore::new();
        let a_log = uniform(&mut st, "a_log", vec![2, 2], -1.0, 1.0, &mut rng);
        let delta = uniform(&mut st, "delta", vec![1, 3, 2], 1e-3, 4e-3, &mut rng);
        let b = uniform(&mut st, "b", vec![1, 3, 2], -2.0, 2.0, &mut rng);
        check("discretize small steps", &mut st, |s| {
            let (a, d, b) = (s.param(a_log), s.param(delta), s.param(b));
            let (ab, bb) = discretize(&mut s.tape, a, d, b, Discretization::Zoh)?;
            let la = contract(s, ab, 131)?;
            let lb = contract(s, bb, 132)?;
            s.tape.add(la, lb)
        })
    })));

    v.push(("selective_scan", Box::new(|| {
        let mut rng = stream(14, Stream::Init);
        let mut st = ParamStore::new();
        let x = uniform(&mut st, "x", vec![2, 5, 3], -2.0, 2.0, &mut rng);
        let a = uniform(&mut st, "a_bar", vec![2, 5, 3, 2], 0.0, 1.0, &mut rng);
        let b = uniform(&mut st, "b_bar", vec![2, 5, 3, 2], -2.0, 2.0, &mut rng);
        let c = uniform(&mut st, "c", vec![2, 5, 2], -2.0, 2.0, &mut rng);
        let d = uniform(&mut st, "d_skip", vec![3], -2.0, 2.0, &mut rng);
        check("selective_scan", &mut st, |s| {
            let ids = [x, a, b, c, d].map(|id| s.param(id));
            let y = selective_scan(&mut s.tape, ids[0], ids[1], ids[2], ids[3], ids[4])?;
            contract(s, y, 14)
        })
    })));

    v.push(("reverse_valid", Box::new(|| {
        let mut rng = stream(15, Stream::Init);
        let mut st = ParamStore::new();
        let x = uniform(&mut st, "x", vec![3, 5, 2], -2.0, 2.0, &mut rng);
        check("reverse_valid", &mut st, |s| {
            let x = s.param(x);
            let y = reverse_valid_var(&mut s.tape, x, &[5, 2, 1])?;
            contract(s, y, 15)
        })
    })));

    for combine in [BlockCombine::Gate, BlockCombine::Residual] {
        v.push(("mamba block", Box::new(move || {
            let mut rng = stream(16, Stream::Init);
            let mut st = ParamStore::new();
            let x = uniform(&mut st, "x", vec![2, 8, 4], -2.0, 2.0, &mut rng);
            let cfg = SsmConfig { combine, ..toy_ssm() };
            let block = SsmParams::new(&mut st, "block", 4, cfg, &mut rng);
            check(&format!("mamba_block_forward {combine:?}"), &mut st, |s| {
                let x = s.param(x);
                let y = block.forward(s, x)?;
                contract(s, y, 16)
            })
        })));
    }

    v.push(("echomamba layer", Box::new(|| {
        let mut rng = stream(17, Stream::Init);
        let mut st = ParamStore::new();
        let x = uniform(&mut st, "x", vec![3, 6, 4], -2.0, 2.0, &mut rng);
        let layer = EchoMambaLayer::new(&mut st, "layer", 4, toy_ssm(), true, 0.0, &mut rng);
        check("echomamba_layer_forward", &mut st, |s| {
            let x = s.param(x);
            let y = layer.forward(s, x, &[6, 3, 1])?;
            contract(s, y, 17)
        })
    })));

    v.push(("cross_entropy", Box::new(|| {
        let mut rng = stream(18, Stream::Init);
        let mut st = ParamStore::new();
        let z = uniform(&mut st, "logits", vec![4, 7], -2.0, 2.0, &mut rng);
        check("cross_entropy", &mut st, |s| {
            let z = s.param(z);
            cross_entropy(&mut s.tape, z, &[1, 6, 3, 3])
        })
    })));

    for (name, placement, euler) in [
        ("end-to-end model", FilterPlacement::Once, false),
        ("end-to-end model, filter per layer, Euler", FilterPlacement::PerLayer, true),
    ] {
        v.push((name, Box::new(move || {
            let mut cfg = ModelConfig::new(12, 4, 6);
            cfg.ssm = toy_ssm();
            cfg.dropout = 0.0;
            cfg.filter_placement = placement;
            if euler {
                cfg.ssm.discretization = Discretization::Euler;
                cfg.layers = 2;
            }
            let mut rng = stream(19, Stream::Init);
            let mut st = ParamStore::new();
            let model = EchoMambaModel::new(&mut st, cfg, &mut rng)?;
            let batch = toy_batch(&mut rng, 3, 6, 12);
            check(name, &mut st, |s| {
                let z = model.logits(s, &batch)?;
                cross_entropy(&mut s.tape, z, &batch.targets)
            })
        })));
    }
    v
}

/// Runs every check. Stops at the first construction error; numeric
/// failures are reported, not raised.
pub fn run_suite() -> Result<Vec<CheckReport>> {
    cases().into_iter().map(|(_, case)| case()).collect()
}
