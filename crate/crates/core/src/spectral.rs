//! Learnable frequency-domain filter layer.
//!
//! The filtered branch is `irfft(K ⊙ rfft(F))` along the sequence axis, with
//! `K` a learnable complex `[⌊L/2⌋+1 × D]` half-spectrum. The layer output is
//! `LayerNorm(F + Dropout(branch))`.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::fft::RealFft;
use crate::nn::LayerNormParams;
use crate::params::{ParamId, ParamStore, Session};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{BackwardArgs, Function, Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFilterLayer {
    pub coeff_re: ParamId,
    pub coeff_im: ParamId,
    pub norm: LayerNormParams,
    pub dropout_rate: f64,
    pub seq_len: usize,
    pub dim: usize,
    /// Skips the closing layer norm. Only meant for tests.
    pub bypass_norm: bool,
}

impl SpectralFilterLayer {
    /// Coefficients drawn i.i.d. from normal(0, 0.02²) in both planes.
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        seq_len: usize,
        dim: usize,
        dropout_rate: f64,
        rng: &mut Rng,
    ) -> Self {
        let bins = seq_len / 2 + 1;
        SpectralFilterLayer {
            coeff_re: store.normal(format!("{name}.coeff_re"), vec![bins, dim], 0.02, rng),
            coeff_im: store.normal(format!("{name}.coeff_im"), vec![bins, dim], 0.02, rng),
            norm: LayerNormParams::new(store, &format!("{name}.norm"), dim),
            dropout_rate,
            seq_len,
            dim,
            bypass_norm: false,
        }
    }

    pub fn bins(&self) -> usize {
        self.seq_len / 2 + 1
    }

    pub fn forward<F: Scalar>(&self, s: &mut Session<'_, F>, x: Var) -> Result<Var> {
        let shape = s.tape.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != self.seq_len || shape[2] != self.dim {
            return Err(Error::shape(
                "filter_layer_forward",
                &shape,
                &[shape.first().copied().unwrap_or(0), self.seq_len, self.dim],
            ));
        }
        let kr = s.param(self.coeff_re);
        let ki = s.param(self.coeff_im);
        let branch = spectral_filter(&mut s.tape, x, kr, ki)?;
        let branch = s.dropout(branch, self.dropout_rate)?;
        let sum = s.tape.add(x, branch)?;
        if self.bypass_norm {
            Ok(sum)
        } else {
            self.norm.forward(s, sum)
        }
    }
}

struct SpectralOp<F> {
    /// rfft of the input, `[B × bins × D]`.
    spectrum: Vec<Complex<F>>,
    dims: (usize, usize, usize),
}

impl<F: Scalar> Function<F> for SpectralOp<F> {
    fn name(&self) -> &'static str {
        "spectral_filter"
    }

    fn backward(&self, args: BackwardArgs<'_, F>) -> Vec<Option<Vec<F>>> {
        let (b, l, d) = self.dims;
        let fft = RealFft::<F>::new(l);
        let bins = fft.bins();
        let kr = args.inputs[1].0;
        let ki = args.inputs[2].0;
        let scale_mid = F::of(2.0 / l as f64);
        let scale_edge = F::of(1.0 / l as f64);
        let nyquist = (l % 2 == 0).then_some(l / 2);

        let mut gx = vec![F::zero(); b * l * d];
        let mut gkr = vec![F::zero(); bins * d];
        let mut gki = vec![F::zero(); bins * d];
        let mut lane = vec![F::zero(); l];
        let mut spec = vec![Complex::new(F::zero(), F::zero()); bins];
        let mut back = vec![F::zero(); l];
        for bi in 0..b {
            for ch in 0..d {
                for (t, v) in lane.iter_mut().enumerate() {
                    *v = args.grad[(bi * l + t) * d + ch];
                }
                fft.forward(&lane, &mut spec);
                for k in 0..bins {
                    // Gradient with respect to the half-spectrum product Y_k.
                    let gy = if k == 0 || Some(k) == nyquist {
                        Complex::new(spec[k].re * scale_edge, F::zero())
                    } else {
                        spec[k] * scale_mid
                    };
                    let x = self.spectrum[(bi * bins + k) * d + ch];
                    let kk = Complex::new(kr[k * d + ch], ki[k * d + ch]);
                    let gk = gy * x.conj();
                    gkr[k * d + ch] += gk.re;
                    gki[k * d + ch] += gk.im;
                    spec[k] = gy * kk.conj();
                }
                fft.forward_adjoint(&spec, &mut back);
                for t in 0..l {
                    gx[(bi * l + t) * d + ch] = back[t];
                }
            }
        }
        vec![Some(gx), Some(gkr), Some(gki)]
    }
}

/// `irfft(K ⊙ rfft(x))` per channel along axis 1 of `x: [B × L × D]`.
pub fn spectral_filter<F: Scalar>(tape: &mut Tape<F>, x: Var, k_re: Var, k_im: Var) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let [b, l, d] = shape[..] else {
        return Err(Error::shape("spectral_filter", &shape, &[0, 0, 0]));
    };
    let bins = l / 2 + 1;
    if tape.shape(k_re) != [bins, d] || tape.shape(k_im) != [bins, d] {
        return Err(Error::shape("spectral_filter", &shape, tape.shape(k_re)));
    }
    let fft = RealFft::<F>::new(l);
    let (xv, kr, ki) = (tape.value(x), tape.value(k_re), tape.value(k_im));
    let mut spectrum = vec![Complex::new(F::zero(), F::zero()); b * bins * d];
    let mut out = vec![F::zero(); b * l * d];
    let mut lane = vec![F::zero(); l];
    let mut spec = vec![Complex::new(F::zero(), F::zero()); bins];
    let mut back = vec![F::zero(); l];
    for bi in 0..b {
        for ch in 0..d {
            for t in 0..l {
                lane[t] = xv[(bi * l + t) * d + ch];
            }
            fft.forward(&lane, &mut spec);
            for k in 0..bins {
                spectrum[(bi * bins + k) * d + ch] = spec[k];
                spec[k] = spec[k] * Complex::new(kr[k * d + ch], ki[k * d + ch]);
            }
            fft.inverse(&spec, &mut back);
            for t in 0..l {
                out[(bi * l + t) * d + ch] = back[t];
            }
        }
    }
    tape.push(
        out,
        shape,
        vec![x, k_re, k_im],
        Box::new(SpectralOp {
            spectrum,
            dims: (b, l, d),
        }),
    )
}
