//! Complex FFT for arbitrary lengths: iterative radix-2 for powers of two and
//! Bluestein's chirp-z reformulation otherwise. Real-input helpers work on
//! the `⌊n/2⌋+1` half spectrum.

use std::f64::consts::PI;

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ComplexTensor, Tensor};

#[derive(Debug, Clone)]
enum Kind<F> {
    Trivial,
    Radix2 {
        twiddles: Vec<Complex<F>>,
        bitrev: Vec<usize>,
    },
    Bluestein {
        chirp: Vec<Complex<F>>,
        kernel_fft: Vec<Complex<F>>,
        inner: Box<FftPlan<F>>,
    },
}

/// Precomputed plan for an unnormalized complex DFT of one length.
#[derive(Debug, Clone)]
pub struct FftPlan<F> {
    len: usize,
    kind: Kind<F>,
}

fn cis<F: Scalar>(angle: f64) -> Complex<F> {
    Complex::new(F::of(angle.cos()), F::of(angle.sin()))
}

impl<F: Scalar> FftPlan<F> {
    pub fn new(len: usize) -> Self {
        let kind = if len <= 1 {
            Kind::Trivial
        } else if len.is_power_of_two() {
            let bits = len.trailing_zeros();
            let bitrev = (0..len)
                .map(|i| i.reverse_bits() >> (usize::BITS - bits))
                .collect();
            let twiddles = (0..len / 2)
                .map(|k| cis(-2.0 * PI * k as f64 / len as f64))
                .collect();
            Kind::Radix2 { twiddles, bitrev }
        } else {
            let m = (2 * len - 1).next_power_of_two();
            // n² mod 2n keeps the chirp angle small and exact.
            let chirp: Vec<Complex<F>> = (0..len)
                .map(|k| {
                    let q = (k as u128 * k as u128 % (2 * len as u128)) as f64;
                    cis(-PI * q / len as f64)
                })
                .collect();
            let inner = Box::new(FftPlan::new(m));
            let mut kernel = vec![Complex::new(F::zero(), F::zero()); m];
            kernel[0] = chirp[0].conj();
            for k in 1..len {
                kernel[k] = chirp[k].conj();
                kernel[m - k] = chirp[k].conj();
            }
            inner.forward(&mut kernel);
            Kind::Bluestein {
                chirp,
                kernel_fft: kernel,
                inner,
            }
        };
        FftPlan { len, kind }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `X_k = Σ_n x_n e^{−2πikn/N}` in place.
    pub fn forward(&self, buf: &mut [Complex<F>]) {
        self.process(buf, false);
    }

    /// `x_n = Σ_k X_k e^{+2πikn/N}` in place (no 1/N factor).
    pub fn inverse(&self, buf: &mut [Complex<F>]) {
        self.process(buf, true);
    }

    fn process(&self, buf: &mut [Complex<F>], inverse: bool) {
        assert_eq!(buf.len(), self.len, "buffer length must match plan");
        match &self.kind {
            Kind::Trivial => {}
            Kind::Radix2 { twiddles, bitrev } => {
                for (i, &j) in bitrev.iter().enumerate() {
                    if i < j {
                        buf.swap(i, j);
                    }
                }
                let n = self.len;
                let mut size = 2;
                while size <= n {
                    let half = size / 2;
                    let step = n / size;
                    for start in (0..n).step_by(size) {
                        for k in 0..half {
                            let mut w = twiddles[k * step];
                            if inverse {
                                w = w.conj();
                            }
                            let t = buf[start + k + half] * w;
                            let u = buf[start + k];
                            buf[start + k] = u + t;
                            buf[start + k + half] = u - t;
                        }
                    }
                    size *= 2;
                }
            }
            Kind::Bluestein {
                chirp,
                kernel_fft,
                inner,
            } => {
                // The inverse DFT is the forward DFT of the conjugate, conjugated.
                let m = inner.len();
                let mut work = vec![Complex::new(F::zero(), F::zero()); m];
                for k in 0..self.len {
                    let x = if inverse { buf[k].conj() } else { buf[k] };
                    work[k] = x * chirp[k];
                }
                inner.forward(&mut work);
                for (w, k) in work.iter_mut().zip(kernel_fft) {
                    *w = *w * *k;
                }
                inner.inverse(&mut work);
                let scale = F::one() / F::of(m as f64);
                for k in 0..self.len {
                    let y = work[k] * chirp[k] * scale;
                    buf[k] = if inverse { y.conj() } else { y };
                }
            }
        }
    }
}

/// Real-signal transforms of one length.
#[derive(Debug, Clone)]
pub struct RealFft<F> {
    plan: FftPlan<F>,
}

impl<F: Scalar> RealFft<F> {
    pub fn new(len: usize) -> Self {
        RealFft {
            plan: FftPlan::new(len),
        }
    }

    pub fn len(&self) -> usize {
        self.plan.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plan.is_empty()
    }

    pub fn bins(&self) -> usize {
        self.len() / 2 + 1
    }

    /// Half spectrum of a real signal.
    pub fn forward(&self, signal: &[F], out: &mut [Complex<F>]) {
        let n = self.len();
        let mut buf: Vec<Complex<F>> = signal.iter().map(|&x| Complex::new(x, F::zero())).collect();
        self.plan.forward(&mut buf);
        out.copy_from_slice(&buf[..n / 2 + 1]);
    }

    /// Inverse of [`forward`](Self::forward), including the 1/n factor.
    /// The spectrum is extended by Hermitian symmetry; imaginary parts of
    /// the DC and Nyquist bins do not reach the real output.
    pub fn inverse(&self, half: &[Complex<F>], out: &mut [F]) {
        let n = self.len();
        let bins = self.bins();
        let mut buf = vec![Complex::new(F::zero(), F::zero()); n];
        buf[..bins].copy_from_slice(half);
        for k in bins..n {
            buf[k] = half[n - k].conj();
        }
        self.plan.inverse(&mut buf);
        let scale = F::one() / F::of(n as f64);
        for (o, z) in out.iter_mut().zip(&buf) {
            *o = z.re * scale;
        }
    }

    /// `out[t] = Re Σ_{k<bins} z_k e^{+2πikt/n}`: the adjoint of
    /// [`forward`](Self::forward) on the half spectrum.
    pub fn forward_adjoint(&self, half: &[Complex<F>], out: &mut [F]) {
        let n = self.len();
        let mut buf = vec![Complex::new(F::zero(), F::zero()); n];
        buf[..half.len()].copy_from_slice(half);
        self.plan.inverse(&mut buf);
        for (o, z) in out.iter_mut().zip(&buf) {
            *o = z.re;
        }
    }
}

/// Applies `f(signal_in, signal_out)` to every `(batch, channel)` lane of a
/// `[B × L × D]` layout.
pub(crate) fn for_each_lane<T: Copy, U: Copy + Default>(
    input: &[T],
    b: usize,
    l_in: usize,
    l_out: usize,
    d: usize,
    output: &mut [U],
    mut f: impl FnMut(&[T], &mut [U]),
) {
    let mut lane_in = Vec::with_capacity(l_in);
    let mut lane_out = vec![U::default(); l_out];
    for bi in 0..b {
        for ch in 0..d {
            lane_in.clear();
            lane_in.extend((0..l_in).map(|t| input[(bi * l_in + t) * d + ch]));
            f(&lane_in, &mut lane_out);
            for (t, &v) in lane_out.iter().enumerate() {
                output[(bi * l_out + t) * d + ch] = v;
            }
        }
    }
}

fn dims3(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize)> {
    match *shape {
        [b, l, d] => Ok((b, l, d)),
        _ => Err(Error::shape(op, shape, &[0, 0, 0])),
    }
}

/// Real FFT along axis 1 of a `[B × L × D]` tensor.
pub fn rfft<F: Scalar>(x: &Tensor<F>) -> Result<ComplexTensor<F>> {
    let (b, l, d) = dims3(x.shape(), "rfft")?;
    if l == 0 {
        return Err(Error::shape("rfft", x.shape(), &[1]));
    }
    let fft = RealFft::new(l);
    let bins = fft.bins();
    let mut spec = vec![Complex::new(F::zero(), F::zero()); b * bins * d];
    for_each_lane(x.data(), b, l, bins, d, &mut spec, |s, o| fft.forward(s, o));
    let re = spec.iter().map(|z| z.re).collect();
    let im = spec.iter().map(|z| z.im).collect();
    ComplexTensor::new(vec![b, bins, d], re, im)
}

/// Inverse real FFT along axis 1, producing length `len`.
pub fn irfft<F: Scalar>(x: &ComplexTensor<F>, len: usize) -> Result<Tensor<F>> {
    let (b, bins, d) = dims3(x.shape(), "irfft")?;
    if len == 0 || bins != len / 2 + 1 {
        return Err(Error::shape("irfft", x.shape(), &[len]));
    }
    let fft = RealFft::new(len);
    let spec: Vec<Complex<F>> = x
        .re()
        .iter()
        .zip(x.im())
        .map(|(&r, &i)| Complex::new(r, i))
        .collect();
    let mut out = vec![F::zero(); b * len * d];
    for_each_lane(&spec, b, bins, len, d, &mut out, |s, o| fft.inverse(s, o));
    Tensor::new(vec![b, len, d], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn naive_dft(x: &[Complex<f64>], sign: f64) -> Vec<Complex<f64>> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(t, &v)| {
                        let ang = sign * 2.0 * PI * ((k * t) % n) as f64 / n as f64;
                        v * Complex::new(ang.cos(), ang.sin())
                    })
                    .sum()
            })
            .collect()
    }

    fn random_complex(n: usize, seed: u64) -> Vec<Complex<f64>> {
        let mut rng = crate::rng::stream(seed, crate::rng::Stream::Init);
        (0..n)
            .map(|_| Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn complex_fft_matches_naive_dft_for_many_lengths() {
        for n in [1usize, 2, 3, 4, 5, 7, 8, 12, 16, 31, 50, 64, 97, 200] {
            let x = random_complex(n, n as u64);
            let plan = FftPlan::<f64>::new(n);
            let mut fwd = x.clone();
            plan.forward(&mut fwd);
            let mut inv = x.clone();
            plan.inverse(&mut inv);
            let ref_fwd = naive_dft(&x, -1.0);
            let ref_inv = naive_dft(&x, 1.0);
            for k in 0..n {
                assert!((fwd[k] - ref_fwd[k]).norm() < 1e-10, "n={n} k={k}");
                assert!((inv[k] - ref_inv[k]).norm() < 1e-10, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn dc_signal_spectrum() {
        let x = Tensor::<f64>::full(vec![1, 8, 1], 2.5);
        let s = rfft(&x).unwrap();
        assert_eq!(s.shape(), &[1, 5, 1]);
        assert!((s.re()[0] - 20.0).abs() < 1e-12);
        for k in 1..5 {
            assert!(s.re()[k].abs() < 1e-12 && s.im()[k].abs() < 1e-12);
        }
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let x = Tensor::<f64>::new(vec![1, 4, 1], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let s = rfft(&x).unwrap();
        assert_eq!(s.shape(), &[1, 3, 1]);
        for k in 0..3 {
            assert_eq!(s.re()[k], 1.0);
            assert_eq!(s.im()[k], 0.0);
        }
    }

    #[test]
    fn irfft_rejects_bin_mismatch() {
        let s = ComplexTensor::<f64>::zeros(vec![1, 4, 1]);
        assert!(irfft(&s, 8).is_err());
        assert!(irfft(&s, 7).is_ok());
        assert!(irfft(&s, 6).is_ok());
        let z = irfft(&s, 6).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shifted_impulse_round_trip() {
        for l in [5usize, 8, 50] {
            let mut data = vec![0.0; l];
            data[3] = 1.0;
            let x = Tensor::<f64>::new(vec![1, l, 1], data.clone()).unwrap();
            let back = irfft(&rfft(&x).unwrap(), l).unwrap();
            for (a, b) in back.data().iter().zip(&data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn f32_round_trip() {
        let mut rng = crate::rng::stream(9, crate::rng::Stream::Init);
        for l in [4usize, 8, 50, 200] {
            let data: Vec<f32> = (0..l * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = Tensor::<f32>::new(vec![1, l, 3], data).unwrap();
            let back = irfft(&rfft(&x).unwrap(), l).unwrap();
            assert!(back.max_abs_diff(&x) <= 1e-5, "l={l}");
        }
    }
}
