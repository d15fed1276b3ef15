//! Power-of-two FFT planning on top of `rustfft`.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// A forward transform of fixed power-of-two length with reusable buffers.
pub struct RealFft {
    plan: Arc<dyn rustfft::Fft<f64>>,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl RealFft {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::invalid(format!("FFT length {n} is not a power of two")));
        }
        let plan = FftPlanner::new().plan_fft_forward(n);
        let scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        Ok(Self {
            plan,
            buf: vec![Complex64::default(); n],
            scratch,
        })
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// `X_k = Σ_n x_n e^{-2πi kn/N}` for a real input of length `N`.
    pub fn transform(&mut self, x: &[f64]) -> Result<&[Complex64]> {
        if x.len() != self.buf.len() {
            return Err(Error::dim("fft", &[x.len()], &[self.buf.len()]));
        }
        for (b, &v) in self.buf.iter_mut().zip(x) {
            *b = Complex64::new(v, 0.0);
        }
        self.plan.process_with_scratch(&mut self.buf, &mut self.scratch);
        Ok(&self.buf)
    }
}

/// One-shot FFT of a real sequence.
pub fn fft_real(x: &[f64]) -> Result<Vec<Complex64>> {
    Ok(RealFft::new(x.len())?.transform(x)?.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut x = vec![0.0; 8];
        x[0] = 1.0;
        let y = fft_real(&x).unwrap();
        for c in y {
            assert!((c.re - 1.0).abs() < 1e-15 && c.im.abs() < 1e-15);
        }
    }

    #[test]
    fn matches_direct_dft() {
        let x: Vec<f64> = (0..16).map(|i| ((i * 7) % 5) as f64 - 1.5).collect();
        let y = fft_real(&x).unwrap();
        for (k, yk) in y.iter().enumerate() {
            let mut acc = Complex64::default();
            for (n, &v) in x.iter().enumerate() {
                acc += Complex64::from_polar(v, -std::f64::consts::TAU * (k * n) as f64 / 16.0);
            }
            assert!((acc - yk).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(fft_real(&[0.0; 6]).is_err());
        assert!(fft_real(&[]).is_err());
        assert!(fft_real(&[2.0]).is_ok());
    }
}
