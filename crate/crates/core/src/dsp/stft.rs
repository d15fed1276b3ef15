use crate::dsp::fft::RealFft;
use crate::dsp::wav::Waveform;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WindowKind {
    /// Periodic Hann, used for feature extraction.
    #[default]
    Hann,
    /// No tapering; used for conservation checks.
    Rectangular,
}

impl WindowKind {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
                .collect(),
            WindowKind::Rectangular => vec![1.0; len],
        }
    }
}

/// Magnitude spectrogram of one resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    /// `[frames × (window/2 + 1)]`, all entries ≥ 0.
    pub values: Tensor,
    pub window_size: usize,
    pub hop: usize,
    pub resolution_index: usize,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.values.dims2().0
    }

    pub fn bins(&self) -> usize {
        self.values.dims2().1
    }
}

pub fn frame_count(len: usize, window: usize, hop: usize) -> usize {
    (len - window) / hop + 1
}

/// Short-time Fourier transform magnitudes with a Hann window.
pub fn stft(s: &Waveform, window: usize, hop: usize) -> Result<Spectrogram> {
    stft_with(s, window, hop, WindowKind::Hann)
}

pub fn stft_with(s: &Waveform, window: usize, hop: usize, kind: WindowKind) -> Result<Spectrogram> {
    if !window.is_power_of_two() || window < 2 {
        return Err(Error::invalid(format!("window {window} must be a power of two ≥ 2")));
    }
    if hop == 0 {
        return Err(Error::invalid("hop must be positive"));
    }
    if window > s.len() {
        return Err(Error::invalid(format!(
            "window {window} exceeds signal length {}",
            s.len()
        )));
    }
    let coeffs = kind.coefficients(window);
    let frames = frame_count(s.len(), window, hop);
    let bins = window / 2 + 1;
    let mut out = Vec::with_capacity(frames * bins);
    let mut frame = vec![0.0; window];
    let mut fft = RealFft::new(window)?;
    for t in 0..frames {
        let seg = &s.samples[t * hop..t * hop + window];
        for ((f, &x), &w) in frame.iter_mut().zip(seg).zip(&coeffs) {
            *f = x * w;
        }
        let spec = fft.transform(&frame)?;
        out.extend(spec[..bins].iter().map(|c| c.norm()));
    }
    Ok(Spectrogram {
        values: Tensor::new(vec![frames, bins], out)?,
        window_size: window,
        hop,
        resolution_index: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_signal_gives_zero_spectrogram() {
        let w = Waveform::new(vec![0.0; 1000], 32000).unwrap();
        let s = stft(&w, 256, 100).unwrap();
        assert_eq!(s.frames(), frame_count(1000, 256, 100));
        assert_eq!(s.bins(), 129);
        assert!(s.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_invalid_windows() {
        let w = Waveform::new(vec![0.0; 1000], 32000).unwrap();
        assert!(stft(&w, 300, 100).is_err());
        assert!(stft(&w, 2048, 100).is_err());
        assert!(stft(&w, 256, 0).is_err());
    }

    #[test]
    fn sign_flip_invariance() {
        let samples: Vec<f64> = (0..2048).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
        let neg: Vec<f64> = samples.iter().map(|x| -x).collect();
        let a = stft(&Waveform::new(samples, 32000).unwrap(), 512, 160).unwrap();
        let b = stft(&Waveform::new(neg, 32000).unwrap(), 512, 160).unwrap();
        assert_eq!(a.values, b.values);
    }
}
