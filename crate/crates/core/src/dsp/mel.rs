//! Mel-scale triangular filterbank.

use crate::dsp::stft::Spectrogram;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// `F` triangular filters over the `F_bins` of a one-sided spectrum.
///
/// Triangle breakpoints are equally spaced on the mel scale and the
/// triangles are linear in Hz, so neighbouring filters sum to one between
/// the first and last peak. Each weight is the triangle's mean over the
/// bin's frequency cell `[f_b − Δ/2, f_b + Δ/2]`; at coarse resolutions a
/// narrow low-frequency filter can fall between two bin centres, and the
/// cell average still gives it non-zero support.
#[derive(Clone, Debug, PartialEq)]
pub struct MelFilterbank {
    /// `[F × F_bins]`
    pub weights: Tensor,
    pub f_min: f64,
    pub f_max: f64,
    /// Filter peak frequencies in Hz.
    pub peaks: Vec<f64>,
    bin_width: f64,
}

impl MelFilterbank {
    pub fn new(bands: usize, bins: usize, sample_rate: u32, f_min: f64, f_max: f64) -> Result<Self> {
        let nyquist = sample_rate as f64 / 2.0;
        if bands < 2 {
            return Err(Error::invalid(format!("mel band count {bands} must be at least 2")));
        }
        if bins < 2 {
            return Err(Error::invalid("filterbank needs at least 2 bins"));
        }
        if !(0.0 <= f_min && f_min < f_max && f_max <= nyquist) {
            return Err(Error::invalid(format!(
                "mel range requires 0 ≤ f_min < f_max ≤ {nyquist}, got [{f_min}, {f_max}]"
            )));
        }
        let (m_lo, m_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
        let edges: Vec<f64> = (0..bands + 2)
            .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (bands + 1) as f64))
            .collect();
        let window = 2 * (bins - 1);
        let bin_width = sample_rate as f64 / window as f64;

        let mut weights = vec![0.0; bands * bins];
        for i in 0..bands {
            let (l, c, r) = (edges[i], edges[i + 1], edges[i + 2]);
            for b in 0..bins {
                let centre = b as f64 * bin_width;
                let lo = centre - bin_width / 2.0;
                let hi = centre + bin_width / 2.0;
                if hi <= l || lo >= r {
                    continue;
                }
                let w = (triangle_area(l, c, r, hi) - triangle_area(l, c, r, lo)) / bin_width;
                weights[i * bins + b] = w.max(0.0);
            }
            if weights[i * bins..(i + 1) * bins].iter().all(|&w| w == 0.0) {
                return Err(Error::invalid(format!("mel filter {i} has empty support")));
            }
        }
        Ok(Self {
            weights: Tensor::new(vec![bands, bins], weights)?,
            f_min,
            f_max,
            peaks: edges[1..=bands].to_vec(),
            bin_width,
        })
    }

    pub fn bands(&self) -> usize {
        self.weights.dims2().0
    }

    pub fn bins(&self) -> usize {
        self.weights.dims2().1
    }

    /// Frequency cell `[lo, hi]` covered by bin `b`.
    pub fn bin_cell(&self, b: usize) -> (f64, f64) {
        let c = b as f64 * self.bin_width;
        (c - self.bin_width / 2.0, c + self.bin_width / 2.0)
    }
}

/// `∫_{-∞}^{x}` of the unit-height triangle with feet `l`, `r` and apex `c`.
fn triangle_area(l: f64, c: f64, r: f64, x: f64) -> f64 {
    if x <= l {
        0.0
    } else if x <= c {
        (x - l) * (x - l) / (2.0 * (c - l))
    } else if x <= r {
        (c - l) / 2.0 + (r - c) / 2.0 - (r - x) * (r - x) / (2.0 * (r - c))
    } else {
        (r - l) / 2.0
    }
}

/// Frames × filterbankᵀ: `[T × F_bins] → [T × F]`.
pub fn apply_mel(spec: &Spectrogram, fb: &MelFilterbank) -> Result<Tensor> {
    if spec.bins() != fb.bins() {
        return Err(Error::dim("apply_mel", spec.values.shape(), fb.weights.shape()));
    }
    spec.values.matmul(&fb.weights.transpose()?)
}

/// Averages contiguous groups of bins down to `bands` columns.
pub fn rebin_linear(values: &Tensor, bands: usize) -> Result<Tensor> {
    let (frames, bins) = values.dims2();
    if bands == 0 {
        return Err(Error::invalid("band count must be positive"));
    }
    let groups: Vec<(usize, usize)> = (0..bands)
        .map(|j| {
            let start = (j * bins / bands).min(bins - 1);
            let end = ((j + 1) * bins / bands).max(start + 1).min(bins);
            (start, end)
        })
        .collect();
    let mut out = Vec::with_capacity(frames * bands);
    for row in values.data().chunks(bins) {
        for &(s, e) in &groups {
            out.push(row[s..e].iter().sum::<f64>() / (e - s) as f64);
        }
    }
    Tensor::new(vec![frames, bands], out)
}
