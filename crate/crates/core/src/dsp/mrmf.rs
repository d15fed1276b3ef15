//! Multi-resolution, multi-filter feature tensors.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dsp::mel::{apply_mel, rebin_linear, MelFilterbank};
use crate::dsp::stft::stft;
use crate::dsp::wav::Waveform;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MEL_CHANNEL: usize = 0;
pub const RAW_CHANNEL: usize = 1;
pub const CHANNELS: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DspConfig {
    pub sample_rate: u32,
    pub windows: Vec<usize>,
    pub hop: usize,
    pub mel_bands: usize,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for DspConfig {
    fn default() -> Self {
        Self {
            sample_rate: 32_000,
            windows: vec![256, 512, 1024],
            hop: 320,
            mel_bands: 64,
            f_min: 50.0,
            f_max: 14_000.0,
        }
    }
}

impl DspConfig {
    pub fn validate(&self) -> Result<()> {
        if self.windows.is_empty() {
            return Err(Error::invalid("dsp.windows must list at least one window"));
        }
        if let Some(w) = self.windows.iter().find(|w| !w.is_power_of_two() || **w < 2) {
            return Err(Error::invalid(format!("dsp.windows entry {w} is not a power of two ≥ 2")));
        }
        if self.hop == 0 {
            return Err(Error::invalid("dsp.hop must be positive"));
        }
        if self.sample_rate == 0 {
            return Err(Error::invalid("dsp.sample_rate must be positive"));
        }
        Ok(())
    }

    pub fn max_window(&self) -> usize {
        self.windows.iter().copied().max().unwrap_or(0)
    }

    /// Aligned frame count for a signal of `len` samples.
    pub fn frames_for(&self, len: usize) -> usize {
        self.windows
            .iter()
            .map(|&w| super::stft::frame_count(len, w, self.hop))
            .max()
            .unwrap_or(0)
    }
}

/// `[T × K × F × 2]` feature tensor: aligned frames, resolutions, bands,
/// and filter channel (0 = mel, 1 = raw).
#[derive(Clone, Debug, PartialEq)]
pub struct MrmfFeature {
    pub tensor: Tensor,
    pub window_sizes: Vec<usize>,
}

impl MrmfFeature {
    pub fn new(tensor: Tensor, window_sizes: Vec<usize>) -> Result<Self> {
        match tensor.shape() {
            [_, k, _, CHANNELS] if *k == window_sizes.len() => Ok(Self {
                tensor,
                window_sizes,
            }),
            s => Err(Error::dim("mrmf", s, &[0, window_sizes.len(), 0, CHANNELS])),
        }
    }

    pub fn zeros(frames: usize, window_sizes: Vec<usize>, bands: usize) -> Self {
        let k = window_sizes.len();
        Self {
            tensor: Tensor::zeros(&[frames, k, bands, CHANNELS]),
            window_sizes,
        }
    }

    pub fn frames(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn resolutions(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn bands(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }

    pub fn at(&self, t: usize, k: usize, f: usize, c: usize) -> f64 {
        let (kk, ff) = (self.resolutions(), self.bands());
        self.tensor.data()[((t * kk + k) * ff + f) * CHANNELS + c]
    }

    /// Flattens channel `c` to `[T × (K·F)]`, row `t` being `vec(x[t, :, :, c])`.
    pub fn channel_slab(&self, c: usize) -> Tensor {
        let (t, kf) = (self.frames(), self.resolutions() * self.bands());
        let data: Vec<f64> = self
            .tensor
            .data()
            .iter()
            .skip(c)
            .step_by(CHANNELS)
            .copied()
            .collect();
        Tensor::from_parts(vec![t, kf], data)
    }

    /// Inverse of [`channel_slab`](Self::channel_slab) for both channels.
    pub fn from_slabs(mel: &Tensor, raw: &Tensor, window_sizes: Vec<usize>, bands: usize) -> Result<Self> {
        if mel.shape() != raw.shape() {
            return Err(Error::dim("from_slabs", mel.shape(), raw.shape()));
        }
        let (t, kf) = mel.dims2();
        let k = window_sizes.len();
        if k * bands != kf {
            return Err(Error::dim("from_slabs", mel.shape(), &[t, k * bands]));
        }
        let mut data = Vec::with_capacity(t * kf * CHANNELS);
        for (a, b) in mel.data().iter().zip(raw.data()) {
            data.push(*a);
            data.push(*b);
        }
        Self::new(Tensor::from_parts(vec![t, k, bands, CHANNELS], data), window_sizes)
    }

    /// Keeps the first `frames` frames.
    pub fn truncate_frames(&self, frames: usize) -> Result<Self> {
        if frames == 0 || frames > self.frames() {
            return Err(Error::invalid(format!("cannot truncate {} frames to {frames}", self.frames())));
        }
        let per = self.tensor.len() / self.frames();
        let mut shape = self.shape().to_vec();
        shape[0] = frames;
        Self::new(
            Tensor::from_parts(shape, self.tensor.data()[..frames * per].to_vec()),
            self.window_sizes.clone(),
        )
    }

    /// Binary dump: `"MRMF"`, version, T, K, F, C, the K window sizes, then
    /// `T·K·F·C` little-endian `f32` values in row-major order.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let mut buf = Vec::with_capacity(24 + 4 * self.window_sizes.len() + 4 * self.tensor.len());
        buf.extend_from_slice(DUMP_MAGIC);
        for v in [
            DUMP_VERSION,
            self.frames() as u32,
            self.resolutions() as u32,
            self.bands() as u32,
            CHANNELS as u32,
        ] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for &ws in &self.window_sizes {
            buf.extend_from_slice(&(ws as u32).to_le_bytes());
        }
        for &v in self.tensor.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut words = bytes.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]);
        let mut next = |what: &str| {
            words
                .next()
                .ok_or_else(|| Error::Format(format!("feature dump truncated before {what}")))
        };
        if &next("magic")? != DUMP_MAGIC {
            return Err(Error::Format("feature dump has wrong magic".into()));
        }
        let version = u32::from_le_bytes(next("version")?);
        if version != DUMP_VERSION {
            return Err(Error::Format(format!("unsupported feature dump version {version}")));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = u32::from_le_bytes(next("header")?) as usize;
        }
        let [t, k, f, c] = dims;
        if c != CHANNELS || t == 0 || k == 0 || f == 0 {
            return Err(Error::Format(format!("invalid feature dims {dims:?}")));
        }
        let windows = (0..k)
            .map(|_| next("window sizes").map(|b| u32::from_le_bytes(b) as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = t * k * f * c;
        let data = (0..n)
            .map(|_| next("data").map(|b| f32::from_le_bytes(b) as f64))
            .collect::<Result<Vec<_>>>()?;
        if bytes.len() != 4 * (6 + k + n) {
            return Err(Error::Format("trailing bytes after feature data".into()));
        }
        Self::new(Tensor::new(vec![t, k, f, c], data)?, windows)
    }
}

const DUMP_MAGIC: &[u8; 4] = b"MRMF";
const DUMP_VERSION: u32 = 1;

/// Resamples each `[T_i × F]` matrix to the largest `T_i` by linear
/// interpolation along time and stacks them as `[T × K × F]`.
pub fn align_temporal(specs: &[Tensor]) -> Result<Tensor> {
    let first = specs.first().ok_or_else(|| Error::invalid("align_temporal needs at least one matrix"))?;
    let (_, f) = first.dims2();
    if let Some(bad) = specs.iter().find(|s| s.rank() != 2 || s.dims2().1 != f) {
        return Err(Error::dim("align_temporal", first.shape(), bad.shape()));
    }
    let k = specs.len();
    let t_out = specs.iter().map(|s| s.dims2().0).max().unwrap();
    let mut out = vec![0.0; t_out * k * f];
    for (ki, s) in specs.iter().enumerate() {
        let t_in = s.dims2().0;
        for t in 0..t_out {
            let dst = &mut out[(t * k + ki) * f..(t * k + ki + 1) * f];
            if t_in == t_out {
                dst.copy_from_slice(s.row(t));
                continue;
            }
            let pos = if t_out == 1 {
                0.0
            } else {
                t as f64 * (t_in - 1) as f64 / (t_out - 1) as f64
            };
            let lo = (pos.floor() as usize).min(t_in - 1);
            let hi = (lo + 1).min(t_in - 1);
            let frac = pos - lo as f64;
            for ((d, a), b) in dst.iter_mut().zip(s.row(lo)).zip(s.row(hi)) {
                *d = if frac == 0.0 { *a } else { a * (1.0 - frac) + b * frac };
            }
        }
    }
    Tensor::new(vec![t_out, k, f], out)
}

/// Reusable extractor holding one filterbank per window size.
#[derive(Clone, Debug)]
pub struct MrmfExtractor {
    config: DspConfig,
    filterbanks: Vec<MelFilterbank>,
}

impl MrmfExtractor {
    pub fn new(config: DspConfig) -> Result<Self> {
        config.validate()?;
        let filterbanks = config
            .windows
            .iter()
            .map(|&w| MelFilterbank::new(config.mel_bands, w / 2 + 1, config.sample_rate, config.f_min, config.f_max))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            filterbanks,
        })
    }

    pub fn config(&self) -> &DspConfig {
        &self.config
    }

    pub fn filterbank(&self, k: usize) -> &MelFilterbank {
        &self.filterbanks[k]
    }

    pub fn extract(&self, s: &Waveform) -> Result<MrmfFeature> {
        let resampled;
        let s = if s.sample_rate != self.config.sample_rate {
            resampled = s.resample(self.config.sample_rate)?;
            &resampled
        } else {
            s
        };
        if s.len() < self.config.max_window() {
            return Err(Error::invalid(format!(
                "signal of {} samples is shorter than the largest window {}",
                s.len(),
                self.config.max_window()
            )));
        }
        let bands = self.config.mel_bands;
        let mut mel = Vec::with_capacity(self.filterbanks.len());
        let mut raw = Vec::with_capacity(self.filterbanks.len());
        for (k, (&w, fb)) in self.config.windows.iter().zip(&self.filterbanks).enumerate() {
            let mut spec = stft(s, w, self.config.hop)?;
            spec.resolution_index = k;
            mel.push(apply_mel(&spec, fb)?.map(f64::ln_1p));
            raw.push(rebin_linear(&spec.values, bands)?.map(f64::ln_1p));
        }
        let mel = align_temporal(&mel)?;
        let raw = align_temporal(&raw)?;
        let data: Vec<f64> = mel
            .data()
            .iter()
            .zip(raw.data())
            .flat_map(|(&a, &b)| [a, b])
            .collect();
        let t = mel.shape()[0];
        MrmfFeature::new(
            Tensor::new(vec![t, self.config.windows.len(), bands, CHANNELS], data)?,
            self.config.windows.clone(),
        )
    }
}

pub fn extract_mrmf(s: &Waveform, config: &DspConfig) -> Result<MrmfFeature> {
    MrmfExtractor::new(config.clone())?.extract(s)
}
