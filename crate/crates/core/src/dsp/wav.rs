//! Minimal RIFF/WAVE reader and writer for 16-bit PCM.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Mono audio at a known sample rate, amplitudes in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Linear-interpolation resampling.
    pub fn resample(&self, target_rate: u32) -> Result<Waveform> {
        if target_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if target_rate == self.sample_rate || self.samples.len() < 2 {
            return Waveform::new(self.samples.clone(), target_rate);
        }
        let n_in = self.samples.len();
        let n_out = ((n_in as u64 * target_rate as u64) / self.sample_rate as u64).max(1) as usize;
        let step = self.sample_rate as f64 / target_rate as f64;
        let samples = (0..n_out)
            .map(|i| {
                let pos = i as f64 * step;
                let lo = (pos.floor() as usize).min(n_in - 1);
                let hi = (lo + 1).min(n_in - 1);
                let frac = pos - lo as f64;
                self.samples[lo] * (1.0 - frac) + self.samples[hi] * frac
            })
            .collect();
        Waveform::new(samples, target_rate)
    }
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn fail(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Ingestion {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.fail(self.pos, format!("unexpected end of file reading {n} bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Reads a PCM 16-bit WAV file; stereo (or wider) input is averaged to mono.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        offset: 0,
        message: e.to_string(),
    })?;
    parse_wav(path, &bytes)
}

fn parse_wav(path: &Path, bytes: &[u8]) -> Result<Waveform> {
    let mut r = Reader { path, bytes, pos: 0 };
    if r.take(4)? != b"RIFF" {
        return Err(r.fail(0, "missing RIFF magic"));
    }
    r.u32()?;
    if r.take(4)? != b"WAVE" {
        return Err(r.fail(8, "missing WAVE form type"));
    }

    let mut format: Option<(u16, u32, u16)> = None;
    loop {
        let chunk_at = r.pos;
        let id: [u8; 4] = r.take(4)?.try_into().unwrap();
        let size = r.u32()? as usize;
        match &id {
            b"fmt " => {
                if size < 16 {
                    return Err(r.fail(chunk_at, "fmt chunk shorter than 16 bytes"));
                }
                let fmt_at = r.pos;
                let tag = r.u16()?;
                let channels = r.u16()?;
                let rate = r.u32()?;
                r.u32()?;
                r.u16()?;
                let bits = r.u16()?;
                r.take(size - 16 + (size & 1))?;
                if tag != 1 {
                    return Err(r.fail(fmt_at, format!("unsupported encoding tag {tag}, expected PCM (1)")));
                }
                if bits != 16 {
                    return Err(r.fail(fmt_at + 14, format!("unsupported bit depth {bits}, expected 16")));
                }
                if channels == 0 || rate == 0 {
                    return Err(r.fail(fmt_at + 2, "zero channels or sample rate"));
                }
                format = Some((tag, rate, channels));
            }
            b"data" => {
                let Some((_, rate, channels)) = format else {
                    return Err(r.fail(chunk_at, "data chunk before fmt chunk"));
                };
                let frame = 2 * channels as usize;
                let data_at = r.pos;
                let avail = size.min(bytes.len() - data_at);
                if avail != size {
                    return Err(r.fail(data_at, format!("data chunk claims {size} bytes, {avail} present")));
                }
                if !size.is_multiple_of(frame) {
                    return Err(r.fail(data_at, "data length is not a whole number of frames"));
                }
                let data = r.take(size)?;
                let samples = data
                    .chunks_exact(frame)
                    .map(|f| {
                        let sum: f64 = f
                            .chunks_exact(2)
                            .map(|s| i16::from_le_bytes([s[0], s[1]]) as f64 / 32768.0)
                            .sum();
                        sum / channels as f64
                    })
                    .collect();
                return Waveform::new(samples, rate);
            }
            _ => {
                r.take(size + (size & 1))?;
            }
        }
    }
}

/// Writes mono 16-bit PCM. Samples are clipped to `[-1, 1)` and rounded.
pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let data_len = 2 * wave.samples.len() as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&wave.sample_rate.to_le_bytes());
    out.extend_from_slice(&(wave.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &wave.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw_wav(channels: u16, rate: u32, samples: &[i16]) -> Vec<u8> {
        let data_len = 2 * samples.len() as u32;
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&(36 + data_len).to_le_bytes());
        out.extend_from_slice(b"WAVEfmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&rate.to_le_bytes());
        out.extend_from_slice(&(rate * 2 * channels as u32).to_le_bytes());
        out.extend_from_slice(&(2 * channels).to_le_bytes());
        out.extend_from_slice(&16u16.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&data_len.to_le_bytes());
        for s in samples {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out
    }

    #[test]
    fn scaling_definition() {
        let w = parse_wav(Path::new("t.wav"), &raw_wav(1, 8000, &[0, -32768, 16384])).unwrap();
        assert_eq!(w.samples, vec![0.0, -1.0, 0.5]);
        assert_eq!(w.sample_rate, 8000);
    }

    #[test]
    fn stereo_is_averaged() {
        let w = parse_wav(Path::new("t.wav"), &raw_wav(2, 8000, &[16384, 0, -16384, -16384])).unwrap();
        assert_eq!(w.samples, vec![0.25, -0.5]);
    }

    #[test]
    fn non_pcm_rejected_with_offset() {
        let mut bytes = raw_wav(1, 8000, &[1, 2]);
        bytes[20] = 3; // IEEE float tag
        match parse_wav(Path::new("f.wav"), &bytes) {
            Err(Error::Ingestion { offset, message, .. }) => {
                assert_eq!(offset, 20);
                assert!(message.contains("PCM"));
            }
            other => panic!("expected ingestion error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_reports_offset() {
        let bytes = raw_wav(1, 8000, &[1, 2, 3, 4]);
        let err = parse_wav(Path::new("t.wav"), &bytes[..30]).unwrap_err();
        assert!(matches!(err, Error::Ingestion { offset: 28, .. }), "{err}");
        let err = parse_wav(Path::new("t.wav"), b"RIFX\0\0\0\0WAVE").unwrap_err();
        assert!(matches!(err, Error::Ingestion { offset: 0, .. }));
    }

    #[test]
    fn missing_file_is_ingestion_error() {
        assert!(matches!(
            load_wav("/definitely/not/here.wav"),
            Err(Error::Ingestion { .. })
        ));
    }

    #[test]
    fn resample_preserves_constants_and_length() {
        let w = Waveform::new(vec![0.25; 16000], 16000).unwrap();
        let r = w.resample(32000).unwrap();
        assert_eq!(r.len(), 32000);
        assert!(r.samples.iter().all(|&s| s == 0.25));
    }
}
