//! Audio front end: WAV ingestion, multi-resolution STFT, mel filtering
//! and the stacked feature tensor the encoder consumes.

pub mod fft;
pub mod mel;
pub mod mrmf;
pub mod stft;
pub mod wav;

pub use mel::{apply_mel, hz_to_mel, mel_to_hz, rebin_linear, MelFilterbank};
pub use mrmf::{align_temporal, extract_mrmf, DspConfig, MrmfExtractor, MrmfFeature, MEL_CHANNEL, RAW_CHANNEL};
pub use stft::{frame_count, stft, stft_with, Spectrogram, WindowKind};
pub use wav::{load_wav, write_wav, Waveform};
