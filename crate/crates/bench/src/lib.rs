//! Fixtures shared by the benchmarks.

use std::f64::consts::TAU;

use cat_core::dsp::{DspConfig, MrmfExtractor, MrmfFeature, Waveform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A noisy two-tone clip at 32 kHz.
pub fn clip(seconds: f64, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * 32_000.0) as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / 32_000.0;
            0.4 * (TAU * 440.0 * t).sin() + 0.2 * (TAU * 3100.0 * t).sin() + rng.random_range(-0.05..0.05)
        })
        .collect();
    Waveform::new(samples, 32_000).expect("valid clip")
}

/// Features of `n` one-second clips under the default front end.
pub fn feature_batch(n: usize) -> Vec<MrmfFeature> {
    let extractor = MrmfExtractor::new(DspConfig::default()).expect("default config is valid");
    (0..n)
        .map(|i| extractor.extract(&clip(1.0, i as u64)).expect("clip is long enough"))
        .collect()
}
