//! Feature-space mixup.

use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::dsp::MrmfFeature;
use crate::error::{Error, Result};

/// `λ ~ Beta(α, α)`.
pub fn sample_lambda(rng: &mut impl Rng, alpha: f64) -> Result<f64> {
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::invalid(format!("mixup alpha {alpha}: {e}")))?;
    Ok(beta.sample(rng))
}

/// `(λ·a + (1−λ)·b, λ·y_a + (1−λ)·y_b)`.
pub fn mixup(
    a: (&MrmfFeature, &[f64]),
    b: (&MrmfFeature, &[f64]),
    lambda: f64,
) -> Result<(MrmfFeature, Vec<f64>)> {
    if a.0.shape() != b.0.shape() || a.0.window_sizes != b.0.window_sizes {
        return Err(Error::dim("mixup features", a.0.shape(), b.0.shape()));
    }
    if a.1.len() != b.1.len() {
        return Err(Error::dim("mixup labels", &[a.1.len()], &[b.1.len()]));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("mixup weight {lambda} outside [0, 1]")));
    }
    let mu = 1.0 - lambda;
    let tensor = a.0.tensor.zip_map(&b.0.tensor, |x, y| lambda * x + mu * y)?;
    let label = a.1.iter().zip(b.1).map(|(x, y)| lambda * x + mu * y).collect();
    Ok((MrmfFeature::new(tensor, a.0.window_sizes.clone())?, label))
}
