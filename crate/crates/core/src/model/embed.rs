//! Patch projection and the additive time/resolution/feature embedding.

use crate::error::{Error, Result};
use crate::model::params::{Bound, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Sinusoid of `dim` channels at `position`:
/// `[sin(p/10000^{0/dim}), cos(p/10000^{0/dim}), sin(p/10000^{2/dim}), …]`.
pub fn sinusoid(position: f64, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|i| {
            let pair = (i / 2) as f64 * 2.0;
            let angle = position / 10000f64.powf(pair / dim as f64);
            if i % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

/// Fixed sinusoid over the feature axis, one value per model channel.
pub fn feature_sinusoid(width: usize) -> Vec<f64> {
    (0..width)
        .map(|m| {
            let pair = (m / 2) as f64 * 2.0;
            let angle = m as f64 / 10000f64.powf(pair / width as f64);
            if m % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

/// Additive embedding built from a time sinusoid, a one-hot resolution code
/// and a feature-axis sinusoid. The learned map `g: (D_t + K) → M` has no
/// bias. A token aggregates all `K` resolutions, so it receives the sum over
/// `k` of the per-resolution embeddings:
///
/// `Σ_k g([pe_time(t), onehot(k)]) + pe_feat = g([K·pe_time(t), 1_K]) + pe_feat`.
#[derive(Clone, Debug)]
pub struct PositionalEmbedding3D {
    pub g: ParamId,
    pub time_dim: usize,
    pub resolutions: usize,
    pub width: usize,
}

impl PositionalEmbedding3D {
    /// Concatenated `[K·pe_time(t), 1_K]` inputs for every frame.
    fn inputs(&self, frames: usize) -> Tensor {
        let k = self.resolutions;
        let mut data = Vec::with_capacity(frames * (self.time_dim + k));
        for t in 0..frames {
            data.extend(sinusoid(t as f64, self.time_dim).into_iter().map(|v| v * k as f64));
            data.extend(std::iter::repeat_n(1.0, k));
        }
        Tensor::from_parts(vec![frames, self.time_dim + k], data)
    }

    /// `[T × M]` embedding added to every token of both channels.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, frames: usize) -> Result<Var> {
        let inputs = tape.constant(self.inputs(frames));
        let projected = tape.matmul(inputs, p.var(self.g))?;
        let feat = tape.constant(Tensor::from_parts(vec![self.width], feature_sinusoid(self.width)));
        tape.add_row(projected, feat)
    }

    pub fn values(&self, store: &ParamStore, frames: usize) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let v = self.forward(&mut tape, &p, frames)?;
        Ok(tape.value(v).clone())
    }

    /// Embedding of the single (frame, resolution) pair: `g([pe_time(t), e_k]) + pe_feat`.
    pub fn pair_vector(&self, store: &ParamStore, t: usize, k: usize) -> Vec<f64> {
        let g = store.get(self.g);
        let mut input = sinusoid(t as f64, self.time_dim);
        input.extend((0..self.resolutions).map(|j| if j == k { 1.0 } else { 0.0 }));
        let row = Tensor::from_parts(vec![1, input.len()], input);
        let out = row.matmul(g).expect("shape fixed at construction");
        out.data()
            .iter()
            .zip(feature_sinusoid(self.width))
            .map(|(a, b)| a + b)
            .collect()
    }

    /// Smallest max-abs difference between embeddings of distinct
    /// (frame, resolution) pairs.
    pub fn min_pair_separation(&self, store: &ParamStore, frames: usize) -> f64 {
        let vecs: Vec<Vec<f64>> = (0..frames)
            .flat_map(|t| (0..self.resolutions).map(move |k| (t, k)))
            .map(|(t, k)| self.pair_vector(store, t, k))
            .collect();
        let mut best = f64::INFINITY;
        for i in 0..vecs.len() {
            for j in i + 1..vecs.len() {
                let d = vecs[i]
                    .iter()
                    .zip(&vecs[j])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                best = best.min(d);
            }
        }
        best
    }

    pub(crate) fn check_distinct(&self, store: &ParamStore, frames: usize) -> Result<()> {
        let sep = self.min_pair_separation(store, frames);
        if sep <= 1e-9 {
            return Err(Error::invalid(format!(
                "positional embeddings are not pairwise distinct (separation {sep:e})"
            )));
        }
        Ok(())
    }
}
