//! Acoustic attention: heads partitioned by filter channel.
//!
//! Heads `0..H/2` read only mel-channel tokens and heads `H/2..H` read only
//! raw-channel tokens; each group has its own Q/K/V projections and its own
//! row-block of the `M → M` output projection, so no attention edge or
//! projection mixes the two channels.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::params::{Bound, Linear, ParamStore};
use crate::tape::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttentionKernel {
    Global,
    /// Non-overlapping windows of `w` frames along time: token `t` attends to
    /// the tokens of window `⌊t/w⌋` only.
    LocalWindow(usize),
}

impl AttentionKernel {
    /// Keep-mask for `t` tokens, `None` meaning all-pass.
    pub fn mask(self, t: usize) -> Option<Vec<bool>> {
        match self {
            AttentionKernel::Global => None,
            AttentionKernel::LocalWindow(w) if w >= t => None,
            AttentionKernel::LocalWindow(w) => {
                let mut keep = vec![false; t * t];
                for i in 0..t {
                    for j in 0..t {
                        keep[i * t + j] = i / w == j / w;
                    }
                }
                Some(keep)
            }
        }
    }
}

/// Q/K/V and output projection for the heads serving one filter channel.
#[derive(Clone, Debug)]
pub struct HeadGroup {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

#[derive(Clone, Debug)]
pub struct AcousticAttention {
    pub groups: [HeadGroup; 2],
    pub heads: usize,
    pub width: usize,
    pub kernel: AttentionKernel,
}

/// Per-channel attention results. `weights[c][h]` is the `[T × T]` weight
/// matrix of the `h`-th head of channel `c`.
pub struct AttentionOutput {
    pub tokens: [Var; 2],
    pub weights: [Vec<Var>; 2],
}

impl AcousticAttention {
    pub(crate) fn init(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        width: usize,
        heads: usize,
        kernel: AttentionKernel,
    ) -> Result<Self> {
        if heads == 0 || !heads.is_multiple_of(2) {
            return Err(Error::invalid(format!("head count {heads} must be even and positive")));
        }
        if !width.is_multiple_of(heads) {
            return Err(Error::invalid(format!("width {width} is not divisible by {heads} heads")));
        }
        if let AttentionKernel::LocalWindow(0) = kernel {
            return Err(Error::invalid("local attention window must be at least 1"));
        }
        let half = width / 2;
        let mut group = |ch: &str| HeadGroup {
            query: Linear::init(store, rng, &format!("{name}.{ch}.query"), width, half),
            key: Linear::init_unbiased(store, rng, &format!("{name}.{ch}.key"), width, half),
            value: Linear::init(store, rng, &format!("{name}.{ch}.value"), width, half),
            output: Linear::init(store, rng, &format!("{name}.{ch}.output"), half, width),
        };
        let groups = [group("mel"), group("raw")];
        Ok(Self {
            groups,
            heads,
            width,
            kernel,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    /// Attention without the residual path.
    pub fn attend(&self, tape: &mut Tape, p: &Bound, tokens: [Var; 2]) -> Result<AttentionOutput> {
        let (t0, m0) = tape.value(tokens[0]).dims2();
        let (t1, m1) = tape.value(tokens[1]).dims2();
        if (t0, m0) != (t1, m1) || m0 != self.width {
            return Err(Error::dim(
                "acoustic_attention",
                tape.value(tokens[0]).shape(),
                tape.value(tokens[1]).shape(),
            ));
        }
        let mask = self.kernel.mask(t0);
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = [tokens[0]; 2];
        let mut weights: [Vec<Var>; 2] = [Vec::new(), Vec::new()];
        for c in 0..2 {
            let g = &self.groups[c];
            let q = g.query.forward(tape, p, tokens[c])?;
            let k = g.key.forward(tape, p, tokens[c])?;
            let v = g.value.forward(tape, p, tokens[c])?;
            let mut heads = Vec::with_capacity(self.heads / 2);
            for h in 0..self.heads / 2 {
                let qh = tape.slice_cols(q, h * dh, dh)?;
                let kh = tape.slice_cols(k, h * dh, dh)?;
                let vh = tape.slice_cols(v, h * dh, dh)?;
                let kt = tape.transpose(kh)?;
                let scores = tape.matmul(qh, kt)?;
                let scores = tape.scale(scores, scale);
                let a = tape.masked_softmax_rows(scores, mask.as_deref())?;
                heads.push(tape.matmul(a, vh)?);
                weights[c].push(a);
            }
            let joined = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
            outs[c] = g.output.forward(tape, p, joined)?;
        }
        Ok(AttentionOutput {
            tokens: outs,
            weights,
        })
    }

    /// `tokens + attention(tokens)` for both channels.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, tokens: [Var; 2]) -> Result<AttentionOutput> {
        let mut out = self.attend(tape, p, tokens)?;
        for (o, &t) in out.tokens.iter_mut().zip(&tokens) {
            *o = tape.add(t, *o)?;
        }
        Ok(out)
    }
}
