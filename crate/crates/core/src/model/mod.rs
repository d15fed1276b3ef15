//! The encoder: patch projection per filter channel, additive positional
//! embedding, pre-norm acoustic-attention blocks, mean-pooled latent,
//! classifier head, and a per-token reconstruction block.

pub mod attention;
pub mod checkpoint;
pub mod embed;
pub mod params;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::mrmf::{MrmfFeature, MEL_CHANNEL, RAW_CHANNEL};
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub use attention::{AcousticAttention, AttentionKernel, AttentionOutput, HeadGroup};
pub use embed::{feature_sinusoid, sinusoid, PositionalEmbedding3D};
pub use params::{xavier_bound, Bound, Linear, Norm, ParamId, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Frame count the positional embedding is validated for.
    pub frames: usize,
    pub resolutions: usize,
    pub bands: usize,
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    pub classes: usize,
    pub kernel: AttentionKernel,
    pub time_embed_dim: usize,
    pub ffn_mult: usize,
    pub norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            frames: 100,
            resolutions: 3,
            bands: 64,
            width: 32,
            heads: 4,
            layers: 2,
            classes: 4,
            kernel: AttentionKernel::LocalWindow(10),
            time_embed_dim: 32,
            ffn_mult: 2,
            norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// The small configuration used for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            frames: 6,
            resolutions: 2,
            bands: 8,
            width: 16,
            heads: 4,
            layers: 2,
            classes: 4,
            kernel: AttentionKernel::Global,
            time_embed_dim: 8,
            ffn_mult: 2,
            norm_eps: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.heads == 0 || !self.heads.is_multiple_of(2) {
            problems.push(format!("heads ({}) must be even and positive", self.heads));
        }
        if self.heads != 0 && !self.width.is_multiple_of(self.heads) {
            problems.push(format!("width ({}) must be divisible by heads ({})", self.width, self.heads));
        }
        if self.time_embed_dim == 0 || !self.time_embed_dim.is_multiple_of(2) {
            problems.push(format!("time_embed_dim ({}) must be even and positive", self.time_embed_dim));
        }
        for (name, v) in [
            ("frames", self.frames),
            ("resolutions", self.resolutions),
            ("bands", self.bands),
            ("layers", self.layers),
            ("ffn_mult", self.ffn_mult),
        ] {
            if v == 0 {
                problems.push(format!("{name} must be positive"));
            }
        }
        if self.classes < 2 {
            problems.push(format!("classes ({}) must be at least 2", self.classes));
        }
        if self.kernel == AttentionKernel::LocalWindow(0) {
            problems.push("local window length must be at least 1".into());
        }
        if !(self.norm_eps > 0.0) {
            problems.push("norm_eps must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems.join("; ")))
        }
    }

    /// Pooled latent width `d = 2M`.
    pub fn latent_dim(&self) -> usize {
        2 * self.width
    }

    pub fn patch_len(&self) -> usize {
        self.resolutions * self.bands
    }
}

#[derive(Clone, Debug)]
pub struct Block {
    pub norm1: Norm,
    pub attention: AcousticAttention,
    pub norm2: Norm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

impl Block {
    pub fn forward(&self, tape: &mut Tape, p: &Bound, tokens: [Var; 2], eps: f64) -> Result<([Var; 2], [Vec<Var>; 2])> {
        let mut normed = tokens;
        for c in 0..2 {
            normed[c] = self.norm1.forward(tape, p, tokens[c], eps)?;
        }
        let attn = self.attention.attend(tape, p, normed)?;
        let mut out = tokens;
        for c in 0..2 {
            let x = tape.add(tokens[c], attn.tokens[c])?;
            let h = self.norm2.forward(tape, p, x, eps)?;
            let h = self.ffn_in.forward(tape, p, h)?;
            let h = tape.gelu(h);
            let h = self.ffn_out.forward(tape, p, h)?;
            out[c] = tape.add(x, h)?;
        }
        Ok((out, attn.weights))
    }
}

/// Tape handles produced by one encoder pass.
pub struct Encoded {
    /// Final normalized tokens `[T × M]` per channel.
    pub tokens: [Var; 2],
    /// Pooled latent `[1 × 2M]`: mel pool then raw pool.
    pub z: Var,
    /// Reconstruction `[T × (K·F)]` per channel, laid out like
    /// [`MrmfFeature::channel_slab`].
    pub recon: [Var; 2],
    /// Input slabs (constants) per channel, same layout as `recon`.
    pub input: [Var; 2],
    /// Attention weights per block.
    pub attention: Vec<[Vec<Var>; 2]>,
}

/// Plain values of one encoder pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardValues {
    pub logits: Vec<f64>,
    pub z: Vec<f64>,
    pub recon: MrmfFeature,
}

#[derive(Clone, Debug)]
pub struct CatModel {
    config: ModelConfig,
    params: ParamStore,
    pub patch: [Linear; 2],
    pub positional: PositionalEmbedding3D,
    pub blocks: Vec<Block>,
    pub final_norm: Norm,
    pub head: Linear,
    pub recon: [Linear; 2],
}

const CHANNEL_NAMES: [&str; 2] = ["mel", "raw"];

impl CatModel {
    /// Xavier-uniform weights, zero biases, unit norm gains; deterministic per seed.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let m = config.width;
        let kf = config.patch_len();

        let patch = CHANNEL_NAMES.map(|ch| Linear::init(&mut store, &mut rng, &format!("patch.{ch}"), kf, m));
        let g = store.add(
            "positional.g",
            params::xavier(&mut rng, config.time_embed_dim + config.resolutions, m),
        );
        let positional = PositionalEmbedding3D {
            g,
            time_dim: config.time_embed_dim,
            resolutions: config.resolutions,
            width: m,
        };
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let name = format!("blocks.{l}");
            let norm1 = Norm::init(&mut store, &format!("{name}.norm1"), m);
            let attention = AcousticAttention::init(
                &mut store,
                &mut rng,
                &format!("{name}.attention"),
                m,
                config.heads,
                config.kernel,
            )?;
            let norm2 = Norm::init(&mut store, &format!("{name}.norm2"), m);
            let hidden = config.ffn_mult * m;
            let ffn_in = Linear::init(&mut store, &mut rng, &format!("{name}.ffn_in"), m, hidden);
            let ffn_out = Linear::init(&mut store, &mut rng, &format!("{name}.ffn_out"), hidden, m);
            blocks.push(Block {
                norm1,
                attention,
                norm2,
                ffn_in,
                ffn_out,
            });
        }
        let final_norm = Norm::init(&mut store, "final_norm", m);
        let head = Linear::init(&mut store, &mut rng, "head", config.latent_dim(), config.classes);
        let recon = CHANNEL_NAMES.map(|ch| Linear::init(&mut store, &mut rng, &format!("recon.{ch}"), m, kf));

        let model = Self {
            config,
            params: store,
            patch,
            positional,
            blocks,
            final_norm,
            head,
            recon,
        };
        model.positional.check_distinct(&model.params, model.config.frames)?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn check_input(&self, x: &MrmfFeature) -> Result<()> {
        let c = &self.config;
        if x.resolutions() != c.resolutions || x.bands() != c.bands {
            return Err(Error::dim(
                "encoder input",
                x.shape(),
                &[x.frames(), c.resolutions, c.bands, 2],
            ));
        }
        Ok(())
    }

    /// Projects each channel's `[K × F]` slab per frame to `M`: two `[T × M]` streams.
    pub fn patchify(&self, tape: &mut Tape, p: &Bound, x: &MrmfFeature) -> Result<([Var; 2], [Var; 2])> {
        self.check_input(x)?;
        let input = [MEL_CHANNEL, RAW_CHANNEL].map(|c| tape.constant(x.channel_slab(c)));
        let mut tokens = input;
        for c in 0..2 {
            tokens[c] = self.patch[c].forward(tape, p, input[c])?;
        }
        Ok((tokens, input))
    }

    pub fn encode(&self, tape: &mut Tape, p: &Bound, x: &MrmfFeature) -> Result<Encoded> {
        let eps = self.config.norm_eps;
        let (mut tokens, input) = self.patchify(tape, p, x)?;
        let pos = self.positional.forward(tape, p, x.frames())?;
        for tok in &mut tokens {
            *tok = tape.add(*tok, pos)?;
        }
        let mut attention = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, w) = block.forward(tape, p, tokens, eps)?;
            tokens = next;
            attention.push(w);
        }
        let mut pooled = tokens;
        let mut recon = tokens;
        for c in 0..2 {
            tokens[c] = self.final_norm.forward(tape, p, tokens[c], eps)?;
            pooled[c] = tape.mean_rows(tokens[c])?;
            recon[c] = self.recon[c].forward(tape, p, tokens[c])?;
        }
        let z = tape.concat_cols(&pooled)?;
        Ok(Encoded {
            tokens,
            z,
            recon,
            input,
            attention,
        })
    }

    /// Classifier head on latent rows `[n × 2M] → [n × classes]`.
    pub fn classify(&self, tape: &mut Tape, p: &Bound, z: Var) -> Result<Var> {
        self.head.forward(tape, p, z)
    }

    pub fn encoder_forward(&self, x: &MrmfFeature) -> Result<ForwardValues> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let enc = self.encode(&mut tape, &p, x)?;
        let logits = self.classify(&mut tape, &p, enc.z)?;
        let recon = MrmfFeature::from_slabs(
            tape.value(enc.recon[0]),
            tape.value(enc.recon[1]),
            x.window_sizes.clone(),
            self.config.bands,
        )?;
        Ok(ForwardValues {
            logits: tape.value(logits).data().to_vec(),
            z: tape.value(enc.z).data().to_vec(),
            recon,
        })
    }

    /// Softmax class probabilities.
    pub fn predict_proba(&self, x: &MrmfFeature) -> Result<Vec<f64>> {
        Ok(softmax(&self.encoder_forward(x)?.logits))
    }

    pub fn load_params(&mut self, entries: Vec<(String, Tensor)>) -> Result<()> {
        self.params.load(entries)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
