//! Flat `key = value` configuration with `#` comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use cat_core::causal::LossWeights;
use cat_core::dsp::DspConfig;
use cat_core::model::{AttentionKernel, ModelConfig};
use cat_core::train::{AdamConfig, SynthDatasetSpec, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct CliConfig {
    pub dsp: DspConfig,
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    pub local: bool,
    pub window_len: usize,
    pub classes: usize,
    pub time_embed_dim: usize,
    pub ffn_mult: usize,
    pub weights: LossWeights,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    pub mixup_alpha: f64,
    pub seed: u64,
    pub data_path: Option<PathBuf>,
    pub eval_path: Option<PathBuf>,
    pub synth_train_per_class: usize,
    pub synth_test_per_class: usize,
    pub synth_duration: f64,
    pub synth_seed: u64,
    pub gradcheck_frames: usize,
    pub gradcheck_batch: usize,
    pub gradcheck_seed: u64,
}

impl Default for CliConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        let synth = SynthDatasetSpec::default();
        Self {
            dsp: DspConfig::default(),
            width: model.width,
            heads: model.heads,
            layers: model.layers,
            local: true,
            window_len: 10,
            classes: model.classes,
            time_embed_dim: model.time_embed_dim,
            ffn_mult: model.ffn_mult,
            weights: train.weights,
            epsilon: train.epsilon,
            epochs: train.epochs,
            batch: train.batch,
            adam: train.adam,
            mixup_alpha: train.mixup_alpha,
            seed: train.seed,
            data_path: None,
            eval_path: None,
            synth_train_per_class: 50,
            synth_test_per_class: 20,
            synth_duration: synth.duration,
            synth_seed: synth.seed,
            gradcheck_frames: 6,
            gradcheck_batch: 2,
            gradcheck_seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| anyhow!("{key}: cannot parse {v:?}: {e}"))
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl CliConfig {
    /// `(key, value, description)` for every key, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String, &'static str)> {
        let windows = self.dsp.windows.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        vec![
            ("dsp.sample_rate", self.dsp.sample_rate.to_string(), "input rate in Hz; other rates are resampled"),
            ("dsp.windows", windows, "comma-separated power-of-two STFT windows"),
            ("dsp.hop", self.dsp.hop.to_string(), "STFT hop in samples"),
            ("dsp.mel_bands", self.dsp.mel_bands.to_string(), "bands per filter channel"),
            ("dsp.f_min", self.dsp.f_min.to_string(), "lowest mel filter edge in Hz"),
            ("dsp.f_max", self.dsp.f_max.to_string(), "highest mel filter edge in Hz"),
            ("model.width", self.width.to_string(), "token width M"),
            ("model.heads", self.heads.to_string(), "attention heads, split evenly between mel and raw"),
            ("model.layers", self.layers.to_string(), "encoder blocks"),
            ("model.kernel", if self.local { "local" } else { "global" }.into(), "local | global"),
            ("model.window_len", self.window_len.to_string(), "frames per local attention block"),
            ("model.classes", self.classes.to_string(), "output classes"),
            ("model.time_embed_dim", self.time_embed_dim.to_string(), "width of the time sinusoid"),
            ("model.ffn_mult", self.ffn_mult.to_string(), "feed-forward expansion factor"),
            ("loss.lambda_theta", self.weights.theta.to_string(), "cross-entropy weight"),
            ("loss.lambda_c", self.weights.causal.to_string(), "causal loss weight (0 disables it)"),
            ("loss.lambda_rs", self.weights.recon.to_string(), "reconstruction loss weight (0 disables it)"),
            ("loss.epsilon", self.epsilon.to_string(), "floor of the per-dimension estimates"),
            ("train.epochs", self.epochs.to_string(), "passes over the training set"),
            ("train.batch", self.batch.to_string(), "clips per step (at least 2)"),
            ("train.lr", self.adam.lr.to_string(), "Adam learning rate"),
            ("train.beta1", self.adam.beta1.to_string(), "Adam first-moment decay"),
            ("train.beta2", self.adam.beta2.to_string(), "Adam second-moment decay"),
            ("train.adam_eps", self.adam.eps.to_string(), "Adam denominator offset"),
            ("train.mixup_alpha", self.mixup_alpha.to_string(), "Beta(a, a) mixup; 0 disables mixing"),
            ("train.seed", self.seed.to_string(), "model init and batching seed"),
            ("data.path", show_path(&self.data_path), "WAV folder <root>/<class>/*.wav (empty: none)"),
            ("data.eval_path", show_path(&self.eval_path), "evaluation WAV folder (empty: use data.path)"),
            ("data.synth.train_per_class", self.synth_train_per_class.to_string(), "synthetic training clips per class"),
            ("data.synth.test_per_class", self.synth_test_per_class.to_string(), "synthetic test clips per class"),
            ("data.synth.duration", self.synth_duration.to_string(), "synthetic clip length in seconds"),
            ("data.synth.seed", self.synth_seed.to_string(), "synthetic corpus seed"),
            ("gradcheck.frames", self.gradcheck_frames.to_string(), "frames of the random check input"),
            ("gradcheck.batch", self.gradcheck_batch.to_string(), "clips in the check batch"),
            ("gradcheck.seed", self.gradcheck_seed.to_string(), "seed for the check model and input"),
        ]
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "dsp.sample_rate" => self.dsp.sample_rate = parse(key, v)?,
            "dsp.windows" => {
                self.dsp.windows = v
                    .split(',')
                    .map(|w| parse(key, w.trim()))
                    .collect::<Result<Vec<usize>>>()?
            }
            "dsp.hop" => self.dsp.hop = parse(key, v)?,
            "dsp.mel_bands" => self.dsp.mel_bands = parse(key, v)?,
            "dsp.f_min" => self.dsp.f_min = parse(key, v)?,
            "dsp.f_max" => self.dsp.f_max = parse(key, v)?,
            "model.width" => self.width = parse(key, v)?,
            "model.heads" => self.heads = parse(key, v)?,
            "model.layers" => self.layers = parse(key, v)?,
            "model.kernel" => {
                self.local = match v {
                    "local" => true,
                    "global" => false,
                    _ => bail!("model.kernel: expected local or global, got {v:?}"),
                }
            }
            "model.window_len" => self.window_len = parse(key, v)?,
            "model.classes" => self.classes = parse(key, v)?,
            "model.time_embed_dim" => self.time_embed_dim = parse(key, v)?,
            "model.ffn_mult" => self.ffn_mult = parse(key, v)?,
            "loss.lambda_theta" => self.weights.theta = parse(key, v)?,
            "loss.lambda_c" => self.weights.causal = parse(key, v)?,
            "loss.lambda_rs" => self.weights.recon = parse(key, v)?,
            "loss.epsilon" => self.epsilon = parse(key, v)?,
            "train.epochs" => self.epochs = parse(key, v)?,
            "train.batch" => self.batch = parse(key, v)?,
            "train.lr" => self.adam.lr = parse(key, v)?,
            "train.beta1" => self.adam.beta1 = parse(key, v)?,
            "train.beta2" => self.adam.beta2 = parse(key, v)?,
            "train.adam_eps" => self.adam.eps = parse(key, v)?,
            "train.mixup_alpha" => self.mixup_alpha = parse(key, v)?,
            "train.seed" => self.seed = parse(key, v)?,
            "data.path" => self.data_path = path(v),
            "data.eval_path" => self.eval_path = path(v),
            "data.synth.train_per_class" => self.synth_train_per_class = parse(key, v)?,
            "data.synth.test_per_class" => self.synth_test_per_class = parse(key, v)?,
            "data.synth.duration" => self.synth_duration = parse(key, v)?,
            "data.synth.seed" => self.synth_seed = parse(key, v)?,
            "gradcheck.frames" => self.gradcheck_frames = parse(key, v)?,
            "gradcheck.batch" => self.gradcheck_batch = parse(key, v)?,
            "gradcheck.seed" => self.gradcheck_seed = parse(key, v)?,
            _ => bail!("unknown configuration key {key:?}"),
        }
        Ok(())
    }

    /// Defaults overridden by every `key = value` line of `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`, got {raw:?}", i + 1))?;
            cfg.set(key.trim(), value.trim()).with_context(|| format!("line {}", i + 1))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    /// Every key with its value and a comment; parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (key, value, doc) in self.entries() {
            let head = key.split('.').next().unwrap_or("");
            if head != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                section = head;
            }
            let _ = writeln!(out, "# {doc}");
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    pub fn kernel(&self) -> AttentionKernel {
        if self.local {
            AttentionKernel::LocalWindow(self.window_len)
        } else {
            AttentionKernel::Global
        }
    }

    pub fn model(&self, frames: usize) -> ModelConfig {
        ModelConfig {
            frames,
            resolutions: self.dsp.windows.len(),
            bands: self.dsp.mel_bands,
            width: self.width,
            heads: self.heads,
            layers: self.layers,
            classes: self.classes,
            kernel: self.kernel(),
            time_embed_dim: self.time_embed_dim,
            ffn_mult: self.ffn_mult,
            ..ModelConfig::default()
        }
    }

    pub fn train(&self, frames: usize) -> TrainConfig {
        TrainConfig {
            model: self.model(frames),
            epochs: self.epochs,
            batch: self.batch,
            adam: self.adam,
            mixup_alpha: self.mixup_alpha,
            weights: self.weights,
            epsilon: self.epsilon,
            seed: self.seed,
        }
    }

    pub fn synth(&self) -> SynthDatasetSpec {
        SynthDatasetSpec {
            per_class: self.synth_train_per_class + self.synth_test_per_class,
            duration: self.synth_duration,
            sample_rate: self.dsp.sample_rate,
            seed: self.synth_seed,
            ..SynthDatasetSpec::default()
        }
    }

    /// The small model the gradient check runs on when no file is given.
    pub fn gradcheck_preset() -> Self {
        let tiny = ModelConfig::tiny();
        Self {
            dsp: DspConfig {
                windows: vec![256, 512],
                mel_bands: tiny.bands,
                ..DspConfig::default()
            },
            width: tiny.width,
            heads: tiny.heads,
            layers: tiny.layers,
            local: false,
            classes: tiny.classes,
            time_embed_dim: tiny.time_embed_dim,
            ffn_mult: tiny.ffn_mult,
            gradcheck_frames: tiny.frames,
            ..Self::default()
        }
    }
}
