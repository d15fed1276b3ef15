//! Training harness: synthetic data, mixup, Adam, metrics, and the epoch
//! loop that ties the encoder to the joint objective.

pub mod adam;
pub mod metrics;
pub mod mixup;
pub mod synth;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::causal::{causal_loss, derangement, reconstruction_loss, total_loss, LossBreakdown, LossParts, LossWeights};
use crate::dsp::{MrmfExtractor, MrmfFeature, Waveform};
use crate::error::{Error, Result};
use crate::gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
use crate::model::{softmax, Bound, CatModel, ModelConfig};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub use adam::{adam_step, AdamConfig, AdamState, StepOutcome};
pub use metrics::{accuracy, argmax, average_precision, mean_average_precision, MapResult};
pub use mixup::{mixup, sample_lambda};
pub use synth::{render, split_per_class, synth_dataset, SynthClass, SynthDatasetSpec};

#[derive(Clone, Debug)]
pub struct Example {
    pub features: MrmfFeature,
    pub label: usize,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, classes: usize) -> Result<Self> {
        if let Some(e) = examples.iter().find(|e| e.label >= classes) {
            return Err(Error::invalid(format!("label {} outside {classes} classes", e.label)));
        }
        Ok(Self { examples, classes })
    }

    pub fn from_waveforms(items: &[(Waveform, usize)], extractor: &MrmfExtractor, classes: usize) -> Result<Self> {
        let examples = items
            .iter()
            .map(|(w, label)| {
                Ok(Example {
                    features: extractor.extract(w)?,
                    label: *label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(examples, classes)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }
}

pub fn one_hot(label: usize, classes: usize) -> Vec<f64> {
    (0..classes).map(|c| if c == label { 1.0 } else { 0.0 }).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    /// Beta parameter for mixup; 0 disables mixing.
    pub mixup_alpha: f64,
    pub weights: LossWeights,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            epochs: 30,
            batch: 16,
            adam: AdamConfig::default(),
            mixup_alpha: 0.5,
            weights: LossWeights::default(),
            epsilon: crate::causal::DEFAULT_EPSILON,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch < 2 {
            return Err(Error::invalid(format!(
                "batch size {} leaves no counterfactual donor (need at least 2)",
                self.batch
            )));
        }
        if !(self.mixup_alpha >= 0.0) || !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::invalid("mixup alpha must be ≥ 0 and epsilon in (0, 1]"));
        }
        let w = self.weights;
        if [w.theta, w.causal, w.recon].iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        let a = self.adam;
        if !(a.lr >= 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::invalid("Adam needs lr ≥ 0, betas in [0, 1) and eps > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BatchOutput {
    pub total: Var,
    pub logits: Var,
    pub breakdown: LossBreakdown,
}

/// The joint objective on one batch. `perm` supplies counterfactual donors
/// and is required when the causal weight is nonzero; a zero weight skips
/// that component entirely.
#[allow(clippy::too_many_arguments)]
pub fn batch_objective(
    model: &CatModel,
    tape: &mut Tape,
    p: &Bound,
    xs: &[&MrmfFeature],
    targets: &Tensor,
    perm: Option<&[usize]>,
    weights: LossWeights,
    epsilon: f64,
) -> Result<BatchOutput> {
    let n = xs.len();
    if targets.rank() != 2 || targets.dims2() != (n, model.config().classes) {
        return Err(Error::dim("batch targets", targets.shape(), &[n, model.config().classes]));
    }
    let mut zs = Vec::with_capacity(n);
    let mut recon_terms = Vec::with_capacity(n);
    for x in xs {
        let enc = model.encode(tape, p, x)?;
        zs.push(enc.z);
        if weights.recon != 0.0 {
            recon_terms.push(reconstruction_loss(tape, &enc.recon, &enc.input)?);
        }
    }
    let z = tape.concat_rows(&zs)?;
    let logits = model.classify(tape, p, z)?;
    let l_theta = tape.cross_entropy(logits, targets)?;

    let l_c = if weights.causal != 0.0 {
        let perm = perm.ok_or_else(|| Error::Contract("causal loss needs a donor permutation".into()))?;
        let classify = |t: &mut Tape, v: Var| model.classify(t, p, v);
        Some(causal_loss(tape, z, targets, &classify, perm, epsilon)?)
    } else {
        None
    };
    let l_rs = match recon_terms.split_first() {
        Some((&first, rest)) => {
            let mut acc = first;
            for &r in rest {
                acc = tape.add(acc, r)?;
            }
            Some(tape.scale(acc, 1.0 / n as f64))
        }
        None => None,
    };
    let (total, breakdown) = total_loss(tape, LossParts { l_theta, l_c, l_rs }, weights)?;
    Ok(BatchOutput {
        total,
        logits,
        breakdown,
    })
}

/// Finite-difference check of the full objective on random features for a
/// freshly initialized model. `sabotage` routes the loss through
/// [`Tape::faulty_identity`] so the check must fail.
pub fn check_objective_gradients(
    config: &ModelConfig,
    batch: usize,
    seed: u64,
    weights: LossWeights,
    epsilon: f64,
    sabotage: bool,
) -> Result<GradCheckReport> {
    let model = CatModel::init(config.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let shape = [config.frames, config.resolutions, config.bands, 2];
    let windows: Vec<usize> = (0..config.resolutions).map(|k| 256 << k).collect();
    let xs = (0..batch)
        .map(|_| {
            let data = (0..shape.iter().product()).map(|_| rng.random_range(0.0..2.0)).collect();
            MrmfFeature::new(Tensor::new(shape.to_vec(), data)?, windows.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&MrmfFeature> = xs.iter().collect();
    let mut targets = Vec::with_capacity(batch * config.classes);
    for i in 0..batch {
        targets.extend(one_hot(i % config.classes, config.classes));
    }
    let targets = Tensor::new(vec![batch, config.classes], targets)?;
    let perm = derangement(batch, &mut rng)?;
    let named: Vec<(String, Tensor)> = model.params().iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
    grad_check(
        |tape, vars| {
            let p = Bound(vars.to_vec());
            let out = batch_objective(&model, tape, &p, &refs, &targets, Some(&perm), weights, epsilon)?;
            Ok(if sabotage { tape.faulty_identity(out.total) } else { out.total })
        },
        &named,
        GradCheckOptions::default(),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub map: f64,
    /// Mean per-clip reconstruction RMS.
    pub l_rs: f64,
    pub skipped_classes: Vec<usize>,
}

pub fn predict(model: &CatModel, data: &Dataset) -> Result<(Vec<Vec<f64>>, f64)> {
    let mut scores = Vec::with_capacity(data.len());
    let mut l_rs = 0.0;
    for e in &data.examples {
        let out = model.encoder_forward(&e.features)?;
        l_rs += crate::causal::reconstruction_rms(&out.recon, &e.features)?;
        scores.push(softmax(&out.logits));
    }
    Ok((scores, l_rs / data.len().max(1) as f64))
}

pub fn evaluate(model: &CatModel, data: &Dataset) -> Result<EvalMetrics> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let (scores, l_rs) = predict(model, data)?;
    let labels = data.labels();
    let map = mean_average_precision(&scores, &labels, data.classes);
    Ok(EvalMetrics {
        accuracy: accuracy(&scores, &labels),
        map: map.map,
        l_rs,
        skipped_classes: map.skipped,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub l_theta: f64,
    pub l_c: f64,
    pub l_rs: f64,
    #[serde(rename = "L")]
    pub total: f64,
    pub train_acc: f64,
    pub eval_acc: f64,
    pub eval_map: f64,
    pub eval_l_rs: f64,
    pub rejected_steps: usize,
    pub seconds: f64,
}

impl EpochReport {
    /// Every field except wall-clock time, as raw bits.
    pub fn fingerprint(&self) -> Vec<u64> {
        vec![
            self.epoch as u64,
            self.l_theta.to_bits(),
            self.l_c.to_bits(),
            self.l_rs.to_bits(),
            self.total.to_bits(),
            self.train_acc.to_bits(),
            self.eval_acc.to_bits(),
            self.eval_map.to_bits(),
            self.eval_l_rs.to_bits(),
            self.rejected_steps as u64,
        ]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochStats {
    pub mean: LossBreakdown,
    pub train_acc: f64,
    pub batches: usize,
    pub rejected_steps: usize,
}

pub struct Trainer {
    model: CatModel,
    adam: AdamState,
    rng: ChaCha8Rng,
    config: TrainConfig,
    epoch: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = CatModel::init(config.model.clone(), config.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Self {
            adam: AdamState::new(model.params().values()),
            model,
            rng,
            config,
            epoch: 0,
        })
    }

    pub fn model(&self) -> &CatModel {
        &self.model
    }

    pub fn into_model(self) -> CatModel {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Shuffled mini-batches with mixup, the joint objective, and one Adam
    /// step each. A trailing batch of one clip is dropped.
    pub fn train_epoch(&mut self, data: &Dataset) -> Result<EpochStats> {
        if data.classes != self.config.model.classes {
            return Err(Error::invalid(format!(
                "dataset has {} classes, model expects {}",
                data.classes, self.config.model.classes
            )));
        }
        let classes = data.classes;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut stats = EpochStats::default();
        let mut hits = 0usize;
        let mut seen = 0usize;
        for (b, chunk) in order.chunks(self.config.batch).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let (xs, ys) = self.mix_batch(data, chunk)?;
            let mut targets = Vec::with_capacity(chunk.len() * classes);
            for y in &ys {
                targets.extend_from_slice(y);
            }
            let targets = Tensor::new(vec![chunk.len(), classes], targets)?;
            let perm = if self.config.weights.causal != 0.0 {
                Some(derangement(chunk.len(), &mut self.rng)?)
            } else {
                None
            };

            let mut tape = Tape::new();
            let p = self.model.params().bind(&mut tape);
            let refs: Vec<&MrmfFeature> = xs.iter().collect();
            let out = batch_objective(
                &self.model,
                &mut tape,
                &p,
                &refs,
                &targets,
                perm.as_deref(),
                self.config.weights,
                self.config.epsilon,
            )?;
            let br = out.breakdown;
            if !br.total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss at epoch {} batch {b}: l_theta={} l_c={} l_rs={}",
                    self.epoch + 1,
                    br.l_theta,
                    br.l_c,
                    br.l_rs
                )));
            }
            let logits = tape.value(out.logits);
            for (i, y) in ys.iter().enumerate() {
                hits += usize::from(argmax(logits.row(i)) == argmax(y));
            }
            seen += chunk.len();

            let grads = tape.backward(out.total)?;
            let g: Vec<Option<&Tensor>> = p.vars().iter().map(|&v| grads.get(v)).collect();
            if adam_step(self.model.params_mut().values_mut(), &g, &mut self.adam, &self.config.adam)?
                == StepOutcome::Rejected
            {
                stats.rejected_steps += 1;
            }

            stats.mean.l_theta += br.l_theta;
            stats.mean.l_c += br.l_c;
            stats.mean.l_rs += br.l_rs;
            stats.mean.total += br.total;
            stats.batches += 1;
        }
        if stats.batches == 0 {
            return Err(Error::invalid("dataset too small for a single batch of two"));
        }
        let k = stats.batches as f64;
        stats.mean.l_theta /= k;
        stats.mean.l_c /= k;
        stats.mean.l_rs /= k;
        stats.mean.total /= k;
        stats.train_acc = hits as f64 / seen as f64;
        self.epoch += 1;
        Ok(stats)
    }

    fn mix_batch(&mut self, data: &Dataset, chunk: &[usize]) -> Result<(Vec<MrmfFeature>, Vec<Vec<f64>>)> {
        let classes = data.classes;
        let alpha = self.config.mixup_alpha;
        if alpha == 0.0 {
            return Ok(chunk
                .iter()
                .map(|&i| {
                    let e = &data.examples[i];
                    (e.features.clone(), one_hot(e.label, classes))
                })
                .unzip());
        }
        let mut partners = chunk.to_vec();
        partners.shuffle(&mut self.rng);
        let mut xs = Vec::with_capacity(chunk.len());
        let mut ys = Vec::with_capacity(chunk.len());
        for (&i, &j) in chunk.iter().zip(&partners) {
            let lambda = sample_lambda(&mut self.rng, alpha)?;
            let (a, b) = (&data.examples[i], &data.examples[j]);
            let (x, y) = mixup(
                (&a.features, &one_hot(a.label, classes)),
                (&b.features, &one_hot(b.label, classes)),
                lambda,
            )?;
            xs.push(x);
            ys.push(y);
        }
        Ok((xs, ys))
    }

    /// Trains for the configured epochs, evaluating on `eval` after each.
    pub fn run(
        &mut self,
        train: &Dataset,
        eval: &Dataset,
        mut on_epoch: impl FnMut(&EpochReport),
    ) -> Result<Vec<EpochReport>> {
        let mut reports = Vec::with_capacity(self.config.epochs);
        for _ in 0..self.config.epochs {
            let start = Instant::now();
            let stats = self.train_epoch(train)?;
            let metrics = evaluate(&self.model, eval)?;
            let report = EpochReport {
                epoch: self.epoch,
                l_theta: stats.mean.l_theta,
                l_c: stats.mean.l_c,
                l_rs: stats.mean.l_rs,
                total: stats.mean.total,
                train_acc: stats.train_acc,
                eval_acc: metrics.accuracy,
                eval_map: metrics.map,
                eval_l_rs: metrics.l_rs,
                rejected_steps: stats.rejected_steps,
                seconds: start.elapsed().as_secs_f64(),
            };
            on_epoch(&report);
            reports.push(report);
        }
        Ok(reports)
    }
}
