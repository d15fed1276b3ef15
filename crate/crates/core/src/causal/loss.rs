//! Differentiable training losses: the per-dimension causal loss, the
//! reconstruction loss, and their weighted sum with cross-entropy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::MrmfFeature;
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub theta: f64,
    pub causal: f64,
    pub recon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            theta: 1.0,
            causal: 1.0,
            recon: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_theta: f64,
    pub l_c: f64,
    pub l_rs: f64,
    pub total: f64,
}

/// Uniform random cyclic permutation (Sattolo): no index maps to itself.
pub fn derangement(n: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::Contract(format!(
            "a batch of {n} has no counterfactual donor"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..i);
        perm.swap(i, j);
    }
    Ok(perm)
}

fn check_batch(tape: &Tape, z: Var, targets: &Tensor, perm: &[usize]) -> Result<(usize, usize)> {
    let zv = tape.value(z);
    if zv.rank() != 2 {
        return Err(Error::dim("latent batch", zv.shape(), &[0, 0]));
    }
    let (n, d) = zv.dims2();
    if n < 2 {
        return Err(Error::Contract(format!("a batch of {n} has no counterfactual donor")));
    }
    if targets.rank() != 2 || targets.dims2().0 != n {
        return Err(Error::dim("targets", targets.shape(), &[n, 0]));
    }
    if perm.len() != n || perm.iter().any(|&p| p >= n) {
        return Err(Error::Contract(format!("perm is not a permutation of 0..{n}")));
    }
    Ok((n, d))
}

/// `P(Y = y_i | z_i)` for every row, with soft targets mixing class
/// probabilities: `[n]`.
fn label_probability<F>(tape: &mut Tape, z: Var, targets: Var, classifier: &F) -> Result<Var>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let logits = classifier(tape, z)?;
    let probs = tape.softmax(logits, 1)?;
    let picked = tape.mul(probs, targets)?;
    tape.sum_rows(picked)
}

fn column_mask(n: usize, d: usize, j: usize, on: f64) -> Tensor {
    let mut data = vec![1.0 - on; n * d];
    for row in data.chunks_mut(d) {
        row[j] = on;
    }
    Tensor::new(vec![n, d], data).expect("nonempty mask")
}

fn estimate_with_factual<F>(
    tape: &mut Tape,
    z: Var,
    donors: Var,
    targets: Var,
    p_plus: Var,
    classifier: &F,
    j: usize,
    eps: f64,
) -> Result<Var>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let (n, d) = tape.value(z).dims2();
    let keep = tape.constant(column_mask(n, d, j, 0.0));
    let swap = tape.constant(column_mask(n, d, j, 1.0));
    let kept = tape.mul(z, keep)?;
    let swapped = tape.mul(donors, swap)?;
    let z_cf = tape.add(kept, swapped)?;
    let p_minus = label_probability(tape, z_cf, targets, classifier)?;
    let diff = tape.sub(p_plus, p_minus)?;
    Ok(tape.clamp(diff, eps, 1.0))
}

/// Per-sample estimates `clamp(p⁺ − p⁻, ε, 1)` for latent coordinate `j`,
/// where `p⁻` replaces `z_{i,j}` with `z_{perm(i),j}`. `classifier` maps
/// latent rows to logits.
pub fn estimate_pns_per_dim<F>(
    tape: &mut Tape,
    z: Var,
    targets: &Tensor,
    classifier: &F,
    j: usize,
    perm: &[usize],
    eps: f64,
) -> Result<Var>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let (_, d) = check_batch(tape, z, targets, perm)?;
    if j >= d {
        return Err(Error::invalid(format!("dimension {j} outside a latent of width {d}")));
    }
    let t = tape.constant(targets.clone());
    let p_plus = label_probability(tape, z, t, classifier)?;
    let donors = tape.gather_rows(z, perm)?;
    estimate_with_factual(tape, z, donors, t, p_plus, classifier, j, eps)
}

/// `−Σ_j Σ_i log(estimate_{j,i}) / (n·d)`.
pub fn causal_loss<F>(
    tape: &mut Tape,
    z: Var,
    targets: &Tensor,
    classifier: &F,
    perm: &[usize],
    eps: f64,
) -> Result<Var>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let (n, d) = check_batch(tape, z, targets, perm)?;
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::invalid(format!("clamp floor {eps} must lie in (0, 1]")));
    }
    let t = tape.constant(targets.clone());
    let p_plus = label_probability(tape, z, t, classifier)?;
    let donors = tape.gather_rows(z, perm)?;
    let mut rows = Vec::with_capacity(d);
    for j in 0..d {
        let est = estimate_with_factual(tape, z, donors, t, p_plus, classifier, j, eps)?;
        rows.push(tape.reshape(est, &[1, n])?);
    }
    let all = tape.concat_rows(&rows)?;
    Ok(loss_from_estimates(tape, all))
}

/// `−mean(log estimates)` over a `[d × n]` block of clamped estimates.
pub fn loss_from_estimates(tape: &mut Tape, estimates: Var) -> Var {
    let count = tape.value(estimates).len();
    let logs = tape.log(estimates);
    let s = tape.sum_sorted(logs);
    tape.scale(s, -1.0 / count as f64)
}

/// RMS difference `‖recon − x‖₂ / √N` over all given channel pairs jointly.
pub fn reconstruction_loss(tape: &mut Tape, recon: &[Var], target: &[Var]) -> Result<Var> {
    if recon.len() != target.len() || recon.is_empty() {
        return Err(Error::invalid("reconstruction needs matching, nonempty channel lists"));
    }
    let mut total: Option<Var> = None;
    let mut count = 0usize;
    for (&r, &x) in recon.iter().zip(target) {
        let diff = tape.sub(r, x)?;
        count += tape.value(diff).len();
        let sq = tape.mul(diff, diff)?;
        let s = tape.sum(sq);
        total = Some(match total {
            Some(acc) => tape.add(acc, s)?,
            None => s,
        });
    }
    let mean = tape.scale(total.expect("nonempty"), 1.0 / count as f64);
    Ok(tape.sqrt(mean))
}

/// Value-only reconstruction loss between two feature tensors.
pub fn reconstruction_rms(recon: &MrmfFeature, x: &MrmfFeature) -> Result<f64> {
    if recon.shape() != x.shape() {
        return Err(Error::dim("reconstruction", recon.shape(), x.shape()));
    }
    let a = recon.tensor.data();
    let b = x.tensor.data();
    let ss: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
    Ok((ss / a.len() as f64).sqrt())
}

/// Loss components already on the tape. A missing component is skipped and
/// reported as 0.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub l_theta: Var,
    pub l_c: Option<Var>,
    pub l_rs: Option<Var>,
}

/// `L = λ_θ·l_θ + λ_c·l_c + λ_rs·l_rs`.
pub fn total_loss(tape: &mut Tape, parts: LossParts, weights: LossWeights) -> Result<(Var, LossBreakdown)> {
    let mut total = tape.scale(parts.l_theta, weights.theta);
    let mut breakdown = LossBreakdown {
        l_theta: tape.value(parts.l_theta).item(),
        ..Default::default()
    };
    if let Some(lc) = parts.l_c {
        breakdown.l_c = tape.value(lc).item();
        let term = tape.scale(lc, weights.causal);
        total = tape.add(total, term)?;
    }
    if let Some(lrs) = parts.l_rs {
        breakdown.l_rs = tape.value(lrs).item();
        let term = tape.scale(lrs, weights.recon);
        total = tape.add(total, term)?;
    }
    breakdown.total = tape.value(total).item();
    Ok((total, breakdown))
}
