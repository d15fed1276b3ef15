//! Counterfactual oracles on discrete models and the causal training losses.

mod loss;
mod scm;

pub use loss::{
    causal_loss, derangement, estimate_pns_per_dim, loss_from_estimates, reconstruction_loss, reconstruction_rms, total_loss,
    LossBreakdown, LossParts, LossWeights, DEFAULT_EPSILON,
};
pub use scm::{DiscreteScm, PnsEstimate, PnsKind};
