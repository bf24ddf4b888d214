//! Fixed-ratio mixup, confidence-gated mutual teaching and the dual-model
//! training loop.

mod losses;
mod mixup;
mod ratio;
mod threshold;
mod train;

pub use losses::{
    bim_from_probs, cr_from_probs, fm_from_probs, loss_bim, loss_cr, loss_fm, loss_sp, pseudo_labels,
    pseudo_labels_from_probs, sp_from_logits, weighted_nll, GatedTargets, LossBundle,
};
pub use mixup::{mixup, MixupBatch};
pub use ratio::{ratio_rule_sample, RatioRule};
pub use threshold::{adaptive_threshold, ThresholdStats};
pub use train::{fixbi_step, train_fixbi, train_fixbi_with, FixbiRun, StepOutcome, StepParams};
