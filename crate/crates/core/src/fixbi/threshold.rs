use crate::error::{Error, Result};

/// Per-batch adaptive confidence threshold `τ = mean − 2·std`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdStats {
    pub tau: f64,
    pub batch_mean: f64,
    /// Population (divide-by-B) standard deviation.
    pub batch_std: f64,
    pub num_above: usize,
    pub num_below: usize,
}

/// τ is clamped to `[0, 1]`; `num_above` and `num_below` count confidences
/// strictly above and strictly below it.
pub fn adaptive_threshold(confidences: &[f64]) -> Result<ThresholdStats> {
    if confidences.is_empty() {
        return Err(Error::invalid("threshold needs at least one confidence"));
    }
    let n = confidences.len() as f64;
    // shifting by the first value keeps a constant batch exact
    let shift = confidences[0];
    let mean = shift + confidences.iter().map(|c| c - shift).sum::<f64>() / n;
    let var = confidences.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let tau = (mean - 2.0 * std).clamp(0.0, 1.0);
    let num_above = confidences.iter().filter(|&&c| c > tau).count();
    let num_below = confidences.iter().filter(|&&c| c < tau).count();
    Ok(ThresholdStats {
        tau,
        batch_mean: mean,
        batch_std: std,
        num_above,
        num_below,
    })
}
