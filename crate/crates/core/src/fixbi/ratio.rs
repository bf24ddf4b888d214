use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// How the two models' mixup ratios are chosen each iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RatioRule {
    /// The configured `(λ_sd, λ_td)` pair, unchanged.
    Fixed,
    /// Independent `Beta(α, α)` draws per model.
    Random,
    /// `λ′ = max(λ, 1 − λ)` with `λ ~ Beta(α, α)`; the pair is `(λ′, 1 − λ′)`.
    Range,
}

impl RatioRule {
    pub fn as_str(self) -> &'static str {
        match self {
            RatioRule::Fixed => "fixed",
            RatioRule::Random => "random",
            RatioRule::Range => "range",
        }
    }
}

impl std::str::FromStr for RatioRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fixed" => Ok(RatioRule::Fixed),
            "random" => Ok(RatioRule::Random),
            "range" => Ok(RatioRule::Range),
            other => Err(Error::invalid(format!("unknown ratio rule `{other}`"))),
        }
    }
}

/// Draws `(λ_sdm, λ_tdm)` for one iteration.
pub fn ratio_rule_sample(rule: RatioRule, alpha: f64, fixed: (f64, f64), rng: &mut Rng) -> Result<(f64, f64)> {
    let beta = || {
        if !(alpha > 0.0) {
            return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
        }
        Beta::new(alpha, alpha).map_err(|e| Error::invalid(e.to_string()))
    };
    match rule {
        RatioRule::Fixed => Ok(fixed),
        RatioRule::Random => {
            let b = beta()?;
            let a = b.sample(rng);
            let c = b.sample(rng);
            Ok((a, c))
        }
        RatioRule::Range => {
            let l = beta()?.sample(rng);
            let hi = l.max(1.0 - l);
            Ok((hi, 1.0 - hi))
        }
    }
}
