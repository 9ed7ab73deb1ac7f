//! Training-support losses, the episode reward and the annealing schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FLOOR: f64 = 1e-12;

/// `-ln(e^{pos/t} / (e^{pos/t} + sum e^{neg/t}))`, via log-sum-exp.
pub fn infonce(positive: f64, negatives: &[f64], temperature: f64) -> Result<f64> {
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::Invalid(format!(
            "temperature {temperature} must be positive"
        )));
    }
    if negatives.is_empty() {
        return Err(Error::Invalid("infonce needs at least one negative".into()));
    }
    let logits: Vec<f64> = std::iter::once(positive)
        .chain(negatives.iter().copied())
        .map(|s| s / temperature)
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    Ok((lse - positive / temperature).max(0.0))
}

/// Binary cross-entropy with the prediction clamped to `[1e-12, 1 - 1e-12]`.
pub fn bce(prediction: f64, label: bool) -> f64 {
    let p = prediction.clamp(FLOOR, 1.0 - FLOOR);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub ans: f64,
    pub nce: f64,
    pub ver: f64,
    pub reg: f64,
    pub align: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_nce: f64,
    pub lambda_ver: f64,
    pub lambda_reg: f64,
    pub lambda_align: f64,
    pub lambda_max: f64,
    pub tau_e: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_nce: 1.0,
            lambda_ver: 1.0,
            lambda_reg: 1.0,
            lambda_align: 1.0,
            lambda_max: 1.0,
            tau_e: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_nce,
            self.lambda_ver,
            self.lambda_reg,
            self.lambda_align,
            self.lambda_max,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Invalid(
                "loss weights must be finite and >= 0".into(),
            ));
        }
        if self.tau_e.is_nan() || self.tau_e <= 0.0 {
            return Err(Error::Invalid("tau_e must be positive".into()));
        }
        Ok(())
    }
}

pub fn total_loss(c: &LossComponents, w: &LossWeights) -> f64 {
    c.ans
        + w.lambda_nce * c.nce
        + w.lambda_ver * c.ver
        + w.lambda_reg * c.reg
        + w.lambda_align * c.align
}

/// `f1 - beta_edit * edits / budget - gamma_hall * hallucinated`.
pub fn rl_reward(
    f1: f64,
    edits: usize,
    budget: usize,
    beta_edit: f64,
    hallucinated: bool,
    gamma_hall: f64,
) -> Result<f64> {
    if budget == 0 {
        return Err(Error::Invalid("edit budget must be positive".into()));
    }
    let halluc = if hallucinated { 1.0 } else { 0.0 };
    Ok(f1 - beta_edit * edits as f64 / budget as f64 - gamma_hall * halluc)
}

/// `lambda_max * (1 - exp(-epoch / tau_e))`.
pub fn anneal(epoch: f64, lambda_max: f64, tau_e: f64) -> Result<f64> {
    if tau_e.is_nan() || tau_e <= 0.0 {
        return Err(Error::Invalid("tau_e must be positive".into()));
    }
    Ok(lambda_max * -(-epoch / tau_e).exp_m1())
}

/// Cross-entropy of the mapper's edit distribution against an oracle action.
pub fn pi_map_ce(dist: &[f64], oracle: usize) -> Result<f64> {
    let p = dist
        .get(oracle)
        .ok_or_else(|| Error::Invalid(format!("oracle action {oracle} out of range")))?;
    let sum: f64 = dist.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || dist.iter().any(|p| *p < 0.0) {
        return Err(Error::Invalid(
            "distribution must be non-negative and sum to 1".into(),
        ));
    }
    Ok(-p.max(FLOOR).ln())
}
