use std::fmt;
use std::str::FromStr;

use strokesel_tape::{ParamStore, Tape, Tensor, Var};

use super::EpisodeRecord;
use crate::error::{Error, Result};
use crate::selector::{SelectorNet, LOG_FLOOR};

/// How the importance ratio is formed from per-stroke log-probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioForm {
    /// `exp(log p_new - log p_old)`.
    Probability,
    /// `log p_new / log p_old`. Kept for diagnostics only; it is not a
    /// probability ratio and does not equal 1 where the policies agree
    /// unless both are nonzero.
    LogQuotient,
}

impl fmt::Display for RatioForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RatioForm::Probability => "probability",
            RatioForm::LogQuotient => "log_quotient",
        })
    }
}

impl FromStr for RatioForm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probability" => Ok(RatioForm::Probability),
            "log_quotient" => Ok(RatioForm::LogQuotient),
            _ => Err(Error::InvalidConfig(format!("unknown ratio form {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub clip_eps: f64,
    pub c1: f64,
    pub c2: f64,
    pub ratio: RatioForm,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            c1: 0.5,
            c2: 0.01,
            ratio: RatioForm::Probability,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossDiagnostics {
    pub loss: f64,
    /// Mean clipped surrogate.
    pub actor: f64,
    /// Same surrogate without clipping.
    pub actor_unclipped: f64,
    pub value_mse: f64,
    pub entropy: f64,
    /// Fraction of strokes whose ratio lies outside `[1-ε, 1+ε]`.
    pub clip_frac: f64,
    pub mean_ratio: f64,
}

/// Negated actor-critic objective over a batch:
/// `-mean_b( mean_i min(r_i Â, clip(r_i) Â) - c1 (V - R)^2 + c2 H )`,
/// with `Â = R - V_old` held constant. Parameters come from `store`.
pub fn ppo_loss(
    tape: &mut Tape,
    net: &SelectorNet,
    store: &ParamStore,
    batch: &[&EpisodeRecord],
    cfg: &LossConfig,
) -> Result<(Var, LossDiagnostics)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut diag = LossDiagnostics::default();
    let (mut strokes, mut clipped, mut ratio_sum) = (0usize, 0usize, 0.0);
    let mut total: Option<Var> = None;
    for rec in batch {
        let k = rec.state.k();
        if rec.mask.len() != k || rec.logp_old_strokes.len() != k {
            return Err(Error::LengthMismatch {
                mask: rec.mask.len(),
                strokes: k,
            });
        }
        let pv = net.forward_vars(tape, store, &rec.state)?;
        let chosen = tape.gather_cols(pv.probs, &rec.mask.actions())?;
        let chosen = tape.clip(chosen, LOG_FLOOR, 1.0)?;
        let logp = tape.log(chosen)?;
        let old = tape.constant(Tensor::new([k, 1], rec.logp_old_strokes.clone())?)?;
        let ratio = match cfg.ratio {
            RatioForm::Probability => {
                let d = tape.sub(logp, old)?;
                tape.exp(d)?
            }
            RatioForm::LogQuotient => {
                let guarded: Vec<f64> = rec.logp_old_strokes.iter().map(|v| v.min(-LOG_FLOOR)).collect();
                let old = tape.constant(Tensor::new([k, 1], guarded)?)?;
                tape.div(logp, old)?
            }
        };
        let adv = rec.advantage();
        let surr1 = tape.scale(ratio, adv)?;
        let clipped_ratio = tape.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)?;
        let surr2 = tape.scale(clipped_ratio, adv)?;
        let surr = tape.minimum(surr1, surr2)?;
        let actor = tape.mean(surr)?;

        let target = tape.constant(Tensor::filled([1, 1], rec.reward))?;
        let err = tape.sub(pv.value, target)?;
        let verr = tape.square(err)?;
        let verr = tape.reshape(verr, &[1])?;

        let p = tape.clip(pv.probs, LOG_FLOOR, 1.0)?;
        let lp = tape.log(p)?;
        let plogp = tape.mul(pv.probs, lp)?;
        let ent = tape.sum(plogp)?;
        let ent = tape.scale(ent, -1.0 / k as f64)?;

        let a = tape.reshape(actor, &[1])?;
        let e = tape.reshape(ent, &[1])?;
        let v = tape.scale(verr, -cfg.c1)?;
        let e2 = tape.scale(e, cfg.c2)?;
        let obj = tape.add(a, v)?;
        let obj = tape.add(obj, e2)?;
        total = Some(match total {
            None => obj,
            Some(t) => tape.add(t, obj)?,
        });

        diag.actor += tape.scalar(actor);
        diag.actor_unclipped += tape.value(surr1).data().iter().sum::<f64>() / k as f64;
        diag.value_mse += tape.scalar(verr);
        diag.entropy += tape.scalar(ent);
        for r in tape.value(ratio).data() {
            strokes += 1;
            ratio_sum += r;
            if (r - 1.0).abs() > cfg.clip_eps {
                clipped += 1;
            }
        }
    }
    let b = batch.len() as f64;
    let loss = tape.scale(total.expect("non-empty batch"), -1.0 / b)?;
    let loss = tape.reshape(loss, &[1])?;
    diag.loss = tape.scalar(loss);
    diag.actor /= b;
    diag.actor_unclipped /= b;
    diag.value_mse /= b;
    diag.entropy /= b;
    diag.clip_frac = clipped as f64 / strokes as f64;
    diag.mean_ratio = ratio_sum / strokes as f64;
    Ok((loss, diag))
}
