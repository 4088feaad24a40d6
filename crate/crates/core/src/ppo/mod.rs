//! Subset-selection MDP, rewards, replay buffer and the clipped
//! actor-critic update.

mod apps;
mod buffer;
mod loss;
mod reward;
mod train;

pub use apps::{augment, clean_training_data};
pub use buffer::ReplayBuffer;
pub use loss::{ppo_loss, LossConfig, LossDiagnostics, RatioForm};
pub use reward::{
    compute_reward, pinned_negative, reward_from_terms, terms_for_embedding, RewardConfig, RewardTerms, RewardVariant,
};
pub use train::{
    evaluate_selector, train_selector, EvalSet, PpoConfig, SelectorEpochLog, SelectorTrainLog, TrainItem,
};

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::gallery::{Embedder, GalleryFeatures};
use crate::selector::{sample_mask, stroke_log_probs, SelectorNet};
use crate::sketch::{apply_mask, StrokeMask, VectorSketch};

/// How the state evolves between steps of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateMode {
    /// Each state is the subset chosen at the previous step.
    Chained,
    /// Every step samples again from the full sketch.
    Independent,
}

impl fmt::Display for StateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StateMode::Chained => "chained",
            StateMode::Independent => "independent",
        })
    }
}

impl FromStr for StateMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chained" => Ok(StateMode::Chained),
            "independent" => Ok(StateMode::Independent),
            _ => Err(Error::InvalidConfig(format!("unknown state mode {s:?}"))),
        }
    }
}

/// One MDP step as seen by the policy that acted.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub state: VectorSketch,
    pub mask: StrokeMask,
    /// `Σ_i log p_old(a_i)`.
    pub logp_old: f64,
    /// `log p_old(a_i)` per stroke; the ratio is taken stroke by stroke.
    pub logp_old_strokes: Vec<f64>,
    pub reward: f64,
    /// Critic estimate of the acting policy for `state`.
    pub value: f64,
    /// 1-based step index.
    pub step: usize,
    pub rank: usize,
    pub neg_seed: u64,
}

impl EpisodeRecord {
    pub fn advantage(&self) -> f64 {
        self.reward - self.value
    }
}

/// Frozen retrieval side of the MDP.
pub struct Environment<'a> {
    pub embedder: &'a dyn Embedder,
    pub gallery: &'a GalleryFeatures,
    pub reward: RewardConfig,
}

impl fmt::Debug for Environment<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Environment")
            .field("gallery", &self.gallery.len())
            .field("reward", &self.reward)
            .finish()
    }
}

impl Environment<'_> {
    pub fn reward(&self, mask: &StrokeMask, sketch: &VectorSketch, paired_id: &str, neg_seed: u64) -> Result<(f64, RewardTerms)> {
        compute_reward(mask, sketch, paired_id, self.embedder, self.gallery, &self.reward, neg_seed)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RolloutStats {
    /// All-ignore draws that were redrawn.
    pub resampled: usize,
    /// Redraws that were all-ignore again and got replaced by all-select.
    pub forced_all_select: usize,
}

impl std::ops::AddAssign for RolloutStats {
    fn add_assign(&mut self, o: Self) {
        self.resampled += o.resampled;
        self.forced_all_select += o.forced_all_select;
    }
}

/// Samples a non-empty mask: one redraw after an all-ignore draw, then
/// falls back to selecting everything.
pub fn sample_nonempty<R: Rng>(probs: &[[f64; 2]], rng: &mut R, stats: &mut RolloutStats) -> StrokeMask {
    let (m, _) = sample_mask(probs, rng);
    if m.selected() > 0 {
        return m;
    }
    stats.resampled += 1;
    let (m, _) = sample_mask(probs, rng);
    if m.selected() > 0 {
        return m;
    }
    stats.forced_all_select += 1;
    StrokeMask::all(probs.len())
}

/// Unrolls up to `t_max` steps from the full sketch with `policy` acting.
/// Chained episodes stop early once a single stroke is left.
pub fn rollout<R: Rng>(
    sketch: &VectorSketch,
    paired_id: &str,
    policy: &SelectorNet,
    env: &Environment<'_>,
    t_max: usize,
    mode: StateMode,
    rng: &mut R,
) -> Result<(Vec<EpisodeRecord>, RolloutStats)> {
    let mut stats = RolloutStats::default();
    let mut out = Vec::with_capacity(t_max);
    let neg_seed: u64 = rng.gen();
    let mut state = sketch.clone();
    for step in 1..=t_max {
        let pol = policy.encode(&state)?;
        let mask = sample_nonempty(&pol.probs, rng, &mut stats);
        let logp = stroke_log_probs(&pol.probs, &mask)?;
        let (reward, terms) = env.reward(&mask, &state, paired_id, neg_seed)?;
        let next = apply_mask(&state, &mask)?;
        out.push(EpisodeRecord {
            state: state.clone(),
            mask,
            logp_old: logp.iter().sum(),
            logp_old_strokes: logp,
            reward,
            value: pol.value,
            step,
            rank: terms.rank,
            neg_seed,
        });
        if mode == StateMode::Chained {
            if next.k() == 1 {
                break;
            }
            state = next;
        }
    }
    Ok((out, stats))
}
