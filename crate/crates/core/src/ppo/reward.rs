use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embed::triplet_value;
use crate::error::{Error, Result};
use crate::gallery::{rank, Embedder, GalleryFeatures};
use crate::sketch::{apply_mask, StrokeMask, VectorSketch};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardVariant {
    NegRank,
    InvRank,
    NegTriplet,
    InvTripletEps,
    Combined,
}

impl RewardVariant {
    pub const ALL: [RewardVariant; 5] = [
        Self::NegRank,
        Self::InvRank,
        Self::NegTriplet,
        Self::InvTripletEps,
        Self::Combined,
    ];
}

impl fmt::Display for RewardVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::NegRank => "neg_rank",
            Self::InvRank => "inv_rank",
            Self::NegTriplet => "neg_triplet",
            Self::InvTripletEps => "inv_triplet_eps",
            Self::Combined => "combined",
        })
    }
}

impl FromStr for RewardVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown reward variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardConfig {
    pub variant: RewardVariant,
    pub w1: f64,
    pub w2: f64,
    /// Offset in `1 / (L + eps_r)`.
    pub eps_r: f64,
    pub margin: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            variant: RewardVariant::Combined,
            w1: 1.0,
            w2: 1.0,
            eps_r: 1e-2,
            margin: 0.2,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.w1 < 0.0 || self.w2 < 0.0 || (self.w1 == 0.0 && self.w2 == 0.0) {
            return Err(Error::InvalidConfig("reward weights must be non-negative and not both zero".into()));
        }
        if !(self.eps_r > 0.0) || !(self.margin > 0.0) {
            return Err(Error::InvalidConfig("eps_r and margin must be positive".into()));
        }
        Ok(())
    }
}

/// The raw quantities a reward is built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardTerms {
    pub rank: usize,
    pub triplet: f64,
    /// Gallery row used as the triplet negative.
    pub negative: usize,
}

pub fn reward_from_terms(t: &RewardTerms, cfg: &RewardConfig) -> f64 {
    let inv = 1.0 / t.rank as f64;
    match cfg.variant {
        RewardVariant::NegRank => -(t.rank as f64),
        RewardVariant::InvRank => inv,
        RewardVariant::NegTriplet => -t.triplet,
        RewardVariant::InvTripletEps => 1.0 / (t.triplet + cfg.eps_r),
        RewardVariant::Combined => cfg.w1 * inv - cfg.w2 * t.triplet,
    }
}

/// Uniform negative among gallery rows other than `paired`, drawn from a
/// generator seeded with `seed` so replays see the same photo.
pub fn pinned_negative(gallery: &GalleryFeatures, paired: usize, seed: u64) -> usize {
    let m = gallery.len();
    if m < 2 {
        return paired;
    }
    let j = ChaCha8Rng::seed_from_u64(seed).gen_range(0..m - 1);
    if j >= paired {
        j + 1
    } else {
        j
    }
}

/// Rank and triplet loss of an already embedded query.
pub fn terms_for_embedding(
    query: &[f64],
    gallery: &GalleryFeatures,
    paired_id: &str,
    margin: f64,
    neg_seed: u64,
) -> Result<RewardTerms> {
    let r = rank(query, gallery, paired_id)?;
    let p = gallery.index_of(paired_id).expect("rank checked the id");
    let n = pinned_negative(gallery, p, neg_seed);
    Ok(RewardTerms {
        rank: r.rank,
        triplet: triplet_value(query, gallery.row(p), gallery.row(n), margin),
        negative: n,
    })
}

/// Reward of the subset `mask` selects from `sketch`.
pub fn compute_reward<E: Embedder + ?Sized>(
    mask: &StrokeMask,
    sketch: &VectorSketch,
    paired_id: &str,
    net: &E,
    gallery: &GalleryFeatures,
    cfg: &RewardConfig,
    neg_seed: u64,
) -> Result<(f64, RewardTerms)> {
    let subset = apply_mask(sketch, mask)?;
    let q = net.embed_sketch(&subset)?;
    let terms = terms_for_embedding(&q, gallery, paired_id, cfg.margin, neg_seed)?;
    Ok((reward_from_terms(&terms, cfg), terms))
}
