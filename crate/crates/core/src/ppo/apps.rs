use std::collections::HashSet;

use rand::Rng;

use crate::error::Result;
use crate::selector::{greedy_nonempty, sample_mask, SelectorNet};
use crate::sketch::{apply_mask, StrokeMask, VectorSketch};
use crate::synth::LabeledSketch;

/// Replaces every sketch by its greedy subset; noise flags follow the kept
/// strokes. A mask that would drop everything leaves the sketch as is.
pub fn clean_training_data(items: &[LabeledSketch], selector: &SelectorNet) -> Result<Vec<LabeledSketch>> {
    items
        .iter()
        .map(|it| {
            let m = greedy_nonempty(&selector.encode(&it.sketch)?.probs);
            Ok(LabeledSketch {
                sketch: apply_mask(&it.sketch, &m)?,
                noise_flags: it
                    .noise_flags
                    .iter()
                    .zip(m.bits())
                    .filter(|(_, k)| **k)
                    .map(|(f, _)| *f)
                    .collect(),
                pair_id: it.pair_id.clone(),
            })
        })
        .collect()
}

/// `n` subsets drawn from the policy. Masks are distinct until all
/// `2^K - 1` non-empty masks have been produced (or draws keep repeating),
/// after which repeats are allowed.
pub fn augment<R: Rng>(sketch: &VectorSketch, selector: &SelectorNet, n: usize, rng: &mut R) -> Result<Vec<VectorSketch>> {
    let probs = selector.encode(sketch)?.probs;
    let k = sketch.k();
    let distinct_cap = if k >= 63 { u64::MAX } else { (1u64 << k) - 1 };
    if n == 1 {
        let m = greedy_nonempty(&probs);
        return Ok(vec![apply_mask(sketch, &m)?]);
    }
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    let mut stale = 0;
    while out.len() < n {
        let (m, _) = sample_mask(&probs, rng);
        if m.selected() == 0 {
            stale += 1;
            if stale > 50 * n {
                out.push(apply_mask(sketch, &StrokeMask::all(k))?);
            }
            continue;
        }
        let fresh = seen.insert(m.code());
        let exhausted = seen.len() as u64 >= distinct_cap || stale > 50 * n;
        if fresh || exhausted {
            out.push(apply_mask(sketch, &m)?);
        } else {
            stale += 1;
        }
    }
    Ok(out)
}
