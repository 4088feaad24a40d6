//! Brute-force and analysis oracles: best stroke subsets, prefix limits,
//! critic/retrievability correlation, critic-gated retrieval and planted
//! noise resistance.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gallery::{acc_at_k, curve_areas, percentile, rank, Embedder, GalleryFeatures};
use crate::selector::{greedy_nonempty, SelectorNet};
use crate::sketch::{apply_mask, StrokeMask, VectorSketch};
use crate::synth::{derive_seed, inject_noise, LabeledSketch, NoiseSpec, Pair};

pub const DEFAULT_K_CAP: usize = 16;
/// Masks drawn by the non-exhaustive search.
pub const SAMPLED_MASKS: usize = 4096;
/// Completion steps per sketch in the correlation study (5% each).
pub const COMPLETION_STEPS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetReport {
    pub best_mask: StrokeMask,
    pub best_rank: usize,
    pub full_rank: usize,
    pub subsets_evaluated: usize,
    /// False when the masks were sampled rather than enumerated.
    pub exhaustive: bool,
}

impl SubsetReport {
    /// Strokes kept by the best mask.
    pub fn best_k(&self) -> usize {
        self.best_mask.selected()
    }
}

/// Rank of the paired photo for `mask` applied to `sketch`.
pub fn mask_rank<E: Embedder + ?Sized>(
    sketch: &VectorSketch,
    mask: &StrokeMask,
    net: &E,
    gallery: &GalleryFeatures,
    paired_id: &str,
) -> Result<usize> {
    let sub = apply_mask(sketch, mask)?;
    Ok(rank(&net.embed_sketch(&sub)?, gallery, paired_id)?.rank)
}

/// Lower rank wins, then fewer strokes, then the lexicographically
/// smaller bit sequence (`false < true`).
fn candidate_order(a: (usize, &StrokeMask), b: (usize, &StrokeMask)) -> Ordering {
    a.0.cmp(&b.0)
        .then(a.1.selected().cmp(&b.1.selected()))
        .then_with(|| a.1.bits().cmp(b.1.bits()))
}

fn search<E, I>(
    sketch: &VectorSketch,
    masks: I,
    net: &E,
    gallery: &GalleryFeatures,
    paired_id: &str,
    exhaustive: bool,
) -> Result<SubsetReport>
where
    E: Embedder + ?Sized,
    I: IntoIterator<Item = StrokeMask>,
{
    let k = sketch.k();
    let full = StrokeMask::all(k);
    let full_rank = mask_rank(sketch, &full, net, gallery, paired_id)?;
    let mut best = (full_rank, full);
    let mut evaluated = 0usize;
    for m in masks {
        evaluated += 1;
        let r = if m.selected() == k {
            full_rank
        } else {
            mask_rank(sketch, &m, net, gallery, paired_id)?
        };
        if candidate_order((r, &m), (best.0, &best.1)) == Ordering::Less {
            best = (r, m);
        }
    }
    Ok(SubsetReport {
        best_mask: best.1,
        best_rank: best.0,
        full_rank,
        subsets_evaluated: evaluated,
        exhaustive,
    })
}

/// Ranks every one of the `2^K - 1` non-empty subsets.
pub fn exhaustive_best_subset<E: Embedder + ?Sized>(
    sketch: &VectorSketch,
    net: &E,
    gallery: &GalleryFeatures,
    paired_id: &str,
    k_cap: usize,
) -> Result<SubsetReport> {
    let k = sketch.k();
    if k == 0 {
        return Err(Error::EmptySketch);
    }
    if k > k_cap || k > 63 {
        return Err(Error::TooManyStrokes { k, cap: k_cap.min(63) });
    }
    let masks = (1..1u64 << k).map(|c| StrokeMask::from_code(c, k));
    search(sketch, masks, net, gallery, paired_id, true)
}

/// Approximate search over `n` uniformly drawn non-empty masks (plus the
/// full sketch, which is always a candidate for the tie rule).
pub fn sampled_best_subset<E: Embedder + ?Sized, R: Rng>(
    sketch: &VectorSketch,
    net: &E,
    gallery: &GalleryFeatures,
    paired_id: &str,
    n: usize,
    rng: &mut R,
) -> Result<SubsetReport> {
    let k = sketch.k();
    if k == 0 {
        return Err(Error::EmptySketch);
    }
    let mut masks = Vec::with_capacity(n);
    while masks.len() < n {
        let m = StrokeMask::new((0..k).map(|_| rng.gen_bool(0.5)).collect());
        if m.selected() > 0 {
            masks.push(m);
        }
    }
    search(sketch, masks, net, gallery, paired_id, false)
}

/// Exhaustive up to `k_cap` strokes, sampled beyond.
pub fn best_subset<E: Embedder + ?Sized>(
    sketch: &VectorSketch,
    net: &E,
    gallery: &GalleryFeatures,
    paired_id: &str,
    k_cap: usize,
    seed: u64,
) -> Result<SubsetReport> {
    if sketch.k() <= k_cap.min(63) {
        exhaustive_best_subset(sketch, net, gallery, paired_id, k_cap)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sampled_best_subset(sketch, net, gallery, paired_id, SAMPLED_MASKS, &mut rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearLimitReport {
    /// Rank of `[s_1..s_k]` for `k = 1..=K`.
    pub prefix_ranks: Vec<usize>,
    pub best_prefix_rank: usize,
    /// Shortest prefix reaching the best rank.
    pub best_prefix_k: usize,
    pub full_rank: usize,
    /// Steps where adding a stroke made the rank worse.
    pub drop_events: usize,
}

impl LinearLimitReport {
    pub fn has_drop(&self) -> bool {
        self.drop_events > 0
    }
}

pub fn linear_limit<E: Embedder + ?Sized>(
    sketch: &VectorSketch,
    net: &E,
    gallery: &GalleryFeatures,
    paired_id: &str,
) -> Result<LinearLimitReport> {
    let k = sketch.k();
    if k == 0 {
        return Err(Error::EmptySketch);
    }
    let prefix_ranks = (1..=k)
        .map(|j| Ok(rank(&net.embed_sketch(&sketch.prefix(j)?)?, gallery, paired_id)?.rank))
        .collect::<Result<Vec<_>>>()?;
    let (best_i, best) = prefix_ranks
        .iter()
        .enumerate()
        .min_by_key(|(i, r)| (**r, *i))
        .map(|(i, r)| (i, *r))
        .expect("k >= 1");
    Ok(LinearLimitReport {
        best_prefix_rank: best,
        best_prefix_k: best_i + 1,
        full_rank: prefix_ranks[k - 1],
        drop_events: prefix_ranks.windows(2).filter(|w| w[1] > w[0]).count(),
        prefix_ranks,
    })
}

/// Fraction of reports with at least one drop event.
pub fn drop_event_fraction(reports: &[LinearLimitReport]) -> f64 {
    if reports.is_empty() {
        return 0.0;
    }
    reports.iter().filter(|r| r.has_drop()).count() as f64 / reports.len() as f64
}

/// Unit in which sketch completion is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrefixUnit {
    /// `ceil(j K / steps)` whole strokes.
    Strokes,
    /// `ceil(j P / steps)` points, cutting the last stroke.
    Points,
}

impl fmt::Display for PrefixUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PrefixUnit::Strokes => "strokes",
            PrefixUnit::Points => "points",
        })
    }
}

impl FromStr for PrefixUnit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strokes" => Ok(PrefixUnit::Strokes),
            "points" => Ok(PrefixUnit::Points),
            _ => Err(Error::InvalidConfig(format!("unknown prefix unit {s:?}"))),
        }
    }
}

/// Partial sketches at `j/steps` completion for `j = 1..=steps`.
pub fn completion_prefixes(sketch: &VectorSketch, unit: PrefixUnit, steps: usize) -> Result<Vec<VectorSketch>> {
    if sketch.k() == 0 {
        return Err(Error::EmptySketch);
    }
    if steps == 0 {
        return Err(Error::InvalidConfig("completion steps must be positive".into()));
    }
    (1..=steps)
        .map(|j| match unit {
            PrefixUnit::Strokes => sketch.prefix((j * sketch.k()).div_ceil(steps).max(1)),
            PrefixUnit::Points => sketch.point_prefix(j as f64 / steps as f64),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationSample {
    pub score: f64,
    pub percentile: f64,
}

/// Ranks with ties given their average position (1-based).
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            out[t] = avg;
        }
        i = j + 1;
    }
    out
}

/// Pearson correlation; 0 when either side is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return 0.0;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// Scores every completion prefix of every sketch with `score` and
/// correlates it with the retrieval percentile.
pub fn critic_correlation<E, F>(
    sketches: &[LabeledSketch],
    unit: PrefixUnit,
    net: &E,
    gallery: &GalleryFeatures,
    mut score: F,
) -> Result<(Vec<CorrelationSample>, f64)>
where
    E: Embedder + ?Sized,
    F: FnMut(&VectorSketch) -> Result<f64>,
{
    let mut samples = Vec::new();
    for ls in sketches {
        for p in completion_prefixes(&ls.sketch, unit, COMPLETION_STEPS)? {
            let r = rank(&net.embed_sketch(&p)?, gallery, &ls.pair_id)?;
            samples.push(CorrelationSample {
                score: score(&p)?,
                percentile: r.percentile,
            });
        }
    }
    let xs: Vec<f64> = samples.iter().map(|s| s.score).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.percentile).collect();
    let rho = spearman(&xs, &ys);
    Ok((samples, rho))
}

/// Critic scores and true ranks of one drawing episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub scores: Vec<f64>,
    pub ranks: Vec<usize>,
}

pub fn trace_episode<E, F>(
    episode: &[VectorSketch],
    paired_id: &str,
    net: &E,
    gallery: &GalleryFeatures,
    mut score: F,
) -> Result<EpisodeTrace>
where
    E: Embedder + ?Sized,
    F: FnMut(&VectorSketch) -> Result<f64>,
{
    if episode.is_empty() {
        return Err(Error::EmptyEpisode);
    }
    let mut t = EpisodeTrace {
        scores: Vec::with_capacity(episode.len()),
        ranks: Vec::with_capacity(episode.len()),
    };
    for s in episode {
        t.scores.push(score(s)?);
        t.ranks.push(rank(&net.embed_sketch(s)?, gallery, paired_id)?.rank);
    }
    Ok(t)
}

/// Ranks seen by a user when a prefix is only fed once its score reaches
/// `tau`. Before the first feed the rank is `m`; afterwards the last fed
/// rank stays on screen. Returns the ranks and the number of feeds.
pub fn gated_ranks(trace: &EpisodeTrace, tau: f64, m: usize) -> (Vec<usize>, usize) {
    let mut shown = m;
    let mut feeds = 0;
    let ranks = trace
        .scores
        .iter()
        .zip(&trace.ranks)
        .map(|(s, r)| {
            if *s >= tau {
                shown = *r;
                feeds += 1;
            }
            shown
        })
        .collect();
    (ranks, feeds)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatingReport {
    pub threshold: f64,
    pub feeds_saved_frac: f64,
    pub ra_gated: f64,
    pub rb_gated: f64,
    pub ra_full: f64,
    pub rb_full: f64,
}

impl GatingReport {
    pub fn csv_header() -> &'static str {
        "threshold,feeds_saved_frac,ra_gated,rb_gated,ra_full,rb_full"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.4},{:.4},{:.4},{:.4}",
            self.threshold, self.feeds_saved_frac, self.ra_gated, self.rb_gated, self.ra_full, self.rb_full
        )
    }
}

/// Gating applied to precomputed traces; any non-NaN threshold is allowed
/// so the limits `±inf` can be checked.
pub fn gate_traces(traces: &[EpisodeTrace], tau: f64, m: usize) -> Result<GatingReport> {
    if traces.is_empty() {
        return Err(Error::EmptyEpisode);
    }
    if tau.is_nan() {
        return Err(Error::InvalidConfig("threshold is NaN".into()));
    }
    let (mut total, mut fed) = (0usize, 0usize);
    let mut sums = [0.0; 4];
    for t in traces {
        let (gated, feeds) = gated_ranks(t, tau, m);
        total += t.ranks.len();
        fed += feeds;
        let (ga, gb) = curve_areas(&gated, m)?;
        let (fa, fb) = curve_areas(&t.ranks, m)?;
        for (s, v) in sums.iter_mut().zip([ga, gb, fa, fb]) {
            *s += v;
        }
    }
    let n = traces.len() as f64;
    Ok(GatingReport {
        threshold: tau,
        feeds_saved_frac: 1.0 - fed as f64 / total as f64,
        ra_gated: sums[0] / n,
        rb_gated: sums[1] / n,
        ra_full: sums[2] / n,
        rb_full: sums[3] / n,
    })
}

/// Gated versus ungated on-the-fly retrieval, with the selector's critic
/// deciding when a prefix is fed.
pub fn gating_eval<E: Embedder + ?Sized>(
    episodes: &[(String, Vec<VectorSketch>)],
    selector: &SelectorNet,
    net: &E,
    gallery: &GalleryFeatures,
    tau: f64,
) -> Result<GatingReport> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::InvalidConfig("gating threshold must be positive".into()));
    }
    let traces = episodes
        .iter()
        .map(|(id, ep)| trace_episode(ep, id, net, gallery, |s| selector.value(s)))
        .collect::<Result<Vec<_>>>()?;
    gate_traces(&traces, tau, gallery.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseCounts {
    /// Noise strokes dropped.
    pub tp: usize,
    /// Clean strokes dropped.
    pub fp: usize,
    /// Noise strokes kept.
    pub fn_: usize,
}

impl NoiseCounts {
    pub fn add(&mut self, mask: &StrokeMask, noise_flags: &[bool]) {
        for (keep, noise) in mask.bits().iter().zip(noise_flags) {
            match (*keep, *noise) {
                (false, true) => self.tp += 1,
                (false, false) => self.fp += 1,
                (true, true) => self.fn_ += 1,
                (true, false) => {}
            }
        }
    }

    /// Share of dropped strokes that were noise. With nothing dropped this
    /// is 1 when there was no noise to find and 0 otherwise.
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            return if self.fn_ == 0 { 1.0 } else { 0.0 };
        }
        self.tp as f64 / (self.tp + self.fp) as f64
    }

    /// Share of noise strokes dropped; 1 when there was no noise.
    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            return 1.0;
        }
        self.tp as f64 / (self.tp + self.fn_) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseResistance {
    pub clean: (f64, f64),
    pub noisy: (f64, f64),
    pub selected: (f64, f64),
    pub counts: NoiseCounts,
    pub precision: f64,
    pub recall: f64,
}

impl NoiseResistance {
    pub fn summary(&self) -> String {
        format!(
            "condition,acc1,acc5\nclean,{:.4},{:.4}\nnoisy,{:.4},{:.4}\nnoisy+selector,{:.4},{:.4}\nnoise_precision,{:.4}\nnoise_recall,{:.4}\n",
            self.clean.0,
            self.clean.1,
            self.noisy.0,
            self.noisy.1,
            self.selected.0,
            self.selected.1,
            self.precision,
            self.recall
        )
    }
}

/// Plants `n` noise strokes into each pair's sketch (seeded per pair) and
/// compares retrieval of clean, noisy and greedily selected sketches.
pub fn noise_resistance_eval<E: Embedder + ?Sized>(
    pairs: &[&Pair],
    n: usize,
    noise: &NoiseSpec,
    seed: u64,
    selector: &SelectorNet,
    net: &E,
    gallery: &GalleryFeatures,
) -> Result<NoiseResistance> {
    let noisy = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            inject_noise(&p.sketch.sketch, &p.id, n, noise, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let clean: Vec<LabeledSketch> = pairs.iter().map(|p| p.sketch.clone()).collect();
    noise_resistance_on(&clean, &noisy, selector, net, gallery)
}

/// Same study on already prepared clean and noisy sketches.
pub fn noise_resistance_on<E: Embedder + ?Sized>(
    clean: &[LabeledSketch],
    noisy: &[LabeledSketch],
    selector: &SelectorNet,
    net: &E,
    gallery: &GalleryFeatures,
) -> Result<NoiseResistance> {
    if noisy.is_empty() {
        return Err(Error::EmptyGallery);
    }
    let rank_of = |s: &VectorSketch, id: &str| -> Result<usize> { Ok(rank(&net.embed_sketch(s)?, gallery, id)?.rank) };
    let mut counts = NoiseCounts::default();
    let (mut rc, mut rn, mut rs) = (Vec::new(), Vec::new(), Vec::new());
    for (c, ns) in clean.iter().zip(noisy) {
        rc.push(rank_of(&c.sketch, &c.pair_id)?);
        rn.push(rank_of(&ns.sketch, &ns.pair_id)?);
        let m = greedy_nonempty(&selector.encode(&ns.sketch)?.probs);
        counts.add(&m, &ns.noise_flags);
        rs.push(rank_of(&apply_mask(&ns.sketch, &m)?, &ns.pair_id)?);
    }
    let acc = |r: &[usize]| (acc_at_k(r, 1), acc_at_k(r, 5));
    Ok(NoiseResistance {
        clean: acc(&rc),
        noisy: acc(&rn),
        selected: acc(&rs),
        precision: counts.precision(),
        recall: counts.recall(),
        counts,
    })
}

/// Percentile of `sketch` in `gallery`; the true score a perfect critic
/// would be ranked against.
pub fn true_percentile<E: Embedder + ?Sized>(
    sketch: &VectorSketch,
    net: &E,
    gallery: &GalleryFeatures,
    paired_id: &str,
) -> Result<f64> {
    let r = rank(&net.embed_sketch(sketch)?, gallery, paired_id)?;
    Ok(percentile(r.rank, gallery.len()))
}
