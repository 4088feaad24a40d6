//! Gallery feature store, ranking and retrieval metrics.

use std::collections::HashSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::sketch::{RasterImage, VectorSketch};

/// Anything that maps images and sketches into the shared embedding space.
pub trait Embedder {
    fn dim(&self) -> usize;
    fn embed_image(&self, image: &RasterImage) -> Result<Vec<f64>>;
    fn embed_sketch(&self, sketch: &VectorSketch) -> Result<Vec<f64>>;
}

/// `M × d` matrix of unit-norm photo embeddings with their ids.
#[derive(Debug, Clone, PartialEq)]
pub struct GalleryFeatures {
    dim: usize,
    ids: Vec<String>,
    features: Vec<f64>,
}

impl GalleryFeatures {
    pub fn new(ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptyGallery);
        }
        if ids.len() != rows.len() {
            return Err(Error::InvalidConfig(format!("{} ids for {} rows", ids.len(), rows.len())));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::InvalidConfig(format!("duplicate gallery id {dup:?}")));
        }
        let dim = rows[0].len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidConfig("gallery rows differ in length".into()));
        }
        Ok(Self {
            dim,
            ids,
            features: rows.concat(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Euclidean distance from `query` to every row.
    pub fn distances(&self, query: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(query)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    /// Ids and distances of the `k` nearest rows, ascending; ties keep
    /// gallery order.
    pub fn top_k(&self, query: &[f64], k: usize) -> Vec<(String, f64)> {
        let d = self.distances(query);
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|a, b| d[*a].total_cmp(&d[*b]).then(a.cmp(b)));
        order.into_iter().take(k).map(|i| (self.ids[i].clone(), d[i])).collect()
    }
}

pub fn build_gallery<E: Embedder + ?Sized>(net: &E, photos: &[(String, &RasterImage)]) -> Result<GalleryFeatures> {
    if photos.is_empty() {
        return Err(Error::EmptyGallery);
    }
    let rows = photos
        .iter()
        .map(|(_, img)| net.embed_image(img))
        .collect::<Result<Vec<_>>>()?;
    GalleryFeatures::new(photos.iter().map(|(id, _)| id.clone()).collect(), rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankResult {
    pub rank: usize,
    pub percentile: f64,
    pub distances: Vec<f64>,
}

/// `(M - rank) / (M - 1)`, and 1 for a single-photo gallery.
pub fn percentile(rank: usize, m: usize) -> f64 {
    if m <= 1 {
        1.0
    } else {
        (m - rank) as f64 / (m - 1) as f64
    }
}

/// Pessimistic rank: every other photo at a smaller or equal distance
/// counts against the query.
pub fn rank(query: &[f64], gallery: &GalleryFeatures, paired_id: &str) -> Result<RankResult> {
    let p = gallery
        .index_of(paired_id)
        .ok_or_else(|| Error::UnknownPairedId(paired_id.to_string()))?;
    let distances = gallery.distances(query);
    let dp = distances[p];
    let rank = 1 + distances
        .iter()
        .enumerate()
        .filter(|(i, d)| *i != p && **d <= dp)
        .count();
    Ok(RankResult {
        rank,
        percentile: percentile(rank, gallery.len()),
        distances,
    })
}

/// Fraction of ranks at or below `k`.
pub fn acc_at_k(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|r| **r <= k).count() as f64 / ranks.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveSample {
    pub step: usize,
    pub fraction: f64,
    pub rank: usize,
    pub percentile: f64,
    pub inv_rank: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnTheFly {
    pub samples: Vec<CurveSample>,
    /// Area under the percentile curve, ×100.
    pub r_a: f64,
    /// Area under the 1/rank curve, ×100.
    pub r_b: f64,
}

/// Trapezoid area of `ys` sampled at `k/K`, `k = 1..=K`, divided by the
/// span `1 - 1/K` so a constant curve `c` scores `c`. A single sample
/// scores its own value.
fn normalized_area(ys: &[f64]) -> f64 {
    let k = ys.len();
    if k == 1 {
        return ys[0];
    }
    let h = 1.0 / k as f64;
    let area: f64 = ys.windows(2).map(|w| h * (w[0] + w[1]) / 2.0).sum();
    area / (1.0 - h)
}

/// `(r@A, r@B)` for per-step ranks of a `K`-step episode against an
/// `m`-photo gallery.
pub fn curve_areas(ranks: &[usize], m: usize) -> Result<(f64, f64)> {
    if ranks.is_empty() {
        return Err(Error::EmptyEpisode);
    }
    let pct: Vec<f64> = ranks.iter().map(|r| percentile(*r, m)).collect();
    let inv: Vec<f64> = ranks.iter().map(|r| 1.0 / *r as f64).collect();
    Ok((100.0 * normalized_area(&pct), 100.0 * normalized_area(&inv)))
}

pub fn curves_from_ranks(ranks: &[usize], m: usize) -> Result<OnTheFly> {
    let (r_a, r_b) = curve_areas(ranks, m)?;
    let k = ranks.len();
    let samples = ranks
        .iter()
        .enumerate()
        .map(|(i, &r)| CurveSample {
            step: i + 1,
            fraction: (i + 1) as f64 / k as f64,
            rank: r,
            percentile: percentile(r, m),
            inv_rank: 1.0 / r as f64,
        })
        .collect();
    Ok(OnTheFly { samples, r_a, r_b })
}

/// Ranks every prefix of a drawing episode and integrates the curves.
pub fn onthefly_curves<E: Embedder + ?Sized>(
    episode: &[VectorSketch],
    net: &E,
    gallery: &GalleryFeatures,
    paired_id: &str,
) -> Result<OnTheFly> {
    if episode.is_empty() {
        return Err(Error::EmptyEpisode);
    }
    let ranks = episode
        .iter()
        .map(|s| Ok(rank(&net.embed_sketch(s)?, gallery, paired_id)?.rank))
        .collect::<Result<Vec<_>>>()?;
    curves_from_ranks(&ranks, gallery.len())
}

/// Stroke prefixes `[s_1..s_k]` for `k = 1..=K`.
pub fn prefix_episode(sketch: &VectorSketch) -> Vec<VectorSketch> {
    (1..=sketch.k()).map(|k| sketch.prefix(k).expect("k >= 1")).collect()
}

/// `step,fraction,rank,percentile` rows followed by a summary row.
pub fn curve_csv(c: &OnTheFly) -> String {
    let mut out = String::from("step,fraction,rank,percentile\n");
    for s in &c.samples {
        let _ = writeln!(out, "{},{:.6},{},{:.6}", s.step, s.fraction, s.rank, s.percentile);
    }
    let _ = writeln!(out, "summary,r@A={:.4},r@B={:.4},", c.r_a, c.r_b);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gallery(rows: Vec<Vec<f64>>) -> GalleryFeatures {
        let ids = (0..rows.len()).map(|i| format!("g{i}")).collect();
        GalleryFeatures::new(ids, rows).unwrap()
    }

    #[test]
    fn exact_match_ranks_first() {
        let g = gallery(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]]);
        let r = rank(&[0.0, 1.0], &g, "g1").unwrap();
        assert_eq!(r.rank, 1);
        assert_eq!(r.percentile, 1.0);
    }

    #[test]
    fn single_photo_gallery() {
        let g = gallery(vec![vec![1.0, 0.0]]);
        let r = rank(&[0.0, 1.0], &g, "g0").unwrap();
        assert_eq!((r.rank, r.percentile), (1, 1.0));
    }

    #[test]
    fn ties_are_pessimistic() {
        let g = gallery(vec![vec![1.0, 0.0]; 5]);
        assert_eq!(rank(&[0.0, 1.0], &g, "g2").unwrap().rank, 5);
    }

    #[test]
    fn unknown_and_empty() {
        let g = gallery(vec![vec![1.0, 0.0]]);
        assert!(matches!(rank(&[1.0, 0.0], &g, "zz"), Err(Error::UnknownPairedId(_))));
        assert!(matches!(GalleryFeatures::new(vec![], vec![]), Err(Error::EmptyGallery)));
    }

    #[test]
    fn acc_at_k_examples() {
        assert!((acc_at_k(&[1, 6, 3], 5) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(acc_at_k(&[1, 6, 3], 6), 1.0);
        assert_eq!(acc_at_k(&[7, 6, 9], 5), 0.0);
    }

    #[test]
    fn perfect_and_worst_curves() {
        let (_, rb) = curve_areas(&[1, 1, 1, 1], 50).unwrap();
        assert!((rb - 100.0).abs() < 1e-12);
        let (ra, _) = curve_areas(&[1000; 6], 1000).unwrap();
        assert_eq!(ra, 0.0);
        assert!(matches!(curve_areas(&[], 3), Err(Error::EmptyEpisode)));
    }

    #[test]
    fn csv_has_header_rows_and_summary() {
        let c = curves_from_ranks(&[2, 1], 4).unwrap();
        let csv = curve_csv(&c);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "1,0.500000,2,0.666667");
        assert!(lines[3].starts_with("summary,"));
    }
}
