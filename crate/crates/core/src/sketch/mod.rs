//! Vector sketches: ordered pen-down strokes of absolute canvas coordinates.

mod format;
mod raster;

pub use format::{offsets_to_sketch, parse_sketch, parse_sketch_lenient, serialize_sketch};
pub use raster::{rasterize, read_pgm, write_pgm, RasterImage};

use crate::error::{Error, Result};

pub const DEFAULT_CANVAS: usize = 256;
pub const DEFAULT_RASTER: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// A pen-down polyline. Always holds at least two points; a single tap is
/// stored as two identical points.
#[derive(Debug, Clone, PartialEq)]
pub struct Stroke {
    points: Vec<Point>,
}

impl Stroke {
    pub fn new(mut points: Vec<Point>) -> Result<Self> {
        match points.len() {
            0 => Err(Error::MalformedDocument {
                line: 0,
                reason: "stroke without points".into(),
            }),
            1 => {
                points.push(points[0]);
                Ok(Self { points })
            }
            _ => Ok(Self { points }),
        }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Sum of segment lengths.
    pub fn arc_length(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorSketch {
    strokes: Vec<Stroke>,
    canvas_h: usize,
    canvas_w: usize,
}

impl VectorSketch {
    pub fn new(strokes: Vec<Stroke>, canvas_h: usize, canvas_w: usize) -> Result<Self> {
        if strokes.is_empty() {
            return Err(Error::EmptySketch);
        }
        Ok(Self {
            strokes,
            canvas_h,
            canvas_w,
        })
    }

    /// Like [`VectorSketch::new`] but rejects points outside `[0,W)×[0,H)`.
    pub fn new_checked(strokes: Vec<Stroke>, canvas_h: usize, canvas_w: usize) -> Result<Self> {
        let s = Self::new(strokes, canvas_h, canvas_w)?;
        s.check_canvas()?;
        Ok(s)
    }

    pub fn check_canvas(&self) -> Result<()> {
        let (w, h) = (self.canvas_w as f64, self.canvas_h as f64);
        for (si, s) in self.strokes.iter().enumerate() {
            for (pi, p) in s.points.iter().enumerate() {
                let inside = p.x.is_finite() && p.y.is_finite() && p.x >= 0.0 && p.x < w && p.y >= 0.0 && p.y < h;
                if !inside {
                    return Err(Error::OutOfCanvas {
                        stroke: si,
                        point: pi,
                        h: self.canvas_h,
                        w: self.canvas_w,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn strokes(&self) -> &[Stroke] {
        &self.strokes
    }

    /// Number of strokes.
    pub fn k(&self) -> usize {
        self.strokes.len()
    }

    pub fn canvas_h(&self) -> usize {
        self.canvas_h
    }

    pub fn canvas_w(&self) -> usize {
        self.canvas_w
    }

    pub fn total_points(&self) -> usize {
        self.strokes.iter().map(Stroke::len).sum()
    }

    pub fn points(&self) -> impl Iterator<Item = &Point> {
        self.strokes.iter().flat_map(|s| s.points.iter())
    }

    /// First `k` strokes (the drawing as it looked after stroke `k`).
    pub fn prefix(&self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::EmptySubset);
        }
        Self::new(
            self.strokes[..k.min(self.k())].to_vec(),
            self.canvas_h,
            self.canvas_w,
        )
    }

    /// Prefix holding roughly `frac` of all points, cut mid-stroke if needed.
    pub fn point_prefix(&self, frac: f64) -> Result<Self> {
        let total = self.total_points();
        let want = ((frac.clamp(0.0, 1.0) * total as f64).ceil() as usize).max(1);
        let mut left = want;
        let mut strokes = Vec::new();
        for s in &self.strokes {
            if left == 0 {
                break;
            }
            let take = left.min(s.len());
            strokes.push(Stroke::new(s.points[..take].to_vec())?);
            left -= take;
        }
        Self::new(strokes, self.canvas_h, self.canvas_w)
    }

    /// Appends a stroke, keeping canvas dimensions.
    pub fn with_stroke(&self, stroke: Stroke) -> Self {
        let mut s = self.clone();
        s.strokes.push(stroke);
        s
    }

    /// Rounds every coordinate to the 6-decimal grid used on disk, so that
    /// `parse_sketch(&serialize_sketch(&s))` reproduces the value exactly.
    pub fn quantized(&self) -> Self {
        let q = |v: f64| (v * 1e6).round() / 1e6;
        let strokes = self
            .strokes
            .iter()
            .map(|s| Stroke {
                points: s.points.iter().map(|p| Point::new(q(p.x), q(p.y))).collect(),
            })
            .collect();
        Self {
            strokes,
            canvas_h: self.canvas_h,
            canvas_w: self.canvas_w,
        }
    }

    pub fn bounding_box(&self) -> (Point, Point) {
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in self.points() {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }
}

/// Per-stroke keep/drop decision. `true` means select.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StrokeMask {
    bits: Vec<bool>,
}

impl StrokeMask {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn all(k: usize) -> Self {
        Self { bits: vec![true; k] }
    }

    pub fn none(k: usize) -> Self {
        Self { bits: vec![false; k] }
    }

    /// Bit `i` of `code` selects stroke `i`.
    pub fn from_code(code: u64, k: usize) -> Self {
        Self {
            bits: (0..k).map(|i| code >> i & 1 == 1).collect(),
        }
    }

    pub fn code(&self) -> u64 {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .fold(0u64, |acc, (i, _)| acc | 1 << i)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn selected(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn complement(&self) -> Self {
        Self {
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// Action index per stroke: 0 = select, 1 = ignore.
    pub fn actions(&self) -> Vec<usize> {
        self.bits.iter().map(|b| usize::from(!b)).collect()
    }
}

/// Keeps exactly the selected strokes in their original order.
pub fn apply_mask(sketch: &VectorSketch, mask: &StrokeMask) -> Result<VectorSketch> {
    if mask.len() != sketch.k() {
        return Err(Error::LengthMismatch {
            mask: mask.len(),
            strokes: sketch.k(),
        });
    }
    if mask.selected() == 0 {
        return Err(Error::EmptySubset);
    }
    let strokes = sketch
        .strokes
        .iter()
        .zip(mask.bits())
        .filter(|(_, keep)| **keep)
        .map(|(s, _)| s.clone())
        .collect();
    VectorSketch::new(strokes, sketch.canvas_h, sketch.canvas_w)
}

/// Aspect-preserving scale and translation that centres the sketch inside
/// the target canvas shrunk by `margin_frac` on every side. Pixel centres
/// run from 0 to `dim - 1`. A sketch whose points all coincide lands on the
/// canvas centre.
pub fn normalize(sketch: &VectorSketch, target_h: usize, target_w: usize, margin_frac: f64) -> Result<VectorSketch> {
    if !(0.0..0.5).contains(&margin_frac) {
        return Err(Error::InvalidConfig(format!(
            "margin_frac must be in [0, 0.5), got {margin_frac}"
        )));
    }
    let (lo, hi) = sketch.bounding_box();
    let (bw, bh) = (hi.x - lo.x, hi.y - lo.y);
    let span_w = target_w.saturating_sub(1) as f64;
    let span_h = target_h.saturating_sub(1) as f64;
    let (mw, mh) = (margin_frac * span_w, margin_frac * span_h);
    let (box_w, box_h) = (span_w - 2.0 * mw, span_h - 2.0 * mh);
    let scale = match (bw > 0.0, bh > 0.0) {
        (true, true) => (box_w / bw).min(box_h / bh),
        (true, false) => box_w / bw,
        (false, true) => box_h / bh,
        (false, false) => 0.0,
    };
    let (cx, cy) = ((lo.x + hi.x) / 2.0, (lo.y + hi.y) / 2.0);
    let (tx, ty) = (span_w / 2.0, span_h / 2.0);
    let strokes = sketch
        .strokes
        .iter()
        .map(|s| Stroke {
            points: s
                .points
                .iter()
                .map(|p| Point::new(tx + (p.x - cx) * scale, ty + (p.y - cy) * scale))
                .collect(),
        })
        .collect();
    VectorSketch::new(strokes, target_h, target_w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stroke(pts: &[(f64, f64)]) -> Stroke {
        Stroke::new(pts.iter().map(|&(x, y)| Point::new(x, y)).collect()).unwrap()
    }

    fn three() -> VectorSketch {
        VectorSketch::new(
            vec![
                stroke(&[(1.0, 1.0), (5.0, 1.0)]),
                stroke(&[(2.0, 2.0), (2.0, 8.0)]),
                stroke(&[(3.0, 3.0), (7.0, 7.0), (9.0, 3.0)]),
            ],
            10,
            10,
        )
        .unwrap()
    }

    #[test]
    fn mask_keeps_selected_strokes_in_order() {
        let s = three();
        let m = StrokeMask::new(vec![true, false, true]);
        let out = apply_mask(&s, &m).unwrap();
        assert_eq!(out.k(), 2);
        assert_eq!(out.strokes()[0], s.strokes()[0]);
        assert_eq!(out.strokes()[1], s.strokes()[2]);
    }

    #[test]
    fn all_select_mask_is_identity() {
        let s = three();
        assert_eq!(apply_mask(&s, &StrokeMask::all(3)).unwrap(), s);
    }

    #[test]
    fn all_ignore_and_wrong_length_masks_fail() {
        let s = three();
        assert!(matches!(apply_mask(&s, &StrokeMask::none(3)), Err(Error::EmptySubset)));
        assert!(matches!(
            apply_mask(&s, &StrokeMask::all(2)),
            Err(Error::LengthMismatch { mask: 2, strokes: 3 })
        ));
    }

    #[test]
    fn mask_code_round_trips() {
        let m = StrokeMask::new(vec![true, false, true, true]);
        assert_eq!(m.code(), 0b1101);
        assert_eq!(StrokeMask::from_code(m.code(), 4), m);
        assert_eq!(m.actions(), vec![0, 1, 0, 0]);
    }

    #[test]
    fn single_point_stroke_is_padded() {
        let s = Stroke::new(vec![Point::new(3.0, 4.0)]).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.points()[0], s.points()[1]);
    }

    #[test]
    fn empty_sketch_is_rejected() {
        assert!(matches!(VectorSketch::new(vec![], 8, 8), Err(Error::EmptySketch)));
    }

    #[test]
    fn single_point_sketch_normalizes_to_centre() {
        let s = VectorSketch::new(vec![stroke(&[(3.0, 7.0)])], 10, 10).unwrap();
        let n = normalize(&s, 65, 33, 0.1).unwrap();
        for p in n.points() {
            assert_eq!((p.x, p.y), (16.0, 32.0));
        }
    }

    #[test]
    fn sketch_filling_margin_box_is_a_fixed_point() {
        // margin 0.1 on a 11x11 canvas: box is [1, 9] on both axes
        let s = VectorSketch::new(vec![stroke(&[(1.0, 1.0), (9.0, 9.0)]), stroke(&[(5.0, 1.0), (5.0, 3.0)])], 11, 11)
            .unwrap();
        assert_eq!(normalize(&s, 11, 11, 0.1).unwrap(), s);
    }

    #[test]
    fn normalize_preserves_counts_and_fits_box() {
        let s = three();
        let n = normalize(&s, 64, 64, 0.05).unwrap();
        assert_eq!(n.k(), 3);
        for (a, b) in s.strokes().iter().zip(n.strokes()) {
            assert_eq!(a.len(), b.len());
        }
        n.check_canvas().unwrap();
        assert!(normalize(&s, 64, 64, 0.5).is_err());
    }

    #[test]
    fn point_prefix_cuts_inside_a_stroke() {
        let s = three(); // 7 points
        let p = s.point_prefix(0.5).unwrap(); // 4 points: 2 + 2
        assert_eq!(p.k(), 2);
        assert_eq!(p.total_points(), 4);
        assert_eq!(s.prefix(2).unwrap().k(), 2);
    }
}
