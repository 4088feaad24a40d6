//! Procedural paired data: a closed shape is rendered cleanly as the photo
//! and traced with jitter, split into strokes, as the sketch. Noise strokes
//! are short random walks carrying a ground-truth flag.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::sketch::{
    apply_mask, parse_sketch, rasterize, read_pgm, serialize_sketch, write_pgm, Point, RasterImage, Stroke, StrokeMask,
    VectorSketch,
};

/// Mixes a base seed with a stream index (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeFamily {
    Polygon,
    EllipseComposite,
    SplineBlob,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 3] = [Self::Polygon, Self::EllipseComposite, Self::SplineBlob];
}

impl fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Polygon => "polygon",
            Self::EllipseComposite => "ellipse-composite",
            Self::SplineBlob => "spline-blob",
        })
    }
}

impl FromStr for ShapeFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "polygon" => Ok(Self::Polygon),
            "ellipse-composite" => Ok(Self::EllipseComposite),
            "spline-blob" => Ok(Self::SplineBlob),
            _ => Err(Error::InvalidConfig(format!("unknown shape family {s:?}"))),
        }
    }
}

/// Shape of a planted noise scribble.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub min_points: usize,
    pub max_points: usize,
    /// Upper bound on each random-walk step, canvas pixels.
    pub max_step: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            min_points: 3,
            max_points: 6,
            max_step: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSpec {
    pub family: ShapeFamily,
    pub jitter_sigma: f64,
    pub n_clean_strokes: usize,
    pub n_noise_strokes: usize,
    pub seed: u64,
    pub canvas: usize,
    pub photo_hw: usize,
    /// Points sampled along the contour before it is split into strokes.
    pub contour_points: usize,
    pub noise: NoiseSpec,
}

impl PairSpec {
    pub fn new(family: ShapeFamily, seed: u64) -> Self {
        Self {
            family,
            jitter_sigma: 2.0,
            n_clean_strokes: 5,
            n_noise_strokes: 0,
            seed,
            canvas: crate::sketch::DEFAULT_CANVAS,
            photo_hw: crate::sketch::DEFAULT_RASTER,
            contour_points: 48,
            noise: NoiseSpec::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_clean_strokes < 2 {
            return Err(Error::InvalidConfig("n_clean_strokes must be at least 2".into()));
        }
        if !(self.jitter_sigma >= 0.0) {
            return Err(Error::InvalidConfig("jitter_sigma must be non-negative".into()));
        }
        if self.contour_points < 2 * self.n_clean_strokes {
            return Err(Error::InvalidConfig("contour_points too small for the stroke count".into()));
        }
        if self.canvas < 16 || self.photo_hw < 8 {
            return Err(Error::InvalidConfig("canvas or photo too small".into()));
        }
        if self.noise.min_points < 2 || self.noise.max_points < self.noise.min_points || !(self.noise.max_step > 0.0) {
            return Err(Error::InvalidConfig("bad noise shape".into()));
        }
        Ok(())
    }
}

/// A sketch with per-stroke ground truth: `true` marks a planted noise stroke.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSketch {
    pub sketch: VectorSketch,
    pub noise_flags: Vec<bool>,
    pub pair_id: String,
}

impl LabeledSketch {
    pub fn clean(sketch: VectorSketch, pair_id: impl Into<String>) -> Self {
        let k = sketch.k();
        Self {
            sketch,
            noise_flags: vec![false; k],
            pair_id: pair_id.into(),
        }
    }

    pub fn n_noise(&self) -> usize {
        self.noise_flags.iter().filter(|f| **f).count()
    }

    /// Mask that keeps exactly the clean strokes.
    pub fn clean_mask(&self) -> StrokeMask {
        StrokeMask::new(self.noise_flags.iter().map(|f| !f).collect())
    }

    pub fn without_noise(&self) -> Result<VectorSketch> {
        apply_mask(&self.sketch, &self.clean_mask())
    }
}

type Contour = Vec<Point>;

fn clamp_to_canvas(p: Point, canvas: f64) -> Point {
    // keep strictly inside [0, canvas)
    let hi = canvas - 1e-3;
    Point::new(p.x.clamp(0.0, hi), p.y.clamp(0.0, hi))
}

/// Resamples a closed polyline at `n` points evenly spaced by arc length.
fn resample_closed(vertices: &[Point], n: usize) -> Contour {
    let m = vertices.len();
    let seg_len: Vec<f64> = (0..m)
        .map(|i| {
            let (a, b) = (vertices[i], vertices[(i + 1) % m]);
            (b.x - a.x).hypot(b.y - a.y)
        })
        .collect();
    let total: f64 = seg_len.iter().sum();
    let mut out = Vec::with_capacity(n);
    let (mut seg, mut acc) = (0, 0.0);
    for j in 0..n {
        let target = total * j as f64 / n as f64;
        while seg + 1 < m && acc + seg_len[seg] < target {
            acc += seg_len[seg];
            seg += 1;
        }
        let t = if seg_len[seg] > 0.0 { (target - acc) / seg_len[seg] } else { 0.0 };
        let (a, b) = (vertices[seg], vertices[(seg + 1) % m]);
        out.push(Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)));
    }
    out
}

fn ellipse(cx: f64, cy: f64, a: f64, b: f64, rot: f64, n: usize) -> Contour {
    let (s, c) = rot.sin_cos();
    (0..n)
        .map(|j| {
            let t = std::f64::consts::TAU * j as f64 / n as f64;
            let (x, y) = (a * t.cos(), b * t.sin());
            Point::new(cx + c * x - s * y, cy + s * x + c * y)
        })
        .collect()
}

fn shape_contours(spec: &PairSpec, rng: &mut ChaCha8Rng) -> Vec<Contour> {
    use std::f64::consts::TAU;
    let c = spec.canvas as f64;
    let cx = rng.gen_range(0.4 * c..0.6 * c);
    let cy = rng.gen_range(0.4 * c..0.6 * c);
    let r = rng.gen_range(0.22 * c..0.34 * c);
    let n = spec.contour_points;
    match spec.family {
        ShapeFamily::Polygon => {
            let sides = rng.gen_range(3..=8);
            let phase = rng.gen_range(0.0..TAU);
            let verts: Vec<Point> = (0..sides)
                .map(|i| {
                    let jitter = rng.gen_range(-0.3..0.3) * TAU / sides as f64;
                    let th = phase + TAU * i as f64 / sides as f64 + jitter;
                    let rad = r * rng.gen_range(0.55..1.0);
                    Point::new(cx + rad * th.cos(), cy + rad * th.sin())
                })
                .collect();
            vec![resample_closed(&verts, n)]
        }
        ShapeFamily::EllipseComposite => {
            let extra = rng.gen_range(1..=2);
            let main_pts = n * 2 / (2 + extra);
            let a = r * rng.gen_range(0.6..1.0);
            let b = r * rng.gen_range(0.35..0.8);
            let rot = rng.gen_range(0.0..TAU);
            let mut out = vec![ellipse(cx, cy, a, b, rot, main_pts)];
            let rest = n - main_pts;
            for e in 0..extra {
                let pts = if e + 1 == extra { rest - (extra - 1) * (rest / extra) } else { rest / extra };
                let th = rng.gen_range(0.0..TAU);
                let d = rng.gen_range(0.3..0.8) * r;
                let sr = r * rng.gen_range(0.15..0.35);
                out.push(ellipse(
                    cx + d * th.cos(),
                    cy + d * th.sin(),
                    sr,
                    sr * rng.gen_range(0.5..1.0),
                    rng.gen_range(0.0..TAU),
                    pts,
                ));
            }
            out
        }
        ShapeFamily::SplineBlob => {
            let harmonics: Vec<(f64, f64)> = (2..=4)
                .map(|_| (rng.gen_range(-0.18..0.18), rng.gen_range(0.0..TAU)))
                .collect();
            let pts = (0..n)
                .map(|j| {
                    let th = TAU * j as f64 / n as f64;
                    let mut rad = 1.0;
                    for (k, (amp, ph)) in harmonics.iter().enumerate() {
                        rad += amp * ((k as f64 + 2.0) * th + ph).cos();
                    }
                    Point::new(cx + r * rad * th.cos(), cy + r * rad * th.sin())
                })
                .collect();
            vec![pts]
        }
    }
}

/// Splits closed contours into `n_strokes` runs of consecutive points that
/// share endpoints, so the strokes together cover every contour segment.
fn split_into_strokes(contours: &[Contour], n_strokes: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<Point>> {
    let lens: Vec<usize> = contours.iter().map(Vec::len).collect();
    let total: usize = lens.iter().sum();
    // at least one stroke per contour, the rest proportional to length
    let mut per: Vec<usize> = vec![1; contours.len()];
    let mut left = n_strokes.saturating_sub(contours.len());
    while left > 0 {
        let i = (0..contours.len())
            .max_by(|&a, &b| {
                let da = lens[a] as f64 / total as f64 * n_strokes as f64 - per[a] as f64;
                let db = lens[b] as f64 / total as f64 * n_strokes as f64 - per[b] as f64;
                da.partial_cmp(&db).unwrap().then(b.cmp(&a))
            })
            .unwrap();
        per[i] += 1;
        left -= 1;
    }
    let mut strokes = Vec::with_capacity(n_strokes);
    for (contour, &count) in contours.iter().zip(&per) {
        let m = contour.len();
        let start = rng.gen_range(0..m);
        let mut cuts: Vec<usize> = (0..=count).map(|i| i * m / count).collect();
        // wiggle interior cut points a little
        for i in 1..count {
            let lo = cuts[i - 1] + 1;
            let hi = cuts[i + 1] - 1;
            if lo < hi {
                cuts[i] = (cuts[i] + rng.gen_range(0..=2)).saturating_sub(1).clamp(lo, hi);
            }
        }
        for w in cuts.windows(2) {
            let pts = (w[0]..=w[1]).map(|j| contour[(start + j) % m]).collect();
            strokes.push(pts);
        }
    }
    strokes
}

fn contours_to_sketch(contours: &[Contour], canvas: usize) -> Result<VectorSketch> {
    let strokes = contours
        .iter()
        .map(|c| {
            let mut pts = c.clone();
            pts.push(c[0]);
            Stroke::new(pts)
        })
        .collect::<Result<Vec<_>>>()?;
    VectorSketch::new(strokes, canvas, canvas)
}

fn noise_stroke(canvas: usize, spec: &NoiseSpec, rng: &mut ChaCha8Rng) -> Result<Stroke> {
    let c = canvas as f64;
    let n = rng.gen_range(spec.min_points..=spec.max_points);
    let mut p = Point::new(rng.gen_range(0.0..c), rng.gen_range(0.0..c));
    p = clamp_to_canvas(p, c);
    let mut pts = vec![p];
    for _ in 1..n {
        let th = rng.gen_range(0.0..std::f64::consts::TAU);
        let step = spec.max_step * rng.gen_range(0.5..=1.0);
        p = clamp_to_canvas(Point::new(p.x + step * th.cos(), p.y + step * th.sin()), c);
        pts.push(p);
    }
    Stroke::new(pts)
}

/// Inserts `n` noise scribbles at random positions. Original strokes keep
/// their relative order and are not modified.
pub fn inject_noise(
    sketch: &VectorSketch,
    pair_id: &str,
    n: usize,
    spec: &NoiseSpec,
    rng: &mut ChaCha8Rng,
) -> Result<LabeledSketch> {
    let k = sketch.k();
    let mut flags = vec![false; k];
    flags.extend(std::iter::repeat_n(true, n));
    flags.shuffle(rng);
    let mut clean = sketch.strokes().iter();
    let mut strokes = Vec::with_capacity(k + n);
    for &f in &flags {
        if f {
            strokes.push(noise_stroke(sketch.canvas_w().min(sketch.canvas_h()), spec, rng)?);
        } else {
            strokes.push(clean.next().expect("flag count matches").clone());
        }
    }
    Ok(LabeledSketch {
        sketch: VectorSketch::new(strokes, sketch.canvas_h(), sketch.canvas_w())?,
        noise_flags: flags,
        pair_id: pair_id.to_string(),
    })
}

/// Generates one (photo, sketch) pair. Fully determined by `spec`.
pub fn generate_pair(spec: &PairSpec, pair_id: &str) -> Result<(RasterImage, LabeledSketch)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let contours = shape_contours(spec, &mut rng);
    let c = spec.canvas as f64;
    let contours: Vec<Contour> = contours
        .into_iter()
        .map(|ct| ct.into_iter().map(|p| clamp_to_canvas(p, c)).collect())
        .collect();
    let photo = rasterize(&contours_to_sketch(&contours, spec.canvas)?, spec.photo_hw, spec.photo_hw, 1);

    let jitter = Normal::new(0.0, spec.jitter_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let strokes = split_into_strokes(&contours, spec.n_clean_strokes, &mut rng)
        .into_iter()
        .map(|pts| {
            let pts = pts
                .into_iter()
                .map(|p| {
                    if spec.jitter_sigma > 0.0 {
                        clamp_to_canvas(Point::new(p.x + jitter.sample(&mut rng), p.y + jitter.sample(&mut rng)), c)
                    } else {
                        p
                    }
                })
                .collect();
            Stroke::new(pts)
        })
        .collect::<Result<Vec<_>>>()?;
    let clean = VectorSketch::new(strokes, spec.canvas, spec.canvas)?.quantized();
    let labeled = inject_noise(&clean, pair_id, spec.n_noise_strokes, &spec.noise, &mut rng)?;
    let labeled = LabeledSketch {
        sketch: labeled.sketch.quantized(),
        ..labeled
    };
    Ok((photo, labeled))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidConfig(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub id: String,
    pub photo: RasterImage,
    pub sketch: LabeledSketch,
    pub split: Split,
}

/// Generator settings shared by every pair of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub families: Vec<ShapeFamily>,
    pub jitter_sigma: f64,
    pub min_clean_strokes: usize,
    pub max_clean_strokes: usize,
    pub n_noise_strokes: usize,
    pub canvas: usize,
    pub photo_hw: usize,
    pub contour_points: usize,
    pub noise: NoiseSpec,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            families: ShapeFamily::ALL.to_vec(),
            jitter_sigma: 2.0,
            min_clean_strokes: 4,
            max_clean_strokes: 6,
            n_noise_strokes: 0,
            canvas: crate::sketch::DEFAULT_CANVAS,
            photo_hw: crate::sketch::DEFAULT_RASTER,
            contour_points: 48,
            noise: NoiseSpec::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn pair_spec(&self, seed: u64, index: usize) -> PairSpec {
        let pair_seed = derive_seed(seed, index as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(pair_seed, 0xF00D));
        PairSpec {
            family: self.families[index % self.families.len()],
            jitter_sigma: self.jitter_sigma,
            n_clean_strokes: rng.gen_range(self.min_clean_strokes..=self.max_clean_strokes),
            n_noise_strokes: self.n_noise_strokes,
            seed: pair_seed,
            canvas: self.canvas,
            photo_hw: self.photo_hw,
            contour_points: self.contour_points,
            noise: self.noise.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub pairs: Vec<Pair>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&Pair> {
        self.pairs.iter().filter(|p| p.split == split).collect()
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        let c = |s| self.pairs.iter().filter(|p| p.split == s).count();
        (c(Split::Train), c(Split::Val), c(Split::Test))
    }

    pub fn get(&self, id: &str) -> Option<&Pair> {
        self.pairs.iter().find(|p| p.id == id)
    }
}

fn check_fractions(fractions: [f64; 3]) -> Result<()> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(*f >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidFractions(fractions.to_vec()));
    }
    Ok(())
}

/// Split sizes: train and val rounded, test takes the remainder.
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> Result<(usize, usize, usize)> {
    check_fractions(fractions)?;
    let train = ((fractions[0] * n as f64).round() as usize).min(n);
    let val = ((fractions[1] * n as f64).round() as usize).min(n - train);
    Ok((train, val, n - train - val))
}

pub fn generate_dataset(n_pairs: usize, cfg: &GeneratorConfig, fractions: [f64; 3], seed: u64) -> Result<Dataset> {
    let (n_train, n_val, _) = split_sizes(n_pairs, fractions)?;
    if cfg.families.is_empty() {
        return Err(Error::InvalidConfig("no shape families".into()));
    }
    let mut order: Vec<usize> = (0..n_pairs).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX)));
    let mut split_of = vec![Split::Test; n_pairs];
    for (pos, &i) in order.iter().enumerate() {
        split_of[i] = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    let pairs = (0..n_pairs)
        .map(|i| {
            let id = format!("p{i:05}");
            let (photo, sketch) = generate_pair(&cfg.pair_spec(seed, i), &id)?;
            Ok(Pair {
                id,
                photo,
                sketch,
                split: split_of[i],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { pairs })
}

pub const MANIFEST_NAME: &str = "manifest.txt";

/// Writes `manifest.txt`, `sketches/*.sketch`, `photos/*.pgm` and, for
/// sketches with planted noise, `sketches/*.noise` (one 0/1 per stroke).
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir.join("sketches"))?;
    fs::create_dir_all(dir.join("photos"))?;
    let mut manifest = String::new();
    for p in &ds.pairs {
        let sk = format!("sketches/{}.sketch", p.id);
        let ph = format!("photos/{}.pgm", p.id);
        fs::write(dir.join(&sk), serialize_sketch(&p.sketch.sketch))?;
        if p.sketch.n_noise() > 0 {
            let flags: Vec<&str> = p.sketch.noise_flags.iter().map(|f| if *f { "1" } else { "0" }).collect();
            fs::write(dir.join(format!("sketches/{}.noise", p.id)), flags.join(" ") + "\n")?;
        }
        let mut f = fs::File::create(dir.join(&ph))?;
        write_pgm(&p.photo, &mut f)?;
        manifest.push_str(&format!("{} {} {} {}\n", p.id, sk, ph, p.split));
    }
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, manifest)?;
    Ok(path)
}

pub fn load_dataset(manifest: &Path) -> Result<Dataset> {
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(manifest)?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let [id, sk, ph, split] = f.as_slice() else {
            return Err(Error::MalformedDocument {
                line: i + 1,
                reason: "manifest line needs `pair_id sketch_path photo_path split`".into(),
            });
        };
        let sketch = parse_sketch(&fs::read_to_string(dir.join(sk))?)?;
        let noise_path = dir.join(sk).with_extension("noise");
        let noise_flags = if noise_path.exists() {
            let flags: Vec<bool> = fs::read_to_string(&noise_path)?
                .split_whitespace()
                .map(|t| t == "1")
                .collect();
            if flags.len() != sketch.k() {
                return Err(Error::LengthMismatch {
                    mask: flags.len(),
                    strokes: sketch.k(),
                });
            }
            flags
        } else {
            vec![false; sketch.k()]
        };
        let photo = read_pgm(fs::File::open(dir.join(ph))?)?;
        pairs.push(Pair {
            id: id.to_string(),
            photo,
            sketch: LabeledSketch {
                sketch,
                noise_flags,
                pair_id: id.to_string(),
            },
            split: split.parse()?,
        });
    }
    Ok(Dataset { pairs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_pair() {
        for fam in ShapeFamily::ALL {
            let mut spec = PairSpec::new(fam, 42);
            spec.n_noise_strokes = 2;
            assert_eq!(generate_pair(&spec, "a").unwrap(), generate_pair(&spec, "a").unwrap());
        }
    }

    #[test]
    fn zero_noise_means_no_flags() {
        let (_, l) = generate_pair(&PairSpec::new(ShapeFamily::SplineBlob, 3), "a").unwrap();
        assert!(l.noise_flags.iter().all(|f| !f));
        assert_eq!(l.sketch.k(), 5);
    }

    #[test]
    fn noise_strokes_stay_within_their_bounds() {
        let mut spec = PairSpec::new(ShapeFamily::Polygon, 9);
        spec.n_noise_strokes = 3;
        let (_, l) = generate_pair(&spec, "a").unwrap();
        assert_eq!(l.sketch.k(), 8);
        assert_eq!(l.n_noise(), 3);
        for (s, f) in l.sketch.strokes().iter().zip(&l.noise_flags) {
            if *f {
                assert!((3..=6).contains(&s.len()));
                for w in s.points().windows(2) {
                    assert!((w[1].x - w[0].x).hypot(w[1].y - w[0].y) <= 8.0 + 1e-5);
                }
            }
        }
        l.sketch.check_canvas().unwrap();
    }

    #[test]
    fn split_sizes_for_two_hundred() {
        assert_eq!(split_sizes(200, [0.7, 0.15, 0.15]).unwrap(), (140, 30, 30));
        assert!(matches!(split_sizes(10, [0.5, 0.5, 0.5]), Err(Error::InvalidFractions(_))));
        assert!(matches!(split_sizes(10, [1.2, -0.1, -0.1]), Err(Error::InvalidFractions(_))));
    }

    #[test]
    fn derive_seed_separates_streams() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
    }
}
