use std::io::{Read, Write};

use super::VectorSketch;
use crate::error::{Error, Result};

/// Grayscale bitmap, row-major, intensities in `[0, 1]` (ink = 1).
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    h: usize,
    w: usize,
    pixels: Vec<f64>,
}

impl RasterImage {
    pub fn blank(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            pixels: vec![0.0; h * w],
        }
    }

    pub fn from_pixels(h: usize, w: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != h * w || pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidConfig(format!(
                "raster needs {} values in [0,1], got {}",
                h * w,
                pixels.len()
            )));
        }
        Ok(Self { h, w, pixels })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.pixels[y * self.w + x]
    }

    pub fn ink_count(&self) -> usize {
        self.pixels.iter().filter(|v| **v > 0.0).count()
    }

    /// Pixelwise maximum; panics on size mismatch.
    pub fn max_with(&self, other: &RasterImage) -> RasterImage {
        assert_eq!((self.h, self.w), (other.h, other.w));
        RasterImage {
            h: self.h,
            w: self.w,
            pixels: self
                .pixels
                .iter()
                .zip(&other.pixels)
                .map(|(a, b)| a.max(*b))
                .collect(),
        }
    }

    fn stamp(&mut self, x: i64, y: i64, width: usize) {
        let lo = -((width as i64 - 1) / 2);
        let hi = width as i64 / 2;
        for dy in lo..=hi {
            for dx in lo..=hi {
                let (px, py) = (x + dx, y + dy);
                if px >= 0 && py >= 0 && (px as usize) < self.w && (py as usize) < self.h {
                    self.pixels[py as usize * self.w + px as usize] = 1.0;
                }
            }
        }
    }

    /// Integer midpoint (Bresenham) traversal from `a` to `b`, inclusive.
    fn line(&mut self, a: (i64, i64), b: (i64, i64), width: usize) {
        let (mut x, mut y) = a;
        let dx = (b.0 - a.0).abs();
        let dy = -(b.1 - a.1).abs();
        let sx = if a.0 < b.0 { 1 } else { -1 };
        let sy = if a.1 < b.1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.stamp(x, y, width);
            if (x, y) == b {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }
}

/// Renders every stroke as 1-valued integer line segments between
/// consecutive points, dilated by a `line_width` square brush. Canvas
/// coordinates map to output pixels by `floor(x * out_w / canvas_w)`.
pub fn rasterize(sketch: &VectorSketch, out_h: usize, out_w: usize, line_width: usize) -> RasterImage {
    let mut img = RasterImage::blank(out_h, out_w);
    let sx = out_w as f64 / sketch.canvas_w() as f64;
    let sy = out_h as f64 / sketch.canvas_h() as f64;
    let to_px = |x: f64, y: f64| -> (i64, i64) {
        let px = ((x * sx).floor() as i64).clamp(0, out_w as i64 - 1);
        let py = ((y * sy).floor() as i64).clamp(0, out_h as i64 - 1);
        (px, py)
    };
    let width = line_width.max(1);
    for stroke in sketch.strokes() {
        let pts: Vec<(i64, i64)> = stroke.points().iter().map(|p| to_px(p.x, p.y)).collect();
        for pair in pts.windows(2) {
            img.line(pair[0], pair[1], width);
        }
    }
    img
}

/// Binary PGM (P5), 8-bit.
pub fn write_pgm<W: Write>(img: &RasterImage, mut out: W) -> Result<()> {
    write!(out, "P5\n{} {}\n255\n", img.w, img.h)?;
    let bytes: Vec<u8> = img.pixels.iter().map(|v| (v * 255.0).round() as u8).collect();
    out.write_all(&bytes)?;
    Ok(())
}

pub fn read_pgm<R: Read>(mut input: R) -> Result<RasterImage> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    let bad = |why: &str| Error::MalformedDocument {
        line: 0,
        reason: format!("pgm: {why}"),
    };
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < buf.len() && buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < buf.len() && buf[pos] == b'#' {
            while pos < buf.len() && buf[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&buf[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("not a P5 file"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("height"))?;
    let maxval: f64 = fields[3].parse().map_err(|_| bad("maxval"))?;
    if maxval <= 0.0 || maxval > 255.0 {
        return Err(bad("maxval must be in 1..=255"));
    }
    let data = buf.get(pos..pos + w * h).ok_or_else(|| bad("truncated pixel data"))?;
    let pixels = data.iter().map(|b| f64::from(*b) / maxval).collect();
    RasterImage::from_pixels(h, w, pixels)
}
