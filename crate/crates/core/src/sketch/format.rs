//! Canonical text form:
//!
//! ```text
//! canvas H W
//! stroke x1,y1 x2,y2 ...
//! ```
//!
//! Coordinates are written with exactly six decimals.

use std::fmt::Write as _;

use super::{normalize, Point, Stroke, VectorSketch};
use crate::error::{Error, Result};

fn malformed(line: usize, reason: impl Into<String>) -> Error {
    Error::MalformedDocument {
        line,
        reason: reason.into(),
    }
}

fn parse_inner(text: &str) -> Result<VectorSketch> {
    let mut canvas: Option<(usize, usize)> = None;
    let mut strokes = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("canvas") => {
                if canvas.is_some() {
                    return Err(malformed(line_no, "duplicate canvas header"));
                }
                let dims: Vec<&str> = parts.collect();
                let [h, w] = dims.as_slice() else {
                    return Err(malformed(line_no, "expected `canvas H W`"));
                };
                let h: usize = h.parse().map_err(|_| malformed(line_no, "bad canvas height"))?;
                let w: usize = w.parse().map_err(|_| malformed(line_no, "bad canvas width"))?;
                if h == 0 || w == 0 {
                    return Err(malformed(line_no, "canvas dimensions must be positive"));
                }
                canvas = Some((h, w));
            }
            Some("stroke") => {
                if canvas.is_none() {
                    return Err(malformed(line_no, "stroke before canvas header"));
                }
                let mut points = Vec::new();
                for tok in parts {
                    let (x, y) = tok
                        .split_once(',')
                        .ok_or_else(|| malformed(line_no, format!("bad point `{tok}`")))?;
                    let x: f64 = x.parse().map_err(|_| malformed(line_no, format!("bad x in `{tok}`")))?;
                    let y: f64 = y.parse().map_err(|_| malformed(line_no, format!("bad y in `{tok}`")))?;
                    if !x.is_finite() || !y.is_finite() {
                        return Err(malformed(line_no, format!("non-finite point `{tok}`")));
                    }
                    points.push(Point::new(x, y));
                }
                if points.is_empty() {
                    return Err(malformed(line_no, "stroke without points"));
                }
                strokes.push(Stroke::new(points)?);
            }
            Some(other) => return Err(malformed(line_no, format!("unknown record `{other}`"))),
            None => unreachable!(),
        }
    }
    let (h, w) = canvas.ok_or_else(|| malformed(0, "missing canvas header"))?;
    VectorSketch::new(strokes, h, w)
}

/// Parses a canonical document; every point must lie on the canvas.
pub fn parse_sketch(text: &str) -> Result<VectorSketch> {
    let s = parse_inner(text)?;
    s.check_canvas()?;
    Ok(s)
}

/// Parses without the canvas-bounds check, for input that will be
/// normalized afterwards.
pub fn parse_sketch_lenient(text: &str) -> Result<VectorSketch> {
    parse_inner(text)
}

pub fn serialize_sketch(sketch: &VectorSketch) -> String {
    let mut out = String::with_capacity(32 + sketch.total_points() * 24);
    let _ = writeln!(out, "canvas {} {}", sketch.canvas_h(), sketch.canvas_w());
    for s in sketch.strokes() {
        out.push_str("stroke");
        for p in s.points() {
            // avoid "-0.000000"
            let x = if p.x == 0.0 { 0.0 } else { p.x };
            let y = if p.y == 0.0 { 0.0 } else { p.y };
            let _ = write!(out, " {x:.6},{y:.6}");
        }
        out.push('\n');
    }
    out
}

/// Converts offset triplets `(dx, dy, pen_lift)` into a canonical sketch on
/// an `h`×`w` canvas. `pen_lift = 1` ends the current stroke after that
/// point. Lines may separate values with commas or whitespace; blank lines
/// and `#` comments are skipped.
pub fn offsets_to_sketch(text: &str, h: usize, w: usize, margin_frac: f64) -> Result<VectorSketch> {
    let (mut x, mut y) = (0.0, 0.0);
    let mut strokes = Vec::new();
    let mut current = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| malformed(idx + 1, "expected three numbers"))?;
        let [dx, dy, pen] = vals.as_slice() else {
            return Err(malformed(idx + 1, "expected three numbers"));
        };
        if !dx.is_finite() || !dy.is_finite() {
            return Err(malformed(idx + 1, "non-finite offset"));
        }
        x += dx;
        y += dy;
        current.push(Point::new(x, y));
        if *pen != 0.0 {
            strokes.push(Stroke::new(std::mem::take(&mut current))?);
        }
    }
    if !current.is_empty() {
        strokes.push(Stroke::new(current)?);
    }
    let raw = VectorSketch::new(strokes, h, w)?;
    normalize(&raw, h, w, margin_frac)
}
