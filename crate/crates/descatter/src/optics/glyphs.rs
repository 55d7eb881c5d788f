//! Procedural handwritten-style glyphs. Each symbol has a fixed polyline
//! skeleton in the unit square; a style seed applies a small coherent warp
//! (translation, rotation, scale) plus per-point jitter and picks the stroke
//! width, so different seeds of one symbol stay recognizably similar.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

use crate::error::{Error, Result};

use super::image::{normalize, Image};

/// A symbol plus the seed controlling its stroke jitter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GlyphSpec {
    pub symbol: char,
    pub style_seed: u64,
}

type Stroke = Vec<(f64, f64)>;

/// Maximum control-point displacement, as a fraction of the image side.
const MAX_JITTER: f64 = 0.08;

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, deg0: f64, deg1: f64) -> Stroke {
    let segments = 14;
    (0..=segments)
        .map(|i| {
            let t = i as f64 / segments as f64;
            let theta = (deg0 + t * (deg1 - deg0)).to_radians();
            (cx + rx * theta.cos(), cy + ry * theta.sin())
        })
        .collect()
}

fn line(points: &[(f64, f64)]) -> Stroke {
    points.to_vec()
}

fn join(a: Stroke, b: &[(f64, f64)]) -> Stroke {
    let mut out = a;
    out.extend_from_slice(b);
    out
}

/// Polyline skeleton of a symbol, in unit coordinates with y pointing down.
fn template(symbol: char) -> Result<Vec<Stroke>> {
    let strokes = match symbol {
        '0' => vec![arc(0.5, 0.5, 0.18, 0.29, 0.0, 360.0)],
        '1' => vec![
            line(&[(0.4, 0.32), (0.54, 0.2), (0.54, 0.8)]),
            line(&[(0.4, 0.8), (0.68, 0.8)]),
        ],
        '2' => vec![join(
            arc(0.5, 0.37, 0.17, 0.16, 180.0, 385.0),
            &[(0.32, 0.8), (0.7, 0.8)],
        )],
        '3' => vec![
            arc(0.5, 0.36, 0.16, 0.15, 210.0, 450.0),
            arc(0.5, 0.64, 0.17, 0.16, 270.0, 510.0),
        ],
        '4' => vec![
            line(&[(0.58, 0.2), (0.3, 0.6), (0.72, 0.6)]),
            line(&[(0.6, 0.34), (0.6, 0.8)]),
        ],
        '5' => vec![
            line(&[(0.66, 0.2), (0.36, 0.2), (0.35, 0.47)]),
            arc(0.48, 0.615, 0.18, 0.17, 215.0, 505.0),
        ],
        '6' => vec![
            arc(0.52, 0.52, 0.2, 0.3, 300.0, 140.0),
            arc(0.5, 0.655, 0.155, 0.145, 0.0, 360.0),
        ],
        '7' => vec![
            line(&[(0.3, 0.2), (0.7, 0.2), (0.42, 0.8)]),
            line(&[(0.38, 0.5), (0.62, 0.5)]),
        ],
        '8' => vec![
            arc(0.5, 0.36, 0.145, 0.145, 0.0, 360.0),
            arc(0.5, 0.645, 0.17, 0.155, 0.0, 360.0),
        ],
        '9' => vec![
            arc(0.5, 0.36, 0.15, 0.145, 0.0, 360.0),
            arc(0.48, 0.48, 0.2, 0.31, 355.0, 475.0),
        ],
        'A' => vec![
            line(&[(0.3, 0.8), (0.5, 0.2), (0.7, 0.8)]),
            line(&[(0.38, 0.56), (0.62, 0.56)]),
        ],
        'B' => vec![
            line(&[(0.32, 0.2), (0.32, 0.8)]),
            join(
                join(line(&[(0.32, 0.2), (0.52, 0.2)]), &[]),
                &arc(0.52, 0.35, 0.16, 0.15, 270.0, 450.0),
            ),
            line(&[(0.32, 0.5), (0.52, 0.5)]),
            join(
                line(&[(0.52, 0.5)]),
                &arc(0.52, 0.65, 0.18, 0.15, 270.0, 450.0),
            ),
            line(&[(0.32, 0.8), (0.52, 0.8)]),
        ],
        'C' => vec![arc(0.5, 0.5, 0.2, 0.3, 40.0, 320.0)],
        'D' => vec![
            line(&[(0.32, 0.2), (0.32, 0.8)]),
            arc(0.32, 0.5, 0.36, 0.3, 270.0, 450.0),
        ],
        'E' => vec![
            line(&[(0.68, 0.2), (0.32, 0.2), (0.32, 0.8), (0.68, 0.8)]),
            line(&[(0.32, 0.5), (0.6, 0.5)]),
        ],
        'F' => vec![
            line(&[(0.68, 0.2), (0.32, 0.2), (0.32, 0.8)]),
            line(&[(0.32, 0.5), (0.6, 0.5)]),
        ],
        'G' => vec![
            arc(0.5, 0.5, 0.2, 0.3, 20.0, 320.0),
            line(&[(0.52, 0.55), (0.7, 0.55), (0.7, 0.68)]),
        ],
        'H' => vec![
            line(&[(0.32, 0.2), (0.32, 0.8)]),
            line(&[(0.68, 0.2), (0.68, 0.8)]),
            line(&[(0.32, 0.5), (0.68, 0.5)]),
        ],
        'I' => vec![
            line(&[(0.5, 0.2), (0.5, 0.8)]),
            line(&[(0.4, 0.2), (0.6, 0.2)]),
            line(&[(0.4, 0.8), (0.6, 0.8)]),
        ],
        'J' => vec![
            line(&[(0.42, 0.2), (0.66, 0.2)]),
            join(
                line(&[(0.58, 0.2), (0.58, 0.65)]),
                &arc(0.46, 0.65, 0.12, 0.13, 0.0, 180.0),
            ),
        ],
        'K' => vec![
            line(&[(0.32, 0.2), (0.32, 0.8)]),
            line(&[(0.66, 0.2), (0.32, 0.52)]),
            line(&[(0.44, 0.43), (0.68, 0.8)]),
        ],
        'L' => vec![line(&[(0.32, 0.2), (0.32, 0.8), (0.68, 0.8)])],
        'M' => vec![line(&[
            (0.3, 0.8),
            (0.3, 0.2),
            (0.5, 0.55),
            (0.7, 0.2),
            (0.7, 0.8),
        ])],
        'N' => vec![line(&[(0.32, 0.8), (0.32, 0.2), (0.68, 0.8), (0.68, 0.2)])],
        'O' => vec![arc(0.5, 0.5, 0.19, 0.3, 0.0, 360.0)],
        'P' => vec![
            line(&[(0.32, 0.8), (0.32, 0.2), (0.52, 0.2)]),
            arc(0.52, 0.355, 0.17, 0.155, 270.0, 450.0),
            line(&[(0.52, 0.51), (0.32, 0.51)]),
        ],
        'Q' => vec![
            arc(0.5, 0.5, 0.19, 0.3, 0.0, 360.0),
            line(&[(0.55, 0.62), (0.72, 0.82)]),
        ],
        'R' => vec![
            line(&[(0.32, 0.8), (0.32, 0.2), (0.52, 0.2)]),
            arc(0.52, 0.355, 0.17, 0.155, 270.0, 450.0),
            line(&[(0.52, 0.51), (0.32, 0.51)]),
            line(&[(0.45, 0.51), (0.68, 0.8)]),
        ],
        'S' => vec![
            arc(0.5, 0.355, 0.16, 0.155, 340.0, 90.0),
            arc(0.5, 0.645, 0.16, 0.155, 270.0, 520.0),
        ],
        'T' => vec![
            line(&[(0.3, 0.2), (0.7, 0.2)]),
            line(&[(0.5, 0.2), (0.5, 0.8)]),
        ],
        'U' => vec![join(
            line(&[(0.32, 0.2), (0.32, 0.62)]),
            &join(
                arc(0.5, 0.62, 0.18, 0.17, 180.0, 0.0),
                &[(0.68, 0.62), (0.68, 0.2)],
            ),
        )],
        'V' => vec![line(&[(0.3, 0.2), (0.5, 0.8), (0.7, 0.2)])],
        'W' => vec![line(&[
            (0.28, 0.2),
            (0.38, 0.8),
            (0.5, 0.45),
            (0.62, 0.8),
            (0.72, 0.2),
        ])],
        'X' => vec![
            line(&[(0.3, 0.2), (0.7, 0.8)]),
            line(&[(0.7, 0.2), (0.3, 0.8)]),
        ],
        'Y' => vec![
            line(&[(0.3, 0.2), (0.5, 0.5)]),
            line(&[(0.7, 0.2), (0.5, 0.5)]),
            line(&[(0.5, 0.5), (0.5, 0.8)]),
        ],
        'Z' => vec![line(&[(0.3, 0.2), (0.7, 0.2), (0.3, 0.8), (0.7, 0.8)])],
        other => {
            return Err(Error::Config(format!(
                "unsupported glyph symbol {other:?} (expected 0-9 or A-Z)"
            )))
        }
    };
    Ok(strokes)
}

/// Renders a glyph at `n x n` pixels with soft stroke edges. Deterministic
/// in `(symbol, style_seed)`.
pub fn render_glyph(spec: &GlyphSpec, n: usize) -> Result<Image> {
    let symbol = spec.symbol.to_ascii_uppercase();
    let strokes = template(symbol)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.style_seed);

    // coherent warp: small rotation/scale about the center plus translation
    let rot = rng.gen_range(-6.0f64..6.0).to_radians();
    let scale = rng.gen_range(0.94..1.06);
    let (tx, ty) = (rng.gen_range(-0.03..0.03), rng.gen_range(-0.03..0.03));
    let half_width_px = rng.gen_range(0.05..0.09) * n as f64 / 2.0;
    let (sr, cr) = (rot.sin(), rot.cos());

    let warped: Vec<Stroke> = strokes
        .iter()
        .map(|stroke| {
            stroke
                .iter()
                .map(|&(x, y)| {
                    let (dx, dy) = (x - 0.5, y - 0.5);
                    let wx = 0.5 + scale * (cr * dx - sr * dy) + tx;
                    let wy = 0.5 + scale * (sr * dx + cr * dy) + ty;
                    let nx = wx + rng.gen_range(-0.02..0.02);
                    let ny = wy + rng.gen_range(-0.02..0.02);
                    // cap total displacement at the documented bound
                    let (jx, jy) = (nx - x, ny - y);
                    let mag = (jx * jx + jy * jy).sqrt();
                    if mag > MAX_JITTER {
                        let s = MAX_JITTER / mag;
                        (x + jx * s, y + jy * s)
                    } else {
                        (nx, ny)
                    }
                })
                .collect()
        })
        .collect();

    let edge_px = 1.2;
    let mut img = Image::zeros(n);
    for py in 0..n {
        let cy = (py as f64 + 0.5) / n as f64;
        for px in 0..n {
            let cx = (px as f64 + 0.5) / n as f64;
            let mut d2_min = f64::INFINITY;
            for stroke in &warped {
                for seg in stroke.windows(2) {
                    d2_min = d2_min.min(dist2_to_segment(cx, cy, seg[0], seg[1]));
                }
            }
            let d_px = d2_min.sqrt() * n as f64;
            let cov = (0.5 + (half_width_px - d_px) / edge_px).clamp(0.0, 1.0);
            img.set(py, px, cov as f32);
        }
    }
    Ok(normalize(&img))
}

fn dist2_to_segment(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let (apx, apy) = (px - a.0, py - a.1);
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 {
        ((apx * abx + apy * aby) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (dx, dy) = (apx - t * abx, apy - t * aby);
    dx * dx + dy * dy
}

/// The full supported symbol set: digits then letters.
pub fn supported_symbols() -> impl Iterator<Item = char> {
    ('0'..='9').chain('A'..='Z')
}

/// Five-level ASCII preview of an image, handy for terminal inspection.
pub fn ascii_art(img: &Image) -> String {
    let ramp = [' ', '.', ':', '+', '#'];
    let mut out = String::new();
    for y in 0..img.n() {
        for x in 0..img.n() {
            let v = img.get(y, x).clamp(0.0, 1.0);
            out.push(ramp[((v * 4.0).round() as usize).min(4)]);
        }
        out.push('\n');
    }
    out
}
