//! A procedural ten-class 28x28 stroke dataset.
//!
//! Each class is a polyline skeleton in the unit square. A sample perturbs
//! the control points, applies a random affine map, renders the strokes
//! with random width and ink, then adds distractor strokes and pixel noise.

use std::f32::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::idx::{
    write_idx_images, write_idx_labels, TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES, TRAIN_LABELS,
};
use crate::error::Result;

pub const GLYPH_SIZE: usize = 28;
pub const GLYPH_CLASSES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlyphConfig {
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Standard deviation of control-point jitter, in glyph widths.
    pub jitter: f32,
    /// Maximum rotation in radians.
    pub rotation: f32,
    /// Expected number of distractor strokes per image.
    pub clutter: f32,
    /// Standard deviation of additive pixel noise.
    pub noise: f32,
    pub seed: u64,
}

impl Default for GlyphConfig {
    fn default() -> Self {
        GlyphConfig {
            train_per_class: 1000,
            test_per_class: 300,
            jitter: 0.07,
            rotation: 0.35,
            clutter: 1.5,
            noise: 0.25,
            seed: 2024,
        }
    }
}

type Stroke = Vec<(f32, f32)>;

fn arc(cx: f32, cy: f32, rx: f32, ry: f32, from: f32, to: f32, steps: usize) -> Stroke {
    (0..=steps)
        .map(|i| {
            let t = from + (to - from) * i as f32 / steps as f32;
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

/// Skeletons in `[0,1]^2` with `y` pointing down.
fn skeleton(class: usize) -> Vec<Stroke> {
    match class {
        0 => vec![arc(0.5, 0.5, 0.3, 0.42, 0.0, 2.0 * PI, 16)],
        1 => vec![
            vec![(0.35, 0.25), (0.55, 0.08), (0.55, 0.92)],
            vec![(0.35, 0.92), (0.75, 0.92)],
        ],
        2 => {
            let mut s = arc(0.5, 0.32, 0.28, 0.24, PI, 2.2 * PI, 8);
            s.extend([(0.2, 0.92), (0.82, 0.92)]);
            vec![s]
        }
        3 => vec![
            arc(0.48, 0.3, 0.28, 0.22, 1.1 * PI, 2.5 * PI, 8),
            arc(0.48, 0.72, 0.3, 0.22, 1.5 * PI, 2.9 * PI, 8),
        ],
        4 => vec![vec![(0.62, 0.92), (0.62, 0.08), (0.15, 0.65), (0.85, 0.65)]],
        5 => {
            let mut s = vec![(0.8, 0.08), (0.28, 0.08), (0.25, 0.45)];
            s.extend(arc(0.48, 0.66, 0.3, 0.26, 1.3 * PI, 2.85 * PI, 9));
            vec![s]
        }
        6 => {
            let mut s = vec![(0.7, 0.08)];
            s.extend(arc(0.48, 0.68, 0.28, 0.25, 1.05 * PI, 3.05 * PI, 12));
            vec![s]
        }
        7 => vec![
            vec![(0.18, 0.08), (0.82, 0.08), (0.4, 0.92)],
            vec![(0.35, 0.5), (0.72, 0.5)],
        ],
        8 => vec![
            arc(0.5, 0.28, 0.22, 0.2, 0.0, 2.0 * PI, 12),
            arc(0.5, 0.7, 0.28, 0.23, 0.0, 2.0 * PI, 12),
        ],
        9 => {
            let mut s = arc(0.5, 0.32, 0.27, 0.24, 0.0, 2.0 * PI, 12);
            s.extend([(0.77, 0.32), (0.62, 0.92)]);
            vec![s]
        }
        _ => unreachable!("ten classes"),
    }
}

fn seg_dist(p: (f32, f32), a: (f32, f32), b: (f32, f32)) -> f32 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Draws pixel-space strokes with anti-aliased width `width` and ink `ink`.
fn draw(canvas: &mut [f32], strokes: &[Stroke], width: f32, ink: f32) {
    let n = GLYPH_SIZE as isize;
    for s in strokes {
        for w in s.windows(2) {
            let (a, b) = (w[0], w[1]);
            let reach = width + 1.0;
            let x0 = (a.0.min(b.0) - reach).floor().max(0.0) as isize;
            let x1 = (a.0.max(b.0) + reach).ceil().min(n as f32 - 1.0) as isize;
            let y0 = (a.1.min(b.1) - reach).floor().max(0.0) as isize;
            let y1 = (a.1.max(b.1) + reach).ceil().min(n as f32 - 1.0) as isize;
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let d = seg_dist((x as f32, y as f32), a, b);
                    let v = ink * (width * 0.5 + 0.5 - d).clamp(0.0, 1.0);
                    let px = &mut canvas[(y * n + x) as usize];
                    *px = px.max(v);
                }
            }
        }
    }
}

/// Renders one sample of `class` as `u8` pixels, row-major.
pub fn render_glyph(class: usize, config: &GlyphConfig, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let jitter = Normal::new(0.0, config.jitter.max(0.0)).unwrap();
    let noise = Normal::new(0.0, config.noise.max(0.0)).unwrap();
    let angle = rng.random_range(-config.rotation..=config.rotation);
    let scale = rng.random_range(0.7..1.0f32);
    let aspect = rng.random_range(0.8..1.2f32);
    let shear = rng.random_range(-0.25..0.25f32);
    let (tx, ty) = (
        rng.random_range(-0.12..0.12f32),
        rng.random_range(-0.12..0.12f32),
    );
    let (sin, cos) = angle.sin_cos();
    let span = GLYPH_SIZE as f32 - 6.0;
    let to_pixels = |(x, y): (f32, f32)| {
        let (u, v) = ((x - 0.5) * scale * aspect, (y - 0.5) * scale);
        let u = u + shear * v;
        let (u, v) = (cos * u - sin * v + tx, sin * u + cos * v + ty);
        (3.0 + (u + 0.5) * span, 3.0 + (v + 0.5) * span)
    };
    let strokes: Vec<Stroke> = skeleton(class)
        .into_iter()
        .map(|s| {
            s.into_iter()
                .map(|(x, y)| to_pixels((x + jitter.sample(rng), y + jitter.sample(rng))))
                .collect()
        })
        .collect();
    let mut canvas = vec![0.0f32; GLYPH_SIZE * GLYPH_SIZE];
    draw(
        &mut canvas,
        &strokes,
        rng.random_range(1.3..2.6),
        rng.random_range(0.65..1.0),
    );
    let distractors = {
        let whole = config.clutter.floor() as usize;
        whole + usize::from(rng.random::<f32>() < config.clutter - whole as f32)
    };
    for _ in 0..distractors {
        let a = (
            rng.random_range(0.0..GLYPH_SIZE as f32),
            rng.random_range(0.0..GLYPH_SIZE as f32),
        );
        let theta = rng.random_range(0.0..2.0 * PI);
        let len = rng.random_range(4.0..10.0f32);
        let b = (a.0 + len * theta.cos(), a.1 + len * theta.sin());
        draw(
            &mut canvas,
            &[vec![a, b]],
            rng.random_range(1.0..2.0),
            rng.random_range(0.4..0.9),
        );
    }
    canvas
        .iter()
        .map(|&v| ((v + noise.sample(rng)).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Class-balanced, class-interleaved pixels and labels.
pub fn generate_split(per_class: usize, config: &GlyphConfig, stream: u64) -> (Vec<u8>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);
    let mut pixels = Vec::with_capacity(per_class * GLYPH_CLASSES * GLYPH_SIZE * GLYPH_SIZE);
    let mut labels = Vec::with_capacity(per_class * GLYPH_CLASSES);
    for _ in 0..per_class {
        for class in 0..GLYPH_CLASSES {
            pixels.extend(render_glyph(class, config, &mut rng));
            labels.push(class as u8);
        }
    }
    (pixels, labels)
}

/// Writes the four standard IDX files into `dir`.
pub fn write_glyph_dataset(dir: impl AsRef<Path>, config: &GlyphConfig) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
    for (per_class, stream, images, labels) in [
        (config.train_per_class, 0, TRAIN_IMAGES, TRAIN_LABELS),
        (config.test_per_class, 1, TEST_IMAGES, TEST_LABELS),
    ] {
        let (pixels, lab) = generate_split(per_class, config, stream);
        write_idx_images(dir.join(images), &pixels, GLYPH_SIZE, GLYPH_SIZE)?;
        write_idx_labels(dir.join(labels), &lab)?;
    }
    Ok(())
}
