//! Synthetic fixture dataset for desk-scale runs.
//!
//! Each of the four labels is rendered as an independent, learnable visual
//! cue so a model can be overfit in minutes on a CPU:
//!   dynasty -> global brightness band,
//!   ware    -> thickness of a centered ring near the border,
//!   glaze   -> background hue,
//!   type    -> shape drawn at the center.
//! Label assignment is uniform-random per task and fully determined by the
//! seed.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use super::manifest::write_manifest;
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::taxonomy::TaskTaxonomy;

/// Side of generated images, in pixels.
pub const SYNTH_IMAGE_SIDE: u32 = 64;

/// Writes `n_samples` images plus `manifest.csv` under `out_dir` and returns
/// the manifest path. Byte-identical output for identical `(n_samples, seed)`.
pub fn generate_synthetic_dataset(
    n_samples: usize,
    seed: u64,
    out_dir: &Path,
    taxonomy: &TaskTaxonomy,
) -> Result<PathBuf> {
    if n_samples < 12 {
        return Err(Error::InvalidSpec(format!(
            "synthetic dataset needs at least 12 samples, got {n_samples}"
        )));
    }
    let images_dir = out_dir.join("images");
    std::fs::create_dir_all(&images_dir)
        .map_err(|e| Error::io(format!("creating {}", images_dir.display()), e))?;

    let cards = taxonomy.cardinalities();
    let mut label_rng = Stream::derive(seed, "synthetic-labels");
    let mut rows = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let labels = [
            label_rng.below(cards[0]),
            label_rng.below(cards[1]),
            label_rng.below(cards[2]),
            label_rng.below(cards[3]),
        ];
        let img = render_sample(&labels, seed, i);
        let file_name = format!("s{i:05}.png");
        let path = images_dir.join(&file_name);
        img.save(&path)
            .map_err(|e| Error::io(format!("writing {}", path.display()), std::io::Error::other(e)))?;

        let names: Vec<String> = (0..4)
            .map(|t| {
                taxonomy
                    .decode_label(crate::taxonomy::TASKS[t], labels[t])
                    .expect("labels drawn below cardinality")
                    .to_string()
            })
            .collect();
        rows.push((
            format!("s{i:05}"),
            format!("images/{file_name}"),
            [names[0].clone(), names[1].clone(), names[2].clone(), names[3].clone()],
        ));
    }

    let manifest_path = out_dir.join("manifest.csv");
    write_manifest(&manifest_path, &rows)?;
    Ok(manifest_path)
}

/// Renders one sample from its encoded labels. Exposed so interactive demos
/// can preview the cue space without touching the filesystem.
pub fn render_sample(labels: &[usize; 4], seed: u64, index: usize) -> RgbImage {
    let side = SYNTH_IMAGE_SIDE as usize;
    let mut noise = Stream::derive(seed, &format!("synthetic-noise:{index}"));

    // per-label cue parameters
    let brightness = if labels[0] == 0 { 0.52 } else { 1.0 };
    let ring_thickness = 2.0 + 1.25 * labels[1] as f32;
    let (bg_r, bg_g, bg_b) = hsv_to_rgb(labels[2] as f32 * 360.0 / 8.0, 0.85, 0.7);
    let shape = labels[3];

    let cx = (side as f32 - 1.0) / 2.0;
    let cy = cx;
    let ring_outer = 30.5f32;
    let ring_inner = ring_outer - ring_thickness;

    let mut img = RgbImage::new(SYNTH_IMAGE_SIDE, SYNTH_IMAGE_SIDE);
    for y in 0..side {
        for x in 0..side {
            // 2x2 supersampling for soft edges
            let mut acc = [0.0f32; 3];
            for sub in [(-0.25f32, -0.25f32), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)] {
                let dx = x as f32 + sub.0 - cx;
                let dy = y as f32 + sub.1 - cy;
                let r = (dx * dx + dy * dy).sqrt();
                let color = if inside_shape(shape, dx, dy) {
                    [1.0, 1.0, 1.0]
                } else if r <= ring_outer && r >= ring_inner {
                    [0.05, 0.05, 0.05]
                } else {
                    [bg_r, bg_g, bg_b]
                };
                for c in 0..3 {
                    acc[c] += color[c] * 0.25;
                }
            }
            let jitter = noise.range_f32(-0.015, 0.015);
            let mut px = [0u8; 3];
            for c in 0..3 {
                let v = ((acc[c] + jitter) * brightness).clamp(0.0, 1.0);
                px[c] = (v * 255.0).round() as u8;
            }
            img.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    img
}

/// Twelve center shapes, all distinguishable under horizontal flips and
/// small rotations. Coordinates are offsets from the image center.
fn inside_shape(shape: usize, dx: f32, dy: f32) -> bool {
    let r = (dx * dx + dy * dy).sqrt();
    match shape {
        0 => r <= 12.5,                                           // disk
        1 => (9.0..=12.5).contains(&r),                           // ring
        2 => dx.abs() <= 11.0 && dy.abs() <= 11.0,                // square
        3 => (-12.0..=12.0).contains(&dy) && dx.abs() <= (12.0 - dy) * 0.55, // triangle up
        4 => (-12.0..=12.0).contains(&dy) && dx.abs() <= (12.0 + dy) * 0.55, // triangle down
        5 => (dx.abs() <= 3.5 && dy.abs() <= 12.5) || (dy.abs() <= 3.5 && dx.abs() <= 12.5), // plus
        6 => dx.abs() <= 12.5 && dy.abs() <= 4.5,                 // horizontal bar
        7 => dx.abs() <= 4.5 && dy.abs() <= 12.5,                 // vertical bar
        8 => {
            let left = (dx + 8.0).powi(2) + dy * dy;
            let right = (dx - 8.0).powi(2) + dy * dy;
            left <= 20.25 || right <= 20.25                       // two dots, horizontal
        }
        9 => {
            let top = dx * dx + (dy + 8.0).powi(2);
            let bot = dx * dx + (dy - 8.0).powi(2);
            top <= 20.25 || bot <= 20.25                          // two dots, vertical
        }
        10 => r <= 12.5 && dy <= 0.0,                             // upper half-disk
        11 => r <= 5.5,                                           // small dot
        _ => unreachable!("type cardinality is 12"),
    }
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let c = v * s;
    let hp = (h % 360.0) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}
