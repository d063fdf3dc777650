//! Image decoding, preprocessing and train-time augmentation.

use std::path::Path;

use image::imageops::FilterType;
use image::{DynamicImage, ImageDecoder, ImageReader, Rgb, RgbImage};

use super::SampleRecord;
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensor::Tensor;

/// Per-channel statistics of the large-corpus pretraining images; pretrained
/// backbones expect inputs normalized with these.
pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Resize-and-normalize parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessSpec {
    pub target_side: usize,
    pub channel_means: [f32; 3],
    pub channel_stds: [f32; 3],
    pub augmentation: Option<AugmentSpec>,
}

impl PreprocessSpec {
    pub fn with_side(target_side: usize) -> Self {
        PreprocessSpec {
            target_side,
            channel_means: IMAGENET_MEAN,
            channel_stds: IMAGENET_STD,
            augmentation: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_side < 64 {
            return Err(Error::InvalidSpec(format!(
                "target_side {} below minimum 64",
                self.target_side
            )));
        }
        if self.channel_stds.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidSpec("channel stds must be positive".into()));
        }
        if let Some(aug) = &self.augmentation {
            aug.validate()?;
        }
        Ok(())
    }
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        Self::with_side(224)
    }
}

/// Train-split augmentation parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentSpec {
    pub horizontal_flip_prob: f32,
    pub rotation_max_degrees: f32,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            horizontal_flip_prob: 0.5,
            rotation_max_degrees: 15.0,
        }
    }
}

impl AugmentSpec {
    pub fn none() -> Self {
        AugmentSpec {
            horizontal_flip_prob: 0.0,
            rotation_max_degrees: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.horizontal_flip_prob) {
            return Err(Error::InvalidSpec(format!(
                "flip probability {} outside [0,1]",
                self.horizontal_flip_prob
            )));
        }
        if self.rotation_max_degrees < 0.0 {
            return Err(Error::InvalidSpec(format!(
                "rotation_max_degrees {} negative",
                self.rotation_max_degrees
            )));
        }
        Ok(())
    }
}

/// Decodes an image to RGB, honoring embedded orientation metadata.
/// Grayscale inputs are promoted to three channels.
pub fn decode_image(path: &Path) -> Result<RgbImage> {
    let undecodable = |detail: String| Error::UndecodableImage {
        path: path.display().to_string(),
        detail,
    };
    let reader = ImageReader::open(path)
        .map_err(|e| undecodable(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| undecodable(e.to_string()))?;
    let mut decoder = reader.into_decoder().map_err(|e| undecodable(e.to_string()))?;
    let orientation = decoder.orientation().map_err(|e| undecodable(e.to_string()))?;
    let mut img =
        DynamicImage::from_decoder(decoder).map_err(|e| undecodable(e.to_string()))?;
    img.apply_orientation(orientation);
    let rgb = img.to_rgb8();
    if rgb.width() == 0 || rgb.height() == 0 {
        return Err(Error::ZeroSizeImage);
    }
    Ok(rgb)
}

/// Rescales to `target_side` square, maps to `[0,1]`, then normalizes each
/// channel as `(x - mean) / std`. Output is `[3, side, side]`.
pub fn preprocess_image(image: &RgbImage, spec: &PreprocessSpec) -> Result<Tensor> {
    spec.validate()?;
    if image.width() == 0 || image.height() == 0 {
        return Err(Error::ZeroSizeImage);
    }
    let side = spec.target_side as u32;
    let resized = if image.dimensions() == (side, side) {
        image.clone()
    } else {
        image::imageops::resize(image, side, side, FilterType::Triangle)
    };
    let side = spec.target_side;
    let mut out = Tensor::zeros(&[3, side, side]);
    let data = out.data_mut();
    for (y, row) in resized.rows().enumerate() {
        for (x, px) in row.enumerate() {
            for c in 0..3 {
                let v = px.0[c] as f32 / 255.0;
                data[c * side * side + y * side + x] =
                    (v - spec.channel_means[c]) / spec.channel_stds[c];
            }
        }
    }
    Ok(out)
}

/// Mirrors horizontally with probability `flip_prob`, then rotates by a
/// uniform angle in `[-max, +max]` degrees about the center with black
/// border fill. Output dimensions are unchanged.
pub fn augment_image(image: &RgbImage, spec: &AugmentSpec, rng: &mut Stream) -> RgbImage {
    let mut img = image.clone();
    if spec.horizontal_flip_prob > 0.0 && rng.bool_with(spec.horizontal_flip_prob) {
        image::imageops::flip_horizontal_in_place(&mut img);
    }
    if spec.rotation_max_degrees > 0.0 {
        let angle = rng.range_f32(-spec.rotation_max_degrees, spec.rotation_max_degrees);
        img = rotate_about_center(&img, angle.to_radians());
    }
    img
}

/// Inverse-mapped rotation with bilinear sampling; out-of-frame samples are
/// filled with black.
fn rotate_about_center(image: &RgbImage, radians: f32) -> RgbImage {
    let (w, h) = image.dimensions();
    let cx = (w as f32 - 1.0) / 2.0;
    let cy = (h as f32 - 1.0) / 2.0;
    let (sin, cos) = radians.sin_cos();
    let mut out = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let dx = x as f32 - cx;
            let dy = y as f32 - cy;
            // rotate destination coordinates back into the source frame
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            out.put_pixel(x, y, bilinear_sample(image, sx, sy));
        }
    }
    out
}

fn bilinear_sample(image: &RgbImage, x: f32, y: f32) -> Rgb<u8> {
    let (w, h) = image.dimensions();
    if x < -1.0 || y < -1.0 || x > w as f32 || y > h as f32 {
        return Rgb([0, 0, 0]);
    }
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let fetch = |ix: i64, iy: i64| -> [f32; 3] {
        if ix < 0 || iy < 0 || ix >= w as i64 || iy >= h as i64 {
            [0.0; 3]
        } else {
            let p = image.get_pixel(ix as u32, iy as u32).0;
            [p[0] as f32, p[1] as f32, p[2] as f32]
        }
    };
    let p00 = fetch(x0 as i64, y0 as i64);
    let p10 = fetch(x0 as i64 + 1, y0 as i64);
    let p01 = fetch(x0 as i64, y0 as i64 + 1);
    let p11 = fetch(x0 as i64 + 1, y0 as i64 + 1);
    let mut out = [0u8; 3];
    for c in 0..3 {
        let top = p00[c] * (1.0 - fx) + p10[c] * fx;
        let bot = p01[c] * (1.0 - fx) + p11[c] * fx;
        out[c] = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
    }
    Rgb(out)
}

/// Whether a batch is being assembled for training (augmented) or
/// evaluation (never augmented).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchMode {
    /// Augment with the per-sample stream derived from `(seed, sample_id, epoch)`.
    Train { seed: u64, epoch: usize },
    Eval,
}

/// Decodes, optionally augments, and preprocesses a set of records into an
/// `[N, 3, side, side]` batch. Sample order is preserved; augmentation
/// randomness is derived per sample so parallel loading stays deterministic.
pub fn load_batch(
    records: &[&SampleRecord],
    spec: &PreprocessSpec,
    mode: BatchMode,
) -> Result<Tensor> {
    if records.is_empty() {
        return Err(Error::EmptyBatch);
    }
    spec.validate()?;
    let side = spec.target_side;

    let load_one = |record: &SampleRecord| -> Result<Tensor> {
        let mut img = decode_image(&record.image_path)?;
        if let (BatchMode::Train { seed, epoch }, Some(aug)) = (mode, &spec.augmentation) {
            let mut rng = Stream::derive(
                seed,
                &format!("augment:{}:{}", record.sample_id, epoch),
            );
            img = augment_image(&img, aug, &mut rng);
        }
        preprocess_image(&img, spec)
    };

    #[cfg(feature = "parallel")]
    let tensors: Vec<Result<Tensor>> = {
        use rayon::prelude::*;
        records.par_iter().map(|r| load_one(r)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let tensors: Vec<Result<Tensor>> = records.iter().map(|r| load_one(r)).collect();

    let mut batch = Tensor::zeros(&[records.len(), 3, side, side]);
    let plane = 3 * side * side;
    for (i, t) in tensors.into_iter().enumerate() {
        let t = t?;
        batch.data_mut()[i * plane..(i + 1) * plane].copy_from_slice(t.data());
    }
    Ok(batch)
}
