//! Dataset ingestion: manifests, splits, preprocessing, augmentation and the
//! synthetic desk-scale fixture generator.

mod manifest;
mod preprocess;
mod split;
mod synthetic;

pub use manifest::{load_manifest, write_manifest, MANIFEST_COLUMNS};
pub use preprocess::{
    augment_image, decode_image, load_batch, preprocess_image, AugmentSpec, BatchMode,
    PreprocessSpec,
};
pub use split::{read_split_file, split_dataset, write_split_file, Split, SplitAssignment};
pub use synthetic::{generate_synthetic_dataset, render_sample, SYNTH_IMAGE_SIDE};

// the pixel type flowing through decode/augment/preprocess
pub use image::RgbImage;

use std::path::PathBuf;

/// One labeled image: a path plus its four category labels, already encoded
/// against the taxonomy. Labels are stored in canonical spelling.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub sample_id: String,
    pub image_path: PathBuf,
    pub dynasty: String,
    pub ware: String,
    pub glaze: String,
    pub typ: String,
    /// Encoded category indices in canonical task order.
    pub labels: [usize; 4],
}

impl SampleRecord {
    /// Category names in canonical task order.
    pub fn label_names(&self) -> [&str; 4] {
        [&self.dynasty, &self.ware, &self.glaze, &self.typ]
    }
}
