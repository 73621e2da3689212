//! Image and dataset IO, synthetic scenes, padding and binarization.

mod image_io;
mod manifest;
pub mod pad;
pub mod synthetic;

pub use image_io::{
    decode_image, image_dims, load_image, load_labels, load_map, load_mask, save_image, save_labels, save_map,
    save_mask,
};
pub use manifest::{Manifest, Record, Sample, Split};
pub use pad::{pad_to_multiple, unpad, CropRecord};
pub use synthetic::{generate_synthetic, instance_boundaries, synthetic_scene, Layout, Scene, SceneSpec, ShapeKind};

use crate::grid::{Map, Mask};

/// Threshold that turns a saliency map into a binary salient mask.
pub const SALIENCY_THRESHOLD: f32 = 0.5;

/// `map >= SALIENCY_THRESHOLD`.
pub fn binarize(map: &Map) -> Mask {
    map.map(|&v| v >= SALIENCY_THRESHOLD)
}
