use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageError, ImageFormat, Luma, Rgb};

use crate::error::{Error, Result};
use crate::grid::{LabelMap, Map, Mask};
use crate::tensor::{Shape, Tensor};

fn image_error(path: &Path, e: ImageError) -> Error {
    match e {
        ImageError::IoError(source) => Error::io(path, source),
        other => Error::Image {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => Ok(ImageFormat::Png),
        "pgm" | "ppm" | "pnm" | "pbm" => Ok(ImageFormat::Pnm),
        _ => Err(Error::Image {
            path: path.to_path_buf(),
            message: format!("unsupported extension {ext:?} (expected png, pgm, ppm or pnm)"),
        }),
    }
}

fn open(path: &Path) -> Result<DynamicImage> {
    let format = format_for(path)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    image::load_from_memory_with_format(&bytes, format).map_err(|e| image_error(path, e))
}

fn save(path: &Path, img: DynamicImage) -> Result<()> {
    let format = format_for(path)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save_with_format(path, format).map_err(|e| image_error(path, e))
}

fn is_16bit(img: &DynamicImage) -> bool {
    matches!(
        img,
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) | DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_)
    )
}

fn rgb_tensor(img: &DynamicImage) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros(Shape::new(1, 3, h, w));
    let plane = h * w;
    if is_16bit(img) {
        for (i, p) in img.to_rgb16().pixels().enumerate() {
            for c in 0..3 {
                t.data_mut()[c * plane + i] = p.0[c] as f32 / 65535.0;
            }
        }
    } else {
        for (i, p) in img.to_rgb8().pixels().enumerate() {
            for c in 0..3 {
                t.data_mut()[c * plane + i] = p.0[c] as f32 / 255.0;
            }
        }
    }
    t
}

fn gray_map(img: &DynamicImage) -> Map {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = if is_16bit(img) {
        img.to_luma16().pixels().map(|p| p.0[0] as f32 / 65535.0).collect()
    } else {
        img.to_luma8().pixels().map(|p| p.0[0] as f32 / 255.0).collect()
    };
    Map::from_vec(h, w, data).expect("sized")
}

/// Decodes PNG or PNM bytes into a `1×3×H×W` tensor in `[0, 1]`.
pub fn decode_image(bytes: &[u8]) -> Result<Tensor<f32>> {
    let img = image::load_from_memory(bytes).map_err(|e| image_error(Path::new("<memory>"), e))?;
    Ok(rgb_tensor(&img))
}

/// Loads an RGB image as a `1×3×H×W` tensor in `[0, 1]`. Grayscale files
/// are replicated across the three channels.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    Ok(rgb_tensor(&open(path.as_ref())?))
}

/// Loads a single-channel map in `[0, 1]`; colour files are converted to luma.
pub fn load_map(path: impl AsRef<Path>) -> Result<Map> {
    Ok(gray_map(&open(path.as_ref())?))
}

/// Loads a binary mask: any nonzero pixel is set.
pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    Ok(load_map(path)?.map(|&v| v > 0.0))
}

/// Loads a label image, preserving 16-bit values.
pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let img = open(path.as_ref())?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.to_luma16().pixels().map(|p| p.0[0]).collect::<Vec<_>>();
    // 8-bit files are widened by the decoder (v * 257); undo it
    let data = if is_16bit(&img) {
        data
    } else {
        data.into_iter().map(|v| v / 257).collect()
    };
    Ok(LabelMap::from_vec(h, w, data).expect("sized"))
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Saves a `1×3×H×W` or `1×1×H×W` tensor as 8-bit RGB or grayscale.
pub fn save_image(path: impl AsRef<Path>, image: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    let s = image.shape();
    let (w, h) = (s.w as u32, s.h as u32);
    let img = match s.c {
        1 => {
            let buf: Vec<u8> = image.plane(0, 0).iter().map(|&v| quantize(v)).collect();
            DynamicImage::ImageLuma8(ImageBuffer::<Luma<u8>, _>::from_raw(w, h, buf).expect("sized"))
        }
        3 => {
            let mut buf = Vec::with_capacity(s.plane() * 3);
            for i in 0..s.plane() {
                for c in 0..3 {
                    buf.push(quantize(image.plane(0, c)[i]));
                }
            }
            DynamicImage::ImageRgb8(ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, buf).expect("sized"))
        }
        c => return Err(Error::invalid("save_image", format!("expected 1 or 3 channels, got {c}"))),
    };
    save(path, img)
}

/// Saves a map in `[0, 1]` as 8-bit grayscale.
pub fn save_map(path: impl AsRef<Path>, map: &Map) -> Result<()> {
    let buf: Vec<u8> = map.data().iter().map(|&v| quantize(v)).collect();
    let img = ImageBuffer::<Luma<u8>, _>::from_raw(map.width() as u32, map.height() as u32, buf).expect("sized");
    save(path.as_ref(), DynamicImage::ImageLuma8(img))
}

/// Saves a mask as 0/255 grayscale.
pub fn save_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    save_map(path, &mask.to_map())
}

/// Saves labels as 16-bit grayscale (PNG or PGM by extension).
pub fn save_labels(path: impl AsRef<Path>, labels: &LabelMap) -> Result<()> {
    let img = ImageBuffer::<Luma<u16>, _>::from_raw(labels.width() as u32, labels.height() as u32, labels.data().to_vec())
        .expect("sized");
    save(path.as_ref(), DynamicImage::ImageLuma16(img))
}

/// Pixel dimensions `(height, width)` read from the file header.
pub fn image_dims(path: impl AsRef<Path>) -> Result<(usize, usize)> {
    let path = path.as_ref();
    format_for(path)?;
    let (w, h) = image::image_dimensions(path).map_err(|e| image_error(path, e))?;
    Ok((h as usize, w as usize))
}
