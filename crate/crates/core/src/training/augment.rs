use crate::grid::Mask;
use crate::tensor::{Shape, Tensor};

/// Number of samples `augment_contour` derives from one pair.
pub const CONTOUR_VARIANTS: usize = 16;

pub fn flip_image(image: &Tensor<f32>) -> Tensor<f32> {
    let s = image.shape();
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    out.set(n, c, y, x, image.at(n, c, y, s.w - 1 - x));
                }
            }
        }
    }
    out
}

pub fn flip_mask(mask: &Mask) -> Mask {
    let (h, w) = mask.dims();
    Mask::from_fn(h, w, |y, x| mask.at(y, w - 1 - x))
}

/// The pair itself and its horizontal mirror.
pub fn augment_region(image: &Tensor<f32>, mask: &Mask) -> Vec<(Tensor<f32>, Mask)> {
    vec![(image.clone(), mask.clone()), (flip_image(image), flip_mask(mask))]
}

/// Side lengths `(height, width)` of the largest axis-aligned rectangle inside
/// an `h × w` image rotated by `k · 45°`.
pub fn rotated_crop_dims(h: usize, w: usize, k: usize) -> (usize, usize) {
    match k % 8 {
        0 | 4 => (h, w),
        2 | 6 => (w, h),
        _ => {
            let side = ((h.min(w) as f64) / std::f64::consts::SQRT_2 + 1e-9).floor() as usize;
            (side.max(1), side.max(1))
        }
    }
}

/// Source coordinate of output pixel `(y, x)` for a rotation by `k · 45°`
/// about the image centre, followed by the centred crop.
fn source(h: usize, w: usize, k: usize, oh: usize, ow: usize, y: usize, x: usize) -> (f64, f64) {
    let theta = k as f64 * std::f64::consts::FRAC_PI_4;
    let (sin, cos) = theta.sin_cos();
    let u = x as f64 - (ow as f64 - 1.0) / 2.0;
    let v = y as f64 - (oh as f64 - 1.0) / 2.0;
    let sx = cos * u + sin * v + (w as f64 - 1.0) / 2.0;
    let sy = -sin * u + cos * v + (h as f64 - 1.0) / 2.0;
    // snap to integers within 1e-9
    let snap = |t: f64| if (t - t.round()).abs() < 1e-9 { t.round() } else { t };
    (snap(sy).clamp(0.0, h as f64 - 1.0), snap(sx).clamp(0.0, w as f64 - 1.0))
}

/// Rotation by `k · 45°` with bilinear sampling, cropped to the largest
/// inscribed rectangle.
pub fn rotate_image(image: &Tensor<f32>, k: usize) -> Tensor<f32> {
    let s = image.shape();
    let (oh, ow) = rotated_crop_dims(s.h, s.w, k);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    for y in 0..oh {
        for x in 0..ow {
            let (sy, sx) = source(s.h, s.w, k, oh, ow, y, x);
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(s.h - 1), (x0 + 1).min(s.w - 1));
            let (fy, fx) = ((sy - y0 as f64) as f32, (sx - x0 as f64) as f32);
            for n in 0..s.n {
                for c in 0..s.c {
                    let top = image.at(n, c, y0, x0) * (1.0 - fx) + image.at(n, c, y0, x1) * fx;
                    let bottom = image.at(n, c, y1, x0) * (1.0 - fx) + image.at(n, c, y1, x1) * fx;
                    out.set(n, c, y, x, top * (1.0 - fy) + bottom * fy);
                }
            }
        }
    }
    out
}

/// Rotation by `k · 45°` with nearest-neighbour sampling.
pub fn rotate_mask(mask: &Mask, k: usize) -> Mask {
    let (h, w) = mask.dims();
    let (oh, ow) = rotated_crop_dims(h, w, k);
    Mask::from_fn(oh, ow, |y, x| {
        let (sy, sx) = source(h, w, k, oh, ow, y, x);
        mask.at(sy.round() as usize, sx.round() as usize)
    })
}

/// Variant `v` of `augment_contour`: rotation `v / 2`, mirrored when `v` is odd.
pub fn contour_variant(image: &Tensor<f32>, mask: &Mask, v: usize) -> (Tensor<f32>, Mask) {
    let (i, m) = (rotate_image(image, v / 2), rotate_mask(mask, v / 2));
    if v % 2 == 1 {
        (flip_image(&i), flip_mask(&m))
    } else {
        (i, m)
    }
}

/// Eight rotations in 45° steps, each with and without a horizontal flip.
pub fn augment_contour(image: &Tensor<f32>, mask: &Mask) -> Vec<(Tensor<f32>, Mask)> {
    (0..CONTOUR_VARIANTS).map(|v| contour_variant(image, mask, v)).collect()
}

/// Nearest-neighbour resize of a mask.
pub fn resize_mask(mask: &Mask, oh: usize, ow: usize) -> Mask {
    let (h, w) = mask.dims();
    Mask::from_fn(oh, ow, |y, x| {
        let sy = ((y as f64 + 0.5) * h as f64 / oh as f64).floor() as usize;
        let sx = ((x as f64 + 0.5) * w as f64 / ow as f64).floor() as usize;
        mask.at(sy.min(h - 1), sx.min(w - 1))
    })
}
