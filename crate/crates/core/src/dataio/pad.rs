use crate::tensor::{Scalar, Shape, Tensor};

/// Records how an image was padded so outputs can be cropped back.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CropRecord {
    pub height: usize,
    pub width: usize,
    pub padded_height: usize,
    pub padded_width: usize,
}

impl CropRecord {
    pub fn is_identity(&self) -> bool {
        self.height == self.padded_height && self.width == self.padded_width
    }
}

/// Mirror index for reflection padding without edge repetition; works for
/// pads larger than the source by reflecting periodically.
pub fn reflect_index(i: usize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let m = i % period;
    if m < len {
        m
    } else {
        period - m
    }
}

pub fn round_up(v: usize, multiple: usize) -> usize {
    v.div_ceil(multiple) * multiple
}

/// Reflection-pads the bottom and right edges so both spatial dims are
/// multiples of `multiple`.
pub fn pad_to_multiple<T: Scalar>(image: &Tensor<T>, multiple: usize) -> (Tensor<T>, CropRecord) {
    let s = image.shape();
    let (ph, pw) = (round_up(s.h, multiple), round_up(s.w, multiple));
    let record = CropRecord {
        height: s.h,
        width: s.w,
        padded_height: ph,
        padded_width: pw,
    };
    if record.is_identity() {
        return (image.clone(), record);
    }
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, ph, pw));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = image.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..ph {
                let sy = reflect_index(y, s.h);
                for x in 0..pw {
                    dst[y * pw + x] = src[sy * s.w + reflect_index(x, s.w)];
                }
            }
        }
    }
    (out, record)
}

/// Crops a padded output back to the recorded original size.
pub fn unpad<T: Scalar>(output: &Tensor<T>, record: &CropRecord) -> Tensor<T> {
    let s = output.shape();
    if (s.h, s.w) == (record.height, record.width) {
        return output.clone();
    }
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, record.height, record.width));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = output.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..record.height {
                dst[y * record.width..(y + 1) * record.width].copy_from_slice(&src[y * s.w..y * s.w + record.width]);
            }
        }
    }
    out
}
