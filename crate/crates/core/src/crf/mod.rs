//! Dense CRF refinement of salient instances: unary construction, Potts
//! energy and mean-field inference (exact and lattice-filtered).

mod energy;
mod inference;
pub mod lattice;
mod unary;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::LabelMap;
use crate::tensor::Tensor;

pub use energy::{pairwise_potential, total_energy};
pub use inference::{meanfield_brute, meanfield_fast, refine_instances, MeanField, BRUTE_FORCE_LIMIT};
pub use unary::{build_unaries, UNARY_FLOOR};

/// Kernel weights, bandwidths and iteration count of the dense CRF.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrfParams {
    /// Appearance (bilateral) kernel weight.
    pub w1: f64,
    /// Smoothness (spatial) kernel weight.
    pub w2: f64,
    /// Spatial bandwidth of the appearance kernel, in pixels.
    pub sigma_alpha: f64,
    /// Color bandwidth of the appearance kernel, on the 0–255 scale.
    pub sigma_beta: f64,
    /// Bandwidth of the smoothness kernel, in pixels.
    pub sigma_gamma: f64,
    pub iterations: usize,
}

impl Default for CrfParams {
    fn default() -> Self {
        CrfParams {
            w1: 4.0,
            w2: 3.0,
            sigma_alpha: 49.0,
            sigma_beta: 5.0,
            sigma_gamma: 3.0,
            iterations: 10,
        }
    }
}

impl CrfParams {
    pub fn validate(&self) -> Result<()> {
        let sigmas = [self.sigma_alpha, self.sigma_beta, self.sigma_gamma];
        if sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("CrfParams", "bandwidths must be positive"));
        }
        if [self.w1, self.w2].iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("CrfParams", "weights must be non-negative"));
        }
        Ok(())
    }

    /// Same parameters with both kernel weights zero.
    pub fn without_pairwise(self) -> Self {
        CrfParams { w1: 0.0, w2: 0.0, ..self }
    }
}

/// Per-pixel distribution over `K + 1` labels, stored pixel-major
/// (`data[i * labels + l]`). Label 0 is background.
#[derive(Clone, Debug, PartialEq)]
pub struct UnaryField {
    height: usize,
    width: usize,
    labels: usize,
    data: Vec<f64>,
}

impl UnaryField {
    /// Checks that every pixel holds a probability vector (non-negative,
    /// summing to 1 within 1e-6).
    pub fn from_vec(height: usize, width: usize, labels: usize, data: Vec<f64>) -> Result<Self> {
        if labels == 0 || data.len() != height * width * labels {
            return Err(Error::invalid(
                "UnaryField",
                format!("{} values for {height}x{width} pixels and {labels} labels", data.len()),
            ));
        }
        for (i, p) in data.chunks_exact(labels).enumerate() {
            let sum: f64 = p.iter().sum();
            if p.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::invalid("UnaryField", format!("pixel {i} is not a distribution")));
            }
        }
        Ok(UnaryField {
            height,
            width,
            labels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Number of labels including background (`K + 1`).
    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.data[i * self.labels..(i + 1) * self.labels]
    }

    pub fn at(&self, y: usize, x: usize) -> &[f64] {
        self.pixel(y * self.width + x)
    }

    /// Per-pixel most probable label, ties to the lowest index.
    pub fn argmax(&self) -> LabelMap {
        argmax_labels(self.height, self.width, self.labels, &self.data)
    }
}

pub(crate) fn argmax_labels(height: usize, width: usize, labels: usize, data: &[f64]) -> LabelMap {
    let out = data
        .chunks_exact(labels)
        .map(|p| {
            let mut best = 0;
            for l in 1..labels {
                if p[l] > p[best] {
                    best = l;
                }
            }
            best as u16
        })
        .collect();
    LabelMap::from_vec(height, width, out).expect("one label per pixel")
}

/// RGB colors on the 0–255 scale, pixel-major, from a `1×3×H×W` image in
/// `[0, 1]`.
pub(crate) fn colors(image: &Tensor<f32>, height: usize, width: usize) -> Result<Vec<[f64; 3]>> {
    let s = image.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::invalid("crf", format!("expected a 1x3xHxW image, got {s}")));
    }
    if (s.h, s.w) != (height, width) {
        return Err(Error::ShapeMismatch {
            op: "crf",
            dim: if s.h != height { "height" } else { "width" },
            expected: if s.h != height { height } else { width },
            actual: if s.h != height { s.h } else { s.w },
        });
    }
    let (r, g, b) = (image.plane(0, 0), image.plane(0, 1), image.plane(0, 2));
    Ok((0..height * width)
        .map(|i| [r[i] as f64 * 255.0, g[i] as f64 * 255.0, b[i] as f64 * 255.0])
        .collect())
}

/// Distinct colors for a label map; background is black.
pub fn colorize(labels: &LabelMap) -> Tensor<f32> {
    const PALETTE: [[f32; 3]; 8] = [
        [0.90, 0.10, 0.10],
        [0.10, 0.65, 0.20],
        [0.15, 0.35, 0.90],
        [0.95, 0.75, 0.10],
        [0.65, 0.20, 0.80],
        [0.10, 0.80, 0.85],
        [0.95, 0.45, 0.10],
        [0.55, 0.55, 0.55],
    ];
    let (h, w) = labels.dims();
    let mut out = Tensor::zeros(crate::tensor::Shape::new(1, 3, h, w));
    for (i, &l) in labels.data().iter().enumerate() {
        if l == 0 {
            continue;
        }
        let c = PALETTE[(l as usize - 1) % PALETTE.len()];
        for (ch, v) in c.iter().enumerate() {
            out.plane_mut(0, ch)[i] = *v;
        }
    }
    out
}

#[cfg(test)]
mod tests;
