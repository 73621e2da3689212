use super::{colors, CrfParams, UnaryField, UNARY_FLOOR};
use crate::error::{Error, Result};
use crate::grid::LabelMap;
use crate::tensor::Tensor;

/// Combined kernel `ω₁·k_appearance + ω₂·k_smoothness` between two pixels.
pub(crate) fn kernel(p: &CrfParams, pi: (usize, usize), pj: (usize, usize), ci: &[f64; 3], cj: &[f64; 3]) -> f64 {
    let dy = pi.0 as f64 - pj.0 as f64;
    let dx = pi.1 as f64 - pj.1 as f64;
    let d2 = dy * dy + dx * dx;
    let c2: f64 = (0..3).map(|k| (ci[k] - cj[k]).powi(2)).sum();
    let mut k = 0.0;
    if p.w1 != 0.0 {
        k += p.w1 * (-d2 / (2.0 * p.sigma_alpha * p.sigma_alpha) - c2 / (2.0 * p.sigma_beta * p.sigma_beta)).exp();
    }
    if p.w2 != 0.0 {
        k += p.w2 * (-d2 / (2.0 * p.sigma_gamma * p.sigma_gamma)).exp();
    }
    k
}

/// Potts pairwise term between pixels `i` and `j` given as `(y, x)`.
pub fn pairwise_potential(
    i: (usize, usize),
    j: (usize, usize),
    xi: u16,
    xj: u16,
    image: &Tensor<f32>,
    params: &CrfParams,
) -> Result<f64> {
    let s = image.shape();
    for (y, x) in [i, j] {
        if y >= s.h || x >= s.w {
            return Err(Error::invalid("pairwise_potential", format!("pixel ({y}, {x}) outside {}x{}", s.h, s.w)));
        }
    }
    if xi == xj {
        return Ok(0.0);
    }
    let c = colors(image, s.h, s.w)?;
    Ok(kernel(params, i, j, &c[i.0 * s.w + i.1], &c[j.0 * s.w + j.1]))
}

/// Energy of a labeling: `−Σ_i log P_i(x_i)` plus the pairwise term summed
/// once over every unordered pair of pixels. Quadratic in the pixel count.
pub fn total_energy(labeling: &LabelMap, unaries: &UnaryField, image: &Tensor<f32>, params: &CrfParams) -> Result<f64> {
    let (h, w) = unaries.dims();
    if labeling.dims() != (h, w) {
        return Err(Error::invalid(
            "total_energy",
            format!("labeling is {:?}, unaries are {h}x{w}", labeling.dims()),
        ));
    }
    let c = colors(image, h, w)?;
    let labels = labeling.data();
    let mut e = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let l = l as usize;
        if l >= unaries.labels() {
            return Err(Error::invalid("total_energy", format!("label {l} at pixel {i} out of range")));
        }
        e -= unaries.pixel(i)[l].max(UNARY_FLOOR).ln();
    }
    if params.w1 == 0.0 && params.w2 == 0.0 {
        return Ok(e);
    }
    for i in 0..h * w {
        for j in i + 1..h * w {
            if labels[i] != labels[j] {
                e += kernel(params, (i / w, i % w), (j / w, j % w), &c[i], &c[j]);
            }
        }
    }
    Ok(e)
}
