use super::energy::kernel;
use super::lattice::Permutohedral;
use super::{argmax_labels, build_unaries, colors, CrfParams, UnaryField, UNARY_FLOOR};
use crate::error::{Error, Result};
use crate::grid::{LabelMap, Mask};
use crate::tensor::Tensor;

/// Largest pixel count accepted by [`meanfield_brute`].
pub const BRUTE_FORCE_LIMIT: usize = 4096;

/// Pixels whose exact kernel sums calibrate the lattice scale.
const CALIBRATION_SAMPLES: usize = 256;

/// Approximate marginals and their per-pixel argmax.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanField {
    pub marginals: UnaryField,
    pub labeling: LabelMap,
}

/// Runs `iters` parallel updates `Q_i(l) ∝ P_i(l)·exp(m_i(l))`, where
/// `messages` maps the current `Q` to `m_i(l) = Σ_{j≠i} k_ij Q_j(l)`.
fn iterate(unaries: &UnaryField, iters: usize, mut messages: impl FnMut(&[f64]) -> Vec<f64>) -> MeanField {
    let labels = unaries.labels();
    let log_p: Vec<f64> = unaries.data().iter().map(|p| p.max(UNARY_FLOOR).ln()).collect();
    let mut q = unaries.data().to_vec();
    for _ in 0..iters {
        let m = messages(&q);
        for (i, out) in q.chunks_exact_mut(labels).enumerate() {
            let base = i * labels;
            let mut top = f64::NEG_INFINITY;
            for l in 0..labels {
                out[l] = log_p[base + l] + m[base + l];
                top = top.max(out[l]);
            }
            let mut sum = 0.0;
            for v in out.iter_mut() {
                *v = (*v - top).exp();
                sum += *v;
            }
            out.iter_mut().for_each(|v| *v /= sum);
        }
    }
    let (h, w) = unaries.dims();
    MeanField {
        labeling: argmax_labels(h, w, labels, &q),
        marginals: UnaryField {
            height: h,
            width: w,
            labels,
            data: q,
        },
    }
}

/// Mean-field inference with messages summed exactly over all pixel pairs.
/// Quadratic in the pixel count; refuses images above [`BRUTE_FORCE_LIMIT`].
pub fn meanfield_brute(unaries: &UnaryField, image: &Tensor<f32>, params: &CrfParams, iters: usize) -> Result<MeanField> {
    params.validate()?;
    let n = unaries.pixels();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::invalid(
            "meanfield_brute",
            format!("{n} pixels exceeds the limit of {BRUTE_FORCE_LIMIT}; use meanfield_fast"),
        ));
    }
    let (h, w) = unaries.dims();
    let c = colors(image, h, w)?;
    let labels = unaries.labels();
    let pairwise = params.w1 != 0.0 || params.w2 != 0.0;
    Ok(iterate(unaries, iters, |q| {
        let mut m = vec![0.0; q.len()];
        if !pairwise {
            return m;
        }
        for i in 0..n {
            let pi = (i / w, i % w);
            let out = &mut m[i * labels..(i + 1) * labels];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let k = kernel(params, pi, (j / w, j % w), &c[i], &c[j]);
                for l in 0..labels {
                    out[l] += k * q[j * labels + l];
                }
            }
        }
        m
    }))
}

/// Mean-field inference with the smoothness kernel applied as a separable
/// spatial Gaussian and the appearance kernel through a permutohedral
/// lattice. Linear in the pixel count.
pub fn meanfield_fast(unaries: &UnaryField, image: &Tensor<f32>, params: &CrfParams, iters: usize) -> Result<MeanField> {
    params.validate()?;
    let (h, w) = unaries.dims();
    let c = colors(image, h, w)?;
    let labels = unaries.labels();
    let lattice = (params.w1 != 0.0 && iters > 0).then(|| {
        let mut f = Vec::with_capacity(h * w * 5);
        for (i, rgb) in c.iter().enumerate() {
            f.push((i / w) as f64 / params.sigma_alpha);
            f.push((i % w) as f64 / params.sigma_alpha);
            f.extend(rgb.iter().map(|v| v / params.sigma_beta));
        }
        let mut l = Permutohedral::new(&f, 5);
        l.calibrate(&f, CALIBRATION_SAMPLES);
        l
    });
    let spatial = (params.w2 != 0.0).then(|| gaussian_taps(params.sigma_gamma));
    Ok(iterate(unaries, iters, |q| {
        let mut m = vec![0.0; q.len()];
        if let Some(lattice) = &lattice {
            let b = lattice.filter(q, labels);
            for ((o, v), s) in m.iter_mut().zip(b).zip(q) {
                *o += params.w1 * (v - s);
            }
        }
        if let Some(taps) = &spatial {
            let g = separable_blur(q, h, w, labels, taps);
            for ((o, v), s) in m.iter_mut().zip(g).zip(q) {
                *o += params.w2 * (v - s);
            }
        }
        m
    }))
}

/// `exp(−d²/2σ²)` for `d = 0..=r`, with `r` where the weight drops below 1e-8.
fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let r = (sigma * (2.0 * 1e8f64.ln()).sqrt()).ceil() as usize;
    (0..=r).map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp()).collect()
}

fn separable_blur(q: &[f64], h: usize, w: usize, labels: usize, taps: &[f64]) -> Vec<f64> {
    let r = taps.len() - 1;
    let mut rows = vec![0.0; q.len()];
    for y in 0..h {
        for x in 0..w {
            let out = &mut rows[(y * w + x) * labels..(y * w + x + 1) * labels];
            for xx in x.saturating_sub(r)..(x + r + 1).min(w) {
                let t = taps[x.abs_diff(xx)];
                let src = &q[(y * w + xx) * labels..(y * w + xx + 1) * labels];
                for l in 0..labels {
                    out[l] += t * src[l];
                }
            }
        }
    }
    let mut out = vec![0.0; q.len()];
    for y in 0..h {
        for yy in y.saturating_sub(r)..(y + r + 1).min(h) {
            let t = taps[y.abs_diff(yy)];
            let src = &rows[yy * w * labels..(yy + 1) * w * labels];
            let dst = &mut out[y * w * labels..(y + 1) * w * labels];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += t * s;
            }
        }
    }
    out
}

/// Unaries from the masks, then fast mean-field; all background when there
/// are no instances.
pub fn refine_instances(salient: &Mask, instances: &[Mask], image: &Tensor<f32>, params: &CrfParams) -> Result<LabelMap> {
    let unaries = build_unaries(salient, instances)?;
    let (h, w) = salient.dims();
    if instances.is_empty() {
        return Ok(LabelMap::new(h, w, 0));
    }
    Ok(meanfield_fast(&unaries, image, params, params.iterations)?.labeling)
}
