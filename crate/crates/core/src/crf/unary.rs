use super::UnaryField;
use crate::error::Result;
use crate::grid::Mask;

/// Probabilities are clamped to this floor before taking logarithms.
pub const UNARY_FLOOR: f64 = 1e-10;

/// Initial `(K+1)`-label probability map from a binary saliency mask and
/// `K` instance masks (label `k` is `instances[k-1]`).
///
/// A salient pixel covered by `k ≥ 1` instances spreads its mass evenly over
/// them; an uncovered salient pixel gives `1/K` to every instance label. A
/// non-salient pixel covered by `k` instances gives `1/(k+1)` to each of
/// them and to background; uncovered, it is background with certainty.
pub fn build_unaries(salient: &Mask, instances: &[Mask]) -> Result<UnaryField> {
    for m in instances {
        salient.check_dims(m, "build_unaries")?;
    }
    let (h, w) = salient.dims();
    let labels = instances.len() + 1;
    let kk = instances.len() as f64;
    let mut data = vec![0.0; h * w * labels];
    let mut covering = Vec::with_capacity(instances.len());
    for i in 0..h * w {
        covering.clear();
        covering.extend((0..instances.len()).filter(|&k| instances[k].data()[i]).map(|k| k + 1));
        let p = &mut data[i * labels..(i + 1) * labels];
        let k = covering.len() as f64;
        match (salient.data()[i], covering.len()) {
            (_, _) if instances.is_empty() => p[0] = 1.0,
            (true, 0) => p[1..].iter_mut().for_each(|v| *v = 1.0 / kk),
            (true, _) => covering.iter().for_each(|&l| p[l] = 1.0 / k),
            (false, 0) => p[0] = 1.0,
            (false, _) => {
                p[0] = 1.0 / (k + 1.0);
                covering.iter().for_each(|&l| p[l] = 1.0 / (k + 1.0));
            }
        }
    }
    UnaryField::from_vec(h, w, labels, data)
}
