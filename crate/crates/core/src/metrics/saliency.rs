use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Map, Mask};

/// β² used for saliency F-measures.
pub const BETA2: f64 = 0.3;
/// Number of PR thresholds, `t / 255` for `t = 0..=255`.
pub const PR_THRESHOLDS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Confusion counts at one threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Counts {
    /// `TP / (TP + FP)`, 1 when nothing is predicted.
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    /// `TP / (TP + FN)`, 0 when there is no ground truth.
    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub counts: Vec<Counts>,
    /// The ground truth has no positive pixel, so recall is undefined and the
    /// curve is left out of dataset averages.
    pub gt_empty: bool,
}

/// `(1+β²)·P·R / (β²·P + R)`, 0 when both are 0.
pub fn f_beta(precision: f64, recall: f64, beta2: f64) -> f64 {
    let den = beta2 * precision + recall;
    if den <= 0.0 {
        0.0
    } else {
        (1.0 + beta2) * precision * recall / den
    }
}

/// Number of thresholds `t / 255` strictly below `s`.
fn thresholds_below(s: f32) -> usize {
    let mut k = ((s as f64) * 255.0).ceil().clamp(0.0, PR_THRESHOLDS as f64) as usize;
    while k > 0 && s <= (k - 1) as f32 / 255.0 {
        k -= 1;
    }
    while k < PR_THRESHOLDS && s > k as f32 / 255.0 {
        k += 1;
    }
    k
}

/// Precision and recall at the 256 thresholds `t / 255`; a pixel is predicted
/// salient at threshold `t` iff `S > t / 255`.
pub fn pr_curve(map: &Map, gt: &Mask) -> Result<PrCurve> {
    map.check_dims(gt, "pr_curve")?;
    let mut pos = vec![0u64; PR_THRESHOLDS + 1];
    let mut neg = vec![0u64; PR_THRESHOLDS + 1];
    for (&s, &g) in map.data().iter().zip(gt.data()) {
        let k = thresholds_below(s);
        if g {
            pos[k] += 1;
        } else {
            neg[k] += 1;
        }
    }
    let total_pos: u64 = pos.iter().sum();
    // predicted at threshold t: pixels with k > t
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut counts = vec![Counts::default(); PR_THRESHOLDS];
    for t in (0..PR_THRESHOLDS).rev() {
        tp += pos[t + 1];
        fp += neg[t + 1];
        counts[t] = Counts {
            tp,
            fp,
            fn_: total_pos - tp,
        };
    }
    let points = counts
        .iter()
        .enumerate()
        .map(|(t, c)| PrPoint {
            threshold: t as f64 / 255.0,
            precision: c.precision(),
            recall: c.recall(),
        })
        .collect();
    Ok(PrCurve {
        points,
        counts,
        gt_empty: total_pos == 0,
    })
}

/// Pointwise mean of the curves with nonempty ground truth.
pub fn mean_curve(curves: &[PrCurve]) -> Result<PrCurve> {
    let used: Vec<&PrCurve> = curves.iter().filter(|c| !c.gt_empty).collect();
    if used.is_empty() {
        return Err(Error::Data("no image with salient ground truth".into()));
    }
    let n = used.len() as f64;
    let points = (0..PR_THRESHOLDS)
        .map(|t| PrPoint {
            threshold: t as f64 / 255.0,
            precision: used.iter().map(|c| c.points[t].precision).sum::<f64>() / n,
            recall: used.iter().map(|c| c.points[t].recall).sum::<f64>() / n,
        })
        .collect();
    let counts = (0..PR_THRESHOLDS)
        .map(|t| {
            used.iter().fold(Counts::default(), |a, c| Counts {
                tp: a.tp + c.counts[t].tp,
                fp: a.fp + c.counts[t].fp,
                fn_: a.fn_ + c.counts[t].fn_,
            })
        })
        .collect();
    Ok(PrCurve {
        points,
        counts,
        gt_empty: false,
    })
}

/// Maximum F_β over the curve's thresholds.
pub fn max_f_measure(curve: &PrCurve, beta2: f64) -> f64 {
    curve
        .points
        .iter()
        .map(|p| f_beta(p.precision, p.recall, beta2))
        .fold(0.0, f64::max)
}

/// Mean absolute difference; symmetric in its arguments.
pub fn mae(a: &Map, b: &Map) -> Result<f64> {
    a.check_dims(b, "mae")?;
    if a.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum();
    Ok(sum / a.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

/// Precision, recall and F_β after binarizing at `min(2·mean(S), 1)`; a
/// pixel passes iff `S > threshold`.
pub fn adaptive_prf(map: &Map, gt: &Mask) -> Result<Prf> {
    map.check_dims(gt, "adaptive_prf")?;
    let mean = if map.is_empty() {
        0.0
    } else {
        map.data().iter().map(|&v| v as f64).sum::<f64>() / map.len() as f64
    };
    let threshold = (2.0 * mean).min(1.0);
    let mut c = Counts::default();
    for (&s, &g) in map.data().iter().zip(gt.data()) {
        match (s as f64 > threshold, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    let (precision, recall) = (c.precision(), c.recall());
    Ok(Prf {
        threshold,
        precision,
        recall,
        f_measure: f_beta(precision, recall, BETA2),
    })
}

/// Dataset-level saliency scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyEval {
    /// Max F_β of the mean PR curve over images with salient ground truth.
    pub max_f: f64,
    pub mae: f64,
    /// Mean adaptive-threshold scores over images with salient ground truth.
    pub adaptive_precision: f64,
    pub adaptive_recall: f64,
    pub adaptive_f: f64,
    pub images: usize,
    pub empty_gt_images: usize,
    pub curve: Vec<PrPoint>,
}

pub fn evaluate_saliency(maps: &[Map], gts: &[Mask]) -> Result<SaliencyEval> {
    if maps.len() != gts.len() || maps.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "evaluate_saliency",
            dim: "image count",
            expected: gts.len(),
            actual: maps.len(),
        });
    }
    let curves = maps.iter().zip(gts).map(|(m, g)| pr_curve(m, g)).collect::<Result<Vec<_>>>()?;
    let mean = mean_curve(&curves)?;
    let mut total_mae = 0.0;
    let (mut p, mut r, mut f, mut used) = (0.0, 0.0, 0.0, 0usize);
    for ((m, g), c) in maps.iter().zip(gts).zip(&curves) {
        total_mae += mae(m, &g.to_map())?;
        if !c.gt_empty {
            let a = adaptive_prf(m, g)?;
            p += a.precision;
            r += a.recall;
            f += a.f_measure;
            used += 1;
        }
    }
    let k = used as f64;
    Ok(SaliencyEval {
        max_f: max_f_measure(&mean, BETA2),
        mae: total_mae / maps.len() as f64,
        adaptive_precision: p / k,
        adaptive_recall: r / k,
        adaptive_f: f / k,
        images: maps.len(),
        empty_gt_images: maps.len() - used,
        curve: mean.points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(h: usize, w: usize, v: &[u8]) -> Mask {
        Mask::from_vec(h, w, v.iter().map(|&b| b != 0).collect()).unwrap()
    }

    #[test]
    fn identical_map_is_perfect_below_one() {
        let gt = mask(2, 3, &[1, 0, 1, 1, 0, 0]);
        let c = pr_curve(&gt.to_map(), &gt).unwrap();
        for p in &c.points[..255] {
            assert_eq!((p.precision, p.recall), (1.0, 1.0));
        }
        assert_eq!((c.points[255].precision, c.points[255].recall), (1.0, 0.0));
        assert_eq!(max_f_measure(&c, BETA2), 1.0);
    }

    #[test]
    fn inverted_map_has_zero_precision() {
        let gt = mask(2, 2, &[1, 0, 0, 1]);
        let inv = gt.map(|&b| if b { 0.0 } else { 1.0 });
        let c = pr_curve(&inv, &gt).unwrap();
        for (p, n) in c.points.iter().zip(&c.counts) {
            if n.tp + n.fp > 0 {
                assert_eq!(p.precision, 0.0);
            }
        }
    }

    #[test]
    fn hand_counted_three_by_three() {
        // values 0.2, 0.6, 0.9 spread over a 3x3 map
        let map = Map::from_vec(3, 3, vec![0.2, 0.6, 0.9, 0.2, 0.9, 0.6, 0.6, 0.2, 0.9]).unwrap();
        let gt = mask(3, 3, &[0, 1, 1, 0, 1, 0, 1, 0, 0]);
        let c = pr_curve(&map, &gt).unwrap();
        // t = 0.1·255 ≈ 25: everything predicted
        assert_eq!(c.counts[25], Counts { tp: 4, fp: 5, fn_: 0 });
        // between 0.2 and 0.6: the 0.6 and 0.9 pixels
        assert_eq!(c.counts[100], Counts { tp: 4, fp: 2, fn_: 0 });
        // between 0.6 and 0.9: only the 0.9 pixels
        assert_eq!(c.counts[200], Counts { tp: 2, fp: 1, fn_: 2 });
        assert_eq!(c.counts[240], Counts { tp: 0, fp: 0, fn_: 4 });
        assert_eq!(c.points[240].precision, 1.0);
    }

    #[test]
    fn strict_threshold_on_exact_levels() {
        let map = Map::from_vec(1, 3, vec![0.0, 51.0 / 255.0, 1.0]).unwrap();
        let gt = mask(1, 3, &[1, 1, 1]);
        let c = pr_curve(&map, &gt).unwrap();
        assert_eq!(c.counts[0].tp, 2);
        assert_eq!(c.counts[50].tp, 2);
        assert_eq!(c.counts[51].tp, 1);
        assert_eq!(c.counts[255].tp, 0);
    }

    #[test]
    fn empty_ground_truth_is_flagged() {
        let c = pr_curve(&Map::new(2, 2, 0.7), &Mask::new(2, 2, false)).unwrap();
        assert!(c.gt_empty);
        assert!(mean_curve(&[c]).is_err());
    }

    #[test]
    fn f_beta_reference_value() {
        let f = f_beta(0.9, 0.6, BETA2);
        assert!((f - 1.3 * 0.54 / 0.87).abs() < 1e-15);
        assert!((f - 0.8069).abs() < 1e-4);
        assert_eq!(f_beta(0.0, 0.0, BETA2), 0.0);
    }

    #[test]
    fn mae_examples() {
        let a = Map::new(3, 3, 1.0);
        let b = Map::new(3, 3, 0.0);
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
        assert_eq!(mae(&a, &b).unwrap(), 1.0);
        assert!(mae(&a, &Map::new(3, 2, 0.0)).is_err());
    }

    #[test]
    fn adaptive_threshold_examples() {
        let r = adaptive_prf(&Map::new(4, 4, 0.4), &Mask::new(4, 4, true)).unwrap();
        assert!((r.threshold - 0.8).abs() < 1e-7);
        assert_eq!((r.precision, r.recall), (1.0, 0.0));

        // f = 0.25 → threshold 0.5, all foreground passes
        let gt = Mask::from_fn(4, 4, |y, _| y == 0);
        let r = adaptive_prf(&gt.to_map(), &gt).unwrap();
        assert_eq!(r.threshold, 0.5);
        assert_eq!((r.precision, r.recall, r.f_measure), (1.0, 1.0, 1.0));

        let r = adaptive_prf(&Map::new(2, 2, 0.0), &gt_of(2)).unwrap();
        assert_eq!((r.threshold, r.precision, r.recall), (0.0, 1.0, 0.0));
    }

    fn gt_of(n: usize) -> Mask {
        Mask::new(n, n, true)
    }

    proptest! {
        #[test]
        fn curve_and_mae_properties(vals in prop::collection::vec((0u8..=255, any::<bool>()), 1..60)) {
            let n = vals.len();
            let map = Map::from_vec(1, n, vals.iter().map(|v| v.0 as f32 / 255.0).collect()).unwrap();
            let gt = Mask::from_vec(1, n, vals.iter().map(|v| v.1).collect()).unwrap();
            let c = pr_curve(&map, &gt).unwrap();
            for w in c.points.windows(2) {
                prop_assert!(w[1].recall <= w[0].recall);
            }
            let best = max_f_measure(&c, BETA2);
            for p in &c.points {
                prop_assert!((0.0..=1.0).contains(&p.precision) && (0.0..=1.0).contains(&p.recall));
                prop_assert!(best >= f_beta(p.precision, p.recall, BETA2));
            }
            let g = gt.to_map();
            let m = mae(&map, &g).unwrap();
            prop_assert_eq!(m, mae(&g, &map).unwrap());
            prop_assert!((0.0..=1.0).contains(&m));
            // strict comparison matches integer counting
            for t in [0usize, 17, 128, 254, 255] {
                let tp = vals.iter().filter(|v| v.1 && v.0 as usize > t).count() as u64;
                prop_assert_eq!(c.counts[t].tp, tp);
            }
        }
    }
}
