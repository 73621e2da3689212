use serde::{Deserialize, Serialize};

use super::saliency::f_beta;
use crate::error::{Error, Result};
use crate::grid::{Map, Mask};

/// Default match radius as a fraction of the image diagonal.
pub const MATCH_RADIUS: f64 = 0.0075;
/// Contour thresholds `k / 100` for `k = 1..=99`.
pub const CONTOUR_THRESHOLDS: usize = 99;

pub fn contour_threshold(k: usize) -> f32 {
    (k + 1) as f32 / 100.0
}

/// Zhang–Suen thinning to a one-pixel-wide skeleton; pixels outside the
/// image count as background.
pub fn thin(mask: &Mask) -> Mask {
    let (h, w) = mask.dims();
    let mut m = mask.clone();
    let at = |m: &Mask, y: isize, x: isize| -> u8 {
        (y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && m.at(y as usize, x as usize)) as u8
    };
    loop {
        let mut changed = false;
        for step in 0..2 {
            let mut remove = Vec::new();
            for y in 0..h {
                for x in 0..w {
                    if !m.at(y, x) {
                        continue;
                    }
                    let (yi, xi) = (y as isize, x as isize);
                    // P2..P9 clockwise from north
                    let p = [
                        at(&m, yi - 1, xi),
                        at(&m, yi - 1, xi + 1),
                        at(&m, yi, xi + 1),
                        at(&m, yi + 1, xi + 1),
                        at(&m, yi + 1, xi),
                        at(&m, yi + 1, xi - 1),
                        at(&m, yi, xi - 1),
                        at(&m, yi - 1, xi - 1),
                    ];
                    let b: u8 = p.iter().sum();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8).filter(|&i| p[i] == 0 && p[(i + 1) % 8] == 1).count();
                    if a != 1 {
                        continue;
                    }
                    let ok = if step == 0 {
                        p[0] * p[2] * p[4] == 0 && p[2] * p[4] * p[6] == 0
                    } else {
                        p[0] * p[2] * p[6] == 0 && p[0] * p[4] * p[6] == 0
                    };
                    if ok {
                        remove.push((y, x));
                    }
                }
            }
            changed |= !remove.is_empty();
            for (y, x) in remove {
                m.set(y, x, false);
            }
        }
        if !changed {
            return m;
        }
    }
}

/// Greedy one-to-one matching: predicted pixels in scanline order each take
/// the nearest unmatched ground-truth pixel within `radius` (ties to the
/// earlier pixel in scanline order). Returns the number of matched pairs.
pub fn match_pixels(pred: &Mask, gt: &Mask, radius: f64) -> usize {
    let (h, w) = pred.dims();
    let r = radius.floor() as isize;
    let r2 = radius * radius;
    let mut used = vec![false; h * w];
    let mut matched = 0;
    for y in 0..h {
        for x in 0..w {
            if !pred.at(y, x) {
                continue;
            }
            let mut best: Option<(isize, usize)> = None;
            for dy in -r..=r {
                let yy = y as isize + dy;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                for dx in -r..=r {
                    let xx = x as isize + dx;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let d = dy * dy + dx * dx;
                    if d as f64 > r2 {
                        continue;
                    }
                    let j = yy as usize * w + xx as usize;
                    if gt.data()[j] && !used[j] && best.is_none_or(|(bd, bj)| d < bd || (d == bd && j < bj)) {
                        best = Some((d, j));
                    }
                }
            }
            if let Some((_, j)) = best {
                used[j] = true;
                matched += 1;
            }
        }
    }
    matched
}

/// Matching counts for one image at one threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContourCounts {
    pub matched: u64,
    pub predicted: u64,
    pub ground_truth: u64,
}

impl ContourCounts {
    pub fn precision(&self) -> f64 {
        if self.predicted == 0 {
            1.0
        } else {
            self.matched as f64 / self.predicted as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.ground_truth == 0 {
            0.0
        } else {
            self.matched as f64 / self.ground_truth as f64
        }
    }

    pub fn f(&self) -> f64 {
        f_beta(self.precision(), self.recall(), 1.0)
    }

    fn add(self, o: ContourCounts) -> ContourCounts {
        ContourCounts {
            matched: self.matched + o.matched,
            predicted: self.predicted + o.predicted,
            ground_truth: self.ground_truth + o.ground_truth,
        }
    }
}

/// Counts for every threshold of one image. Both the binarized prediction
/// and the ground truth are thinned before matching.
pub fn image_contour_counts(pred: &Map, gt: &Mask, radius_fraction: f64) -> Result<Vec<ContourCounts>> {
    pred.check_dims(gt, "contour_benchmark")?;
    let (h, w) = pred.dims();
    let radius = radius_fraction * ((h * h + w * w) as f64).sqrt();
    let gt = thin(gt);
    let n_gt = gt.count() as u64;
    Ok((0..CONTOUR_THRESHOLDS)
        .map(|k| {
            let t = contour_threshold(k);
            let p = thin(&pred.map(|&v| v > t));
            ContourCounts {
                matched: match_pixels(&p, &gt, radius) as u64,
                predicted: p.count() as u64,
                ground_truth: n_gt,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContourEval {
    pub ods: f64,
    pub ods_threshold: f64,
    pub ois: f64,
    pub ap: f64,
    /// Dataset `(threshold, precision, recall)` per threshold.
    pub curve: Vec<(f64, f64, f64)>,
}

/// All-point interpolated area under a P-R curve given as `(precision,
/// recall)` pairs.
pub fn interpolated_ap(points: &[(f64, f64)]) -> f64 {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.1.total_cmp(&b.1).then(b.0.total_cmp(&a.0)));
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for i in 0..pts.len() {
        let r = pts[i].1;
        if r <= prev_r {
            continue;
        }
        let p = pts[i..].iter().map(|q| q.0).fold(0.0, f64::max);
        ap += (r - prev_r) * p;
        prev_r = r;
    }
    ap
}

/// ODS, OIS and AP over a set of images. Images without ground-truth
/// contour pixels are left out of OIS.
pub fn contour_benchmark(preds: &[Map], gts: &[Mask], radius_fraction: f64) -> Result<ContourEval> {
    if preds.len() != gts.len() {
        return Err(Error::ShapeMismatch {
            op: "contour_benchmark",
            dim: "image count",
            expected: gts.len(),
            actual: preds.len(),
        });
    }
    let per_image = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| image_contour_counts(p, g, radius_fraction))
        .collect::<Result<Vec<_>>>()?;
    let totals: Vec<ContourCounts> = (0..CONTOUR_THRESHOLDS)
        .map(|k| per_image.iter().fold(ContourCounts::default(), |a, c| a.add(c[k])))
        .collect();
    if totals[0].ground_truth == 0 {
        return Err(Error::Data("no ground-truth contour pixels in the dataset".into()));
    }
    let (mut ods, mut ods_k) = (0.0, 0);
    for (k, c) in totals.iter().enumerate() {
        if c.f() > ods {
            ods = c.f();
            ods_k = k;
        }
    }
    let with_gt: Vec<&Vec<ContourCounts>> = per_image.iter().filter(|c| c[0].ground_truth > 0).collect();
    let ois = with_gt
        .iter()
        .map(|c| c.iter().map(|x| x.f()).fold(0.0, f64::max))
        .sum::<f64>()
        / with_gt.len() as f64;
    let pr: Vec<(f64, f64)> = totals.iter().map(|c| (c.precision(), c.recall())).collect();
    Ok(ContourEval {
        ods,
        ods_threshold: (ods_k + 1) as f64 / 100.0,
        ois,
        ap: interpolated_ap(&pr),
        curve: totals
            .iter()
            .enumerate()
            .map(|(k, c)| ((k + 1) as f64 / 100.0, c.precision(), c.recall()))
            .collect(),
    })
}
